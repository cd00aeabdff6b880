//! Reverse-mode differentiation over a linear record of executed operations.
//!
//! Every operation appends a node holding its output value and whatever it
//! saved for the backward pass. [`Tape::backward`] walks the nodes in exact
//! reverse order of execution.

use crate::array::{self, Activation, DenseArray, Padding};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        padding: Padding,
    },
    Upsample {
        input: Var,
        kernel: Var,
        bias: Var,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        input: Var,
    },
    Dense {
        input: Var,
        weights: Var,
    },
    Activation {
        input: Var,
        kind: Activation,
    },
    ChannelScale {
        input: Var,
        scale: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    DiceLoss {
        pred: Var,
        truth: Vec<f64>,
        overlap: f64,
        total: f64,
    },
    Sum {
        input: Var,
    },
    Mean {
        inputs: Vec<Var>,
    },
}

#[derive(Debug)]
struct Node {
    value: DenseArray,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseArray>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&DenseArray> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of `shape` when no path reached it.
    pub fn take_or_zeros(&mut self, var: Var, shape: &[usize]) -> DenseArray {
        self.grads
            .get_mut(var.0)
            .and_then(Option::take)
            .unwrap_or_else(|| DenseArray::zeros(shape))
    }
}

/// Soft Dice loss `-2Σsr / (Σs + Σr)`; `0` when both sums vanish.
pub fn dice_loss_value(pred: &[f64], truth: &[f64]) -> (f64, f64, f64) {
    let overlap: f64 = pred.iter().zip(truth).map(|(s, r)| s * r).sum();
    let total: f64 = pred.iter().sum::<f64>() + truth.iter().sum::<f64>();
    let loss = if total == 0.0 { 0.0 } else { -2.0 * overlap / total };
    (loss, overlap, total)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node and saved activation.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.nodes.shrink_to_fit();
    }

    /// Fingerprint of every branch taken by piecewise-linear nodes: the sign
    /// of each ReLU input and each max-pool winner. Two evaluations with equal
    /// signatures lie on the same linear piece.
    pub fn branch_signature(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Activation {
                    input,
                    kind: Activation::Relu,
                } => {
                    for &x in self.nodes[input.0].value.data() {
                        mix((x > 0.0) as u64);
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.iter().for_each(|&i| mix(i as u64)),
                _ => {}
            }
        }
        h
    }

    pub fn value(&self, var: Var) -> &DenseArray {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: DenseArray, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: DenseArray) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, padding: Padding) -> Result<Var> {
        let out = array::conv2d(self.value(input), self.value(kernel), self.value(bias), padding)?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                padding,
            },
        ))
    }

    pub fn upsample(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let out = array::upsample_block(self.value(input), self.value(kernel), self.value(bias))?;
        Ok(self.push(out, Op::Upsample { input, kernel, bias }))
    }

    pub fn max_pool_2x2(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = array::max_pool_2x2(self.value(input))?;
        Ok(self.push(out, Op::MaxPool { input, argmax }))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let out = array::global_avg_pool(self.value(input))?;
        Ok(self.push(out, Op::GlobalAvgPool { input }))
    }

    pub fn dense(&mut self, input: Var, weights: Var) -> Result<Var> {
        let out = array::dense(self.value(input), self.value(weights))?;
        Ok(self.push(out, Op::Dense { input, weights }))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Var {
        let out = array::activation(self.value(input), kind);
        self.push(out, Op::Activation { input, kind })
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Relu)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Sigmoid)
    }

    pub fn channel_scale(&mut self, input: Var, scale: Var) -> Result<Var> {
        let out = array::channel_scale(self.value(input), self.value(scale))?;
        Ok(self.push(out, Op::ChannelScale { input, scale }))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = array::concat_channels(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Concat { a, b }))
    }

    /// Soft Dice loss of `pred` against a binary `truth` of the same length.
    pub fn dice_loss(&mut self, pred: Var, truth: &DenseArray) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != truth.len() {
            return Err(Error::ShapeMismatch {
                op: "dice_loss",
                left: p.shape().to_vec(),
                right: truth.shape().to_vec(),
            });
        }
        let (loss, overlap, total) = dice_loss_value(p.data(), truth.data());
        Ok(self.push(
            DenseArray::scalar(loss),
            Op::DiceLoss {
                pred,
                truth: truth.data().to_vec(),
                overlap,
                total,
            },
        ))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).sum();
        self.push(DenseArray::scalar(s), Op::Sum { input })
    }

    /// Arithmetic mean of scalar nodes.
    pub fn mean(&mut self, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("mean of no values".into()));
        }
        let mut s = 0.0;
        for &v in inputs {
            let val = self.value(v);
            if val.len() != 1 {
                return Err(Error::InvalidArgument(format!("mean expects scalars, got {:?}", val.shape())));
            }
            s += val.data()[0];
        }
        Ok(self.push(
            DenseArray::scalar(s / inputs.len() as f64),
            Op::Mean {
                inputs: inputs.to_vec(),
            },
        ))
    }

    /// Back-propagates from a scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar output, got shape {:?}",
                out.shape()
            )));
        }
        self.backward_with(output, DenseArray::filled(out.shape(), 1.0))
    }

    pub fn backward_with(&self, output: Var, seed: DenseArray) -> Result<Gradients> {
        self.value(output).check_same_shape("backward seed", &seed)?;
        let mut grads: Vec<Option<DenseArray>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let mut acc = |var: Var, d: DenseArray| -> Result<()> {
                match &mut grads[var.0] {
                    Some(existing) => existing.add_assign(&d),
                    slot @ None => {
                        *slot = Some(d);
                        Ok(())
                    }
                }
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                &Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    padding,
                } => {
                    let (di, dk, db) =
                        array::conv2d_backward(self.value(input), self.value(kernel), &g, padding)?;
                    acc(input, di)?;
                    acc(kernel, dk)?;
                    acc(bias, db)?;
                }
                &Op::Upsample { input, kernel, bias } => {
                    let (di, dk, db) = array::upsample_block_backward(self.value(input), self.value(kernel), &g)?;
                    acc(input, di)?;
                    acc(kernel, dk)?;
                    acc(bias, db)?;
                }
                Op::MaxPool { input, argmax } => {
                    let mut di = DenseArray::zeros(self.value(*input).shape());
                    for (&src, &dy) in argmax.iter().zip(g.data()) {
                        di.data_mut()[src] += dy;
                    }
                    acc(*input, di)?;
                }
                &Op::GlobalAvgPool { input } => {
                    let x = self.value(input);
                    let (_, _, h, w) = x.dims4()?;
                    let plane = h * w;
                    let mut di = DenseArray::zeros(x.shape());
                    for (chunk, &dy) in di.data_mut().chunks_mut(plane).zip(g.data()) {
                        chunk.fill(dy / plane as f64);
                    }
                    acc(input, di)?;
                }
                &Op::Dense { input, weights } => {
                    let (di, dw) = array::dense_backward(self.value(input), self.value(weights), &g)?;
                    acc(input, di)?;
                    acc(weights, dw)?;
                }
                &Op::Activation { input, kind } => {
                    let di = match kind {
                        Activation::Relu => {
                            let x = self.value(input);
                            let mut d = g;
                            for (dv, &xv) in d.data_mut().iter_mut().zip(x.data()) {
                                if xv <= 0.0 {
                                    *dv = 0.0;
                                }
                            }
                            d
                        }
                        Activation::Sigmoid => {
                            let mut d = g;
                            for (dv, &y) in d.data_mut().iter_mut().zip(node.value.data()) {
                                *dv *= y * (1.0 - y);
                            }
                            d
                        }
                    };
                    acc(input, di)?;
                }
                &Op::ChannelScale { input, scale } => {
                    let x = self.value(input);
                    let s = self.value(scale);
                    let (_, _, h, w) = x.dims4()?;
                    let plane = h * w;
                    let mut di = g.clone();
                    let mut ds = DenseArray::zeros(s.shape());
                    for (ch, ((dchunk, xchunk), &sv)) in di
                        .data_mut()
                        .chunks_mut(plane)
                        .zip(x.data().chunks(plane))
                        .zip(s.data())
                        .enumerate()
                    {
                        let mut dot = 0.0;
                        for (dv, &xv) in dchunk.iter_mut().zip(xchunk) {
                            dot += *dv * xv;
                            *dv *= sv;
                        }
                        ds.data_mut()[ch] = dot;
                    }
                    acc(input, di)?;
                    acc(scale, ds)?;
                }
                &Op::Concat { a, b } => {
                    let (n, ca, h, w) = self.value(a).dims4()?;
                    let cb = self.value(b).dims4()?.1;
                    let plane = h * w;
                    let mut da = Vec::with_capacity(n * ca * plane);
                    let mut db = Vec::with_capacity(n * cb * plane);
                    for s in g.data().chunks((ca + cb) * plane) {
                        da.extend_from_slice(&s[..ca * plane]);
                        db.extend_from_slice(&s[ca * plane..]);
                    }
                    acc(a, DenseArray::from_vec(&[n, ca, h, w], da)?)?;
                    acc(b, DenseArray::from_vec(&[n, cb, h, w], db)?)?;
                }
                Op::DiceLoss {
                    pred,
                    truth,
                    overlap,
                    total,
                } => {
                    let p = self.value(*pred);
                    let mut dp = DenseArray::zeros(p.shape());
                    if *total != 0.0 {
                        let upstream = g.data()[0];
                        let t2 = total * total;
                        for (dv, &r) in dp.data_mut().iter_mut().zip(truth) {
                            *dv = upstream * (2.0 * overlap - 2.0 * r * total) / t2;
                        }
                    }
                    acc(*pred, dp)?;
                }
                &Op::Sum { input } => {
                    let shape = self.value(input).shape().to_vec();
                    acc(input, DenseArray::filled(&shape, g.data()[0]))?;
                }
                Op::Mean { inputs } => {
                    let share = g.data()[0] / inputs.len() as f64;
                    for &v in inputs {
                        acc(v, DenseArray::scalar(share))?;
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_keeps_leaf_gradients_only() {
        let mut t = Tape::new();
        let x = t.leaf(DenseArray::from_vec(&[2], vec![1.0, -1.0]).unwrap());
        let y = t.relu(x);
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 0.0]);
        assert!(g.get(y).is_none());
    }

    #[test]
    fn shared_input_accumulates() {
        let mut t = Tape::new();
        let x = t.leaf(DenseArray::filled(&[1, 1, 2, 2], 1.0));
        let c = t.concat_channels(x, x).unwrap();
        let s = t.sum(c);
        let g = t.backward(s).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn clear_releases_nodes() {
        let mut t = Tape::new();
        let x = t.leaf(DenseArray::zeros(&[4]));
        t.sigmoid(x);
        assert_eq!(t.len(), 2);
        t.clear();
        assert!(t.is_empty());
    }

    #[test]
    fn non_scalar_backward_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(DenseArray::zeros(&[3]));
        assert!(t.backward(x).is_err());
    }
}
