//! Central-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::architectures::{build_model, se_block_tape, ForwardOptions, ModelSpec, ModelState, NamedParam, Variant};
use crate::array::{DenseArray, Padding};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};

pub const MIN_EPS: f64 = 1e-6;
pub const MAX_EPS: f64 = 1e-4;

/// Relative error used throughout: `|a − n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn check_eps(eps: f64) -> Result<()> {
    if !(MIN_EPS..=MAX_EPS).contains(&eps) {
        return Err(Error::InvalidArgument(format!(
            "gradient-check eps must lie in [{MIN_EPS:e}, {MAX_EPS:e}], got {eps:e}"
        )));
    }
    Ok(())
}

/// Checks a scalar function of one array. `f` returns the value and the
/// analytic gradient at its argument; the result is the maximum relative
/// error over all coordinates.
pub fn gradient_check<F>(f: F, point: &DenseArray, eps: f64) -> Result<f64>
where
    F: Fn(&DenseArray) -> Result<(f64, DenseArray)>,
{
    let errors = gradient_check_params(
        |params| {
            let (v, g) = f(&params[0])?;
            Ok((v, vec![g]))
        },
        std::slice::from_ref(point),
        eps,
    )?;
    Ok(errors[0])
}

/// Multi-parameter variant: one maximum relative error per parameter array.
pub fn gradient_check_params<F>(f: F, params: &[DenseArray], eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&[DenseArray]) -> Result<(f64, Vec<DenseArray>)>,
{
    let checked = gradient_check_branches(
        |p| {
            let (v, g) = f(p)?;
            Ok((v, g, 0))
        },
        params,
        eps,
    )?;
    Ok(checked.max_errors)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchCheck {
    /// Worst relative error per parameter array over valid coordinates.
    pub max_errors: Vec<f64>,
    /// Coordinates whose `±eps` probes left the linear piece of the base
    /// point; their central differences straddle a kink and are excluded.
    pub kink_crossings: usize,
    pub coordinates: usize,
}

/// Like [`gradient_check_params`] for piecewise-smooth objectives. `f` also
/// returns a branch signature (e.g. [`Tape::branch_signature`]).
pub fn gradient_check_branches<F>(f: F, params: &[DenseArray], eps: f64) -> Result<BranchCheck>
where
    F: Fn(&[DenseArray]) -> Result<(f64, Vec<DenseArray>, u64)>,
{
    check_eps(eps)?;
    let (value, analytic, base_sig) = f(params)?;
    if !value.is_finite() {
        return Err(Error::NonFinite("gradient-check objective".into()));
    }
    if analytic.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "expected {} gradients, got {}",
            params.len(),
            analytic.len()
        )));
    }
    let mut work = params.to_vec();
    let mut out = BranchCheck {
        max_errors: Vec::with_capacity(params.len()),
        kink_crossings: 0,
        coordinates: 0,
    };
    for p in 0..params.len() {
        params[p].check_same_shape("gradient_check", &analytic[p])?;
        if !analytic[p].is_finite() {
            return Err(Error::NonFinite(format!("analytic gradient of parameter {p}")));
        }
        let mut worst = 0.0f64;
        for i in 0..params[p].len() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + eps;
            let (plus, _, sig_plus) = f(&work)?;
            work[p].data_mut()[i] = orig - eps;
            let (minus, _, sig_minus) = f(&work)?;
            work[p].data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!("objective at parameter {p} coordinate {i}")));
            }
            out.coordinates += 1;
            if sig_plus != base_sig || sig_minus != base_sig {
                out.kink_crossings += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[p].data()[i], numeric));
        }
        out.max_errors.push(worst);
    }
    Ok(out)
}

/// Maximum relative gradient error of one layer or model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCheck {
    pub layer: String,
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// Coordinates excluded because a probe crossed a ReLU or max-pool kink.
    pub kink_crossings: usize,
}

fn normal(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> DenseArray {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)).collect();
    DenseArray::from_vec(shape, data).expect("shape matches data")
}

/// Checks every input of `build` under the objective `Σ out ⊙ R` for a fixed
/// random `R` (or the output itself when it is already a scalar).
fn check_tape<B>(inputs: Vec<DenseArray>, build: B, eps: f64, rng: &mut ChaCha8Rng) -> Result<BranchCheck>
where
    B: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut probe = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|a| probe.leaf(a.clone())).collect();
    let probe_out = build(&mut probe, &vars)?;
    let out_shape = probe.value(probe_out).shape().to_vec();
    let scalar = out_shape.iter().product::<usize>() == 1;
    let proj = if scalar { DenseArray::filled(&out_shape, 1.0) } else { normal(&out_shape, 1.0, rng) };
    gradient_check_branches(
        |params| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = params.iter().map(|a| tape.leaf(a.clone())).collect();
            let out = build(&mut tape, &vars)?;
            let value: f64 = tape.value(out).data().iter().zip(proj.data()).map(|(a, b)| a * b).sum();
            let mut grads = tape.backward_with(out, proj.clone())?;
            let g = vars.iter().zip(params).map(|(&v, p)| grads.take_or_zeros(v, p.shape())).collect();
            Ok((value, g, tape.branch_signature()))
        },
        &inputs,
        eps,
    )
}

/// Finite-difference suite over every layer type, the Dice loss, an SE
/// block and all three architectures at depth 2, width 4 on 16×16 input.
pub fn layer_suite(seed: u64, eps: f64) -> Result<Vec<LayerCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |layer: &str, c: BranchCheck| {
        out.push(LayerCheck {
            layer: layer.to_string(),
            max_rel_error: c.max_errors.into_iter().fold(0.0, f64::max),
            coordinates: c.coordinates,
            kink_crossings: c.kink_crossings,
        })
    };

    let x = normal(&[2, 3, 5, 6], 1.0, &mut rng);
    let k = normal(&[4, 3, 3, 3], 0.5, &mut rng);
    let b = normal(&[4], 0.5, &mut rng);
    for (name, pad) in [("conv2d_same", Padding::Same), ("conv2d_valid", Padding::Valid)] {
        let e = check_tape(vec![x.clone(), k.clone(), b.clone()], |t, v| t.conv2d(v[0], v[1], v[2], pad), eps, &mut rng)?;
        push(name, e);
    }
    let e = check_tape(
        vec![normal(&[2, 3, 3, 4], 1.0, &mut rng), normal(&[3, 2, 2, 2], 0.5, &mut rng), normal(&[2], 0.5, &mut rng)],
        |t, v| t.upsample(v[0], v[1], v[2]),
        eps,
        &mut rng,
    )?;
    push("upsample", e);
    let e = check_tape(vec![normal(&[2, 3, 4, 6], 1.0, &mut rng)], |t, v| t.max_pool_2x2(v[0]), eps, &mut rng)?;
    push("max_pool_2x2", e);
    let e = check_tape(vec![normal(&[2, 3, 4, 5], 1.0, &mut rng)], |t, v| t.global_avg_pool(v[0]), eps, &mut rng)?;
    push("global_avg_pool", e);
    let e = check_tape(vec![normal(&[3, 5], 1.0, &mut rng), normal(&[5, 4], 1.0, &mut rng)], |t, v| t.dense(v[0], v[1]), eps, &mut rng)?;
    push("dense", e);
    let e = check_tape(vec![normal(&[2, 3, 4, 4], 1.0, &mut rng)], |t, v| Ok(t.relu(v[0])), eps, &mut rng)?;
    push("relu", e);
    let e = check_tape(vec![normal(&[2, 3, 4, 4], 2.0, &mut rng)], |t, v| Ok(t.sigmoid(v[0])), eps, &mut rng)?;
    push("sigmoid", e);
    let e = check_tape(
        vec![normal(&[2, 3, 4, 4], 1.0, &mut rng), normal(&[2, 3], 1.0, &mut rng)],
        |t, v| t.channel_scale(v[0], v[1]),
        eps,
        &mut rng,
    )?;
    push("channel_scale", e);
    let e = check_tape(
        vec![normal(&[2, 2, 3, 3], 1.0, &mut rng), normal(&[2, 3, 3, 3], 1.0, &mut rng)],
        |t, v| t.concat_channels(v[0], v[1]),
        eps,
        &mut rng,
    )?;
    push("concat_channels", e);
    let e = check_tape(
        vec![normal(&[2, 8, 4, 4], 1.0, &mut rng), normal(&[8, 2], 0.7, &mut rng), normal(&[2, 8], 0.7, &mut rng)],
        |t, v| Ok(se_block_tape(t, v[0], v[1], v[2])?.0),
        eps,
        &mut rng,
    )?;
    push("se_block", e);

    let pred = DenseArray::from_vec(&[1, 1, 6, 6], (0..36).map(|_| rng.random_range(0.05..0.95)).collect())?;
    let truth = DenseArray::from_vec(&[1, 1, 6, 6], (0..36).map(|_| rng.random_bool(0.4) as u8 as f64).collect())?;
    let e = check_tape(vec![pred], |t, v| t.dice_loss(v[0], &truth), eps, &mut rng)?;
    push("dice_loss", e);

    let input = DenseArray::from_vec(&[1, 1, 16, 16], (0..256).map(|_| rng.random_range(0.0..1.0)).collect())?;
    let target = DenseArray::from_vec(&[1, 1, 16, 16], (0..256).map(|_| rng.random_bool(0.3) as u8 as f64).collect())?;
    for variant in Variant::ALL {
        let spec = ModelSpec {
            variant,
            depth: 2,
            base_width: 4,
            se_reduction: 4,
            in_channels: 1,
        };
        let model = build_model(&spec, rng.random())?;
        let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
        let params: Vec<DenseArray> = model.params().iter().map(|p| p.value.clone()).collect();
        let checked = gradient_check_branches(
            |ps| {
                let state = ModelState::from_parts(
                    spec.clone(),
                    model.seed(),
                    names.iter().zip(ps).map(|(n, v)| NamedParam { name: n.clone(), value: v.clone() }).collect(),
                )?;
                let mut tape = Tape::new();
                let w = state.bind(&mut tape);
                let i = tape.leaf(input.clone());
                let trace = state.forward_tape(&mut tape, &w, i, ForwardOptions::default())?;
                let loss = tape.dice_loss(trace.output, &target)?;
                let value = tape.value(loss).data()[0];
                let sig = tape.branch_signature();
                let mut g = tape.backward(loss)?;
                Ok((value, w.iter().zip(ps).map(|(&v, p)| g.take_or_zeros(v, p.shape())).collect(), sig))
            },
            &params,
            eps,
        )?;
        push(&format!("model_{}", variant.name()), checked);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let x = DenseArray::scalar(3.0);
        let err = gradient_check(
            |p| {
                let v = p.data()[0];
                Ok((v * v, DenseArray::scalar(2.0 * v)))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let x = DenseArray::scalar(3.0);
        let err = gradient_check(|p| Ok((p.data()[0].powi(2), DenseArray::scalar(7.0))), &x, 1e-5).unwrap();
        assert!(err > 0.1);
    }

    #[test]
    fn eps_range_and_non_finite_rejected() {
        let x = DenseArray::scalar(1.0);
        let f = |p: &DenseArray| Ok((p.data()[0], DenseArray::scalar(1.0)));
        assert!(gradient_check(f, &x, 1e-2).is_err());
        assert!(gradient_check(f, &x, 1e-8).is_err());
        let bad = |p: &DenseArray| Ok((p.data()[0].ln() * f64::NAN, DenseArray::scalar(1.0)));
        assert!(matches!(gradient_check(bad, &x, 1e-5), Err(Error::NonFinite(_))));
    }

    #[test]
    fn suite_passes() {
        for c in layer_suite(7, 1e-5).unwrap() {
            assert!(c.max_rel_error < 1e-4, "{c:?}");
        }
    }
}
