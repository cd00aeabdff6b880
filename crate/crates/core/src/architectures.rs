//! U-Net and its squeeze-and-excitation variants.
//!
//! Every encoder, the bottleneck and every decoder is two `conv 3×3 → ReLU`
//! stages. The SE variants append a squeeze-and-excitation block to the
//! output of those blocks:
//!
//! | variant       | SE sites                         | count at depth `d` |
//! |---------------|----------------------------------|--------------------|
//! | `unet`        | none                             | 0                  |
//! | `enc_use`     | every encoder                    | `d`                |
//! | `enc_dec_use` | every encoder, bottleneck, decoder | `2d + 1`         |
//!
//! The head is a 1×1 convolution to one channel followed by a sigmoid and
//! predicts the central-gland probability.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::array::{self, DenseArray, Padding};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Unet,
    EncUse,
    EncDecUse,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Unet, Variant::EncUse, Variant::EncDecUse];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Unet => "unet",
            Variant::EncUse => "enc_use",
            Variant::EncDecUse => "enc_dec_use",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown variant `{s}` (expected unet, enc_use or enc_dec_use)")))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeBlockSpec {
    channels: usize,
    reduction: usize,
}

impl SeBlockSpec {
    pub fn new(channels: usize, reduction: usize) -> Result<Self> {
        if channels == 0 || reduction == 0 {
            return Err(Error::InvalidSpec("SE channels and reduction must be positive".into()));
        }
        if !channels.is_multiple_of(reduction) {
            return Err(Error::InvalidSpec(format!(
                "SE block with {channels} channels is not divisible by reduction {reduction}"
            )));
        }
        Ok(Self { channels, reduction })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn reduction(&self) -> usize {
        self.reduction
    }

    pub fn hidden(&self) -> usize {
        self.channels / self.reduction
    }

    /// `2·F²/r`: both excitation matrices together.
    pub fn weight_count(&self) -> usize {
        2 * self.channels * self.hidden()
    }
}

/// Excitation weights of one SE block. `squeeze` is `F × F/r` and `excite`
/// is `F/r × F`, i.e. the transposes of the usual `W₁` and `W₂` so that a
/// row vector of channel statistics multiplies from the left.
#[derive(Clone, Debug, PartialEq)]
pub struct SeWeights {
    pub squeeze: DenseArray,
    pub excite: DenseArray,
}

/// Squeeze (global average pool), excitation (`σ(W₂ δ(W₁ z))`) and
/// channel-wise rescaling of a `(batch, F, H, W)` feature map.
pub fn se_block_forward(u: &DenseArray, weights: &SeWeights) -> Result<DenseArray> {
    let z = array::global_avg_pool(u)?;
    let hidden = array::activation(&array::dense(&z, &weights.squeeze)?, array::Activation::Relu);
    let s = array::activation(&array::dense(&hidden, &weights.excite)?, array::Activation::Sigmoid);
    array::channel_scale(u, &s)
}

/// Tape version of [`se_block_forward`]; also returns the gate node `s`.
pub fn se_block_tape(tape: &mut Tape, u: Var, squeeze: Var, excite: Var) -> Result<(Var, Var)> {
    let z = tape.global_avg_pool(u)?;
    let h = tape.dense(z, squeeze)?;
    let h = tape.relu(h);
    let s = tape.dense(h, excite)?;
    let s = tape.sigmoid(s);
    let out = tape.channel_scale(u, s)?;
    Ok((out, s))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    /// Number of pooling (and matching up-sampling) operations.
    pub depth: usize,
    /// Channels of the first encoder; doubles at every level down.
    pub base_width: usize,
    pub se_reduction: usize,
    #[serde(default = "one")]
    pub in_channels: usize,
}

fn one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeSite {
    Encoder(usize),
    Bottleneck,
    Decoder(usize),
}

impl SeSite {
    pub fn block_name(self) -> String {
        match self {
            SeSite::Encoder(l) => format!("enc{l}"),
            SeSite::Bottleneck => "bottleneck".into(),
            SeSite::Decoder(l) => format!("dec{l}"),
        }
    }
}

impl ModelSpec {
    /// 64×64-canvas profile: depth 4, base width 8, r = 8.
    pub fn desk(variant: Variant) -> Self {
        Self {
            variant,
            depth: 4,
            base_width: 8,
            se_reduction: 8,
            in_channels: 1,
        }
    }

    /// Full-size profile: depth 4, base width 64, r = 8.
    pub fn full_scale(variant: Variant) -> Self {
        Self {
            base_width: 64,
            ..Self::desk(variant)
        }
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    /// Channels produced by encoder `level` (1-based).
    pub fn level_width(&self, level: usize) -> usize {
        self.base_width << (level - 1)
    }

    pub fn bottleneck_width(&self) -> usize {
        self.base_width << self.depth
    }

    pub fn se_sites(&self) -> Vec<(SeSite, usize)> {
        let mut sites = Vec::new();
        if matches!(self.variant, Variant::EncUse | Variant::EncDecUse) {
            sites.extend((1..=self.depth).map(|l| (SeSite::Encoder(l), self.level_width(l))));
        }
        if self.variant == Variant::EncDecUse {
            sites.push((SeSite::Bottleneck, self.bottleneck_width()));
            sites.extend((1..=self.depth).rev().map(|l| (SeSite::Decoder(l), self.level_width(l))));
        }
        sites
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_width == 0 || self.se_reduction == 0 || self.in_channels == 0 {
            return Err(Error::InvalidSpec(format!(
                "depth, base_width, se_reduction and in_channels must be positive: {self:?}"
            )));
        }
        for (site, channels) in self.se_sites() {
            if channels % self.se_reduction != 0 {
                return Err(Error::InvalidSpec(format!(
                    "SE site {} has {channels} channels, not divisible by reduction {}",
                    site.block_name(),
                    self.se_reduction
                )));
            }
        }
        Ok(())
    }

    /// Names and shapes of every learnable array, in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let conv = |out: &mut Vec<(String, Vec<usize>)>, name: String, cin: usize, cout: usize| {
            out.push((format!("{name}.weight"), vec![cout, cin, 3, 3]));
            out.push((format!("{name}.bias"), vec![cout]));
        };
        let se = |out: &mut Vec<(String, Vec<usize>)>, block: String, f: usize| {
            let hidden = f / self.se_reduction;
            out.push((format!("{block}.se.squeeze"), vec![f, hidden]));
            out.push((format!("{block}.se.excite"), vec![hidden, f]));
        };
        let enc_se = matches!(self.variant, Variant::EncUse | Variant::EncDecUse);
        let dec_se = self.variant == Variant::EncDecUse;

        let mut cin = self.in_channels;
        for l in 1..=self.depth {
            let f = self.level_width(l);
            conv(&mut out, format!("enc{l}.conv1"), cin, f);
            conv(&mut out, format!("enc{l}.conv2"), f, f);
            if enc_se {
                se(&mut out, format!("enc{l}"), f);
            }
            cin = f;
        }
        let fb = self.bottleneck_width();
        conv(&mut out, "bottleneck.conv1".into(), cin, fb);
        conv(&mut out, "bottleneck.conv2".into(), fb, fb);
        if dec_se {
            se(&mut out, "bottleneck".into(), fb);
        }
        let mut below = fb;
        for l in (1..=self.depth).rev() {
            let f = self.level_width(l);
            out.push((format!("up{l}.weight"), vec![below, f, 2, 2]));
            out.push((format!("up{l}.bias"), vec![f]));
            conv(&mut out, format!("dec{l}.conv1"), 2 * f, f);
            conv(&mut out, format!("dec{l}.conv2"), f, f);
            if dec_se {
                se(&mut out, format!("dec{l}"), f);
            }
            below = f;
        }
        out.push(("head.weight".into(), vec![1, self.base_width, 1, 1]));
        out.push(("head.bias".into(), vec![1]));
        out
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedParam {
    pub name: String,
    pub value: DenseArray,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    spec: ModelSpec,
    seed: u64,
    params: Vec<NamedParam>,
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn init_std(name: &str, shape: &[usize]) -> f64 {
    if name.ends_with(".bias") {
        return 0.0;
    }
    let fan_in = match shape {
        // stride-2 transposed conv: each output pixel sees one tap per input channel
        [cin, _, _, _] if name.starts_with("up") => *cin as f64,
        [_, cin, kh, kw] => (cin * kh * kw) as f64,
        [fan_in, _] => *fan_in as f64,
        _ => 1.0,
    };
    let gain = if name.ends_with(".se.excite") || name.starts_with("head") || name.starts_with("up") {
        1.0
    } else {
        2.0
    };
    (gain / fan_in).sqrt()
}

/// Builds a model with fan-in scaled normal kernels and zero biases.
///
/// Each array draws from its own stream seeded by `(seed, name)`, so arrays
/// shared between variants start identical.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<ModelState> {
    spec.validate()?;
    let params = spec
        .layout()
        .into_iter()
        .map(|(name, shape)| {
            let std = init_std(&name, &shape);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name.as_bytes()));
            let len = shape.iter().product();
            let data: Vec<f64> = if std == 0.0 {
                vec![0.0; len]
            } else {
                (0..len)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * std
                    })
                    .collect()
            };
            Ok(NamedParam {
                value: DenseArray::from_vec(&shape, data)?,
                name,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ModelState {
        spec: spec.clone(),
        seed,
        params,
    })
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    /// Pass feature maps through SE sites unchanged.
    pub bypass_se: bool,
}

#[derive(Debug)]
pub struct ForwardTrace {
    pub output: Var,
    /// Gate nodes `s`, one per SE site in [`ModelSpec::se_sites`] order.
    pub se_gates: Vec<Var>,
}

impl ModelState {
    pub fn from_parts(spec: ModelSpec, seed: u64, params: Vec<NamedParam>) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        if layout.len() != params.len() {
            return Err(Error::InvalidSpec(format!(
                "expected {} arrays, got {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in layout.iter().zip(&params) {
            if *name != p.name || shape.as_slice() != p.value.shape() {
                return Err(Error::InvalidSpec(format!(
                    "array `{}` {:?} does not match layout entry `{name}` {shape:?}",
                    p.name,
                    p.value.shape()
                )));
            }
        }
        Ok(Self { spec, seed, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[NamedParam] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [NamedParam] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&DenseArray> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut DenseArray> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn se_site_count(&self) -> usize {
        self.params.iter().filter(|p| p.name.ends_with(".se.squeeze")).count()
    }

    /// FNV-1a over the bit patterns of every weight.
    pub fn checksum(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.param_count() * 8);
        for p in &self.params {
            bytes.extend_from_slice(p.name.as_bytes());
            for v in p.value.data() {
                bytes.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        fnv1a(&bytes)
    }

    /// Records every weight as a leaf, in storage order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.value.clone())).collect()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let (_, c, h, w) = match shape {
            [b, c, h, w] => (*b, *c, *h, *w),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "model input must be (batch, channels, height, width), got {shape:?}"
                )))
            }
        };
        if c != self.spec.in_channels {
            return Err(Error::InvalidArgument(format!(
                "model expects {} input channel(s), got {c}",
                self.spec.in_channels
            )));
        }
        let step = 1usize << self.spec.depth;
        if h % step != 0 || w % step != 0 || h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!(
                "input {h}x{w} is not divisible by 2^{} = {step}",
                self.spec.depth
            )));
        }
        Ok(())
    }

    /// Records the forward pass on `tape` using previously bound weights.
    pub fn forward_tape(&self, tape: &mut Tape, weights: &[Var], input: Var, opts: ForwardOptions) -> Result<ForwardTrace> {
        self.check_input(tape.value(input).shape())?;
        let mut cursor = 0usize;
        let mut next = || {
            let v = weights[cursor];
            cursor += 1;
            v
        };
        let enc_se = matches!(self.spec.variant, Variant::EncUse | Variant::EncDecUse);
        let dec_se = self.spec.variant == Variant::EncDecUse;
        let mut gates = Vec::new();

        fn block(tape: &mut Tape, x: Var, w: [Var; 4]) -> Result<Var> {
            let y = tape.conv2d(x, w[0], w[1], Padding::Same)?;
            let y = tape.relu(y);
            let y = tape.conv2d(y, w[2], w[3], Padding::Same)?;
            Ok(tape.relu(y))
        }
        let se = |tape: &mut Tape, x: Var, sq: Var, ex: Var, gates: &mut Vec<Var>| -> Result<Var> {
            if opts.bypass_se {
                return Ok(x);
            }
            let (y, s) = se_block_tape(tape, x, sq, ex)?;
            gates.push(s);
            Ok(y)
        };

        let mut x = input;
        let mut skips = Vec::with_capacity(self.spec.depth);
        for _ in 1..=self.spec.depth {
            let mut y = block(tape, x, [next(), next(), next(), next()])?;
            if enc_se {
                let (sq, ex) = (next(), next());
                y = se(tape, y, sq, ex, &mut gates)?;
            }
            skips.push(y);
            x = tape.max_pool_2x2(y)?;
        }
        x = block(tape, x, [next(), next(), next(), next()])?;
        if dec_se {
            let (sq, ex) = (next(), next());
            x = se(tape, x, sq, ex, &mut gates)?;
        }
        for _ in (1..=self.spec.depth).rev() {
            let (uw, ub) = (next(), next());
            let up = tape.upsample(x, uw, ub)?;
            let skip = skips.pop().expect("one skip per level");
            let cat = tape.concat_channels(skip, up)?;
            x = block(tape, cat, [next(), next(), next(), next()])?;
            if dec_se {
                let (sq, ex) = (next(), next());
                x = se(tape, x, sq, ex, &mut gates)?;
            }
        }
        let (hw, hb) = (next(), next());
        let logits = tape.conv2d(x, hw, hb, Padding::Same)?;
        let output = tape.sigmoid(logits);
        debug_assert_eq!(cursor, weights.len());
        Ok(ForwardTrace { output, se_gates: gates })
    }

    /// Inference: per-pixel probabilities `(batch, 1, H, W)`.
    pub fn forward(&self, batch: &DenseArray) -> Result<DenseArray> {
        self.forward_with(batch, ForwardOptions::default())
    }

    pub fn forward_with(&self, batch: &DenseArray, opts: ForwardOptions) -> Result<DenseArray> {
        let mut tape = Tape::new();
        let weights = self.bind(&mut tape);
        let input = tape.leaf(batch.clone());
        let trace = self.forward_tape(&mut tape, &weights, input, opts)?;
        Ok(tape.value(trace.output).clone())
    }

    /// Weights of the SE block at `site`, if the variant has one there.
    pub fn se_weights(&self, site: SeSite) -> Option<SeWeights> {
        let block = site.block_name();
        Some(SeWeights {
            squeeze: self.param(&format!("{block}.se.squeeze"))?.clone(),
            excite: self.param(&format!("{block}.se.excite"))?.clone(),
        })
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"ZSEGCKPT";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    spec: ModelSpec,
    seed: u64,
    arrays: Vec<ArrayEntry>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

/// Checkpoint layout (all integers little-endian):
///
/// ```text
/// magic    8 bytes  "ZSEGCKPT"
/// version  u32      1
/// hlen     u64      byte length of the JSON header
/// header   hlen     {"spec": .., "seed": .., "arrays": [{"name", "shape"}, ..]}
/// values   f64 LE   every array in header order, row-major
/// ```
pub fn save_checkpoint(state: &ModelState, path: &Path) -> Result<()> {
    let header = CheckpointHeader {
        spec: state.spec.clone(),
        seed: state.seed,
        arrays: state
            .params
            .iter()
            .map(|p| ArrayEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    write(CHECKPOINT_MAGIC)?;
    write(&CHECKPOINT_VERSION.to_le_bytes())?;
    write(&(json.len() as u64).to_le_bytes())?;
    write(&json)?;
    for p in &state.params {
        for v in p.value.data() {
            write(&v.to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    let mut r = BufReader::new(file);
    let mut read = |buf: &mut [u8]| r.read_exact(buf).map_err(|e| Error::io(path, e));
    let bad = |message: &str| Error::Format {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    let mut magic = [0u8; 8];
    read(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let mut u32buf = [0u8; 4];
    read(&mut u32buf)?;
    if u32::from_le_bytes(u32buf) != CHECKPOINT_VERSION {
        return Err(bad("unsupported checkpoint version"));
    }
    let mut u64buf = [0u8; 8];
    read(&mut u64buf)?;
    let mut json = vec![0u8; u64::from_le_bytes(u64buf) as usize];
    read(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    let mut params = Vec::with_capacity(header.arrays.len());
    for entry in header.arrays {
        let len: usize = entry.shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            read(&mut u64buf)?;
            data.push(f64::from_le_bytes(u64buf));
        }
        params.push(NamedParam {
            value: DenseArray::from_vec(&entry.shape, data)?,
            name: entry.name,
        });
    }
    ModelState::from_parts(header.spec, header.seed, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn se_spec_counts() {
        let s = SeBlockSpec::new(16, 8).unwrap();
        assert_eq!(s.hidden(), 2);
        assert_eq!(s.weight_count(), 64);
        assert!(SeBlockSpec::new(12, 8).is_err());
    }

    #[test]
    fn site_counts_match_variants() {
        assert_eq!(ModelSpec::desk(Variant::Unet).se_sites().len(), 0);
        assert_eq!(ModelSpec::desk(Variant::EncUse).se_sites().len(), 4);
        assert_eq!(ModelSpec::desk(Variant::EncDecUse).se_sites().len(), 9);
        let m = build_model(&ModelSpec::desk(Variant::EncDecUse), 1).unwrap();
        assert_eq!(m.se_site_count(), 9);
    }

    #[test]
    fn indivisible_site_is_named() {
        let spec = ModelSpec {
            base_width: 4,
            ..ModelSpec::desk(Variant::EncUse)
        };
        let err = build_model(&spec, 0).unwrap_err().to_string();
        assert!(err.contains("enc1"), "{err}");
        // the plain U-Net has no SE sites to violate
        assert!(build_model(&spec.with_variant(Variant::Unet), 0).is_ok());
    }

    #[test]
    fn forward_rejects_indivisible_input() {
        let m = build_model(&ModelSpec::desk(Variant::Unet), 0).unwrap();
        assert!(m.forward(&DenseArray::zeros(&[1, 1, 24, 24])).is_err());
        assert!(m.forward(&DenseArray::zeros(&[1, 2, 32, 32])).is_err());
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.name()).unwrap(), v);
        }
        assert!(Variant::parse("resnet").is_err());
    }
}
