//! Soft Dice loss, momentum SGD with weight decay, a step learning-rate
//! schedule, crop/flip augmentation and the training loop.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::architectures::{save_checkpoint, ForwardOptions, ModelState};
use crate::array::DenseArray;
use crate::dataset::{center_crop, SliceRecord};
use crate::error::{Error, Result};
use crate::metrics::ConfusionCounts;
use crate::postprocess::{threshold, BinaryMask};
use crate::raster::Raster;
use crate::tape::{dice_loss_value, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs at which the rate is multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub seed: u64,
    /// Network input `(height, width)`; a random crop of the canvas during
    /// training, a centre crop at evaluation.
    pub crop: (usize, usize),
    /// Random crop offset and horizontal flip. Without it training uses the
    /// centre crop.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 4,
            epochs: 50,
            decay_epochs: vec![20, 40],
            decay_factor: 0.2,
            seed: 0,
            crop: (64, 64),
            augment: true,
        }
    }
}

impl TrainConfig {
    /// 256×256 crops of the 288×288 canvas.
    pub fn full_scale() -> Self {
        Self {
            crop: (256, 256),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be finite and non-negative");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor.is_finite()) {
            return bad("decay_factor must be positive");
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return bad("decay_epochs must be strictly increasing");
        }
        if self.decay_epochs.iter().any(|&e| e >= self.epochs) {
            return bad("decay_epochs must be smaller than epochs");
        }
        if self.crop.0 == 0 || self.crop.1 == 0 {
            return bad("crop must be non-empty");
        }
        Ok(())
    }
}

/// `lr0 · factor^#{decay epochs <= epoch}`.
pub fn lr_at(config: &TrainConfig, epoch: usize) -> f64 {
    let decays = config.decay_epochs.iter().filter(|&&e| e <= epoch).count();
    config.lr0 * config.decay_factor.powi(decays as i32)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<DenseArray>,
    pub epoch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl OptimizerState {
    pub fn new(model: &ModelState, config: &TrainConfig) -> Self {
        Self {
            velocity: model.params().iter().map(|p| DenseArray::zeros(p.value.shape())).collect(),
            epoch: 0,
            lr: lr_at(config, 0),
            momentum: config.momentum,
            weight_decay: config.weight_decay,
        }
    }
}

/// `v ← μv + (g + λw)`, `w ← w − ηv` for every weight. Fails before touching
/// any weight if a gradient is non-finite.
pub fn sgd_step(state: &mut OptimizerState, model: &mut ModelState, grads: &[DenseArray]) -> Result<()> {
    let params = model.params_mut();
    if grads.len() != params.len() || state.velocity.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "{} weights, {} gradients, {} velocity buffers",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.value.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "sgd_step",
                left: p.value.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
    }
    let (mu, lambda, eta) = (state.momentum, state.weight_decay, state.lr);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        for ((w, &g), v) in p.value.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *v = mu * *v + (g + lambda * *w);
            *w -= eta * *v;
        }
    }
    Ok(())
}

/// `-2Σsr / (Σs + Σr)`, `0` when both sums vanish.
pub fn dice_loss(s: &[f64], r: &[bool]) -> Result<f64> {
    check_dice_inputs(s, r)?;
    let truth: Vec<f64> = r.iter().map(|&b| b as u8 as f64).collect();
    Ok(dice_loss_value(s, &truth).0)
}

/// `∂L/∂sᵢ = (2A − 2rᵢB) / B²` with `A = Σsr`, `B = Σs + Σr`.
pub fn dice_loss_grad(s: &[f64], r: &[bool]) -> Result<Vec<f64>> {
    check_dice_inputs(s, r)?;
    let a: f64 = s.iter().zip(r).filter(|(_, &r)| r).map(|(s, _)| s).sum();
    let b: f64 = s.iter().sum::<f64>() + r.iter().filter(|&&r| r).count() as f64;
    if b == 0.0 {
        return Ok(vec![0.0; s.len()]);
    }
    Ok(r.iter().map(|&ri| (2.0 * a - 2.0 * ri as u8 as f64 * b) / (b * b)).collect())
}

fn check_dice_inputs(s: &[f64], r: &[bool]) -> Result<()> {
    if s.len() != r.len() {
        return Err(Error::ShapeMismatch {
            op: "dice_loss",
            left: vec![s.len()],
            right: vec![r.len()],
        });
    }
    if let Some(v) = s.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!("prediction {v} outside [0, 1]")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentDraw {
    pub top: usize,
    pub left: usize,
    pub flip: bool,
}

impl AugmentDraw {
    /// Uniform offset over every valid crop position, flip with p = 0.5.
    pub fn sample<R: Rng>(canvas: (usize, usize), crop: (usize, usize), rng: &mut R) -> Result<Self> {
        check_crop(canvas, crop)?;
        Ok(Self {
            top: rng.random_range(0..=canvas.0 - crop.0),
            left: rng.random_range(0..=canvas.1 - crop.1),
            flip: rng.random_bool(0.5),
        })
    }
}

fn check_crop(canvas: (usize, usize), crop: (usize, usize)) -> Result<()> {
    if crop.0 > canvas.0 || crop.1 > canvas.1 {
        return Err(Error::InvalidArgument(format!("crop {crop:?} larger than canvas {canvas:?}")));
    }
    Ok(())
}

/// Applies one crop and optional flip to the image and both masks.
pub fn apply_augment(slice: &SliceRecord, draw: AugmentDraw, crop: (usize, usize)) -> Result<SliceRecord> {
    check_crop(slice.dims(), crop)?;
    if draw.top + crop.0 > slice.dims().0 || draw.left + crop.1 > slice.dims().1 {
        return Err(Error::InvalidArgument(format!("crop offset {draw:?} out of range")));
    }
    let (t, l) = (draw.top as isize, draw.left as isize);
    let cut_mask = |m: &BinaryMask| {
        let px = m.pixels().window(t, l, crop.0, crop.1);
        BinaryMask::new(if draw.flip { px.flip_horizontal() } else { px }, m.provenance())
    };
    let image = slice.image.window(t, l, crop.0, crop.1);
    Ok(SliceRecord {
        image: if draw.flip { image.flip_horizontal() } else { image },
        wg: cut_mask(&slice.wg),
        cg: cut_mask(&slice.cg),
        spacing_mm: slice.spacing_mm,
        index: slice.index,
    })
}

pub fn augment<R: Rng>(slice: &SliceRecord, crop: (usize, usize), rng: &mut R) -> Result<SliceRecord> {
    let draw = AugmentDraw::sample(slice.dims(), crop, rng)?;
    apply_augment(slice, draw, crop)
}

fn image_batch(image: &Raster<f64>) -> DenseArray {
    DenseArray::from_vec(&[1, 1, image.height(), image.width()], image.data().to_vec()).expect("raster size matches")
}

fn mask_array(mask: &BinaryMask) -> DenseArray {
    let (h, w) = mask.dims();
    DenseArray::from_vec(&[1, 1, h, w], mask.pixels().data().iter().map(|&b| b as u8 as f64).collect())
        .expect("mask size matches")
}

/// Dice loss and per-weight gradients for one slice against its CG mask.
pub fn sample_gradients(model: &ModelState, slice: &SliceRecord) -> Result<(f64, Vec<DenseArray>)> {
    let mut tape = Tape::new();
    let weights = model.bind(&mut tape);
    let input = tape.leaf(image_batch(&slice.image));
    let trace = model.forward_tape(&mut tape, &weights, input, ForwardOptions::default())?;
    let loss = tape.dice_loss(trace.output, &mask_array(&slice.cg))?;
    let value = tape.value(loss).data()[0];
    let mut grads = tape.backward(loss)?;
    let out = weights
        .iter()
        .zip(model.params())
        .map(|(&v, p)| grads.take_or_zeros(v, p.value.shape()))
        .collect();
    Ok((value, out))
}

/// Mean loss and mean gradients over a batch. Samples run in parallel and are
/// reduced in sample order.
pub fn batch_gradients(model: &ModelState, batch: &[SliceRecord]) -> Result<(f64, Vec<DenseArray>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let per_sample: Vec<(f64, Vec<DenseArray>)> =
        batch.par_iter().map(|s| sample_gradients(model, s)).collect::<Result<_>>()?;
    let n = batch.len() as f64;
    let mut iter = per_sample.into_iter();
    let (mut loss, mut grads) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        for (acc, g) in grads.iter_mut().zip(&g) {
            acc.add_assign(g)?;
        }
    }
    for g in &mut grads {
        *g = g.scaled(1.0 / n);
    }
    Ok((loss / n, grads))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: ModelState,
    pub losses: Vec<EpochLoss>,
}

/// Slices usable as training targets: non-empty WG and CG.
pub fn trainable(slices: &[SliceRecord]) -> Vec<SliceRecord> {
    slices.iter().filter(|s| !s.wg.is_empty() && !s.cg.is_empty()).cloned().collect()
}

pub fn train(model: ModelState, slices: &[SliceRecord], config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, slices, config, |_, _| Ok(()))
}

/// Training loop; `on_epoch` sees each finished epoch and the current model.
pub fn train_with(
    mut model: ModelState,
    slices: &[SliceRecord],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLoss, &ModelState) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let pool = trainable(slices);
    if pool.is_empty() {
        return Err(Error::InvalidArgument("training split has no slice with a non-empty gland".into()));
    }
    let canvas = pool[0].dims();
    if let Some(s) = pool.iter().find(|s| s.dims() != canvas) {
        return Err(Error::ShapeMismatch {
            op: "train",
            left: vec![canvas.0, canvas.1],
            right: vec![s.dims().0, s.dims().1],
        });
    }
    check_crop(canvas, config.crop)?;
    let fixed: Vec<SliceRecord> = if config.augment {
        Vec::new()
    } else {
        pool.iter().map(|s| center_crop(s, config.crop)).collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = OptimizerState::new(&model, config);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        opt.epoch = epoch;
        opt.lr = lr_at(config, epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<SliceRecord> = if config.augment {
                chunk
                    .iter()
                    .map(|&i| augment(&pool[i], config.crop, &mut rng))
                    .collect::<Result<_>>()?
            } else {
                chunk.iter().map(|&i| fixed[i].clone()).collect()
            };
            let (loss, grads) = batch_gradients(&model, &batch)?;
            sgd_step(&mut opt, &mut model, &grads)?;
            total += loss * chunk.len() as f64;
        }
        let record = EpochLoss {
            epoch,
            loss: total / pool.len() as f64,
            lr: opt.lr,
        };
        log::debug!("epoch {epoch}: loss {:.6} lr {}", record.loss, record.lr);
        on_epoch(&record, &model)?;
        losses.push(record);
    }
    Ok(TrainOutcome { model, losses })
}

/// Trains and writes `config.json`, `loss.csv`, `epoch_###.ckpt` at the end
/// of the epoch preceding each rate decay, and `final.ckpt`.
pub fn train_to_dir(model: ModelState, slices: &[SliceRecord], config: &TrainConfig, run_dir: &Path) -> Result<TrainOutcome> {
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let cfg_path = run_dir.join("config.json");
    let echo = serde_json::json!({ "model": model.spec(), "model_seed": model.seed(), "train": config });
    fs::write(&cfg_path, serde_json::to_vec_pretty(&echo)?).map_err(|e| Error::io(&cfg_path, e))?;

    let loss_path = run_dir.join("loss.csv");
    let file = File::create(&loss_path).map_err(|e| Error::io(&loss_path, e))?;
    let mut csv = csv::Writer::from_writer(BufWriter::new(file));
    let outcome = train_with(model, slices, config, |rec, model| {
        csv.serialize(rec)?;
        csv.flush().map_err(|e| Error::io(&loss_path, e))?;
        if config.decay_epochs.contains(&(rec.epoch + 1)) {
            save_checkpoint(model, &run_dir.join(format!("epoch_{:03}.ckpt", rec.epoch + 1)))?;
        }
        Ok(())
    })?;
    let mut inner = csv.into_inner().map_err(|e| Error::io(&loss_path, e.into_error()))?;
    inner.flush().map_err(|e| Error::io(&loss_path, e))?;
    save_checkpoint(&outcome.model, &run_dir.join("final.ckpt"))?;
    Ok(outcome)
}

/// CG probability map for one slice; the model input is the slice as given.
pub fn predict(model: &ModelState, image: &Raster<f64>) -> Result<Raster<f64>> {
    let out = model.forward(&image_batch(image))?;
    Ok(Raster::from_vec(image.height(), image.width(), out.into_vec()))
}

/// Mean CG DSC (percent) of thresholded predictions over centre-cropped
/// slices.
pub fn mean_dice(model: &ModelState, slices: &[SliceRecord], crop: (usize, usize), t: f64) -> Result<f64> {
    if slices.is_empty() {
        return Err(Error::InvalidArgument("no slices to evaluate".into()));
    }
    let scores: Vec<f64> = slices
        .par_iter()
        .map(|s| {
            let s = center_crop(s, crop);
            let prob = predict(model, &s.image)?;
            Ok(ConfusionCounts::from_masks(&threshold(&prob, t), &s.cg).dsc())
        })
        .collect::<Result<_>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::architectures::{build_model, ModelSpec, Variant};

    #[test]
    fn schedule() {
        let c = TrainConfig::default();
        assert_eq!(lr_at(&c, 0), 0.01);
        assert_eq!(lr_at(&c, 19), 0.01);
        assert!((lr_at(&c, 20) - 0.002).abs() < 1e-15);
        assert!((lr_at(&c, 40) - 0.0004).abs() < 1e-15);
        assert!((lr_at(&c, 49) - 0.0004).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        c.decay_epochs = vec![40, 20];
        assert!(c.validate().is_err());
        c.decay_epochs = vec![20, 50];
        assert!(c.validate().is_err());
        c.decay_epochs = vec![];
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn dice_examples() {
        assert_eq!(dice_loss(&[1.0, 0.0, 1.0], &[true, false, true]).unwrap(), -1.0);
        let half = dice_loss(&[0.5; 10], &[true; 10]).unwrap();
        assert!((half + 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(dice_loss(&[0.0; 4], &[false; 4]).unwrap(), 0.0);
        assert!(dice_loss(&[1.5], &[true]).is_err());
        assert!(dice_loss(&[0.5], &[true, false]).is_err());
    }

    #[test]
    fn sgd_decay_only_step() {
        let spec = ModelSpec {
            variant: Variant::Unet,
            depth: 1,
            base_width: 2,
            se_reduction: 2,
            in_channels: 1,
        };
        let mut model = build_model(&spec, 0).unwrap();
        for p in model.params_mut() {
            p.value = DenseArray::filled(p.value.shape(), 1.0);
        }
        let mut opt = OptimizerState::new(&model, &TrainConfig::default());
        let zeros: Vec<DenseArray> = model.params().iter().map(|p| DenseArray::zeros(p.value.shape())).collect();
        sgd_step(&mut opt, &mut model, &zeros).unwrap();
        assert!(model.params().iter().all(|p| p.value.data().iter().all(|&w| w == 1.0 - 0.01 * 5e-4)));

        let mut bad = zeros.clone();
        bad[3].data_mut()[0] = f64::NAN;
        let name = model.params()[3].name.clone();
        assert!(matches!(sgd_step(&mut opt, &mut model, &bad), Err(Error::NonFiniteGradient(n)) if n == name));
    }
}
