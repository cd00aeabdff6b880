//! Fits a desk-scale Enc-Dec USE-Net to 16 phantom slices and reports the
//! training-set DSC. First argument: epochs (default 200).
use std::time::Instant;

use zonalseg::architectures::{build_model, ModelSpec, Variant};
use zonalseg::dataset::{generate_phantoms, preprocess_patient, InstitutionProfile, PhantomConfig};
use zonalseg::training::{mean_dice, train_with, TrainConfig};

fn main() -> zonalseg::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let profile = InstitutionProfile::phantom_a().with_canvas((64, 64));
    let set = generate_phantoms(&PhantomConfig::new(vec![profile], 2, 8, 3))?.remove(0);
    let slices: Vec<_> = set.patients.iter().flat_map(|p| preprocess_patient(p, (64, 64))).collect();
    let cfg = TrainConfig {
        epochs,
        decay_epochs: Vec::new(),
        augment: false,
        seed: 7,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let out = train_with(build_model(&ModelSpec::desk(Variant::EncDecUse), 7)?, &slices, &cfg, |rec, model| {
        if rec.epoch % 20 == 19 {
            let d = mean_dice(model, &slices, cfg.crop, 0.5)?;
            println!("epoch {:3}  loss {:+.4}  DSC {d:6.2}  {:.0}s", rec.epoch + 1, rec.loss, start.elapsed().as_secs_f64());
        }
        Ok(())
    })?;
    println!("final DSC {:.2}", mean_dice(&out.model, &slices, cfg.crop, 0.5)?);
    Ok(())
}
