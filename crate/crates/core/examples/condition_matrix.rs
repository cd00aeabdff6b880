//! The 21 training/testing conditions with tiny models and one epoch;
//! results go to the directory in the first argument (default `matrix_out`).
use std::path::PathBuf;

use zonalseg::architectures::{ModelSpec, Variant};
use zonalseg::dataset::{InstitutionProfile, PhantomConfig};
use zonalseg::experiments::{default_workers, run_matrix, DataSource, MatrixPlan};
use zonalseg::metrics::Region;
use zonalseg::training::TrainConfig;

fn main() -> zonalseg::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "matrix_out".into()));
    let plan = MatrixPlan {
        data: DataSource::Phantom(PhantomConfig::new(InstitutionProfile::standard(), 8, 3, 0)),
        methods: Variant::ALL.to_vec(),
        model: ModelSpec {
            variant: Variant::Unet,
            depth: 2,
            base_width: 4,
            se_reduction: 4,
            in_channels: 1,
        },
        train: TrainConfig {
            lr0: 0.05,
            epochs: 1,
            decay_epochs: Vec::new(),
            crop: (32, 32),
            ..TrainConfig::default()
        },
        canvas: (36, 36),
        threshold: 0.5,
        seed: 0,
    };
    let outcome = run_matrix(&plan, &out, default_workers())?;
    for cell in &outcome.summary.cells {
        let d = cell.region(Region::Cg).and_then(|r| r.dsc).map_or(f64::NAN, |d| d.mean);
        println!("{:12} {:5} {:36} CG DSC {d:6.2}", cell.method.name(), cell.id, cell.label);
    }
    for s in &outcome.summary.stats {
        println!("{}: p {:.3}, CD {:.3}, control {}", s.label, s.p_value, s.cd, s.control);
    }
    Ok(())
}
