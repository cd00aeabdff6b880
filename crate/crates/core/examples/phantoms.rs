//! Generates the three synthetic institutions and writes them to a
//! directory (first argument, default `phantoms`).
use std::path::PathBuf;

use zonalseg::dataset::{generate_phantoms, save_dataset, InstitutionProfile, PhantomConfig};

fn main() -> zonalseg::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "phantoms".into()));
    let sets = generate_phantoms(&PhantomConfig::new(InstitutionProfile::standard(), 8, 6, 0))?;
    for ds in &sets {
        let p = ds.descriptor.profile.as_ref().expect("phantom profile");
        let wg: usize = ds.patients.iter().flat_map(|p| &p.slices).map(|s| s.wg.count()).sum();
        let cg: usize = ds.patients.iter().flat_map(|p| &p.slices).map(|s| s.cg.count()).sum();
        println!(
            "{}: {} slices of {:?}, PZ/CG contrast {:.2}, CG fraction {:.2}",
            ds.tag(),
            ds.slice_count(),
            p.canvas,
            p.contrast_ratio(),
            cg as f64 / wg as f64
        );
        save_dataset(ds, &out.join(ds.tag()))?;
    }
    println!("written to {}", out.display());
    Ok(())
}
