//! Parameter and SE-block counts of the three variants at desk and full
//! scale.
use zonalseg::architectures::{ModelSpec, Variant};

fn main() -> zonalseg::Result<()> {
    for (scale, spec) in [("desk", ModelSpec::desk as fn(Variant) -> ModelSpec), ("full", ModelSpec::full_scale)] {
        let base = spec(Variant::Unet).param_count();
        for v in Variant::ALL {
            let s = spec(v);
            s.validate()?;
            println!(
                "{scale:4} {:12} SE blocks {}  params {:>9}  (+{})",
                v.name(),
                s.se_sites().len(),
                s.param_count(),
                s.param_count() - base
            );
        }
    }
    Ok(())
}
