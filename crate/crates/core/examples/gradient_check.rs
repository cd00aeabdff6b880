//! Finite-difference check of every layer's backward pass.
use zonalseg::gradcheck::layer_suite;

fn main() -> zonalseg::Result<()> {
    for c in layer_suite(7, 1e-5)? {
        println!("{:20} {:.2e}  ({} coords, {} kinks excluded)", c.layer, c.max_rel_error, c.coordinates, c.kink_crossings);
    }
    Ok(())
}
