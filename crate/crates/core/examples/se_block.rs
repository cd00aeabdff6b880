//! Squeeze-and-excitation on a random feature map: gates and rescaled
//! channel means.
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zonalseg::architectures::{se_block_forward, SeWeights};
use zonalseg::DenseArray;

fn main() -> zonalseg::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (f, r) = (16, 8);
    let mut draw = |shape: &[usize]| {
        let n = shape.iter().product();
        DenseArray::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    };
    let u = draw(&[1, f, 8, 8])?;
    let weights = SeWeights {
        squeeze: draw(&[f, f / r])?,
        excite: draw(&[f / r, f])?,
    };
    let out = se_block_forward(&u, &weights)?;
    for c in 0..f {
        let mean = |a: &DenseArray| a.data()[c * 64..(c + 1) * 64].iter().sum::<f64>() / 64.0;
        let (m_in, m_out) = (mean(&u), mean(&out));
        println!("channel {c:2}: mean {m_in:+.4} -> {m_out:+.4}  gate {:.4}", m_out / m_in);
    }
    Ok(())
}
