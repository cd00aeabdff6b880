//! Threshold, hole filling and small-component removal on a noisy CG map.
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zonalseg::postprocess::{fill_holes, postprocess_prediction, remove_small, small_area_threshold, threshold, Provenance};
use zonalseg::{BinaryMask, Raster};

fn show(name: &str, m: &BinaryMask) {
    println!("{name} ({} px)", m.count());
    let (h, w) = m.dims();
    for r in 0..h {
        println!("  {}", (0..w).map(|c| if m.get(r, c) { '#' } else { '.' }).collect::<String>());
    }
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (h, w) = (16, 24);
    let wg = BinaryMask::from_fn(h, w, Provenance::Truth, |r, c| {
        ((r as f64 - 7.5) / 7.0).powi(2) + ((c as f64 - 11.5) / 11.0).powi(2) <= 1.0
    });
    let prob = Raster::from_fn(h, w, |r, c| {
        let inside = ((r as f64 - 7.0) / 4.0).powi(2) + ((c as f64 - 11.0) / 5.0).powi(2) <= 1.0;
        let base = if inside { 0.8 } else { 0.2 };
        (base + rng.random_range(-0.35..0.35f64)).clamp(0.0, 1.0)
    });
    let raw = threshold(&prob, 0.5).and(&wg);
    show("thresholded", &raw);
    let filled = fill_holes(&raw).and(&wg);
    show("holes filled", &filled);
    println!("minimum component size {}", small_area_threshold(&wg));
    show("small components removed", &remove_small(&filled, &wg));
    let z = postprocess_prediction(&prob, &wg, 0.5);
    show("PZ", &z.pz);
}
