//! Independent reference implementations used by the integration tests and
//! the acceptance harness.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zonalseg::postprocess::Provenance;
use zonalseg::{BinaryMask, DenseArray, Padding, Raster};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> DenseArray {
    let n = shape.iter().product();
    DenseArray::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn idx4(shape: &[usize], a: usize, b: usize, c: usize, d: usize) -> usize {
    ((a * shape[1] + b) * shape[2] + c) * shape[3] + d
}

/// Direct 3×3 cross-correlation, kernel `(cout, cin, 3, 3)`.
pub fn naive_conv(x: &DenseArray, k: &DenseArray, bias: &DenseArray, padding: Padding) -> DenseArray {
    let (xs, ks) = (x.shape(), k.shape());
    let (n, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let cout = ks[0];
    let (ho, wo, off) = match padding {
        Padding::Same => (h, w, 1isize),
        Padding::Valid => (h - 2, w - 2, 0),
    };
    let mut out = vec![0.0; n * cout * ho * wo];
    for b in 0..n {
        for co in 0..cout {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = bias.data()[co];
                    for ci in 0..cin {
                        for di in 0..3 {
                            for dj in 0..3 {
                                let r = i as isize + di as isize - off;
                                let c = j as isize + dj as isize - off;
                                if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                                    continue;
                                }
                                acc += x.data()[idx4(xs, b, ci, r as usize, c as usize)] * k.data()[idx4(ks, co, ci, di, dj)];
                            }
                        }
                    }
                    out[((b * cout + co) * ho + i) * wo + j] = acc;
                }
            }
        }
    }
    DenseArray::from_vec(&[n, cout, ho, wo], out).unwrap()
}

/// Stride-2 transposed convolution, kernel `(cin, cout, 2, 2)`.
pub fn naive_upsample(x: &DenseArray, k: &DenseArray, bias: &DenseArray) -> DenseArray {
    let (xs, ks) = (x.shape(), k.shape());
    let (n, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let cout = ks[1];
    let mut out = vec![0.0; n * cout * 4 * h * w];
    for b in 0..n {
        for co in 0..cout {
            for r in 0..2 * h {
                for c in 0..2 * w {
                    let mut acc = bias.data()[co];
                    for ci in 0..cin {
                        acc += x.data()[idx4(xs, b, ci, r / 2, c / 2)] * k.data()[idx4(ks, ci, co, r % 2, c % 2)];
                    }
                    out[((b * cout + co) * 2 * h + r) * 2 * w + c] = acc;
                }
            }
        }
    }
    DenseArray::from_vec(&[n, cout, 2 * h, 2 * w], out).unwrap()
}

pub fn naive_pool(x: &DenseArray) -> DenseArray {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let mut out = Vec::new();
    for b in 0..n {
        for ch in 0..c {
            for i in 0..h / 2 {
                for j in 0..w / 2 {
                    let mut m = f64::NEG_INFINITY;
                    for di in 0..2 {
                        for dj in 0..2 {
                            m = m.max(x.data()[idx4(s, b, ch, 2 * i + di, 2 * j + dj)]);
                        }
                    }
                    out.push(m);
                }
            }
        }
    }
    DenseArray::from_vec(&[n, c, h / 2, w / 2], out).unwrap()
}

/// Explicit loops for squeeze, excitation and scaling with the usual
/// `W₁ (F/r × F)` and `W₂ (F × F/r)` orientation.
pub fn se_loop(u: &DenseArray, w1: &[Vec<f64>], w2: &[Vec<f64>]) -> DenseArray {
    let s = u.shape();
    let (n, f, h, w) = (s[0], s[1], s[2], s[3]);
    let mut out = u.clone();
    for b in 0..n {
        let mut z = vec![0.0; f];
        for (c, zc) in z.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in 0..h {
                for j in 0..w {
                    acc += u.data()[idx4(s, b, c, i, j)];
                }
            }
            *zc = acc / (h * w) as f64;
        }
        let hidden: Vec<f64> = w1.iter().map(|row| row.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>().max(0.0)).collect();
        let gate: Vec<f64> = w2
            .iter()
            .map(|row| {
                let t: f64 = row.iter().zip(&hidden).map(|(a, b)| a * b).sum();
                1.0 / (1.0 + (-t).exp())
            })
            .collect();
        for (c, g) in gate.iter().enumerate() {
            for i in 0..h {
                for j in 0..w {
                    let k = idx4(s, b, c, i, j);
                    out.data_mut()[k] = u.data()[k] * g;
                }
            }
        }
    }
    out
}

pub fn mask_from_bits(bits: u32, h: usize, w: usize) -> BinaryMask {
    BinaryMask::from_fn(h, w, Provenance::Truth, |r, c| bits >> (r * w + c) & 1 == 1)
}

pub fn random_mask(h: usize, w: usize, density: f64, rng: &mut ChaCha8Rng) -> BinaryMask {
    BinaryMask::from_fn(h, w, Provenance::Truth, |_, _| rng.random_bool(density))
}

/// Random union of a few axis-aligned rectangles; gives blob-like masks.
pub fn random_blobs(h: usize, w: usize, rng: &mut ChaCha8Rng) -> BinaryMask {
    let k = rng.random_range(0..4);
    let rects: Vec<(usize, usize, usize, usize)> = (0..k)
        .map(|_| {
            let r0 = rng.random_range(0..h);
            let c0 = rng.random_range(0..w);
            (r0, c0, rng.random_range(r0..h) + 1, rng.random_range(c0..w) + 1)
        })
        .collect();
    BinaryMask::from_fn(h, w, Provenance::Truth, |r, c| rects.iter().any(|&(a, b, e, f)| r >= a && r < e && c >= b && c < f))
}

/// Brute-force `(tp, fp, fn, tn)`.
pub fn brute_counts(s: &BinaryMask, g: &BinaryMask) -> (u64, u64, u64, u64) {
    let (h, w) = s.dims();
    let mut out = (0, 0, 0, 0);
    for r in 0..h {
        for c in 0..w {
            match (s.get(r, c), g.get(r, c)) {
                (true, true) => out.0 += 1,
                (true, false) => out.1 += 1,
                (false, true) => out.2 += 1,
                (false, false) => out.3 += 1,
            }
        }
    }
    out
}

pub fn oracle_dsc(s: &BinaryMask, g: &BinaryMask) -> f64 {
    let (tp, fp, fn_, _) = brute_counts(s, g);
    if tp + fp + fn_ == 0 {
        100.0
    } else {
        200.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

pub fn oracle_sen(s: &BinaryMask, g: &BinaryMask) -> f64 {
    let (tp, _, fn_, _) = brute_counts(s, g);
    if tp + fn_ == 0 {
        100.0
    } else {
        100.0 * tp as f64 / (tp + fn_) as f64
    }
}

pub fn oracle_spc(s: &BinaryMask, g: &BinaryMask) -> f64 {
    let (tp, fp, _, _) = brute_counts(s, g);
    if tp + fp == 0 {
        100.0
    } else {
        100.0 - 100.0 * fp as f64 / (tp + fp) as f64
    }
}

/// Boundary via a one-pixel background frame.
pub fn oracle_boundary(m: &BinaryMask) -> Vec<(usize, usize)> {
    let (h, w) = m.dims();
    let padded = Raster::from_fn(h + 2, w + 2, |r, c| r >= 1 && c >= 1 && r <= h && c <= w && m.get(r - 1, c - 1));
    let mut out = Vec::new();
    for r in 1..=h {
        for c in 1..=w {
            if *padded.get(r, c) && (!*padded.get(r - 1, c) || !*padded.get(r + 1, c) || !*padded.get(r, c - 1) || !*padded.get(r, c + 1)) {
                out.push((r - 1, c - 1));
            }
        }
    }
    out
}

/// All-pairs directed mean and max distance.
pub fn oracle_distances(s: &BinaryMask, g: &BinaryMask) -> Option<(f64, f64)> {
    let bs = oracle_boundary(s);
    let bg = oracle_boundary(g);
    if bs.is_empty() || bg.is_empty() {
        return None;
    }
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    for &(a, b) in &bs {
        let mut best = f64::INFINITY;
        for &(c, d) in &bg {
            best = best.min(((a as f64 - c as f64).powi(2) + (b as f64 - d as f64).powi(2)).sqrt());
        }
        sum += best;
        max = max.max(best);
    }
    Some((sum / bs.len() as f64, max))
}
