//! Cleanup of predicted central-gland masks and peripheral-zone derivation.
//!
//! Both hole filling and component labelling use 4-connectivity.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::raster::Raster;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Predicted,
    Truth,
    Derived,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pixels: Raster<bool>,
    provenance: Provenance,
}

const NEIGHBORS4: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

impl BinaryMask {
    pub fn new(pixels: Raster<bool>, provenance: Provenance) -> Self {
        Self { pixels, provenance }
    }

    pub fn empty(height: usize, width: usize, provenance: Provenance) -> Self {
        Self::new(Raster::filled(height, width, false), provenance)
    }

    pub fn from_fn(height: usize, width: usize, provenance: Provenance, f: impl FnMut(usize, usize) -> bool) -> Self {
        Self::new(Raster::from_fn(height, width, f), provenance)
    }

    /// Parses rows of `#`/`1` (set) and anything else (clear). Handy in tests.
    pub fn from_ascii(rows: &[&str]) -> Self {
        let h = rows.len();
        let w = rows.first().map_or(0, |r| r.len());
        Self::from_fn(h, w, Provenance::Truth, |r, c| matches!(rows[r].as_bytes()[c], b'#' | b'1'))
    }

    pub fn pixels(&self) -> &Raster<bool> {
        &self.pixels
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn dims(&self) -> (usize, usize) {
        self.pixels.dims()
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        *self.pixels.get(row, col)
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.pixels.set(row, col, value);
    }

    pub fn count(&self) -> usize {
        self.pixels.data().iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.pixels.data().iter().any(|&v| v)
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.pixels.data().iter().zip(other.pixels.data()).all(|(&a, &b)| !a || b)
    }

    fn zip_with(&self, other: &BinaryMask, provenance: Provenance, f: impl Fn(bool, bool) -> bool) -> BinaryMask {
        assert_eq!(self.dims(), other.dims(), "mask shapes differ");
        let data = self.pixels.data().iter().zip(other.pixels.data()).map(|(&a, &b)| f(a, b)).collect();
        let (h, w) = self.dims();
        BinaryMask::new(Raster::from_vec(h, w, data), provenance)
    }

    pub fn and(&self, other: &BinaryMask) -> BinaryMask {
        self.zip_with(other, self.provenance, |a, b| a && b)
    }

    pub fn or(&self, other: &BinaryMask) -> BinaryMask {
        self.zip_with(other, self.provenance, |a, b| a || b)
    }

    pub fn and_not(&self, other: &BinaryMask) -> BinaryMask {
        self.zip_with(other, self.provenance, |a, b| a && !b)
    }

    /// Set pixels as `(row, col)` in row-major order.
    pub fn coords(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pixels.indexed().filter(|(_, _, &v)| v).map(|(r, c, _)| (r, c))
    }

    pub(crate) fn neighbors4(&self, row: usize, col: usize) -> impl Iterator<Item = Option<(usize, usize)>> + '_ {
        let (h, w) = self.dims();
        NEIGHBORS4.iter().map(move |&(dr, dc)| {
            let r = row as isize + dr;
            let c = col as isize + dc;
            (r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w).then_some((r as usize, c as usize))
        })
    }
}

/// Pixel is set iff `value >= t`.
pub fn threshold(prob: &Raster<f64>, t: f64) -> BinaryMask {
    BinaryMask::new(prob.map(|&v| v >= t), Provenance::Predicted)
}

/// Fills background regions that do not reach the frame border.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = mask.dims();
    let mut outside = Raster::filled(h, w, false);
    let mut queue = VecDeque::new();
    for r in 0..h {
        for c in 0..w {
            let border = r == 0 || c == 0 || r + 1 == h || c + 1 == w;
            if border && !mask.get(r, c) && !outside.get(r, c) {
                outside.set(r, c, true);
                queue.push_back((r, c));
            }
        }
    }
    while let Some((r, c)) = queue.pop_front() {
        for (nr, nc) in mask.neighbors4(r, c).flatten() {
            if !mask.get(nr, nc) && !outside.get(nr, nc) {
                outside.set(nr, nc, true);
                queue.push_back((nr, nc));
            }
        }
    }
    BinaryMask::new(outside.map(|&o| !o), mask.provenance())
}

/// 4-connected labels: `0` is background, components are numbered from 1 in
/// row-major order of their first pixel. Also returns each component's size.
pub fn label_components(mask: &BinaryMask) -> (Raster<u32>, Vec<usize>) {
    let (h, w) = mask.dims();
    let mut labels = Raster::filled(h, w, 0u32);
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for (r, c) in mask.coords() {
        if *labels.get(r, c) != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        let mut size = 0;
        labels.set(r, c, label);
        stack.push((r, c));
        while let Some((pr, pc)) = stack.pop() {
            size += 1;
            for (nr, nc) in mask.neighbors4(pr, pc).flatten() {
                if mask.get(nr, nc) && *labels.get(nr, nc) == 0 {
                    labels.set(nr, nc, label);
                    stack.push((nr, nc));
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Minimum component size kept by [`remove_small`]: `⌊|WG| / 8⌋`.
pub fn small_area_threshold(wg: &BinaryMask) -> usize {
    wg.count() / 8
}

/// Drops components with fewer than `⌊|WG| / 8⌋` pixels. An empty gland
/// yields an empty mask.
pub fn remove_small(mask: &BinaryMask, wg: &BinaryMask) -> BinaryMask {
    assert_eq!(mask.dims(), wg.dims(), "mask and WG shapes differ");
    let (h, w) = mask.dims();
    if wg.is_empty() {
        return BinaryMask::empty(h, w, mask.provenance());
    }
    let min_size = small_area_threshold(wg);
    let (labels, sizes) = label_components(mask);
    let keep = labels.map(|&l| l != 0 && sizes[l as usize - 1] >= min_size);
    BinaryMask::new(keep, mask.provenance())
}

/// `PZ = WG ∧ ¬CG`, with CG first clipped to WG.
pub fn derive_pz(wg: &BinaryMask, cg: &BinaryMask) -> BinaryMask {
    let cg = cg.and(wg);
    let pz = wg.and_not(&cg).with_provenance(Provenance::Derived);
    debug_assert!(cg.or(&pz).pixels() == wg.pixels());
    debug_assert!(cg.and(&pz).is_empty());
    pz
}

/// Zonal masks emitted by [`postprocess_prediction`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ZonalMasks {
    pub cg: BinaryMask,
    pub pz: BinaryMask,
}

/// Threshold, clip to WG, fill holes, drop small components, derive PZ.
pub fn postprocess_prediction(prob: &Raster<f64>, wg: &BinaryMask, t: f64) -> ZonalMasks {
    let raw = threshold(prob, t).and(wg);
    let filled = fill_holes(&raw).and(wg);
    let cg = remove_small(&filled, wg);
    let pz = derive_pz(wg, &cg);
    ZonalMasks { cg, pz }
}
