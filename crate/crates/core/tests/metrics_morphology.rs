mod common;

use std::collections::VecDeque;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use zonalseg::metrics::{aggregate_patient, avg_max_distance, boundary, dsc, hausdorff, sensitivity, specificity, MetricsRecord, Region};
use zonalseg::postprocess::{derive_pz, fill_holes, label_components, postprocess_prediction, remove_small, threshold, Provenance};
use zonalseg::training::dice_loss;
use zonalseg::{BinaryMask, Raster};

fn mask_strategy(max: usize) -> impl Strategy<Value = BinaryMask> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| {
        prop::collection::vec(any::<bool>(), h * w).prop_map(move |bits| BinaryMask::from_fn(h, w, Provenance::Truth, |r, c| bits[r * w + c]))
    })
}

fn pair_strategy(max: usize) -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| {
        (prop::collection::vec(any::<bool>(), h * w), prop::collection::vec(any::<bool>(), h * w)).prop_map(move |(a, b)| {
            (
                BinaryMask::from_fn(h, w, Provenance::Predicted, |r, c| a[r * w + c]),
                BinaryMask::from_fn(h, w, Provenance::Truth, |r, c| b[r * w + c]),
            )
        })
    })
}

fn translate(m: &BinaryMask, dr: usize, dc: usize) -> BinaryMask {
    let (h, w) = m.dims();
    BinaryMask::from_fn(h + dr, w + dc, m.provenance(), |r, c| r >= dr && c >= dc && m.get(r - dr, c - dc))
}

/// Background reachable from the frame, by breadth-first search.
fn fill_oracle(m: &BinaryMask) -> BinaryMask {
    let (h, w) = m.dims();
    let mut seen = vec![false; h * w];
    let mut q: VecDeque<(usize, usize)> = (0..h)
        .flat_map(|r| (0..w).map(move |c| (r, c)))
        .filter(|&(r, c)| (r == 0 || c == 0 || r == h - 1 || c == w - 1) && !m.get(r, c))
        .collect();
    for &(r, c) in &q {
        seen[r * w + c] = true;
    }
    while let Some((r, c)) = q.pop_front() {
        let cand = [(r.wrapping_sub(1), c), (r + 1, c), (r, c.wrapping_sub(1)), (r, c + 1)];
        for (nr, nc) in cand {
            if nr < h && nc < w && !m.get(nr, nc) && !seen[nr * w + nc] {
                seen[nr * w + nc] = true;
                q.push_back((nr, nc));
            }
        }
    }
    BinaryMask::from_fn(h, w, m.provenance(), |r, c| !seen[r * w + c])
}

/// Components by repeated union of 4-adjacent pixels.
fn component_sizes_oracle(m: &BinaryMask) -> Vec<usize> {
    let (h, w) = m.dims();
    let mut parent: Vec<usize> = (0..h * w).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut i = i;
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for r in 0..h {
        for c in 0..w {
            if !m.get(r, c) {
                continue;
            }
            for (nr, nc) in [(r + 1, c), (r, c + 1)] {
                if nr < h && nc < w && m.get(nr, nc) {
                    let (a, b) = (find(&mut parent, r * w + c), find(&mut parent, nr * w + nc));
                    parent[a] = b;
                }
            }
        }
    }
    let mut sizes = std::collections::BTreeMap::new();
    for r in 0..h {
        for c in 0..w {
            if m.get(r, c) {
                *sizes.entry(find(&mut parent, r * w + c)).or_insert(0) += 1;
            }
        }
    }
    let mut v: Vec<usize> = sizes.into_values().collect();
    v.sort_unstable();
    v
}

#[test]
fn overlap_metrics_match_counts_on_random_16x16() {
    let mut r = rng(16);
    for _ in 0..300 {
        let s = random_mask(16, 16, r.random_range(0.0..1.0), &mut r);
        let g = random_mask(16, 16, r.random_range(0.0..1.0), &mut r);
        assert_eq!(dsc(&s, &g), oracle_dsc(&s, &g));
        assert_eq!(sensitivity(&s, &g), oracle_sen(&s, &g));
        assert_eq!(specificity(&s, &g), oracle_spc(&s, &g));
    }
}

#[test]
fn boundary_matches_neighbour_scan() {
    let mut r = rng(17);
    for _ in 0..300 {
        let m = random_blobs(r.random_range(1..16), r.random_range(1..16), &mut r);
        assert_eq!(boundary(&m), oracle_boundary(&m));
    }
}

#[test]
fn distance_examples() {
    let mut s = BinaryMask::empty(5, 5, Provenance::Predicted);
    let mut g = BinaryMask::empty(5, 5, Provenance::Truth);
    s.set(0, 0, true);
    g.set(3, 4, true);
    assert_eq!(avg_max_distance(&s, &g), Some((5.0, 5.0)));
    assert_eq!(avg_max_distance(&g, &g), Some((0.0, 0.0)));
    assert_eq!(avg_max_distance(&BinaryMask::empty(5, 5, Provenance::Predicted), &g), None);
}

#[test]
fn fill_and_remove_match_oracles() {
    let mut r = rng(18);
    for _ in 0..300 {
        let (h, w) = (r.random_range(1..14), r.random_range(1..14));
        let m = random_mask(h, w, r.random_range(0.2..0.8), &mut r);
        assert_eq!(fill_holes(&m), fill_oracle(&m));
        let (_, mut sizes) = label_components(&m);
        sizes.sort_unstable();
        assert_eq!(sizes, component_sizes_oracle(&m));
        let wg = random_blobs(h, w, &mut r);
        let min = wg.count() / 8;
        let kept = remove_small(&m, &wg);
        let want: Vec<usize> = if wg.is_empty() { Vec::new() } else { sizes.iter().copied().filter(|&s| s >= min).collect() };
        let mut got = component_sizes_oracle(&kept);
        got.sort_unstable();
        assert_eq!(got, want);
    }
}

#[test]
fn threshold_matches_elementwise_scan() {
    let mut r = rng(19);
    let p = Raster::from_fn(9, 7, |_, _| r.random_range(0.0..1.0));
    let m = threshold(&p, 0.37);
    for (row, col, v) in p.indexed() {
        assert_eq!(m.get(row, col), *v >= 0.37);
    }
}

#[test]
fn derive_pz_examples() {
    let wg = BinaryMask::from_ascii(&[".##.", "####", ".##."]);
    assert!(derive_pz(&wg, &wg).is_empty());
    assert_eq!(derive_pz(&wg, &BinaryMask::empty(3, 4, Provenance::Predicted)).pixels(), wg.pixels());
}

#[test]
fn aggregation_means_over_defined_slices() {
    let full = BinaryMask::from_ascii(&["##", "##"]);
    let half = BinaryMask::from_ascii(&["##", ".."]);
    let a = MetricsRecord::slice(Region::Cg, &full, &full);
    let mut b = MetricsRecord::slice(Region::Cg, &half, &full);
    b.dsc = 80.0;
    b.avgd = None;
    let agg = aggregate_patient(&[a, b]).unwrap();
    assert_eq!(agg.dsc, 90.0);
    assert_eq!(agg.avgd, a.avgd);
    assert_eq!(aggregate_patient(std::slice::from_ref(&a)).unwrap().dsc, a.dsc);
    assert!(aggregate_patient(&[]).is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn dsc_is_symmetric_and_bounded((s, g) in pair_strategy(10)) {
        let d = dsc(&s, &g);
        prop_assert_eq!(d, dsc(&g, &s));
        prop_assert!((0.0..=100.0).contains(&d));
        prop_assert!((0.0..=100.0).contains(&specificity(&s, &g)));
        prop_assert_eq!(d == 100.0, s.pixels() == g.pixels());
    }

    #[test]
    fn dice_loss_is_negative_dsc_on_binary((s, g) in pair_strategy(10)) {
        prop_assume!(!(s.is_empty() && g.is_empty()));
        let pred: Vec<f64> = s.pixels().data().iter().map(|&b| b as u8 as f64).collect();
        let loss = dice_loss(&pred, g.pixels().data()).unwrap();
        prop_assert!((-1.0..=0.0).contains(&loss));
        prop_assert!((100.0 * -loss - dsc(&s, &g)).abs() < 1e-12);
    }

    #[test]
    fn sensitivity_grows_with_segmentation((s, g) in pair_strategy(8), seed in any::<u64>()) {
        let (h, w) = s.dims();
        let extra = random_mask(h, w, 0.3, &mut rng(seed));
        prop_assert!(sensitivity(&s.or(&extra), &g) >= sensitivity(&s, &g));
    }

    #[test]
    fn distances_are_ordered_and_translation_invariant((s, g) in pair_strategy(10), dr in 0usize..4, dc in 0usize..4) {
        if let Some((avg, max)) = avg_max_distance(&s, &g) {
            prop_assert!(avg <= max + 1e-15);
            let moved = avg_max_distance(&translate(&s, dr, dc), &translate(&g, dr, dc));
            prop_assert_eq!(moved, Some((avg, max)));
            prop_assert_eq!(avg_max_distance(&s, &s), Some((0.0, 0.0)));
            let h = hausdorff(&s, &g).unwrap();
            prop_assert!(h >= max);
        } else {
            prop_assert!(s.is_empty() || g.is_empty());
        }
    }

    #[test]
    fn morphology_laws((m, wg) in pair_strategy(12)) {
        let filled = fill_holes(&m);
        prop_assert!(m.is_subset_of(&filled));
        prop_assert_eq!(fill_holes(&filled), filled.clone());
        let kept = remove_small(&m, &wg);
        prop_assert!(kept.is_subset_of(&m));
        prop_assert_eq!(remove_small(&kept, &wg), kept.clone());
        let largest = label_components(&m).1.into_iter().max().unwrap_or(0);
        if !wg.is_empty() && largest > 0 && largest >= wg.count() / 8 {
            prop_assert!(!kept.is_empty());
        }
    }

    #[test]
    fn pipeline_partitions_the_gland(wg in mask_strategy(14), seed in any::<u64>(), t in 0.05f64..0.95) {
        let (h, w) = wg.dims();
        let mut r = rng(seed);
        let prob = Raster::from_fn(h, w, |_, _| r.random_range(0.0..1.0));
        let z = postprocess_prediction(&prob, &wg, t);
        prop_assert!(z.cg.is_subset_of(&wg));
        prop_assert!(z.cg.and(&z.pz).is_empty());
        let union = z.cg.or(&z.pz);
        prop_assert_eq!(union.pixels(), wg.pixels());
    }
}
