//! Overlap and boundary-distance metrics for two shifted discs.
use zonalseg::metrics::{avg_max_distance, dsc, hausdorff, sensitivity, specificity, tnr};
use zonalseg::postprocess::Provenance;
use zonalseg::BinaryMask;

fn disc(cy: f64, cx: f64, r: f64, p: Provenance) -> BinaryMask {
    BinaryMask::from_fn(40, 40, p, |i, j| (i as f64 - cy).powi(2) + (j as f64 - cx).powi(2) <= r * r)
}

fn main() {
    let truth = disc(20.0, 20.0, 10.0, Provenance::Truth);
    for shift in [0.0, 1.0, 3.0, 6.0] {
        let pred = disc(20.0, 20.0 + shift, 9.0, Provenance::Predicted);
        let (avg, max) = avg_max_distance(&pred, &truth).unwrap_or((f64::NAN, f64::NAN));
        println!(
            "shift {shift}: DSC {:.2} SEN {:.2} SPC {:.2} TNR {:.2} AvgD {avg:.2} MaxD {max:.2} HD {:.2}",
            dsc(&pred, &truth),
            sensitivity(&pred, &truth),
            specificity(&pred, &truth),
            tnr(&pred, &truth),
            hausdorff(&pred, &truth).unwrap_or(f64::NAN)
        );
    }
}
