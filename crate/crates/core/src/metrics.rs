//! Overlap and boundary-distance metrics, computed per slice and averaged per
//! patient.
//!
//! All overlap metrics are percentages. The functions taking two masks panic
//! if their shapes differ.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::postprocess::BinaryMask;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

fn percent(num: u64, den: u64) -> f64 {
    100.0 * num as f64 / den as f64
}

impl ConfusionCounts {
    /// Counts for segmentation `s` against ground truth `g`.
    pub fn from_masks(s: &BinaryMask, g: &BinaryMask) -> Self {
        assert_eq!(s.dims(), g.dims(), "segmentation and truth shapes differ");
        let mut c = Self::default();
        for (&a, &b) in s.pixels().data().iter().zip(g.pixels().data()) {
            match (a, b) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `2|TP| / (|S| + |G|)`; 100 when both are empty.
    pub fn dsc(&self) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            100.0
        } else {
            percent(2 * self.tp, den)
        }
    }

    /// `|TP| / |G|`; 100 when the truth is empty.
    pub fn sensitivity(&self) -> f64 {
        let den = self.tp + self.fn_;
        if den == 0 {
            100.0
        } else {
            percent(self.tp, den)
        }
    }

    /// `1 - |FP| / |S|`; 100 when the segmentation is empty.
    pub fn specificity(&self) -> f64 {
        let s = self.tp + self.fp;
        if s == 0 {
            100.0
        } else {
            100.0 - percent(self.fp, s)
        }
    }

    /// True-negative rate `|TN| / (|TN| + |FP|)`; 100 when the denominator is 0.
    pub fn tnr(&self) -> f64 {
        let den = self.tn + self.fp;
        if den == 0 {
            100.0
        } else {
            percent(self.tn, den)
        }
    }
}

pub fn dsc(s: &BinaryMask, g: &BinaryMask) -> f64 {
    ConfusionCounts::from_masks(s, g).dsc()
}

pub fn sensitivity(s: &BinaryMask, g: &BinaryMask) -> f64 {
    ConfusionCounts::from_masks(s, g).sensitivity()
}

pub fn specificity(s: &BinaryMask, g: &BinaryMask) -> f64 {
    ConfusionCounts::from_masks(s, g).specificity()
}

pub fn tnr(s: &BinaryMask, g: &BinaryMask) -> f64 {
    ConfusionCounts::from_masks(s, g).tnr()
}

/// Foreground pixels with at least one 4-neighbour in the background; pixels
/// outside the frame count as background.
pub fn boundary(mask: &BinaryMask) -> Vec<(usize, usize)> {
    mask.coords()
        .filter(|&(r, c)| mask.neighbors4(r, c).any(|n| n.is_none_or(|(nr, nc)| !mask.get(nr, nc))))
        .collect()
}

fn nearest(p: (usize, usize), set: &[(usize, usize)]) -> f64 {
    set.iter()
        .map(|&q| {
            let dr = p.0 as f64 - q.0 as f64;
            let dc = p.1 as f64 - q.1 as f64;
            dr * dr + dc * dc
        })
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// Directed boundary distances from `∂S` to `∂G` in pixels: `(mean, max)`.
/// `None` when either boundary is empty.
pub fn avg_max_distance(s: &BinaryMask, g: &BinaryMask) -> Option<(f64, f64)> {
    let bs = boundary(s);
    let bg = boundary(g);
    if bs.is_empty() || bg.is_empty() {
        return None;
    }
    let d: Vec<f64> = bs.iter().map(|&p| nearest(p, &bg)).collect();
    let max = d.iter().copied().fold(0.0, f64::max);
    Some((d.iter().sum::<f64>() / d.len() as f64, max))
}

/// Symmetric Hausdorff distance between the two boundaries.
pub fn hausdorff(s: &BinaryMask, g: &BinaryMask) -> Option<f64> {
    let (_, a) = avg_max_distance(s, g)?;
    let (_, b) = avg_max_distance(g, s)?;
    Some(a.max(b))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Cg,
    Pz,
}

impl Region {
    pub const ALL: [Region; 2] = [Region::Cg, Region::Pz];

    pub fn name(self) -> &'static str {
        match self {
            Region::Cg => "cg",
            Region::Pz => "pz",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Slice,
    Patient,
}

/// One region's metrics. Distances are `None` where undefined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub region: Region,
    pub level: Level,
    pub dsc: f64,
    pub sen: f64,
    pub spc: f64,
    pub avgd: Option<f64>,
    pub maxd: Option<f64>,
}

impl MetricsRecord {
    pub fn slice(region: Region, s: &BinaryMask, g: &BinaryMask) -> Self {
        let c = ConfusionCounts::from_masks(s, g);
        let dist = avg_max_distance(s, g);
        Self {
            region,
            level: Level::Slice,
            dsc: c.dsc(),
            sen: c.sensitivity(),
            spc: c.specificity(),
            avgd: dist.map(|d| d.0),
            maxd: dist.map(|d| d.1),
        }
    }

    /// Converts pixel distances to millimetres.
    pub fn with_spacing(mut self, spacing_mm: f64) -> Self {
        self.avgd = self.avgd.map(|d| d * spacing_mm);
        self.maxd = self.maxd.map(|d| d * spacing_mm);
        self
    }
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Unweighted mean over slices of one region; distances average only the
/// slices where they are defined. `None` (with a warning) for no slices.
pub fn aggregate_patient(slices: &[MetricsRecord]) -> Option<MetricsRecord> {
    let Some(first) = slices.first() else {
        log::warn!("patient has no slices to aggregate");
        return None;
    };
    debug_assert!(slices.iter().all(|s| s.region == first.region));
    let n = slices.len() as f64;
    let avgd = mean_defined(slices.iter().map(|s| s.avgd));
    if avgd.is_none() {
        log::debug!("no slice with defined boundary distances for region {}", first.region.name());
    }
    Some(MetricsRecord {
        region: first.region,
        level: Level::Patient,
        dsc: slices.iter().map(|s| s.dsc).sum::<f64>() / n,
        sen: slices.iter().map(|s| s.sen).sum::<f64>() / n,
        spc: slices.iter().map(|s| s.spc).sum::<f64>() / n,
        avgd,
        maxd: mean_defined(slices.iter().map(|s| s.maxd)),
    })
}

/// CG and PZ slice records for one predicted/true pair of zonal masks.
pub fn zonal_slice_metrics(pred_cg: &BinaryMask, pred_pz: &BinaryMask, cg: &BinaryMask, pz: &BinaryMask) -> [MetricsRecord; 2] {
    [MetricsRecord::slice(Region::Cg, pred_cg, cg), MetricsRecord::slice(Region::Pz, pred_pz, pz)]
}

/// One CSV row: `dataset,condition,fold,patient,region,level,dsc,sen,spc,avgd,maxd`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub dataset: String,
    pub condition: String,
    pub fold: usize,
    pub patient: String,
    pub region: Region,
    pub level: Level,
    pub dsc: f64,
    pub sen: f64,
    pub spc: f64,
    pub avgd: Option<f64>,
    pub maxd: Option<f64>,
}

impl MetricsRow {
    pub fn new(dataset: &str, condition: &str, fold: usize, patient: &str, record: &MetricsRecord) -> Self {
        Self {
            dataset: dataset.to_string(),
            condition: condition.to_string(),
            fold,
            patient: patient.to_string(),
            region: record.region,
            level: record.level,
            dsc: record.dsc,
            sen: record.sen,
            spc: record.spc,
            avgd: record.avgd,
            maxd: record.maxd,
        }
    }
}

pub fn write_metrics_csv<W: Write>(out: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record(["dataset", "condition", "fold", "patient", "region", "level", "dsc", "sen", "spc", "avgd", "maxd"])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_metrics_csv<R: std::io::Read>(input: R) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
