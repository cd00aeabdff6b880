use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{Condition, ConditionResult, Failure};
use crate::architectures::Variant;
use crate::error::Result;
use crate::metrics::{MetricsRow, Region};
use crate::stats::{compare, xml_escape, ComparisonReport};

/// Mean and sample standard deviation across rounds; `None` when no round
/// has a defined value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub sd: f64,
    pub rounds: usize,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Self {
            mean,
            sd,
            rounds: values.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub region: Region,
    /// Per-round mean DSC over that round's test patients, by fold.
    pub round_dsc: Vec<f64>,
    pub dsc: Option<MetricSummary>,
    pub sen: Option<MetricSummary>,
    pub spc: Option<MetricSummary>,
    pub avgd: Option<MetricSummary>,
    pub maxd: Option<MetricSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub method: Variant,
    pub id: String,
    pub spoke: usize,
    pub label: String,
    pub regions: Vec<RegionSummary>,
}

impl ConditionSummary {
    pub fn region(&self, region: Region) -> Option<&RegionSummary> {
        self.regions.iter().find(|r| r.region == region)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub methods: Vec<Variant>,
    pub conditions: Vec<Condition>,
    pub cells: Vec<ConditionSummary>,
    pub stats: Vec<ComparisonReport>,
    pub failures: Vec<Failure>,
}

impl Summary {
    pub fn cell(&self, method: Variant, spoke: usize) -> Option<&ConditionSummary> {
        self.cells.iter().find(|c| c.method == method && c.spoke == spoke)
    }
}

fn round_means(rows: &[&MetricsRow], get: impl Fn(&MetricsRow) -> Option<f64>) -> Vec<f64> {
    let mut by_fold: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in rows {
        if let Some(v) = get(r) {
            let e = by_fold.entry(r.fold).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    by_fold.values().map(|&(s, n)| s / n as f64).collect()
}

fn region_summary(rows: &[MetricsRow], region: Region) -> RegionSummary {
    let rows: Vec<&MetricsRow> = rows.iter().filter(|r| r.region == region).collect();
    let round_dsc = round_means(&rows, |r| Some(r.dsc));
    RegionSummary {
        region,
        dsc: MetricSummary::of(&round_dsc),
        sen: MetricSummary::of(&round_means(&rows, |r| Some(r.sen))),
        spc: MetricSummary::of(&round_means(&rows, |r| Some(r.spc))),
        avgd: MetricSummary::of(&round_means(&rows, |r| r.avgd)),
        maxd: MetricSummary::of(&round_means(&rows, |r| r.maxd)),
        round_dsc,
    }
}

/// Per-cell tables plus Friedman / Bonferroni-Dunn comparisons over rounds.
///
/// Blocks are (condition, round) pairs; `three-dataset` uses the last three
/// spokes, `all-conditions` all 21. Comparisons need at least two methods and
/// every block present for each of them.
pub fn summarize(methods: &[Variant], conditions: &[Condition], results: &[ConditionResult], failures: &[Failure]) -> Result<Summary> {
    let cells: Vec<ConditionSummary> = results
        .iter()
        .map(|r| ConditionSummary {
            method: r.method,
            id: r.condition.id(),
            spoke: r.condition.spoke,
            label: r.condition.label(),
            regions: Region::ALL.iter().map(|&g| region_summary(&r.rows, g)).collect(),
        })
        .collect();
    let mut summary = Summary {
        methods: methods.to_vec(),
        conditions: conditions.to_vec(),
        cells,
        stats: Vec::new(),
        failures: failures.to_vec(),
    };
    if methods.len() < 2 {
        return Ok(summary);
    }
    let names: Vec<String> = methods.iter().map(|m| m.name().to_string()).collect();
    let n_spokes = conditions.len();
    for region in Region::ALL {
        for (label, spokes) in [("three-dataset", n_spokes.saturating_sub(2)..=n_spokes), ("all-conditions", 1..=n_spokes)] {
            if let Some(scores) = block_matrix(&summary, methods, spokes, region) {
                summary.stats.push(compare(&format!("{}/{label}", region.name()), &names, &scores, 0.05, true)?);
            }
        }
    }
    Ok(summary)
}

fn block_matrix(summary: &Summary, methods: &[Variant], spokes: std::ops::RangeInclusive<usize>, region: Region) -> Option<Vec<Vec<f64>>> {
    let mut blocks = Vec::new();
    for spoke in spokes {
        let per_method: Vec<&Vec<f64>> = methods
            .iter()
            .map(|&m| summary.cell(m, spoke).and_then(|c| c.region(region)).map(|r| &r.round_dsc))
            .collect::<Option<_>>()?;
        let rounds = per_method[0].len();
        if rounds == 0 || per_method.iter().any(|v| v.len() != rounds) {
            return None;
        }
        for round in 0..rounds {
            blocks.push(per_method.iter().map(|v| v[round]).collect());
        }
    }
    (blocks.len() >= 2).then_some(blocks)
}

/// Radar chart of mean DSC per spoke, one polygon per method.
pub fn kiviat_svg(summary: &Summary, region: Region) -> String {
    const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
    let (size, radius) = (520.0, 200.0);
    let c = size / 2.0;
    let n = summary.conditions.len().max(1);
    let point = |spoke: usize, value: f64| {
        let a = std::f64::consts::TAU * (spoke - 1) as f64 / n as f64 - std::f64::consts::FRAC_PI_2;
        let r = radius * value.clamp(0.0, 100.0) / 100.0;
        (c + r * a.cos(), c + r * a.sin())
    };
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{}" font-family="sans-serif" font-size="11">"#, size + 20.0 * summary.methods.len() as f64);
    let _ = writeln!(s, r#"<text x="10" y="16">DSC {}</text>"#, region.name().to_uppercase());
    for ring in [25.0, 50.0, 75.0, 100.0] {
        let _ = writeln!(s, r##"<circle cx="{c}" cy="{c}" r="{}" fill="none" stroke="#ccc"/>"##, radius * ring / 100.0);
    }
    for cond in &summary.conditions {
        let (x, y) = point(cond.spoke, 100.0);
        let (lx, ly) = point(cond.spoke, 112.0);
        let _ = writeln!(s, r##"<line x1="{c}" y1="{c}" x2="{x:.2}" y2="{y:.2}" stroke="#ccc"/><text x="{lx:.2}" y="{ly:.2}" text-anchor="middle">{}</text>"##, cond.id());
    }
    for (i, &m) in summary.methods.iter().enumerate() {
        let colour = COLOURS[i % COLOURS.len()];
        let pts: Vec<String> = summary
            .conditions
            .iter()
            .filter_map(|cond| {
                let v = summary.cell(m, cond.spoke)?.region(region)?.dsc?.mean;
                let (x, y) = point(cond.spoke, v);
                Some(format!("{x:.2},{y:.2}"))
            })
            .collect();
        let _ = writeln!(s, r#"<polygon points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#, pts.join(" "));
        let _ = writeln!(s, r#"<text x="10" y="{}" fill="{colour}">{}</text>"#, size + 14.0 + 20.0 * i as f64, xml_escape(m.name()));
    }
    s.push_str("</svg>\n");
    s
}
