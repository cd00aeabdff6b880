//! Friedman omnibus test and Bonferroni-Dunn post hoc comparison with
//! critical-difference (CD) data.
//!
//! Score matrices are `N` blocks × `k` methods; a higher score is better and
//! gets rank 1.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};

/// Average ranks of one block, best (highest) score first.
pub fn rank_block(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub ranks: Vec<Vec<f64>>,
    pub mean_ranks: Vec<f64>,
}

fn check_matrix(scores: &[Vec<f64>]) -> Result<(usize, usize)> {
    let n = scores.len();
    let k = scores.first().map_or(0, Vec::len);
    if n < 2 || k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 blocks and 2 methods, got {n}x{k}")));
    }
    if scores.iter().any(|row| row.len() != k) {
        return Err(Error::InvalidArgument("score rows differ in length".into()));
    }
    if scores.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("score matrix".into()));
    }
    Ok((n, k))
}

impl RankTable {
    pub fn new(scores: &[Vec<f64>]) -> Result<Self> {
        let (n, k) = check_matrix(scores)?;
        let ranks: Vec<Vec<f64>> = scores.iter().map(|row| rank_block(row)).collect();
        let mean_ranks = (0..k).map(|j| ranks.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        Ok(Self { ranks, mean_ranks })
    }

    /// Method with the best (lowest) mean rank; first wins ties.
    pub fn best(&self) -> usize {
        let mut best = 0;
        for (j, &r) in self.mean_ranks.iter().enumerate() {
            if r < self.mean_ranks[best] {
                best = j;
            }
        }
        best
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    pub n: usize,
    pub k: usize,
    pub statistic: f64,
    /// Chi-square upper tail with `k - 1` degrees of freedom.
    pub p_value: f64,
    pub mean_ranks: Vec<f64>,
}

/// Friedman chi-square statistic with average ranks on ties.
pub fn friedman(scores: &[Vec<f64>]) -> Result<FriedmanResult> {
    let table = RankTable::new(scores)?;
    let (n, k) = (scores.len() as f64, table.mean_ranks.len() as f64);
    // Rank sums are multiples of 1/2, so this numerator is exact.
    let sum_sq: f64 = table.mean_ranks.iter().map(|r| (r * n).powi(2)).sum();
    let num = 12.0 * sum_sq - 3.0 * n * n * k * (k + 1.0).powi(2);
    let statistic = (num / (n * k * (k + 1.0))).max(0.0);
    let chi = ChiSquared::new(k - 1.0).expect("k >= 2");
    Ok(FriedmanResult {
        n: scores.len(),
        k: table.mean_ranks.len(),
        statistic,
        p_value: if statistic == 0.0 { 1.0 } else { chi.sf(statistic) },
        mean_ranks: table.mean_ranks,
    })
}

/// Iman-Davenport F refinement: `(statistic, p)` with `(k-1, (k-1)(N-1))`
/// degrees of freedom.
pub fn iman_davenport(result: &FriedmanResult) -> (f64, f64) {
    let (n, k, chi) = (result.n as f64, result.k as f64, result.statistic);
    let den = n * (k - 1.0) - chi;
    if den <= 0.0 {
        return (f64::INFINITY, 0.0);
    }
    let f = (n - 1.0) * chi / den;
    let dist = FisherSnedecor::new(k - 1.0, (k - 1.0) * (n - 1.0)).expect("positive degrees of freedom");
    (f, if f == 0.0 { 1.0 } else { dist.sf(f) })
}

const Q_05: [f64; 9] = [1.960, 2.241, 2.394, 2.498, 2.576, 2.638, 2.690, 2.734, 2.773];
const Q_10: [f64; 9] = [1.645, 1.960, 2.128, 2.241, 2.326, 2.394, 2.450, 2.498, 2.539];

/// Two-tailed Bonferroni-Dunn critical value for `k` methods (`k - 1`
/// comparisons against a control). Tabulated for `k` in 2..=10 and
/// `alpha` in {0.05, 0.10}.
pub fn bonferroni_dunn_q(k: usize, alpha: f64) -> Result<f64> {
    let table = if (alpha - 0.05).abs() < 1e-12 {
        &Q_05
    } else if (alpha - 0.10).abs() < 1e-12 {
        &Q_10
    } else {
        return Err(Error::Unsupported(format!("alpha {alpha}; supported values are 0.05 and 0.10")));
    };
    if !(2..=10).contains(&k) {
        return Err(Error::Unsupported(format!("{k} methods; supported range is 2..=10")));
    }
    Ok(table[k - 2])
}

/// `CD = q·√(k(k+1) / (6N))`.
pub fn critical_difference(k: usize, n: usize, alpha: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("N must be positive".into()));
    }
    let q = bonferroni_dunn_q(k, alpha)?;
    Ok(q * ((k * (k + 1)) as f64 / (6.0 * n as f64)).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BonferroniDunn {
    pub alpha: f64,
    pub q: f64,
    pub cd: f64,
    pub control: usize,
    pub mean_ranks: Vec<f64>,
    /// `|R̄ⱼ − R̄_control| > CD`; always false for the control itself.
    pub significant: Vec<bool>,
}

pub fn bonferroni_dunn(scores: &[Vec<f64>], control: usize, alpha: f64) -> Result<BonferroniDunn> {
    let table = RankTable::new(scores)?;
    let k = table.mean_ranks.len();
    if control >= k {
        return Err(Error::InvalidArgument(format!("control {control} out of range for {k} methods")));
    }
    let q = bonferroni_dunn_q(k, alpha)?;
    let cd = critical_difference(k, scores.len(), alpha)?;
    let rc = table.mean_ranks[control];
    let significant = table.mean_ranks.iter().map(|&r| (r - rc).abs() > cd).collect();
    Ok(BonferroniDunn {
        alpha,
        q,
        cd,
        control,
        mean_ranks: table.mean_ranks,
        significant,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub label: String,
    pub methods: Vec<String>,
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub iman_davenport: Option<(f64, f64)>,
    pub mean_ranks: Vec<f64>,
    pub cd: f64,
    pub control: String,
    pub significant: Vec<bool>,
}

/// Friedman plus Bonferroni-Dunn against the best-ranked method.
pub fn compare(label: &str, methods: &[String], scores: &[Vec<f64>], alpha: f64, with_f: bool) -> Result<ComparisonReport> {
    if scores.first().is_some_and(|r| r.len() != methods.len()) {
        return Err(Error::InvalidArgument("method names do not match score columns".into()));
    }
    let fr = friedman(scores)?;
    let control = RankTable::new(scores)?.best();
    let bd = bonferroni_dunn(scores, control, alpha)?;
    Ok(ComparisonReport {
        label: label.to_string(),
        methods: methods.to_vec(),
        n: fr.n,
        statistic: fr.statistic,
        p_value: fr.p_value,
        iman_davenport: with_f.then(|| iman_davenport(&fr)),
        mean_ranks: fr.mean_ranks,
        cd: bd.cd,
        control: methods[control].clone(),
        significant: bd.significant,
    })
}

/// Critical-difference diagram: a rank axis, one tick per method and a CD
/// bar anchored at the control.
pub fn cd_svg(report: &ComparisonReport) -> String {
    use std::fmt::Write;
    let k = report.methods.len();
    let (width, margin) = (600.0, 50.0);
    let x = |rank: f64| margin + (rank - 1.0) / (k.max(2) - 1) as f64 * (width - 2.0 * margin);
    let height = 110.0 + 22.0 * k as f64;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<text x="{margin}" y="16">{} (p = {:.3e})</text>"#, xml_escape(&report.label), report.p_value);
    let _ = writeln!(s, r#"<line x1="{}" y1="50" x2="{}" y2="50" stroke="black"/>"#, x(1.0), x(k as f64));
    for r in 1..=k {
        let _ = writeln!(s, r#"<line x1="{0}" y1="45" x2="{0}" y2="55" stroke="black"/><text x="{0}" y="40" text-anchor="middle">{r}</text>"#, x(r as f64));
    }
    let ctrl = report.mean_ranks[report.methods.iter().position(|m| *m == report.control).unwrap_or(0)];
    let _ = writeln!(
        s,
        r#"<line x1="{}" y1="28" x2="{}" y2="28" stroke="red" stroke-width="3"/><text x="{}" y="24" fill="red">CD = {:.3}</text>"#,
        x(ctrl),
        x((ctrl + report.cd).min(k as f64)),
        x(ctrl),
        report.cd
    );
    for (i, (m, &r)) in report.methods.iter().zip(&report.mean_ranks).enumerate() {
        let y = 80.0 + 22.0 * i as f64;
        let colour = if report.significant[i] { "black" } else { "grey" };
        let _ = writeln!(
            s,
            r#"<line x1="{0}" y1="50" x2="{0}" y2="{y}" stroke="{colour}"/><text x="{1}" y="{2}" fill="{colour}">{3} ({r:.2})</text>"#,
            x(r),
            x(r) + 4.0,
            y + 4.0,
            xml_escape(m)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub(crate) fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_with_ties() {
        assert_eq!(rank_block(&[3.0, 1.0, 2.0]), vec![1.0, 3.0, 2.0]);
        assert_eq!(rank_block(&[5.0, 5.0, 1.0, 5.0]), vec![2.0, 2.0, 4.0, 2.0]);
    }

    #[test]
    fn tied_data_gives_zero() {
        let s = vec![vec![0.7; 4]; 6];
        let r = friedman(&s).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn cd_k5_n12() {
        let cd = critical_difference(5, 12, 0.05).unwrap();
        assert!((cd - 2.498 * (30.0f64 / 72.0).sqrt()).abs() < 1e-12);
        assert!(critical_difference(11, 12, 0.05).is_err());
        assert!(critical_difference(3, 12, 0.01).is_err());
    }

    #[test]
    fn identical_ranks_never_significant() {
        let s = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        let bd = bonferroni_dunn(&s, 0, 0.05).unwrap();
        assert_eq!(bd.significant, vec![false, false]);
    }
}
