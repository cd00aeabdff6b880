//! Friedman test and Bonferroni-Dunn critical difference on a small score
//! table; writes `cd_example.svg`.
use zonalseg::stats::{cd_svg, compare};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let methods: Vec<String> = ["U-Net", "Enc USE-Net", "Enc-Dec USE-Net"].iter().map(|s| s.to_string()).collect();
    let scores: Vec<Vec<f64>> = (0..12)
        .map(|i| {
            let i = i as f64;
            vec![84.0 + (i * 1.3).sin(), 85.0 + (i * 0.7).cos(), 86.5 + (i * 2.1).sin()]
        })
        .collect();
    let report = compare("cg", &methods, &scores, 0.05, true)?;
    println!("chi2 {:.3}  p {:.4}  CD {:.3}  control {}", report.statistic, report.p_value, report.cd, report.control);
    for ((m, r), s) in methods.iter().zip(&report.mean_ranks).zip(&report.significant) {
        println!("  {m:16} mean rank {r:.2}{}", if *s { "  *" } else { "" });
    }
    std::fs::write("cd_example.svg", cd_svg(&report))?;
    Ok(())
}
