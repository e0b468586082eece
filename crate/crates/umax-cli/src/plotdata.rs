//! The `plotdata` verb: plot-ready CSV time series from a report file.

use crate::solve::ReportFile;

/// Time series of the certificate mean with its tolerance band, the solved Y
/// mean and the mean strategy components. Header only when the report
/// carries no verification block.
pub fn series_csv(report: &ReportFile) -> String {
    let m = report.strategy_mean.first().map_or(0, |v| v.len());
    let mut out = String::new();
    out.push_str("# time series: mean certificate R_t with +-3 SE band, mean Y_t,\n");
    out.push_str("# and cross-path mean strategy components per step\n");
    out.push_str("t,mean_r,se_r,band_lo,band_hi,mean_y");
    for j in 0..m {
        out.push_str(&format!(",strategy_mean_{j}"));
    }
    out.push('\n');
    let Some(verification) = &report.verification else {
        return out;
    };
    let sm = &verification.supermartingale;
    let r0 = sm.mean_r.first().copied().unwrap_or(0.0);
    for (i, &t) in report.times.iter().enumerate() {
        let mean_r = sm.mean_r[i];
        let se_r = sm.se_r[i];
        out.push_str(&format!(
            "{t},{mean_r},{se_r},{},{},{}",
            r0 - 3.0 * se_r,
            r0 + 3.0 * se_r,
            report.mean_y[i]
        ));
        for j in 0..m {
            // strategies live on steps; repeat the last step at the terminal time
            let row = report.strategy_mean.get(i).or(report.strategy_mean.last());
            out.push_str(&format!(",{}", row.map_or(f64::NAN, |r| r[j])));
        }
        out.push('\n');
    }
    out
}

pub fn run_plotdata(report_path: &std::path::Path, out_dir: &std::path::Path) -> Result<std::path::PathBuf, String> {
    let text = std::fs::read_to_string(report_path)
        .map_err(|e| format!("cannot read report {}: {e}", report_path.display()))?;
    let report: ReportFile =
        serde_json::from_str(&text).map_err(|e| format!("malformed report: {e}"))?;
    std::fs::create_dir_all(out_dir).map_err(|e| e.to_string())?;
    let out_path = out_dir.join(format!("{}_plot.csv", report.config.output.prefix));
    std::fs::write(&out_path, series_csv(&report)).map_err(|e| e.to_string())?;
    Ok(out_path)
}
