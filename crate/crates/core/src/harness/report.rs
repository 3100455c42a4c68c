use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::metrics::ConditionSummary;
use crate::error::{Error, Result};

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| x.to_string())
}

fn write(path: PathBuf, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Writes the comparison table, per-condition histogram, final-assets and
/// correlation CSVs, `summaries.json` and `report.md` into `out_dir`.
/// Returns the written paths in a fixed order.
pub fn render_report(summaries: &[ConditionSummary], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if summaries.is_empty() {
        return Err(Error::Config("no conditions to report".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();

    let mut table = String::from(
        "strategy_id,episodes,mean,sd,min,q1,median,q3,max,fraction_below_initial,mean_correlation,undefined_correlations,excluded_outliers\n",
    );
    for s in summaries {
        writeln!(
            table,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            s.strategy_id,
            s.episodes,
            s.mean,
            s.sd,
            s.min,
            s.q1,
            s.median,
            s.q3,
            s.max,
            s.fraction_below_initial,
            opt(s.mean_correlation),
            s.undefined_correlations,
            s.excluded_outliers
        )
        .expect("write to string");
    }
    write(out_dir.join("comparison.csv"), &table, &mut written)?;

    for s in summaries {
        let mut hist = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in s.histogram.counts.iter().enumerate() {
            writeln!(hist, "{},{},{}", s.histogram.edges[i], s.histogram.edges[i + 1], c).expect("write to string");
        }
        write(out_dir.join(format!("hist_{}.csv", s.strategy_id)), &hist, &mut written)?;

        let mut finals = String::from("user,replication,final_assets,correlation,outlier\n");
        for e in &s.per_episode {
            writeln!(
                finals,
                "{},{},{},{},{}",
                e.user_index,
                e.replication,
                e.final_assets,
                opt(e.correlation),
                e.outlier
            )
            .expect("write to string");
        }
        write(out_dir.join(format!("episodes_{}.csv", s.strategy_id)), &finals, &mut written)?;
    }

    let json = serde_json::to_string_pretty(summaries)?;
    write(out_dir.join("summaries.json"), &json, &mut written)?;

    let mut md = String::from("# Experiment report\n\n");
    md.push_str("| strategy | n | mean | sd | min | median | max | below 1M | mean r | r undefined |\n");
    md.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
    for s in summaries {
        writeln!(
            md,
            "| {} | {} | {:.0} | {:.0} | {:.0} | {:.0} | {:.0} | {:.3} | {} | {} |",
            s.strategy_id,
            s.episodes,
            s.mean,
            s.sd,
            s.min,
            s.median,
            s.max,
            s.fraction_below_initial,
            s.mean_correlation.map_or_else(|| "undefined".to_string(), |r| format!("{r:.3}")),
            s.undefined_correlations
        )
        .expect("write to string");
    }
    let excluded: usize = summaries.iter().map(|s| s.excluded_outliers).sum();
    if excluded > 0 {
        writeln!(md, "\n{excluded} outlier episode(s) excluded from the statistics.").expect("write to string");
    }
    md.push_str("\nFinal assets in JPY. Per-episode values are in `episodes_<strategy>.csv`, histograms in `hist_<strategy>.csv`.\n");
    write(out_dir.join("report.md"), &md, &mut written)?;
    Ok(written)
}
