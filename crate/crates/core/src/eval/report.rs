//! Report files: JSON, a summary table, PR-curve CSVs and a confusion grid.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::bench::REFERENCE_LATENCY_S;
use super::{EvalError, EvalReport, Result};

/// Published reference row: mAP, min AP, max AP.
pub const REFERENCE_MAP: (f64, f64, f64) = (0.876, 0.75, 0.96);

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.digits$}"))
}

/// Summary table in the layout of the published comparison, followed by
/// per-class APs and per-fold results. `min`/`max` are the lowest and
/// highest per-class AP.
pub fn format_table(report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<28} {:>7} {:>7} {:>7} {:>10}", "method", "mAP", "min", "max", "time (s)");
    let (m, lo, hi) = REFERENCE_MAP;
    let _ = writeln!(
        s,
        "{:<28} {:>7.3} {:>7.3} {:>7.3} {:>10.3}",
        "published reference", m, lo, hi, REFERENCE_LATENCY_S
    );
    let _ = writeln!(
        s,
        "{:<28} {:>7.3} {:>7.3} {:>7.3} {:>10}",
        "this run",
        report.map_value,
        report.min_ap,
        report.max_ap,
        fmt_opt(report.mean_latency_s, 4)
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<28} {:>7} {:>6} {:>6}", "class", "AP", "gt", "dets");
    for c in &report.per_class {
        let _ = writeln!(
            s,
            "{:<28} {:>7} {:>6} {:>6}",
            c.class_name,
            fmt_opt(c.ap, 3),
            c.gt_count,
            c.detection_count
        );
    }
    if !report.folds.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<6} {:<16} {:>7} {:>10}", "fold", "held out", "mAP", "seed");
        for f in &report.folds {
            let _ = writeln!(
                s,
                "{:<6} {:<16} {:>7} {:>10}",
                f.fold,
                f.held_out_video,
                fmt_opt(f.map_value, 3),
                f.seed
            );
        }
    }
    let _ = writeln!(
        s,
        "\nframes evaluated: {}, IoU match threshold: {}, median latency: {} s",
        report.frames_evaluated,
        report.iou_match_threshold,
        fmt_opt(report.median_latency_s, 4)
    );
    s
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

fn write(path: PathBuf, contents: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, contents).map_err(|e| EvalError::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Writes `report.json`, `table.txt`, `confusion.csv` and one
/// `pr_<index>_<class>.csv` per class into `out_dir`.
pub fn emit_report(report: &EvalReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| EvalError::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut json = serde_json::to_string_pretty(report).map_err(|e| EvalError::Json(e.to_string()))?;
    json.push('\n');
    write(out_dir.join("report.json"), &json, &mut written)?;
    write(out_dir.join("table.txt"), &format_table(report), &mut written)?;

    let mut grid = String::from("true\\pred");
    for name in report.class_names.iter().map(String::as_str).chain(["background"]) {
        let _ = write!(grid, ",{name}");
    }
    grid.push('\n');
    for (i, row) in report.confusion.iter().enumerate() {
        grid.push_str(report.class_names.get(i).map_or("background", String::as_str));
        for v in row {
            let _ = write!(grid, ",{v}");
        }
        grid.push('\n');
    }
    write(out_dir.join("confusion.csv"), &grid, &mut written)?;

    for (k, (name, curve)) in report.class_names.iter().zip(&report.pr_curves).enumerate() {
        let mut csv = String::from("recall,precision,score\n");
        for p in curve {
            let score = p.score.map_or(String::new(), |s| s.to_string());
            let _ = writeln!(csv, "{},{},{}", p.recall, p.precision, score);
        }
        write(out_dir.join(format!("pr_{k:02}_{}.csv", file_stem(name))), &csv, &mut written)?;
    }
    Ok(written)
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| EvalError::Json(e.to_string()))
}
