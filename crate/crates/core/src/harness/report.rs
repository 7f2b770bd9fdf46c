use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::sweep::{CellReport, RunReport};
use crate::error::Result;

pub const CSV_HEADER: &str = "model,fraction,depth,seed,acc161,mean_km,median_km,seconds";

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_row(c: &CellReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        c.key.model,
        c.key.fraction,
        c.key.depth,
        c.key.seed,
        opt(c.dev.map(|m| m.acc161)),
        opt(c.dev.map(|m| m.mean_km)),
        opt(c.dev.map(|m| m.median_km)),
        opt(c.seconds),
    )
}

/// Long-format CSV of dev metrics, one row per cell. Failed cells keep
/// their key columns with empty metrics.
pub fn write_csv<W: Write>(report: &RunReport, mut out: W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for c in &report.cells {
        writeln!(out, "{}", csv_row(c))?;
    }
    Ok(())
}

pub fn write_json<W: Write>(report: &RunReport, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, report)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Writes `report.json` and `report.csv` into `dir`, returning both paths.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let json_path = dir.join("report.json");
    let csv_path = dir.join("report.csv");
    let mut json = Vec::new();
    write_json(report, &mut json)?;
    fs::write(&json_path, json)?;
    let mut csv = Vec::new();
    write_csv(report, &mut csv)?;
    fs::write(&csv_path, csv)?;
    Ok((json_path, csv_path))
}
