//! Deterministic serialization of run logs.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{CsvError, Result};
use crate::sim::{RoundLog, SweepCell};

pub const ROUND_COLUMNS: [&str; 11] = [
    "run_id",
    "round",
    "client_id",
    "method",
    "attack_kind",
    "n_malfunctioning",
    "test_acc",
    "val_acc",
    "ece",
    "selected_set",
    "composite_scores",
];

/// Fixed-point rendering with six significant digits.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

/// First 12 hex digits of the SHA-256 of the canonical config JSON, then the seed.
pub fn run_id(cfg: &ExperimentConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    let digest = Sha256::digest(&json);
    let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    format!("{hex}-s{}", cfg.master_seed)
}

fn round_records(run: &str, cfg: &ExperimentConfig, logs: &[RoundLog]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for log in logs {
        for c in &log.clients {
            let selected: Vec<String> = c.selected.iter().map(usize::to_string).collect();
            let scores: Vec<String> = c.scores.iter().map(|(j, s)| format!("{j}={}", format_sig(*s))).collect();
            rows.push(vec![
                run.to_string(),
                log.round.to_string(),
                c.client_id.to_string(),
                cfg.method.as_str().to_string(),
                c.attack.map_or("none", |k| k.as_str()).to_string(),
                cfg.n_malfunctioning.to_string(),
                format_sig(c.test_acc),
                format_sig(c.val_acc),
                format_sig(c.ece),
                selected.join(";"),
                scores.join(";"),
            ]);
        }
    }
    rows
}

fn to_csv(header: &[String], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let wrap = |e: csv::Error| CsvError::Read(e.to_string());
    w.write_record(header).map_err(wrap)?;
    for r in rows {
        w.write_record(r).map_err(wrap)?;
    }
    let bytes = w.into_inner().map_err(|e| CsvError::Read(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn rounds_csv(cfg: &ExperimentConfig, logs: &[RoundLog]) -> Result<String> {
    let header: Vec<String> = ROUND_COLUMNS.iter().map(|s| s.to_string()).collect();
    to_csv(&header, &round_records(&run_id(cfg), cfg, logs))
}

/// All cells in one table, with the cell's grid coordinates prepended.
pub fn sweep_csv(cells: &[SweepCell]) -> Result<String> {
    let key_names: Vec<String> = cells
        .first()
        .map(|c| c.key().iter().map(|(k, _)| k.to_string()).collect())
        .unwrap_or_default();
    let mut header = key_names;
    header.extend(ROUND_COLUMNS.iter().map(|s| s.to_string()));
    let mut rows = Vec::new();
    for cell in cells {
        let prefix: Vec<String> = cell.key().iter().map(|(_, v)| format_sig(*v)).collect();
        for r in round_records(&run_id(&cell.config), &cell.config, &cell.logs) {
            let mut row = prefix.clone();
            row.extend(r);
            rows.push(row);
        }
    }
    to_csv(&header, &rows)
}

/// Writes via a sibling temp file and a rename, so readers never observe a
/// partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp"));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}
