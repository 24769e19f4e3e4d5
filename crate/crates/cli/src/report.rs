//! Aggregates final accuracies from a results directory into a
//! method × attack × attacker-count table.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use lightyear_core::output::write_atomic;

use crate::commands::{CliError, RunSummary, SweepSummary};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub attack: String,
    pub n_malfunctioning: usize,
    /// Final mean test accuracy of each run, in `[0, 1]`.
    pub accuracies: Vec<f64>,
}

impl ReportRow {
    pub fn mean(&self) -> f64 {
        self.accuracies.iter().sum::<f64>() / self.accuracies.len() as f64
    }

    /// Sample standard deviation over runs; zero for a single run.
    pub fn std(&self) -> f64 {
        let n = self.accuracies.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.accuracies.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1) as f64).sqrt()
    }

    /// `"84.7 ± 7.3"`, in percent.
    pub fn formatted(&self) -> String {
        format!("{:.1} ± {:.1}", 100.0 * self.mean(), 100.0 * self.std())
    }
}

fn collect_files(dir: &Path, found: &mut Vec<PathBuf>, problems: &mut Vec<String>) {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) => {
            problems.push(format!("{}: cannot read directory ({e})", dir.display()));
            return;
        }
    };
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    let has_summary = paths
        .iter()
        .any(|p| matches!(p.file_name().and_then(|n| n.to_str()), Some("summary.json" | "sweep_summary.json")));
    for p in paths {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if p.is_dir() {
            collect_files(&p, found, problems);
        } else if name == "summary.json" || name == "sweep_summary.json" {
            found.push(p);
        } else if name == "rounds.csv" && !has_summary {
            problems.push(format!("{}: missing summary.json next to rounds.csv", dir.display()));
        }
    }
}

/// Every run summary under `dir`, with one message per unreadable input.
pub fn load_runs(dir: &Path) -> Result<Vec<RunSummary>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Runtime(format!("{}: not a directory", dir.display())));
    }
    let mut files = Vec::new();
    let mut problems = Vec::new();
    collect_files(dir, &mut files, &mut problems);
    let mut runs = Vec::new();
    for f in &files {
        let text = match fs::read_to_string(f) {
            Ok(t) => t,
            Err(e) => {
                problems.push(format!("{}: {e}", f.display()));
                continue;
            }
        };
        let parsed = if f.file_name().is_some_and(|n| n == "sweep_summary.json") {
            serde_json::from_str::<SweepSummary>(&text).map(|s| s.cells)
        } else {
            serde_json::from_str::<RunSummary>(&text).map(|r| vec![r])
        };
        match parsed {
            Ok(r) => runs.extend(r),
            Err(e) => problems.push(format!("{}: corrupt summary ({e})", f.display())),
        }
    }
    if !problems.is_empty() {
        return Err(CliError::Runtime(problems.join("\n")));
    }
    if runs.is_empty() {
        return Err(CliError::Runtime(format!("no runs found in {}", dir.display())));
    }
    Ok(runs)
}

pub fn build_rows(runs: &[RunSummary]) -> Vec<ReportRow> {
    let mut groups: BTreeMap<(String, String, usize), Vec<f64>> = BTreeMap::new();
    for r in runs {
        let k = r.config.n_malfunctioning;
        let attack = if k == 0 { "none" } else { r.config.attack.kind.as_str() };
        groups
            .entry((r.config.method.as_str().to_string(), attack.to_string(), k))
            .or_default()
            .push(r.final_round.mean_test_acc);
    }
    groups
        .into_iter()
        .map(|((method, attack, n_malfunctioning), accuracies)| ReportRow {
            method,
            attack,
            n_malfunctioning,
            accuracies,
        })
        .collect()
}

pub fn rows_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("method,attack,n_malfunctioning,runs,mean_acc_pct,std_acc_pct,formatted\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{:.1},{:.1},{}\n",
            r.method,
            r.attack,
            r.n_malfunctioning,
            r.accuracies.len(),
            100.0 * r.mean(),
            100.0 * r.std(),
            r.formatted()
        ));
    }
    out
}

pub fn rows_text(rows: &[ReportRow]) -> String {
    let header = ["method", "attack", "k", "runs", "accuracy (%)"];
    let cells: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.method.clone(),
                r.attack.clone(),
                r.n_malfunctioning.to_string(),
                r.accuracies.len().to_string(),
                r.formatted(),
            ]
        })
        .collect();
    let mut width = header.map(|h| h.chars().count());
    for row in &cells {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |fields: Vec<&str>| {
        let padded: Vec<String> = fields
            .iter()
            .zip(width)
            .map(|(f, w)| format!("{f}{}", " ".repeat(w - f.chars().count())))
            .collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    for row in &cells {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

pub fn report(dir: &Path) -> Result<(), CliError> {
    let rows = build_rows(&load_runs(dir)?);
    let csv_path = dir.join("report.csv");
    write_atomic(&csv_path, rows_csv(&rows).as_bytes())
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", csv_path.display())))?;
    print!("{}", rows_text(&rows));
    Ok(())
}
