use std::fs;
use std::path::{Path, PathBuf};

use lightyear_core::config::{parse_config, ExperimentConfig};
use lightyear_core::error::ConfigError;
use lightyear_core::exec::{with_workers, Execution};
use lightyear_core::output::{rounds_csv, run_id, sweep_csv, write_atomic};
use lightyear_core::sim::{
    attacker_order, attacker_sweep, gamma_ablation, run_experiment, sensitivity_sweep, std_dev, RoundLog, SweepAxis,
};
use lightyear_core::Error;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SEED_ENV: &str = "LIGHTYEAR_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(c) => CliError::Config(c.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRound {
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
    pub mean_val_acc: f64,
    pub std_val_acc: f64,
}

impl FinalRound {
    fn of(logs: &[RoundLog]) -> Option<Self> {
        let last = logs.last()?;
        Some(Self {
            mean_test_acc: last.mean_test_acc(),
            std_test_acc: std_dev(&last.test_accs()),
            mean_val_acc: last.mean_val_acc(),
            std_val_acc: std_dev(&last.val_accs()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub config_path: PathBuf,
    pub output_dir: PathBuf,
    pub started: String,
    pub finished: String,
    pub attackers: Vec<usize>,
    pub final_round: FinalRound,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub axis: SweepAxis,
    pub config_path: PathBuf,
    pub started: String,
    pub finished: String,
    pub cells: Vec<RunSummary>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Parses the config and applies the seed override from the environment.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    if !path.is_file() {
        return Err(CliError::Config(format!("config file not found: {}", path.display())));
    }
    let mut cfg = parse_config(path)?;
    if let Ok(raw) = std::env::var(SEED_ENV) {
        cfg.master_seed = raw.trim().parse().map_err(|_| {
            CliError::Config(ConfigError::Invalid {
                key: SEED_ENV.into(),
                message: format!("expected an unsigned integer, got {raw:?}"),
            }
            .to_string())
        })?;
    }
    Ok(cfg)
}

fn execute<R: Send>(workers: Option<usize>, f: impl FnOnce(Execution) -> lightyear_core::Result<R> + Send) -> Result<R, CliError> {
    match workers {
        Some(0) => Err(CliError::Config("--workers must be at least 1".into())),
        Some(n) => Ok(with_workers(n, || f(Execution::Parallel))??),
        None => Ok(f(Execution::Parallel)?),
    }
}

/// Writes `files` into `dir`; on any failure removes whatever this call wrote.
fn write_outputs(dir: &Path, files: &[(&str, Vec<u8>)]) -> Result<(), CliError> {
    let created_dir = !dir.exists();
    let fail = |written: &[PathBuf], e: std::io::Error, path: &Path| {
        for p in written {
            let _ = fs::remove_file(p);
        }
        if created_dir {
            let _ = fs::remove_dir_all(dir);
        }
        CliError::Runtime(format!("cannot write {}: {e}", path.display()))
    };
    fs::create_dir_all(dir).map_err(|e| fail(&[], e, dir))?;
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        write_atomic(&path, bytes).map_err(|e| fail(&written, e, &path))?;
        written.push(path);
    }
    Ok(())
}

fn summary_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("summary serializes");
    bytes.push(b'\n');
    bytes
}

pub fn run(config: &Path, out: &Path, workers: Option<usize>) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let started = now();
    let logs = execute(workers, |exec| run_experiment(&cfg, exec))?;
    let csv = rounds_csv(&cfg, &logs)?;
    let mut attackers = attacker_order(cfg.master_seed, cfg.n_clients)[..cfg.n_malfunctioning].to_vec();
    attackers.sort_unstable();
    let summary = RunSummary {
        run_id: run_id(&cfg),
        config_path: config.to_path_buf(),
        output_dir: out.to_path_buf(),
        started,
        finished: now(),
        attackers,
        final_round: FinalRound::of(&logs).expect("rounds >= 1"),
        config: cfg,
    };
    write_outputs(out, &[("rounds.csv", csv.into_bytes()), ("summary.json", summary_json(&summary))])?;
    println!(
        "{}: {} rounds, final mean test accuracy {:.4} -> {}",
        summary.run_id,
        summary.config.rounds,
        summary.final_round.mean_test_acc,
        out.display()
    );
    Ok(())
}

pub fn sweep(config: &Path, axis: SweepAxis, out: &Path, workers: Option<usize>) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let started = now();
    let cells = execute(workers, |exec| match axis {
        SweepAxis::Attackers => {
            let max = cfg.sweep.max_attackers.unwrap_or(cfg.n_clients - 1);
            attacker_sweep(&cfg, max, exec)
        }
        SweepAxis::Sensitivity => sensitivity_sweep(&cfg, &cfg.sweep.s_values, &cfg.sweep.attacker_counts, exec),
        SweepAxis::Gamma => gamma_ablation(&cfg, &cfg.sweep.gamma_values, exec),
    })?;
    let csv = sweep_csv(&cells)?;
    let finished = now();
    let summaries = cells
        .iter()
        .map(|cell| {
            let mut attackers =
                attacker_order(cell.config.master_seed, cell.config.n_clients)[..cell.config.n_malfunctioning].to_vec();
            attackers.sort_unstable();
            RunSummary {
                run_id: run_id(&cell.config),
                config_path: config.to_path_buf(),
                output_dir: out.to_path_buf(),
                started: started.clone(),
                finished: finished.clone(),
                attackers,
                final_round: FinalRound::of(&cell.logs).expect("rounds >= 1"),
                config: cell.config.clone(),
            }
        })
        .collect();
    let summary = SweepSummary {
        axis,
        config_path: config.to_path_buf(),
        started,
        finished,
        cells: summaries,
    };
    let name = format!("sweep_{}.csv", axis.as_str());
    write_outputs(out, &[(&name, csv.into_bytes()), ("sweep_summary.json", summary_json(&summary))])?;
    println!("{} sweep: {} cells -> {}", axis.as_str(), cells.len(), out.join(&name).display());
    Ok(())
}
