//! Experiment configuration: types, defaults, strict TOML parsing and validation.
//!
//! Defaults follow the reference training setup: `rounds = 12`, SGD with
//! `learning_rate = 1e-3`, `momentum = 0.9`, `weight_decay = 5e-4`,
//! `batch_size = 32`, one local epoch; `gamma = 0.95`, `tau = 0.75`.
//!
//! ```toml
//! seed = 7
//! n_clients = 8
//! method = "lightyear"          # lightyear | fedavg | krum | balance | scclip
//! topology = "p2p_full"         # p2p_full | star
//! rounds = 12
//! n_malfunctioning = 2
//!
//! [attack]
//! kind = "sfa"                  # none | ana | sfa | random_weights | dynamic
//!
//! [optimizer]
//! learning_rate = 0.05
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agreement::{AccMode, AgreementConfig};
use crate::aggregate::{BaselineConfig, LightyearConfig};
use crate::attacks::{AnaForm, AttackKind, AttackSpec};
use crate::data::{PartitionConfig, PartitionStrategy, SplitFractions};
use crate::error::{ConfigError, Error, Result};
use crate::nn::{Activation, ModelSpec, OptimizerHyper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    /// Every client receives every other client's broadcast.
    #[default]
    P2pFull,
    /// A virtual server aggregates all broadcasts and returns one global model.
    Star,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Lightyear,
    Fedavg,
    Krum,
    Balance,
    Scclip,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Lightyear => "lightyear",
            Method::Fedavg => "fedavg",
            Method::Krum => "krum",
            Method::Balance => "balance",
            Method::Scclip => "scclip",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub n_classes: usize,
    pub n_features: usize,
    pub class_sep: f64,
    pub strategy: PartitionStrategy,
    pub dirichlet_alpha: f64,
    pub group_rotation_deg: f64,
    pub group_shift: f64,
    pub samples_per_client: usize,
    pub split: SplitFractions,
}

impl Default for DataConfig {
    fn default() -> Self {
        let p = PartitionConfig::default();
        Self {
            n_classes: 10,
            n_features: 10,
            class_sep: 3.5,
            strategy: p.strategy,
            dirichlet_alpha: p.dirichlet_alpha,
            group_rotation_deg: p.group_rotation_deg,
            group_shift: p.group_shift,
            samples_per_client: 400,
            split: p.split_fractions,
        }
    }
}

impl DataConfig {
    pub fn partition_config(&self, n_clients: usize) -> PartitionConfig {
        PartitionConfig {
            n_clients,
            strategy: self.strategy,
            dirichlet_alpha: self.dirichlet_alpha,
            group_rotation_deg: self.group_rotation_deg,
            group_shift: self.group_shift,
            samples_per_client: self.samples_per_client,
            split_fractions: self.split,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            activation: Activation::Relu,
        }
    }
}

/// Axis values for the sweep presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Defaults to `n_clients - 1`.
    pub max_attackers: Option<usize>,
    pub s_values: Vec<f64>,
    pub attacker_counts: Vec<usize>,
    pub gamma_values: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            max_attackers: None,
            s_values: vec![0.0, 50.0, 120.5],
            attacker_counts: vec![1, 3],
            gamma_values: vec![1.0, 0.95],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub n_clients: usize,
    pub topology: TopologyKind,
    pub method: Method,
    pub rounds: u32,
    pub n_malfunctioning: usize,
    pub attack: AttackSpec,
    pub agreement: AgreementConfig,
    pub lightyear: LightyearConfig,
    pub baseline: BaselineConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub optimizer: OptimizerHyper,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            n_clients: 8,
            topology: TopologyKind::P2pFull,
            method: Method::Lightyear,
            rounds: 12,
            n_malfunctioning: 0,
            attack: AttackSpec::default(),
            agreement: AgreementConfig::default(),
            lightyear: LightyearConfig::default(),
            baseline: BaselineConfig::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            optimizer: OptimizerHyper::default(),
            sweep: SweepConfig::default(),
        }
    }
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn model_spec(&self) -> Result<Arc<ModelSpec>> {
        let mut sizes = vec![self.data.n_features];
        sizes.extend(&self.model.hidden);
        sizes.push(self.data.n_classes);
        Ok(Arc::new(ModelSpec::new(sizes, self.model.activation)?))
    }

    /// Checks every cross-field invariant; the simulator never fails on
    /// configuration once this passes.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_clients < 2 {
            return Err(invalid("n_clients", "n_clients ≥ 2"));
        }
        if self.n_malfunctioning >= self.n_clients {
            return Err(invalid("n_malfunctioning", "n_malfunctioning < n_clients"));
        }
        if self.rounds == 0 {
            return Err(invalid("rounds", "rounds ≥ 1"));
        }
        let g = self.lightyear.gamma;
        if !(g > 0.0 && g <= 1.0) {
            return Err(invalid("lightyear.gamma", format!("gamma ∈ (0,1], got {g}")));
        }
        if self.lightyear.round_index_base > 1 {
            return Err(invalid("lightyear.round_index_base", "round_index_base ≤ 1 (rounds start at 1)"));
        }
        if !self.agreement.tau.is_finite() {
            return Err(invalid("agreement.tau", "tau must be finite"));
        }
        if self.agreement.ece_bins == 0 {
            return Err(invalid("agreement.ece_bins", "ece_bins ≥ 1"));
        }
        if self.method == Method::Lightyear && self.topology == TopologyKind::Star {
            return Err(invalid("method", "lightyear needs the p2p_full topology (the server has no validation data)"));
        }
        if self.method == Method::Krum && self.n_clients < self.baseline.krum_f + 3 {
            return Err(invalid("baseline.krum_f", "krum_f ≤ n_clients − 3"));
        }
        if !(self.baseline.balance_gamma > 0.0) {
            return Err(invalid("baseline.balance_gamma", "balance_gamma > 0"));
        }
        if !(self.baseline.balance_kappa >= 0.0) {
            return Err(invalid("baseline.balance_kappa", "balance_kappa ≥ 0"));
        }
        if let Some(r) = self.baseline.scclip_radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(invalid("baseline.scclip_radius", "scclip_radius > 0"));
            }
        }
        self.attack.validate().map_err(|e| invalid("attack", e.to_string()))?;
        let d = &self.data;
        if d.n_classes < 2 {
            return Err(invalid("data.n_classes", "n_classes ≥ 2"));
        }
        if d.n_features < 2 {
            return Err(invalid("data.n_features", "n_features ≥ 2"));
        }
        if !d.class_sep.is_finite() {
            return Err(invalid("data.class_sep", "class_sep must be finite"));
        }
        if d.strategy == PartitionStrategy::DirichletLabelSkew && !(d.dirichlet_alpha > 0.0) {
            return Err(invalid("data.dirichlet_alpha", "dirichlet_alpha > 0"));
        }
        if !(d.group_rotation_deg.is_finite() && d.group_shift.is_finite()) {
            return Err(invalid("data.group_rotation_deg", "group transform must be finite"));
        }
        if d.samples_per_client < d.n_classes.max(10) {
            return Err(invalid("data.samples_per_client", "samples_per_client ≥ max(n_classes, 10)"));
        }
        d.split.validate().map_err(|e| invalid("data.split", e.to_string()))?;
        if self.model.hidden.contains(&0) {
            return Err(invalid("model.hidden", "hidden sizes must be positive"));
        }
        self.optimizer.validate().map_err(|e| invalid("optimizer", e.to_string()))?;
        if let Some(m) = self.sweep.max_attackers {
            if m >= self.n_clients {
                return Err(invalid("sweep.max_attackers", "max_attackers < n_clients"));
            }
        }
        if self.sweep.attacker_counts.iter().any(|&k| k >= self.n_clients) {
            return Err(invalid("sweep.attacker_counts", "attacker counts < n_clients"));
        }
        if self.sweep.s_values.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(invalid("sweep.s_values", "s values ≥ 0"));
        }
        if self.sweep.gamma_values.iter().any(|g| !(*g > 0.0 && *g <= 1.0)) {
            return Err(invalid("sweep.gamma_values", "gamma ∈ (0,1]"));
        }
        Ok(())
    }
}

// File schema. Every field is optional; absent fields take the defaults above.

#[derive(Debug, Default, Deserialize)]
struct FileConfig {
    seed: Option<u64>,
    n_clients: Option<usize>,
    topology: Option<TopologyKind>,
    method: Option<Method>,
    rounds: Option<u32>,
    n_malfunctioning: Option<usize>,
    #[serde(default)]
    attack: FileAttack,
    #[serde(default)]
    agreement: FileAgreement,
    #[serde(default)]
    lightyear: FileLightyear,
    #[serde(default)]
    baseline: FileBaseline,
    #[serde(default)]
    data: FileData,
    #[serde(default)]
    model: FileModel,
    #[serde(default)]
    optimizer: FileOptimizer,
    #[serde(default)]
    sweep: FileSweep,
}

#[derive(Debug, Default, Deserialize)]
struct FileAttack {
    kind: Option<AttackKind>,
    ana_form: Option<AnaForm>,
    ana_scaling_s: Option<f64>,
    ana_sigma: Option<f64>,
    sfa_alpha: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
struct FileAgreement {
    tau: Option<f64>,
    acc_mode: Option<AccMode>,
    ece_bins: Option<usize>,
    entropy_normalized: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
struct FileLightyear {
    gamma: Option<f64>,
    round_index_base: Option<u32>,
    include_self: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
struct FileBaseline {
    krum_f: Option<usize>,
    balance_gamma: Option<f64>,
    balance_kappa: Option<f64>,
    scclip_radius: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
struct FileData {
    n_classes: Option<usize>,
    n_features: Option<usize>,
    class_sep: Option<f64>,
    strategy: Option<PartitionStrategy>,
    dirichlet_alpha: Option<f64>,
    group_rotation_deg: Option<f64>,
    group_shift: Option<f64>,
    samples_per_client: Option<usize>,
    split: Option<[f64; 3]>,
}

#[derive(Debug, Default, Deserialize)]
struct FileModel {
    hidden: Option<Vec<usize>>,
    activation: Option<Activation>,
}

#[derive(Debug, Default, Deserialize)]
struct FileOptimizer {
    learning_rate: Option<f64>,
    momentum: Option<f64>,
    weight_decay: Option<f64>,
    batch_size: Option<usize>,
    local_epochs: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
struct FileSweep {
    max_attackers: Option<usize>,
    s_values: Option<Vec<f64>>,
    attacker_counts: Option<Vec<usize>>,
    gamma_values: Option<Vec<f64>>,
}

const TOP_KEYS: &[&str] = &["seed", "n_clients", "topology", "method", "rounds", "n_malfunctioning"];

fn section_keys() -> BTreeMap<&'static str, &'static [&'static str]> {
    BTreeMap::from([
        ("attack", &["kind", "ana_form", "ana_scaling_s", "ana_sigma", "sfa_alpha"][..]),
        ("agreement", &["tau", "acc_mode", "ece_bins", "entropy_normalized"][..]),
        ("lightyear", &["gamma", "round_index_base", "include_self"][..]),
        ("baseline", &["krum_f", "balance_gamma", "balance_kappa", "scclip_radius"][..]),
        (
            "data",
            &[
                "n_classes",
                "n_features",
                "class_sep",
                "strategy",
                "dirichlet_alpha",
                "group_rotation_deg",
                "group_shift",
                "samples_per_client",
                "split",
            ][..],
        ),
        ("model", &["hidden", "activation"][..]),
        ("optimizer", &["learning_rate", "momentum", "weight_decay", "batch_size", "local_epochs"][..]),
        ("sweep", &["max_attackers", "s_values", "attacker_counts", "gamma_values"][..]),
    ])
}

fn nearest(key: &str, candidates: &[&str]) -> Option<String> {
    candidates
        .iter()
        .map(|c| (strsim::levenshtein(key, c), *c))
        .filter(|(d, _)| *d <= 3)
        .min()
        .map(|(_, c)| c.to_string())
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line on which `key` is assigned inside `[section]` (or at top level).
fn line_of_key(text: &str, section: Option<&str>, key: &str) -> usize {
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = Some(line.trim_matches(|c| c == '[' || c == ']').trim().to_string());
            continue;
        }
        let lhs = line.split('=').next().unwrap_or("").trim().trim_matches('"');
        if lhs == key && current.as_deref() == section {
            return i + 1;
        }
    }
    0
}

fn check_keys(text: &str, table: &toml::Table) -> Result<(), ConfigError> {
    let sections = section_keys();
    let mut top: Vec<&str> = TOP_KEYS.to_vec();
    top.extend(sections.keys());
    for (key, value) in table {
        match sections.get(key.as_str()) {
            Some(allowed) => {
                let Some(inner) = value.as_table() else {
                    return Err(ConfigError::Parse {
                        line: line_of_key(text, None, key),
                        message: format!("`{key}` must be a section"),
                    });
                };
                for sub in inner.keys() {
                    if !allowed.contains(&sub.as_str()) {
                        return Err(ConfigError::UnknownKey {
                            key: format!("{key}.{sub}"),
                            line: line_of_key(text, Some(key), sub),
                            suggestion: nearest(sub, allowed).map(|s| format!("{key}.{s}")),
                        });
                    }
                }
            }
            None if TOP_KEYS.contains(&key.as_str()) => {}
            None => {
                // closest leaf name anywhere, reported with its section
                let suggestion = top
                    .iter()
                    .map(|k| (k.to_string(), *k))
                    .chain(sections.iter().flat_map(|(s, keys)| keys.iter().map(move |k| (format!("{s}.{k}"), *k))))
                    .map(|(full, leaf)| (strsim::levenshtein(key, leaf), full))
                    .filter(|(d, _)| *d <= 3)
                    .min_by_key(|(d, _)| *d)
                    .map(|(_, full)| full);
                return Err(ConfigError::UnknownKey {
                    key: key.clone(),
                    line: line_of_key(text, None, key),
                    suggestion,
                });
            }
        }
    }
    Ok(())
}

/// Parses and validates a TOML experiment config. Unknown keys are errors.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.span().map_or(0, |s| line_of_offset(text, s.start)),
        message: e.message().to_string(),
    })?;
    check_keys(text, &table)?;
    let file: FileConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.span().map_or(0, |s| line_of_offset(text, s.start)),
        message: e.message().to_string(),
    })?;
    let cfg = file.into_config();
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Config(ConfigError::Parse {
            line: 0,
            message: format!("cannot read {}: {e}", path.display()),
        })
    })?;
    Ok(parse_config_str(&text)?)
}

impl FileConfig {
    fn into_config(self) -> ExperimentConfig {
        let d = ExperimentConfig::default();
        let a = self.attack;
        let g = self.agreement;
        let l = self.lightyear;
        let b = self.baseline;
        let data = self.data;
        let m = self.model;
        let o = self.optimizer;
        let s = self.sweep;
        ExperimentConfig {
            master_seed: self.seed.unwrap_or(d.master_seed),
            n_clients: self.n_clients.unwrap_or(d.n_clients),
            topology: self.topology.unwrap_or(d.topology),
            method: self.method.unwrap_or(d.method),
            rounds: self.rounds.unwrap_or(d.rounds),
            n_malfunctioning: self.n_malfunctioning.unwrap_or(d.n_malfunctioning),
            attack: AttackSpec {
                kind: a.kind.unwrap_or(d.attack.kind),
                ana_form: a.ana_form.unwrap_or(d.attack.ana_form),
                ana_scaling_s: a.ana_scaling_s.unwrap_or(d.attack.ana_scaling_s),
                ana_sigma: a.ana_sigma.unwrap_or(d.attack.ana_sigma),
                sfa_alpha: a.sfa_alpha.unwrap_or(d.attack.sfa_alpha),
            },
            agreement: AgreementConfig {
                tau: g.tau.unwrap_or(d.agreement.tau),
                acc_mode: g.acc_mode.unwrap_or(d.agreement.acc_mode),
                ece_bins: g.ece_bins.unwrap_or(d.agreement.ece_bins),
                entropy_normalized: g.entropy_normalized.unwrap_or(d.agreement.entropy_normalized),
            },
            lightyear: LightyearConfig {
                gamma: l.gamma.unwrap_or(d.lightyear.gamma),
                round_index_base: l.round_index_base.unwrap_or(d.lightyear.round_index_base),
                include_self: l.include_self.unwrap_or(d.lightyear.include_self),
            },
            baseline: BaselineConfig {
                krum_f: b.krum_f.unwrap_or(d.baseline.krum_f),
                balance_gamma: b.balance_gamma.unwrap_or(d.baseline.balance_gamma),
                balance_kappa: b.balance_kappa.unwrap_or(d.baseline.balance_kappa),
                scclip_radius: b.scclip_radius.or(d.baseline.scclip_radius),
            },
            data: DataConfig {
                n_classes: data.n_classes.unwrap_or(d.data.n_classes),
                n_features: data.n_features.unwrap_or(d.data.n_features),
                class_sep: data.class_sep.unwrap_or(d.data.class_sep),
                strategy: data.strategy.unwrap_or(d.data.strategy),
                dirichlet_alpha: data.dirichlet_alpha.unwrap_or(d.data.dirichlet_alpha),
                group_rotation_deg: data.group_rotation_deg.unwrap_or(d.data.group_rotation_deg),
                group_shift: data.group_shift.unwrap_or(d.data.group_shift),
                samples_per_client: data.samples_per_client.unwrap_or(d.data.samples_per_client),
                split: data
                    .split
                    .map(|[train, val, test]| SplitFractions { train, val, test })
                    .unwrap_or(d.data.split),
            },
            model: ModelConfig {
                hidden: m.hidden.unwrap_or(d.model.hidden),
                activation: m.activation.unwrap_or(d.model.activation),
            },
            optimizer: OptimizerHyper {
                learning_rate: o.learning_rate.unwrap_or(d.optimizer.learning_rate),
                momentum: o.momentum.unwrap_or(d.optimizer.momentum),
                weight_decay: o.weight_decay.unwrap_or(d.optimizer.weight_decay),
                batch_size: o.batch_size.unwrap_or(d.optimizer.batch_size),
                local_epochs: o.local_epochs.unwrap_or(d.optimizer.local_epochs),
            },
            sweep: SweepConfig {
                max_attackers: s.max_attackers.or(d.sweep.max_attackers),
                s_values: s.s_values.unwrap_or(d.sweep.s_values),
                attacker_counts: s.attacker_counts.unwrap_or(d.sweep.attacker_counts),
                gamma_values: s.gamma_values.unwrap_or(d.sweep.gamma_values),
            },
        }
    }
}
