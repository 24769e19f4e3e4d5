//! Federation orchestration.
//!
//! A round runs five phases with a barrier between each: local training,
//! attack injection on broadcasts, delivery, per-method aggregation and
//! evaluation. Per-client work inside a phase is independent and may run in
//! parallel; results are merged in client-id order.

use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::aggregate::{self, balance_accepted, median_distance};
use crate::agreement::{AccMode, AgreementScorer};
use crate::attacks::{corrupt, AnaForm, AttackKind, AttackSpec};
use crate::config::{ExperimentConfig, Method, TopologyKind};
use crate::data::{gen_gaussian_task, partition, split_three_way, LabeledDataset, Shards};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::metrics::{accuracy, EceConfig, Predictions};
use crate::nn::{init_params, train_local, ModelSpec, OptimizerState, ParamVector};
use crate::rng::{derive_seed, stream, Purpose};

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub model: ParamVector,
    pub opt: OptimizerState,
    pub shards: Shards,
    pub malfunction: Option<AttackSpec>,
    clip_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRecord {
    pub client_id: usize,
    pub test_acc: f64,
    pub val_acc: f64,
    pub ece: f64,
    /// Peers whose updates entered this client's aggregate.
    pub selected: Vec<usize>,
    /// Composite agreement per scored peer, in peer-id order (lightyear only).
    pub scores: Vec<(usize, f64)>,
    /// Attack actually applied to this client's broadcast this round.
    pub attack: Option<AttackKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: u32,
    pub clients: Vec<ClientRecord>,
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len() as f64;
    xs.sum::<f64>() / n
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

impl RoundLog {
    pub fn mean_test_acc(&self) -> f64 {
        mean(self.clients.iter().map(|c| c.test_acc))
    }

    pub fn mean_val_acc(&self) -> f64 {
        mean(self.clients.iter().map(|c| c.val_acc))
    }

    pub fn test_accs(&self) -> Vec<f64> {
        self.clients.iter().map(|c| c.test_acc).collect()
    }

    pub fn val_accs(&self) -> Vec<f64> {
        self.clients.iter().map(|c| c.val_acc).collect()
    }

    /// Means restricted to the given clients, e.g. the honest ones.
    pub fn mean_test_acc_of(&self, ids: &[usize]) -> f64 {
        mean(ids.iter().map(|&i| self.clients[i].test_acc))
    }
}

/// Seeded permutation of client ids. Taking the first `k` yields nested
/// attacker sets across `k`.
pub fn attacker_order(master_seed: u64, n_clients: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..n_clients).collect();
    ids.shuffle(&mut stream(master_seed, Purpose::Attackers, 0, 0));
    ids
}

#[derive(Debug)]
struct Outcome {
    model: ParamVector,
    selected: Vec<usize>,
    scores: Vec<(usize, f64)>,
    clip_radius: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Federation {
    cfg: ExperimentConfig,
    spec: Arc<ModelSpec>,
    clients: Vec<ClientState>,
    attackers: Vec<usize>,
    server_model: ParamVector,
    server_radius: Option<f64>,
    last_broadcasts: Vec<ParamVector>,
}

impl Federation {
    /// Validates `cfg`, generates and partitions the data and initializes
    /// every client from the shared seeded initialization.
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.master_seed;
        let spec = cfg.model_spec()?;
        let d = &cfg.data;
        let pool = gen_gaussian_task(
            d.n_classes,
            d.n_features,
            cfg.n_clients * d.samples_per_client,
            d.class_sep,
            derive_seed(seed, Purpose::Data, 0, 0),
        )?;
        let parts = partition(
            &pool,
            &d.partition_config(cfg.n_clients),
            derive_seed(seed, Purpose::Partition, 0, 0),
        )?;
        let init = init_params(&spec, derive_seed(seed, Purpose::Init, 0, 0));
        let attackers: Vec<usize> = attacker_order(seed, cfg.n_clients)[..cfg.n_malfunctioning].to_vec();
        let clients = parts
            .iter()
            .enumerate()
            .map(|(id, part)| {
                Ok(ClientState {
                    id,
                    model: init.clone(),
                    opt: OptimizerState::new(spec.n_params(), cfg.optimizer),
                    shards: split_three_way(part, d.split, derive_seed(seed, Purpose::Split, id as u64, 0))?,
                    malfunction: attackers.contains(&id).then_some(cfg.attack),
                    clip_radius: cfg.baseline.scclip_radius,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            spec,
            clients,
            attackers,
            server_model: init,
            server_radius: cfg.baseline.scclip_radius,
            last_broadcasts: Vec::new(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn spec(&self) -> &Arc<ModelSpec> {
        &self.spec
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    /// Sorted ids of the malfunctioning clients.
    pub fn attackers(&self) -> Vec<usize> {
        let mut a = self.attackers.clone();
        a.sort_unstable();
        a
    }

    /// What each client sent in the most recent round.
    pub fn last_broadcasts(&self) -> &[ParamVector] {
        &self.last_broadcasts
    }

    pub fn run_round(&mut self, round_t: u32, exec: Execution) -> Result<RoundLog> {
        if round_t == 0 || round_t > self.cfg.rounds {
            return Err(Error::InvalidArgument(format!(
                "round {round_t} outside [1, {}]",
                self.cfg.rounds
            )));
        }
        let seed = self.cfg.master_seed;

        exec.try_map_mut(&mut self.clients, |c| {
            let s = derive_seed(seed, Purpose::Train, c.id as u64, round_t as u64);
            let (model, opt) = train_local(&c.model, &c.opt, &c.shards.train, s)?;
            c.model = model;
            c.opt = opt;
            Ok(())
        })?;

        let sent: Vec<(Option<AttackKind>, ParamVector)> = exec.try_map(&self.clients, |c| match &c.malfunction {
            Some(spec) => {
                let mut rng = stream(seed, Purpose::Attack, c.id as u64, round_t as u64);
                let (kind, v) = corrupt(&c.model, spec, &mut rng)?;
                Ok((Some(kind), v))
            }
            None => Ok((None, c.model.clone())),
        })?;
        let (kinds, broadcasts): (Vec<_>, Vec<_>) = sent.into_iter().unzip();

        let outcomes = match self.cfg.topology {
            TopologyKind::P2pFull => {
                let cfg = &self.cfg;
                exec.try_map(&self.clients, |c| aggregate_p2p(cfg, c, &broadcasts, round_t))?
            }
            TopologyKind::Star => self.aggregate_star(&broadcasts, round_t)?,
        };
        for (c, o) in self.clients.iter_mut().zip(&outcomes) {
            c.model = o.model.clone();
            c.clip_radius = o.clip_radius;
        }

        let ece_cfg = EceConfig { n_bins: self.cfg.agreement.ece_bins };
        let evals = exec.try_map(&self.clients, |c| {
            let test = Predictions::new(&c.model, &c.shards.test)?;
            let val = Predictions::new(&c.model, &c.shards.val)?;
            Ok((
                test.accuracy(c.shards.test.labels())?,
                val.accuracy(c.shards.val.labels())?,
                test.ece(c.shards.test.labels(), ece_cfg)?,
            ))
        })?;

        self.last_broadcasts = broadcasts;
        let clients = outcomes
            .into_iter()
            .zip(evals)
            .zip(kinds)
            .enumerate()
            .map(|(id, ((o, (test_acc, val_acc, ece)), attack))| ClientRecord {
                client_id: id,
                test_acc,
                val_acc,
                ece,
                selected: o.selected,
                scores: o.scores,
                attack,
            })
            .collect();
        Ok(RoundLog { round: round_t, clients })
    }

    fn aggregate_star(&mut self, broadcasts: &[ParamVector], round_t: u32) -> Result<Vec<Outcome>> {
        let cfg = &self.cfg;
        let all: Vec<&ParamVector> = broadcasts.iter().collect();
        let reference = &self.server_model;
        let (global, used) = match cfg.method {
            Method::Fedavg => (aggregate::fedavg(&all)?, (0..all.len()).collect()),
            Method::Krum => {
                let w = aggregate::krum_select(&all, cfg.baseline.krum_f)?;
                (all[w].clone(), vec![w])
            }
            Method::Balance => {
                let acc = balance_accepted(reference, &all, round_t, cfg.rounds, &cfg.baseline)?;
                (aggregate::balance(reference, &all, round_t, cfg.rounds, &cfg.baseline)?, acc)
            }
            Method::Scclip => {
                let r = match self.server_radius {
                    Some(r) => r,
                    None => clip_floor(median_distance(reference, &all)),
                };
                self.server_radius = Some(r);
                (aggregate::scclip(reference, &all, r)?, (0..all.len()).collect())
            }
            Method::Lightyear => {
                return Err(Error::InvalidSpec("lightyear needs the p2p_full topology".into()));
            }
        };
        self.server_model = global.clone();
        Ok(self
            .clients
            .iter()
            .map(|c| Outcome {
                model: global.clone(),
                selected: used.clone(),
                scores: Vec::new(),
                clip_radius: c.clip_radius,
            })
            .collect())
    }
}

fn clip_floor(radius: Option<f64>) -> f64 {
    // identical updates give a zero median; any positive radius is then exact
    radius.unwrap_or(0.0).max(f64::MIN_POSITIVE)
}

fn aggregate_p2p(cfg: &ExperimentConfig, c: &ClientState, broadcasts: &[ParamVector], round_t: u32) -> Result<Outcome> {
    let own = &c.model;
    let peers: Vec<usize> = (0..broadcasts.len()).filter(|&j| j != c.id).collect();
    let received: Vec<&ParamVector> = peers.iter().map(|&j| &broadcasts[j]).collect();
    // own model in its id slot, so every client averages in the same order
    let with_own: Vec<&ParamVector> = (0..broadcasts.len())
        .map(|j| if j == c.id { own } else { &broadcasts[j] })
        .collect();
    let mut clip_radius = c.clip_radius;
    let (model, selected, scores) = match cfg.method {
        Method::Lightyear => {
            let scorer = AgreementScorer::new(own, &c.shards.val, cfg.agreement)?;
            let reports = peers
                .iter()
                .map(|&j| scorer.score(j, &broadcasts[j]))
                .collect::<Result<Vec<_>>>()?;
            let chosen: Vec<usize> = reports.iter().filter(|r| r.selected).map(|r| r.peer_id).collect();
            let pool: Vec<&ParamVector> = (0..broadcasts.len())
                .filter(|&j| (j == c.id && cfg.lightyear.include_self) || chosen.contains(&j))
                .map(|j| with_own[j])
                .collect();
            let model = aggregate::lightyear_aggregate(own, &pool, round_t, &cfg.lightyear)?;
            let scores = reports.iter().map(|r| (r.peer_id, r.composite)).collect();
            (model, chosen, scores)
        }
        Method::Fedavg => (aggregate::fedavg(&with_own)?, peers, Vec::new()),
        Method::Krum => {
            let w = aggregate::krum_select(&with_own, cfg.baseline.krum_f)?;
            let selected = if w == c.id { Vec::new() } else { vec![w] };
            (with_own[w].clone(), selected, Vec::new())
        }
        Method::Balance => {
            let acc = balance_accepted(own, &received, round_t, cfg.rounds, &cfg.baseline)?;
            let model = aggregate::balance(own, &received, round_t, cfg.rounds, &cfg.baseline)?;
            (model, acc.iter().map(|&i| peers[i]).collect(), Vec::new())
        }
        Method::Scclip => {
            let r = match clip_radius {
                Some(r) => r,
                None => clip_floor(median_distance(own, &received)),
            };
            clip_radius = Some(r);
            (aggregate::scclip(own, &received, r)?, peers, Vec::new())
        }
    };
    Ok(Outcome {
        model,
        selected,
        scores,
        clip_radius,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig, exec: Execution) -> Result<Vec<RoundLog>> {
    let mut fed = Federation::new(cfg)?;
    (1..=cfg.rounds).map(|t| fed.run_round(t, exec)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Attackers,
    Sensitivity,
    Gamma,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Attackers => "attackers",
            SweepAxis::Sensitivity => "sensitivity",
            SweepAxis::Gamma => "gamma",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub axis: SweepAxis,
    pub config: ExperimentConfig,
    pub logs: Vec<RoundLog>,
}

impl SweepCell {
    /// Coordinates of this cell on its sweep grid.
    pub fn key(&self) -> Vec<(&'static str, f64)> {
        let c = &self.config;
        match self.axis {
            SweepAxis::Attackers => vec![("k", c.n_malfunctioning as f64)],
            SweepAxis::Sensitivity => vec![("s", c.attack.ana_scaling_s), ("k", c.n_malfunctioning as f64)],
            SweepAxis::Gamma => vec![("gamma", c.lightyear.gamma)],
        }
    }

    pub fn mean_val_acc_series(&self) -> Vec<f64> {
        self.logs.iter().map(RoundLog::mean_val_acc).collect()
    }

    pub fn final_mean_test_acc(&self) -> f64 {
        self.logs.last().map_or(f64::NAN, RoundLog::mean_test_acc)
    }
}

fn run_cells(axis: SweepAxis, configs: Vec<ExperimentConfig>, exec: Execution) -> Result<Vec<SweepCell>> {
    exec.try_map(&configs, |cfg| {
        Ok(SweepCell {
            axis,
            config: cfg.clone(),
            logs: run_experiment(cfg, exec)?,
        })
    })
}

/// One run per attacker count `k = 1..=max_attackers`, nested attacker sets.
pub fn attacker_sweep(base: &ExperimentConfig, max_attackers: usize, exec: Execution) -> Result<Vec<SweepCell>> {
    if max_attackers >= base.n_clients {
        return Err(Error::InvalidArgument(format!(
            "max_attackers {max_attackers} must be < n_clients {}",
            base.n_clients
        )));
    }
    let configs = (1..=max_attackers)
        .map(|k| ExperimentConfig {
            n_malfunctioning: k,
            ..base.clone()
        })
        .collect();
    run_cells(SweepAxis::Attackers, configs, exec)
}

/// Grid over scaled-ANA strength `s` and attacker count, `s` outermost.
pub fn sensitivity_sweep(
    base: &ExperimentConfig,
    s_values: &[f64],
    attacker_counts: &[usize],
    exec: Execution,
) -> Result<Vec<SweepCell>> {
    let mut configs = Vec::new();
    for &s in s_values {
        for &k in attacker_counts {
            let mut cfg = base.clone();
            cfg.attack.kind = AttackKind::Ana;
            cfg.attack.ana_form = AnaForm::Scaled;
            cfg.attack.ana_scaling_s = s;
            cfg.n_malfunctioning = k;
            configs.push(cfg);
        }
    }
    run_cells(SweepAxis::Sensitivity, configs, exec)
}

/// One accept-all lightyear run per `gamma`. The client's own model joins the
/// average, so `gamma = 1` reproduces p2p FedAvg exactly.
pub fn gamma_ablation(base: &ExperimentConfig, gamma_values: &[f64], exec: Execution) -> Result<Vec<SweepCell>> {
    let configs = gamma_values
        .iter()
        .map(|&g| {
            let mut cfg = base.clone();
            cfg.method = Method::Lightyear;
            cfg.topology = TopologyKind::P2pFull;
            cfg.agreement.tau = -1.0;
            cfg.agreement.acc_mode = AccMode::Symmetric;
            cfg.lightyear.gamma = g;
            cfg.lightyear.include_self = true;
            cfg
        })
        .collect();
    run_cells(SweepAxis::Gamma, configs, exec)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorDecomposition {
    pub eps_s: f64,
    pub eps_t_clean: f64,
    pub eps_t_corrupt: f64,
    /// `eps_t_corrupt - eps_t_clean`; sampling noise can make it negative.
    pub eps_m_est: f64,
}

pub fn error_decomposition_probe(
    h_clean: &ParamVector,
    h_corrupt: &ParamVector,
    source: &LabeledDataset,
    target: &LabeledDataset,
) -> Result<ErrorDecomposition> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyData("error_decomposition_probe"));
    }
    let eps_s = 1.0 - accuracy(h_clean, source)?;
    let eps_t_clean = 1.0 - accuracy(h_clean, target)?;
    let eps_t_corrupt = 1.0 - accuracy(h_corrupt, target)?;
    Ok(ErrorDecomposition {
        eps_s,
        eps_t_clean,
        eps_t_corrupt,
        eps_m_est: eps_t_corrupt - eps_t_clean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            n_clients: 4,
            rounds: 2,
            ..Default::default()
        };
        cfg.data.samples_per_client = 60;
        cfg.optimizer.learning_rate = 0.05;
        cfg
    }

    #[test]
    fn log_shape() {
        let logs = run_experiment(&small(), Execution::Sequential).unwrap();
        assert_eq!(logs.len(), 2);
        for (t, log) in logs.iter().enumerate() {
            assert_eq!(log.round, t as u32 + 1);
            assert_eq!(log.clients.len(), 4);
            for (i, c) in log.clients.iter().enumerate() {
                assert_eq!(c.client_id, i);
                assert!((0.0..=1.0).contains(&c.test_acc));
                assert!(c.selected.iter().all(|&j| j != i && j < 4));
            }
        }
    }

    #[test]
    fn attacker_sets_nest() {
        let order = attacker_order(9, 8);
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..8).collect::<Vec<_>>());
        let mut cfg = small();
        cfg.attack.kind = AttackKind::Sfa;
        cfg.n_malfunctioning = 2;
        let two = Federation::new(&cfg).unwrap().attackers();
        cfg.n_malfunctioning = 3;
        let three = Federation::new(&cfg).unwrap().attackers();
        assert!(two.iter().all(|a| three.contains(a)));
    }

    #[test]
    fn p2p_fedavg_clients_agree() {
        let mut cfg = small();
        cfg.method = Method::Fedavg;
        let mut fed = Federation::new(&cfg).unwrap();
        fed.run_round(1, Execution::Sequential).unwrap();
        let first = &fed.clients()[0].model;
        assert!(fed.clients().iter().all(|c| c.model == *first));
    }

    #[test]
    fn round_bounds() {
        let mut fed = Federation::new(&small()).unwrap();
        assert!(fed.run_round(0, Execution::Sequential).is_err());
        assert!(fed.run_round(3, Execution::Sequential).is_err());
    }

    #[test]
    fn probe_identities() {
        let cfg = small();
        let fed = Federation::new(&cfg).unwrap();
        let c = &fed.clients()[0];
        let p = error_decomposition_probe(&c.model, &c.model, &c.shards.test, &c.shards.test).unwrap();
        assert_eq!(p.eps_m_est, 0.0);
        assert_eq!(p.eps_s, p.eps_t_clean);
        let empty = LabeledDataset::new(vec![], vec![], cfg.data.n_features, cfg.data.n_classes).unwrap();
        assert!(error_decomposition_probe(&c.model, &c.model, &empty, &c.shards.test).is_err());
    }

    #[test]
    fn sweep_shapes() {
        let cfg = small();
        let s = sensitivity_sweep(&cfg, &[0.0, 50.0], &[1, 2], Execution::Sequential).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s[1].key(), vec![("s", 0.0), ("k", 2.0)]);
        let g = gamma_ablation(&cfg, &[1.0, 0.95], Execution::Sequential).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].mean_val_acc_series().len(), 2);
        let a = attacker_sweep(&cfg, 3, Execution::Sequential).unwrap();
        assert_eq!(a.iter().map(|c| c.config.n_malfunctioning).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert!(attacker_sweep(&cfg, 4, Execution::Sequential).is_err());
    }
}
