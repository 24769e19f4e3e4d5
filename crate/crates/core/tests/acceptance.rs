//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::sync::Arc;
use std::time::{Duration, Instant};

use lightyear_core::aggregate::{fedavg, krum_select, lightyear_aggregate, LightyearConfig};
use lightyear_core::agreement::{acc_agreement, agreement_score, ece_agreement, sharp_agreement, AccMode, AgreementConfig, AgreementScorer};
use lightyear_core::attacks::{ana, sfa, AnaForm, AttackKind, AttackSpec};
use lightyear_core::config::{ExperimentConfig, Method};
use lightyear_core::data::{LabeledDataset, PartitionStrategy};
use lightyear_core::exec::{with_workers, Execution};
use lightyear_core::metrics::{accuracy, ece_from_confidences, EceConfig};
use lightyear_core::nn::{init_params, loss_and_grad, Activation, ModelSpec, ParamVector};
use lightyear_core::output::rounds_csv;
use lightyear_core::rng::{self, stream, Purpose};
use lightyear_core::sim::{attacker_sweep, gamma_ablation, run_experiment, sensitivity_sweep, std_dev, Federation, RoundLog};
use rand::Rng;

const EXEC: Execution = Execution::Parallel;

/// Experiment settings shared by the empirical criteria: the library defaults
/// with a learning rate large enough to train in 12 short rounds.
fn base(seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.master_seed = seed;
    c.optimizer.learning_rate = 0.05;
    c
}

fn final_acc(logs: &[RoundLog]) -> f64 {
    logs.last().unwrap().mean_test_acc()
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_model(r: &mut impl Rng, act: Activation) -> (Arc<ModelSpec>, ParamVector, LabeledDataset) {
    let d = r.random_range(2..5);
    let k = r.random_range(2..5);
    let mut sizes = vec![d];
    for _ in 0..r.random_range(0..3) {
        sizes.push(r.random_range(2..6));
    }
    sizes.push(k);
    let spec = Arc::new(ModelSpec::new(sizes, act).unwrap());
    let mut p = init_params(&spec, r.random());
    for v in p.values_mut() {
        *v += r.random_range(-0.3..0.3);
    }
    let n = r.random_range(3..8);
    let features = (0..n * d).map(|_| r.random_range(-2.0..2.0)).collect();
    let labels = (0..n).map(|_| r.random_range(0..k)).collect();
    (spec, p, LabeledDataset::new(features, labels, d, k).unwrap())
}

fn gradient_oracle() -> Outcome {
    let t = Instant::now();
    let mut r = rng::seeded(101);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let act = if case % 2 == 0 { Activation::Relu } else { Activation::Tanh };
        let (_, p, data) = random_model(&mut r, act);
        let wd = 1e-3;
        let (_, grad) = loss_and_grad(&p, &data, wd).unwrap();
        let h = 1e-6;
        let numeric: Vec<f64> = (0..p.len())
            .map(|i| {
                let mut plus = p.clone();
                plus.values_mut()[i] += h;
                let mut minus = p.clone();
                minus.values_mut()[i] -= h;
                (loss_and_grad(&plus, &data, wd).unwrap().0 - loss_and_grad(&minus, &data, wd).unwrap().0) / (2.0 * h)
            })
            .collect();
        let diff: f64 = grad.values().iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = grad.norm() + numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        worst = worst.max(diff / scale.max(1e-12));
    }
    let elapsed = t.elapsed();
    outcome(
        worst < 1e-4 && elapsed < Duration::from_secs(1),
        format!("max relative error {worst:.2e} over 20 models in {elapsed:.2?}"),
    )
}

fn gamma_one_reduction() -> Outcome {
    let mut r = rng::seeded(202);
    let cfg = LightyearConfig { gamma: 1.0, ..Default::default() };
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (spec, own, _) = random_model(&mut r, Activation::Relu);
        let peers: Vec<ParamVector> = (0..r.random_range(1..8)).map(|_| init_params(&spec, r.random())).collect();
        let refs: Vec<&ParamVector> = peers.iter().collect();
        let t = r.random_range(1..13);
        let a = lightyear_aggregate(&own, &refs, t, &cfg).unwrap();
        let b = fedavg(&refs).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            worst = worst.max((x - y).abs());
        }
    }
    // the same reduction inside a full round, on each client's neighbour set
    let mut c = base(3);
    c.lightyear.gamma = 1.0;
    c.agreement.tau = -1.0;
    let mut fed = Federation::new(&c).unwrap();
    fed.run_round(1, EXEC).unwrap();
    let sent = fed.last_broadcasts();
    for (i, client) in fed.clients().iter().enumerate() {
        let neighbours: Vec<&ParamVector> = sent.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, p)| p).collect();
        let expected = fedavg(&neighbours).unwrap();
        for (x, y) in client.model.values().iter().zip(expected.values()) {
            worst = worst.max((x - y).abs());
        }
    }
    outcome(worst <= 1e-12, format!("max |lightyear - fedavg| = {worst:.1e} over 50 cases and one 8-client round"))
}

fn agreement_identities() -> Outcome {
    let mut r = rng::seeded(303);
    let mut ok = true;
    for case in 0..30 {
        let act = if case % 2 == 0 { Activation::Relu } else { Activation::Tanh };
        let (_, h, v) = random_model(&mut r, act);
        ok &= ece_agreement(&h, &h, &v, 10).unwrap() == 1.0;
        ok &= sharp_agreement(&h, &h, &v, true).unwrap() == 1.0;
        ok &= acc_agreement(&h, &h, &v, AccMode::Literal).unwrap() == 0.0;
        let report = agreement_score(0, &h, &h, &v, &AgreementConfig::default()).unwrap();
        ok &= report.composite == 1.0 && report.selected;
    }
    outcome(ok, "A_ece = A_sharp = 1, literal A_acc = 0, symmetric composite = 1 on 30 models".into())
}

fn ece_fixture() -> Outcome {
    let v = ece_from_confidences(&[0.9, 0.8, 0.6, 0.55], &[true, true, false, true], EceConfig { n_bins: 4 }).unwrap();
    outcome(
        (v - 0.1125).abs() < 1e-15,
        format!("ECE = {v} (equal-width bins of 0.25; two are occupied)"),
    )
}

/// Exhaustive Krum: every size-(n-f-2) subset of the other updates is scored
/// and the smallest total kept.
fn krum_oracle(updates: &[ParamVector], f: usize) -> usize {
    let n = updates.len();
    let m = n - f - 2;
    let mut best = (f64::INFINITY, 0);
    for i in 0..n {
        let others: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| updates[i].values().iter().zip(updates[j].values()).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect();
        let mut score = f64::INFINITY;
        for mask in 0u32..(1 << others.len()) {
            if mask.count_ones() as usize != m {
                continue;
            }
            let s: f64 = (0..others.len()).filter(|b| mask & (1 << b) != 0).map(|b| others[b]).sum();
            score = score.min(s);
        }
        if score < best.0 {
            best = (score, i);
        }
    }
    best.1
}

fn krum_equivalence() -> Outcome {
    let t = Instant::now();
    let mut r = rng::seeded(505);
    let spec = Arc::new(ModelSpec::new(vec![2, 2], Activation::Relu).unwrap());
    let mut mismatches = 0;
    let mut ties = 0;
    for case in 0..100 {
        let f = r.random_range(0..3);
        let n = r.random_range(f + 3..=8);
        let mut updates: Vec<ParamVector> = (0..n)
            .map(|_| {
                // a coarse grid makes exact score ties common
                let v = (0..spec.n_params()).map(|_| r.random_range(-2..3) as f64).collect();
                ParamVector::new(Arc::clone(&spec), v).unwrap()
            })
            .collect();
        if case % 4 == 0 {
            updates = vec![updates[0].clone(); n];
        }
        let refs: Vec<&ParamVector> = updates.iter().collect();
        let got = krum_select(&refs, f).unwrap();
        let want = krum_oracle(&updates, f);
        let scores = lightyear_core::aggregate::krum_scores(&refs, f).unwrap();
        if scores.iter().filter(|s| **s == scores[want]).count() > 1 {
            ties += 1;
        }
        if got != want {
            mismatches += 1;
        }
    }
    let elapsed = t.elapsed();
    outcome(
        mismatches == 0 && elapsed < Duration::from_secs(1),
        format!("{mismatches} mismatches in 100 instances ({ties} with tied scores) in {elapsed:.2?}"),
    )
}

fn attack_exclusion() -> Outcome {
    let tau = AgreementConfig::default().tau;
    let mut cells = 0;
    let mut sfa_below = 0;
    let mut ana_below = 0;
    let mut unreachable = 0;
    for seed in 0..20 {
        let c = base(seed);
        let mut fed = Federation::new(&c).unwrap();
        for t in 1..=3 {
            fed.run_round(t, EXEC).unwrap();
        }
        let clients = fed.clients();
        // every client takes the attacker role in turn
        for a in 0..clients.len() {
            let h = &clients[a].model;
            let own_val = &clients[a].shards.val;
            let clean = accuracy(h, own_val).unwrap();
            let flipped = sfa(h, 1.0).unwrap();
            let mut s = AttackSpec::default().ana_scaling_s;
            let mut noisy = None;
            for _ in 0..12 {
                let spec = AttackSpec { kind: AttackKind::Ana, ana_form: AnaForm::Scaled, ana_scaling_s: s, ..Default::default() };
                let b = ana(h, &spec, &mut stream(seed, Purpose::Attack, a as u64, 3)).unwrap();
                if accuracy(&b, own_val).unwrap() <= 0.5 * clean {
                    noisy = Some(b);
                    break;
                }
                s *= 2.0;
            }
            if noisy.is_none() {
                unreachable += 1;
            }
            for (i, honest) in clients.iter().enumerate() {
                if i == a {
                    continue;
                }
                cells += 1;
                let scorer = AgreementScorer::new(&honest.model, &honest.shards.val, c.agreement).unwrap();
                if scorer.score(a, &flipped).unwrap().composite < tau {
                    sfa_below += 1;
                }
                if let Some(b) = &noisy {
                    if scorer.score(a, b).unwrap().composite < tau {
                        ana_below += 1;
                    }
                }
            }
        }
    }
    let sfa_rate = sfa_below as f64 / cells as f64;
    let ana_rate = ana_below as f64 / cells as f64;
    outcome(
        sfa_rate >= 0.95 && ana_rate >= 0.95,
        format!(
            "below tau in {:.1}% (SFA) and {:.1}% (scaled ANA) of {cells} cells; {unreachable} attackers could not be halved",
            100.0 * sfa_rate,
            100.0 * ana_rate
        ),
    )
}

/// Mean final test accuracy over seeds for k = 0..=5 attackers.
fn attacker_curve(method: Method, kind: AttackKind, seeds: u64) -> Vec<f64> {
    let mut curve = vec![0.0; 6];
    for seed in 0..seeds {
        let mut c = base(seed);
        c.method = method;
        c.attack.kind = kind;
        curve[0] += final_acc(&run_experiment(&c, EXEC).unwrap()) / seeds as f64;
        for cell in attacker_sweep(&c, 5, EXEC).unwrap() {
            curve[cell.config.n_malfunctioning] += cell.final_mean_test_acc() / seeds as f64;
        }
    }
    curve
}

fn fmt_curve(c: &[f64]) -> String {
    c.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")
}

fn robustness_sweep() -> Outcome {
    let t = Instant::now();
    let fa = attacker_curve(Method::Fedavg, AttackKind::Sfa, 10);
    let ly = attacker_curve(Method::Lightyear, AttackKind::Sfa, 10);
    let fedavg_drop = fa[0] - fa[3];
    let ly_gap = (ly[0] - ly[3]).abs();
    outcome(
        fedavg_drop >= 0.30 && ly_gap <= 0.05,
        format!(
            "k=0..5 fedavg [{}] lightyear [{}]; fedavg drop {fedavg_drop:.3}, lightyear gap {ly_gap:.3} ({:.1?})",
            fmt_curve(&fa),
            fmt_curve(&ly),
            t.elapsed()
        ),
    )
}

fn dynamic_stability() -> Outcome {
    let mut clean = 0.0;
    let mut attacked = 0.0;
    for seed in 0..10 {
        let mut c = base(seed);
        c.attack.kind = AttackKind::Dynamic;
        clean += final_acc(&run_experiment(&c, EXEC).unwrap()) / 10.0;
        c.n_malfunctioning = 3;
        attacked += final_acc(&run_experiment(&c, EXEC).unwrap()) / 10.0;
    }
    let gap = (clean - attacked).abs();
    outcome(gap <= 0.05, format!("lightyear {clean:.3} without attack, {attacked:.3} with 3 dynamic attackers (gap {gap:.3})"))
}

fn gamma_ablation_variance() -> Outcome {
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..10 {
        let mut c = base(seed);
        c.n_clients = 5;
        c.data.strategy = PartitionStrategy::FeatureShiftGroups;
        let cells = gamma_ablation(&c, &[0.95, 1.0], EXEC).unwrap();
        let late: Vec<f64> = cells
            .iter()
            .map(|cell| cell.logs[7..12].iter().map(|l| std_dev(&l.val_accs())).sum::<f64>() / 5.0)
            .collect();
        if late[0] <= late[1] {
            wins += 1;
        }
        pairs.push(format!("{:.3}/{:.3}", late[0], late[1]));
    }
    outcome(wins >= 8, format!("gamma 0.95 std <= gamma 1.0 std in {wins}/10 seeds [{}]", pairs.join(" ")))
}

fn determinism() -> Outcome {
    let mut c = base(77);
    c.rounds = 4;
    c.n_malfunctioning = 3;
    c.attack.kind = AttackKind::Dynamic;
    let once = rounds_csv(&c, &run_experiment(&c, EXEC).unwrap()).unwrap();
    let twice = rounds_csv(&c, &run_experiment(&c, EXEC).unwrap()).unwrap();
    let sequential = rounds_csv(&c, &run_experiment(&c, Execution::Sequential).unwrap()).unwrap();
    let one = with_workers(1, || rounds_csv(&c, &run_experiment(&c, EXEC).unwrap()).unwrap()).unwrap();
    let four = with_workers(4, || rounds_csv(&c, &run_experiment(&c, EXEC).unwrap()).unwrap()).unwrap();
    let same = once == twice && once == sequential && once == one && once == four;
    outcome(same, format!("{} bytes identical across reruns, sequential, 1 and 4 workers", once.len()))
}

fn sensitivity_shape() -> Outcome {
    let s_values = [0.0, 1.5, 120.5];
    let counts = [1, 3];
    let mut ok = true;
    let mut worst_rise: f64 = 0.0;
    let mut rows = 0;
    for seed in 0..5 {
        let mut c = base(seed);
        c.method = Method::Fedavg;
        let cells = sensitivity_sweep(&c, &s_values, &counts, EXEC).unwrap();
        rows += cells.iter().map(|cell| cell.logs.len()).sum::<usize>();
        let clean = run_experiment(&c, EXEC).unwrap();
        for cell in cells.iter().filter(|cell| cell.config.attack.ana_scaling_s == 0.0) {
            for (a, b) in cell.logs.iter().zip(&clean) {
                ok &= a.test_accs() == b.test_accs() && a.val_accs() == b.val_accs();
            }
        }
        for &k in &counts {
            let finals: Vec<f64> = cells
                .iter()
                .filter(|cell| cell.config.n_malfunctioning == k)
                .map(|cell| cell.final_mean_test_acc())
                .collect();
            for w in finals.windows(2) {
                worst_rise = worst_rise.max(w[1] - w[0]);
            }
        }
    }
    let shape = rows == 5 * 12 * s_values.len() * counts.len();
    outcome(
        ok && shape && worst_rise <= 0.03,
        format!("s=0 matches no-attack: {ok}; largest accuracy rise with s {worst_rise:.3}; {rows} round rows"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("gradient oracle", gradient_oracle),
        ("gamma=1 reduces to fedavg", gamma_one_reduction),
        ("agreement identities", agreement_identities),
        ("ECE hand fixture", ece_fixture),
        ("krum brute force", krum_equivalence),
        ("attack exclusion", attack_exclusion),
        ("robustness sweep", robustness_sweep),
        ("dynamic malfunction stability", dynamic_stability),
        ("gamma ablation variance", gamma_ablation_variance),
        ("determinism", determinism),
        ("sensitivity sweep shape", sensitivity_shape),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!("{} criterion {:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
