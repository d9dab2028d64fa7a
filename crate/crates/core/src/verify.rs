//! Self-checks run on demand: closed forms against enumeration, exact
//! unbiasedness on finite domains, the EM bound, and analytic gradients
//! against finite differences.

use std::fmt;
use std::str::FromStr;

use rand::{Rng as _, RngCore};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::aggregate::{for_each_tuple, AggregateLabel, Task, TaskKind};
use crate::error::{Error, Result};
use crate::loss::{
    aggregate_loss, compute_weights, em_lower_bound, estep_omega, loglik_loss, CrossEntropy, InstanceLoss,
    TupleDistribution, WeightMatrix,
};
use crate::model::{Architecture, Head, Model};
use crate::posterior::{self, brute_force_posterior, ClassProbabilities};
use crate::rng::{self, streams, Rng};

pub const ORACLE_TOL: f64 = 1e-9;
pub const UNBIASED_TOL: f64 = 1e-9;
pub const JENSEN_TOL: f64 = 1e-9;
pub const JENSEN_SLACK: f64 = 1e-12;
pub const GRAD_TOL: f64 = 1e-5;
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Oracle,
    Unbiased,
    Em,
    Grad,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 5] = ["oracle", "unbiased", "em", "grad", "all"];

    fn parts(self) -> Vec<Suite> {
        match self {
            Suite::All => vec![Suite::Oracle, Suite::Unbiased, Suite::Em, Suite::Grad],
            s => vec![s],
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Suite::Oracle => "oracle",
            Suite::Unbiased => "unbiased",
            Suite::Em => "em",
            Suite::Grad => "grad",
            Suite::All => "all",
        };
        f.write_str(name)
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Suite::Oracle),
            "unbiased" => Ok(Suite::Unbiased),
            "em" => Ok(Suite::Em),
            "grad" => Ok(Suite::Grad),
            "all" => Ok(Suite::All),
            other => Err(Error::InvalidConfig(format!(
                "unknown suite {other:?}, expected one of {}",
                Suite::NAMES.join(", ")
            ))),
        }
    }
}

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub trials: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: impl Into<String>, tolerance: f64) -> Self {
        Check { name: name.into(), trials: 0, max_deviation: 0.0, tolerance, passed: true }
    }

    fn record(&mut self, deviation: f64) {
        self.trials += 1;
        if deviation.is_nan() || deviation > self.max_deviation {
            self.max_deviation = if deviation.is_nan() { f64::INFINITY } else { deviation };
        }
        self.passed = self.max_deviation <= self.tolerance;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl SuiteReport {
    fn new(suite: Suite, checks: Vec<Check>) -> Self {
        let passed = checks.iter().all(|c| c.passed);
        SuiteReport { suite, checks, passed }
    }

    pub fn max_deviation(&self) -> f64 {
        self.checks.iter().map(|c| c.max_deviation).fold(0.0, f64::max)
    }
}

/// Runs `suite` (every part of it for [`Suite::All`]) with the given seed.
pub fn run(suite: Suite, seed: u64) -> Result<Vec<SuiteReport>> {
    suite
        .parts()
        .into_iter()
        .map(|s| match s {
            Suite::Oracle => oracle_suite(seed, 200),
            Suite::Unbiased => unbiased_suite(seed, 20),
            Suite::Em => em_suite(seed, 50, 100),
            Suite::Grad => grad_suite(seed),
            Suite::All => unreachable!(),
        })
        .collect()
}

/// Class probabilities from Gaussian logits; `scale` controls how peaked
/// they get.
pub fn random_eta(rng: &mut Rng, k: usize, scale: f64) -> ClassProbabilities {
    let normal = Normal::new(0.0, scale).expect("positive scale");
    let logits: Vec<f64> = (0..k).map(|_| normal.sample(rng)).collect();
    ClassProbabilities::from_logits(&logits)
}

/// A task with random `k` (and `m` where it is free) inside the oracle's
/// enumeration range.
pub fn random_task(rng: &mut Rng, kind: TaskKind) -> Task {
    let k = if kind == TaskKind::Mil { 2 } else { rng.random_range(2..=5) };
    let m = kind.fixed_group_size().unwrap_or_else(|| rng.random_range(2..=6));
    Task::new(kind, m, k).expect("valid by construction")
}

fn random_label(rng: &mut Rng, task: &Task) -> Result<AggregateLabel> {
    let zs = task.enumerate_z()?;
    Ok(zs[rng.random_range(0..zs.len())].clone())
}

fn random_etas(rng: &mut Rng, task: &Task) -> Vec<ClassProbabilities> {
    let scale = [0.5, 2.0, 6.0][rng.random_range(0..3)];
    (0..task.m()).map(|_| random_eta(rng, task.k(), scale)).collect()
}

/// Closed-form posteriors against enumeration, plus the marginal and
/// normalization identities.
pub fn oracle_suite(seed: u64, trials: usize) -> Result<SuiteReport> {
    let mut rng = rng::seeded(seed, streams::VERIFY);
    let mut checks = Vec::new();
    let mut marginal = Check::new("marginalization", ORACLE_TOL);
    let mut normal = Check::new("normalization", ORACLE_TOL);
    for kind in TaskKind::ALL {
        let mut check = Check::new(format!("oracle/{kind}"), ORACLE_TOL);
        for trial in 0..trials {
            // a few long MIL bags exercise the log-space products
            let task = if kind == TaskKind::Mil && trial % 20 == 0 {
                Task::new(kind, 12, 2)?
            } else {
                random_task(&mut rng, kind)
            };
            let etas = random_etas(&mut rng, &task);
            let z = random_label(&mut rng, &task)?;
            let closed = posterior::posterior(&task, &etas, &z)?;
            let brute = brute_force_posterior(&task, &etas, &z)?;
            check.record(posterior_deviation(&closed, &brute));
            let worst_row = closed.joint.iter().map(|r| (r.iter().sum::<f64>() - closed.pz).abs()).fold(0.0, f64::max);
            marginal.record(worst_row);
            let mut total = 0.0;
            for z in task.enumerate_z()? {
                total += posterior::posterior(&task, &etas, &z)?.pz;
            }
            normal.record((total - 1.0).abs());
        }
        checks.push(check);
    }
    checks.push(marginal);
    checks.push(normal);
    Ok(SuiteReport::new(Suite::Oracle, checks))
}

fn posterior_deviation(a: &posterior::GroupPosterior, b: &posterior::GroupPosterior) -> f64 {
    let joint = a.joint.iter().flatten().zip(b.joint.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    joint.max((a.pz - b.pz).abs())
}

/// A finite instance space: `p(x)` and `p(y | x)` for each point.
#[derive(Debug, Clone)]
pub struct FiniteDomain {
    pub px: Vec<f64>,
    pub eta: Vec<ClassProbabilities>,
}

impl FiniteDomain {
    pub fn random(rng: &mut Rng, size: usize, k: usize) -> Self {
        let raw: Vec<f64> = (0..size).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let px = raw.iter().map(|p| p / total).collect();
        let eta = (0..size).map(|_| random_eta(rng, k, 1.5)).collect();
        FiniteDomain { px, eta }
    }

    pub fn size(&self) -> usize {
        self.px.len()
    }

    /// One-hot feature vector of point `x`.
    pub fn features(&self, x: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.size()];
        v[x] = 1.0;
        v
    }
}

/// `R(f) = E_{x,y}[L(f(x), y)]` with cross-entropy.
pub fn classification_risk(domain: &FiniteDomain, model: &Model) -> Result<f64> {
    let mut risk = 0.0;
    for x in 0..domain.size() {
        let logits = model.class_logits(&domain.features(x))?;
        let mut g = vec![0.0; logits.len()];
        for (y, &p) in domain.eta[x].iter().enumerate() {
            risk += domain.px[x] * p * CrossEntropy.value_and_grad(&logits, y, &mut g);
        }
    }
    Ok(risk)
}

/// `E[L_agg]` over groups drawn i.i.d. from the domain, labels drawn from
/// `p(y | x)`, and weights from the true `p(y | x)`, by exhaustive sums.
pub fn expected_aggregate_loss(domain: &FiniteDomain, task: &Task, model: &Model) -> Result<f64> {
    let m = task.m();
    let mut expectation = 0.0;
    let mut failure = None;
    for_each_tuple(m, domain.size(), |xs| {
        if failure.is_some() {
            return;
        }
        let px: f64 = xs.iter().map(|&x| domain.px[x]).product();
        let etas: Vec<ClassProbabilities> = xs.iter().map(|&x| domain.eta[x].clone()).collect();
        let feats: Vec<Vec<f64>> = xs.iter().map(|&x| domain.features(x)).collect();
        let result = (|| -> Result<f64> {
            let mut inner = 0.0;
            for z in task.enumerate_z()? {
                let post = posterior::posterior(task, &etas, &z)?;
                let Some(w) = compute_weights(&post) else { continue };
                let mut scratch = model.zero_grads();
                inner += post.pz * aggregate_loss(model, &feats, &w, &CrossEntropy, 0.0, &mut scratch)?;
            }
            Ok(inner)
        })();
        match result {
            Ok(v) => expectation += px * v,
            Err(e) => failure = Some(e),
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(expectation),
    }
}

/// Exhaustive `E[L_agg] = R(f)` on small finite domains.
pub fn unbiased_suite(seed: u64, classifiers: usize) -> Result<SuiteReport> {
    let mut rng = rng::seeded(seed, streams::VERIFY + 100);
    let tasks = [
        Task::new(TaskKind::Pairwise, 2, 3)?,
        Task::new(TaskKind::Triplet, 3, 3)?,
        Task::new(TaskKind::Mil, 3, 2)?,
        Task::new(TaskKind::Llp, 3, 3)?,
        Task::new(TaskKind::Rank, 2, 3)?,
        Task::new(TaskKind::OrdinalTriplet, 3, 3)?,
    ];
    let mut checks = Vec::new();
    for task in tasks {
        let mut check = Check::new(format!("unbiased/{}", task.kind()), UNBIASED_TOL);
        for c in 0..classifiers {
            let size = rng.random_range(2..=5);
            let domain = FiniteDomain::random(&mut rng, size, task.k());
            let head = if task.kind() == TaskKind::Mil { Head::Sigmoid } else { Head::Softmax };
            let arch = Architecture::Linear { d: size, outputs: head.outputs_for(task.k()) };
            let model = Model::new(arch, head, seed.wrapping_add(c as u64));
            // spread the logits beyond the init range
            let params: Vec<f64> = model.params().iter().map(|p| p * 4.0 + rng.random_range(-1.0..1.0)).collect();
            let model = Model::from_params(arch, head, params)?;
            let risk = classification_risk(&domain, &model)?;
            let agg = expected_aggregate_loss(&domain, &task, &model)?;
            check.record((risk - agg).abs());
        }
        checks.push(check);
    }
    Ok(SuiteReport::new(Suite::Unbiased, checks))
}

/// A random distribution over the tuples of `omega`, sometimes mixed with
/// `omega` itself so perturbations near the optimum are covered.
pub fn perturb_omega(rng: &mut Rng, omega: &TupleDistribution) -> TupleDistribution {
    let n = omega.weights.len();
    let raw: Vec<f64> = (0..n).map(|_| -rng.random_range(1e-12f64..1.0).ln()).collect();
    let total: f64 = raw.iter().sum();
    let mix = [1.0, 0.5, 0.01, 1e-4][rng.random_range(0..4)];
    let weights = omega.weights.iter().zip(&raw).map(|(w, r)| (1.0 - mix) * w + mix * r / total).collect();
    TupleDistribution { tuples: omega.tuples.clone(), weights }
}

/// The E-step bound equals `log p(z | x)`; perturbed bounds stay below it.
pub fn em_suite(seed: u64, groups_per_task: usize, perturbations: usize) -> Result<SuiteReport> {
    let mut rng = rng::seeded(seed, streams::VERIFY + 200);
    let mut checks = Vec::new();
    let mut slack = Check::new("jensen/perturbed", JENSEN_SLACK);
    for kind in TaskKind::ALL {
        let mut check = Check::new(format!("jensen/{kind}"), JENSEN_TOL);
        for _ in 0..groups_per_task {
            let task = random_task(&mut rng, kind);
            if (task.k() as u128).pow(task.m() as u32) > 10_000 {
                continue;
            }
            let etas = random_etas(&mut rng, &task);
            let z = random_label(&mut rng, &task)?;
            let log_pz = posterior::posterior(&task, &etas, &z)?.pz.ln();
            let Ok(omega) = estep_omega(&task, &etas, &z) else { continue };
            check.record((em_lower_bound(&task, &etas, &z, &omega)? - log_pz).abs());
            for _ in 0..perturbations {
                let w = perturb_omega(&mut rng, &omega);
                let bound = em_lower_bound(&task, &etas, &z, &w)?;
                slack.record((bound - log_pz).max(0.0));
            }
        }
        checks.push(check);
    }
    checks.push(slack);
    Ok(SuiteReport::new(Suite::Em, checks))
}

/// `||a - b|| / (||a|| + ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` at `model`'s parameters.
pub fn numeric_gradient(model: &Model, h: f64, mut f: impl FnMut(&Model) -> Result<f64>) -> Result<Vec<f64>> {
    let mut probe = model.clone();
    let mut grad = vec![0.0; model.params().len()];
    for (i, g) in grad.iter_mut().enumerate() {
        let orig = model.params()[i];
        probe.params_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.params_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.params_mut()[i] = orig;
        *g = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

fn heads_for(kind: TaskKind) -> Vec<(Head, usize)> {
    match kind {
        TaskKind::Mil => vec![(Head::Sigmoid, 2), (Head::Softmax, 2)],
        _ => vec![(Head::Softmax, 3), (Head::Cumulative, 3), (Head::Sigmoid, 2)],
    }
}

/// Analytic gradients of both losses against central differences, for
/// linear and MLP models under every head.
pub fn grad_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = rng::seeded(seed, streams::VERIFY + 300);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut checks = Vec::new();
    for kind in TaskKind::ALL {
        let mut agg_check = Check::new(format!("grad/aggregate/{kind}"), GRAD_TOL);
        let mut ll_check = Check::new(format!("grad/loglik/{kind}"), GRAD_TOL);
        for (head, k) in heads_for(kind) {
            let m = kind.fixed_group_size().unwrap_or(3);
            let task = Task::new(kind, m, k)?;
            let d = 3;
            for arch in [
                Architecture::Linear { d, outputs: head.outputs_for(k) },
                Architecture::Mlp { d, hidden: 6, outputs: head.outputs_for(k) },
            ] {
                let model = Model::new(arch, head, rng.next_u64());
                let xs: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| normal.sample(&mut rng)).collect()).collect();
                let z = random_label(&mut rng, &task)?;
                let weights = random_weights(&mut rng, m, k);

                let mut analytic = model.zero_grads();
                aggregate_loss(&model, &xs, &weights, &CrossEntropy, 1.0, &mut analytic)?;
                let numeric = numeric_gradient(&model, FD_STEP, |mm| {
                    let mut scratch = mm.zero_grads();
                    aggregate_loss(mm, &xs, &weights, &CrossEntropy, 0.0, &mut scratch)
                })?;
                agg_check.record(relative_error(&analytic, &numeric));

                let mut analytic = model.zero_grads();
                loglik_loss(&model, &task, &xs, &z, 1.0, &mut analytic)?;
                let numeric = numeric_gradient(&model, FD_STEP, |mm| {
                    let mut scratch = mm.zero_grads();
                    loglik_loss(mm, &task, &xs, &z, 0.0, &mut scratch)
                })?;
                ll_check.record(relative_error(&analytic, &numeric));
            }
        }
        checks.push(agg_check);
        checks.push(ll_check);
    }
    Ok(SuiteReport::new(Suite::Grad, checks))
}

fn random_weights(rng: &mut Rng, m: usize, k: usize) -> WeightMatrix {
    let rows = (0..m).map(|_| random_eta(rng, k, 1.0).into_inner()).collect();
    WeightMatrix::new(rows).expect("softmax rows are distributions")
}
