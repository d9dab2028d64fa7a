//! The importance-weighted aggregate loss, the log-likelihood baseline, and
//! the Jensen lower bound behind the EM reading of training.
//!
//! For a group `x_1:m` with aggregate label `z`,
//!
//! ```text
//! L_agg(x, z; f) = 1/m * sum_i sum_j w[i][j] * L(x_i, j; f),
//! w[i][j]        = p(z, y_i = j | x) / p(z | x).
//! ```
//!
//! The weights are constants during the update: gradients never flow into
//! them.

use crate::aggregate::{for_each_tuple, AggregateLabel, Task};
use crate::data::AggregateObservation;
use crate::error::{Error, Result};
use crate::model::{probabilities, Model};
use crate::posterior::{self, clamp_prob, ClassProbabilities, GroupPosterior, PROB_EPS};

/// Largest `|Y^m|` the tuple-level bound enumerates.
pub const MAX_BOUND_TUPLES: u128 = 100_000;

/// Per-instance importance weights `w[i][j] = p(z, y_i = j | x) / p(z | x)`.
/// Each row is a distribution over classes.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    rows: Vec<Vec<f64>>,
}

impl WeightMatrix {
    /// Wraps explicit weights (one distribution per instance).
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        for row in &rows {
            let total: f64 = row.iter().sum();
            if row.iter().any(|&w| !(0.0..=1.0 + 1e-12).contains(&w)) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidProbabilities(format!("weight row {row:?} is not a distribution")));
            }
        }
        Ok(WeightMatrix { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }
}

/// E-step weights from a group posterior. `None` marks a degenerate group,
/// one whose `p(z | x)` is at or below [`PROB_EPS`]; such groups are skipped
/// in training rather than given exploding weights.
pub fn compute_weights(post: &GroupPosterior) -> Option<WeightMatrix> {
    if !(post.pz > PROB_EPS) {
        return None;
    }
    let rows = post
        .joint
        .iter()
        .map(|row| {
            let mut w: Vec<f64> = row.iter().map(|&v| (v / post.pz).clamp(0.0, 1.0)).collect();
            let total: f64 = w.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                w.iter_mut().for_each(|v| *v /= total);
            }
            w
        })
        .collect();
    Some(WeightMatrix { rows })
}

/// An ordinary per-instance classification loss on class logits.
pub trait InstanceLoss {
    /// Loss of predicting `logits` for true class `class`; writes
    /// `d loss / d logits` into `grad`.
    fn value_and_grad(&self, logits: &[f64], class: usize, grad: &mut [f64]) -> f64;

    /// `sum_j weights[j] * loss(logits, j)`, gradient written into `grad`.
    fn weighted(&self, logits: &[f64], weights: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut tmp = vec![0.0; logits.len()];
        let mut total = 0.0;
        for (j, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            total += w * self.value_and_grad(logits, j, &mut tmp);
            grad.iter_mut().zip(&tmp).for_each(|(g, t)| *g += w * t);
        }
        total
    }
}

/// Softmax cross-entropy. On the two class logits `(0, f)` of a binary head
/// this is the logistic loss.
#[derive(Debug, Clone, Copy, Default)]
pub struct CrossEntropy;

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

impl InstanceLoss for CrossEntropy {
    fn value_and_grad(&self, logits: &[f64], class: usize, grad: &mut [f64]) -> f64 {
        let lse = log_sum_exp(logits);
        for (g, &l) in grad.iter_mut().zip(logits) {
            *g = (l - lse).exp();
        }
        grad[class] -= 1.0;
        lse - logits[class]
    }

    fn weighted(&self, logits: &[f64], weights: &[f64], grad: &mut [f64]) -> f64 {
        let lse = log_sum_exp(logits);
        let total_w: f64 = weights.iter().sum();
        let mut value = 0.0;
        for ((g, &l), &w) in grad.iter_mut().zip(logits).zip(weights) {
            *g = total_w * (l - lse).exp() - w;
            value += w * (lse - l);
        }
        value
    }
}

/// Class probabilities of every instance in a group.
pub fn group_etas(model: &Model, xs: &[Vec<f64>]) -> Result<Vec<ClassProbabilities>> {
    xs.iter().map(|x| model.eta(x)).collect()
}

/// `L_agg` for one group with fixed weights. Adds `scale * d L_agg / d params`
/// into `grads` and returns the unscaled loss.
pub fn aggregate_loss(
    model: &Model,
    xs: &[Vec<f64>],
    weights: &WeightMatrix,
    loss: &impl InstanceLoss,
    scale: f64,
    grads: &mut [f64],
) -> Result<f64> {
    if weights.m() != xs.len() {
        return Err(Error::GroupSize { expected: weights.m(), got: xs.len() });
    }
    let m = xs.len() as f64;
    let head = model.head();
    let mut total = 0.0;
    for (x, w) in xs.iter().zip(weights.rows()) {
        let act = model.forward_cached(x)?;
        let logits = head.class_logits(act.output());
        if logits.len() != w.len() {
            return Err(Error::Dimension { expected: logits.len(), got: w.len() });
        }
        let mut g = vec![0.0; logits.len()];
        total += loss.weighted(&logits, w, &mut g);
        let upstream: Vec<f64> = head.pullback(&g).iter().map(|v| v * scale / m).collect();
        model.backward(&act, &upstream, grads)?;
    }
    Ok(total / m)
}

/// `-log p(z | x; theta)` for one group, differentiated end to end through
/// the posterior. Adds `scale * gradient` into `grads` and returns the
/// unscaled loss. `p(z | x)` is floored at [`PROB_EPS`]; a floored group
/// contributes no gradient.
///
/// `p(z | x)` is multilinear in the class probabilities, with
/// `d p(z|x) / d eta_i[j] = p(z, y_i = j | x) / eta_i[j]`, so through the
/// softmax the gradient for instance `i`'s class logits is `eta_i - w_i`.
pub fn loglik_loss(
    model: &Model,
    task: &Task,
    xs: &[Vec<f64>],
    z: &AggregateLabel,
    scale: f64,
    grads: &mut [f64],
) -> Result<f64> {
    let acts = xs.iter().map(|x| model.forward_cached(x)).collect::<Result<Vec<_>>>()?;
    let etas: Vec<ClassProbabilities> = acts.iter().map(|a| probabilities(model.head(), a.output())).collect();
    let post = posterior::posterior(task, &etas, z)?;
    let value = -post.pz.max(PROB_EPS).ln();
    let Some(weights) = compute_weights(&post) else {
        return Ok(value);
    };
    for ((act, eta), w) in acts.iter().zip(&etas).zip(weights.rows()) {
        let g: Vec<f64> = eta.iter().zip(w).map(|(e, w)| e - w).collect();
        let upstream: Vec<f64> = model.head().pullback(&g).iter().map(|v| v * scale).collect();
        model.backward(act, &upstream, grads)?;
    }
    Ok(value)
}

/// `L_agg` for a group with weights computed from the model's own
/// (detached) probabilities; `None` for a degenerate group.
pub fn self_weighted_loss(model: &Model, task: &Task, obs: &AggregateObservation) -> Result<Option<f64>> {
    let etas = group_etas(model, &obs.xs)?;
    let post = posterior::posterior(task, &etas, &obs.z)?;
    match compute_weights(&post) {
        Some(w) => {
            let mut scratch = model.zero_grads();
            Ok(Some(aggregate_loss(model, &obs.xs, &w, &CrossEntropy, 0.0, &mut scratch)?))
        }
        None => Ok(None),
    }
}

/// A distribution `omega` over label tuples, used by [`em_lower_bound`].
#[derive(Debug, Clone, PartialEq)]
pub struct TupleDistribution {
    pub tuples: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
}

fn check_bound_size(task: &Task) -> Result<()> {
    let count = (task.k() as u128).checked_pow(task.m() as u32).unwrap_or(u128::MAX);
    if count > MAX_BOUND_TUPLES {
        return Err(Error::EnumerationBound { count, bound: MAX_BOUND_TUPLES });
    }
    Ok(())
}

/// `S(z)`: every label tuple whose aggregate is `z`.
pub fn support(task: &Task, z: &AggregateLabel) -> Result<Vec<Vec<usize>>> {
    task.check_label(z)?;
    check_bound_size(task)?;
    let mut out = Vec::new();
    for_each_tuple(task.m(), task.k(), |y| {
        if task.aggregate_unchecked(y) == *z {
            out.push(y.to_vec());
        }
    });
    Ok(out)
}

fn tuple_probability(probs: &[Vec<f64>], y: &[usize]) -> f64 {
    y.iter().zip(probs).map(|(&yi, p)| p[yi]).product()
}

fn effective_probs(task: &Task, etas: &[ClassProbabilities]) -> Vec<Vec<f64>> {
    etas.iter()
        .map(|e| if task.kind().is_ordinal() { e.to_vec() } else { e.iter().map(|&p| clamp_prob(p)).collect() })
        .collect()
}

/// The E-step choice `omega(y) = p(y | x) / p(z | x)` over `S(z)`.
pub fn estep_omega(task: &Task, etas: &[ClassProbabilities], z: &AggregateLabel) -> Result<TupleDistribution> {
    posterior::check_inputs(task, etas, z)?;
    let tuples = support(task, z)?;
    let probs = effective_probs(task, etas);
    let p: Vec<f64> = tuples.iter().map(|y| tuple_probability(&probs, y)).collect();
    let pz: f64 = p.iter().sum();
    if !(pz > 0.0) {
        return Err(Error::InvalidOmega("p(z | x) is zero".into()));
    }
    Ok(TupleDistribution { tuples, weights: p.into_iter().map(|v| v / pz).collect() })
}

/// `sum_{y in S(z)} omega(y) * log(p(y, x; theta) / omega(y))` with the
/// `log p(x)` constant taken as zero, so the bound is at most `log p(z | x)`
/// and equals it at the E-step `omega`.
pub fn em_lower_bound(
    task: &Task,
    etas: &[ClassProbabilities],
    z: &AggregateLabel,
    omega: &TupleDistribution,
) -> Result<f64> {
    posterior::check_inputs(task, etas, z)?;
    check_bound_size(task)?;
    if omega.tuples.len() != omega.weights.len() {
        return Err(Error::InvalidOmega("tuple and weight counts differ".into()));
    }
    let total: f64 = omega.weights.iter().sum();
    if omega.weights.iter().any(|&w| !(0.0..=1.0).contains(&w)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidOmega(format!("weights sum to {total}")));
    }
    let probs = effective_probs(task, etas);
    let mut bound = 0.0;
    for (y, &w) in omega.tuples.iter().zip(&omega.weights) {
        if y.len() != task.m() || y.iter().any(|&c| c >= task.k()) || task.aggregate_unchecked(y) != *z {
            return Err(Error::InvalidOmega(format!("tuple {y:?} is not in S(z)")));
        }
        if w > 0.0 {
            bound += w * (tuple_probability(&probs, y) / w).ln();
        }
    }
    Ok(bound)
}
