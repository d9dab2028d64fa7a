//! Group posteriors `p(z | x_1:m)` and `p(z, y_i = j | x_1:m)` computed from
//! per-instance class probabilities.
//!
//! Each task has a closed form (a dynamic program for label proportions);
//! [`brute_force_posterior`] sums over every label tuple and serves as the
//! reference for all of them.
//!
//! Class probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before they
//! enter products. The ordinal tasks work on cumulative probabilities and use
//! them unclamped.

mod brute;
mod llp;
mod ordinal;

use std::ops::Deref;

use crate::aggregate::{AggregateLabel, Task, TaskKind};
use crate::error::{Error, Result};

pub use brute::{brute_force_posterior, MAX_TUPLES};
pub use llp::{posterior_llp, MAX_DP_STATES};
pub use ordinal::{posterior_ordinal_triplet, posterior_rank};

/// Clamp applied to class probabilities before products, and floor applied
/// to `p(z | x)` wherever it is a divisor or under a logarithm.
pub const PROB_EPS: f64 = 1e-12;

/// Bags larger than this take their products in log space.
pub const LOG_SPACE_MIN_M: usize = 9;

const SIMPLEX_TOL: f64 = 1e-9;

/// A distribution over `k` classes for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbabilities(Vec<f64>);

impl ClassProbabilities {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidProbabilities("no classes".into()));
        }
        if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidProbabilities(format!("{probs:?} has entries outside [0, 1]")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidProbabilities(format!("{probs:?} sums to {total}")));
        }
        Ok(ClassProbabilities(probs))
    }

    pub fn uniform(k: usize) -> Self {
        ClassProbabilities(vec![1.0 / k as f64; k])
    }

    pub fn one_hot(k: usize, class: usize) -> Self {
        let mut p = vec![0.0; k];
        p[class] = 1.0;
        ClassProbabilities(p)
    }

    /// Softmax, stabilized by subtracting the maximum logit.
    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        ClassProbabilities(p)
    }

    /// `(1 - sigmoid(f), sigmoid(f))` for a single binary logit.
    pub fn from_binary_logit(f: f64) -> Self {
        let p1 = if f >= 0.0 { 1.0 / (1.0 + (-f).exp()) } else { f.exp() / (1.0 + f.exp()) };
        ClassProbabilities(vec![1.0 - p1, p1])
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Running sums `(0, p_1, p_1 + p_2, ..., 1)`.
    pub fn cumulative(&self) -> CumulativeProbabilities {
        CumulativeProbabilities::from_probs(self.0.clone())
    }

    fn clamped(&self) -> Vec<f64> {
        self.0.iter().map(|&p| clamp_prob(p)).collect()
    }
}

impl Deref for ClassProbabilities {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// `cum[j] = p(y <= j)` for 1-based classes, with `cum[0] = 0` and `cum[k] = 1`.
/// The class probabilities are kept alongside, so tail and interval masses
/// are summed directly instead of taken as differences of running sums.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeProbabilities {
    cum: Vec<f64>,
    probs: Vec<f64>,
}

impl CumulativeProbabilities {
    pub fn new(cum: Vec<f64>) -> Result<Self> {
        if cum.len() < 2 {
            return Err(Error::InvalidProbabilities("cumulative vector needs k + 1 >= 2 entries".into()));
        }
        if cum[0].abs() > SIMPLEX_TOL || (cum[cum.len() - 1] - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidProbabilities(format!("{cum:?} must start at 0 and end at 1")));
        }
        if cum.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidProbabilities(format!("{cum:?} is not monotone")));
        }
        let mut cum = cum;
        let k = cum.len() - 1;
        cum[0] = 0.0;
        cum[k] = 1.0;
        let probs = cum.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
        Ok(CumulativeProbabilities { cum, probs })
    }

    fn from_probs(probs: Vec<f64>) -> Self {
        let mut cum = Vec::with_capacity(probs.len() + 1);
        cum.push(0.0);
        let mut acc = 0.0;
        for &p in &probs[..probs.len() - 1] {
            acc += p;
            cum.push(acc.min(1.0));
        }
        cum.push(1.0);
        CumulativeProbabilities { cum, probs }
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    /// `cum[index]` with the index clamped into `[0, k]`.
    pub fn at(&self, index: i64) -> f64 {
        self.cum[index.clamp(0, self.k() as i64) as usize]
    }

    /// `p(y = j)` for a 1-based class `j`.
    pub fn prob(&self, j: usize) -> f64 {
        self.probs[j - 1]
    }

    /// `p(lo <= y <= hi)` for 1-based bounds, clamped into `[1, k]`.
    pub fn mass(&self, lo: i64, hi: i64) -> f64 {
        let lo = lo.max(1);
        let hi = hi.min(self.k() as i64);
        if lo > hi {
            return 0.0;
        }
        self.probs[lo as usize - 1..hi as usize].iter().sum()
    }

    pub fn class_probabilities(&self) -> ClassProbabilities {
        ClassProbabilities(self.probs.clone())
    }
}

impl Deref for CumulativeProbabilities {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.cum
    }
}

/// `p(z | x_1:m)` and the `m x k` matrix `p(z, y_i = j | x_1:m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupPosterior {
    pub pz: f64,
    pub joint: Vec<Vec<f64>>,
}

impl GroupPosterior {
    pub fn m(&self) -> usize {
        self.joint.len()
    }

    pub fn k(&self) -> usize {
        self.joint.first().map_or(0, Vec::len)
    }

    /// Round-off can leave entries a hair below zero; snap them to zero.
    fn finalize(mut self) -> Self {
        debug_assert!(self.pz >= -1e-9, "pz = {}", self.pz);
        self.pz = self.pz.max(0.0);
        for row in &mut self.joint {
            for v in row.iter_mut() {
                debug_assert!(*v >= -1e-9, "joint entry {v}");
                *v = v.max(0.0);
            }
        }
        self
    }
}

pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Dispatches to the task's closed form. `etas[i]` are the class
/// probabilities of instance `i`; the ordinal tasks take their running sums.
pub fn posterior(task: &Task, etas: &[ClassProbabilities], z: &AggregateLabel) -> Result<GroupPosterior> {
    check_inputs(task, etas, z)?;
    match task.kind() {
        TaskKind::Pairwise => posterior_pairwise(&etas[0], &etas[1], binary(z)),
        TaskKind::Triplet => posterior_triplet(&etas[0], &etas[1], &etas[2], binary(z)),
        TaskKind::Llp => posterior_llp(etas, z.as_counts().expect("checked")),
        TaskKind::Mil => posterior_mil(etas, binary(z)),
        TaskKind::Rank => posterior_rank(&etas[0].cumulative(), &etas[1].cumulative(), binary(z)),
        TaskKind::OrdinalTriplet => {
            posterior_ordinal_triplet(&etas[0].cumulative(), &etas[1].cumulative(), &etas[2].cumulative(), binary(z))
        }
    }
}

fn binary(z: &AggregateLabel) -> bool {
    z.as_binary().expect("checked by check_inputs")
}

pub(crate) fn check_inputs(task: &Task, etas: &[ClassProbabilities], z: &AggregateLabel) -> Result<()> {
    if etas.len() != task.m() {
        return Err(Error::GroupSize { expected: task.m(), got: etas.len() });
    }
    if let Some(bad) = etas.iter().find(|e| e.k() != task.k()) {
        return Err(Error::Dimension { expected: task.k(), got: bad.k() });
    }
    task.check_label(z)
}

fn same_k(etas: &[&ClassProbabilities]) -> Result<usize> {
    let k = etas[0].k();
    match etas.iter().find(|e| e.k() != k) {
        Some(bad) => Err(Error::Dimension { expected: k, got: bad.k() }),
        None => Ok(k),
    }
}

/// Pairwise similarity, `z = [y1 == y2]`.
pub fn posterior_pairwise(eta1: &ClassProbabilities, eta2: &ClassProbabilities, z: bool) -> Result<GroupPosterior> {
    same_k(&[eta1, eta2])?;
    let (a, b) = (eta1.clamped(), eta2.clamped());
    let same: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
    let p_same: f64 = same.iter().sum();
    let post = if z {
        GroupPosterior { pz: p_same, joint: vec![same.clone(), same] }
    } else {
        let row1 = a.iter().zip(&b).map(|(x, y)| (1.0 - y) * x).collect();
        let row2 = a.iter().zip(&b).map(|(x, y)| (1.0 - x) * y).collect();
        GroupPosterior { pz: 1.0 - p_same, joint: vec![row1, row2] }
    };
    Ok(post.finalize())
}

/// Triplet comparison, `z = [d(y1,y2) < d(y1,y3)]` with `d(y,y') = [y != y']`,
/// i.e. `z = 1` exactly when `y1 == y2 != y3`.
pub fn posterior_triplet(
    eta1: &ClassProbabilities,
    eta2: &ClassProbabilities,
    eta3: &ClassProbabilities,
    z: bool,
) -> Result<GroupPosterior> {
    same_k(&[eta1, eta2, eta3])?;
    let (a, b, c) = (eta1.clamped(), eta2.clamped(), eta3.clamped());
    let k = a.len();
    let same12: Vec<f64> = (0..k).map(|j| a[j] * b[j]).collect();
    let total_same12: f64 = same12.iter().sum();
    let p1: f64 = (0..k).map(|j| same12[j] * (1.0 - c[j])).sum();
    // p(y1 == y2 == v for some v != j)
    let same_other = |j: usize| total_same12 - same12[j];
    let post = if z {
        let row: Vec<f64> = (0..k).map(|j| same12[j] * (1.0 - c[j])).collect();
        let row3 = (0..k).map(|j| same_other(j) * c[j]).collect();
        GroupPosterior { pz: p1, joint: vec![row.clone(), row, row3] }
    } else {
        let row1 = (0..k).map(|j| (1.0 - b[j] * (1.0 - c[j])) * a[j]).collect();
        let row2 = (0..k).map(|j| (1.0 - a[j] * (1.0 - c[j])) * b[j]).collect();
        let row3 = (0..k).map(|j| (1.0 - same_other(j)) * c[j]).collect();
        GroupPosterior { pz: 1.0 - p1, joint: vec![row1, row2, row3] }
    };
    Ok(post.finalize())
}

/// Multiple-instance learning, `z = max(y)` with class `1` positive.
pub fn posterior_mil(etas: &[ClassProbabilities], z: bool) -> Result<GroupPosterior> {
    if let Some(bad) = etas.iter().find(|e| e.k() != 2) {
        return Err(Error::InvalidTask(format!("mil needs k = 2, got {}", bad.k())));
    }
    let m = etas.len();
    if m == 0 {
        return Err(Error::EmptyInput);
    }
    let neg: Vec<f64> = etas.iter().map(|e| clamp_prob(e[0])).collect();
    let pos: Vec<f64> = etas.iter().map(|e| clamp_prob(e[1])).collect();

    // all_neg = prod_i neg_i and others[i] = prod_{j != i} neg_j, each given
    // both as a value and as 1 - value computed without cancellation.
    let (all_neg, not_all_neg, others, not_others): (f64, f64, Vec<f64>, Vec<f64>) = if m >= LOG_SPACE_MIN_M {
        let logs: Vec<f64> = neg.iter().map(|p| p.ln()).collect();
        let total: f64 = logs.iter().sum();
        let others_log: Vec<f64> = logs.iter().map(|l| total - l).collect();
        (
            total.exp(),
            -total.exp_m1(),
            others_log.iter().map(|l| l.exp()).collect(),
            others_log.iter().map(|l| -l.exp_m1()).collect(),
        )
    } else {
        let mut prefix = vec![1.0; m + 1];
        for i in 0..m {
            prefix[i + 1] = prefix[i] * neg[i];
        }
        let mut suffix = vec![1.0; m + 1];
        for i in (0..m).rev() {
            suffix[i] = suffix[i + 1] * neg[i];
        }
        let others: Vec<f64> = (0..m).map(|i| prefix[i] * suffix[i + 1]).collect();
        let not_others = others.iter().map(|o| 1.0 - o).collect();
        (prefix[m], 1.0 - prefix[m], others, not_others)
    };

    let post = if z {
        let joint = (0..m).map(|i| vec![not_others[i] * neg[i], pos[i]]).collect();
        GroupPosterior { pz: not_all_neg, joint }
    } else {
        let joint = (0..m).map(|i| vec![others[i] * neg[i], 0.0]).collect();
        GroupPosterior { pz: all_neg, joint }
    };
    Ok(post.finalize())
}
