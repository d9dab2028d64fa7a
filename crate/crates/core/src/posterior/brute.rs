use super::{check_inputs, clamp_prob, ClassProbabilities, GroupPosterior};
use crate::aggregate::{for_each_tuple, AggregateLabel, Task};
use crate::error::{Error, Result};

/// Largest `k^m` the enumeration accepts.
pub const MAX_TUPLES: u128 = 10_000_000;

/// Reference posterior: sums `prod_i eta_i[y_i]` over every label tuple `y`
/// with `g(y) = z`, and over those with `y_i = j` for each joint entry.
///
/// Probabilities are clamped the same way as in the closed forms (not for
/// the ordinal tasks, whose closed forms work on cumulative sums).
pub fn brute_force_posterior(task: &Task, etas: &[ClassProbabilities], z: &AggregateLabel) -> Result<GroupPosterior> {
    check_inputs(task, etas, z)?;
    let (m, k) = (task.m(), task.k());
    let count = (k as u128).checked_pow(m as u32).unwrap_or(u128::MAX);
    if count > MAX_TUPLES {
        return Err(Error::EnumerationBound { count, bound: MAX_TUPLES });
    }
    let probs: Vec<Vec<f64>> = etas
        .iter()
        .map(|e| if task.kind().is_ordinal() { e.to_vec() } else { e.iter().map(|&p| clamp_prob(p)).collect() })
        .collect();
    let mut pz = 0.0;
    let mut joint = vec![vec![0.0; k]; m];
    for_each_tuple(m, k, |y| {
        if task.aggregate_unchecked(y) != *z {
            return;
        }
        let p: f64 = y.iter().zip(&probs).map(|(&yi, pi)| pi[yi]).product();
        pz += p;
        for (row, &yi) in joint.iter_mut().zip(y) {
            row[yi] += p;
        }
    });
    Ok(GroupPosterior { pz, joint }.finalize())
}
