//! Label proportions by dynamic programming over partial count vectors.
//!
//! A state is a count vector `c` with `0 <= c_j <= z_j`, packed into a
//! mixed-radix index. `forward[i][c]` is the probability that instances
//! `0..i` produce counts `c`; `backward[i][c]` the probability that instances
//! `i..m` do. Then
//!
//! ```text
//! p(z | x)          = forward[m][z]
//! p(z, y_i = j | x) = eta_i[j] * sum_c forward[i][c] * backward[i+1][z - c - e_j]
//! ```
//!
//! which costs `O(m * k * S)` for `S = prod_j (z_j + 1)` states instead of
//! enumerating `k^m` tuples.

use super::{ClassProbabilities, GroupPosterior};
use crate::error::{Error, Result};

/// Largest state space the dynamic program will allocate.
pub const MAX_DP_STATES: u128 = 10_000_000;

struct StateSpace {
    z: Vec<usize>,
    stride: Vec<usize>,
    len: usize,
}

impl StateSpace {
    fn new(z: &[usize]) -> Result<Self> {
        let count = z.iter().try_fold(1u128, |acc, &c| acc.checked_mul(c as u128 + 1));
        let count = count.unwrap_or(u128::MAX);
        if count > MAX_DP_STATES {
            return Err(Error::EnumerationBound { count, bound: MAX_DP_STATES });
        }
        let mut stride = Vec::with_capacity(z.len());
        let mut acc = 1;
        for &c in z {
            stride.push(acc);
            acc *= c + 1;
        }
        Ok(StateSpace { z: z.to_vec(), stride, len: acc })
    }

    fn digit(&self, state: usize, j: usize) -> usize {
        (state / self.stride[j]) % (self.z[j] + 1)
    }

    fn full(&self) -> usize {
        self.len - 1
    }

    /// Adds one instance with class distribution `p` to a layer.
    fn push(&self, from: &[f64], p: &[f64], to: &mut [f64]) {
        to.iter_mut().for_each(|v| *v = 0.0);
        for (s, &mass) in from.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for (j, &pj) in p.iter().enumerate() {
                if self.digit(s, j) < self.z[j] {
                    to[s + self.stride[j]] += mass * pj;
                }
            }
        }
    }
}

/// Label proportions, `z_j = #{i : y_i = j}` given as a count vector.
pub fn posterior_llp(etas: &[ClassProbabilities], z: &[usize]) -> Result<GroupPosterior> {
    let m = etas.len();
    let k = z.len();
    if let Some(bad) = etas.iter().find(|e| e.k() != k) {
        return Err(Error::Dimension { expected: k, got: bad.k() });
    }
    let total: usize = z.iter().sum();
    if total != m {
        return Err(Error::AggregateMismatch(format!("counts sum to {total}, expected m = {m}")));
    }
    let space = StateSpace::new(z)?;
    let probs: Vec<Vec<f64>> = etas.iter().map(|e| e.clamped()).collect();

    let mut forward = vec![vec![0.0; space.len]; m + 1];
    forward[0][0] = 1.0;
    for i in 0..m {
        let (done, rest) = forward.split_at_mut(i + 1);
        space.push(&done[i], &probs[i], &mut rest[0]);
    }
    let mut backward = vec![vec![0.0; space.len]; m + 1];
    backward[m][0] = 1.0;
    for i in (0..m).rev() {
        let (head, tail) = backward.split_at_mut(i + 1);
        space.push(&tail[0], &probs[i], &mut head[i]);
    }

    let full = space.full();
    let mut joint = vec![vec![0.0; k]; m];
    for i in 0..m {
        for j in 0..k {
            if z[j] == 0 {
                continue;
            }
            let mut acc = 0.0;
            for (s, &f) in forward[i].iter().enumerate() {
                if f == 0.0 || space.digit(s, j) >= z[j] {
                    continue;
                }
                acc += f * backward[i + 1][full - s - space.stride[j]];
            }
            joint[i][j] = probs[i][j] * acc;
        }
    }
    Ok(GroupPosterior { pz: forward[m][full], joint }.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cp(v: &[f64]) -> ClassProbabilities {
        ClassProbabilities::new(v.to_vec()).unwrap()
    }

    #[test]
    fn two_by_two_worked_example() {
        // tuples (1,2) -> 0.7 * 0.6 = 0.42 and (2,1) -> 0.3 * 0.4 = 0.12
        let p = posterior_llp(&[cp(&[0.7, 0.3]), cp(&[0.4, 0.6])], &[1, 1]).unwrap();
        assert!((p.pz - 0.54).abs() < 1e-12);
        assert!((p.joint[0][0] - 0.42).abs() < 1e-12);
        assert!((p.joint[0][1] - 0.12).abs() < 1e-12);
    }

    #[test]
    fn all_in_one_class() {
        let etas = [cp(&[0.5, 0.2, 0.3]), cp(&[0.9, 0.05, 0.05]), cp(&[0.25, 0.25, 0.5])];
        let p = posterior_llp(&etas, &[3, 0, 0]).unwrap();
        let expected = 0.5 * 0.9 * 0.25;
        assert!((p.pz - expected).abs() < 1e-12);
        for row in &p.joint {
            assert!((row[0] - expected).abs() < 1e-12);
            assert_eq!(row[1], 0.0);
            assert_eq!(row[2], 0.0);
        }
    }

    #[test]
    fn infeasible_counts_have_zero_probability_not_error() {
        let etas = [cp(&[1.0, 0.0]), cp(&[1.0, 0.0])];
        let p = posterior_llp(&etas, &[0, 2]).unwrap();
        assert!(p.pz < 1e-20);
        assert!(posterior_llp(&etas, &[1, 2]).is_err());
    }
}
