//! Ordinal tasks over cumulative probabilities. Classes are 1-based here to
//! line up with `cum[j] = p(y <= j)`; output rows are indexed `j - 1`.

use super::{CumulativeProbabilities, GroupPosterior};
use crate::error::{Error, Result};

fn same_k(cums: &[&CumulativeProbabilities]) -> Result<usize> {
    let k = cums[0].k();
    match cums.iter().find(|c| c.k() != k) {
        Some(bad) => Err(Error::Dimension { expected: k, got: bad.k() }),
        None => Ok(k),
    }
}

/// Ordinal ranks, `z = [y1 < y2]`.
pub fn posterior_rank(cum1: &CumulativeProbabilities, cum2: &CumulativeProbabilities, z: bool) -> Result<GroupPosterior> {
    let k = same_k(&[cum1, cum2])? as i64;
    let mut row1 = Vec::with_capacity(k as usize);
    let mut row2 = Vec::with_capacity(k as usize);
    for j in 1..=k {
        let (p1, p2) = (cum1.prob(j as usize), cum2.prob(j as usize));
        if z {
            row1.push(p1 * cum2.mass(j + 1, k));
            row2.push(p2 * cum1.mass(1, j - 1));
        } else {
            row1.push(p1 * cum2.mass(1, j));
            row2.push(p2 * cum1.mass(j, k));
        }
    }
    let pz = row1.iter().sum();
    Ok(GroupPosterior { pz, joint: vec![row1, row2] }.finalize())
}

/// `p(|y - center| < radius)` if `inside`, else `p(|y - center| >= radius)`.
fn within(cum: &CumulativeProbabilities, center: usize, radius: usize, inside: bool) -> f64 {
    let (c, r, k) = (center as i64, radius as i64, cum.k() as i64);
    if inside {
        cum.mass(c - r + 1, c + r - 1)
    } else {
        cum.mass(1, c - r) + cum.mass((c + r).max(c - r + 1), k)
    }
}

/// `p(|y - center| > radius)` if `beyond`, else `p(|y - center| <= radius)`.
fn outside(cum: &CumulativeProbabilities, center: usize, radius: usize, beyond: bool) -> f64 {
    let (c, r, k) = (center as i64, radius as i64, cum.k() as i64);
    if beyond {
        cum.mass(1, c - r - 1) + cum.mass(c + r + 1, k)
    } else {
        cum.mass(c - r, c + r)
    }
}

/// Ordinal triplets, `z = [|y1 - y2| < |y1 - y3|]`.
pub fn posterior_ordinal_triplet(
    cum1: &CumulativeProbabilities,
    cum2: &CumulativeProbabilities,
    cum3: &CumulativeProbabilities,
    z: bool,
) -> Result<GroupPosterior> {
    let k = same_k(&[cum1, cum2, cum3])?;
    let mut joint = vec![vec![0.0; k]; 3];
    for j in 1..=k {
        let (mut a1, mut a2, mut a3) = (0.0, 0.0, 0.0);
        for v in 1..=k {
            let d = j.abs_diff(v);
            // y1 = j, y3 = v: need |y2 - j| < |v - j|
            a1 += cum3.prob(v) * within(cum2, j, d, z);
            // y1 = v, y2 = j: need |y3 - v| > |j - v|
            a2 += cum1.prob(v) * outside(cum3, v, d, z);
            // y1 = v, y3 = j: need |y2 - v| < |j - v|
            a3 += cum1.prob(v) * within(cum2, v, d, z);
        }
        joint[0][j - 1] = a1 * cum1.prob(j);
        joint[1][j - 1] = a2 * cum2.prob(j);
        joint[2][j - 1] = a3 * cum3.prob(j);
    }
    let pz = joint[0].iter().sum();
    Ok(GroupPosterior { pz, joint }.finalize())
}
