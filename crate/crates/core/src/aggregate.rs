//! Supervision regimes: the aggregate function `g` that turns a hidden label
//! tuple into the observed aggregate label, and the space of aggregate labels.
//!
//! Class labels are 0-based everywhere. For multiple-instance learning the two
//! classes are `0` (negative) and `1` (positive); for the ordinal tasks the
//! class index carries the order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on the number of label-proportion compositions `enumerate_z`
/// will materialize.
pub const MAX_COMPOSITIONS: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// `z = [y1 == y2]`
    Pairwise,
    /// `z = [d(y1,y2) < d(y1,y3)]` with the 0/1 disagreement distance.
    Triplet,
    /// `z_j = #{i : y_i = j}`
    Llp,
    /// `z = max(y)` over binary labels.
    Mil,
    /// `z = [y1 < y2]`
    Rank,
    /// `z = [|y1-y2| < |y1-y3|]`
    OrdinalTriplet,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] = [
        TaskKind::Pairwise,
        TaskKind::Triplet,
        TaskKind::Llp,
        TaskKind::Mil,
        TaskKind::Rank,
        TaskKind::OrdinalTriplet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Pairwise => "pairwise",
            TaskKind::Triplet => "triplet",
            TaskKind::Llp => "llp",
            TaskKind::Mil => "mil",
            TaskKind::Rank => "rank",
            TaskKind::OrdinalTriplet => "ordinal_triplet",
        }
    }

    /// Group size fixed by the task, if any.
    pub fn fixed_group_size(self) -> Option<usize> {
        match self {
            TaskKind::Pairwise | TaskKind::Rank => Some(2),
            TaskKind::Triplet | TaskKind::OrdinalTriplet => Some(3),
            TaskKind::Llp | TaskKind::Mil => None,
        }
    }

    pub fn is_ordinal(self) -> bool {
        matches!(self, TaskKind::Rank | TaskKind::OrdinalTriplet)
    }

    /// Tasks whose supervision cannot tell class identities apart; evaluated
    /// with the permutation-invariant accuracy.
    pub fn is_permutation_invariant(self) -> bool {
        matches!(self, TaskKind::Pairwise | TaskKind::Triplet)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::UnknownTask(s.to_string()))
    }
}

/// A validated supervision regime: kind, group size `m` and class count `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTask", into = "RawTask")]
pub struct Task {
    kind: TaskKind,
    m: usize,
    k: usize,
}

#[derive(Serialize, Deserialize)]
struct RawTask {
    kind: TaskKind,
    m: usize,
    k: usize,
}

impl TryFrom<RawTask> for Task {
    type Error = Error;
    fn try_from(raw: RawTask) -> Result<Self> {
        Task::new(raw.kind, raw.m, raw.k)
    }
}

impl From<Task> for RawTask {
    fn from(t: Task) -> Self {
        RawTask { kind: t.kind, m: t.m, k: t.k }
    }
}

impl Task {
    pub fn new(kind: TaskKind, m: usize, k: usize) -> Result<Self> {
        if let Some(fixed) = kind.fixed_group_size() {
            if m != fixed {
                return Err(Error::InvalidTask(format!("{kind} requires m = {fixed}, got {m}")));
            }
        } else if m < 2 {
            return Err(Error::InvalidTask(format!("{kind} requires m >= 2, got {m}")));
        }
        if kind == TaskKind::Mil && k != 2 {
            return Err(Error::InvalidTask(format!("mil requires k = 2, got {k}")));
        }
        if matches!(kind, TaskKind::Pairwise | TaskKind::Triplet) && k < 2 {
            return Err(Error::InvalidTask(format!("{kind} requires k >= 2, got {k}")));
        }
        if k == 0 {
            return Err(Error::InvalidTask("k must be positive".into()));
        }
        Ok(Task { kind, m, k })
    }

    /// Task with the kind's fixed group size (`m` is ignored for fixed-size kinds).
    pub fn with_default_m(kind: TaskKind, m: usize, k: usize) -> Result<Self> {
        Task::new(kind, kind.fixed_group_size().unwrap_or(m), k)
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// `g(labels)`.
    pub fn aggregate_label(&self, labels: &[usize]) -> Result<AggregateLabel> {
        if labels.len() != self.m {
            return Err(Error::GroupSize { expected: self.m, got: labels.len() });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.k) {
            return Err(Error::LabelOutOfRange { label: bad, k: self.k });
        }
        Ok(self.aggregate_unchecked(labels))
    }

    pub(crate) fn aggregate_unchecked(&self, y: &[usize]) -> AggregateLabel {
        match self.kind {
            TaskKind::Pairwise => AggregateLabel::Binary(y[0] == y[1]),
            TaskKind::Triplet => {
                let d = |a: usize, b: usize| usize::from(a != b);
                AggregateLabel::Binary(d(y[0], y[1]) < d(y[0], y[2]))
            }
            TaskKind::Llp => {
                let mut counts = vec![0; self.k];
                for &yi in y {
                    counts[yi] += 1;
                }
                AggregateLabel::Counts(counts)
            }
            TaskKind::Mil => AggregateLabel::Binary(y.contains(&1)),
            TaskKind::Rank => AggregateLabel::Binary(y[0] < y[1]),
            TaskKind::OrdinalTriplet => {
                let d = |a: usize, b: usize| a.abs_diff(b);
                AggregateLabel::Binary(d(y[0], y[1]) < d(y[0], y[2]))
            }
        }
    }

    /// Checks that `z` lies in this task's aggregate label space.
    pub fn check_label(&self, z: &AggregateLabel) -> Result<()> {
        match (self.kind, z) {
            (TaskKind::Llp, AggregateLabel::Counts(c)) => {
                if c.len() != self.k {
                    return Err(Error::AggregateMismatch(format!(
                        "count vector has length {}, expected {}",
                        c.len(),
                        self.k
                    )));
                }
                let total: usize = c.iter().sum();
                if total != self.m {
                    return Err(Error::AggregateMismatch(format!(
                        "counts sum to {total}, expected m = {}",
                        self.m
                    )));
                }
                Ok(())
            }
            (TaskKind::Llp, AggregateLabel::Binary(_)) => {
                Err(Error::AggregateMismatch("llp needs a count vector".into()))
            }
            (_, AggregateLabel::Binary(_)) => Ok(()),
            (kind, AggregateLabel::Counts(_)) => {
                Err(Error::AggregateMismatch(format!("{kind} needs a binary label")))
            }
        }
    }

    /// Every feasible aggregate label, without duplicates. Binary tasks give
    /// `[0, 1]`; label proportions give all compositions of `m` into `k`
    /// parts, largest first component first.
    pub fn enumerate_z(&self) -> Result<Vec<AggregateLabel>> {
        if self.kind != TaskKind::Llp {
            return Ok(vec![AggregateLabel::Binary(false), AggregateLabel::Binary(true)]);
        }
        let count = binomial((self.m + self.k - 1) as u128, (self.k - 1) as u128);
        if count > MAX_COMPOSITIONS {
            return Err(Error::EnumerationBound { count, bound: MAX_COMPOSITIONS });
        }
        let mut out = Vec::with_capacity(count as usize);
        let mut current = vec![0; self.k];
        compositions(self.m, 0, &mut current, &mut out);
        Ok(out)
    }
}

fn compositions(remaining: usize, pos: usize, current: &mut Vec<usize>, out: &mut Vec<AggregateLabel>) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(AggregateLabel::Counts(current.clone()));
        return;
    }
    for first in (0..=remaining).rev() {
        current[pos] = first;
        compositions(remaining - first, pos + 1, current, out);
    }
}

pub(crate) fn binomial(n: u128, r: u128) -> u128 {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    (0..r).fold(1u128, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// The observed supervision for a group.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AggregateLabel {
    Binary(bool),
    /// Per-class counts; sums to the group size.
    Counts(Vec<usize>),
}

impl AggregateLabel {
    pub fn as_binary(&self) -> Option<bool> {
        match self {
            AggregateLabel::Binary(b) => Some(*b),
            AggregateLabel::Counts(_) => None,
        }
    }

    pub fn as_counts(&self) -> Option<&[usize]> {
        match self {
            AggregateLabel::Counts(c) => Some(c),
            AggregateLabel::Binary(_) => None,
        }
    }
}

impl From<bool> for AggregateLabel {
    fn from(b: bool) -> Self {
        AggregateLabel::Binary(b)
    }
}

impl From<Vec<usize>> for AggregateLabel {
    fn from(c: Vec<usize>) -> Self {
        AggregateLabel::Counts(c)
    }
}

impl fmt::Display for AggregateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AggregateLabel::Binary(b) => write!(f, "{}", u8::from(*b)),
            AggregateLabel::Counts(c) => write!(f, "{c:?}"),
        }
    }
}

// On the wire a binary label is a JSON bool (or 0/1) and a count vector is an
// array of integers.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum WireLabel {
    Bool(bool),
    Int(u64),
    Counts(Vec<usize>),
}

impl Serialize for AggregateLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            AggregateLabel::Binary(b) => WireLabel::Bool(*b).serialize(s),
            AggregateLabel::Counts(c) => c.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for AggregateLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match WireLabel::deserialize(d)? {
            WireLabel::Bool(b) => Ok(AggregateLabel::Binary(b)),
            WireLabel::Int(0) => Ok(AggregateLabel::Binary(false)),
            WireLabel::Int(1) => Ok(AggregateLabel::Binary(true)),
            WireLabel::Int(v) => Err(serde::de::Error::custom(format!(
                "binary aggregate label must be 0 or 1, got {v}"
            ))),
            WireLabel::Counts(c) => Ok(AggregateLabel::Counts(c)),
        }
    }
}

/// Iterates over every label tuple in `{0..k}^m`, calling `f` on each.
pub(crate) fn for_each_tuple(m: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut y = vec![0usize; m];
    loop {
        f(&y);
        let mut pos = 0;
        loop {
            if pos == m {
                return;
            }
            y[pos] += 1;
            if y[pos] < k {
                break;
            }
            y[pos] = 0;
            pos += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(kind: TaskKind, m: usize, k: usize) -> Task {
        Task::new(kind, m, k).unwrap()
    }

    #[test]
    fn pairwise_similarity() {
        let t = task(TaskKind::Pairwise, 2, 5);
        assert_eq!(t.aggregate_label(&[2, 2]).unwrap(), true.into());
        assert_eq!(t.aggregate_label(&[2, 3]).unwrap(), false.into());
    }

    #[test]
    fn mil_positive_bag() {
        let t = task(TaskKind::Mil, 3, 2);
        assert_eq!(t.aggregate_label(&[0, 0, 0]).unwrap(), false.into());
        assert_eq!(t.aggregate_label(&[0, 1, 0]).unwrap(), true.into());
    }

    #[test]
    fn llp_counts() {
        let t = task(TaskKind::Llp, 3, 3);
        // classes (1,1,3) in 1-based notation
        assert_eq!(t.aggregate_label(&[0, 0, 2]).unwrap(), vec![2, 0, 1].into());
    }

    #[test]
    fn ordinal_triplet_uses_absolute_distance() {
        let t = task(TaskKind::OrdinalTriplet, 3, 6);
        // (2,2,5) in 1-based notation
        assert_eq!(t.aggregate_label(&[1, 1, 4]).unwrap(), true.into());
        // |3-1| = 2 is not < |3-5| = 2
        assert_eq!(t.aggregate_label(&[2, 0, 4]).unwrap(), false.into());
    }

    #[test]
    fn triplet_uses_disagreement_distance() {
        let t = task(TaskKind::Triplet, 3, 6);
        assert_eq!(t.aggregate_label(&[2, 0, 4]).unwrap(), false.into());
        assert_eq!(t.aggregate_label(&[2, 2, 4]).unwrap(), true.into());
        assert_eq!(t.aggregate_label(&[2, 2, 2]).unwrap(), false.into());
    }

    #[test]
    fn rank_is_strict() {
        let t = task(TaskKind::Rank, 2, 3);
        assert_eq!(t.aggregate_label(&[0, 1]).unwrap(), true.into());
        assert_eq!(t.aggregate_label(&[1, 1]).unwrap(), false.into());
        assert_eq!(t.aggregate_label(&[2, 1]).unwrap(), false.into());
    }

    #[test]
    fn aggregate_label_errors() {
        let t = task(TaskKind::Pairwise, 2, 3);
        assert!(matches!(t.aggregate_label(&[0]), Err(Error::GroupSize { .. })));
        assert!(matches!(t.aggregate_label(&[0, 3]), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn task_validation() {
        assert!(Task::new(TaskKind::Pairwise, 3, 2).is_err());
        assert!(Task::new(TaskKind::Triplet, 2, 2).is_err());
        assert!(Task::new(TaskKind::Mil, 4, 3).is_err());
        assert!(Task::new(TaskKind::Llp, 1, 3).is_err());
        assert!(Task::new(TaskKind::Rank, 2, 1).is_ok());
        assert_eq!("ordinal_triplet".parse::<TaskKind>().unwrap(), TaskKind::OrdinalTriplet);
        assert!("quad".parse::<TaskKind>().is_err());
    }

    #[test]
    fn enumerate_binary() {
        let t = task(TaskKind::Pairwise, 2, 4);
        assert_eq!(t.enumerate_z().unwrap(), vec![false.into(), true.into()]);
    }

    #[test]
    fn enumerate_small_compositions() {
        let t = task(TaskKind::Llp, 2, 2);
        let z = t.enumerate_z().unwrap();
        assert_eq!(z, vec![vec![2, 0].into(), vec![1, 1].into(), vec![0, 2].into()]);
    }

    #[test]
    fn enumerate_composition_count() {
        // C(15, 9)
        let expected = (7..=15u128).product::<u128>() / (1..=9u128).product::<u128>();
        assert_eq!(expected, 5005);
        let t = task(TaskKind::Llp, 6, 10);
        let z = t.enumerate_z().unwrap();
        assert_eq!(z.len() as u128, expected);
        let unique: std::collections::HashSet<_> = z.iter().collect();
        assert_eq!(unique.len(), z.len());
    }

    #[test]
    fn enumerate_bound() {
        let t = task(TaskKind::Llp, 40, 10);
        assert!(matches!(t.enumerate_z(), Err(Error::EnumerationBound { .. })));
    }

    #[test]
    fn every_tuple_maps_into_z_space() {
        for kind in TaskKind::ALL {
            let (m, k) = match kind {
                TaskKind::Mil => (3, 2),
                TaskKind::Llp => (3, 3),
                other => (other.fixed_group_size().unwrap(), 3),
            };
            let t = task(kind, m, k);
            let zs = t.enumerate_z().unwrap();
            for_each_tuple(m, k, |y| {
                let z = t.aggregate_label(y).unwrap();
                assert!(zs.contains(&z), "{kind}: {y:?} -> {z}");
                t.check_label(&z).unwrap();
            });
        }
    }

    #[test]
    fn label_wire_format() {
        let z: AggregateLabel = serde_json::from_str("true").unwrap();
        assert_eq!(z, true.into());
        let z: AggregateLabel = serde_json::from_str("0").unwrap();
        assert_eq!(z, false.into());
        let z: AggregateLabel = serde_json::from_str("[1,0,2]").unwrap();
        assert_eq!(z, vec![1, 0, 2].into());
        assert!(serde_json::from_str::<AggregateLabel>("2").is_err());
        assert_eq!(serde_json::to_string(&AggregateLabel::Counts(vec![2, 1])).unwrap(), "[2,1]");
    }
}
