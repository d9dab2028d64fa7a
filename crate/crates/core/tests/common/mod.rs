//! Reference implementations for the integration tests, written directly
//! from the definitions and sharing no code with the library internals.

#![allow(dead_code)]

use aggclass::aggregate::{AggregateLabel, TaskKind};

/// Every label tuple in `{0..k}^m`, last position fastest.
pub fn tuples(m: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..m {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<usize>| {
                (0..k).map(move |c| {
                    let mut t = prefix.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
    }
    out
}

/// The aggregate function of each task on 0-based labels.
pub fn g(kind: TaskKind, k: usize, y: &[usize]) -> AggregateLabel {
    let dist = |a: usize, b: usize| (a as i64 - b as i64).abs();
    match kind {
        TaskKind::Pairwise => AggregateLabel::Binary(y[0] == y[1]),
        TaskKind::Triplet => AggregateLabel::Binary(usize::from(y[0] != y[1]) < usize::from(y[0] != y[2])),
        TaskKind::Llp => {
            let mut c = vec![0; k];
            y.iter().for_each(|&v| c[v] += 1);
            AggregateLabel::Counts(c)
        }
        TaskKind::Mil => AggregateLabel::Binary(y.contains(&1)),
        TaskKind::Rank => AggregateLabel::Binary(y[0] < y[1]),
        TaskKind::OrdinalTriplet => AggregateLabel::Binary(dist(y[0], y[1]) < dist(y[0], y[2])),
    }
}

/// `(p(z | x), p(z, y_i = j | x))` by summing over all tuples.
pub fn enumerate_posterior(kind: TaskKind, etas: &[Vec<f64>], z: &AggregateLabel) -> (f64, Vec<Vec<f64>>) {
    let (m, k) = (etas.len(), etas[0].len());
    let mut pz = 0.0;
    let mut joint = vec![vec![0.0; k]; m];
    for y in tuples(m, k) {
        if g(kind, k, &y) != *z {
            continue;
        }
        let p: f64 = y.iter().zip(etas).map(|(&c, e)| e[c]).product();
        pz += p;
        for (i, &c) in y.iter().enumerate() {
            joint[i][c] += p;
        }
    }
    (pz, joint)
}

/// Every distinct aggregate label reachable from `{0..k}^m`.
pub fn z_space(kind: TaskKind, m: usize, k: usize) -> Vec<AggregateLabel> {
    let mut out: Vec<AggregateLabel> = Vec::new();
    for y in tuples(m, k) {
        let z = g(kind, k, &y);
        if !out.contains(&z) {
            out.push(z);
        }
    }
    out
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// `-log softmax(logits)[y]`.
pub fn cross_entropy(logits: &[f64], y: usize) -> f64 {
    -softmax(logits)[y].ln()
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(cur: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                go(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Best matched count over all permutations, and the first permutation (in
/// lexicographic order) achieving it.
pub fn best_permutation(counts: &[Vec<u64>]) -> (u64, Vec<usize>) {
    let mut best = (0, Vec::new());
    for p in permutations(counts.len()) {
        let s: u64 = p.iter().enumerate().map(|(a, &b)| counts[a][b]).sum();
        if best.1.is_empty() || s > best.0 {
            best = (s, p);
        }
    }
    best
}

/// `y = W x + b` for row-major `W` of shape `rows x x.len()`.
pub fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    b.iter().enumerate().map(|(r, bias)| bias + (0..x.len()).map(|c| w[r * x.len() + c] * x[c]).sum::<f64>()).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
