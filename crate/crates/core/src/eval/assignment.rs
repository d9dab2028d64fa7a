//! Linear sum assignment (Hungarian / Kuhn-Munkres) over integer costs,
//! with the lexicographically smallest optimal assignment selected.

/// Minimum-cost assignment of rows to columns for a square matrix. Returns
/// `assign[row] = column`. Among optimal assignments the lexicographically
/// smallest is returned.
pub fn min_cost_assignment(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    debug_assert!(cost.iter().all(|r| r.len() == n));

    // Shortest augmenting path with potentials; 1-based with a virtual
    // column 0.
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0usize; n];
    let mut col_to_row = vec![0usize; n];
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
        col_to_row[j - 1] = p[j] - 1;
    }
    // Every optimal assignment is a perfect matching on the tight edges of
    // the optimal duals; walk rows in order taking the smallest feasible column.
    let tight = |r: usize, c: usize| cost[r][c] - u[r + 1] - v[c + 1] == 0;
    let mut refine = Refine { n, tight: &tight, row_to_col, col_to_row, locked_col: vec![false; n] };
    for row in 0..n {
        for col in 0..n {
            if refine.locked_col[col] || !tight(row, col) {
                continue;
            }
            if refine.row_to_col[row] == col || refine.reassign(row, col) {
                refine.locked_col[col] = true;
                break;
            }
        }
    }
    refine.row_to_col
}

struct Refine<'a, F: Fn(usize, usize) -> bool> {
    n: usize,
    tight: &'a F,
    row_to_col: Vec<usize>,
    col_to_row: Vec<usize>,
    locked_col: Vec<bool>,
}

impl<F: Fn(usize, usize) -> bool> Refine<'_, F> {
    /// Tries to match `row -> col` by rerouting the current owner of `col`
    /// along an alternating path of tight edges that ends at `row`'s column.
    fn reassign(&mut self, row: usize, col: usize) -> bool {
        let freed = self.row_to_col[row];
        let owner = self.col_to_row[col];
        let mut visited = vec![false; self.n];
        visited[col] = true;
        if self.augment(owner, freed, &mut visited) {
            self.row_to_col[row] = col;
            self.col_to_row[col] = row;
            true
        } else {
            false
        }
    }

    fn augment(&mut self, r: usize, target: usize, visited: &mut [bool]) -> bool {
        for c in 0..self.n {
            if visited[c] || self.locked_col[c] || !(self.tight)(r, c) {
                continue;
            }
            visited[c] = true;
            if c == target || self.augment(self.col_to_row[c], target, visited) {
                self.row_to_col[r] = c;
                self.col_to_row[c] = r;
                return true;
            }
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_known_instance() {
        let cost = vec![vec![4, 1, 3], vec![2, 0, 5], vec![3, 2, 2]];
        assert_eq!(min_cost_assignment(&cost), vec![1, 0, 2]);
    }

    #[test]
    fn ties_resolve_to_identity() {
        let cost = vec![vec![0; 4]; 4];
        assert_eq!(min_cost_assignment(&cost), vec![0, 1, 2, 3]);
    }

    #[test]
    fn ties_resolve_lexicographically() {
        // both [1, 0, 2] and [2, 0, 1] cost 3
        let cost = vec![vec![5, 1, 1], vec![1, 5, 5], vec![5, 1, 1]];
        assert_eq!(min_cost_assignment(&cost), vec![1, 0, 2]);
    }
}
