//! Minimum-cost one-to-one assignment (Hungarian algorithm with potentials).

use crate::numerics::Matrix;

/// Matched `(prediction, ground_truth)` pairs, sorted by prediction index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
}

impl Assignment {
    pub fn total_cost(&self, cost: &Matrix) -> f64 {
        self.pairs.iter().map(|&(p, g)| cost[(p, g)]).sum()
    }

    /// Prediction matched to ground truth `gt`, if any.
    pub fn prediction_for(&self, gt: usize) -> Option<usize> {
        self.pairs.iter().find(|&&(_, g)| g == gt).map(|&(p, _)| p)
    }
}

/// Assign every row of the smaller side exactly once, minimizing total cost.
pub fn hungarian(cost: &Matrix) -> Assignment {
    let (rows, cols) = cost.shape();
    if rows == 0 || cols == 0 {
        return Assignment::default();
    }
    let mut pairs = if rows <= cols {
        solve(rows, cols, |i, j| cost[(i, j)])
    } else {
        solve(cols, rows, |i, j| cost[(j, i)])
            .into_iter()
            .map(|(g, p)| (p, g))
            .collect()
    };
    pairs.sort_unstable();
    Assignment { pairs }
}

/// O(n²m) shortest augmenting path with potentials; requires `n <= m`.
fn solve(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    // 1-based internally; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| (owner[j] - 1, j - 1))
        .collect()
}
