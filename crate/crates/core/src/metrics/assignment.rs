//! Maximum-weight bipartite assignment (Kuhn–Munkres with potentials).

/// Solve a dense rectangular assignment maximizing total weight.
///
/// `weights` is `rows × cols`. Returns, for each row, the column it is
/// matched to (`None` only when there are more rows than columns).
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = weights[0].len();
    debug_assert!(weights.iter().all(|r| r.len() == cols));
    if cols == 0 {
        return vec![None; rows];
    }
    if rows <= cols {
        let cost: Vec<Vec<f64>> = weights.iter().map(|r| r.iter().map(|w| -w).collect()).collect();
        solve_min(&cost).into_iter().map(Some).collect()
    } else {
        // Transpose so that rows <= cols, then invert the mapping.
        let cost: Vec<Vec<f64>> = (0..cols).map(|c| (0..rows).map(|r| -weights[r][c]).collect()).collect();
        let mut out = vec![None; rows];
        for (c, r) in solve_min(&cost).into_iter().enumerate() {
            out[r] = Some(c);
        }
        out
    }
}

/// O(n²m) Hungarian method for an `n × m` cost matrix with `n <= m`.
/// Returns the column assigned to each row.
fn solve_min(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost[0].len();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    // p[j]: row (1-based) matched to column j; p[0] is the row being inserted.
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
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
            for j in 0..=m {
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

    let mut assignment = vec![0usize; n];
    for j in 1..=m {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

#[cfg(test)]
mod tests {
    use super::*;

    fn total(w: &[Vec<f64>], a: &[Option<usize>]) -> f64 {
        a.iter().enumerate().filter_map(|(r, c)| c.map(|c| w[r][c])).sum()
    }

    fn brute(w: &[Vec<f64>]) -> f64 {
        fn go(w: &[Vec<f64>], r: usize, used: &mut Vec<bool>) -> f64 {
            if r == w.len() {
                return 0.0;
            }
            // Row may stay unmatched when rows outnumber columns.
            let mut best = go(w, r + 1, used);
            for c in 0..used.len() {
                if !used[c] {
                    used[c] = true;
                    best = best.max(w[r][c] + go(w, r + 1, used));
                    used[c] = false;
                }
            }
            best
        }
        go(w, 0, &mut vec![false; w[0].len()])
    }

    #[test]
    fn picks_global_optimum_over_greedy() {
        // Greedy would take 0.9 and be left with 0.1.
        let w = vec![vec![0.9, 0.8], vec![0.8, 0.1]];
        let a = max_weight_assignment(&w);
        assert_eq!(a, vec![Some(1), Some(0)]);
    }

    #[test]
    fn rectangular_both_ways() {
        let w = vec![vec![0.1, 0.5, 0.3]];
        assert_eq!(max_weight_assignment(&w), vec![Some(1)]);
        let wt = vec![vec![0.1], vec![0.5], vec![0.3]];
        assert_eq!(max_weight_assignment(&wt), vec![None, Some(0), None]);
    }

    #[test]
    fn matches_brute_force_on_small_grids() {
        let mut seed = 7u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 33) % 1000) as f64 / 1000.0
        };
        for rows in 1..=5 {
            for cols in 1..=5 {
                let w: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| next()).collect()).collect();
                let a = max_weight_assignment(&w);
                assert!((total(&w, &a) - brute(&w)).abs() < 1e-9, "{w:?}");
            }
        }
    }
}
