//! Minimum-cost assignment (Hungarian method with row/column potentials).

/// Optimal assignment for a rectangular cost matrix given as rows.
///
/// Returns, for each row, the assigned column; when there are more rows than
/// columns the surplus rows get `None`. Runs in O(n² m).
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = cost.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = cost[0].len();
    assert!(cost.iter().all(|r| r.len() == cols), "ragged cost matrix");
    if cols == 0 {
        return vec![None; rows];
    }
    if rows > cols {
        let t: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| cost[i][j]).collect()).collect();
        let by_col = hungarian(&t);
        let mut out = vec![None; rows];
        for (j, i) in by_col.into_iter().enumerate() {
            if let Some(i) = i {
                out[i] = Some(j);
            }
        }
        return out;
    }
    // 1-based potentials formulation, rows <= cols.
    let (n, m) = (rows, cols);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
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
    let mut out = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}

/// Pads the matrix to square with `dummy` and solves; pairs landing on a
/// padded row or column are reported as unmatched.
pub fn assign_padded(cost: &[Vec<f64>], dummy: f64) -> Vec<Option<usize>> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    let n = rows.max(cols);
    let square: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i < rows && j < cols { cost[i][j] } else { dummy })
                .collect()
        })
        .collect();
    hungarian(&square)
        .into_iter()
        .take(rows)
        .map(|a| a.filter(|&j| j < cols))
        .collect()
}

/// Sum of assigned costs in row order.
pub fn assignment_cost(cost: &[Vec<f64>], a: &[Option<usize>]) -> f64 {
    a.iter().enumerate().filter_map(|(i, j)| j.map(|j| cost[i][j])).sum()
}
