use crate::error::{Error, Result};

/// Result of a rectangular assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
    pub total: f64,
}

/// Minimum-cost assignment of `min(rows, cols)` pairs.
///
/// The matrix is padded to square with zero-cost dummies and solved with the
/// O(n³) potential-based Hungarian method. Among all optimal assignments the
/// lexicographically smallest one is returned: row 0 gets the lowest feasible
/// column, then row 1, and so on.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Assignment> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if cost.iter().any(|r| r.len() != cols) {
        return Err(Error::Input("cost matrix rows have different lengths".into()));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::Input("cost matrix contains non-finite entries".into()));
    }
    let n = rows.max(cols);
    if n == 0 || rows == 0 || cols == 0 {
        return Ok(Assignment {
            pairs: Vec::new(),
            unmatched_rows: (0..rows).collect(),
            unmatched_cols: (0..cols).collect(),
            total: 0.0,
        });
    }
    let c = |i: usize, j: usize| if i < rows && j < cols { cost[i][j] } else { 0.0 };

    // 1-indexed potentials; p[j] is the row matched to column j.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = c(i0 - 1, j - 1) - u[i0] - v[j];
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

    let scale = cost.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-9 * scale * n as f64;
    let tight: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| (c(i, j) - u[i + 1] - v[j + 1]).abs() <= tol).collect())
        .collect();
    let mut row_of = vec![usize::MAX; n];
    let mut col_of = vec![usize::MAX; n];
    for j in 1..=n {
        row_of[j - 1] = p[j] - 1;
        col_of[p[j] - 1] = j - 1;
    }
    lexicographic_tight(&tight, &mut col_of, &mut row_of);

    let mut pairs = Vec::new();
    let mut unmatched_rows = Vec::new();
    let mut total = 0.0;
    for (i, &j) in col_of.iter().enumerate().take(rows) {
        if j < cols {
            pairs.push((i, j));
            total += cost[i][j];
        } else {
            unmatched_rows.push(i);
        }
    }
    let unmatched_cols = (0..cols).filter(|&j| row_of[j] >= rows).collect();
    Ok(Assignment {
        pairs,
        unmatched_rows,
        unmatched_cols,
        total,
    })
}

/// Rewrite a perfect matching on the tight-edge graph into the
/// lexicographically smallest one, fixing rows in order.
fn lexicographic_tight(tight: &[Vec<bool>], col_of: &mut [usize], row_of: &mut [usize]) {
    let n = tight.len();
    for i in 0..n {
        for j in 0..col_of[i] {
            if !tight[i][j] {
                continue;
            }
            let k = row_of[j];
            if k < i {
                continue;
            }
            let freed = col_of[i];
            let (saved_c, saved_r) = (col_of.to_vec(), row_of.to_vec());
            col_of[i] = j;
            row_of[j] = i;
            col_of[k] = usize::MAX;
            row_of[freed] = usize::MAX;
            let mut seen = vec![false; n];
            if augment(k, i + 1, tight, col_of, row_of, &mut seen) {
                break;
            }
            col_of.copy_from_slice(&saved_c);
            row_of.copy_from_slice(&saved_r);
        }
    }
}

/// Kuhn augmenting path from `row` using only rows `>= first` and tight edges.
fn augment(row: usize, first: usize, tight: &[Vec<bool>], col_of: &mut [usize], row_of: &mut [usize], seen: &mut [bool]) -> bool {
    for j in 0..tight.len() {
        if !tight[row][j] || seen[j] {
            continue;
        }
        let owner = row_of[j];
        if owner != usize::MAX && owner < first {
            continue;
        }
        seen[j] = true;
        if owner == usize::MAX || augment(owner, first, tight, col_of, row_of, seen) {
            col_of[row] = j;
            row_of[j] = row;
            return true;
        }
    }
    false
}
