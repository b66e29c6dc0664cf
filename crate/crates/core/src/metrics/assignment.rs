//! Maximum-weight one-to-one assignment (Hungarian method, O(n³)).

/// Best one-to-one pairing of rows to columns of a non-negative weight
/// matrix. Rectangular inputs are padded with zero rows/columns.
///
/// Returns the total weight and, per original row, the matched original
/// column (or `None` when the row was paired with padding).
pub fn max_weight_assignment(weights: &[Vec<u64>]) -> (u64, Vec<Option<usize>>) {
    let rows = weights.len();
    let cols = weights.iter().map(Vec::len).max().unwrap_or(0);
    let n = rows.max(cols);
    if n == 0 {
        return (0, Vec::new());
    }
    let w = |i: usize, j: usize| -> i64 {
        weights.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0) as i64
    };
    let top = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| w(i, j)).max().unwrap_or(0);
    // Minimise top - w over a 1-indexed square matrix.
    let cost = |i: usize, j: usize| top - w(i - 1, j - 1);

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
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
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

    let mut row_to_col = vec![None; rows];
    let mut total = 0u64;
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i <= rows && j <= cols {
            row_to_col[i - 1] = Some(j - 1);
            total += w(i - 1, j - 1) as u64;
        }
    }
    (total, row_to_col)
}
