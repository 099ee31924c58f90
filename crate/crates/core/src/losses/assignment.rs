use crate::error::{Error, Result};

/// Exact minimum-cost assignment of every row to a distinct column
/// (Hungarian method with potentials, `O(rows^2 * cols)`).
///
/// `cost` is row-major `rows x cols` with `rows <= cols`; the rectangular case
/// is equivalent to padding with zero-cost dummy rows. Returns the column of
/// each row.
pub fn min_cost_assignment(cost: &[f64], rows: usize, cols: usize) -> Result<Vec<usize>> {
    if rows > cols {
        return Err(Error::Shape(format!("assignment needs rows <= cols, got {rows}x{cols}")));
    }
    if cost.len() != rows * cols {
        return Err(Error::Shape(format!("{rows}x{cols} cost matrix given {} values", cost.len())));
    }
    if let Some(bad) = cost.iter().find(|c| !c.is_finite()) {
        return Err(Error::Data(format!("non-finite assignment cost {bad}")));
    }
    let a = |i: usize, j: usize| cost[(i - 1) * cols + (j - 1)];
    // 1-based; column 0 is a virtual start column
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = a(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
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
    let mut assignment = vec![usize::MAX; rows];
    for j in 1..=cols {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    Ok(assignment)
}
