//! Minimum-cost rectangular assignment (Hungarian method with potentials).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Solves `min Σ cost[i, σ(i)]` over injective matchings of the smaller side.
///
/// Returns, for every row, the matched column or `None` when there are more
/// rows than columns and the row is left out.
pub fn linear_sum_assignment(cost: &Matrix) -> Result<Vec<Option<usize>>> {
    if cost.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("assignment costs must be finite".into()));
    }
    let (n, m) = (cost.rows(), cost.cols());
    if n == 0 || m == 0 {
        return Ok(vec![None; n]);
    }
    if n > m {
        let by_col = solve(&cost.transpose());
        let mut out = vec![None; n];
        for (col, row) in by_col.into_iter().enumerate() {
            out[row] = Some(col);
        }
        return Ok(out);
    }
    Ok(solve(cost).into_iter().map(Some).collect())
}

/// Shortest augmenting paths for `n ≤ m`; returns the column of every row.
fn solve(cost: &Matrix) -> Vec<usize> {
    let (n, m) = (cost.rows(), cost.cols());
    // 1-based with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut row_of = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
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
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0usize; n];
    for j in 1..=m {
        if row_of[j] > 0 {
            col_of[row_of[j] - 1] = j - 1;
        }
    }
    col_of
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_known_problem() {
        let c = Matrix::from_rows(&[vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]]).unwrap();
        let a = linear_sum_assignment(&c).unwrap();
        assert_eq!(a, vec![Some(1), Some(0), Some(2)]);
    }

    #[test]
    fn rectangular_both_ways() {
        let wide = Matrix::from_rows(&[vec![5.0, 1.0, 9.0], vec![1.0, 5.0, 9.0]]).unwrap();
        assert_eq!(linear_sum_assignment(&wide).unwrap(), vec![Some(1), Some(0)]);
        let tall = wide.transpose();
        assert_eq!(linear_sum_assignment(&tall).unwrap(), vec![Some(1), Some(0), None]);
    }
}
