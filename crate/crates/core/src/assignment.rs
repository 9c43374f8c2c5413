//! Exact minimum-cost perfect matching on square cost matrices
//! (shortest augmenting path with potentials), with a deterministic
//! lexicographic tie-break among optimal solutions.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Optimal assignment: `row_to_col[i]` is the column matched to row `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub row_to_col: Vec<usize>,
    pub total: f64,
}

struct Solved {
    row_to_col: Vec<usize>,
    u: Vec<f64>,
    v: Vec<f64>,
    total: f64,
}

fn solve(cost: ArrayView2<f64>) -> Solved {
    let n = cost.nrows();
    // 1-based arrays; index 0 is the virtual root of each augmenting search.
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
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
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
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
    }
    let total = row_to_col
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[[i, j]])
        .sum();
    Solved {
        row_to_col,
        u: u[1..].to_vec(),
        v: v[1..].to_vec(),
        total,
    }
}

fn sub_optimum(cost: ArrayView2<f64>, rows: &[usize], cols: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let sub = Array2::from_shape_fn((rows.len(), cols.len()), |(a, b)| cost[[rows[a], cols[b]]]);
    solve(sub.view()).total
}

/// Minimum-total-cost perfect matching of a square matrix. Among optimal
/// matchings (within a relative tolerance of 1e-9) the one whose column
/// sequence is lexicographically smallest is returned.
pub fn linear_assignment(cost: ArrayView2<f64>) -> Result<Assignment> {
    let n = cost.nrows();
    if n != cost.ncols() {
        return Err(Error::Shape(format!(
            "assignment needs a square matrix, got {}x{}",
            cost.nrows(),
            cost.ncols()
        )));
    }
    if n == 0 {
        return Err(Error::EmptyClusters("empty cost matrix".into()));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("cost matrix entry".into()));
    }
    let solved = solve(cost);
    let opt = solved.total;
    let tol = 1e-9 * opt.abs().max(1.0);

    // Any edge of an optimal matching is tight under optimal potentials, so
    // only tight edges need testing; a single tight candidate is accepted
    // without a residual solve.
    let mut free_cols: Vec<usize> = (0..n).collect();
    let mut fixed = 0.0;
    let mut row_to_col = Vec::with_capacity(n);
    for i in 0..n {
        let candidates: Vec<usize> = free_cols
            .iter()
            .copied()
            .filter(|&j| (cost[[i, j]] - solved.u[i] - solved.v[j]).abs() <= tol)
            .collect();
        let rest_rows: Vec<usize> = (i + 1..n).collect();
        let mut chosen = None;
        if candidates.len() == 1 {
            chosen = Some(candidates[0]);
        } else {
            for &j in &candidates {
                let rest_cols: Vec<usize> = free_cols.iter().copied().filter(|&c| c != j).collect();
                let total = fixed + cost[[i, j]] + sub_optimum(cost, &rest_rows, &rest_cols);
                if total <= opt + tol {
                    chosen = Some(j);
                    break;
                }
            }
        }
        // Rounding can in principle empty the candidate list; the unique
        // solver answer is always optimal, so fall back to it.
        let j = chosen.unwrap_or_else(|| {
            let j = solved.row_to_col[i];
            if free_cols.contains(&j) {
                j
            } else {
                free_cols[0]
            }
        });
        fixed += cost[[i, j]];
        free_cols.retain(|&c| c != j);
        row_to_col.push(j);
    }
    let total = row_to_col
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[[i, j]])
        .sum();
    Ok(Assignment { row_to_col, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn diagonal_preferred() {
        let a = linear_assignment(array![[1.0, 2.0], [2.0, 1.0]].view()).unwrap();
        assert_eq!(a.row_to_col, vec![0, 1]);
        assert_eq!(a.total, 2.0);
    }

    #[test]
    fn anti_diagonal_preferred() {
        let a = linear_assignment(array![[2.0, 1.0], [1.0, 2.0]].view()).unwrap();
        assert_eq!(a.row_to_col, vec![1, 0]);
        assert_eq!(a.total, 2.0);
    }

    #[test]
    fn ties_take_lexicographically_smallest() {
        let a = linear_assignment(Array2::from_elem((4, 4), 3.0).view()).unwrap();
        assert_eq!(a.row_to_col, vec![0, 1, 2, 3]);
        let c = array![[1.0, 1.0, 5.0], [1.0, 1.0, 5.0], [5.0, 5.0, 1.0]];
        assert_eq!(
            linear_assignment(c.view()).unwrap().row_to_col,
            vec![0, 1, 2]
        );
    }

    #[test]
    fn non_square_rejected() {
        assert!(matches!(
            linear_assignment(Array2::<f64>::zeros((2, 3)).view()),
            Err(Error::Shape(_))
        ));
    }
}
