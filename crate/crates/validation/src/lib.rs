//! Reference oracles that share no code with the estimator: exact
//! row-echelon null spaces, a grid minimiser for the per-step residual and
//! the support enumeration order.

use nalgebra::{DMatrix, DVector};

/// Row-echelon null space with partial pivoting.
pub fn ge_null_space(m: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let (rows, cols) = m.shape();
    let mut a = m.clone();
    let scale = a.amax().max(1.0);
    let tol = 1e-9 * scale;
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let (best, val) = (r..rows)
            .map(|i| (i, a[(i, c)].abs()))
            .fold((r, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if val <= tol {
            continue;
        }
        a.swap_rows(r, best);
        let p = a[(r, c)];
        for j in 0..cols {
            a[(r, j)] /= p;
        }
        for i in 0..rows {
            if i != r {
                let f = a[(i, c)];
                if f != 0.0 {
                    for j in 0..cols {
                        a[(i, j)] -= f * a[(r, j)];
                    }
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    (0..cols)
        .filter(|c| !pivots.contains(c))
        .map(|free| {
            let mut v = DVector::zeros(cols);
            v[free] = 1.0;
            for (k, &pc) in pivots.iter().enumerate() {
                v[pc] = -a[(k, free)];
            }
            v.normalize()
        })
        .collect()
}


/// `max_k ||(y - O x)_clean,k||` for one support.
pub fn per_step_residual(o: &DMatrix<f64>, y: &DVector<f64>, clean: &[usize], n_win: usize, x: &DVector<f64>) -> f64 {
    let r = y - o * x;
    (0..n_win)
        .map(|k| clean.iter().map(|&i| r[i * n_win + k].powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Minimum of the convex residual by repeated grid refinement. The grid
/// lives in whitened coordinates of the clean rows, where the level sets are
/// close to round, and collapses the directions the clean rows cannot see.
/// Handles at most two visible directions.
pub fn grid_min(o: &DMatrix<f64>, y: &DVector<f64>, clean: &[usize], n_win: usize) -> f64 {
    let n = o.ncols();
    let rows: Vec<usize> = clean.iter().flat_map(|&i| (0..n_win).map(move |k| i * n_win + k)).collect();
    let oc = DMatrix::from_fn(rows.len(), n, |r, c| o[(rows[r], c)]);
    let yc = DVector::from_fn(rows.len(), |r, _| y[rows[r]]);
    let svd = oc.clone().svd(true, true);
    let v_t = svd.v_t.unwrap();
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&j| svd.singular_values[j] > 1e-12 * smax.max(1.0))
        .collect();
    let centre = oc.pseudo_inverse(1e-12).unwrap() * &yc;
    // x = centre + sum_j u_j v_j / sigma_j
    let dirs: Vec<DVector<f64>> = keep
        .iter()
        .map(|&j| v_t.row(j).transpose() / svd.singular_values[j])
        .collect();
    let at = |u: &[f64]| -> f64 {
        let mut x = centre.clone();
        for (d, &uj) in dirs.iter().zip(u) {
            x += d * uj;
        }
        per_step_residual(o, y, clean, n_win, &x)
    };
    let r = dirs.len();
    assert!(r <= 2, "grid search covers at most two directions");
    if r == 0 {
        return at(&[]);
    }
    let g = 20i32;
    let mut c = vec![0.0; r];
    let mut h = ((n_win as f64).sqrt() + 1.0) * yc.norm() + 1.0;
    let mut best = at(&c);
    for _ in 0..70 {
        let mut bc = c.clone();
        let span: Vec<i32> = (-g..=g).collect();
        let outer: &[i32] = if r == 2 { &span } else { &[0] };
        for &i in &span {
            for &j in outer {
                let mut u = c.clone();
                u[0] += h * i as f64 / g as f64;
                if r == 2 {
                    u[1] += h * j as f64 / g as f64;
                }
                let v = at(&u);
                if v < best {
                    best = v;
                    bc = u;
                }
            }
        }
        c = bc;
        h *= 0.5;
    }
    best
}


/// Every subset of `0..p`, by cardinality and then lexicographically.
pub fn subsets_in_order(p: usize) -> Vec<Vec<usize>> {
    let mut all: Vec<Vec<usize>> = (0u32..1 << p)
        .map(|mask| (0..p).filter(|i| mask & (1 << i) != 0).collect())
        .collect();
    all.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    all
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_space_of_rank_one_rows() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 2.0, 4.0, 0.0]);
        let ns = ge_null_space(&m);
        assert_eq!(ns.len(), 2);
        for v in &ns {
            assert!((&m * v).norm() < 1e-12);
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
        assert!(ge_null_space(&DMatrix::identity(3, 3)).is_empty());
    }

    #[test]
    fn grid_finds_chebyshev_residual() {
        // One state seen by two sensors at one step: y = (1, 3) is best
        // matched by x = 2 with per-step residual sqrt(2).
        let o = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, 3.0]);
        assert!((grid_min(&o, &y, &[0, 1], 1) - 2f64.sqrt()).abs() < 1e-9);
        assert!(grid_min(&o, &y, &[1], 1) < 1e-9);
    }

    #[test]
    fn enumeration_order() {
        let s = subsets_in_order(3);
        assert_eq!(s.len(), 8);
        assert_eq!(s[0], Vec::<usize>::new());
        assert_eq!(s[1..4], [vec![0], vec![1], vec![2]]);
        assert_eq!(s[4..7], [vec![0, 1], vec![0, 2], vec![1, 2]]);
    }
}
