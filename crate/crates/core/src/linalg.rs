//! Numerically tolerant rank, null-space and eigenstructure helpers.
//!
//! Every exact-rank statement in the analysis is realized through
//! [`rank_with_tol`]: a singular value counts when it exceeds
//! `rank_tol * max(1, sigma_max)`.

use nalgebra::{Complex, DMatrix, DVector};
use serde::Serialize;

pub type Complex64 = Complex<f64>;

/// Default relative tolerance for rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;
/// Default margin below the unit circle that still counts as unstable.
pub const DEFAULT_STABILITY_MARGIN: f64 = 1e-9;

/// Singular values of `m` in descending order (empty for an empty matrix).
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

fn threshold(sv: &[f64], rank_tol: f64) -> f64 {
    let smax = sv.first().copied().unwrap_or(0.0);
    rank_tol * smax.max(1.0)
}

/// Number of singular values above `rank_tol * max(1, sigma_max)`.
pub fn rank_with_tol(m: &DMatrix<f64>, rank_tol: f64) -> usize {
    let sv = singular_values(m);
    let thr = threshold(&sv, rank_tol);
    sv.iter().filter(|&&s| s > thr).count()
}

/// Rank decision together with the gap `sigma_r - sigma_{r+1}` that
/// separates kept from dropped singular values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankInfo {
    pub rank: usize,
    pub cols: usize,
    pub singular_values: Vec<f64>,
    /// `sigma_r - sigma_{r+1}`, with missing values read as zero.
    pub margin: f64,
    /// Absolute cutoff `rank_tol * max(1, sigma_max)`.
    pub threshold: f64,
}

impl RankInfo {
    pub fn of(m: &DMatrix<f64>, rank_tol: f64) -> Self {
        let sv = singular_values(m);
        let thr = threshold(&sv, rank_tol);
        let rank = sv.iter().filter(|&&s| s > thr).count();
        let above = if rank == 0 { 0.0 } else { sv[rank - 1] };
        let below = sv.get(rank).copied().unwrap_or(0.0);
        RankInfo {
            rank,
            cols: m.ncols(),
            singular_values: sv,
            margin: above - below,
            threshold: thr,
        }
    }

    pub fn full_column_rank(&self) -> bool {
        self.rank == self.cols
    }

    /// True when the rank margin does not exceed `factor * threshold`, or a
    /// singular value sits within a factor `factor` of the cutoff.
    pub fn is_borderline(&self, factor: f64) -> bool {
        let near = self
            .singular_values
            .iter()
            .any(|&s| s > self.threshold / factor && s <= self.threshold * factor);
        near || (self.rank > 0 && self.margin <= factor * self.threshold)
    }
}

/// Unit vector spanning (part of) the numerical null space of `m`, i.e. the
/// right singular vector of the smallest singular value, when the rank is
/// deficient. Columns of `m` define the dimension.
pub fn null_vector(m: &DMatrix<f64>, rank_tol: f64) -> Option<DVector<f64>> {
    let basis = null_space(m, rank_tol);
    if basis.ncols() == 0 {
        None
    } else {
        Some(normalize_sign(basis.column(0).into_owned()))
    }
}

/// Orthonormal basis (as columns) of the numerical null space of `m`.
pub fn null_space(m: &DMatrix<f64>, rank_tol: f64) -> DMatrix<f64> {
    let n = m.ncols();
    if m.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    // Pad to at least n rows so the thin SVD exposes the full right basis.
    let padded = if m.nrows() < n {
        let mut p = DMatrix::zeros(n, n);
        p.rows_mut(0, m.nrows()).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let thr = rank_tol * smax.max(1.0);
    // Order null directions by ascending singular value for determinism.
    let mut idx: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] <= thr).collect();
    idx.sort_by(|&a, &b| sv[a].total_cmp(&sv[b]).then(a.cmp(&b)));
    let mut basis = DMatrix::zeros(n, idx.len());
    for (c, &i) in idx.iter().enumerate() {
        basis.set_column(c, &v_t.row(i).transpose());
    }
    basis
}

/// Flip the sign so the largest-magnitude entry is positive.
pub fn normalize_sign(v: DVector<f64>) -> DVector<f64> {
    let pivot = v.iter().copied().fold(0.0f64, |acc, x| {
        if x.abs() > acc.abs() {
            x
        } else {
            acc
        }
    });
    if pivot < 0.0 {
        -v
    } else {
        v
    }
}

/// Moore-Penrose pseudo-inverse with relative cutoff `rank_tol`.
pub fn pinv(m: &DMatrix<f64>, rank_tol: f64) -> DMatrix<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let sv = singular_values(m);
    let thr = threshold(&sv, rank_tol);
    m.clone()
        .pseudo_inverse(thr)
        .expect("non-negative cutoff is accepted")
}

/// Spectral norm.
pub fn norm2(m: &DMatrix<f64>) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// `A^k` for every `k` in `0..count`.
pub fn powers(a: &DMatrix<f64>, count: usize) -> Vec<DMatrix<f64>> {
    let n = a.nrows();
    let mut out = Vec::with_capacity(count);
    let mut cur = DMatrix::identity(n, n);
    for _ in 0..count {
        out.push(cur.clone());
        cur = a * &cur;
    }
    out
}

/// Standard `n`-step observability test of `(a, c)`.
pub fn is_observable(a: &DMatrix<f64>, c: &DMatrix<f64>, rank_tol: f64) -> bool {
    observability_rank(a, c, rank_tol).full_column_rank()
}

pub fn observability_rank(a: &DMatrix<f64>, c: &DMatrix<f64>, rank_tol: f64) -> RankInfo {
    let n = a.nrows();
    let mut rows = Vec::new();
    let mut cur = c.clone();
    for _ in 0..n {
        rows.push(cur.clone());
        cur = &cur * a;
    }
    RankInfo::of(&vstack(&rows, n), rank_tol)
}

/// Vertical concatenation; `ncols` fixes the width for empty input.
pub fn vstack(blocks: &[DMatrix<f64>], ncols: usize) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, ncols);
    let mut r = 0;
    for b in blocks {
        if b.nrows() > 0 {
            out.rows_mut(r, b.nrows()).copy_from(b);
            r += b.nrows();
        }
    }
    out
}

/// One eigenvalue cluster of a real matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenInfo {
    pub re: f64,
    pub im: f64,
    pub algebraic_multiplicity: usize,
    pub geometric_multiplicity: usize,
}

impl EigenInfo {
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }

    pub fn modulus(&self) -> f64 {
        self.value().norm()
    }
}

/// All eigenvalues with `|lambda| >= 1 - stability_margin`, grouped into
/// clusters with multiplicities and sorted by modulus (descending) then
/// argument (ascending).
pub fn unstable_eigenstructure(a: &DMatrix<f64>, stability_margin: f64) -> Vec<EigenInfo> {
    eigen_clusters(a, DEFAULT_RANK_TOL)
        .into_iter()
        .filter(|e| e.modulus() >= 1.0 - stability_margin)
        .collect()
}

/// Eigenvalue clusters of `a` with algebraic and geometric multiplicities.
pub fn eigen_clusters(a: &DMatrix<f64>, rank_tol: f64) -> Vec<EigenInfo> {
    assert!(a.is_square(), "eigenstructure needs a square matrix");
    let n = a.nrows();
    if n == 0 {
        return Vec::new();
    }
    let raw: Vec<Complex64> = a.clone().complex_eigenvalues().iter().copied().collect();
    // Defective eigenvalues come back perturbed by ~sqrt(eps); merge them.
    let scale = norm2(a).max(1.0);
    let cluster_tol = 1e-6 * scale;
    let mut clusters: Vec<Vec<Complex64>> = Vec::new();
    for lam in raw {
        match clusters
            .iter_mut()
            .find(|c| (mean(c) - lam).norm() <= cluster_tol)
        {
            Some(c) => c.push(lam),
            None => clusters.push(vec![lam]),
        }
    }
    let mut out: Vec<EigenInfo> = clusters
        .iter()
        .map(|c| {
            let mut lam = mean(c);
            if lam.im.abs() <= cluster_tol {
                lam.im = 0.0;
            }
            let shifted = complex_shift(a, lam);
            let rank = complex_rank(&shifted, rank_tol.max(1e-8));
            EigenInfo {
                re: lam.re,
                im: lam.im,
                algebraic_multiplicity: c.len(),
                geometric_multiplicity: (n - rank).clamp(1, c.len()),
            }
        })
        .collect();
    out.sort_by(|x, y| {
        y.modulus()
            .total_cmp(&x.modulus())
            .then(x.value().arg().total_cmp(&y.value().arg()))
    });
    out
}

fn mean(c: &[Complex64]) -> Complex64 {
    c.iter().sum::<Complex64>() / c.len() as f64
}

/// `A - lambda I` over the complex field.
pub fn complex_shift(a: &DMatrix<f64>, lambda: Complex64) -> DMatrix<Complex64> {
    let n = a.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        let v = Complex64::new(a[(i, j)], 0.0);
        if i == j {
            v - lambda
        } else {
            v
        }
    })
}

pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

pub fn complex_singular_values(m: &DMatrix<Complex64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

pub fn complex_rank(m: &DMatrix<Complex64>, rank_tol: f64) -> usize {
    let sv = complex_singular_values(m);
    let thr = threshold(&sv, rank_tol);
    sv.iter().filter(|&&s| s > thr).count()
}

/// Unit null vector of a complex matrix (smallest right singular vector)
/// together with the smallest singular value, or `None` when full rank.
pub fn complex_null_vector(
    m: &DMatrix<Complex64>,
    rank_tol: f64,
) -> Option<(DVector<Complex64>, f64)> {
    let n = m.ncols();
    let padded = if m.nrows() < n {
        let mut p = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
        p.rows_mut(0, m.nrows()).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let thr = rank_tol * smax.max(1.0);
    let (imin, smin) = sv
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))?;
    if smin > thr {
        return None;
    }
    // Rows of v_t are conjugated right singular vectors.
    let v: DVector<Complex64> = v_t.row(imin).transpose().map(|z| z.conj());
    Some((v, smin))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rank_of_simple_matrices() {
        assert_eq!(rank_with_tol(&DMatrix::identity(3, 3), DEFAULT_RANK_TOL), 3);
        let dup = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(rank_with_tol(&dup, DEFAULT_RANK_TOL), 1);
        assert_eq!(rank_with_tol(&DMatrix::zeros(0, 2), DEFAULT_RANK_TOL), 0);
    }

    #[test]
    fn null_space_of_wide_matrix() {
        let m = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let v = null_vector(&m, DEFAULT_RANK_TOL).unwrap();
        assert_relative_eq!(v[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(v[1], 1.0, epsilon = 1e-12);
        let full = DMatrix::<f64>::identity(2, 2);
        assert!(null_vector(&full, DEFAULT_RANK_TOL).is_none());
    }

    #[test]
    fn eigen_clusters_of_jordan_block() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.01, 0.0, 1.0]);
        let eig = unstable_eigenstructure(&a, DEFAULT_STABILITY_MARGIN);
        assert_eq!(eig.len(), 1);
        assert_relative_eq!(eig[0].re, 1.0, epsilon = 1e-9);
        assert_eq!(eig[0].algebraic_multiplicity, 2);
        assert_eq!(eig[0].geometric_multiplicity, 1);
    }

    #[test]
    fn stable_matrix_has_no_unstable_modes() {
        let a = DMatrix::from_row_slice(2, 2, &[0.3, 1.0, 0.0, 0.5]);
        assert!(unstable_eigenstructure(&a, DEFAULT_STABILITY_MARGIN).is_empty());
    }

    #[test]
    fn diagonal_unstable_mode() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let eig = unstable_eigenstructure(&a, DEFAULT_STABILITY_MARGIN);
        assert_eq!(eig.len(), 1);
        assert_relative_eq!(eig[0].re, 2.0, epsilon = 1e-12);
        assert_eq!(
            (eig[0].algebraic_multiplicity, eig[0].geometric_multiplicity),
            (1, 1)
        );
    }

    #[test]
    fn complex_pair_ordering() {
        // rotation scaled by 1.1 plus a stable mode
        let c = 1.1 * (0.3f64).cos();
        let s = 1.1 * (0.3f64).sin();
        let a = DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 0.2]);
        let eig = unstable_eigenstructure(&a, DEFAULT_STABILITY_MARGIN);
        assert_eq!(eig.len(), 2);
        assert!(eig[0].im < 0.0 && eig[1].im > 0.0);
        assert_relative_eq!(eig[0].modulus(), 1.1, epsilon = 1e-10);
    }

    #[test]
    fn pinv_of_tall_matrix() {
        let o = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.3, 1.0]);
        let p = pinv(&o, DEFAULT_RANK_TOL);
        assert_relative_eq!(&p * &o, DMatrix::identity(2, 2), epsilon = 1e-12);
    }
}
