//! Plant model, sensor subsets, stacked measurement windows and the stacked
//! observation matrices built from them.
//!
//! Layout convention: every stacked object is **sensor-major**. For a sensor
//! subset `{i_1 < ... < i_k}` and window length `N`, row `j * N + s` belongs
//! to sensor `i_{j+1}` at window step `s`, i.e. `C_i A^s`. Time-major views
//! are produced explicitly through [`time_major_permutation`].

use std::fmt;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{
    self, complex_null_vector, complex_shift, to_complex, Complex64, RankInfo,
    DEFAULT_RANK_TOL, DEFAULT_STABILITY_MARGIN,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("noise bound delta_w must be finite and non-negative, got {0}")]
    NoiseBound(f64),
    #[error("window length must be at least 1")]
    Window,
    #[error("pair (A, C) is not observable (rank {rank} < {n})")]
    Unobservable { rank: usize, n: usize },
    #[error("window {window} is too short to observe the state (rank {rank} < {n})")]
    ShortWindow { window: usize, rank: usize, n: usize },
    #[error("sensor index {index} out of range for {p} sensors")]
    SensorIndex { index: usize, p: usize },
}

/// Numerical tolerances shared by every rank or stability decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub rank_tol: f64,
    pub stability_margin: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rank_tol: DEFAULT_RANK_TOL,
            stability_margin: DEFAULT_STABILITY_MARGIN,
        }
    }
}

/// Ordered set of sensor indices (0-based internally, printed 1-based).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SensorSet(Vec<usize>);

impl SensorSet {
    pub fn empty() -> Self {
        SensorSet(Vec::new())
    }

    pub fn all(p: usize) -> Self {
        SensorSet((0..p).collect())
    }

    /// Build from 0-based indices; duplicates are merged.
    pub fn new(mut indices: Vec<usize>, p: usize) -> Result<Self, ModelError> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&bad) = indices.iter().find(|&&i| i >= p) {
            return Err(ModelError::SensorIndex { index: bad + 1, p });
        }
        Ok(SensorSet(indices))
    }

    /// Build from the 1-based indices used in configs and reports.
    pub fn from_one_based(indices: &[usize], p: usize) -> Result<Self, ModelError> {
        if let Some(&bad) = indices.iter().find(|&&i| i == 0 || i > p) {
            return Err(ModelError::SensorIndex { index: bad, p });
        }
        SensorSet::new(indices.iter().map(|i| i - 1).collect(), p)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.0.iter().map(|i| i + 1).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn complement(&self, p: usize) -> SensorSet {
        SensorSet((0..p).filter(|i| !self.contains(*i)).collect())
    }

    pub fn union(&self, other: &SensorSet) -> SensorSet {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        v.sort_unstable();
        v.dedup();
        SensorSet(v)
    }

    pub fn is_subset_of(&self, other: &SensorSet) -> bool {
        self.0.iter().all(|i| other.contains(*i))
    }

    /// Rows of `c` selected by this set (the projection `P_K C`).
    pub fn project_rows(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.0.len(), c.ncols());
        for (r, &i) in self.0.iter().enumerate() {
            out.set_row(r, &c.row(i));
        }
        out
    }

    /// All subsets of `{0..p}` with exactly `k` elements, lexicographic.
    pub fn subsets_of_size(p: usize, k: usize) -> Vec<SensorSet> {
        let mut out = Vec::new();
        let mut cur = Vec::with_capacity(k);
        fn rec(start: usize, p: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<SensorSet>) {
            if cur.len() == k {
                out.push(SensorSet(cur.clone()));
                return;
            }
            for i in start..p {
                if p - i < k - cur.len() {
                    break;
                }
                cur.push(i);
                rec(i + 1, p, k, cur, out);
                cur.pop();
            }
        }
        rec(0, p, k, &mut cur, &mut out);
        out
    }
}

impl fmt::Display for SensorSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", i + 1)?;
        }
        write!(f, "}}")
    }
}

/// Bounded-noise LTI plant `x+ = Ax + Bu + v_P`, `y = Cx + v_M`, reduced for
/// estimation to `y = Cx + w` with `||w(t)|| <= delta_w`, estimated over
/// windows of `window` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    delta_w: f64,
    window: usize,
    tol: Tolerances,
    a_powers: Vec<DMatrix<f64>>,
}

impl SystemModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        delta_w: f64,
        window: usize,
    ) -> Result<Self, ModelError> {
        Self::with_tolerances(a, b, c, delta_w, window, Tolerances::default())
    }

    pub fn with_tolerances(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        delta_w: f64,
        window: usize,
        tol: Tolerances,
    ) -> Result<Self, ModelError> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(ModelError::Dimension(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n {
            return Err(ModelError::Dimension(format!(
                "B has {} rows, expected {n}",
                b.nrows()
            )));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(ModelError::Dimension(format!(
                "C is {}x{}, expected p x {n} with p >= 1",
                c.nrows(),
                c.ncols()
            )));
        }
        if !(delta_w.is_finite() && delta_w >= 0.0) {
            return Err(ModelError::NoiseBound(delta_w));
        }
        if window == 0 {
            return Err(ModelError::Window);
        }
        let obs = linalg::observability_rank(&a, &c, tol.rank_tol);
        if !obs.full_column_rank() {
            return Err(ModelError::Unobservable { rank: obs.rank, n });
        }
        let a_powers = linalg::powers(&a, window.max(n) + 1);
        let o = linalg::vstack(&a_powers[..window].iter().map(|ak| &c * ak).collect::<Vec<_>>(), n);
        let win = RankInfo::of(&o, tol.rank_tol);
        if win.rank < n {
            return Err(ModelError::ShortWindow { window, rank: win.rank, n });
        }
        Ok(SystemModel {
            a,
            b,
            c,
            delta_w,
            window,
            tol,
            a_powers,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn delta_w(&self) -> f64 {
        self.delta_w
    }
    pub fn window(&self) -> usize {
        self.window
    }
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    pub fn sensor_count(&self) -> usize {
        self.c.nrows()
    }
    pub fn tolerances(&self) -> Tolerances {
        self.tol
    }

    /// Same plant with a different noise bound.
    pub fn with_delta_w(&self, delta_w: f64) -> Result<Self, ModelError> {
        if !(delta_w.is_finite() && delta_w >= 0.0) {
            return Err(ModelError::NoiseBound(delta_w));
        }
        let mut m = self.clone();
        m.delta_w = delta_w;
        Ok(m)
    }

    /// Same plant with a different window length.
    pub fn with_window(&self, window: usize) -> Result<Self, ModelError> {
        Self::with_tolerances(
            self.a.clone(),
            self.b.clone(),
            self.c.clone(),
            self.delta_w,
            window,
            self.tol,
        )
    }

    /// `A^k`, cached for `k <= max(N, n)`.
    pub fn a_pow(&self, k: usize) -> DMatrix<f64> {
        match self.a_powers.get(k) {
            Some(m) => m.clone(),
            None => {
                let mut m = self.a_powers.last().unwrap().clone();
                for _ in self.a_powers.len() - 1..k {
                    m = &self.a * m;
                }
                m
            }
        }
    }

    pub fn all_sensors(&self) -> SensorSet {
        SensorSet::all(self.sensor_count())
    }
}

/// Stacked observation matrix `O_K` for the sensors in `subset`
/// (`|subset| * N` rows, sensor-major).
pub fn build_o(model: &SystemModel, subset: &SensorSet) -> DMatrix<f64> {
    build_o_depth(model, subset, model.window())
}

/// Sensor-major stack of `C_i A^s` for `i` in `subset`, `s < depth`.
pub fn build_o_depth(model: &SystemModel, subset: &SensorSet, depth: usize) -> DMatrix<f64> {
    let n = model.state_dim();
    let mut out = DMatrix::zeros(subset.len() * depth, n);
    for s in 0..depth {
        let cas = model.c() * model.a_pow(s);
        for (j, &i) in subset.indices().iter().enumerate() {
            out.set_row(j * depth + s, &cas.row(i));
        }
    }
    out
}

/// `F(K, N)`: the clean-sensor stack `O_{K^c}` followed by the compromised
/// rows `P_K C A^s` for `s <= N - 2` (sensor-major within each part).
pub fn build_f(model: &SystemModel, compromised: &SensorSet) -> DMatrix<f64> {
    let n = model.state_dim();
    let clean = compromised.complement(model.sensor_count());
    let top = build_o(model, &clean);
    let bottom = build_o_depth(model, compromised, model.window().saturating_sub(1));
    linalg::vstack(&[top, bottom], n)
}

/// Permutation `perm` with `time_major[r] = sensor_major[perm[r]]` for a
/// stack of `sensors` blocks of `window` rows each.
pub fn time_major_permutation(sensors: usize, window: usize) -> Vec<usize> {
    let mut perm = Vec::with_capacity(sensors * window);
    for s in 0..window {
        for i in 0..sensors {
            perm.push(i * window + s);
        }
    }
    perm
}

/// Length-`N` window of stacked per-sensor sequences starting at
/// `window_start` (sensor-major: block `i` is `[v_i(t), ..., v_i(t+N-1)]`).
#[derive(Debug, Clone, PartialEq)]
pub struct StackedWindow {
    pub window_start: usize,
    sensors: usize,
    window: usize,
    data: DVector<f64>,
}

impl StackedWindow {
    pub fn from_stacked(
        data: DVector<f64>,
        sensors: usize,
        window: usize,
        window_start: usize,
    ) -> Result<Self, ModelError> {
        if data.len() != sensors * window {
            return Err(ModelError::Dimension(format!(
                "stacked vector has length {}, expected {}",
                data.len(),
                sensors * window
            )));
        }
        Ok(StackedWindow {
            window_start,
            sensors,
            window,
            data,
        })
    }

    /// Stack per-step `p`-vectors `steps[0..N]`.
    pub fn from_steps(steps: &[DVector<f64>], window_start: usize) -> Result<Self, ModelError> {
        let window = steps.len();
        let sensors = steps.first().map_or(0, |v| v.len());
        let mut data = DVector::zeros(sensors * window);
        for (s, v) in steps.iter().enumerate() {
            if v.len() != sensors {
                return Err(ModelError::Dimension("ragged step vectors".into()));
            }
            for i in 0..sensors {
                data[i * window + s] = v[i];
            }
        }
        Ok(StackedWindow {
            window_start,
            sensors,
            window,
            data,
        })
    }

    pub fn stacked(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn into_stacked(self) -> DVector<f64> {
        self.data
    }

    pub fn sensors(&self) -> usize {
        self.sensors
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Block of sensor `i`: `[v_i(t), ..., v_i(t+N-1)]`.
    pub fn sensor_block(&self, i: usize) -> DVector<f64> {
        self.data.rows(i * self.window, self.window).into_owned()
    }

    /// All sensors at window step `k` (the transposed view).
    pub fn per_step(&self, k: usize) -> DVector<f64> {
        DVector::from_fn(self.sensors, |i, _| self.data[i * self.window + k])
    }
}

/// Per-step 2-norms of a sensor-major stacked vector restricted to the rows
/// of `rows_sensors` sensors (each contributing `window` consecutive rows).
pub fn per_step_norms(stacked: &DVector<f64>, rows_sensors: usize, window: usize) -> Vec<f64> {
    (0..window)
        .map(|k| {
            (0..rows_sensors)
                .map(|i| stacked[i * window + k].powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Outcome of the unstable-eigenvector / null-space intersection test.
#[derive(Debug, Clone, PartialEq)]
pub struct UnstableWitness {
    pub eigenvalue: Complex64,
    pub direction: WitnessDirection,
    /// Real Jordan chain `v_1, ..., v_{q+1}` with `(A - lambda I) v_{j+1} = v_j`
    /// inside `N(O_{K^c})`; just `[v_1]` for a complex pair.
    pub chain: Vec<DVector<f64>>,
    /// Smallest singular value of `[A - lambda I; O_{K^c}]`.
    pub residual_sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WitnessDirection {
    Real(DVector<f64>),
    /// Orthonormal basis of the real invariant plane of a complex pair.
    Plane(DVector<f64>, DVector<f64>),
}

impl UnstableWitness {
    /// Real basis (columns) of the A-invariant subspace carried by the
    /// witness: the Jordan chain, or the eigen-plane of a complex pair.
    pub fn subspace(&self) -> DMatrix<f64> {
        match &self.direction {
            WitnessDirection::Real(_) => DMatrix::from_columns(&self.chain),
            WitnessDirection::Plane(re, im) => DMatrix::from_columns(&[re.clone(), im.clone()]),
        }
    }

    /// Head of the longest chain (the eigenvector itself for Case I).
    pub fn chain_head(&self) -> DVector<f64> {
        match &self.direction {
            WitnessDirection::Real(_) => self.chain.last().unwrap().clone(),
            WitnessDirection::Plane(re, _) => re.clone(),
        }
    }

    pub fn eigenvector(&self) -> DVector<f64> {
        match &self.direction {
            WitnessDirection::Real(v) => v.clone(),
            WitnessDirection::Plane(re, _) => re.clone(),
        }
    }
}

/// For each eigenvalue with `|lambda| >= 1 - stability_margin`, test whether
/// `[A - lambda I; O_{K^c}]` loses rank; return the first (in eigenstructure
/// order) witness found, re-verified numerically.
pub fn unstable_null_intersection(
    model: &SystemModel,
    compromised: &SensorSet,
    stability_margin: f64,
) -> Option<UnstableWitness> {
    let rank_tol = model.tolerances().rank_tol;
    let n = model.state_dim();
    let clean = compromised.complement(model.sensor_count());
    let o_clean = build_o(model, &clean);
    for eig in linalg::unstable_eigenstructure(model.a(), stability_margin) {
        let lambda = eig.value();
        let shifted = complex_shift(model.a(), lambda);
        let stacked = stack_complex(&shifted, &to_complex(&o_clean));
        let Some((v, sigma)) = complex_null_vector(&stacked, rank_tol) else {
            continue;
        };
        let v = rotate_to_real(v);
        let im_norm = v.iter().map(|z| z.im * z.im).sum::<f64>().sqrt();
        let witness = if lambda.im == 0.0 || im_norm <= 10.0 * rank_tol {
            let real = linalg::normalize_sign(v.map(|z| z.re).normalize());
            let chain = jordan_chain(
                model.a(),
                &o_clean,
                lambda.re,
                real.clone(),
                eig.algebraic_multiplicity,
                rank_tol,
            );
            UnstableWitness {
                eigenvalue: Complex::new(lambda.re, 0.0),
                direction: WitnessDirection::Real(real),
                chain,
                residual_sigma: sigma,
            }
        } else {
            let re = v.map(|z| z.re);
            let im = v.map(|z| z.im);
            let q = DMatrix::from_columns(&[re, im]).qr().q();
            let e1 = q.column(0).into_owned();
            let e2 = q.column(1).into_owned();
            UnstableWitness {
                eigenvalue: lambda,
                direction: WitnessDirection::Plane(e1.clone(), e2),
                chain: vec![e1],
                residual_sigma: sigma,
            }
        };
        if verify_witness(model, &o_clean, &witness, n) {
            return Some(witness);
        }
    }
    None
}

fn stack_complex(top: &DMatrix<Complex64>, bottom: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let n = top.ncols();
    let mut out = DMatrix::from_element(top.nrows() + bottom.nrows(), n, Complex64::new(0.0, 0.0));
    out.rows_mut(0, top.nrows()).copy_from(top);
    if bottom.nrows() > 0 {
        out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    }
    out
}

/// Multiply by a unit phase so the largest entry becomes real positive.
fn rotate_to_real(v: DVector<Complex64>) -> DVector<Complex64> {
    let pivot = v
        .iter()
        .copied()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap_or(Complex64::new(1.0, 0.0));
    if pivot.norm() == 0.0 {
        return v;
    }
    let phase = pivot.conj() / pivot.norm();
    let w = v.map(|z| z * phase);
    let nrm = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    w.map(|z| z / nrm)
}

/// Extend `v_1` by solving `[A - lambda I; O_{K^c}] v_{j+1} = [v_j; 0]` in the
/// least-squares sense while the residual stays negligible.
fn jordan_chain(
    a: &DMatrix<f64>,
    o_clean: &DMatrix<f64>,
    lambda: f64,
    v1: DVector<f64>,
    max_len: usize,
    rank_tol: f64,
) -> Vec<DVector<f64>> {
    let n = a.nrows();
    let shifted = a - DMatrix::identity(n, n) * lambda;
    let stacked = linalg::vstack(&[shifted, o_clean.clone()], n);
    let pinv = linalg::pinv(&stacked, rank_tol);
    let scale = linalg::norm2(&stacked).max(1.0);
    let mut chain = vec![v1];
    while chain.len() < max_len {
        let prev = chain.last().unwrap();
        let mut rhs = DVector::zeros(stacked.nrows());
        rhs.rows_mut(0, n).copy_from(prev);
        let next = &pinv * &rhs;
        let resid = (&stacked * &next - &rhs).norm();
        if resid > 10.0 * rank_tol * scale * next.norm().max(prev.norm()) {
            break;
        }
        chain.push(next);
    }
    chain
}

fn verify_witness(
    model: &SystemModel,
    o_clean: &DMatrix<f64>,
    w: &UnstableWitness,
    n: usize,
) -> bool {
    let tol = 10.0 * model.tolerances().rank_tol * linalg::norm2(model.a()).max(1.0);
    let basis = w.subspace();
    for col in basis.column_iter() {
        let v = col.into_owned();
        let scale = v.norm().max(f64::MIN_POSITIVE);
        if o_clean.nrows() > 0 && (o_clean * &v).norm() > tol * scale * linalg::norm2(o_clean).max(1.0) {
            return false;
        }
    }
    match &w.direction {
        WitnessDirection::Real(v) => {
            let r = (model.a() * v - v * w.eigenvalue.re).norm();
            r <= tol * v.norm()
        }
        WitnessDirection::Plane(e1, e2) => {
            // A maps the plane into itself.
            let q = DMatrix::from_columns(&[e1.clone(), e2.clone()]);
            let img = model.a() * &q;
            let proj = &q * (q.transpose() * &img);
            (img - proj).norm() <= tol * (n as f64).sqrt()
        }
    }
}

/// Largest `k` such that `(A, P_R C)` stays observable for every `R` with
/// `|R| = p - k` (brute force over subsets).
pub fn max_sparse_observability(model: &SystemModel) -> usize {
    let p = model.sensor_count();
    let rank_tol = model.tolerances().rank_tol;
    for k in 1..=p {
        let all_ok = SensorSet::subsets_of_size(p, p - k).iter().all(|r| {
            linalg::is_observable(model.a(), &r.project_rows(model.c()), rank_tol)
        });
        if !all_ok {
            return k - 1;
        }
    }
    p
}

/// Rank report for `O_K` on the model's tolerance.
pub fn o_rank(model: &SystemModel, subset: &SensorSet) -> RankInfo {
    RankInfo::of(&build_o(model, subset), model.tolerances().rank_tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_relative_eq;

    #[test]
    fn sensor_set_basics() {
        let s = SensorSet::from_one_based(&[3, 1], 4).unwrap();
        assert_eq!(s.indices(), &[0, 2]);
        assert_eq!(s.complement(4).one_based(), vec![2, 4]);
        assert_eq!(s.to_string(), "{1,3}");
        assert!(SensorSet::from_one_based(&[0], 3).is_err());
        assert!(SensorSet::from_one_based(&[4], 3).is_err());
        assert_eq!(SensorSet::subsets_of_size(4, 2).len(), 6);
    }

    #[test]
    fn rejects_unobservable_and_bad_dims() {
        let a = DMatrix::identity(2, 2);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let b = DMatrix::zeros(2, 1);
        assert!(matches!(
            SystemModel::new(a.clone(), b.clone(), c.clone(), 0.1, 2),
            Err(ModelError::Unobservable { .. })
        ));
        assert!(matches!(
            SystemModel::new(a.clone(), DMatrix::zeros(3, 1), c.clone(), 0.1, 2),
            Err(ModelError::Dimension(_))
        ));
        let obs_a = DMatrix::from_row_slice(2, 2, &[0.3, 1.0, 0.0, 0.5]);
        assert!(matches!(
            SystemModel::new(obs_a.clone(), b.clone(), c.clone(), -1.0, 2),
            Err(ModelError::NoiseBound(_))
        ));
        assert!(matches!(
            SystemModel::new(obs_a, b, c, 0.0, 0),
            Err(ModelError::Window)
        ));
    }

    #[test]
    fn scalar_plant_observation_matrix() {
        let m = fixtures::scalar_plant(2, 0.0);
        let o = build_o(&m, &m.all_sensors());
        assert_relative_eq!(o, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.3, 1.0]));
        let empty = build_o(&m, &SensorSet::empty());
        assert_eq!((empty.nrows(), empty.ncols()), (0, 2));
        assert_eq!(linalg::rank_with_tol(&empty, 1e-9), 0);
    }

    #[test]
    fn vtf_observation_matrix_is_sensor_major() {
        let m = fixtures::vtf(0.1);
        let o = build_o(&m, &m.all_sensors());
        let expected = DMatrix::from_row_slice(
            6,
            2,
            &[1.0, 0.0, 1.0, 0.01, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0],
        );
        assert_relative_eq!(o, expected, epsilon = 1e-15);
        // the time-major view is an explicit permutation
        let perm = time_major_permutation(3, 2);
        let tm = DMatrix::from_fn(6, 2, |r, c| o[(perm[r], c)]);
        let expected_tm = DMatrix::from_row_slice(
            6,
            2,
            &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.01, 0.0, 1.0, 0.0, 1.0],
        );
        assert_relative_eq!(tm, expected_tm, epsilon = 1e-15);
    }

    #[test]
    fn f_matrix_examples() {
        let m = fixtures::scalar_plant(2, 0.0);
        let f = build_f(&m, &m.all_sensors());
        assert_relative_eq!(f, DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
        let f_empty_k = build_f(&m, &SensorSet::empty());
        assert_relative_eq!(f_empty_k, build_o(&m, &m.all_sensors()));

        let vtf = fixtures::vtf(0.1);
        let f = build_f(&vtf, &vtf.all_sensors());
        assert_relative_eq!(f, vtf.c().clone());
        assert_eq!(linalg::rank_with_tol(&f, 1e-9), 2);
    }

    #[test]
    fn f_with_single_step_window_has_no_compromised_rows() {
        let m = SystemModel::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
            0.0,
            1,
        )
        .unwrap();
        let f = build_f(&m, &m.all_sensors());
        assert_eq!(f.nrows(), 0);
    }

    #[test]
    fn window_shorter_than_observability_index_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[0.3, 1.0, 0.0, 0.5]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let err = SystemModel::new(a, DMatrix::zeros(2, 1), c, 0.0, 1).unwrap_err();
        assert!(matches!(err, ModelError::ShortWindow { rank: 1, n: 2, .. }));
    }

    #[test]
    fn stacked_window_views() {
        let steps = vec![
            DVector::from_vec(vec![1.0, 2.0, 3.0]),
            DVector::from_vec(vec![4.0, 5.0, 6.0]),
        ];
        let w = StackedWindow::from_steps(&steps, 7).unwrap();
        assert_eq!(w.stacked().as_slice(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(w.per_step(1).as_slice(), &[4.0, 5.0, 6.0]);
        assert_eq!(w.sensor_block(2).as_slice(), &[3.0, 6.0]);
        assert_eq!(w.window_start, 7);
    }

    #[test]
    fn vtf_witness_is_jordan_eigenvector() {
        let m = fixtures::vtf(0.1);
        let w = unstable_null_intersection(&m, &m.all_sensors(), 1e-9).unwrap();
        assert_relative_eq!(w.eigenvalue.re, 1.0, epsilon = 1e-9);
        let v = w.eigenvector();
        assert_relative_eq!(v[0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(v[1], 0.0, epsilon = 1e-9);
        assert_eq!(w.chain.len(), 2);
        // (A - I) v2 = v1
        let r = (m.a() - DMatrix::identity(2, 2)) * &w.chain[1] - &w.chain[0];
        assert!(r.norm() < 1e-9);
    }

    #[test]
    fn no_witness_without_compromise() {
        let m = fixtures::vtf(0.1);
        assert!(unstable_null_intersection(&m, &SensorSet::empty(), 1e-9).is_none());
    }

    #[test]
    fn diagonal_witness_needs_blind_clean_sensor() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let m = SystemModel::new(a, DMatrix::zeros(2, 1), DMatrix::identity(2, 2), 0.1, 2).unwrap();
        let k = SensorSet::from_one_based(&[1], 2).unwrap();
        // sensor 2 sees only the stable mode, so e1 is hidden from it
        let w = unstable_null_intersection(&m, &k, 1e-9).unwrap();
        assert_relative_eq!(w.eigenvector()[0], 1.0, epsilon = 1e-12);
        let k2 = SensorSet::from_one_based(&[2], 2).unwrap();
        assert!(unstable_null_intersection(&m, &k2, 1e-9).is_none());
    }

    #[test]
    fn complex_witness_spans_invariant_plane() {
        let (c, s) = (1.2 * 0.4f64.cos(), 1.2 * 0.4f64.sin());
        let a = DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 0.5]);
        let cm = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let m = SystemModel::new(a, DMatrix::zeros(3, 1), cm, 0.1, 3).unwrap();
        let k = SensorSet::from_one_based(&[1], 2).unwrap();
        let w = unstable_null_intersection(&m, &k, 1e-9).unwrap();
        assert!(matches!(w.direction, WitnessDirection::Plane(..)));
        let basis = w.subspace();
        assert!((basis.row(2).norm()) < 1e-9);
    }

    #[test]
    fn sparse_observability_brute_force() {
        // removing sensor 1 leaves only velocity sensors
        assert_eq!(max_sparse_observability(&fixtures::vtf(0.1)), 0);
        let m = SystemModel::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
            0.0,
            2,
        )
        .unwrap();
        assert_eq!(max_sparse_observability(&m), 0);
        assert_eq!(max_sparse_observability(&fixtures::scalar_plant(2, 0.0)), 0);
        // three generic position-like sensors on a rotation: any one suffices
        let (c, s) = (0.9f64.cos(), 0.9f64.sin());
        let rot = SystemModel::new(
            DMatrix::from_row_slice(2, 2, &[c, -s, s, c]),
            DMatrix::zeros(2, 1),
            DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
            0.0,
            2,
        )
        .unwrap();
        assert_eq!(max_sparse_observability(&rot), 2);
    }
}
