//! l0 decoder: the smallest set of sensors whose removal leaves the window
//! consistent with the plant and the noise bound.
//!
//! Candidate supports are enumerated by cardinality and then
//! lexicographically. Each candidate is checked by a feasibility oracle that
//! runs alternating projections between the affine residual set
//! `{y_c - O_c x}` and the noise set restricted to the clean rows, stopping
//! early on a separating hyperplane. Checks still open at the iteration cap
//! go to a log-barrier solve of `min_x max_k ||y_k - O_k x||`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::model::{build_o, SensorSet, SystemModel};
use crate::par::Execution;

/// Absolute tolerance on the distance between the two convex sets.
pub const EPS_FEAS: f64 = 1e-8;
/// Iteration cap of the alternating projections before the barrier solve.
pub const MAX_ITER: usize = 20_000;
/// Largest sensor count accepted by the exhaustive support search.
pub const MAX_SENSORS: usize = 20;
/// Clean-set projections are precomputed up to this many sensors.
const PRECOMPUTE_SENSORS: usize = 12;
/// Levels smaller than this are searched sequentially even in parallel mode.
const PAR_LEVEL_MIN: usize = 16;

/// `eq_tol = 1e-6 * (1 + ||y||)`.
pub fn eq_tol(y: &DVector<f64>) -> f64 {
    1e-6 * (1.0 + y.norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OmegaMode {
    /// `||w(k)|| <= delta_w` for every window step `k`.
    #[default]
    PerStepBall,
    /// `||w|| <= sqrt(N) * delta_w` on the whole stacked vector.
    StackedBall,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseFeasibleSet {
    pub mode: OmegaMode,
    pub delta_w: f64,
    pub eps_feas: f64,
    pub max_iter: usize,
}

impl NoiseFeasibleSet {
    pub fn per_step(delta_w: f64) -> Self {
        NoiseFeasibleSet {
            mode: OmegaMode::PerStepBall,
            delta_w,
            eps_feas: EPS_FEAS,
            max_iter: MAX_ITER,
        }
    }

    pub fn stacked(delta_w: f64) -> Self {
        NoiseFeasibleSet {
            mode: OmegaMode::StackedBall,
            ..Self::per_step(delta_w)
        }
    }

    pub fn for_model(model: &SystemModel, mode: OmegaMode) -> Self {
        NoiseFeasibleSet {
            mode,
            ..Self::per_step(model.delta_w())
        }
    }

    /// Euclidean projection of `w` (rows of `sensors` blocks of `window`,
    /// sensor-major) onto the set.
    pub fn project(&self, w: &DVector<f64>, sensors: usize, window: usize) -> DVector<f64> {
        let mut out = w.clone();
        match self.mode {
            OmegaMode::StackedBall => {
                let r = (window as f64).sqrt() * self.delta_w;
                let nrm = w.norm();
                if nrm > r {
                    out *= if nrm > 0.0 { r / nrm } else { 0.0 };
                }
            }
            OmegaMode::PerStepBall => {
                for k in 0..window {
                    let nrm = (0..sensors)
                        .map(|j| w[j * window + k].powi(2))
                        .sum::<f64>()
                        .sqrt();
                    if nrm > self.delta_w {
                        let s = self.delta_w / nrm;
                        for j in 0..sensors {
                            out[j * window + k] *= s;
                        }
                    }
                }
            }
        }
        out
    }

    /// Support function `max { g . w : w in the set }`.
    pub fn support(&self, g: &DVector<f64>, sensors: usize, window: usize) -> f64 {
        match self.mode {
            OmegaMode::StackedBall => (window as f64).sqrt() * self.delta_w * g.norm(),
            OmegaMode::PerStepBall => {
                self.delta_w * crate::model::per_step_norms(g, sensors, window).iter().sum::<f64>()
            }
        }
    }

    /// Largest violation of the set's norm constraints by `w` (zero inside).
    pub fn violation(&self, w: &DVector<f64>, sensors: usize, window: usize) -> f64 {
        match self.mode {
            OmegaMode::StackedBall => (w.norm() - (window as f64).sqrt() * self.delta_w).max(0.0),
            OmegaMode::PerStepBall => crate::model::per_step_norms(w, sensors, window)
                .into_iter()
                .map(|n| (n - self.delta_w).max(0.0))
                .fold(0.0, f64::max),
        }
    }
}

/// Outcome of one feasibility test.
#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    Feasible {
        x_hat: DVector<f64>,
        /// Noise on the clean rows only, sensor-major.
        w_hat: DVector<f64>,
        iterations: usize,
    },
    Infeasible {
        distance: f64,
        iterations: usize,
    },
    /// The optimum lies within `eps` of the noise bound from above.
    Indeterminate {
        distance: f64,
        iterations: usize,
    },
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible { .. })
    }

    pub fn iterations(&self) -> usize {
        match self {
            Feasibility::Feasible { iterations, .. }
            | Feasibility::Infeasible { iterations, .. }
            | Feasibility::Indeterminate { iterations, .. } => *iterations,
        }
    }
}

/// Precomputed least-squares data for one clean sensor set.
#[derive(Debug, Clone)]
struct CleanRows {
    clean: SensorSet,
    pinv: DMatrix<f64>,
    /// Orthogonal projector onto the range of `O_c`.
    range: DMatrix<f64>,
}

impl CleanRows {
    fn new(model: &SystemModel, clean: SensorSet) -> Self {
        let o = build_o(model, &clean);
        let pinv = linalg::pinv(&o, model.tolerances().rank_tol);
        let range = &o * &pinv;
        CleanRows { clean, pinv, range }
    }
}

fn restrict(y: &DVector<f64>, clean: &SensorSet, window: usize) -> DVector<f64> {
    let mut out = DVector::zeros(clean.len() * window);
    for (j, &i) in clean.indices().iter().enumerate() {
        out.rows_mut(j * window, window)
            .copy_from(&y.rows(i * window, window));
    }
    out
}

fn run_oracle(
    rows: &CleanRows,
    y_full: &DVector<f64>,
    window: usize,
    n: usize,
    omega: &NoiseFeasibleSet,
) -> Feasibility {
    let k = rows.clean.len();
    if k == 0 {
        return Feasibility::Feasible {
            x_hat: DVector::zeros(n),
            w_hat: DVector::zeros(0),
            iterations: 0,
        };
    }
    let y = restrict(y_full, &rows.clean, window);
    let eps = omega.eps_feas;
    // Start at the least-squares residual, the point of the affine set
    // closest to the origin.
    let x_ls = &rows.pinv * &y;
    let r_ls = &y - &rows.range * &y;
    if omega.violation(&r_ls, k, window) == 0.0 {
        return Feasibility::Feasible {
            x_hat: x_ls,
            w_hat: r_ls,
            iterations: 0,
        };
    }
    // The per-step set lies inside the stacked ball; the least-squares
    // residual is the shortest point of the affine set, so exceeding the
    // stacked radius decides infeasibility outright.
    let outer = (window as f64).sqrt() * omega.delta_w;
    if r_ls.norm() > outer + eps {
        return Feasibility::Infeasible {
            distance: r_ls.norm() - outer,
            iterations: 0,
        };
    }
    if omega.mode == OmegaMode::StackedBall || omega.delta_w == 0.0 {
        // Single ball (or a point): the projection of the residual is exact.
        let b = omega.project(&r_ls, k, window);
        let dist = (&r_ls - &b).norm();
        return if dist <= eps {
            Feasibility::Feasible {
                x_hat: &rows.pinv * (&y - &b),
                w_hat: b,
                iterations: 1,
            }
        } else {
            Feasibility::Infeasible {
                distance: dist,
                iterations: 1,
            }
        };
    }

    let mut a = r_ls;
    let mut dist = f64::INFINITY;
    for it in 1..=omega.max_iter {
        let b = omega.project(&a, k, window);
        let gap = &a - &b;
        dist = gap.norm();
        if dist <= eps {
            return Feasibility::Feasible {
                x_hat: &rows.pinv * (&y - &b),
                w_hat: b,
                iterations: it,
            };
        }
        // The gap direction, made orthogonal to range(O_c), is constant on
        // the affine set; once it also bounds the noise set from the other
        // side the two are separated.
        let normal = &gap - &rows.range * &gap;
        let nn = normal.norm();
        if nn > 0.0 {
            let sep = (normal.dot(&y) - omega.support(&normal, k, window)) / nn;
            if sep > eps {
                return Feasibility::Infeasible {
                    distance: sep,
                    iterations: it,
                };
            }
        }
        let diff = &b - &y;
        a = &y + &rows.range * diff;
    }
    // Alternating projections crawl when the intersection is thin; settle
    // the question with an interior-point solve instead.
    let b = omega.project(&a, k, window);
    let m = minimax_residual(&rows.range, &rows.pinv, &b, &y, k, window);
    let iterations = omega.max_iter + m.newton_steps;
    let slack = m.best - omega.delta_w;
    if slack <= eps {
        return Feasibility::Feasible {
            x_hat: m.x,
            w_hat: omega.project(&m.w, k, window),
            iterations,
        };
    }
    if m.lower - omega.delta_w > eps {
        return Feasibility::Infeasible {
            distance: m.lower - omega.delta_w,
            iterations,
        };
    }
    Feasibility::Indeterminate {
        distance: slack.min(dist),
        iterations,
    }
}

/// Result of `min_x max_k ||y_k - O_k x||` over the clean rows.
struct Minimax {
    x: DVector<f64>,
    w: DVector<f64>,
    /// Objective at `x`.
    best: f64,
    /// Certified lower bound on the optimum.
    lower: f64,
    newton_steps: usize,
}

/// Log-barrier path following on `min t` subject to `||r_k|| <= t`, with the
/// residual `r = y - Q xi` parametrised over an orthonormal basis `Q` of
/// range(O_c).
fn minimax_residual(
    range: &DMatrix<f64>,
    pinv: &DMatrix<f64>,
    noise_guess: &DVector<f64>,
    y: &DVector<f64>,
    sensors: usize,
    window: usize,
) -> Minimax {
    let eig = nalgebra::SymmetricEigen::new(range.clone());
    let cols: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > 0.5)
        .collect();
    let r = cols.len();
    let q = DMatrix::from_fn(y.len(), r, |i, j| eig.eigenvectors[(i, cols[j])]);
    let step_rows = |k: usize| (0..sensors).map(move |j| j * window + k);
    let residual = |xi: &DVector<f64>| y - &q * xi;
    let objective = |w: &DVector<f64>| {
        crate::model::per_step_norms(w, sensors, window)
            .into_iter()
            .fold(0.0, f64::max)
    };
    let mut xi = q.transpose() * (y - noise_guess);
    let mut w = residual(&xi);
    let mut t = objective(&w);
    t = 1.1 * t + 1e-12 * (1.0 + t);
    let nu = 2.0 * window as f64;
    let mut tau = nu / t.max(1e-12);
    let mut steps = 0;
    let mut best = (f64::INFINITY, xi.clone());
    let mut lower = 0.0_f64;
    for _outer in 0..80 {
        let mut centred = false;
        for _ in 0..100 {
            steps += 1;
            let mut grad = DVector::zeros(r + 1);
            let mut hess = DMatrix::zeros(r + 1, r + 1);
            grad[r] = tau;
            for k in 0..window {
                let mut gk = DVector::zeros(r + 1);
                let mut qk = DMatrix::zeros(sensors, r);
                let mut rk2 = 0.0;
                for (row, i) in step_rows(k).enumerate() {
                    qk.row_mut(row).copy_from(&q.row(i));
                    rk2 += w[i] * w[i];
                }
                let rk = DVector::from_iterator(sensors, step_rows(k).map(|i| w[i]));
                let sk = t * t - rk2;
                gk.rows_mut(0, r).copy_from(&(2.0 * qk.transpose() * &rk));
                gk[r] = 2.0 * t;
                grad -= &gk / sk;
                hess += &gk * gk.transpose() / (sk * sk);
                let qtq = qk.transpose() * &qk;
                let mut block = hess.view_mut((0, 0), (r, r));
                block += qtq * (2.0 / sk);
                hess[(r, r)] -= 2.0 / sk;
            }
            let dz = match hess.clone().cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => match hess.clone().lu().solve(&(-&grad)) {
                    Some(d) => d,
                    None => break,
                },
            };
            let dec = -grad.dot(&dz);
            if dec.is_nan() || dec <= 1e-14 {
                centred = dec.is_finite();
                break;
            }
            let phi = |xi: &DVector<f64>, t: f64| -> Option<f64> {
                let w = residual(xi);
                let mut v = tau * t;
                for n in crate::model::per_step_norms(&w, sensors, window) {
                    let s = t * t - n * n;
                    if s.is_nan() || s <= 0.0 || t <= 0.0 {
                        return None;
                    }
                    v -= s.ln();
                }
                Some(v)
            };
            let f0 = phi(&xi, t).unwrap_or(f64::INFINITY);
            let mut alpha = 1.0;
            let mut moved = false;
            while alpha > 1e-12 {
                let xn = &xi + dz.rows(0, r) * alpha;
                let tn = t + alpha * dz[r];
                if let Some(f) = phi(&xn, tn) {
                    if f <= f0 - 0.25 * alpha * dec {
                        xi = xn;
                        t = tn;
                        moved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !moved {
                break;
            }
            w = residual(&xi);
            let obj = objective(&w);
            if obj < best.0 {
                best = (obj, xi.clone());
            }
            if dec < 1e-10 {
                centred = true;
                break;
            }
        }
        if centred {
            lower = lower.max(t - nu / tau);
        }
        if best.0 - lower < 1e-12 * (1.0 + best.0) {
            break;
        }
        tau *= 8.0;
    }
    let w = residual(&best.1);
    let x = pinv * (y - &w);
    Minimax {
        x,
        w,
        best: best.0,
        lower,
        newton_steps: steps,
    }
}

/// Checks whether the clean rows of `y_window` admit a state and a noise
/// vector inside `omega`.
pub fn feasibility_oracle(
    model: &SystemModel,
    clean: &SensorSet,
    y_window: &DVector<f64>,
    omega: &NoiseFeasibleSet,
) -> Feasibility {
    let rows = CleanRows::new(model, clean.clone());
    run_oracle(&rows, y_window, model.window(), model.state_dim(), omega)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DecodeStats {
    pub supports_tested: usize,
    pub oracle_iterations: usize,
    pub indeterminate: usize,
}

impl std::ops::AddAssign for DecodeStats {
    fn add_assign(&mut self, o: Self) {
        self.supports_tested += o.supports_tested;
        self.oracle_iterations += o.oracle_iterations;
        self.indeterminate += o.indeterminate;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub x_hat: DVector<f64>,
    /// Sensor-major, zero outside `support`.
    pub a_hat: DVector<f64>,
    /// Sensor-major, zero on `support` rows.
    pub w_hat: DVector<f64>,
    pub support: SensorSet,
    pub feasible: bool,
    pub stats: DecodeStats,
}

impl DecodeResult {
    /// `x_hat - x`.
    pub fn error_against(&self, x_true: &DVector<f64>) -> DVector<f64> {
        &self.x_hat - x_true
    }
}

/// Decoder bound to one model and noise set, with the least-squares data of
/// every clean set cached for small sensor counts.
#[derive(Debug, Clone)]
pub struct Decoder {
    model: SystemModel,
    omega: NoiseFeasibleSet,
    o_full: DMatrix<f64>,
    cache: Vec<CleanRows>,
    exec: Execution,
}

fn mask_of(set: &SensorSet) -> usize {
    set.indices().iter().fold(0, |m, &i| m | (1 << i))
}

impl Decoder {
    pub fn new(model: &SystemModel, omega: NoiseFeasibleSet) -> Self {
        let p = model.sensor_count();
        assert!(p <= MAX_SENSORS, "support search capped at {MAX_SENSORS} sensors");
        let cache = if p <= PRECOMPUTE_SENSORS {
            (0..1usize << p)
                .map(|mask| {
                    let idx: Vec<usize> = (0..p).filter(|i| mask & (1 << i) != 0).collect();
                    CleanRows::new(model, SensorSet::new(idx, p).expect("in range"))
                })
                .collect()
        } else {
            Vec::new()
        };
        Decoder {
            model: model.clone(),
            omega,
            o_full: build_o(model, &model.all_sensors()),
            cache,
            exec: Execution::default(),
        }
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn model(&self) -> &SystemModel {
        &self.model
    }

    pub fn omega(&self) -> &NoiseFeasibleSet {
        &self.omega
    }

    fn oracle(&self, clean: &SensorSet, y: &DVector<f64>) -> Feasibility {
        let n = self.model.state_dim();
        let window = self.model.window();
        if self.cache.is_empty() {
            run_oracle(&CleanRows::new(&self.model, clean.clone()), y, window, n, &self.omega)
        } else {
            run_oracle(&self.cache[mask_of(clean)], y, window, n, &self.omega)
        }
    }

    /// Decodes one stacked window (length `p * N`, sensor-major).
    pub fn decode(&self, y: &DVector<f64>) -> DecodeResult {
        self.decode_with(y, self.exec)
    }

    /// A parallel level tests all of its supports; a sequential one stops at
    /// the first feasible support.
    fn decode_with(&self, y: &DVector<f64>, exec: Execution) -> DecodeResult {
        let p = self.model.sensor_count();
        let window = self.model.window();
        assert_eq!(y.len(), p * window, "window length must be p * N");
        let mut stats = DecodeStats::default();
        for card in 0..=p {
            let level = SensorSet::subsets_of_size(p, card);
            let results: Vec<Feasibility> =
                if level.len() >= PAR_LEVEL_MIN && exec.is_parallel() {
                    exec.map(&level, |g| self.oracle(&g.complement(p), y))
                } else {
                    // Stop at the first feasible support.
                    let mut out = Vec::new();
                    for g in &level {
                        let r = self.oracle(&g.complement(p), y);
                        let done = r.is_feasible();
                        out.push(r);
                        if done {
                            break;
                        }
                    }
                    out
                };
            for (g, r) in level.iter().zip(results) {
                stats.supports_tested += 1;
                stats.oracle_iterations += r.iterations();
                match r {
                    Feasibility::Feasible { x_hat, w_hat, .. } => {
                        return self.assemble(y, g, x_hat, w_hat, stats);
                    }
                    Feasibility::Indeterminate { .. } => stats.indeterminate += 1,
                    Feasibility::Infeasible { .. } => {}
                }
            }
        }
        unreachable!("the full support always leaves an empty, feasible clean set")
    }

    fn assemble(
        &self,
        y: &DVector<f64>,
        support: &SensorSet,
        x_hat: DVector<f64>,
        w_clean: DVector<f64>,
        stats: DecodeStats,
    ) -> DecodeResult {
        let p = self.model.sensor_count();
        let window = self.model.window();
        let clean = support.complement(p);
        let mut w_hat = DVector::zeros(p * window);
        for (j, &i) in clean.indices().iter().enumerate() {
            w_hat
                .rows_mut(i * window, window)
                .copy_from(&w_clean.rows(j * window, window));
        }
        let resid = y - &self.o_full * &x_hat;
        let mut a_hat = DVector::zeros(p * window);
        for &i in support.indices() {
            a_hat
                .rows_mut(i * window, window)
                .copy_from(&resid.rows(i * window, window));
        }
        DecodeResult {
            x_hat,
            a_hat,
            w_hat,
            support: support.clone(),
            feasible: true,
            stats,
        }
    }

    /// Decodes many windows, fanned out according to the execution mode.
    pub fn decode_batch(&self, windows: &[DVector<f64>]) -> Vec<DecodeResult> {
        // Parallel across windows only; nesting the level search on top
        // would trade the early exit for more threads.
        self.exec
            .map(windows, |y| self.decode_with(y, Execution::Sequential))
    }
}

/// One-shot decode; builds a [`Decoder`] internally.
pub fn decode(model: &SystemModel, y: &DVector<f64>, omega: NoiseFeasibleSet) -> DecodeResult {
    Decoder::new(model, omega).decode(y)
}

/// Innovation threshold `d = 2 sqrt(N) delta_w ||O^+|| (1 + ||A||)` below which
/// attack-free estimates always stay.
pub fn innovation_threshold(model: &SystemModel) -> f64 {
    let o = build_o(model, &model.all_sensors());
    let sv = linalg::singular_values(&o);
    let smin = sv[model.state_dim() - 1];
    let n = model.window() as f64;
    2.0 * n.sqrt() * model.delta_w() / smin * (1.0 + linalg::norm2(model.a()))
}

/// `||O^+||` of the full stacked observation matrix.
pub fn o_pinv_norm(model: &SystemModel) -> f64 {
    let o = build_o(model, &model.all_sensors());
    1.0 / linalg::singular_values(&o)[model.state_dim() - 1]
}
