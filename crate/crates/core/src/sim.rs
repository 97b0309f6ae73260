//! Closed-loop simulation of the noisy plant with sensor attacks,
//! intermittent authentication and the l0 decoder in the loop.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::{o_pinv_norm, DecodeResult, DecodeStats, Decoder, NoiseFeasibleSet, OmegaMode};
use crate::detect::{AlarmVerdict, Detector};
use crate::linalg;
use crate::model::{SensorSet, SystemModel};
use crate::par::Execution;
use crate::synth::AttackPlan;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("attack touches sensors {0:?} outside the compromised set")]
    OutsideCompromised(Vec<usize>),
    #[error("controller: {0}")]
    Controller(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Zero,
    UniformElementwise {
        lo: f64,
        hi: f64,
    },
    Ball {
        radius: f64,
    },
}

impl NoiseKind {
    /// Norm bound of a `dim`-vector drawn from this distribution.
    pub fn bound(&self, dim: usize) -> f64 {
        match *self {
            NoiseKind::Zero => 0.0,
            NoiseKind::UniformElementwise { lo, hi } => lo.abs().max(hi.abs()) * (dim as f64).sqrt(),
            NoiseKind::Ball { radius } => radius,
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
        match *self {
            NoiseKind::Zero => DVector::zeros(dim),
            NoiseKind::UniformElementwise { lo, hi } => {
                if hi > lo {
                    DVector::from_fn(dim, |_, _| rng.random_range(lo..hi))
                } else {
                    DVector::from_element(dim, lo)
                }
            }
            NoiseKind::Ball { radius } => {
                if dim == 0 {
                    return DVector::zeros(0);
                }
                let g = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                let nrm = g.norm();
                let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
                if nrm > 0.0 {
                    g * (r / nrm)
                } else {
                    DVector::zeros(dim)
                }
            }
        }
    }
}

/// Process and measurement noise distributions plus the stream seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub process: NoiseKind,
    pub measurement: NoiseKind,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn zero() -> Self {
        Self::default()
    }

    /// Element-wise `U(-h, h)` on both channels.
    pub fn uniform(half_width: f64, seed: u64) -> Self {
        let k = NoiseKind::UniformElementwise {
            lo: -half_width,
            hi: half_width,
        };
        NoiseSpec {
            process: k,
            measurement: k,
            seed,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        NoiseSpec { seed, ..self }
    }

    pub fn process_bound(&self, model: &SystemModel) -> f64 {
        self.process.bound(model.state_dim())
    }

    pub fn measurement_bound(&self, model: &SystemModel) -> f64 {
        self.measurement.bound(model.sensor_count())
    }

    pub fn stream(&self, model: &SystemModel) -> NoiseStream {
        NoiseStream {
            spec: *self,
            n: model.state_dim(),
            p: model.sensor_count(),
            rng: ChaCha8Rng::seed_from_u64(self.seed),
        }
    }
}

/// Deterministic source of `(v_P(t), v_M(t))` pairs.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    spec: NoiseSpec,
    n: usize,
    p: usize,
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn next_pair(&mut self) -> (DVector<f64>, DVector<f64>) {
        let vp = self.spec.process.draw(&mut self.rng, self.n);
        let vm = self.spec.measurement.draw(&mut self.rng, self.p);
        assert!(vp.norm() <= self.spec.process.bound(self.n) * (1.0 + 1e-12));
        assert!(vm.norm() <= self.spec.measurement.bound(self.p) * (1.0 + 1e-12));
        (vp, vm)
    }
}

/// A pre-drawn noise sequence, shared between the plant and (when the
/// attacker is granted noise knowledge) the attack synthesizer.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    pub process: Vec<DVector<f64>>,
    pub measurement: Vec<DVector<f64>>,
}

impl NoiseRealization {
    pub fn generate(spec: &NoiseSpec, model: &SystemModel, len: usize) -> Self {
        let mut s = spec.stream(model);
        let (process, measurement) = (0..len).map(|_| s.next_pair()).unzip();
        NoiseRealization {
            process,
            measurement,
        }
    }

    pub fn zero(model: &SystemModel, len: usize) -> Self {
        Self::generate(&NoiseSpec::zero(), model, len)
    }

    pub fn len(&self) -> usize {
        self.process.len()
    }

    pub fn is_empty(&self) -> bool {
        self.process.is_empty()
    }

    /// Per-step window noise `w_k(s) = v_M(s+k) + C sum_{j<k} A^{k-1-j} v_P(s+j)`,
    /// i.e. what remains of the window once the known input is removed.
    pub fn window_noise(&self, model: &SystemModel, s: usize) -> Vec<DVector<f64>> {
        let n = model.window();
        let mut drift = DVector::zeros(model.state_dim());
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            out.push(&self.measurement[s + k] + model.c() * &drift);
            drift = model.a() * drift + &self.process[s + k];
        }
        out
    }
}

/// One plant step: `(A x + B u + v_P, C x + v_M)`.
pub fn step(
    model: &SystemModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    noise: &mut NoiseStream,
) -> Result<(DVector<f64>, DVector<f64>), SimError> {
    let (vp, vm) = noise.next_pair();
    step_with(model, x, u, &vp, &vm)
}

pub fn step_with(
    model: &SystemModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    vp: &DVector<f64>,
    vm: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>), SimError> {
    if x.len() != model.state_dim() || u.len() != model.input_dim() {
        return Err(SimError::Dimension(format!(
            "state {} / input {} for a plant with n = {}, m = {}",
            x.len(),
            u.len(),
            model.state_dim(),
            model.input_dim()
        )));
    }
    let next = model.a() * x + model.b() * u + vp;
    let y = model.c() * x + vm;
    Ok((next, y))
}

/// Authentication times of one sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Never,
    /// `t = phase + k * period`.
    Periodic { period: usize, phase: usize },
    /// Explicit strictly increasing times.
    Times { times: Vec<usize> },
}

impl Schedule {
    pub fn contains(&self, t: usize) -> bool {
        match self {
            Schedule::Never => false,
            Schedule::Periodic { period, phase } => {
                *period > 0 && t >= *phase && (t - phase).is_multiple_of(*period)
            }
            Schedule::Times { times } => times.binary_search(&t).is_ok(),
        }
    }

    /// Longest gap between consecutive authentications, when bounded.
    pub fn max_gap(&self) -> Option<usize> {
        match self {
            Schedule::Periodic { period, .. } if *period > 0 => Some(*period),
            _ => None,
        }
    }
}

/// Per-sensor intermittent authentication schedules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AuthPolicy {
    pub schedules: Vec<Schedule>,
}

impl AuthPolicy {
    pub fn none(p: usize) -> Self {
        AuthPolicy {
            schedules: vec![Schedule::Never; p],
        }
    }

    /// Sensors in `subset` authenticated every `period` steps from `phase`.
    pub fn periodic(p: usize, subset: &SensorSet, period: usize, phase: usize) -> Self {
        let mut out = Self::none(p);
        for &i in subset.indices() {
            out.schedules[i] = Schedule::Periodic { period, phase };
        }
        out
    }

    pub fn validate(&self, p: usize) -> Result<(), SimError> {
        if self.schedules.len() != p {
            return Err(SimError::Dimension(format!(
                "{} schedules for {p} sensors",
                self.schedules.len()
            )));
        }
        for (i, s) in self.schedules.iter().enumerate() {
            match s {
                Schedule::Times { times } if times.windows(2).any(|w| w[0] >= w[1]) => {
                    return Err(SimError::Dimension(format!(
                        "authentication times of sensor {} are not strictly increasing",
                        i + 1
                    )))
                }
                Schedule::Periodic { period: 0, .. } => {
                    return Err(SimError::Dimension(format!(
                        "zero authentication period for sensor {}",
                        i + 1
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn authenticated_at(&self, t: usize) -> SensorSet {
        let idx: Vec<usize> = self
            .schedules
            .iter()
            .enumerate()
            .filter(|(_, s)| s.contains(t))
            .map(|(i, _)| i)
            .collect();
        let p = self.schedules.len();
        SensorSet::new(idx, p).expect("indices come from the schedule list")
    }

    /// Sensors with any authentication at all.
    pub fn authenticated_sensors(&self) -> SensorSet {
        let idx: Vec<usize> = self
            .schedules
            .iter()
            .enumerate()
            .filter(|(_, s)| !matches!(s, Schedule::Never))
            .map(|(i, _)| i)
            .collect();
        SensorSet::new(idx, self.schedules.len()).expect("in range")
    }

    /// Common period shared by every sensor in `subset`, if any.
    pub fn common_period(&self, subset: &SensorSet) -> Option<usize> {
        let mut period = None;
        for &i in subset.indices() {
            let g = self.schedules.get(i)?.max_gap()?;
            match period {
                None => period = Some(g),
                Some(q) if q == g => {}
                Some(_) => return None,
            }
        }
        period
    }

    pub fn is_empty(&self) -> bool {
        self.schedules.iter().all(|s| matches!(s, Schedule::Never))
    }
}

/// Result of routing a requested attack through authentication.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub delivered: DVector<f64>,
    /// Attack actually applied (requested attack with authenticated entries
    /// removed).
    pub applied: DVector<f64>,
    /// Authenticated sensors on which a nonzero value was requested.
    pub auth_violation: Vec<usize>,
}

impl Delivery {
    pub fn violated(&self) -> bool {
        !self.auth_violation.is_empty()
    }
}

/// `y + a` with authenticated entries of `a` removed. A nonzero request on
/// an authenticated sensor is reported, not silently dropped.
pub fn apply_attack(
    y: &DVector<f64>,
    a: &DVector<f64>,
    compromised: &SensorSet,
    auth_now: &SensorSet,
) -> Result<Delivery, SimError> {
    if y.len() != a.len() {
        return Err(SimError::Dimension(format!(
            "output has {} entries, attack {}",
            y.len(),
            a.len()
        )));
    }
    let outside: Vec<usize> = (0..a.len())
        .filter(|&i| a[i] != 0.0 && !compromised.contains(i))
        .collect();
    if !outside.is_empty() {
        return Err(SimError::OutsideCompromised(outside));
    }
    let mut applied = a.clone();
    let mut violation = Vec::new();
    for &i in auth_now.indices() {
        if applied[i] != 0.0 {
            violation.push(i);
        }
        applied[i] = 0.0;
    }
    Ok(Delivery {
        delivered: y + &applied,
        applied,
        auth_violation: violation,
    })
}

/// Reference trajectory for the first two state coordinates
/// (position, velocity); remaining coordinates track zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reference {
    #[default]
    None,
    /// Position `R cos(w t + phase)`, velocity `-R w sin(w t + phase)`, with
    /// `t` in seconds.
    Circle {
        radius: f64,
        angular_rate: f64,
        #[serde(default)]
        phase: f64,
        sampling_period: f64,
    },
}

impl Reference {
    pub fn at(&self, step: usize, n: usize) -> DVector<f64> {
        let mut r = DVector::zeros(n);
        if let Reference::Circle {
            radius,
            angular_rate,
            phase,
            sampling_period,
        } = *self
        {
            let th = angular_rate * step as f64 * sampling_period + phase;
            if n > 0 {
                r[0] = radius * th.cos();
            }
            if n > 1 {
                r[1] = -radius * angular_rate * th.sin();
            }
        }
        r
    }

    /// Least-squares input keeping the plant on the reference:
    /// `B^+ (r(t+1) - A r(t))`.
    pub fn feedforward(&self, model: &SystemModel, step: usize) -> DVector<f64> {
        let m = model.input_dim();
        if matches!(self, Reference::None) || m == 0 {
            return DVector::zeros(m);
        }
        let n = model.state_dim();
        let want = self.at(step + 1, n) - model.a() * self.at(step, n);
        linalg::pinv(model.b(), model.tolerances().rank_tol) * want
    }
}

/// Single-input pole placement (Ackermann). Returns the gain `G` such that
/// `A + B G` has the requested real eigenvalues, to be used as
/// `u = G (x - r)`.
pub fn place_poles(a: &DMatrix<f64>, b: &DMatrix<f64>, poles: &[f64]) -> Result<DMatrix<f64>, SimError> {
    let n = a.nrows();
    if b.ncols() != 1 || b.nrows() != n || poles.len() != n {
        return Err(SimError::Controller(
            "pole placement needs a single input and n poles".into(),
        ));
    }
    let mut ctrb = DMatrix::zeros(n, n);
    let mut col = b.clone();
    for k in 0..n {
        ctrb.set_column(k, &col.column(0));
        col = a * col;
    }
    let inv = ctrb
        .try_inverse()
        .ok_or_else(|| SimError::Controller("pair (A, B) is not controllable".into()))?;
    // Characteristic polynomial of the target poles evaluated at A.
    let mut phi = DMatrix::identity(n, n);
    for &p in poles {
        phi *= a - DMatrix::identity(n, n) * p;
    }
    let last = DMatrix::from_row_slice(1, n, inv.row(n - 1).transpose().as_slice());
    Ok(-(last * phi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    /// `u = gain (x_pred - r) + u_ff`; `None` runs open loop with the
    /// feedforward only.
    pub gain: Option<DMatrix<f64>>,
    pub reference: Reference,
    /// Number of decoded windows (rows of the trace).
    pub horizon: usize,
    pub omega: OmegaMode,
    pub initial_state: Option<DVector<f64>>,
}

impl LoopConfig {
    pub fn open_loop(horizon: usize) -> Self {
        LoopConfig {
            gain: None,
            reference: Reference::None,
            horizon,
            omega: OmegaMode::PerStepBall,
            initial_state: None,
        }
    }

    /// Plant steps needed so that the last window is complete.
    pub fn plant_steps(&self, model: &SystemModel) -> usize {
        self.horizon + model.window() - 1
    }
}

/// One decoded window, stamped at its start time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub x: DVector<f64>,
    pub x_hat: DVector<f64>,
    pub err_norm: f64,
    pub y: DVector<f64>,
    pub y_delivered: DVector<f64>,
    pub attack: DVector<f64>,
    pub u: DVector<f64>,
    pub alarm: AlarmVerdict,
    pub support: SensorSet,
    pub authenticated: SensorSet,
    pub auth_violation: Vec<usize>,
    pub stats: DecodeStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub sensors: usize,
    pub state_dim: usize,
    pub rows: Vec<TraceRow>,
    /// Attack-free windows whose error exceeded `||O^+|| 2 sqrt(N) delta_w`.
    pub bound_violations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimSummary {
    pub steps: usize,
    pub max_err: f64,
    pub mean_err: f64,
    pub id1_alarms: usize,
    pub id2_alarms: usize,
    /// Steps with an ID_I alarm but no ID_II alarm (must be zero).
    pub hierarchy_violations: usize,
    pub indeterminate: usize,
    pub supports_tested: usize,
    pub auth_fraction: f64,
    pub auth_violations: usize,
    pub bound_violations: usize,
}

impl SimSummary {
    /// Fraction of feasibility checks that hit the iteration cap undecided.
    pub fn indeterminate_rate(&self) -> f64 {
        if self.supports_tested == 0 {
            0.0
        } else {
            self.indeterminate as f64 / self.supports_tested as f64
        }
    }
}

impl SimTrace {
    pub fn errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.err_norm).collect()
    }

    pub fn max_err(&self) -> f64 {
        self.rows.iter().map(|r| r.err_norm).fold(0.0, f64::max)
    }

    pub fn summary(&self) -> SimSummary {
        let steps = self.rows.len();
        let mut s = SimSummary {
            steps,
            max_err: self.max_err(),
            mean_err: 0.0,
            id1_alarms: 0,
            id2_alarms: 0,
            hierarchy_violations: 0,
            indeterminate: 0,
            supports_tested: 0,
            auth_fraction: 0.0,
            auth_violations: 0,
            bound_violations: self.bound_violations,
        };
        let mut auth = 0usize;
        for r in &self.rows {
            s.mean_err += r.err_norm;
            s.id1_alarms += r.alarm.id1_alarm as usize;
            s.id2_alarms += r.alarm.id2_alarm as usize;
            s.hierarchy_violations += (r.alarm.id1_alarm && !r.alarm.id2_alarm) as usize;
            s.indeterminate += r.stats.indeterminate;
            s.supports_tested += r.stats.supports_tested;
            s.auth_violations += r.auth_violation.len();
            auth += r.authenticated.len();
        }
        if steps > 0 {
            s.mean_err /= steps as f64;
            s.auth_fraction = auth as f64 / (steps * self.sensors) as f64;
        }
        s
    }

    /// CSV with columns `t, x_*, xhat_*, err_norm, a_*, alarm_id1,
    /// alarm_id2, auth_flags` (bit `i-1` set when sensor `i` was
    /// authenticated).
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.state_dim).map(|i| format!("x_{i}")));
        header.extend((1..=self.state_dim).map(|i| format!("xhat_{i}")));
        header.push("err_norm".into());
        header.extend((1..=self.sensors).map(|i| format!("a_{i}")));
        header.extend(["alarm_id1", "alarm_id2", "auth_flags"].map(String::from));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.t.to_string()];
            rec.extend(r.x.iter().map(|v| format!("{v:e}")));
            rec.extend(r.x_hat.iter().map(|v| format!("{v:e}")));
            rec.push(format!("{:e}", r.err_norm));
            rec.extend(r.attack.iter().map(|v| format!("{v:e}")));
            rec.push((r.alarm.id1_alarm as u8).to_string());
            rec.push((r.alarm.id2_alarm as u8).to_string());
            let mask: u64 = r.authenticated.indices().iter().fold(0, |m, &i| m | (1 << i));
            rec.push(mask.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Removes the known-input forced response from a window of delivered
/// outputs `y(s..s+N-1)` and stacks it sensor-major.
pub fn compensate_window(
    model: &SystemModel,
    delivered: &[DVector<f64>],
    inputs: &[DVector<f64>],
) -> DVector<f64> {
    let n_win = model.window();
    let p = model.sensor_count();
    let mut forced = DVector::zeros(model.state_dim());
    let mut out = DVector::zeros(p * n_win);
    for k in 0..n_win {
        let yk = &delivered[k] - model.c() * &forced;
        for i in 0..p {
            out[i * n_win + k] = yk[i];
        }
        if k + 1 < n_win {
            forced = model.a() * forced + model.b() * &inputs[k];
        }
    }
    out
}

/// Runs the loop for `cfg.horizon` windows. Plant noise comes from `noise`,
/// which must cover `cfg.plant_steps(model)` steps.
pub fn run_closed_loop(
    model: &SystemModel,
    cfg: &LoopConfig,
    noise: &NoiseRealization,
    attack: Option<&AttackPlan>,
    policy: &AuthPolicy,
) -> Result<SimTrace, SimError> {
    let n = model.state_dim();
    let m = model.input_dim();
    let p = model.sensor_count();
    let n_win = model.window();
    let total = cfg.plant_steps(model);
    if noise.len() < total {
        return Err(SimError::Dimension(format!(
            "noise realization covers {} steps, {total} needed",
            noise.len()
        )));
    }
    policy.validate(p)?;
    let compromised = attack.map(|a| a.compromised.clone()).unwrap_or_default();
    let decoder = Decoder::new(model, NoiseFeasibleSet::for_model(model, cfg.omega))
        .with_execution(Execution::Sequential);
    let detector = Detector::new(model);
    let attack_free = attack.is_none();
    let err_bound = o_pinv_norm(model) * 2.0 * (n_win as f64).sqrt() * model.delta_w();

    let mut x = cfg
        .initial_state
        .clone()
        .unwrap_or_else(|| DVector::zeros(n));
    let mut xs = Vec::with_capacity(total);
    let mut ys = Vec::with_capacity(total);
    let mut delivered = Vec::with_capacity(total);
    let mut applied = Vec::with_capacity(total);
    let mut auths = Vec::with_capacity(total);
    let mut violations = Vec::with_capacity(total);
    let mut inputs: Vec<DVector<f64>> = Vec::with_capacity(total);
    let mut decodes: Vec<DecodeResult> = Vec::with_capacity(cfg.horizon);
    let mut verdicts = Vec::with_capacity(cfg.horizon);
    let zero_attack = DVector::zeros(p);

    for tau in 0..total {
        let (vp, vm) = (&noise.process[tau], &noise.measurement[tau]);
        let y = model.c() * &x + vm;
        let auth = policy.authenticated_at(tau);
        let req = attack.and_then(|a| a.attack_at(tau)).unwrap_or(&zero_attack);
        let d = apply_attack(&y, req, &compromised, &auth)?;
        xs.push(x.clone());
        ys.push(y);
        delivered.push(d.delivered);
        applied.push(d.applied);
        violations.push(d.auth_violation);
        auths.push(auth);

        let mut u = cfg.reference.feedforward(model, tau);
        if tau + 1 >= n_win {
            let s = tau + 1 - n_win;
            let yw = compensate_window(model, &delivered[s..=tau], &inputs[s..tau]);
            let res = decoder.decode(&yw);
            let verdict = detector.id2(&res, decodes.last(), s.checked_sub(1).map(|q| &inputs[q]));
            if let Some(g) = &cfg.gain {
                // Predict the current state from the window-start estimate.
                let mut pred = res.x_hat.clone();
                for inp in &inputs[s..tau] {
                    pred = model.a() * pred + model.b() * inp;
                }
                u += g * (pred - cfg.reference.at(tau, n));
            }
            decodes.push(res);
            verdicts.push(verdict);
        }
        if u.len() != m {
            return Err(SimError::Dimension("controller output size".into()));
        }
        x = model.a() * &x + model.b() * &u + vp;
        inputs.push(u);
    }

    let mut bound_violations = 0;
    let rows = decodes
        .into_iter()
        .zip(verdicts)
        .enumerate()
        .map(|(t, (res, alarm))| {
            let err = res.error_against(&xs[t]).norm();
            if attack_free && err > err_bound * (1.0 + 1e-9) + 1e-12 {
                bound_violations += 1;
            }
            TraceRow {
                t,
                x: xs[t].clone(),
                x_hat: res.x_hat,
                err_norm: err,
                y: ys[t].clone(),
                y_delivered: delivered[t].clone(),
                attack: applied[t].clone(),
                u: inputs[t].clone(),
                alarm,
                support: res.support,
                authenticated: auths[t].clone(),
                auth_violation: violations[t].clone(),
                stats: res.stats,
            }
        })
        .collect();
    Ok(SimTrace {
        sensors: p,
        state_dim: n,
        rows,
        bound_violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    #[test]
    fn noiseless_steps() {
        let e1 = fixtures::scalar_plant(2, 0.0);
        let mut z = NoiseSpec::zero().stream(&e1);
        let (next, y) = step(&e1, &v(&[1.0, 0.0]), &v(&[0.0]), &mut z).unwrap();
        assert_eq!(next, v(&[0.3, 0.0]));
        assert_eq!(y, v(&[1.0]));
        let vtf = fixtures::vtf(0.0);
        let mut z = NoiseSpec::zero().stream(&vtf);
        let (next, _) = step(&vtf, &v(&[0.0, 1.0]), &v(&[0.0]), &mut z).unwrap();
        assert_relative_eq!(next, v(&[0.01, 1.0]));
        assert!(step(&vtf, &v(&[0.0]), &v(&[0.0]), &mut z).is_err());
    }

    #[test]
    fn seeded_noise_replays_and_respects_bounds() {
        let m = fixtures::vtf(0.1);
        let spec = NoiseSpec::uniform(0.05, 7);
        let a = NoiseRealization::generate(&spec, &m, 500);
        let b = NoiseRealization::generate(&spec, &m, 500);
        assert_eq!(a, b);
        assert!(a.process.iter().all(|v| v.amax() <= 0.05));
        let ball = NoiseSpec {
            process: NoiseKind::Ball { radius: 0.2 },
            measurement: NoiseKind::Ball { radius: 0.3 },
            seed: 1,
        };
        let r = NoiseRealization::generate(&ball, &m, 500);
        assert!(r.process.iter().all(|v| v.norm() <= 0.2));
        assert!(r.measurement.iter().all(|v| v.norm() <= 0.3));
        assert_ne!(NoiseRealization::generate(&spec.with_seed(8), &m, 5), a);
    }

    #[test]
    fn attack_routing() {
        let y = v(&[1.0, 1.0, 1.0]);
        let all = SensorSet::all(3);
        let d = apply_attack(&y, &DVector::zeros(3), &all, &SensorSet::empty()).unwrap();
        assert_eq!(d.delivered, y);
        assert!(!d.violated());
        let d = apply_attack(&y, &v(&[1.0, 2.0, 3.0]), &all, &SensorSet::empty()).unwrap();
        assert_eq!(d.delivered, v(&[2.0, 3.0, 4.0]));
        let k1 = SensorSet::from_one_based(&[1], 3).unwrap();
        let d = apply_attack(&y, &v(&[1.0, 0.0, 0.0]), &k1, &k1).unwrap();
        assert_eq!(d.auth_violation, vec![0]);
        assert_eq!(d.delivered, y);
        assert!(apply_attack(&y, &v(&[0.0, 1.0, 0.0]), &k1, &SensorSet::empty()).is_err());
    }

    #[test]
    fn schedules() {
        let s = Schedule::Periodic { period: 10, phase: 3 };
        assert!(s.contains(3) && s.contains(13) && !s.contains(0) && !s.contains(12));
        let f = SensorSet::from_one_based(&[1, 2], 3).unwrap();
        let pol = AuthPolicy::periodic(3, &f, 10, 0);
        assert_eq!(pol.authenticated_at(20), f);
        assert!(pol.authenticated_at(21).is_empty());
        assert_eq!(pol.common_period(&f), Some(10));
        assert_eq!(pol.common_period(&SensorSet::all(3)), None);
        let bad = AuthPolicy {
            schedules: vec![Schedule::Times { times: vec![3, 3] }, Schedule::Never, Schedule::Never],
        };
        assert!(bad.validate(3).is_err());
    }

    #[test]
    fn ackermann_places_poles() {
        let m = fixtures::vtf(0.0);
        let g = place_poles(m.a(), m.b(), &[0.8, 0.75]).unwrap();
        let cl = m.a() + m.b() * &g;
        let mut ev: Vec<f64> = cl.complex_eigenvalues().iter().map(|c| c.re).collect();
        ev.sort_by(f64::total_cmp);
        assert_relative_eq!(ev[0], 0.75, epsilon = 1e-9);
        assert_relative_eq!(ev[1], 0.8, epsilon = 1e-9);
    }

    #[test]
    fn noiseless_loop_recovers_state_exactly() {
        let m = fixtures::scalar_plant(2, 0.0);
        let mut cfg = LoopConfig::open_loop(50);
        cfg.initial_state = Some(v(&[1.0, -2.0]));
        let noise = NoiseRealization::zero(&m, cfg.plant_steps(&m));
        let tr = run_closed_loop(&m, &cfg, &noise, None, &AuthPolicy::none(1)).unwrap();
        assert_eq!(tr.rows.len(), 50);
        for r in &tr.rows {
            assert!(r.err_norm < 1e-9, "t={} err={}", r.t, r.err_norm);
        }
    }

    #[test]
    fn known_input_is_compensated() {
        let m = fixtures::vtf(0.0);
        let cfg = LoopConfig {
            gain: Some(place_poles(m.a(), m.b(), &[0.8, 0.75]).unwrap()),
            reference: Reference::Circle {
                radius: 1.0,
                angular_rate: 0.5,
                phase: 0.0,
                sampling_period: 0.01,
            },
            horizon: 300,
            omega: OmegaMode::PerStepBall,
            initial_state: Some(v(&[0.2, 0.0])),
        };
        let noise = NoiseRealization::zero(&m, cfg.plant_steps(&m));
        let tr = run_closed_loop(&m, &cfg, &noise, None, &AuthPolicy::none(3)).unwrap();
        assert!(tr.rows.iter().any(|r| r.u.norm() > 1e-3));
        for r in &tr.rows {
            assert!(r.err_norm < 1e-9);
        }
        let s = tr.summary();
        assert_eq!(s.id1_alarms + s.id2_alarms, 0);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let m = fixtures::vtf(0.0);
        let cfg = LoopConfig::open_loop(3);
        let noise = NoiseRealization::zero(&m, cfg.plant_steps(&m));
        let pol = AuthPolicy::periodic(3, &SensorSet::from_one_based(&[2], 3).unwrap(), 2, 0);
        let tr = run_closed_loop(&m, &cfg, &noise, None, &pol).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "t,x_1,x_2,xhat_1,xhat_2,err_norm,a_1,a_2,a_3,alarm_id1,alarm_id2,auth_flags"
        );
        assert_eq!(lines.len(), 4);
        assert!(lines[1].ends_with(",2"));
        assert!(lines[2].ends_with(",0"));
    }

    #[test]
    fn window_noise_matches_reduced_model() {
        let m = fixtures::vtf(0.0);
        let noise = NoiseRealization::generate(&NoiseSpec::uniform(0.05, 3), &m, 10);
        let w = noise.window_noise(&m, 4);
        assert_eq!(w[0], noise.measurement[4]);
        assert_relative_eq!(w[1], &noise.measurement[5] + m.c() * &noise.process[4], epsilon = 1e-15);
    }
}
