//! Constructive stealthy attacks.
//!
//! Every plan is driven by an attacker state `z(t)` with
//! `z(t+1) = A z(t) + alpha(t)` and emits `a(t) = P_K C z(t)`. A decoder
//! window starting at `s` then sees `O z(s)` plus, when `alpha` acts inside
//! the window, a correction on the compromised rows that must fit inside the
//! noise slack.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attackability::{pa_over_time_id1, pa_over_time_id2, pa_single_step, Certificate};
use crate::decoder::{innovation_threshold, Decoder, NoiseFeasibleSet, OmegaMode};
use crate::detect::{id1, DetectorKind, Detector};
use crate::linalg;
use crate::model::{build_f, build_o, SensorSet, SystemModel, UnstableWitness, WitnessDirection};
use crate::par::Execution;
use crate::sim::{apply_attack, AuthPolicy, NoiseRealization, NoiseSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("compromised set {0} is not perfectly attackable for this detector")]
    NotAttackable(String),
    #[error("authentication of sensors {sensors:?} at t = {time} conflicts with the plan")]
    AuthConflict { time: usize, sensors: Vec<usize> },
    #[error("no noise slack is available without knowledge of the realized noise")]
    NoSlack,
    #[error("model does not match the expected plant: {0}")]
    ModelMismatch(String),
    #[error("could not keep the plan silent; first alarm at window {0}")]
    StealthFailed(usize),
    #[error("malformed attack file: {0}")]
    Parse(String),
}

/// Attack sequence plus the attacker state that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackPlan {
    pub compromised: SensorSet,
    pub sensors: usize,
    pub target: DetectorKind,
    /// First time step covered by `attacks` and `z`.
    pub start_time: usize,
    /// `a(start_time + k)`.
    pub attacks: Vec<DVector<f64>>,
    /// `z(start_time + k)`; empty for plans loaded from a file.
    pub z: Vec<DVector<f64>>,
    /// `alpha(start_time + k) = z(start_time + k + 1) - A z(start_time + k)`.
    pub alpha: Vec<DVector<f64>>,
    /// Size `||O alpha||` of the first nonzero increment (or of `O z` at the
    /// cold start).
    pub epsilon: f64,
}

impl AttackPlan {
    pub fn attack_at(&self, t: usize) -> Option<&DVector<f64>> {
        t.checked_sub(self.start_time).and_then(|k| self.attacks.get(k))
    }

    pub fn z_at(&self, t: usize) -> Option<&DVector<f64>> {
        t.checked_sub(self.start_time).and_then(|k| self.z.get(k))
    }

    pub fn end_time(&self) -> usize {
        self.start_time + self.attacks.len()
    }

    /// Stacked attack of the window starting at `s` (sensor-major).
    pub fn stacked_window(&self, s: usize, window: usize) -> DVector<f64> {
        let p = self.sensors;
        let mut out = DVector::zeros(p * window);
        for k in 0..window {
            if let Some(a) = self.attack_at(s + k) {
                for i in 0..p {
                    out[i * window + k] = a[i];
                }
            }
        }
        out
    }

    /// CSV with columns `t, a_1..a_p`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.sensors).map(|i| format!("a_{i}")));
        w.write_record(&header)?;
        for (k, a) in self.attacks.iter().enumerate() {
            let mut rec = vec![(self.start_time + k).to_string()];
            rec.extend(a.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Loads a plan written by [`AttackPlan::write_csv`]. Missing rows are
    /// zero; nonzero entries outside `compromised` are rejected.
    pub fn read_csv<R: Read>(
        input: R,
        compromised: &SensorSet,
        sensors: usize,
        target: DetectorKind,
    ) -> Result<Self, SynthError> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers().map_err(|e| SynthError::Parse(e.to_string()))?.clone();
        if header.len() != sensors + 1 || &header[0] != "t" {
            return Err(SynthError::Parse(format!(
                "expected columns t,a_1..a_{sensors}, got {}",
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut rows = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| SynthError::Parse(e.to_string()))?;
            let t: usize = rec[0]
                .trim()
                .parse()
                .map_err(|_| SynthError::Parse(format!("bad time {:?}", &rec[0])))?;
            let mut a = DVector::zeros(sensors);
            for i in 0..sensors {
                a[i] = rec[i + 1]
                    .trim()
                    .parse()
                    .map_err(|_| SynthError::Parse(format!("bad value {:?}", &rec[i + 1])))?;
                if a[i] != 0.0 && !compromised.contains(i) {
                    return Err(SynthError::Parse(format!(
                        "t = {t}: sensor {} is not compromised",
                        i + 1
                    )));
                }
            }
            if rows.insert(t, a).is_some() {
                return Err(SynthError::Parse(format!("duplicate time {t}")));
            }
        }
        let start = rows.keys().next().copied().unwrap_or(0);
        let end = rows.keys().last().map(|t| t + 1).unwrap_or(0);
        let attacks = (start..end)
            .map(|t| rows.remove(&t).unwrap_or_else(|| DVector::zeros(sensors)))
            .collect();
        Ok(AttackPlan {
            compromised: compromised.clone(),
            sensors,
            target,
            start_time: start,
            attacks,
            z: Vec::new(),
            alpha: Vec::new(),
            epsilon: 0.0,
        })
    }

    /// Largest `||a(s) - O z(s)||` over windows fully inside the plan.
    pub fn consistency_residual(&self, model: &SystemModel) -> f64 {
        let n_win = model.window();
        let o = build_o(model, &model.all_sensors());
        let mut worst: f64 = 0.0;
        for (k, z) in self.z.iter().enumerate() {
            let s = self.start_time + k;
            if s + n_win > self.end_time() {
                break;
            }
            worst = worst.max((self.stacked_window(s, n_win) - &o * z).norm());
        }
        worst
    }
}

/// `a = O z` with `z` a null vector of `O_{K^c}` scaled to `||z|| = magnitude`.
pub fn single_step_attack(
    model: &SystemModel,
    compromised: &SensorSet,
    magnitude: f64,
) -> Result<(DVector<f64>, DVector<f64>), SynthError> {
    let ss = pa_single_step(model, compromised);
    let Some(dir) = ss.witness.filter(|_| ss.attackable) else {
        return Err(SynthError::NotAttackable(compromised.to_string()));
    };
    let z = dir * magnitude;
    let mut a = build_o(model, &model.all_sensors()) * &z;
    let n_win = model.window();
    for &i in compromised.complement(model.sensor_count()).indices() {
        a.rows_mut(i * n_win, n_win).fill(0.0);
    }
    Ok((a, z))
}

/// How the attacker learns about the noise.
#[derive(Debug, Clone, Copy)]
pub enum NoiseKnowledge<'a> {
    /// Realized noise sequence (simulation-only privilege).
    Realized(&'a NoiseRealization),
    /// Only the declared noise distribution bounds.
    Bounds(&'a NoiseSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SustainOptions {
    /// First step at which the attacker state may be nonzero.
    pub start: usize,
    /// Plan length in plant steps.
    pub length: usize,
    /// Cold-start size `eta` (null-space branch).
    pub magnitude: f64,
    /// Gain `g` of the null-space increment `alpha = g f`.
    pub alpha_gain: f64,
    /// Optional cap on `||O alpha||` for every increment.
    pub epsilon: Option<f64>,
    /// Steps of active pushing along the unstable direction; `None` picks
    /// 100, or the whole plan for a lone eigenvector on the unit circle.
    pub ramp_steps: Option<usize>,
    /// Fraction of the available slack actually used.
    pub safety: f64,
    pub omega: OmegaMode,
}

impl SustainOptions {
    pub fn new(start: usize, length: usize) -> Self {
        SustainOptions {
            start,
            length,
            magnitude: 1.0,
            alpha_gain: 0.0,
            epsilon: None,
            ramp_steps: None,
            safety: 0.5,
            omega: OmegaMode::PerStepBall,
        }
    }
}

/// Persistent stealthy attack for `detector`.
pub fn sustained_attack(
    model: &SystemModel,
    compromised: &SensorSet,
    detector: DetectorKind,
    policy: &AuthPolicy,
    opts: &SustainOptions,
    noise: NoiseKnowledge<'_>,
) -> Result<AttackPlan, SynthError> {
    let verdict = match detector {
        DetectorKind::IdI => pa_over_time_id1(model, compromised),
        DetectorKind::IdII => pa_over_time_id2(model, compromised),
    };
    if !verdict.attackable {
        return Err(SynthError::NotAttackable(compromised.to_string()));
    }
    match verdict.certificate {
        Some(Certificate::FRankDeficient(f)) => {
            let plan = null_space_plan(model, compromised, detector, &f, opts)?;
            check_authentication(&plan, policy)?;
            Ok(plan)
        }
        Some(Certificate::Unstable(w)) => ramp_plan(model, compromised, detector, policy, &w, opts, noise),
        None => Err(SynthError::NotAttackable(compromised.to_string())),
    }
}

fn check_authentication(plan: &AttackPlan, policy: &AuthPolicy) -> Result<(), SynthError> {
    let y = DVector::zeros(plan.sensors);
    for (k, a) in plan.attacks.iter().enumerate() {
        let t = plan.start_time + k;
        let d = apply_attack(&y, a, &plan.compromised, &policy.authenticated_at(t))
            .map_err(|e| SynthError::Parse(e.to_string()))?;
        if d.violated() {
            return Err(SynthError::AuthConflict {
                time: t,
                sensors: d.auth_violation.iter().map(|i| i + 1).collect(),
            });
        }
    }
    Ok(())
}

fn emit(model: &SystemModel, compromised: &SensorSet, z: &DVector<f64>) -> DVector<f64> {
    let mut a = model.c() * z;
    for i in 0..a.len() {
        if !compromised.contains(i) {
            a[i] = 0.0;
        }
    }
    a
}

/// Cold start `z(start) = eta f` with `f` in `N(F(K,N))`, followed by
/// increments that keep every later window of the form `O z`.
fn null_space_plan(
    model: &SystemModel,
    compromised: &SensorSet,
    detector: DetectorKind,
    f: &DVector<f64>,
    opts: &SustainOptions,
) -> Result<AttackPlan, SynthError> {
    let n = model.state_dim();
    let tol = model.tolerances().rank_tol;
    let fmat = build_f(model, compromised);
    let f_pinv = linalg::pinv(&fmat, tol);
    let clean = compromised.complement(model.sensor_count());
    let o_clean = build_o(model, &clean);
    let clean_rows = o_clean.nrows();
    let mut z = vec![f * opts.magnitude];
    let mut alpha = Vec::with_capacity(opts.length);
    for _ in 1..opts.length.max(1) {
        let cur = z.last().unwrap();
        // alpha keeps the clean rows of the next window at zero and leaves
        // the overlapping compromised entries untouched.
        let mut rhs = DVector::zeros(fmat.nrows());
        if clean_rows > 0 {
            rhs.rows_mut(0, clean_rows)
                .copy_from(&(-(&o_clean * (model.a() * cur))));
        }
        let mut al = &f_pinv * &rhs + f * opts.alpha_gain;
        let resid = (&fmat * &al - &rhs).norm();
        if resid > 1e-8 * (1.0 + rhs.norm()) {
            return Err(SynthError::NotAttackable(format!(
                "{compromised}: no consistent continuation (residual {resid:e})"
            )));
        }
        if al.norm() < 1e-300 {
            al = DVector::zeros(n);
        }
        z.push(model.a() * cur + &al);
        alpha.push(al);
    }
    alpha.push(DVector::zeros(n));
    let attacks = z.iter().map(|zi| emit(model, compromised, zi)).collect();
    let o = build_o(model, &model.all_sensors());
    Ok(AttackPlan {
        compromised: compromised.clone(),
        sensors: model.sensor_count(),
        target: detector,
        start_time: opts.start,
        attacks,
        epsilon: (&o * &z[0]).norm(),
        z,
        alpha,
    })
}

/// Per-step noise slack `delta_w - ||w_k(s)||` for every window `s` and
/// step `k` (clamped at zero).
fn slack_table(
    model: &SystemModel,
    noise: NoiseKnowledge<'_>,
    windows: usize,
) -> Vec<Vec<f64>> {
    let n_win = model.window();
    let dw = model.delta_w();
    match noise {
        NoiseKnowledge::Realized(r) => (0..windows)
            .map(|s| {
                if s + n_win > r.len() {
                    return vec![0.0; n_win];
                }
                r.window_noise(model, s)
                    .iter()
                    .map(|w| (dw - w.norm()).max(0.0))
                    .collect()
            })
            .collect(),
        NoiseKnowledge::Bounds(spec) => {
            let dvp = spec.process_bound(model);
            let dvm = spec.measurement_bound(model);
            let c = linalg::norm2(model.c());
            let per_k: Vec<f64> = (0..n_win)
                .map(|k| {
                    let spread: f64 = (0..k).map(|j| linalg::norm2(&model.a_pow(j))).sum();
                    (dw - dvm - c * spread * dvp).max(0.0)
                })
                .collect();
            vec![per_k; windows]
        }
    }
}

/// Unstable-mode attack: pushes the attacker state along the witness
/// subspace within per-step noise slack, returning it to zero before every
/// authentication of a compromised sensor.
fn ramp_plan(
    model: &SystemModel,
    compromised: &SensorSet,
    detector: DetectorKind,
    policy: &AuthPolicy,
    witness: &UnstableWitness,
    opts: &SustainOptions,
    noise: NoiseKnowledge<'_>,
) -> Result<AttackPlan, SynthError> {
    let mut safety = opts.safety;
    for _ in 0..8 {
        let plan = build_ramp(model, compromised, detector, policy, witness, opts, noise, safety)?;
        match noise {
            NoiseKnowledge::Realized(r) => {
                let rep = rehearse(model, &plan, r, opts.omega);
                match rep.first_alarm(detector) {
                    None => return Ok(plan),
                    Some(_) => safety *= 0.5,
                }
            }
            NoiseKnowledge::Bounds(_) => return Ok(plan),
        }
    }
    let plan = build_ramp(model, compromised, detector, policy, witness, opts, noise, safety)?;
    if let NoiseKnowledge::Realized(r) = noise {
        if let Some(s) = rehearse(model, &plan, r, opts.omega).first_alarm(detector) {
            return Err(SynthError::StealthFailed(s));
        }
    }
    Ok(plan)
}

#[allow(clippy::too_many_arguments)]
fn build_ramp(
    model: &SystemModel,
    compromised: &SensorSet,
    detector: DetectorKind,
    policy: &AuthPolicy,
    witness: &UnstableWitness,
    opts: &SustainOptions,
    noise: NoiseKnowledge<'_>,
    safety: f64,
) -> Result<AttackPlan, SynthError> {
    let n = model.state_dim();
    let n_win = model.window();
    let len = opts.length;
    let a = model.a();
    let o = build_o(model, &model.all_sensors());
    let start = opts.start;

    // Orthonormal basis of the invariant subspace and push direction.
    let basis = witness.subspace();
    let q = basis.clone().qr().q().columns(0, basis.ncols().min(n)).into_owned();
    let head = witness.chain_head().normalize();
    let planar = matches!(witness.direction, WitnessDirection::Plane(..));

    // Per-increment budget from the noise slack.
    let g = (0..n_win.saturating_sub(1))
        .map(|m| linalg::norm2(&compromised.project_rows(&(model.c() * model.a_pow(m)))))
        .fold(0.0, f64::max);
    let windows = start + len;
    let slack = slack_table(model, noise, windows);
    let mut cap = f64::INFINITY;
    if detector == DetectorKind::IdII {
        cap = match noise {
            NoiseKnowledge::Realized(_) => innovation_threshold(model) / 4.0,
            NoiseKnowledge::Bounds(spec) => {
                // Room left between the threshold and the worst innovation of
                // noise that is smaller than the declared bound.
                let actual = crate::fixtures::delta_w_bound(
                    model,
                    spec.measurement_bound(model),
                    spec.process_bound(model),
                );
                let d = innovation_threshold(model);
                (d * (1.0 - actual / model.delta_w().max(f64::MIN_POSITIVE)) - spec.process_bound(model))
                    .max(0.0)
            }
        };
    }
    let budget = |tau: usize| -> f64 {
        if n_win <= 1 || g == 0.0 {
            return cap * safety;
        }
        let mut b = f64::INFINITY;
        let lo = (tau + 2).saturating_sub(n_win);
        for s in lo..=tau {
            if s >= slack.len() {
                continue;
            }
            b = slack[s][tau + 1 - s..n_win].iter().fold(b, |b, &v| b.min(v));
        }
        if !b.is_finite() {
            b = 0.0;
        }
        (safety * b / (g * (n_win - 1) as f64)).min(cap * safety)
    };
    let eps_cap = |d: &DVector<f64>| -> f64 {
        match opts.epsilon {
            Some(e) => {
                let od = (&o * d).norm();
                if od > e {
                    e / od
                } else {
                    1.0
                }
            }
            None => 1.0,
        }
    };

    let lone_marginal = !planar && witness.chain.len() == 1 && (witness.eigenvalue.re.abs() - 1.0).abs() < 1e-6;
    let ramp = opts
        .ramp_steps
        .unwrap_or(if lone_marginal { len } else { 100 });

    // Authentication instants of compromised sensors split the plan into
    // intervals that start and end with z = 0.
    let auth_times: Vec<usize> = (start..start + len)
        .filter(|&t| !policy.authenticated_at(t).indices().iter().all(|&i| !compromised.contains(i)))
        .collect();

    let mut delta: Vec<DVector<f64>> = vec![DVector::zeros(n); len];
    let push_dir = |z: &DVector<f64>| -> DVector<f64> {
        let az = a * z;
        if planar {
            let pz = &q * (q.transpose() * &az);
            if pz.norm() > 0.0 {
                return pz.normalize();
            }
            head.clone()
        } else if az.dot(&head) < 0.0 {
            -head.clone()
        } else {
            head.clone()
        }
    };

    if auth_times.is_empty() {
        let mut z = DVector::zeros(n);
        for (k, dk) in delta.iter_mut().enumerate().take(len.saturating_sub(1)) {
            if k < ramp {
                let dir = push_dir(&z);
                let mut d = dir * budget(start + k);
                d *= eps_cap(&d);
                *dk = d;
            }
            z = a * &z + &*dk;
        }
    } else {
        let mut bounds = vec![start];
        bounds.extend(auth_times.iter().copied().filter(|&t| t > start));
        bounds.push(start + len);
        bounds.dedup();
        for win in bounds.windows(2) {
            let (ta, tb) = (win[0], win[1]);
            let last = tb == start + len && !auth_times.contains(&tb);
            let span = tb - ta;
            if span < 2 {
                continue;
            }
            let push = if last { span.min(ramp) } else { span / 2 };
            let mut local: Vec<DVector<f64>> = vec![DVector::zeros(n); span];
            let mut z = DVector::zeros(n);
            for (j, slot) in local.iter_mut().enumerate().take(push) {
                let dir = push_dir(&z);
                *slot = dir * budget(ta + j).max(0.0);
                z = a * &z + &*slot;
            }
            if !last {
                // Least-norm return to zero inside the subspace.
                let ret = span - push;
                let r = q.ncols();
                let mut reach = DMatrix::zeros(n, r * ret);
                for j in 0..ret {
                    let blk = model.a_pow(ret - 1 - j) * &q;
                    reach.columns_mut(j * r, r).copy_from(&blk);
                }
                let target = -(model.a_pow(ret) * &z);
                let c = linalg::pinv(&reach, model.tolerances().rank_tol) * target;
                for j in 0..ret {
                    local[push + j] = &q * c.rows(j * r, r);
                }
            }
            // Scale the whole interval to the tightest per-step budget.
            let mut scale: f64 = 1.0;
            for (j, d) in local.iter().enumerate() {
                let nd = d.norm();
                if nd > 0.0 {
                    scale = scale.min(budget(ta + j) / nd).min(eps_cap(d));
                }
            }
            for (j, d) in local.into_iter().enumerate() {
                if ta + j < start + len {
                    delta[ta + j - start] = d * scale;
                }
            }
        }
    }

    // Propagate, snapping to zero at authentication instants.
    let mut z = vec![DVector::zeros(n)];
    for k in 0..len.saturating_sub(1) {
        let mut next = a * &z[k] + &delta[k];
        if auth_times.binary_search(&(start + k + 1)).is_ok() {
            next.fill(0.0);
        }
        z.push(next);
    }
    let mut alpha: Vec<DVector<f64>> = (0..len.saturating_sub(1))
        .map(|k| &z[k + 1] - a * &z[k])
        .collect();
    alpha.push(DVector::zeros(n));
    let attacks: Vec<DVector<f64>> = z.iter().map(|zi| emit(model, compromised, zi)).collect();
    let epsilon = alpha
        .iter()
        .map(|d| (&o * d).norm())
        .find(|v| *v > 0.0)
        .unwrap_or(0.0);
    if epsilon == 0.0 && len > 1 {
        return Err(SynthError::NoSlack);
    }
    Ok(AttackPlan {
        compromised: compromised.clone(),
        sensors: model.sensor_count(),
        target: detector,
        start_time: start,
        attacks,
        z,
        alpha,
        epsilon,
    })
}

/// Outcome of replaying a plan against the decoder with the realized noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Rehearsal {
    /// `x_hat - x` per window.
    pub errors: Vec<DVector<f64>>,
    pub id1_alarms: Vec<bool>,
    pub id2_alarms: Vec<bool>,
    pub innovations: Vec<f64>,
}

impl Rehearsal {
    pub fn first_alarm(&self, kind: DetectorKind) -> Option<usize> {
        let v = match kind {
            DetectorKind::IdI => &self.id1_alarms,
            DetectorKind::IdII => &self.id2_alarms,
        };
        v.iter().position(|&a| a)
    }

    pub fn max_error(&self) -> f64 {
        self.errors.iter().map(|e| e.norm()).fold(0.0, f64::max)
    }
}

/// Decodes every window covered by both the plan and the noise. The estimate
/// error does not depend on the state or the known input, so windows are
/// built from noise and attack alone.
pub fn rehearse(
    model: &SystemModel,
    plan: &AttackPlan,
    noise: &NoiseRealization,
    omega: OmegaMode,
) -> Rehearsal {
    let n_win = model.window();
    let p = model.sensor_count();
    let decoder = Decoder::new(model, NoiseFeasibleSet::for_model(model, omega))
        .with_execution(Execution::Sequential);
    let det = Detector::new(model);
    // Windows reaching past the end of the plan would see the attack stop.
    let windows = noise
        .len()
        .min(plan.end_time())
        .saturating_sub(n_win - 1);
    let mut out = Rehearsal {
        errors: Vec::with_capacity(windows),
        id1_alarms: Vec::with_capacity(windows),
        id2_alarms: Vec::with_capacity(windows),
        innovations: Vec::with_capacity(windows),
    };
    let mut prev: Option<DVector<f64>> = None;
    for s in 0..windows {
        let w = noise.window_noise(model, s);
        let mut y = plan.stacked_window(s, n_win);
        for (k, wk) in w.iter().enumerate() {
            for i in 0..p {
                y[i * n_win + k] += wk[i];
            }
        }
        let res = decoder.decode(&y);
        let a1 = id1(&res);
        let innov = match &prev {
            Some(pe) if s > 0 => (&noise.process[s - 1] + &res.x_hat - model.a() * pe).norm(),
            _ => 0.0,
        };
        out.id1_alarms.push(a1);
        out.id2_alarms.push(a1 || det.exceeds(innov, &res.x_hat));
        out.innovations.push(innov);
        prev = Some(res.x_hat.clone());
        out.errors.push(res.x_hat);
    }
    out
}

/// Single injection `a(inject_at) = s` on the scalar-output plant:
/// the two windows containing it decode with zero estimated attack and
/// errors `[0, s]` and `[s, -0.3 s]`.
pub fn single_injection_attack(model: &SystemModel, s: f64, inject_at: usize) -> Result<AttackPlan, SynthError> {
    let expected = crate::fixtures::scalar_plant(2, 0.0);
    if model.a() != expected.a()
        || model.c() != expected.c()
        || model.window() != 2
        || model.delta_w() != 0.0
    {
        return Err(SynthError::ModelMismatch(
            "needs A = [[.3, 1], [0, .5]], C = [1, 0], N = 2, delta_w = 0".into(),
        ));
    }
    if inject_at == 0 {
        return Err(SynthError::ModelMismatch(
            "the window before the injection must exist (inject_at >= 1)".into(),
        ));
    }
    let k = SensorSet::all(1);
    let start = inject_at - 1;
    let z = vec![
        DVector::from_vec(vec![0.0, s]),
        DVector::from_vec(vec![s, -0.3 * s]),
        DVector::zeros(2),
    ];
    let alpha: Vec<DVector<f64>> = (0..3)
        .map(|i| match z.get(i + 1) {
            Some(next) => next - model.a() * &z[i],
            None => DVector::zeros(2),
        })
        .collect();
    let attacks = z.iter().map(|zi| emit(model, &k, zi)).collect();
    Ok(AttackPlan {
        compromised: k,
        sensors: 1,
        target: DetectorKind::IdI,
        start_time: start,
        attacks,
        z,
        alpha,
        epsilon: s.abs(),
    })
}

/// Admissible attack size for one window given the realized noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StealthSlack {
    /// Any attack with `||a|| < epsilon` stays within the noise set.
    Strict { epsilon: f64 },
    /// Noise already on the boundary: `a = gamma w + a'` with `gamma = -1`
    /// admits `||a'|| <= bound`.
    Saturated { gamma: f64, bound: f64 },
    /// Zero noise bound: only exact `O z` attacks remain.
    None,
}

/// `sqrt(N) delta_w - ||w||` from the per-step noise norms of one window.
pub fn stealth_slack(window_noise_norms: &[f64], delta_w: f64, window: usize) -> StealthSlack {
    if delta_w == 0.0 {
        return StealthSlack::None;
    }
    let outer = (window as f64).sqrt() * delta_w;
    let wn = window_noise_norms.iter().map(|x| x * x).sum::<f64>().sqrt();
    let eps = outer - wn;
    if eps > 1e-12 * outer {
        StealthSlack::Strict { epsilon: eps }
    } else {
        StealthSlack::Saturated {
            gamma: -1.0,
            bound: outer,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::decode;
    use crate::fixtures;
    use approx::assert_relative_eq;

    #[test]
    fn single_step_on_scalar_plant() {
        let m = fixtures::scalar_plant(2, 0.0);
        let k = m.all_sensors();
        let z = DVector::from_vec(vec![0.0, 5.0]);
        let a = build_o(&m, &k) * &z;
        let r = decode(&m, &a, NoiseFeasibleSet::per_step(0.0));
        assert!(r.support.is_empty());
        assert_relative_eq!(r.error_against(&DVector::zeros(2)), z, epsilon = 1e-12);
        let (a0, z0) = single_step_attack(&m, &k, 0.0).unwrap();
        assert_eq!(a0.norm(), 0.0);
        assert_eq!(z0.norm(), 0.0);
        let vtf = fixtures::vtf(0.1);
        assert!(single_step_attack(&vtf, &SensorSet::empty(), 1.0).is_err());
    }

    #[test]
    fn single_injection_windows() {
        let m = fixtures::scalar_plant(2, 0.0);
        let plan = single_injection_attack(&m, 1.0, 1).unwrap();
        assert_eq!(plan.attack_at(0).unwrap()[0], 0.0);
        assert_eq!(plan.attack_at(1).unwrap()[0], 1.0);
        assert_eq!(plan.attack_at(2).unwrap()[0], 0.0);
        assert!(plan.consistency_residual(&m) < 1e-12);
        assert!(single_injection_attack(&fixtures::scalar_plant(3, 0.0), 1.0, 1).is_err());
    }

    #[test]
    fn null_space_cold_start() {
        let m = fixtures::scalar_plant(2, 0.0);
        let k = m.all_sensors();
        let mut opts = SustainOptions::new(0, 30);
        opts.magnitude = 1e3;
        let plan = sustained_attack(&m, &k, DetectorKind::IdI, &AuthPolicy::none(1), &opts, NoiseKnowledge::Bounds(&NoiseSpec::zero())).unwrap();
        assert_relative_eq!(plan.z[0], DVector::from_vec(vec![0.0, 1e3]), epsilon = 1e-9);
        assert_relative_eq!(plan.z[1], m.a() * &plan.z[0], epsilon = 1e-9);
        assert!(plan.consistency_residual(&m) < 1e-9);
        // Stable plant, full-rank F: refused.
        let m3 = fixtures::scalar_plant(3, 0.0);
        assert!(matches!(
            sustained_attack(&m3, &k, DetectorKind::IdI, &AuthPolicy::none(1), &opts, NoiseKnowledge::Bounds(&NoiseSpec::zero())),
            Err(SynthError::NotAttackable(_))
        ));
        // Authenticated every 5 steps: the single sensor carries the attack.
        let pol = AuthPolicy::periodic(1, &k, 5, 0);
        assert!(matches!(
            sustained_attack(&m, &k, DetectorKind::IdI, &pol, &opts, NoiseKnowledge::Bounds(&NoiseSpec::zero())),
            Err(SynthError::AuthConflict { .. })
        ));
    }

    #[test]
    fn slack_formula() {
        assert_eq!(stealth_slack(&[0.0; 4], 0.1, 4), StealthSlack::Strict { epsilon: 0.2 });
        let w = [0.1, 0.1, 0.1, 0.1];
        assert_eq!(
            stealth_slack(&w, 0.1, 4),
            StealthSlack::Saturated { gamma: -1.0, bound: 0.2 }
        );
        assert_eq!(stealth_slack(&[0.0], 0.0, 1), StealthSlack::None);
    }

    #[test]
    fn csv_round_trip() {
        let m = fixtures::scalar_plant(2, 0.0);
        let plan = single_injection_attack(&m, 2.5, 3).unwrap();
        let mut buf = Vec::new();
        plan.write_csv(&mut buf).unwrap();
        let back = AttackPlan::read_csv(&buf[..], &plan.compromised, 1, DetectorKind::IdI).unwrap();
        assert_eq!(back.attacks, plan.attacks);
        assert_eq!(back.start_time, plan.start_time);
        let bad = "t,a_1,a_2\n0,1,0\n";
        assert!(AttackPlan::read_csv(bad.as_bytes(), &SensorSet::all(2), 1, DetectorKind::IdI).is_err());
        let outside = "t,a_1,a_2\n0,0,1\n";
        let k1 = SensorSet::from_one_based(&[1], 2).unwrap();
        assert!(AttackPlan::read_csv(outside.as_bytes(), &k1, 2, DetectorKind::IdI).is_err());
    }

    #[test]
    fn vehicle_ramp_is_silent_and_grows() {
        let m = fixtures::vtf_default();
        let len = 3000;
        let noise = NoiseRealization::generate(&NoiseSpec::uniform(0.05, 11), &m, len + 1);
        let opts = SustainOptions::new(0, len + 1);
        let plan = sustained_attack(
            &m,
            &m.all_sensors(),
            DetectorKind::IdII,
            &AuthPolicy::none(3),
            &opts,
            NoiseKnowledge::Realized(&noise),
        )
        .unwrap();
        let rep = rehearse(&m, &plan, &noise, OmegaMode::PerStepBall);
        assert_eq!(rep.first_alarm(DetectorKind::IdII), None);
        assert!(rep.max_error() > 10.0 * 0.0789);
    }
}
