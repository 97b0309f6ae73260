//! Perfect-attackability verdicts with numerically re-checkable
//! certificates, and checks of intermittent authentication policies.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::detect::DetectorKind;
use crate::linalg::{self, RankInfo};
use crate::model::{
    build_f, build_o, unstable_null_intersection, SensorSet, SystemModel, UnstableWitness,
    WitnessDirection,
};
use crate::sim::AuthPolicy;

/// Rank decisions whose margin falls below this multiple of the cutoff are
/// reported as borderline.
pub const BORDERLINE_FACTOR: f64 = 10.0;

fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Serializable view of a rank decision.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankReport {
    pub rank: usize,
    pub cols: usize,
    pub margin: f64,
    pub borderline: bool,
}

impl From<&RankInfo> for RankReport {
    fn from(r: &RankInfo) -> Self {
        RankReport {
            rank: r.rank,
            cols: r.cols,
            margin: r.margin,
            borderline: r.is_borderline(BORDERLINE_FACTOR),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WitnessReport {
    pub eigenvalue: [f64; 2],
    /// Jordan chain (real case) or the two plane vectors (complex pair).
    pub vectors: Vec<Vec<f64>>,
    pub complex_pair: bool,
    pub residual_sigma: f64,
}

impl From<&UnstableWitness> for WitnessReport {
    fn from(w: &UnstableWitness) -> Self {
        let (vectors, complex_pair) = match &w.direction {
            WitnessDirection::Real(_) => (w.chain.iter().map(to_vec).collect(), false),
            WitnessDirection::Plane(a, b) => (vec![to_vec(a), to_vec(b)], true),
        };
        WitnessReport {
            eigenvalue: [w.eigenvalue.re, w.eigenvalue.im],
            vectors,
            complex_pair,
            residual_sigma: w.residual_sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleStep {
    pub attackable: bool,
    /// Unit vector of `N(O_{K^c})`.
    pub witness: Option<DVector<f64>>,
    pub rank: RankInfo,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Certificate {
    /// `F(K, N)` loses rank; a unit null vector.
    FRankDeficient(DVector<f64>),
    /// Unstable eigen-direction inside `N(O_{K^c})`.
    Unstable(UnstableWitness),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Not attackable at a single step, so not over time either.
    NotSingleStep,
    FRankDeficient,
    FFullRankUnstable,
    FFullRankStable,
    /// Detector II: no unstable eigen-direction hidden from the clean sensors.
    NoUnstableWitness,
    Unstable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverTime {
    pub attackable: bool,
    pub branch: Branch,
    pub certificate: Option<Certificate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaVerdict {
    pub compromised: SensorSet,
    pub single_step: SingleStep,
    pub id1: OverTime,
    pub id2: OverTime,
    pub f_rank: RankInfo,
    pub notes: Vec<String>,
}

impl PaVerdict {
    /// Some rank decision behind the verdict lies within the borderline band.
    pub fn borderline(&self) -> bool {
        self.single_step.rank.is_borderline(BORDERLINE_FACTOR)
            || self.f_rank.is_borderline(BORDERLINE_FACTOR)
    }

    pub fn over_time(&self, kind: DetectorKind) -> &OverTime {
        match kind {
            DetectorKind::IdI => &self.id1,
            DetectorKind::IdII => &self.id2,
        }
    }

    pub fn report(&self) -> VerdictReport {
        let cert = |o: &OverTime| match &o.certificate {
            Some(Certificate::FRankDeficient(v)) => CertificateReport::FNullVector(to_vec(v)),
            Some(Certificate::Unstable(w)) => CertificateReport::UnstableWitness(w.into()),
            None => CertificateReport::None,
        };
        VerdictReport {
            compromised: self.compromised.one_based(),
            pa_single_step: self.single_step.attackable,
            single_step_witness: self.single_step.witness.as_ref().map(to_vec),
            o_clean_rank: (&self.single_step.rank).into(),
            f_rank: (&self.f_rank).into(),
            pa_over_time_id1: self.id1.attackable,
            id1_branch: self.id1.branch,
            id1_certificate: cert(&self.id1),
            pa_over_time_id2: self.id2.attackable,
            id2_branch: self.id2.branch,
            id2_certificate: cert(&self.id2),
            borderline: self.borderline(),
            notes: self.notes.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateReport {
    None,
    FNullVector(Vec<f64>),
    UnstableWitness(WitnessReport),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerdictReport {
    pub compromised: Vec<usize>,
    pub pa_single_step: bool,
    pub single_step_witness: Option<Vec<f64>>,
    pub o_clean_rank: RankReport,
    pub f_rank: RankReport,
    pub pa_over_time_id1: bool,
    pub id1_branch: Branch,
    pub id1_certificate: CertificateReport,
    pub pa_over_time_id2: bool,
    pub id2_branch: Branch,
    pub id2_certificate: CertificateReport,
    pub borderline: bool,
    pub notes: Vec<String>,
}

/// Attackable at one window iff the clean sensors do not observe the state.
pub fn pa_single_step(model: &SystemModel, compromised: &SensorSet) -> SingleStep {
    let tol = model.tolerances().rank_tol;
    let o_clean = build_o(model, &compromised.complement(model.sensor_count()));
    let rank = RankInfo::of(&o_clean, tol);
    let attackable = !rank.full_column_rank();
    let witness = if attackable {
        linalg::null_vector(&o_clean, tol)
    } else {
        None
    };
    SingleStep {
        attackable,
        witness,
        rank,
    }
}

/// Attackability over time against ID_I.
pub fn pa_over_time_id1(model: &SystemModel, compromised: &SensorSet) -> OverTime {
    let tol = model.tolerances();
    let f = build_f(model, compromised);
    if !pa_single_step(model, compromised).attackable {
        return OverTime {
            attackable: false,
            branch: Branch::NotSingleStep,
            certificate: None,
        };
    }
    let f_rank = RankInfo::of(&f, tol.rank_tol);
    if !f_rank.full_column_rank() {
        let v = linalg::null_vector(&f, tol.rank_tol)
            .unwrap_or_else(|| DVector::from_element(model.state_dim(), 0.0));
        return OverTime {
            attackable: true,
            branch: Branch::FRankDeficient,
            certificate: Some(Certificate::FRankDeficient(v)),
        };
    }
    match unstable_null_intersection(model, compromised, tol.stability_margin) {
        Some(w) => OverTime {
            attackable: true,
            branch: Branch::FFullRankUnstable,
            certificate: Some(Certificate::Unstable(w)),
        },
        None => OverTime {
            attackable: false,
            branch: Branch::FFullRankStable,
            certificate: None,
        },
    }
}

/// Attackability over time against ID_II.
pub fn pa_over_time_id2(model: &SystemModel, compromised: &SensorSet) -> OverTime {
    if !pa_single_step(model, compromised).attackable {
        return OverTime {
            attackable: false,
            branch: Branch::NotSingleStep,
            certificate: None,
        };
    }
    match unstable_null_intersection(model, compromised, model.tolerances().stability_margin) {
        Some(w) => OverTime {
            attackable: true,
            branch: Branch::Unstable,
            certificate: Some(Certificate::Unstable(w)),
        },
        None => OverTime {
            attackable: false,
            branch: Branch::NoUnstableWitness,
            certificate: None,
        },
    }
}

/// All three verdicts for one compromised set.
pub fn analyze(model: &SystemModel, compromised: &SensorSet) -> PaVerdict {
    let tol = model.tolerances();
    let single_step = pa_single_step(model, compromised);
    let f_rank = RankInfo::of(&build_f(model, compromised), tol.rank_tol);
    let id1 = pa_over_time_id1(model, compromised);
    let id2 = pa_over_time_id2(model, compromised);
    let mut notes = Vec::new();
    notes.push(if single_step.attackable {
        format!(
            "clean sensors leave rank {} < {}: attackable at a single window",
            single_step.rank.rank,
            model.state_dim()
        )
    } else {
        "clean sensors observe the state: no single-window attack".to_string()
    });
    notes.push(match id1.branch {
        Branch::FRankDeficient => "F(K,N) rank-deficient: persistent attack from its null space".into(),
        Branch::FFullRankUnstable => {
            "F(K,N) full rank: persistent attack along an unstable hidden mode".into()
        }
        Branch::FFullRankStable => "F(K,N) full rank and no unstable hidden mode".into(),
        _ => "ID_I: not attackable over time".to_string(),
    });
    if id2.attackable {
        notes.push("ID_II: unstable mode hidden from the clean sensors".into());
    }
    if tol.stability_margin > 0.0
        && linalg::unstable_eigenstructure(model.a(), tol.stability_margin)
            .iter()
            .any(|e| (e.modulus() - 1.0).abs() <= tol.stability_margin)
    {
        notes.push("eigenvalue on the unit circle counted as unstable".into());
    }
    let v = PaVerdict {
        compromised: compromised.clone(),
        single_step,
        id1,
        id2,
        f_rank,
        notes,
    };
    if v.borderline() {
        let mut v = v;
        v.notes.push("rank margin within the borderline band".into());
        return v;
    }
    v
}

/// Re-checks every certificate of a verdict; returns the largest normalised
/// residual found.
pub fn verify_certificates(model: &SystemModel, verdict: &PaVerdict) -> f64 {
    let clean = verdict.compromised.complement(model.sensor_count());
    let o_clean = build_o(model, &clean);
    let f = build_f(model, &verdict.compromised);
    let mut worst: f64 = 0.0;
    if let Some(z) = &verdict.single_step.witness {
        worst = worst.max((&o_clean * z).norm() / z.norm());
    }
    for o in [&verdict.id1, &verdict.id2] {
        match &o.certificate {
            Some(Certificate::FRankDeficient(v)) => {
                worst = worst.max((&f * v).norm() / v.norm());
            }
            Some(Certificate::Unstable(w)) => {
                let basis = w.subspace();
                for c in basis.column_iter() {
                    worst = worst.max((&o_clean * c).norm() / c.norm());
                }
                if let WitnessDirection::Real(v) = &w.direction {
                    let lam = w.eigenvalue.re;
                    let shift = model.a() - DMatrix::identity(v.len(), v.len()) * lam;
                    worst = worst.max((&shift * v).norm() / v.norm());
                    for pair in w.chain.windows(2) {
                        let r = (&shift * &pair[1] - &pair[0]).norm() / pair[1].norm();
                        worst = worst.max(r);
                    }
                }
            }
            None => {}
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuthBlock {
    pub blocks: bool,
    pub rank: RankInfo,
    pub matrix: DMatrix<f64>,
}

/// Whether authenticating sensors `auth_sets[k]` at window step `k` rules
/// out single-window attacks: `[P_{I_k u K^c} C A^k]_k` full column rank.
pub fn auth_blocks_single_step(
    model: &SystemModel,
    compromised: &SensorSet,
    auth_sets: &[SensorSet],
) -> AuthBlock {
    let p = model.sensor_count();
    let clean = compromised.complement(p);
    let blocks: Vec<DMatrix<f64>> = auth_sets
        .iter()
        .enumerate()
        .map(|(k, ik)| ik.union(&clean).project_rows(&(model.c() * model.a_pow(k))))
        .collect();
    let matrix = linalg::vstack(&blocks, model.state_dim());
    let rank = RankInfo::of(&matrix, model.tolerances().rank_tol);
    AuthBlock {
        blocks: rank.full_column_rank(),
        rank,
        matrix,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyVerdict {
    pub detector: DetectorKind,
    pub prevented: bool,
    pub reason: String,
    pub period: Option<usize>,
    /// Rank of the observability matrix of `(A, P_F C)`.
    pub observability: Option<RankReport>,
    /// Rank of `[P_F C; P_F C A^T; ...; P_F C A^{(N-1)T}]`.
    pub key_matrix: Option<RankReport>,
    /// Observability holds but the decimated stack loses rank.
    pub key_rank_loss: bool,
}

/// Whether periodic authentication of `auth_subset` with a common period
/// removes perfect attackability against `detector`.
pub fn policy_prevents_pa(
    model: &SystemModel,
    compromised: &SensorSet,
    policy: &AuthPolicy,
    auth_subset: &SensorSet,
    detector: DetectorKind,
) -> PolicyVerdict {
    let tol = model.tolerances().rank_tol;
    let mut v = PolicyVerdict {
        detector,
        prevented: false,
        reason: String::new(),
        period: None,
        observability: None,
        key_matrix: None,
        key_rank_loss: false,
    };
    let pa = match detector {
        DetectorKind::IdI => pa_over_time_id1(model, compromised),
        DetectorKind::IdII => pa_over_time_id2(model, compromised),
    };
    if !pa.attackable {
        v.prevented = true;
        v.reason = "not attackable over time even without authentication".into();
        return v;
    }
    let Some(period) = policy.common_period(auth_subset).filter(|_| !auth_subset.is_empty()) else {
        v.reason = "authenticated subset has no bounded common period".into();
        return v;
    };
    v.period = Some(period);
    let pf_c = auth_subset.project_rows(model.c());
    let obs = linalg::observability_rank(model.a(), &pf_c, tol);
    v.observability = Some((&obs).into());
    let a_t = model.a_pow(period);
    let mut blocks = Vec::new();
    let mut cur = pf_c.clone();
    for _ in 0..model.window() {
        blocks.push(cur.clone());
        cur = &cur * &a_t;
    }
    let key = RankInfo::of(&linalg::vstack(&blocks, model.state_dim()), tol);
    v.key_matrix = Some((&key).into());
    v.key_rank_loss = obs.full_column_rank() && !key.full_column_rank();
    if !obs.full_column_rank() {
        v.reason = "(A, P_F C) is not observable".into();
        return v;
    }
    if !key.full_column_rank() {
        v.reason = format!("decimated key matrix loses rank at period {period}");
        return v;
    }
    match detector {
        DetectorKind::IdII => {
            v.prevented = true;
            v.reason = "bounded period with observable authenticated subset".into();
        }
        DetectorKind::IdI => {
            let f_s = RankInfo::of(&build_f(model, &model.all_sensors()), tol);
            if f_s.full_column_rank() {
                v.prevented = true;
                v.reason = "F(S,N) full rank: any bounded period suffices".into();
            } else if period == 1 {
                v.prevented = true;
                v.reason = "F(S,N) rank-deficient but every step is authenticated".into();
            } else {
                v.reason = format!(
                    "F(S,N) rank-deficient: period {period} leaves room for single-injection attacks"
                );
            }
        }
    }
    v
}
