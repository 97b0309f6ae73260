//! Intrusion detectors on top of the decoder output.
//!
//! ID_I alarms whenever the decoder declares any sensor attacked. ID_II also
//! alarms when consecutive estimates disagree with the plant dynamics by more
//! than the threshold `d`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::decoder::{innovation_threshold, DecodeResult};
use crate::model::SystemModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DetectorKind {
    #[serde(rename = "I", alias = "id1", alias = "i")]
    IdI,
    #[serde(rename = "II", alias = "id2", alias = "ii")]
    IdII,
}

impl std::fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DetectorKind::IdI => "ID_I",
            DetectorKind::IdII => "ID_II",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlarmVerdict {
    pub id1_alarm: bool,
    pub id2_alarm: bool,
    /// `||x_hat(t) - A x_hat(t-1) - B u(t-1)||`; zero when there is no
    /// previous estimate.
    pub id2_innovation: f64,
    pub threshold_d: f64,
}

impl AlarmVerdict {
    pub fn alarm(&self, kind: DetectorKind) -> bool {
        match kind {
            DetectorKind::IdI => self.id1_alarm,
            DetectorKind::IdII => self.id2_alarm,
        }
    }
}

/// ID_I: tied to the recovered support rather than a norm threshold on the
/// estimated attack.
pub fn id1(result: &DecodeResult) -> bool {
    !result.support.is_empty()
}

/// Both detectors for one model.
#[derive(Debug, Clone)]
pub struct Detector {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    d: f64,
}

impl Detector {
    pub fn new(model: &SystemModel) -> Self {
        Detector {
            a: model.a().clone(),
            b: model.b().clone(),
            d: innovation_threshold(model),
        }
    }

    pub fn threshold(&self) -> f64 {
        self.d
    }

    /// Whether an innovation of size `innov` at estimate `x_hat` alarms. A
    /// round-off allowance lets a zero threshold accept exact data.
    pub fn exceeds(&self, innov: f64, x_hat: &DVector<f64>) -> bool {
        innov > self.d + 1e-9 * (1.0 + x_hat.norm())
    }

    pub fn innovation(
        &self,
        current: &DVector<f64>,
        previous: &DVector<f64>,
        input: Option<&DVector<f64>>,
    ) -> f64 {
        let mut pred = &self.a * previous;
        if let Some(u) = input {
            pred += &self.b * u;
        }
        (current - pred).norm()
    }

    /// Verdict for the decode at `t` given the decode at `t-1` (absent at the
    /// first window, where the innovation check passes vacuously) and the
    /// known input applied at `t-1`.
    pub fn id2(
        &self,
        current: &DecodeResult,
        previous: Option<&DecodeResult>,
        input: Option<&DVector<f64>>,
    ) -> AlarmVerdict {
        let a1 = id1(current);
        let innov = previous
            .map(|p| self.innovation(&current.x_hat, &p.x_hat, input))
            .unwrap_or(0.0);
        AlarmVerdict {
            id1_alarm: a1,
            id2_alarm: a1 || self.exceeds(innov, &current.x_hat),
            id2_innovation: innov,
            threshold_d: self.d,
        }
    }
}

/// Convenience wrapper for autonomous plants.
pub fn id2(current: &DecodeResult, previous: Option<&DecodeResult>, model: &SystemModel) -> AlarmVerdict {
    Detector::new(model).id2(current, previous, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::DecodeStats;
    use crate::fixtures;
    use crate::model::SensorSet;

    fn result(x: &[f64], support: SensorSet) -> DecodeResult {
        DecodeResult {
            x_hat: DVector::from_row_slice(x),
            a_hat: DVector::zeros(6),
            w_hat: DVector::zeros(6),
            support,
            feasible: true,
            stats: DecodeStats::default(),
        }
    }

    #[test]
    fn empty_support_is_silent() {
        assert!(!id1(&result(&[0.0, 0.0], SensorSet::empty())));
        let s = SensorSet::from_one_based(&[3], 3).unwrap();
        assert!(id1(&result(&[0.0, 0.0], s)));
    }

    #[test]
    fn jump_beyond_threshold_alarms() {
        let m = fixtures::vtf(0.1);
        let det = Detector::new(&m);
        let prev = result(&[1.0, 2.0], SensorSet::empty());
        let pred = m.a() * &prev.x_hat;
        let mut x = pred.clone();
        x[0] += 2.0 * det.threshold();
        let cur = result(x.as_slice(), SensorSet::empty());
        let v = det.id2(&cur, Some(&prev), None);
        assert!(!v.id1_alarm && v.id2_alarm);
        let quiet = det.id2(&result(pred.as_slice(), SensorSet::empty()), Some(&prev), None);
        assert!(!quiet.id2_alarm);
        assert!(quiet.id2_innovation < 1e-12);
    }

    #[test]
    fn first_window_degrades_to_id1() {
        let m = fixtures::vtf(0.1);
        let v = id2(&result(&[100.0, 0.0], SensorSet::empty()), None, &m);
        assert!(!v.id2_alarm);
        let s = SensorSet::from_one_based(&[1], 3).unwrap();
        let v = id2(&result(&[0.0, 0.0], s), None, &m);
        assert!(v.id1_alarm && v.id2_alarm);
    }
}
