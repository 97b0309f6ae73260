//! Declarative scenario files (TOML, matrices as nested arrays).
//!
//! ```toml
//! name = "vehicle"
//! compromised = [1, 2, 3]
//! detector = "II"
//! horizon_s = 60.0
//!
//! [system]
//! a = [[1.0, 0.01], [0.0, 1.0]]
//! b = [[0.0001], [0.01]]
//! c = [[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]
//! window = 2
//! sampling_period = 0.01
//!
//! [noise]
//! seed = 1
//! process = { kind = "uniform_elementwise", lo = -0.05, hi = 0.05 }
//! measurement = { kind = "uniform_elementwise", lo = -0.05, hi = 0.05 }
//!
//! [attack]
//! source = "synth"
//! start_s = 0.0
//!
//! [auth]
//! kind = "periodic"
//! sensors = [1, 2]
//! period = 10
//!
//! [controller]
//! poles = [0.8, 0.75]
//! ```
//!
//! Sensor indices are 1-based. Times are in seconds unless the key ends in
//! `_steps`. Relative paths resolve against the directory of the file.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::OmegaMode;
use crate::detect::DetectorKind;
use crate::fixtures;
use crate::model::{ModelError, SensorSet, SystemModel};
use crate::sim::{place_poles, AuthPolicy, LoopConfig, NoiseSpec, Reference, Schedule, SimError};
use crate::synth::{AttackPlan, SustainOptions};

/// Environment variable overriding the noise seed of every loaded scenario.
pub const SEED_ENV: &str = "RSE_LAB_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("serialisation error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub a: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    pub c: Vec<Vec<f64>>,
    /// Per-step noise bound; derived from the noise section when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_w: Option<f64>,
    pub window: usize,
    #[serde(default = "default_sampling_period")]
    pub sampling_period: f64,
    #[serde(default)]
    pub omega: OmegaMode,
}

fn default_sampling_period() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackSection {
    #[default]
    None,
    Synth {
        #[serde(default)]
        start_s: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        magnitude: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha_gain: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        epsilon: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ramp_steps: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        safety: Option<f64>,
        /// Attacker knows the realized noise (simulation-only privilege).
        #[serde(default = "yes")]
        omniscient: bool,
    },
    File {
        path: PathBuf,
    },
}

fn yes() -> bool {
    true
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AuthSection {
    #[default]
    None,
    Periodic {
        sensors: Vec<usize>,
        /// Period in steps.
        period: usize,
        #[serde(default)]
        phase: usize,
    },
    /// One schedule per sensor.
    Schedules { schedules: Vec<Schedule> },
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poles: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSection {
    #[default]
    None,
    Circle {
        radius: f64,
        angular_rate: f64,
        #[serde(default)]
        phase: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub compromised: Vec<usize>,
    #[serde(default = "default_detector")]
    pub detector: DetectorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<f64>>,
    pub system: SystemSection,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub auth: AuthSection,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default)]
    pub reference: ReferenceSection,
    #[serde(default)]
    pub output: OutputSection,
    /// Directory against which relative paths resolve; not serialised.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_detector() -> DetectorKind {
    DetectorKind::IdII
}

/// Where the attack of a validated scenario comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum AttackSource {
    None,
    Synth {
        options: SustainOptions,
        omniscient: bool,
    },
    Plan(AttackPlan),
}

/// A validated scenario ready to run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub model: SystemModel,
    pub compromised: SensorSet,
    pub detector: DetectorKind,
    pub noise: NoiseSpec,
    pub attack: AttackSource,
    pub policy: AuthPolicy,
    pub loop_cfg: LoopConfig,
    pub sampling_period: f64,
}

fn matrix(field: &'static str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ConfigError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(invalid(field, "rows have different lengths"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid(field, "non-finite entry"));
    }
    Ok(DMatrix::from_row_iterator(r, c, rows.iter().flatten().copied()))
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    /// Reads a file and applies the seed override from the environment.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.apply_seed_override(std::env::var(SEED_ENV).ok().as_deref())?;
        Ok(cfg)
    }

    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<(), ConfigError> {
        if let Some(v) = value {
            self.noise.seed = v
                .trim()
                .parse()
                .map_err(|_| invalid("RSE_LAB_SEED", format!("not an unsigned integer: {v:?}")))?;
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn horizon(&self) -> Result<usize, ConfigError> {
        match (self.horizon_s, self.horizon_steps) {
            (Some(_), Some(_)) => Err(invalid("horizon", "give horizon_s or horizon_steps, not both")),
            (None, Some(h)) => Ok(h),
            (Some(s), None) => {
                if !(s.is_finite() && s >= 0.0) {
                    return Err(invalid("horizon_s", "must be finite and non-negative"));
                }
                Ok(self.seconds_to_steps(s))
            }
            (None, None) => Err(invalid("horizon", "missing horizon_s or horizon_steps")),
        }
    }

    fn seconds_to_steps(&self, s: f64) -> usize {
        (s / self.system.sampling_period).round() as usize
    }

    fn model(&self) -> Result<SystemModel, ConfigError> {
        let sys = &self.system;
        if !(sys.sampling_period.is_finite() && sys.sampling_period > 0.0) {
            return Err(invalid("system.sampling_period", "must be positive"));
        }
        let a = matrix("system.a", &sys.a)?;
        let c = matrix("system.c", &sys.c)?;
        let b = match &sys.b {
            Some(b) => matrix("system.b", b)?,
            None => DMatrix::zeros(a.nrows(), 0),
        };
        let base = SystemModel::new(a, b, c, 0.0, sys.window)?;
        let implied = fixtures::delta_w_bound(
            &base,
            self.noise.measurement_bound(&base),
            self.noise.process_bound(&base),
        );
        let dw = match sys.delta_w {
            Some(dw) => {
                if dw + 1e-12 < implied {
                    return Err(invalid(
                        "system.delta_w",
                        format!("{dw} is below the bound {implied} implied by the noise"),
                    ));
                }
                dw
            }
            None => implied,
        };
        Ok(base.with_delta_w(dw)?)
    }

    /// Checks every invariant and resolves the scenario.
    pub fn validate(&self) -> Result<Scenario, ConfigError> {
        let model = self.model()?;
        let n = model.state_dim();
        let p = model.sensor_count();
        let compromised = SensorSet::from_one_based(&self.compromised, p)?;
        let horizon = self.horizon()?;

        let policy = match &self.auth {
            AuthSection::None => AuthPolicy::none(p),
            AuthSection::Periodic { sensors, period, phase } => {
                let f = SensorSet::from_one_based(sensors, p)?;
                AuthPolicy::periodic(p, &f, *period, *phase)
            }
            AuthSection::Schedules { schedules } => AuthPolicy {
                schedules: schedules.clone(),
            },
        };
        policy.validate(p)?;

        let gain = match (&self.controller.gain, &self.controller.poles) {
            (Some(_), Some(_)) => return Err(invalid("controller", "give gain or poles, not both")),
            (Some(g), None) => {
                let g = matrix("controller.gain", g)?;
                if g.nrows() != model.input_dim() || g.ncols() != n {
                    return Err(invalid(
                        "controller.gain",
                        format!("expected {}x{n}", model.input_dim()),
                    ));
                }
                Some(g)
            }
            (None, Some(poles)) => Some(place_poles(model.a(), model.b(), poles)?),
            (None, None) => None,
        };
        let reference = match self.reference {
            ReferenceSection::None => Reference::None,
            ReferenceSection::Circle {
                radius,
                angular_rate,
                phase,
            } => {
                if model.input_dim() == 0 {
                    return Err(invalid("reference", "tracking needs an input matrix"));
                }
                Reference::Circle {
                    radius,
                    angular_rate,
                    phase,
                    sampling_period: self.system.sampling_period,
                }
            }
        };
        let initial_state = match &self.initial_state {
            Some(x) if x.len() != n => {
                return Err(invalid("initial_state", format!("expected {n} entries")))
            }
            Some(x) => Some(DVector::from_column_slice(x)),
            None => None,
        };
        let loop_cfg = LoopConfig {
            gain,
            reference,
            horizon,
            omega: self.system.omega,
            initial_state,
        };

        let attack = match &self.attack {
            AttackSection::None => AttackSource::None,
            AttackSection::Synth {
                start_s,
                magnitude,
                alpha_gain,
                epsilon,
                ramp_steps,
                safety,
                omniscient,
            } => {
                if compromised.is_empty() {
                    return Err(invalid("attack", "synthesis needs a non-empty compromised set"));
                }
                let start = self.seconds_to_steps(*start_s);
                let total = loop_cfg.plant_steps(&model);
                if start >= total {
                    return Err(invalid("attack.start_s", "starts after the horizon"));
                }
                let mut o = SustainOptions::new(start, total - start);
                o.omega = self.system.omega;
                if let Some(v) = magnitude {
                    o.magnitude = *v;
                }
                if let Some(v) = alpha_gain {
                    o.alpha_gain = *v;
                }
                o.epsilon = *epsilon;
                o.ramp_steps = *ramp_steps;
                if let Some(v) = safety {
                    if !(*v > 0.0 && *v <= 1.0) {
                        return Err(invalid("attack.safety", "must lie in (0, 1]"));
                    }
                    o.safety = *v;
                }
                AttackSource::Synth {
                    options: o,
                    omniscient: *omniscient,
                }
            }
            AttackSection::File { path } => {
                let full = self.resolve(path);
                let file = std::fs::File::open(&full).map_err(|source| ConfigError::Io {
                    path: full.clone(),
                    source,
                })?;
                let plan = AttackPlan::read_csv(file, &compromised, p, self.detector)
                    .map_err(|e| invalid("attack.path", e.to_string()))?;
                AttackSource::Plan(plan)
            }
        };

        Ok(Scenario {
            name: self.name.clone(),
            model,
            compromised,
            detector: self.detector,
            noise: self.noise,
            attack,
            policy,
            loop_cfg,
            sampling_period: self.system.sampling_period,
        })
    }

    /// The vehicle plant with `U(-.05, .05)` noise and the regulator used by
    /// the built-in experiments.
    pub fn vehicle(name: &str, horizon_s: f64, seed: u64) -> Self {
        let h = fixtures::VTF_NOISE_HALF_WIDTH;
        ScenarioConfig {
            name: name.into(),
            compromised: Vec::new(),
            detector: DetectorKind::IdII,
            horizon_s: Some(horizon_s),
            horizon_steps: None,
            initial_state: None,
            system: SystemSection {
                a: vec![vec![1.0, 0.01], vec![0.0, 1.0]],
                b: Some(vec![vec![0.0001], vec![0.01]]),
                c: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]],
                delta_w: None,
                window: 2,
                sampling_period: fixtures::VTF_SAMPLING_PERIOD,
                omega: OmegaMode::PerStepBall,
            },
            noise: NoiseSpec::uniform(h, seed),
            attack: AttackSection::None,
            auth: AuthSection::None,
            controller: ControllerSection {
                gain: None,
                poles: Some(vec![0.8, 0.75]),
            },
            reference: ReferenceSection::None,
            output: OutputSection::default(),
            base_dir: PathBuf::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
name = "vehicle"
compromised = [1, 2, 3]
detector = "II"
horizon_s = 1.5

[system]
a = [[1.0, 0.01], [0.0, 1.0]]
b = [[0.0001], [0.01]]
c = [[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]
window = 2
sampling_period = 0.01

[noise]
seed = 4
process = { kind = "uniform_elementwise", lo = -0.05, hi = 0.05 }
measurement = { kind = "uniform_elementwise", lo = -0.05, hi = 0.05 }

[attack]
source = "synth"
start_s = 0.5

[auth]
kind = "periodic"
sensors = [1, 2]
period = 10

[controller]
poles = [0.8, 0.75]

[reference]
kind = "circle"
radius = 2.0
angular_rate = 0.5
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ScenarioConfig::from_toml_str(SAMPLE).unwrap();
        let again = ScenarioConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(cfg, again);
        let sc = cfg.validate().unwrap();
        assert_eq!(sc.loop_cfg.horizon, 150);
        assert!((sc.model.delta_w() - fixtures::vtf_default().delta_w()).abs() < 1e-12);
        assert_eq!(sc.policy.common_period(&SensorSet::from_one_based(&[1, 2], 3).unwrap()), Some(10));
        match sc.attack {
            AttackSource::Synth { options, omniscient } => {
                assert_eq!(options.start, 50);
                assert_eq!(options.length, 151 - 50);
                assert!(omniscient);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn builtin_vehicle_round_trips() {
        let cfg = ScenarioConfig::vehicle("v", 60.0, 3);
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), cfg);
        assert_eq!(cfg.validate().unwrap().loop_cfg.horizon, 6000);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = ScenarioConfig::from_toml_str(SAMPLE).unwrap();
        cfg.compromised = vec![4];
        assert!(matches!(cfg.validate(), Err(ConfigError::Model(_))));

        let mut cfg = ScenarioConfig::from_toml_str(SAMPLE).unwrap();
        cfg.system.delta_w = Some(0.01);
        assert!(cfg.validate().is_err());

        let mut cfg = ScenarioConfig::from_toml_str(SAMPLE).unwrap();
        cfg.system.c = vec![vec![0.0, 1.0]];
        assert!(matches!(cfg.validate(), Err(ConfigError::Model(ModelError::Unobservable { .. }))));

        let mut cfg = ScenarioConfig::from_toml_str(SAMPLE).unwrap();
        cfg.attack = AttackSection::File {
            path: "does-not-exist.csv".into(),
        };
        assert!(matches!(cfg.validate(), Err(ConfigError::Io { .. })));

        assert!(ScenarioConfig::from_toml_str("nonsense = 1").is_err());
        let ragged = SAMPLE.replace("[[1.0, 0.01], [0.0, 1.0]]", "[[1.0, 0.01], [0.0]]");
        assert!(ScenarioConfig::from_toml_str(&ragged).unwrap().validate().is_err());
    }

    #[test]
    fn seed_override() {
        let mut cfg = ScenarioConfig::from_toml_str(SAMPLE).unwrap();
        cfg.apply_seed_override(Some("99")).unwrap();
        assert_eq!(cfg.noise.seed, 99);
        cfg.apply_seed_override(None).unwrap();
        assert_eq!(cfg.noise.seed, 99);
        assert!(cfg.apply_seed_override(Some("x")).is_err());
    }
}
