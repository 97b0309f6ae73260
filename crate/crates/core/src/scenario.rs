//! Running validated scenarios and the built-in vehicle experiments.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::config::{AttackSection, AttackSource, AuthSection, ConfigError, ReferenceSection, Scenario, ScenarioConfig};
use crate::par::Execution;
use crate::sim::{run_closed_loop, NoiseRealization, SimError, SimSummary, SimTrace};
use crate::synth::{sustained_attack, AttackPlan, NoiseKnowledge, SynthError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("attack synthesis: {0}")]
    Synth(#[from] SynthError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: SimTrace,
    pub plan: Option<AttackPlan>,
    pub summary: SimSummary,
}

impl Scenario {
    pub fn noise_realization(&self) -> NoiseRealization {
        NoiseRealization::generate(&self.noise, &self.model, self.loop_cfg.plant_steps(&self.model))
    }

    /// The attack plan of this scenario, synthesising it when requested.
    pub fn plan(&self, noise: &NoiseRealization) -> Result<Option<AttackPlan>, SynthError> {
        match &self.attack {
            AttackSource::None => Ok(None),
            AttackSource::Plan(p) => Ok(Some(p.clone())),
            AttackSource::Synth { options, omniscient } => {
                let know = if *omniscient {
                    NoiseKnowledge::Realized(noise)
                } else {
                    NoiseKnowledge::Bounds(&self.noise)
                };
                sustained_attack(&self.model, &self.compromised, self.detector, &self.policy, options, know).map(Some)
            }
        }
    }

    pub fn run(&self) -> Result<RunOutput, ScenarioError> {
        let noise = self.noise_realization();
        let plan = self.plan(&noise)?;
        let trace = run_closed_loop(&self.model, &self.loop_cfg, &noise, plan.as_ref(), &self.policy)?;
        let summary = trace.summary();
        Ok(RunOutput { trace, plan, summary })
    }
}

/// Runs independent scenarios, one worker per scenario in parallel mode.
pub fn run_batch(scenarios: &[Scenario], exec: Execution) -> Vec<Result<RunOutput, ScenarioError>> {
    exec.map(scenarios, Scenario::run)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Figure {
    Fig2a,
    Fig2b,
    Fig2c,
    Fig3,
}

impl Figure {
    pub const ALL: [Figure; 4] = [Figure::Fig2a, Figure::Fig2b, Figure::Fig2c, Figure::Fig3];

    pub fn name(self) -> &'static str {
        match self {
            Figure::Fig2a => "fig2a",
            Figure::Fig2b => "fig2b",
            Figure::Fig2c => "fig2c",
            Figure::Fig3 => "fig3",
        }
    }
}

impl fmt::Display for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Figure {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Figure::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown figure {s:?}; expected fig2a, fig2b, fig2c or fig3"))
    }
}

/// Horizon of every built-in experiment, seconds.
pub const HORIZON_S: f64 = 60.0;
/// Attack onset in the tracking experiment, seconds.
pub const FIG3_ATTACK_START_S: f64 = 20.0;
pub const FIG3_RADIUS: f64 = 5.0;
pub const FIG3_ANGULAR_RATE: f64 = std::f64::consts::PI / 10.0;
/// Sensors authenticated in the containment experiments (position and the
/// first velocity sensor).
pub const AUTH_SENSORS: [usize; 2] = [1, 2];

/// Vehicle plant, all sensors compromised, silent synthesised attack
/// against ID_II from `start_s`, optionally with periodic authentication.
pub fn vehicle_attack(name: &str, horizon_s: f64, seed: u64, start_s: f64, auth_period: Option<usize>) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::vehicle(name, horizon_s, seed);
    cfg.compromised = vec![1, 2, 3];
    cfg.attack = AttackSection::Synth {
        start_s,
        magnitude: None,
        alpha_gain: None,
        epsilon: None,
        ramp_steps: None,
        safety: None,
        omniscient: true,
    };
    if let Some(period) = auth_period {
        cfg.auth = AuthSection::Periodic {
            sensors: AUTH_SENSORS.to_vec(),
            period,
            phase: 0,
        };
    }
    cfg
}

/// One tracking axis of the planar experiment.
pub fn tracking_axis(name: &str, seed: u64, phase: f64, auth_period: Option<usize>) -> ScenarioConfig {
    let mut cfg = vehicle_attack(name, HORIZON_S, seed, FIG3_ATTACK_START_S, auth_period);
    cfg.reference = ReferenceSection::Circle {
        radius: FIG3_RADIUS,
        angular_rate: FIG3_ANGULAR_RATE,
        phase,
    };
    // Start on the reference.
    cfg.initial_state = Some(vec![FIG3_RADIUS * phase.cos(), -FIG3_RADIUS * FIG3_ANGULAR_RATE * phase.sin()]);
    cfg
}

/// Configs behind one figure, as `(series name, config)`.
pub fn figure_configs(fig: Figure, seed: u64) -> Vec<(String, Vec<ScenarioConfig>)> {
    let half_pi = std::f64::consts::FRAC_PI_2;
    match fig {
        Figure::Fig2a => vec![("fig2a".into(), vec![ScenarioConfig::vehicle("fig2a", HORIZON_S, seed)])],
        Figure::Fig2b => vec![("fig2b".into(), vec![vehicle_attack("fig2b", HORIZON_S, seed, 0.0, None)])],
        Figure::Fig2c => [10, 100]
            .into_iter()
            .map(|l| {
                let name = format!("fig2c_l{l}");
                let cfg = vehicle_attack(&name, HORIZON_S, seed, 0.0, Some(l));
                (name, vec![cfg])
            })
            .collect(),
        Figure::Fig3 => [("fig3_l10", Some(10)), ("fig3_no_auth", None)]
            .into_iter()
            .map(|(name, l)| {
                let axes = vec![
                    tracking_axis(&format!("{name}_x"), seed, 0.0, l),
                    tracking_axis(&format!("{name}_y"), seed.wrapping_add(1), -half_pi, l),
                ];
                (name.to_string(), axes)
            })
            .collect(),
    }
}

/// One CSV file of a bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Series {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn max(&self, name: &str) -> Option<f64> {
        self.column(name).map(|c| c.into_iter().fold(0.0, f64::max))
    }

    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| v.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Clone)]
pub struct Bundle {
    pub figure: Figure,
    pub series: Vec<Series>,
    pub summaries: Vec<(String, SimSummary)>,
}

impl Bundle {
    pub fn series(&self, name: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.name == name)
    }

    /// Gnuplot script plotting every series from the CSV files.
    pub fn plot_script(&self) -> String {
        let mut s = String::new();
        s.push_str("set datafile separator ','\nset key autotitle columnhead\nset grid\n");
        match self.figure {
            Figure::Fig3 => {
                s.push_str("set multiplot layout 1,2\nset size ratio -1\nset xlabel 'x [m]'\nset ylabel 'y [m]'\n");
                for ser in &self.series {
                    s.push_str(&format!(
                        "set title '{n}'\nplot '{n}.csv' using 2:3 with lines title 'reference', '' using 4:5 with lines title 'actual', '' using 6:7 with lines title 'estimate'\n",
                        n = ser.name
                    ));
                }
                s.push_str("unset multiplot\n");
            }
            _ => {
                s.push_str("set xlabel 'time [s]'\nset ylabel 'estimation error norm'\n");
                let parts: Vec<String> = self
                    .series
                    .iter()
                    .map(|ser| format!("'{n}.csv' using 1:2 with lines title '{n}'", n = ser.name))
                    .collect();
                s.push_str(&format!("plot {}\n", parts.join(", ")));
            }
        }
        s
    }

    /// Writes `<series>.csv` files and `<figure>.gp` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>, ScenarioError> {
        std::fs::create_dir_all(dir)?;
        let mut out = Vec::new();
        for ser in &self.series {
            let p = dir.join(format!("{}.csv", ser.name));
            std::fs::write(&p, ser.to_csv()?)?;
            out.push(p);
        }
        let p = dir.join(format!("{}.gp", self.figure));
        std::fs::write(&p, self.plot_script())?;
        out.push(p);
        Ok(out)
    }
}

fn error_series(name: &str, dt: f64, trace: &SimTrace) -> Series {
    Series {
        name: name.into(),
        header: ["t_s", "error_norm", "alarm_id1", "alarm_id2"].map(String::from).to_vec(),
        rows: trace
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.t as f64 * dt,
                    r.err_norm,
                    r.alarm.id1_alarm as u8 as f64,
                    r.alarm.id2_alarm as u8 as f64,
                ]
            })
            .collect(),
    }
}

fn tracking_series(name: &str, scenarios: &[Scenario], runs: &[RunOutput]) -> Series {
    let (sx, sy) = (&scenarios[0], &scenarios[1]);
    let (tx, ty) = (&runs[0].trace, &runs[1].trace);
    let dt = sx.sampling_period;
    let rows = tx
        .rows
        .iter()
        .zip(&ty.rows)
        .map(|(rx, ry)| {
            let refx = sx.loop_cfg.reference.at(rx.t, 2)[0];
            let refy = sy.loop_cfg.reference.at(ry.t, 2)[0];
            vec![
                rx.t as f64 * dt,
                refx,
                refy,
                rx.x[0],
                ry.x[0],
                rx.x_hat[0],
                ry.x_hat[0],
                rx.err_norm.hypot(ry.err_norm),
                (rx.x[0] - refx).hypot(ry.x[0] - refy),
                (rx.alarm.id1_alarm || ry.alarm.id1_alarm) as u8 as f64,
                (rx.alarm.id2_alarm || ry.alarm.id2_alarm) as u8 as f64,
            ]
        })
        .collect();
    Series {
        name: name.into(),
        header: [
            "t_s", "ref_x", "ref_y", "pos_x", "pos_y", "est_x", "est_y", "error_norm", "tracking_error", "alarm_id1",
            "alarm_id2",
        ]
        .map(String::from)
        .to_vec(),
        rows,
    }
}

/// Regenerates one figure's data with noise seed `seed`.
pub fn reproduce(fig: Figure, seed: u64, exec: Execution) -> Result<Bundle, ScenarioError> {
    let groups = figure_configs(fig, seed);
    let mut jobs = Vec::new();
    for (gi, (_, cfgs)) in groups.iter().enumerate() {
        for cfg in cfgs {
            jobs.push((gi, cfg.validate()?));
        }
    }
    let outs = exec.map(&jobs, |(_, sc)| sc.run());
    let mut series = Vec::new();
    let mut summaries = Vec::new();
    let mut it = jobs.iter().zip(outs);
    for (gi, (name, cfgs)) in groups.iter().enumerate() {
        let mut scs = Vec::new();
        let mut runs = Vec::new();
        for _ in cfgs {
            let ((g, sc), out) = it.next().expect("one output per job");
            debug_assert_eq!(*g, gi);
            let out = out?;
            summaries.push((sc.name.clone(), out.summary));
            scs.push(sc.clone());
            runs.push(out);
        }
        series.push(match fig {
            Figure::Fig3 => tracking_series(name, &scs, &runs),
            _ => error_series(name, scs[0].sampling_period, &runs[0].trace),
        });
    }
    Ok(Bundle {
        figure: fig,
        series,
        summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn figure_names_parse() {
        for f in Figure::ALL {
            assert_eq!(f.name().parse::<Figure>().unwrap(), f);
        }
        assert!("fig9".parse::<Figure>().is_err());
    }

    #[test]
    fn builtin_configs_validate() {
        for f in Figure::ALL {
            for (_, cfgs) in figure_configs(f, 1) {
                for c in cfgs {
                    let sc = c.validate().unwrap();
                    assert_eq!(sc.loop_cfg.horizon, 6000);
                }
            }
        }
    }

    #[test]
    fn short_bundle_is_deterministic() {
        let mut cfg = vehicle_attack("short", 2.0, 5, 0.0, Some(10));
        cfg.horizon_s = Some(2.0);
        let sc = cfg.validate().unwrap();
        let a = sc.run().unwrap();
        let b = sc.run().unwrap();
        let (sa, sb) = (error_series("s", 0.01, &a.trace), error_series("s", 0.01, &b.trace));
        assert_eq!(sa.to_csv().unwrap(), sb.to_csv().unwrap());
        assert_eq!(a.summary.id2_alarms, 0);
        assert_eq!(a.summary.auth_violations, 0);
    }
}
