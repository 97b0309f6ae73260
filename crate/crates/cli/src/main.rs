use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DVector;
use serde_json::json;

use rse_core::attackability::{analyze, policy_prevents_pa, verify_certificates};
use rse_core::config::{AttackSource, Scenario, ScenarioConfig};
use rse_core::decoder::{Decoder, NoiseFeasibleSet};
use rse_core::par::Execution;
use rse_core::scenario::{reproduce, run_batch, Figure, RunOutput};
use rse_core::StackedWindow;

const EXIT_ERROR: u8 = 1;
const EXIT_PA: u8 = 2;
const EXIT_BORDERLINE: u8 = 3;
const EXIT_INDETERMINATE: u8 = 4;

/// Largest tolerated share of undecided feasibility checks.
const MAX_INDETERMINATE_RATE: f64 = 0.01;

#[derive(Parser)]
#[command(name = "rse-lab", version, about = "Resilient state estimation experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Perfect-attackability verdicts. Exit 0 not attackable, 2 attackable,
    /// 3 borderline rank decision.
    Analyze {
        config: PathBuf,
        /// Write the JSON report here instead of the config's report path.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Closed-loop simulation with the decoder and detectors in the loop.
    Simulate {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Replay this attack plan instead of the configured source.
        #[arg(long)]
        attack_file: Option<PathBuf>,
        /// Print the summary as JSON.
        #[arg(long)]
        stats: bool,
        /// Run the scenarios on worker threads.
        #[arg(long)]
        batch: bool,
        /// Trace CSV (single scenario only).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Synthesise the configured stealthy attack and write it as CSV.
    Attack {
        config: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Decode one window of outputs (CSV, one row per step, columns y_1..y_p).
    Decode {
        config: PathBuf,
        window: PathBuf,
    },
    /// Regenerate the data behind a built-in figure.
    Reproduce {
        /// fig2a, fig2b, fig2c, fig3 or all.
        figure: String,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 1, env = "RSE_LAB_SEED")]
        seed: u64,
        /// Run the figure's scenarios sequentially.
        #[arg(long)]
        sequential: bool,
    },
}

type CmdResult = Result<u8, String>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Analyze { config, report } => cmd_analyze(&config, report.as_deref()),
        Cmd::Simulate {
            configs,
            attack_file,
            stats,
            batch,
            trace,
        } => cmd_simulate(&configs, attack_file.as_deref(), stats, batch, trace.as_deref()),
        Cmd::Attack { config, out } => cmd_attack(&config, out.as_deref()),
        Cmd::Decode { config, window } => cmd_decode(&config, &window),
        Cmd::Reproduce {
            figure,
            out,
            seed,
            sequential,
        } => cmd_reproduce(&figure, &out, seed, sequential),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn load(path: &Path) -> Result<(ScenarioConfig, Scenario), String> {
    let cfg = ScenarioConfig::load(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let sc = cfg.validate().map_err(|e| format!("{}: {e}", path.display()))?;
    Ok((cfg, sc))
}

fn create(path: &Path) -> Result<File, String> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    File::create(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn cmd_analyze(path: &Path, report: Option<&Path>) -> CmdResult {
    let (cfg, sc) = load(path)?;
    let verdict = analyze(&sc.model, &sc.compromised);
    let residual = verify_certificates(&sc.model, &verdict);
    let auth = sc.policy.authenticated_sensors();
    let policies: Vec<_> = if sc.policy.is_empty() {
        Vec::new()
    } else {
        [rse_core::detect::DetectorKind::IdI, rse_core::detect::DetectorKind::IdII]
            .into_iter()
            .map(|k| policy_prevents_pa(&sc.model, &sc.compromised, &sc.policy, &auth, k))
            .collect()
    };
    let mut pa = verdict.over_time(sc.detector).attackable;
    if let Some(pv) = policies.iter().find(|p| p.detector == sc.detector) {
        pa &= !pv.prevented;
    }
    let code = if verdict.borderline() {
        EXIT_BORDERLINE
    } else if pa {
        EXIT_PA
    } else {
        0
    };
    let doc = json!({
        "scenario": sc.name,
        "detector": sc.detector.to_string(),
        "verdict": verdict.report(),
        "certificate_residual": residual,
        "policies": policies,
        "perfectly_attackable": pa,
        "exit_code": code,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| e.to_string())?;
    println!("{text}");
    if let Some(out) = report.map(Path::to_path_buf).or_else(|| cfg.output.report.as_ref().map(|p| cfg.resolve(p))) {
        writeln!(create(&out)?, "{text}").map_err(|e| e.to_string())?;
    }
    Ok(code)
}

fn print_summary(name: &str, out: &RunOutput, as_json: bool) {
    let s = &out.summary;
    if as_json {
        println!("{}", json!({ "scenario": name, "summary": s }));
    } else {
        println!(
            "{name}: steps={} max_err={:.6} mean_err={:.6} id1_alarms={} id2_alarms={} auth_fraction={:.4} indeterminate={}",
            s.steps, s.max_err, s.mean_err, s.id1_alarms, s.id2_alarms, s.auth_fraction, s.indeterminate
        );
    }
}

fn cmd_simulate(
    paths: &[PathBuf],
    attack_file: Option<&Path>,
    stats: bool,
    batch: bool,
    trace: Option<&Path>,
) -> CmdResult {
    if trace.is_some() && paths.len() > 1 {
        return Err("--trace needs a single scenario".into());
    }
    let mut cfgs = Vec::new();
    let mut scenarios = Vec::new();
    for p in paths {
        let (cfg, mut sc) = load(p)?;
        if let Some(f) = attack_file {
            let file = File::open(f).map_err(|e| format!("{}: {e}", f.display()))?;
            let plan = rse_core::synth::AttackPlan::read_csv(file, &sc.compromised, sc.model.sensor_count(), sc.detector)
                .map_err(|e| format!("{}: {e}", f.display()))?;
            sc.attack = AttackSource::Plan(plan);
        }
        cfgs.push(cfg);
        scenarios.push(sc);
    }
    let exec = if batch { Execution::Parallel } else { Execution::Sequential };
    let results = run_batch(&scenarios, exec);
    let mut code = 0;
    for ((cfg, sc), res) in cfgs.iter().zip(&scenarios).zip(results) {
        let out = res.map_err(|e| format!("{}: {e}", sc.name))?;
        print_summary(&sc.name, &out, stats);
        let dest = trace
            .map(Path::to_path_buf)
            .or_else(|| cfg.output.trace.as_ref().map(|p| cfg.resolve(p)));
        if let Some(dest) = dest {
            out.trace.write_csv(create(&dest)?).map_err(|e| e.to_string())?;
        }
        let rate = out.summary.indeterminate_rate();
        if rate > MAX_INDETERMINATE_RATE {
            eprintln!(
                "warning: {}: {:.2}% of feasibility checks were indeterminate",
                sc.name,
                100.0 * rate
            );
            code = EXIT_INDETERMINATE;
        }
    }
    Ok(code)
}

fn cmd_attack(path: &Path, out: Option<&Path>) -> CmdResult {
    let (cfg, sc) = load(path)?;
    if matches!(sc.attack, AttackSource::None) {
        return Err("the config has no attack section".into());
    }
    let noise = sc.noise_realization();
    let plan = sc
        .plan(&noise)
        .map_err(|e| e.to_string())?
        .expect("attack source present");
    let dest = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.plan.as_ref().map(|p| cfg.resolve(p)));
    match dest {
        Some(d) => plan.write_csv(create(&d)?).map_err(|e| e.to_string())?,
        None => plan.write_csv(io::stdout().lock()).map_err(|e| e.to_string())?,
    }
    eprintln!(
        "{}: {} steps from t={}, epsilon={:.6e}, max window deviation from O z = {:.3e}",
        sc.name,
        plan.attacks.len(),
        plan.start_time,
        plan.epsilon,
        plan.consistency_residual(&sc.model)
    );
    Ok(0)
}

fn read_window(path: &Path, p: usize) -> Result<Vec<DVector<f64>>, String> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut steps = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        if rec.len() != p {
            return Err(format!("expected {p} columns, found {}", rec.len()));
        }
        let v: Result<Vec<f64>, _> = rec.iter().map(|s| s.trim().parse::<f64>()).collect();
        steps.push(DVector::from_vec(v.map_err(|e| e.to_string())?));
    }
    Ok(steps)
}

fn cmd_decode(path: &Path, window: &Path) -> CmdResult {
    let (_, sc) = load(path)?;
    let steps = read_window(window, sc.model.sensor_count())?;
    if steps.len() != sc.model.window() {
        return Err(format!("window file has {} rows, N = {}", steps.len(), sc.model.window()));
    }
    let y = StackedWindow::from_steps(&steps, 0).map_err(|e| e.to_string())?;
    let dec = Decoder::new(&sc.model, NoiseFeasibleSet::for_model(&sc.model, sc.loop_cfg.omega));
    let r = dec.decode(y.stacked());
    let doc = json!({
        "x_hat": r.x_hat.as_slice(),
        "support": r.support.one_based(),
        "feasible": r.feasible,
        "a_hat": r.a_hat.as_slice(),
        "supports_tested": r.stats.supports_tested,
        "indeterminate": r.stats.indeterminate,
    });
    println!("{}", serde_json::to_string_pretty(&doc).map_err(|e| e.to_string())?);
    Ok(0)
}

fn cmd_reproduce(which: &str, out: &Path, seed: u64, sequential: bool) -> CmdResult {
    let figs: Vec<Figure> = if which.eq_ignore_ascii_case("all") {
        Figure::ALL.to_vec()
    } else {
        vec![which.parse()?]
    };
    let exec = if sequential { Execution::Sequential } else { Execution::Parallel };
    for fig in figs {
        let bundle = reproduce(fig, seed, exec).map_err(|e| e.to_string())?;
        let files = bundle.write(out).map_err(|e| e.to_string())?;
        for (name, s) in &bundle.summaries {
            println!(
                "{fig} {name}: max_err={:.6} id1_alarms={} id2_alarms={}",
                s.max_err, s.id1_alarms, s.id2_alarms
            );
        }
        for f in files {
            println!("  wrote {}", f.display());
        }
    }
    Ok(0)
}
