//! `flockswitch` command-line front end.
//!
//! Exit codes: 0 all checks pass, 1 a condition or assertion failed,
//! 2 usage or configuration error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flockswitch::analysis::{
    self, check_probability_bounds, check_discrete_conditions, check_continuous_conditions, p1_lower_bound, p2_for_process,
    velocity_decay_envelope, xinf_exists, BoundReport, PathBoundTracker,
};
use flockswitch::dynamics::simulate;
use flockswitch::montecarlo::run_ensemble;
use flockswitch::{Error, ExperimentConfig, SwitchingSchedule};
use serde_json::json;

#[derive(Parser)]
#[command(name = "flockswitch", version, about = "Cucker-Smale flocking under random switching topologies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Path seed (simulate, schedule) or root seed (ensemble).
    #[arg(long, env = "FLOCKSWITCH_SEED")]
    seed: Option<u64>,
    /// Number of steps; overrides the config.
    #[arg(long)]
    horizon: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the flocking conditions and probability-bound hypotheses.
    Check {
        #[command(flatten)]
        common: Common,
    },
    /// Run one sample path and write its trajectory.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Verify the window ergodicity floor and decay envelope along the path.
        #[arg(long)]
        assert_bounds: bool,
    },
    /// Run many seeded sample paths in parallel.
    Ensemble {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        runs: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
        /// Also check the window bounds on every path.
        #[arg(long)]
        assert_bounds: bool,
    },
    /// Tabulate p1(n), p2(n), the decay envelope and x_inf.
    Bounds {
        #[command(flatten)]
        common: Common,
    },
    /// Dump a realized switching schedule as JSON.
    Schedule {
        #[command(flatten)]
        common: Common,
    },
}

enum Failure {
    Condition(String),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Check { common } => cmd_check(&common),
        Command::Simulate { common, assert_bounds } => cmd_simulate(&common, assert_bounds),
        Command::Ensemble {
            common,
            runs,
            jobs,
            assert_bounds,
        } => cmd_ensemble(&common, runs, jobs, assert_bounds),
        Command::Bounds { common } => cmd_bounds(&common),
        Command::Schedule { common } => cmd_schedule(&common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Condition(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn read_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    ExperimentConfig::parse_unvalidated(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn load(common: &Common) -> Result<ExperimentConfig, Failure> {
    let cfg = read_config(&common.config)?;
    cfg.validate()
        .map_err(|e| Failure::Usage(format!("{}: {e}", common.config.display())))?;
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &ExperimentConfig) -> Result<PathBuf, Failure> {
    let dir = common
        .out
        .clone()
        .or_else(|| cfg.run.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("flockswitch-out"));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// CSV provenance line, ignored by readers that skip `#` comments.
fn provenance(out: &mut impl Write, cfg: &ExperimentConfig, seed: u64) -> std::io::Result<()> {
    writeln!(out, "# config_sha256={} seed={}", cfg.hash(), seed)
}

fn cmd_check(common: &Common) -> CmdResult {
    let cfg = read_config(&common.config)?;
    // An unstable step is a failed condition, not a malformed config.
    match cfg.validate() {
        Ok(()) | Err(Error::StabilityViolated(_)) => {}
        Err(e) => return Err(Failure::Usage(format!("{}: {e}", common.config.display()))),
    }
    let params = cfg.framework_params();
    let mut reports: Vec<BoundReport> = vec![
        check_discrete_conditions(&params),
        check_probability_bounds(&params, &cfg.dwelling),
    ];
    if let Some(cont) = cfg.framework.continuous {
        reports.push(check_continuous_conditions(
            params.n_agents,
            params.kappa(),
            cont.a,
            cont.m,
            &params.probs,
            params.epsilon,
        ));
    }
    println!("config_sha256 {}", cfg.hash());
    for r in &reports {
        println!("{r}");
    }
    if let Some(dir) = common.out.as_ref() {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("check.json"), &json!({ "config_sha256": cfg.hash(), "reports": reports }))?;
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.title.as_str()).collect();
    if failed.is_empty() {
        println!("all checks pass");
        Ok(())
    } else {
        Err(Failure::Condition(format!("failed: {}", failed.join(", "))))
    }
}

fn cmd_simulate(common: &Common, assert_bounds: bool) -> CmdResult {
    let cfg = load(common)?;
    let seed = common.seed.unwrap_or(cfg.run.seed);
    let horizon = common.horizon.unwrap_or(cfg.run.horizon);
    let dir = out_dir(common, &cfg)?;
    let init = cfg.init.realize(seed)?;
    let sched = SwitchingSchedule::generate(&cfg.topologies, &cfg.dwelling, horizon, seed);
    let params = cfg.framework_params();

    let mut tracker = if assert_bounds {
        Some(PathBoundTracker::new(&params, &sched, &cfg.topologies, horizon, params.x_inf)?)
    } else {
        None
    };
    let traj = match tracker.as_mut() {
        Some(t) => simulate(&init, &cfg.topologies, &sched, cfg.h, &cfg.weight, horizon, cfg.run.stop, cfg.sim_options(), t)?,
        None => simulate(&init, &cfg.topologies, &sched, cfg.h, &cfg.weight, horizon, cfg.run.stop, cfg.sim_options(), &mut ())?,
    };

    let mut csv = std::io::BufWriter::new(fs::File::create(dir.join("trajectory.csv"))?);
    provenance(&mut csv, &cfg, seed)?;
    traj.write_csv(&mut csv)?;
    csv.flush()?;
    write_json(&dir.join("snapshots.json"), &traj.snapshots)?;

    let bounds = tracker.map(PathBoundTracker::finish);
    let summary = json!({
        "config_sha256": cfg.hash(),
        "seed": seed,
        "horizon": horizon,
        "stop": traj.stop,
        "steps_to_tolerance": traj.steps_to_tolerance,
        "DX0": traj.dx0,
        "DV0": traj.dv0,
        "final_DX": traj.final_dx(),
        "final_DV": traj.final_dv(),
        "max_DX": traj.max_dx,
        "monotonicity_violations": traj.monotonicity_violations(cfg.h, 1e-12),
        "max_form_discrepancy": traj.max_form_discrepancy,
        "bounds": bounds.as_ref().map(|b| json!({
            "windows_checked": b.windows_checked,
            "hypotheses_hold": b.hypotheses_hold,
            "rooted_failures": b.rooted_failures,
            "dwell_failures": b.dwell_failures,
            "mu_violations": b.mu_violations,
            "envelope_violations": b.envelope_violations,
            "min_mu_margin": b.min_mu_margin,
            "max_envelope_ratio": b.max_envelope_ratio,
            "max_window_defect": b.max_window_defect,
        })),
    });
    write_json(&dir.join("summary.json"), &summary)?;

    println!("seed {seed}  horizon {horizon}  stop {:?}", traj.stop);
    println!(
        "DX0 {:.6e}  DV0 {:.6e}  final DX {:.6e}  final DV {:.6e}  max DX {:.6e}",
        traj.dx0,
        traj.dv0,
        traj.final_dx(),
        traj.final_dv(),
        traj.max_dx
    );
    if let Some(t) = traj.steps_to_tolerance {
        println!("reached velocity tolerance at step {t}");
    }
    println!("wrote {}", dir.display());
    if let Some(b) = bounds {
        println!(
            "bounds: {} windows, hypotheses {}, ergodicity violations {}, envelope violations {}",
            b.windows_checked,
            if b.hypotheses_hold { "hold" } else { "fail" },
            b.mu_violations,
            b.envelope_violations
        );
        if b.mu_violations + b.envelope_violations > 0 {
            return Err(Failure::Condition("window bound violated along the path".into()));
        }
    }
    Ok(())
}

fn cmd_ensemble(common: &Common, runs: Option<u64>, jobs: Option<usize>, assert_bounds: bool) -> CmdResult {
    let cfg = load(common)?;
    let seed = common.seed.unwrap_or(cfg.run.seed);
    let horizon = common.horizon.unwrap_or(cfg.run.horizon);
    let runs = runs.unwrap_or(cfg.run.runs);
    if runs == 0 {
        return Err(Failure::Usage("--runs must be at least 1".into()));
    }
    let dir = out_dir(common, &cfg)?;
    let spec = cfg.ensemble_spec(runs, seed, horizon, assert_bounds);
    let result = run_ensemble(&spec, jobs.or(cfg.run.jobs))?;

    let mut csv = std::io::BufWriter::new(fs::File::create(dir.join("runs.csv"))?);
    provenance(&mut csv, &cfg, seed)?;
    result.write_runs_csv(&mut csv)?;
    csv.flush()?;
    write_json(
        &dir.join("ensemble.json"),
        &json!({ "config_sha256": cfg.hash(), "root_seed": seed, "result": result }),
    )?;

    let f = &result.flocking;
    println!("runs {runs}  root seed {seed}  horizon {horizon}");
    println!(
        "flocked before horizon: {}/{} = {:.4}  (95% Wilson [{:.4}, {:.4}])",
        f.successes, f.trials, f.fraction, f.ci_low, f.ci_high
    );
    let steps = result.steps_to_tolerance();
    if !steps.is_empty() {
        println!(
            "steps to tolerance: min {}  median {}  max {}",
            steps[0],
            steps[steps.len() / 2],
            steps[steps.len() - 1]
        );
    }
    println!(
        "monotonicity violations {}  bound violations {}  failed runs {}",
        result.total_monotonicity_violations, result.total_bound_violations, result.failed_runs
    );
    println!("wrote {}", dir.display());
    if assert_bounds && result.total_bound_violations > 0 {
        return Err(Failure::Condition("window bound violated in some run".into()));
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

fn cmd_bounds(common: &Common) -> CmdResult {
    let cfg = load(common)?;
    let seed = common.seed.unwrap_or(cfg.run.seed);
    let dir = out_dir(common, &cfg)?;
    let mut params = cfg.framework_params();
    let init = cfg.init.realize(seed)?;
    let (dx0, dv0) = (init.position_diameter(), init.velocity_diameter());

    let xinf = match xinf_exists(&params, dx0, dv0) {
        Ok(v) => v,
        Err(e) => {
            println!("x_inf: {e}");
            None
        }
    };
    match &xinf {
        Some(s) => println!(
            "x_inf {:.10e}  (LHS {:.10e}, delta {:.6}, series {} terms, tail bound {:.3e})",
            s.x_inf, s.lhs, s.delta, s.series.terms, s.series.tail_bound
        ),
        None => println!("x_inf: no solution below the search ceiling"),
    }
    if params.x_inf.is_none() {
        params.x_inf = xinf.as_ref().map(|s| s.x_inf);
    }

    let mut n_csv = std::io::BufWriter::new(fs::File::create(dir.join("bounds_n.csv"))?);
    provenance(&mut n_csv, &cfg, seed)?;
    writeln!(n_csv, "n,p1,p2")?;
    println!("\n{:>8}  {:>24}  {:>24}", "n", "p1(n)", "p2(n)");
    for &n in &cfg.grid.n {
        let p1 = p1_lower_bound(n, params.c, &params.probs).ok().map(|v| v.value);
        let p2 = p2_for_process(&cfg.dwelling, n, params.c, params.m, params.n_agents).ok().map(|v| v.value);
        writeln!(n_csv, "{n},{},{}", fmt_opt(p1), fmt_opt(p2))?;
        let show = |v: Option<f64>| v.map(|x| format!("{x:.12e}")).unwrap_or_else(|| "n/a".into());
        println!("{n:>8}  {:>24}  {:>24}", show(p1), show(p2));
    }
    n_csv.flush()?;

    let mut r_csv = std::io::BufWriter::new(fs::File::create(dir.join("bounds_r.csv"))?);
    provenance(&mut r_csv, &cfg, seed)?;
    writeln!(r_csv, "r,envelope")?;
    println!("\n{:>8}  {:>24}", "r", "envelope(r)");
    for &r in &cfg.grid.r {
        let env = params.x_inf.and_then(|_| velocity_decay_envelope(r, &params).ok());
        writeln!(r_csv, "{r},{}", fmt_opt(env))?;
        println!("{r:>8}  {:>24}", env.map(|x| format!("{x:.12e}")).unwrap_or_else(|| "n/a".into()));
    }
    r_csv.flush()?;

    write_json(
        &dir.join("bounds.json"),
        &json!({
            "config_sha256": cfg.hash(),
            "seed": seed,
            "DX0": dx0,
            "DV0": dv0,
            "x_inf": xinf,
            "delta_interval": params.delta_interval().ok(),
            "envelope_exponent": params.envelope_exponent(),
            "smallest_valid_M": analysis::smallest_valid_m(&cfg.dwelling, params.c, params.n_agents).ok(),
        }),
    )?;
    println!("\nwrote {}", dir.display());
    Ok(())
}

fn cmd_schedule(common: &Common) -> CmdResult {
    let cfg = load(common)?;
    let seed = common.seed.unwrap_or(cfg.run.seed);
    let horizon = common.horizon.unwrap_or(cfg.run.horizon);
    let sched = SwitchingSchedule::generate(&cfg.topologies, &cfg.dwelling, horizon, seed);
    let doc = json!({ "config_sha256": cfg.hash(), "seed": seed, "horizon": horizon, "schedule": sched });
    match &common.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write_json(&dir.join("schedule.json"), &doc)?;
            println!("wrote {}", dir.join("schedule.json").display());
        }
        None => {
            let text = serde_json::to_string_pretty(&doc).map_err(Error::from)?;
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{text}") {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                r => r?,
            }
        }
    }
    Ok(())
}
