use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dduio::io;
use dduio::lti::{self, rng_from_seed};
use dduio::microgrid::{self, AttackSignal, AttackSpec, DguParams, ScenarioSummary};
use dduio::trajectory::{self, PeVerdict};
use dduio::{uio, Trajectory};
use log::{info, warn};
use nalgebra::DVector;
use serde::Serialize;
use serde_json::json;

mod config;

use config::{CommonFlags, Resolved};

const EXIT_NO_UIO: u8 = 2;
const EXIT_INVALID_INPUT: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

/// Data-driven unknown-input observers: collect data, check existence,
/// synthesize, estimate, and run the DC microgrid demos.
#[derive(Debug, Parser)]
#[command(name = "dduio", version)]
struct Cli {
    #[command(flatten)]
    common: CommonFlags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate an experiment and write it as CSV plus a JSON sidecar.
    Collect(CollectArgs),
    /// Run the existence test on historical data and print the report.
    Check(CheckArgs),
    /// Synthesize the observer from historical data.
    Synthesize(SynthesizeArgs),
    /// Run an observer on online data (inputs and outputs only).
    Estimate(EstimateArgs),
    /// Reproduce the microgrid safe-operation or attack experiment.
    Demo(DemoArgs),
}

#[derive(Debug, Args, Serialize)]
struct CollectArgs {
    /// Use the DC microgrid generation unit instead of a random system.
    #[arg(long)]
    microgrid: bool,
    /// Fresh run for online estimation: no retries, no unknown-input columns.
    #[arg(long)]
    online: bool,
    /// State dimension of the random system.
    #[arg(long, default_value_t = 4)]
    n: usize,
    /// Known-input dimension of the random system.
    #[arg(long, default_value_t = 1)]
    m: usize,
    /// Output dimension of the random system [default: n].
    #[arg(long)]
    p: Option<usize>,
    /// Unknown-input dimension of the random system.
    #[arg(long, default_value_t = 1)]
    md: usize,
    /// Seed of the random system [default: --seed].
    #[arg(long)]
    system_seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
struct CheckArgs {
    /// Historical trajectory CSV.
    hist: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SynthesizeArgs {
    /// Historical trajectory CSV.
    hist: PathBuf,
    /// Write the realization even when no UIO exists.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args, Serialize)]
struct EstimateArgs {
    /// Realization JSON written by `synthesize`.
    realization: PathBuf,
    /// Online data CSV with u and y columns (x optional).
    online: PathBuf,
    /// Initial estimate, comma separated [default: zeros].
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    xhat0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Scenario {
    Safe,
    Attack,
}

#[derive(Debug, Args, Serialize)]
struct DemoArgs {
    scenario: Scenario,
    /// Number of online steps [default: 10 for safe, 100 for attack].
    #[arg(long)]
    steps: Option<usize>,
    /// Samples skipped before the pre-attack residual maximum and the
    /// monotonicity check [default: 0 for safe, 10 for attack].
    #[arg(long)]
    burn_in: Option<usize>,
    /// First attacked step.
    #[arg(long, default_value_t = microgrid::ATTACK_START)]
    attack_start: usize,
    /// Constant attack added to every output channel.
    #[arg(long, default_value_t = microgrid::ATTACK_MAGNITUDE, allow_hyphen_values = true)]
    attack_magnitude: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<dduio::Error>() {
        Some(inner) if inner.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_INVALID_INPUT,
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let cfg = Resolved::new(&cli.common, DguParams::default().ts)?;
    let args = match &cli.command {
        Command::Collect(a) => json!({"collect": a}),
        Command::Check(a) => json!({"check": a}),
        Command::Synthesize(a) => json!({"synthesize": a}),
        Command::Estimate(a) => json!({"estimate": a}),
        Command::Demo(a) => json!({"demo": a}),
    };
    info!("resolved config: {}", json!({"common": cfg, "command": args}));
    match &cli.command {
        Command::Collect(a) => collect(&cfg, a),
        Command::Check(a) => check(&cfg, a),
        Command::Synthesize(a) => synthesize(&cfg, a),
        Command::Estimate(a) => estimate(&cfg, a),
        Command::Demo(a) => demo(&cfg, a),
    }
}

fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        // a closed pipe (`dduio ... | head`) is not an error
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn microgrid_params(cfg: &Resolved) -> anyhow::Result<DguParams> {
    Ok(cfg.microgrid()?)
}

/// Online files never carry the unknown input.
fn without_unknown_input(traj: Trajectory) -> anyhow::Result<Trajectory> {
    let meta = traj.meta.clone();
    Ok(Trajectory::with_declared_md(traj.u().clone(), traj.x().clone(), traj.y().clone(), traj.md())?
        .with_meta(meta))
}

fn collect(cfg: &Resolved, a: &CollectArgs) -> anyhow::Result<u8> {
    let out = cfg.out_or_fail()?;
    let (traj, min_len) = if a.microgrid {
        let params = microgrid_params(cfg)?;
        let min_len = trajectory::min_exciting_length(microgrid::DISTURBANCE_DIM, microgrid::STATE_DIM + 2);
        let traj = if a.online {
            let len = cfg.t.unwrap_or(microgrid::SAFE_STEPS);
            without_unknown_input(microgrid::simulate_run(&params, len, cfg.seed, "dgu-online")?)?
        } else {
            let len = cfg.t.unwrap_or_else(microgrid::default_historical_length);
            if len < min_len {
                microgrid::simulate_run(&params, len, cfg.seed, "dgu-historical")?
            } else {
                microgrid::collect_historical(&params, len, cfg.seed)?
            }
        };
        (traj, min_len)
    } else {
        let p = a.p.unwrap_or(a.n);
        let mut rng = rng_from_seed(a.system_seed.unwrap_or(cfg.seed));
        let sys = lti::random_minimal_system(a.n, a.m, p, a.md, &mut rng, &cfg.tolerance)?;
        let min_len = trajectory::min_exciting_length(a.m + a.md, a.n + 2);
        let len = cfg.t.unwrap_or(min_len + a.n + 1);
        let traj = if a.online {
            let mut t = without_unknown_input(lti::random_experiment(&sys, len, cfg.seed)?)?;
            t.meta.label = Some("random-online".into());
            t
        } else {
            random_historical(&sys, len, min_len, cfg)?
        };
        (traj, min_len)
    };

    io::write_trajectory(&traj, out).with_context(|| format!("writing {}", out.display()))?;
    let mut report = json!({
        "out": out,
        "sidecar": io::sidecar_path(out),
        "len": traj.len(),
        "seed": traj.meta.seed,
        "digest": traj.digest(),
    });
    if a.online {
        print_json(&report)?;
        return Ok(0);
    }
    let verdict = trajectory::check_assumption1(&traj, &cfg.tolerance)?;
    report["min_exciting_length"] = json!(min_len);
    report["excitation"] = json!(verdict);
    print_json(&report)?;
    if traj.len() < min_len {
        warn!(
            "T = {} is below the minimum exciting length {min_len}; the data cannot satisfy the excitation assumption",
            traj.len()
        );
    }
    Ok(if verdict == PeVerdict::Exciting { 0 } else { EXIT_INVALID_INPUT })
}

fn random_historical(sys: &dduio::LtiSystem, len: usize, min_len: usize, cfg: &Resolved) -> anyhow::Result<Trajectory> {
    let attempts = if len < min_len { 1 } else { microgrid::MAX_COLLECT_ATTEMPTS };
    let mut last = None;
    for k in 0..attempts {
        let mut traj = lti::random_experiment(sys, len, cfg.seed.wrapping_add(k as u64))?;
        traj.meta.label = Some("random-historical".into());
        traj.meta.ts = Some(cfg.ts);
        if trajectory::check_assumption1(&traj, &cfg.tolerance)?.holds() {
            return Ok(traj);
        }
        last = Some(traj);
    }
    if len < min_len {
        return Ok(last.expect("one attempt was made"));
    }
    Err(dduio::Error::NotExciting { attempts }.into())
}

fn check(cfg: &Resolved, a: &CheckArgs) -> anyhow::Result<u8> {
    let traj = io::read_trajectory(&a.hist).with_context(|| format!("reading {}", a.hist.display()))?;
    let (_, report) = uio::synthesize_from_trajectory(&traj, &cfg.tolerance)?;
    print_json(&report)?;
    if let Some(out) = &cfg.out {
        io::write_json(&report, out)?;
    }
    if let Some(reason) = report.failure_reason() {
        warn!("no UIO: {reason}");
    }
    Ok(if report.exists { 0 } else { EXIT_NO_UIO })
}

fn synthesize(cfg: &Resolved, a: &SynthesizeArgs) -> anyhow::Result<u8> {
    let out = cfg.out_or_fail()?;
    let traj = io::read_trajectory(&a.hist).with_context(|| format!("reading {}", a.hist.display()))?;
    let (r, report) = uio::synthesize_from_trajectory(&traj, &cfg.tolerance)?;
    if let Some(reason) = report.failure_reason() {
        warn!("no UIO: {reason}");
        if !a.force {
            return Ok(EXIT_NO_UIO);
        }
    }
    io::write_realization(&r, Some(&report), out)?;
    print_json(&json!({
        "out": out,
        "exists": report.exists,
        "spectral_radius_auio": report.spectral_radius_auio,
        "source_digest": r.source_digest,
    }))?;
    Ok(if report.exists { 0 } else { EXIT_NO_UIO })
}

fn estimate(cfg: &Resolved, a: &EstimateArgs) -> anyhow::Result<u8> {
    let out = cfg.out_or_fail()?;
    let r = io::read_realization(&a.realization)
        .with_context(|| format!("reading {}", a.realization.display()))?;
    let data = io::read_online(&a.online).with_context(|| format!("reading {}", a.online.display()))?;
    let n = r.dims.n;
    let xhat0 = match &a.xhat0 {
        Some(v) if v.len() != n => bail!("--xhat0 has {} entries, the observer state has {n}", v.len()),
        Some(v) => DVector::from_column_slice(v),
        None => DVector::zeros(n),
    };
    let estimates = uio::run_estimator(&r, &xhat0, &data.v())?;
    let truth = data.x.as_ref().filter(|x| x.nrows() == n);
    if data.x.is_some() && truth.is_none() {
        warn!("state columns do not match the observer dimension; error columns skipped");
    }
    io::write_estimates_csv(&estimates, truth, out)?;
    let mut report = json!({"out": out, "steps": estimates.ncols()});
    if let Some(x) = truth {
        let errors = x - &estimates;
        let norms: Vec<f64> = errors.column_iter().map(|c| c.norm()).collect();
        report["error_norms"] = json!(norms);
    }
    print_json(&report)?;
    Ok(0)
}

#[derive(Debug, Serialize)]
struct DemoSummary<'a> {
    scenario: Scenario,
    seed: u64,
    historical_seed: Option<u64>,
    online_seed: u64,
    #[serde(flatten)]
    summary: &'a ScenarioSummary,
}

fn demo(cfg: &Resolved, a: &DemoArgs) -> anyhow::Result<u8> {
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let params = microgrid_params(cfg)?;
    let hist_len = cfg.t.unwrap_or_else(microgrid::default_historical_length);
    let hist = microgrid::collect_historical(&params, hist_len, cfg.seed)?;
    let online_seed = cfg.seed.wrapping_add(1);
    let (res, burn_in) = match a.scenario {
        Scenario::Safe => (
            microgrid::run_safe_scenario(&params, &hist, a.steps.unwrap_or(microgrid::SAFE_STEPS), online_seed)?,
            a.burn_in.unwrap_or(0),
        ),
        Scenario::Attack => {
            let spec = AttackSpec::new(
                a.attack_start,
                AttackSignal::Constant(vec![a.attack_magnitude; microgrid::STATE_DIM]),
            )?;
            let steps = a.steps.unwrap_or(microgrid::ATTACK_STEPS);
            (
                microgrid::run_attack_scenario(&params, &hist, steps, &spec, online_seed)?,
                a.burn_in.unwrap_or(microgrid::DEFAULT_BURN_IN),
            )
        }
    };
    let summary = ScenarioSummary::from_result(&res, burn_in);
    let name = match a.scenario {
        Scenario::Safe => "safe",
        Scenario::Attack => "attack",
    };
    let csv_path = dir.join(format!("{name}.csv"));
    let summary_path = dir.join(format!("{name}_summary.json"));
    io::write_scenario_csv(&res, &csv_path)?;
    let full = DemoSummary {
        scenario: a.scenario,
        seed: cfg.seed,
        historical_seed: hist.meta.seed,
        online_seed,
        summary: &summary,
    };
    io::write_json(&full, &summary_path)?;
    print_json(&json!({
        "csv": csv_path,
        "summary": summary_path,
        "spectral_radius": summary.spectral_radius,
        "error_ratio_last_to_first": summary.error_ratio_last_to_first,
        "monotone_after_burn_in": summary.monotone_after_burn_in,
        "max_residual_pre_attack": summary.max_residual_pre_attack,
        "max_residual_post_attack": summary.max_residual_post_attack,
    }))?;
    Ok(0)
}
