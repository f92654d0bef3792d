use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use servo_pso::config::{parse_config, ConfigError, ExperimentConfig};
use servo_pso::pso::{benchmarks, optimize, PsoSettings, StopReason, Workers};
use servo_pso::report::{
    convergence_csv, svg_plot, trajectory_csv, write_artifact, RunReport, SearchReport, Series, Timing,
};
use servo_pso::sim::{compare_experiment, tune, Comparison, Logging, SimError, Trajectory};

const KEYS_HELP: &str = concat!(
    "CONFIGURATION (TOML; every key optional, values shown are the defaults):\n\n",
    include_str!("reference.toml")
);

/// Pneumatic servo with an adaptive fuzzy controller tuned by particle swarm optimization.
#[derive(Debug, Parser)]
#[command(name = "servo-pso", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one closed-loop simulation with the configured controller.
    #[command(after_help = KEYS_HELP)]
    Simulate(Common),
    /// Tune the controller with PSO and write the best configuration.
    #[command(after_help = KEYS_HELP)]
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Run the 2-D sphere benchmark instead and check gbest <= 1e-6.
        #[arg(long)]
        selftest: bool,
    },
    /// Run the hand-set baseline and the PSO-tuned controller side by side.
    #[command(after_help = KEYS_HELP)]
    Compare {
        #[command(flatten)]
        common: Common,
        /// Only run the baseline arm.
        #[arg(long)]
        skip_pso: bool,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment file (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: output.dir from the config].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override pso.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Fitness evaluation threads (1 = sequential). Results do not depend on it.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("cannot write artifacts: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Failed(String),
}

struct Context {
    cfg: ExperimentConfig,
    out: PathBuf,
    workers: Workers,
    started: Instant,
}

impl Context {
    fn new(common: &Common) -> Result<Self, CliError> {
        let mut cfg = match &common.config {
            Some(path) => parse_config(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = common.seed {
            cfg.pso.seed = seed;
        }
        let out = common.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
        let workers = match common.workers {
            0 | 1 => Workers::Single,
            n => Workers::Threads(n),
        };
        Ok(Self { cfg, out, workers, started: Instant::now() })
    }

    fn write(&self, name: &str, contents: &str, artifacts: &mut Vec<String>) -> Result<(), CliError> {
        write_artifact(&self.out, name, contents)?;
        artifacts.push(name.to_string());
        Ok(())
    }

    /// Writes the timing sidecar and then the report, which lists every artifact.
    fn finish(&self, mut report: RunReport) -> Result<(), CliError> {
        let workers = match self.workers {
            Workers::Single => 1,
            Workers::Threads(n) => n,
        };
        let timing = Timing { wall_clock_seconds: self.started.elapsed().as_secs_f64(), workers };
        let timing = serde_json::to_string_pretty(&timing).map_err(|e| CliError::Failed(e.to_string()))?;
        self.write("timing.json", &(timing + "\n"), &mut report.artifacts)?;
        report.artifacts.push("report.json".into());
        write_artifact(&self.out, "report.json", &report.to_json())?;
        println!("wrote {}", self.out.join("report.json").display());
        Ok(())
    }

    fn report(&self, command: &str) -> RunReport {
        RunReport {
            command: command.into(),
            seed: self.cfg.pso.seed,
            config: self.cfg.clone(),
            baseline: None,
            optimized: None,
            improvement_ratio: None,
            search: None,
            artifacts: vec![],
        }
    }
}

fn simulate(common: &Common) -> Result<(), CliError> {
    let ctx = Context::new(common)?;
    let exp = ctx.cfg.experiment();
    let tunables = exp.baseline().map_err(SimError::from)?;
    let out = exp.run(Logging::Full)?;
    let mut report = ctx.report("simulate");
    ctx.write("trajectory.csv", &trajectory_csv(&out.trajectory), &mut report.artifacts)?;
    report.baseline = Some(Comparison::arm_report(&out, &tunables));
    print_metrics("run", &out.metrics.ise, &out.metrics.final_error, out.fault.as_deref());
    ctx.finish(report)
}

fn optimize_cmd(common: &Common, selftest: bool) -> Result<(), CliError> {
    let ctx = Context::new(common)?;
    if selftest {
        return sphere_selftest(&ctx);
    }
    let exp = ctx.cfg.experiment();
    let (best, search) = tune(&exp, &ctx.cfg.pso.settings(), ctx.workers)?;
    let tuned = exp.with_tunables(&best);
    let out = tuned.run(Logging::Full)?;

    let mut best_cfg = ctx.cfg.clone();
    best_cfg.fuzzy = tuned.fuzzy.clone();
    best_cfg.controller = tuned.controller.clone();

    let mut report = ctx.report("optimize");
    ctx.write("best_config.toml", &best_cfg.to_toml()?, &mut report.artifacts)?;
    ctx.write("convergence.csv", &convergence_csv(&search.history, &search.mean_history), &mut report.artifacts)?;
    ctx.write("optimized.csv", &trajectory_csv(&out.trajectory), &mut report.artifacts)?;
    report.optimized = Some(Comparison::arm_report(&out, &best));
    report.search = Some(SearchReport::from(&search));
    println!(
        "search: {} iterations, stop = {:?}, gbest = {:e}",
        search.iterations, search.stop_reason, search.best_fitness
    );
    print_metrics("optimized", &out.metrics.ise, &out.metrics.final_error, out.fault.as_deref());
    ctx.finish(report)
}

#[derive(Serialize)]
struct SelftestReport {
    command: &'static str,
    seed: u64,
    benchmark: &'static str,
    iterations: usize,
    stop_reason: StopReason,
    gbest: f64,
    passed: bool,
    artifacts: Vec<String>,
}

fn sphere_selftest(ctx: &Context) -> Result<(), CliError> {
    let settings = PsoSettings { n_particles: 30, max_iters: 200, seed: ctx.cfg.pso.seed, ..Default::default() };
    let config = settings.with_bounds(vec![(-5.12, 5.12); 2]);
    let result = optimize(&benchmarks::sphere, &config, &[], ctx.workers).map_err(SimError::from)?;
    let passed = result.best_fitness <= 1e-6;
    let report = SelftestReport {
        command: "optimize --selftest",
        seed: settings.seed,
        benchmark: "sphere-2d",
        iterations: result.iterations,
        stop_reason: result.stop_reason,
        gbest: result.best_fitness,
        passed,
        artifacts: vec!["report.json".into()],
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Failed(e.to_string()))?;
    write_artifact(&ctx.out, "report.json", &(json + "\n"))?;
    println!("selftest sphere-2d: gbest = {:e} after {} iterations", result.best_fitness, result.iterations);
    if passed {
        Ok(())
    } else {
        Err(CliError::Failed(format!("selftest failed: gbest {:e} > 1e-6", result.best_fitness)))
    }
}

fn compare(common: &Common, skip_pso: bool) -> Result<(), CliError> {
    let ctx = Context::new(common)?;
    let exp = ctx.cfg.experiment();
    let cmp = compare_experiment(&exp, &ctx.cfg.pso.settings(), ctx.workers, skip_pso)?;
    let mut report = ctx.report("compare");

    ctx.write("baseline.csv", &trajectory_csv(&cmp.baseline.trajectory), &mut report.artifacts)?;
    report.baseline = Some(Comparison::arm_report(&cmp.baseline, &cmp.baseline_tunables));
    print_metrics(
        "baseline",
        &cmp.baseline.metrics.ise,
        &cmp.baseline.metrics.final_error,
        cmp.baseline.fault.as_deref(),
    );

    if let (Some((out, best)), Some(search)) = (&cmp.optimized, &cmp.search) {
        ctx.write("optimized.csv", &trajectory_csv(&out.trajectory), &mut report.artifacts)?;
        ctx.write("convergence.csv", &convergence_csv(&search.history, &search.mean_history), &mut report.artifacts)?;
        report.optimized = Some(Comparison::arm_report(out, best));
        report.search = Some(SearchReport::from(search));
        report.improvement_ratio = cmp.improvement_ratio();
        print_metrics("optimized", &out.metrics.ise, &out.metrics.final_error, out.fault.as_deref());
        if let Some(r) = report.improvement_ratio {
            println!("improvement ratio (ISE baseline / optimized): {r:.4}");
        }
    }
    if ctx.cfg.output.plot {
        let optimized = cmp.optimized.as_ref().map(|(o, _)| &o.trajectory);
        ctx.write("tracking.svg", &tracking_plot(&cmp.baseline.trajectory, optimized), &mut report.artifacts)?;
    }
    ctx.finish(report)
}

fn tracking_plot(baseline: &Trajectory, optimized: Option<&Trajectory>) -> String {
    let pts =
        |t: &Trajectory, f: fn(&servo_pso::sim::TrajectoryRow) -> f64| t.rows.iter().map(|r| (r.t, f(r))).collect();
    let mut series = vec![
        Series { label: "desired", color: "black", dashed: true, points: pts(baseline, |r| r.y_des) },
        Series { label: "baseline", color: "#d62728", dashed: false, points: pts(baseline, |r| r.y) },
    ];
    if let Some(o) = optimized {
        series.push(Series { label: "PSO-tuned", color: "#1f77b4", dashed: false, points: pts(o, |r| r.y) });
    }
    svg_plot("Velocity tracking", "output", &series)
}

fn print_metrics(arm: &str, ise: &f64, final_error: &f64, fault: Option<&str>) {
    println!("{arm}: ISE = {ise:.6e}, final error = {final_error:.6e}");
    if let Some(f) = fault {
        println!("{arm}: run truncated: {f}");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(common) => simulate(common),
        Command::Optimize { common, selftest } => optimize_cmd(common, *selftest),
        Command::Compare { common, skip_pso } => compare(common, *skip_pso),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
