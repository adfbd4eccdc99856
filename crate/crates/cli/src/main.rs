use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ddmpc::hankel::{persistence_order_check, validate_trajectory_with_tolerance, Sequence};
use ddmpc::harness::{
    builtin_config, builtin_names, config_to_string, export_csv, import_csv, load_config,
    run_experiment, sweep, write_sweep_csv, write_sweep_summary, ExperimentConfig, HarnessError,
    SimulationLog, SweepParam, GOOD_COST,
};
use ddmpc::ControllerError;

#[derive(Parser, Debug)]
#[command(name = "ddmpc", version, about = "Data-driven MPC experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one closed-loop experiment.
    Run(RunArgs),
    /// Repeat an experiment over a parameter grid and several seeds.
    Sweep(SweepArgs),
    /// Persistency-of-excitation report for the inputs of a CSV file.
    CheckPe {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        order: usize,
        #[arg(long, default_value_t = ddmpc::hankel::DEFAULT_RANK_TOLERANCE)]
        tol: f64,
    },
    /// Check whether a candidate trajectory lies in the span of the data.
    ValidateData {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long, default_value_t = ddmpc::hankel::DEFAULT_TRAJECTORY_TOLERANCE)]
        tol: f64,
    },
    /// Nominal controller on a linear plant.
    DemoLtiNominal(DemoArgs),
    /// Robust controller on a linear plant with bounded output noise.
    DemoLtiRobust(DemoArgs),
    /// Nonlinear controller on the four-tank benchmark.
    DemoNonlinear(DemoArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Built-in config name or path to a TOML file.
    #[arg(long)]
    config: String,
    /// Overrides the excitation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for the log CSV.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Print the resolved config as TOML and exit.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, default_value = "fourtank_eq6")]
    config: String,
    /// lambda_alpha, lambda_sigma, N, L, n or s_bar.
    #[arg(long)]
    param: String,
    /// Comma-separated values or `log:START:STOP:COUNT`.
    #[arg(long)]
    grid: Option<String>,
    /// Comma-separated excitation seeds.
    #[arg(long, default_value = "0,1,2")]
    seeds: String,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DemoArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Infeasible(String),
    Io(String),
    Invalid(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Config(_) => 2,
            Failure::Infeasible(_) => 3,
            Failure::Io(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Infeasible(m) | Failure::Io(m) | Failure::Invalid(m) => m,
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        let msg = e.to_string();
        match e {
            HarnessError::Io(_) | HarnessError::Csv(_) => Failure::Io(msg),
            HarnessError::Controller(ControllerError::QpFailed { .. }) => Failure::Infeasible(msg),
            _ => Failure::Config(msg),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::CheckPe { data, order, tol } => cmd_check_pe(&data, order, tol),
        Command::ValidateData {
            data,
            trajectory,
            tol,
        } => cmd_validate(&data, &trajectory, tol),
        Command::DemoLtiNominal(a) => demo("lti_nominal", a),
        Command::DemoLtiRobust(a) => demo("lti_robust", a),
        Command::DemoNonlinear(a) => demo("fourtank_eq6", a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn resolve_config(name: &str) -> Result<ExperimentConfig, Failure> {
    let path = Path::new(name);
    if path.exists() {
        return Ok(load_config(path)?);
    }
    builtin_config(name).ok_or_else(|| {
        Failure::Config(format!(
            "`{name}` is neither a file nor a built-in config ({})",
            builtin_names().join(", ")
        ))
    })
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let mut cfg = resolve_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.dump_config {
        print!("{}", config_to_string(&cfg)?);
        return Ok(());
    }
    execute(&cfg, &args.out)
}

fn demo(name: &str, args: DemoArgs) -> Result<(), Failure> {
    let mut cfg = builtin_config(name).expect("demo configs are built in");
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    execute(&cfg, &args.out)
}

fn execute(cfg: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    let log = run_experiment(cfg)?;
    fs::create_dir_all(out).map_err(|e| Failure::Io(format!("{}: {e}", out.display())))?;
    let csv = out.join(format!("{}.csv", cfg.name));
    export_csv(&log, &csv)?;
    print_summary(cfg, &log);
    println!("log written to {}", csv.display());
    let events = &log.summary.infeasibility_events;
    if let Some(first) = events.first() {
        return Err(Failure::Infeasible(format!(
            "{} controller failures, first at t = {}: {}",
            events.len(),
            first.t,
            first.message
        )));
    }
    Ok(())
}

fn print_summary(cfg: &ExperimentConfig, log: &SimulationLog) {
    let s = &log.summary;
    println!("experiment        {}", cfg.name);
    println!("steps             {}", log.records.len());
    println!(
        "cost J            {:.6e} over t in [{}, {}]",
        s.cost, cfg.cost.t_start, cfg.cost.t_end
    );
    println!("steady-state err  {:.4}", s.steady_state_error);
    println!("converged         {}", s.converged);
    println!("failures          {}", s.infeasibility_events.len());
    println!("iteration limits  {}", s.max_iteration_steps);
    println!("controller time   {:.2} s", s.total_wall_time);
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Failure> {
    s.split(',')
        .map(|v| v.trim())
        .filter(|v| !v.is_empty())
        .map(|v| {
            v.parse::<T>()
                .map_err(|_| Failure::Config(format!("bad {what} value `{v}`")))
        })
        .collect()
}

fn parse_grid(s: &str) -> Result<Vec<f64>, Failure> {
    if let Some(spec) = s.strip_prefix("log:") {
        let parts: Vec<&str> = spec.split(':').collect();
        let bad = || Failure::Config(format!("bad log grid `{s}`, expected log:START:STOP:COUNT"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let start: f64 = parts[0].parse().map_err(|_| bad())?;
        let stop: f64 = parts[1].parse().map_err(|_| bad())?;
        let count: usize = parts[2].parse().map_err(|_| bad())?;
        if !(start > 0.0 && stop > 0.0) || count < 2 {
            return Err(bad());
        }
        let (a, b) = (start.log10(), stop.log10());
        return Ok((0..count)
            .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
            .collect());
    }
    parse_list(s, "grid")
}

fn default_grid(param: SweepParam) -> Vec<f64> {
    match param {
        SweepParam::LambdaAlpha => parse_grid("log:1e-6:1:13").expect("valid"),
        SweepParam::LambdaSigma => vec![10.0, 400.0, 1e4, 2e5, 1e6, 1e8],
        SweepParam::DataLen => vec![110.0, 130.0, 150.0, 159.0, 190.0],
        SweepParam::Horizon => vec![25.0, 32.0, 35.0, 41.0, 50.0],
        SweepParam::Order => vec![2.0, 3.0, 4.0, 5.0],
        SweepParam::SBar => vec![1.0, 16.0, 20.0, 100.0, 300.0, 3000.0],
    }
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    let cfg = resolve_config(&args.config)?;
    let param: SweepParam = args.param.parse()?;
    let grid = match &args.grid {
        Some(g) => parse_grid(g)?,
        None => default_grid(param),
    };
    let seeds: Vec<u64> = parse_list(&args.seeds, "seed")?;
    let res = sweep(&cfg, param, &grid, &seeds, args.jobs)?;
    fs::create_dir_all(&args.out).map_err(|e| Failure::Io(format!("{}: {e}", args.out.display())))?;
    let base = format!("sweep_{}_{}", cfg.name, param.name());
    let points = args.out.join(format!("{base}.csv"));
    let summary = args.out.join(format!("{base}_summary.csv"));
    let create = |p: &Path| fs::File::create(p).map_err(|e| Failure::Io(format!("{}: {e}", p.display())));
    write_sweep_csv(&res, create(&points)?)?;
    write_sweep_summary(&res, create(&summary)?)?;
    println!("{:>14}  {:>12}  {:>9}  good (J <= {GOOD_COST:e})", param.name(), "median J", "converged");
    for r in &res.rows {
        println!(
            "{:>14}  {:>12.4e}  {:>5}/{:<3}  {}",
            r.value,
            r.median_cost,
            r.converged_runs,
            r.runs,
            if r.good { "yes" } else { "no" }
        );
    }
    println!("runs written to {}", points.display());
    println!("summary written to {}", summary.display());
    Ok(())
}

fn load_sequences(path: &Path) -> Result<(Sequence, Sequence), Failure> {
    let data = import_csv(path)?;
    let u = Sequence::from_vectors(&data.u).map_err(|e| Failure::Io(e.to_string()))?;
    let y = Sequence::from_vectors(&data.y).map_err(|e| Failure::Io(e.to_string()))?;
    Ok((u, y))
}

fn cmd_check_pe(data: &Path, order: usize, tol: f64) -> Result<(), Failure> {
    let (u, _) = load_sequences(data)?;
    let r = persistence_order_check(&u, order, tol).map_err(|e| Failure::Config(e.to_string()))?;
    println!("samples                 {}", u.len());
    println!("order                   {}", r.order);
    println!("rank                    {} of {}", r.computed_rank, r.required_rank);
    println!("largest singular value  {:.6e}", r.largest_singular_value);
    println!("smallest retained       {:.6e}", r.smallest_retained_singular_value);
    println!("spread                  {:.6e}", r.spread());
    println!("persistently exciting   {}", r.is_pe);
    if let Some(reason) = &r.reason {
        println!("reason                  {reason}");
    }
    Ok(())
}

fn cmd_validate(data: &Path, trajectory: &Path, tol: f64) -> Result<(), Failure> {
    let (ud, yd) = load_sequences(data)?;
    let (u, y) = load_sequences(trajectory)?;
    let check = validate_trajectory_with_tolerance(&ud, &yd, &u, &y, tol)
        .map_err(|e| Failure::Config(e.to_string()))?;
    println!("trajectory length  {}", u.len());
    println!("relative residual  {:.6e}", check.residual);
    println!("is trajectory      {}", check.is_trajectory);
    if check.is_trajectory {
        Ok(())
    } else {
        Err(Failure::Invalid(format!(
            "residual {:.3e} exceeds tolerance {tol:e}",
            check.residual
        )))
    }
}
