use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use shape_sqp::config::{load_config, render_config};
use shape_sqp::driver::{
    convergence_study, generate_data, sqp_solve_from, steepest_descent_solve, ExperimentConfig, Snapshot, SqpTrace,
};
use shape_sqp::io::{dist_table, interface_csv, sig7, trace_csv, write_vtk};
use shape_sqp::shape::initial_mesh;
use shape_sqp::{verify, Error};

#[derive(Parser)]
#[command(name = "shape-sqp", version, about = "Shape Lagrange-Newton solver for a Poisson interface problem")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run shape-SQP on one level.
    Solve(RunArgs),
    /// Run shape-SQP on every level and print the distance table.
    Study(RunArgs),
    /// Run the steepest-descent baseline on one level.
    Baseline(RunArgs),
    /// Run the built-in property checks.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// key = value configuration file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// allow writing into a non-empty output directory
    #[arg(long)]
    force: bool,
    #[arg(long, default_value_t = 1)]
    level: usize,
    #[arg(long)]
    alpha: Option<f64>,
    /// baseline step scaling
    #[arg(long)]
    scaling: Option<f64>,
    #[arg(long)]
    cg_tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    seed: Option<u64>,
}

enum Failure {
    Config(String),
    Solver(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Config(m),
            other => Failure::Solver(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Solver(format!("i/o error: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Solve(a) => cmd_solve(&a),
        Command::Study(a) => cmd_study(&a),
        Command::Baseline(a) => cmd_baseline(&a),
        Command::Verify(a) => cmd_verify(&a),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Solver(m)) => {
            eprintln!("solver failure: {m}");
            ExitCode::from(2)
        }
    }
}

fn resolve_config(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut config = match &args.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(a) = args.alpha {
        config.alpha = a;
    }
    if let Some(s) = args.scaling {
        config.baseline_scaling = s;
    }
    if let Some(t) = args.cg_tol {
        config.cg_tol = t;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    config.validate()?;
    if args.level == 0 {
        return Err(Failure::Config("level: must be at least 1".into()));
    }
    Ok(config)
}

/// Creates the output directory and writes the manifest before anything
/// else runs.
fn prepare_output(args: &RunArgs, command: &str, config: &ExperimentConfig) -> Result<(), Failure> {
    let dir = &args.out;
    if dir.exists() {
        let non_empty = fs::read_dir(dir)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", dir.display())))?
            .next()
            .is_some();
        if non_empty && !args.force {
            return Err(Failure::Config(format!(
                "output directory {} is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Failure::Config(format!("cannot create {}: {e}", dir.display())))?;
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let manifest = format!(
        "# shape-sqp {}\n# command = {command}\n# output = {}\n# timestamp = {stamp}\n{}",
        env!("CARGO_PKG_VERSION"),
        dir.display(),
        render_config(config)
    );
    fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

fn write_log(path: &Path, traces: &[&SqpTrace]) -> Result<(), Failure> {
    let mut f = fs::File::create(path)?;
    for t in traces {
        for line in &t.log {
            writeln!(f, "{line}")?;
        }
    }
    Ok(())
}

fn print_records(trace: &SqpTrace) {
    println!("iter\tdist\tJ\tgrad_norm\tcg_iters\talpha");
    for r in &trace.records {
        println!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.iter,
            sig7(r.dist),
            sig7(r.objective),
            sig7(r.grad_norm),
            r.cg_iters,
            sig7(r.alpha)
        );
    }
}

fn cmd_solve(args: &RunArgs) -> Result<ExitCode, Failure> {
    let config = resolve_config(args)?;
    prepare_output(args, "solve", &config)?;
    let data = generate_data(&config)?;
    let start = initial_mesh(config.n, args.level)?;
    let out = args.out.clone();
    let mut observer = |s: &Snapshot<'_>| -> shape_sqp::Result<()> {
        let ws = s.workspace;
        let name = format!("iter_{:03}", s.iter);
        write_vtk(
            &out.join(format!("{name}.vtk")),
            ws.mesh(),
            &[("y", ws.state()), ("p", ws.adjoint()), ("ybar", ws.data())],
        )?;
        fs::write(out.join(format!("{name}_gradient.csv")), interface_csv(ws.mesh(), ws.geometry(), s.gradient)?)?;
        if let Some(w) = s.step {
            fs::write(out.join(format!("{name}_step.csv")), interface_csv(ws.mesh(), ws.geometry(), w)?)?;
        }
        Ok(())
    };
    let trace = sqp_solve_from(&config, args.level, &data, start, &mut observer)?;
    fs::write(args.out.join("trace.csv"), trace_csv(&[&trace])?)?;
    write_log(&args.out.join("run.log"), &[&trace])?;
    print!("{}", dist_table(&[(args.level, Some(&trace))]));
    println!();
    print_records(&trace);
    Ok(ExitCode::SUCCESS)
}

fn cmd_study(args: &RunArgs) -> Result<ExitCode, Failure> {
    let config = resolve_config(args)?;
    prepare_output(args, "study", &config)?;
    let data = generate_data(&config)?;
    let results = convergence_study(&config, &data);
    let mut failures = Vec::new();
    let mut ok = Vec::new();
    for (level, r) in &results {
        match r {
            Ok(t) => ok.push(t),
            Err(e) => failures.push(format!("level {level}: {e}")),
        }
    }
    fs::write(args.out.join("trace.csv"), trace_csv(&ok)?)?;
    write_log(&args.out.join("run.log"), &ok)?;
    let table: Vec<(usize, Option<&SqpTrace>)> = results.iter().map(|(l, r)| (*l, r.as_ref().ok())).collect();
    print!("{}", dist_table(&table));
    if failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        Err(Failure::Solver(failures.join("; ")))
    }
}

fn cmd_baseline(args: &RunArgs) -> Result<ExitCode, Failure> {
    let config = resolve_config(args)?;
    prepare_output(args, "baseline", &config)?;
    let data = generate_data(&config)?;
    let trace = steepest_descent_solve(&config, args.level, &data, config.baseline_scaling)?;
    fs::write(args.out.join("trace.csv"), trace_csv(&[&trace])?)?;
    write_log(&args.out.join("run.log"), &[&trace])?;
    print_records(&trace);
    for w in trace.records.windows(2) {
        let decrease = (w[0].dist - w[1].dist) / w[0].dist;
        if decrease <= 0.01 {
            println!(
                "warning: insufficient progress at iteration {}: dist fell by {}% (scaling {})",
                w[1].iter,
                sig7(100.0 * decrease),
                config.baseline_scaling
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(args: &VerifyArgs) -> Result<ExitCode, Failure> {
    let seed = args.seed.unwrap_or(ExperimentConfig::default().seed);
    let checks = verify::run_all(seed);
    let mut all = true;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        all &= c.passed;
    }
    Ok(if all { ExitCode::SUCCESS } else { ExitCode::from(2) })
}
