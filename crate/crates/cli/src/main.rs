use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sdquant::Quadrature;
use sdquant_cli::config::PointsSpec;
use sdquant_cli::{cmd_quantize, cmd_verify, configure_threads, CliError, RunConfig, Solver};

/// Semi-discrete optimal transport quantization of grid densities.
#[derive(Parser)]
#[command(name = "sdquant", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a solver and write the result JSON, trace CSV and render.
    Quantize(RunArgs),
    /// Check gradients, descent inequalities and dual residuals.
    Verify {
        #[command(flatten)]
        run: RunArgs,
        /// Scale the analytic gradients before checking them.
        #[arg(long, hide = true, default_value_t = 1.0)]
        fault_scale: f64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// uniform:LO,HI[,LO,HI] | mixture:reference | FILE.pgm | FILE.json
    #[arg(long)]
    density: Option<String>,
    /// Cells per axis for analytic densities.
    #[arg(long, value_delimiter = ',')]
    resolution: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    solver: Option<Solver>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Initial points: "0.2,0.6" in 1-D, "x,y;x,y" in 2-D.
    #[arg(long, allow_hyphen_values = true)]
    points: Option<String>,
    /// Second point cloud for the sliced solver.
    #[arg(long, allow_hyphen_values = true)]
    against: Option<String>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    step_tol: Option<f64>,
    #[arg(long)]
    mass_tol: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    directions: Option<usize>,
    /// exact | cell_center
    #[arg(long, value_parser = parse_quadrature)]
    quadrature: Option<Quadrature>,
    /// Stop at the first violated descent inequality.
    #[arg(long)]
    check_descent: bool,
    /// Trace CSV path.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Result JSON path (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// SVG render path.
    #[arg(long)]
    render: Option<PathBuf>,
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_quadrature(s: &str) -> Result<Quadrature, String> {
    match s {
        "exact" => Ok(Quadrature::Exact),
        "cell_center" => Ok(Quadrature::CellCenter),
        _ => Err(format!("expected exact or cell_center, got {s:?}")),
    }
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig, CliError> {
        let flags = RunConfig {
            density: self.density,
            resolution: self.resolution,
            solver: self.solver,
            n: self.n,
            seed: self.seed,
            points: self.points.map(PointsSpec::Text),
            against: self.against.map(PointsSpec::Text),
            max_iter: self.max_iter,
            step_tol: self.step_tol,
            mass_tol: self.mass_tol,
            epsilon: self.epsilon,
            directions: self.directions,
            quadrature: self.quadrature,
            check_descent: self.check_descent.then_some(true),
            trace: self.trace,
            out: self.out,
            render: self.render,
        };
        let base = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        Ok(base.overridden_by(flags))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Quantize(args) => cmd_quantize(&args.into_config()?).map(|_| ()),
        Command::Verify { run, fault_scale } => {
            cmd_verify(&run.into_config()?, fault_scale).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
