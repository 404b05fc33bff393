//! `sing`: generate benchmark data, learn graphs, score estimates, run trials.
//!
//! Exit status: 0 on success, 1 on usage or input errors, 2 when a numerical
//! step fails (non-SPD matrices, fits that cannot proceed, trajectory blow-up).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sing::experiment::{run_experiment, sample_stream, structure_stream, ExperimentConfig, ExperimentError};
use sing::io::{self, write_adjacency, write_graph, write_json, write_matrix, write_samples, IoError};
use sing_core::datasets::{DatasetFamily, Lorenz96Convention, Lorenz96Params};
use sing_core::graph::edge_errors;
use sing_core::{sing as run_sing, SingConfig};

const DEFAULT_N: usize = 1000;

#[derive(Parser)]
#[command(name = "sing", version, about = "Markov structure learning with triangular transport maps")]
struct Cli {
    /// Maximum number of parallel tasks (default: available parallelism).
    #[arg(long, env = "SING_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a benchmark data set: samples.csv, truth.json, spec.json.
    Generate(GenerateArgs),
    /// Learn a graph from a samples CSV.
    Sing(SingArgs),
    /// Count false-positive and false-negative edges of an estimate.
    Eval(EvalArgs),
    /// Run a repeated-trial experiment described by a JSON file.
    Trials(TrialsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Butterfly,
    NonparanormalCdf,
    NonparanormalPower,
    Cubic,
    StarBeta2,
    Lorenz96,
    Gaussian,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    family: Family,
    /// Number of samples (default 1000; for lorenz96 every retained row).
    #[arg(long)]
    n: Option<usize>,
    /// Dimension for nonparanormal, star, lorenz96 and gaussian families.
    #[arg(long)]
    d: Option<usize>,
    /// Number of (P, Q) pairs for butterfly.
    #[arg(long, default_value_t = 5)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Chain-structured precision for gaussian (its only structure).
    #[arg(long)]
    chain: bool,
    /// Off-diagonal precision entry for gaussian.
    #[arg(long, default_value_t = 0.2)]
    coupling: f64,
    /// Edge-probability length scale for nonparanormal graphs.
    #[arg(long, default_value_t = 3.0)]
    s: f64,
    #[arg(long, default_value_t = 4)]
    max_degree: usize,
    /// Exponent of the power transform.
    #[arg(long, default_value_t = 3.0)]
    a: f64,
    /// Lorenz-96 forcing.
    #[arg(long, default_value_t = 8.0)]
    forcing: f64,
    /// Use `(z[j+1] + z[j-2])` in the Lorenz-96 advection term.
    #[arg(long)]
    plus_convention: bool,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SingArgs {
    /// Samples CSV (no header).
    data: PathBuf,
    /// Total polynomial degree of the map.
    #[arg(long, default_value_t = 1)]
    beta: u32,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 0.0)]
    tau0: f64,
    #[arg(long, default_value_t = 10)]
    max_iter: usize,
    #[arg(long, default_value_t = 32)]
    quad_order: usize,
    /// Stop after the first (dense) pass.
    #[arg(long)]
    non_iterative: bool,
    /// Recorded in the report only.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "sing-out")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    estimate: PathBuf,
    /// Also write the counts as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrialsArgs {
    /// Experiment JSON.
    config: PathBuf,
    /// Output directory (overrides the config's output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<sing_core::Error> for Failure {
    fn from(e: sing_core::Error) -> Self {
        use sing_core::Error as E;
        match e {
            E::NotPositiveDefinite { .. }
            | E::NoConvergence { .. }
            | E::NumericalBlowup { .. }
            | E::NonFinite(_)
            | E::DegenerateColumn { .. }
            | E::ComponentFit { .. } => Failure::Numerical(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Core { path, source } => match Failure::from(source) {
                Failure::Usage(m) => Failure::Usage(format!("{}: {m}", path.display())),
                Failure::Numerical(m) => Failure::Numerical(format!("{}: {m}", path.display())),
            },
            other => Failure::Usage(other.to_string()),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Core(c) => c.into(),
            ExperimentError::Io(i) => i.into(),
            ExperimentError::Invalid(m) => Failure::Usage(m),
        }
    }
}

fn family_of(args: &GenerateArgs) -> DatasetFamily {
    match args.family {
        Family::Butterfly => DatasetFamily::Butterfly { pairs: args.pairs },
        Family::NonparanormalCdf => {
            DatasetFamily::NonparanormalCdf { d: args.d.unwrap_or(10), s: args.s, max_degree: args.max_degree }
        }
        Family::NonparanormalPower => DatasetFamily::NonparanormalPower {
            d: args.d.unwrap_or(10),
            s: args.s,
            max_degree: args.max_degree,
            a: args.a,
        },
        Family::Cubic => DatasetFamily::Cubic,
        Family::StarBeta2 => DatasetFamily::StarBeta2 { d: args.d.unwrap_or(5) },
        Family::Lorenz96 => DatasetFamily::Lorenz96(Lorenz96Params {
            d: args.d.unwrap_or(15),
            forcing: args.forcing,
            convention: if args.plus_convention { Lorenz96Convention::Plus } else { Lorenz96Convention::Standard },
            ..Lorenz96Params::default()
        }),
        Family::Gaussian => DatasetFamily::Gaussian { d: args.d.unwrap_or(3), coupling: args.coupling },
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<(), Failure> {
    let family = family_of(&args);
    let n = match (&family, args.n) {
        (_, Some(n)) => n,
        (DatasetFamily::Lorenz96(p), None) => p.rows(),
        (_, None) => DEFAULT_N,
    };
    let ds = family.generate(n, &structure_stream(args.seed), &sample_stream(args.seed, 0))?;
    write_samples(&args.out.join("samples.csv"), &ds.samples)?;
    write_graph(&args.out.join("truth.json"), &ds.spec.truth)?;
    write_json(&args.out.join("spec.json"), &ds.spec)?;
    if let Some(p) = &ds.precision {
        write_matrix(&args.out.join("precision.csv"), p)?;
    }
    println!("wrote {} x {} samples to {}", ds.samples.n(), ds.samples.d(), args.out.join("samples.csv").display());
    Ok(())
}

fn cmd_sing(args: SingArgs) -> Result<(), Failure> {
    let data = io::read_samples(&args.data)?;
    let cfg = SingConfig {
        degree: args.beta,
        c: args.c,
        tau0: args.tau0,
        max_iterations: if args.non_iterative { 1 } else { args.max_iter },
        quadrature_order: args.quad_order,
        seed: args.seed,
    };
    let report = run_sing(&data, &cfg)?;
    let out = &args.out;
    write_json(&out.join("report.json"), &report)?;
    write_adjacency(&out.join("adjacency.csv"), &report.final_edges)?;
    write_graph(&out.join("graph.json"), &report.final_edges)?;
    for (t, it) in report.iterations.iter().enumerate() {
        let dir = out.join("scores");
        write_matrix(&dir.join(format!("omega_iter{}.csv", t + 1)), it.score.omega())?;
        if let Some(v) = it.score.variance() {
            write_matrix(&dir.join(format!("variance_iter{}.csv", t + 1)), v)?;
        }
        write_matrix(&dir.join(format!("tau_iter{}.csv", t + 1)), &it.tau)?;
    }
    println!(
        "{} edges after {} iteration(s): {:?}",
        report.final_edges.num_edges(),
        report.iterations.len(),
        report.final_edges.to_one_based()
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct EvalOutput {
    type1: usize,
    type2: usize,
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let truth = io::read_graph(&args.truth)?;
    let est = io::read_graph(&args.estimate)?;
    let (type1, type2) = edge_errors(&truth, &est)?;
    println!("type1,type2\n{type1},{type2}");
    if let Some(path) = &args.out {
        write_json(path, &EvalOutput { type1, type2 })?;
    }
    Ok(())
}

fn cmd_trials(args: TrialsArgs) -> Result<(), Failure> {
    let cfg: ExperimentConfig = io::read_json(&args.config)?;
    let dir = args.out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("trials-out"));
    let summary = run_experiment(&cfg, Some(Path::new(&dir)))?;
    print!("{}", sing::experiment::format_summary_csv(&summary.rows));
    let failed: usize = summary.rows.iter().map(|r| r.failed).sum();
    if failed > 0 {
        eprintln!("{failed} trial(s) failed; see {}", dir.join("trials.csv").display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(t) = cli.threads.filter(|t| *t > 0) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Sing(a) => cmd_sing(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Trials(a) => cmd_trials(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(2)
        }
    }
}
