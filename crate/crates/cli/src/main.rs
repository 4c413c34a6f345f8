use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use cube3d::comm::Schedule;
use cube3d::nn::TransformerConfig;
use cube3d::ops3d::Form;
use cube3d::sharding::{read_matrix_file, write_matrix_file, GlobalMatrix};
use cube3d::verify::{render_csv, run_matmul_parallel, run_scaling, run_verify_suite, ScalingMode, SuiteOptions};
use cube3d::{Dtype, Error, Scalar};

/// 3-D parallel matrix products and Transformer layers on a simulated
/// processor cube.
#[derive(Debug, Parser)]
#[command(name = "cube3d", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the oracle, gradient, traffic and balance checks; exit 1 on any failure.
    Verify(VerifyArgs),
    /// Write a weak or strong scaling table in modeled cost units as CSV.
    Bench(BenchArgs),
    /// Multiply two matrix files on the cube and write the product.
    Matmul(MatmulArgs),
}

#[derive(Debug, Args)]
struct ShapeArgs {
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seq: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
}

impl ShapeArgs {
    fn config(&self, p: usize, defaults: TransformerConfig) -> TransformerConfig {
        TransformerConfig {
            batch: self.batch.unwrap_or(defaults.batch),
            seq: self.seq.unwrap_or(defaults.seq),
            hidden: self.hidden.unwrap_or(defaults.hidden),
            heads: self.heads.unwrap_or(defaults.heads),
            layers: self.layers.unwrap_or(defaults.layers),
            p,
            eps: defaults.eps,
        }
    }
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Cube side; the run uses p³ ranks.
    #[arg(long, default_value_t = 2)]
    p: usize,
    #[command(flatten)]
    shape: ShapeArgs,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = DtypeArg::F64)]
    dtype: DtypeArg,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Threaded)]
    schedule: ScheduleArg,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Weak)]
    mode: ModeArg,
    /// Cube sides to run, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    p_list: Vec<usize>,
    /// Shape at side 1 in weak mode, the fixed problem in strong mode.
    #[command(flatten)]
    shape: ShapeArgs,
    /// Weight of one received element relative to one multiply-add.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MatmulArgs {
    #[arg(long, value_enum, default_value_t = FormArg::Ab)]
    form: FormArg,
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value_t = 2)]
    p: usize,
    /// Precision of the product; defaults to the inputs' precision.
    #[arg(long, value_enum)]
    dtype: Option<DtypeArg>,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Threaded)]
    schedule: ScheduleArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DtypeArg {
    F32,
    F64,
}

impl From<DtypeArg> for Dtype {
    fn from(d: DtypeArg) -> Dtype {
        match d {
            DtypeArg::F32 => Dtype::F32,
            DtypeArg::F64 => Dtype::F64,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScheduleArg {
    /// One thread per rank.
    Threaded,
    /// All ranks interleaved on one thread.
    Lockstep,
}

impl From<ScheduleArg> for Schedule {
    fn from(s: ScheduleArg) -> Schedule {
        match s {
            ScheduleArg::Threaded => Schedule::Threaded,
            ScheduleArg::Lockstep => Schedule::Lockstep,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Weak,
    Strong,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormArg {
    Ab,
    Abt,
    Atb,
}

impl From<FormArg> for Form {
    fn from(f: FormArg) -> Form {
        match f {
            FormArg::Ab => Form::Ab,
            FormArg::Abt => Form::Abt,
            FormArg::Atb => Form::Atb,
        }
    }
}

/// Failures that come from the arguments rather than from the computation.
fn is_usage(e: &Error) -> bool {
    matches!(
        e,
        Error::NotACube(_)
            | Error::IndivisibleShape { .. }
            | Error::HeadsIndivisible { .. }
            | Error::ShapeMismatch(_)
            | Error::ConfigInvalid(_)
            | Error::Format(_)
            | Error::Io(_)
    )
}

enum Failure {
    Usage(anyhow::Error),
    Run(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        if is_usage(&e) {
            Failure::Usage(e.into())
        } else {
            Failure::Run(e.into())
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Failure {
        match e.downcast_ref::<Error>() {
            Some(inner) if !is_usage(inner) => Failure::Run(e),
            _ => Failure::Usage(e),
        }
    }
}

fn verify(args: &VerifyArgs) -> Result<bool, Failure> {
    let defaults = TransformerConfig {
        layers: 2,
        ..TransformerConfig::toy()
    };
    let opts = SuiteOptions {
        cfg: args.shape.config(args.p, defaults),
        seed: args.seed,
        schedule: args.schedule.into(),
    };
    let report = match Dtype::from(args.dtype) {
        Dtype::F64 => run_verify_suite::<f64>(&opts)?,
        Dtype::F32 => run_verify_suite::<f32>(&opts)?,
    };
    let text = report.render();
    print!("{text}");
    if let Some(path) = &args.out {
        std::fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(report.all_passed())
}

fn bench(args: &BenchArgs) -> Result<(), Failure> {
    let mode = match args.mode {
        ModeArg::Weak => ScalingMode::Weak,
        ModeArg::Strong => ScalingMode::Strong,
    };
    let defaults = TransformerConfig {
        batch: 4,
        seq: 12,
        heads: 4,
        hidden: 16,
        p: 1,
        layers: 1,
        eps: 1e-5,
    };
    let base = args.shape.config(1, defaults);
    let rows = run_scaling(mode, &base, &args.p_list, args.lambda, args.seed)?;
    let csv = render_csv(&rows);
    std::fs::write(&args.out, &csv).with_context(|| format!("writing {}", args.out.display()))?;
    print!("{csv}");
    Ok(())
}

fn load<T: Scalar>(path: &Path) -> Result<GlobalMatrix<T>, Failure> {
    let file = read_matrix_file(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(file.to_f64().map(T::from_f64))
}

fn multiply<T: Scalar>(args: &MatmulArgs) -> Result<(), Failure> {
    let a = load::<T>(&args.a)?;
    let b = load::<T>(&args.b)?;
    let (c, counters) = run_matmul_parallel(args.form.into(), &a, &b, args.p, args.schedule.into())?;
    write_matrix_file(&args.out, &c).with_context(|| format!("writing {}", args.out.display()))?;
    let worst = counters.iter().map(|c| c.elements_received).max().unwrap_or(0);
    let madds = counters.iter().map(|c| c.multiply_adds).max().unwrap_or(0);
    println!(
        "{} x {} product on {} ranks: {worst} elements received and {madds} multiply-adds per rank",
        c.rows(),
        c.cols(),
        counters.len()
    );
    Ok(())
}

fn matmul(args: &MatmulArgs) -> Result<(), Failure> {
    let dtype = match args.dtype {
        Some(d) => d.into(),
        None => {
            let peek = |p: &Path| -> Result<Dtype, Failure> {
                Ok(read_matrix_file(p)
                    .with_context(|| format!("reading {}", p.display()))?
                    .dtype())
            };
            let (da, db) = (peek(&args.a)?, peek(&args.b)?);
            if da != db {
                return Err(Failure::Usage(anyhow::anyhow!(
                    "inputs differ in precision ({da:?} and {db:?}); pass --dtype"
                )));
            }
            da
        }
    };
    match dtype {
        Dtype::F64 => multiply::<f64>(args),
        Dtype::F32 => multiply::<f32>(args),
    }
}

fn run(cli: &Cli) -> Result<bool, Failure> {
    match &cli.command {
        Command::Verify(a) => verify(a),
        Command::Bench(a) => {
            if a.p_list.is_empty() {
                return Err(Failure::Usage(anyhow::anyhow!("--p-list is empty")));
            }
            bench(a).map(|()| true)
        }
        Command::Matmul(a) => matmul(a).map(|()| true),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on its own usage errors
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
