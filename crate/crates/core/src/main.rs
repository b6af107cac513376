use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use napts::driver::{run_training, Method, MethodConfig, RunStatus, TrainingOptions, TrainingRun};
use napts::globalization::{NtrConstants, NtrDirection};
use napts::harness::config::config_to_args;
use napts::harness::{emit_history, emit_metrics, emit_plot, generate_dataset, read_metrics, Dataset, DatasetKind};
use napts::local_solver::AdamParams;
use napts::model::{Activation, Architecture, BlockSplit, LossKind};

/// Flags that take no value; a config file sets them with `true`/`false`.
const SWITCHES: [&str; 5] = [
    "full-batch",
    "adam-persist-moments",
    "reeval-reference",
    "no-timings",
    "sequential",
];

#[derive(Parser)]
#[command(name = "napts", version, about = "Preconditioned trust-region training experiments")]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one method and write per-iteration metrics.
    Train(TrainArgs),
    /// Train every method on the same setup, writing one CSV each plus a figure.
    Compare(CompareArgs),
    /// Write a generated dataset as CSV.
    Generate(GenerateArgs),
    /// Draw the figure from existing metrics files.
    Plot(PlotArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Tr,
    Ntr,
    Apts,
    #[value(name = "apts-a", alias = "apts_a")]
    AptsA,
    Napts,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Tr => Method::Tr,
            MethodArg::Ntr => Method::Ntr,
            MethodArg::Apts => Method::Apts,
            MethodArg::AptsA => Method::AptsAlwaysAccept,
            MethodArg::Napts => Method::Napts,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Normalized,
    Sign,
}

#[derive(Clone, Copy, ValueEnum)]
enum ActivationArg {
    Relu,
    Tanh,
}

#[derive(Args, Clone)]
struct Setup {
    /// Key-value file with defaults for any of these flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// blobs | moons | spiral | idx:<prefix>
    #[arg(long, default_value = "moons")]
    dataset: String,
    #[arg(long, default_value_t = 1000)]
    dataset_size: usize,
    /// Hidden layer widths, comma separated.
    #[arg(long, default_value = "16,16", value_delimiter = ',')]
    hidden: Vec<usize>,
    #[arg(long, value_enum, default_value = "tanh")]
    activation: ActivationArg,
    #[arg(long, default_value_t = 3)]
    subdomains: usize,
    #[arg(long, default_value_t = 3)]
    inner_iters: usize,
    #[arg(long, default_value_t = 100)]
    nu: usize,
    #[arg(long, default_value_t = 0.1)]
    delta0: f64,
    #[arg(long, default_value_t = 1e-6)]
    delta_min: f64,
    #[arg(long, default_value_t = 1.0)]
    delta_max: f64,
    #[arg(long, default_value_t = 0.1)]
    eta1: f64,
    #[arg(long, default_value_t = 0.75)]
    eta2: f64,
    #[arg(long, default_value_t = 2.0)]
    gamma_inc: f64,
    #[arg(long, default_value_t = 0.5)]
    gamma_dec: f64,
    /// Learning rate of the local Adam solves.
    #[arg(long, default_value_t = 1e-3)]
    adam_lr: f64,
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    full_batch: bool,
    #[arg(long)]
    adam_persist_moments: bool,
    #[arg(long)]
    reeval_reference: bool,
    #[arg(long, value_enum, default_value = "normalized")]
    ntr_direction: DirectionArg,
    /// Write zero instead of wall-clock phase timings.
    #[arg(long)]
    no_timings: bool,
    /// Run subdomain solves one after another instead of on the thread pool.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "napts")]
    method: MethodArg,
    #[command(flatten)]
    setup: Setup,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Also dump the acceptance-decision log.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    setup: Setup,
    /// Directory receiving `<method>.csv` and `figure.svg`.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "moons")]
    dataset: String,
    #[arg(long, default_value_t = 1000)]
    dataset_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// `method=path.csv`, repeatable.
    #[arg(long = "run", required = true)]
    runs: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

struct Prepared {
    data: Dataset,
    arch: Arc<Architecture>,
    theta0: Vec<f64>,
    options: TrainingOptions,
}

impl Setup {
    fn method_config(&self, method: Method) -> MethodConfig {
        MethodConfig {
            method,
            inner_iters: self.inner_iters,
            constants: NtrConstants {
                eta1: self.eta1,
                eta2: self.eta2,
                gamma_dec: self.gamma_dec,
                gamma_inc: self.gamma_inc,
                delta0: self.delta0,
                memory: self.nu,
                delta_min: self.delta_min,
                delta_max: self.delta_max,
            },
            adam: AdamParams {
                learning_rate: self.adam_lr,
                ..Default::default()
            },
            adam_persist_moments: self.adam_persist_moments,
            reeval_reference: self.reeval_reference,
            ntr_direction: match self.ntr_direction {
                DirectionArg::Normalized => NtrDirection::Normalized,
                DirectionArg::Sign => NtrDirection::Sign,
            },
            parallel_subdomains: !self.sequential,
            seed: self.seed,
        }
    }

    fn prepare(&self) -> Result<Prepared> {
        let kind: DatasetKind = self.dataset.parse()?;
        let data = generate_dataset(&kind, self.dataset_size, self.seed)?;
        let mut dims = vec![data.features];
        dims.extend(&self.hidden);
        dims.push(data.classes);
        let activation = match self.activation {
            ActivationArg::Relu => Activation::Relu,
            ActivationArg::Tanh => Activation::Tanh,
        };
        let arch = Architecture::mlp(
            &dims,
            activation,
            LossKind::SoftmaxCrossEntropy,
            BlockSplit::Balanced(self.subdomains),
        )?;
        let theta0 = arch.init_params(self.seed);
        Ok(Prepared {
            data,
            arch: Arc::new(arch),
            theta0,
            options: TrainingOptions {
                epochs: self.epochs,
                batch_size: self.batch_size,
                full_batch: self.full_batch,
                record_timings: !self.no_timings,
                ..Default::default()
            },
        })
    }
}

fn train_once(setup: &Setup, prepared: &Prepared, method: Method) -> Result<TrainingRun> {
    let config = setup.method_config(method);
    let run = run_training(
        &config,
        Arc::clone(&prepared.arch),
        prepared.theta0.clone(),
        &prepared.data,
        &prepared.options,
    )?;
    Ok(run)
}

fn summary(method: Method, run: &TrainingRun) {
    let last = run.records.last();
    println!(
        "{:<7} iterations {:>5}  final loss {:>10.4e}  val acc {:>6.2}%  rejections {:>5}",
        method.tag(),
        run.records.len(),
        last.map_or(f64::NAN, |r| r.loss),
        100.0 * last.map_or(f64::NAN, |r| r.val_acc),
        run.total_rejections()
    );
}

fn report_divergence(run: &TrainingRun) -> bool {
    if let RunStatus::Diverged { k, loss } = run.status {
        eprintln!("diverged at iteration {k}: objective {loss}");
        if let Some(r) = run.reports.last() {
            eprintln!(
                "last completed iteration: loss {} delta {} -> {} rho_c {} rho_h {}",
                r.loss, r.delta, r.delta_next, r.rho_c, r.rho_h
            );
        }
        return true;
    }
    false
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode> {
    let method = Method::from(args.method);
    let prepared = args.setup.prepare()?;
    let run = train_once(&args.setup, &prepared, method)?;
    if !run.records.is_empty() {
        emit_metrics(&run.records, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    }
    if let Some(path) = &args.history {
        emit_history(&run.decisions, path)?;
    }
    if let Some(path) = &args.plot {
        if !run.records.is_empty() {
            emit_plot(&[(method.tag().to_string(), run.records.clone())], path)?;
        }
    }
    summary(method, &run);
    Ok(if report_divergence(&run) {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_compare(args: CompareArgs) -> Result<ExitCode> {
    std::fs::create_dir_all(&args.out_dir)?;
    let prepared = args.setup.prepare()?;
    let mut runs = Vec::new();
    let mut diverged = false;
    for method in Method::ALL {
        let run = train_once(&args.setup, &prepared, method)?;
        if !run.records.is_empty() {
            emit_metrics(&run.records, &args.out_dir.join(format!("{}.csv", method.tag())))?;
        }
        summary(method, &run);
        diverged |= report_divergence(&run);
        runs.push((method.tag().to_string(), run.records));
    }
    runs.retain(|(_, r)| !r.is_empty());
    if !runs.is_empty() {
        emit_plot(&runs, &args.out_dir.join("figure.svg"))?;
    }
    Ok(if diverged { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn cmd_generate(args: GenerateArgs) -> Result<ExitCode> {
    let kind: DatasetKind = args.dataset.parse()?;
    let data = generate_dataset(&kind, args.dataset_size, args.seed)?;
    let file = std::fs::File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    data.write_csv(std::io::BufWriter::new(file))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_plot(args: PlotArgs) -> Result<ExitCode> {
    let mut runs = Vec::new();
    for spec in &args.runs {
        let Some((method, path)) = spec.split_once('=') else {
            bail!("--run expects method=path, got {spec:?}");
        };
        runs.push((method.to_string(), read_metrics(Path::new(path))?));
    }
    emit_plot(&runs, &args.out)?;
    Ok(ExitCode::SUCCESS)
}

/// Inserts the arguments from `--config <file>` right after the subcommand
/// so that flags given on the command line override them.
fn expand_config(argv: Vec<String>) -> Result<Vec<String>> {
    let Some(pos) = argv.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(argv);
    };
    let path = match argv[pos].strip_prefix("--config=") {
        Some(p) => p.to_string(),
        None => match argv.get(pos + 1) {
            Some(p) => p.clone(),
            None => bail!("--config needs a path"),
        },
    };
    let extra = config_to_args(Path::new(&path), &SWITCHES)?;
    let mut out = argv;
    let at = out.len().min(2);
    out.splice(at..at, extra);
    Ok(out)
}

fn main() -> ExitCode {
    let argv = match expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Plot(a) => cmd_plot(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
