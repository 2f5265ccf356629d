//! Command-line entry point for the temporal-resolution adaptation
//! pipelines: dataset generation and resampling, training, model
//! adaptation, evaluation, the single-neuron matching study and the
//! end-to-end experiment.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/model error, 3 numerical
//! error (singular matrices, non-integer ratios, diverged training).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tempo_snn_core::adapt::{AdaptError, AdaptMethod, ResolutionRatio};
use tempo_snn_core::harness::{
    e2e_experiment, gen_synthetic_dataset, single_neuron_experiment, study_pair_traces, Direction,
    E2eConfig, HarnessError,
};
use tempo_snn_core::io::{load_model, read_dataset, save_model, write_dataset, Dataset, IoError};
use tempo_snn_core::network::{
    evaluate, init_model, model_loss, train, ModelConfig, ModelMeta, NetworkError, TrainConfig,
};
use tempo_snn_core::normstats::{StatAdaptRule, StatMode};
use tempo_snn_core::resample::{resample_dataset, ResampleKind};
use tempo_snn_core::rng::Xoshiro256pp;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(
    name = "tempo-snn",
    version,
    about = "Temporal-resolution domain adaptation for spiking networks",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for experiments (env fallback: TEMPO_SNN_JOBS).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic temporal classification dataset.
    GenData(GenDataArgs),
    /// Apply a temporal transform to a dataset.
    Resample(ResampleArgs),
    /// Train a spiking network on a dataset.
    Train(TrainArgs),
    /// Adapt a trained model to a new temporal resolution.
    Adapt(AdaptArgs),
    /// Evaluate a model on a dataset.
    Eval(EvalArgs),
    /// Run the single-neuron dynamics-matching study.
    NeuronStudy(NeuronStudyArgs),
    /// Train at one resolution, evaluate raw/adapted/retrained at another.
    E2e(E2eArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of classes.
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Samples per class.
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    /// Input channels.
    #[arg(long, default_value_t = 16)]
    channels: usize,
    /// Timesteps per sample.
    #[arg(long, default_value_t = 64)]
    timesteps: usize,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ResampleArgs {
    /// Input dataset directory.
    #[arg(long)]
    input: PathBuf,
    /// Transform: sumbin | binary-sumbin | maxpool | padzeros | repeat.
    #[arg(long)]
    kind: ResampleKind,
    /// Bin/stretch factor.
    #[arg(long)]
    factor: usize,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Output model file (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Hidden layer sizes.
    #[arg(long, value_delimiter = ',', default_value = "64,64")]
    hidden: Vec<usize>,
    /// Add intra-layer recurrent weights.
    #[arg(long, default_value_t = false)]
    recurrent: bool,
    /// Training epochs.
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    /// Minibatch size.
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Base learning rate.
    #[arg(long, default_value_t = 0.01)]
    base_lr: f64,
    /// Epochs between learning-rate decays.
    #[arg(long, default_value_t = 10)]
    lr_step: usize,
    /// Learning-rate decay factor.
    #[arg(long, default_value_t = 0.1)]
    lr_decay: f64,
    /// L2 weight decay.
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    /// Box surrogate half-width.
    #[arg(long, default_value_t = 0.5)]
    surrogate_half_width: f64,
    /// Stop early on a validation-loss plateau (needs --val-frac > 0).
    #[arg(long, default_value_t = false)]
    early_stop: bool,
    /// Fraction of training data held out for validation.
    #[arg(long, default_value_t = 0.0)]
    val_frac: f64,
    /// Bin size recorded in the model metadata.
    #[arg(long, default_value_t = 1)]
    bin_size: u32,
    /// Master seed (initialization and batching).
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AdaptArgs {
    /// Input model file.
    #[arg(long)]
    model: PathBuf,
    /// Method: none | integral | euler | expectation | timeconst.
    #[arg(long)]
    method: AdaptMethod,
    /// Resolution ratio dt_target/dt_source, as P/Q or a decimal.
    #[arg(long)]
    rho: String,
    /// Transform the statistics rule models.
    #[arg(long, default_value = "sumbin")]
    norm_transform: ResampleKind,
    /// Statistics rule mode: theoretical | empirical.
    #[arg(long, default_value = "theoretical")]
    norm_mode: String,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Model file.
    #[arg(long)]
    model: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Optional JSON report path (stdout gets a summary either way).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NeuronStudyArgs {
    /// Number of random (input, neuron) pairs.
    #[arg(long, default_value_t = 1000)]
    pairs: usize,
    /// Direction: fine2coarse | coarse2fine.
    #[arg(long)]
    direction: Direction,
    /// Comma list of methods, or "all".
    #[arg(long, default_value = "all")]
    methods: String,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON report path.
    #[arg(long)]
    out: PathBuf,
    /// Directory for per-pair trace CSV dumps (plotting aid).
    #[arg(long)]
    dump_traces: Option<PathBuf>,
    /// Number of pairs to dump when --dump-traces is set.
    #[arg(long, default_value_t = 3)]
    dump_pairs: usize,
}

#[derive(Args)]
struct E2eArgs {
    /// Direction: fine2coarse | coarse2fine.
    #[arg(long)]
    direction: Direction,
    /// Method: none | integral | euler | expectation | timeconst.
    #[arg(long, default_value = "integral")]
    method: AdaptMethod,
    /// Source (training) bin size.
    #[arg(long)]
    bin_source: u32,
    /// Target (deployment) bin size.
    #[arg(long)]
    bin_target: u32,
    /// Number of independent seeds to average.
    #[arg(long, default_value_t = 10)]
    seeds: usize,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 200)]
    train_per_class: usize,
    #[arg(long, default_value_t = 50)]
    test_per_class: usize,
    #[arg(long, default_value_t = 16)]
    channels: usize,
    #[arg(long, default_value_t = 64)]
    timesteps: usize,
    #[arg(long, value_delimiter = ',', default_value = "64,64")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = false)]
    recurrent: bool,
    #[arg(long, default_value_t = 15)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Output JSON report path.
    #[arg(long)]
    out: PathBuf,
}

/// Failures carrying their process exit code.
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    fn numeric(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_NUMERIC,
            message: message.into(),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<AdaptError> for CliError {
    fn from(e: AdaptError) -> Self {
        match e {
            AdaptError::InvalidRatio => CliError::usage(e.to_string()),
            _ => CliError::numeric(e.to_string()),
        }
    }
}

impl From<NetworkError> for CliError {
    fn from(e: NetworkError) -> Self {
        match e {
            NetworkError::Adapt(inner) => CliError::from(inner),
            NetworkError::NanLoss { .. } => CliError::numeric(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::InvalidConfig(msg) => CliError::usage(msg),
            HarnessError::Network(inner) => CliError::from(inner),
            HarnessError::Adapt(inner) => CliError::from(inner),
            HarnessError::Resample(inner) => CliError::data(inner.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let jobs = cli
        .jobs
        .or_else(|| {
            std::env::var("TEMPO_SNN_JOBS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(1)
        .max(1);
    match run(cli.command, jobs) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(command: Command, jobs: usize) -> Result<(), CliError> {
    match command {
        Command::GenData(args) => gen_data(args),
        Command::Resample(args) => resample_cmd(args),
        Command::Train(args) => train_cmd(args),
        Command::Adapt(args) => adapt_cmd(args),
        Command::Eval(args) => eval_cmd(args),
        Command::NeuronStudy(args) => neuron_study_cmd(args, jobs),
        Command::E2e(args) => e2e_cmd(args, jobs),
    }
}

fn gen_data(args: GenDataArgs) -> Result<(), CliError> {
    if args.classes == 0 || args.per_class == 0 || args.channels == 0 || args.timesteps == 0 {
        return Err(CliError::usage("all dataset dimensions must be positive"));
    }
    let samples = gen_synthetic_dataset(
        args.classes,
        args.per_class,
        args.channels,
        args.timesteps,
        args.seed,
    );
    let dataset = Dataset::with_default_names(samples);
    write_dataset(&dataset, &args.out)?;
    println!(
        "wrote {} samples ({} classes) to {}",
        dataset.samples.len(),
        args.classes,
        args.out.display()
    );
    Ok(())
}

fn resample_cmd(args: ResampleArgs) -> Result<(), CliError> {
    let dataset = read_dataset(&args.input)?;
    let samples = resample_dataset(&dataset.samples, args.kind, args.factor)
        .map_err(|e| CliError::data(e.to_string()))?;
    let out = Dataset {
        samples,
        label_names: dataset.label_names,
    };
    write_dataset(&out, &args.out)?;
    println!(
        "resampled {} samples with {} x{} to {}",
        out.samples.len(),
        args.kind.name(),
        args.factor,
        args.out.display()
    );
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<(), CliError> {
    let dataset = read_dataset(&args.data)?;
    if dataset.samples.is_empty() {
        return Err(CliError::data("training dataset is empty"));
    }
    if args.early_stop && args.val_frac <= 0.0 {
        return Err(CliError::usage("--early-stop needs --val-frac > 0"));
    }
    let channels = dataset.samples[0].tensor.channels();
    let classes = dataset.label_names.len().max(
        dataset
            .samples
            .iter()
            .map(|s| s.label + 1)
            .max()
            .unwrap_or(1),
    );
    let dt_ms = dataset.samples[0].tensor.dt_ms();

    // Deterministic validation split: shuffle a copy, take the tail.
    let mut order: Vec<usize> = (0..dataset.samples.len()).collect();
    Xoshiro256pp::from_seed(args.seed ^ 0x5eed_5eed).shuffle(&mut order);
    let n_val = ((dataset.samples.len() as f64) * args.val_frac).round() as usize;
    let (val_idx, train_idx) = order.split_at(n_val.min(dataset.samples.len().saturating_sub(1)));
    let train_set: Vec<_> = train_idx
        .iter()
        .map(|&i| dataset.samples[i].clone())
        .collect();
    let val_set: Vec<_> = val_idx
        .iter()
        .map(|&i| dataset.samples[i].clone())
        .collect();

    let model = init_model(
        &ModelConfig {
            input_channels: channels,
            hidden: args.hidden.clone(),
            classes,
            recurrent: args.recurrent,
        },
        ModelMeta {
            dt_ms,
            bin_size: args.bin_size,
            seed: args.seed,
        },
    );
    let cfg = TrainConfig {
        epochs: args.epochs,
        base_lr: args.base_lr,
        lr_step_epochs: args.lr_step,
        lr_decay: args.lr_decay,
        weight_decay: args.weight_decay,
        surrogate_half_width: args.surrogate_half_width,
        batch_size: args.batch_size,
        early_stop: args.early_stop.then(Default::default),
        seed: args.seed,
    };
    let val_ref = (!val_set.is_empty()).then_some(val_set.as_slice());
    let result = train(&model, &train_set, val_ref, &cfg)?;
    save_model(&result.model, &args.out)?;
    let final_loss = result.train_loss.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained {} epochs, final training loss {final_loss:.6}, model written to {}",
        result.train_loss.len(),
        args.out.display()
    );
    Ok(())
}

fn adapt_cmd(args: AdaptArgs) -> Result<(), CliError> {
    let model = load_model(&args.model)?;
    let ratio = ResolutionRatio::parse(&args.rho)
        .map_err(|_| CliError::usage(format!("--rho '{}' is not a positive rational", args.rho)))?;
    let mode = match args.norm_mode.to_ascii_lowercase().as_str() {
        "theoretical" => StatMode::Theoretical,
        "empirical" => StatMode::Empirical,
        other => {
            return Err(CliError::usage(format!(
                "unknown --norm-mode '{other}' (theoretical | empirical)"
            )))
        }
    };
    let rule = StatAdaptRule {
        transform: args.norm_transform,
        mode,
    };
    let adapted = tempo_snn_core::network::adapt_model(&model, args.method, &ratio, &rule)
        .map_err(CliError::from)?;
    save_model(&adapted, &args.out)?;
    println!(
        "adapted with {} at rho={} -> {}",
        args.method.name(),
        ratio,
        args.out.display()
    );
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> Result<(), CliError> {
    let model = load_model(&args.model)?;
    let dataset = read_dataset(&args.data)?;
    let accuracy = evaluate(&model, &dataset.samples)?;
    let loss = model_loss(&model, &dataset.samples)?;
    let report = serde_json::json!({
        "accuracy": accuracy,
        "loss": loss,
        "samples": dataset.samples.len(),
    });
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    if let Some(out) = &args.out {
        std::fs::write(out, &text)
            .map_err(|e| CliError::data(format!("{}: {e}", out.display())))?;
    }
    print!("{text}");
    Ok(())
}

fn parse_methods(text: &str) -> Result<Vec<AdaptMethod>, CliError> {
    if text.eq_ignore_ascii_case("all") {
        return Ok(AdaptMethod::ALL.to_vec());
    }
    text.split(',')
        .map(|part| part.trim().parse::<AdaptMethod>().map_err(CliError::usage))
        .collect()
}

fn neuron_study_cmd(args: NeuronStudyArgs, jobs: usize) -> Result<(), CliError> {
    let methods = parse_methods(&args.methods)?;
    let report = single_neuron_experiment(args.pairs, args.direction, &methods, args.seed, jobs)?;
    std::fs::write(&args.out, report.to_json())
        .map_err(|e| CliError::data(format!("{}: {e}", args.out.display())))?;
    if let Some(dir) = &args.dump_traces {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
        for pair in 0..args.dump_pairs.min(args.pairs) {
            for &method in &methods {
                let traces = study_pair_traces(pair, args.direction, method, args.seed)?;
                let file = dir.join(format!("pair{pair:03}_{}.csv", method.name()));
                std::fs::write(&file, traces.to_csv())
                    .map_err(|e| CliError::data(format!("{}: {e}", file.display())))?;
            }
        }
    }
    print!("{}", report.to_table());
    println!("report written to {}", args.out.display());
    Ok(())
}

fn e2e_cmd(args: E2eArgs, jobs: usize) -> Result<(), CliError> {
    let cfg = E2eConfig {
        direction: args.direction,
        method: args.method,
        bin_source: args.bin_source,
        bin_target: args.bin_target,
        seeds: args.seeds,
        master_seed: args.seed,
        classes: args.classes,
        train_per_class: args.train_per_class,
        test_per_class: args.test_per_class,
        channels: args.channels,
        timesteps: args.timesteps,
        hidden: args.hidden.clone(),
        recurrent: args.recurrent,
        train: TrainConfig {
            epochs: args.epochs,
            batch_size: args.batch_size,
            ..TrainConfig::default()
        },
        jobs,
    };
    let report = e2e_experiment(&cfg)?;
    std::fs::write(&args.out, report.to_json())
        .map_err(|e| CliError::data(format!("{}: {e}", args.out.display())))?;
    print!("{}", report.to_table());
    println!("report written to {}", args.out.display());
    Ok(())
}
