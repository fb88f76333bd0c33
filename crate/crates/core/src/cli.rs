//! The `deeprain` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::data::{
    decode_binary, encode_binary, parse_text_file, split, synth_generate, write_text, DataError, Dims, RadarRecord,
    SynthConfig, BINARY_MAGIC, PAPER_RATIOS,
};
use crate::model::{read_checkpoint, write_checkpoint, CheckpointError, ModelError, ModelKind, ModelSpec};
use crate::optim::OptimizerKind;
use crate::train::{emit_curve, evaluate_with_threads, train, TrainConfig, TrainError};
use crate::verify::{gradcheck_model, selftest};

pub const THREADS_ENV: &str = "DEEPRAIN_THREADS";

#[derive(Debug, Parser)]
#[command(name = "deeprain", version, about = "ConvLSTM rainfall regression from radar sequences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DataFormat {
    Binary,
    Text,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a text dataset to the binary format.
    Convert {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        /// Record geometry as T,C,H,W.
        #[arg(long)]
        dims: Dims,
    },
    /// Generate a synthetic dataset from a key=value config.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "out")]
        output: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "binary")]
        format: DataFormat,
    },
    /// Split 90/5/5, train, and report validation and test RMSE.
    Train(TrainArgs),
    /// Test-set RMSE of a checkpoint under the split for `--seed`.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Geometry for text datasets.
        #[arg(long)]
        dims: Option<Dims>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Finite-difference gradient check of a tiny model instance.
    Gradcheck {
        #[arg(long, default_value = "conv-lstm")]
        model: ModelKind,
        #[arg(long)]
        stacks: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the built-in property checks.
    Selftest {
        /// A binary dataset to verify as well.
        #[arg(long)]
        fixture: Option<PathBuf>,
    },
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Geometry for text datasets.
    #[arg(long)]
    pub dims: Option<Dims>,
    #[arg(long, default_value = "conv-lstm")]
    pub model: ModelKind,
    #[arg(long)]
    pub stacks: Option<usize>,
    #[arg(long, default_value_t = ModelSpec::DEFAULT_HIDDEN)]
    pub hidden: usize,
    #[arg(long, default_value_t = ModelSpec::DEFAULT_KERNEL)]
    pub kernel: usize,
    #[arg(long, default_value_t = 1)]
    pub pool: usize,
    #[arg(long, default_value = "adam")]
    pub optimizer: OptimizerKind,
    #[arg(long, default_value_t = TrainConfig::DEFAULT_LR)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainConfig::DEFAULT_BATCH)]
    pub batch: usize,
    #[arg(long, default_value_t = TrainConfig::DEFAULT_EPOCHS)]
    pub epochs: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    #[arg(long, default_value_t = TrainConfig::DEFAULT_PATIENCE)]
    pub patience: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Record wall time in the curve's `seconds` column.
    #[arg(long)]
    pub wall_time: bool,
}

impl TrainArgs {
    pub fn config(&self, input: Dims, threads: Option<usize>) -> TrainConfig {
        let mut spec =
            ModelSpec::new(self.model, input).with_hidden(self.hidden).with_kernel(self.kernel).with_pool(self.pool);
        if let Some(s) = self.stacks {
            spec = spec.with_stacks(s);
        }
        let mut cfg = TrainConfig::new(spec, self.seed);
        cfg.optimizer = self.optimizer;
        cfg.lr = self.lr;
        cfg.batch_size = self.batch;
        cfg.max_epochs = self.epochs;
        cfg.patience = self.patience;
        cfg.clip = self.clip;
        cfg.threads = threads;
        cfg.record_wall_time = self.wall_time;
        cfg.verbose = true;
        cfg
    }
}

/// A failure with its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidSpec(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            TrainError::Config(_) | TrainError::Pool(_) => CliError::Usage(e.to_string()),
            TrainError::Model(m) => m.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

/// Reads a dataset, detecting the binary format by its magic; anything
/// else is parsed as text and needs `dims`.
pub fn load_dataset(path: &Path, dims: Option<Dims>) -> Result<(Dims, Vec<RadarRecord>), CliError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    if bytes.starts_with(BINARY_MAGIC) {
        let (d, records) = decode_binary(&bytes)?;
        if let Some(want) = dims.filter(|w| *w != d && !records.is_empty()) {
            return Err(CliError::Data(format!("{}: dimensions are {d}, --dims says {want}", path.display())));
        }
        return Ok((d, records));
    }
    let dims = dims.ok_or_else(|| CliError::Usage(format!("{}: text datasets need --dims T,C,H,W", path.display())))?;
    let text = String::from_utf8(bytes).map_err(|_| CliError::Data(format!("{}: not UTF-8 text", path.display())))?;
    Ok((dims, parse_text_file(&text, dims)?))
}

fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) if !v.trim().is_empty() => Some(
                v.trim().parse().map_err(|_| CliError::Usage(format!("{THREADS_ENV}={v} is not a thread count")))?,
            ),
            _ => None,
        },
    };
    if n == Some(0) {
        return Err(CliError::Usage("thread count must be >= 1".into()));
    }
    Ok(n)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| {
        let _ = std::fs::remove_file(path);
        CliError::from(DataError::io(path, e))
    })
}

fn convert(input: &Path, output: &Path, dims: Dims) -> Result<(), CliError> {
    let result = (|| {
        let text = std::fs::read_to_string(input).map_err(|e| DataError::io(input, e))?;
        let records = parse_text_file(&text, dims)?;
        let bytes = encode_binary(&records)?;
        write_file(output, &bytes)?;
        Ok::<_, CliError>((records.len(), text.len(), bytes.len()))
    })();
    match result {
        Ok((n, text_len, bin_len)) => {
            let ratio = text_len as f64 / bin_len.max(1) as f64;
            println!("converted {n} records: {text_len} text bytes -> {bin_len} binary bytes (ratio {ratio:.2})");
            Ok(())
        }
        Err(e) => {
            let _ = std::fs::remove_file(output);
            Err(e)
        }
    }
}

fn synth(
    config: Option<&Path>,
    output: &Path,
    count: Option<usize>,
    seed: Option<u64>,
    format: DataFormat,
) -> Result<(), CliError> {
    let mut cfg = match config {
        Some(p) => SynthConfig::load(p)?,
        None => SynthConfig::default(),
    };
    if let Some(c) = count {
        cfg.count = c;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let records = synth_generate(&cfg)?;
    match format {
        DataFormat::Binary => write_file(output, &encode_binary(&records)?)?,
        DataFormat::Text => write_text(&records, output)?,
    }
    println!("wrote {} records ({}) to {}", records.len(), cfg.dims, output.display());
    Ok(())
}

fn run_train(args: &TrainArgs) -> Result<(), CliError> {
    let threads = resolve_threads(args.threads)?;
    let (dims, records) = load_dataset(&args.data, args.dims)?;
    let cfg = args.config(dims, threads);
    cfg.validate()?;
    let s = split(records.len(), PAPER_RATIOS, args.seed)?;
    let outcome = train(&cfg, &records, &s)?;
    if let Some(p) = &args.curve {
        emit_curve(&outcome.stats, p)?;
    }
    if let Some(p) = &args.ckpt {
        write_checkpoint(&outcome.best, p)?;
    }
    println!("best_epoch={}", outcome.best_epoch);
    println!("best_val_rmse={}", outcome.best_val_rmse());
    if s.test.is_empty() {
        println!("test_rmse=n/a (empty test split)");
    } else {
        let test: Vec<RadarRecord> = s.test.iter().map(|&i| records[i].clone()).collect();
        println!("test_rmse={}", evaluate_with_threads(&outcome.best, &test, threads)?);
    }
    Ok(())
}

fn run_eval(ckpt: &Path, data: &Path, seed: u64, dims: Option<Dims>, threads: Option<usize>) -> Result<(), CliError> {
    let threads = resolve_threads(threads)?;
    let model = read_checkpoint(ckpt)?;
    let (d, records) = load_dataset(data, dims.or(Some(model.spec().input)))?;
    if d != model.spec().input {
        return Err(ModelError::DimsMismatch { expected: model.spec().input, found: d }.into());
    }
    let s = split(records.len(), PAPER_RATIOS, seed)?;
    if s.test.is_empty() {
        return Err(CliError::Data(format!("{} records leave an empty test split", records.len())));
    }
    let test: Vec<RadarRecord> = s.test.iter().map(|&i| records[i].clone()).collect();
    println!("test_rmse={}", evaluate_with_threads(&model, &test, threads)?);
    Ok(())
}

fn run_gradcheck(kind: ModelKind, stacks: Option<usize>, seed: u64) -> Result<(), CliError> {
    let stacks = stacks.unwrap_or(if kind == ModelKind::ConvLstm { 2 } else { 1 });
    let report = gradcheck_model(kind, stacks, seed)?;
    print!("{report}");
    if report.passed() {
        println!("gradcheck {kind} stacks={stacks}: PASS (max_rel_error={:.3e})", report.max_rel_error());
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "gradcheck {kind} stacks={stacks}: FAIL (max_rel_error={:.3e})",
            report.max_rel_error()
        )))
    }
}

fn run_selftest(fixture: Option<&Path>) -> Result<(), CliError> {
    let report = selftest(fixture);
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        let names: Vec<_> = report.failures().map(|c| c.name).collect();
        Err(CliError::Numerical(format!("selftest failed: {}", names.join(", "))))
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Convert { input, output, dims } => convert(input, output, *dims),
        Command::Synth { config, output, count, seed, format } => {
            synth(config.as_deref(), output, *count, *seed, *format)
        }
        Command::Train(args) => run_train(args),
        Command::Eval { ckpt, data, seed, dims, threads } => run_eval(ckpt, data, *seed, *dims, *threads),
        Command::Gradcheck { model, stacks, seed } => run_gradcheck(*model, *stacks, *seed),
        Command::Selftest { fixture } => run_selftest(fixture.as_deref()),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}
