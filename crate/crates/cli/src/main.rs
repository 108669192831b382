//! `sage`: generate synthetic graphs, train and apply inductive embedding
//! models, evaluate them and run the verification suites.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
//! Failures print one `error: <tag>: <reason>` line on stderr.

mod commands;
mod data;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use sage_core::error::ErrorClass;
use sage_core::model::ModelConfig;
use sage_core::train::{Mode, TrainConfig};
use sage_core::SageError;

use data::{Format, GraphArgs};

#[derive(Debug, Parser)]
#[command(name = "sage", version, about = "Inductive node embeddings by sampling and aggregating neighbourhoods")]
pub struct Cli {
    /// Seed for every random choice; overrides a config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 is the reference for determinism, 0 uses all cores.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset.
    Gen(GenArgs),
    /// Train a model; writes the model, a step log and a manifest.
    Train(TrainArgs),
    /// Embed listed nodes with a trained model, without updating it.
    Embed(EmbedArgs),
    /// Fit a logistic classifier on embeddings and report F1.
    Eval(EvalArgs),
    /// Check every aggregator's gradients against central differences.
    Gradcheck(GradcheckArgs),
    /// Time the sampler or inductive against online inference.
    Bench(BenchArgs),
    /// Diagnostic experiments.
    Probe(ProbeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Sbm,
    Multigraph,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum, default_value_t = Kind::Sbm)]
    pub kind: Kind,
    /// Generator parameters as JSON; the calibrated preset when absent.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Feature noise of the preset.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Nodes per graph of the preset.
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Sup,
    Unsup,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Sup => Mode::Sup,
            ModeArg::Unsup => Mode::Unsup,
        }
    }
}

/// Model and optimiser settings. Flags beat `--config`, which beats the
/// built-in defaults.
#[derive(Debug, Clone, Args)]
pub struct ModelFlags {
    /// JSON with `model` and `train` sections, or a run manifest to replay.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Aggregator name from the registry.
    #[arg(long)]
    pub agg: Option<String>,
    /// Search depth K.
    #[arg(long)]
    pub k: Option<usize>,
    /// Neighbours sampled at depth 1.
    #[arg(long)]
    pub s1: Option<usize>,
    /// Neighbours sampled at depth 2.
    #[arg(long)]
    pub s2: Option<usize>,
    /// All sample sizes, comma separated; overrides --s1 and --s2.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Width of every depth.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Negative samples Q.
    #[arg(long)]
    pub q: Option<usize>,
    /// Exponent of the negative-sampling distribution.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Resolved {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn merge(base: &mut serde_json::Value, over: &serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k.clone()).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, o) => *b = o.clone(),
    }
}

impl ModelFlags {
    pub fn resolve(&self, input_dim: usize, seed: Option<u64>, threads: usize) -> sage_core::Result<Resolved> {
        let file: serde_json::Value = match &self.config {
            Some(p) => {
                let v: serde_json::Value = serde_json::from_reader(data::open(p)?)?;
                // a manifest carries its settings under `config`
                v.get("config").cloned().unwrap_or(v)
            }
            None => serde_json::Value::Null,
        };
        let from_file = file.pointer("/train/mode").and_then(|m| serde_json::from_value::<Mode>(m.clone()).ok());
        let mode = self.mode.map(Mode::from).or(from_file).unwrap_or(Mode::Sup);
        let mut v = serde_json::to_value(Resolved {
            model: ModelConfig::new(input_dim),
            train: TrainConfig::new(mode),
        })?;
        if !file.is_null() {
            merge(&mut v, &file);
        }
        let mut r: Resolved = serde_json::from_value(v)?;
        let (m, t) = (&mut r.model, &mut r.train);
        m.input_dim = input_dim;
        t.mode = mode;
        if let Some(k) = self.k {
            let dim = self.dim.or(m.dims.last().copied()).unwrap_or(256);
            *m = m.clone().with_depth(k, dim);
        }
        if let Some(d) = self.dim {
            m.dims = vec![d; m.depth];
        }
        for (i, s) in [self.s1, self.s2].into_iter().enumerate() {
            if let (Some(s), Some(slot)) = (s, m.sample_sizes.get_mut(i)) {
                *slot = s;
            }
        }
        if let Some(s) = &self.sizes {
            m.sample_sizes = s.clone();
        }
        if let Some(a) = &self.agg {
            m.aggregator = a.clone();
        }
        m.negatives = self.q.unwrap_or(m.negatives);
        m.alpha = self.alpha.unwrap_or(m.alpha);
        t.lr = self.lr.unwrap_or(t.lr);
        t.epochs = self.epochs.unwrap_or(t.epochs);
        t.batch_size = self.batch_size.unwrap_or(t.batch_size);
        t.max_steps = self.max_steps.or(t.max_steps);
        t.seed = seed.unwrap_or(t.seed);
        t.threads = threads;
        m.validate()?;
        t.validate()?;
        sage_core::aggregators::AggregatorRegistry::<f32>::builtin().create(&m.aggregator)?;
        Ok(r)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub graph: GraphArgs,
    /// `id<TAB>label` lines; required in supervised mode.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// `id<TAB>role` lines; training sees only the train and val nodes.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub graph: GraphArgs,
    /// Ids to embed, one per line; all nodes when absent.
    #[arg(long)]
    pub nodes: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    pub format: Format,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Embeddings from `sage embed`, either format.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
    /// JSON report.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long, default_value_t = 1e-6)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// JSON report of every case.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(subcommand)]
    pub what: BenchKind,
}

#[derive(Debug, Subcommand)]
pub enum BenchKind {
    /// Minibatch plans per second as TSV.
    Sampler {
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long, default_value_t = 512)]
        batch_size: usize,
        #[arg(long, value_delimiter = ',', default_value = "25,10")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        plans: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embedding unseen nodes with a trained model against an online
    /// skip-gram round, on a synthetic graph. TSV.
    Inference {
        #[arg(long, default_value_t = 2000)]
        nodes: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(subcommand)]
    pub what: ProbeKind,
}

#[derive(Debug, Subcommand)]
pub enum ProbeKind {
    /// Regress clustering coefficients of G(n, p) graphs with a pool model.
    Theorem1 {
        #[arg(long, default_value_t = 40)]
        graphs: usize,
        #[arg(long, default_value_t = 30)]
        train_graphs: usize,
        #[arg(long, default_value_t = 50)]
        nodes: usize,
        #[arg(long, default_value_t = 0.15)]
        p: f64,
        #[arg(long, default_value_t = 8)]
        feature_dim: usize,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Supervised F1 as growing fractions of feature rows become noise.
    Noise {
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75")]
        fractions: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "mean,pool")]
        aggs: Vec<String>,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Worst change of the skip-gram objective under random rotations.
    Rotation {
        #[arg(long, default_value_t = 200)]
        nodes: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failure of a command, mapped onto an exit code.
#[derive(Debug)]
pub enum CliError {
    Core(SageError),
    Numerical(String),
}

impl From<SageError> for CliError {
    fn from(e: SageError) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Core(e) => match e.class() {
                ErrorClass::Usage => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numerical => 4,
            },
            CliError::Numerical(_) => 4,
        }
    }

    fn line(&self) -> String {
        let (tag, msg) = match self {
            CliError::Core(e) => (e.tag(), e.to_string()),
            CliError::Numerical(m) => ("numerical", m.clone()),
        };
        format!("error: {tag}: {}", msg.replace('\n', " "))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            eprintln!("error: usage: {first}");
            return ExitCode::from(2);
        }
    };
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.code())
        }
    }
}
