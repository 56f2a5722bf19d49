//! Command-line front end. Exit codes: 0 success, 2 usage, 3 numeric
//! failure, 4 I/O or format.

use std::ffi::OsString;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::dataset::{synth_dataset, write_dataset, Dataset, RetrievalSet, SynthConfig};
use crate::error::Error;
use crate::evaluator::{evaluate, salient_indices};
use crate::gradcheck::{gradcheck, GradcheckConfig};
use crate::matcher::Variant;
use crate::model::{Imram, ModelConfig};
use crate::optim::OptimizerKind;
use crate::ram::Aggregator;
use crate::trainer::Trainer;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Largest relative gradient error `gradcheck` accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn io(err: Error) -> Self {
        Self {
            code: EXIT_IO,
            message: err.to_string(),
        }
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        let code = match &err {
            Error::Config(_) | Error::Parameter(_) => EXIT_USAGE,
            Error::NonFinite(_) => EXIT_NUMERIC,
            Error::Io(_) | Error::Format { .. } | Error::Vocabulary { .. } | Error::Input(_) => EXIT_IO,
            Error::Shape { .. } | Error::Tape(_) => 1,
        };
        Self {
            code,
            message: err.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        Self::io(err.into())
    }
}

#[derive(Debug, Parser)]
#[command(name = "imram", version, about = "Iterative image-text matching with recurrent attention memory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic matched-pair dataset to --data.
    GenData(GenDataArgs),
    /// Train a model on --data and keep the best checkpoint.
    Train(TrainArgs),
    /// Report bidirectional R@1/5/10 on the validation pairs.
    Eval(Common),
    /// Print per-step and total similarity of one image and one text.
    Score(PairArgs),
    /// Compare tape gradients with finite differences on a fresh model.
    Gradcheck(GradcheckArgs),
    /// List words scoring above the per-step mean for one pair.
    Salience(SalienceArgs),
}

/// Flags shared by every command. Unset flags fall back to the config
/// file, then to built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of matching steps.
    #[arg(long = "K", value_name = "N")]
    pub steps: Option<usize>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub aggregator: Option<Aggregator>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Shared embedding size.
    #[arg(long = "d", value_name = "N")]
    pub dim: Option<usize>,
    #[arg(long)]
    pub word_dim: Option<usize>,
    #[arg(long)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub clip: Option<f64>,
}

impl Common {
    /// Default, then config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = RunConfig::default();
        if let Some(path) = &self.config {
            c.apply_file(path)?;
        }
        macro_rules! over {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag.clone() { c.$field = v; })*
            };
        }
        over!(seed => seed, steps => steps, variant => variant, aggregator => aggregator,
              lambda => lambda, margin => margin, lr => lr, batch => batch, epochs => epochs,
              dim => dim, word_dim => word_dim, optimizer => optimizer, clip => clip);
        if let Some(d) = &self.data {
            c.data = Some(d.clone());
        }
        if let Some(p) = &self.checkpoint {
            c.checkpoint = Some(p.clone());
        }
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    pub pairs: u64,
    /// Pairs held out into val.manifest.
    #[arg(long, default_value_t = 0)]
    pub val_pairs: usize,
    #[arg(long, default_value_t = 4)]
    pub regions: usize,
    #[arg(long, default_value_t = 4)]
    pub words: usize,
    #[arg(long, default_value_t = 16)]
    pub raw_dim: usize,
    #[arg(long, default_value_t = 41)]
    pub vocab: usize,
    #[arg(long, default_value_t = 1.0)]
    pub signal: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long, value_name = "PATH")]
    pub resume: Option<PathBuf>,
    /// Append log records to this file as well as stdout.
    #[arg(long, value_name = "PATH")]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PairArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "ID")]
    pub image: usize,
    #[arg(long, value_name = "ID")]
    pub text: usize,
}

#[derive(Debug, Args)]
pub struct SalienceArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    /// 1-based matching step; all steps when omitted.
    #[arg(long)]
    pub step: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Only --seed, --K, --variant, --aggregator, --lambda, --margin and --d apply.
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 6)]
    pub probes: usize,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(a) => gen_data(&a, out),
        Command::Train(a) => train(&a, out),
        Command::Eval(c) => eval(&c, out),
        Command::Score(a) => score(&a, out),
        Command::Gradcheck(a) => run_gradcheck(&a, out),
        Command::Salience(a) => salience(&a, out),
    }
}

fn data_dir(cfg: &RunConfig) -> Result<&Path, CliError> {
    let dir = cfg.data.as_deref().ok_or_else(|| CliError::usage("--data DIR is required"))?;
    if !dir.is_dir() {
        return Err(CliError::usage(format!("dataset directory {} does not exist", dir.display())));
    }
    Ok(dir)
}

fn checkpoint_path(cfg: &RunConfig) -> Result<&Path, CliError> {
    cfg.checkpoint
        .as_deref()
        .ok_or_else(|| CliError::usage("--checkpoint PATH is required"))
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    Dataset::load(data_dir(cfg)?).map_err(CliError::io)
}

fn load_model(cfg: &RunConfig) -> Result<Imram, CliError> {
    cfg.matching().validate()?;
    Imram::load(checkpoint_path(cfg)?, cfg.matching()).map_err(CliError::io)
}

fn gen_data(a: &GenDataArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = a.common.resolve()?;
    let dir = cfg.data.as_deref().ok_or_else(|| CliError::usage("--data DIR is required"))?;
    let synth = SynthConfig {
        pairs: a.pairs as usize,
        regions: a.regions,
        words: a.words,
        raw_dim: a.raw_dim,
        vocab_size: a.vocab,
        seed: cfg.seed,
        signal: a.signal,
    };
    let data = synth_dataset(&synth)?;
    write_dataset(dir, "synthetic", &data, a.val_pairs)?;
    writeln!(
        out,
        "pairs={} train={} val={} regions={} words={} raw_dim={} vocab={} seed={} signal={}",
        a.pairs,
        a.pairs as usize - a.val_pairs,
        a.val_pairs,
        a.regions,
        a.words,
        a.raw_dim,
        a.vocab,
        cfg.seed,
        a.signal
    )?;
    Ok(())
}

fn train(a: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = a.common.resolve()?;
    let best_path = checkpoint_path(&cfg)?.to_path_buf();
    let data = load_dataset(&cfg)?;
    let last_path = PathBuf::from(format!("{}.last", best_path.display()));
    let training = cfg.training();
    training.validate()?;
    let mut trainer = match &a.resume {
        Some(path) => Trainer::resume(path, cfg.matching(), training).map_err(CliError::io)?,
        None => {
            let model = Imram::new(
                ModelConfig {
                    raw_dim: data.features.raw_dim(),
                    dim: cfg.dim,
                    word_dim: cfg.word_dim,
                    vocab_size: data.vocab.len(),
                    matching: cfg.matching(),
                },
                cfg.seed,
            )?;
            Trainer::new(model, training)?
        }
    };
    let val = RetrievalSet::from_pairs(&data.features, &data.tokens, data.eval_pairs())?;
    let mut log = match &a.log {
        Some(p) => Some(OpenOptions::new().create(true).append(true).open(p)?),
        None => None,
    };
    let mut record = |line: &str, out: &mut dyn Write| -> Result<(), CliError> {
        writeln!(out, "{line}")?;
        if let Some(f) = log.as_mut() {
            writeln!(f, "{line}")?;
        }
        Ok(())
    };
    record(
        &format!(
            "start epoch={} epochs={} pairs={} params={} K={} variant={} aggregator={}",
            trainer.epoch,
            training.epochs,
            data.train.pairs.len(),
            trainer.model.params.scalar_count(),
            cfg.steps,
            cfg.variant,
            trainer.model.config.matching.aggregator
        ),
        out,
    )?;
    while trainer.epoch < training.epochs {
        let report = trainer.run_epoch(&data.features, &data.tokens, &data.train.pairs, Some(&val))?;
        let rsum = report.validation.map(|v| v.r_sum).unwrap_or(f64::NEG_INFINITY);
        let best = trainer.observe(rsum);
        record(&format!("{} best={}", report.log_line(), best), out)?;
        if best {
            trainer.save(&best_path)?;
        }
        trainer.save(&last_path)?;
    }
    record(
        &format!("done best_rsum={}", trainer.best_rsum.unwrap_or(f64::NAN)),
        out,
    )?;
    Ok(())
}

fn eval(c: &Common, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = c.resolve()?;
    let data = load_dataset(&cfg)?;
    let model = load_model(&cfg)?;
    let set = RetrievalSet::from_pairs(&data.features, &data.tokens, data.eval_pairs())?;
    let report = evaluate(&model, &set)?;
    writeln!(out, "{report}")?;
    write!(out, "{}", report.key_values())?;
    Ok(())
}

fn encode_pair(
    a: &PairArgs,
) -> Result<(RunConfig, Dataset, Imram, crate::encoders::FragmentSet, crate::encoders::FragmentSet), CliError> {
    let cfg = a.common.resolve()?;
    let data = load_dataset(&cfg)?;
    let model = load_model(&cfg)?;
    let raw = data.features.item(a.image).map_err(|e| CliError::usage(e.to_string()))?;
    let ids = data
        .tokens
        .get(a.text)
        .ok_or_else(|| CliError::usage(format!("text id {} not in captions", a.text)))?;
    let image = model.encode_image(raw, a.image).map_err(CliError::io)?;
    let text = model.encode_text(ids, a.text).map_err(CliError::io)?;
    Ok((cfg, data, model, image, text))
}

fn score(a: &PairArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (_, _, model, image, text) = encode_pair(a)?;
    let s = model.score(&image, &text)?;
    for (k, v) in s.per_step.iter().enumerate() {
        writeln!(out, "step={} score={v:?}", k + 1)?;
    }
    writeln!(out, "total={:?}", s.total)?;
    Ok(())
}

fn salience(a: &SalienceArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (cfg, data, model, image, text) = encode_pair(&a.pair)?;
    if !cfg.variant.uses_text() {
        return Err(CliError::usage("salience needs --variant text or full"));
    }
    let detail = model.score_detailed(&image, &text)?;
    let steps: Vec<usize> = match a.step {
        Some(k) if k == 0 || k > cfg.steps => {
            return Err(CliError::usage(format!("--step must lie in 1..={}", cfg.steps)))
        }
        Some(k) => vec![k],
        None => (1..=cfg.steps).collect(),
    };
    let ids = &data.tokens[a.pair.text];
    for k in steps {
        let scores = detail.word_scores[k - 1].as_ref().expect("text term active");
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        let salient = salient_indices(scores);
        let tokens: Vec<&str> = salient
            .iter()
            .map(|&j| data.vocab.token(ids[j]).unwrap_or("?"))
            .collect();
        let joined = |v: Vec<String>| v.join(",");
        writeln!(
            out,
            "step={k} mean={mean:?} salient={} tokens={}",
            joined(salient.iter().map(usize::to_string).collect()),
            joined(tokens.iter().map(|t| t.to_string()).collect())
        )?;
        for (j, s) in scores.iter().enumerate() {
            let token = data.vocab.token(ids[j]).unwrap_or("?");
            writeln!(out, "  word={j} token={token} score={s:?} salient={}", salient.contains(&j))?;
        }
    }
    Ok(())
}

fn run_gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let base = GradcheckConfig::default();
    let c = &a.common;
    let cfg = GradcheckConfig {
        dim: c.dim.unwrap_or(base.dim),
        steps: c.steps.unwrap_or(base.steps),
        variant: c.variant.unwrap_or(base.variant),
        aggregator: c.aggregator.unwrap_or(base.aggregator),
        lambda: c.lambda.unwrap_or(base.lambda),
        margin: c.margin.unwrap_or(base.margin),
        seed: c.seed.unwrap_or(base.seed),
        probes_per_tensor: a.probes,
        ..base
    };
    let report = gradcheck(&cfg)?;
    writeln!(
        out,
        "probes={} skipped={} loss={:?} max_rel_error={:e}",
        report.probes.len(),
        report.skipped,
        report.loss,
        report.max_rel_error
    )?;
    if let Some(w) = report.worst() {
        writeln!(
            out,
            "worst param={} index={} analytic={:e} numeric={:e}",
            w.param, w.index, w.analytic, w.numeric
        )?;
    }
    if !(report.max_rel_error < GRADCHECK_TOLERANCE) {
        return Err(CliError {
            code: EXIT_NUMERIC,
            message: format!("max relative error {:e} exceeds {GRADCHECK_TOLERANCE:e}", report.max_rel_error),
        });
    }
    Ok(())
}
