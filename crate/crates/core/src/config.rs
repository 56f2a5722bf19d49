//! `key=value` run configuration shared by the command-line tools.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::matcher::{MatchConfig, Variant};
use crate::optim::OptimizerKind;
use crate::ram::Aggregator;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dim: usize,
    pub word_dim: usize,
    pub steps: usize,
    pub variant: Variant,
    pub aggregator: Aggregator,
    pub lambda: f64,
    pub margin: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub clip: f64,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = MatchConfig::default();
        let t = TrainConfig::default();
        Self {
            dim: 1024,
            word_dim: 300,
            steps: m.steps,
            variant: m.variant,
            aggregator: m.aggregator,
            lambda: m.lambda,
            margin: t.margin,
            lr: t.lr,
            batch: t.batch_size,
            epochs: t.epochs,
            seed: t.seed,
            optimizer: t.optimizer,
            clip: t.clip,
            data: None,
            checkpoint: None,
        }
    }
}

pub const KEYS: [&str; 15] = [
    "d", "word_dim", "K", "variant", "aggregator", "lambda", "margin", "lr", "batch", "epochs", "seed", "optimizer",
    "clip", "data", "checkpoint",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}={value}: {e}")))
}

impl RunConfig {
    /// Sets one entry from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "d" => self.dim = parse(key, value)?,
            "word_dim" => self.word_dim = parse(key, value)?,
            "K" => self.steps = parse(key, value)?,
            "variant" => self.variant = parse(key, value)?,
            "aggregator" => self.aggregator = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "margin" => self.margin = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "optimizer" => self.optimizer = parse(key, value)?,
            "clip" => self.clip = parse(key, value)?,
            "data" => self.data = Some(value.into()),
            "checkpoint" => self.checkpoint = Some(value.into()),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies every `key=value` line of `text`; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "d={}\nword_dim={}\nK={}\nvariant={}\naggregator={}\nlambda={}\nmargin={}\nlr={}\nbatch={}\nepochs={}\nseed={}\noptimizer={}\nclip={}\n",
            self.dim,
            self.word_dim,
            self.steps,
            self.variant,
            self.aggregator,
            self.lambda,
            self.margin,
            self.lr,
            self.batch,
            self.epochs,
            self.seed,
            self.optimizer,
            self.clip
        );
        if let Some(d) = &self.data {
            s.push_str(&format!("data={}\n", d.display()));
        }
        if let Some(c) = &self.checkpoint {
            s.push_str(&format!("checkpoint={}\n", c.display()));
        }
        s
    }

    pub fn matching(&self) -> MatchConfig {
        MatchConfig {
            steps: self.steps,
            variant: self.variant,
            lambda: self.lambda,
            aggregator: self.aggregator,
        }
    }

    pub fn training(&self) -> TrainConfig {
        TrainConfig {
            margin: self.margin,
            batch_size: self.batch,
            lr: self.lr,
            optimizer: self.optimizer,
            clip: self.clip,
            seed: self.seed,
            epochs: self.epochs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut c = RunConfig::default();
        c.set("K", "2").unwrap();
        c.set("variant", "text").unwrap();
        c.set("data", "/tmp/x").unwrap();
        c.set("checkpoint", "/tmp/m.imrm").unwrap();
        assert_eq!(RunConfig::parse(&c.render()).unwrap(), c);
        assert_eq!(KEYS.len(), c.render().lines().count());
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(matches!(RunConfig::parse("depth=3"), Err(Error::Config(_))));
        assert!(RunConfig::parse("K=two").is_err());
        assert!(RunConfig::parse("aggregator=max").is_err());
        assert!(RunConfig::parse("just words").is_err());
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = RunConfig::parse("# demo\n\nlambda = 4.5\n").unwrap();
        assert_eq!(c.lambda, 4.5);
        assert_eq!(c.steps, 3);
    }
}
