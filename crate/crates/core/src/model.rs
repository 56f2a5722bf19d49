//! The complete matching model: encoders plus the two RAM blocks.

use std::path::Path;

use crate::checkpoint;
use crate::encoders::{FragmentSet, ImageProjection, TextEncoder};
use crate::error::{Error, Result};
use crate::matcher::{iterate, MatchConfig, MatchVars, StepScores};
use crate::params::{seeded_rng, Bound, ParamStore};
use crate::ram::{Aggregator, RamBlock};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Architecture hyperparameters. `dim` is both the GRU hidden size and
/// the shared fragment dimensionality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub raw_dim: usize,
    pub dim: usize,
    pub word_dim: usize,
    pub vocab_size: usize,
    pub matching: MatchConfig,
}

impl ModelConfig {
    /// Full-size settings: 1024-d fragments and 300-d word embeddings.
    pub fn new(raw_dim: usize, vocab_size: usize) -> Self {
        Self {
            raw_dim,
            dim: 1024,
            word_dim: 300,
            vocab_size,
            matching: MatchConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.raw_dim == 0 || self.dim == 0 || self.word_dim == 0 || self.vocab_size == 0 {
            return Err(Error::Parameter(format!("all model sizes must be positive: {self:?}")));
        }
        self.matching.validate()
    }
}

/// Checkpoint entries under these prefixes are not model parameters.
pub const STATE_PREFIXES: [&str; 2] = ["opt.", "train."];

pub fn is_training_state(name: &str) -> bool {
    STATE_PREFIXES.iter().any(|p| name.starts_with(p))
}

#[derive(Debug, Clone)]
pub struct Imram {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub image: ImageProjection,
    pub text: TextEncoder,
    pub ram_v: RamBlock,
    pub ram_t: RamBlock,
}

/// Scores of one pair together with the per-fragment terms of each step.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchDetail {
    pub scores: StepScores,
    /// Per step, the region-based scores (image term active).
    pub region_scores: Vec<Option<Vec<f64>>>,
    /// Per step, the word-based scores (text term active).
    pub word_scores: Vec<Option<Vec<f64>>>,
}

impl Imram {
    /// Fresh model with seeded initialization.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let mut params = ParamStore::new();
        let image = ImageProjection::new(&mut params, config.raw_dim, config.dim, &mut rng)?;
        let text = TextEncoder::new(&mut params, config.vocab_size, config.word_dim, config.dim, &mut rng)?;
        let m = &config.matching;
        let ram_v = RamBlock::new(&mut params, "ram_v", config.dim, m.aggregator, m.lambda, &mut rng)?;
        let ram_t = RamBlock::new(&mut params, "ram_t", config.dim, m.aggregator, m.lambda, &mut rng)?;
        Ok(Self {
            config,
            params,
            image,
            text,
            ram_v,
            ram_t,
        })
    }

    /// Rebuilds a model around stored parameters. Sizes and the aggregator
    /// are read from the tensors; K, variant and lambda come from `matching`.
    pub fn from_params(params: ParamStore, matching: MatchConfig) -> Result<Self> {
        let shape = |name: &str| {
            params
                .find(name)
                .map(|id| params.get(id).shape())
                .ok_or_else(|| Error::Parameter(format!("missing parameter {name}")))
        };
        let (dim, raw_dim) = shape("image.weight")?;
        let (vocab_size, word_dim) = shape("text.embedding")?;
        let aggregator = Aggregator::detect(&params, "ram_v");
        if Aggregator::detect(&params, "ram_t") != aggregator {
            return Err(Error::Parameter("RAM blocks use different aggregators".into()));
        }
        let matching = MatchConfig {
            aggregator,
            ..matching
        };
        let config = ModelConfig {
            raw_dim,
            dim,
            word_dim,
            vocab_size,
            matching,
        };
        config.validate()?;

        // Build a reference layout and check every name and shape matches.
        let mut reference = Imram::new(config, 0)?;
        reference.params.assign_from(&params)?;
        Ok(reference)
    }

    /// Rebuilds a model from checkpoint entries, skipping optimizer and
    /// trainer state.
    pub fn from_entries(entries: &[(String, Tensor)], matching: MatchConfig) -> Result<Self> {
        let mut params = ParamStore::new();
        for (name, t) in entries {
            if !is_training_state(name) {
                params.add(name.clone(), t.clone())?;
            }
        }
        Self::from_params(params, matching)
    }

    pub fn load(path: &Path, matching: MatchConfig) -> Result<Self> {
        Self::from_entries(&checkpoint::read(path)?, matching)
    }

    /// Writes the parameters alone.
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write(path, self.params.iter())
    }

    /// Changes K, variant or lambda. The aggregator is fixed by the weights.
    pub fn set_matching(&mut self, matching: MatchConfig) -> Result<()> {
        matching.validate()?;
        if matching.aggregator != self.config.matching.aggregator {
            return Err(Error::Parameter(format!(
                "model was built with aggregator {}, not {}",
                self.config.matching.aggregator, matching.aggregator
            )));
        }
        self.config.matching = matching;
        self.ram_v.lambda = matching.lambda;
        self.ram_t.lambda = matching.lambda;
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Bound {
        Bound::all(tape, &self.params, requires_grad)
    }

    fn bind_matching(&self, tape: &mut Tape) -> Bound {
        let mut ids = self.ram_v.param_ids();
        ids.extend(self.ram_t.param_ids());
        Bound::subset(tape, &self.params, &ids, false)
    }

    pub fn forward_image(&self, tape: &mut Tape, bound: &Bound, raw: &Tensor) -> Result<Var> {
        let raw = tape.constant(raw.clone());
        self.image.forward(tape, bound, raw)
    }

    pub fn forward_text(&self, tape: &mut Tape, bound: &Bound, ids: &[usize]) -> Result<Var> {
        self.text.forward(tape, bound, ids)
    }

    pub fn forward_match(&self, tape: &mut Tape, bound: &Bound, v: Var, t: Var) -> Result<MatchVars> {
        iterate(tape, bound, &self.ram_v, &self.ram_t, v, t, &self.config.matching)
    }

    pub fn encode_image(&self, raw: &Tensor, item_id: usize) -> Result<FragmentSet> {
        let mut tape = Tape::new();
        let bound = Bound::subset(&mut tape, &self.params, &self.image.param_ids(), false);
        let v = self.forward_image(&mut tape, &bound, raw)?;
        FragmentSet::new(item_id, tape.value(v).clone())
    }

    pub fn encode_text(&self, ids: &[usize], item_id: usize) -> Result<FragmentSet> {
        let mut tape = Tape::new();
        let bound = Bound::subset(&mut tape, &self.params, &self.text.param_ids(), false);
        let t = self.forward_text(&mut tape, &bound, ids)?;
        FragmentSet::new(item_id, tape.value(t).clone())
    }

    pub fn score(&self, image: &FragmentSet, text: &FragmentSet) -> Result<StepScores> {
        Ok(self.score_detailed(image, text)?.scores)
    }

    pub fn score_detailed(&self, image: &FragmentSet, text: &FragmentSet) -> Result<MatchDetail> {
        let mut tape = Tape::new();
        let bound = self.bind_matching(&mut tape);
        let v = tape.constant(image.vectors.clone());
        let t = tape.constant(text.vectors.clone());
        let vars = self.forward_match(&mut tape, &bound, v, t)?;
        let column = |var: Option<Var>| var.map(|c| tape.value(c).data().to_vec());
        Ok(MatchDetail {
            scores: vars.read(&tape),
            region_scores: vars.steps.iter().map(|s| column(s.region_scores)).collect(),
            word_scores: vars.steps.iter().map(|s| column(s.word_scores)).collect(),
        })
    }

    /// `F(I_a, S_b)` for every image `a` and text `b`.
    pub fn similarity_matrix(&self, images: &[FragmentSet], texts: &[FragmentSet]) -> Result<Tensor> {
        let mut sim = Tensor::zeros(images.len(), texts.len());
        let mut tape = Tape::new();
        for (a, image) in images.iter().enumerate() {
            for (b, text) in texts.iter().enumerate() {
                tape.clear();
                let bound = self.bind_matching(&mut tape);
                let v = tape.constant(image.vectors.clone());
                let t = tape.constant(text.vectors.clone());
                let vars = self.forward_match(&mut tape, &bound, v, t)?;
                sim.set(a, b, tape.value(vars.total).item());
            }
        }
        Ok(sim)
    }
}
