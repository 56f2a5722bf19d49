//! Mini-batch training with the hard-negative triplet objective.

use std::path::Path;

use rand::seq::SliceRandom;

use crate::checkpoint;
use crate::dataset::{FeatureStore, RetrievalSet};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, RetrievalReport};
use crate::loss::{hard_triplet_loss_var, DEFAULT_MARGIN};
use crate::matcher::MatchConfig;
use crate::model::Imram;
use crate::optim::{clip_global_norm, Optimizer, OptimizerKind, DEFAULT_CLIP, DEFAULT_LR};
use crate::params::{seeded_rng, Bound};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub margin: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip: f64,
    pub seed: u64,
    pub epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: DEFAULT_MARGIN,
            batch_size: 16,
            lr: DEFAULT_LR,
            optimizer: OptimizerKind::Adam,
            clip: DEFAULT_CLIP,
            seed: 0,
            epochs: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Parameter(format!(
                "batch size must be at least 2 for hard negatives, got {}",
                self.batch_size
            )));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::Parameter(format!("margin must be non-negative, got {}", self.margin)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Parameter(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.clip >= 0.0) {
            return Err(Error::Parameter(format!("clip must be non-negative, got {}", self.clip)));
        }
        Ok(())
    }
}

/// Matched pairs: image `b` belongs with text `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub images: Vec<Tensor>,
    pub texts: Vec<Vec<usize>>,
}

impl Batch {
    pub fn new(images: Vec<Tensor>, texts: Vec<Vec<usize>>) -> Result<Self> {
        if images.len() != texts.len() {
            return Err(Error::Input(format!("{} images but {} texts", images.len(), texts.len())));
        }
        if images.len() < 2 {
            return Err(Error::Input("a batch needs at least 2 pairs".into()));
        }
        Ok(Self { images, texts })
    }

    pub fn from_pairs(features: &FeatureStore, tokens: &[Vec<usize>], pairs: &[(usize, usize)]) -> Result<Self> {
        let images = pairs
            .iter()
            .map(|&(i, _)| features.item(i).cloned())
            .collect::<Result<Vec<_>>>()?;
        let texts = pairs
            .iter()
            .map(|&(_, t)| {
                tokens
                    .get(t)
                    .cloned()
                    .ok_or_else(|| Error::Input(format!("text id {t} has no caption")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(images, texts)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Records the `B×B` similarity grid of a batch on `tape`.
pub fn batch_similarity_var(model: &Imram, tape: &mut Tape, bound: &Bound, batch: &Batch) -> Result<Var> {
    let b = batch.len();
    let images = batch
        .images
        .iter()
        .map(|raw| model.forward_image(tape, bound, raw))
        .collect::<Result<Vec<_>>>()?;
    let lengths: Vec<usize> = batch.texts.iter().map(Vec::len).collect();
    let width = lengths.iter().copied().max().unwrap_or(0);
    let padded: Vec<Vec<usize>> = batch
        .texts
        .iter()
        .map(|t| {
            let mut p = t.clone();
            p.resize(width, 0);
            p
        })
        .collect();
    let texts = model.text.forward_padded(tape, bound, &padded, &lengths)?;
    let mut cells = Vec::with_capacity(b * b);
    for &v in &images {
        for &t in &texts {
            cells.push(model.forward_match(tape, bound, v, t)?.total);
        }
    }
    tape.grid(&cells, b, b)
}

/// Inference-only similarity grid of a batch.
pub fn batch_similarity(model: &Imram, batch: &Batch) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let grid = batch_similarity_var(model, &mut tape, &bound, batch)?;
    Ok(tape.value(grid).clone())
}

/// Loss, scores and per-parameter gradients of one batch.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub loss: f64,
    pub scores: Tensor,
    /// Indexed like the model's parameter store.
    pub grads: Vec<Tensor>,
}

pub fn batch_gradients(model: &Imram, batch: &Batch, margin: f64) -> Result<BatchGradients> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let grid = batch_similarity_var(model, &mut tape, &bound, batch)?;
    let scores = tape.value(grid).clone();
    if !scores.is_finite() {
        return Err(Error::NonFinite(format!("similarity grid {scores:?}")));
    }
    let loss_var = hard_triplet_loss_var(&mut tape, grid, margin)?;
    let loss = tape.value(loss_var).item();
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss {loss} for scores {scores:?}")));
    }
    let mut g = tape.backward(loss_var)?;
    let grads = model
        .params
        .ids()
        .map(|id| g.take(bound.var(id)).expect("parameter leaf has a gradient"))
        .collect::<Vec<_>>();
    for (id, t) in model.params.ids().zip(&grads) {
        if !t.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {}", model.params.name(id))));
        }
    }
    Ok(BatchGradients { loss, scores, grads })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

/// Forward, backward, clip and update.
pub fn train_step(model: &mut Imram, opt: &mut Optimizer, batch: &Batch, cfg: &TrainConfig) -> Result<StepReport> {
    let BatchGradients { loss, mut grads, .. } = batch_gradients(model, batch, cfg.margin)?;
    let grad_norm = if cfg.clip > 0.0 {
        clip_global_norm(&mut grads, cfg.clip)
    } else {
        grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt()
    };
    opt.update(&mut model.params, &grads)?;
    Ok(StepReport { loss, grad_norm })
}

/// Deterministic epoch order: a shuffle seeded by `(seed, epoch)`, cut into
/// batches of `batch_size`. A trailing batch of one is merged into the
/// previous batch.
pub fn epoch_batches(pairs: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if pairs < 2 {
        return Err(Error::Input(format!("need at least 2 training pairs, got {pairs}")));
    }
    if batch_size < 2 {
        return Err(Error::Parameter(format!("batch size must be at least 2, got {batch_size}")));
    }
    let mut order: Vec<usize> = (0..pairs).collect();
    let mut rng = seeded_rng(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().map_or(false, |b| b.len() < 2) {
        let tail = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(tail);
    }
    Ok(batches)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
    pub validation: Option<RetrievalReport>,
}

impl EpochReport {
    /// One `key=value` log record.
    pub fn log_line(&self) -> String {
        let mut s = format!("epoch={} steps={} loss={}", self.epoch, self.steps, self.mean_loss);
        if let Some(v) = &self.validation {
            s.push_str(&format!(" val_rsum={}", v.r_sum));
        }
        s
    }
}

/// A model, its optimizer and the epoch counter.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Imram,
    pub optimizer: Optimizer,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub best_rsum: Option<f64>,
}

impl Trainer {
    pub fn new(model: Imram, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = Optimizer::new(config.optimizer, config.lr, &model.params)?;
        Ok(Self {
            model,
            optimizer,
            config,
            epoch: 0,
            best_rsum: None,
        })
    }

    /// Runs one pass over `pairs`, then scores `validation` if given.
    pub fn run_epoch(
        &mut self,
        features: &FeatureStore,
        tokens: &[Vec<usize>],
        pairs: &[(usize, usize)],
        validation: Option<&RetrievalSet>,
    ) -> Result<EpochReport> {
        let order = epoch_batches(pairs.len(), self.config.batch_size, self.config.seed, self.epoch)?;
        let mut total = 0.0;
        for chunk in &order {
            let picked: Vec<(usize, usize)> = chunk.iter().map(|&i| pairs[i]).collect();
            let batch = Batch::from_pairs(features, tokens, &picked)?;
            total += train_step(&mut self.model, &mut self.optimizer, &batch, &self.config)?.loss;
        }
        self.epoch += 1;
        let validation = validation.map(|set| evaluate(&self.model, set)).transpose()?;
        Ok(EpochReport {
            epoch: self.epoch,
            steps: order.len(),
            mean_loss: total / order.len() as f64,
            validation,
        })
    }

    /// Records `rsum` and reports whether it is a new best.
    pub fn observe(&mut self, rsum: f64) -> bool {
        let better = self.best_rsum.map_or(true, |b| rsum > b);
        if better {
            self.best_rsum = Some(rsum);
        }
        better
    }

    /// Parameters, optimizer state and trainer counters.
    pub fn state_entries(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .model
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        out.extend(self.optimizer.state_entries(&self.model.params));
        out.push(("train.epoch".into(), Tensor::scalar(self.epoch as f64)));
        if let Some(b) = self.best_rsum {
            out.push(("train.best_rsum".into(), Tensor::scalar(b)));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let entries = self.state_entries();
        checkpoint::write(path, entries.iter().map(|(n, t)| (n.as_str(), t)))
    }

    /// Continues from a checkpoint written by [`Trainer::save`].
    pub fn resume(path: &Path, matching: MatchConfig, config: TrainConfig) -> Result<Self> {
        let entries = checkpoint::read(path)?;
        Self::from_entries(&entries, matching, config)
    }

    pub fn from_entries(entries: &[(String, Tensor)], matching: MatchConfig, config: TrainConfig) -> Result<Self> {
        let model = Imram::from_entries(entries, matching)?;
        let mut trainer = Self::new(model, config)?;
        trainer.optimizer.restore(&trainer.model.params, entries)?;
        let find = |name: &str| entries.iter().find(|(n, _)| n == name).map(|(_, t)| t.item());
        let epoch = find("train.epoch").ok_or_else(|| Error::Parameter("checkpoint has no trainer state".into()))?;
        if !(epoch >= 0.0) || epoch.fract() != 0.0 {
            return Err(Error::Parameter(format!("bad epoch counter {epoch}")));
        }
        trainer.epoch = epoch as usize;
        trainer.best_rsum = find("train.best_rsum");
        Ok(trainer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::FragmentSet;
    use crate::loss::hard_triplets;
    use crate::model::ModelConfig;
    use crate::params::uniform;

    fn model(seed: u64) -> Imram {
        let cfg = ModelConfig {
            raw_dim: 5,
            dim: 6,
            word_dim: 4,
            vocab_size: 12,
            matching: MatchConfig {
                steps: 2,
                ..MatchConfig::default()
            },
        };
        Imram::new(cfg, seed).unwrap()
    }

    fn batch(b: usize, seed: u64) -> Batch {
        let mut rng = seeded_rng(seed);
        let images = (0..b).map(|_| uniform(3, 5, 1.0, &mut rng)).collect();
        let texts = (0..b).map(|i| vec![1 + i % 11, 1 + (i * 5 + 2) % 11, 1 + (i + 7) % 11]).collect();
        Batch::new(images, texts).unwrap()
    }

    fn pairwise(m: &Imram, batch: &Batch, a: usize, b: usize) -> f64 {
        let img = m.encode_image(&batch.images[a], a).unwrap();
        let txt = m.encode_text(&batch.texts[b], b).unwrap();
        m.score(&img, &txt).unwrap().total
    }

    #[test]
    fn grid_matches_pairwise_scores() {
        let m = model(1);
        let bt = batch(3, 2);
        let grid = batch_similarity(&m, &bt).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert!((grid.get(a, b) - pairwise(&m, &bt, a, b)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_slots_give_equal_diagonal() {
        let m = model(1);
        let one = batch(2, 3);
        let bt = Batch::new(vec![one.images[0].clone(); 2], vec![one.texts[0].clone(); 2]).unwrap();
        let grid = batch_similarity(&m, &bt).unwrap();
        assert_eq!(grid.get(0, 0), grid.get(1, 1));
    }

    #[test]
    fn rejects_small_batches() {
        assert!(Batch::new(vec![Tensor::zeros(1, 5)], vec![vec![1]]).is_err());
        assert!(TrainConfig { batch_size: 1, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn inactive_hinges_leave_parameters_unchanged() {
        let mut m = model(4);
        let bt = batch(3, 5);
        let before = m.params.clone();
        let mut opt = Optimizer::adam(1e-3, &m.params).unwrap();
        // identical pairs under margin 0 sit exactly on the flat side of every hinge
        let same = Batch::new(vec![bt.images[0].clone(); 3], vec![bt.texts[0].clone(); 3]).unwrap();
        let cfg = TrainConfig { margin: 0.0, ..TrainConfig::default() };
        let r = train_step(&mut m, &mut opt, &same, &cfg).unwrap();
        assert_eq!(r.loss, 0.0);
        assert_eq!(r.grad_norm, 0.0);
        assert_eq!(m.params, before);
    }

    #[test]
    fn gradient_stays_on_active_path() {
        let m = model(6);
        let mut bt = batch(3, 7);
        // give each text its own tokens so unused rows are identifiable
        bt.texts = vec![vec![1, 2], vec![3, 4], vec![5, 6]];
        let g = batch_gradients(&m, &bt, 0.2).unwrap();
        let terms = hard_triplets(&g.scores, 0.2).unwrap();
        let mut used_texts = std::collections::BTreeSet::new();
        for t in &terms.text_negatives {
            if t.violation > 0.0 {
                used_texts.extend([t.anchor, t.negative]);
            }
        }
        for t in &terms.image_negatives {
            if t.violation > 0.0 {
                used_texts.insert(t.anchor);
            }
        }
        let emb = m.params.find("text.embedding").unwrap();
        let eg = &g.grads[emb.index()];
        for token in 0..12 {
            let on_path = used_texts.iter().any(|&b| bt.texts[b].contains(&token));
            let row_norm: f64 = eg.row(token).iter().map(|v| v.abs()).sum();
            if !on_path {
                assert_eq!(row_norm, 0.0, "token {token}");
            }
        }
        assert_eq!(eg.row(0).iter().map(|v| v.abs()).sum::<f64>(), 0.0);
        assert_eq!(eg.row(11).iter().map(|v| v.abs()).sum::<f64>(), 0.0);
    }

    #[test]
    fn batches_cover_pairs_deterministically() {
        let a = epoch_batches(11, 4, 3, 0).unwrap();
        assert_eq!(a, epoch_batches(11, 4, 3, 0).unwrap());
        assert_ne!(a, epoch_batches(11, 4, 3, 1).unwrap());
        let mut all: Vec<usize> = a.iter().flatten().copied().collect();
        all.sort();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
        let b = epoch_batches(9, 4, 0, 0).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 5]);
    }

    #[test]
    fn repeated_batch_overfits() {
        let mut m = model(10);
        let bt = batch(4, 11);
        let cfg = TrainConfig { lr: 5e-3, ..TrainConfig::default() };
        let mut opt = Optimizer::adam(cfg.lr, &m.params).unwrap();
        let first = train_step(&mut m, &mut opt, &bt, &cfg).unwrap().loss;
        let mut last = first;
        for _ in 0..199 {
            last = train_step(&mut m, &mut opt, &bt, &cfg).unwrap().loss;
        }
        assert!(first > 0.0);
        assert!(last < 0.1 * first, "{first} -> {last}");
    }

    #[test]
    fn resume_reproduces_next_step() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.imrm");
        let bt = batch(3, 12);
        let cfg = TrainConfig { lr: 1e-3, ..TrainConfig::default() };
        let mut t = Trainer::new(model(13), cfg).unwrap();
        train_step(&mut t.model, &mut t.optimizer, &bt, &cfg).unwrap();
        t.epoch = 1;
        t.save(&path).unwrap();
        let mut back = Trainer::resume(&path, t.model.config.matching, cfg).unwrap();
        assert_eq!(back.epoch, 1);
        train_step(&mut t.model, &mut t.optimizer, &bt, &cfg).unwrap();
        train_step(&mut back.model, &mut back.optimizer, &bt, &cfg).unwrap();
        assert_eq!(t.model.params, back.model.params);
        assert_eq!(t.optimizer, back.optimizer);
    }

    #[test]
    fn fragment_sets_are_unit_rows() {
        let m = model(2);
        let bt = batch(2, 1);
        let f: FragmentSet = m.encode_image(&bt.images[0], 0).unwrap();
        for i in 0..f.len() {
            let n: f64 = f.vectors.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }
}
