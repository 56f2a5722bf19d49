//! Central finite-difference probe of the full training loss.

use rand::Rng;

use crate::error::Result;
use crate::loss::{hard_triplet_loss, hard_triplets, HardTriplets};
use crate::matcher::{MatchConfig, Variant};
use crate::model::{Imram, ModelConfig};
use crate::params::{seeded_rng, uniform};
use crate::ram::Aggregator;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::trainer::{batch_gradients, batch_similarity_var, Batch};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub dim: usize,
    pub raw_dim: usize,
    pub word_dim: usize,
    pub vocab_size: usize,
    pub regions: usize,
    pub words: usize,
    pub batch: usize,
    pub steps: usize,
    pub variant: Variant,
    pub aggregator: Aggregator,
    pub lambda: f64,
    pub margin: f64,
    pub step_size: f64,
    /// Coordinates probed in every parameter tensor.
    pub probes_per_tensor: usize,
    /// Instances whose hinge arguments, hard-negative margins or relu
    /// arguments come this close to a kink are not probed.
    pub kink_tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            raw_dim: 8,
            word_dim: 8,
            vocab_size: 20,
            regions: 3,
            words: 4,
            batch: 3,
            steps: 2,
            variant: Variant::Full,
            aggregator: Aggregator::Ours,
            lambda: 9.0,
            margin: 0.2,
            step_size: 1e-5,
            probes_per_tensor: 6,
            kink_tolerance: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// `|numeric - analytic| / max(|analytic|, 1e-8)`.
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub probes: Vec<Probe>,
    /// Probes dropped because a perturbation crossed a kink of the loss
    /// hinge or of a relu.
    pub skipped: usize,
    /// Smallest distance from any kink at the unperturbed point.
    pub kink_distance: f64,
    pub max_rel_error: f64,
    pub loss: f64,
}

impl GradcheckReport {
    pub fn worst(&self) -> Option<&Probe> {
        self.probes.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

pub fn relative_error(numeric: f64, analytic: f64) -> f64 {
    (numeric - analytic).abs() / analytic.abs().max(1e-8)
}

/// Random model and random batch drawn from `cfg.seed`.
pub fn probe_instance(cfg: &GradcheckConfig) -> Result<(Imram, Batch)> {
    let model = Imram::new(
        ModelConfig {
            raw_dim: cfg.raw_dim,
            dim: cfg.dim,
            word_dim: cfg.word_dim,
            vocab_size: cfg.vocab_size,
            matching: MatchConfig {
                steps: cfg.steps,
                variant: cfg.variant,
                lambda: cfg.lambda,
                aggregator: cfg.aggregator,
            },
        },
        cfg.seed,
    )?;
    let mut rng = seeded_rng(cfg.seed.wrapping_add(0x5eed));
    let images = (0..cfg.batch)
        .map(|_| uniform(cfg.regions, cfg.raw_dim, 1.0, &mut rng))
        .collect();
    let texts = (0..cfg.batch)
        .map(|_| (0..cfg.words).map(|_| rng.random_range(0..cfg.vocab_size)).collect())
        .collect();
    Ok((model, Batch::new(images, texts)?))
}

/// Which side of each kink a point lies on, and how close it comes.
#[derive(Debug, Clone, PartialEq)]
struct KinkState {
    terms: HardTriplets,
    hinges: Vec<(usize, bool)>,
    relu: Vec<bool>,
    distance: f64,
}

fn evaluate(model: &Imram, batch: &Batch, margin: f64) -> Result<(f64, Tensor, KinkState)> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let grid = batch_similarity_var(model, &mut tape, &bound, batch)?;
    let scores = tape.value(grid).clone();
    let terms: HardTriplets = hard_triplets(&scores, margin)?;
    let mut distance = terms.kink_distance(&scores);
    let mut relu = Vec::new();
    for arg in tape.relu_inputs() {
        for &v in arg.data() {
            relu.push(v > 0.0);
            distance = distance.min(v.abs());
        }
    }
    let hinges = terms
        .text_negatives
        .iter()
        .chain(&terms.image_negatives)
        .map(|h| (h.negative, h.violation > 0.0))
        .collect();
    Ok((hard_triplet_loss(&scores, margin)?, scores, KinkState { terms, hinges, relu, distance }))
}

/// Loss difference between two score grids sharing one active hinge set,
/// summed term by term.
fn loss_difference(terms: &HardTriplets, plus: &Tensor, minus: &Tensor) -> f64 {
    let delta = |r: usize, c: usize| plus.get(r, c) - minus.get(r, c);
    let mut total = 0.0;
    for t in terms.text_negatives.iter().filter(|t| t.violation > 0.0) {
        total += delta(t.anchor, t.negative) - delta(t.anchor, t.anchor);
    }
    for t in terms.image_negatives.iter().filter(|t| t.violation > 0.0) {
        total += delta(t.negative, t.anchor) - delta(t.anchor, t.anchor);
    }
    total
}

fn same_side(a: &KinkState, b: &KinkState) -> bool {
    a.hinges == b.hinges && a.relu == b.relu
}

/// Compares tape gradients with central differences on a seeded sample
/// of coordinates from every parameter tensor.
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let (mut model, batch) = probe_instance(cfg)?;
    let base = batch_gradients(&model, &batch, cfg.margin)?;
    let (_, _, base_kinks) = evaluate(&model, &batch, cfg.margin)?;
    let near_kink = base_kinks.distance < cfg.kink_tolerance;
    let mut rng = seeded_rng(cfg.seed.wrapping_add(0x9b0e));
    let h = cfg.step_size;
    let mut probes = Vec::new();
    let mut skipped = 0;
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let grad = &base.grads[id.index()];
        let nonzero: Vec<usize> = (0..grad.len()).filter(|&i| grad.data()[i] != 0.0).collect();
        for p in 0..cfg.probes_per_tensor {
            // alternate between active coordinates and arbitrary ones
            let index = if p % 2 == 0 && !nonzero.is_empty() {
                nonzero[rng.random_range(0..nonzero.len())]
            } else {
                rng.random_range(0..grad.len())
            };
            let original = model.params.get(id).data()[index];
            let mut at = |value: f64| {
                model.params.get_mut(id).data_mut()[index] = value;
                evaluate(&model, &batch, cfg.margin)
            };
            let plus = at(original + h);
            let minus = at(original - h);
            model.params.get_mut(id).data_mut()[index] = original;
            let ((_, sp, kp), (_, sm, km)) = (plus?, minus?);
            if near_kink || !same_side(&kp, &base_kinks) || !same_side(&km, &base_kinks) {
                skipped += 1;
                continue;
            }
            let numeric = loss_difference(&base_kinks.terms, &sp, &sm) / (2.0 * h);
            let analytic = grad.data()[index];
            probes.push(Probe {
                param: model.params.name(id).to_string(),
                index,
                analytic,
                numeric,
                rel_error: relative_error(numeric, analytic),
            });
        }
    }
    let max_rel_error = probes.iter().map(|p| p.rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        probes,
        skipped,
        kink_distance: base_kinks.distance,
        max_rel_error,
        loss: base.loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_model_passes() {
        let r = gradcheck(&GradcheckConfig::default()).unwrap();
        assert!(!r.probes.is_empty());
        assert!(r.max_rel_error < 1e-4, "{:?}", r.worst());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 0.1).abs() < 1e-12);
    }
}
