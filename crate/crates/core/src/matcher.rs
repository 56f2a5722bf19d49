//! K-step iterative matching between one image and one text.
//!
//! Two independent RAM blocks run side by side. The image-grounded block
//! updates region queries against the original words; the text-grounded
//! block updates word queries against the original regions. Every step
//! yields a score (mean region-to-context cosine plus mean
//! context-to-word cosine) and the image-text similarity is their sum.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::params::Bound;
use crate::ram::{Aggregator, RamBlock, DEFAULT_LAMBDA};
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, NORM_EPS};

/// Which grounded terms of the step score are used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    /// Region-grounded term only.
    Image,
    /// Word-grounded term only.
    Text,
    #[default]
    Full,
}

impl Variant {
    pub fn uses_image(self) -> bool {
        matches!(self, Variant::Image | Variant::Full)
    }

    pub fn uses_text(self) -> bool {
        matches!(self, Variant::Text | Variant::Full)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Image => "image",
            Variant::Text => "text",
            Variant::Full => "full",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(Variant::Image),
            "text" => Ok(Variant::Text),
            "full" => Ok(Variant::Full),
            _ => Err(Error::Config(format!("unknown variant {s:?} (image|text|full)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig {
    /// Number of matching steps K.
    pub steps: usize,
    pub variant: Variant,
    pub lambda: f64,
    pub aggregator: Aggregator,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            steps: 3,
            variant: Variant::Full,
            lambda: DEFAULT_LAMBDA,
            aggregator: Aggregator::Ours,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Parameter("K must be at least 1".into()));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::Parameter(format!("lambda must be positive, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Per-step scores F_k and their sum F.
#[derive(Debug, Clone, PartialEq)]
pub struct StepScores {
    pub per_step: Vec<f64>,
    pub total: f64,
}

impl StepScores {
    pub fn from_steps(per_step: Vec<f64>) -> Self {
        let total = total_similarity(&per_step);
        Self { per_step, total }
    }
}

/// `F = Σ_k F_k`, summed in step order.
pub fn total_similarity(per_step: &[f64]) -> f64 {
    per_step.iter().fold(0.0, |acc, v| acc + v)
}

/// One matching step recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct StepVars {
    /// `m×1` region-based scores, when the image term is active.
    pub region_scores: Option<Var>,
    /// `n×1` word-based scores, when the text term is active.
    pub word_scores: Option<Var>,
    /// `1×1` step score.
    pub score: Var,
}

#[derive(Debug, Clone)]
pub struct MatchVars {
    pub steps: Vec<StepVars>,
    pub total: Var,
}

impl MatchVars {
    pub fn read(&self, tape: &Tape) -> StepScores {
        let per_step: Vec<f64> = self.steps.iter().map(|s| tape.value(s.score).item()).collect();
        StepScores {
            per_step,
            total: tape.value(self.total).item(),
        }
    }
}

/// Cosine between row `i` of `a` and row `i` of `b`, as an `m×1` column.
pub fn rowwise_cosine(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::shape("rowwise_cosine", tape.shape(a), tape.shape(b)));
    }
    let an = tape.l2_normalize_rows(a, NORM_EPS)?;
    let bn = tape.l2_normalize_rows(b, NORM_EPS)?;
    let prod = tape.mul(an, bn)?;
    let ones = tape.constant(Tensor::filled(tape.shape(a).1, 1, 1.0));
    tape.matmul(prod, ones)
}

fn mean_column(tape: &mut Tape, col: Var) -> Var {
    let n = tape.shape(col).0;
    let s = tape.sum(col);
    tape.scale(s, 1.0 / n as f64)
}

/// Step score from whichever grounded terms are present:
/// `(1/m) Σ_i sim(v_i, c^v_i) + (1/n) Σ_j sim(c^t_j, t_j)`.
pub fn step_score(
    tape: &mut Tape,
    regions: Var,
    region_context: Option<Var>,
    words: Var,
    word_context: Option<Var>,
) -> Result<StepVars> {
    let region_scores = region_context
        .map(|c| rowwise_cosine(tape, regions, c))
        .transpose()?;
    let word_scores = word_context
        .map(|c| rowwise_cosine(tape, c, words))
        .transpose()?;
    let terms: Vec<Var> = [region_scores, word_scores]
        .into_iter()
        .flatten()
        .map(|col| mean_column(tape, col))
        .collect();
    let score = match terms.as_slice() {
        [single] => *single,
        [a, b] => tape.add(*a, *b)?,
        _ => return Err(Error::Input("step score needs at least one grounded term".into())),
    };
    Ok(StepVars {
        region_scores,
        word_scores,
        score,
    })
}

/// Runs K matching steps between regions `v` (m×d) and words `t` (n×d).
///
/// Only the query side evolves; responses are always the original sets.
/// The distillation of the final step is skipped because nothing reads it.
pub fn iterate(
    tape: &mut Tape,
    bound: &Bound,
    image_block: &RamBlock,
    text_block: &RamBlock,
    v: Var,
    t: Var,
    cfg: &MatchConfig,
) -> Result<MatchVars> {
    cfg.validate()?;
    if tape.shape(v).0 == 0 || tape.shape(t).0 == 0 {
        return Err(Error::Input("cannot match an empty fragment set".into()));
    }
    let mut v_query = v;
    let mut t_query = t;
    let mut steps = Vec::with_capacity(cfg.steps);
    let mut total: Option<Var> = None;
    for k in 0..cfg.steps {
        let last = k + 1 == cfg.steps;
        let mut region_context = None;
        let mut word_context = None;
        if cfg.variant.uses_image() {
            if last {
                region_context = Some(image_block.attend_only(tape, v_query, t)?.context);
            } else {
                let (att, next) = image_block.step(tape, bound, v_query, t)?;
                region_context = Some(att.context);
                v_query = next;
            }
        }
        if cfg.variant.uses_text() {
            if last {
                word_context = Some(text_block.attend_only(tape, t_query, v)?.context);
            } else {
                let (att, next) = text_block.step(tape, bound, t_query, v)?;
                word_context = Some(att.context);
                t_query = next;
            }
        }
        let step = step_score(tape, v, region_context, t, word_context)?;
        total = Some(match total {
            None => step.score,
            Some(acc) => tape.add(acc, step.score)?,
        });
        steps.push(step);
    }
    Ok(MatchVars {
        steps,
        total: total.expect("at least one step"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{seeded_rng, uniform, ParamStore};

    fn blocks(agg: Aggregator, dim: usize, seed: u64) -> (ParamStore, RamBlock, RamBlock) {
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(seed);
        let a = RamBlock::new(&mut store, "ram_v", dim, agg, 9.0, &mut rng).unwrap();
        let b = RamBlock::new(&mut store, "ram_t", dim, agg, 9.0, &mut rng).unwrap();
        (store, a, b)
    }

    fn run(store: &ParamStore, a: &RamBlock, b: &RamBlock, v: &Tensor, t: &Tensor, cfg: &MatchConfig) -> StepScores {
        let mut tape = Tape::new();
        let bound = Bound::all(&mut tape, store, false);
        let (vv, tv) = (tape.constant(v.clone()), tape.constant(t.clone()));
        iterate(&mut tape, &bound, a, b, vv, tv, cfg).unwrap().read(&tape)
    }

    fn unit_rows(rows: usize, dim: usize, seed: u64) -> Tensor {
        uniform(rows, dim, 1.0, &mut seeded_rng(seed)).l2_normalize_rows(NORM_EPS)
    }

    #[test]
    fn totals() {
        assert_eq!(total_similarity(&[0.5]), 0.5);
        assert!((total_similarity(&[0.2, 0.3, 0.1]) - 0.6).abs() < 1e-15);
        let s = StepScores::from_steps(vec![0.25, -0.5, 1.0]);
        assert_eq!(s.total, 0.25 + -0.5 + 1.0);
    }

    #[test]
    fn perfect_alignment_scores() {
        let mut tape = Tape::new();
        let v = tape.constant(unit_rows(3, 4, 1));
        let t = tape.constant(unit_rows(2, 4, 2));
        let img = step_score(&mut tape, v, Some(v), t, None).unwrap();
        assert!((tape.value(img.score).item() - 1.0).abs() < 1e-12);
        let full = step_score(&mut tape, v, Some(v), t, Some(t)).unwrap();
        assert!((tape.value(full.score).item() - 2.0).abs() < 1e-12);
        assert!(step_score(&mut tape, v, None, t, None).is_err());
    }

    #[test]
    fn single_step_is_one_entry() {
        let (store, a, b) = blocks(Aggregator::Ours, 8, 0);
        let cfg = MatchConfig { steps: 1, ..MatchConfig::default() };
        let s = run(&store, &a, &b, &unit_rows(3, 8, 1), &unit_rows(4, 8, 2), &cfg);
        assert_eq!(s.per_step.len(), 1);
        assert_eq!(s.per_step[0], s.total);
    }

    #[test]
    fn variants_decompose() {
        let (store, a, b) = blocks(Aggregator::Ours, 8, 3);
        let (v, t) = (unit_rows(3, 8, 4), unit_rows(4, 8, 5));
        let mk = |variant| MatchConfig { steps: 3, variant, ..MatchConfig::default() };
        let full = run(&store, &a, &b, &v, &t, &mk(Variant::Full));
        let img = run(&store, &a, &b, &v, &t, &mk(Variant::Image));
        let txt = run(&store, &a, &b, &v, &t, &mk(Variant::Text));
        for k in 0..3 {
            assert!((full.per_step[k] - img.per_step[k] - txt.per_step[k]).abs() < 1e-12);
            assert!(full.per_step[k].abs() <= 2.0);
        }
    }

    #[test]
    fn rejects_zero_steps_and_empty_sets() {
        let (store, a, b) = blocks(Aggregator::Add, 4, 0);
        let mut tape = Tape::new();
        let bound = Bound::all(&mut tape, &store, false);
        let v = tape.constant(unit_rows(2, 4, 1));
        let t = tape.constant(unit_rows(2, 4, 2));
        let cfg = MatchConfig { steps: 0, ..MatchConfig::default() };
        assert!(iterate(&mut tape, &bound, &a, &b, v, t, &cfg).is_err());
        let empty = tape.constant(Tensor::zeros(0, 4));
        let cfg = MatchConfig::default();
        assert!(matches!(
            iterate(&mut tape, &bound, &a, &b, empty, t, &cfg),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn parse_variants() {
        for v in [Variant::Image, Variant::Text, Variant::Full] {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("both".parse::<Variant>().is_err());
    }
}
