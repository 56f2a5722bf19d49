//! Hinge triplet loss over the hardest in-batch negatives.
//!
//! For a `B×B` similarity matrix `S` whose diagonal holds the matched
//! pairs, each image `b` is pushed above its hardest negative text
//! `max_{c≠b} S[b][c]` and each text `b` above its hardest negative image
//! `max_{c≠b} S[c][b]`, both by `margin`.

use crate::error::{Error, Result};
use crate::tape::{CustomOp, Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_MARGIN: f64 = 0.2;

/// One active-or-not hinge term of the loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HingeTerm {
    /// Index of the query pair.
    pub anchor: usize,
    /// Index of the selected hard negative.
    pub negative: usize,
    /// `margin - S_bb + S_neg`, before clamping.
    pub violation: f64,
}

/// Both families of hinge terms of one similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HardTriplets {
    /// Per image: hardest negative text (row-wise).
    pub text_negatives: Vec<HingeTerm>,
    /// Per text: hardest negative image (column-wise).
    pub image_negatives: Vec<HingeTerm>,
}

impl HardTriplets {
    pub fn loss(&self) -> f64 {
        self.text_negatives
            .iter()
            .chain(&self.image_negatives)
            .map(|t| t.violation.max(0.0))
            .sum()
    }

    /// Smallest distance from any hinge argument to its kink at zero, and
    /// from any selected negative to the runner-up. Finite-difference
    /// checks are only meaningful when this is not tiny.
    pub fn kink_distance(&self, scores: &Tensor) -> f64 {
        let b = scores.rows();
        let mut closest = f64::INFINITY;
        for t in self.text_negatives.iter().chain(&self.image_negatives) {
            closest = closest.min(t.violation.abs());
        }
        for anchor in 0..b {
            let mut row: Vec<f64> = (0..b).filter(|&c| c != anchor).map(|c| scores.get(anchor, c)).collect();
            let mut col: Vec<f64> = (0..b).filter(|&c| c != anchor).map(|c| scores.get(c, anchor)).collect();
            for v in [&mut row, &mut col] {
                if v.len() >= 2 {
                    v.sort_by(|a, b| b.total_cmp(a));
                    closest = closest.min(v[0] - v[1]);
                }
            }
        }
        closest
    }
}

fn check_square(scores: &Tensor) -> Result<()> {
    let (r, c) = scores.shape();
    if r != c {
        return Err(Error::shape("hard_triplet_loss", (r, c), (r, r)));
    }
    if r < 2 {
        return Err(Error::Input("hard negatives need a batch of at least 2".into()));
    }
    Ok(())
}

/// Selects the hard negatives; ties go to the lowest index.
pub fn hard_triplets(scores: &Tensor, margin: f64) -> Result<HardTriplets> {
    check_square(scores)?;
    if !(margin >= 0.0) {
        return Err(Error::Parameter(format!("margin must be non-negative, got {margin}")));
    }
    let b = scores.rows();
    let pick = |anchor: usize, value: &dyn Fn(usize) -> f64| -> HingeTerm {
        let mut best = usize::MAX;
        let mut best_value = f64::NEG_INFINITY;
        for c in (0..b).filter(|&c| c != anchor) {
            if best == usize::MAX || value(c) > best_value {
                best = c;
                best_value = value(c);
            }
        }
        HingeTerm {
            anchor,
            negative: best,
            violation: margin - scores.get(anchor, anchor) + best_value,
        }
    };
    Ok(HardTriplets {
        text_negatives: (0..b).map(|a| pick(a, &|c| scores.get(a, c))).collect(),
        image_negatives: (0..b).map(|a| pick(a, &|c| scores.get(c, a))).collect(),
    })
}

pub fn hard_triplet_loss(scores: &Tensor, margin: f64) -> Result<f64> {
    Ok(hard_triplets(scores, margin)?.loss())
}

struct HardTripletOp {
    margin: f64,
}

impl CustomOp for HardTripletOp {
    fn name(&self) -> &'static str {
        "hard_triplet_loss"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let scores = inputs[0];
        let g = grad.item();
        let b = scores.rows();
        let mut out = Tensor::zeros(b, b);
        let terms = hard_triplets(scores, self.margin).expect("validated in forward");
        // hinge subgradient at exactly zero is taken as zero
        for t in terms.text_negatives.iter().filter(|t| t.violation > 0.0) {
            out.data_mut()[t.anchor * b + t.anchor] -= g;
            out.data_mut()[t.anchor * b + t.negative] += g;
        }
        for t in terms.image_negatives.iter().filter(|t| t.violation > 0.0) {
            out.data_mut()[t.anchor * b + t.anchor] -= g;
            out.data_mut()[t.negative * b + t.anchor] += g;
        }
        vec![out]
    }
}

/// Records the loss of the `B×B` score matrix `scores` on the tape.
pub fn hard_triplet_loss_var(tape: &mut Tape, scores: Var, margin: f64) -> Result<Var> {
    let value = hard_triplet_loss(tape.value(scores), margin)?;
    Ok(tape.custom(&[scores], Tensor::scalar(value), Box::new(HardTripletOp { margin })))
}
