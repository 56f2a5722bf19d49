//! Bidirectional recall at K and the salient-word statistic.

use std::fmt;

use crate::dataset::RetrievalSet;
use crate::encoders::FragmentSet;
use crate::error::{Error, Result};
use crate::model::Imram;
use crate::tensor::Tensor;

pub const RECALL_KS: [usize; 3] = [1, 5, 10];

/// Percentage of queries (rows of `sim`) whose top `k` gallery columns
/// contain a gold index. Ties rank the lower column first.
pub fn recall_at_k(sim: &Tensor, gold: &[Vec<usize>], k: usize) -> Result<f64> {
    let (queries, gallery) = sim.shape();
    if k == 0 || k > gallery {
        return Err(Error::Parameter(format!("k = {k} outside 1..={gallery}")));
    }
    if gold.len() != queries {
        return Err(Error::Input(format!("{} gold lists for {queries} queries", gold.len())));
    }
    if queries == 0 {
        return Err(Error::Input("no queries".into()));
    }
    let mut hits = 0;
    for (q, golds) in gold.iter().enumerate() {
        if golds.is_empty() {
            return Err(Error::Input(format!("query {q} has no gold item")));
        }
        let row = sim.row(q);
        let hit = golds.iter().any(|&g| {
            let target = row[g];
            let ahead = row
                .iter()
                .enumerate()
                .filter(|&(j, &s)| s > target || (s == target && j < g))
                .count();
            ahead < k
        });
        if hit {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / queries as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalReport {
    /// Image query, text gallery: R@1, R@5, R@10.
    pub text_retrieval: [f64; 3],
    /// Text query, image gallery: R@1, R@5, R@10.
    pub image_retrieval: [f64; 3],
    pub r_sum: f64,
}

impl RetrievalReport {
    /// Computes both directions from an image×text similarity matrix.
    /// K values larger than a gallery are clamped to its size.
    pub fn from_similarity(sim: &Tensor, image_gold: &[Vec<usize>], text_gold: &[Vec<usize>]) -> Result<Self> {
        let transposed = sim.transpose();
        let mut text_retrieval = [0.0; 3];
        let mut image_retrieval = [0.0; 3];
        for (slot, &k) in RECALL_KS.iter().enumerate() {
            text_retrieval[slot] = recall_at_k(sim, image_gold, k.min(sim.cols()))?;
            image_retrieval[slot] = recall_at_k(&transposed, text_gold, k.min(sim.rows()))?;
        }
        let r_sum = text_retrieval.iter().chain(&image_retrieval).sum();
        Ok(Self {
            text_retrieval,
            image_retrieval,
            r_sum,
        })
    }

    /// `metric=value` lines.
    pub fn key_values(&self) -> String {
        let mut s = String::new();
        for (dir, vals) in [("i2t", &self.text_retrieval), ("t2i", &self.image_retrieval)] {
            for (k, v) in RECALL_KS.iter().zip(vals.iter()) {
                s.push_str(&format!("{dir}_r{k}={v}\n"));
            }
        }
        s.push_str(&format!("rsum={}\n", self.r_sum));
        s
    }
}

impl fmt::Display for RetrievalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16}{:>8}{:>8}{:>8}", "direction", "R@1", "R@5", "R@10")?;
        for (name, v) in [("image->text", &self.text_retrieval), ("text->image", &self.image_retrieval)] {
            writeln!(f, "{name:<16}{:>8.2}{:>8.2}{:>8.2}", v[0], v[1], v[2])?;
        }
        write!(f, "{:<16}{:>8.2}", "R@sum", self.r_sum)
    }
}

/// Encodes every image and text of `set` with `model`.
pub fn encode_set(model: &Imram, set: &RetrievalSet) -> Result<(Vec<FragmentSet>, Vec<FragmentSet>)> {
    let images = set
        .images
        .iter()
        .zip(&set.image_ids)
        .map(|(raw, &id)| model.encode_image(raw, id))
        .collect::<Result<Vec<_>>>()?;
    let texts = set
        .texts
        .iter()
        .zip(&set.text_ids)
        .map(|(ids, &id)| model.encode_text(ids, id))
        .collect::<Result<Vec<_>>>()?;
    Ok((images, texts))
}

/// Full image×text similarity matrix of a retrieval set.
pub fn similarity(model: &Imram, set: &RetrievalSet) -> Result<Tensor> {
    let (images, texts) = encode_set(model, set)?;
    model.similarity_matrix(&images, &texts)
}

pub fn evaluate(model: &Imram, set: &RetrievalSet) -> Result<RetrievalReport> {
    if set.images.is_empty() || set.texts.is_empty() {
        return Err(Error::Input("empty retrieval set".into()));
    }
    let sim = similarity(model, set)?;
    RetrievalReport::from_similarity(&sim, &set.image_gold, &set.text_gold)
}

/// Indices whose score is strictly above the mean score.
pub fn salient_indices(word_scores: &[f64]) -> Vec<usize> {
    if word_scores.is_empty() {
        return Vec::new();
    }
    let mean = word_scores.iter().sum::<f64>() / word_scores.len() as f64;
    word_scores
        .iter()
        .enumerate()
        .filter(|&(_, &s)| s > mean)
        .map(|(j, _)| j)
        .collect()
}

/// Words of `text` whose word-based score at `step` (1-based) exceeds
/// that step's mean word-based score.
pub fn salient_concepts(model: &Imram, image: &FragmentSet, text: &FragmentSet, step: usize) -> Result<Vec<usize>> {
    let steps = model.config.matching.steps;
    if step == 0 || step > steps {
        return Err(Error::Parameter(format!("step {step} outside 1..={steps}")));
    }
    if !model.config.matching.variant.uses_text() {
        return Err(Error::Parameter("salient concepts need a text-grounded variant (text or full)".into()));
    }
    let detail = model.score_detailed(image, text)?;
    let scores = detail.word_scores[step - 1].as_ref().expect("text term active");
    Ok(salient_indices(scores))
}
