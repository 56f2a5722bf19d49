//! Recurrent attention memory block.
//!
//! A block takes a query set `X` (m'×d) and a response set `Y` (n'×d).
//! The attention unit scores every (query, response) pair by cosine,
//! rectifies and normalizes those scores over the query index for each
//! response column, and turns them into per-query softmax weights with
//! inverse temperature `lambda`. Each query's context is the weighted sum
//! of response rows. The distillation unit then fuses every query with its
//! context to produce the next step's query.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::params::{xavier, Bound, ParamId, ParamStore, SeededRng};
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, NORM_EPS};

pub const DEFAULT_LAMBDA: f64 = 9.0;

/// How a query fragment is fused with its attended context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregator {
    /// `x + c`
    Add,
    /// `x + tanh(W c + b)`
    Mlp,
    /// `a x + (1 - a) c`, scalar `a = σ(w·[x;c] + b)`
    Att,
    /// `β ⊙ x + (1 - β) ⊙ c`, vector `β = σ(W[x;c] + b)`
    Gate,
    /// `g ⊙ x + (1 - g) ⊙ tanh(W_o[x;c] + b_o)`, `g = σ(W_g[x;c] + b_g)`
    #[default]
    Ours,
}

impl Aggregator {
    pub const ALL: [Aggregator; 5] = [
        Aggregator::Add,
        Aggregator::Mlp,
        Aggregator::Att,
        Aggregator::Gate,
        Aggregator::Ours,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Aggregator::Add => "add",
            Aggregator::Mlp => "mlp",
            Aggregator::Att => "att",
            Aggregator::Gate => "gate",
            Aggregator::Ours => "ours",
        }
    }

    /// Parameter suffixes owned by this policy, in creation order.
    fn param_suffixes(self) -> &'static [&'static str] {
        match self {
            Aggregator::Add => &[],
            Aggregator::Mlp => &["mlp_w", "mlp_b"],
            Aggregator::Att => &["att_w", "att_b"],
            Aggregator::Gate => &["gate_w", "gate_b"],
            Aggregator::Ours => &["w_g", "b_g", "w_o", "b_o"],
        }
    }

    /// Recovers the policy from the parameter names under `prefix`.
    pub fn detect(store: &ParamStore, prefix: &str) -> Aggregator {
        Aggregator::ALL
            .into_iter()
            .rev()
            .find(|a| {
                let suffixes = a.param_suffixes();
                !suffixes.is_empty()
                    && suffixes
                        .iter()
                        .all(|s| store.find(&format!("{prefix}.{s}")).is_some())
            })
            .unwrap_or(Aggregator::Add)
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Aggregator::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown aggregator {s:?} (add|mlp|att|gate|ours)")))
    }
}

/// Attention unit outputs recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub raw_sims: Var,
    pub normalized_sims: Var,
    pub weights: Var,
    pub context: Var,
}

/// Attention unit outputs as plain tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionResult {
    /// `m'×d`, one context row per query.
    pub context: Tensor,
    /// `m'×n'` softmax weights.
    pub weights: Tensor,
    pub raw_sims: Tensor,
    pub normalized_sims: Tensor,
}

impl AttentionVars {
    pub fn read(&self, tape: &Tape) -> AttentionResult {
        AttentionResult {
            context: tape.value(self.context).clone(),
            weights: tape.value(self.weights).clone(),
            raw_sims: tape.value(self.raw_sims).clone(),
            normalized_sims: tape.value(self.normalized_sims).clone(),
        }
    }
}

/// Cosine similarity of every row of `x` with every row of `y`.
pub fn pairwise_cosine(tape: &mut Tape, x: Var, y: Var) -> Result<Var> {
    let (xs, ys) = (tape.shape(x), tape.shape(y));
    if xs.1 != ys.1 {
        return Err(Error::shape("pairwise_cosine", xs, ys));
    }
    if xs.0 == 0 || ys.0 == 0 {
        return Err(Error::Input("pairwise_cosine needs non-empty sets".into()));
    }
    let xn = tape.l2_normalize_rows(x, NORM_EPS)?;
    let yn = tape.l2_normalize_rows(y, NORM_EPS)?;
    tape.matmul_nt(xn, yn)
}

/// `relu(z)` scaled to unit L2 norm down each response column (over the
/// query index). Columns without a positive entry become zero.
pub fn normalize_sims(tape: &mut Tape, z: Var) -> Result<Var> {
    let r = tape.relu(z);
    tape.l2_normalize_cols(r, NORM_EPS)
}

/// Softmax weights over responses per query and the resulting contexts.
pub fn attend(tape: &mut Tape, normalized: Var, y: Var, lambda: f64) -> Result<(Var, Var)> {
    if !(lambda > 0.0) {
        return Err(Error::Parameter(format!("lambda must be positive, got {lambda}")));
    }
    let weights = tape.softmax_rows(normalized, lambda)?;
    let context = tape.matmul(weights, y)?;
    Ok((weights, context))
}

/// Full attention unit: cosine, normalization, softmax, weighted sum.
pub fn cross_attention(tape: &mut Tape, x: Var, y: Var, lambda: f64) -> Result<AttentionVars> {
    let raw_sims = pairwise_cosine(tape, x, y)?;
    let normalized_sims = normalize_sims(tape, raw_sims)?;
    let (weights, context) = attend(tape, normalized_sims, y, lambda)?;
    Ok(AttentionVars {
        raw_sims,
        normalized_sims,
        weights,
        context,
    })
}

#[derive(Debug, Clone, Copy)]
enum Weights {
    Add,
    Mlp { w: ParamId, b: ParamId },
    Att { w: ParamId, b: ParamId },
    Gate { w: ParamId, b: ParamId },
    Ours { w_g: ParamId, b_g: ParamId, w_o: ParamId, b_o: ParamId },
}

/// One attention + distillation block with its own parameters.
#[derive(Debug, Clone, Copy)]
pub struct RamBlock {
    pub aggregator: Aggregator,
    pub lambda: f64,
    pub dim: usize,
    weights: Weights,
}

impl RamBlock {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        aggregator: Aggregator,
        lambda: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::Parameter(format!("lambda must be positive, got {lambda}")));
        }
        let name = |s: &str| format!("{prefix}.{s}");
        let weights = match aggregator {
            Aggregator::Add => Weights::Add,
            Aggregator::Mlp => Weights::Mlp {
                w: store.add(name("mlp_w"), xavier(dim, dim, rng))?,
                b: store.add(name("mlp_b"), Tensor::zeros(1, dim))?,
            },
            Aggregator::Att => Weights::Att {
                w: store.add(name("att_w"), xavier(1, 2 * dim, rng))?,
                b: store.add(name("att_b"), Tensor::zeros(1, 1))?,
            },
            Aggregator::Gate => Weights::Gate {
                w: store.add(name("gate_w"), xavier(dim, 2 * dim, rng))?,
                b: store.add(name("gate_b"), Tensor::zeros(1, dim))?,
            },
            Aggregator::Ours => Weights::Ours {
                w_g: store.add(name("w_g"), xavier(dim, 2 * dim, rng))?,
                b_g: store.add(name("b_g"), Tensor::zeros(1, dim))?,
                w_o: store.add(name("w_o"), xavier(dim, 2 * dim, rng))?,
                b_o: store.add(name("b_o"), Tensor::zeros(1, dim))?,
            },
        };
        Ok(Self {
            aggregator,
            lambda,
            dim,
            weights,
        })
    }

    /// Re-attaches to parameters already present in `store` under `prefix`.
    pub fn attach(store: &ParamStore, prefix: &str, dim: usize, lambda: f64) -> Result<Self> {
        let aggregator = Aggregator::detect(store, prefix);
        let id = |s: &str| {
            store
                .find(&format!("{prefix}.{s}"))
                .ok_or_else(|| Error::Parameter(format!("missing parameter {prefix}.{s}")))
        };
        let weights = match aggregator {
            Aggregator::Add => Weights::Add,
            Aggregator::Mlp => Weights::Mlp { w: id("mlp_w")?, b: id("mlp_b")? },
            Aggregator::Att => Weights::Att { w: id("att_w")?, b: id("att_b")? },
            Aggregator::Gate => Weights::Gate { w: id("gate_w")?, b: id("gate_b")? },
            Aggregator::Ours => Weights::Ours {
                w_g: id("w_g")?,
                b_g: id("b_g")?,
                w_o: id("w_o")?,
                b_o: id("b_o")?,
            },
        };
        Ok(Self {
            aggregator,
            lambda,
            dim,
            weights,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        match self.weights {
            Weights::Add => vec![],
            Weights::Mlp { w, b } | Weights::Att { w, b } | Weights::Gate { w, b } => vec![w, b],
            Weights::Ours { w_g, b_g, w_o, b_o } => vec![w_g, b_g, w_o, b_o],
        }
    }

    /// Fuses each query row with its context row.
    pub fn distill(&self, tape: &mut Tape, bound: &Bound, x: Var, c: Var) -> Result<Var> {
        if tape.shape(x) != tape.shape(c) {
            return Err(Error::shape("distill", tape.shape(x), tape.shape(c)));
        }
        let affine = |tape: &mut Tape, input: Var, w: ParamId, b: ParamId| -> Result<Var> {
            let lin = tape.matmul_nt(input, bound.var(w))?;
            tape.add_row(lin, bound.var(b))
        };
        match self.weights {
            Weights::Add => tape.add(x, c),
            Weights::Mlp { w, b } => {
                let pre = affine(tape, c, w, b)?;
                let t = tape.tanh(pre);
                tape.add(x, t)
            }
            Weights::Att { w, b } => {
                let cat = tape.concat_cols(x, c)?;
                let pre = affine(tape, cat, w, b)?;
                let alpha = tape.sigmoid(pre);
                let diff = tape.sub(x, c)?;
                let scaled = tape.mul_col(diff, alpha)?;
                tape.add(c, scaled)
            }
            Weights::Gate { w, b } => {
                let cat = tape.concat_cols(x, c)?;
                let pre = affine(tape, cat, w, b)?;
                let beta = tape.sigmoid(pre);
                let diff = tape.sub(x, c)?;
                let scaled = tape.mul(beta, diff)?;
                tape.add(c, scaled)
            }
            Weights::Ours { w_g, b_g, w_o, b_o } => {
                let cat = tape.concat_cols(x, c)?;
                let g_pre = affine(tape, cat, w_g, b_g)?;
                let g = tape.sigmoid(g_pre);
                let o_pre = affine(tape, cat, w_o, b_o)?;
                let o = tape.tanh(o_pre);
                // g * x + (1 - g) * o
                let diff = tape.sub(x, o)?;
                let scaled = tape.mul(g, diff)?;
                tape.add(o, scaled)
            }
        }
    }

    /// Attention followed by distillation: returns the contexts and the
    /// updated queries.
    pub fn step(&self, tape: &mut Tape, bound: &Bound, x: Var, y: Var) -> Result<(AttentionVars, Var)> {
        let att = self.attend_only(tape, x, y)?;
        let updated = self.distill(tape, bound, x, att.context)?;
        Ok((att, updated))
    }

    /// Attention unit alone, for a final step whose update would be unused.
    pub fn attend_only(&self, tape: &mut Tape, x: Var, y: Var) -> Result<AttentionVars> {
        cross_attention(tape, x, y, self.lambda)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{seeded_rng, uniform};
    use crate::tensor::Activation;

    fn consts(tape: &mut Tape, rows: &[&[f64]]) -> Var {
        tape.constant(Tensor::from_rows(rows).unwrap())
    }

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_EPS);
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_EPS);
        d / (na * nb)
    }

    #[test]
    fn cosine_cases() {
        let mut tape = Tape::new();
        let x = consts(&mut tape, &[&[1.0, 0.0]]);
        let y = consts(&mut tape, &[&[1.0, 0.0], &[0.0, 1.0]]);
        let z = pairwise_cosine(&mut tape, x, y).unwrap();
        assert_eq!(tape.value(z).data(), &[1.0, 0.0]);
        let bad = consts(&mut tape, &[&[1.0, 0.0, 0.0]]);
        assert!(matches!(pairwise_cosine(&mut tape, x, bad), Err(Error::Shape { .. })));
    }

    #[test]
    fn random_cosine_matches_oracle() {
        let xs = uniform(3, 4, 1.0, &mut seeded_rng(1));
        let ys = uniform(2, 4, 1.0, &mut seeded_rng(2));
        let mut tape = Tape::new();
        let (x, y) = (tape.constant(xs.clone()), tape.constant(ys.clone()));
        let z = pairwise_cosine(&mut tape, x, y).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert!((tape.value(z).get(i, j) - cos(xs.row(i), ys.row(j))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalize_sims_cases() {
        let mut tape = Tape::new();
        let z = consts(&mut tape, &[&[0.5, -0.2]]);
        let n = normalize_sims(&mut tape, z).unwrap();
        assert_eq!(tape.value(n).data(), &[1.0, 0.0]);
        let z = consts(&mut tape, &[&[3.0], &[4.0]]);
        let n = normalize_sims(&mut tape, z).unwrap();
        assert!((tape.value(n).get(0, 0) - 0.6).abs() < 1e-15);
        assert!((tape.value(n).get(1, 0) - 0.8).abs() < 1e-15);

        let zs = uniform(4, 3, 1.0, &mut seeded_rng(3));
        let z = tape.constant(zs.clone());
        let n = normalize_sims(&mut tape, z).unwrap();
        for j in 0..3 {
            let norm: f64 = (0..4).map(|i| zs.get(i, j).max(0.0).powi(2)).sum::<f64>().sqrt();
            for i in 0..4 {
                let want = if norm > 0.0 { zs.get(i, j).max(0.0) / norm } else { 0.0 };
                assert!((tape.value(n).get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attend_cases() {
        let mut tape = Tape::new();
        let zbar = consts(&mut tape, &[&[0.3, 0.3, 0.3]]);
        let y = consts(&mut tape, &[&[1.0, 0.0], &[0.0, 2.0], &[2.0, 1.0]]);
        let (w, c) = attend(&mut tape, zbar, y, 9.0).unwrap();
        assert!(tape.value(w).data().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!((tape.value(c).get(0, 0) - 1.0).abs() < 1e-15);
        assert!((tape.value(c).get(0, 1) - 1.0).abs() < 1e-15);

        let zbar = consts(&mut tape, &[&[0.1, 0.9, 0.2]]);
        let (_, c) = attend(&mut tape, zbar, y, 1e3).unwrap();
        assert!(tape.value(c).max_abs_diff(&Tensor::from_rows(&[[0.0, 2.0]]).unwrap()) < 1e-6);
        assert!(attend(&mut tape, zbar, y, 0.0).is_err());
    }

    #[test]
    fn attend_matches_softmax_oracle() {
        let zs = uniform(2, 3, 1.0, &mut seeded_rng(4));
        let ys = uniform(3, 4, 1.0, &mut seeded_rng(5));
        let mut tape = Tape::new();
        let (z, y) = (tape.constant(zs.clone()), tape.constant(ys.clone()));
        let (_, c) = attend(&mut tape, z, y, 9.0).unwrap();
        for i in 0..2 {
            let e: Vec<f64> = (0..3).map(|j| (9.0 * zs.get(i, j)).exp()).collect();
            let total: f64 = e.iter().sum();
            for k in 0..4 {
                let want: f64 = (0..3).map(|j| e[j] / total * ys.get(j, k)).sum();
                assert!((tape.value(c).get(i, k) - want).abs() < 1e-10);
            }
        }
    }

    fn block(agg: Aggregator, dim: usize, seed: u64) -> (ParamStore, RamBlock) {
        let mut store = ParamStore::new();
        let b = RamBlock::new(&mut store, "ram", dim, agg, DEFAULT_LAMBDA, &mut seeded_rng(seed)).unwrap();
        (store, b)
    }

    #[test]
    fn saturated_gate_keeps_query() {
        let (mut store, b) = block(Aggregator::Ours, 3, 0);
        for name in ["ram.w_g", "ram.w_o", "ram.b_o"] {
            let id = store.find(name).unwrap();
            let (r, c) = store.get(id).shape();
            *store.get_mut(id) = Tensor::zeros(r, c);
        }
        *store.get_mut(store.find("ram.b_g").unwrap()) = Tensor::filled(1, 3, 50.0);
        let mut tape = Tape::new();
        let bound = Bound::all(&mut tape, &store, false);
        let x = consts(&mut tape, &[&[0.2, -0.4, 0.9]]);
        let c = consts(&mut tape, &[&[1.0, 1.0, 1.0]]);
        let out = b.distill(&mut tape, &bound, x, c).unwrap();
        assert!(tape.value(out).max_abs_diff(tape.value(x)) < 1e-12);
    }

    #[test]
    fn add_with_zero_context_is_identity() {
        let (store, b) = block(Aggregator::Add, 2, 0);
        let mut tape = Tape::new();
        let bound = Bound::all(&mut tape, &store, false);
        let x = consts(&mut tape, &[&[0.2, -0.4]]);
        let c = consts(&mut tape, &[&[0.0, 0.0]]);
        let out = b.distill(&mut tape, &bound, x, c).unwrap();
        assert_eq!(tape.value(out), tape.value(x));
    }

    #[test]
    fn ours_matches_gating_oracle() {
        let (store, b) = block(Aggregator::Ours, 3, 7);
        let xs = uniform(2, 3, 1.0, &mut seeded_rng(8));
        let cs = uniform(2, 3, 1.0, &mut seeded_rng(9));
        let mut tape = Tape::new();
        let bound = Bound::all(&mut tape, &store, false);
        let (x, c) = (tape.constant(xs.clone()), tape.constant(cs.clone()));
        let out = b.distill(&mut tape, &bound, x, c).unwrap();
        let get = |n: &str| store.get(store.find(n).unwrap()).clone();
        let (wg, bg, wo, bo) = (get("ram.w_g"), get("ram.b_g"), get("ram.w_o"), get("ram.b_o"));
        for i in 0..2 {
            let cat: Vec<f64> = xs.row(i).iter().chain(cs.row(i)).copied().collect();
            for k in 0..3 {
                let gp: f64 = (0..6).map(|q| wg.get(k, q) * cat[q]).sum::<f64>() + bg.get(0, k);
                let op: f64 = (0..6).map(|q| wo.get(k, q) * cat[q]).sum::<f64>() + bo.get(0, k);
                let g = Activation::Sigmoid.apply(gp);
                let want = g * xs.get(i, k) + (1.0 - g) * op.tanh();
                assert!((tape.value(out).get(i, k) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_response_context() {
        let (store, b) = block(Aggregator::Ours, 3, 1);
        let mut tape = Tape::new();
        let bound = Bound::all(&mut tape, &store, false);
        let x = tape.constant(uniform(4, 3, 1.0, &mut seeded_rng(2)));
        let y = consts(&mut tape, &[&[0.3, 0.1, -0.5]]);
        let (att, _) = b.step(&mut tape, &bound, x, y).unwrap();
        assert!(tape.value(att.weights).data().iter().all(|&w| w == 1.0));
        for r in 0..4 {
            assert_eq!(tape.value(att.context).row(r), tape.value(y).row(0));
        }
    }

    #[test]
    fn add_step_doubles_identical_unit_row() {
        let (store, b) = block(Aggregator::Add, 2, 1);
        let mut tape = Tape::new();
        let bound = Bound::all(&mut tape, &store, false);
        let x = consts(&mut tape, &[&[0.6, 0.8]]);
        let y = consts(&mut tape, &[&[0.6, 0.8]]);
        let (_, updated) = b.step(&mut tape, &bound, x, y).unwrap();
        assert_eq!(tape.value(updated).data(), &[1.2, 1.6]);
    }

    #[test]
    fn step_matches_chained_oracle() {
        let (store, b) = block(Aggregator::Ours, 5, 3);
        let xs = uniform(3, 5, 1.0, &mut seeded_rng(30));
        let ys = uniform(4, 5, 1.0, &mut seeded_rng(31));
        let mut tape = Tape::new();
        let bound = Bound::all(&mut tape, &store, false);
        let (x, y) = (tape.constant(xs.clone()), tape.constant(ys.clone()));
        let (att, updated) = b.step(&mut tape, &bound, x, y).unwrap();

        let z: Vec<Vec<f64>> = (0..3).map(|i| (0..4).map(|j| cos(xs.row(i), ys.row(j))).collect()).collect();
        let col_norm: Vec<f64> = (0..4)
            .map(|j| (0..3).map(|i| z[i][j].max(0.0).powi(2)).sum::<f64>().sqrt().max(NORM_EPS))
            .collect();
        let mut ctx = Tensor::zeros(3, 5);
        for i in 0..3 {
            let logits: Vec<f64> = (0..4).map(|j| DEFAULT_LAMBDA * z[i][j].max(0.0) / col_norm[j]).collect();
            let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let s: f64 = e.iter().sum();
            for k in 0..5 {
                ctx.set(i, k, (0..4).map(|j| e[j] / s * ys.get(j, k)).sum());
            }
        }
        assert!(tape.value(att.context).max_abs_diff(&ctx) < 1e-10);

        let mut t2 = Tape::new();
        let bound2 = Bound::all(&mut t2, &store, false);
        let (x2, c2) = (t2.constant(xs), t2.constant(ctx));
        let want = b.distill(&mut t2, &bound2, x2, c2).unwrap();
        assert!(tape.value(updated).max_abs_diff(t2.value(want)) < 1e-10);
    }

    #[test]
    fn every_policy_preserves_shape_and_detects() {
        for agg in Aggregator::ALL {
            let (store, b) = block(agg, 4, 5);
            assert_eq!(Aggregator::detect(&store, "ram"), agg);
            let again = RamBlock::attach(&store, "ram", 4, 9.0).unwrap();
            assert_eq!(again.param_ids(), b.param_ids());
            let mut tape = Tape::new();
            let bound = Bound::all(&mut tape, &store, false);
            let x = tape.constant(uniform(3, 4, 1.0, &mut seeded_rng(6)));
            let c = tape.constant(uniform(3, 4, 1.0, &mut seeded_rng(7)));
            let out = b.distill(&mut tape, &bound, x, c).unwrap();
            assert_eq!(tape.shape(out), (3, 4));
            assert_eq!(agg.as_str().parse::<Aggregator>().unwrap(), agg);
        }
        assert!("sum".parse::<Aggregator>().is_err());
    }
}
