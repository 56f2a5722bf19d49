//! Fragment encoders: affine projection of region features and a
//! bidirectional GRU over word embeddings. Both emit L2-normalized rows.

use crate::error::{Error, Result};
use crate::params::{uniform, xavier, Bound, ParamId, ParamStore, SeededRng};
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, NORM_EPS};

/// Range of the uniform word-embedding initialization.
pub const EMBEDDING_INIT: f64 = 0.1;

/// One item's fragments (image regions or text words), one row each.
#[derive(Debug, Clone, PartialEq)]
pub struct FragmentSet {
    pub item_id: usize,
    pub vectors: Tensor,
}

impl FragmentSet {
    pub fn new(item_id: usize, vectors: Tensor) -> Result<Self> {
        if vectors.rows() == 0 {
            return Err(Error::Input(format!("fragment set {item_id} is empty")));
        }
        Ok(Self { item_id, vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }
}

/// `v = W_v f + b_v` followed by row normalization.
#[derive(Debug, Clone, Copy)]
pub struct ImageProjection {
    pub weight: ParamId,
    pub bias: ParamId,
    pub raw_dim: usize,
    pub dim: usize,
}

impl ImageProjection {
    pub fn new(store: &mut ParamStore, raw_dim: usize, dim: usize, rng: &mut SeededRng) -> Result<Self> {
        Ok(Self {
            weight: store.add("image.weight", xavier(dim, raw_dim, rng))?,
            bias: store.add("image.bias", Tensor::zeros(1, dim))?,
            raw_dim,
            dim,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }

    /// Projects the `m×raw_dim` region features recorded as `raw`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, raw: Var) -> Result<Var> {
        let (rows, cols) = tape.shape(raw);
        if rows == 0 {
            return Err(Error::Input("image has no regions".into()));
        }
        if cols != self.raw_dim {
            return Err(Error::shape("project_image", (rows, cols), (rows, self.raw_dim)));
        }
        let lin = tape.matmul_nt(raw, bound.var(self.weight))?;
        let v = tape.add_row(lin, bound.var(self.bias))?;
        tape.l2_normalize_rows(v, NORM_EPS)
    }
}

/// Weights of one GRU direction. Input transforms are `hidden×input`,
/// recurrent transforms `hidden×hidden`, biases `1×hidden`.
#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
    pub input: usize,
    pub hidden: usize,
}

/// Input-side projections `x·Wᵀ + b` for each gate.
#[derive(Debug, Clone, Copy)]
struct GateInputs {
    z: Var,
    r: Var,
    h: Var,
}

impl GruParams {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let mut w = |name: &str, rows, cols, rng: &mut SeededRng| {
            store.add(format!("{prefix}.{name}"), xavier(rows, cols, rng))
        };
        let w_z = w("w_z", hidden, input, rng)?;
        let w_r = w("w_r", hidden, input, rng)?;
        let w_h = w("w_h", hidden, input, rng)?;
        let u_z = w("u_z", hidden, hidden, rng)?;
        let u_r = w("u_r", hidden, hidden, rng)?;
        let u_h = w("u_h", hidden, hidden, rng)?;
        let mut b = |name: &str| store.add(format!("{prefix}.{name}"), Tensor::zeros(1, hidden));
        Ok(Self {
            w_z,
            w_r,
            w_h,
            u_z,
            u_r,
            u_h,
            b_z: b("b_z")?,
            b_r: b("b_r")?,
            b_h: b("b_h")?,
            input,
            hidden,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![
            self.w_z, self.w_r, self.w_h, self.u_z, self.u_r, self.u_h, self.b_z, self.b_r, self.b_h,
        ]
    }

    fn project_inputs(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<GateInputs> {
        let mut proj = |w: ParamId, b: ParamId| -> Result<Var> {
            let lin = tape.matmul_nt(x, bound.var(w))?;
            tape.add_row(lin, bound.var(b))
        };
        Ok(GateInputs {
            z: proj(self.w_z, self.b_z)?,
            r: proj(self.w_r, self.b_r)?,
            h: proj(self.w_h, self.b_h)?,
        })
    }

    /// Recurrent half of the cell, given precomputed input projections.
    /// Works row-wise, so a batch of states advances in one call.
    fn advance(&self, tape: &mut Tape, bound: &Bound, gates: GateInputs, h: Var) -> Result<Var> {
        let hz = tape.matmul_nt(h, bound.var(self.u_z))?;
        let z_pre = tape.add(gates.z, hz)?;
        let z = tape.sigmoid(z_pre);
        let hr = tape.matmul_nt(h, bound.var(self.u_r))?;
        let r_pre = tape.add(gates.r, hr)?;
        let r = tape.sigmoid(r_pre);
        let rh = tape.mul(r, h)?;
        let hh = tape.matmul_nt(rh, bound.var(self.u_h))?;
        let cand_pre = tape.add(gates.h, hh)?;
        let cand = tape.tanh(cand_pre);
        // (1 - z) * h + z * cand
        let delta = tape.sub(cand, h)?;
        let step = tape.mul(z, delta)?;
        tape.add(h, step)
    }

    /// One step: z = σ(W_z x + U_z h + b_z), r = σ(W_r x + U_r h + b_r),
    /// h̃ = tanh(W_h x + U_h (r⊙h) + b_h), h' = (1−z)⊙h + z⊙h̃.
    pub fn cell(&self, tape: &mut Tape, bound: &Bound, x: Var, h_prev: Var) -> Result<Var> {
        let (xr, xc) = tape.shape(x);
        let (hr, hc) = tape.shape(h_prev);
        if xc != self.input || hc != self.hidden || xr != hr {
            return Err(Error::shape("gru_cell", (xr, xc), (hr, hc)));
        }
        let gates = self.project_inputs(tape, bound, x)?;
        self.advance(tape, bound, gates, h_prev)
    }

    /// Runs over `inputs` (n×input) from a zero state, left to right or
    /// right to left. Returns the hidden state at each position in input order.
    fn run(&self, tape: &mut Tape, bound: &Bound, inputs: Var, reverse: bool) -> Result<Vec<Var>> {
        let n = tape.shape(inputs).0;
        let all = self.project_inputs(tape, bound, inputs)?;
        let mut h = tape.constant(Tensor::zeros(1, self.hidden));
        let mut states = vec![h; n];
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        for j in order {
            let gates = GateInputs {
                z: tape.slice_row(all.z, j)?,
                r: tape.slice_row(all.r, j)?,
                h: tape.slice_row(all.h, j)?,
            };
            h = self.advance(tape, bound, gates, h)?;
            states[j] = h;
        }
        Ok(states)
    }
}

/// Word embedding plus forward and backward GRUs sharing no weights.
#[derive(Debug, Clone, Copy)]
pub struct TextEncoder {
    pub embedding: ParamId,
    pub forward: GruParams,
    pub backward: GruParams,
    pub vocab_size: usize,
}

impl TextEncoder {
    pub fn new(
        store: &mut ParamStore,
        vocab_size: usize,
        word_dim: usize,
        hidden: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::Parameter("vocabulary must not be empty".into()));
        }
        let embedding = store.add(
            "text.embedding",
            uniform(vocab_size, word_dim, EMBEDDING_INIT, rng),
        )?;
        let forward = GruParams::new(store, "text.gru_fwd", word_dim, hidden, rng)?;
        let backward = GruParams::new(store, "text.gru_bwd", word_dim, hidden, rng)?;
        Ok(Self {
            embedding,
            forward,
            backward,
            vocab_size,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.embedding];
        ids.extend(self.forward.param_ids());
        ids.extend(self.backward.param_ids());
        ids
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Input("text has no tokens".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= self.vocab_size) {
            return Err(Error::Vocabulary {
                id: bad,
                size: self.vocab_size,
            });
        }
        Ok(())
    }

    /// Encodes one token sequence into an `n×hidden` fragment matrix:
    /// t_j = normalize((h→_j + h←_j) / 2).
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, ids: &[usize]) -> Result<Var> {
        self.check_ids(ids)?;
        let emb = tape.gather_rows(bound.var(self.embedding), ids)?;
        let fwd = self.forward.run(tape, bound, emb, false)?;
        let bwd = self.backward.run(tape, bound, emb, true)?;
        let fwd = tape.stack_rows(&fwd)?;
        let bwd = tape.stack_rows(&bwd)?;
        let both = tape.add(fwd, bwd)?;
        let mean = tape.scale(both, 0.5);
        tape.l2_normalize_rows(mean, NORM_EPS)
    }

    /// Encodes a padded batch in lockstep: all sequences advance together
    /// and positions at or beyond a sequence's length leave its state
    /// untouched. Returns one `len_b×hidden` matrix per sequence.
    pub fn forward_padded(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        padded: &[Vec<usize>],
        lengths: &[usize],
    ) -> Result<Vec<Var>> {
        if padded.len() != lengths.len() || padded.is_empty() {
            return Err(Error::Input("padded batch and lengths disagree".into()));
        }
        let width = padded[0].len();
        for (seq, &len) in padded.iter().zip(lengths) {
            if seq.len() != width || len > width {
                return Err(Error::Input("ragged padded batch".into()));
            }
            self.check_ids(&seq[..len])?;
        }
        let batch = padded.len();
        let masks: Vec<(Var, Var)> = (0..width)
            .map(|j| {
                let on: Vec<f64> = lengths.iter().map(|&l| if j < l { 1.0 } else { 0.0 }).collect();
                let off: Vec<f64> = on.iter().map(|m| 1.0 - m).collect();
                let on = Tensor::from_vec(batch, 1, on).expect("batch column");
                let off = Tensor::from_vec(batch, 1, off).expect("batch column");
                (tape.constant(on), tape.constant(off))
            })
            .collect();
        // padding ids may be anything; clamp so the lookup stays in range
        let column_ids: Vec<Vec<usize>> = (0..width)
            .map(|j| {
                padded
                    .iter()
                    .zip(lengths)
                    .map(|(s, &l)| if j < l { s[j] } else { 0 })
                    .collect()
            })
            .collect();

        let sweep = |gru: &GruParams, tape: &mut Tape, reverse: bool| -> Result<Vec<Var>> {
            let mut h = tape.constant(Tensor::zeros(batch, self.hidden()));
            let mut states = vec![h; width];
            let order: Vec<usize> = if reverse { (0..width).rev().collect() } else { (0..width).collect() };
            for j in order {
                let x = tape.gather_rows(bound.var(self.embedding), &column_ids[j])?;
                let next = gru.cell(tape, bound, x, h)?;
                let (on, off) = masks[j];
                let keep_new = tape.mul_col(next, on)?;
                let keep_old = tape.mul_col(h, off)?;
                h = tape.add(keep_new, keep_old)?;
                states[j] = h;
            }
            Ok(states)
        };
        let fwd = sweep(&self.forward, tape, false)?;
        let bwd = sweep(&self.backward, tape, true)?;

        let mut out = Vec::with_capacity(batch);
        for (b, &len) in lengths.iter().enumerate() {
            if len == 0 {
                return Err(Error::Input(format!("sequence {b} has no tokens")));
            }
            let mut rows = Vec::with_capacity(len);
            for j in 0..len {
                let f = tape.slice_row(fwd[j], b)?;
                let r = tape.slice_row(bwd[j], b)?;
                rows.push(tape.add(f, r)?);
            }
            let stacked = tape.stack_rows(&rows)?;
            let mean = tape.scale(stacked, 0.5);
            out.push(tape.l2_normalize_rows(mean, NORM_EPS)?);
        }
        Ok(out)
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden
    }
}
