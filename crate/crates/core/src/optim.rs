//! First-order optimizers with serializable state.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const DEFAULT_LR: f64 = 2e-4;
pub const DEFAULT_CLIP: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            _ => Err(Error::Config(format!("unknown optimizer {s:?} (adam|sgd)"))),
        }
    }
}

/// Learning rate, step counter and per-parameter moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &ParamStore) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::Parameter(format!("learning rate must be positive, got {lr}")));
        }
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.rows(), t.cols())).collect::<Vec<_>>();
        let (first, second) = match kind {
            OptimizerKind::Adam => (zeros(), zeros()),
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
        };
        Ok(Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first,
            second,
        })
    }

    pub fn adam(lr: f64, params: &ParamStore) -> Result<Self> {
        Self::new(OptimizerKind::Adam, lr, params)
    }

    pub fn sgd(lr: f64, params: &ParamStore) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, lr, params)
    }

    /// Applies one update. `grads` is indexed like the parameter store.
    pub fn update(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Parameter(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (id, g) in params.ids().zip(grads) {
            if params.get(id).shape() != g.shape() {
                return Err(Error::shape("optimizer update", params.get(id).shape(), g.shape()));
            }
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (id, g) in params.ids().collect::<Vec<_>>().into_iter().zip(grads) {
                    let p = params.get_mut(id);
                    for (w, gw) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= self.lr * gw;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - self.beta1.powi(t);
                let c2 = 1.0 - self.beta2.powi(t);
                let ids: Vec<_> = params.ids().collect();
                for (k, id) in ids.into_iter().enumerate() {
                    let p = params.get_mut(id).data_mut();
                    let m = self.first[k].data_mut();
                    let v = self.second[k].data_mut();
                    for (i, &gw) in grads[k].data().iter().enumerate() {
                        m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gw;
                        v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gw * gw;
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }

    /// Named tensors describing the full state, for checkpoints.
    pub fn state_entries(&self, params: &ParamStore) -> Vec<(String, Tensor)> {
        let mut out = vec![("opt.step".to_string(), Tensor::scalar(self.step as f64))];
        for (k, (name, _)) in params.iter().enumerate() {
            if let (Some(m), Some(v)) = (self.first.get(k), self.second.get(k)) {
                out.push((format!("opt.m.{name}"), m.clone()));
                out.push((format!("opt.v.{name}"), v.clone()));
            }
        }
        out
    }

    /// Restores the counter and moments written by [`Optimizer::state_entries`].
    pub fn restore(&mut self, params: &ParamStore, entries: &[(String, Tensor)]) -> Result<()> {
        let find = |name: &str| entries.iter().find(|(n, _)| n == name).map(|(_, t)| t);
        let step = find("opt.step").ok_or_else(|| Error::Parameter("checkpoint has no optimizer state".into()))?;
        let step = step.item();
        if !(step >= 0.0) || step.fract() != 0.0 {
            return Err(Error::Parameter(format!("bad optimizer step {step}")));
        }
        if self.kind == OptimizerKind::Adam {
            for (k, (name, p)) in params.iter().enumerate() {
                for (prefix, slot) in [("opt.m.", &mut self.first[k]), ("opt.v.", &mut self.second[k])] {
                    let key = format!("{prefix}{name}");
                    let t = find(&key).ok_or_else(|| Error::Parameter(format!("missing {key}")))?;
                    if t.shape() != p.shape() {
                        return Err(Error::shape("optimizer restore", p.shape(), t.shape()));
                    }
                    *slot = t.clone();
                }
            }
        }
        self.step = step as u64;
        Ok(())
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && max_norm > 0.0 {
        let factor = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }
    norm
}
