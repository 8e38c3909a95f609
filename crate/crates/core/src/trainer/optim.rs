use crate::diffnum::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const ADAGRAD_EPS: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adagrad,
    Sgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adagrad" => Ok(OptimizerKind::Adagrad),
            "sgd" => Ok(OptimizerKind::Sgd),
            _ => Err(Error::Config(format!("unknown optimizer '{s}'"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adagrad => "adagrad",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

/// Per-coordinate update rule. Adagrad keeps one squared-gradient
/// accumulator per parameter, in store order.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    accum: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, store: &ParamStore) -> Self {
        let accum = match kind {
            OptimizerKind::Adagrad => store
                .iter()
                .map(|p| Tensor::zeros(p.tensor.shape()))
                .collect(),
            OptimizerKind::Sgd => Vec::new(),
        };
        Optimizer { kind, lr, accum }
    }

    pub fn accumulators(&self) -> &[Tensor] {
        &self.accum
    }

    pub fn set_accumulators(&mut self, accum: Vec<Tensor>) -> Result<()> {
        if accum.len() != self.accum.len()
            || accum
                .iter()
                .zip(&self.accum)
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Checkpoint(
                "optimizer state does not match the model".into(),
            ));
        }
        self.accum = accum;
        Ok(())
    }

    /// Applies one update from the gradients held in `store`. Returns, per
    /// parameter, the rows (over the last axis) whose values changed.
    pub fn step(&mut self, store: &mut ParamStore) -> Vec<Vec<usize>> {
        let lr = self.lr;
        let mut touched = Vec::with_capacity(store.len());
        for (i, p) in store.iter_mut().enumerate() {
            let cols = p.tensor.shape().last().copied().unwrap_or(1).max(1);
            let mut rows = Vec::new();
            let grad = p.grad.data();
            let value = p.tensor.data_mut();
            for (k, (v, &g)) in value.iter_mut().zip(grad).enumerate() {
                let delta = match self.kind {
                    OptimizerKind::Sgd => lr * g,
                    OptimizerKind::Adagrad => {
                        let acc = &mut self.accum[i].data_mut()[k];
                        *acc += g * g;
                        lr * g / (acc.sqrt() + ADAGRAD_EPS)
                    }
                };
                if delta != 0.0 {
                    *v -= delta;
                    if rows.last() != Some(&(k / cols)) {
                        rows.push(k / cols);
                    }
                }
            }
            touched.push(rows);
        }
        touched
    }
}
