//! Versioned binary checkpoints: a text preamble followed by tensor records.
//!
//! ```text
//! ime-checkpoint 1
//! dims dim=32 entities=20 relations=2 timestamps=4 pos_dim=32 gru_hidden=16
//! state epoch=10 step=20 best_mrr=<f64 bits | none> bad_evals=0 optimizer=adagrad pooling=amp
//! tensor <param> f64 <shape>        (one per parameter, then one per accumulator
//! <little-endian payload>            named "adagrad/<param>")
//! end
//! ```

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::optim::{Optimizer, OptimizerKind};
use crate::diffnum::io::{read_line, read_tensor_body, write_tensor};
use crate::diffnum::Tensor;
use crate::error::{Error, Result};
use crate::model::{ImeModel, ModelDims, PoolingMode};

pub const MAGIC: &str = "ime-checkpoint";
pub const VERSION: u32 = 1;
const ACCUM_PREFIX: &str = "adagrad/";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: u64,
    pub best_mrr: Option<f64>,
    /// Consecutive validation passes without improvement.
    pub bad_evals: usize,
}

impl TrainState {
    pub fn new() -> Self {
        TrainState {
            epoch: 0,
            step: 0,
            best_mrr: None,
            bad_evals: 0,
        }
    }
}

impl Default for TrainState {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub dims: ModelDims,
    pub pooling: PoolingMode,
    pub optimizer: OptimizerKind,
    pub state: TrainState,
    pub params: Vec<(String, Tensor)>,
    pub accumulators: Vec<(String, Tensor)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(
    w: &mut W,
    model: &ImeModel,
    optimizer: &Optimizer,
    state: &TrainState,
) -> std::io::Result<()> {
    let d = model.dims();
    writeln!(w, "{MAGIC} {VERSION}")?;
    writeln!(
        w,
        "dims dim={} entities={} relations={} timestamps={} pos_dim={} gru_hidden={}",
        d.dim, d.n_entities, d.n_relations, d.n_timestamps, d.pos_dim, d.gru_hidden
    )?;
    let best = state
        .best_mrr
        .map_or_else(|| "none".to_string(), |m| format!("{:016x}", m.to_bits()));
    writeln!(
        w,
        "state epoch={} step={} best_mrr={best} bad_evals={} optimizer={} pooling={}",
        state.epoch,
        state.step,
        state.bad_evals,
        optimizer.kind,
        model.pooling()
    )?;
    for p in model.params().iter() {
        write_tensor(w, &p.name, &p.tensor)?;
    }
    for (p, acc) in model.params().iter().zip(optimizer.accumulators()) {
        write_tensor(w, &format!("{ACCUM_PREFIX}{}", p.name), acc)?;
    }
    writeln!(w, "end")
}

/// Writes to a sibling temp file and renames it over `path`.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &ImeModel,
    optimizer: &Optimizer,
    state: &TrainState,
) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    let file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&mut w, model, optimizer, state).map_err(|e| Error::io(&tmp, e))?;
    w.into_inner()
        .map_err(|e| Error::io(&tmp, e.into_error()))?
        .sync_all()
        .map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn fields<'a>(line: &'a str, tag: &str) -> Result<HashMap<&'a str, &'a str>> {
    let mut parts = line.split(' ');
    if parts.next() != Some(tag) {
        return Err(bad(format!("expected '{tag}' line, found '{line}'")));
    }
    parts
        .map(|p| {
            p.split_once('=')
                .ok_or_else(|| bad(format!("malformed field '{p}'")))
        })
        .collect()
}

fn field<T: std::str::FromStr>(map: &HashMap<&str, &str>, key: &str) -> Result<T> {
    map.get(key)
        .ok_or_else(|| bad(format!("missing field '{key}'")))?
        .parse()
        .map_err(|_| bad(format!("bad value for '{key}'")))
}

pub fn read_checkpoint<R: BufRead>(r: &mut R) -> Result<Checkpoint> {
    let mut next = |what: &str| -> Result<String> {
        read_line(r)?.ok_or_else(|| bad(format!("truncated checkpoint: missing {what}")))
    };
    let head = next("header")?;
    match head.split_once(' ') {
        Some((MAGIC, v)) if v == VERSION.to_string() => {}
        Some((MAGIC, v)) => {
            return Err(bad(format!(
                "checkpoint version {v} is not supported (expected {VERSION})"
            )))
        }
        _ => return Err(bad("not a checkpoint file")),
    }
    let dims_line = next("dims")?;
    let state_line = next("state")?;
    let d = fields(&dims_line, "dims")?;
    let dims = ModelDims {
        dim: field(&d, "dim")?,
        n_entities: field(&d, "entities")?,
        n_relations: field(&d, "relations")?,
        n_timestamps: field(&d, "timestamps")?,
        pos_dim: field(&d, "pos_dim")?,
        gru_hidden: field(&d, "gru_hidden")?,
    };
    let s = fields(&state_line, "state")?;
    let best: String = field(&s, "best_mrr")?;
    let best_mrr = if best == "none" {
        None
    } else {
        Some(f64::from_bits(
            u64::from_str_radix(&best, 16).map_err(|_| bad("bad best_mrr"))?,
        ))
    };
    let state = TrainState {
        epoch: field(&s, "epoch")?,
        step: field(&s, "step")?,
        best_mrr,
        bad_evals: field(&s, "bad_evals")?,
    };
    let optimizer: String = field(&s, "optimizer")?;
    let pooling: String = field(&s, "pooling")?;
    let (mut params, mut accumulators) = (Vec::new(), Vec::new());
    loop {
        let line = read_line(r)?.ok_or_else(|| bad("truncated checkpoint: missing end marker"))?;
        if line == "end" {
            break;
        }
        let (name, t) = read_tensor_body(r, &line)?;
        match name.strip_prefix(ACCUM_PREFIX) {
            Some(p) => accumulators.push((p.to_string(), t)),
            None => params.push((name, t)),
        }
    }
    Ok(Checkpoint {
        dims,
        pooling: pooling.parse().map_err(|_| bad("bad pooling mode"))?,
        optimizer: optimizer.parse().map_err(|_| bad("bad optimizer"))?,
        state,
        params,
        accumulators,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut BufReader::new(file))
}

impl Checkpoint {
    pub fn check_dims(&self, expected: &ModelDims) -> Result<()> {
        if &self.dims != expected {
            return Err(bad(format!(
                "checkpoint dimensions {:?} do not match expected {:?}",
                self.dims, expected
            )));
        }
        Ok(())
    }

    /// Rebuilds the model with every stored tensor in place.
    pub fn restore_model(&self) -> Result<ImeModel> {
        let mut model = ImeModel::new(self.dims, self.pooling, 0)?;
        if self.params.len() != model.params().len() {
            return Err(bad(format!(
                "checkpoint holds {} parameters, model has {}",
                self.params.len(),
                model.params().len()
            )));
        }
        for (name, t) in &self.params {
            let id = model
                .params()
                .find(name)
                .ok_or_else(|| bad(format!("unknown parameter '{name}'")))?;
            let slot = model.params_mut().value_mut(id);
            if slot.shape() != t.shape() {
                return Err(bad(format!(
                    "parameter '{name}' has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        Ok(model)
    }

    pub fn restore_optimizer(&self, model: &ImeModel, lr: f64) -> Result<Optimizer> {
        let mut opt = Optimizer::new(self.optimizer, lr, model.params());
        if self.optimizer == OptimizerKind::Adagrad {
            let by_name: HashMap<&str, &Tensor> = self
                .accumulators
                .iter()
                .map(|(n, t)| (n.as_str(), t))
                .collect();
            let accum = model
                .params()
                .iter()
                .map(|p| {
                    by_name
                        .get(p.name.as_str())
                        .map(|t| (*t).clone())
                        .ok_or_else(|| bad(format!("missing accumulator for '{}'", p.name)))
                })
                .collect::<Result<Vec<_>>>()?;
            opt.set_accumulators(accum)?;
        }
        Ok(opt)
    }
}
