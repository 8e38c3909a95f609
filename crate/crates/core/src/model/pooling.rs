//! Sorted-feature pooling: average, max, and adjustable (learned weights
//! generated from positional encodings by a bidirectional GRU and a linear
//! projection).

use rand::Rng;

use crate::diffnum::{gru_sequence, Graph, GruParams, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolingMode {
    Average,
    Max,
    Adjustable,
}

impl std::str::FromStr for PoolingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ap" | "average" => Ok(PoolingMode::Average),
            "mp" | "max" => Ok(PoolingMode::Max),
            "amp" | "adjustable" => Ok(PoolingMode::Adjustable),
            _ => Err(Error::InvalidArgument(format!(
                "unknown pooling mode '{s}'"
            ))),
        }
    }
}

impl std::fmt::Display for PoolingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PoolingMode::Average => "ap",
            PoolingMode::Max => "mp",
            PoolingMode::Adjustable => "amp",
        })
    }
}

/// Sinusoidal position table: row `i`, columns `2k` / `2k+1` hold
/// `sin(i / 10000^(2k/d_p))` / `cos(i / 10000^(2k/d_p))`.
pub fn positional_encoding(n: usize, d_p: usize) -> Result<Tensor> {
    if !d_p.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "positional encoding width must be even, got {d_p}"
        )));
    }
    let mut data = Vec::with_capacity(n * d_p);
    for i in 0..n {
        for k in 0..d_p / 2 {
            let angle = i as f64 / 10000f64.powf(2.0 * k as f64 / d_p as f64);
            data.push(angle.sin());
            data.push(angle.cos());
        }
    }
    Tensor::new(vec![n, d_p], data)
}

/// Weight generator parameters: forward and backward GRUs plus a `2h → 1` projection.
#[derive(Clone, Copy, Debug)]
pub struct AmpParams {
    pub forward: GruParams,
    pub backward: GruParams,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
}

impl AmpParams {
    pub fn init<R: Rng>(store: &mut ParamStore, d_p: usize, hidden: usize, rng: &mut R) -> Self {
        let forward = GruParams::init(store, "amp.gru_fwd", d_p, hidden, rng);
        let backward = GruParams::init(store, "amp.gru_bwd", d_p, hidden, rng);
        let fan_in = 2 * hidden;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = (0..fan_in)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        AmpParams {
            forward,
            backward,
            proj_w: store.add(
                "amp.proj_w",
                Tensor::new(vec![fan_in, 1], w).expect("shape"),
            ),
            proj_b: store.add("amp.proj_b", Tensor::zeros(&[1, 1])),
        }
    }
}

/// Softmax-normalised pooling weights `[n]`, one per sorted position.
pub fn pooling_weights_var(
    g: &mut Graph,
    store: &ParamStore,
    amp: &AmpParams,
    positions: &Tensor,
) -> Result<Var> {
    let n = positions.shape()[0];
    let rows: Vec<Var> = (0..n)
        .map(|i| g.input(Tensor::row(positions.row_slice(i).to_vec())))
        .collect::<Result<_>>()?;
    let fwd = amp.forward.bind(g, store)?;
    let bwd = amp.backward.bind(g, store)?;
    let forward_states = gru_sequence(g, &fwd, &rows)?;
    let reversed: Vec<Var> = rows.iter().rev().copied().collect();
    let mut backward_states = gru_sequence(g, &bwd, &reversed)?;
    backward_states.reverse();

    let w = g.param(store, amp.proj_w)?;
    let b = g.param(store, amp.proj_b)?;
    let mut logits = Vec::with_capacity(n);
    for (f, bk) in forward_states.iter().zip(&backward_states) {
        let feat = g.concat(&[*f, *bk], 1)?;
        let z = g.matmul(feat, w)?;
        logits.push(g.add(z, b)?);
    }
    let row = g.concat(&logits, 1)?;
    let psi = g.softmax(row)?;
    g.reshape(psi, &[n])
}

pub fn pooling_weights(
    store: &ParamStore,
    amp: &AmpParams,
    positions: &Tensor,
) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let psi = pooling_weights_var(&mut g, store, amp, positions)?;
    Ok(g.value(psi).data().to_vec())
}

pub fn fixed_weights(mode: PoolingMode, n: usize) -> Option<Vec<f64>> {
    match mode {
        PoolingMode::Average => Some(vec![1.0 / n as f64; n]),
        PoolingMode::Max => {
            let mut w = vec![0.0; n];
            w[0] = 1.0;
            Some(w)
        }
        PoolingMode::Adjustable => None,
    }
}

/// Sorts the stacked features `[.., n, D]` per dimension and takes the
/// `psi`-weighted sum over sorted positions.
pub fn pool_sorted_var(g: &mut Graph, stacked: Var, psi: Var) -> Result<Var> {
    let sorted = g.sort_desc_per_dimension(stacked)?;
    g.weighted_positions(sorted, psi)
}

/// Pools `n` plain vectors. `psi` is required for [`PoolingMode::Adjustable`]
/// and ignored otherwise.
pub fn pool(x: &[Vec<f64>], mode: PoolingMode, psi: Option<&[f64]>) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("pool of zero vectors".into()));
    }
    let n = x.len();
    let weights = match (fixed_weights(mode, n), psi) {
        (Some(w), _) => w,
        (None, Some(p)) if p.len() == n => p.to_vec(),
        (None, Some(p)) => return Err(Error::shape("pool", &[n], &[p.len()])),
        (None, None) => {
            return Err(Error::InvalidArgument(
                "adjustable pooling needs pooling weights".into(),
            ))
        }
    };
    let mut g = Graph::new();
    let stacked = g.input(Tensor::from_rows(x)?)?;
    let w = g.input(Tensor::vector(weights))?;
    let out = pool_sorted_var(&mut g, stacked, w)?;
    Ok(g.value(out).data().to_vec())
}
