use rand::Rng;

use super::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Parameters of one gated recurrent unit.
///
/// Row-vector convention: inputs are `[1, d_in]`, states `[1, hidden]`.
#[derive(Clone, Copy, Debug)]
pub struct GruParams {
    pub input_dim: usize,
    pub hidden: usize,
    pub w_update: ParamId,
    pub w_reset: ParamId,
    pub w_cand: ParamId,
    pub u_update: ParamId,
    pub u_reset: ParamId,
    pub u_cand: ParamId,
    pub b_update: ParamId,
    pub b_reset: ParamId,
    pub b_cand: ParamId,
}

/// [`GruParams`] bound into a graph once, reused for every time step.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    w_update: Var,
    w_reset: Var,
    w_cand: Var,
    u_update: Var,
    u_reset: Var,
    u_cand: Var,
    b_update: Var,
    b_reset: Var,
    b_cand: Var,
    hidden: usize,
}

impl GruParams {
    /// Registers a GRU under `prefix`, weights uniform in ±1/√fan_in, biases zero.
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let mut uniform = |rows: usize, cols: usize| {
            let bound = 1.0 / (rows as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            Tensor::new(vec![rows, cols], data).expect("shape")
        };
        let w_update = uniform(input_dim, hidden);
        let w_reset = uniform(input_dim, hidden);
        let w_cand = uniform(input_dim, hidden);
        let u_update = uniform(hidden, hidden);
        let u_reset = uniform(hidden, hidden);
        let u_cand = uniform(hidden, hidden);
        GruParams {
            input_dim,
            hidden,
            w_update: store.add(format!("{prefix}.w_update"), w_update),
            w_reset: store.add(format!("{prefix}.w_reset"), w_reset),
            w_cand: store.add(format!("{prefix}.w_cand"), w_cand),
            u_update: store.add(format!("{prefix}.u_update"), u_update),
            u_reset: store.add(format!("{prefix}.u_reset"), u_reset),
            u_cand: store.add(format!("{prefix}.u_cand"), u_cand),
            b_update: store.add(format!("{prefix}.b_update"), Tensor::zeros(&[1, hidden])),
            b_reset: store.add(format!("{prefix}.b_reset"), Tensor::zeros(&[1, hidden])),
            b_cand: store.add(format!("{prefix}.b_cand"), Tensor::zeros(&[1, hidden])),
        }
    }

    pub fn bind(&self, g: &mut Graph, store: &ParamStore) -> Result<GruVars> {
        let check = |id: ParamId, shape: &[usize]| -> Result<()> {
            let s = store.value(id).shape();
            if s != shape {
                return Err(Error::shape("gru_cell", s, shape));
            }
            Ok(())
        };
        let (d, h) = (self.input_dim, self.hidden);
        for id in [self.w_update, self.w_reset, self.w_cand] {
            check(id, &[d, h])?;
        }
        for id in [self.u_update, self.u_reset, self.u_cand] {
            check(id, &[h, h])?;
        }
        for id in [self.b_update, self.b_reset, self.b_cand] {
            check(id, &[1, h])?;
        }
        Ok(GruVars {
            w_update: g.param(store, self.w_update)?,
            w_reset: g.param(store, self.w_reset)?,
            w_cand: g.param(store, self.w_cand)?,
            u_update: g.param(store, self.u_update)?,
            u_reset: g.param(store, self.u_reset)?,
            u_cand: g.param(store, self.u_cand)?,
            b_update: g.param(store, self.b_update)?,
            b_reset: g.param(store, self.b_reset)?,
            b_cand: g.param(store, self.b_cand)?,
            hidden: h,
        })
    }
}

impl GruVars {
    pub fn hidden(&self) -> usize {
        self.hidden
    }
}

/// One GRU step:
///
/// ```text
/// z  = σ(x·W_z + h·U_z + b_z)
/// r  = σ(x·W_r + h·U_r + b_r)
/// n  = tanh(x·W_n + (r ⊙ h)·U_n + b_n)
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
pub fn gru_cell(g: &mut Graph, p: &GruVars, x: Var, h_prev: Var) -> Result<Var> {
    let gate = |g: &mut Graph, w: Var, u: Var, b: Var, h_in: Var| -> Result<Var> {
        let xw = g.matmul(x, w)?;
        let hu = g.matmul(h_in, u)?;
        let s = g.add(xw, hu)?;
        g.add(s, b)
    };
    let z_pre = gate(g, p.w_update, p.u_update, p.b_update, h_prev)?;
    let z = g.sigmoid(z_pre)?;
    let r_pre = gate(g, p.w_reset, p.u_reset, p.b_reset, h_prev)?;
    let r = g.sigmoid(r_pre)?;
    let rh = g.mul(r, h_prev)?;
    let n_pre = gate(g, p.w_cand, p.u_cand, p.b_cand, rh)?;
    let n = g.tanh(n_pre)?;
    // h' = n + z ⊙ (h − n)
    let diff = g.sub(h_prev, n)?;
    let zd = g.mul(z, diff)?;
    g.add(n, zd)
}

/// Runs the cell over `inputs` in order from a zero state; returns every state.
pub fn gru_sequence(g: &mut Graph, p: &GruVars, inputs: &[Var]) -> Result<Vec<Var>> {
    let mut h = g.input(Tensor::zeros(&[1, p.hidden]))?;
    let mut states = Vec::with_capacity(inputs.len());
    for &x in inputs {
        h = gru_cell(g, p, x, h)?;
        states.push(h);
    }
    Ok(states)
}
