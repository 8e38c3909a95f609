use crate::diffnum::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Entity, relation and timestamp representations after the distributor, in one space.
#[derive(Clone, Copy, Debug)]
pub struct CheckedVars {
    pub s: Var,
    pub r: Var,
    pub t: Var,
}

/// Plain-value form of [`CheckedVars`] for a single quadruple.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckedTriple {
    pub s: Vec<f64>,
    pub r: Vec<f64>,
    pub t: Vec<f64>,
}

/// `(x − q) ⊙ σ(x − q)`
fn gated_residual(g: &mut Graph, x: Var, q: Var) -> Result<Var> {
    let d = g.sub(x, q)?;
    let gate = g.sigmoid(d)?;
    g.mul(d, gate)
}

/// Aggregates `s`, `r`, `t` into a zero-initialised distributor vector and
/// redistributes it back:
///
/// ```text
/// q̌ = q + Σ_x (x − q) ⊙ σ(x − q)            x ∈ {s, r, t}, q = 0
/// x̌ = x + (x − q̌) ⊙ σ(x − q̌)
/// ```
pub fn distribute_vars(g: &mut Graph, s: Var, r: Var, t: Var) -> Result<CheckedVars> {
    let q = g.input(Tensor::zeros(g.shape(s)))?;
    let s_q1 = gated_residual(g, s, q)?;
    let r_q1 = gated_residual(g, r, q)?;
    let t_q1 = gated_residual(g, t, q)?;
    let q_checked = g.add_all(&[q, s_q1, r_q1, t_q1])?;

    let mut redistribute = |x: Var| -> Result<Var> {
        let x_q2 = gated_residual(g, x, q_checked)?;
        g.add(x, x_q2)
    };
    Ok(CheckedVars {
        s: redistribute(s)?,
        r: redistribute(r)?,
        t: redistribute(t)?,
    })
}

/// [`distribute_vars`] for one `(s, r, t)` triple of plain vectors.
pub fn distribute(s: &[f64], r: &[f64], t: &[f64]) -> Result<CheckedTriple> {
    if s.len() != r.len() || s.len() != t.len() {
        return Err(Error::shape("distribute", &[s.len(), r.len()], &[t.len()]));
    }
    let mut g = Graph::new();
    let sv = g.input(Tensor::row(s.to_vec()))?;
    let rv = g.input(Tensor::row(r.to_vec()))?;
    let tv = g.input(Tensor::row(t.to_vec()))?;
    let c = distribute_vars(&mut g, sv, rv, tv)?;
    Ok(CheckedTriple {
        s: g.value(c.s).data().to_vec(),
        r: g.value(c.r).data().to_vec(),
        t: g.value(c.t).data().to_vec(),
    })
}
