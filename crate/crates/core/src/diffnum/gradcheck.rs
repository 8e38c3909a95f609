//! Central-difference verification of reverse-mode gradients.

use super::{BranchLog, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Coordinates probed per parameter; larger tensors are subsampled.
    pub max_coords: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            tol: 1e-4,
            max_coords: 24,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamGradError {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    /// Coordinates checked with frozen branches.
    pub kinked: usize,
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub params: Vec<ParamGradError>,
    pub max_rel_error: f64,
    pub tol: f64,
    /// Smallest gradient magnitude used as a relative-error denominator.
    pub floor: f64,
    /// Coordinates whose probe interval straddles a kink; see [`compare_gradients`].
    pub kinked: usize,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_above(analytic, numeric, 1e-8)
}

/// `|a − n| / max(|a|, |n|, floor)`
pub fn relative_error_above(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Rounding error of one loss evaluation, in units of `ε·|loss|`. A loss
/// is a long chain of accumulated sums, so this is several ulps.
pub const LOSS_ROUNDING_ULPS: f64 = 8.0;

/// Gradient magnitude below which central differences of a loss of size
/// `loss` cannot resolve `tol` relative accuracy: the rounding error of the
/// quotient is about `LOSS_ROUNDING_ULPS·ε·|loss| / eps`.
pub fn resolution_floor(loss: f64, eps: f64, tol: f64) -> f64 {
    (LOSS_ROUNDING_ULPS * f64::EPSILON * loss.abs() / (eps * tol)).max(1e-8)
}

fn eval_in<F>(mut g: Graph, store: &ParamStore, loss_fn: &mut F) -> Result<(f64, BranchLog)>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    let loss = loss_fn(&mut g, store)?;
    let v = g.value(loss).item();
    if !v.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok((v, g.branch_log()))
}

/// Reverse-mode gradients of `loss_fn` for every parameter of `store`.
pub fn analytic_gradients<F>(store: &ParamStore, mut loss_fn: F) -> Result<Vec<Tensor>>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, store)?;
    if !g.value(loss).item().is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    let grads = g.backward(loss)?;
    let mut scratch = store.clone();
    scratch.zero_grad();
    grads.accumulate_into(&g, &mut scratch);
    Ok(scratch.iter().map(|p| p.grad.clone()).collect())
}

/// Deterministic coordinate subset: evenly spaced over the nonzero analytic
/// entries, plus a few entries whose analytic gradient is zero.
fn probe_coords(analytic: &Tensor, max_coords: usize) -> Vec<usize> {
    let n = analytic.len();
    if n <= max_coords {
        return (0..n).collect();
    }
    let (nonzero, zero): (Vec<usize>, Vec<usize>) =
        (0..n).partition(|&i| analytic.data()[i] != 0.0);
    let spread = |pool: &[usize], k: usize| -> Vec<usize> {
        if pool.len() <= k {
            return pool.to_vec();
        }
        (0..k).map(|j| pool[j * pool.len() / k]).collect()
    };
    let zero_budget = (max_coords / 6).max(1);
    let mut coords = spread(&nonzero, max_coords - zero_budget.min(zero.len()));
    coords.extend(spread(&zero, zero_budget));
    coords.sort_unstable();
    coords
}

/// Compares given `analytic` gradients against central differences.
///
/// Sorts and absolute values make the objectives piecewise smooth. When a
/// branch decision at `x ± eps` differs from the one at `x`, the probe
/// interval straddles a kink and the plain difference mixes two slopes.
/// Such a coordinate is measured with every sort and sign frozen at their
/// values at `x` ([`Graph::replaying`]): the smooth piece the tape
/// differentiated.
pub fn compare_gradients<F>(
    store: &ParamStore,
    mut loss_fn: F,
    analytic: &[Tensor],
    opts: GradCheckOptions,
) -> Result<GradReport>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    if analytic.len() != store.len() {
        return Err(Error::InvalidArgument(format!(
            "{} analytic gradients for {} parameters",
            analytic.len(),
            store.len()
        )));
    }
    let mut probe = store.clone();
    let (base, base_log) = eval_in(Graph::new(), &probe, &mut loss_fn)?;
    let floor = resolution_floor(base, opts.eps, opts.tol);
    let mut params = Vec::with_capacity(store.len());
    let mut worst: f64 = 0.0;
    let mut kinked_total = 0;
    for (id, a) in store.ids().zip(analytic) {
        let coords = probe_coords(a, opts.max_coords);
        let mut max_err: f64 = 0.0;
        let mut kinked = 0;
        for &c in &coords {
            let orig = probe.value(id).data()[c];
            let mut diff = |frozen: bool| -> Result<(f64, bool)> {
                let mut side = |dx: f64| {
                    probe.value_mut(id).data_mut()[c] = orig + dx;
                    let g = match frozen {
                        true => Graph::replaying(base_log.clone()),
                        false => Graph::new(),
                    };
                    let r = eval_in(g, &probe, &mut loss_fn);
                    probe.value_mut(id).data_mut()[c] = orig;
                    r
                };
                let (plus, log_p) = side(opts.eps)?;
                let (minus, log_m) = side(-opts.eps)?;
                let crossed = log_p != base_log || log_m != base_log;
                Ok(((plus - minus) / (2.0 * opts.eps), crossed))
            };
            let (mut numeric, crossed) = diff(false)?;
            if crossed {
                numeric = diff(true)?.0;
                kinked += 1;
            }
            max_err = max_err.max(relative_error_above(a.data()[c], numeric, floor));
        }
        worst = worst.max(max_err);
        kinked_total += kinked;
        params.push(ParamGradError {
            name: store.get(id).name.clone(),
            coords_checked: coords.len(),
            max_rel_error: max_err,
            kinked,
        });
    }
    Ok(GradReport {
        params,
        max_rel_error: worst,
        tol: opts.tol,
        floor,
        kinked: kinked_total,
        passed: worst <= opts.tol,
    })
}

/// Checks reverse-mode gradients of `loss_fn` against central differences.
pub fn grad_check<F>(
    store: &ParamStore,
    mut loss_fn: F,
    opts: GradCheckOptions,
) -> Result<GradReport>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    let analytic = analytic_gradients(store, &mut loss_fn)?;
    compare_gradients(store, loss_fn, &analytic, opts)
}
