//! Training objective: cross-entropy over candidate tails plus weighted
//! similarity (central moment discrepancy), difference (soft orthogonality)
//! and structure (angle agreement) terms.

use crate::data::Quadruple;
use crate::diffnum::{grad_check, GradCheckOptions, GradReport, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{CheckedVars, ForwardPass, ImeModel, KindBySpace, Space};

/// Space pairs compared by the similarity, difference and structure terms.
pub const SPACE_PAIRS: [(Space, Space); 3] = [
    (Space::Euclidean, Space::Hyperbolic),
    (Space::Euclidean, Space::Hyperspherical),
    (Space::Hyperbolic, Space::Hyperspherical),
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl LossWeights {
    pub const ICEWS14: LossWeights = LossWeights {
        alpha: 0.4,
        beta: 0.4,
        gamma: 0.1,
    };
    pub const ICEWS05_15: LossWeights = LossWeights {
        alpha: 0.9,
        beta: 0.3,
        gamma: 0.1,
    };
    pub const GDELT: LossWeights = LossWeights {
        alpha: 1.0,
        beta: 0.3,
        gamma: 0.1,
    };
    /// Desk-profile weights. The difference term is unnormalized and grows
    /// with batch size and width; at the benchmark β it swamps the task
    /// gradient on small synthetic graphs.
    pub const DESK: LossWeights = LossWeights {
        alpha: 0.4,
        beta: 0.001,
        gamma: 0.1,
    };

    pub fn for_dataset(name: &str) -> Option<LossWeights> {
        match name.to_ascii_lowercase().as_str() {
            "icews14" => Some(Self::ICEWS14),
            "icews05-15" | "icews05_15" | "icews0515" => Some(Self::ICEWS05_15),
            "gdelt" => Some(Self::GDELT),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (n, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{n} must be a finite value >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::ICEWS14
    }
}

/// Which encodings the similarity term compares.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimilarityFeatures {
    Shared,
    Specific,
}

impl std::str::FromStr for SimilarityFeatures {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(SimilarityFeatures::Shared),
            "specific" => Ok(SimilarityFeatures::Specific),
            _ => Err(Error::InvalidArgument(format!("unknown feature set '{s}'"))),
        }
    }
}

impl std::fmt::Display for SimilarityFeatures {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SimilarityFeatures::Shared => "shared",
            SimilarityFeatures::Specific => "specific",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossOptions {
    /// Highest central moment in the discrepancy sum.
    pub cmd_order: usize,
    pub similarity_features: SimilarityFeatures,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            cmd_order: 5,
            similarity_features: SimilarityFeatures::Shared,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub task: f64,
    pub sim: f64,
    pub diff: f64,
    pub stru: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// `task + α·sim + β·diff + γ·stru`, evaluated in the same order as the graph.
    pub fn recombine(&self, w: &LossWeights) -> f64 {
        let t = self.task + w.alpha * self.sim;
        let t = t + w.beta * self.diff;
        t + w.gamma * self.stru
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub task: Var,
    pub sim: Var,
    pub diff: Var,
    pub stru: Var,
    pub total: Var,
    pub forward: ForwardPass,
}

impl LossVars {
    pub fn breakdown(&self, g: &Graph) -> LossBreakdown {
        LossBreakdown {
            task: g.value(self.task).item(),
            sim: g.value(self.sim).item(),
            diff: g.value(self.diff).item(),
            stru: g.value(self.stru).item(),
            total: g.value(self.total).item(),
        }
    }
}

/// Mean negative log-likelihood of `targets` under a row-wise softmax of `scores`.
pub fn task_loss_var(g: &mut Graph, scores: Var, targets: &[usize]) -> Result<Var> {
    let logp = g.log_softmax(scores)?;
    let picked = g.select_per_row(logp, targets)?;
    let m = g.mean(picked)?;
    g.scale(m, -1.0)
}

/// Central moment discrepancy between the row distributions of `x` and `y`
/// (`[B, D]` each) on the interval `[a, b]`, truncated at `order`.
pub fn cmd_var(g: &mut Graph, x: Var, y: Var, order: usize, a: f64, b: f64) -> Result<Var> {
    if g.shape(x) != g.shape(y) || g.shape(x).len() != 2 {
        return Err(Error::shape("cmd", g.shape(x), g.shape(y)));
    }
    let rows = g.shape(x)[0];
    if rows == 0 {
        return Err(Error::InvalidArgument("cmd over an empty batch".into()));
    }
    if order == 0 || b <= a {
        return Err(Error::InvalidArgument(format!(
            "cmd needs order >= 1 and b > a (order {order}, [{a}, {b}])"
        )));
    }
    let span = (b - a).abs();
    let mx = g.mean_axis0(x)?;
    let my = g.mean_axis0(y)?;
    let dm = g.sub(mx, my)?;
    let n1 = g.norm2(dm)?;
    let mut total = g.scale(n1, 1.0 / span)?;
    if order >= 2 {
        let bx = g.broadcast_rows(mx, rows)?;
        let by = g.broadcast_rows(my, rows)?;
        let cx = g.sub(x, bx)?;
        let cy = g.sub(y, by)?;
        for k in 2..=order {
            let px = g.powi(cx, k as i32)?;
            let py = g.powi(cy, k as i32)?;
            let mkx = g.mean_axis0(px)?;
            let mky = g.mean_axis0(py)?;
            let dk = g.sub(mkx, mky)?;
            let nk = g.norm2(dk)?;
            let term = g.scale(nk, 1.0 / span.powi(k as i32))?;
            total = g.add(total, term)?;
        }
    }
    Ok(total)
}

pub fn cmd(x: &Tensor, y: &Tensor, order: usize, a: f64, b: f64) -> Result<f64> {
    let mut g = Graph::new();
    let (xv, yv) = (g.input(x.clone())?, g.input(y.clone())?);
    let c = cmd_var(&mut g, xv, yv, order, a, b)?;
    Ok(g.value(c).item())
}

/// Mean CMD over the three space pairs of one element kind's features
/// (indexed by [`Space`]), after a sigmoid squash onto `[0, 1]`.
pub fn similarity_term_var(g: &mut Graph, features: [Var; 3], order: usize) -> Result<Var> {
    let squashed = [
        g.sigmoid(features[0])?,
        g.sigmoid(features[1])?,
        g.sigmoid(features[2])?,
    ];
    let mut terms = Vec::with_capacity(3);
    for (m1, m2) in SPACE_PAIRS {
        terms.push(cmd_var(
            g,
            squashed[m1 as usize],
            squashed[m2 as usize],
            order,
            0.0,
            1.0,
        )?);
    }
    let s = g.add_all(&terms)?;
    g.scale(s, 1.0 / 3.0)
}

/// Similarity term summed over element kinds.
pub fn similarity_loss_var(
    g: &mut Graph,
    features: &KindBySpace<Var>,
    order: usize,
) -> Result<Var> {
    let per_kind = features
        .iter()
        .map(|f| similarity_term_var(g, *f, order))
        .collect::<Result<Vec<_>>>()?;
    g.add_all(&per_kind)
}

/// Similarity term for one kind's batched features `[B, D]` per space.
pub fn similarity_loss(features: [&Tensor; 3], order: usize) -> Result<f64> {
    let mut g = Graph::new();
    let f = [
        g.input(features[0].clone())?,
        g.input(features[1].clone())?,
        g.input(features[2].clone())?,
    ];
    let s = similarity_term_var(&mut g, f, order)?;
    Ok(g.value(s).item())
}

fn gram_sq(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let at = g.transpose(a)?;
    let p = g.matmul(at, b)?;
    g.frobenius_sq(p)
}

/// `Σ_M ‖(S_M)ᵀ I_M‖²_F + Σ_(M1,M2) ‖(S_M1)ᵀ S_M2‖²_F` for one kind.
pub fn difference_term_var(g: &mut Graph, shared: [Var; 3], specific: [Var; 3]) -> Result<Var> {
    let mut terms = Vec::with_capacity(6);
    for m in 0..3 {
        if g.shape(shared[m]) != g.shape(specific[m]) {
            return Err(Error::shape(
                "difference_loss",
                g.shape(shared[m]),
                g.shape(specific[m]),
            ));
        }
        terms.push(gram_sq(g, specific[m], shared[m])?);
    }
    for (m1, m2) in SPACE_PAIRS {
        terms.push(gram_sq(g, specific[m1 as usize], specific[m2 as usize])?);
    }
    g.add_all(&terms)
}

pub fn difference_loss_var(
    g: &mut Graph,
    shared: &KindBySpace<Var>,
    specific: &KindBySpace<Var>,
) -> Result<Var> {
    let per_kind = (0..3)
        .map(|k| difference_term_var(g, shared[k], specific[k]))
        .collect::<Result<Vec<_>>>()?;
    g.add_all(&per_kind)
}

pub fn difference_loss(shared: [&Tensor; 3], specific: [&Tensor; 3]) -> Result<f64> {
    let mut g = Graph::new();
    let mut bind = |ts: [&Tensor; 3]| -> Result<[Var; 3]> {
        Ok([
            g.input(ts[0].clone())?,
            g.input(ts[1].clone())?,
            g.input(ts[2].clone())?,
        ])
    };
    let (i, s) = (bind(shared)?, bind(specific)?);
    let d = difference_term_var(&mut g, i, s)?;
    Ok(g.value(d).item())
}

const DEGENERATE_NORM: f64 = 1e-12;

fn row_norms(t: &Tensor) -> Vec<f64> {
    t.rows()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

/// Angle cosine at the relation vertex: `⟨e(š − ř), e(ť − ř)⟩` per row, over `rows`.
fn cosines_var(g: &mut Graph, c: &CheckedVars, rows: &[usize]) -> Result<Var> {
    let s = g.select_rows(c.s, rows)?;
    let r = g.select_rows(c.r, rows)?;
    let t = g.select_rows(c.t, rows)?;
    let ab = g.sub(s, r)?;
    let cb = g.sub(t, r)?;
    let e_ab = g.l2_normalize(ab)?;
    let e_cb = g.l2_normalize(cb)?;
    let p = g.mul(e_ab, e_cb)?;
    g.sum_last(p)
}

/// Mean over space pairs and batch rows of `|cos_M1 − cos_M2|`. Rows where
/// any space has a zero-length edge contribute nothing.
pub fn structure_loss_var(g: &mut Graph, checked: &[CheckedVars; 3]) -> Result<Var> {
    let batch = g.shape(checked[0].s)[0];
    let mut valid = vec![true; batch];
    for c in checked {
        let ab = g.sub(c.s, c.r)?;
        let cb = g.sub(c.t, c.r)?;
        for (v, (n1, n2)) in valid.iter_mut().zip(
            row_norms(g.value(ab))
                .into_iter()
                .zip(row_norms(g.value(cb))),
        ) {
            *v &= n1 >= DEGENERATE_NORM && n2 >= DEGENERATE_NORM;
        }
    }
    let rows: Vec<usize> = (0..batch).filter(|&i| valid[i]).collect();
    if rows.is_empty() {
        return Err(Error::InvalidArgument(
            "structure loss: every triple is degenerate in some space".into(),
        ));
    }
    let cos = [
        cosines_var(g, &checked[0], &rows)?,
        cosines_var(g, &checked[1], &rows)?,
        cosines_var(g, &checked[2], &rows)?,
    ];
    let mut terms = Vec::with_capacity(3);
    for (m1, m2) in SPACE_PAIRS {
        let d = g.sub(cos[m1 as usize], cos[m2 as usize])?;
        let a = g.abs(d)?;
        terms.push(g.sum(a)?);
    }
    let s = g.add_all(&terms)?;
    g.scale(s, 1.0 / (3.0 * batch as f64))
}

/// Plain-value triple per space: `(š, ř, ť)`, each `[B, D]`, indexed by [`Space`].
pub fn structure_loss(checked: [[&Tensor; 3]; 3]) -> Result<f64> {
    let mut g = Graph::new();
    let mut vars = Vec::with_capacity(3);
    for c in checked {
        vars.push(CheckedVars {
            s: g.input(c[0].clone())?,
            r: g.input(c[1].clone())?,
            t: g.input(c[2].clone())?,
        });
    }
    let l = structure_loss_var(&mut g, &[vars[0], vars[1], vars[2]])?;
    Ok(g.value(l).item())
}

/// Builds every loss term for an (already reciprocal-augmented) batch.
pub fn total_loss_var(
    g: &mut Graph,
    model: &ImeModel,
    batch: &[Quadruple],
    weights: &LossWeights,
    opts: &LossOptions,
) -> Result<LossVars> {
    let forward = model.forward(g, batch)?;
    let scores = model.score_all_var(g, forward.pooled)?;
    let targets: Vec<usize> = batch.iter().map(|q| q.o).collect();
    let task = task_loss_var(g, scores, &targets)?;
    let sim_features = match opts.similarity_features {
        SimilarityFeatures::Shared => &forward.encoded.shared,
        SimilarityFeatures::Specific => &forward.encoded.specific,
    };
    let sim = similarity_loss_var(g, sim_features, opts.cmd_order)?;
    let diff = difference_loss_var(g, &forward.encoded.shared, &forward.encoded.specific)?;
    let stru = structure_loss_var(g, &forward.checked)?;

    let a = g.scale(sim, weights.alpha)?;
    let b = g.scale(diff, weights.beta)?;
    let c = g.scale(stru, weights.gamma)?;
    let total = g.add(task, a)?;
    let total = g.add(total, b)?;
    let total = g.add(total, c)?;
    Ok(LossVars {
        task,
        sim,
        diff,
        stru,
        total,
        forward,
    })
}

pub fn total_loss(
    model: &ImeModel,
    batch: &[Quadruple],
    weights: &LossWeights,
    opts: &LossOptions,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let vars = total_loss_var(&mut g, model, batch, weights, opts)?;
    let b = vars.breakdown(&g);
    if !b.total.is_finite() {
        return Err(Error::NonFinite("total loss"));
    }
    Ok(b)
}

/// One scalar of the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossTerm {
    Task,
    Sim,
    Diff,
    Stru,
    Total,
}

impl LossTerm {
    pub const ALL: [LossTerm; 5] = [
        LossTerm::Task,
        LossTerm::Sim,
        LossTerm::Diff,
        LossTerm::Stru,
        LossTerm::Total,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Task => "task",
            LossTerm::Sim => "sim",
            LossTerm::Diff => "diff",
            LossTerm::Stru => "stru",
            LossTerm::Total => "total",
        }
    }

    fn pick(self, v: &LossVars) -> Var {
        match self {
            LossTerm::Task => v.task,
            LossTerm::Sim => v.sim,
            LossTerm::Diff => v.diff,
            LossTerm::Stru => v.stru,
            LossTerm::Total => v.total,
        }
    }
}

/// Finite-difference check of one loss term against every model parameter.
pub fn grad_check_term(
    model: &ImeModel,
    batch: &[Quadruple],
    weights: &LossWeights,
    opts: &LossOptions,
    term: LossTerm,
    check: GradCheckOptions,
) -> Result<GradReport> {
    let mut scratch = model.clone();
    grad_check(
        model.params(),
        |g, store| {
            scratch.params_mut().copy_values_from(store)?;
            Ok(term.pick(&total_loss_var(g, &scratch, batch, weights, opts)?))
        },
        check,
    )
}

/// [`grad_check_term`] on the full objective.
pub fn grad_check_model(
    model: &ImeModel,
    batch: &[Quadruple],
    weights: &LossWeights,
    opts: &LossOptions,
    check: GradCheckOptions,
) -> Result<GradReport> {
    grad_check_term(model, batch, weights, opts, LossTerm::Total, check)
}
