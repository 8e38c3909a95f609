//! Scalar-loop reference implementations used only by tests. Nothing here
//! touches the graph; every formula is evaluated coordinate by coordinate.

use ime_core::diffnum::{GruParams, ParamId, ParamStore, Tensor};
use ime_core::model::{ImeModel, Space, SPACES};

pub fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn gru_step(store: &ParamStore, gp: &GruParams, x: &[f64], h: &[f64]) -> Vec<f64> {
    let hd = gp.hidden;
    let lin = |w: ParamId, u: ParamId, b: ParamId, hv: &[f64], j: usize| {
        let (w, u, b) = (
            store.value(w).data(),
            store.value(u).data(),
            store.value(b).data(),
        );
        let mut s = b[j];
        for (i, xi) in x.iter().enumerate() {
            s += xi * w[i * hd + j];
        }
        for (i, hi) in hv.iter().enumerate() {
            s += hi * u[i * hd + j];
        }
        s
    };
    let r: Vec<f64> = (0..hd)
        .map(|j| sig(lin(gp.w_reset, gp.u_reset, gp.b_reset, h, j)))
        .collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    (0..hd)
        .map(|j| {
            let z = sig(lin(gp.w_update, gp.u_update, gp.b_update, h, j));
            let n = lin(gp.w_cand, gp.u_cand, gp.b_cand, &rh, j).tanh();
            (1.0 - z) * n + z * h[j]
        })
        .collect()
}

pub fn pooling_weights(model: &ImeModel) -> Vec<f64> {
    let store = model.params();
    let amp = model.amp();
    let p: &Tensor = model.positions();
    let n = p.shape()[0];
    let hd = amp.forward.hidden;
    let mut fwd = vec![vec![0.0; hd]; n];
    let mut h = vec![0.0; hd];
    for (i, slot) in fwd.iter_mut().enumerate() {
        h = gru_step(store, &amp.forward, p.row_slice(i), &h);
        *slot = h.clone();
    }
    let mut bwd = vec![vec![0.0; hd]; n];
    let mut h = vec![0.0; hd];
    for i in (0..n).rev() {
        h = gru_step(store, &amp.backward, p.row_slice(i), &h);
        bwd[i] = h.clone();
    }
    let w = store.value(amp.proj_w).data();
    let b = store.value(amp.proj_b).data()[0];
    let logits: Vec<f64> = (0..n)
        .map(|i| {
            let feat: Vec<f64> = fwd[i].iter().chain(&bwd[i]).copied().collect();
            b + dot(&feat, w)
        })
        .collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// Checked `(š, ř, ť)` for one space.
pub fn distribute(s: &[f64], r: &[f64], t: &[f64]) -> [Vec<f64>; 3] {
    let d = s.len();
    let mut out = [vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    for k in 0..d {
        let g = |x: f64, q: f64| (x - q) * sig(x - q);
        let q = 0.0;
        let qc = q + g(s[k], q) + g(r[k], q) + g(t[k], q);
        out[0][k] = s[k] + g(s[k], qc);
        out[1][k] = r[k] + g(r[k], qc);
        out[2][k] = t[k] + g(t[k], qc);
    }
    out
}

/// `checked[space][kind]` for one query.
pub fn checked(model: &ImeModel, s: usize, r: usize, t: usize) -> [[Vec<f64>; 3]; 3] {
    let store = model.params();
    SPACES.map(|sp| {
        let tb = model.tables(sp);
        distribute(
            store.value(tb.entity).row_slice(s),
            store.value(tb.relation).row_slice(r),
            store.value(tb.timestamp).row_slice(t),
        )
    })
}

/// `ȟ_M ⊙ σ(Wᵀ [ȟ_S, ȟ_H, ȟ_E])` with `W` of shape `[3D, D]`.
pub fn encode(inputs: &[Vec<f64>; 3], space: usize, w: &Tensor) -> Vec<f64> {
    let d = inputs[0].len();
    let concat: Vec<f64> = inputs.iter().flatten().copied().collect();
    (0..d)
        .map(|j| {
            let z: f64 = concat
                .iter()
                .enumerate()
                .map(|(i, c)| c * w.data()[i * d + j])
                .sum();
            inputs[space][j] * sig(z)
        })
        .collect()
}

/// The 18 pooled inputs in canonical order.
pub fn pooled_inputs(model: &ImeModel, s: usize, r: usize, t: usize) -> Vec<Vec<f64>> {
    let c = checked(model, s, r, t);
    let store = model.params();
    let mut out = Vec::new();
    for kind in 0..3 {
        let inputs = [c[0][kind].clone(), c[1][kind].clone(), c[2][kind].clone()];
        for sp in SPACES {
            out.push(encode(&inputs, sp as usize, store.value(model.w_shared())));
        }
        for sp in SPACES {
            out.push(encode(
                &inputs,
                sp as usize,
                store.value(model.w_specific(sp)),
            ));
        }
    }
    out
}

pub fn pool(x: &[Vec<f64>], psi: &[f64]) -> Vec<f64> {
    let d = x[0].len();
    let mut out = vec![0.0; d];
    for (k, o) in out.iter_mut().enumerate() {
        let mut col: Vec<f64> = x.iter().map(|v| v[k]).collect();
        col.sort_by(|a, b| b.partial_cmp(a).unwrap());
        *o = col.iter().zip(psi).map(|(v, w)| v * w).sum();
    }
    out
}

pub fn score(model: &ImeModel, s: usize, r: usize, t: usize, o: usize) -> f64 {
    let psi = match ime_core::model::fixed_weights(model.pooling(), 18) {
        Some(w) => w,
        None => pooling_weights(model),
    };
    let pooled = pool(&pooled_inputs(model, s, r, t), &psi);
    let answer = model.params().value(model.tables(Space::Euclidean).entity);
    dot(&pooled, answer.row_slice(o))
}

type Rows = Vec<Vec<f64>>;

fn column_means(x: &[Vec<f64>]) -> Vec<f64> {
    let d = x[0].len();
    (0..d)
        .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / x.len() as f64)
        .collect()
}

pub fn cmd(x: &[Vec<f64>], y: &[Vec<f64>], order: usize, a: f64, b: f64) -> f64 {
    let span = (b - a).abs();
    let (mx, my) = (column_means(x), column_means(y));
    let norm = |v: Vec<f64>| v.iter().map(|e| e * e).sum::<f64>().sqrt();
    let mut total = norm(mx.iter().zip(&my).map(|(p, q)| p - q).collect()) / span;
    for k in 2..=order {
        let moment = |z: &[Vec<f64>], m: &[f64]| -> Vec<f64> {
            (0..m.len())
                .map(|j| {
                    z.iter().map(|r| (r[j] - m[j]).powi(k as i32)).sum::<f64>() / z.len() as f64
                })
                .collect()
        };
        let (cx, cy) = (moment(x, &mx), moment(y, &my));
        total += norm(cx.iter().zip(&cy).map(|(p, q)| p - q).collect()) / span.powi(k as i32);
    }
    total
}

const PAIRS: [(usize, usize); 3] = [(2, 1), (2, 0), (1, 0)];

pub fn similarity(features: [&Rows; 3], order: usize) -> f64 {
    let sq: Vec<Rows> = features
        .iter()
        .map(|f| {
            f.iter()
                .map(|r| r.iter().map(|v| sig(*v)).collect())
                .collect()
        })
        .collect();
    PAIRS
        .iter()
        .map(|&(p, q)| cmd(&sq[p], &sq[q], order, 0.0, 1.0))
        .sum::<f64>()
        / 3.0
}

/// `‖Aᵀ B‖²_F` with rows as samples.
pub fn gram_sq(a: &Rows, b: &Rows) -> f64 {
    let (da, db) = (a[0].len(), b[0].len());
    let mut s = 0.0;
    for i in 0..da {
        for j in 0..db {
            let v: f64 = a.iter().zip(b).map(|(ra, rb)| ra[i] * rb[j]).sum();
            s += v * v;
        }
    }
    s
}

pub fn difference(shared: [&Rows; 3], specific: [&Rows; 3]) -> f64 {
    let mut s: f64 = (0..3).map(|m| gram_sq(specific[m], shared[m])).sum();
    for (p, q) in PAIRS {
        s += gram_sq(specific[p], specific[q]);
    }
    s
}

/// Cosine of the angle at `r` formed by `s` and `t`, or `None` when an edge is (near) zero.
pub fn vertex_cosine(s: &[f64], r: &[f64], t: &[f64]) -> Option<f64> {
    let ab: Vec<f64> = s.iter().zip(r).map(|(a, b)| a - b).collect();
    let cb: Vec<f64> = t.iter().zip(r).map(|(a, b)| a - b).collect();
    let (na, nc) = (dot(&ab, &ab).sqrt(), dot(&cb, &cb).sqrt());
    if na < 1e-12 || nc < 1e-12 {
        return None;
    }
    Some(dot(&ab, &cb) / (na * nc))
}

/// `triples[space][b] = (s, r, t)`
pub fn structure(triples: &[Vec<[Vec<f64>; 3]>; 3]) -> f64 {
    let b = triples[0].len();
    let mut total = 0.0;
    for i in 0..b {
        let cos: Option<Vec<f64>> = (0..3)
            .map(|m| {
                let [s, r, t] = &triples[m][i];
                vertex_cosine(s, r, t)
            })
            .collect();
        if let Some(c) = cos {
            total += PAIRS.iter().map(|&(p, q)| (c[p] - c[q]).abs()).sum::<f64>();
        }
    }
    total / (3.0 * b as f64)
}

pub fn task(scores: &[Vec<f64>], targets: &[usize]) -> f64 {
    let mut s = 0.0;
    for (row, &o) in scores.iter().zip(targets) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        s += lse - row[o];
    }
    s / scores.len() as f64
}

/// `[task, sim, diff, stru]` for a batch, similarity over shared features.
pub fn loss_terms(model: &ImeModel, batch: &[ime_core::data::Quadruple], order: usize) -> [f64; 4] {
    let store = model.params();
    let n_e = model.dims().n_entities;
    let answer = store.value(model.tables(Space::Euclidean).entity);
    let psi = match ime_core::model::fixed_weights(model.pooling(), 18) {
        Some(w) => w,
        None => pooling_weights(model),
    };
    // shared[kind][space] / specific[kind][space] as batched rows
    let mut shared: Vec<Vec<Rows>> = vec![vec![Vec::new(); 3]; 3];
    let mut specific = shared.clone();
    let mut triples: [Vec<[Vec<f64>; 3]>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut scores = Vec::new();
    for q in batch {
        let c = checked(model, q.s, q.r, q.t);
        for (m, tr) in triples.iter_mut().enumerate() {
            tr.push(c[m].clone());
        }
        for kind in 0..3 {
            let inputs = [c[0][kind].clone(), c[1][kind].clone(), c[2][kind].clone()];
            for sp in SPACES {
                let m = sp as usize;
                shared[kind][m].push(encode(&inputs, m, store.value(model.w_shared())));
                specific[kind][m].push(encode(&inputs, m, store.value(model.w_specific(sp))));
            }
        }
        let pooled = pool(&pooled_inputs(model, q.s, q.r, q.t), &psi);
        scores.push(
            (0..n_e)
                .map(|o| dot(&pooled, answer.row_slice(o)))
                .collect::<Vec<_>>(),
        );
    }
    let targets: Vec<usize> = batch.iter().map(|q| q.o).collect();
    let sim: f64 = (0..3)
        .map(|k| similarity([&shared[k][0], &shared[k][1], &shared[k][2]], order))
        .sum();
    let diff: f64 = (0..3)
        .map(|k| {
            difference(
                [&shared[k][0], &shared[k][1], &shared[k][2]],
                [&specific[k][0], &specific[k][1], &specific[k][2]],
            )
        })
        .sum();
    [task(&scores, &targets), sim, diff, structure(&triples)]
}
