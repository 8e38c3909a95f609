//! The scoring model: per-space embedding tables, the quadruplet
//! distributor, shared/specific gated encoders, sorted-feature pooling and the
//! inner-product scorer.

mod distributor;
mod encoder;
mod pooling;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use distributor::{distribute, distribute_vars, CheckedTriple, CheckedVars};
pub use encoder::{encode_shared, encode_specific, encode_vars, Encoded, KindBySpace};
pub use pooling::{
    fixed_weights, pool, pool_sorted_var, pooling_weights, pooling_weights_var,
    positional_encoding, AmpParams, PoolingMode,
};

use crate::data::Quadruple;
use crate::diffnum::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Number of pooled vectors: 3 element kinds × (3 shared + 3 specific).
pub const N_POOLED: usize = 18;

/// Largest row norm kept in the hyperbolic tables.
pub const BALL_MAX_NORM: f64 = 1.0 - 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Space {
    Hyperspherical = 0,
    Hyperbolic = 1,
    Euclidean = 2,
}

pub const SPACES: [Space; 3] = [Space::Hyperspherical, Space::Hyperbolic, Space::Euclidean];

impl Space {
    pub fn name(self) -> &'static str {
        match self {
            Space::Hyperspherical => "sphere",
            Space::Hyperbolic => "ball",
            Space::Euclidean => "flat",
        }
    }

    /// Maps a row back onto the space: unit sphere, open unit ball, or unchanged.
    pub fn project_row(self, row: &mut [f64]) {
        match self {
            Space::Euclidean => {}
            Space::Hyperspherical => {
                let n = norm(row);
                if n == 0.0 {
                    row[0] = 1.0;
                    return;
                }
                row.iter_mut().for_each(|v| *v /= n);
            }
            Space::Hyperbolic => {
                let mut n = norm(row);
                let mut scale = BALL_MAX_NORM;
                // rounding can leave the rescaled norm an ulp above the bound
                while n > BALL_MAX_NORM {
                    let f = scale / n;
                    row.iter_mut().for_each(|v| *v *= f);
                    n = norm(row);
                    scale *= 1.0 - 1e-15;
                }
            }
        }
    }

    pub fn satisfies(self, row: &[f64], sphere_tol: f64) -> bool {
        match self {
            Space::Euclidean => true,
            Space::Hyperspherical => (norm(row) - 1.0).abs() <= sphere_tol,
            Space::Hyperbolic => norm(row) <= BALL_MAX_NORM,
        }
    }
}

fn norm(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub dim: usize,
    pub n_entities: usize,
    /// Base relation count; the tables hold `2 ×` this many rows.
    pub n_relations: usize,
    pub n_timestamps: usize,
    pub pos_dim: usize,
    pub gru_hidden: usize,
}

impl ModelDims {
    pub fn new(dim: usize, n_entities: usize, n_relations: usize, n_timestamps: usize) -> Self {
        ModelDims {
            dim,
            n_entities,
            n_relations,
            n_timestamps,
            pos_dim: 32,
            gru_hidden: 16,
        }
    }

    pub fn relation_rows(&self) -> usize {
        2 * self.n_relations
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SpaceTables {
    pub entity: ParamId,
    pub relation: ParamId,
    pub timestamp: ParamId,
}

/// Initialisation scales.
#[derive(Clone, Copy, Debug)]
pub struct InitOptions {
    pub embedding_std: f64,
}

impl Default for InitOptions {
    fn default() -> Self {
        InitOptions {
            embedding_std: 1e-2,
        }
    }
}

/// Everything one forward pass exposes to the losses.
#[derive(Clone, Copy, Debug)]
pub struct ForwardPass {
    /// Indexed by [`Space`].
    pub checked: [CheckedVars; 3],
    pub encoded: Encoded,
    pub psi: Var,
    /// `[B, D]`
    pub pooled: Var,
}

#[derive(Clone, Debug)]
pub struct ImeModel {
    dims: ModelDims,
    pooling: PoolingMode,
    store: ParamStore,
    tables: [SpaceTables; 3],
    w_shared: ParamId,
    w_specific: [ParamId; 3],
    amp: AmpParams,
    positions: Tensor,
}

impl ImeModel {
    pub fn new(dims: ModelDims, pooling: PoolingMode, seed: u64) -> Result<Self> {
        Self::with_init(dims, pooling, seed, InitOptions::default())
    }

    pub fn with_init(
        dims: ModelDims,
        pooling: PoolingMode,
        seed: u64,
        init: InitOptions,
    ) -> Result<Self> {
        if dims.dim == 0 || dims.n_entities == 0 || dims.n_relations == 0 || dims.n_timestamps == 0
        {
            return Err(Error::InvalidArgument(format!(
                "degenerate model dims {dims:?}"
            )));
        }
        let positions = positional_encoding(N_POOLED, dims.pos_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let normal = Normal::new(0.0, init.embedding_std)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let d = dims.dim;

        let tables = SPACES.map(|space| {
            let mut table = |kind: &str, rows: usize| {
                let data = (0..rows * d).map(|_| normal.sample(&mut rng)).collect();
                let mut t = Tensor::new(vec![rows, d], data).expect("shape");
                for r in 0..rows {
                    space.project_row(t.row_slice_mut(r));
                }
                store.add(format!("{}.{kind}", space.name()), t)
            };
            SpaceTables {
                entity: table("entity", dims.n_entities),
                relation: table("relation", dims.relation_rows()),
                timestamp: table("timestamp", dims.n_timestamps),
            }
        });

        let mut encoder = |name: String, rng: &mut ChaCha8Rng| {
            let bound = 1.0 / ((3 * d) as f64).sqrt();
            let data = (0..3 * d * d)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            store.add(name, Tensor::new(vec![3 * d, d], data).expect("shape"))
        };
        let w_shared = encoder("encoder.shared".into(), &mut rng);
        let w_specific =
            SPACES.map(|sp| encoder(format!("encoder.specific.{}", sp.name()), &mut rng));
        let amp = AmpParams::init(&mut store, dims.pos_dim, dims.gru_hidden, &mut rng);

        Ok(ImeModel {
            dims,
            pooling,
            store,
            tables,
            w_shared,
            w_specific,
            amp,
            positions,
        })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn pooling(&self) -> PoolingMode {
        self.pooling
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn tables(&self, space: Space) -> &SpaceTables {
        &self.tables[space as usize]
    }

    pub fn w_shared(&self) -> ParamId {
        self.w_shared
    }

    pub fn w_specific(&self, space: Space) -> ParamId {
        self.w_specific[space as usize]
    }

    pub fn amp(&self) -> &AmpParams {
        &self.amp
    }

    pub fn positions(&self) -> &Tensor {
        &self.positions
    }

    /// The Euclidean entity table scores candidate answers.
    pub fn answer_table(&self) -> ParamId {
        self.tables[Space::Euclidean as usize].entity
    }

    /// Which space (if any) constrains a parameter.
    pub fn space_of(&self, id: ParamId) -> Option<Space> {
        SPACES.into_iter().find(|&sp| {
            let t = &self.tables[sp as usize];
            id == t.entity || id == t.relation || id == t.timestamp
        })
    }

    /// Re-applies every table's space constraint.
    pub fn project(&mut self) {
        for sp in SPACES {
            let t = self.tables[sp as usize];
            for id in [t.entity, t.relation, t.timestamp] {
                let table = self.store.value_mut(id);
                for r in 0..table.shape()[0] {
                    sp.project_row(table.row_slice_mut(r));
                }
            }
        }
    }

    /// Re-applies the constraint to selected rows of one parameter. Rows of
    /// unconstrained parameters are left as they are.
    pub fn project_rows(&mut self, id: ParamId, rows: &[usize]) {
        if let Some(sp) = self.space_of(id) {
            let table = self.store.value_mut(id);
            for &r in rows {
                sp.project_row(table.row_slice_mut(r));
            }
        }
    }

    /// Number of rows breaking their space constraint.
    pub fn constraint_violations(&self, sphere_tol: f64) -> usize {
        let mut bad = 0;
        for sp in SPACES {
            let t = &self.tables[sp as usize];
            for id in [t.entity, t.relation, t.timestamp] {
                bad += self
                    .store
                    .value(id)
                    .rows()
                    .filter(|r| !sp.satisfies(r, sphere_tol))
                    .count();
            }
        }
        bad
    }

    fn check_query(&self, s: usize, r: usize, t: usize) -> Result<()> {
        let check = |what, index, size| {
            if index < size {
                Ok(())
            } else {
                Err(Error::IndexOutOfRange { what, index, size })
            }
        };
        check("entity", s, self.dims.n_entities)?;
        check("relation", r, self.dims.relation_rows())?;
        check("timestamp", t, self.dims.n_timestamps)
    }

    /// Pooling weights as a graph node: learned for AMP, constant otherwise.
    pub fn psi_var(&self, g: &mut Graph) -> Result<Var> {
        match fixed_weights(self.pooling, N_POOLED) {
            Some(w) => g.input(Tensor::vector(w)),
            None => pooling_weights_var(g, &self.store, &self.amp, &self.positions),
        }
    }

    pub fn pooling_weights(&self) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let psi = self.psi_var(&mut g)?;
        Ok(g.value(psi).data().to_vec())
    }

    /// Builds the pooled query vector for every `(s, r, t)` of `queries`.
    /// Each quadruple's `o` is ignored.
    pub fn forward(&self, g: &mut Graph, queries: &[Quadruple]) -> Result<ForwardPass> {
        if queries.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        for q in queries {
            self.check_query(q.s, q.r, q.t)?;
        }
        let s_idx: Vec<usize> = queries.iter().map(|q| q.s).collect();
        let r_idx: Vec<usize> = queries.iter().map(|q| q.r).collect();
        let t_idx: Vec<usize> = queries.iter().map(|q| q.t).collect();

        let mut checked = Vec::with_capacity(3);
        for sp in SPACES {
            let tb = &self.tables[sp as usize];
            let s = g.gather_rows(&self.store, tb.entity, &s_idx)?;
            let r = g.gather_rows(&self.store, tb.relation, &r_idx)?;
            let t = g.gather_rows(&self.store, tb.timestamp, &t_idx)?;
            checked.push(distribute_vars(g, s, r, t)?);
        }
        let checked = [checked[0], checked[1], checked[2]];

        let w_shared = g.param(&self.store, self.w_shared)?;
        let w_specific = [
            g.param(&self.store, self.w_specific[0])?,
            g.param(&self.store, self.w_specific[1])?,
            g.param(&self.store, self.w_specific[2])?,
        ];
        let encoded = encode_vars(g, &checked, w_shared, w_specific)?;

        let b = queries.len();
        let d = self.dims.dim;
        let mut slots = Vec::with_capacity(N_POOLED);
        for kind in 0..3 {
            for group in [&encoded.shared[kind], &encoded.specific[kind]] {
                for &v in group {
                    slots.push(g.reshape(v, &[b, 1, d])?);
                }
            }
        }
        let stacked = g.concat(&slots, 1)?;
        let psi = self.psi_var(g)?;
        let pooled_3d = pool_sorted_var(g, stacked, psi)?;
        let pooled = g.reshape(pooled_3d, &[b, d])?;
        Ok(ForwardPass {
            checked,
            encoded,
            psi,
            pooled,
        })
    }

    /// `[B, |E|]` scores of every candidate answer.
    pub fn score_all_var(&self, g: &mut Graph, pooled: Var) -> Result<Var> {
        let table = g.param(&self.store, self.answer_table())?;
        let tt = g.transpose(table)?;
        g.matmul(pooled, tt)
    }

    /// Pooled query vectors, one row per query.
    pub fn pooled(&self, queries: &[Quadruple]) -> Result<Tensor> {
        let mut g = Graph::new();
        let fp = self.forward(&mut g, queries)?;
        Ok(g.value(fp.pooled).clone())
    }

    /// `[B, |E|]` candidate scores for a batch of queries.
    pub fn score_all_batch(&self, queries: &[Quadruple]) -> Result<Tensor> {
        let mut g = Graph::new();
        let fp = self.forward(&mut g, queries)?;
        let scores = self.score_all_var(&mut g, fp.pooled)?;
        Ok(g.value(scores).clone())
    }

    pub fn score_all(&self, s: usize, r: usize, t: usize) -> Result<Vec<f64>> {
        Ok(self
            .score_all_batch(&[Quadruple::new(s, r, 0, t)])?
            .into_data())
    }

    /// `⟨pooled(s, r, t), o⟩` with `o` the candidate's Euclidean entity row.
    pub fn score(&self, s: usize, r: usize, t: usize, o: usize) -> Result<f64> {
        if o >= self.dims.n_entities {
            return Err(Error::IndexOutOfRange {
                what: "entity",
                index: o,
                size: self.dims.n_entities,
            });
        }
        let pooled = self.pooled(&[Quadruple::new(s, r, o, t)])?;
        let answer = self.store.value(self.answer_table()).row_slice(o);
        Ok(pooled.data().iter().zip(answer).map(|(a, b)| a * b).sum())
    }

    /// The 18 pooled inputs for a single query in canonical order.
    pub fn pooled_inputs(&self, s: usize, r: usize, t: usize) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let fp = self.forward(&mut g, &[Quadruple::new(s, r, 0, t)])?;
        let mut out = Vec::with_capacity(N_POOLED);
        for kind in 0..3 {
            for group in [&fp.encoded.shared[kind], &fp.encoded.specific[kind]] {
                for &v in group {
                    out.push(g.value(v).data().to_vec());
                }
            }
        }
        Ok(out)
    }
}
