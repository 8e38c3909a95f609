//! Fixtures shared by the benches.

use ime_core::data::{augment_reciprocal, generate_synthetic};
use ime_core::{Dataset, ImeModel, ModelDims, Pattern, PoolingMode, Quadruple};

pub struct Fixture {
    pub dataset: Dataset,
    pub model: ImeModel,
    /// Augmented training quadruples.
    pub train: Vec<Quadruple>,
}

/// A ring graph and a freshly initialised model of width `dim`.
pub fn ring_fixture(entities: usize, dim: usize) -> Fixture {
    let raw = generate_synthetic(entities, 2, 4, Pattern::Ring, 7).expect("synthetic data");
    let dataset = Dataset::from_raw(&raw).expect("dataset");
    let dims = ModelDims::new(
        dim,
        dataset.vocab.n_entities(),
        dataset.vocab.n_relations(),
        dataset.vocab.n_timestamps(),
    );
    let model = ImeModel::new(dims, PoolingMode::Adjustable, 7).expect("model");
    let train = augment_reciprocal(&dataset.train, dataset.vocab.n_relations());
    Fixture {
        dataset,
        model,
        train,
    }
}

/// First `n` quadruples, cycling if the split is shorter.
pub fn batch(f: &Fixture, n: usize) -> Vec<Quadruple> {
    f.train.iter().copied().cycle().take(n).collect()
}
