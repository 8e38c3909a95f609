//! Mini-batch training with per-space projection, validation-based early
//! stopping, metrics logging and resumable checkpoints.

mod checkpoint;
mod config;
mod optim;

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, TrainState,
};
pub use config::{parse_pairs, Profile, TrainConfig};
pub use optim::{Optimizer, OptimizerKind, ADAGRAD_EPS};

use crate::data::{
    check_statistics, known_statistics, Dataset, FilterIndex, Quadruple, RawSplits, Split,
};
use crate::diffnum::Graph;
use crate::error::{Error, Result};
use crate::eval::{evaluate, RankingReport};
use crate::losses::{total_loss_var, LossBreakdown, LossOptions};
use crate::model::{ImeModel, InitOptions, ModelDims};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const BEST_FILE: &str = "best.bin";
pub const DIVERGED_FILE: &str = "diverged.bin";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: &str =
    "epoch,step,task,sim,diff,stru,total,valid_mrr,valid_h1,valid_h3,valid_h10";

/// Sphere rows must stay within this distance of unit norm.
pub const SPHERE_TOL: f64 = 1e-9;

/// One logged optimizer step; `valid` is set on the step that closes an
/// evaluation interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub step: u64,
    pub loss: LossBreakdown,
    pub valid: Option<RankingReport>,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let l = &self.loss;
        let v = match &self.valid {
            Some(r) => format!("{},{},{},{}", r.mrr, r.hits1, r.hits3, r.hits10),
            None => ",,,".to_string(),
        };
        format!(
            "{},{},{},{},{},{},{},{v}",
            self.epoch, self.step, l.task, l.sim, l.diff, l.stru, l.total
        )
    }
}

pub fn model_dims(config: &TrainConfig, dataset: &Dataset) -> ModelDims {
    ModelDims {
        pos_dim: config.pos_dim,
        gru_hidden: config.gru_hidden,
        ..ModelDims::new(
            config.dim,
            dataset.vocab.n_entities(),
            dataset.vocab.n_relations(),
            dataset.vocab.n_timestamps(),
        )
    }
}

/// Loads the splits named by the config, checking published statistics
/// when `verify_stats` is set.
pub fn load_dataset(config: &TrainConfig) -> Result<Dataset> {
    let missing = |k: &str| Error::Config(format!("config does not name a {k} split"));
    let raw = RawSplits::load(
        config.train.clone().ok_or_else(|| missing("train"))?,
        config.valid.clone().ok_or_else(|| missing("valid"))?,
        config.test.clone().ok_or_else(|| missing("test"))?,
    )?;
    let ds = Dataset::from_raw(&raw)?;
    if config.verify_stats {
        let name = config
            .dataset
            .as_deref()
            .ok_or_else(|| Error::Config("verify_stats needs a dataset name".into()))?;
        let expected = known_statistics(name)
            .ok_or_else(|| Error::Config(format!("no published statistics for '{name}'")))?;
        check_statistics(&ds.stats(), &expected)?;
    }
    Ok(ds)
}

pub struct Trainer {
    config: TrainConfig,
    model: ImeModel,
    optimizer: Optimizer,
    state: TrainState,
    train_queries: Vec<Quadruple>,
    valid_queries: Vec<Quadruple>,
    filter: FilterIndex,
    loss_opts: LossOptions,
}

impl Trainer {
    pub fn new(config: TrainConfig, dataset: &Dataset) -> Result<Self> {
        config.validate()?;
        let model = ImeModel::with_init(
            model_dims(&config, dataset),
            config.pooling,
            config.seed,
            InitOptions {
                embedding_std: config.embedding_std,
            },
        )?;
        let optimizer = Optimizer::new(config.optimizer, config.lr, model.params());
        Self::assemble(config, dataset, model, optimizer, TrainState::new())
    }

    pub fn from_checkpoint(
        config: TrainConfig,
        dataset: &Dataset,
        ck: &Checkpoint,
    ) -> Result<Self> {
        config.validate()?;
        ck.check_dims(&model_dims(&config, dataset))?;
        if ck.pooling != config.pooling || ck.optimizer != config.optimizer {
            return Err(Error::Checkpoint(
                "checkpoint pooling/optimizer differ from the config".into(),
            ));
        }
        let model = ck.restore_model()?;
        let optimizer = ck.restore_optimizer(&model, config.lr)?;
        Self::assemble(config, dataset, model, optimizer, ck.state)
    }

    fn assemble(
        config: TrainConfig,
        dataset: &Dataset,
        model: ImeModel,
        optimizer: Optimizer,
        state: TrainState,
    ) -> Result<Self> {
        let train_queries = dataset.augmented(Split::Train);
        if train_queries.is_empty() {
            return Err(Error::InvalidArgument("training split is empty".into()));
        }
        let loss_opts = LossOptions {
            cmd_order: config.cmd_order,
            similarity_features: config.sim_features,
        };
        Ok(Trainer {
            model,
            optimizer,
            state,
            train_queries,
            valid_queries: dataset.augmented(Split::Valid),
            filter: dataset.filter_index(),
            loss_opts,
            config,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &ImeModel {
        &self.model
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.optimizer
    }

    pub fn filter(&self) -> &FilterIndex {
        &self.filter
    }

    /// True once patience is exhausted or the epoch budget is spent.
    pub fn finished(&self) -> bool {
        self.state.epoch >= self.config.max_epochs || self.state.bad_evals >= self.config.patience
    }

    /// Training order for `epoch`, keyed only by the seed and the epoch.
    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..self.train_queries.len()).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Forward, backward, update and projection for one batch.
    pub fn step(&mut self, batch: &[Quadruple]) -> Result<LossBreakdown> {
        let (epoch, step) = (self.state.epoch + 1, self.state.step + 1);
        let diverged = |reason: String| Error::Diverged {
            epoch,
            step,
            reason,
        };
        let mut g = Graph::new();
        let vars = match total_loss_var(
            &mut g,
            &self.model,
            batch,
            &self.config.weights,
            &self.loss_opts,
        ) {
            Ok(v) => v,
            Err(Error::NonFinite(what)) => return Err(diverged(format!("non-finite {what}"))),
            Err(e) => return Err(e),
        };
        let breakdown = vars.breakdown(&g);
        if !breakdown.total.is_finite() {
            return Err(diverged("non-finite loss".into()));
        }
        let grads = g.backward(vars.total)?;
        let store = self.model.params_mut();
        store.zero_grad();
        grads.accumulate_into(&g, store);
        if store.iter().any(|p| !p.grad.is_finite()) {
            return Err(diverged("non-finite gradient".into()));
        }
        let touched = self.optimizer.step(store);
        let ids: Vec<_> = self.model.params().ids().collect();
        for (id, rows) in ids.into_iter().zip(touched) {
            self.model.project_rows(id, &rows);
        }
        self.state.step += 1;
        Ok(breakdown)
    }

    pub fn evaluate_valid(&self) -> Result<RankingReport> {
        evaluate(&self.model, &self.valid_queries, &self.filter)
    }

    /// Runs one epoch, calling `observe` after every step. Validation runs
    /// on the last step of every `eval_interval`-th epoch (when the split is
    /// non-empty) and updates the early-stopping state.
    pub fn run_epoch(
        &mut self,
        observe: &mut dyn FnMut(&MetricsRow, &ImeModel),
    ) -> Result<Vec<MetricsRow>> {
        let epoch = self.state.epoch + 1;
        let order = self.epoch_order(epoch);
        let n_batches = order.len().div_ceil(self.config.batch_size);
        let mut rows = Vec::with_capacity(n_batches);
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<Quadruple> = chunk.iter().map(|&i| self.train_queries[i]).collect();
            let loss = self.step(&batch)?;
            let mut row = MetricsRow {
                epoch,
                step: self.state.step,
                loss,
                valid: None,
            };
            if b + 1 == n_batches && epoch.is_multiple_of(self.config.eval_interval) {
                let bad = self.model.constraint_violations(SPHERE_TOL);
                if bad > 0 {
                    return Err(Error::InvalidArgument(format!(
                        "{bad} embedding rows violate their space constraint"
                    )));
                }
                if !self.valid_queries.is_empty() {
                    let report = self.evaluate_valid()?;
                    if self.state.best_mrr.is_none_or(|m| report.mrr > m) {
                        self.state.best_mrr = Some(report.mrr);
                        self.state.bad_evals = 0;
                    } else {
                        self.state.bad_evals += 1;
                    }
                    row.valid = Some(report);
                }
            }
            observe(&row, &self.model);
            rows.push(row);
        }
        self.state.epoch = epoch;
        Ok(rows)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(path, &self.model, &self.optimizer, &self.state)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Continue from `checkpoint.bin` in the output directory if present.
    pub resume: bool,
    /// Stop after this many total epochs even if the budget allows more.
    pub stop_at_epoch: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub state: TrainState,
    pub last_valid: Option<RankingReport>,
    pub out_dir: PathBuf,
}

/// `manifest.txt`: the config plus the vocabulary sizes it was trained on.
/// Split paths are stored absolute so the manifest can be read from anywhere.
pub fn write_manifest(path: &Path, config: &TrainConfig, dims: &ModelDims) -> Result<()> {
    let mut config = config.clone();
    for p in [&mut config.train, &mut config.valid, &mut config.test]
        .into_iter()
        .flatten()
    {
        *p = std::path::absolute(&*p).map_err(|e| Error::io(&*p, e))?;
    }
    let text = format!(
        "{}n_entities = {}\nn_relations = {}\nn_timestamps = {}\n",
        config.to_text(),
        dims.n_entities,
        dims.n_relations,
        dims.n_timestamps
    );
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<(TrainConfig, ModelDims)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut config_text = String::new();
    let mut counts = [None; 3];
    for line in text.lines() {
        let key = line.split('=').next().unwrap_or("").trim();
        let slot = ["n_entities", "n_relations", "n_timestamps"]
            .iter()
            .position(|k| *k == key);
        match slot {
            Some(i) => {
                let v = line.split_once('=').map(|x| x.1.trim()).unwrap_or("");
                counts[i] = Some(
                    v.parse::<usize>()
                        .map_err(|_| Error::Config(format!("manifest: bad value for {key}")))?,
                );
            }
            None => {
                config_text.push_str(line);
                config_text.push('\n');
            }
        }
    }
    let config = TrainConfig::parse_relative(&config_text, path.parent())?;
    let [Some(e), Some(r), Some(t)] = counts else {
        return Err(Error::Config("manifest lacks vocabulary sizes".into()));
    };
    let dims = ModelDims {
        pos_dim: config.pos_dim,
        gru_hidden: config.gru_hidden,
        ..ModelDims::new(config.dim, e, r, t)
    };
    Ok((config, dims))
}

/// Loads a checkpoint and checks it against the manifest beside it.
pub fn load_trained_model(checkpoint: &Path) -> Result<(ImeModel, TrainConfig)> {
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    let (config, dims) = read_manifest(&dir.join(MANIFEST_FILE))?;
    let ck = load_checkpoint(checkpoint)?;
    ck.check_dims(&dims)?;
    Ok((ck.restore_model()?, config))
}

/// Keeps the header and the rows of completed epochs.
fn truncate_metrics(path: &Path, epochs_done: usize) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut kept = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let epoch = line.split(',').next().and_then(|e| e.parse::<usize>().ok());
        if i == 0 || epoch.is_some_and(|e| e <= epochs_done) {
            kept.push(line);
        }
    }
    let mut text = kept.join("\n");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Full training run writing `checkpoint.bin`, `best.bin`, `manifest.txt`
/// and `metrics.csv` under `out_dir`.
pub fn train(
    config: &TrainConfig,
    dataset: &Dataset,
    out_dir: &Path,
    opts: RunOptions,
    observe: &mut dyn FnMut(&MetricsRow, &ImeModel),
) -> Result<RunSummary> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ck_path = out_dir.join(CHECKPOINT_FILE);
    let metrics_path = out_dir.join(METRICS_FILE);
    let resume = opts.resume && ck_path.exists();
    let mut trainer = if resume {
        let t = Trainer::from_checkpoint(config.clone(), dataset, &load_checkpoint(&ck_path)?)?;
        truncate_metrics(&metrics_path, t.state.epoch)?;
        t
    } else {
        std::fs::write(&metrics_path, format!("{METRICS_HEADER}\n"))
            .map_err(|e| Error::io(&metrics_path, e))?;
        Trainer::new(config.clone(), dataset)?
    };
    write_manifest(&out_dir.join(MANIFEST_FILE), config, trainer.model.dims())?;

    let mut metrics = OpenOptions::new()
        .append(true)
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;
    let mut last_valid = None;
    let stop_at = opts.stop_at_epoch.unwrap_or(usize::MAX);
    while !trainer.finished() && trainer.state.epoch < stop_at {
        let rows = match trainer.run_epoch(observe) {
            Ok(rows) => rows,
            Err(e @ Error::Diverged { .. }) => {
                // parameters as they were entering the failing step
                save_checkpoint(
                    out_dir.join(DIVERGED_FILE),
                    &trainer.model,
                    &trainer.optimizer,
                    &trainer.state,
                )?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        let mut text = String::new();
        for r in &rows {
            text.push_str(&r.to_csv());
            text.push('\n');
            if let Some(v) = r.valid {
                last_valid = Some(v);
                if trainer.state.bad_evals == 0 {
                    trainer.save(out_dir.join(BEST_FILE))?;
                }
            }
        }
        metrics
            .write_all(text.as_bytes())
            .and_then(|_| metrics.flush())
            .map_err(|e| Error::io(&metrics_path, e))?;
        let at_eval = trainer.state.epoch % config.eval_interval == 0;
        if at_eval || trainer.finished() || trainer.state.epoch >= stop_at {
            trainer.save(&ck_path)?;
        }
    }
    Ok(RunSummary {
        state: trainer.state,
        last_valid,
        out_dir: out_dir.to_path_buf(),
    })
}
