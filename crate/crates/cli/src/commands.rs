use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use ime_core::data::{augment_reciprocal, generate_synthetic};
use ime_core::diffnum::GradCheckOptions;
use ime_core::eval::{evaluate, evaluate_per_relation};
use ime_core::losses::grad_check_term;
use ime_core::model::{InitOptions, N_POOLED};
use ime_core::trainer::{
    load_checkpoint, load_dataset, load_trained_model, train as run_training, RunOptions,
    BEST_FILE, CHECKPOINT_FILE,
};
use ime_core::{
    Dataset, ImeModel, LossOptions, LossTerm, ModelDims, Pattern, RankingReport, Split, TrainConfig,
};

use crate::SweepParam;

fn load_config(path: Option<&Path>, data: Option<&Path>) -> Result<TrainConfig> {
    let mut config = match path {
        Some(p) => {
            TrainConfig::from_file(p).with_context(|| format!("reading config {}", p.display()))?
        }
        None => TrainConfig::desk(),
    };
    if let Some(dir) = data {
        config.train = Some(dir.join("train.txt"));
        config.valid = Some(dir.join("valid.txt"));
        config.test = Some(dir.join("test.txt"));
    }
    Ok(config)
}

pub fn train(
    config: &Path,
    out: &Path,
    data: Option<&Path>,
    resume: bool,
    quiet: bool,
) -> Result<ExitCode> {
    let config = load_config(Some(config), data)?;
    let dataset = load_dataset(&config)?;
    let stats = dataset.stats();
    if !quiet {
        println!(
            "{} entities, {} relations, {} timestamps; {}/{}/{} facts",
            stats.entities, stats.relations, stats.timestamps, stats.train, stats.valid, stats.test
        );
    }
    let mut observe = |row: &ime_core::trainer::MetricsRow, _: &ImeModel| {
        if let (Some(v), false) = (row.valid, quiet) {
            println!(
                "epoch {:>4}  loss {:>10.5}  valid MRR {:.4}  H@1 {:.4}  H@10 {:.4}",
                row.epoch, row.loss.total, v.mrr, v.hits1, v.hits10
            );
        }
    };
    let opts = RunOptions {
        resume,
        stop_at_epoch: None,
    };
    let summary = run_training(&config, &dataset, out, opts, &mut observe)?;
    println!(
        "finished after {} epochs ({} steps); checkpoints in {}",
        summary.state.epoch,
        summary.state.step,
        out.display()
    );
    if let Some(best) = summary.state.best_mrr {
        println!("best valid MRR {best:.4}");
    }
    Ok(ExitCode::SUCCESS)
}

fn relation_label(ds: &Dataset, r: usize) -> String {
    let n = ds.vocab.n_relations();
    let base = ds.vocab.relations.label(r % n).unwrap_or("?");
    if r < n {
        base.to_string()
    } else {
        format!("{base}^-1")
    }
}

fn split_report(model: &ImeModel, ds: &Dataset, split: Split) -> Result<RankingReport> {
    let queries = ds.augmented(split);
    Ok(evaluate(model, &queries, &ds.filter_index())?)
}

pub fn eval(
    checkpoint: &Path,
    split: &str,
    per_relation: bool,
    out: Option<&Path>,
) -> Result<ExitCode> {
    let split_id: Split = split.parse()?;
    let (model, config) = load_trained_model(checkpoint)?;
    let ds = load_dataset(&config)?;
    let report = split_report(&model, &ds, split_id)?;

    let mut csv = format!("relation,{}\n", RankingReport::CSV_HEADER);
    writeln!(csv, "all,{}", report.csv_row())?;
    println!("{split} split, filtered\n{report}");
    if per_relation {
        let queries = ds.augmented(split_id);
        let rows = evaluate_per_relation(&model, &queries, &ds.filter_index())?;
        println!(
            "\n{:<24} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "relation", "MRR", "H@1", "H@3", "H@10", "n"
        );
        for (r, rep) in rows {
            let label = relation_label(&ds, r);
            println!(
                "{:<24} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8}",
                label, rep.mrr, rep.hits1, rep.hits3, rep.hits10, rep.n_queries
            );
            writeln!(csv, "{},{}", label.replace(',', ";"), rep.csv_row())?;
        }
    }
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf(),
    };
    fs::create_dir_all(&dir)?;
    let path = dir.join(format!("report_{split}.csv"));
    fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(config: Option<&Path>, tol: f64, eps: f64) -> Result<ExitCode> {
    let config = load_config(config, None)?;
    let raw = generate_synthetic(5, 2, 2, Pattern::Ring, config.seed)?;
    let ds = Dataset::from_raw(&raw)?;
    let batch = augment_reciprocal(&ds.train, ds.vocab.n_relations());
    let dims = ModelDims {
        pos_dim: config.pos_dim,
        gru_hidden: config.gru_hidden,
        ..ModelDims::new(config.dim, 5, 2, 2)
    };
    let model = ImeModel::with_init(
        dims,
        config.pooling,
        config.seed,
        InitOptions {
            embedding_std: config.embedding_std,
        },
    )?;
    let loss_opts = LossOptions {
        cmd_order: config.cmd_order,
        similarity_features: config.sim_features,
    };
    let check = GradCheckOptions {
        tol,
        eps,
        ..Default::default()
    };
    println!(
        "D={} batch={} eps={:e} tol={:e}",
        config.dim,
        batch.len(),
        check.eps,
        check.tol
    );
    let mut ok = true;
    for term in LossTerm::ALL {
        let r = grad_check_term(&model, &batch, &config.weights, &loss_opts, term, check)?;
        let worst = r
            .params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
            .map(|p| p.name.as_str())
            .unwrap_or("-");
        println!(
            "{:<6} max rel. error {:.3e}  worst {:<28} kinked {:>3}  {}",
            term.name(),
            r.max_rel_error,
            worst,
            r.kinked,
            if r.passed { "ok" } else { "FAIL" }
        );
        ok &= r.passed;
    }
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

pub fn synth(
    pattern: Pattern,
    entities: usize,
    relations: usize,
    timestamps: usize,
    seed: u64,
    out: &Path,
) -> Result<ExitCode> {
    let raw = generate_synthetic(entities, relations, timestamps, pattern, seed)?;
    raw.write_dir(out)?;
    println!(
        "wrote {}/{}/{} facts to {}",
        raw.train.len(),
        raw.valid.len(),
        raw.test.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn inspect(checkpoint: &Path) -> Result<ExitCode> {
    let ck = load_checkpoint(checkpoint)?;
    let model = ck.restore_model()?;
    let d = model.dims();
    println!(
        "D={} entities={} relations={} timestamps={} pooling={} epoch={} step={}",
        d.dim,
        d.n_entities,
        d.n_relations,
        d.n_timestamps,
        model.pooling(),
        ck.state.epoch,
        ck.state.step
    );
    let psi = model.pooling_weights()?;
    debug_assert_eq!(psi.len(), N_POOLED);
    println!("\npooling weights (sorted position: weight)");
    for (i, w) in psi.iter().enumerate() {
        println!("  psi[{:>2}] {w:.6}", i + 1);
    }
    println!("  sum      {:.6}", psi.iter().sum::<f64>());
    println!("\n{:<32} {:>14} {:>12}", "parameter", "shape", "norm");
    for p in model.params().iter() {
        let norm = p.tensor.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let shape = format!("{:?}", p.tensor.shape());
        println!("{:<32} {:>14} {:>12.6}", p.name, shape, norm);
    }
    Ok(ExitCode::SUCCESS)
}

fn apply(config: &mut TrainConfig, param: SweepParam, value: &str) -> Result<()> {
    let real = || -> Result<f64> {
        let v: f64 = value
            .trim()
            .parse()
            .with_context(|| format!("bad sweep value '{value}'"))?;
        Ok(v)
    };
    match param {
        SweepParam::Alpha => config.weights.alpha = real()?,
        SweepParam::Beta => config.weights.beta = real()?,
        SweepParam::Gamma => config.weights.gamma = real()?,
        SweepParam::Dim => {
            config.dim = value
                .trim()
                .parse()
                .with_context(|| format!("bad dimension '{value}'"))?
        }
    }
    config.validate()?;
    Ok(())
}

pub fn sweep(
    param: SweepParam,
    values: &[String],
    config: Option<&Path>,
    data: Option<&Path>,
    out: &Path,
) -> Result<ExitCode> {
    let base = load_config(config, data)?;
    if base.train.is_none() {
        bail!("sweep needs a dataset: pass --data or name the splits in --config");
    }
    let dataset = load_dataset(&base)?;
    fs::create_dir_all(out)?;
    let name = format!("{param:?}").to_lowercase();
    let mut csv = format!(
        "{name},epochs,best_valid_mrr,test_{}\n",
        RankingReport::CSV_HEADER.replace(',', ",test_")
    );
    for value in values {
        let mut config = base.clone();
        apply(&mut config, param, value)?;
        let run_dir: PathBuf = out.join(format!("{name}-{}", value.trim()));
        let summary = run_training(
            &config,
            &dataset,
            &run_dir,
            RunOptions::default(),
            &mut |_, _| {},
        )?;
        let best = run_dir.join(BEST_FILE);
        let ck = if best.exists() {
            best
        } else {
            run_dir.join(CHECKPOINT_FILE)
        };
        let (model, _) = load_trained_model(&ck)?;
        let report = split_report(&model, &dataset, Split::Test)?;
        let best_valid = summary
            .state
            .best_mrr
            .map(|m| m.to_string())
            .unwrap_or_default();
        println!(
            "{name}={:<10} epochs {:>4}  test MRR {:.4}  H@1 {:.4}",
            value.trim(),
            summary.state.epoch,
            report.mrr,
            report.hits1
        );
        writeln!(
            csv,
            "{},{},{best_valid},{}",
            value.trim(),
            summary.state.epoch,
            report.csv_row()
        )?;
    }
    let path = out.join(format!("sweep_{name}.csv"));
    fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}
