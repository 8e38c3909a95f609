//! Filtered link-prediction evaluation.

use rayon::prelude::*;

use crate::data::{FilterIndex, Quadruple};
use crate::error::{Error, Result};
use crate::model::ImeModel;

/// Queries scored per forward pass during evaluation.
const EVAL_BATCH: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankingReport {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub n_queries: usize,
}

impl RankingReport {
    pub fn from_ranks(ranks: &[f64]) -> Result<RankingReport> {
        if ranks.is_empty() {
            return Err(Error::InvalidArgument("no queries to evaluate".into()));
        }
        let n = ranks.len() as f64;
        let mut rr = 0.0;
        let mut h = [0usize; 3];
        for &r in ranks {
            if !(r >= 1.0) {
                return Err(Error::InvalidArgument(format!("invalid rank {r}")));
            }
            rr += 1.0 / r;
            for (slot, k) in h.iter_mut().zip([1.0, 3.0, 10.0]) {
                if r <= k {
                    *slot += 1;
                }
            }
        }
        Ok(RankingReport {
            mrr: rr / n,
            hits1: h[0] as f64 / n,
            hits3: h[1] as f64 / n,
            hits10: h[2] as f64 / n,
            n_queries: ranks.len(),
        })
    }

    /// `0 < MRR ≤ 1`, `MRR ≥ H@1` and `H@1 ≤ H@3 ≤ H@10 ≤ 1`.
    pub fn is_consistent(&self) -> bool {
        self.mrr > 0.0
            && self.mrr <= 1.0
            && self.mrr >= self.hits1
            && self.hits1 <= self.hits3
            && self.hits3 <= self.hits10
            && self.hits10 <= 1.0
    }

    pub const CSV_HEADER: &'static str = "mrr,hits1,hits3,hits10,n_queries";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.mrr, self.hits1, self.hits3, self.hits10, self.n_queries
        )
    }
}

impl std::fmt::Display for RankingReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<10} {:>8}", "metric", "value")?;
        writeln!(f, "{:<10} {:>8.4}", "MRR", self.mrr)?;
        writeln!(f, "{:<10} {:>8.4}", "Hits@1", self.hits1)?;
        writeln!(f, "{:<10} {:>8.4}", "Hits@3", self.hits3)?;
        writeln!(f, "{:<10} {:>8.4}", "Hits@10", self.hits10)?;
        write!(f, "{:<10} {:>8}", "queries", self.n_queries)
    }
}

/// Filtered rank of `target` within `scores`: every entry of `filtered`
/// other than the target is ignored, and exact ties count half.
pub fn rank_from_scores(scores: &[f64], target: usize, filtered: &[usize]) -> Result<f64> {
    if target >= scores.len() {
        return Err(Error::IndexOutOfRange {
            what: "entity",
            index: target,
            size: scores.len(),
        });
    }
    let truth = scores[target];
    if !truth.is_finite() {
        return Err(Error::NonFinite("target score"));
    }
    let mut skip = vec![false; scores.len()];
    for &e in filtered {
        if e < scores.len() && e != target {
            skip[e] = true;
        }
    }
    let (mut better, mut ties) = (0usize, 0usize);
    for (e, &s) in scores.iter().enumerate() {
        if e == target || skip[e] {
            continue;
        }
        if s.is_nan() {
            return Err(Error::NonFinite("candidate score"));
        }
        if s > truth {
            better += 1;
        } else if s == truth {
            ties += 1;
        }
    }
    Ok(1.0 + better as f64 + ties as f64 / 2.0)
}

pub fn rank_query(model: &ImeModel, q: &Quadruple, filter: &FilterIndex) -> Result<f64> {
    let scores = model.score_all(q.s, q.r, q.t)?;
    rank_from_scores(&scores, q.o, filter.true_tails(q.s, q.r, q.t))
}

fn rank_batch(model: &ImeModel, queries: &[Quadruple], filter: &FilterIndex) -> Result<Vec<f64>> {
    let scores = model.score_all_batch(queries)?;
    queries
        .iter()
        .enumerate()
        .map(|(i, q)| rank_from_scores(scores.row_slice(i), q.o, filter.true_tails(q.s, q.r, q.t)))
        .collect()
}

/// Worker count from `IME_THREADS`, if set.
pub fn env_threads() -> Result<Option<usize>> {
    match std::env::var("IME_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!(
                "IME_THREADS must be a positive integer, got '{v}'"
            ))),
        },
        Err(_) => Ok(None),
    }
}

/// Ranks of every query, in input order, scored on up to `threads` workers.
pub fn rank_all(
    model: &ImeModel,
    queries: &[Quadruple],
    filter: &FilterIndex,
    threads: Option<usize>,
) -> Result<Vec<f64>> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let chunks: Vec<Vec<f64>> = pool.install(|| {
        queries
            .par_chunks(EVAL_BATCH)
            .map(|c| rank_batch(model, c, filter))
            .collect::<Result<_>>()
    })?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Filtered metrics over `queries`, which should already include the
/// reciprocal (head-prediction) queries.
pub fn evaluate(
    model: &ImeModel,
    queries: &[Quadruple],
    filter: &FilterIndex,
) -> Result<RankingReport> {
    if queries.is_empty() {
        return Err(Error::InvalidArgument("evaluation split is empty".into()));
    }
    let ranks = rank_all(model, queries, filter, env_threads()?)?;
    RankingReport::from_ranks(&ranks)
}

/// Reports grouped by (augmented) relation id, in ascending id order.
pub fn evaluate_per_relation(
    model: &ImeModel,
    queries: &[Quadruple],
    filter: &FilterIndex,
) -> Result<Vec<(usize, RankingReport)>> {
    if queries.is_empty() {
        return Err(Error::InvalidArgument("evaluation split is empty".into()));
    }
    let ranks = rank_all(model, queries, filter, env_threads()?)?;
    let mut by_rel: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
    for (q, r) in queries.iter().zip(ranks) {
        by_rel.entry(q.r).or_default().push(r);
    }
    by_rel
        .into_iter()
        .map(|(rel, rs)| Ok((rel, RankingReport::from_ranks(&rs)?)))
        .collect()
}
