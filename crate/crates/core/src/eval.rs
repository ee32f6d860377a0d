//! Sampled-negative ranking evaluation.
//!
//! Each held-out (user, recipe) pair is ranked against 100 recipes the user
//! has no known link to. Metrics use the single-relevant-item definitions:
//! at rank `p`, HR@k = 1[p <= k], NDCG@k = 1/log2(p + 1), Precision@k =
//! HR@k / k and AP@k = 1/p (the last three zero beyond k).

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::ser::{Serialize, SerializeMap, Serializer};

use crate::error::{Error, Result};
use crate::graph::{HeteIn, NodeRef, RelId, RelationView};
use crate::model::Embeddings;

pub const NEGATIVES: usize = 100;
pub const MAX_K: usize = 10;

pub trait Scorer {
    fn score(&self, user: usize, recipe: usize) -> f64;
}

impl Scorer for Embeddings {
    fn score(&self, user: usize, recipe: usize) -> f64 {
        Embeddings::score(self, user, recipe)
    }
}

impl<F: Fn(usize, usize) -> f64> Scorer for F {
    fn score(&self, user: usize, recipe: usize) -> f64 {
        self(user, recipe)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankedTrial {
    pub user: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
    /// 1-based position of the positive among all candidates.
    pub rank: usize,
}

/// Ranks `positive` against `negatives` by descending score; equal scores
/// go to the lower recipe id first. `known` is the user's sorted positive set.
pub fn rank_trial<S: Scorer + ?Sized>(
    scorer: &S,
    user: usize,
    positive: usize,
    negatives: &[usize],
    known: &[usize],
) -> Result<RankedTrial> {
    if let Some(&bad) = negatives.iter().find(|r| known.binary_search(r).is_ok()) {
        return Err(Error::validation(format!(
            "negative recipe {bad} is a known positive of user {user}"
        )));
    }
    let sp = scorer.score(user, positive);
    if !sp.is_finite() {
        return Err(Error::NonFinite(format!("score of user {user}, recipe {positive}")));
    }
    let mut ahead = 0;
    for &r in negatives {
        let s = scorer.score(user, r);
        if !s.is_finite() {
            return Err(Error::NonFinite(format!("score of user {user}, recipe {r}")));
        }
        if s > sp || (s == sp && r < positive) {
            ahead += 1;
        }
    }
    Ok(RankedTrial {
        user,
        positive,
        negatives: negatives.to_vec(),
        rank: ahead + 1,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub hr: f64,
    pub ndcg: f64,
    pub precision: f64,
    pub map: f64,
}

impl Metrics {
    fn at_rank(rank: usize, k: usize) -> Metrics {
        if rank > k {
            return Metrics::default();
        }
        Metrics {
            hr: 1.0,
            ndcg: 1.0 / ((rank + 1) as f64).log2(),
            precision: 1.0 / k as f64,
            map: 1.0 / rank as f64,
        }
    }

    fn scaled_sum(items: impl Iterator<Item = Metrics>, n: usize) -> Metrics {
        let mut acc = Metrics::default();
        for m in items {
            acc.hr += m.hr;
            acc.ndcg += m.ndcg;
            acc.precision += m.precision;
            acc.map += m.map;
        }
        let n = n as f64;
        Metrics {
            hr: acc.hr / n,
            ndcg: acc.ndcg / n,
            precision: acc.precision / n,
            map: acc.map / n,
        }
    }
}

impl Serialize for Metrics {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(4))?;
        m.serialize_entry("hr", &self.hr)?;
        m.serialize_entry("ndcg", &self.ndcg)?;
        m.serialize_entry("precision", &self.precision)?;
        m.serialize_entry("map", &self.map)?;
        m.end()
    }
}

pub fn metrics_at_k(trials: &[RankedTrial], k: usize) -> Result<Metrics> {
    if trials.is_empty() {
        return Err(Error::validation("no trials to score"));
    }
    if k == 0 {
        return Err(Error::config("k must be at least 1"));
    }
    Ok(Metrics::scaled_sum(trials.iter().map(|t| Metrics::at_rank(t.rank, k)), trials.len()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Entry `k - 1` holds the metrics at cutoff `k`.
    pub per_k: Vec<Metrics>,
    /// Mean over k = 1..=10.
    pub avg: Metrics,
    pub trials: usize,
    pub skipped: usize,
    pub seed: u64,
}

impl EvalReport {
    pub fn from_trials(trials: &[RankedTrial], skipped: usize, seed: u64) -> Result<EvalReport> {
        let per_k = (1..=MAX_K).map(|k| metrics_at_k(trials, k)).collect::<Result<Vec<_>>>()?;
        let avg = Metrics::scaled_sum(per_k.iter().copied(), MAX_K);
        Ok(EvalReport {
            per_k,
            avg,
            trials: trials.len(),
            skipped,
            seed,
        })
    }

    pub fn at(&self, k: usize) -> Metrics {
        self.per_k[k - 1]
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

struct PerK<'a>(&'a [Metrics]);

impl Serialize for PerK<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for (i, v) in self.0.iter().enumerate() {
            m.serialize_entry(&(i + 1).to_string(), v)?;
        }
        m.end()
    }
}

impl Serialize for EvalReport {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(5))?;
        m.serialize_entry("k", &PerK(&self.per_k))?;
        m.serialize_entry("avg", &self.avg)?;
        m.serialize_entry("trials", &self.trials)?;
        m.serialize_entry("skipped", &self.skipped)?;
        m.serialize_entry("seed", &self.seed)?;
        m.end()
    }
}

/// Sorted positive recipes of every user over all folds.
pub fn known_positives(g: &HeteIn, target: RelId) -> Vec<Vec<usize>> {
    let csr = g.csr(RelationView::forward(target));
    (0..csr.n_rows()).map(|u| csr.row(u).to_vec()).collect()
}

/// `count` distinct recipes from `0..n` outside sorted `known`, or `None`
/// when too few are eligible. Output is sorted.
pub fn sample_eval_negatives(rng: &mut ChaCha8Rng, n: usize, known: &[usize], count: usize) -> Option<Vec<usize>> {
    let eligible = n - known.len();
    if eligible < count {
        return None;
    }
    let mut picks: Vec<usize> = rand::seq::index::sample(rng, eligible, count).into_vec();
    picks.sort_unstable();
    // Map the j-th eligible slot to its recipe id by stepping over known ids.
    let mut out = Vec::with_capacity(count);
    let mut skip = 0;
    for j in picks {
        let mut r = j + skip;
        while skip < known.len() && known[skip] <= r {
            skip += 1;
            r = j + skip;
        }
        out.push(r);
    }
    Some(out)
}

/// Trial RNG: stream `index` of the evaluation seed, so a trial's negatives
/// do not depend on which other trials run.
pub fn trial_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub struct Evaluation {
    pub report: EvalReport,
    pub trials: Vec<RankedTrial>,
}

/// One trial per held-out edge. `g` must contain every known positive
/// (all folds); negatives avoid all of them.
pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    g: &HeteIn,
    target: RelId,
    holdout: &[(usize, usize)],
    seed: u64,
) -> Result<Evaluation> {
    if holdout.is_empty() {
        return Err(Error::validation("no held-out edges to evaluate"));
    }
    let known = known_positives(g, target);
    let n_recipes = g.count(g.relation(target).dst_type);
    let mut trials = Vec::with_capacity(holdout.len());
    let mut skipped = 0;
    for (i, &(u, r)) in holdout.iter().enumerate() {
        if known[u].binary_search(&r).is_err() {
            return Err(Error::validation(format!("held-out edge ({u}, {r}) is not in the graph")));
        }
        let mut rng = trial_rng(seed, i);
        match sample_eval_negatives(&mut rng, n_recipes, &known[u], NEGATIVES) {
            Some(negs) => trials.push(rank_trial(scorer, u, r, &negs, &known[u])?),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} trial(s) skipped: fewer than {NEGATIVES} eligible negatives");
    }
    let report = EvalReport::from_trials(&trials, skipped, seed)?;
    Ok(Evaluation { report, trials })
}

pub fn write_ranks_csv<W: Write>(g: &HeteIn, target: RelId, trials: &[RankedTrial], mut out: W) -> Result<()> {
    let rel = g.relation(target);
    writeln!(out, "user,recipe,rank")?;
    for t in trials {
        let u = g.node_id(NodeRef { ty: rel.src_type, index: t.user });
        let r = g.node_id(NodeRef { ty: rel.dst_type, index: t.positive });
        writeln!(out, "{u},{r},{}", t.rank)?;
    }
    Ok(())
}
