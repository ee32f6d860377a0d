//! Pairwise margin-ranking training with sampled negatives.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{HeteIn, RelId, RelationView};
use crate::metapath::SimilarityTable;
use crate::model::{forward, init_rng, score_pairs, Model, ModelConfig, ModelContext};
use crate::tensor::{backward, ParamStore, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<OptimizerKind> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::config(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Positive edges per minibatch.
    pub batch_size: usize,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.005,
            batch_size: 412,
            epochs: 50,
            negatives_per_positive: 1,
            seed: 42,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate must be a non-negative number"));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("negatives_per_positive", self.negatives_per_positive),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::config("Adam moments must lie in [0, 1) and eps must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainingExample {
    pub user: usize,
    pub pos_recipe: usize,
    pub neg_recipe: usize,
}

/// Uniform recipe not linked to `user` in `g` under `target`, by rejection.
pub fn sample_negative<R: Rng>(g: &HeteIn, target: RelId, user: usize, rng: &mut R) -> Result<usize> {
    let csr = g.csr(RelationView::forward(target));
    let n = g.count(g.relation(target).dst_type);
    let known = csr.row(user);
    if known.len() >= n {
        return Err(Error::Degenerate(format!(
            "user `{}` is linked to every recipe",
            g.node_id(crate::graph::NodeRef {
                ty: g.relation(target).src_type,
                index: user
            })
        )));
    }
    loop {
        let r = rng.gen_range(0..n);
        if known.binary_search(&r).is_err() {
            return Ok(r);
        }
    }
}

/// `sum_k max(0, 1 - pos_k + neg_k)` over aligned score vectors.
pub fn hinge_loss(tape: &mut Tape, pos: Var, neg: Var) -> Result<Var> {
    let diff = tape.sub(neg, pos)?;
    let margin = tape.add_scalar(diff, 1.0);
    let terms = tape.relu(margin);
    Ok(tape.sum(terms))
}

/// Full forward pass followed by the summed hinge over `examples`.
pub fn batch_loss(
    tape: &mut Tape,
    params: &ParamStore,
    ctx: &ModelContext,
    cfg: &ModelConfig,
    examples: &[TrainingExample],
) -> Result<(Var, crate::tensor::Bindings)> {
    if examples.is_empty() {
        return Err(Error::config("empty batch"));
    }
    let b = params.bind(tape);
    let loss = batch_loss_bound(tape, &b, ctx, cfg, examples)?;
    Ok((loss, b))
}

pub fn batch_loss_bound(
    tape: &mut Tape,
    b: &crate::tensor::Bindings,
    ctx: &ModelContext,
    cfg: &ModelConfig,
    examples: &[TrainingExample],
) -> Result<Var> {
    let out = forward(tape, b, ctx, cfg)?;
    let users: Vec<usize> = examples.iter().map(|e| e.user).collect();
    let pos: Vec<usize> = examples.iter().map(|e| e.pos_recipe).collect();
    let neg: Vec<usize> = examples.iter().map(|e| e.neg_recipe).collect();
    let sp = score_pairs(tape, &out, &users, &pos)?;
    let sn = score_pairs(tape, &out, &users, &neg)?;
    hinge_loss(tape, sp, sn)
}

pub trait Optimizer {
    fn step(&mut self, params: &mut ParamStore);
}

pub struct Sgd {
    pub lr: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut ParamStore) {
        for (_, t) in params.iter_mut() {
            let Some(g) = t.grad().map(<[f64]>::to_vec) else { continue };
            for (x, g) in t.data_mut().iter_mut().zip(g) {
                *x -= self.lr * g;
            }
        }
    }
}

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Adam {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            moments: BTreeMap::new(),
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut ParamStore) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (name, t) in params.iter_mut() {
            let Some(g) = t.grad().map(<[f64]>::to_vec) else { continue };
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            for (k, x) in t.data_mut().iter_mut().enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                *x -= self.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
            }
        }
    }
}

fn optimizer(cfg: &TrainConfig) -> Box<dyn Optimizer> {
    match cfg.optimizer {
        OptimizerKind::Adam => Box::new(Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)),
        OptimizerKind::Sgd => Box::new(Sgd { lr: cfg.learning_rate }),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_seconds: f64,
}

pub fn write_loss_trace<W: Write>(trace: &[EpochStats], mut out: W) -> Result<()> {
    writeln!(out, "epoch,mean_loss,wall_seconds")?;
    for s in trace {
        writeln!(out, "{},{},{:.3}", s.epoch, s.mean_loss, s.wall_seconds)?;
    }
    Ok(())
}

pub struct FitOutput {
    pub model: Model,
    pub context: ModelContext,
    pub tables: Vec<SimilarityTable>,
    pub trace: Vec<EpochStats>,
}

/// Trains from scratch on `g_train`. Similarity tables come from `g_train`
/// once, before the first step.
pub fn fit(g_train: &HeteIn, cfg: &TrainConfig, model_cfg: &ModelConfig) -> Result<FitOutput> {
    fit_with(g_train, cfg, model_cfg, |_, _| Ok(()))
}

/// As [`fit`], calling `on_epoch` after every epoch.
pub fn fit_with<F>(g_train: &HeteIn, cfg: &TrainConfig, model_cfg: &ModelConfig, mut on_epoch: F) -> Result<FitOutput>
where
    F: FnMut(&EpochStats, &Model) -> Result<()>,
{
    cfg.validate()?;
    let (ctx, tables) = ModelContext::prepare(g_train, model_cfg)?;
    let positives: Vec<(usize, usize)> = g_train.csr(RelationView::forward(ctx.target)).iter().collect();
    if positives.is_empty() {
        return Err(Error::validation("training graph has no target edges"));
    }
    let mut model = Model::init(&ctx, model_cfg, &mut init_rng(cfg.seed))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut opt = optimizer(cfg);
    let mut order: Vec<usize> = (0..positives.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let start = Instant::now();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut examples = Vec::with_capacity(chunk.len() * cfg.negatives_per_positive);
            for &k in chunk {
                let (user, pos_recipe) = positives[k];
                for _ in 0..cfg.negatives_per_positive {
                    let neg_recipe = sample_negative(g_train, ctx.target, user, &mut rng)?;
                    examples.push(TrainingExample {
                        user,
                        pos_recipe,
                        neg_recipe,
                    });
                }
            }
            let mut tape = Tape::new();
            let (loss, bindings) = batch_loss(&mut tape, &model.params, &ctx, model_cfg, &examples)?;
            let value = tape.scalar_value(loss);
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("loss {value} in epoch {epoch}, batch {bi}")));
            }
            model.params.zero_grad();
            backward(&tape, loss, &mut model.params, &bindings)?;
            opt.step(&mut model.params);
            total += value;
            count += examples.len();
        }
        model.params.zero_grad();
        let stats = EpochStats {
            epoch,
            mean_loss: total / count as f64,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::info!("epoch {epoch}: mean loss {:.6}", stats.mean_loss);
        on_epoch(&stats, &model)?;
        trace.push(stats);
    }
    Ok(FitOutput {
        model,
        context: ctx,
        tables,
        trace,
    })
}
