//! End-to-end runs: split, train, evaluate, and comparative sweeps.

use std::io::Write;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, Evaluation, Metrics};
use crate::graph::{split_target_edges, EdgeHoldout, HeteIn, SplitSpec};
use crate::metapath::Metapath;
use crate::model::{ModelConfig, Variant};
use crate::train::{fit, FitOutput, TrainConfig};

/// Runs to perform in a comparative sweep. Every run shares the base
/// configuration and its seeds, changing one axis at a time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationPlan {
    pub variants: Vec<Variant>,
    pub metapath_sets: Vec<Vec<String>>,
    pub m_values: Vec<usize>,
}

impl Default for AblationPlan {
    fn default() -> Self {
        AblationPlan {
            variants: vec![Variant::Full, Variant::HgatOnly, Variant::MetapathOnly],
            metapath_sets: Vec::new(),
            m_values: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub nodes: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub split: SplitSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval_seed: u64,
    pub ablation: AblationPlan,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            nodes: None,
            edges: None,
            split: SplitSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval_seed: 2024,
            ablation: AblationPlan::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.model.target_relation != self.split.target_relation {
            return Err(Error::config(format!(
                "model scores `{}` but the split holds out `{}`",
                self.model.target_relation, self.split.target_relation
            )));
        }
        Ok(())
    }

    /// Also checks that every metapath label resolves in `g`'s schema.
    pub fn validate_for(&self, g: &HeteIn) -> Result<()> {
        self.validate()?;
        let sets = std::iter::once(&self.model.metapaths).chain(&self.ablation.metapath_sets);
        for label in sets.flatten() {
            Metapath::parse(g, label)?;
        }
        Ok(())
    }
}

/// Hex SHA-256 of the compact JSON encoding.
pub fn config_hash<T: Serialize>(cfg: &T) -> Result<String> {
    let bytes = serde_json::to_vec(cfg)?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

pub struct RunOutcome {
    pub fit: FitOutput,
    pub val: Option<EvalReport>,
    pub test: Evaluation,
}

/// Trains on `holdout.train_graph` and evaluates the validation and test
/// folds against the full graph `g`.
pub fn run_on_split(g: &HeteIn, holdout: &EdgeHoldout, cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    if holdout.test_edges.is_empty() {
        return Err(Error::validation("the split has no test edges"));
    }
    let fitted = fit(&holdout.train_graph, &cfg.train, &cfg.model)?;
    let emb = fitted.model.embeddings(&fitted.context)?;
    let val = if holdout.val_edges.is_empty() {
        None
    } else {
        Some(evaluate(&emb, g, holdout.target, &holdout.val_edges, cfg.eval_seed)?.report)
    };
    let test = evaluate(&emb, g, holdout.target, &holdout.test_edges, cfg.eval_seed)?;
    Ok(RunOutcome { fit: fitted, val, test })
}

pub fn run(g: &HeteIn, cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate_for(g)?;
    let holdout = split_target_edges(g, &cfg.split)?;
    run_on_split(g, &holdout, cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Variant,
    Metapaths,
    M,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub axis: Axis,
    pub variant: Variant,
    pub metapaths: Vec<String>,
    pub m: usize,
    /// Test-fold metrics averaged over k, or the error that stopped the run.
    pub outcome: std::result::Result<Metrics, String>,
}

impl AblationRow {
    pub fn label(&self) -> String {
        match self.axis {
            Axis::Variant => self.variant.name().to_string(),
            Axis::Metapaths => self.metapaths.join(" + "),
            Axis::M => format!("m={}", self.m),
        }
    }
}

pub fn ablation_configs(base: &ExperimentConfig) -> Vec<(Axis, ExperimentConfig)> {
    let plan = &base.ablation;
    let mut out = Vec::new();
    for &variant in &plan.variants {
        let mut c = base.clone();
        c.model.variant = variant;
        out.push((Axis::Variant, c));
    }
    for set in &plan.metapath_sets {
        let mut c = base.clone();
        c.model.variant = Variant::Full;
        c.model.metapaths = set.clone();
        out.push((Axis::Metapaths, c));
    }
    for &m in &plan.m_values {
        let mut c = base.clone();
        c.model.variant = Variant::Full;
        c.model.m = m;
        out.push((Axis::M, c));
    }
    out
}

/// Runs every configuration of the plan on one shared split. A failing run
/// is recorded in its row and the sweep continues.
pub fn ablate(g: &HeteIn, holdout: &EdgeHoldout, base: &ExperimentConfig) -> Vec<AblationRow> {
    ablation_configs(base)
        .into_iter()
        .map(|(axis, cfg)| {
            let outcome = cfg
                .validate_for(g)
                .and_then(|_| run_on_split(g, holdout, &cfg))
                .map(|r| r.test.report.avg)
                .map_err(|e| e.to_string());
            if let Err(e) = &outcome {
                log::error!("run {:?} failed: {e}", cfg.model.variant);
            }
            AblationRow {
                axis,
                variant: cfg.model.variant,
                metapaths: if cfg.model.variant.uses_metapaths() { cfg.model.metapaths.clone() } else { Vec::new() },
                m: cfg.model.m,
                outcome,
            }
        })
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], mut out: W) -> Result<()> {
    writeln!(out, "axis,label,variant,metapaths,m,hr,ndcg,precision,map,status")?;
    for r in rows {
        let axis = match r.axis {
            Axis::Variant => "variant",
            Axis::Metapaths => "metapaths",
            Axis::M => "m",
        };
        let prefix = format!(
            "{axis},{},{},{},{}",
            csv_field(&r.label()),
            r.variant.name(),
            csv_field(&r.metapaths.join(" ")),
            r.m
        );
        match &r.outcome {
            Ok(m) => writeln!(out, "{prefix},{},{},{},{},ok", m.hr, m.ndcg, m.precision, m.map)?,
            Err(e) => writeln!(out, "{prefix},,,,,{}", csv_field(&format!("error: {e}")))?,
        }
    }
    Ok(())
}
