use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use hinrec::checkpoint::{load_checkpoint, save_checkpoint};
use hinrec::eval::{evaluate, write_ranks_csv};
use hinrec::experiment::{ablate, config_hash, write_ablation_csv, ExperimentConfig};
use hinrec::graph::{
    graph_paths, load_hetein, read_manifest, split_target_edges, write_manifest, EdgeHoldout, Fold, HeteIn, RelId,
};
use hinrec::metapath::{top_m_similar, write_table_jsonl, Metapath};
use hinrec::model::{Model, ModelConfig, ModelContext, Variant};
use hinrec::synth::{planted_graph, PlantedConfig};
use hinrec::train::{fit_with, write_loss_trace, OptimizerKind};

#[derive(Parser)]
#[command(name = "hinrec", version, about = "Metapath-enhanced graph attention recipe recommender")]
struct Cli {
    /// Root for outputs of commands run without `--out`.
    #[arg(long, global = true, env = "HINREC_OUT", default_value = "runs")]
    out_root: PathBuf,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a node/edge TSV pair and store a normalised copy with stats.
    Ingest {
        #[arg(long)]
        nodes: PathBuf,
        #[arg(long)]
        edges: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Top-m PathSim neighbors for every node under one metapath.
    Pathsim {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        metapath: String,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
        m: u64,
        /// Output JSONL file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hold out validation and test edges of the target relation.
    Split {
        #[arg(long)]
        graph: PathBuf,
        /// Train, validation and test fractions.
        #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.8, 0.1, 0.1])]
        ratios: Vec<f64>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "user-recipe")]
        target: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model and write its checkpoint and loss trace.
    Train(RunArgs),
    /// Rank held-out edges against sampled negatives.
    Eval {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// Directory written by `train`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "test", value_parser = parse_fold)]
        fold: Fold,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate every variant, metapath set and m value in the plan.
    Ablate(RunArgs),
    /// Write a planted two-block recipe network.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON file with generator settings; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        recipes: Option<usize>,
        #[arg(long)]
        ingredients: Option<usize>,
        #[arg(long)]
        interactions: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Directory holding nodes.tsv and edges.tsv; defaults to the config's paths.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Split manifest from `split`; without it the config's split is applied.
    #[arg(long)]
    split: Option<PathBuf>,
    /// JSON experiment configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_optimizer)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    type_dim: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    out_dim: Option<usize>,
    /// Comma-separated metapath labels, e.g. `U-R-U,R-U-R`.
    #[arg(long, value_delimiter = ',')]
    metapaths: Option<Vec<String>>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    m: Option<u64>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    #[arg(long)]
    eval_seed: Option<u64>,
}

fn parse_fold(s: &str) -> Result<Fold, String> {
    match s {
        "val" => Ok(Fold::Val),
        "test" => Ok(Fold::Test),
        _ => Err(format!("expected `val` or `test`, got `{s}`")),
    }
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: hinrec::Error| e.to_string())
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, String> {
    s.parse().map_err(|e: hinrec::Error| e.to_string())
}

impl RunArgs {
    fn config(&self) -> anyhow::Result<ExperimentConfig> {
        let mut c: ExperimentConfig = match &self.config {
            Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("parsing {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($flag:expr => $field:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        set!(self.lr => c.train.learning_rate);
        set!(self.batch_size => c.train.batch_size);
        set!(self.epochs => c.train.epochs);
        set!(self.seed => c.train.seed);
        set!(self.optimizer => c.train.optimizer);
        set!(self.checkpoint_every => c.train.checkpoint_every);
        set!(self.embed_dim => c.model.embed_dim);
        set!(self.heads => c.model.heads);
        set!(self.layers => c.model.layers);
        set!(self.out_dim => c.model.out_dim);
        set!(self.metapaths => c.model.metapaths);
        set!(self.variant => c.model.variant);
        set!(self.eval_seed => c.eval_seed);
        if let Some(d) = self.type_dim {
            c.model.type_dim = Some(d);
        }
        if let Some(m) = self.m {
            c.model.m = m as usize;
        }
        c.validate()?;
        Ok(c)
    }

    fn graph_files(&self, cfg: &ExperimentConfig) -> anyhow::Result<(PathBuf, PathBuf)> {
        match (&self.graph, &cfg.nodes, &cfg.edges) {
            (Some(dir), _, _) => Ok(graph_paths(dir)),
            (None, Some(n), Some(e)) => Ok((n.clone(), e.clone())),
            _ => bail!("no graph given: pass --graph or set `nodes` and `edges` in the config"),
        }
    }

    /// Loads the graph, validates the config against it and resolves the split.
    fn load(&self, cfg: &ExperimentConfig) -> anyhow::Result<(HeteIn, EdgeHoldout)> {
        let (nodes, edges) = self.graph_files(cfg)?;
        let g = load_hetein(&nodes, &edges)?;
        cfg.validate_for(&g)?;
        let holdout = match &self.split {
            Some(p) => EdgeHoldout::from_manifest(&g, &cfg.split.target_relation, &read_manifest(p)?)?,
            None => split_target_edges(&g, &cfg.split)?,
        };
        Ok((g, holdout))
    }
}

fn out_dir(explicit: &Option<PathBuf>, root: &Path, name: &str) -> anyhow::Result<PathBuf> {
    let dir = explicit.clone().unwrap_or_else(|| root.join(name));
    fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// Records what a command ran with; enough to rerun it bit for bit.
fn write_run_manifest<T: Serialize>(dir: &Path, command: &str, config: &T, seed: u64) -> anyhow::Result<()> {
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config_sha256": config_hash(config)?,
        "seed": seed,
        "config": config,
    });
    write_json(&dir.join("manifest.json"), &manifest)
}

fn stats_json(g: &HeteIn) -> serde_json::Value {
    let types: serde_json::Map<String, serde_json::Value> =
        g.types().iter().zip(g.counts()).map(|(t, n)| (t.name.clone(), json!(n))).collect();
    let relations: serde_json::Map<String, serde_json::Value> = g
        .relations()
        .iter()
        .enumerate()
        .map(|(i, r)| (r.name.clone(), json!(g.edge_count(RelId(i)))))
        .collect();
    json!({ "nodes": types, "edges": relations })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let root = cli.out_root;
    match cli.command {
        Command::Ingest { nodes, edges, out } => {
            let g = load_hetein(&nodes, &edges)?;
            let dir = out_dir(&out, &root, "ingest")?;
            let (n, e) = graph_paths(&dir);
            g.save(&n, &e)?;
            write_json(&dir.join("stats.json"), &stats_json(&g))?;
            write_run_manifest(
                &dir,
                "ingest",
                &json!({ "nodes": nodes, "edges": edges }),
                0,
            )?;
            print!("{g}");
        }
        Command::Pathsim { graph, metapath, m, out } => {
            let (n, e) = graph_paths(&graph);
            let g = load_hetein(&n, &e)?;
            let p = Metapath::parse(&g, &metapath)?;
            let table = top_m_similar(&g, &p, m as usize)?;
            let path = match out {
                Some(p) => p,
                None => out_dir(&None, &root, "pathsim")?.join(format!("{metapath}.jsonl")),
            };
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            write_table_jsonl(&g, &table, create(&path)?)?;
            println!("wrote {} rows to {}", table.rows.len(), path.display());
        }
        Command::Split { graph, ratios, seed, target, out } => {
            let (n, e) = graph_paths(&graph);
            let g = load_hetein(&n, &e)?;
            let spec = hinrec::graph::SplitSpec {
                ratios: [ratios[0], ratios[1], ratios[2]],
                seed,
                target_relation: target,
            };
            let h = split_target_edges(&g, &spec)?;
            let dir = out_dir(&out, &root, "split")?;
            write_manifest(&h.manifest(&g), create(&dir.join("split.jsonl"))?)?;
            write_run_manifest(&dir, "split", &spec, seed)?;
            println!(
                "train {} / val {} / test {}",
                g.edge_count(h.target) - h.val_edges.len() - h.test_edges.len(),
                h.val_edges.len(),
                h.test_edges.len()
            );
        }
        Command::Train(args) => {
            let cfg = args.config()?;
            let (g, holdout) = args.load(&cfg)?;
            let dir = out_dir(&args.out, &root, "train")?;
            if args.split.is_none() {
                write_manifest(&holdout.manifest(&g), create(&dir.join("split.jsonl"))?)?;
            }
            write_run_manifest(&dir, "train", &cfg, cfg.train.seed)?;
            let every = cfg.train.checkpoint_every;
            let fitted = fit_with(&holdout.train_graph, &cfg.train, &cfg.model, |stats, model| {
                if every > 0 && stats.epoch % every == 0 {
                    save_checkpoint(&model.params, &dir.join(format!("checkpoint-epoch{}.bin", stats.epoch)))?;
                }
                Ok(())
            })?;
            save_checkpoint(&fitted.model.params, &dir.join("checkpoint.bin"))?;
            write_json(&dir.join("model.json"), &cfg.model)?;
            write_loss_trace(&fitted.trace, create(&dir.join("loss.csv"))?)?;
            if !fitted.tables.is_empty() {
                fs::create_dir_all(dir.join("tables"))?;
            }
            for t in &fitted.tables {
                let path = dir.join("tables").join(format!("{}.jsonl", t.metapath.label()));
                write_table_jsonl(&holdout.train_graph, t, create(&path)?)?;
            }
            if let Some(last) = fitted.trace.last() {
                println!("epoch {}: mean loss {:.6}", last.epoch, last.mean_loss);
            }
        }
        Command::Eval { graph, split, model, fold, seed, out } => {
            let (n, e) = graph_paths(&graph);
            let g = load_hetein(&n, &e)?;
            let cfg: ModelConfig = serde_json::from_str(&fs::read_to_string(model.join("model.json"))?)?;
            let params = load_checkpoint(&model.join("checkpoint.bin"))?;
            let holdout = EdgeHoldout::from_manifest(&g, &cfg.target_relation, &read_manifest(&split)?)?;
            let (ctx, _) = ModelContext::prepare(&holdout.train_graph, &cfg)?;
            let emb = Model::from_params(cfg.clone(), params).embeddings(&ctx)?;
            let ev = evaluate(&emb, &g, holdout.target, holdout.edges(fold), seed)?;
            let dir = out_dir(&out, &root, "eval")?;
            write_json(&dir.join("report.json"), &ev.report)?;
            write_ranks_csv(&g, holdout.target, &ev.trials, create(&dir.join("ranks.csv"))?)?;
            write_run_manifest(
                &dir,
                "eval",
                &json!({ "model": cfg, "fold": fold, "split": split, "checkpoint": model }),
                seed,
            )?;
            let m = ev.report.at(10);
            println!(
                "{} trials ({} skipped): HR@10 {:.4} NDCG@10 {:.4}",
                ev.report.trials, ev.report.skipped, m.hr, m.ndcg
            );
        }
        Command::Ablate(args) => {
            let cfg = args.config()?;
            let (g, holdout) = args.load(&cfg)?;
            let dir = out_dir(&args.out, &root, "ablate")?;
            write_run_manifest(&dir, "ablate", &cfg, cfg.train.seed)?;
            let rows = ablate(&g, &holdout, &cfg);
            write_ablation_csv(&rows, create(&dir.join("ablation.csv"))?)?;
            write_ablation_csv(&rows, std::io::stdout())?;
            let failed: Vec<String> = rows
                .iter()
                .filter_map(|r| r.outcome.as_ref().err().map(|e| format!("{}: {e}", r.label())))
                .collect();
            if !failed.is_empty() {
                bail!("{} of {} runs failed:\n  {}", failed.len(), rows.len(), failed.join("\n  "));
            }
        }
        Command::Synth { out, config, users, recipes, ingredients, interactions, seed } => {
            let mut c: PlantedConfig = match config {
                Some(p) => serde_json::from_str(&fs::read_to_string(&p)?)?,
                None => PlantedConfig::default(),
            };
            c.users = users.unwrap_or(c.users);
            c.recipes = recipes.unwrap_or(c.recipes);
            c.ingredients = ingredients.unwrap_or(c.ingredients);
            c.interactions_per_user = interactions.unwrap_or(c.interactions_per_user);
            c.seed = seed.unwrap_or(c.seed);
            let p = planted_graph(&c)?;
            let dir = out_dir(&out, &root, "synth")?;
            let (n, e) = graph_paths(&dir);
            p.graph.save(&n, &e)?;
            write_run_manifest(&dir, "synth", &c, c.seed)?;
            print!("{}", p.graph);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
