//! Heterogeneous graph attention model with metapath similarity channels.
//!
//! Every node owns a learnable embedding row that is projected into a shared
//! `d`-dimensional space. The full channel stacks `layers` rounds of
//! per-relation node attention followed by relation-level fusion over the
//! whole heterogeneous graph. Each metapath channel runs one attention layer
//! over a PathSim top-m similarity graph. User and recipe outputs are
//! concatenated per type, projected to `out_dim`, and scored by inner product.
//!
//! Node attention uses one logit per output feature: the scoring map
//! `W_ij` (`2 dh x dh` per head) applied to `z_i || z_j` gives a `dh`-vector,
//! and the softmax over the neighbor set is taken separately for each of
//! those features.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{HeteIn, RelId, TypeId};
use crate::metapath::{build_homograph, top_m_similar, HomoGraph, Metapath, SimilarityTable};
use crate::tensor::{Bindings, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Full-graph HGAT plus metapath channels.
    Full,
    HgatOnly,
    MetapathOnly,
}

impl Variant {
    pub fn uses_full(self) -> bool {
        matches!(self, Variant::Full | Variant::HgatOnly)
    }

    pub fn uses_metapaths(self) -> bool {
        matches!(self, Variant::Full | Variant::MetapathOnly)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::HgatOnly => "hgat_only",
            Variant::MetapathOnly => "metapath_only",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variant> {
        match s {
            "full" => Ok(Variant::Full),
            "hgat_only" => Ok(Variant::HgatOnly),
            "metapath_only" => Ok(Variant::MetapathOnly),
            other => Err(Error::config(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// Width of the per-node embedding tables before projection; defaults to `embed_dim`.
    pub type_dim: Option<usize>,
    pub heads: usize,
    pub layers: usize,
    pub out_dim: usize,
    pub metapaths: Vec<String>,
    pub m: usize,
    pub variant: Variant,
    pub target_relation: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 128,
            type_dim: None,
            heads: 4,
            layers: 2,
            out_dim: 128,
            metapaths: vec!["U-R-U".into(), "R-U-R".into(), "R-I-R".into()],
            m: 10,
            variant: Variant::Full,
            target_relation: "user-recipe".into(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("layers", self.layers),
            ("out_dim", self.out_dim),
            ("m", self.m),
            ("type_dim", self.type_dim()),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::config(format!(
                "embed_dim {} is not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn type_dim(&self) -> usize {
        self.type_dim.unwrap_or(self.embed_dim)
    }

    /// Metapath labels that actually feed the model under this variant.
    pub fn active_metapaths(&self) -> &[String] {
        if self.variant.uses_metapaths() {
            &self.metapaths
        } else {
            &[]
        }
    }
}

/// Edge list of one directed relation (or similarity graph) in CSR order.
#[derive(Clone, Debug)]
pub struct EdgeIndex {
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    pub offsets: Arc<[usize]>,
    pub n_src: usize,
    pub n_dst: usize,
}

impl EdgeIndex {
    pub fn from_csr(offsets: &[usize], cols: &[usize], n_dst: usize) -> EdgeIndex {
        let n_src = offsets.len() - 1;
        let src: Vec<usize> = (0..n_src)
            .flat_map(|r| std::iter::repeat(r).take(offsets[r + 1] - offsets[r]))
            .collect();
        EdgeIndex {
            src: src.into(),
            dst: cols.to_vec().into(),
            offsets: offsets.to_vec().into(),
            n_src,
            n_dst,
        }
    }

    pub fn from_homograph(h: &HomoGraph) -> EdgeIndex {
        EdgeIndex::from_csr(&h.offsets, &h.targets, h.n_nodes())
    }

    pub fn n_edges(&self) -> usize {
        self.dst.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.dst[self.offsets[i]..self.offsets[i + 1]]
    }
}

#[derive(Clone, Debug)]
pub struct ViewInfo {
    pub name: String,
    pub src: TypeId,
    pub dst: TypeId,
    pub index: EdgeIndex,
}

#[derive(Clone, Debug)]
pub struct Channel {
    pub label: String,
    pub node_type: TypeId,
    pub index: EdgeIndex,
}

/// Graph-derived structure the model runs on: typed edge lists of the
/// training graph and the similarity graphs of the active metapaths.
#[derive(Clone, Debug)]
pub struct ModelContext {
    pub type_names: Vec<String>,
    pub type_counts: Vec<usize>,
    pub user_type: TypeId,
    pub recipe_type: TypeId,
    pub target: RelId,
    pub views: Vec<ViewInfo>,
    pub views_by_type: Vec<Vec<usize>>,
    pub channels: Vec<Channel>,
}

impl ModelContext {
    /// Computes the similarity tables of the active metapaths from `g` and
    /// assembles the context.
    pub fn prepare(g: &HeteIn, cfg: &ModelConfig) -> Result<(ModelContext, Vec<SimilarityTable>)> {
        let mut tables = Vec::new();
        for label in cfg.active_metapaths() {
            let p = Metapath::parse(g, label)?;
            tables.push(top_m_similar(g, &p, cfg.m)?);
        }
        let ctx = ModelContext::from_tables(g, cfg, &tables)?;
        Ok((ctx, tables))
    }

    pub fn from_tables(g: &HeteIn, cfg: &ModelConfig, tables: &[SimilarityTable]) -> Result<ModelContext> {
        let graphs: Vec<(String, HomoGraph)> = tables
            .iter()
            .map(|t| (t.metapath.label().to_string(), build_homograph(t)))
            .collect();
        ModelContext::from_homographs(g, cfg, graphs)
    }

    pub fn from_homographs(g: &HeteIn, cfg: &ModelConfig, graphs: Vec<(String, HomoGraph)>) -> Result<ModelContext> {
        cfg.validate()?;
        let target = g.relation_by_name(&cfg.target_relation)?;
        let rel = g.relation(target);
        if rel.src_type == rel.dst_type {
            return Err(Error::config("the scored relation must join two distinct node types"));
        }
        let n_types = g.types().len();
        let mut views = Vec::new();
        let mut views_by_type = vec![Vec::new(); n_types];
        for t in 0..n_types {
            for v in g.views_from(TypeId(t)) {
                let csr = g.csr(v);
                views_by_type[t].push(views.len());
                views.push(ViewInfo {
                    name: g.view_name(v),
                    src: g.view_src(v),
                    dst: g.view_dst(v),
                    index: EdgeIndex::from_csr(csr.offsets(), csr.cols(), g.count(g.view_dst(v))),
                });
            }
        }
        let mut channels = Vec::new();
        for (label, h) in graphs {
            if h.n_nodes() != g.count(h.node_type) {
                return Err(Error::validation(format!(
                    "similarity graph `{label}` has {} nodes, type has {}",
                    h.n_nodes(),
                    g.count(h.node_type)
                )));
            }
            channels.push(Channel {
                label,
                node_type: h.node_type,
                index: EdgeIndex::from_homograph(&h),
            });
        }
        Ok(ModelContext {
            type_names: g.types().iter().map(|t| t.name.clone()).collect(),
            type_counts: g.counts(),
            user_type: rel.src_type,
            recipe_type: rel.dst_type,
            target,
            views,
            views_by_type,
            channels,
        })
    }

    pub fn n_users(&self) -> usize {
        self.type_counts[self.user_type.0]
    }

    pub fn n_recipes(&self) -> usize {
        self.type_counts[self.recipe_type.0]
    }

    fn scored_types(&self) -> [TypeId; 2] {
        [self.user_type, self.recipe_type]
    }

    /// Types that need an embedding table under `variant`.
    fn embedded_types(&self, variant: Variant) -> Vec<TypeId> {
        if variant.uses_full() {
            return (0..self.type_names.len()).map(TypeId).collect();
        }
        let mut out: Vec<TypeId> = self.scored_types().to_vec();
        out.extend(self.channels.iter().map(|c| c.node_type));
        out.sort();
        out.dedup();
        out
    }

    /// Channel indices feeding the fused vector of `ty`.
    fn channels_of(&self, ty: TypeId) -> Vec<usize> {
        (0..self.channels.len())
            .filter(|&c| self.channels[c].node_type == ty)
            .collect()
    }

    /// Number of `embed_dim`-wide blocks concatenated for `ty`.
    fn fused_parts(&self, variant: Variant, ty: TypeId) -> usize {
        let channels = if variant.uses_metapaths() { self.channels_of(ty).len() } else { 0 };
        match variant {
            Variant::Full => 1 + channels,
            Variant::HgatOnly => 1,
            Variant::MetapathOnly => channels.max(1),
        }
    }
}

pub mod names {
    pub fn embedding(ty: &str) -> String {
        format!("emb/{ty}")
    }

    pub fn projection(ty: &str) -> String {
        format!("proj/{ty}")
    }

    pub fn attention(prefix: &str, part: &str) -> String {
        format!("{prefix}/{part}")
    }

    pub fn full_prefix(layer: usize, view: &str) -> String {
        format!("full/{layer}/{view}")
    }

    pub fn fusion_prefix(layer: usize, ty: &str) -> String {
        format!("full/{layer}/fuse/{ty}")
    }

    pub fn channel_prefix(label: &str) -> String {
        format!("mp/{label}")
    }

    pub fn output(ty: &str) -> String {
        format!("out/{ty}")
    }
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a);
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::matrix(rows, cols, data).unwrap().tracked()
}

fn insert_attention(params: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, d: usize, heads: usize) {
    let dh = d / heads;
    params.insert(names::attention(prefix, "w_node"), xavier(rng, d, d));
    for h in 0..heads {
        params.insert(names::attention(prefix, &format!("w_att/{h}")), xavier(rng, 2 * dh, dh));
    }
    params.insert(names::attention(prefix, "w_had"), xavier(rng, d, d));
}

/// Learnable parameters plus the configuration that shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    /// Seeded initialisation: Xavier-uniform matrices, `N(0, 0.1)` embeddings,
    /// zero biases.
    pub fn init(ctx: &ModelContext, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Model> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let dt = cfg.type_dim();
        let mut params = ParamStore::new();
        let normal = Normal::new(0.0, 0.1).unwrap();
        for ty in ctx.embedded_types(cfg.variant) {
            let name = &ctx.type_names[ty.0];
            let n = ctx.type_counts[ty.0];
            let data = (0..n * dt).map(|_| normal.sample(rng)).collect();
            params.insert(names::embedding(name), Tensor::matrix(n, dt, data)?.tracked());
            params.insert(names::projection(name), xavier(rng, dt, d));
        }
        if cfg.variant.uses_full() {
            for layer in 0..cfg.layers {
                for v in &ctx.views {
                    insert_attention(&mut params, rng, &names::full_prefix(layer, &v.name), d, cfg.heads);
                }
                for (t, vs) in ctx.views_by_type.iter().enumerate() {
                    if vs.is_empty() {
                        continue;
                    }
                    let prefix = names::fusion_prefix(layer, &ctx.type_names[t]);
                    for &vi in vs {
                        params.insert(format!("{prefix}/w_rel/{}", ctx.views[vi].name), xavier(rng, d, d));
                    }
                    params.insert(format!("{prefix}/bias"), Tensor::zeros(&[1, d]).tracked());
                    params.insert(format!("{prefix}/q"), xavier(rng, d, 1));
                }
            }
        }
        if cfg.variant.uses_metapaths() {
            for c in &ctx.channels {
                insert_attention(&mut params, rng, &names::channel_prefix(&c.label), d, cfg.heads);
            }
        }
        for ty in ctx.scored_types() {
            let parts = ctx.fused_parts(cfg.variant, ty);
            params.insert(names::output(&ctx.type_names[ty.0]), xavier(rng, parts * d, cfg.out_dim));
        }
        Ok(Model {
            cfg: cfg.clone(),
            params,
        })
    }

    pub fn from_params(cfg: ModelConfig, params: ParamStore) -> Model {
        Model { cfg, params }
    }

    /// Inference-only forward pass; returns the fused user and recipe vectors.
    pub fn embeddings(&self, ctx: &ModelContext) -> Result<Embeddings> {
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape);
        let out = forward(&mut tape, &b, ctx, &self.cfg)?;
        let user = tape.to_tensor(out.fused_user);
        let recipe = tape.to_tensor(out.fused_recipe);
        for t in [&user, &recipe] {
            if t.data().iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("fused embeddings".into()));
            }
        }
        Ok(Embeddings { user, recipe })
    }
}

/// Fused per-type output vectors (`out_dim` wide).
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub user: Tensor,
    pub recipe: Tensor,
}

impl Embeddings {
    pub fn user_vec(&self, u: usize) -> &[f64] {
        self.user.row(u)
    }

    pub fn recipe_vec(&self, r: usize) -> &[f64] {
        self.recipe.row(r)
    }

    /// Inner-product link score.
    pub fn score(&self, u: usize, r: usize) -> f64 {
        self.user_vec(u).iter().zip(self.recipe_vec(r)).map(|(a, b)| a * b).sum()
    }
}

/// Bound parameters of one attention layer (all heads).
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub w_node: Var,
    pub w_att: Vec<Var>,
    pub w_had: Var,
}

impl AttentionParams {
    pub fn bind(b: &Bindings, prefix: &str, heads: usize) -> Result<AttentionParams> {
        Ok(AttentionParams {
            w_node: b.var(&names::attention(prefix, "w_node"))?,
            w_att: (0..heads)
                .map(|h| b.var(&names::attention(prefix, &format!("w_att/{h}"))))
                .collect::<Result<_>>()?,
            w_had: b.var(&names::attention(prefix, "w_had"))?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct AttentionOut {
    /// `n_src x d_out` node features.
    pub out: Var,
    /// `n_edges x d_out` attention weights; each column sums to one over
    /// every non-empty neighbor segment.
    pub alpha: Var,
}

/// One multi-head node-level attention pass over `idx`.
///
/// Per head: `z = x W_node`, logits `z_i W_top + z_j W_bot`, softmax over
/// `N(i)`, output `ReLU(sum_j alpha_ij z_j + sum_j (x_i * x_j) W_had)`; the
/// head outputs are the column blocks of the result. Nodes without neighbors
/// get a zero row.
pub fn node_attention(
    tape: &mut Tape,
    p: &AttentionParams,
    x_src: Var,
    x_dst: Var,
    idx: &EdgeIndex,
) -> Result<AttentionOut> {
    let heads = p.w_att.len();
    let z_src = tape.matmul(x_src, p.w_node)?;
    let z_dst = if x_src == x_dst { z_src } else { tape.matmul(x_dst, p.w_node)? };
    let d_out = tape.shape(z_src)[1];
    if heads == 0 || d_out % heads != 0 {
        return Err(Error::config(format!("{d_out} features cannot be split into {heads} heads")));
    }
    let dh = d_out / heads;
    let mut left = Vec::with_capacity(heads);
    let mut right = Vec::with_capacity(heads);
    for (h, &w) in p.w_att.iter().enumerate() {
        let w_top = tape.slice(w, 0, 0, dh)?;
        let w_bot = tape.slice(w, 0, dh, dh)?;
        let zs = tape.slice(z_src, 1, h * dh, dh)?;
        let zd = if x_src == x_dst { zs } else { tape.slice(z_dst, 1, h * dh, dh)? };
        left.push(tape.matmul(zs, w_top)?);
        right.push(tape.matmul(zd, w_bot)?);
    }
    let left = tape.concat(&left, 1)?;
    let right = tape.concat(&right, 1)?;
    let li = tape.gather_rows(left, idx.src.clone())?;
    let rj = tape.gather_rows(right, idx.dst.clone())?;
    let logits = tape.add(li, rj)?;
    let alpha = tape.segment_softmax(logits, idx.offsets.clone())?;
    let zj = tape.gather_rows(z_dst, idx.dst.clone())?;
    let msg = tape.hadamard(alpha, zj)?;
    let agg = tape.scatter_add_rows(msg, idx.src.clone(), idx.n_src)?;
    // sum_j W (x_i * x_j) == W (x_i * sum_j x_j)
    let xj = tape.gather_rows(x_dst, idx.dst.clone())?;
    let xj_sum = tape.scatter_add_rows(xj, idx.src.clone(), idx.n_src)?;
    let prod = tape.hadamard(x_src, xj_sum)?;
    let had = tape.matmul(prod, p.w_had)?;
    let pre = tape.add(agg, had)?;
    Ok(AttentionOut {
        out: tape.relu(pre),
        alpha,
    })
}

#[derive(Clone, Debug)]
pub struct FusionParams {
    pub w_rel: Vec<Var>,
    pub bias: Var,
    pub q: Var,
}

impl FusionParams {
    pub fn bind(b: &Bindings, prefix: &str, view_names: &[&str]) -> Result<FusionParams> {
        Ok(FusionParams {
            w_rel: view_names
                .iter()
                .map(|v| b.var(&format!("{prefix}/w_rel/{v}")))
                .collect::<Result<_>>()?,
            bias: b.var(&format!("{prefix}/bias"))?,
            q: b.var(&format!("{prefix}/q"))?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct FusionOut {
    pub out: Var,
    /// `k x 1` relation weights.
    pub beta: Var,
}

/// Relation-level attention: `w_r = mean_i tanh(x_i W_r + b) q`, `beta =
/// softmax(w)`, output `sum_r beta_r x_r`.
pub fn relation_fusion(tape: &mut Tape, p: &FusionParams, feats: &[Var]) -> Result<FusionOut> {
    if feats.is_empty() {
        return Err(Error::config("relation fusion needs at least one relation"));
    }
    if feats.len() != p.w_rel.len() {
        return Err(Error::config(format!(
            "{} relation features but {} relation weights",
            feats.len(),
            p.w_rel.len()
        )));
    }
    let mut scores = Vec::with_capacity(feats.len());
    for (&x, &w) in feats.iter().zip(&p.w_rel) {
        let lin = tape.matmul(x, w)?;
        let lin = tape.add_row(lin, p.bias)?;
        let act = tape.tanh(lin);
        let avg = tape.mean_rows(act)?;
        scores.push(tape.matmul(avg, p.q)?);
    }
    let scores = tape.concat(&scores, 0)?;
    let beta = tape.softmax(scores, 0)?;
    let mut out: Option<Var> = None;
    for (r, &x) in feats.iter().enumerate() {
        let b = tape.slice(beta, 0, r, 1)?;
        let term = tape.mul_scalar_var(x, b)?;
        out = Some(match out {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok(FusionOut {
        out: out.unwrap(),
        beta,
    })
}

/// Attention rows and relation weights produced during a forward pass.
#[derive(Clone, Debug, Default)]
pub struct Diagnostics {
    pub alphas: Vec<(Var, Arc<[usize]>)>,
    pub betas: Vec<Var>,
}

/// Projected layer-0 features for every embedded type (`None` for the rest).
pub fn project_all(tape: &mut Tape, b: &Bindings, ctx: &ModelContext) -> Result<Vec<Option<Var>>> {
    ctx.type_names
        .iter()
        .map(|name| match b.var(&names::embedding(name)) {
            Ok(e) => {
                let w = b.var(&names::projection(name))?;
                Ok(Some(tape.matmul(e, w)?))
            }
            Err(_) => Ok(None),
        })
        .collect()
}

/// Stacked full-graph layers over every relation view.
pub fn forward_full(
    tape: &mut Tape,
    b: &Bindings,
    ctx: &ModelContext,
    cfg: &ModelConfig,
    base: &[Var],
    diag: &mut Diagnostics,
) -> Result<Vec<Var>> {
    let mut x = base.to_vec();
    for layer in 0..cfg.layers {
        let mut next = x.clone();
        for (t, vs) in ctx.views_by_type.iter().enumerate() {
            if vs.is_empty() {
                continue;
            }
            let mut feats = Vec::with_capacity(vs.len());
            for &vi in vs {
                let v = &ctx.views[vi];
                let p = AttentionParams::bind(b, &names::full_prefix(layer, &v.name), cfg.heads)?;
                let a = node_attention(tape, &p, x[v.src.0], x[v.dst.0], &v.index)?;
                diag.alphas.push((a.alpha, v.index.offsets.clone()));
                feats.push(a.out);
            }
            let view_names: Vec<&str> = vs.iter().map(|&vi| ctx.views[vi].name.as_str()).collect();
            let fp = FusionParams::bind(b, &names::fusion_prefix(layer, &ctx.type_names[t]), &view_names)?;
            let fused = relation_fusion(tape, &fp, &feats)?;
            diag.betas.push(fused.beta);
            next[t] = fused.out;
        }
        x = next;
    }
    Ok(x)
}

/// Single attention layer over one similarity graph.
pub fn forward_metapath(
    tape: &mut Tape,
    b: &Bindings,
    cfg: &ModelConfig,
    channel: &Channel,
    x: Var,
) -> Result<AttentionOut> {
    let p = AttentionParams::bind(b, &names::channel_prefix(&channel.label), cfg.heads)?;
    node_attention(tape, &p, x, x, &channel.index)
}

#[derive(Clone, Debug)]
pub struct ForwardOut {
    pub full: Option<Vec<Var>>,
    pub channels: Vec<Var>,
    pub fused_user: Var,
    pub fused_recipe: Var,
    pub diagnostics: Diagnostics,
}

pub fn forward(tape: &mut Tape, b: &Bindings, ctx: &ModelContext, cfg: &ModelConfig) -> Result<ForwardOut> {
    let base = project_all(tape, b, ctx)?;
    let mut diag = Diagnostics::default();
    let full = if cfg.variant.uses_full() {
        let base: Vec<Var> = base.iter().map(|v| v.expect("all types embedded")).collect();
        Some(forward_full(tape, b, ctx, cfg, &base, &mut diag)?)
    } else {
        None
    };
    let mut channels = Vec::new();
    if cfg.variant.uses_metapaths() {
        for c in &ctx.channels {
            let x = base[c.node_type.0].ok_or_else(|| Error::config("channel type has no embedding"))?;
            let a = forward_metapath(tape, b, cfg, c, x)?;
            diag.alphas.push((a.alpha, c.index.offsets.clone()));
            channels.push(a.out);
        }
    }
    let mut fused = Vec::with_capacity(2);
    for ty in ctx.scored_types() {
        let mut parts = Vec::new();
        if let Some(full) = &full {
            parts.push(full[ty.0]);
        }
        if cfg.variant.uses_metapaths() {
            parts.extend(ctx.channels_of(ty).into_iter().map(|c| channels[c]));
        }
        if parts.is_empty() {
            parts.push(base[ty.0].expect("scored types are embedded"));
        }
        let cat = if parts.len() == 1 { parts[0] } else { tape.concat(&parts, 1)? };
        let w = b.var(&names::output(&ctx.type_names[ty.0]))?;
        fused.push(tape.matmul(cat, w)?);
    }
    Ok(ForwardOut {
        full,
        channels,
        fused_user: fused[0],
        fused_recipe: fused[1],
        diagnostics: diag,
    })
}

/// Inner-product scores for aligned `(users[k], recipes[k])` pairs.
pub fn score_pairs(tape: &mut Tape, out: &ForwardOut, users: &[usize], recipes: &[usize]) -> Result<Var> {
    let u = tape.gather_rows(out.fused_user, users.to_vec().into())?;
    let r = tape.gather_rows(out.fused_recipe, recipes.to_vec().into())?;
    tape.row_dot(u, r)
}

/// Score of one user-recipe pair on a tape.
pub fn fuse_and_score(tape: &mut Tape, out: &ForwardOut, u: usize, r: usize) -> Result<Var> {
    let s = score_pairs(tape, out, &[u], &[r])?;
    Ok(tape.sum(s))
}

/// Seeded RNG used for initialisation.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
