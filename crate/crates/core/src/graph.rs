//! Heterogeneous information network storage.
//!
//! Nodes are grouped by type and addressed by dense per-type indices assigned
//! in file order. Every relation keeps a forward CSR (source rows) and a
//! reverse CSR (destination rows); symmetric same-type relations store both
//! directions of every edge in the forward CSR and share it for the reverse.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::CountMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TypeId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelId(pub usize);

/// A node addressed by its type and dense index within that type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeRef {
    pub ty: TypeId,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeType {
    pub name: String,
    /// Single-letter code used in metapath labels.
    pub code: char,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationType {
    pub name: String,
    pub src_type: TypeId,
    pub dst_type: TypeId,
    pub symmetric: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Forward,
    Reverse,
}

/// A relation traversed in one direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationView {
    pub relation: RelId,
    pub direction: Direction,
}

impl RelationView {
    pub fn forward(relation: RelId) -> Self {
        RelationView {
            relation,
            direction: Direction::Forward,
        }
    }

    pub fn reverse(relation: RelId) -> Self {
        RelationView {
            relation,
            direction: Direction::Reverse,
        }
    }
}

/// Compressed sparse rows with sorted, duplicate-free column lists.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<Option<f64>>,
}

impl Csr {
    fn from_sorted(n_rows: usize, mut pairs: Vec<(usize, usize, Option<f64>)>) -> Self {
        pairs.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut offsets = vec![0usize; n_rows + 1];
        for &(r, _, _) in &pairs {
            offsets[r + 1] += 1;
        }
        for i in 0..n_rows {
            offsets[i + 1] += offsets[i];
        }
        let cols = pairs.iter().map(|p| p.1).collect();
        let weights = pairs.iter().map(|p| p.2).collect();
        Csr {
            offsets,
            cols,
            weights,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, r: usize) -> &[usize] {
        &self.cols[self.offsets[r]..self.offsets[r + 1]]
    }

    pub fn row_weights(&self, r: usize) -> &[Option<f64>] {
        &self.weights[self.offsets[r]..self.offsets[r + 1]]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        self.row(r).binary_search(&c).is_ok()
    }

    /// Iterates `(row, col)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_rows()).flat_map(move |r| self.row(r).iter().map(move |&c| (r, c)))
    }

    fn transpose(&self, n_cols: usize) -> Csr {
        let pairs = (0..self.n_rows())
            .flat_map(|r| {
                self.row(r)
                    .iter()
                    .zip(self.row_weights(r))
                    .map(move |(&c, &w)| (c, r, w))
            })
            .collect();
        Csr::from_sorted(n_cols, pairs)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct NodeKey {
    node_id: String,
    external_key: String,
}

/// The heterogeneous information network. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct HeteIn {
    types: Vec<NodeType>,
    keys: Vec<Vec<NodeKey>>,
    file_order: Vec<NodeRef>,
    relations: Vec<RelationType>,
    forward: Vec<Csr>,
    reverse: Vec<Csr>,
}

/// Relations known to the recipe schema: `(name, src, dst, symmetric)`.
pub const RECIPE_RELATIONS: [(&str, &str, &str, bool); 4] = [
    ("user-recipe", "User", "Recipe", false),
    ("recipe-ingredient", "Recipe", "Ingredient", false),
    ("recipe-recipe", "Recipe", "Recipe", true),
    ("ingredient-ingredient", "Ingredient", "Ingredient", true),
];

impl HeteIn {
    pub fn types(&self) -> &[NodeType] {
        &self.types
    }

    pub fn relations(&self) -> &[RelationType] {
        &self.relations
    }

    pub fn node_type(&self, ty: TypeId) -> &NodeType {
        &self.types[ty.0]
    }

    pub fn relation(&self, rel: RelId) -> &RelationType {
        &self.relations[rel.0]
    }

    pub fn count(&self, ty: TypeId) -> usize {
        self.keys[ty.0].len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.keys.iter().map(Vec::len).collect()
    }

    pub fn type_by_name(&self, name: &str) -> Result<TypeId> {
        self.types
            .iter()
            .position(|t| t.name == name)
            .map(TypeId)
            .ok_or_else(|| Error::UnknownType(name.to_string()))
    }

    pub fn type_by_code(&self, code: char) -> Option<TypeId> {
        self.types.iter().position(|t| t.code == code).map(TypeId)
    }

    pub fn relation_by_name(&self, name: &str) -> Result<RelId> {
        self.relations
            .iter()
            .position(|r| r.name == name)
            .map(RelId)
            .ok_or_else(|| Error::UnknownRelation(name.to_string()))
    }

    pub fn node_id(&self, node: NodeRef) -> &str {
        &self.keys[node.ty.0][node.index].node_id
    }

    pub fn external_key(&self, node: NodeRef) -> &str {
        &self.keys[node.ty.0][node.index].external_key
    }

    /// Resolves a file-level node id to its dense reference.
    pub fn lookup(&self, node_id: &str) -> Option<NodeRef> {
        // Linear scans are fine for the reporting paths that use this.
        self.keys.iter().enumerate().find_map(|(t, keys)| {
            keys.iter()
                .position(|k| k.node_id == node_id)
                .map(|index| NodeRef { ty: TypeId(t), index })
        })
    }

    pub fn node_index(&self) -> HashMap<&str, NodeRef> {
        self.file_order
            .iter()
            .map(|&n| (self.node_id(n), n))
            .collect()
    }

    pub fn edge_count(&self, rel: RelId) -> usize {
        let r = &self.relations[rel.0];
        let nnz = self.forward[rel.0].nnz();
        if r.symmetric && r.src_type == r.dst_type {
            let loops = self.forward[rel.0].iter().filter(|(a, b)| a == b).count();
            (nnz - loops) / 2 + loops
        } else {
            nnz
        }
    }

    pub fn view_src(&self, view: RelationView) -> TypeId {
        let r = &self.relations[view.relation.0];
        match view.direction {
            Direction::Forward => r.src_type,
            Direction::Reverse => r.dst_type,
        }
    }

    pub fn view_dst(&self, view: RelationView) -> TypeId {
        let r = &self.relations[view.relation.0];
        match view.direction {
            Direction::Forward => r.dst_type,
            Direction::Reverse => r.src_type,
        }
    }

    /// Stable display name of a directed view; reverse views get a `~rev` suffix.
    pub fn view_name(&self, view: RelationView) -> String {
        let r = &self.relations[view.relation.0];
        match view.direction {
            Direction::Forward => r.name.clone(),
            Direction::Reverse => format!("{}~rev", r.name),
        }
    }

    pub fn csr(&self, view: RelationView) -> &Csr {
        match view.direction {
            Direction::Forward => &self.forward[view.relation.0],
            Direction::Reverse => &self.reverse[view.relation.0],
        }
    }

    /// All distinct directed views whose source type is `ty`, in relation order.
    /// A symmetric same-type relation contributes a single view.
    pub fn views_from(&self, ty: TypeId) -> Vec<RelationView> {
        let mut out = Vec::new();
        for (i, r) in self.relations.iter().enumerate() {
            let rel = RelId(i);
            if r.src_type == ty {
                out.push(RelationView::forward(rel));
            }
            if r.dst_type == ty && !(r.symmetric && r.src_type == r.dst_type) {
                out.push(RelationView::reverse(rel));
            }
        }
        out
    }

    /// All directed views in the graph.
    pub fn all_views(&self) -> Vec<RelationView> {
        (0..self.types.len())
            .flat_map(|t| self.views_from(TypeId(t)))
            .collect()
    }

    pub fn neighbors(&self, node: NodeRef, view: RelationView) -> Result<&[usize]> {
        let src = self.view_src(view);
        if node.ty != src {
            return Err(Error::TypeMismatch {
                node_type: self.types[node.ty.0].name.clone(),
                relation: self.view_name(view),
                expected: self.types[src.0].name.clone(),
            });
        }
        if node.index >= self.count(src) {
            return Err(Error::validation(format!(
                "node index {} out of range for type `{}`",
                node.index, self.types[src.0].name
            )));
        }
        Ok(self.csr(view).row(node.index))
    }

    /// Binary incidence matrix of a directed view, `|V_src| x |V_dst|`.
    pub fn adjacency_matrix(&self, view: RelationView) -> CountMatrix {
        let csr = self.csr(view);
        CountMatrix::from_pattern(
            self.count(self.view_src(view)),
            self.count(self.view_dst(view)),
            csr.offsets(),
            csr.cols(),
        )
    }

    /// Copy of the graph with the given `(src, dst)` pairs removed from `rel`.
    pub fn without_edges(&self, rel: RelId, removed: &[(usize, usize)]) -> HeteIn {
        let r = &self.relations[rel.0];
        let mut drop: BTreeSet<(usize, usize)> = removed.iter().copied().collect();
        if r.symmetric && r.src_type == r.dst_type {
            drop.extend(removed.iter().map(|&(a, b)| (b, a)));
        }
        let fwd = &self.forward[rel.0];
        let pairs = (0..fwd.n_rows())
            .flat_map(|row| {
                fwd.row(row)
                    .iter()
                    .zip(fwd.row_weights(row))
                    .map(move |(&c, &w)| (row, c, w))
            })
            .filter(|&(a, b, _)| !drop.contains(&(a, b)))
            .collect();
        let mut out = self.clone();
        let forward = Csr::from_sorted(fwd.n_rows(), pairs);
        out.reverse[rel.0] = forward.transpose(self.count(r.dst_type));
        out.forward[rel.0] = forward;
        out
    }

    /// Relabels the nodes of one type: new index of old node `i` is `perm[i]`.
    pub fn permute_type(&self, ty: TypeId, perm: &[usize]) -> Result<HeteIn> {
        let n = self.count(ty);
        if perm.len() != n {
            return Err(Error::validation("permutation length differs from type size"));
        }
        let mut seen = vec![false; n];
        for &p in perm {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(Error::validation("not a permutation"));
            }
        }
        let mut b = GraphBuilder::new();
        for t in &self.types {
            b.add_type(&t.name)?;
        }
        let mut inverse = vec![0; n];
        for (old, &new) in perm.iter().enumerate() {
            inverse[new] = old;
        }
        for (t, keys) in self.keys.iter().enumerate() {
            for i in 0..keys.len() {
                let old = if t == ty.0 { inverse[i] } else { i };
                b.add_node(TypeId(t), &keys[old].node_id, &keys[old].external_key)?;
            }
        }
        let map = |t: TypeId, i: usize| if t == ty { perm[i] } else { i };
        for (ri, r) in self.relations.iter().enumerate() {
            let rel = b.add_relation(&r.name, r.src_type, r.dst_type, r.symmetric)?;
            let fwd = &self.forward[ri];
            for (a, bb) in fwd.iter() {
                if r.symmetric && r.src_type == r.dst_type && a > bb {
                    continue;
                }
                let w = fwd.row_weights(a)[fwd.row(a).binary_search(&bb).unwrap()];
                b.add_edge(rel, map(r.src_type, a), map(r.dst_type, bb), w)?;
            }
        }
        b.build()
    }

    /// Writes the graph back to the TSV formats it is loaded from.
    pub fn write_tsv<W1: Write, W2: Write>(&self, nodes: W1, edges: W2) -> Result<()> {
        let mut nodes = BufWriter::new(nodes);
        writeln!(nodes, "node_id\ttype\texternal_key")?;
        for &n in &self.file_order {
            writeln!(
                nodes,
                "{}\t{}\t{}",
                self.node_id(n),
                self.types[n.ty.0].name,
                self.external_key(n)
            )?;
        }
        nodes.flush()?;
        let mut edges = BufWriter::new(edges);
        writeln!(edges, "relation\tsrc_id\tdst_id\tweight")?;
        for (ri, r) in self.relations.iter().enumerate() {
            let fwd = &self.forward[ri];
            for a in 0..fwd.n_rows() {
                for (&b, &w) in fwd.row(a).iter().zip(fwd.row_weights(a)) {
                    if r.symmetric && r.src_type == r.dst_type && a > b {
                        continue;
                    }
                    let src = self.node_id(NodeRef { ty: r.src_type, index: a });
                    let dst = self.node_id(NodeRef { ty: r.dst_type, index: b });
                    match w {
                        Some(w) => writeln!(edges, "{}\t{}\t{}\t{}", r.name, src, dst, w)?,
                        None => writeln!(edges, "{}\t{}\t{}", r.name, src, dst)?,
                    }
                }
            }
        }
        edges.flush()?;
        Ok(())
    }

    pub fn save(&self, nodes_path: &Path, edges_path: &Path) -> Result<()> {
        self.write_tsv(File::create(nodes_path)?, File::create(edges_path)?)
    }
}

impl fmt::Display for HeteIn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.types.iter().enumerate() {
            writeln!(f, "type {} ({}): {} nodes", t.name, t.code, self.keys[i].len())?;
        }
        for (i, r) in self.relations.iter().enumerate() {
            writeln!(
                f,
                "relation {} ({} -> {}): {} edges",
                r.name,
                self.types[r.src_type.0].name,
                self.types[r.dst_type.0].name,
                self.edge_count(RelId(i))
            )?;
        }
        Ok(())
    }
}

/// Incremental constructor; `build` validates every invariant.
#[derive(Default)]
pub struct GraphBuilder {
    types: Vec<NodeType>,
    keys: Vec<Vec<NodeKey>>,
    file_order: Vec<NodeRef>,
    ids: HashMap<String, NodeRef>,
    relations: Vec<RelationType>,
    edges: Vec<Vec<(usize, usize, Option<f64>)>>,
    seen: Vec<HashMap<(usize, usize), (usize, usize)>>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builder pre-populated with the User/Recipe/Ingredient schema.
    pub fn recipe_schema() -> Self {
        let mut b = Self::new();
        for name in ["User", "Recipe", "Ingredient"] {
            b.add_type(name).expect("fixed schema");
        }
        for (name, s, d, sym) in RECIPE_RELATIONS {
            let s = b.type_id(s).unwrap();
            let d = b.type_id(d).unwrap();
            b.add_relation(name, s, d, sym).expect("fixed schema");
        }
        b
    }

    fn type_id(&self, name: &str) -> Option<TypeId> {
        self.types.iter().position(|t| t.name == name).map(TypeId)
    }

    pub fn add_type(&mut self, name: &str) -> Result<TypeId> {
        if let Some(t) = self.type_id(name) {
            return Ok(t);
        }
        let code = name
            .chars()
            .next()
            .ok_or_else(|| Error::validation("empty node type name"))?
            .to_ascii_uppercase();
        if let Some(other) = self.types.iter().find(|t| t.code == code) {
            return Err(Error::validation(format!(
                "node types `{}` and `{}` share the label code `{}`",
                other.name, name, code
            )));
        }
        self.types.push(NodeType {
            name: name.to_string(),
            code,
        });
        self.keys.push(Vec::new());
        Ok(TypeId(self.types.len() - 1))
    }

    pub fn add_node(&mut self, ty: TypeId, node_id: &str, external_key: &str) -> Result<usize> {
        if self.ids.contains_key(node_id) {
            return Err(Error::validation(format!("duplicate node id `{node_id}`")));
        }
        let index = self.keys[ty.0].len();
        self.keys[ty.0].push(NodeKey {
            node_id: node_id.to_string(),
            external_key: external_key.to_string(),
        });
        let node = NodeRef { ty, index };
        self.file_order.push(node);
        self.ids.insert(node_id.to_string(), node);
        Ok(index)
    }

    /// Adds `n` nodes with generated ids `<prefix><i>`.
    pub fn add_nodes(&mut self, ty: TypeId, prefix: &str, n: usize) -> Result<()> {
        for i in 0..n {
            let id = format!("{prefix}{i}");
            self.add_node(ty, &id, &id)?;
        }
        Ok(())
    }

    pub fn add_relation(
        &mut self,
        name: &str,
        src_type: TypeId,
        dst_type: TypeId,
        symmetric: bool,
    ) -> Result<RelId> {
        if let Some(i) = self.relations.iter().position(|r| r.name == name) {
            let r = &self.relations[i];
            if r.src_type != src_type || r.dst_type != dst_type {
                return Err(Error::validation(format!(
                    "relation `{name}` redeclared with different endpoint types"
                )));
            }
            return Ok(RelId(i));
        }
        self.relations.push(RelationType {
            name: name.to_string(),
            src_type,
            dst_type,
            symmetric,
        });
        self.edges.push(Vec::new());
        self.seen.push(HashMap::new());
        Ok(RelId(self.relations.len() - 1))
    }

    pub fn relation_id(&self, name: &str) -> Option<RelId> {
        self.relations.iter().position(|r| r.name == name).map(RelId)
    }

    pub fn add_edge(&mut self, rel: RelId, src: usize, dst: usize, weight: Option<f64>) -> Result<()> {
        let r = &self.relations[rel.0];
        let (ns, nd) = (self.keys[r.src_type.0].len(), self.keys[r.dst_type.0].len());
        if src >= ns || dst >= nd {
            return Err(Error::validation(format!(
                "dangling endpoint in relation `{}`: ({src}, {dst})",
                r.name
            )));
        }
        let mirrored = r.symmetric && r.src_type == r.dst_type;
        let key = if mirrored { (src.min(dst), src.max(dst)) } else { (src, dst) };
        if let Some(&stored) = self.seen[rel.0].get(&key) {
            // The mirror of an already-present symmetric edge is merged.
            if mirrored && stored == (dst, src) && src != dst {
                return Ok(());
            }
            return Err(Error::validation(format!(
                "duplicate edge ({src}, {dst}) in relation `{}`",
                r.name
            )));
        }
        self.seen[rel.0].insert(key, (src, dst));
        self.edges[rel.0].push((src, dst, weight));
        Ok(())
    }

    pub fn add_edge_by_id(&mut self, relation: &str, src_id: &str, dst_id: &str, weight: Option<f64>) -> Result<()> {
        let src = *self.ids.get(src_id).ok_or_else(|| {
            Error::validation(format!(
                "dangling endpoint: edge {relation} {src_id} -> {dst_id} references unknown node `{src_id}`"
            ))
        })?;
        let dst = *self.ids.get(dst_id).ok_or_else(|| {
            Error::validation(format!(
                "dangling endpoint: edge {relation} {src_id} -> {dst_id} references unknown node `{dst_id}`"
            ))
        })?;
        let rel = match self.relation_id(relation) {
            Some(rel) => rel,
            None => self.add_relation(relation, src.ty, dst.ty, src.ty == dst.ty)?,
        };
        let r = &self.relations[rel.0];
        if r.src_type != src.ty || r.dst_type != dst.ty {
            return Err(Error::validation(format!(
                "edge {relation} {src_id} -> {dst_id}: endpoint types ({}, {}) do not match relation ({}, {})",
                self.types[src.ty.0].name,
                self.types[dst.ty.0].name,
                self.types[r.src_type.0].name,
                self.types[r.dst_type.0].name
            )));
        }
        self.add_edge(rel, src.index, dst.index, weight)
    }

    pub fn build(self) -> Result<HeteIn> {
        let mut forward = Vec::with_capacity(self.relations.len());
        let mut reverse = Vec::with_capacity(self.relations.len());
        for (r, edges) in self.relations.iter().zip(self.edges) {
            let n_src = self.keys[r.src_type.0].len();
            let n_dst = self.keys[r.dst_type.0].len();
            let mirrored = r.symmetric && r.src_type == r.dst_type;
            let mut pairs = Vec::with_capacity(edges.len() * if mirrored { 2 } else { 1 });
            for (a, b, w) in edges {
                pairs.push((a, b, w));
                if mirrored && a != b {
                    pairs.push((b, a, w));
                }
            }
            let fwd = Csr::from_sorted(n_src, pairs);
            let rev = if mirrored { fwd.clone() } else { fwd.transpose(n_dst) };
            forward.push(fwd);
            reverse.push(rev);
        }
        Ok(HeteIn {
            types: self.types,
            keys: self.keys,
            file_order: self.file_order,
            relations: self.relations,
            forward,
            reverse,
        })
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Parses `nodes.tsv` and `edges.tsv` content. Known recipe relations are
/// declared up front whenever their endpoint types are present; other
/// relation names infer their endpoint types from the first edge.
pub fn read_hetein<R1: Read, R2: Read>(
    nodes: R1,
    nodes_path: &Path,
    edges: R2,
    edges_path: &Path,
) -> Result<HeteIn> {
    let mut b = GraphBuilder::new();
    let mut header_seen = false;
    for (i, line) in BufReader::new(nodes).lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if !header_seen {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 2 || cols[0] != "node_id" || cols[1] != "type" {
                return Err(parse_err(
                    nodes_path,
                    lineno,
                    "missing header `node_id\\ttype\\texternal_key`",
                ));
            }
            header_seen = true;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(parse_err(
                nodes_path,
                lineno,
                format!("expected 3 tab-separated columns, found {}", cols.len()),
            ));
        }
        if cols[0].is_empty() || cols[1].is_empty() {
            return Err(parse_err(nodes_path, lineno, "empty node id or type"));
        }
        let ty = b.add_type(cols[1])?;
        b.add_node(ty, cols[0], cols[2])?;
    }
    if !header_seen {
        return Err(parse_err(nodes_path, 1, "empty nodes file (header required)"));
    }
    for (name, s, d, sym) in RECIPE_RELATIONS {
        if let (Some(s), Some(d)) = (b.type_id(s), b.type_id(d)) {
            b.add_relation(name, s, d, sym)?;
        }
    }
    for (i, line) in BufReader::new(edges).lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.is_empty() || (i == 0 && line.starts_with("relation\t")) {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 && cols.len() != 4 {
            return Err(parse_err(
                edges_path,
                lineno,
                format!("expected 3 or 4 tab-separated columns, found {}", cols.len()),
            ));
        }
        let weight = match cols.get(3) {
            Some(w) if !w.is_empty() => Some(
                w.parse::<f64>()
                    .map_err(|e| parse_err(edges_path, lineno, format!("bad weight `{w}`: {e}")))?,
            ),
            _ => None,
        };
        b.add_edge_by_id(cols[0], cols[1], cols[2], weight)
            .map_err(|e| match e {
                Error::Validation(msg) => Error::Validation(format!("{}:{lineno}: {msg}", edges_path.display())),
                other => other,
            })?;
    }
    b.build()
}

pub fn load_hetein(nodes_file: &Path, edges_file: &Path) -> Result<HeteIn> {
    let nodes = File::open(nodes_file)?;
    let edges = File::open(edges_file)?;
    read_hetein(nodes, nodes_file, edges, edges_file)
}

/// Directory layout produced by `ingest`: `nodes.tsv` + `edges.tsv`.
pub fn graph_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join("nodes.tsv"), dir.join("edges.tsv"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
    pub target_relation: String,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            ratios: [0.8, 0.1, 0.1],
            seed: 42,
            target_relation: "user-recipe".to_string(),
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ratios.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::config(format!("split ratios must be non-negative: {:?}", self.ratios)));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("split ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fold {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug)]
pub struct EdgeHoldout {
    pub target: RelId,
    pub train_graph: HeteIn,
    pub val_edges: Vec<(usize, usize)>,
    pub test_edges: Vec<(usize, usize)>,
}

/// One held-out edge, keyed by file-level node ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub user: String,
    pub recipe: String,
    pub fold: Fold,
}

pub fn split_target_edges(g: &HeteIn, spec: &SplitSpec) -> Result<EdgeHoldout> {
    spec.validate()?;
    let target = g.relation_by_name(&spec.target_relation)?;
    let mut edges: Vec<(usize, usize)> = g.csr(RelationView::forward(target)).iter().collect();
    if g.relation(target).symmetric && g.relation(target).src_type == g.relation(target).dst_type {
        edges.retain(|&(a, b)| a <= b);
    }
    let n = edges.len();
    if n < 10 {
        return Err(Error::validation(format!(
            "target relation `{}` has {n} edges; at least 10 are required",
            spec.target_relation
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    edges.shuffle(&mut rng);
    let n_val = (n as f64 * spec.ratios[1] + 1e-9).floor() as usize;
    let n_test = (n as f64 * spec.ratios[2] + 1e-9).floor() as usize;
    let mut val_edges = edges[..n_val].to_vec();
    let mut test_edges = edges[n_val..n_val + n_test].to_vec();
    val_edges.sort_unstable();
    test_edges.sort_unstable();
    let held: Vec<(usize, usize)> = val_edges.iter().chain(&test_edges).copied().collect();
    Ok(EdgeHoldout {
        target,
        train_graph: g.without_edges(target, &held),
        val_edges,
        test_edges,
    })
}

impl EdgeHoldout {
    pub fn manifest(&self, g: &HeteIn) -> Vec<ManifestRecord> {
        let r = g.relation(self.target);
        let rec = |fold: Fold, &(a, b): &(usize, usize)| ManifestRecord {
            user: g.node_id(NodeRef { ty: r.src_type, index: a }).to_string(),
            recipe: g.node_id(NodeRef { ty: r.dst_type, index: b }).to_string(),
            fold,
        };
        self.val_edges
            .iter()
            .map(|e| rec(Fold::Val, e))
            .chain(self.test_edges.iter().map(|e| rec(Fold::Test, e)))
            .collect()
    }

    /// Rebuilds a holdout from manifest records against the full graph.
    pub fn from_manifest(g: &HeteIn, target_relation: &str, records: &[ManifestRecord]) -> Result<EdgeHoldout> {
        let target = g.relation_by_name(target_relation)?;
        let r = g.relation(target);
        let index = g.node_index();
        let resolve = |id: &str, ty: TypeId| -> Result<usize> {
            match index.get(id) {
                Some(n) if n.ty == ty => Ok(n.index),
                Some(_) => Err(Error::validation(format!("manifest node `{id}` has the wrong type"))),
                None => Err(Error::validation(format!("manifest references unknown node `{id}`"))),
            }
        };
        let fwd = g.csr(RelationView::forward(target));
        let mut val_edges = Vec::new();
        let mut test_edges = Vec::new();
        for rec in records {
            let e = (resolve(&rec.user, r.src_type)?, resolve(&rec.recipe, r.dst_type)?);
            if !fwd.contains(e.0, e.1) {
                return Err(Error::validation(format!(
                    "manifest edge ({}, {}) is not in relation `{target_relation}`",
                    rec.user, rec.recipe
                )));
            }
            match rec.fold {
                Fold::Val => val_edges.push(e),
                Fold::Test => test_edges.push(e),
                Fold::Train => {}
            }
        }
        val_edges.sort_unstable();
        test_edges.sort_unstable();
        let held: Vec<(usize, usize)> = val_edges.iter().chain(&test_edges).copied().collect();
        Ok(EdgeHoldout {
            target,
            train_graph: g.without_edges(target, &held),
            val_edges,
            test_edges,
        })
    }

    pub fn edges(&self, fold: Fold) -> &[(usize, usize)] {
        match fold {
            Fold::Val => &self.val_edges,
            Fold::Test => &self.test_edges,
            Fold::Train => &[],
        }
    }
}

pub fn write_manifest<W: Write>(records: &[ManifestRecord], out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let f = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e.to_string()))?,
        );
    }
    Ok(out)
}
