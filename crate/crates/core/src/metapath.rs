//! Metapath instance counting, PathSim similarity, top-m neighbor extraction
//! and the homogeneous similarity graphs built from them.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::graph::{HeteIn, NodeRef, RelationView, TypeId};
use crate::sparse::CountMatrix;

/// Ordered node-type sequence together with the directed relations that
/// connect consecutive types.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Metapath {
    types: Vec<TypeId>,
    views: Vec<RelationView>,
    label: String,
}

impl Metapath {
    /// Parses a dash-separated label of type codes (e.g. `U-R-I-R-U`) against
    /// the graph schema. Each consecutive type pair must be joined by exactly
    /// one directed relation view.
    pub fn parse(g: &HeteIn, label: &str) -> Result<Metapath> {
        let err = |msg: String| Error::Metapath {
            label: label.to_string(),
            msg,
        };
        let mut types = Vec::new();
        for part in label.split('-') {
            let mut chars = part.chars();
            let code = match (chars.next(), chars.next()) {
                (Some(c), None) => c,
                _ => return Err(err(format!("`{part}` is not a single-letter type code"))),
            };
            let ty = g
                .type_by_code(code)
                .ok_or_else(|| err(format!("unknown type code `{code}`")))?;
            types.push(ty);
        }
        if types.len() < 2 {
            return Err(err("a metapath needs at least two types".into()));
        }
        let all_views = g.all_views();
        let mut views = Vec::with_capacity(types.len() - 1);
        for w in types.windows(2) {
            let candidates: Vec<RelationView> = all_views
                .iter()
                .copied()
                .filter(|&v| g.view_src(v) == w[0] && g.view_dst(v) == w[1])
                .collect();
            match candidates.as_slice() {
                [v] => views.push(*v),
                [] => {
                    return Err(err(format!(
                        "no relation joins {} and {}",
                        g.node_type(w[0]).name,
                        g.node_type(w[1]).name
                    )))
                }
                _ => {
                    return Err(err(format!(
                        "ambiguous: several relations join {} and {}",
                        g.node_type(w[0]).name,
                        g.node_type(w[1]).name
                    )))
                }
            }
        }
        Ok(Metapath {
            types,
            views,
            label: label.to_string(),
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn types(&self) -> &[TypeId] {
        &self.types
    }

    pub fn views(&self) -> &[RelationView] {
        &self.views
    }

    pub fn source_type(&self) -> TypeId {
        self.types[0]
    }

    pub fn target_type(&self) -> TypeId {
        *self.types.last().unwrap()
    }

    pub fn is_symmetric(&self) -> bool {
        self.types.iter().eq(self.types.iter().rev())
    }
}

/// Exact path-instance counts between the endpoint nodes of a metapath.
#[derive(Clone, Debug, PartialEq)]
pub struct PathCountMatrix {
    pub metapath: Metapath,
    pub counts: CountMatrix,
}

impl PathCountMatrix {
    pub fn get(&self, x: usize, y: usize) -> u64 {
        self.counts.get(x, y)
    }
}

pub fn count_paths(g: &HeteIn, p: &Metapath) -> Result<PathCountMatrix> {
    let mut acc = g.adjacency_matrix(p.views[0]);
    for &v in &p.views[1..] {
        acc = acc.checked_mul(&g.adjacency_matrix(v)).map_err(|e| match e {
            Error::Overflow(at) => Error::Overflow(format!("{} ({at})", p.label)),
            other => other,
        })?;
    }
    Ok(PathCountMatrix {
        metapath: p.clone(),
        counts: acc,
    })
}

/// PathSim: `2 c(x,y) / (c(x,x) + c(y,y))`, with `o(x,x) = 1` and `0` for an
/// empty denominator.
pub fn pathsim(counts: &PathCountMatrix, x: usize, y: usize) -> f64 {
    if x == y {
        return 1.0;
    }
    pathsim_from(counts.get(x, y), counts.get(x, x), counts.get(y, y))
}

fn pathsim_from(cross: u64, self_x: u64, self_y: u64) -> f64 {
    let denom = self_x as f64 + self_y as f64;
    if denom == 0.0 {
        0.0
    } else {
        2.0 * cross as f64 / denom
    }
}

/// Per-source top-m PathSim neighbors.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityTable {
    pub metapath: Metapath,
    pub m: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SimilarityTable {
    pub fn node_type(&self) -> TypeId {
        self.metapath.source_type()
    }

    pub fn n_nodes(&self) -> usize {
        self.rows.len()
    }
}

pub fn top_m_similar(g: &HeteIn, p: &Metapath, m: usize) -> Result<SimilarityTable> {
    if !p.is_symmetric() {
        return Err(Error::Metapath {
            label: p.label.clone(),
            msg: "PathSim requires a symmetric metapath".into(),
        });
    }
    if m == 0 {
        return Err(Error::config("m must be at least 1"));
    }
    let counts = count_paths(g, p)?;
    Ok(top_m_from_counts(&counts, m))
}

/// Rows are independent; each is a pure function of the count matrix.
pub fn top_m_from_counts(counts: &PathCountMatrix, m: usize) -> SimilarityTable {
    let n = counts.counts.shape().0;
    let diag: Vec<u64> = (0..n).map(|i| counts.get(i, i)).collect();
    let rows = (0..n)
        .map(|x| {
            let (idx, vals) = counts.counts.row(x);
            let mut cands: Vec<(usize, f64)> = idx
                .iter()
                .zip(vals)
                .filter(|(&y, _)| y != x)
                .map(|(&y, &c)| (y, pathsim_from(c, diag[x], diag[y])))
                .filter(|&(_, s)| s > 0.0)
                .collect();
            cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            cands.truncate(m);
            cands
        })
        .collect();
    SimilarityTable {
        metapath: counts.metapath.clone(),
        m,
        rows,
    }
}

/// Single-type graph: each node points at its similar nodes, plus a self-loop.
/// Column lists are sorted ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct HomoGraph {
    pub node_type: TypeId,
    pub offsets: Vec<usize>,
    pub targets: Vec<usize>,
}

impl HomoGraph {
    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn out_neighbors(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn out_degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    /// Self-loops only; the graph left when every similarity edge is removed.
    pub fn self_loops(node_type: TypeId, n: usize) -> HomoGraph {
        HomoGraph {
            node_type,
            offsets: (0..=n).collect(),
            targets: (0..n).collect(),
        }
    }
}

pub fn build_homograph(table: &SimilarityTable) -> HomoGraph {
    let mut offsets = Vec::with_capacity(table.rows.len() + 1);
    let mut targets = Vec::new();
    offsets.push(0);
    for (v, row) in table.rows.iter().enumerate() {
        let mut nbrs: Vec<usize> = row.iter().map(|&(u, _)| u).collect();
        nbrs.push(v);
        nbrs.sort_unstable();
        nbrs.dedup();
        targets.extend(nbrs);
        offsets.push(targets.len());
    }
    HomoGraph {
        node_type: table.node_type(),
        offsets,
        targets,
    }
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization cannot fail")
}

/// One JSON object per source node:
/// `{"metapath":..,"src":..,"neighbors":[{"id":..,"score":..}]}` with node ids
/// from the graph files and scores written with 17 significant digits.
pub fn write_table_jsonl<W: Write>(g: &HeteIn, table: &SimilarityTable, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    let ty = table.node_type();
    let label = json_str(table.metapath.label());
    let mut line = String::new();
    for (x, row) in table.rows.iter().enumerate() {
        line.clear();
        let src = g.node_id(NodeRef { ty, index: x });
        write!(line, "{{\"metapath\":{label},\"src\":{},\"neighbors\":[", json_str(src)).unwrap();
        for (k, &(y, s)) in row.iter().enumerate() {
            if k > 0 {
                line.push(',');
            }
            let id = g.node_id(NodeRef { ty, index: y });
            write!(line, "{{\"id\":{},\"score\":{:.16e}}}", json_str(id), s).unwrap();
        }
        line.push_str("]}\n");
        out.write_all(line.as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct TableLine {
    metapath: String,
    src: String,
    neighbors: Vec<TableEntry>,
}

#[derive(Deserialize)]
struct TableEntry {
    id: String,
    score: f64,
}

pub fn read_table_jsonl<R: Read>(g: &HeteIn, input: R, m: usize) -> Result<SimilarityTable> {
    let mut rows: Option<Vec<Vec<(usize, f64)>>> = None;
    let mut metapath: Option<Metapath> = None;
    let index = g.node_index();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TableLine = serde_json::from_str(&line)?;
        let p = match &metapath {
            Some(p) if p.label() == rec.metapath => p.clone(),
            Some(p) => {
                return Err(Error::validation(format!(
                    "line {}: mixed metapaths `{}` and `{}`",
                    i + 1,
                    p.label(),
                    rec.metapath
                )))
            }
            None => {
                let p = Metapath::parse(g, &rec.metapath)?;
                rows = Some(vec![Vec::new(); g.count(p.source_type())]);
                metapath = Some(p.clone());
                p
            }
        };
        let resolve = |id: &str| -> Result<usize> {
            match index.get(id) {
                Some(n) if n.ty == p.source_type() => Ok(n.index),
                _ => Err(Error::validation(format!("line {}: unknown node `{id}`", i + 1))),
            }
        };
        let x = resolve(&rec.src)?;
        let row = rec
            .neighbors
            .iter()
            .map(|e| Ok((resolve(&e.id)?, e.score)))
            .collect::<Result<Vec<_>>>()?;
        rows.as_mut().unwrap()[x] = row;
    }
    match (metapath, rows) {
        (Some(metapath), Some(rows)) => Ok(SimilarityTable { metapath, m, rows }),
        _ => Err(Error::validation("empty similarity table file")),
    }
}
