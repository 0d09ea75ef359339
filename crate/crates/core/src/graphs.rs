//! Relationship graphs between stocks and the operators derived from them.
//!
//! Three adjacency builders encode shareholding, intra-industry lead-lag and
//! shared-topic relations. Each adjacency is turned into a normalized
//! Laplacian `L = I − D^{-1/2} A D^{-1/2}` whose degree `D` is the row sum of
//! `A + I`; the unit self-loop keeps isolated stocks well defined.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::StockUniverse;
use crate::error::{Error, Result};
use crate::linalg::{node_mix, ordered_sum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GraphKind {
    Shareholding,
    Industry,
    Topicality,
}

impl GraphKind {
    pub const ALL: [GraphKind; 3] = [GraphKind::Shareholding, GraphKind::Industry, GraphKind::Topicality];

    pub fn name(self) -> &'static str {
        match self {
            GraphKind::Shareholding => "shareholding",
            GraphKind::Industry => "industry",
            GraphKind::Topicality => "topicality",
        }
    }

    pub fn letter(self) -> char {
        match self {
            GraphKind::Shareholding => 'S',
            GraphKind::Industry => 'I',
            GraphKind::Topicality => 'T',
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GraphKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s" | "shareholding" => Ok(GraphKind::Shareholding),
            "i" | "industry" => Ok(GraphKind::Industry),
            "t" | "topicality" => Ok(GraphKind::Topicality),
            _ => Err(Error::Invalid(format!("unknown graph kind `{s}`"))),
        }
    }
}

/// Nonnegative N×N relationship weights with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    pub kind: GraphKind,
    pub weights: Array2<f64>,
}

impl AdjacencyMatrix {
    pub fn new(kind: GraphKind, weights: Array2<f64>) -> Result<Self> {
        let (r, c) = weights.dim();
        if r != c {
            return Err(Error::Shape(format!("adjacency must be square, got {r}×{c}")));
        }
        for ((i, j), &w) in weights.indexed_iter() {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Invalid(format!("{kind} weight [{i}][{j}] = {w}")));
            }
            if i == j && w != 0.0 {
                return Err(Error::Invalid(format!("{kind} diagonal [{i}][{i}] = {w}")));
            }
        }
        Ok(Self { kind, weights })
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareholdingEdge {
    pub holder_id: String,
    pub held_id: String,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndustryRecord {
    pub stock_id: String,
    pub industry: String,
    pub registered_capital: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicRecord {
    pub stock_id: String,
    pub topic: String,
}

/// Symmetric shareholding graph; duplicate pairs keep the largest ratio and
/// self-holdings are ignored.
pub fn build_shareholding_graph(edges: &[ShareholdingEdge], universe: &StockUniverse) -> Result<AdjacencyMatrix> {
    let n = universe.len();
    let mut a = Array2::zeros((n, n));
    for e in edges {
        if !(0.0..=1.0).contains(&e.ratio) {
            return Err(Error::Invalid(format!(
                "shareholding ratio {} for {}→{} outside [0,1]",
                e.ratio, e.holder_id, e.held_id
            )));
        }
        let i = universe.require(&e.holder_id)?;
        let j = universe.require(&e.held_id)?;
        if i == j {
            continue;
        }
        let w = e.ratio.max(a[[i, j]]);
        a[[i, j]] = w;
        a[[j, i]] = w;
    }
    AdjacencyMatrix::new(GraphKind::Shareholding, a)
}

/// `a_ij = M_i / M_j` for distinct stocks in the same industry, where `M` is
/// registered capital. Records for ids outside the universe are skipped.
pub fn build_industry_graph(records: &[IndustryRecord], universe: &StockUniverse) -> Result<AdjacencyMatrix> {
    let n = universe.len();
    let mut member: Vec<Option<(&str, f64)>> = vec![None; n];
    for r in records {
        let Some(i) = universe.position(&r.stock_id) else {
            log::warn!("industry record for unknown stock `{}` skipped", r.stock_id);
            continue;
        };
        if !(r.registered_capital.is_finite() && r.registered_capital > 0.0) {
            return Err(Error::Invalid(format!(
                "registered capital of `{}` must be positive, got {}",
                r.stock_id, r.registered_capital
            )));
        }
        member[i] = Some((r.industry.as_str(), r.registered_capital));
    }
    let member: Vec<(&str, f64)> = member
        .into_iter()
        .enumerate()
        .map(|(i, m)| m.ok_or_else(|| Error::Invalid(format!("stock `{}` has no industry record", universe.id(i)))))
        .collect::<Result<_>>()?;

    let a = Array2::from_shape_fn((n, n), |(i, j)| {
        let (ind_i, cap_i) = member[i];
        let (ind_j, cap_j) = member[j];
        if i != j && ind_i == ind_j {
            cap_i / cap_j
        } else {
            0.0
        }
    });
    AdjacencyMatrix::new(GraphKind::Industry, a)
}

/// `a_ij = |topics(i) ∩ topics(j)| / |topics(i)|`; stocks without topics have
/// empty rows.
pub fn build_topicality_graph(records: &[TopicRecord], universe: &StockUniverse) -> Result<AdjacencyMatrix> {
    let n = universe.len();
    let mut topics: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); n];
    for r in records {
        match universe.position(&r.stock_id) {
            Some(i) => {
                topics[i].insert(r.topic.as_str());
            }
            None => log::warn!("topic record for unknown stock `{}` skipped", r.stock_id),
        }
    }
    let a = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j || topics[i].is_empty() {
            return 0.0;
        }
        let shared = topics[i].intersection(&topics[j]).count();
        shared as f64 / topics[i].len() as f64
    });
    AdjacencyMatrix::new(GraphKind::Topicality, a)
}

fn read_records<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    reader
        .deserialize()
        .map(|r| {
            r.map_err(|e: csv::Error| Error::Malformed {
                path: path.to_path_buf(),
                line: e.position().map_or(0, |p| p.line()),
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Reads `holder_id,held_id,ratio`.
pub fn read_shareholding(path: impl AsRef<Path>) -> Result<Vec<ShareholdingEdge>> {
    read_records(path.as_ref())
}

/// Reads `stock_id,industry,registered_capital`.
pub fn read_industry(path: impl AsRef<Path>) -> Result<Vec<IndustryRecord>> {
    read_records(path.as_ref())
}

/// Reads `stock_id,topic`, one row per pair.
pub fn read_topicality(path: impl AsRef<Path>) -> Result<Vec<TopicRecord>> {
    read_records(path.as_ref())
}

/// Normalized Laplacian with the degree vector used to build it.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    pub kind: GraphKind,
    pub matrix: Array2<f64>,
    /// Row sums of `A + I`.
    pub degree: Array1<f64>,
}

impl Laplacian {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// First-order renormalized filter `D^{-1/2} (A + I) D^{-1/2}`, which
    /// equals `I − L + D^{-1}`.
    pub fn renormalized_adjacency(&self) -> Array2<f64> {
        let mut s = self.matrix.mapv(|v| -v);
        for i in 0..self.n() {
            s[[i, i]] += 1.0 + 1.0 / self.degree[i];
        }
        s
    }
}

pub fn normalized_laplacian(a: &AdjacencyMatrix) -> Laplacian {
    let n = a.n();
    let degree: Array1<f64> = a
        .weights
        .rows()
        .into_iter()
        .map(|row| {
            let mut terms = row.to_vec();
            1.0 + ordered_sum(&mut terms)
        })
        .collect();
    let inv_sqrt = degree.mapv(|d| 1.0 / d.sqrt());
    let matrix = Array2::from_shape_fn((n, n), |(i, j)| {
        let delta = if i == j { 1.0 } else { 0.0 };
        delta - a.weights[[i, j]] * (inv_sqrt[i] * inv_sqrt[j])
    });
    Laplacian { kind: a.kind, matrix, degree }
}

/// Successive powers `L^0 … L^{count−1}`.
pub fn matrix_powers(l: ArrayView2<f64>, count: usize) -> Vec<Array2<f64>> {
    let n = l.nrows();
    let mut powers: Vec<Array2<f64>> = Vec::with_capacity(count);
    for k in 0..count {
        let next = match k {
            0 => Array2::eye(n),
            1 => l.to_owned(),
            _ => node_mix(l, powers[k - 1].view()),
        };
        powers.push(next);
    }
    powers
}

/// `Σ_k θ_k L^k` with exact powers.
pub fn matrix_polynomial(l: ArrayView2<f64>, coeffs: &[f64]) -> Result<Array2<f64>> {
    if coeffs.is_empty() {
        return Err(Error::Invalid("polynomial needs at least one coefficient".into()));
    }
    let (r, c) = l.dim();
    if r != c {
        return Err(Error::Shape(format!("Laplacian must be square, got {r}×{c}")));
    }
    let mut out = Array2::zeros((r, r));
    for (theta, power) in coeffs.iter().zip(matrix_powers(l, coeffs.len())) {
        out.scaled_add(*theta, &power);
    }
    Ok(out)
}

/// Fraction of off-diagonal entries that are nonzero.
pub fn graph_density(a: &AdjacencyMatrix) -> f64 {
    let n = a.n();
    if n < 2 {
        return 0.0;
    }
    let nonzero = a.weights.indexed_iter().filter(|&((i, j), &w)| i != j && w != 0.0).count();
    nonzero as f64 / (n * (n - 1)) as f64
}

/// The three pre-defined relationship graphs of one universe.
#[derive(Debug, Clone)]
pub struct GraphSet {
    pub adjacency: Vec<AdjacencyMatrix>,
    pub laplacians: Vec<Laplacian>,
}

impl GraphSet {
    pub fn from_adjacency(adjacency: Vec<AdjacencyMatrix>) -> Self {
        let laplacians = adjacency.iter().map(normalized_laplacian).collect();
        Self { adjacency, laplacians }
    }

    pub fn laplacian(&self, kind: GraphKind) -> Option<&Laplacian> {
        self.laplacians.iter().find(|l| l.kind == kind)
    }

    /// Builds all three graphs from the relationship files.
    pub fn load(
        universe: &StockUniverse,
        shareholding: impl AsRef<Path>,
        industry: impl AsRef<Path>,
        topicality: impl AsRef<Path>,
    ) -> Result<Self> {
        let s = build_shareholding_graph(&read_shareholding(shareholding)?, universe)?;
        let i = build_industry_graph(&read_industry(industry)?, universe)?;
        let t = build_topicality_graph(&read_topicality(topicality)?, universe)?;
        Ok(Self::from_adjacency(vec![s, i, t]))
    }
}

/// Writes a dense matrix with a `stock_id` header row and column.
pub fn write_dense_csv(path: impl AsRef<Path>, m: ArrayView2<f64>, universe: &StockUniverse) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("stock_id");
    for id in universe.ids() {
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    for (i, row) in m.rows().into_iter().enumerate() {
        out.push_str(universe.id(i));
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Densities keyed by graph kind.
pub fn density_report(graphs: &GraphSet) -> HashMap<GraphKind, f64> {
    graphs.adjacency.iter().map(|a| (a.kind, graph_density(a))).collect()
}
