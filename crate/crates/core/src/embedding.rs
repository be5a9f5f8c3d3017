//! Cell embeddings built from pre-trained word vectors.
//!
//! A label embeds as the sum of its token vectors; a cell embeds as the
//! concatenation of its label embeddings in schema order, so the cell space
//! has `P * d` coordinates.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::BufRead;

use ndarray::{Array1, Array2, ArrayView1};

use crate::cube::{Cell, CellId, DataCube};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct WordTable {
    dim: usize,
    vectors: HashMap<String, Array1<f64>>,
}

impl WordTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Input("word vector dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            vectors: HashMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&Array1<f64>> {
        self.vectors.get(token)
    }

    /// Inserts a vector, replacing any earlier one for the same token.
    pub fn insert(&mut self, token: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Input(format!(
                "vector for {token:?} has {} values, expected {}",
                vector.len(),
                self.dim
            )));
        }
        self.vectors.insert(token.to_lowercase(), Array1::from(vector));
        Ok(())
    }
}

/// Parses `token v1 ... vd` lines. Later lines for the same token win.
pub fn load_word_table(reader: impl BufRead, dim: usize) -> Result<WordTable> {
    let mut table = WordTable::new(dim)?;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values = fields
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        if values.len() != dim {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected {dim} values for {token:?}, found {}", values.len()),
            });
        }
        table.insert(token, values)?;
    }
    Ok(table)
}

/// Label → token expansions, e.g. a decade label to its ten years.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AliasMap {
    map: BTreeMap<String, Vec<String>>,
}

impl AliasMap {
    pub fn new(map: BTreeMap<String, Vec<String>>) -> Result<Self> {
        if let Some((label, _)) = map.iter().find(|(_, v)| v.is_empty()) {
            return Err(Error::Input(format!("alias for {label:?} has no tokens")));
        }
        let map = map
            .into_iter()
            .map(|(k, v)| (k, v.into_iter().map(|t| t.to_lowercase()).collect()))
            .collect();
        Ok(Self { map })
    }

    /// Reads a JSON object mapping labels to token lists.
    pub fn from_json(reader: impl std::io::Read) -> Result<Self> {
        Self::new(serde_json::from_reader(reader)?)
    }

    pub fn get(&self, label: &str) -> Option<&[String]> {
        self.map.get(label).map(Vec::as_slice)
    }
}

pub type Stopwords = HashSet<String>;

/// Reads one stop word per line.
pub fn read_stopwords(reader: impl BufRead) -> Result<Stopwords> {
    let mut out = Stopwords::new();
    for line in reader.lines() {
        let w = line?.trim().to_lowercase();
        if !w.is_empty() {
            out.insert(w);
        }
    }
    Ok(out)
}

/// Lowercases and splits on whitespace and ASCII punctuation.
pub fn tokenize(label: &str) -> Vec<String> {
    label
        .to_lowercase()
        .split(|c: char| c.is_whitespace() || c.is_ascii_punctuation())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn label_tokens(label: &str, aliases: &AliasMap) -> Vec<String> {
    match aliases.get(label) {
        Some(tokens) => tokens.to_vec(),
        None => tokenize(label),
    }
}

/// Sum of the label's token vectors; stop words and unknown tokens add zero.
pub fn embed_label(label: &str, table: &WordTable, aliases: &AliasMap, stopwords: &Stopwords) -> Array1<f64> {
    let mut out = Array1::zeros(table.dim());
    for tok in label_tokens(label, aliases) {
        if stopwords.contains(&tok) {
            continue;
        }
        if let Some(v) = table.get(&tok) {
            out += v;
        }
    }
    out
}

/// Concatenates per-dimension label embeddings in schema order.
pub fn embed_cell(cell: &Cell, label_embeddings: &[ArrayView1<f64>]) -> Result<Array1<f64>> {
    if label_embeddings.len() != cell.label_tuple.len() {
        return Err(Error::Internal(format!(
            "cell {} has {} dimensions but {} label embeddings were given",
            cell.id,
            cell.label_tuple.len(),
            label_embeddings.len()
        )));
    }
    let Some(first) = label_embeddings.first() else {
        return Err(Error::Internal("cell has no dimensions".into()));
    };
    let d = first.len();
    if label_embeddings.iter().any(|e| e.len() != d) {
        return Err(Error::Internal("label embeddings differ in length".into()));
    }
    let mut out = Array1::zeros(d * label_embeddings.len());
    for (p, e) in label_embeddings.iter().enumerate() {
        out.slice_mut(ndarray::s![p * d..(p + 1) * d]).assign(e);
    }
    Ok(out)
}

/// One embedding row per cube cell, indexed by cell id.
#[derive(Clone, Debug, PartialEq)]
pub struct CellEmbeddingTable {
    vectors: Array2<f64>,
    zero_labels: usize,
}

impl CellEmbeddingTable {
    pub fn from_matrix(vectors: Array2<f64>) -> Self {
        Self {
            vectors,
            zero_labels: 0,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let kappa = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != kappa) {
            return Err(Error::Input("embedding rows differ in length".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let vectors = Array2::from_shape_vec((rows.len(), kappa), flat)
            .map_err(|e| Error::Internal(e.to_string()))?;
        Ok(Self::from_matrix(vectors))
    }

    pub fn kappa(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn get(&self, id: CellId) -> ArrayView1<'_, f64> {
        self.vectors.row(id.index())
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.vectors
    }

    /// Number of distinct (dimension, label) pairs whose embedding is all zero.
    pub fn zero_labels(&self) -> usize {
        self.zero_labels
    }

    /// Mean over cells of the Euclidean distance to the closest other cell.
    /// `None` with fewer than two cells.
    pub fn mean_nearest_neighbor_distance(&self) -> Option<f64> {
        let n = self.len();
        if n < 2 {
            return None;
        }
        let total: f64 = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| squared_distance(self.vectors.row(i), self.vectors.row(j)))
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            })
            .sum();
        Some(total / n as f64)
    }
}

pub fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn build_embedding_table(
    cube: &DataCube,
    table: &WordTable,
    aliases: &AliasMap,
    stopwords: &Stopwords,
) -> Result<CellEmbeddingTable> {
    let p = cube.schema().len();
    let d = table.dim();
    let mut cache: BTreeMap<(usize, &str), Array1<f64>> = BTreeMap::new();
    let mut vectors = Array2::zeros((cube.num_cells(), p * d));
    for cell in cube.cells() {
        for (dim, label) in cell.label_tuple.iter().enumerate() {
            cache
                .entry((dim, label.as_str()))
                .or_insert_with(|| embed_label(label, table, aliases, stopwords));
        }
        let views: Vec<ArrayView1<f64>> = cell
            .label_tuple
            .iter()
            .enumerate()
            .map(|(dim, label)| cache[&(dim, label.as_str())].view())
            .collect();
        vectors.row_mut(cell.id.index()).assign(&embed_cell(cell, &views)?);
    }
    let zero_labels = cache.values().filter(|v| v.iter().all(|&x| x == 0.0)).count();
    if zero_labels > 0 {
        log::warn!("{zero_labels} labels have an all-zero embedding");
    }
    Ok(CellEmbeddingTable { vectors, zero_labels })
}

/// Closest non-excluded cell to `a` in Euclidean distance; ties go to the
/// smaller cell id.
pub fn nearest_cell(a: ArrayView1<f64>, table: &CellEmbeddingTable, excluded: &BTreeSet<CellId>) -> Result<CellId> {
    let mut best: Option<(f64, CellId)> = None;
    for (i, row) in table.vectors.rows().into_iter().enumerate() {
        let id = CellId(i as u32);
        if excluded.contains(&id) {
            continue;
        }
        let dist = squared_distance(a, row);
        if best.is_none_or(|(b, _)| dist < b) {
            best = Some((dist, id));
        }
    }
    best.map(|(_, id)| id).ok_or(Error::Exhausted)
}
