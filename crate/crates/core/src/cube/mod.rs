//! Multi-dimensional cube index over an attributed network.
//!
//! Every object carries one or more labels per cube dimension and becomes a
//! member of each cell in the Cartesian product of its label sets. Links are
//! stored on both endpoints and only surface in a constructed network when
//! both endpoints are selected.

mod io;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{read_links, read_objects, read_query, write_network};

/// Default minimum number of members a cell needs to survive filtering.
pub const DEFAULT_MIN_CELL_SIZE: usize = 10;

/// Dense cell identifier, assigned in lexicographic order of label tuples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CellId(pub u32);

impl CellId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Position of an object in the cube's sorted object table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectIdx(pub u32);

impl ObjectIdx {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

pub type ObjectSet = BTreeSet<ObjectIdx>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: String,
    pub labels: BTreeMap<String, BTreeSet<String>>,
}

impl ObjectRecord {
    pub fn new<I, D, L>(id: impl Into<String>, labels: I) -> Self
    where
        I: IntoIterator<Item = (D, Vec<L>)>,
        D: Into<String>,
        L: Into<String>,
    {
        Self {
            id: id.into(),
            labels: labels
                .into_iter()
                .map(|(d, ls)| (d.into(), ls.into_iter().map(Into::into).collect()))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub source: String,
    pub target: String,
    pub weight: f64,
}

impl LinkRecord {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Self {
        Self::weighted(source, target, 1.0)
    }

    pub fn weighted(source: impl Into<String>, target: impl Into<String>, weight: f64) -> Self {
        Self {
            source: source.into(),
            target: target.into(),
            weight,
        }
    }
}

/// One cube dimension with its flat label vocabulary.
///
/// An empty vocabulary accepts any label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    #[serde(default)]
    pub labels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionSchema {
    pub dimensions: Vec<Dimension>,
}

impl DimensionSchema {
    pub fn new(dimensions: Vec<Dimension>) -> Result<Self> {
        if dimensions.is_empty() {
            return Err(Error::Schema("schema has no dimensions".into()));
        }
        let mut seen = HashSet::new();
        for d in &dimensions {
            if !seen.insert(d.name.as_str()) {
                return Err(Error::Schema(format!("duplicate dimension name {:?}", d.name)));
            }
        }
        let dimensions = dimensions
            .into_iter()
            .map(|mut d| {
                d.labels.sort();
                d.labels.dedup();
                d
            })
            .collect();
        Ok(Self { dimensions })
    }

    /// Open-vocabulary schema from dimension names, in the given order.
    pub fn from_names<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        Self::new(
            names
                .into_iter()
                .map(|n| Dimension {
                    name: n.into(),
                    labels: Vec::new(),
                })
                .collect(),
        )
    }

    /// Schema with dimensions in sorted name order and the observed labels as
    /// vocabulary.
    pub fn infer(objects: &[ObjectRecord]) -> Result<Self> {
        let mut vocab: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for o in objects {
            for (dim, labels) in &o.labels {
                vocab
                    .entry(dim.as_str())
                    .or_default()
                    .extend(labels.iter().map(String::as_str));
            }
        }
        Self::new(
            vocab
                .into_iter()
                .map(|(name, labels)| Dimension {
                    name: name.to_string(),
                    labels: labels.into_iter().map(str::to_string).collect(),
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.dimensions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dimensions.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.dimensions.iter().map(|d| d.name.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cell {
    pub id: CellId,
    /// One label per schema dimension, in schema order.
    pub label_tuple: Vec<String>,
    /// Sorted member objects.
    pub members: Vec<ObjectIdx>,
}

/// Counters collected while building a cube.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildCounts {
    pub objects: usize,
    pub links: usize,
    pub cells: usize,
    pub cells_filtered: usize,
    pub self_loops_dropped: usize,
    pub duplicate_links_dropped: usize,
}

/// Immutable cube index. Safe to share between threads once built.
#[derive(Clone, Debug)]
pub struct DataCube {
    schema: DimensionSchema,
    object_ids: Vec<String>,
    cells: Vec<Cell>,
    object_to_cells: Vec<Vec<CellId>>,
    adjacency: Vec<Vec<(ObjectIdx, f64)>>,
    counts: BuildCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub id: CellId,
    pub label_tuple: Vec<String>,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeManifest {
    pub schema: DimensionSchema,
    pub cells: Vec<CellSummary>,
    pub counts: BuildCounts,
}

/// Builds the cube index.
///
/// Cells with fewer than `min_cell_size` members are dropped; the surviving
/// cells get dense ids in lexicographic order of their label tuples.
pub fn build_cube(
    objects: &[ObjectRecord],
    links: &[LinkRecord],
    schema: DimensionSchema,
    min_cell_size: usize,
) -> Result<DataCube> {
    if min_cell_size == 0 {
        return Err(Error::Input("min_cell_size must be positive".into()));
    }
    let dim_pos: HashMap<&str, usize> = schema.names().enumerate().map(|(i, n)| (n, i)).collect();

    let mut order: Vec<&ObjectRecord> = objects.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    for pair in order.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(Error::Ingestion(format!("duplicate object id {:?}", pair[0].id)));
        }
    }
    let object_ids: Vec<String> = order.iter().map(|o| o.id.clone()).collect();
    let index_of: HashMap<&str, ObjectIdx> = object_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), ObjectIdx(i as u32)))
        .collect();

    let mut tuples: BTreeMap<Vec<String>, Vec<ObjectIdx>> = BTreeMap::new();
    for (i, obj) in order.iter().enumerate() {
        let mut per_dim: Vec<Option<&BTreeSet<String>>> = vec![None; schema.len()];
        for (dim, labels) in &obj.labels {
            let &p = dim_pos.get(dim.as_str()).ok_or_else(|| {
                Error::Schema(format!("object {:?} uses unknown dimension {:?}", obj.id, dim))
            })?;
            if labels.is_empty() {
                return Err(Error::Ingestion(format!(
                    "object {:?} has an empty label set for dimension {:?}",
                    obj.id, dim
                )));
            }
            let vocab = &schema.dimensions[p].labels;
            if !vocab.is_empty() {
                if let Some(bad) = labels.iter().find(|l| vocab.binary_search(l).is_err()) {
                    return Err(Error::Schema(format!(
                        "object {:?} has label {:?} outside the vocabulary of {:?}",
                        obj.id, bad, dim
                    )));
                }
            }
            per_dim[p] = Some(labels);
        }
        let per_dim = per_dim
            .into_iter()
            .enumerate()
            .map(|(p, l)| {
                l.ok_or_else(|| {
                    Error::Ingestion(format!(
                        "object {:?} has no label for dimension {:?}",
                        obj.id, schema.dimensions[p].name
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for tuple in cartesian(&per_dim) {
            tuples.entry(tuple).or_default().push(ObjectIdx(i as u32));
        }
    }

    let total_tuples = tuples.len();
    let cells: Vec<Cell> = tuples
        .into_iter()
        .filter(|(_, m)| m.len() >= min_cell_size)
        .enumerate()
        .map(|(i, (label_tuple, members))| Cell {
            id: CellId(i as u32),
            label_tuple,
            members,
        })
        .collect();

    let mut object_to_cells = vec![Vec::new(); object_ids.len()];
    for cell in &cells {
        for m in &cell.members {
            object_to_cells[m.index()].push(cell.id);
        }
    }

    let mut adjacency: Vec<Vec<(ObjectIdx, f64)>> = vec![Vec::new(); object_ids.len()];
    let mut seen: HashSet<(ObjectIdx, ObjectIdx)> = HashSet::new();
    let mut self_loops = 0;
    let mut duplicates = 0;
    for link in links {
        let lookup = |id: &str| {
            index_of.get(id).copied().ok_or_else(|| {
                Error::Ingestion(format!("link endpoint {id:?} is not a known object"))
            })
        };
        let a = lookup(&link.source)?;
        let b = lookup(&link.target)?;
        if !(link.weight.is_finite() && link.weight > 0.0) {
            return Err(Error::Ingestion(format!(
                "link {:?}-{:?} has non-positive weight {}",
                link.source, link.target, link.weight
            )));
        }
        if a == b {
            self_loops += 1;
            continue;
        }
        if !seen.insert((a.min(b), a.max(b))) {
            duplicates += 1;
            continue;
        }
        adjacency[a.index()].push((b, link.weight));
        adjacency[b.index()].push((a, link.weight));
    }
    for nbrs in &mut adjacency {
        nbrs.sort_by_key(|&(n, _)| n);
    }
    if self_loops + duplicates > 0 {
        log::warn!("dropped {self_loops} self-loops and {duplicates} duplicate links");
    }

    let counts = BuildCounts {
        objects: object_ids.len(),
        links: seen.len(),
        cells: cells.len(),
        cells_filtered: total_tuples - cells.len(),
        self_loops_dropped: self_loops,
        duplicate_links_dropped: duplicates,
    };
    Ok(DataCube {
        schema,
        object_ids,
        cells,
        object_to_cells,
        adjacency,
        counts,
    })
}

fn cartesian(sets: &[&BTreeSet<String>]) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = vec![Vec::with_capacity(sets.len())];
    for set in sets {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                set.iter().map(move |l| {
                    let mut t = prefix.clone();
                    t.push(l.clone());
                    t
                })
            })
            .collect();
    }
    out
}

impl DataCube {
    pub fn schema(&self) -> &DimensionSchema {
        &self.schema
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_objects(&self) -> usize {
        self.object_ids.len()
    }

    pub fn counts(&self) -> &BuildCounts {
        &self.counts
    }

    pub fn cell(&self, id: CellId) -> Result<&Cell> {
        self.cells.get(id.index()).ok_or(Error::UnknownCell(id))
    }

    pub fn cell_ids(&self) -> impl Iterator<Item = CellId> + '_ {
        self.cells.iter().map(|c| c.id)
    }

    pub fn object_id(&self, idx: ObjectIdx) -> &str {
        &self.object_ids[idx.index()]
    }

    pub fn object_index(&self, id: &str) -> Option<ObjectIdx> {
        self.object_ids
            .binary_search_by(|probe| probe.as_str().cmp(id))
            .ok()
            .map(|i| ObjectIdx(i as u32))
    }

    pub fn cells_of(&self, idx: ObjectIdx) -> &[CellId] {
        &self.object_to_cells[idx.index()]
    }

    /// Neighbors of an object with link weights, sorted by neighbor.
    pub fn neighbors(&self, idx: ObjectIdx) -> &[(ObjectIdx, f64)] {
        &self.adjacency[idx.index()]
    }

    /// Resolves external object ids into a query set.
    pub fn resolve_query<S: AsRef<str>>(&self, ids: &[S]) -> Result<QuerySet> {
        let set = ids
            .iter()
            .map(|id| {
                self.object_index(id.as_ref())
                    .ok_or_else(|| Error::Input(format!("query object {:?} not in dataset", id.as_ref())))
            })
            .collect::<Result<ObjectSet>>()?;
        QuerySet::new(set)
    }

    pub fn manifest(&self) -> CubeManifest {
        CubeManifest {
            schema: self.schema.clone(),
            cells: self
                .cells
                .iter()
                .map(|c| CellSummary {
                    id: c.id,
                    label_tuple: c.label_tuple.clone(),
                    size: c.members.len(),
                })
                .collect(),
            counts: self.counts.clone(),
        }
    }
}

/// Non-empty set of query objects.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuerySet {
    ids: ObjectSet,
}

impl QuerySet {
    pub fn new(ids: ObjectSet) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Input("query set is empty".into()));
        }
        Ok(Self { ids })
    }

    pub fn ids(&self) -> &ObjectSet {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, idx: ObjectIdx) -> bool {
        self.ids.contains(&idx)
    }
}

/// Union of the members of the selected cells.
pub fn union_members(cube: &DataCube, selected: impl IntoIterator<Item = CellId>) -> Result<ObjectSet> {
    let mut out = ObjectSet::new();
    for id in selected {
        out.extend(cube.cell(id)?.members.iter().copied());
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub source: ObjectIdx,
    pub target: ObjectIdx,
    pub weight: f64,
}

/// Induced subnetwork. Nodes are sorted; edges are sorted by (source, target)
/// with `source < target`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstructedNetwork {
    pub nodes: Vec<ObjectIdx>,
    pub edges: Vec<Edge>,
}

impl ConstructedNetwork {
    pub fn induced(cube: &DataCube, nodes: &ObjectSet) -> Self {
        let mut edges = Vec::new();
        for &u in nodes {
            for &(v, weight) in cube.neighbors(u) {
                if u < v && nodes.contains(&v) {
                    edges.push(Edge {
                        source: u,
                        target: v,
                        weight,
                    });
                }
            }
        }
        Self {
            nodes: nodes.iter().copied().collect(),
            edges,
        }
    }
}

/// Network induced on the query plus all members of the selected cells.
pub fn materialize_network(
    cube: &DataCube,
    selected: impl IntoIterator<Item = CellId>,
    query: &QuerySet,
) -> Result<ConstructedNetwork> {
    let mut nodes = union_members(cube, selected)?;
    nodes.extend(query.ids().iter().copied());
    Ok(ConstructedNetwork::induced(cube, &nodes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(id: &str, d1: &[&str], d2: &[&str]) -> ObjectRecord {
        ObjectRecord::new(id, [("d1", d1.to_vec()), ("d2", d2.to_vec())])
    }

    fn schema() -> DimensionSchema {
        DimensionSchema::from_names(["d1", "d2"]).unwrap()
    }

    fn idxs(cube: &DataCube, ids: &[&str]) -> ObjectSet {
        ids.iter().map(|i| cube.object_index(i).unwrap()).collect()
    }

    #[test]
    fn one_cell_per_distinct_tuple() {
        let objects = vec![obj("o1", &["a"], &["x"]), obj("o2", &["a"], &["y"])];
        let cube = build_cube(&objects, &[], schema(), 1).unwrap();
        assert_eq!(cube.num_cells(), 2);
        assert!(cube.cells().iter().all(|c| c.members.len() == 1));
        assert_eq!(cube.cells()[0].label_tuple, vec!["a", "x"]);
        assert_eq!(cube.cells()[1].label_tuple, vec!["a", "y"]);
    }

    #[test]
    fn multi_label_object_resides_in_product_cells() {
        let objects = vec![obj("o1", &["a", "b"], &["x"])];
        let cube = build_cube(&objects, &[], schema(), 1).unwrap();
        let tuples: Vec<_> = cube.cells().iter().map(|c| c.label_tuple.clone()).collect();
        assert_eq!(tuples, vec![vec!["a", "x"], vec!["b", "x"]]);
        assert_eq!(cube.cells_of(ObjectIdx(0)), &[CellId(0), CellId(1)]);
    }

    #[test]
    fn small_cells_are_filtered() {
        let mut objects: Vec<_> = (0..9).map(|i| obj(&format!("s{i}"), &["a"], &["x"])).collect();
        objects.extend((0..10).map(|i| obj(&format!("t{i}"), &["b"], &["x"])));
        let cube = build_cube(&objects, &[], schema(), DEFAULT_MIN_CELL_SIZE).unwrap();
        assert_eq!(cube.num_cells(), 1);
        assert_eq!(cube.cells()[0].label_tuple, vec!["b", "x"]);
        assert_eq!(cube.counts().cells_filtered, 1);
        // Objects of dropped cells stay in the object table.
        assert!(cube.object_index("s0").is_some());
        assert!(cube.cells_of(cube.object_index("s0").unwrap()).is_empty());
    }

    #[test]
    fn ingestion_errors() {
        let unknown_dim = vec![ObjectRecord::new("o1", [("d1", vec!["a"]), ("zz", vec!["x"])])];
        assert!(matches!(build_cube(&unknown_dim, &[], schema(), 1), Err(Error::Schema(_))));

        let missing = vec![ObjectRecord::new("o1", [("d1", vec!["a"])])];
        assert!(matches!(build_cube(&missing, &[], schema(), 1), Err(Error::Ingestion(_))));

        let dup = vec![obj("o1", &["a"], &["x"]), obj("o1", &["b"], &["x"])];
        assert!(matches!(build_cube(&dup, &[], schema(), 1), Err(Error::Ingestion(_))));

        let objects = vec![obj("o1", &["a"], &["x"])];
        let dangling = vec![LinkRecord::new("o1", "nope")];
        assert!(matches!(build_cube(&objects, &dangling, schema(), 1), Err(Error::Ingestion(_))));

        let vocab = DimensionSchema::new(vec![
            Dimension { name: "d1".into(), labels: vec!["b".into()] },
            Dimension { name: "d2".into(), labels: vec![] },
        ])
        .unwrap();
        assert!(matches!(build_cube(&objects, &[], vocab, 1), Err(Error::Schema(_))));

        assert!(DimensionSchema::from_names(["d1", "d1"]).is_err());
    }

    #[test]
    fn self_loops_and_duplicates_dropped() {
        let objects = vec![obj("o1", &["a"], &["x"]), obj("o2", &["a"], &["x"])];
        let links = vec![
            LinkRecord::new("o1", "o1"),
            LinkRecord::new("o1", "o2"),
            LinkRecord::weighted("o2", "o1", 3.0),
        ];
        let cube = build_cube(&objects, &links, schema(), 1).unwrap();
        assert_eq!(cube.counts().self_loops_dropped, 1);
        assert_eq!(cube.counts().duplicate_links_dropped, 1);
        assert_eq!(cube.counts().links, 1);
        assert_eq!(cube.neighbors(ObjectIdx(0)), &[(ObjectIdx(1), 1.0)]);
        assert_eq!(cube.neighbors(ObjectIdx(1)), &[(ObjectIdx(0), 1.0)]);
    }

    fn three_cell_cube() -> DataCube {
        // cells: (a,x) = {1,2}, (b,x) = {2,3}, (c,x) = {3}
        let objects = vec![
            obj("1", &["a"], &["x"]),
            obj("2", &["a", "b"], &["x"]),
            obj("3", &["b", "c"], &["x"]),
            obj("9", &["z"], &["x"]),
        ];
        let links = vec![LinkRecord::new("1", "2"), LinkRecord::new("2", "9")];
        build_cube(&objects, &links, schema(), 1).unwrap()
    }

    #[test]
    fn union_members_cases() {
        let cube = three_cell_cube();
        assert!(union_members(&cube, []).unwrap().is_empty());
        let disjoint = union_members(&cube, [CellId(0), CellId(2)]).unwrap();
        assert_eq!(disjoint, idxs(&cube, &["1", "2", "3"]));
        let overlap = union_members(&cube, [CellId(0), CellId(1)]).unwrap();
        let mut expected = ObjectSet::new();
        for c in [CellId(0), CellId(1)] {
            for m in &cube.cell(c).unwrap().members {
                expected.insert(*m);
            }
        }
        assert_eq!(overlap, expected);
        assert_eq!(overlap, idxs(&cube, &["1", "2", "3"]));
        assert!(matches!(union_members(&cube, [CellId(99)]), Err(Error::UnknownCell(_))));
    }

    #[test]
    fn materialize_drops_edges_leaving_the_node_set() {
        let cube = three_cell_cube();
        let q = cube.resolve_query(&["1"]).unwrap();
        let net = materialize_network(&cube, [CellId(0), CellId(1)], &q).unwrap();
        assert_eq!(net.nodes, idxs(&cube, &["1", "2", "3"]).into_iter().collect::<Vec<_>>());
        assert_eq!(net.edges.len(), 1);
        assert_eq!(cube.object_id(net.edges[0].source), "1");
        assert_eq!(cube.object_id(net.edges[0].target), "2");
    }

    #[test]
    fn materialize_empty_selection_is_query_only() {
        let cube = three_cell_cube();
        let q = cube.resolve_query(&["1", "2"]).unwrap();
        let net = materialize_network(&cube, [], &q).unwrap();
        assert_eq!(net.nodes, q.ids().iter().copied().collect::<Vec<_>>());
        assert_eq!(net.edges.len(), 1);
    }

    #[test]
    fn materialize_all_cells() {
        let cube = three_cell_cube();
        let q = cube.resolve_query(&["9"]).unwrap();
        let net = materialize_network(&cube, cube.cell_ids().collect::<Vec<_>>(), &q).unwrap();
        assert_eq!(net.nodes.len(), 4);
        assert_eq!(net.edges.len(), 2);
    }

    #[test]
    fn query_resolution_errors() {
        let cube = three_cell_cube();
        assert!(matches!(cube.resolve_query(&["nope"]), Err(Error::Input(_))));
        assert!(matches!(cube.resolve_query::<&str>(&[]), Err(Error::Input(_))));
    }
}
