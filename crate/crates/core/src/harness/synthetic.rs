//! Seeded synthetic datasets with a known best selection.
//!
//! Objects are grouped into disjoint cells. The query is drawn from a few
//! planted cells plus a fraction of noise objects from elsewhere, so with no
//! noise the planted cells are the best selection of their size. The greedy
//! trap variant instead plants two cells whose union is exactly the query
//! and a decoy cell that overlaps both and wins the first greedy round.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cube::{build_cube, DataCube, Dimension, DimensionSchema, LinkRecord, ObjectRecord};
use crate::embedding::{build_embedding_table, AliasMap, CellEmbeddingTable, Stopwords, WordTable};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Planted,
    GreedyTrap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub dimensions: usize,
    pub labels_per_dimension: usize,
    pub word_dim: usize,
    pub cells: usize,
    pub objects_per_cell: usize,
    pub planted: usize,
    /// Fraction of each planted cell's members put in the query.
    pub query_fraction: f64,
    /// Fraction of the query drawn from outside the planted cells.
    pub noise: f64,
    /// Probability of a link between two members of the same cell.
    pub intra_link_prob: f64,
    /// Cross-cell links per object.
    pub cross_links_per_object: f64,
    pub variant: Variant,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            dimensions: 2,
            labels_per_dimension: 4,
            word_dim: 8,
            cells: 15,
            objects_per_cell: 10,
            planted: 3,
            query_fraction: 0.8,
            noise: 0.1,
            intra_link_prob: 0.3,
            cross_links_per_object: 0.5,
            variant: Variant::Planted,
        }
    }
}

impl SyntheticSpec {
    /// Greedy-trap layout with enough labels for the background cells.
    pub fn greedy_trap() -> Self {
        Self {
            labels_per_dimension: 6,
            variant: Variant::GreedyTrap,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Spec(m.to_string()));
        if self.dimensions == 0 || self.labels_per_dimension == 0 || self.word_dim == 0 {
            return err("dimensions, labels_per_dimension and word_dim must be positive");
        }
        if self.cells == 0 || self.objects_per_cell == 0 {
            return err("cells and objects_per_cell must be positive");
        }
        let capacity = (self.labels_per_dimension as u128).checked_pow(self.dimensions as u32);
        if capacity.is_some_and(|c| c < self.cells as u128) {
            return err("not enough distinct label tuples for the requested cell count");
        }
        for (name, v) in [
            ("query_fraction", self.query_fraction),
            ("noise", self.noise),
            ("intra_link_prob", self.intra_link_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Spec(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.noise >= 1.0 {
            return err("noise must be below 1");
        }
        if self.cross_links_per_object.is_nan() || self.cross_links_per_object < 0.0 {
            return err("cross_links_per_object must be non-negative");
        }
        match self.variant {
            Variant::Planted => {
                if self.planted == 0 || self.planted > self.cells {
                    return err("planted cell count must lie in 1..=cells");
                }
                if (self.query_fraction * self.objects_per_cell as f64).round() < 1.0 {
                    return err("query_fraction leaves planted cells without query members");
                }
            }
            Variant::GreedyTrap => {
                if self.cells < 3 || self.labels_per_dimension < 4 {
                    return err("the greedy trap needs at least 3 cells and 4 labels per dimension");
                }
                let background = (self.labels_per_dimension as u128 - 3)
                    * (self.labels_per_dimension as u128).pow(self.dimensions as u32 - 1);
                if background < (self.cells - 3) as u128 {
                    return err("not enough label tuples for the trap's background cells");
                }
            }
        }
        Ok(())
    }
}

/// In-memory synthetic dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub schema: DimensionSchema,
    pub objects: Vec<ObjectRecord>,
    pub links: Vec<LinkRecord>,
    pub query: Vec<String>,
    pub words: Vec<(String, Vec<f64>)>,
    pub aliases: BTreeMap<String, Vec<String>>,
    pub stopwords: Vec<String>,
    /// Label tuples of the planted cells.
    pub planted: Vec<Vec<String>>,
}

fn label(dim: usize, i: usize) -> String {
    format!("p{dim}l{i}")
}

fn group_token(i: usize) -> String {
    format!("grp{}", i / 2)
}

/// Label tuples as per-dimension label indices, `count` of them, distinct,
/// in random order. Tuples whose first index is below `first_min` are skipped.
fn draw_tuples(spec: &SyntheticSpec, count: usize, first_min: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let l = spec.labels_per_dimension;
    let p = spec.dimensions;
    let total = (l as u128).checked_pow(p as u32).unwrap_or(u128::MAX);
    if total <= 100_000 {
        let mut all: Vec<Vec<usize>> = (0..total as usize)
            .map(|mut code| {
                let mut t = vec![0; p];
                for slot in t.iter_mut().rev() {
                    *slot = code % l;
                    code /= l;
                }
                t
            })
            .filter(|t| t[0] >= first_min)
            .collect();
        all.shuffle(rng);
        all.truncate(count);
        all
    } else {
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let mut t: Vec<usize> = (0..p).map(|_| rng.random_range(0..l)).collect();
            t[0] = rng.random_range(first_min..l);
            if seen.insert(t.clone()) {
                out.push(t);
            }
        }
        out
    }
}

struct Layout {
    /// Label-index tuple and member object indices per cell.
    cells: Vec<(Vec<usize>, Vec<usize>)>,
    num_objects: usize,
    query: BTreeSet<usize>,
    planted: Vec<usize>,
}

fn planted_layout(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Layout {
    let opc = spec.objects_per_cell;
    let tuples = draw_tuples(spec, spec.cells, 0, rng);
    let cells: Vec<(Vec<usize>, Vec<usize>)> = tuples
        .into_iter()
        .enumerate()
        .map(|(c, t)| (t, (c * opc..(c + 1) * opc).collect()))
        .collect();
    let planted: Vec<usize> = (0..spec.planted).collect();
    let per_cell = (spec.query_fraction * opc as f64).round() as usize;
    let mut query = BTreeSet::new();
    for &c in &planted {
        for i in index::sample(rng, opc, per_cell) {
            query.insert(cells[c].1[i]);
        }
    }
    let planted_total = query.len();
    let outside: Vec<usize> = (spec.planted * opc..spec.cells * opc).collect();
    let noise_count = ((spec.noise * planted_total as f64 / (1.0 - spec.noise)).round() as usize).min(outside.len());
    for i in index::sample(rng, outside.len(), noise_count) {
        query.insert(outside[i]);
    }
    Layout {
        num_objects: spec.cells * opc,
        cells,
        query,
        planted,
    }
}

fn trap_layout(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Layout {
    let u = (spec.objects_per_cell / 10).max(1);
    // query objects 0..20u; decoy extras 20u..22u
    let first = |d0: usize| {
        let mut t = vec![0; spec.dimensions];
        t[0] = d0;
        t
    };
    let mut cells = vec![
        (first(0), (0..10 * u).collect::<Vec<_>>()),
        (first(1), (10 * u..20 * u).collect()),
        (first(2), (2 * u..18 * u).chain(20 * u..22 * u).collect()),
    ];
    let mut next = 22 * u;
    for t in draw_tuples(spec, spec.cells - 3, 3, rng) {
        cells.push((t, (next..next + spec.objects_per_cell).collect()));
        next += spec.objects_per_cell;
    }
    Layout {
        cells,
        num_objects: next,
        query: (0..20 * u).collect(),
        planted: vec![0, 1],
    }
}

/// Generates a dataset; identical `(spec, seed)` pairs give identical data.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = match spec.variant {
        Variant::Planted => planted_layout(spec, &mut rng),
        Variant::GreedyTrap => trap_layout(spec, &mut rng),
    };
    let width = layout.num_objects.to_string().len().max(4);
    let oid = |i: usize| format!("o{i:0width$}");

    let mut labels: Vec<Vec<BTreeSet<String>>> = vec![vec![BTreeSet::new(); spec.dimensions]; layout.num_objects];
    let mut cell_of: Vec<Vec<usize>> = vec![Vec::new(); layout.num_objects];
    for (c, (tuple, members)) in layout.cells.iter().enumerate() {
        for &m in members {
            cell_of[m].push(c);
            for (d, &li) in tuple.iter().enumerate() {
                labels[m][d].insert(label(d, li));
            }
        }
    }
    let objects: Vec<ObjectRecord> = labels
        .into_iter()
        .enumerate()
        .map(|(i, per_dim)| ObjectRecord {
            id: oid(i),
            labels: per_dim.into_iter().enumerate().map(|(d, ls)| (format!("dim{d}"), ls)).collect(),
        })
        .collect();

    let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    for (_, members) in &layout.cells {
        for (a, &u) in members.iter().enumerate() {
            for &v in &members[a + 1..] {
                if rng.random_bool(spec.intra_link_prob) {
                    pairs.insert((u.min(v), u.max(v)));
                }
            }
        }
    }
    let cross = (spec.cross_links_per_object * layout.num_objects as f64).round() as usize;
    let mut attempts = 0;
    let mut added = 0;
    while added < cross && attempts < cross * 20 {
        attempts += 1;
        let u = rng.random_range(0..layout.num_objects);
        let v = rng.random_range(0..layout.num_objects);
        if u == v || cell_of[u].iter().any(|c| cell_of[v].contains(c)) {
            continue;
        }
        if pairs.insert((u.min(v), u.max(v))) {
            added += 1;
        }
    }
    let links = pairs.into_iter().map(|(u, v)| LinkRecord::new(oid(u), oid(v))).collect();

    let schema = DimensionSchema::new(
        (0..spec.dimensions)
            .map(|d| Dimension {
                name: format!("dim{d}"),
                labels: (0..spec.labels_per_dimension).map(|i| label(d, i)).collect(),
            })
            .collect(),
    )?;

    let mut tokens: Vec<String> = (0..spec.dimensions)
        .flat_map(|d| (0..spec.labels_per_dimension).map(move |i| label(d, i)))
        .collect();
    tokens.extend((0..spec.labels_per_dimension.div_ceil(2)).map(|i| group_token(2 * i)));
    let words = tokens
        .into_iter()
        .map(|t| {
            let mut v: Vec<f64> = (0..spec.word_dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            (t, v)
        })
        .collect();
    // First-dimension labels pick up a shared group token so that sibling
    // labels sit closer together.
    let aliases = (0..spec.labels_per_dimension)
        .map(|i| (label(0, i), vec![label(0, i), group_token(i)]))
        .collect();

    let planted = layout
        .planted
        .iter()
        .map(|&c| layout.cells[c].0.iter().enumerate().map(|(d, &li)| label(d, li)).collect())
        .collect();

    Ok(SyntheticDataset {
        schema,
        objects,
        links,
        query: layout.query.into_iter().map(oid).collect(),
        words,
        aliases,
        stopwords: vec!["and".into(), "of".into(), "the".into()],
        planted,
    })
}

#[derive(Serialize)]
struct PlantedFile<'a> {
    planted: &'a [Vec<String>],
}

impl SyntheticDataset {
    pub fn build_cube(&self, min_cell_size: usize) -> Result<DataCube> {
        build_cube(&self.objects, &self.links, self.schema.clone(), min_cell_size)
    }

    pub fn word_table(&self) -> Result<WordTable> {
        let dim = self.words.first().map_or(0, |(_, v)| v.len());
        let mut table = WordTable::new(dim)?;
        for (token, v) in &self.words {
            table.insert(token, v.clone())?;
        }
        Ok(table)
    }

    pub fn cell_embeddings(&self, cube: &DataCube) -> Result<CellEmbeddingTable> {
        let aliases = AliasMap::new(self.aliases.clone())?;
        let stopwords: Stopwords = self.stopwords.iter().cloned().collect();
        build_embedding_table(cube, &self.word_table()?, &aliases, &stopwords)
    }

    /// Writes `objects.jsonl`, `links.tsv`, `query.txt`, `words.txt`,
    /// `aliases.json`, `stopwords.txt`, `schema.json` and `planted.json`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let create = |name: &str| File::create(dir.join(name)).map(BufWriter::new);

        let mut f = create("objects.jsonl")?;
        for o in &self.objects {
            serde_json::to_writer(&mut f, o)?;
            writeln!(f)?;
        }
        f.flush()?;

        let mut f = create("links.tsv")?;
        for l in &self.links {
            writeln!(f, "{}\t{}\t{}", l.source, l.target, l.weight)?;
        }
        f.flush()?;

        let mut f = create("query.txt")?;
        for q in &self.query {
            writeln!(f, "{q}")?;
        }
        f.flush()?;

        let mut f = create("words.txt")?;
        for (t, v) in &self.words {
            write!(f, "{t}")?;
            for x in v {
                write!(f, " {x}")?;
            }
            writeln!(f)?;
        }
        f.flush()?;

        let mut f = create("stopwords.txt")?;
        for w in &self.stopwords {
            writeln!(f, "{w}")?;
        }
        f.flush()?;

        for (name, value) in [
            ("aliases.json", serde_json::to_value(&self.aliases)?),
            ("schema.json", serde_json::to_value(&self.schema)?),
            ("planted.json", serde_json::to_value(PlantedFile { planted: &self.planted })?),
        ] {
            let mut f = create(name)?;
            serde_json::to_writer_pretty(&mut f, &value)?;
            writeln!(f)?;
            f.flush()?;
        }
        Ok(())
    }
}
