//! End-to-end run: ingest, build the cube, select, materialize and report.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{cube_greedy, cube_random, exhaustive_oracle, max_disc_lite, no_cube_family, SelectionResult};
use crate::cube::{
    build_cube, read_links, read_objects, read_query, write_network, CellSummary, ConstructedNetwork, DataCube, DimensionSchema, QuerySet,
    DEFAULT_MIN_CELL_SIZE,
};
use crate::embedding::{build_embedding_table, load_word_table, read_stopwords, AliasMap, CellEmbeddingTable, Stopwords};
use crate::error::{Error, Result};
use crate::policy::Checkpoint;
use crate::relevance::EvalCounter;
use crate::trainer::{plan, train, TrainConfig, TrainOutput};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Nocube,
    Nocube1,
    Nocube2,
    Maxdisc,
    Random,
    Greedy,
    Oracle,
    #[default]
    Cube2net,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Nocube,
        Method::Nocube1,
        Method::Nocube2,
        Method::Maxdisc,
        Method::Random,
        Method::Greedy,
        Method::Oracle,
        Method::Cube2net,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Nocube => "nocube",
            Method::Nocube1 => "nocube1",
            Method::Nocube2 => "nocube2",
            Method::Maxdisc => "maxdisc",
            Method::Random => "random",
            Method::Greedy => "greedy",
            Method::Oracle => "oracle",
            Method::Cube2net => "cube2net",
        }
    }

    pub fn needs_embeddings(self) -> bool {
        self == Method::Cube2net
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Input(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub objects: PathBuf,
    pub links: PathBuf,
    pub query: PathBuf,
    pub words: Option<PathBuf>,
    /// Word-vector width; read from the first line of the table when absent.
    pub word_dim: Option<usize>,
    pub aliases: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    /// JSON dimension schema; inferred from the objects when absent.
    pub schema: Option<PathBuf>,
    pub method: Method,
    /// Number of cells to select. Also the trajectory length of cube2net.
    pub m: usize,
    pub min_cell_size: usize,
    pub seed: u64,
    /// Node budget of maxdisc; twice the query size when absent.
    pub maxdisc_budget: Option<usize>,
    /// Policy training settings. `horizon` and `seed` are overridden by
    /// `m` and `seed`.
    pub train: TrainConfig,
    #[serde(skip)]
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            objects: PathBuf::new(),
            links: PathBuf::new(),
            query: PathBuf::new(),
            words: None,
            word_dim: None,
            aliases: None,
            stopwords: None,
            schema: None,
            method: Method::default(),
            m: 20,
            min_cell_size: DEFAULT_MIN_CELL_SIZE,
            seed: 0,
            maxdisc_budget: None,
            train: TrainConfig::default(),
            output: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Training settings with the run-level `m` and `seed` applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            horizon: self.m,
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let required = [("objects", &self.objects), ("links", &self.links), ("query", &self.query)];
        for (name, path) in required {
            if !path.is_file() {
                return Err(Error::Input(format!("{name} file {} does not exist", path.display())));
            }
        }
        let optional = [
            ("words", &self.words),
            ("aliases", &self.aliases),
            ("stopwords", &self.stopwords),
            ("schema", &self.schema),
        ];
        for (name, path) in optional {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(Error::Input(format!("{name} file {} does not exist", p.display())));
                }
            }
        }
        let uses_m = matches!(self.method, Method::Random | Method::Greedy | Method::Oracle | Method::Cube2net);
        if uses_m && self.m == 0 {
            return Err(Error::Input("m must be positive".into()));
        }
        if self.method.needs_embeddings() {
            if self.words.is_none() {
                return Err(Error::Input("cube2net needs a word table".into()));
            }
            self.train_config().validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub construction_secs: f64,
    pub training_secs: Option<f64>,
    pub total_secs: f64,
}

/// Summary of one run. Wall-clock times are kept out of the serialized form
/// so that identical runs give identical bytes; they go to `timings.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: Method,
    pub seed: u64,
    pub quality: f64,
    pub nodes: usize,
    pub edges: usize,
    pub selected_cells: usize,
    pub quality_evaluations: u64,
    pub config: RunConfig,
    #[serde(skip)]
    pub timings: Option<Timings>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

fn first_line_width(path: &Path) -> Result<usize> {
    use std::io::BufRead;
    let line = open(path)?
        .lines()
        .find(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .transpose()?
        .ok_or_else(|| Error::Input(format!("word table {} is empty", path.display())))?;
    Ok(line.split_whitespace().count().saturating_sub(1))
}

/// Loads the word table and builds cell embeddings for `cube`.
pub fn load_embeddings(cube: &DataCube, config: &RunConfig) -> Result<CellEmbeddingTable> {
    let words_path = config
        .words
        .as_ref()
        .ok_or_else(|| Error::Input("no word table given".into()))?;
    let dim = match config.word_dim {
        Some(d) => d,
        None => first_line_width(words_path)?,
    };
    let words = load_word_table(open(words_path)?, dim)?;
    let aliases = match &config.aliases {
        Some(p) => AliasMap::from_json(open(p)?)?,
        None => AliasMap::default(),
    };
    let stopwords = match &config.stopwords {
        Some(p) => read_stopwords(open(p)?)?,
        None => Stopwords::new(),
    };
    build_embedding_table(cube, &words, &aliases, &stopwords)
}

/// Ingests the objects and links named in `config` and builds the cube.
pub fn load_cube(config: &RunConfig) -> Result<DataCube> {
    let objects = read_objects(open(&config.objects)?)?;
    let links = read_links(open(&config.links)?)?;
    let schema = match &config.schema {
        Some(p) => serde_json::from_reader::<_, DimensionSchema>(open(p)?)?,
        None => DimensionSchema::infer(&objects)?,
    };
    build_cube(&objects, &links, schema, config.min_cell_size)
}

/// Runs the configured method on a built cube.
pub fn execute_method(
    cube: &DataCube,
    embeddings: Option<&CellEmbeddingTable>,
    query: &QuerySet,
    config: &RunConfig,
) -> Result<(SelectionResult, Option<TrainOutput>)> {
    let result = match config.method {
        Method::Nocube => no_cube_family(cube, query, 0),
        Method::Nocube1 => no_cube_family(cube, query, 1),
        Method::Nocube2 => no_cube_family(cube, query, 2),
        Method::Maxdisc => max_disc_lite(cube, query, config.maxdisc_budget.unwrap_or(2 * query.len())),
        Method::Random => cube_random(cube, query, config.m, &mut ChaCha8Rng::seed_from_u64(config.seed))?,
        Method::Greedy => cube_greedy(cube, query, config.m, &mut EvalCounter::new())?,
        Method::Oracle => exhaustive_oracle(cube, query, config.m, &mut EvalCounter::new())?,
        Method::Cube2net => {
            let embeddings = embeddings.ok_or_else(|| Error::Input("cube2net needs cell embeddings".into()))?;
            let start = Instant::now();
            let tc = config.train_config();
            let out = train(cube, embeddings, query, &tc)?;
            let p = plan(&out.params, cube, embeddings, query, tc.horizon, Some(&out.report))?;
            let members = crate::cube::union_members(cube, p.cells.iter().copied())?;
            let mut nodes = members;
            nodes.extend(query.ids().iter().copied());
            let result = SelectionResult {
                selected: p.cells,
                nodes: nodes.into_iter().collect(),
                quality: p.quality,
                quality_evaluations: out.report.quality_evaluations,
                wall_time_secs: start.elapsed().as_secs_f64(),
            };
            return Ok((result, Some(out)));
        }
    };
    Ok((result, None))
}

#[derive(Serialize)]
struct CellsFile<'a> {
    method: Method,
    cells: &'a [CellSummary],
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

/// Runs the whole pipeline and writes `nodes.tsv`, `edges.tsv`, `cells.json`,
/// `metrics.json` and `timings.json` to `config.output`. Cube2net runs also
/// write `train_report.json` and `policy.json`.
pub fn run_pipeline(config: &RunConfig) -> Result<MetricsReport> {
    config.validate()?;
    let start = Instant::now();
    let cube = load_cube(config)?;
    let query_ids = read_query(open(&config.query)?)?;
    let query = cube.resolve_query(&query_ids)?;
    let embeddings = if config.method.needs_embeddings() {
        Some(load_embeddings(&cube, config)?)
    } else {
        None
    };
    log::info!(
        "cube: {} objects, {} cells, query {} objects, method {}",
        cube.num_objects(),
        cube.num_cells(),
        query.len(),
        config.method
    );

    let (result, trained) = execute_method(&cube, embeddings.as_ref(), &query, config)?;
    let nodes = result.nodes.iter().copied().collect();
    let net = ConstructedNetwork::induced(&cube, &nodes);

    fs::create_dir_all(&config.output)?;
    let out = &config.output;
    {
        let mut n = BufWriter::new(File::create(out.join("nodes.tsv"))?);
        let mut e = BufWriter::new(File::create(out.join("edges.tsv"))?);
        write_network(&cube, &net, &mut n, &mut e)?;
        n.flush()?;
        e.flush()?;
    }
    let cells: Vec<CellSummary> = result
        .selected
        .iter()
        .map(|&id| {
            cube.cell(id).map(|c| CellSummary {
                id,
                label_tuple: c.label_tuple.clone(),
                size: c.members.len(),
            })
        })
        .collect::<Result<_>>()?;
    write_json(&out.join("cells.json"), &CellsFile { method: config.method, cells: &cells })?;

    let training_secs = trained.as_ref().map(|t| t.report.wall_time_secs);
    if let Some(t) = &trained {
        write_json(&out.join("train_report.json"), &t.report)?;
        let ckpt = Checkpoint::new(t.params.clone(), config.seed);
        ckpt.write(BufWriter::new(File::create(out.join("policy.json"))?))?;
    }

    let timings = Timings {
        construction_secs: result.wall_time_secs,
        training_secs,
        total_secs: start.elapsed().as_secs_f64(),
    };
    write_json(&out.join("timings.json"), &timings)?;

    let report = MetricsReport {
        method: config.method,
        seed: config.seed,
        quality: result.quality,
        nodes: net.nodes.len(),
        edges: net.edges.len(),
        selected_cells: result.selected.len(),
        quality_evaluations: result.quality_evaluations,
        config: config.clone(),
        timings: Some(timings),
    };
    write_json(&out.join("metrics.json"), &report)?;
    log::info!(
        "q = {:.4}, {} nodes, {} edges, {} quality evaluations",
        report.quality,
        report.nodes,
        report.edges,
        report.quality_evaluations
    );
    Ok(report)
}
