use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use cubenet::cube::{build_cube, read_links, read_objects, DimensionSchema, DEFAULT_MIN_CELL_SIZE};
use cubenet::harness::{
    clustering_metrics, generate_synthetic, read_partition, run_pipeline, Method, MetricsReport, RunConfig,
    SyntheticSpec, Variant,
};

#[derive(Parser)]
#[command(name = "cubenet", version, about = "Query-driven network construction over a data cube")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted cells.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON generator settings; unspecified fields take defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Use the greedy-trap layout.
        #[arg(long)]
        trap: bool,
    },
    /// Build the cube and print its manifest as JSON.
    BuildCube {
        #[arg(long)]
        objects: PathBuf,
        #[arg(long)]
        links: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MIN_CELL_SIZE)]
        min_cell_size: usize,
        /// Write the manifest here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Select cells and write the constructed network.
    Construct(Box<ConstructArgs>),
    /// Score a predicted partition against a reference one.
    Eval {
        #[arg(long)]
        predicted: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Tabulate metrics.json files as tab-separated rows.
    Report {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct ConstructArgs {
    /// JSON run configuration; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    objects: Option<PathBuf>,
    #[arg(long)]
    links: Option<PathBuf>,
    #[arg(long)]
    query: Option<PathBuf>,
    #[arg(long)]
    words: Option<PathBuf>,
    #[arg(long)]
    word_dim: Option<usize>,
    #[arg(long)]
    aliases: Option<PathBuf>,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    min_cell_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    maxdisc_budget: Option<usize>,
    #[arg(long)]
    alpha: Option<usize>,
    #[arg(long)]
    beta: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    clip_epsilon: Option<f64>,
    #[arg(long)]
    sgd_epochs: Option<usize>,
    #[arg(long)]
    minibatch_size: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl ConstructArgs {
    fn into_config(self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => {
                let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
                serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parsing {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field { $target = v; })*
            };
        }
        set!(
            objects => c.objects,
            links => c.links,
            query => c.query,
            method => c.method,
            m => c.m,
            min_cell_size => c.min_cell_size,
            seed => c.seed,
            alpha => c.train.alpha,
            beta => c.train.beta,
            gamma => c.train.gamma,
            clip_epsilon => c.train.clip_epsilon,
            sgd_epochs => c.train.sgd_epochs,
            minibatch_size => c.train.minibatch_size,
            hidden => c.train.hidden,
            lr => c.train.adam.lr,
        );
        c.words = self.words.or(c.words);
        c.word_dim = self.word_dim.or(c.word_dim);
        c.aliases = self.aliases.or(c.aliases);
        c.stopwords = self.stopwords.or(c.stopwords);
        c.schema = self.schema.or(c.schema);
        c.maxdisc_budget = self.maxdisc_budget.or(c.maxdisc_budget);
        c.output = self.out;
        Ok(c)
    }
}

fn open(path: &PathBuf) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { out, seed, spec, trap } => {
            let mut spec: SyntheticSpec = match spec {
                Some(p) => serde_json::from_reader(open(&p)?)?,
                None if trap => SyntheticSpec::greedy_trap(),
                None => SyntheticSpec::default(),
            };
            if trap {
                spec.variant = Variant::GreedyTrap;
            }
            let ds = generate_synthetic(&spec, seed)?;
            ds.write_to(&out)?;
            log::info!(
                "wrote {} objects, {} links, {} query objects to {}",
                ds.objects.len(),
                ds.links.len(),
                ds.query.len(),
                out.display()
            );
        }
        Command::BuildCube {
            objects,
            links,
            schema,
            min_cell_size,
            out,
        } => {
            let objects = read_objects(open(&objects)?)?;
            let links = read_links(open(&links)?)?;
            let schema = match schema {
                Some(p) => serde_json::from_reader(open(&p)?)?,
                None => DimensionSchema::infer(&objects)?,
            };
            let cube = build_cube(&objects, &links, schema, min_cell_size)?;
            let manifest = cube.manifest();
            match out {
                Some(p) => {
                    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                        fs::create_dir_all(dir)?;
                    }
                    let mut w = BufWriter::new(File::create(&p)?);
                    serde_json::to_writer_pretty(&mut w, &manifest)?;
                    writeln!(w)?;
                    w.flush()?;
                }
                None => println!("{}", serde_json::to_string_pretty(&manifest)?),
            }
        }
        Command::Construct(args) => {
            let config = args.into_config()?;
            run_pipeline(&config)?;
        }
        Command::Eval { predicted, truth } => {
            let p = read_partition(open(&predicted)?)?;
            let t = read_partition(open(&truth)?)?;
            println!("{}", serde_json::to_string_pretty(&clustering_metrics(&p, &t)?)?);
        }
        Command::Report { metrics } => {
            println!("file\tmethod\tseed\tquality\tnodes\tedges\tselected_cells\tquality_evaluations");
            for path in metrics {
                let r: MetricsReport = serde_json::from_reader(open(&path)?)
                    .with_context(|| format!("parsing {}", path.display()))?;
                println!(
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    path.display(),
                    r.method,
                    r.seed,
                    r.quality,
                    r.nodes,
                    r.edges,
                    r.selected_cells,
                    r.quality_evaluations
                );
            }
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
