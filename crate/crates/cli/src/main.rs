use std::collections::BTreeMap;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use obscura_core::annforest::{ForestParams, DEFAULT_SEARCH_K};
use obscura_core::corpus::{
    build_corpus, index_corpus, CorpusConfig, CorpusIndex, DatasetManifest, DatasetTag, EmbeddingSource,
    INDEX_FILE, MANIFEST_FILE,
};
use obscura_core::evalkit::{self, TrialConfig, TrialSeed};
use obscura_core::features::{load_external_embeddings, DescriptorConfig};
use obscura_core::filtertree::{apply_filter, random_filter_library, FilterNode};
use obscura_core::imagegen::{
    random_coordinate_trees, random_genome, render_coordinate_image, render_particle_image, Background, CanvasSpec,
    Grammar, LineTransform,
};
use obscura_core::seeds;
use obscura_core::RasterImage;
use rand::seq::SliceRandom;

#[derive(Parser)]
#[command(name = "obscura", version, about = "Generate, index and search abstract image corpora")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a single generated image.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Filter-tree libraries.
    #[command(subcommand)]
    Filter(FilterCommand),
    /// Build every dataset in a corpus config and index the result.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Rebuild or query a corpus index.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Run the HTTP retrieval service.
    Serve(ServeArgs),
    /// Evaluation trials, reports and pilot summaries.
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Subcommand)]
enum GenCommand {
    /// Particle-system image from a random genome.
    Particle {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 256)]
        width: u32,
        #[arg(long, default_value_t = 256)]
        height: u32,
        #[arg(long, default_value_t = 1000)]
        particles: u32,
        #[arg(long, default_value_t = 100)]
        timesteps: u32,
        #[arg(long, default_value_t = 1)]
        blur: u32,
        /// identity, diamond, grid[:n], kaleidoscope[:n], necklace[:n], oval[:f], polar, tron
        #[arg(long, default_value = "identity")]
        transform: LineTransform,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-pixel image from three coordinate trees.
    Coord {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 256)]
        size: u32,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum FilterCommand {
    /// Write a random library, one s-expression per line.
    Build {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 5)]
        max_depth: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply one filter expression to an image.
    Apply {
        #[arg(long)]
        filter: FilterNode,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum CorpusCommand {
    Build {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ForestArgs {
    #[arg(long, default_value_t = 50)]
    trees: usize,
    #[arg(long, default_value_t = 16)]
    leaf_size: usize,
    #[arg(long, default_value_t = 0)]
    forest_seed: u64,
}

#[derive(Subcommand)]
enum IndexCommand {
    /// Re-embed a corpus directory's manifest and rewrite its index.
    Build {
        #[arg(long)]
        corpus: PathBuf,
        /// `<id> <f1> ... <fD>` rows to use instead of the built-in descriptor.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[command(flatten)]
        forest: ForestArgs,
    },
    /// Nearest neighbours of an image file or an indexed id.
    Query {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, conflicts_with = "id", required_unless_present = "id")]
        image: Option<PathBuf>,
        #[arg(long)]
        id: Option<String>,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_SEARCH_K)]
        search_k: usize,
    },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long)]
    boards_dir: PathBuf,
    /// Image paths in the manifest resolve here; defaults to the manifest's directory.
    #[arg(long)]
    corpus_root: Option<PathBuf>,
    /// Static front-end files served at `/`.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SEARCH_K)]
    search_k: usize,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Generate retrieved-vs-random trials as CSV.
    Trials {
        #[arg(long)]
        corpus: PathBuf,
        /// Seed images drawn at random from each listed dataset.
        #[arg(long, default_value_t = 32)]
        per_dataset: usize,
        /// Comma-separated tags; every dataset in the corpus when omitted.
        #[arg(long, value_delimiter = ',')]
        datasets: Vec<String>,
        /// File of seed ids, one per line, optionally followed by a target dataset.
        #[arg(long)]
        seeds: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        controls_per_100: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Answer trials with the machine-proxy judge (not human data).
    Proxy {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy table from trials and responses.
    Report {
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        responses: PathBuf,
    },
    /// Yield table from pilot-session logs.
    Pilot {
        #[arg(long)]
        logs: PathBuf,
    },
}

fn main() -> Result<()> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    match Cli::parse().command {
        Command::Gen(c) => gen(c),
        Command::Filter(c) => filter(c),
        Command::Corpus(CorpusCommand::Build { config, out }) => {
            let cfg = CorpusConfig::load(&config).with_context(|| format!("reading {}", config.display()))?;
            let dir = config.parent().unwrap_or(Path::new("."));
            let (m, f) = build_corpus(&cfg, dir, &out)?;
            for (tag, n) in m.counts() {
                println!("{tag}\t{n}");
            }
            println!("indexed {} images, {} trees, dimension {}", f.len(), f.n_trees(), f.dim());
            Ok(())
        }
        Command::Index(c) => index(c),
        Command::Serve(a) => serve(a),
        Command::Eval(c) => eval(c),
    }
}

fn gen(c: GenCommand) -> Result<()> {
    match c {
        GenCommand::Particle {
            seed,
            width,
            height,
            particles,
            timesteps,
            blur,
            transform,
            out,
        } => {
            let genome = random_genome(seed, &Grammar::default())?;
            let canvas = CanvasSpec {
                width,
                height,
                particle_count: particles,
                timesteps,
                blur_radius: blur,
                background: Background::RandomMonotone,
            };
            render_particle_image(&genome, &canvas, &transform)?.save_png(&out)?;
            std::fs::write(out.with_extension("genome"), format!("# transform {transform}\n{genome}"))?;
        }
        GenCommand::Coord { seed, size, out } => {
            let [r, g, b] = random_coordinate_trees(seed, &Grammar::with_max_depth(4))?;
            render_coordinate_image(&r, &g, &b, size, size)?.save_png(&out)?;
            std::fs::write(out.with_extension("trees"), format!("{r}\n{g}\n{b}\n"))?;
        }
    }
    Ok(())
}

fn filter(c: FilterCommand) -> Result<()> {
    match c {
        FilterCommand::Build {
            seed,
            count,
            max_depth,
            out,
        } => {
            let lib = random_filter_library(seed, count, max_depth)?;
            std::fs::write(&out, lib.to_sidecar())?;
            println!("wrote {} filters to {}", lib.len(), out.display());
        }
        FilterCommand::Apply { filter, input, out } => {
            let img = RasterImage::open(&input)?;
            apply_filter(&filter, &img)?.save_png(&out)?;
        }
    }
    Ok(())
}

fn forest_params(a: &ForestArgs) -> ForestParams {
    ForestParams {
        n_trees: a.trees,
        leaf_size: a.leaf_size,
        seed: a.forest_seed,
    }
}

fn index(c: IndexCommand) -> Result<()> {
    match c {
        IndexCommand::Build {
            corpus,
            embeddings,
            forest,
        } => {
            let mut m = DatasetManifest::load(&corpus.join(MANIFEST_FILE))?;
            let params = forest_params(&forest);
            let f = match embeddings {
                Some(path) => {
                    let emb = load_external_embeddings(&path)?;
                    index_corpus(&corpus, &mut m, EmbeddingSource::External(&emb), &params)?
                }
                None => {
                    let cfg: DescriptorConfig = m.descriptor;
                    index_corpus(&corpus, &mut m, EmbeddingSource::Descriptor(cfg), &params)?
                }
            };
            println!("indexed {} images into {}", f.len(), corpus.join(INDEX_FILE).display());
        }
        IndexCommand::Query {
            corpus,
            image,
            id,
            k,
            search_k,
        } => {
            let ix = CorpusIndex::open(&corpus)?;
            let (q, exclude) = match (image, id) {
                (Some(path), _) => (ix.embed(&RasterImage::open(&path)?)?, None),
                (None, Some(id)) => {
                    let v = ix.stored_vector(&id).with_context(|| format!("unknown image `{id}`"))?;
                    (v.to_vec(), Some(id))
                }
                (None, None) => unreachable!("clap requires --image or --id"),
            };
            let hits = ix.query_where(&q, k, search_k, |r| Some(&r.id) != exclude.as_ref())?;
            for (r, h) in hits {
                println!("{}\t{}\t{}\t{:.6}", h.rank, r.id, r.tag, h.distance);
            }
        }
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let root = match &a.corpus_root {
        Some(r) => r.clone(),
        None => a.manifest.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let index = match CorpusIndex::open_files(&root, &a.manifest, &a.index) {
        Ok(ix) => Some(ix),
        Err(e) => {
            tracing::error!(error = %e, "index unavailable; searches will return 503");
            None
        }
    };
    let engine = obscura_service::Engine::new(index, &a.boards_dir)?.with_search_k(a.search_k);
    let opts = obscura_service::ServeOptions {
        addr: SocketAddr::new(a.host, a.port),
        ui_dir: a.ui_dir,
    };
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(obscura_service::serve(engine, opts))?;
    Ok(())
}

fn read_seed_file(path: &Path, ix: &CorpusIndex) -> Result<Vec<TrialSeed>> {
    let text = std::fs::read_to_string(path)?;
    let mut seeds = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(id) = parts.next() else { continue };
        let record = ix.record(id).with_context(|| format!("{}:{}: unknown image `{id}`", path.display(), n + 1))?;
        let target = match parts.next() {
            Some(t) => t.parse()?,
            None => record.tag,
        };
        seeds.push(TrialSeed {
            id: id.to_string(),
            target,
        });
    }
    Ok(seeds)
}

fn sample_seeds(ix: &CorpusIndex, datasets: &[String], per_dataset: usize, seed: u64) -> Result<Vec<TrialSeed>> {
    let mut by_tag: BTreeMap<DatasetTag, Vec<&str>> = BTreeMap::new();
    for r in &ix.manifest().records {
        by_tag.entry(r.tag).or_default().push(&r.id);
    }
    let tags: Vec<DatasetTag> = if datasets.is_empty() {
        by_tag.keys().copied().collect()
    } else {
        datasets.iter().map(|d| d.parse()).collect::<Result<_, _>>()?
    };
    let mut out = Vec::new();
    for (i, &tag) in tags.iter().enumerate() {
        let ids = by_tag.get(&tag).map(Vec::as_slice).unwrap_or_default();
        if ids.len() < per_dataset {
            bail!("dataset {tag} has {} images, fewer than --per-dataset {per_dataset}", ids.len());
        }
        let mut rng = seeds::rng_for(seed, (i as u64 + 1) << 32);
        out.extend(ids.choose_multiple(&mut rng, per_dataset).map(|id| TrialSeed {
            id: id.to_string(),
            target: tag,
        }));
    }
    Ok(out)
}

fn eval(c: EvalCommand) -> Result<()> {
    match c {
        EvalCommand::Trials {
            corpus,
            per_dataset,
            datasets,
            seeds,
            seed,
            controls_per_100,
            out,
        } => {
            let ix = CorpusIndex::open(&corpus)?;
            let chosen = match seeds {
                Some(path) => read_seed_file(&path, &ix)?,
                None => sample_seeds(&ix, &datasets, per_dataset, seed)?,
            };
            let cfg = TrialConfig {
                rng_seed: seed,
                controls_per_100,
                search_k: DEFAULT_SEARCH_K,
            };
            let trials = evalkit::generate_trials(&ix, &chosen, &cfg)?;
            std::fs::write(&out, evalkit::trials_to_csv(&trials)?)?;
            let controls = trials.iter().filter(|t| t.is_control).count();
            println!("wrote {} trials ({controls} controls) to {}", trials.len(), out.display());
        }
        EvalCommand::Proxy { corpus, trials, out } => {
            let ix = CorpusIndex::open(&corpus)?;
            let trials = evalkit::load_trials(&trials)?;
            let responses = evalkit::machine_proxy_responses(&ix, &trials, &evalkit::PROXY_JUDGE)?;
            std::fs::write(&out, evalkit::responses_to_csv(&responses)?)?;
            println!(
                "wrote {} machine-proxy responses (participant `{}`, not human judgements) to {}",
                responses.len(),
                evalkit::PROXY_PARTICIPANT,
                out.display()
            );
        }
        EvalCommand::Report { trials, responses } => {
            let trials = evalkit::load_trials(&trials)?;
            let responses = evalkit::load_responses(&responses)?;
            if responses.iter().any(|r| r.participant_id == evalkit::PROXY_PARTICIPANT) {
                println!("note: responses include machine-proxy judgements, not human raters");
            }
            print!("{}", evalkit::accuracy_report(&trials, &responses)?);
        }
        EvalCommand::Pilot { logs } => {
            let logs = evalkit::load_session_logs(&logs)?;
            print!("{}", evalkit::pilot_summary(&logs)?);
        }
    }
    Ok(())
}
