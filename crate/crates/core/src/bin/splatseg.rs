use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use splatseg::config::PipelineConfig;
use splatseg::eval::{self, BenchmarkMode};
use splatseg::inference::SimilarityThreshold;
use splatseg::ins2lang::MapperKind;
use splatseg::optim::OptimizerKind;
use splatseg::pipeline::{self, QueryRequest, QuerySource};
use splatseg::Error;

/// Open-vocabulary segmentation of 3D Gaussian scenes.
///
/// Flags override values from `--config`; unset flags fall back to the
/// config file, then to the built-in defaults shown in each help line.
#[derive(Parser, Debug)]
#[command(name = "splatseg", version)]
struct Cli {
    /// TOML config with [scene], [train], [mapper], [inference] and [eval] tables
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads, 0 = one per core
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene with ground truth
    Gen(GenArgs),
    /// Train the instance field
    Train(TrainArgs),
    /// Fit the instance-to-language mapping and materialize the language field
    Map(MapArgs),
    /// Segment the scene for one query embedding
    Query(QueryArgs),
    /// Run the instance / language / collaborative benchmark
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Output scene directory
    #[arg(long)]
    out: PathBuf,
    /// Generator seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Number of objects [default: 8]
    #[arg(long)]
    num_objects: Option<usize>,
    /// Gaussians per object [default: 100]
    #[arg(long)]
    gaussians_per_object: Option<usize>,
    /// Instance feature dimension [default: 16; published: 16]
    #[arg(long)]
    d_i: Option<usize>,
    /// Language embedding dimension [default: 32]
    #[arg(long)]
    d_l: Option<usize>,
    /// Number of views [default: 6]
    #[arg(long)]
    views: Option<usize>,
    /// Square image size in pixels [default: 64]
    #[arg(long)]
    image_size: Option<u32>,
    /// Unlabeled background Gaussians [default: 0]
    #[arg(long)]
    background: Option<usize>,
    /// Per-view segment embedding noise [default: 0]
    #[arg(long)]
    language_noise: Option<f32>,
    /// Replace an existing scene in --out
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Input scene directory
    #[arg(long)]
    scene: PathBuf,
    /// Output scene directory [default: --scene, updated in place]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optimization steps [default: 30000; published: 30000; fast preset: 3000]
    #[arg(long)]
    steps: Option<usize>,
    /// Pixels sampled per segment and step [default: 64]
    #[arg(long)]
    samples_per_segment: Option<usize>,
    /// Learning rate [default: 0.0025]
    #[arg(long)]
    lr: Option<f32>,
    /// Optimizer, adam or sgd [default: adam]
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    /// Initialization and sampling seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct MapArgs {
    /// Input scene directory
    #[arg(long)]
    scene: PathBuf,
    /// Output scene directory [default: --scene, updated in place]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Mapping, kernel or mlp [default: kernel]
    #[arg(long)]
    mapper: Option<MapperKind>,
    /// Kernel bandwidth [default: 0.1; published: 0.1]
    #[arg(long)]
    sigma: Option<f32>,
    /// Minimum covered pixels per training pair [default: 20]
    #[arg(long)]
    min_pixels: Option<usize>,
    /// Kernel pair budget [default: 4096]
    #[arg(long)]
    max_pairs: Option<usize>,
    /// MLP training steps [default: 30000; published: 30000]
    #[arg(long)]
    mlp_steps: Option<usize>,
    /// MLP learning rate [default: 0.001]
    #[arg(long)]
    mlp_lr: Option<f32>,
    /// Subsampling and MLP initialization seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["query_vec", "query_object_id"])))]
struct QueryArgs {
    /// Scene directory with a language field
    #[arg(long)]
    scene: PathBuf,
    /// Query embedding as raw little-endian f32
    #[arg(long, value_name = "FILE")]
    query_vec: Option<PathBuf>,
    /// Vocabulary entry of a synthetic scene
    #[arg(long, value_name = "K")]
    query_object_id: Option<u32>,
    /// Canonical embeddings (k × d_l raw f32) [default: other vocabulary entries + one random vector]
    #[arg(long, value_name = "FILE")]
    canonical: Option<PathBuf>,
    /// Relevance threshold [default: 0.5; published: 0.5]
    #[arg(long)]
    tau: Option<f64>,
    /// Region similarity threshold, a number or `auto` [default: 0.8]
    #[arg(long = "T", value_name = "T")]
    threshold: Option<SimilarityThreshold>,
    /// Seed for the random canonical vector [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Result file
    #[arg(long, default_value = "result.json")]
    out: PathBuf,
    /// Also write the selection as a colored point cloud
    #[arg(long, value_name = "FILE")]
    export_ply: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Scene directory with a language field
    #[arg(long)]
    scene: PathBuf,
    /// JSON list of cases [default: one case per vocabulary object]
    #[arg(long, value_name = "FILE")]
    cases: Option<PathBuf>,
    /// Comma-separated modes [default: instance_only,language_only,collaborative]
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<BenchmarkMode>>,
    /// IoU counted as a hit for mAcc [default: 0.25]
    #[arg(long)]
    acc_threshold: Option<f64>,
    /// Relevance threshold [default: 0.5; published: 0.5]
    #[arg(long)]
    tau: Option<f64>,
    /// Region similarity threshold, a number or `auto` [default: 0.8]
    #[arg(long = "T", value_name = "T")]
    threshold: Option<SimilarityThreshold>,
    /// Skip rendered 2D IoU
    #[arg(long)]
    no_2d: bool,
    /// Seed for canonicals and k-means [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "eval")]
    out: PathBuf,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let in_place = |scene: &Path, out: &Option<PathBuf>| out.clone().unwrap_or_else(|| scene.to_path_buf());

    match cli.command {
        Command::Gen(a) => {
            let s = &mut cfg.scene;
            set(&mut s.seed, a.seed);
            set(&mut s.num_objects, a.num_objects);
            set(&mut s.gaussians_per_object, a.gaussians_per_object);
            set(&mut s.d_i, a.d_i);
            set(&mut s.d_l, a.d_l);
            set(&mut s.num_views, a.views);
            set(&mut s.image_size, a.image_size);
            set(&mut s.background_gaussians, a.background);
            set(&mut s.language_noise, a.language_noise);
            let scene = pipeline::cmd_gen(s, &a.out, a.force)?;
            println!("gen: {} Gaussians, {} views -> {}", scene.len(), scene.views.len(), a.out.display());
        }
        Command::Train(a) => {
            let t = &mut cfg.train;
            set(&mut t.steps, a.steps);
            set(&mut t.samples_per_segment, a.samples_per_segment);
            set(&mut t.learning_rate, a.lr);
            set(&mut t.optimizer, a.optimizer);
            set(&mut t.seed, a.seed);
            let out = in_place(&a.scene, &a.out);
            let s = pipeline::cmd_train(&a.scene, &out, t)?;
            print!("train: {} steps", s.steps_taken);
            if let Some(l) = s.final_moving_average.or(s.final_loss) {
                print!(", final loss {l:.5}");
            }
            if let Some(sep) = s.separation {
                print!(", intra {:.3} inter {:.3}", sep.intra, sep.inter);
            }
            println!(" -> {}", out.display());
        }
        Command::Map(a) => {
            let m = &mut cfg.mapper;
            set(&mut m.kind, a.mapper);
            set(&mut m.sigma, a.sigma);
            set(&mut m.min_pixels, a.min_pixels);
            set(&mut m.max_pairs, a.max_pairs);
            set(&mut m.mlp.steps, a.mlp_steps);
            set(&mut m.mlp.learning_rate, a.mlp_lr);
            set(&mut m.seed, a.seed);
            let out = in_place(&a.scene, &a.out);
            let s = pipeline::cmd_map(&a.scene, &out, m)?;
            print!("map: {} with {} pairs", m.kind.as_str(), s.pairs_used);
            if let Some(f) = &s.fidelity {
                let min = f.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
                print!(", min vocabulary cosine {min:.4}");
            }
            println!(" -> {}", out.display());
        }
        Command::Query(a) => {
            let i = &mut cfg.inference;
            set(&mut i.tau, a.tau);
            set(&mut i.threshold, a.threshold);
            set(&mut i.seed, a.seed);
            let source = match (a.query_object_id, a.query_vec) {
                (Some(k), _) => QuerySource::ObjectId(k),
                (None, Some(p)) => QuerySource::Vector(p),
                (None, None) => unreachable!("clap enforces one query source"),
            };
            let req = QueryRequest {
                source,
                canonical: a.canonical,
                inference: i.clone(),
            };
            let r = pipeline::cmd_query(&a.scene, &req, &a.out, a.export_ply.as_deref())?;
            println!(
                "query: {} Gaussians selected from {} seeds, {} of {} regions accepted, T = {} -> {}",
                r.selected.len(),
                r.seeds.len(),
                r.accepted_regions().count(),
                r.regions.len(),
                r.threshold,
                a.out.display()
            );
        }
        Command::Eval(a) => {
            let e = &mut cfg.eval;
            set(&mut e.modes, a.modes);
            set(&mut e.acc_threshold, a.acc_threshold);
            set(&mut e.seed, a.seed);
            if a.no_2d {
                e.with_2d = false;
            }
            set(&mut cfg.inference.tau, a.tau);
            set(&mut cfg.inference.threshold, a.threshold);
            let reports = pipeline::cmd_eval(&a.scene, a.cases.as_deref(), e, &cfg.inference, &a.out)?;
            print!("{}", eval::render_table(&reports, true));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error kind=usage code=2 msg={first:?}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error kind={} code={} msg={msg:?}", e.kind(), e.exit_code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
