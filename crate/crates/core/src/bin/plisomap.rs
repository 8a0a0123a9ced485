use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use plisomap::dataset::{self, Generator, PointCloud};
use plisomap::error::{Error, Result};
use plisomap::eval::{self, BenchConfig, Method};
use plisomap::mapper::{self, EmbedOptions};
use plisomap::{baseline, cover, graph, rigidity, SCHEMA_VERSION};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

/// Path-based Isomap: embed large manifold samples from a few geodesic paths.
#[derive(Debug, Parser)]
#[command(name = "plisomap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a synthetic manifold to CSV, with an intrinsic-coordinate sidecar.
    Generate {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the path-based pipeline and write the embedding and its reports.
    Embed {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Perturb duplicate samples instead of rejecting them.
        #[arg(long)]
        jitter: bool,
        /// Skip compensation paths when the network is not rigid.
        #[arg(long)]
        no_compensate: bool,
        /// Embedding CSV; reports go next to it as `<stem>.report.json` and
        /// `<stem>.rigidity.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Classical Isomap on all pairwise geodesics.
    BaselineIsomap {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rigidity report of the SSPC line network.
    Rigidity {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Add compensation paths until the network is rigid.
        #[arg(long)]
        compensate: bool,
        /// Report file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit `P = alpha N^gamma` and the covering rate over a size sweep.
    FitScaling {
        #[arg(long)]
        dataset: String,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        /// Seeds per size, `0..seeds`.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 8)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Log-log runtime slopes of several methods on one dataset.
    Benchmark {
        #[arg(long, value_delimiter = ',', default_value = "embed,isomap")]
        methods: Vec<String>,
        #[arg(long, default_value = "swiss-roll")]
        dataset: String,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Where the point cloud comes from: a CSV, an IDX archive or a generator.
#[derive(Debug, Args)]
struct InputArgs {
    /// Point cloud CSV with a header row.
    #[arg(long, conflicts_with_all = ["idx", "dataset"])]
    input: Option<PathBuf>,
    /// IDX image archive (MNIST layout).
    #[arg(long, conflicts_with = "dataset")]
    idx: Option<PathBuf>,
    /// IDX label archive matching `--idx`.
    #[arg(long, requires = "idx")]
    labels: Option<PathBuf>,
    /// Keep only samples with this label.
    #[arg(long, requires = "labels")]
    digit: Option<u8>,
    /// Keep the first this many samples.
    #[arg(long)]
    limit: Option<usize>,
    /// Generate the cloud instead of reading one.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long, requires = "dataset")]
    n: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Project onto this many principal components first.
    #[arg(long)]
    pca: Option<usize>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Neighbours per sample.
    #[arg(long, default_value_t = 8)]
    k: usize,
    /// Target dimension.
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl InputArgs {
    fn load(&self, seed: u64) -> Result<PointCloud> {
        let mut cloud = if let Some(path) = &self.input {
            dataset::load_csv(path)?
        } else if let Some(images) = &self.idx {
            let mut c = dataset::load_idx(images, self.labels.as_deref())?;
            if let Some(d) = self.digit {
                c = c.filter_label(d)?;
            }
            c
        } else if let Some(name) = &self.dataset {
            let n = self
                .n
                .ok_or_else(|| Error::InvalidArgument("--dataset needs --n".into()))?;
            Generator::parse(name)?.generate(n, self.noise, seed)?
        } else {
            return Err(Error::InvalidArgument(
                "one of --input, --idx or --dataset is required".into(),
            ));
        };
        if let Some(limit) = self.limit {
            if limit < cloud.len() {
                let rows: Vec<usize> = (0..limit).collect();
                cloud = cloud.select(&rows)?;
            }
        }
        if let Some(dims) = self.pca {
            cloud = baseline::pca(&cloud, dims)?;
        }
        Ok(cloud)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("plisomap: {msg}");
        return ExitCode::from(EXIT_USAGE);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("plisomap: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(raw) = std::env::var("PLISOMAP_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("PLISOMAP_THREADS must be a non-negative integer, got '{raw}'"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::DimensionMismatch(_) => EXIT_USAGE,
        e if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate {
            dataset,
            n,
            noise,
            seed,
            out,
        } => {
            let cloud = Generator::parse(&dataset)?.generate(n, noise, seed)?;
            dataset::save_csv(&cloud, &out)
        }
        Command::Embed {
            input,
            model,
            jitter,
            no_compensate,
            out,
        } => {
            let cloud = input.load(model.seed)?;
            let mut opts = EmbedOptions::new(model.k, model.dim, model.seed);
            opts.jitter = jitter.then_some(model.seed);
            opts.compensate = !no_compensate;
            let pipeline = mapper::run(&cloud, &opts)?;
            dataset::write_matrix_csv(&out, &pipeline.embedding.coords, "y")?;
            write_json(Some(&sibling(&out, "report.json")), &pipeline.report)?;
            write_json(Some(&sibling(&out, "rigidity.json")), &pipeline.rigidity)?;
            log::info!(
                "embedded {} samples from {} paths",
                pipeline.embedding.len(),
                pipeline.report.paths
            );
            Ok(())
        }
        Command::BaselineIsomap { input, model, out } => {
            let cloud = input.load(model.seed)?;
            let start = std::time::Instant::now();
            let emb = baseline::isomap(&cloud, model.k, model.dim)?;
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            dataset::write_matrix_csv(&out, &emb.coords, "y")?;
            let mut kept = vec![false; cloud.len()];
            for &s in &emb.samples {
                kept[s] = true;
            }
            let dropped: Vec<usize> = (0..cloud.len()).filter(|&i| !kept[i]).collect();
            let report = json!({
                "schema_version": SCHEMA_VERSION,
                "method": "isomap",
                "n": cloud.len(),
                "k": model.k,
                "K": model.dim,
                "dropped": dropped,
                "wall_ms": wall_ms,
            });
            write_json(Some(&sibling(&out, "report.json")), &report)
        }
        Command::Rigidity {
            input,
            model,
            compensate,
            out,
        } => {
            let cloud = input.load(model.seed)?;
            let full = graph::build_knn_graph(&cloud, model.k)?;
            let keep = full.largest_component();
            let g = if keep.len() == full.n_nodes() {
                full
            } else {
                full.subgraph(&keep)
            };
            let paths = cover::sspc(&g, model.seed)?;
            let report = if compensate {
                rigidity::ensure_rigidity(&paths, &g, model.dim, model.seed)?.1
            } else {
                rigidity::assess(&paths, model.dim)
            };
            write_json(out.as_deref(), &report)
        }
        Command::FitScaling {
            dataset,
            sizes,
            seeds,
            noise,
            k,
            out,
        } => {
            let generator = Generator::parse(&dataset)?;
            write_json(
                out.as_deref(),
                &fit_scaling(generator, &sizes, seeds, noise, k)?,
            )
        }
        Command::Benchmark {
            methods,
            dataset,
            sizes,
            noise,
            repeats,
            model,
            out,
        } => {
            let methods = methods
                .iter()
                .map(|m| Method::parse(m))
                .collect::<Result<Vec<_>>>()?;
            let cfg = BenchConfig {
                dataset: Generator::parse(&dataset)?,
                sizes,
                noise,
                k: model.k,
                dim: model.dim,
                seed: model.seed,
                repeats,
            };
            let reports = methods
                .iter()
                .map(|&m| eval::runtime_benchmark(m, &cfg))
                .collect::<Result<Vec<_>>>()?;
            let flattest = reports
                .iter()
                .min_by(|a, b| a.loglog_slope.total_cmp(&b.loglog_slope))
                .map(|r| r.method.clone());
            let slopes: serde_json::Map<String, serde_json::Value> = reports
                .iter()
                .map(|r| (r.method.clone(), json!(r.loglog_slope)))
                .collect();
            let doc = json!({
                "schema_version": SCHEMA_VERSION,
                "reports": reports,
                "slope_comparison": { "slopes": slopes, "flattest": flattest },
            });
            write_json(out.as_deref(), &doc)
        }
    }
}

#[derive(Debug, Serialize)]
struct ScalingReport {
    schema_version: u32,
    dataset: String,
    k: usize,
    /// One `(N, seed, P)` triple per covering run.
    runs: Vec<(usize, u64, usize)>,
    alpha: f64,
    gamma: f64,
    r_squared: f64,
    /// Median covering rate per size.
    lambda_by_size: Vec<(usize, Option<f64>)>,
    /// Median covering rate at the largest size.
    lambda: Option<f64>,
    estimated_dim: Option<usize>,
}

fn fit_scaling(
    generator: Generator,
    sizes: &[usize],
    seeds: u64,
    noise: f64,
    k: usize,
) -> Result<ScalingReport> {
    if seeds == 0 {
        return Err(Error::InvalidArgument("--seeds must be at least 1".into()));
    }
    let mut runs = Vec::new();
    let mut lambda_by_size = Vec::new();
    for &n in sizes {
        let mut lambdas = Vec::new();
        for seed in 0..seeds {
            let cloud = generator.generate(n, noise, seed)?;
            let full = graph::build_knn_graph(&cloud, k)?;
            let keep = full.largest_component();
            let g = if keep.len() == full.n_nodes() {
                full
            } else {
                full.subgraph(&keep)
            };
            let paths = cover::sspc(&g, seed)?;
            runs.push((n, seed, paths.n_paths()));
            if let Ok(fit) = cover::fit_decay(&paths.decay_series()) {
                lambdas.push(fit.lambda);
            }
        }
        lambda_by_size.push((n, median(&mut lambdas)));
    }
    let samples: Vec<(usize, usize)> = runs.iter().map(|&(n, _, p)| (n, p)).collect();
    let fit = cover::fit_power_law(&samples)?;
    let lambda = lambda_by_size
        .iter()
        .max_by_key(|(n, _)| *n)
        .and_then(|(_, l)| *l);
    let estimated_dim = lambda.map(cover::estimate_dimensionality).transpose()?;
    Ok(ScalingReport {
        schema_version: SCHEMA_VERSION,
        dataset: generator.name().into(),
        k,
        runs,
        alpha: fit.alpha,
        gamma: fit.gamma,
        r_squared: fit.r_squared,
        lambda_by_size,
        lambda,
        estimated_dim,
    })
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(v[v.len() / 2])
}

/// `dir/emb.csv` -> `dir/emb.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
