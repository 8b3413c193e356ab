//! Command-line interface for direction-aware t-SNE.
//!
//! Four verbs: `toy` (synthetic cyclic-cluster benchmark), `window`
//! (sliding-window vectorization of a time-series CSV), `embed`
//! (pre-computed vectors plus an edge list), and `render` (re-render a
//! persisted embedding as SVG). Hyperparameters come from built-in defaults,
//! overridden by an optional TOML config file, overridden by flags.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 input data error,
//! 3 numerical divergence, 4 I/O error.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use datsne::ingest::ToyConfig;
use datsne::model::{DaTsneConfig, TemporalGraph};
use datsne::pipeline::{read_embedding_csv, run_pipeline, InputSpec, PipelineError, RunConfig};
use datsne::render::{render_svg, ColorBy, RenderOptions};

#[derive(Parser)]
#[command(
    name = "datsne",
    version,
    about = "Direction-aware t-SNE: 2-D embeddings of temporal data with legible arrows"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and embed the synthetic cyclic-cluster benchmark.
    Toy {
        #[command(flatten)]
        common: CommonOpts,
        /// Number of mutually equidistant clusters.
        #[arg(long, default_value_t = 7)]
        clusters: usize,
        #[arg(long, default_value_t = 50)]
        points_per_cluster: usize,
        /// Dimensionality of the generated points (at least clusters - 1).
        #[arg(long, default_value_t = 10)]
        ambient_dim: usize,
        /// Distance between cluster centers (cluster noise is unit Gaussian).
        #[arg(long, default_value_t = 30.0)]
        cluster_distance: f64,
    },
    /// Vectorize a time-series CSV with a sliding window and embed it.
    Window {
        #[command(flatten)]
        common: CommonOpts,
        /// Time-series CSV with a header row.
        #[arg(long)]
        input: PathBuf,
        /// Name of the non-numeric time column, if any.
        #[arg(long)]
        time_column: Option<String>,
        /// Window length in time steps.
        #[arg(long, default_value_t = 7)]
        window: usize,
        /// Steps between consecutive window starts.
        #[arg(long, default_value_t = 1)]
        stride: usize,
        /// Z-score each variable before windowing.
        #[arg(long)]
        zscore: bool,
    },
    /// Embed pre-computed high-dimensional vectors with an edge list.
    Embed {
        #[command(flatten)]
        common: CommonOpts,
        /// Points CSV: one row per point, no header.
        #[arg(long)]
        points: PathBuf,
        /// Edges CSV: two 0-based indices per row, no header.
        #[arg(long)]
        edges: PathBuf,
        /// Z-score each feature column.
        #[arg(long)]
        zscore: bool,
    },
    /// Re-render a persisted embedding as SVG.
    Render {
        /// Embedding CSV written by a previous run.
        #[arg(long)]
        embedding: PathBuf,
        /// Edges CSV (two 0-based indices per row; runs persist one with
        /// --save-edges).
        #[arg(long)]
        edges: PathBuf,
        /// Output SVG path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3.0)]
        point_radius: f64,
        #[arg(long, default_value_t = 6.0)]
        arrow_head: f64,
        #[arg(long, value_enum, default_value_t = ColorByArg::Timestamp)]
        color_by: ColorByArg,
    },
}

#[derive(Args)]
struct CommonOpts {
    /// Directory for embedding.csv, report.txt, and optional extras.
    #[arg(long)]
    out_dir: PathBuf,
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    perplexity: Option<f64>,
    /// Directional coherence weight.
    #[arg(long)]
    lambda_dcl: Option<f64>,
    /// Edge length weight.
    #[arg(long)]
    lambda_ell: Option<f64>,
    /// Edge length exponent.
    #[arg(long)]
    alpha: Option<f64>,
    /// Coherence kernel scale as a fraction of the embedding span.
    #[arg(long)]
    sigma_fraction: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Early exaggeration factor.
    #[arg(long)]
    exaggeration: Option<f64>,
    /// Length of the early exaggeration phase.
    #[arg(long)]
    exaggeration_iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override the default learning rate of n_points / exaggeration.
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Also write embedding.svg.
    #[arg(long)]
    svg: bool,
    /// Also write the per-iteration loss trace to trace.csv.
    #[arg(long)]
    trace: bool,
    /// Also write the edge list to edges.csv (for later `render`).
    #[arg(long)]
    save_edges: bool,
    #[arg(long)]
    point_radius: Option<f64>,
    #[arg(long)]
    arrow_head: Option<f64>,
    #[arg(long, value_enum)]
    color_by: Option<ColorByArg>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ColorByArg {
    Timestamp,
    Label,
    None,
}

impl From<ColorByArg> for ColorBy {
    fn from(value: ColorByArg) -> Self {
        match value {
            ColorByArg::Timestamp => ColorBy::Timestamp,
            ColorByArg::Label => ColorBy::Label,
            ColorByArg::None => ColorBy::None,
        }
    }
}

/// Optional TOML config file; every key optional, unknown keys rejected.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    perplexity: Option<f64>,
    lambda_dcl: Option<f64>,
    lambda_ell: Option<f64>,
    alpha: Option<f64>,
    sigma_fraction: Option<f64>,
    iterations: Option<usize>,
    exaggeration: Option<f64>,
    exaggeration_iters: Option<usize>,
    seed: Option<u64>,
    learning_rate: Option<f64>,
    svg: Option<bool>,
    trace: Option<bool>,
    save_edges: Option<bool>,
    point_radius: Option<f64>,
    arrow_head: Option<f64>,
    color_by: Option<String>,
}

struct CliError {
    category: &'static str,
    code: i32,
    message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            category: "config",
            code: 1,
            message: message.into(),
        }
    }

    fn input_data(message: impl Into<String>) -> Self {
        Self {
            category: "input-data",
            code: 2,
            message: message.into(),
        }
    }

    fn io(message: impl Into<String>) -> Self {
        Self {
            category: "io",
            code: 4,
            message: message.into(),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(err: PipelineError) -> Self {
        Self {
            category: err.category(),
            code: err.exit_code(),
            message: err.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // help/version requests are not errors
            if err.use_stderr() {
                eprint!("{err}");
                return ExitCode::from(1);
            }
            print!("{err}");
            return ExitCode::SUCCESS;
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!(
                "error: {}: {}",
                err.category,
                err.message.replace('\n', " ")
            );
            ExitCode::from(err.code as u8)
        }
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Toy {
            common,
            clusters,
            points_per_cluster,
            ambient_dim,
            cluster_distance,
        } => {
            let settings = Settings::resolve(&common)?;
            let input = InputSpec::Toy(ToyConfig {
                n_clusters: clusters,
                points_per_cluster,
                ambient_dim,
                cluster_distance,
                seed: settings.tsne.seed,
            });
            run(settings, input, common.out_dir)
        }
        Command::Window {
            common,
            input,
            time_column,
            window,
            stride,
            zscore,
        } => {
            let settings = Settings::resolve(&common)?;
            let input = InputSpec::TimeseriesCsv {
                path: input,
                time_column,
                window,
                stride,
                zscore,
            };
            run(settings, input, common.out_dir)
        }
        Command::Embed {
            common,
            points,
            edges,
            zscore,
        } => {
            let settings = Settings::resolve(&common)?;
            let input = InputSpec::HighdimCsv {
                points,
                edges,
                zscore,
            };
            run(settings, input, common.out_dir)
        }
        Command::Render {
            embedding,
            edges,
            out,
            point_radius,
            arrow_head,
            color_by,
        } => render_persisted(
            embedding,
            edges,
            out,
            point_radius,
            arrow_head,
            color_by.into(),
        ),
    }
}

struct Settings {
    tsne: DaTsneConfig,
    render: RenderOptions,
    svg: bool,
    trace: bool,
    save_edges: bool,
}

impl Settings {
    /// Defaults, overridden by the config file, overridden by flags.
    fn resolve(common: &CommonOpts) -> Result<Self, CliError> {
        let file = match &common.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::io(format!("read {}: {e}", path.display())))?;
                toml::from_str::<FileConfig>(&text)
                    .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };

        let defaults = DaTsneConfig::default();
        let tsne = DaTsneConfig {
            perplexity: common
                .perplexity
                .or(file.perplexity)
                .unwrap_or(defaults.perplexity),
            lambda_dcl: common
                .lambda_dcl
                .or(file.lambda_dcl)
                .unwrap_or(defaults.lambda_dcl),
            lambda_ell: common
                .lambda_ell
                .or(file.lambda_ell)
                .unwrap_or(defaults.lambda_ell),
            alpha: common.alpha.or(file.alpha).unwrap_or(defaults.alpha),
            sigma_fraction: common
                .sigma_fraction
                .or(file.sigma_fraction)
                .unwrap_or(defaults.sigma_fraction),
            total_iterations: common
                .iterations
                .or(file.iterations)
                .unwrap_or(defaults.total_iterations),
            exaggeration_factor: common
                .exaggeration
                .or(file.exaggeration)
                .unwrap_or(defaults.exaggeration_factor),
            exaggeration_iterations: common
                .exaggeration_iters
                .or(file.exaggeration_iters)
                .unwrap_or(defaults.exaggeration_iterations),
            seed: common.seed.or(file.seed).unwrap_or(defaults.seed),
            learning_rate_override: common.learning_rate.or(file.learning_rate),
        };

        let file_color = match file.color_by.as_deref() {
            None => None,
            Some("timestamp") => Some(ColorBy::Timestamp),
            Some("label") => Some(ColorBy::Label),
            Some("none") => Some(ColorBy::None),
            Some(other) => {
                return Err(CliError::config(format!(
                    "color_by must be timestamp|label|none, got {other}"
                )));
            }
        };
        let render_defaults = RenderOptions::default();
        let render = RenderOptions {
            point_radius: common
                .point_radius
                .or(file.point_radius)
                .unwrap_or(render_defaults.point_radius),
            arrow_head_size: common
                .arrow_head
                .or(file.arrow_head)
                .unwrap_or(render_defaults.arrow_head_size),
            color_by: common
                .color_by
                .map(ColorBy::from)
                .or(file_color)
                .unwrap_or(render_defaults.color_by),
        };

        Ok(Self {
            tsne,
            render,
            svg: common.svg || file.svg.unwrap_or(false),
            trace: common.trace || file.trace.unwrap_or(false),
            save_edges: common.save_edges || file.save_edges.unwrap_or(false),
        })
    }
}

fn run(settings: Settings, input: InputSpec, out_dir: PathBuf) -> Result<(), CliError> {
    let config = RunConfig {
        input,
        tsne: settings.tsne,
        out_dir,
        render: settings.render,
        svg: settings.svg,
        save_trace: settings.trace,
        save_edges: settings.save_edges,
    };
    let outputs = run_pipeline(&config)?;
    println!("embedding: {}", outputs.embedding_path.display());
    println!("report: {}", outputs.report_path.display());
    if let Some(p) = &outputs.svg_path {
        println!("svg: {}", p.display());
    }
    if let Some(p) = &outputs.trace_path {
        println!("trace: {}", p.display());
    }
    if let Some(p) = &outputs.edges_path {
        println!("edges: {}", p.display());
    }
    let m = &outputs.report.metrics;
    println!(
        "kl {:.6}  coherence {:.6}  mean arrow {:.4}  ({} points, {} edges, {:.1}s)",
        m.kl,
        m.coherence_score,
        m.mean_arrow_length,
        m.n_points,
        m.n_edges,
        outputs.report.wall_clock_seconds
    );
    Ok(())
}

fn render_persisted(
    embedding: PathBuf,
    edges: PathBuf,
    out: PathBuf,
    point_radius: f64,
    arrow_head: f64,
    color_by: ColorBy,
) -> Result<(), CliError> {
    let (coords, labels, timestamps) = read_embedding_csv(&embedding)?;
    let pairs = read_edge_pairs(&edges)?;
    let graph = TemporalGraph::from_pairs(&pairs, coords.len())
        .map_err(|e| CliError::input_data(e.to_string()))?;
    let options = RenderOptions {
        point_radius,
        arrow_head_size: arrow_head,
        color_by,
    };
    let svg = render_svg(
        &coords,
        &graph,
        labels.as_deref(),
        timestamps.as_deref(),
        &options,
    );
    fs::write(&out, svg).map_err(|e| CliError::io(format!("write {}: {e}", out.display())))?;
    println!("svg: {}", out.display());
    Ok(())
}

fn read_edge_pairs(path: &PathBuf) -> Result<Vec<(usize, usize)>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("read {}: {e}", path.display())))?;
    let bad = |line: usize| {
        CliError::input_data(format!(
            "{}: line {line}: expected two integers",
            path.display()
        ))
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let (s, t) = l.split_once(',').ok_or_else(|| bad(i + 1))?;
            Ok((
                s.trim().parse().map_err(|_| bad(i + 1))?,
                t.trim().parse().map_err(|_| bad(i + 1))?,
            ))
        })
        .collect()
}
