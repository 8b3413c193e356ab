//! End-to-end run driver: ingest, affinities, optimization, persistence.
//!
//! Outputs land in the run's output directory: `embedding.csv` (full
//! double precision, bit-exact round trip), `report.txt` (flat key-value
//! lines, one metric per line), and optionally `embedding.svg`, `trace.csv`,
//! and `edges.csv`. Files are written atomically (temp file, then rename),
//! so a failing run leaves no partial outputs.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::affinity::{build_affinities, AffinityError, AffinityMatrix};
use crate::dal::{adaptive_sigma, coherence_score, ell_loss_grad, DalParams};
use crate::ingest::{
    generate_cyclic_clusters, load_highdim_csv, load_timeseries_csv, sliding_window,
    zscore_dataset, zscore_table, IngestError, ToyConfig,
};
use crate::model::{ConfigError, DaTsneConfig, Dataset, EmbeddingState, TemporalGraph, ValidationError};
use crate::render::{render_svg, RenderOptions};
use crate::tsne::{embedding_span, kl_gradient, optimize, LossTrace, OptimizeError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Data(#[from] ValidationError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed embedding file {path}: {message}")]
    MalformedEmbedding { path: PathBuf, message: String },
}

impl PipelineError {
    /// Machine-parsable error category, also determining the exit code.
    pub fn category(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Ingest(IngestError::Io(_)) => "io",
            PipelineError::Ingest(_) | PipelineError::Data(_) => "input-data",
            PipelineError::Optimize(OptimizeError::Diverged { .. }) => "divergence",
            PipelineError::Optimize(OptimizeError::Config(_)) => "config",
            PipelineError::Optimize(OptimizeError::Affinity(AffinityError::NoConvergence {
                ..
            })) => "input-data",
            PipelineError::Optimize(_) => "input-data",
            PipelineError::Io { .. } => "io",
            PipelineError::MalformedEmbedding { .. } => "input-data",
        }
    }

    /// 1 usage/config, 2 input data, 3 numerical divergence, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 1,
            "input-data" => 2,
            "divergence" => 3,
            _ => 4,
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> PipelineError {
    let context = context.into();
    move |source| PipelineError::Io { context, source }
}

/// Where the points and edges come from.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSpec {
    Toy(ToyConfig),
    TimeseriesCsv {
        path: PathBuf,
        time_column: Option<String>,
        window: usize,
        stride: usize,
        zscore: bool,
    },
    HighdimCsv {
        points: PathBuf,
        edges: PathBuf,
        zscore: bool,
    },
}

/// Everything one run needs: input, hyperparameters, output directory, and
/// render/persistence switches.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: InputSpec,
    pub tsne: DaTsneConfig,
    pub out_dir: PathBuf,
    pub render: RenderOptions,
    pub svg: bool,
    pub save_trace: bool,
    pub save_edges: bool,
}

/// Metrics evaluated on the final embedding (KL at exaggeration 1, the
/// coherence score at the adaptive scale, the length loss, arrow length
/// statistics). Components are always evaluated here even when their weight
/// is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportMetrics {
    pub kl: f64,
    pub dcl: f64,
    pub ell: f64,
    /// `kl + lambda_dcl * dcl + lambda_ell * ell`.
    pub total: f64,
    pub coherence_score: f64,
    pub mean_arrow_length: f64,
    pub median_arrow_length: f64,
    pub max_arrow_length: f64,
    pub embedding_span: f64,
    pub sigma: f64,
    pub iterations: usize,
    pub n_points: usize,
    pub n_edges: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub metrics: ReportMetrics,
    pub config: DaTsneConfig,
    pub wall_clock_seconds: f64,
}

pub fn compute_report_metrics(
    state: &EmbeddingState,
    graph: &TemporalGraph,
    params: &DalParams,
    p: &AffinityMatrix,
) -> ReportMetrics {
    let coords = &state.coords;
    let (kl, _) = kl_gradient(p, coords, 1.0);
    let (sigma, _) = adaptive_sigma(coords, params.sigma_fraction);
    let dcl = coherence_score(coords, graph, sigma);
    let (ell, _) = ell_loss_grad(coords, graph, params.alpha, params.epsilon_len);

    let mut lengths: Vec<f64> = graph
        .edges()
        .iter()
        .map(|e| {
            let dx = coords[e.target][0] - coords[e.source][0];
            let dy = coords[e.target][1] - coords[e.source][1];
            (dx * dx + dy * dy).sqrt()
        })
        .collect();
    lengths.sort_by(|a, b| a.total_cmp(b));
    let (mean, median, max) = if lengths.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        let mean = lengths.iter().sum::<f64>() / lengths.len() as f64;
        let median = if lengths.len() % 2 == 1 {
            lengths[lengths.len() / 2]
        } else {
            (lengths[lengths.len() / 2 - 1] + lengths[lengths.len() / 2]) / 2.0
        };
        (mean, median, lengths[lengths.len() - 1])
    };

    ReportMetrics {
        kl,
        dcl,
        ell,
        total: kl + params.lambda_dcl * dcl + params.lambda_ell * ell,
        coherence_score: dcl,
        mean_arrow_length: mean,
        median_arrow_length: median,
        max_arrow_length: max,
        embedding_span: embedding_span(coords),
        sigma,
        iterations: state.iteration,
        n_points: coords.len(),
        n_edges: graph.n_edges(),
    }
}

impl RunReport {
    /// Flat key-value text, one metric per line. Floats use the shortest
    /// representation that parses back to the same value.
    pub fn to_text(&self) -> String {
        let m = &self.metrics;
        let mut out = String::new();
        let _ = writeln!(out, "kl = {}", m.kl);
        let _ = writeln!(out, "dcl = {}", m.dcl);
        let _ = writeln!(out, "ell = {}", m.ell);
        let _ = writeln!(out, "total = {}", m.total);
        let _ = writeln!(out, "coherence_score = {}", m.coherence_score);
        let _ = writeln!(out, "mean_arrow_length = {}", m.mean_arrow_length);
        let _ = writeln!(out, "median_arrow_length = {}", m.median_arrow_length);
        let _ = writeln!(out, "max_arrow_length = {}", m.max_arrow_length);
        let _ = writeln!(out, "embedding_span = {}", m.embedding_span);
        let _ = writeln!(out, "sigma = {}", m.sigma);
        let _ = writeln!(out, "iterations = {}", m.iterations);
        let _ = writeln!(out, "n_points = {}", m.n_points);
        let _ = writeln!(out, "n_edges = {}", m.n_edges);
        let _ = writeln!(out, "wall_clock_seconds = {}", self.wall_clock_seconds);
        let c = &self.config;
        let _ = writeln!(out, "config.perplexity = {}", c.perplexity);
        let _ = writeln!(out, "config.lambda_dcl = {}", c.lambda_dcl);
        let _ = writeln!(out, "config.lambda_ell = {}", c.lambda_ell);
        let _ = writeln!(out, "config.alpha = {}", c.alpha);
        let _ = writeln!(out, "config.sigma_fraction = {}", c.sigma_fraction);
        let _ = writeln!(out, "config.total_iterations = {}", c.total_iterations);
        let _ = writeln!(out, "config.exaggeration_factor = {}", c.exaggeration_factor);
        let _ = writeln!(
            out,
            "config.exaggeration_iterations = {}",
            c.exaggeration_iterations
        );
        let _ = writeln!(out, "config.seed = {}", c.seed);
        let _ = writeln!(
            out,
            "config.learning_rate_override = {}",
            c.learning_rate_override
                .map_or_else(|| "none".to_string(), |v| v.to_string())
        );
        out
    }
}

/// Reconstructs the hyperparameters from a report's `config.*` lines.
pub fn parse_report_config(text: &str) -> Result<DaTsneConfig, String> {
    let mut config = DaTsneConfig::default();
    let mut seen = 0;
    for line in text.lines() {
        let Some((key, value)) = line.split_once(" = ") else {
            continue;
        };
        let Some(field) = key.strip_prefix("config.") else {
            continue;
        };
        seen += 1;
        let parse_f64 = || value.parse::<f64>().map_err(|e| format!("{key}: {e}"));
        match field {
            "perplexity" => config.perplexity = parse_f64()?,
            "lambda_dcl" => config.lambda_dcl = parse_f64()?,
            "lambda_ell" => config.lambda_ell = parse_f64()?,
            "alpha" => config.alpha = parse_f64()?,
            "sigma_fraction" => config.sigma_fraction = parse_f64()?,
            "total_iterations" => {
                config.total_iterations = value.parse().map_err(|e| format!("{key}: {e}"))?;
            }
            "exaggeration_factor" => config.exaggeration_factor = parse_f64()?,
            "exaggeration_iterations" => {
                config.exaggeration_iterations =
                    value.parse().map_err(|e| format!("{key}: {e}"))?;
            }
            "seed" => config.seed = value.parse().map_err(|e| format!("{key}: {e}"))?,
            "learning_rate_override" => {
                config.learning_rate_override = if value == "none" {
                    None
                } else {
                    Some(parse_f64()?)
                };
            }
            other => return Err(format!("unknown config key {other}")),
        }
    }
    if seen < 10 {
        return Err(format!("expected 10 config lines, found {seen}"));
    }
    Ok(config)
}

fn atomic_write(path: &Path, contents: &str) -> Result<(), PipelineError> {
    let tmp = path.with_extension("tmp");
    let mut file = fs::File::create(&tmp).map_err(io_err(format!("create {}", tmp.display())))?;
    file.write_all(contents.as_bytes())
        .map_err(io_err(format!("write {}", tmp.display())))?;
    file.sync_all()
        .map_err(io_err(format!("sync {}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(io_err(format!("rename to {}", path.display())))?;
    Ok(())
}

/// Writes the embedding as CSV with header `index,x,y,label,timestamp`.
/// Coordinates are printed with 17 significant digits, so reading the file
/// back reproduces them bit-exactly. Missing labels/timestamps are empty
/// fields.
pub fn write_embedding_csv(
    state: &EmbeddingState,
    data: &Dataset,
    path: &Path,
) -> Result<(), PipelineError> {
    let mut out = String::from("index,x,y,label,timestamp\n");
    for (i, p) in state.coords.iter().enumerate() {
        let label = data.labels().map_or("", |l| l[i].as_str());
        let ts = data
            .timestamps()
            .map_or(String::new(), |t| t[i].to_string());
        let _ = writeln!(out, "{i},{:.16e},{:.16e},{label},{ts}", p[0], p[1]);
    }
    atomic_write(path, &out)
}

/// Reads an embedding written by [`write_embedding_csv`].
pub fn read_embedding_csv(
    path: &Path,
) -> Result<(Vec<[f64; 2]>, Option<Vec<String>>, Option<Vec<i64>>), PipelineError> {
    let malformed = |message: String| PipelineError::MalformedEmbedding {
        path: path.to_path_buf(),
        message,
    };
    let text = fs::read_to_string(path).map_err(io_err(format!("read {}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("index,x,y,label,timestamp") => {}
        other => {
            return Err(malformed(format!("unexpected header {other:?}")));
        }
    }
    let mut coords = Vec::new();
    let mut labels = Vec::new();
    let mut timestamps = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(malformed(format!("line {}: expected 5 fields", i + 2)));
        }
        let x: f64 = fields[1]
            .parse()
            .map_err(|e| malformed(format!("line {}: x: {e}", i + 2)))?;
        let y: f64 = fields[2]
            .parse()
            .map_err(|e| malformed(format!("line {}: y: {e}", i + 2)))?;
        coords.push([x, y]);
        labels.push(fields[3].to_string());
        timestamps.push(fields[4].to_string());
    }
    let labels = if labels.iter().all(String::is_empty) {
        None
    } else {
        Some(labels)
    };
    let timestamps = if timestamps.iter().all(String::is_empty) {
        None
    } else {
        Some(
            timestamps
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    t.parse()
                        .map_err(|e| malformed(format!("line {}: timestamp: {e}", i + 2)))
                })
                .collect::<Result<Vec<i64>, _>>()?,
        )
    };
    Ok((coords, labels, timestamps))
}

fn trace_csv(trace: &LossTrace) -> String {
    let mut out = String::from("iteration,kl,dcl,ell,total,span\n");
    for r in &trace.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.iteration, r.kl, r.dcl, r.ell, r.total, r.span
        );
    }
    out
}

fn edges_csv(graph: &TemporalGraph) -> String {
    let mut out = String::new();
    for e in graph.edges() {
        let _ = writeln!(out, "{},{}", e.source, e.target);
    }
    out
}

/// Paths written by a pipeline run, plus the report itself.
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub embedding_path: PathBuf,
    pub report_path: PathBuf,
    pub svg_path: Option<PathBuf>,
    pub trace_path: Option<PathBuf>,
    pub edges_path: Option<PathBuf>,
    pub report: RunReport,
}

/// Loads the configured input source.
pub fn load_input(input: &InputSpec) -> Result<(Dataset, TemporalGraph), PipelineError> {
    match input {
        InputSpec::Toy(config) => Ok(generate_cyclic_clusters(config)?),
        InputSpec::TimeseriesCsv {
            path,
            time_column,
            window,
            stride,
            zscore,
        } => {
            let mut table = load_timeseries_csv(path, time_column.as_deref())?;
            if *zscore {
                table = zscore_table(&table);
            }
            Ok(sliding_window(&table, *window, *stride)?)
        }
        InputSpec::HighdimCsv {
            points,
            edges,
            zscore,
        } => {
            let (mut data, graph) = load_highdim_csv(points, edges)?;
            if *zscore {
                data = zscore_dataset(&data);
            }
            Ok((data, graph))
        }
    }
}

/// Runs the full pipeline: ingest, affinities, optimization, then writes the
/// embedding CSV, the report, and any requested extras.
pub fn run_pipeline(config: &RunConfig) -> Result<RunOutputs, PipelineError> {
    let started = Instant::now();
    let (data, graph) = load_input(&config.input)?;
    config.tsne.validate(data.n_points())?;

    let (state, trace) = optimize(&data, &graph, &config.tsne)?;

    let params = DalParams::from_config(&config.tsne);
    let p = build_affinities(&data, config.tsne.perplexity).map_err(OptimizeError::from)?;
    let metrics = compute_report_metrics(&state, &graph, &params, &p);
    let report = RunReport {
        metrics,
        config: config.tsne.clone(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };

    fs::create_dir_all(&config.out_dir)
        .map_err(io_err(format!("create {}", config.out_dir.display())))?;
    let embedding_path = config.out_dir.join("embedding.csv");
    write_embedding_csv(&state, &data, &embedding_path)?;
    let report_path = config.out_dir.join("report.txt");
    atomic_write(&report_path, &report.to_text())?;

    let svg_path = if config.svg {
        let path = config.out_dir.join("embedding.svg");
        let svg = render_svg(
            &state.coords,
            &graph,
            data.labels(),
            data.timestamps(),
            &config.render,
        );
        atomic_write(&path, &svg)?;
        Some(path)
    } else {
        None
    };
    let trace_path = if config.save_trace {
        let path = config.out_dir.join("trace.csv");
        atomic_write(&path, &trace_csv(&trace))?;
        Some(path)
    } else {
        None
    };
    let edges_path = if config.save_edges {
        let path = config.out_dir.join("edges.csv");
        atomic_write(&path, &edges_csv(&graph))?;
        Some(path)
    } else {
        None
    };

    Ok(RunOutputs {
        embedding_path,
        report_path,
        svg_path,
        trace_path,
        edges_path,
        report,
    })
}
