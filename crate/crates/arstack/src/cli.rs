//! Command-line orchestration: wires the pipeline stages end to end and
//! writes rasters, masks, detection CSVs, score reports, and ROC tables.
//!
//! All outputs land under `--out-dir` and are written atomically (temp file
//! plus rename). Repeated runs with the same configuration and inputs
//! produce byte-identical files regardless of thread count.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::detect::{self, DetectParams, Detection, ThresholdSpec};
use crate::error::{Error, Result};
use crate::estimate::{difference_image, estimate_ground, GroundEstimate};
use crate::metrics::{self, ScoreInput, ScoreReport};
use crate::stack::{self, ImageStack};
use crate::synth::{self, SynthSpecFile};

/// Environment variable consulted for the worker count when `--threads` is
/// not given.
pub const THREADS_ENV: &str = "ARSTACK_THREADS";

const HISTOGRAM_BINS: usize = 256;
const HISTOGRAM_SPAN_SIGMAS: f64 = 8.0;

/// Which pipeline stage to run.
#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    /// Write the forecast and coefficient-magnitude rasters.
    Estimate,
    /// Write per-layer masks and the detection CSV (optionally histograms).
    Detect { emit_histogram: bool },
    /// Score detections against ground truth, or re-score a rows fixture.
    Score { rows_csv: Option<PathBuf> },
    /// Sweep the detection constant and write the ROC table.
    Sweep,
    /// Generate a synthetic stack, manifest, and truth CSV.
    Synth { spec_path: PathBuf },
}

/// Fully resolved run configuration. Defaults mirror the reference
/// processing setup: first-order model, one-step forecast, detection
/// constants {4.5, 5, 5.5, 6, 6.5}, 3x3 opening, 10 px match radius.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub stack_manifest: Option<PathBuf>,
    pub truth_path: Option<PathBuf>,
    pub p: usize,
    pub h: usize,
    pub c_values: Vec<f64>,
    pub se_radius: usize,
    pub min_cluster_size: usize,
    pub match_radius_px: f64,
    pub two_sided: bool,
    pub pooled_stats: bool,
    pub threads: usize,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn detect_params(&self) -> DetectParams {
        DetectParams {
            se_radius: self.se_radius,
            min_cluster_size: self.min_cluster_size,
            two_sided: self.two_sided,
            pooled_stats: self.pooled_stats,
        }
    }

    /// The single detection constant used by `detect` and `score` (the first
    /// sweep value).
    pub fn single_c(&self) -> f64 {
        self.c_values[0]
    }
}

pub fn default_c_values() -> Vec<f64> {
    vec![4.5, 5.0, 5.5, 6.0, 6.5]
}

/// Runs the configured command inside a thread pool of `config.threads`
/// workers. Artifacts land under `config.out_dir`.
pub fn run(config: &RunConfig) -> Result<()> {
    validate(config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build thread pool: {e}")))?;
    pool.install(|| dispatch(config))
}

fn validate(config: &RunConfig) -> Result<()> {
    if config.c_values.is_empty() {
        return Err(Error::InvalidArgument("at least one detection constant is required".into()));
    }
    if config.c_values.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(
            "detection constants must be strictly ascending".into(),
        ));
    }
    if config.threads == 0 {
        return Err(Error::InvalidArgument("thread count must be at least 1".into()));
    }
    Ok(())
}

fn dispatch(config: &RunConfig) -> Result<()> {
    match &config.command {
        Command::Estimate => run_estimate(config),
        Command::Detect { emit_histogram } => run_detect(config, *emit_histogram),
        Command::Score { rows_csv } => run_score(config, rows_csv.as_deref()),
        Command::Sweep => run_sweep(config),
        Command::Synth { spec_path } => run_synth(config, spec_path),
    }
}

fn require_stack(config: &RunConfig) -> Result<ImageStack> {
    let path = config
        .stack_manifest
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("--stack manifest is required".into()))?;
    stack::load_stack(path)
}

fn require_truth(config: &RunConfig) -> Result<Vec<metrics::GroundTruth>> {
    let path = config
        .truth_path
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("--truth CSV is required".into()))?;
    metrics::read_truth_csv(path)
}

fn run_estimate(config: &RunConfig) -> Result<()> {
    let stack = require_stack(config)?;
    let ground = estimate_ground(&stack, config.p, config.h)?;
    write_estimate(&config.out_dir, &stack, &ground)
}

fn write_estimate(out_dir: &Path, stack: &ImageStack, ground: &GroundEstimate) -> Result<()> {
    stack::write_raster_raw(&out_dir.join("forecast.raw"), ground.forecast())?;
    stack::write_raster_raw(&out_dir.join("coef.raw"), ground.coef_magnitude())?;
    let meta = serde_json::json!({
        "width": stack.width(),
        "height": stack.height(),
        "pixel_area_m2": stack.layer(0).pixel_area_m2(),
        "order": ground.order(),
        "layers": stack.labels(),
    });
    let mut bytes = serde_json::to_vec_pretty(&meta).expect("static JSON shape");
    bytes.push(b'\n');
    stack::atomic_write(&out_dir.join("estimate.json"), &bytes)
}

struct LayerOutcome {
    label: String,
    spec: ThresholdSpec,
    detections: Vec<Detection>,
}

/// Threshold/open/cluster every layer at the single detection constant,
/// optionally writing masks and histograms as it goes.
fn detect_layers(
    config: &RunConfig,
    stack: &ImageStack,
    ground: &GroundEstimate,
    write_artifacts: bool,
    emit_histogram: bool,
) -> Result<Vec<LayerOutcome>> {
    let c = config.single_c();
    let params = config.detect_params();
    let pooled = if params.pooled_stats {
        let (mu, sigma) = detect::pooled_stats(stack, ground)?;
        Some(ThresholdSpec::from_stats(mu, sigma, c)?)
    } else {
        None
    };
    let mut outcomes = Vec::with_capacity(stack.len());
    for (layer, label) in stack.layers().iter().zip(stack.labels()) {
        let diff = difference_image(layer, ground)?;
        let spec = match &pooled {
            Some(spec) => spec.clone(),
            None => detect::make_threshold(&diff, c)?,
        };
        let raw = if params.two_sided {
            detect::threshold_two_sided(&diff, &spec)
        } else {
            detect::threshold(&diff, &spec)
        };
        let opened = detect::morph_open(&raw, params.se_radius);
        let detections = detect::cluster(&opened, &diff, params.min_cluster_size)?;
        if write_artifacts {
            let samples: Vec<u8> =
                opened.bits().iter().map(|b| if *b { 255 } else { 0 }).collect();
            stack::write_pgm_bytes(
                &config.out_dir.join(format!("mask_{label}.pgm")),
                opened.width(),
                opened.height(),
                &samples,
            )?;
        }
        if emit_histogram {
            write_histogram(
                &config.out_dir.join(format!("histogram_{label}.csv")),
                &diff,
                &spec,
            )?;
        }
        outcomes.push(LayerOutcome { label: label.clone(), spec, detections });
    }
    Ok(outcomes)
}

fn run_detect(config: &RunConfig, emit_histogram: bool) -> Result<()> {
    let stack = require_stack(config)?;
    let ground = estimate_ground(&stack, config.p, config.h)?;
    let outcomes = detect_layers(config, &stack, &ground, true, emit_histogram)?;
    write_detections_csv(&config.out_dir.join("detections.csv"), &outcomes)?;
    write_thresholds_csv(&config.out_dir.join("thresholds.csv"), &outcomes)
}

fn run_score(config: &RunConfig, rows_csv: Option<&Path>) -> Result<()> {
    let report = match rows_csv {
        Some(path) => metrics::score(&read_rows_csv(path)?)?,
        None => {
            let stack = require_stack(config)?;
            let truths = require_truth(config)?;
            let ground = estimate_ground(&stack, config.p, config.h)?;
            metrics::score_stack(
                &stack,
                &ground,
                &truths,
                config.single_c(),
                &config.detect_params(),
                config.match_radius_px,
            )?
        }
    };
    write_report(&config.out_dir, &report)?;
    print!("{}", report.render_table());
    Ok(())
}

fn run_sweep(config: &RunConfig) -> Result<()> {
    let stack = require_stack(config)?;
    let truths = require_truth(config)?;
    let ground = estimate_ground(&stack, config.p, config.h)?;
    let curve = metrics::roc_sweep(
        &stack,
        &ground,
        &truths,
        &config.c_values,
        &config.detect_params(),
        config.match_radius_px,
    )?;
    let mut out = String::from("c,far_per_km2,pd\n");
    for p in &curve.points {
        writeln!(out, "{},{:.4},{:.4}", p.c, p.far_per_km2, p.pd).expect("string write");
    }
    stack::atomic_write(&config.out_dir.join("roc.csv"), out.as_bytes())
}

fn run_synth(config: &RunConfig, spec_path: &Path) -> Result<()> {
    let file_spec = SynthSpecFile::read(spec_path)?;
    let base = spec_path.parent().unwrap_or_else(|| Path::new("."));
    let spec = file_spec.resolve(base)?;
    let (stack, truths) = synth::generate(&spec)?;
    let mut entries = Vec::with_capacity(stack.len());
    for (layer, label) in stack.layers().iter().zip(stack.labels()) {
        let name = format!("{label}.raw");
        stack::write_raster_raw(&config.out_dir.join(&name), layer)?;
        entries.push(stack::ManifestLayer {
            path: name,
            label: label.clone(),
            width: layer.width(),
            height: layer.height(),
        });
    }
    let manifest = stack::Manifest {
        pixel_area_m2: stack.layer(0).pixel_area_m2(),
        layers: entries,
    };
    manifest.write(&config.out_dir.join("manifest.json"))?;
    metrics::write_truth_csv(&config.out_dir.join("truth.csv"), &truths)
}

fn write_detections_csv(path: &Path, outcomes: &[LayerOutcome]) -> Result<()> {
    let mut out = String::from("layer_label,centroid_x,centroid_y,pixel_count,peak_value\n");
    for outcome in outcomes {
        for d in &outcome.detections {
            writeln!(
                out,
                "{},{:.4},{:.4},{},{:.6}",
                outcome.label, d.centroid_x, d.centroid_y, d.pixel_count, d.peak_value
            )
            .expect("string write");
        }
    }
    stack::atomic_write(path, out.as_bytes())
}

fn write_thresholds_csv(path: &Path, outcomes: &[LayerOutcome]) -> Result<()> {
    let mut out = String::from("layer_label,c,mu_hat,sigma_hat,lambda\n");
    for outcome in outcomes {
        let s = &outcome.spec;
        writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6}",
            outcome.label,
            s.c(),
            s.mu_hat(),
            s.sigma_hat(),
            s.lambda()
        )
        .expect("string write");
    }
    stack::atomic_write(path, out.as_bytes())
}

fn write_histogram(path: &Path, diff: &crate::stack::Raster, spec: &ThresholdSpec) -> Result<()> {
    let lo = spec.mu_hat() - HISTOGRAM_SPAN_SIGMAS * spec.sigma_hat();
    let hi = spec.mu_hat() + HISTOGRAM_SPAN_SIGMAS * spec.sigma_hat();
    let width = (hi - lo) / HISTOGRAM_BINS as f64;
    let mut counts = vec![0u64; HISTOGRAM_BINS];
    for v in diff.pixels() {
        // Out-of-span values clamp into the edge bins so counts always sum
        // to the pixel count.
        let bin = (((*v as f64 - lo) / width).floor() as i64)
            .clamp(0, HISTOGRAM_BINS as i64 - 1) as usize;
        counts[bin] += 1;
    }
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for (i, count) in counts.iter().enumerate() {
        writeln!(
            out,
            "{:.6},{:.6},{count}",
            lo + i as f64 * width,
            lo + (i + 1) as f64 * width
        )
        .expect("string write");
    }
    stack::atomic_write(path, out.as_bytes())
}

/// Reads a rows fixture: `layer_label,known_targets,detected_targets,false_alarms,area_km2`.
pub fn read_rows_csv(path: &Path) -> Result<Vec<ScoreInput>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let expected = "layer_label,known_targets,detected_targets,false_alarms,area_km2";
    match lines.next() {
        Some((_, header)) if header.trim() == expected => {}
        _ => return Err(Error::parse(path, format!("expected header '{expected}'"))),
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::parse(
                path,
                format!("line {}: expected 5 fields, got {}", lineno + 1, fields.len()),
            ));
        }
        let parse_int = |s: &str, what: &str| -> Result<usize> {
            s.trim().parse().map_err(|_| {
                Error::parse(path, format!("line {}: bad {what} '{s}'", lineno + 1))
            })
        };
        rows.push(ScoreInput {
            layer_label: fields[0].trim().to_string(),
            known_targets: parse_int(fields[1], "known_targets")?,
            detected_targets: parse_int(fields[2], "detected_targets")?,
            false_alarms: parse_int(fields[3], "false_alarms")?,
            area_km2: fields[4].trim().parse().map_err(|_| {
                Error::parse(path, format!("line {}: bad area_km2 '{}'", lineno + 1, fields[4]))
            })?,
        });
    }
    Ok(rows)
}

fn write_report(out_dir: &Path, report: &ScoreReport) -> Result<()> {
    let mut out = String::from(
        "layer_label,known_targets,detected_targets,pd,area_km2,false_alarms,far_per_km2\n",
    );
    for row in report.rows.iter().chain(std::iter::once(&report.total)) {
        writeln!(
            out,
            "{},{},{},{:.4},{:.4},{},{:.4}",
            row.layer_label,
            row.known_targets,
            row.detected_targets,
            row.pd,
            row.area_km2,
            row.false_alarms,
            row.far_per_km2
        )
        .expect("string write");
    }
    stack::atomic_write(&out_dir.join("report.csv"), out.as_bytes())?;

    let rounded = |v: f64| (v * 1e4).round() / 1e4;
    let json = serde_json::json!({
        "rows": report.rows.iter().map(row_json(rounded)).collect::<Vec<_>>(),
        "total": row_json(rounded)(&report.total),
    });
    let mut bytes = serde_json::to_vec_pretty(&json).expect("static JSON shape");
    bytes.push(b'\n');
    stack::atomic_write(&out_dir.join("report.json"), &bytes)
}

fn row_json(
    rounded: impl Fn(f64) -> f64 + Copy,
) -> impl Fn(&metrics::ScoreRow) -> serde_json::Value + Copy {
    move |row| {
        serde_json::json!({
            "layer_label": row.layer_label,
            "known_targets": row.known_targets,
            "detected_targets": row.detected_targets,
            "pd": rounded(row.pd),
            "area_km2": rounded(row.area_km2),
            "false_alarms": row.false_alarms,
            "far_per_km2": rounded(row.far_per_km2),
        })
    }
}

/// `arstack` command-line interface.
#[derive(Debug, Parser)]
#[command(
    name = "arstack",
    about = "Ground-scene estimation and change detection for co-registered image stacks",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Debug, Subcommand)]
enum CliCommand {
    /// Fit the per-pixel model and write forecast.raw and coef.raw
    Estimate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Write per-layer masks, thresholds, and the detection CSV
    Detect {
        #[command(flatten)]
        common: CommonArgs,
        /// Also write a 256-bin difference histogram per layer
        #[arg(long)]
        emit_histogram: bool,
    },
    /// Score detections against ground truth (or re-score a rows fixture)
    Score {
        #[command(flatten)]
        common: CommonArgs,
        /// Score pre-counted rows from a CSV instead of running the pipeline
        #[arg(long, value_name = "CSV")]
        rows: Option<PathBuf>,
    },
    /// Sweep the detection constants and write roc.csv
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Generate a synthetic stack from a JSON spec
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        /// Synthetic scene description (JSON)
        #[arg(long, value_name = "JSON")]
        spec: PathBuf,
    },
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Stack manifest (JSON)
    #[arg(long, value_name = "JSON")]
    stack: Option<PathBuf>,

    /// Ground-truth CSV (layer_label,x,y)
    #[arg(long, value_name = "CSV")]
    truth: Option<PathBuf>,

    /// Autoregressive model order
    #[arg(long, default_value_t = 1)]
    p: usize,

    /// Forecast horizon in steps
    #[arg(long, default_value_t = 1)]
    h: usize,

    /// Detection constants, ascending; detect/score use the first value
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    c_values: Option<Vec<f64>>,

    /// Structuring element radius for the morphological opening
    #[arg(long, default_value_t = 1)]
    se_radius: usize,

    /// Minimum cluster size in pixels
    #[arg(long, default_value_t = 2)]
    min_cluster_size: usize,

    /// Match radius between detections and truth, in pixels
    #[arg(long, default_value_t = 10.0)]
    match_radius_px: f64,

    /// Threshold |diff - mu| instead of one-sided exceedance
    #[arg(long)]
    two_sided: bool,

    /// Pool mu/sigma over all difference images instead of per image
    #[arg(long)]
    pooled_stats: bool,

    /// Worker threads (default: ARSTACK_THREADS or machine parallelism)
    #[arg(long)]
    threads: Option<usize>,

    /// Output directory
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

impl Cli {
    /// Resolves parsed arguments into a [`RunConfig`], consulting
    /// `ARSTACK_THREADS` when `--threads` is absent.
    pub fn into_config(self) -> Result<RunConfig> {
        let (command, common) = match self.command {
            CliCommand::Estimate { common } => (Command::Estimate, common),
            CliCommand::Detect { common, emit_histogram } => {
                (Command::Detect { emit_histogram }, common)
            }
            CliCommand::Score { common, rows } => (Command::Score { rows_csv: rows }, common),
            CliCommand::Sweep { common } => (Command::Sweep, common),
            CliCommand::Synth { common, spec } => (Command::Synth { spec_path: spec }, common),
        };
        let threads = match common.threads {
            Some(t) => t,
            None => threads_from_env()?,
        };
        Ok(RunConfig {
            command,
            stack_manifest: common.stack,
            truth_path: common.truth,
            p: common.p,
            h: common.h,
            c_values: common.c_values.unwrap_or_else(default_c_values),
            se_radius: common.se_radius,
            min_cluster_size: common.min_cluster_size,
            match_radius_px: common.match_radius_px,
            two_sided: common.two_sided,
            pooled_stats: common.pooled_stats,
            threads,
            out_dir: common.out_dir,
        })
    }
}

fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(value) => value.trim().parse().map_err(|_| {
            Error::InvalidArgument(format!("{THREADS_ENV}='{value}' is not a thread count"))
        }),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}
