//! Scoring detections against ground truth: greedy one-to-one matching,
//! per-layer and aggregate Pd/FAR rows, and ROC sweeps over the detection
//! constant.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::detect::{self, DetectParams, Detection, ThresholdSpec};
use crate::error::{Error, Result};
use crate::estimate::{difference_image, GroundEstimate};
use crate::stack::{atomic_write, ImageStack};

/// Known target positions (pixel coordinates) for one stack layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    layer_label: String,
    targets: Vec<(f64, f64)>,
}

impl GroundTruth {
    pub fn new(layer_label: impl Into<String>, targets: Vec<(f64, f64)>) -> Self {
        Self { layer_label: layer_label.into(), targets }
    }

    pub fn layer_label(&self) -> &str {
        &self.layer_label
    }

    pub fn targets(&self) -> &[(f64, f64)] {
        &self.targets
    }
}

/// Reads a ground-truth CSV with header `layer_label,x,y`, grouping rows by
/// label in first-seen order.
pub fn read_truth_csv(path: &Path) -> Result<Vec<GroundTruth>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "layer_label,x,y" => {}
        _ => return Err(Error::parse(path, "expected header 'layer_label,x,y'")),
    }
    let mut truths: Vec<GroundTruth> = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                path,
                format!("line {}: expected 3 fields, got {}", lineno + 1, fields.len()),
            ));
        }
        let label = fields[0].trim();
        let x: f64 = fields[1].trim().parse().map_err(|_| {
            Error::parse(path, format!("line {}: bad x value '{}'", lineno + 1, fields[1]))
        })?;
        let y: f64 = fields[2].trim().parse().map_err(|_| {
            Error::parse(path, format!("line {}: bad y value '{}'", lineno + 1, fields[2]))
        })?;
        match truths.iter_mut().find(|t| t.layer_label == label) {
            Some(t) => t.targets.push((x, y)),
            None => truths.push(GroundTruth::new(label, vec![(x, y)])),
        }
    }
    Ok(truths)
}

/// Writes the ground-truth CSV consumed by [`read_truth_csv`].
pub fn write_truth_csv(path: &Path, truths: &[GroundTruth]) -> Result<()> {
    let mut out = String::from("layer_label,x,y\n");
    for t in truths {
        for (x, y) in &t.targets {
            out.push_str(&format!("{},{x},{y}\n", t.layer_label));
        }
    }
    atomic_write(path, out.as_bytes())
}

/// Greedy one-to-one matching: detections, in their deterministic order,
/// claim the nearest unclaimed target within `match_radius_px` (Euclidean).
/// Each target counts at most once; unmatched detections are false alarms.
pub fn match_detections(
    detections: &[Detection],
    truth: &GroundTruth,
    match_radius_px: f64,
) -> Result<(usize, usize)> {
    if !(match_radius_px > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "match radius must be positive, got {match_radius_px}"
        )));
    }
    let mut claimed = vec![false; truth.targets.len()];
    let mut hits = 0usize;
    let mut false_alarms = 0usize;
    for d in detections {
        let mut best: Option<(usize, f64)> = None;
        for (i, (tx, ty)) in truth.targets.iter().enumerate() {
            if claimed[i] {
                continue;
            }
            let dist = ((d.centroid_x - tx).powi(2) + (d.centroid_y - ty).powi(2)).sqrt();
            if dist <= match_radius_px && best.is_none_or(|(_, b)| dist < b) {
                best = Some((i, dist));
            }
        }
        match best {
            Some((i, _)) => {
                claimed[i] = true;
                hits += 1;
            }
            None => false_alarms += 1,
        }
    }
    Ok((hits, false_alarms))
}

/// Per-layer inputs to [`score`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreInput {
    pub layer_label: String,
    pub known_targets: usize,
    pub detected_targets: usize,
    pub false_alarms: usize,
    pub area_km2: f64,
}

/// One row of the detection report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRow {
    pub layer_label: String,
    pub known_targets: usize,
    pub detected_targets: usize,
    pub pd: f64,
    pub area_km2: f64,
    pub false_alarms: usize,
    pub far_per_km2: f64,
}

/// Per-layer rows plus the aggregate row (sums before ratios).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub rows: Vec<ScoreRow>,
    pub total: ScoreRow,
}

impl ScoreReport {
    /// Plain-text table with Pd and FAR at two decimals.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str("layer            known  detected    Pd  area_km2     FA    FAR\n");
        for row in self.rows.iter().chain(std::iter::once(&self.total)) {
            out.push_str(&format!(
                "{:<16} {:>5} {:>9} {:>5.2} {:>9.1} {:>6} {:>6.2}\n",
                row.layer_label,
                row.known_targets,
                row.detected_targets,
                row.pd,
                row.area_km2,
                row.false_alarms,
                row.far_per_km2
            ));
        }
        out
    }
}

fn score_row(input: &ScoreInput) -> Result<ScoreRow> {
    if input.known_targets == 0 {
        return Err(Error::InvalidArgument(format!(
            "layer '{}' has zero known targets",
            input.layer_label
        )));
    }
    if !(input.area_km2 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "layer '{}' has non-positive area {}",
            input.layer_label, input.area_km2
        )));
    }
    Ok(ScoreRow {
        layer_label: input.layer_label.clone(),
        known_targets: input.known_targets,
        detected_targets: input.detected_targets,
        pd: input.detected_targets as f64 / input.known_targets as f64,
        area_km2: input.area_km2,
        false_alarms: input.false_alarms,
        far_per_km2: input.false_alarms as f64 / input.area_km2,
    })
}

/// Builds per-layer rows and the aggregate: total Pd is summed detections
/// over summed known targets; total FAR is summed false alarms over summed
/// area.
pub fn score(inputs: &[ScoreInput]) -> Result<ScoreReport> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("no rows to score".into()));
    }
    let rows = inputs.iter().map(score_row).collect::<Result<Vec<_>>>()?;
    let known: usize = rows.iter().map(|r| r.known_targets).sum();
    let detected: usize = rows.iter().map(|r| r.detected_targets).sum();
    let false_alarms: usize = rows.iter().map(|r| r.false_alarms).sum();
    let area: f64 = rows.iter().map(|r| r.area_km2).sum();
    let total = ScoreRow {
        layer_label: "total".into(),
        known_targets: known,
        detected_targets: detected,
        pd: detected as f64 / known as f64,
        area_km2: area,
        false_alarms,
        far_per_km2: false_alarms as f64 / area,
    };
    Ok(ScoreReport { rows, total })
}

/// One point of the ROC sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub c: f64,
    pub far_per_km2: f64,
    pub pd: f64,
}

/// (FAR, Pd) aggregate points indexed by detection constant, ascending in c.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

/// Runs detect + match over every truth layer for a single detection
/// constant, returning the aggregate report.
pub fn score_stack(
    stack: &ImageStack,
    ground: &GroundEstimate,
    truths: &[GroundTruth],
    c: f64,
    params: &DetectParams,
    match_radius_px: f64,
) -> Result<ScoreReport> {
    if truths.is_empty() {
        return Err(Error::InvalidArgument("no ground truth layers to score".into()));
    }
    let pooled = if params.pooled_stats {
        let (mu, sigma) = detect::pooled_stats(stack, ground)?;
        Some(ThresholdSpec::from_stats(mu, sigma, c)?)
    } else {
        None
    };
    let area = stack.layer_area_km2();
    let mut inputs = Vec::with_capacity(truths.len());
    for truth in truths {
        let (_, layer) = stack.layer_by_label(truth.layer_label()).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "ground truth references unknown layer '{}'",
                truth.layer_label()
            ))
        })?;
        let diff = difference_image(layer, ground)?;
        let spec = match &pooled {
            Some(spec) => spec.clone(),
            None => detect::make_threshold(&diff, c)?,
        };
        let detections = detect::detect_in_diff(&diff, &spec, params)?;
        let (hits, false_alarms) = match_detections(&detections, truth, match_radius_px)?;
        inputs.push(ScoreInput {
            layer_label: truth.layer_label().to_string(),
            known_targets: truth.targets().len(),
            detected_targets: hits,
            false_alarms,
            area_km2: area,
        });
    }
    score(&inputs)
}

/// Runs the full detect + match + score pipeline once per detection constant.
/// Constants must be ascending; sweeps run in parallel over read-only inputs.
pub fn roc_sweep(
    stack: &ImageStack,
    ground: &GroundEstimate,
    truths: &[GroundTruth],
    cs: &[f64],
    params: &DetectParams,
    match_radius_px: f64,
) -> Result<RocCurve> {
    if cs.is_empty() {
        return Err(Error::InvalidArgument("empty detection constant sweep".into()));
    }
    if cs.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(
            "detection constants must be strictly ascending".into(),
        ));
    }
    let points = cs
        .par_iter()
        .map(|&c| {
            let report = score_stack(stack, ground, truths, c, params, match_radius_px)?;
            Ok(RocPoint {
                c,
                far_per_km2: report.total.far_per_km2,
                pd: report.total.pd,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RocCurve { points })
}
