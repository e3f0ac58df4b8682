//! Seeded synthetic stack generation: stationary AR(1) Gaussian clutter per
//! pixel over a static scene, with point/extended targets injected into
//! chosen layers. Used as the desk-scale oracle for the detection pipeline.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::GroundTruth;
use crate::stack::{ImageStack, Raster};

/// One injected target: a disc of `radius_px` around (`x`, `y`) raised by
/// `amplitude` in layer `layer_index` only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetSpec {
    pub layer_index: usize,
    pub x: f64,
    pub y: f64,
    pub amplitude: f64,
    pub radius_px: f64,
}

/// Full description of a synthetic stack. Generation is deterministic for a
/// fixed seed regardless of thread count: each pixel derives its own RNG
/// stream from the seed and its linear index.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub n_layers: usize,
    /// True AR(1) coefficient in the `y[n] = -a*y[n-1] + u[n]` convention.
    pub clutter_coef: f64,
    /// Innovation standard deviation of the white-noise term.
    pub clutter_sigma: f64,
    /// Static background added to every layer.
    pub scene_mean: Raster,
    pub targets: Vec<TargetSpec>,
    pub seed: u64,
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.n_layers < 2 {
            return Err(Error::InvalidArgument(format!(
                "synthetic stack needs at least 2 layers, got {}",
                self.n_layers
            )));
        }
        if !(self.clutter_coef.is_finite() && self.clutter_coef.abs() < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "clutter_coef must satisfy |a| < 1 for stationarity, got {}",
                self.clutter_coef
            )));
        }
        if !(self.clutter_sigma.is_finite() && self.clutter_sigma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "clutter_sigma must be positive, got {}",
                self.clutter_sigma
            )));
        }
        if self.scene_mean.width() != self.width || self.scene_mean.height() != self.height {
            return Err(Error::DimensionMismatch(format!(
                "scene_mean is {}x{}, spec says {}x{}",
                self.scene_mean.width(),
                self.scene_mean.height(),
                self.width,
                self.height
            )));
        }
        for (i, t) in self.targets.iter().enumerate() {
            if t.layer_index >= self.n_layers {
                return Err(Error::InvalidArgument(format!(
                    "target {i} layer_index {} out of range for {} layers",
                    t.layer_index, self.n_layers
                )));
            }
            let in_bounds = t.x >= 0.0
                && t.x < self.width as f64
                && t.y >= 0.0
                && t.y < self.height as f64;
            if !in_bounds {
                return Err(Error::InvalidArgument(format!(
                    "target {i} at ({}, {}) outside {}x{} scene",
                    t.x, t.y, self.width, self.height
                )));
            }
            if !t.amplitude.is_finite() || !(t.radius_px >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "target {i} has amplitude {} and radius {}",
                    t.amplitude, t.radius_px
                )));
            }
        }
        Ok(())
    }
}

/// Generates the stack and the per-layer ground truth (layers that received
/// targets, labeled `layer<i>`).
pub fn generate(spec: &SynthSpec) -> Result<(ImageStack, Vec<GroundTruth>)> {
    spec.validate()?;
    let (w, h, n) = (spec.width, spec.height, spec.n_layers);
    let stationary_sd = spec.clutter_sigma / (1.0 - spec.clutter_coef * spec.clutter_coef).sqrt();
    let scene = spec.scene_mean.pixels();

    // Pixel-major scratch: chunk i holds the series for pixel i, so pixels
    // can be drawn in parallel with independent RNG streams.
    let mut series_buf = vec![0f32; w * h * n];
    series_buf
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(idx, chunk)| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, idx as u64));
            let normal = Normal::new(0.0, 1.0).unwrap();
            let base = scene[idx] as f64;
            let mut z = stationary_sd * normal.sample(&mut rng);
            chunk[0] = (base + z) as f32;
            for v in chunk.iter_mut().skip(1) {
                z = -spec.clutter_coef * z + spec.clutter_sigma * normal.sample(&mut rng);
                *v = (base + z) as f32;
            }
        });

    let mut layers: Vec<Vec<f32>> = vec![vec![0f32; w * h]; n];
    for idx in 0..w * h {
        for (layer_index, layer) in layers.iter_mut().enumerate() {
            layer[idx] = series_buf[idx * n + layer_index];
        }
    }
    drop(series_buf);

    for t in &spec.targets {
        let r2 = t.radius_px * t.radius_px;
        let x_lo = (t.x - t.radius_px).floor().max(0.0) as usize;
        let x_hi = ((t.x + t.radius_px).ceil() as usize).min(w - 1);
        let y_lo = (t.y - t.radius_px).floor().max(0.0) as usize;
        let y_hi = ((t.y + t.radius_px).ceil() as usize).min(h - 1);
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                let (dx, dy) = (x as f64 - t.x, y as f64 - t.y);
                if dx * dx + dy * dy <= r2 {
                    layers[t.layer_index][y * w + x] += t.amplitude as f32;
                }
            }
        }
    }

    let area = spec.scene_mean.pixel_area_m2();
    let rasters = layers
        .into_iter()
        .map(|pixels| Raster::new(w, h, pixels, area))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<String> = (0..n).map(layer_label).collect();
    let stack = ImageStack::new(rasters, labels)?;

    let mut truths: Vec<GroundTruth> = Vec::new();
    for layer_index in 0..n {
        let positions: Vec<(f64, f64)> = spec
            .targets
            .iter()
            .filter(|t| t.layer_index == layer_index)
            .map(|t| (t.x, t.y))
            .collect();
        if !positions.is_empty() {
            truths.push(GroundTruth::new(layer_label(layer_index), positions));
        }
    }
    Ok((stack, truths))
}

pub fn layer_label(index: usize) -> String {
    format!("layer{index}")
}

fn mix_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// JSON form of [`SynthSpec`] accepted by the CLI: the static scene is either
/// a constant `scene_mean` or a raw raster at `scene_mean_path` (relative to
/// the spec file).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpecFile {
    pub width: usize,
    pub height: usize,
    pub n_layers: usize,
    pub clutter_coef: f64,
    pub clutter_sigma: f64,
    #[serde(default)]
    pub scene_mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_mean_path: Option<String>,
    #[serde(default = "default_pixel_area")]
    pub pixel_area_m2: f64,
    pub seed: u64,
    pub targets: Vec<TargetSpec>,
}

fn default_pixel_area() -> f64 {
    1.0
}

impl SynthSpecFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }

    /// Resolves the file form into a full spec; `base` anchors any relative
    /// scene raster path.
    pub fn resolve(&self, base: &Path) -> Result<SynthSpec> {
        let scene_mean = match &self.scene_mean_path {
            Some(rel) => crate::stack::read_raster_raw(
                &base.join(rel),
                self.width,
                self.height,
                self.pixel_area_m2,
            )?,
            None => Raster::filled(self.width, self.height, self.scene_mean as f32, self.pixel_area_m2)?,
        };
        Ok(SynthSpec {
            width: self.width,
            height: self.height,
            n_layers: self.n_layers,
            clutter_coef: self.clutter_coef,
            clutter_sigma: self.clutter_sigma,
            scene_mean,
            targets: self.targets.clone(),
            seed: self.seed,
        })
    }
}
