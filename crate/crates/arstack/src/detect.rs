//! Converts difference images into detections: statistical thresholding at
//! `lambda = mu + C*sigma`, morphological opening with a square structuring
//! element, and 8-connected component clustering.

use crate::error::{Error, Result};
use crate::estimate::{difference_image, GroundEstimate};
use crate::stack::{ImageStack, Raster};

/// A resolved threshold: the detection constant `c`, the sample statistics of
/// the difference pixels, and the derived absolute level
/// `lambda = mu_hat + c * sigma_hat`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSpec {
    c: f64,
    mu_hat: f64,
    sigma_hat: f64,
    lambda: f64,
}

impl ThresholdSpec {
    /// Builds a spec from externally computed statistics (e.g. pooled over a
    /// whole stack of difference images).
    pub fn from_stats(mu_hat: f64, sigma_hat: f64, c: f64) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::InvalidArgument(format!("detection constant {c} is not finite")));
        }
        if !(mu_hat.is_finite() && sigma_hat.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite statistics mu={mu_hat} sigma={sigma_hat}"
            )));
        }
        if sigma_hat <= 1e-12 * f64::max(1.0, mu_hat.abs()) {
            return Err(Error::DegenerateInput(format!(
                "difference image is constant (sigma = {sigma_hat}); no detection is meaningful"
            )));
        }
        Ok(Self { c, mu_hat, sigma_hat, lambda: mu_hat + c * sigma_hat })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn mu_hat(&self) -> f64 {
        self.mu_hat
    }

    pub fn sigma_hat(&self) -> f64 {
        self.sigma_hat
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Sample mean and standard deviation (denominator N) over all pixels of the
/// difference image, and the threshold they imply for detection constant `c`.
pub fn make_threshold(diff: &Raster, c: f64) -> Result<ThresholdSpec> {
    let (mu, sigma) = sample_stats(diff.pixels());
    ThresholdSpec::from_stats(mu, sigma, c)
}

fn sample_stats(pixels: &[f32]) -> (f64, f64) {
    let n = pixels.len() as f64;
    let mean = pixels.iter().map(|v| *v as f64).sum::<f64>() / n;
    let var = pixels.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Pooled statistics over the difference images of every stack layer against
/// the same ground estimate.
pub fn pooled_stats(stack: &ImageStack, ground: &GroundEstimate) -> Result<(f64, f64)> {
    let mut count = 0usize;
    let mut sum = 0.0f64;
    for layer in stack.layers() {
        let diff = difference_image(layer, ground)?;
        sum += diff.pixels().iter().map(|v| *v as f64).sum::<f64>();
        count += diff.pixels().len();
    }
    let mean = sum / count as f64;
    let mut dev = 0.0f64;
    for layer in stack.layers() {
        let diff = difference_image(layer, ground)?;
        dev += diff.pixels().iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>();
    }
    Ok((mean, (dev / count as f64).sqrt()))
}

/// Row-major boolean image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} bits for {width}x{height} mask",
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count_set(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// True if every set bit of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }
}

/// One-sided exceedance: bit set where the difference pixel is >= lambda.
pub fn threshold(diff: &Raster, spec: &ThresholdSpec) -> BinaryMask {
    let bits = diff.pixels().iter().map(|v| *v as f64 >= spec.lambda()).collect();
    BinaryMask { width: diff.width(), height: diff.height(), bits }
}

/// Two-sided variant: bit set where |pixel - mu_hat| >= c * sigma_hat.
pub fn threshold_two_sided(diff: &Raster, spec: &ThresholdSpec) -> BinaryMask {
    let band = spec.lambda() - spec.mu_hat();
    let bits = diff
        .pixels()
        .iter()
        .map(|v| (*v as f64 - spec.mu_hat()).abs() >= band)
        .collect();
    BinaryMask { width: diff.width(), height: diff.height(), bits }
}

/// Erosion then dilation with a square structuring element of side
/// `2 * se_radius + 1`. Pixels outside the image count as background, and
/// `se_radius = 0` is the identity.
pub fn morph_open(mask: &BinaryMask, se_radius: usize) -> BinaryMask {
    if se_radius == 0 {
        return mask.clone();
    }
    dilate(&erode(mask, se_radius), se_radius)
}

/// Keeps a bit only when the full square window around it is set; windows
/// that cross the border fail (outside pixels are background).
pub fn erode(mask: &BinaryMask, se_radius: usize) -> BinaryMask {
    separable_pass(mask, se_radius, true)
}

/// Sets a bit when any bit in the square window around it is set.
pub fn dilate(mask: &BinaryMask, se_radius: usize) -> BinaryMask {
    separable_pass(mask, se_radius, false)
}

/// A square min/max filter factors into a horizontal pass then a vertical
/// pass.
fn separable_pass(mask: &BinaryMask, se_radius: usize, require_all: bool) -> BinaryMask {
    let (w, h) = (mask.width, mask.height);
    let r = se_radius as isize;
    let mut horiz = vec![false; w * h];
    for y in 0..h {
        let row = &mask.bits[y * w..(y + 1) * w];
        let out = &mut horiz[y * w..(y + 1) * w];
        for x in 0..w as isize {
            let window = (x - r)..=(x + r);
            out[x as usize] = if require_all {
                window.clone().all(|i| i >= 0 && i < w as isize && row[i as usize])
            } else {
                window.clone().any(|i| i >= 0 && i < w as isize && row[i as usize])
            };
        }
    }
    let mut bits = vec![false; w * h];
    for y in 0..h as isize {
        for x in 0..w {
            let window = (y - r)..=(y + r);
            let v = if require_all {
                window
                    .clone()
                    .all(|j| j >= 0 && j < h as isize && horiz[j as usize * w + x])
            } else {
                window
                    .clone()
                    .any(|j| j >= 0 && j < h as isize && horiz[j as usize * w + x])
            };
            bits[y as usize * w + x] = v;
        }
    }
    BinaryMask { width: w, height: h, bits }
}

/// A clustered exceedance region.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// Unweighted pixel centroid.
    pub centroid_x: f64,
    pub centroid_y: f64,
    pub pixel_count: usize,
    /// Maximum difference value inside the component.
    pub peak_value: f64,
}

/// 8-connected component labeling over the mask. Components smaller than
/// `min_cluster_size` are dropped. Output is sorted by descending peak value,
/// ties broken by ascending (centroid_y, centroid_x), so reports are
/// deterministic.
pub fn cluster(mask: &BinaryMask, diff: &Raster, min_cluster_size: usize) -> Result<Vec<Detection>> {
    if mask.width != diff.width() || mask.height != diff.height() {
        return Err(Error::DimensionMismatch(format!(
            "mask is {}x{}, difference image is {}x{}",
            mask.width,
            mask.height,
            diff.width(),
            diff.height()
        )));
    }
    let (w, h) = (mask.width, mask.height);
    let mut visited = vec![false; w * h];
    let mut stack_buf: Vec<usize> = Vec::new();
    let mut detections = Vec::new();
    for start in 0..w * h {
        if !mask.bits[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        stack_buf.push(start);
        let mut count = 0usize;
        let mut sum_x = 0.0f64;
        let mut sum_y = 0.0f64;
        let mut peak = f64::NEG_INFINITY;
        while let Some(idx) = stack_buf.pop() {
            let (x, y) = (idx % w, idx / w);
            count += 1;
            sum_x += x as f64;
            sum_y += y as f64;
            peak = peak.max(diff.pixels()[idx] as f64);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let nidx = ny as usize * w + nx as usize;
                    if mask.bits[nidx] && !visited[nidx] {
                        visited[nidx] = true;
                        stack_buf.push(nidx);
                    }
                }
            }
        }
        if count >= min_cluster_size {
            detections.push(Detection {
                centroid_x: sum_x / count as f64,
                centroid_y: sum_y / count as f64,
                pixel_count: count,
                peak_value: peak,
            });
        }
    }
    detections.sort_by(|a, b| {
        b.peak_value
            .total_cmp(&a.peak_value)
            .then(a.centroid_y.total_cmp(&b.centroid_y))
            .then(a.centroid_x.total_cmp(&b.centroid_x))
    });
    Ok(detections)
}

/// Knobs for the threshold/morphology/cluster stage.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectParams {
    /// Structuring element radius for the opening (side `2r + 1`).
    pub se_radius: usize,
    /// Minimum surviving component size in pixels.
    pub min_cluster_size: usize,
    /// Threshold on |diff - mu| instead of one-sided exceedance.
    pub two_sided: bool,
    /// Derive mu/sigma from all difference images of the stack rather than
    /// per image.
    pub pooled_stats: bool,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self { se_radius: 1, min_cluster_size: 2, two_sided: false, pooled_stats: false }
    }
}

/// Threshold, open, and cluster one difference image under an already
/// resolved threshold spec.
pub fn detect_in_diff(
    diff: &Raster,
    spec: &ThresholdSpec,
    params: &DetectParams,
) -> Result<Vec<Detection>> {
    let raw = if params.two_sided {
        threshold_two_sided(diff, spec)
    } else {
        threshold(diff, spec)
    };
    let opened = morph_open(&raw, params.se_radius);
    cluster(&opened, diff, params.min_cluster_size)
}
