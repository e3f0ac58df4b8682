//! Co-registered image stacks: raster storage, manifest ingestion, raster
//! file formats, and per-pixel series extraction.
//!
//! A stack manifest is a JSON file:
//!
//! ```json
//! {
//!   "pixel_area_m2": 1.0,
//!   "layers": [
//!     { "path": "mission1_pass5.raw", "label": "m1p5", "width": 3000, "height": 2000 }
//!   ]
//! }
//! ```
//!
//! Layer paths resolve relative to the manifest. `.pgm` layers are imported
//! via the P5 reader (values scaled to [0, 1]); everything else is read as
//! headerless raw little-endian 32-bit floats, row-major.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::Series;

/// A single-channel raster. Pixel storage is 32-bit; all statistics
/// downstream accumulate in 64-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
    pixel_area_m2: f64,
}

impl Raster {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>, pixel_area_m2: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "raster dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "pixel buffer holds {} values, expected {}x{} = {}",
                pixels.len(),
                width,
                height,
                width * height
            )));
        }
        if !(pixel_area_m2.is_finite() && pixel_area_m2 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "pixel_area_m2 must be positive and finite, got {pixel_area_m2}"
            )));
        }
        Ok(Self { width, height, pixels, pixel_area_m2 })
    }

    pub fn filled(width: usize, height: usize, value: f32, pixel_area_m2: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height], pixel_area_m2)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn pixel_area_m2(&self) -> f64 {
        self.pixel_area_m2
    }

    /// Value at column `x`, row `y` (row-major storage).
    pub fn at(&self, x: usize, y: usize) -> f32 {
        assert!(x < self.width && y < self.height, "pixel ({x}, {y}) out of bounds");
        self.pixels[y * self.width + x]
    }

    pub fn area_km2(&self) -> f64 {
        (self.width * self.height) as f64 * self.pixel_area_m2 / 1e6
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// An ordered stack of co-registered rasters; layer order is the temporal
/// index of the per-pixel series.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    layers: Vec<Raster>,
    labels: Vec<String>,
}

impl ImageStack {
    pub fn new(layers: Vec<Raster>, labels: Vec<String>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "stack requires at least 2 layers, got {}",
                layers.len()
            )));
        }
        if labels.len() != layers.len() {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {} layers",
                labels.len(),
                layers.len()
            )));
        }
        let first = &layers[0];
        for (i, layer) in layers.iter().enumerate().skip(1) {
            if !first.same_shape(layer) {
                return Err(Error::DimensionMismatch(format!(
                    "layer '{}' is {}x{}, expected {}x{}",
                    labels[i],
                    layer.width(),
                    layer.height(),
                    first.width(),
                    first.height()
                )));
            }
            if layer.pixel_area_m2() != first.pixel_area_m2() {
                return Err(Error::DimensionMismatch(format!(
                    "layer '{}' has pixel_area_m2 {}, expected {}",
                    labels[i],
                    layer.pixel_area_m2(),
                    first.pixel_area_m2()
                )));
            }
        }
        for (i, label) in labels.iter().enumerate() {
            if labels[..i].contains(label) {
                return Err(Error::InvalidArgument(format!("duplicate layer label '{label}'")));
            }
        }
        Ok(Self { layers, labels })
    }

    /// Number of layers, i.e. the per-pixel series length N.
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn width(&self) -> usize {
        self.layers[0].width()
    }

    pub fn height(&self) -> usize {
        self.layers[0].height()
    }

    pub fn layers(&self) -> &[Raster] {
        &self.layers
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn layer(&self, index: usize) -> &Raster {
        &self.layers[index]
    }

    pub fn layer_by_label(&self, label: &str) -> Option<(usize, &Raster)> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| (i, &self.layers[i]))
    }

    /// Area of one layer in square kilometers.
    pub fn layer_area_km2(&self) -> f64 {
        self.layers[0].area_km2()
    }

    /// Summed area across all layers.
    pub fn total_area_km2(&self) -> f64 {
        self.layer_area_km2() * self.layers.len() as f64
    }

    /// The length-N amplitude series at column `x`, row `y`, in layer order.
    pub fn pixel_series(&self, x: usize, y: usize) -> Result<Series> {
        if x >= self.width() || y >= self.height() {
            return Err(Error::InvalidArgument(format!(
                "pixel ({x}, {y}) out of bounds for {}x{} stack",
                self.width(),
                self.height()
            )));
        }
        let idx = y * self.width() + x;
        Series::new(self.layers.iter().map(|l| l.pixels()[idx] as f64).collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestLayer {
    pub path: String,
    pub label: String,
    pub width: usize,
    pub height: usize,
}

/// On-disk description of a stack; see the module docs for the JSON shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub pixel_area_m2: f64,
    pub layers: Vec<ManifestLayer>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)
            .map_err(|e| Error::parse(path, e.to_string()))?;
        bytes.push(b'\n');
        atomic_write(path, &bytes)
    }
}

/// Loads and validates a stack from a JSON manifest. Layer order follows
/// manifest order.
pub fn load_stack(manifest_path: &Path) -> Result<ImageStack> {
    let manifest = Manifest::read(manifest_path)?;
    if manifest.layers.len() < 2 {
        return Err(Error::parse(
            manifest_path,
            format!("stack requires at least 2 layers, got {}", manifest.layers.len()),
        ));
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut layers = Vec::with_capacity(manifest.layers.len());
    let mut labels = Vec::with_capacity(manifest.layers.len());
    for entry in &manifest.layers {
        let path = base.join(&entry.path);
        let raster = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
            read_pgm(&path, manifest.pixel_area_m2)
        } else {
            read_raster_raw(&path, entry.width, entry.height, manifest.pixel_area_m2)
        }?;
        if raster.width() != entry.width || raster.height() != entry.height {
            return Err(Error::DimensionMismatch(format!(
                "layer '{}': file {} is {}x{}, manifest says {}x{}",
                entry.label,
                path.display(),
                raster.width(),
                raster.height(),
                entry.width,
                entry.height
            )));
        }
        for (i, v) in raster.pixels().iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::InvalidData(format!(
                    "layer '{}': non-finite pixel {v} at index {i}",
                    entry.label
                )));
            }
            if *v < 0.0 {
                return Err(Error::InvalidData(format!(
                    "layer '{}': negative amplitude {v} at index {i}",
                    entry.label
                )));
            }
        }
        layers.push(raster);
        labels.push(entry.label.clone());
    }
    ImageStack::new(layers, labels)
}

/// Reads a headerless raw raster: little-endian 32-bit floats, row-major.
pub fn read_raster_raw(
    path: &Path,
    width: usize,
    height: usize,
    pixel_area_m2: f64,
) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = width * height * 4;
    if bytes.len() != expected {
        return Err(Error::parse(
            path,
            format!("{} bytes on disk, expected {expected} for {width}x{height} f32", bytes.len()),
        ));
    }
    let pixels = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Raster::new(width, height, pixels, pixel_area_m2)
}

/// Writes a raster in the raw little-endian 32-bit float format, atomically.
pub fn write_raster_raw(path: &Path, raster: &Raster) -> Result<()> {
    let mut bytes = Vec::with_capacity(raster.pixels().len() * 4);
    for v in raster.pixels() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &bytes)
}

/// Imports a binary PGM (P5) image, scaling values to [0, 1] by maxval.
/// Both 8-bit and 16-bit (big-endian, maxval up to 65535) samples are
/// accepted.
pub fn read_pgm(path: &Path, pixel_area_m2: f64) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, rest) = parse_pgm_header(&bytes).map_err(|m| Error::parse(path, m))?;
    let (width, height, maxval) = header;
    let n = width * height;
    let pixels: Vec<f32> = if maxval < 256 {
        if rest.len() < n {
            return Err(Error::parse(path, format!("{} sample bytes, expected {n}", rest.len())));
        }
        rest[..n].iter().map(|&b| b as f32 / maxval as f32).collect()
    } else {
        if rest.len() < 2 * n {
            return Err(Error::parse(
                path,
                format!("{} sample bytes, expected {}", rest.len(), 2 * n),
            ));
        }
        rest[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / maxval as f32)
            .collect()
    };
    Raster::new(width, height, pixels, pixel_area_m2)
}

/// Writes a binary mask-style PGM (P5, maxval 255) from 0/255 byte values.
pub fn write_pgm_bytes(path: &Path, width: usize, height: usize, samples: &[u8]) -> Result<()> {
    if samples.len() != width * height {
        return Err(Error::DimensionMismatch(format!(
            "{} samples for {width}x{height} PGM",
            samples.len()
        )));
    }
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(samples);
    atomic_write(path, &bytes)
}

type PgmHeader = (usize, usize, u32);

fn parse_pgm_header(bytes: &[u8]) -> std::result::Result<(PgmHeader, &[u8]), String> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err("not a binary PGM (missing P5 magic)".into());
    }
    // Tokens are whitespace-separated; '#' starts a comment running to EOL.
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        while pos < bytes.len() {
            let b = bytes[pos];
            if b == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err("malformed PGM header".into());
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| "malformed PGM header".to_string())?
            .parse()
            .map_err(|_| "malformed PGM header".to_string())?;
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing whitespace after PGM maxval".into());
    }
    pos += 1;
    let (width, height, maxval) = (fields[0], fields[1], fields[2] as u32);
    if width == 0 || height == 0 {
        return Err("PGM dimensions must be positive".into());
    }
    if maxval == 0 || maxval > 65_535 {
        return Err(format!("unsupported PGM maxval {maxval}"));
    }
    Ok(((width, height, maxval), &bytes[pos..]))
}

/// Writes `bytes` to `path` via a temp file in the same directory plus a
/// rename, so readers never observe partial output.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no file name", path.display())))?;
    let mut tmp = PathBuf::from(path);
    tmp.set_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raster(width: usize, height: usize, pixels: Vec<f32>) -> Raster {
        Raster::new(width, height, pixels, 1.0).unwrap()
    }

    fn write_manifest(dir: &Path, manifest: &Manifest) -> PathBuf {
        let path = dir.join("stack.json");
        manifest.write(&path).unwrap();
        path
    }

    fn write_raw(dir: &Path, name: &str, pixels: &[f32]) {
        let bytes: Vec<u8> = pixels.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join(name), bytes).unwrap();
    }

    fn layer_entry(path: &str, label: &str, width: usize, height: usize) -> ManifestLayer {
        ManifestLayer { path: path.into(), label: label.into(), width, height }
    }

    #[test]
    fn carabas_scale_areas() {
        // 3000x2000 pixels at 1 m^2 each is 6 km^2 per image; eight images
        // cover 48 km^2.
        let r = Raster::new(3000, 2000, vec![0.0; 3000 * 2000], 1.0).unwrap();
        assert_eq!(r.area_km2(), 6.0);

        let small = Raster::filled(10, 10, 0.0, 60_000.0).unwrap();
        let stack = ImageStack::new(
            vec![small; 8],
            (0..8).map(|i| format!("layer{i}")).collect(),
        )
        .unwrap();
        assert_eq!(stack.layer_area_km2(), 6.0);
        assert_eq!(stack.total_area_km2(), 48.0);
        assert_eq!(stack.len(), 8);
    }

    #[test]
    fn load_stack_follows_manifest_order() {
        let dir = tempfile::tempdir().unwrap();
        write_raw(dir.path(), "a.raw", &[1.0, 2.0, 3.0, 4.0]);
        write_raw(dir.path(), "b.raw", &[5.0, 6.0, 7.0, 8.0]);
        let manifest = Manifest {
            pixel_area_m2: 2.0,
            layers: vec![
                layer_entry("b.raw", "second", 2, 2),
                layer_entry("a.raw", "first", 2, 2),
            ],
        };
        let path = write_manifest(dir.path(), &manifest);
        let stack = load_stack(&path).unwrap();
        assert_eq!(stack.labels(), ["second", "first"]);
        assert_eq!(stack.layer(0).at(0, 0), 5.0);
        assert_eq!(stack.layer(1).at(0, 0), 1.0);
        assert_eq!(stack.layer(0).pixel_area_m2(), 2.0);
    }

    #[test]
    fn load_stack_rejects_single_layer() {
        let dir = tempfile::tempdir().unwrap();
        write_raw(dir.path(), "a.raw", &[1.0]);
        let manifest = Manifest {
            pixel_area_m2: 1.0,
            layers: vec![layer_entry("a.raw", "only", 1, 1)],
        };
        let path = write_manifest(dir.path(), &manifest);
        let err = load_stack(&path).unwrap_err();
        assert!(err.to_string().contains("at least 2 layers"), "{err}");
    }

    #[test]
    fn load_stack_rejects_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        write_raw(dir.path(), "a.raw", &vec![0.5; 100]);
        write_raw(dir.path(), "b.raw", &vec![0.5; 110]);
        let manifest = Manifest {
            pixel_area_m2: 1.0,
            layers: vec![
                layer_entry("a.raw", "ten", 10, 10),
                layer_entry("b.raw", "eleven", 10, 11),
            ],
        };
        let path = write_manifest(dir.path(), &manifest);
        let err = load_stack(&path).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)), "{err}");
        assert!(err.to_string().contains("eleven"), "{err}");
    }

    #[test]
    fn load_stack_names_layer_with_bad_pixels() {
        let dir = tempfile::tempdir().unwrap();
        write_raw(dir.path(), "good.raw", &[1.0, 2.0]);
        write_raw(dir.path(), "bad.raw", &[1.0, f32::NAN]);
        let manifest = Manifest {
            pixel_area_m2: 1.0,
            layers: vec![
                layer_entry("good.raw", "good", 2, 1),
                layer_entry("bad.raw", "bad", 2, 1),
            ],
        };
        let path = write_manifest(dir.path(), &manifest);
        let err = load_stack(&path).unwrap_err();
        assert!(err.to_string().contains("'bad'"), "{err}");
    }

    #[test]
    fn load_stack_reports_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = Manifest {
            pixel_area_m2: 1.0,
            layers: vec![
                layer_entry("missing.raw", "gone", 2, 1),
                layer_entry("missing2.raw", "gone2", 2, 1),
            ],
        };
        let path = write_manifest(dir.path(), &manifest);
        assert!(matches!(load_stack(&path), Err(Error::Io { .. })));
    }

    #[test]
    fn pixel_series_indexes_row_major() {
        let l0 = raster(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let l1 = raster(3, 2, vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0]);
        let stack = ImageStack::new(vec![l0, l1], vec!["a".into(), "b".into()]).unwrap();
        let s = stack.pixel_series(0, 0).unwrap();
        assert_eq!(s.values(), [1.0, 10.0]);
        let s = stack.pixel_series(2, 1).unwrap();
        assert_eq!(s.values(), [6.0, 60.0]);
        assert!(matches!(stack.pixel_series(3, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(stack.pixel_series(0, 2), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn pixel_series_recovers_injected_values() {
        let n = 8;
        let (w, h) = (12, 6);
        let injected: Vec<f32> = (0..n).map(|i| 3.0 + 0.5 * i as f32).collect();
        let mut layers = Vec::new();
        for v in &injected {
            let mut r = Raster::filled(w, h, 1.0, 1.0).unwrap();
            r.pixels_mut()[3 * w + 7] = *v;
            layers.push(r);
        }
        let stack =
            ImageStack::new(layers, (0..n).map(|i| format!("l{i}")).collect()).unwrap();
        let s = stack.pixel_series(7, 3).unwrap();
        let expected: Vec<f64> = injected.iter().map(|v| *v as f64).collect();
        assert_eq!(s.values(), expected.as_slice());
    }

    #[test]
    fn pgm_import_scales_to_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let mut bytes = b"P5\n# comment\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 51, 102, 255]);
        fs::write(&path, bytes).unwrap();
        let r = read_pgm(&path, 1.0).unwrap();
        assert_eq!(r.pixels()[0], 0.0);
        assert_eq!(r.pixels()[3], 1.0);
        assert!((r.pixels()[1] - 0.2).abs() < 1e-6);

        let path16 = dir.path().join("img16.pgm");
        let mut bytes = b"P5\n2 1\n65535\n".to_vec();
        bytes.extend_from_slice(&0u16.to_be_bytes());
        bytes.extend_from_slice(&65_535u16.to_be_bytes());
        fs::write(&path16, bytes).unwrap();
        let r = read_pgm(&path16, 1.0).unwrap();
        assert_eq!(r.pixels(), [0.0, 1.0]);
    }

    #[test]
    fn pgm_layers_load_through_manifest() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["a.pgm", "b.pgm"] {
            let mut bytes = b"P5\n2 1\n255\n".to_vec();
            bytes.extend_from_slice(&[128, 255]);
            fs::write(dir.path().join(name), bytes).unwrap();
        }
        let manifest = Manifest {
            pixel_area_m2: 9.0,
            layers: vec![
                layer_entry("a.pgm", "a", 2, 1),
                layer_entry("b.pgm", "b", 2, 1),
            ],
        };
        let path = write_manifest(dir.path(), &manifest);
        let stack = load_stack(&path).unwrap();
        assert_eq!(stack.len(), 2);
        assert_eq!(stack.layer(0).at(1, 0), 1.0);
    }

    #[test]
    fn raw_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.raw");
        let pixels = vec![0.0f32, -1.5, 3.25e-7, 1.0e9, f32::MIN_POSITIVE];
        let r = Raster::new(5, 1, pixels.clone(), 4.0).unwrap();
        write_raster_raw(&path, &r).unwrap();
        let back = read_raster_raw(&path, 5, 1, 4.0).unwrap();
        for (a, b) in pixels.iter().zip(back.pixels()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    proptest! {
        #[test]
        fn raw_round_trip_preserves_arbitrary_finite_pixels(
            pixels in proptest::collection::vec(-1e12f32..1e12, 1..64),
        ) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.raw");
            let n = pixels.len();
            let r = Raster::new(n, 1, pixels.clone(), 1.0).unwrap();
            write_raster_raw(&path, &r).unwrap();
            let back = read_raster_raw(&path, n, 1, 1.0).unwrap();
            for (a, b) in pixels.iter().zip(back.pixels()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
