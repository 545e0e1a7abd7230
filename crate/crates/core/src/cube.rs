//! Multi-band scenes, training patches, label maps, and their file formats.
//!
//! A [`HyperCube`] holds `C` bands of `H × W` samples in band-sequential order.
//! The first `split` bands belong to the primary (hyperspectral) modality and
//! the rest to the auxiliary one; a [`Patch`] is the concatenation of both at a
//! single `P × P` window.
//!
//! Cube files are a one-line text header followed by little-endian `f32`
//! samples:
//!
//! ```text
//! SPECCUBE1 {"bands":C,"height":H,"width":W,"split":S,"wavelengths":[...]|null}\n
//! <C·H·W f32, band 0 row-major, then band 1, ...>
//! ```
//!
//! Samples are held as `f64` in memory and stored as `f32` on disk, so a cube
//! round-trips bit-exactly when its samples are `f32`-representable (every
//! cube produced by [`read_cube`] or [`gen_synthetic`] is).

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

const CUBE_MAGIC: &str = "SPECCUBE1";
const LABEL_MAGIC: &str = "SPECLAB1";

/// Floor applied to the standard deviation when z-scoring.
pub const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    bands: usize,
    height: usize,
    width: usize,
    split: usize,
    wavelengths: Option<Vec<f64>>,
    samples: Vec<f64>,
}

impl HyperCube {
    /// Builds a single-modality cube (`split == bands`).
    pub fn new(bands: usize, height: usize, width: usize, samples: Vec<f64>) -> Result<Self> {
        let expected = bands * height * width;
        if samples.len() != expected {
            return Err(Error::Shape(format!(
                "{bands}x{height}x{width} cube needs {expected} samples, got {}",
                samples.len()
            )));
        }
        let plane = height * width;
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                band: i / plane,
                pixel: i % plane,
            });
        }
        Ok(Self {
            bands,
            height,
            width,
            split: bands,
            wavelengths: None,
            samples,
        })
    }

    pub fn with_split(mut self, split: usize) -> Result<Self> {
        if split > self.bands {
            return Err(Error::Shape(format!(
                "modality split {split} exceeds band count {}",
                self.bands
            )));
        }
        self.split = split;
        Ok(self)
    }

    pub fn with_wavelengths(mut self, wavelengths: Vec<f64>) -> Result<Self> {
        if wavelengths.len() != self.bands {
            return Err(Error::Shape(format!(
                "{} wavelengths for {} bands",
                wavelengths.len(),
                self.bands
            )));
        }
        self.wavelengths = Some(wavelengths);
        Ok(self)
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of bands in the primary modality.
    pub fn split(&self) -> usize {
        self.split
    }

    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.wavelengths.as_deref()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn band(&self, band: usize) -> &[f64] {
        let plane = self.pixels();
        &self.samples[band * plane..(band + 1) * plane]
    }

    pub fn sample(&self, band: usize, row: usize, col: usize) -> f64 {
        self.samples[band * self.pixels() + row * self.width + col]
    }

    /// Returns `true` when the `size × size` window centred on `(row, col)`
    /// lies fully inside the scene.
    pub fn window_fits(&self, row: usize, col: usize, size: usize) -> bool {
        window_origin(row, col, size)
            .map(|(top, left)| {
                size >= 1 && top + size <= self.height && left + size <= self.width
            })
            .unwrap_or(false)
    }
}

fn window_origin(row: usize, col: usize, size: usize) -> Option<(usize, usize)> {
    let half = size / 2;
    Some((row.checked_sub(half)?, col.checked_sub(half)?))
}

/// One training sample: every band of the cube over a `P × P` window.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    data: Vec<f64>,
    bands: usize,
    size: usize,
    origin: (usize, usize),
}

impl Patch {
    /// Wraps band-major `bands × size × size` data.
    pub fn from_data(bands: usize, size: usize, data: Vec<f64>) -> Result<Self> {
        if bands == 0 || size == 0 {
            return Err(Error::Shape("patch needs at least one band and P >= 1".into()));
        }
        if data.len() != bands * size * size {
            return Err(Error::Shape(format!(
                "{bands}x{size}x{size} patch needs {} values, got {}",
                bands * size * size,
                data.len()
            )));
        }
        Ok(Self {
            data,
            bands,
            size,
            origin: (0, 0),
        })
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Pixels per band, `P²`.
    pub fn cells(&self) -> usize {
        self.size * self.size
    }

    /// Top-left corner in the parent cube.
    pub fn origin(&self) -> (usize, usize) {
        self.origin
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn band(&self, band: usize) -> &[f64] {
        let n = self.cells();
        &self.data[band * n..(band + 1) * n]
    }

    pub fn get(&self, band: usize, i: usize, j: usize) -> f64 {
        self.data[band * self.cells() + i * self.size + j]
    }
}

/// Per-pixel class indices; `0` means unlabeled, classes are `1..=classes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    classes: usize,
    labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, classes: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} label map needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&l| l as usize > classes) {
            return Err(Error::Data(format!(
                "label {} at pixel {i} exceeds class count {classes}",
                labels[i]
            )));
        }
        Ok(Self {
            height,
            width,
            classes,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width + col]
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CubeHeader {
    bands: usize,
    height: usize,
    width: usize,
    split: usize,
    wavelengths: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelHeader {
    height: usize,
    width: usize,
    classes: usize,
}

/// Splits `bytes` at the first newline and checks the magic word.
fn split_header<'a>(bytes: &'a [u8], magic: &str) -> Result<(&'a str, &'a [u8])> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format("header", "missing header newline"))?;
    let line = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| Error::format("header", "header is not UTF-8"))?;
    let json = line
        .strip_prefix(magic)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| Error::format("magic", format!("expected `{magic} ` prefix")))?;
    Ok((json, &bytes[newline + 1..]))
}

fn parse_header<T: for<'de> Deserialize<'de>>(json: &str) -> Result<T> {
    serde_json::from_str(json).map_err(|e| {
        // serde names the field in its message ("missing field `bands`").
        let msg = e.to_string();
        let field = msg
            .split('`')
            .nth(1)
            .map(str::to_string)
            .unwrap_or_else(|| "header".to_string());
        Error::format(field, msg)
    })
}

fn check_payload(payload: &[u8], values: usize, width: usize) -> Result<()> {
    let expected = values * width;
    if payload.len() != expected {
        return Err(Error::Truncated {
            expected: values,
            found: payload.len() / width,
        });
    }
    Ok(())
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<HyperCube> {
    let bytes = fs::read(path)?;
    decode_cube(&bytes)
}

pub fn decode_cube(bytes: &[u8]) -> Result<HyperCube> {
    let (json, payload) = split_header(bytes, CUBE_MAGIC)?;
    let header: CubeHeader = parse_header(json)?;
    for (field, v) in [
        ("bands", header.bands),
        ("height", header.height),
        ("width", header.width),
    ] {
        if v == 0 {
            return Err(Error::format(field, "must be at least 1"));
        }
    }
    if header.split > header.bands {
        return Err(Error::format(
            "split",
            format!("{} exceeds band count {}", header.split, header.bands),
        ));
    }
    if let Some(w) = &header.wavelengths {
        if w.len() != header.bands {
            return Err(Error::format(
                "wavelengths",
                format!("{} values for {} bands", w.len(), header.bands),
            ));
        }
    }
    let count = header.bands * header.height * header.width;
    check_payload(payload, count, 4)?;
    let samples = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let mut cube = HyperCube::new(header.bands, header.height, header.width, samples)?;
    cube.split = header.split;
    cube.wavelengths = header.wavelengths;
    Ok(cube)
}

pub fn write_cube(cube: &HyperCube, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_cube(cube))?;
    Ok(())
}

pub fn encode_cube(cube: &HyperCube) -> Vec<u8> {
    let header = CubeHeader {
        bands: cube.bands,
        height: cube.height,
        width: cube.width,
        split: cube.split,
        wavelengths: cube.wavelengths.clone(),
    };
    let json = serde_json::to_string(&header).expect("header serializes");
    let mut out = Vec::with_capacity(json.len() + 11 + cube.samples.len() * 4);
    out.extend_from_slice(CUBE_MAGIC.as_bytes());
    out.push(b' ');
    out.extend_from_slice(json.as_bytes());
    out.push(b'\n');
    for &v in &cube.samples {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let bytes = fs::read(path)?;
    decode_labels(&bytes)
}

pub fn decode_labels(bytes: &[u8]) -> Result<LabelMap> {
    let (json, payload) = split_header(bytes, LABEL_MAGIC)?;
    let header: LabelHeader = parse_header(json)?;
    let count = header.height * header.width;
    check_payload(payload, count, 2)?;
    let labels = payload
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    LabelMap::new(header.height, header.width, header.classes, labels)
}

pub fn write_labels(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_labels(labels))?;
    Ok(())
}

pub fn encode_labels(labels: &LabelMap) -> Vec<u8> {
    let header = LabelHeader {
        height: labels.height,
        width: labels.width,
        classes: labels.classes,
    };
    let json = serde_json::to_string(&header).expect("header serializes");
    let mut out = Vec::with_capacity(json.len() + 10 + labels.labels.len() * 2);
    out.extend_from_slice(LABEL_MAGIC.as_bytes());
    out.push(b' ');
    out.extend_from_slice(json.as_bytes());
    out.push(b'\n');
    for &l in &labels.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

/// Copies the `size × size` window centred on `center` (top-left at
/// `center - size/2`).
pub fn extract_patch(cube: &HyperCube, center: (usize, usize), size: usize) -> Result<Patch> {
    let (row, col) = center;
    if !cube.window_fits(row, col, size) {
        return Err(Error::Bounds(format!(
            "{size}x{size} window centred at ({row}, {col}) exits the {}x{} scene",
            cube.height, cube.width
        )));
    }
    let (top, left) = window_origin(row, col, size).expect("checked by window_fits");
    let mut data = Vec::with_capacity(cube.bands * size * size);
    for b in 0..cube.bands {
        let band = cube.band(b);
        for i in 0..size {
            let start = (top + i) * cube.width + left;
            data.extend_from_slice(&band[start..start + size]);
        }
    }
    Ok(Patch {
        data,
        bands: cube.bands,
        size,
        origin: (top, left),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandStats {
    pub mean: f64,
    pub stddev: f64,
}

/// Per-band mean and population standard deviation, over `subset` pixel
/// indices (row-major) when given, otherwise over the whole scene.
pub fn compute_stats(cube: &HyperCube, subset: Option<&[usize]>) -> Result<Vec<BandStats>> {
    if let Some(s) = subset {
        if s.is_empty() {
            return Err(Error::Data("pixel subset is empty".into()));
        }
        if let Some(&bad) = s.iter().find(|&&p| p >= cube.pixels()) {
            return Err(Error::Bounds(format!(
                "pixel index {bad} outside a scene of {} pixels",
                cube.pixels()
            )));
        }
    }
    let stats = (0..cube.bands)
        .map(|b| {
            let band = cube.band(b);
            let values: Box<dyn Iterator<Item = f64>> = match subset {
                Some(s) => Box::new(s.iter().map(|&p| band[p])),
                None => Box::new(band.iter().copied()),
            };
            let (n, sum) = values.fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
            let mean = sum / n as f64;
            let var = match subset {
                Some(s) => s.iter().map(|&p| (band[p] - mean).powi(2)).sum::<f64>(),
                None => band.iter().map(|v| (v - mean).powi(2)).sum::<f64>(),
            } / n as f64;
            BandStats {
                mean,
                stddev: var.sqrt(),
            }
        })
        .collect();
    Ok(stats)
}

/// Z-scores each band: `(x - mean) / max(stddev, 1e-8)`.
pub fn normalize(cube: &HyperCube, stats: &[BandStats]) -> Result<HyperCube> {
    if stats.len() != cube.bands {
        return Err(Error::Shape(format!(
            "{} band statistics for {} bands",
            stats.len(),
            cube.bands
        )));
    }
    let plane = cube.pixels();
    let samples = cube
        .samples
        .chunks(plane)
        .zip(stats)
        .flat_map(|(band, s)| {
            let scale = s.stddev.max(NORM_EPS);
            band.iter().map(move |v| (v - s.mean) / scale)
        })
        .collect();
    Ok(HyperCube {
        samples,
        ..cube.clone()
    })
}

/// Rectangular tiling of the scene into `rows × cols` class blocks.
///
/// Block `(i, j)` is assigned class `(i·cols + j) mod K + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub rows: usize,
    pub cols: usize,
}

/// Recipe for a scene with known inter-band redundancy.
///
/// Each redundancy group has a leader (its first member). The leader signal is
/// a per-class mean level plus a plane wave with a random phase. The wave of
/// group `g` out of `G` points at angle `g·π/G`. Every other member is
/// `gain · leader + N(0, noise_sigma²)` with a per-band gain drawn from
/// `gain_range`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub groups: Vec<Vec<usize>>,
    pub gain_range: (f64, f64),
    pub noise_sigma: f64,
    pub layout: BlockLayout,
    /// Leader level shared by all classes.
    pub base_level: f64,
    /// Half-width of the uniform spread of per-class leader levels.
    pub class_spread: f64,
    /// Amplitude of the spatial texture on each leader.
    pub texture: f64,
    /// Texture wavelength in pixels.
    pub wavelength: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Bands grouped as consecutive pairs `{0,1}, {2,3}, ...` (a trailing odd
    /// band is its own group).
    pub fn pairs(bands: usize) -> Vec<Vec<usize>> {
        (0..bands)
            .step_by(2)
            .map(|b| (b..(b + 2).min(bands)).collect())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Spec("bands, height and width must be positive".into()));
        }
        if self.classes == 0 || self.classes > u16::MAX as usize {
            return Err(Error::Spec(format!("class count {} out of range", self.classes)));
        }
        let mut seen = vec![false; self.bands];
        for group in &self.groups {
            if group.is_empty() {
                return Err(Error::Spec("empty redundancy group".into()));
            }
            for &b in group {
                if b >= self.bands || seen[b] {
                    return Err(Error::Spec(format!(
                        "redundancy groups are not a partition of 0..{} (band {b})",
                        self.bands
                    )));
                }
                seen[b] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Spec(format!("band {missing} is in no redundancy group")));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Spec("noise_sigma must be finite and >= 0".into()));
        }
        let (lo, hi) = self.gain_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Spec(format!("gain range ({lo}, {hi}) is invalid")));
        }
        if !(self.texture.is_finite() && self.class_spread.is_finite() && self.base_level.is_finite())
        {
            return Err(Error::Spec("levels must be finite".into()));
        }
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return Err(Error::Spec("texture wavelength must be positive".into()));
        }
        let BlockLayout { rows, cols } = self.layout;
        if rows == 0 || cols == 0 || rows > self.height || cols > self.width {
            return Err(Error::Spec(format!(
                "{rows}x{cols} block layout does not fit a {}x{} scene",
                self.height, self.width
            )));
        }
        if rows * cols < self.classes {
            return Err(Error::Spec(format!(
                "{} classes need more than {rows}x{cols} blocks",
                self.classes
            )));
        }
        Ok(())
    }

    /// Class at a pixel under the block layout.
    pub fn class_at(&self, row: usize, col: usize) -> u16 {
        let BlockLayout { rows, cols } = self.layout;
        let bi = row * rows / self.height;
        let bj = col * cols / self.width;
        ((bi * cols + bj) % self.classes + 1) as u16
    }
}

/// Sum of a few random plane waves, scaled to unit variance on average.
/// Plane wave of unit variance.
struct Texture {
    kr: f64,
    kc: f64,
    phase: f64,
}

impl Texture {
    fn at(&self, row: usize, col: usize) -> f64 {
        std::f64::consts::SQRT_2 * (self.kr * row as f64 + self.kc * col as f64 + self.phase).sin()
    }
}

/// Generates a scene and label map from `spec`; a pure function of the spec.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(HyperCube, LabelMap)> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, &[rng::tag::SYNTH]);
    let (h, w) = (spec.height, spec.width);
    let plane = h * w;

    let levels: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            spec.groups
                .iter()
                .map(|_| spec.base_level + spec.class_spread * rng.gen_range(-1.0..=1.0))
                .collect()
        })
        .collect();
    let k = std::f64::consts::TAU / spec.wavelength;
    let textures: Vec<Texture> = (0..spec.groups.len())
        .map(|g| {
            let angle = std::f64::consts::PI * g as f64 / spec.groups.len() as f64;
            Texture {
                kr: k * angle.cos(),
                kc: k * angle.sin(),
                phase: rng.gen_range(0.0..std::f64::consts::TAU),
            }
        })
        .collect();

    let labels: Vec<u16> = (0..plane).map(|p| spec.class_at(p / w, p % w)).collect();

    let mut samples = vec![0.0; spec.bands * plane];
    for (g, group) in spec.groups.iter().enumerate() {
        let leader: Vec<f64> = (0..plane)
            .map(|p| {
                let class = labels[p] as usize - 1;
                levels[class][g] + spec.texture * textures[g].at(p / w, p % w)
            })
            .collect();
        for (k, &b) in group.iter().enumerate() {
            let out = &mut samples[b * plane..(b + 1) * plane];
            if k == 0 {
                out.copy_from_slice(&leader);
                continue;
            }
            let (lo, hi) = spec.gain_range;
            let gain = if lo == hi { lo } else { rng.gen_range(lo..hi) };
            for (o, &l) in out.iter_mut().zip(&leader) {
                let noise: f64 = if spec.noise_sigma > 0.0 {
                    spec.noise_sigma * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                *o = gain * l + noise;
            }
        }
    }
    for v in &mut samples {
        *v = *v as f32 as f64;
    }

    let cube = HyperCube::new(spec.bands, h, w, samples)?;
    let labels = LabelMap::new(h, w, spec.classes, labels)?;
    Ok((cube, labels))
}
