//! Automatic dataset generation: backgrounds composed with procedurally drawn
//! scale bars and labels, with every annotation taken from the pixels that
//! were actually written.
//!
//! Each image index draws from its own ChaCha8 stream (`seed_from_u64(seed)`
//! then `set_stream(index)`), so growing `count` never changes earlier images.
//! Bars and text are drawn with a 2 px keyline in the opposite ink so they
//! stay separable from any background.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::extract::quantity::{parse_scale_text, Decimal, UnitKind};
use crate::glyphs::{self, CELL_HEIGHT, DIGIT_HEIGHT};
use crate::imaging::{self, bbox_of_points, BoundingBox, ImagingError, Primitive, RasterImage, Rgb, BLACK, WHITE};

pub const SCHEMA_VERSION: u32 = 1;
/// Width of the contrasting keyline around every drawn mark.
pub const HALO: u32 = 2;
/// Procedural and imported backgrounds are squeezed into this luminance band
/// so that pure black and white are reserved for marks and keylines.
pub const BACKGROUND_RANGE: (u8, u8) = (72, 176);
/// Clearance kept between distractor text and the scale-bar block.
pub const DISTRACTOR_MARGIN: u32 = 48;

/// Non-scale words that contain unit-like substrings.
pub const DISTRACTOR_WORDS: &[&str] = &[
    "summary",
    "common",
    "column",
    "medium",
    "humus",
    "aluminum",
    "3 mmol",
    "2 umbrellas",
    "fig. 2",
    "sample 4",
    "zoom",
    "spectrum",
];

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("no usable background images in {0}")]
    EmptyBackgroundSource(PathBuf),
    #[error("label {0:?} does not fit the requested bar geometry")]
    LabelDoesNotFit(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest: {0}")]
    Io(#[from] io::Error),
    #[error("manifest is not valid JSON: {0}")]
    Parse(String),
    #[error("record {record}: {message}")]
    InvariantViolation { record: String, message: String },
}

/// The four bar shapes, in class-id order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BarShape {
    #[serde(rename = "joint_label")]
    JointLabel,
    #[serde(rename = "i_shaped")]
    IShaped,
    #[serde(rename = "ruler")]
    RulerShaped,
    #[serde(rename = "rect")]
    Rectangular,
}

impl BarShape {
    pub const ALL: [BarShape; 4] = [BarShape::JointLabel, BarShape::IShaped, BarShape::RulerShaped, BarShape::Rectangular];

    pub fn class_id(&self) -> u32 {
        match self {
            BarShape::JointLabel => 0,
            BarShape::IShaped => 1,
            BarShape::RulerShaped => 2,
            BarShape::Rectangular => 3,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            BarShape::JointLabel => "joint_label",
            BarShape::IShaped => "i_shaped",
            BarShape::RulerShaped => "ruler",
            BarShape::Rectangular => "rect",
        }
    }
}

/// Ground truth for one drawn bar and its label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleBarAnnotation {
    pub shape: BarShape,
    pub bar_bbox: BoundingBox,
    pub bar_length_px: u32,
    pub label_text: String,
    pub value: Decimal,
    pub unit: UnitKind,
    pub text_bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistractorText {
    pub text: String,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    /// Relative to the dataset root, `/`-separated.
    pub image_path: String,
    pub width: u32,
    pub height: u32,
    pub split: Split,
    pub annotations: Vec<ScaleBarAnnotation>,
    pub distractors: Vec<DistractorText>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub config_digest: String,
    pub records: Vec<ImageRecord>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackgroundSource {
    /// Seeded value-noise texture.
    Procedural,
    /// PNG/JPEG files, resampled to the target size and squeezed into
    /// [`BACKGROUND_RANGE`] as grayscale.
    Directory { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
    Center,
}

impl Anchor {
    pub const ALL: [Anchor; 5] = [Anchor::TopLeft, Anchor::TopRight, Anchor::BottomLeft, Anchor::BottomRight, Anchor::Center];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionPolicy {
    pub anchors: Vec<Anchor>,
    /// Uniform jitter as a fraction of the image size, per axis.
    pub jitter: f64,
}

impl Default for PositionPolicy {
    fn default() -> Self {
        Self { anchors: Anchor::ALL.to_vec(), jitter: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorPolicy {
    LightOnDark,
    DarkOnLight,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub count: usize,
    pub background_source: BackgroundSource,
    pub size: (u32, u32),
    /// Relative weights in class-id order: joint label, I-shaped, ruler, rect.
    pub shape_weights: [f64; 4],
    pub value_pool: Vec<Decimal>,
    pub unit_pool: Vec<UnitKind>,
    pub position_policy: PositionPolicy,
    /// Inclusive. Shapes that need room for caps, ticks or an inset label
    /// may be drawn longer than the sampled length.
    pub bar_length_px_range: (u32, u32),
    pub thickness_range: (u32, u32),
    /// Inclusive range of the glyph magnification.
    pub text_scale_range: (u32, u32),
    pub color_policy: ColorPolicy,
    pub distractor_text_probability: f64,
    /// Probability that a label is written without the space before the unit.
    pub drop_space_probability: f64,
    /// Probability that a micrometer label is written with an ASCII `u`.
    pub ascii_micro_probability: f64,
    pub split_ratios: [f64; 3],
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            count: 100,
            background_source: BackgroundSource::Procedural,
            size: (1024, 728),
            shape_weights: [1.0; 4],
            value_pool: [1, 2, 5, 10, 20, 50, 100, 200, 500].into_iter().map(Decimal::from_integer).collect(),
            unit_pool: UnitKind::ALL.to_vec(),
            position_policy: PositionPolicy::default(),
            bar_length_px_range: (80, 320),
            thickness_range: (4, 12),
            text_scale_range: (2, 4),
            color_policy: ColorPolicy::Random,
            distractor_text_probability: 0.3,
            drop_space_probability: 0.3,
            ascii_micro_probability: 0.2,
            split_ratios: [0.7, 0.15, 0.15],
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::InvalidConfig(m.to_string()));
        if self.count == 0 {
            return bad("count must be positive");
        }
        if self.size.0 < 200 || self.size.1 < 150 {
            return bad("size must be at least 200x150");
        }
        if self.shape_weights.iter().any(|w| !w.is_finite() || *w < 0.0) || self.shape_weights.iter().sum::<f64>() <= 0.0 {
            return bad("shape_weights must be non-negative with a positive sum");
        }
        if self.value_pool.is_empty() || self.value_pool.iter().any(Decimal::is_zero) {
            return bad("value_pool must be non-empty and positive");
        }
        if self.unit_pool.is_empty() {
            return bad("unit_pool must be non-empty");
        }
        if self.position_policy.anchors.is_empty() || !(0.0..=0.5).contains(&self.position_policy.jitter) {
            return bad("position_policy needs anchors and a jitter in [0, 0.5]");
        }
        let (l0, l1) = self.bar_length_px_range;
        if l0 < 20 || l0 > l1 {
            return bad("bar_length_px_range must be non-empty and start at 20 or more");
        }
        let (t0, t1) = self.thickness_range;
        if t0 < 2 || t0 > t1 || t1 > 40 {
            return bad("thickness_range must be non-empty within [2, 40]");
        }
        let (s0, s1) = self.text_scale_range;
        if s0 < 1 || s0 > s1 || s1 > 8 {
            return bad("text_scale_range must be non-empty within [1, 8]");
        }
        for p in [self.distractor_text_probability, self.drop_space_probability, self.ascii_micro_probability] {
            if !(0.0..=1.0).contains(&p) {
                return bad("probabilities must lie in [0, 1]");
            }
        }
        if self.split_ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (self.split_ratios.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return bad("split_ratios must be non-negative and sum to 1");
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

// ---------------------------------------------------------------------------
// Splits

/// Split of each index: the split furthest below its target share so far
/// (earliest split on ties). Depends only on the prefix, and keeps every
/// split within one record of `ratio * n` for every n.
pub fn assign_splits(ratios: &[f64; 3], count: usize) -> Vec<Split> {
    let mut counts = [0usize; 3];
    (0..count)
        .map(|i| {
            let n = (i + 1) as f64;
            let mut best = 0;
            let mut best_deficit = f64::NEG_INFINITY;
            for k in 0..3 {
                if ratios[k] <= 0.0 {
                    continue;
                }
                let deficit = ratios[k] * n - counts[k] as f64;
                if deficit > best_deficit + 1e-12 {
                    best = k;
                    best_deficit = deficit;
                }
            }
            counts[best] += 1;
            Split::ALL[best]
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Backgrounds

fn squeeze(l: u8) -> u8 {
    let (lo, hi) = BACKGROUND_RANGE;
    lo + ((l as u32 * (hi - lo) as u32 + 127) / 255) as u8
}

/// Two-octave value noise with fine grain, confined to [`BACKGROUND_RANGE`].
pub fn procedural_background(width: u32, height: u32, rng: &mut impl Rng) -> RasterImage {
    let coarse = rng.random_range(48..=160u32);
    let octaves = [(coarse, 1.0), (coarse / 3 + 1, 0.35)];
    let lattices: Vec<(u32, u32, u32, Vec<f64>)> = octaves
        .iter()
        .map(|&(cell, _)| {
            let gw = width / cell + 2;
            let gh = height / cell + 2;
            let values = (0..gw * gh).map(|_| rng.random::<f64>()).collect();
            (cell, gw, gh, values)
        })
        .collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let norm: f64 = octaves.iter().map(|o| o.1).sum();
    let (lo, hi) = (BACKGROUND_RANGE.0 as f64, BACKGROUND_RANGE.1 as f64);
    let mut grain_rng = ChaCha8Rng::seed_from_u64(rng.random());
    RasterImage::from_fn(width, height, |x, y| {
        let mut v = 0.0;
        for ((cell, gw, _, values), &(_, weight)) in lattices.iter().zip(&octaves) {
            let fx = x as f64 / *cell as f64;
            let fy = y as f64 / *cell as f64;
            let (ix, iy) = (fx as u32, fy as u32);
            let (tx, ty) = (smooth(fx - ix as f64), smooth(fy - iy as f64));
            let at = |gx: u32, gy: u32| values[(gy * gw + gx) as usize];
            let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
            let bottom = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
            v += weight * (top * (1.0 - ty) + bottom * ty);
        }
        let grain = grain_rng.random_range(-6.0..=6.0);
        let l = (lo + (v / norm) * (hi - lo) + grain).round().clamp(lo, hi) as u8;
        [l; 3]
    })
    .expect("positive dimensions")
}

fn background_files(dir: &Path) -> Result<Vec<PathBuf>, GenError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(GenError::EmptyBackgroundSource(dir.to_path_buf()));
    }
    Ok(files)
}

/// Nearest-neighbour resample of a loaded file into the background band.
fn file_background(path: &Path, width: u32, height: u32) -> Result<RasterImage, GenError> {
    let src = imaging::load_image(path)?;
    let (sw, sh) = (src.width() as u64, src.height() as u64);
    Ok(RasterImage::from_fn(width, height, |x, y| {
        let sx = (x as u64 * sw / width as u64) as u32;
        let sy = (y as u64 * sh / height as u64) as u32;
        [squeeze(src.luma(sx, sy)); 3]
    })?)
}

// ---------------------------------------------------------------------------
// Scale bar rendering

/// Geometry and style of one bar. `origin` is the top-left of the bar itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BarParams {
    pub origin: (u32, u32),
    pub length: u32,
    pub thickness: u32,
    pub text_scale: u32,
    pub ink: Rgb,
    pub keyline: Rgb,
    /// Tick count for rulers (at least 3).
    pub ticks: u32,
}

/// Pixel size of a rendered label's ink: `(width, height)`.
pub fn label_extent(label: &str, scale: u32) -> Result<(u32, u32), ImagingError> {
    let bmp = glyphs::render_text(label, scale)?;
    let rows = if label.chars().map(glyphs::canonical_char).any(|c| matches!(c, 'µ' | 'p' | 'g' | 'j' | 'q' | 'y')) {
        CELL_HEIGHT
    } else {
        DIGIT_HEIGHT
    };
    Ok((bmp.width, rows * scale.max(1)))
}

/// End-cap height of I-shaped bars and total height of ruler ticks.
pub fn cap_height(thickness: u32) -> u32 {
    (3 * thickness).max(10)
}

/// Vertical gap between a bar and the label below it.
pub fn label_gap(thickness: u32) -> u32 {
    thickness.max(8)
}

fn joint_padding(scale: u32) -> (u32, u32) {
    // (vertical pad around the text, horizontal pad either side of it)
    (2 * scale.max(1), (2 * scale).max(6))
}

/// Height of the bar itself for a shape.
pub fn bar_height(shape: BarShape, thickness: u32, label_height: u32, text_scale: u32) -> u32 {
    match shape {
        BarShape::Rectangular => thickness,
        BarShape::IShaped | BarShape::RulerShaped => cap_height(thickness),
        BarShape::JointLabel => label_height + 2 * joint_padding(text_scale).0,
    }
}

/// Inclusive range of lengths that can carry `shape` and `label`.
pub fn length_bounds(shape: BarShape, thickness: u32, label: &str, text_scale: u32) -> Result<(u32, u32), ImagingError> {
    let (tw, th) = label_extent(label, text_scale)?;
    Ok(match shape {
        BarShape::Rectangular => (2 * thickness.max(10), u32::MAX),
        BarShape::IShaped | BarShape::RulerShaped => (4 * cap_height(thickness), u32::MAX),
        BarShape::JointLabel => {
            let h = bar_height(shape, thickness, th, text_scale);
            let gap = tw + 2 * joint_padding(text_scale).1;
            let lo = (gap + 4 * h).max((gap as f64 / 0.55).ceil() as u32);
            (lo, gap * 4)
        }
    })
}

fn keyline_points(ink: &HashSet<(u32, u32)>, width: u32, height: u32) -> Vec<(u32, u32)> {
    let mut out: Vec<(u32, u32)> = Vec::new();
    let mut seen: HashSet<(u32, u32)> = HashSet::new();
    let r = HALO as i64;
    for &(x, y) in ink {
        for dy in -r..=r {
            for dx in -r..=r {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                    continue;
                }
                let p = (nx as u32, ny as u32);
                if !ink.contains(&p) && seen.insert(p) {
                    out.push(p);
                }
            }
        }
    }
    out.sort_unstable();
    out
}

fn rect_points(x0: u32, y0: u32, w: u32, h: u32) -> impl Iterator<Item = (u32, u32)> {
    (y0..y0 + h).flat_map(move |y| (x0..x0 + w).map(move |x| (x, y)))
}

/// Evenly spaced tick offsets (left edges) for a ruler of `length` with
/// ticks `thickness` wide.
pub fn ruler_tick_offsets(length: u32, thickness: u32, ticks: u32) -> Vec<u32> {
    let n = ticks.max(2);
    let span = (length - thickness) as f64;
    (0..n).map(|i| (span * i as f64 / (n - 1) as f64).round() as u32).collect()
}

/// Largest tick count whose ticks stay at least one thickness apart.
pub fn max_ruler_ticks(length: u32, thickness: u32) -> u32 {
    (1 + (length - thickness) / (2 * thickness)).clamp(3, 11)
}

/// Draws one bar plus its label with keylines and returns the annotation.
///
/// Rectangular, I-shaped and ruler bars carry the label centred below them,
/// `label_gap(thickness)` pixels under the bar. A joint-label bar is split in
/// two equal segments with the label centred in the gap.
pub fn render_scale_bar(
    image: &mut RasterImage,
    shape: BarShape,
    params: &BarParams,
    label: &str,
) -> Result<ScaleBarAnnotation, GenError> {
    let quantity = parse_scale_text(label).map_err(|_| GenError::LabelDoesNotFit(label.to_string()))?;
    let (w, h) = (image.width(), image.height());
    let t = params.thickness.max(1);
    let s = params.text_scale.max(1);
    let (tw, th) = label_extent(label, s)?;
    let (lo, hi) = length_bounds(shape, t, label, s)?;
    let len = params.length;
    if len < lo || len > hi {
        return Err(GenError::LabelDoesNotFit(label.to_string()));
    }
    let bh = bar_height(shape, t, th, s);
    let (x0, y0) = params.origin;

    let mut bar: Vec<(u32, u32)> = Vec::new();
    match shape {
        BarShape::Rectangular => {
            bar.extend(rect_points(x0, y0, len, t));
        }
        BarShape::IShaped => {
            bar.extend(rect_points(x0, y0, t, bh));
            bar.extend(rect_points(x0 + len - t, y0, t, bh));
            bar.extend(rect_points(x0 + t, y0 + (bh - t) / 2, len - 2 * t, t));
        }
        BarShape::RulerShaped => {
            bar.extend(rect_points(x0, y0 + bh - t, len, t));
            let n = params.ticks.clamp(3, max_ruler_ticks(len, t));
            for off in ruler_tick_offsets(len, t, n) {
                bar.extend(rect_points(x0 + off, y0, t, bh - t));
            }
        }
        BarShape::JointLabel => {
            let (_, hpad) = joint_padding(s);
            let gap = tw + 2 * hpad;
            let seg = (len - gap) / 2;
            let gap = len - 2 * seg;
            bar.extend(rect_points(x0, y0, seg, bh));
            bar.extend(rect_points(x0 + seg + gap, y0, seg, bh));
        }
    }
    let text_origin = if shape == BarShape::JointLabel {
        (x0 + (len - tw) / 2, y0 + (bh - th) / 2)
    } else {
        let tx = (x0 as i64 + (len as i64 - tw as i64) / 2).max(0) as u32;
        (tx, y0 + bh + label_gap(t))
    };
    let text_points = imaging::rasterize(
        &Primitive::GlyphRun { origin: text_origin, text: label, scale: s },
        1,
        w,
        h,
    )?;
    if bar.iter().any(|&(x, y)| x >= w || y >= h) {
        return Err(ImagingError::OutOfBounds { width: w, height: h }.into());
    }
    let mut ink: HashSet<(u32, u32)> = bar.iter().copied().collect();
    ink.extend(text_points.iter().copied());
    let halo = keyline_points(&ink, w, h);
    imaging::paint(image, &halo, params.keyline);
    imaging::paint(image, &bar, params.ink);
    imaging::paint(image, &text_points, params.ink);

    let bar_bbox = bbox_of_points(bar.iter().copied()).expect("bar has pixels");
    let text_bbox = bbox_of_points(text_points.iter().copied()).expect("label has pixels");
    Ok(ScaleBarAnnotation {
        shape,
        bar_bbox,
        bar_length_px: bar_bbox.width(),
        label_text: label.to_string(),
        value: quantity.value,
        unit: quantity.unit,
        text_bbox,
    })
}

/// Draws keylined text and returns its tight ink box.
pub fn render_text_with_keyline(
    image: &mut RasterImage,
    origin: (u32, u32),
    text: &str,
    scale: u32,
    ink: Rgb,
    keyline: Rgb,
) -> Result<BoundingBox, ImagingError> {
    let points = imaging::rasterize(&Primitive::GlyphRun { origin, text, scale }, 1, image.width(), image.height())?;
    let set: HashSet<(u32, u32)> = points.iter().copied().collect();
    let halo = keyline_points(&set, image.width(), image.height());
    imaging::paint(image, &halo, keyline);
    imaging::paint(image, &points, ink);
    Ok(bbox_of_points(points).expect("text has pixels"))
}

/// Label string for a value and unit, with the configured spelling variations.
pub fn format_label(value: Decimal, unit: UnitKind, drop_space: bool, ascii_micro: bool) -> String {
    let sym = if unit == UnitKind::Micrometer && ascii_micro { "um" } else { unit.symbol() };
    if drop_space {
        format!("{value}{sym}")
    } else {
        format!("{value} {sym}")
    }
}

// ---------------------------------------------------------------------------
// Image synthesis

fn image_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn place(anchor: Anchor, block: (u32, u32), size: (u32, u32), jitter: f64, rng: &mut impl Rng) -> (u32, u32) {
    let margin = HALO + 6;
    let span_x = size.0.saturating_sub(block.0 + 2 * margin);
    let span_y = size.1.saturating_sub(block.1 + 2 * margin);
    let (fx, fy) = match anchor {
        Anchor::TopLeft => (0.0, 0.0),
        Anchor::TopRight => (1.0, 0.0),
        Anchor::BottomLeft => (0.0, 1.0),
        Anchor::BottomRight => (1.0, 1.0),
        Anchor::Center => (0.5, 0.5),
    };
    let jx = rng.random_range(-jitter..=jitter) * size.0 as f64;
    let jy = rng.random_range(-jitter..=jitter) * size.1 as f64;
    let x = (fx * span_x as f64 + jx).round().clamp(0.0, span_x as f64) as u32;
    let y = (fy * span_y as f64 + jy).round().clamp(0.0, span_y as f64) as u32;
    (x + margin, y + margin)
}

/// Synthesizes image `index` of a dataset. Pure in `(config, seed, index)`.
pub fn generate_image(config: &GenConfig, seed: u64, index: usize) -> Result<(RasterImage, ImageRecord), GenError> {
    let mut rng = image_rng(seed, index as u64);
    let (w, h) = config.size;
    let mut image = match &config.background_source {
        BackgroundSource::Procedural => procedural_background(w, h, &mut rng),
        BackgroundSource::Directory { path } => {
            let files = background_files(path)?;
            let pick = rng.random_range(0..files.len());
            file_background(&files[pick], w, h)?
        }
    };

    let shape_dist = WeightedIndex::new(config.shape_weights).map_err(|e| GenError::InvalidConfig(e.to_string()))?;
    let shape = BarShape::ALL[shape_dist.sample(&mut rng)];
    let value = config.value_pool[rng.random_range(0..config.value_pool.len())];
    let unit = config.unit_pool[rng.random_range(0..config.unit_pool.len())];
    let drop_space = rng.random_bool(config.drop_space_probability);
    let ascii_micro = unit == UnitKind::Micrometer && rng.random_bool(config.ascii_micro_probability);
    let label = format_label(value, unit, drop_space, ascii_micro);
    let t = rng.random_range(config.thickness_range.0..=config.thickness_range.1);
    let s = rng.random_range(config.text_scale_range.0..=config.text_scale_range.1);
    let light = match config.color_policy {
        ColorPolicy::LightOnDark => true,
        ColorPolicy::DarkOnLight => false,
        ColorPolicy::Random => rng.random_bool(0.5),
    };
    let (ink, keyline) = if light { (WHITE, BLACK) } else { (BLACK, WHITE) };
    let sampled_len = rng.random_range(config.bar_length_px_range.0..=config.bar_length_px_range.1);
    let ticks_wanted = rng.random_range(3..=11u32);
    let anchor = config.position_policy.anchors[rng.random_range(0..config.position_policy.anchors.len())];

    let (tw, th) = label_extent(&label, s)?;
    let (lo, hi) = length_bounds(shape, t, &label, s)?;
    let max_fit = w - 2 * (HALO + 8) - 2;
    let len = sampled_len.clamp(lo, hi).min(max_fit);
    if len < lo {
        return Err(GenError::LabelDoesNotFit(label));
    }
    let bh = bar_height(shape, t, th, s);
    let block = if shape == BarShape::JointLabel {
        (len, bh)
    } else {
        (len.max(tw), bh + label_gap(t) + th)
    };
    let (bx, by) = place(anchor, block, (w, h), config.position_policy.jitter, &mut rng);
    let origin = (bx + (block.0 - len) / 2, by);
    let params = BarParams { origin, length: len, thickness: t, text_scale: s, ink, keyline, ticks: ticks_wanted };
    let annotation = render_scale_bar(&mut image, shape, &params, &label)?;

    let mut distractors = Vec::new();
    if rng.random_bool(config.distractor_text_probability) {
        let n = rng.random_range(1..=2);
        let keep_out = annotation
            .bar_bbox
            .union(&annotation.text_bbox)
            .expand(DISTRACTOR_MARGIN, w, h);
        let mut taken = vec![keep_out];
        for _ in 0..n {
            let word = DISTRACTOR_WORDS[rng.random_range(0..DISTRACTOR_WORDS.len())];
            let ds = rng.random_range(config.text_scale_range.0..=config.text_scale_range.1);
            let bmp = glyphs::render_text(word, ds)?;
            let pad = HALO + 4;
            if bmp.width + 2 * pad >= w || bmp.height + 2 * pad >= h {
                continue;
            }
            for _attempt in 0..40 {
                let x = rng.random_range(pad..w - bmp.width - pad);
                let y = rng.random_range(pad..h - bmp.height - pad);
                let cell = BoundingBox { x_min: x, y_min: y, x_max: x + bmp.width, y_max: y + bmp.height };
                if taken.iter().any(|b| b.intersects(&cell.expand(pad, w, h))) {
                    continue;
                }
                let bbox = render_text_with_keyline(&mut image, (x, y), word, ds, ink, keyline)?;
                taken.push(cell.expand(DISTRACTOR_MARGIN / 2, w, h));
                distractors.push(DistractorText { text: word.to_string(), bbox });
                break;
            }
        }
    }

    let record = ImageRecord {
        image_path: image_rel_path(index),
        width: w,
        height: h,
        split: Split::Train,
        annotations: vec![annotation],
        distractors,
    };
    Ok((image, record))
}

pub fn image_rel_path(index: usize) -> String {
    format!("images/img_{index:06}.png")
}

/// Writes `config.count` images, per-image label files and sidecars, the
/// manifest and the config into `out_dir`.
pub fn generate_dataset(config: &GenConfig, seed: u64, out_dir: &Path) -> Result<DatasetManifest, GenError> {
    config.validate()?;
    if let BackgroundSource::Directory { path } = &config.background_source {
        background_files(path)?;
    }
    fs::create_dir_all(out_dir.join("images"))?;
    let splits = assign_splits(&config.split_ratios, config.count);
    let records: Vec<ImageRecord> = (0..config.count)
        .into_par_iter()
        .map(|i| -> Result<ImageRecord, GenError> {
            let (image, mut record) = generate_image(config, seed, i)?;
            imaging::save_image(&image, out_dir.join(&record.image_path))?;
            record.split = splits[i];
            Ok(record)
        })
        .collect::<Result<_, _>>()?;
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        seed,
        config_digest: config.digest(),
        records,
    };
    export_annotations(&manifest, out_dir)?;
    fs::write(out_dir.join("gen_config.json"), serde_json::to_string_pretty(config)? + "\n")?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// Export / import

fn stem(image_path: &str) -> String {
    Path::new(image_path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| image_path.replace('/', "_"))
}

/// One detector-training line: `<class> <cx> <cy> <w> <h>`, normalized.
pub fn training_line(shape: BarShape, bbox: &BoundingBox, width: u32, height: u32) -> String {
    let (cx, cy) = bbox.center();
    format!(
        "{} {:.6} {:.6} {:.6} {:.6}",
        shape.class_id(),
        cx / width as f64,
        cy / height as f64,
        bbox.width() as f64 / width as f64,
        bbox.height() as f64 / height as f64
    )
}

/// Writes `labels/<stem>.txt`, `annotations/<stem>.json` and `manifest.json`.
pub fn export_annotations(manifest: &DatasetManifest, out_dir: &Path) -> Result<(), GenError> {
    fs::create_dir_all(out_dir.join("labels"))?;
    fs::create_dir_all(out_dir.join("annotations"))?;
    for record in &manifest.records {
        let stem = stem(&record.image_path);
        let mut text = String::new();
        for a in &record.annotations {
            text.push_str(&training_line(a.shape, &a.bar_bbox, record.width, record.height));
            text.push('\n');
        }
        fs::write(out_dir.join("labels").join(format!("{stem}.txt")), text)?;
        fs::write(
            out_dir.join("annotations").join(format!("{stem}.json")),
            serde_json::to_string_pretty(record)? + "\n",
        )?;
    }
    fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(manifest)? + "\n")?;
    Ok(())
}

/// Loads and validates a manifest; image paths resolve against its directory.
pub fn import_manifest(path: &Path) -> Result<DatasetManifest, ManifestError> {
    let bytes = fs::read(path)?;
    let manifest: DatasetManifest = serde_json::from_slice(&bytes).map_err(|e| ManifestError::Parse(e.to_string()))?;
    let root = path.parent().unwrap_or(Path::new("."));
    validate_manifest(&manifest, Some(root))?;
    Ok(manifest)
}

/// Checks every manifest invariant; with `root`, also that images exist.
pub fn validate_manifest(manifest: &DatasetManifest, root: Option<&Path>) -> Result<(), ManifestError> {
    let violation = |record: &str, message: String| ManifestError::InvariantViolation { record: record.to_string(), message };
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(violation("<root>", format!("unsupported schema_version {}", manifest.schema_version)));
    }
    let mut seen = HashSet::new();
    for r in &manifest.records {
        let id = r.image_path.as_str();
        if !seen.insert(id) {
            return Err(violation(id, "duplicate image path".into()));
        }
        if r.width == 0 || r.height == 0 {
            return Err(violation(id, "image dimensions must be positive".into()));
        }
        if let Some(root) = root {
            let p = root.join(id);
            if !p.is_file() {
                return Err(violation(id, format!("image file {} is missing", p.display())));
            }
        }
        let check_box = |what: &str, b: &BoundingBox| {
            if !b.is_valid() || !b.fits_within(r.width, r.height) {
                Err(violation(id, format!("{what} {b} is not a valid box inside {}x{}", r.width, r.height)))
            } else {
                Ok(())
            }
        };
        for (i, a) in r.annotations.iter().enumerate() {
            check_box(&format!("annotation {i} bar_bbox"), &a.bar_bbox)?;
            check_box(&format!("annotation {i} text_bbox"), &a.text_bbox)?;
            if a.bar_length_px != a.bar_bbox.width() {
                return Err(violation(id, format!("annotation {i} bar_length_px differs from the bar width")));
            }
            match parse_scale_text(&a.label_text) {
                Ok(q) if q.value == a.value && q.unit == a.unit => {}
                _ => return Err(violation(id, format!("annotation {i} label {:?} does not read as {} {}", a.label_text, a.value, a.unit))),
            }
            let nested = a.bar_bbox.contains_box(&a.text_bbox);
            let disjoint = !a.bar_bbox.intersects(&a.text_bbox);
            let ok = if a.shape == BarShape::JointLabel { nested } else { disjoint };
            if !ok {
                return Err(violation(id, format!("annotation {i} text box placement is wrong for shape {}", a.shape.as_str())));
            }
        }
        for d in &r.distractors {
            check_box("distractor bbox", &d.bbox)?;
        }
    }
    Ok(())
}
