//! Text region discovery and recognition.
//!
//! The built-in engine matches glyph-sized column segments against the
//! bundled atlas by normalized cross-correlation of binary ink masks. External
//! engines speak the adapter protocol. [`hybrid_recognize`] combines a general
//! and a numeral engine with validation-driven fallback.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::adapter::{AdapterError, AdapterPool};
use crate::detect::high_contrast_labels;
use crate::extract::quantity::parse_scale_text;
use crate::glyphs::{self, Glyph, CELL_HEIGHT};
use crate::imaging::{self, BoundingBox, Polarity, RasterImage};

/// Crops whose luminance spread is below this carry no readable ink.
pub const MIN_CONTRAST: u8 = 48;

#[derive(Debug, Error)]
pub enum OcrError {
    #[error("region holds no ink")]
    EmptyRegion,
    #[error("region {0} lies outside the image")]
    RegionOutOfBounds(BoundingBox),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error("cannot hand image to adapter: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcrEngine {
    BuiltinGlyph,
    ExternalGeneral,
    ExternalNumeral,
    Fused,
}

/// A recognized piece of text. `validated` is true iff `text` parses as a
/// scale label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextRegion {
    pub bbox: BoundingBox,
    pub text: String,
    pub confidence: f64,
    pub engine: OcrEngine,
    pub center: (f64, f64),
    pub validated: bool,
}

impl TextRegion {
    pub fn new(bbox: BoundingBox, text: impl Into<String>, confidence: f64, engine: OcrEngine) -> Self {
        let text = text.into();
        let confidence = if text.is_empty() { 0.0 } else { confidence.clamp(0.0, 1.0) };
        let validated = parse_scale_text(&text).is_ok();
        Self { bbox, text, confidence, engine, center: bbox.center(), validated }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recognition {
    pub text: String,
    pub confidence: f64,
}

impl Recognition {
    fn nothing() -> Self {
        Self { text: String::new(), confidence: 0.0 }
    }
}

/// An image being read, with a lazily written PNG copy for external engines.
pub struct OcrInput<'a> {
    pub image: &'a RasterImage,
    file: Mutex<Option<tempfile::TempPath>>,
}

impl<'a> OcrInput<'a> {
    pub fn new(image: &'a RasterImage) -> Self {
        Self { image, file: Mutex::new(None) }
    }

    /// Absolute path of a PNG copy of the image, written on first use.
    pub fn path(&self) -> std::io::Result<PathBuf> {
        let mut slot = self.file.lock().unwrap_or_else(|p| p.into_inner());
        if slot.is_none() {
            let file = tempfile::Builder::new().prefix("sembar-").suffix(".png").tempfile()?;
            std::fs::write(file.path(), imaging::encode_png(self.image))?;
            *slot = Some(file.into_temp_path());
        }
        std::fs::canonicalize(slot.as_ref().unwrap())
    }
}

pub trait TextRecognizer: Send + Sync {
    fn engine(&self) -> OcrEngine;
    fn recognize(&self, input: &OcrInput<'_>, region: BoundingBox) -> Result<Recognition, OcrError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BuiltinRecognizer;

impl TextRecognizer for BuiltinRecognizer {
    fn engine(&self) -> OcrEngine {
        OcrEngine::BuiltinGlyph
    }

    fn recognize(&self, input: &OcrInput<'_>, region: BoundingBox) -> Result<Recognition, OcrError> {
        recognize_builtin(input.image, region)
    }
}

#[derive(Debug, Clone)]
pub struct ExternalRecognizer {
    pub pool: Arc<AdapterPool>,
    pub role: OcrEngine,
}

#[derive(Debug, Deserialize)]
struct ExternalReply {
    text: String,
    confidence: f64,
}

impl TextRecognizer for ExternalRecognizer {
    fn engine(&self) -> OcrEngine {
        self.role
    }

    fn recognize(&self, input: &OcrInput<'_>, region: BoundingBox) -> Result<Recognition, OcrError> {
        check_region(input.image, region)?;
        let path = input.path()?;
        let reply: ExternalReply = self.pool.call(json!({
            "task": "ocr",
            "image": path.display().to_string(),
            "region": region.to_array(),
        }))?;
        if !(0.0..=1.0).contains(&reply.confidence) {
            return Err(AdapterError::Protocol(format!("confidence {} outside [0, 1]", reply.confidence)).into());
        }
        Ok(Recognition { text: reply.text, confidence: reply.confidence })
    }
}

/// Which engine fills a role.
#[derive(Debug, Clone, Default)]
pub enum EngineSelector {
    #[default]
    Builtin,
    External(Arc<AdapterPool>),
}

impl EngineSelector {
    fn recognizer(&self, role: OcrEngine) -> Box<dyn TextRecognizer> {
        match self {
            EngineSelector::Builtin => Box::new(BuiltinRecognizer),
            EngineSelector::External(pool) => Box::new(ExternalRecognizer { pool: pool.clone(), role }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionPolicy {
    #[default]
    PreferNumeralOnDigitConflict,
}

#[derive(Debug, Clone)]
pub struct OcrEngineConfig {
    pub general: EngineSelector,
    pub numeral: EngineSelector,
    pub fallback_confidence: f64,
    pub fusion_policy: FusionPolicy,
}

impl Default for OcrEngineConfig {
    fn default() -> Self {
        Self {
            general: EngineSelector::Builtin,
            numeral: EngineSelector::Builtin,
            fallback_confidence: 0.5,
            fusion_policy: FusionPolicy::PreferNumeralOnDigitConflict,
        }
    }
}

fn check_region(image: &RasterImage, region: BoundingBox) -> Result<(), OcrError> {
    if !region.is_valid() || !region.fits_within(image.width(), image.height()) {
        return Err(OcrError::RegionOutOfBounds(region));
    }
    Ok(())
}

/// Reads one region with the given engine.
pub fn recognize(image: &RasterImage, region: BoundingBox, engine: &EngineSelector) -> Result<Recognition, OcrError> {
    engine.recognizer(OcrEngine::ExternalGeneral).recognize(&OcrInput::new(image), region)
}

// ---------------------------------------------------------------------------
// Region discovery

fn glyph_like(b: &BoundingBox, fill: f64) -> bool {
    let (w, h) = (b.width(), b.height());
    (6..=120).contains(&h) && w < 2 * h && !(fill >= 0.9 && w >= 2 * h)
}

fn same_text_box(a: &BoundingBox, b: &BoundingBox) -> bool {
    const TOL: u32 = 3;
    crate::metrics::iou(a, b) >= 0.5
        && a.x_min.abs_diff(b.x_min) <= TOL
        && a.y_min.abs_diff(b.y_min) <= TOL
        && a.x_max.abs_diff(b.x_max) <= TOL
        && a.y_max.abs_diff(b.y_max) <= TOL
}

fn group_boxes(boxes: &[BoundingBox]) -> Vec<BoundingBox> {
    let n = boxes.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&boxes[i], &boxes[j]);
            let (ha, hb) = (a.height() as f64, b.height() as f64);
            let hmin = ha.min(hb);
            if ha.max(hb) > 1.5 * hmin {
                continue;
            }
            let overlap = a.y_max.min(b.y_max) as f64 - a.y_min.max(b.y_min) as f64;
            if overlap < 0.5 * hmin {
                continue;
            }
            let gap = a.x_min.max(b.x_min) as f64 - a.x_max.min(b.x_max) as f64;
            if gap > 1.2 * hmin {
                continue;
            }
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            if ri != rj {
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    let mut groups: Vec<Option<BoundingBox>> = vec![None; n];
    for (i, b) in boxes.iter().enumerate() {
        let r = find(&mut parent, i);
        groups[r] = Some(match groups[r] {
            Some(g) => g.union(b),
            None => *b,
        });
    }
    groups.into_iter().flatten().collect()
}

/// Candidate text boxes: high-contrast glyph-sized components of either
/// polarity, grouped into words and lines of similar height, top to bottom
/// then left to right.
pub fn detect_text_regions(image: &RasterImage) -> Vec<BoundingBox> {
    let luma = image.luma_plane();
    let mut regions: Vec<BoundingBox> = Vec::new();
    for polarity in Polarity::BOTH {
        let bin = imaging::binarize_luma(&luma, image.width(), image.height(), polarity);
        if bin.degenerate {
            continue;
        }
        let map = imaging::connected_components(&bin.mask);
        let contrast = high_contrast_labels(&map, &luma, bin.threshold, polarity, 0.6);
        let boxes: Vec<BoundingBox> = map
            .components()
            .iter()
            .filter(|c| contrast[c.label as usize - 1] && glyph_like(&c.bbox, c.fill_ratio()))
            .map(|c| c.bbox)
            .collect();
        for g in group_boxes(&boxes) {
            // Keyline rings of one polarity duplicate the text of the other;
            // the tighter box wins. Boxes whose edges disagree by more than a
            // ring width hold different text and are both kept.
            if let Some(i) = regions.iter().position(|r| same_text_box(r, &g)) {
                if g.area() < regions[i].area() {
                    regions[i] = g;
                }
            } else {
                regions.push(g);
            }
        }
    }
    regions.sort_by_key(|b| (b.y_min, b.x_min, b.y_max, b.x_max));
    regions
}

// ---------------------------------------------------------------------------
// Built-in glyph recognizer

struct InkCrop {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl InkCrop {
    fn get(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as u32) < self.width && (y as u32) < self.height && self.bits[(y as u32 * self.width + x as u32) as usize]
    }
}

/// Normalized cross-correlation of two equally sized binary masks given the
/// pixel count and the three sums.
fn binary_ncc(n: f64, a: f64, b: f64, both: f64) -> f64 {
    let cov = both - a * b / n;
    let va = a - a * a / n;
    let vb = b - b * b / n;
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

fn match_segment(ink: &InkCrop, x0: u32, x1: u32, top: i64, s: u32, templates: &[Glyph]) -> (char, f64) {
    let sw = x1 - x0;
    let rows = CELL_HEIGHT * s;
    let mut best = (templates[0].ch, f64::NEG_INFINITY);
    for g in templates {
        let gw = g.width * s;
        let w = gw.max(sw);
        let (mut a, mut b, mut both) = (0u32, 0u32, 0u32);
        for y in 0..rows {
            for x in 0..w {
                let t = x < gw && g.get(x / s, y / s);
                let p = x < sw && ink.get((x0 + x) as i64, top + y as i64);
                a += t as u32;
                b += p as u32;
                both += (t && p) as u32;
            }
        }
        let score = binary_ncc((w * rows) as f64, a as f64, b as f64, both as f64);
        if score > best.1 {
            best = (g.ch, score);
        }
    }
    best
}

fn read_with_hypothesis(ink: &InkCrop, segments: &[(u32, u32)], top: i64, s: u32, templates: &[Glyph]) -> Recognition {
    let mut text = String::new();
    let mut total = 0.0;
    for (i, &(x0, x1)) in segments.iter().enumerate() {
        if i > 0 {
            let gap = x0 - segments[i - 1].1;
            if gap as f64 >= 2.5 * s as f64 {
                text.push(' ');
            }
        }
        let (ch, score) = match_segment(ink, x0, x1, top, s, templates);
        text.push(ch);
        total += score.max(0.0);
    }
    Recognition { text, confidence: total / segments.len() as f64 }
}

fn read_polarity(luma: &[u8], width: u32, height: u32, polarity: Polarity, templates: &[Glyph]) -> Option<Recognition> {
    let oriented: Vec<u8> = match polarity {
        Polarity::LightOnDark => luma.to_vec(),
        Polarity::DarkOnLight => luma.iter().map(|&l| 255 - l).collect(),
    };
    let lo = *oriented.iter().min()? as f64;
    let hi = *oriented.iter().max()? as f64;
    let threshold = lo + 0.75 * (hi - lo);
    let ink = InkCrop { width, height, bits: oriented.iter().map(|&v| v as f64 >= threshold).collect() };

    let col_has = |x: u32| (0..height).any(|y| ink.bits[(y * width + x) as usize]);
    let row_has = |y: u32| (0..width).any(|x| ink.bits[(y * width + x) as usize]);
    let top = (0..height).find(|&y| row_has(y))?;
    let bottom = (0..height).rev().find(|&y| row_has(y))?;
    let ink_h = bottom - top + 1;

    let mut segments = Vec::new();
    let mut start = None;
    for x in 0..width {
        match (col_has(x), start) {
            (true, None) => start = Some(x),
            (false, Some(s)) => {
                segments.push((s, x));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        segments.push((s, width));
    }

    // (rows the ink spans, cell row of the ink top)
    let hypotheses = [(7u32, 0u32), (9, 0), (5, 2), (7, 2)];
    let mut tried = Vec::new();
    let mut best: Option<Recognition> = None;
    for (rows, offset) in hypotheses {
        let s = ((ink_h as f64 / rows as f64).round() as u32).max(1);
        if (s * rows).abs_diff(ink_h) > (s / 2).max(1) || tried.contains(&(s, offset)) {
            continue;
        }
        tried.push((s, offset));
        let cell_top = top as i64 - (offset * s) as i64;
        let r = read_with_hypothesis(&ink, &segments, cell_top, s, templates);
        if best.as_ref().is_none_or(|b| r.confidence > b.confidence) {
            best = Some(r);
        }
    }
    best
}

/// Reads a region with the bundled atlas. Tries both ink polarities and the
/// plausible glyph scales and keeps the best-correlating reading.
pub fn recognize_builtin(image: &RasterImage, region: BoundingBox) -> Result<Recognition, OcrError> {
    check_region(image, region)?;
    let (w, h) = (region.width(), region.height());
    let mut luma = Vec::with_capacity((w * h) as usize);
    for y in region.y_min..region.y_max {
        for x in region.x_min..region.x_max {
            luma.push(image.luma(x, y));
        }
    }
    let lo = *luma.iter().min().unwrap();
    let hi = *luma.iter().max().unwrap();
    if hi - lo < MIN_CONTRAST {
        return Err(OcrError::EmptyRegion);
    }
    let templates = glyphs::scale_templates();
    Polarity::BOTH
        .iter()
        .filter_map(|&p| read_polarity(&luma, w, h, p, &templates))
        .fold(None, |best: Option<Recognition>, r| match best {
            Some(b) if b.confidence >= r.confidence => Some(b),
            _ => Some(r),
        })
        .ok_or(OcrError::EmptyRegion)
}

// ---------------------------------------------------------------------------
// Hybrid fusion

/// The leading number of a reading (digits and points), used to compare engines.
pub fn digit_substring(text: &str) -> &str {
    let t = text.trim_start();
    let end = t.find(|c: char| !(c.is_ascii_digit() || c == '.')).unwrap_or(t.len());
    &t[..end]
}

fn attempt(r: &dyn TextRecognizer, input: &OcrInput<'_>, region: BoundingBox) -> Result<Recognition, OcrError> {
    match r.recognize(input, region) {
        Err(OcrError::EmptyRegion) => Ok(Recognition::nothing()),
        other => other,
    }
}

/// General engine first; the numeral engine is consulted only when the
/// general reading is invalid or below `fallback_confidence`. `numeral`
/// of `None` means the numeral role is filled by the general engine itself,
/// whose reading is then reused.
pub fn hybrid_recognize_with(
    input: &OcrInput<'_>,
    region: BoundingBox,
    general: &dyn TextRecognizer,
    numeral: Option<&dyn TextRecognizer>,
    fallback_confidence: f64,
) -> Result<TextRegion, OcrError> {
    check_region(input.image, region)?;
    let g = attempt(general, input, region)?;
    let g_valid = parse_scale_text(&g.text).is_ok();
    if g_valid && g.confidence >= fallback_confidence {
        return Ok(TextRegion::new(region, g.text, g.confidence, general.engine()));
    }
    let (n, n_engine) = match numeral {
        Some(r) => (attempt(r, input, region)?, r.engine()),
        None => (g.clone(), general.engine()),
    };
    let n_valid = parse_scale_text(&n.text).is_ok();
    let fused_conf = g.confidence.max(n.confidence);
    let region_of = |r: &Recognition, engine, conf| TextRegion::new(region, r.text.clone(), conf, engine);
    Ok(match (g_valid, n_valid) {
        (true, false) => region_of(&g, OcrEngine::Fused, g.confidence),
        (false, true) => region_of(&n, OcrEngine::Fused, n.confidence),
        (true, true) => {
            if digit_substring(&g.text) != digit_substring(&n.text) || n.confidence >= g.confidence {
                region_of(&n, OcrEngine::Fused, fused_conf)
            } else {
                region_of(&g, OcrEngine::Fused, fused_conf)
            }
        }
        (false, false) => {
            if n.confidence > g.confidence {
                region_of(&n, n_engine, n.confidence)
            } else {
                region_of(&g, general.engine(), g.confidence)
            }
        }
    })
}

pub fn hybrid_recognize(image: &RasterImage, region: BoundingBox, config: &OcrEngineConfig) -> Result<TextRegion, OcrError> {
    hybrid_recognize_input(&OcrInput::new(image), region, config)
}

pub fn hybrid_recognize_input(input: &OcrInput<'_>, region: BoundingBox, config: &OcrEngineConfig) -> Result<TextRegion, OcrError> {
    let general = config.general.recognizer(OcrEngine::ExternalGeneral);
    let numeral = match (&config.general, &config.numeral) {
        (EngineSelector::Builtin, EngineSelector::Builtin) => None,
        (_, sel) => Some(sel.recognizer(OcrEngine::ExternalNumeral)),
    };
    hybrid_recognize_with(input, region, general.as_ref(), numeral.as_deref(), config.fallback_confidence)
}
