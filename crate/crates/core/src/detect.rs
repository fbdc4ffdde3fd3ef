//! Scale-bar localization.
//!
//! The built-in detector is classical: both binarization polarities are
//! labeled, high-contrast components are screened by geometry, and the
//! survivors are classified against the four bar shapes. Learned detectors
//! plug in through the adapter protocol and get the same NMS and cutoff.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::adapter::{AdapterError, AdapterPool};
use crate::autodg::BarShape;
use crate::imaging::{self, BoundingBox, ComponentMap, Polarity, RasterImage};
use crate::metrics::iou;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error("cannot hand image to adapter: {0}")]
    Io(#[from] std::io::Error),
}

/// Shape label of a detection; `Unknown` for bar-like marks that match no rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectedShape {
    JointLabel,
    IShaped,
    #[serde(rename = "ruler")]
    RulerShaped,
    #[serde(rename = "rect")]
    Rectangular,
    Unknown,
}

impl DetectedShape {
    pub fn bar_shape(&self) -> Option<BarShape> {
        match self {
            DetectedShape::JointLabel => Some(BarShape::JointLabel),
            DetectedShape::IShaped => Some(BarShape::IShaped),
            DetectedShape::RulerShaped => Some(BarShape::RulerShaped),
            DetectedShape::Rectangular => Some(BarShape::Rectangular),
            DetectedShape::Unknown => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            DetectedShape::JointLabel => "joint_label",
            DetectedShape::IShaped => "i_shaped",
            DetectedShape::RulerShaped => "ruler",
            DetectedShape::Rectangular => "rect",
            DetectedShape::Unknown => "unknown",
        }
    }

    pub fn from_class(name: &str) -> Option<Self> {
        Some(match name {
            "joint_label" => DetectedShape::JointLabel,
            "i_shaped" => DetectedShape::IShaped,
            "ruler" => DetectedShape::RulerShaped,
            "rect" => DetectedShape::Rectangular,
            "unknown" => DetectedShape::Unknown,
            _ => return None,
        })
    }
}

impl From<BarShape> for DetectedShape {
    fn from(shape: BarShape) -> Self {
        match shape {
            BarShape::JointLabel => DetectedShape::JointLabel,
            BarShape::IShaped => DetectedShape::IShaped,
            BarShape::RulerShaped => DetectedShape::RulerShaped,
            BarShape::Rectangular => DetectedShape::Rectangular,
        }
    }
}

/// A located bar. `center` is always `bbox.center()`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub shape: DetectedShape,
    pub confidence: f64,
    pub center: (f64, f64),
}

impl Detection {
    pub fn new(bbox: BoundingBox, shape: DetectedShape, confidence: f64) -> Self {
        Self {
            bbox,
            shape,
            confidence: confidence.clamp(0.0, 1.0),
            center: bbox.center(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum DetectorBackend {
    Builtin,
    External(Arc<AdapterPool>),
}

/// Tunables of the built-in detector and the shared post-processing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub min_width: u32,
    pub min_area: u64,
    pub min_aspect: f64,
    /// Fraction of bbox columns that must hold a single vertical run.
    pub min_single_run_fraction: f64,
    /// How far (as a fraction of the distance from the threshold to the
    /// image extreme) a component's mean luminance must sit.
    pub contrast_fraction: f64,
    pub nms_iou: f64,
    /// Detections below this confidence are dropped.
    pub confidence_cutoff: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            min_width: 20,
            min_area: 60,
            min_aspect: 2.0,
            min_single_run_fraction: 0.8,
            contrast_fraction: 0.6,
            nms_iou: 0.5,
            confidence_cutoff: 0.25,
        }
    }
}

pub fn detect_bars(image: &RasterImage, backend: &DetectorBackend) -> Result<Vec<Detection>, DetectError> {
    detect_bars_with(image, backend, &DetectorParams::default())
}

/// Detections sorted by descending confidence, after NMS and the cutoff.
pub fn detect_bars_with(
    image: &RasterImage,
    backend: &DetectorBackend,
    params: &DetectorParams,
) -> Result<Vec<Detection>, DetectError> {
    let raw = match backend {
        DetectorBackend::Builtin => builtin_candidates(image, params),
        DetectorBackend::External(pool) => external_detections(image, pool)?,
    };
    let mut kept: Vec<Detection> = nms(raw, params.nms_iou)
        .into_iter()
        .filter(|d| d.confidence >= params.confidence_cutoff)
        .collect();
    sort_by_rank(&mut kept);
    Ok(kept)
}

/// Ranking used everywhere: confidence desc, then smaller area, then left-to-right.
fn sort_by_rank(dets: &mut [Detection]) {
    dets.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.bbox.area().cmp(&b.bbox.area()))
            .then(a.bbox.x_min.cmp(&b.bbox.x_min))
            .then(a.bbox.y_min.cmp(&b.bbox.y_min))
    });
}

/// Greedy non-maximum suppression: a detection is dropped when its IoU with
/// an already kept, better-ranked detection exceeds `iou_threshold`.
pub fn nms(mut detections: Vec<Detection>, iou_threshold: f64) -> Vec<Detection> {
    sort_by_rank(&mut detections);
    let mut kept: Vec<Detection> = Vec::with_capacity(detections.len());
    for d in detections {
        if kept.iter().all(|k| iou(&k.bbox, &d.bbox) <= iou_threshold) {
            kept.push(d);
        }
    }
    kept
}

// ---------------------------------------------------------------------------
// Built-in detector

/// One or two components considered together as a bar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeCandidate {
    pub bbox: BoundingBox,
    pub labels: Vec<u32>,
}

impl ShapeCandidate {
    pub fn single(map: &ComponentMap, label: u32) -> Self {
        Self {
            bbox: map.component(label).bbox,
            labels: vec![label],
        }
    }

    fn pixel_count(&self, map: &ComponentMap) -> u64 {
        self.labels.iter().map(|&l| map.component(l).pixel_count).sum()
    }
}

/// Vertical runs `(start_row, length)` of candidate pixels, per bbox column,
/// rows relative to the bbox top.
fn column_runs(map: &ComponentMap, cand: &ShapeCandidate) -> Vec<Vec<(u32, u32)>> {
    let b = cand.bbox;
    (b.x_min..b.x_max)
        .map(|x| {
            let mut runs = Vec::new();
            let mut start: Option<u32> = None;
            for y in b.y_min..b.y_max {
                let on = cand.labels.contains(&map.label_at(x, y));
                match (on, start) {
                    (true, None) => start = Some(y - b.y_min),
                    (false, Some(s)) => {
                        runs.push((s, y - b.y_min - s));
                        start = None;
                    }
                    _ => {}
                }
            }
            if let Some(s) = start {
                runs.push((s, b.y_max - b.y_min - s));
            }
            runs
        })
        .collect()
}

fn single_run_fraction(runs: &[Vec<(u32, u32)>]) -> f64 {
    runs.iter().filter(|r| r.len() == 1).count() as f64 / runs.len().max(1) as f64
}

fn ishaped_score(runs: &[Vec<(u32, u32)>], width: u32, height: u32) -> Option<f64> {
    if height < 5 || (width as f64) < 3.0 * height as f64 {
        return None;
    }
    let full = |col: &Vec<(u32, u32)>| col.len() == 1 && col[0].1 as f64 >= 0.9 * height as f64;
    let left = runs.iter().take_while(|c| full(c)).count();
    let right = runs.iter().rev().take_while(|c| full(c)).count();
    let max_cap = 2usize.max((0.15 * width as f64) as usize);
    if left == 0 || right == 0 || left > max_cap || right > max_cap || left + right >= runs.len() {
        return None;
    }
    let middle = &runs[left..runs.len() - right];
    let h = height as f64;
    let good = middle
        .iter()
        .filter(|c| {
            c.len() == 1 && {
                let (s, len) = c[0];
                let centre = s as f64 + len as f64 / 2.0;
                (len as f64) <= 0.5 * h && centre >= h / 4.0 && centre <= 3.0 * h / 4.0
            }
        })
        .count();
    let consistency = good as f64 / middle.len() as f64;
    if consistency < 0.9 {
        return None;
    }
    let symmetry = left.min(right) as f64 / left.max(right) as f64;
    Some(0.6 + 0.4 * consistency * symmetry)
}

fn ruler_score(runs: &[Vec<(u32, u32)>], width: u32, height: u32) -> Option<f64> {
    if (width as f64) < 3.0 * height as f64 {
        return None;
    }
    let bottom_aligned = runs
        .iter()
        .filter(|c| c.len() == 1 && c[0].0 + c[0].1 + 1 >= height)
        .count();
    if (bottom_aligned as f64) < 0.9 * runs.len() as f64 {
        return None;
    }
    let mut lengths: Vec<u32> = runs.iter().filter_map(|c| c.last().map(|r| r.1)).collect();
    lengths.sort_unstable();
    // Ticks can cover over half the columns, so take a low percentile.
    let baseline = lengths[lengths.len() / 10] as f64;
    let tick_min = (1.8 * baseline).max(baseline + 2.0);
    let mut ticks: Vec<f64> = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in runs.iter().enumerate() {
        let is_tick = c.len() == 1 && c[0].1 as f64 >= tick_min;
        match (is_tick, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                ticks.push((s + i - 1) as f64 / 2.0);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        ticks.push((s + runs.len() - 1) as f64 / 2.0);
    }
    if ticks.len() < 3 {
        return None;
    }
    let spacings: Vec<f64> = ticks.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = spacings.iter().sum::<f64>() / spacings.len() as f64;
    let var = spacings.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / spacings.len() as f64;
    let cv = var.sqrt() / mean;
    if cv > 0.15 {
        return None;
    }
    Some(0.6 + 0.4 * (1.0 - cv / 0.15))
}

fn fill_quality(fill: f64) -> f64 {
    0.7 + 0.3 * ((fill - 0.85) / 0.15).clamp(0.0, 1.0)
}

/// Decision tree over fill ratio, aspect and column profiles.
///
/// Two-component candidates are only ever JointLabel (two collinear filled
/// segments with a gap of 0.2 to 0.6 of the total width) or Unknown.
pub fn classify_shape(map: &ComponentMap, cand: &ShapeCandidate) -> (DetectedShape, f64) {
    let b = cand.bbox;
    let (w, h) = (b.width(), b.height());
    let aspect = w as f64 / h as f64;
    let fill = cand.pixel_count(map) as f64 / b.area() as f64;
    let unknown = (DetectedShape::Unknown, (0.5 * fill * (aspect / 10.0).min(1.0)).min(0.5));

    if cand.labels.len() == 2 {
        return match joint_pair_quality(map, cand.labels[0], cand.labels[1]) {
            Some(q) => (DetectedShape::JointLabel, q),
            None => unknown,
        };
    }
    if fill >= 0.85 && aspect >= 3.0 {
        return (DetectedShape::Rectangular, fill_quality(fill));
    }
    let runs = column_runs(map, cand);
    if let Some(score) = ishaped_score(&runs, w, h) {
        return (DetectedShape::IShaped, score);
    }
    if let Some(score) = ruler_score(&runs, w, h) {
        return (DetectedShape::RulerShaped, score);
    }
    unknown
}

/// Score of two components forming a broken bar, left one first or not.
fn joint_pair_quality(map: &ComponentMap, a: u32, b: u32) -> Option<f64> {
    let (ca, cb) = (map.component(a), map.component(b));
    let (l, r) = if ca.bbox.x_min <= cb.bbox.x_min { (ca, cb) } else { (cb, ca) };
    if l.bbox.y_min.abs_diff(r.bbox.y_min) > 1 || l.bbox.y_max.abs_diff(r.bbox.y_max) > 1 {
        return None;
    }
    if r.bbox.x_min <= l.bbox.x_max {
        return None;
    }
    let (fl, fr) = (l.fill_ratio(), r.fill_ratio());
    if fl < 0.85 || fr < 0.85 {
        return None;
    }
    let (wl, wr) = (l.bbox.width() as f64, r.bbox.width() as f64);
    if wl.max(wr) > 2.0 * wl.min(wr) {
        return None;
    }
    let gap = (r.bbox.x_min - l.bbox.x_max) as f64;
    let total = (r.bbox.x_max - l.bbox.x_min) as f64;
    let ratio = gap / total;
    if !(0.2..=0.6).contains(&ratio) {
        return None;
    }
    Some(fill_quality(fl.min(fr)))
}

fn component_stats(map: &ComponentMap, luma: &[u8]) -> Vec<f64> {
    let mut sums = vec![0u64; map.component_count()];
    for (i, &l) in map.labels().iter().enumerate() {
        if l != 0 {
            sums[l as usize - 1] += luma[i] as u64;
        }
    }
    sums.iter()
        .zip(map.components())
        .map(|(&s, c)| s as f64 / c.pixel_count as f64)
        .collect()
}

/// Labels of components that stand out strongly from the threshold.
pub(crate) fn high_contrast_labels(
    map: &ComponentMap,
    luma: &[u8],
    threshold: u8,
    polarity: Polarity,
    fraction: f64,
) -> Vec<bool> {
    let hi = *luma.iter().max().unwrap_or(&255) as f64;
    let lo = *luma.iter().min().unwrap_or(&0) as f64;
    let t = threshold as f64;
    // A polarity whose side of the threshold is nearly flat (e.g. the plain
    // field itself) has nothing that can stand out.
    let side = match polarity {
        Polarity::LightOnDark => hi - t,
        Polarity::DarkOnLight => t - lo,
    };
    // A zero-width side holds only the extreme level, which is pure ink.
    let single_level = match polarity {
        Polarity::LightOnDark => t + 1.0 >= hi,
        Polarity::DarkOnLight => t <= lo,
    };
    if side < 0.25 * (hi - lo) && !single_level {
        return vec![false; map.component_count()];
    }
    component_stats(map, luma)
        .into_iter()
        .map(|mean| match polarity {
            Polarity::LightOnDark => mean >= t + fraction * (hi - t),
            Polarity::DarkOnLight => mean <= t - fraction * (t - lo),
        })
        .collect()
}

fn is_segment_like(map: &ComponentMap, label: u32) -> bool {
    let c = map.component(label);
    c.fill_ratio() >= 0.85 && c.bbox.width() >= 8 && c.bbox.height() >= 3
}

/// Pairs collinear filled segments into JointLabel candidates. Each label is
/// used at most once; pairing partners are the nearest valid segment to the right.
fn pair_joint_segments(map: &ComponentMap, eligible: &[u32]) -> Vec<(u32, u32)> {
    let mut segs: Vec<u32> = eligible.iter().copied().filter(|&l| is_segment_like(map, l)).collect();
    segs.sort_by_key(|&l| (map.component(l).bbox.x_min, l));
    let mut used = vec![false; segs.len()];
    let mut pairs = Vec::new();
    for i in 0..segs.len() {
        if used[i] {
            continue;
        }
        let partner = (i + 1..segs.len())
            .filter(|&j| !used[j])
            .find(|&j| joint_pair_quality(map, segs[i], segs[j]).is_some());
        if let Some(j) = partner {
            used[i] = true;
            used[j] = true;
            pairs.push((segs[i], segs[j]));
        }
    }
    pairs
}

fn passes_candidate_filter(map: &ComponentMap, cand: &ShapeCandidate, params: &DetectorParams) -> bool {
    let b = cand.bbox;
    if b.width() < params.min_width || b.area() < params.min_area {
        return false;
    }
    let runs = column_runs(map, cand);
    if single_run_fraction(&runs) < params.min_single_run_fraction {
        return false;
    }
    let aspect = b.width() as f64 / b.height() as f64;
    aspect >= params.min_aspect || ishaped_score(&runs, b.width(), b.height()).is_some()
}

/// Raw (pre-NMS, pre-cutoff) detections from both polarities.
pub fn builtin_candidates(image: &RasterImage, params: &DetectorParams) -> Vec<Detection> {
    let luma = image.luma_plane();
    let mut out = Vec::new();
    for polarity in Polarity::BOTH {
        let bin = imaging::binarize_luma(&luma, image.width(), image.height(), polarity);
        if bin.degenerate {
            continue;
        }
        let map = imaging::connected_components(&bin.mask);
        let contrast = high_contrast_labels(&map, &luma, bin.threshold, polarity, params.contrast_fraction);
        let eligible: Vec<u32> = map
            .components()
            .iter()
            .filter(|c| contrast[c.label as usize - 1] && c.pixel_count >= 4)
            .map(|c| c.label)
            .collect();
        let pairs = pair_joint_segments(&map, &eligible);
        let mut consumed = vec![false; map.component_count() + 1];
        for &(a, b) in &pairs {
            consumed[a as usize] = true;
            consumed[b as usize] = true;
            let cand = ShapeCandidate {
                bbox: map.component(a).bbox.union(&map.component(b).bbox),
                labels: vec![a, b],
            };
            let (shape, score) = classify_shape(&map, &cand);
            out.push(Detection::new(cand.bbox, shape, score));
        }
        for &label in &eligible {
            if consumed[label as usize] {
                continue;
            }
            let cand = ShapeCandidate::single(&map, label);
            if !passes_candidate_filter(&map, &cand, params) {
                continue;
            }
            let (shape, score) = classify_shape(&map, &cand);
            out.push(Detection::new(cand.bbox, shape, score));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// External detector

#[derive(Debug, Deserialize)]
struct ExternalResponse {
    detections: Vec<ExternalDetection>,
}

#[derive(Debug, Deserialize)]
struct ExternalDetection {
    bbox: [u32; 4],
    confidence: f64,
    class: String,
}

fn external_detections(image: &RasterImage, pool: &AdapterPool) -> Result<Vec<Detection>, DetectError> {
    let file = tempfile::Builder::new().prefix("sembar-").suffix(".png").tempfile()?;
    std::fs::write(file.path(), imaging::encode_png(image))?;
    let path = std::fs::canonicalize(file.path())?;
    let response: ExternalResponse = pool.call(json!({
        "task": "detect_bars",
        "image": path.display().to_string(),
    }))?;
    response
        .detections
        .into_iter()
        .map(|d| {
            let [x0, y0, x1, y1] = d.bbox;
            let bbox = BoundingBox { x_min: x0, y_min: y0, x_max: x1, y_max: y1 };
            if !bbox.fits_within(image.width(), image.height()) {
                return Err(AdapterError::Protocol(format!("detection box {bbox} outside image")));
            }
            if !(0.0..=1.0).contains(&d.confidence) {
                return Err(AdapterError::Protocol(format!("confidence {} outside [0, 1]", d.confidence)));
            }
            let shape = DetectedShape::from_class(&d.class)
                .ok_or_else(|| AdapterError::Protocol(format!("unknown class {:?}", d.class)))?;
            Ok(Detection::new(bbox, shape, d.confidence))
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(DetectError::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{draw, BinaryMask, Primitive, Style, BLACK, WHITE};

    fn bx(x0: u32, y0: u32, x1: u32, y1: u32) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    fn mask_from(w: u32, h: u32, rects: &[BoundingBox]) -> BinaryMask {
        let mut m = BinaryMask::new(w, h);
        for r in rects {
            for y in r.y_min..r.y_max {
                for x in r.x_min..r.x_max {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    #[test]
    fn filled_rect_is_rectangular() {
        let map = imaging::connected_components(&mask_from(200, 40, &[bx(10, 10, 130, 20)]));
        let (shape, score) = classify_shape(&map, &ShapeCandidate::single(&map, 1));
        assert_eq!(shape, DetectedShape::Rectangular);
        assert!(score >= 0.95);
    }

    #[test]
    fn i_bar_profile() {
        // caps 3 px wide, 12 px tall; line 4 px thick, centred
        let map = imaging::connected_components(&mask_from(
            300,
            40,
            &[bx(10, 10, 13, 22), bx(207, 10, 210, 22), bx(13, 14, 207, 18)],
        ));
        assert_eq!(map.component_count(), 1);
        let (shape, score) = classify_shape(&map, &ShapeCandidate::single(&map, 1));
        assert_eq!(shape, DetectedShape::IShaped);
        assert!(score > 0.95);
    }

    #[test]
    fn ruler_profile() {
        let mut rects = vec![bx(10, 30, 310, 34)];
        for i in 0..5u32 {
            let x = 10 + i * 74;
            rects.push(bx(x, 18, x + 4, 30));
        }
        let map = imaging::connected_components(&mask_from(400, 50, &rects));
        assert_eq!(map.component_count(), 1);
        let (shape, _) = classify_shape(&map, &ShapeCandidate::single(&map, 1));
        assert_eq!(shape, DetectedShape::RulerShaped);
    }

    #[test]
    fn round_blob_is_unknown() {
        let mut m = BinaryMask::new(60, 60);
        for y in 0..60u32 {
            for x in 0..60u32 {
                let (dx, dy) = (x as f64 - 30.0, y as f64 - 30.0);
                if dx * dx + dy * dy <= 400.0 {
                    m.set(x, y, true);
                }
            }
        }
        let map = imaging::connected_components(&m);
        let (shape, score) = classify_shape(&map, &ShapeCandidate::single(&map, 1));
        assert_eq!(shape, DetectedShape::Unknown);
        assert!(score <= 0.5);
    }

    #[test]
    fn joint_pair() {
        let map = imaging::connected_components(&mask_from(400, 60, &[bx(10, 10, 90, 30), bx(150, 10, 230, 30)]));
        let cand = ShapeCandidate { bbox: bx(10, 10, 230, 30), labels: vec![1, 2] };
        assert_eq!(classify_shape(&map, &cand).0, DetectedShape::JointLabel);
        // gap too small relative to width
        let map = imaging::connected_components(&mask_from(400, 60, &[bx(10, 10, 150, 30), bx(155, 10, 300, 30)]));
        let cand = ShapeCandidate { bbox: bx(10, 10, 300, 30), labels: vec![1, 2] };
        assert_eq!(classify_shape(&map, &cand).0, DetectedShape::Unknown);
    }

    #[test]
    fn blank_image_has_no_detections() {
        let img = RasterImage::new(128, 96, [90; 3]).unwrap();
        assert!(detect_bars(&img, &DetectorBackend::Builtin).unwrap().is_empty());
    }

    #[test]
    fn bar_on_plain_field_is_found() {
        let mut img = RasterImage::new(320, 200, [60; 3]).unwrap();
        let bar = bx(40, 150, 240, 160);
        draw(&mut img, &Primitive::FilledRect(bar), &Style::new(WHITE)).unwrap();
        let dets = detect_bars(&img, &DetectorBackend::Builtin).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].bbox, bar);
        assert_eq!(dets[0].shape, DetectedShape::Rectangular);
        assert_eq!(dets[0].center, bar.center());
        let _ = BLACK;
    }

    #[test]
    fn nms_basics() {
        let a = Detection::new(bx(0, 0, 10, 10), DetectedShape::Rectangular, 0.9);
        let b = Detection::new(bx(0, 0, 10, 10), DetectedShape::Rectangular, 0.8);
        let c = Detection::new(bx(50, 50, 60, 60), DetectedShape::Rectangular, 0.7);
        assert_eq!(nms(vec![b, a], 0.5), vec![a]);
        assert_eq!(nms(vec![c, a], 0.5), vec![a, c]);
    }

    #[test]
    fn nms_tie_prefers_smaller_then_leftmost() {
        let big = Detection::new(bx(0, 0, 20, 10), DetectedShape::Rectangular, 0.9);
        let small = Detection::new(bx(0, 0, 18, 10), DetectedShape::Rectangular, 0.9);
        assert_eq!(nms(vec![big, small], 0.5), vec![small]);
        let left = Detection::new(bx(0, 0, 10, 10), DetectedShape::Rectangular, 0.9);
        let right = Detection::new(bx(2, 0, 12, 10), DetectedShape::Rectangular, 0.9);
        assert_eq!(nms(vec![right, left], 0.5), vec![left]);
    }

    #[test]
    fn shape_class_names_round_trip() {
        for s in [
            DetectedShape::JointLabel,
            DetectedShape::IShaped,
            DetectedShape::RulerShaped,
            DetectedShape::Rectangular,
            DetectedShape::Unknown,
        ] {
            assert_eq!(DetectedShape::from_class(s.as_str()), Some(s));
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.as_str()));
        }
    }
}
