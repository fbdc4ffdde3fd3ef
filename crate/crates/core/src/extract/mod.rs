//! From detections and recognized text to physical scale: unit filtering,
//! nearest-text association, parsing, pixel pitch and measurement.

pub mod quantity;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use quantity::{
    normalize_scale_text, parse_scale_text, validate_scale_text, Decimal, PhysicalQuantity, ScaleTextError,
    ScaleTextRule, UnitKind,
};

use crate::agent::{Flag, FlagCode};
use crate::detect::{self, DetectError, Detection, DetectorBackend};
use crate::imaging::{BoundingBox, RasterImage};
use crate::ocr::{self, OcrEngineConfig, OcrError, OcrInput, TextRegion};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("no candidate text to associate")]
    NoCandidates,
    #[error("pixel pitch must be positive and finite, got {0}")]
    InvalidPitch(f64),
    #[error(transparent)]
    InvalidScaleText(#[from] ScaleTextError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Ocr(#[from] OcrError),
}

/// A bar joined with its label and the derived pixel pitch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleResult {
    pub bar: Detection,
    pub text: TextRegion,
    pub quantity: PhysicalQuantity,
    /// Distance between the bar and text centers.
    pub distance_px: f64,
    /// Meters per pixel.
    pub pixel_pitch: f64,
    pub flags: Vec<Flag>,
}

/// Outcome for one detected bar; `scale` is absent when no label was found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarReading {
    pub bar: Detection,
    pub scale: Option<ScaleResult>,
    pub flags: Vec<Flag>,
}

impl BarReading {
    /// Flat record used by the CLI's JSON output.
    pub fn to_record(&self) -> ExtractRecord {
        let mut flags: Vec<FlagCode> = self.flags.iter().map(|f| f.code).collect();
        if let Some(s) = &self.scale {
            flags.extend(s.flags.iter().map(|f| f.code));
        }
        ExtractRecord {
            bar_bbox: self.bar.bbox,
            text: self.scale.as_ref().map(|s| s.text.text.clone()),
            value: self.scale.as_ref().map(|s| s.quantity.value),
            unit: self.scale.as_ref().map(|s| s.quantity.unit),
            pixel_pitch_m: self.scale.as_ref().map(|s| s.pixel_pitch),
            distance_px: self.scale.as_ref().map(|s| s.distance_px),
            flags,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractRecord {
    pub bar_bbox: BoundingBox,
    pub text: Option<String>,
    pub value: Option<Decimal>,
    pub unit: Option<UnitKind>,
    pub pixel_pitch_m: Option<f64>,
    pub distance_px: Option<f64>,
    pub flags: Vec<FlagCode>,
}

/// Regions whose text is a valid scale label, in input order.
pub fn find_unit_texts(regions: &[TextRegion]) -> Vec<TextRegion> {
    regions.iter().filter(|r| validate_scale_text(&r.text)).cloned().collect()
}

fn squared_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (a.0 - b.0, a.1 - b.1);
    dx * dx + dy * dy
}

/// The candidate whose center is nearest the bar center, with its distance.
/// Equal distances go to the smaller center y, then the smaller center x.
pub fn associate<'a>(bar: &Detection, candidates: &'a [TextRegion]) -> Result<(&'a TextRegion, f64), ExtractError> {
    let best = candidates
        .iter()
        .min_by(|a, b| {
            squared_distance(bar.center, a.center)
                .total_cmp(&squared_distance(bar.center, b.center))
                .then(a.center.1.total_cmp(&b.center.1))
                .then(a.center.0.total_cmp(&b.center.0))
        })
        .ok_or(ExtractError::NoCandidates)?;
    Ok((best, squared_distance(bar.center, best.center).sqrt()))
}

/// Meters per pixel of a bar whose full width represents `quantity`.
pub fn pixel_pitch(quantity: &PhysicalQuantity, bar: &BoundingBox) -> f64 {
    quantity.meters / bar.width() as f64
}

/// Length in meters of `pixel_distance` pixels.
pub fn measure(pixel_distance: f64, pitch: f64) -> Result<f64, ExtractError> {
    if !(pitch.is_finite() && pitch > 0.0) {
        return Err(ExtractError::InvalidPitch(pitch));
    }
    if !(pixel_distance.is_finite() && pixel_distance >= 0.0) {
        return Err(ExtractError::InvalidPitch(pitch));
    }
    Ok(pixel_distance * pitch)
}

/// Joins one bar with the nearest valid label, if any.
pub fn read_bar(bar: &Detection, candidates: &[TextRegion]) -> BarReading {
    match associate(bar, candidates) {
        Ok((text, distance_px)) => {
            let quantity = parse_scale_text(&text.text).expect("candidates are validated");
            BarReading {
                bar: *bar,
                scale: Some(ScaleResult {
                    bar: *bar,
                    text: text.clone(),
                    quantity,
                    distance_px,
                    pixel_pitch: pixel_pitch(&quantity, &bar.bbox),
                    flags: Vec::new(),
                }),
                flags: Vec::new(),
            }
        }
        Err(_) => BarReading {
            bar: *bar,
            scale: None,
            flags: vec![Flag::new(FlagCode::NoScaleText, "no valid scale text found for this bar")],
        },
    }
}

/// Recognizes every text region of the image with the hybrid engine.
pub fn read_text_regions(image: &RasterImage, ocr_config: &OcrEngineConfig) -> Result<Vec<TextRegion>, ExtractError> {
    let input = OcrInput::new(image);
    ocr::detect_text_regions(image)
        .into_iter()
        .map(|b| ocr::hybrid_recognize_input(&input, b, ocr_config).map_err(ExtractError::from))
        .collect()
}

/// Full reading pipeline for one image: one record per detected bar.
pub fn extract_scale(
    image: &RasterImage,
    detector: &DetectorBackend,
    ocr_config: &OcrEngineConfig,
) -> Result<Vec<BarReading>, ExtractError> {
    let bars = detect::detect_bars(image, detector)?;
    if bars.is_empty() {
        return Ok(Vec::new());
    }
    let regions = read_text_regions(image, ocr_config)?;
    let candidates = find_unit_texts(&regions);
    Ok(bars.iter().map(|bar| read_bar(bar, &candidates)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::DetectedShape;
    use crate::ocr::OcrEngine;

    fn bx(x0: u32, y0: u32, x1: u32, y1: u32) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    fn region_at(cx: u32, cy: u32, text: &str) -> TextRegion {
        TextRegion::new(bx(cx - 10, cy - 5, cx + 10, cy + 5), text, 0.9, OcrEngine::BuiltinGlyph)
    }

    #[test]
    fn nearest_candidate_wins() {
        let bar = Detection::new(bx(50, 95, 150, 105), DetectedShape::Rectangular, 0.9);
        let c = vec![region_at(300, 50, "1 mm"), region_at(100, 120, "5 µm")];
        let (t, d) = associate(&bar, &c).unwrap();
        assert_eq!(t.text, "5 µm");
        assert_eq!(d, 20.0);
        assert!(matches!(associate(&bar, &[]), Err(ExtractError::NoCandidates)));
    }

    #[test]
    fn ties_prefer_upper_then_left() {
        let bar = Detection::new(bx(90, 90, 110, 110), DetectedShape::Rectangular, 0.9);
        let c = vec![region_at(100, 130, "1 mm"), region_at(130, 100, "2 mm"), region_at(70, 100, "3 mm")];
        assert_eq!(associate(&bar, &c).unwrap().0.text, "3 mm");
    }

    #[test]
    fn unit_filter_keeps_order() {
        let r = vec![region_at(50, 50, "5 µm"), region_at(50, 80, "fig. 3"), region_at(50, 110, "summary")];
        let kept = find_unit_texts(&r);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].text, "5 µm");
        assert!(find_unit_texts(&[]).is_empty());
    }

    #[test]
    fn pitch_and_measure() {
        let q = parse_scale_text("10 µm").unwrap();
        let p = pixel_pitch(&q, &bx(0, 0, 200, 8));
        assert!((p - 5e-8).abs() < 1e-22);
        assert!((measure(400.0, 5e-8).unwrap() - 2e-5).abs() < 1e-18);
        assert_eq!(measure(0.0, 5e-8).unwrap(), 0.0);
        assert!(matches!(measure(1.0, 0.0), Err(ExtractError::InvalidPitch(_))));
        assert!(matches!(measure(1.0, -1.0), Err(ExtractError::InvalidPitch(_))));
    }

    #[test]
    fn missing_label_is_flagged() {
        let bar = Detection::new(bx(0, 0, 100, 8), DetectedShape::Rectangular, 0.9);
        let r = read_bar(&bar, &[]);
        assert!(r.scale.is_none());
        assert_eq!(r.flags[0].code, FlagCode::NoScaleText);
    }
}
