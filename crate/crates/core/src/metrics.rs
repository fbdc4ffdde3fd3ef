//! Detection and extraction scoring: IoU, greedy matching, COCO-style
//! 101-point interpolated AP, mAP over IoU 0.50:0.95 and exact-match
//! precision/recall/F1 of the read scale values.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodg::DatasetManifest;
use crate::detect::Detection;
use crate::extract::BarReading;
use crate::imaging::BoundingBox;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("results reference image {0:?} which the manifest does not contain")]
    ManifestMismatch(String),
}

/// Intersection over union of two boxes; 0 when they do not overlap.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection(b).map_or(0, |i| i.area());
    if inter == 0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub matched: Vec<MatchedPair>,
    /// Per prediction (input order): whether it was matched.
    pub pred_is_tp: Vec<bool>,
}

/// Prediction indices by descending confidence; equal confidences keep input order.
fn confidence_order(preds: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence).then(a.cmp(&b)));
    order
}

/// Greedy matching: in descending confidence, each prediction takes the
/// still-unmatched ground truth with the highest IoU (lowest index on ties),
/// provided that IoU reaches `iou_threshold`.
pub fn match_detections(preds: &[Detection], gts: &[BoundingBox], iou_threshold: f64) -> MatchResult {
    let mut gt_taken = vec![false; gts.len()];
    let mut pred_is_tp = vec![false; preds.len()];
    let mut matched = Vec::new();
    for p in confidence_order(preds) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt_taken[g] {
                continue;
            }
            let v = iou(&preds[p].bbox, gt);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, v)) = best {
            if v >= iou_threshold && v > 0.0 {
                gt_taken[g] = true;
                pred_is_tp[p] = true;
                matched.push(MatchedPair { pred: p, gt: g, iou: v });
            }
        }
    }
    let tp = matched.len();
    MatchResult {
        true_positives: tp,
        false_positives: preds.len() - tp,
        false_negatives: gts.len() - tp,
        matched,
        pred_is_tp,
    }
}

/// Predictions and ground truth of one image.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ImageSample {
    pub preds: Vec<Detection>,
    pub gts: Vec<BoundingBox>,
}

pub const RECALL_POINTS: usize = 101;

/// 101-point interpolated AP with dataset-level ranking by confidence.
///
/// With no ground truth anywhere the result is 1.0 if there are also no
/// predictions (vacuous) and 0.0 otherwise.
pub fn average_precision(images: &[ImageSample], iou_threshold: f64) -> f64 {
    let total_gts: usize = images.iter().map(|s| s.gts.len()).sum();
    // (confidence, image, rank within image, is_tp)
    let mut ranked: Vec<(f64, usize, usize, bool)> = Vec::new();
    for (i, sample) in images.iter().enumerate() {
        let m = match_detections(&sample.preds, &sample.gts, iou_threshold);
        for (rank, p) in confidence_order(&sample.preds).into_iter().enumerate() {
            ranked.push((sample.preds[p].confidence, i, rank, m.pred_is_tp[p]));
        }
    }
    if total_gts == 0 {
        return if ranked.is_empty() { 1.0 } else { 0.0 };
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut recall = Vec::with_capacity(ranked.len());
    let mut precision = Vec::with_capacity(ranked.len());
    for &(_, _, _, is_tp) in &ranked {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / total_gts as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    interpolated_ap(&recall, &precision)
}

/// Mean over the 101 recall levels of the precision envelope
/// (max precision at any recall >= level; 0 past the last reached recall).
pub fn interpolated_ap(recall: &[f64], precision: &[f64]) -> f64 {
    let mut envelope = precision.to_vec();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut sum = 0.0;
    for k in 0..RECALL_POINTS {
        let level = k as f64 / 100.0;
        let idx = recall.partition_point(|&r| r < level);
        if idx < envelope.len() {
            sum += envelope[idx];
        }
    }
    sum / RECALL_POINTS as f64
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapSummary {
    pub ap_50: f64,
    pub map_50_95: f64,
    /// No ground truth and no predictions: scores are vacuously 1.
    pub zero_support: bool,
}

pub fn map_range(images: &[ImageSample]) -> MapSummary {
    let zero_support = images.iter().all(|s| s.gts.is_empty() && s.preds.is_empty());
    let aps: Vec<f64> = coco_thresholds().iter().map(|&t| average_precision(images, t)).collect();
    MapSummary {
        ap_50: aps[0],
        map_50_95: aps.iter().sum::<f64>() / aps.len() as f64,
        zero_support,
    }
}

/// (precision, recall, f1) from counts. An empty denominator scores 1:
/// no predictions means none were wrong, no ground truth means none were missed.
pub fn precision_recall_f1(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalCounts {
    pub images: usize,
    pub gt_bars: usize,
    pub predicted_bars: usize,
    pub bar_tp: usize,
    pub bar_fp: usize,
    pub bar_fn: usize,
    pub gt_labels: usize,
    pub predicted_scales: usize,
    pub scale_tp: usize,
    pub scale_fp: usize,
    pub scale_fn: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageBreakdown {
    pub image_path: String,
    pub bar_tp: usize,
    pub bar_fp: usize,
    pub bar_fn: usize,
    pub scale_tp: usize,
    pub scale_fp: usize,
    pub scale_fn: usize,
}

/// Scorecard for a run of the pipeline over an annotated set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ap_50: f64,
    pub map_50_95: f64,
    pub zero_support: bool,
    pub ocr_precision: f64,
    pub ocr_recall: f64,
    pub ocr_f1: f64,
    pub counts: EvalCounts,
    pub per_image: Vec<ImageBreakdown>,
}

/// Pipeline output for one dataset image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResults {
    pub image_path: String,
    pub readings: Vec<BarReading>,
}

/// Scores pipeline output against a manifest.
///
/// Bars are matched at IoU 0.5. A read scale is a true positive iff its text
/// region overlaps a ground-truth label box at IoU >= 0.5 and its value and
/// unit equal that label's (um and µm are the same unit). Manifest records
/// without results count as fully missed.
pub fn score_extraction(results: &[ImageResults], manifest: &DatasetManifest) -> Result<EvalReport, MetricsError> {
    let by_path: HashMap<&str, &ImageResults> = results.iter().map(|r| (r.image_path.as_str(), r)).collect();
    for r in results {
        if !manifest.records.iter().any(|m| m.image_path == r.image_path) {
            return Err(MetricsError::ManifestMismatch(r.image_path.clone()));
        }
    }
    let records: Vec<_> = manifest
        .records
        .iter()
        .filter(|m| results.is_empty() || by_path.contains_key(m.image_path.as_str()))
        .collect();

    let mut counts = EvalCounts::default();
    let mut samples = Vec::new();
    let mut per_image = Vec::new();
    for rec in records {
        let readings: &[BarReading] = by_path.get(rec.image_path.as_str()).map_or(&[], |r| &r.readings);
        let preds: Vec<Detection> = readings.iter().map(|r| r.bar).collect();
        let gts: Vec<BoundingBox> = rec.annotations.iter().map(|a| a.bar_bbox).collect();
        let m = match_detections(&preds, &gts, 0.5);

        // Scale matching, most confident reads first.
        let mut scales: Vec<_> = readings.iter().filter_map(|r| r.scale.as_ref()).collect();
        scales.sort_by(|a, b| b.text.confidence.total_cmp(&a.text.confidence));
        let mut label_taken = vec![false; rec.annotations.len()];
        let mut scale_tp = 0;
        for s in &scales {
            let mut best: Option<(usize, f64)> = None;
            for (g, ann) in rec.annotations.iter().enumerate() {
                if label_taken[g] || ann.value != s.quantity.value || ann.unit != s.quantity.unit {
                    continue;
                }
                let v = iou(&s.text.bbox, &ann.text_bbox);
                if v >= 0.5 && best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            if let Some((g, _)) = best {
                label_taken[g] = true;
                scale_tp += 1;
            }
        }
        let breakdown = ImageBreakdown {
            image_path: rec.image_path.clone(),
            bar_tp: m.true_positives,
            bar_fp: m.false_positives,
            bar_fn: m.false_negatives,
            scale_tp,
            scale_fp: scales.len() - scale_tp,
            scale_fn: rec.annotations.len() - scale_tp,
        };
        counts.images += 1;
        counts.gt_bars += gts.len();
        counts.predicted_bars += preds.len();
        counts.bar_tp += breakdown.bar_tp;
        counts.bar_fp += breakdown.bar_fp;
        counts.bar_fn += breakdown.bar_fn;
        counts.gt_labels += rec.annotations.len();
        counts.predicted_scales += scales.len();
        counts.scale_tp += breakdown.scale_tp;
        counts.scale_fp += breakdown.scale_fp;
        counts.scale_fn += breakdown.scale_fn;
        per_image.push(breakdown);
        samples.push(ImageSample { preds, gts });
    }

    let (precision, recall, f1) = precision_recall_f1(counts.bar_tp, counts.bar_fp, counts.bar_fn);
    let (ocr_precision, ocr_recall, ocr_f1) = precision_recall_f1(counts.scale_tp, counts.scale_fp, counts.scale_fn);
    let map = map_range(&samples);
    Ok(EvalReport {
        precision,
        recall,
        f1,
        ap_50: map.ap_50,
        map_50_95: map.map_50_95,
        zero_support: map.zero_support,
        ocr_precision,
        ocr_recall,
        ocr_f1,
        counts,
        per_image,
    })
}
