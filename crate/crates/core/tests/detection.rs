use std::sync::Arc;
use std::time::Duration;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sembar::adapter::{AdapterConfig, AdapterError, AdapterPool};
use sembar::autodg::{generate_image, procedural_background, render_text_with_keyline, GenConfig, DISTRACTOR_WORDS};
use sembar::detect::{detect_bars, nms, DetectError, DetectedShape, Detection, DetectorBackend};
use sembar::imaging::{BLACK, WHITE};
use sembar::metrics::{iou, match_detections};
use sembar::{BoundingBox, RasterImage};

fn mock(mode: &str) -> DetectorBackend {
    let script = concat!(env!("CARGO_MANIFEST_DIR"), "/adapters/mock_adapter.py");
    let config = AdapterConfig::new(format!("python3 {script} {mode}")).with_timeout(Duration::from_secs(2));
    DetectorBackend::External(Arc::new(AdapterPool::single(config)))
}

fn rank_before(a: &Detection, b: &Detection) -> bool {
    let ka = (-a.confidence, a.bbox.area(), a.bbox.x_min, a.bbox.y_min);
    let kb = (-b.confidence, b.bbox.area(), b.bbox.x_min, b.bbox.y_min);
    ka.partial_cmp(&kb).unwrap().is_lt()
}

/// A detection survives iff no surviving detection ranked before it
/// overlaps it by more than the threshold.
fn survives(dets: &[Detection], i: usize, thr: f64, memo: &mut Vec<Option<bool>>) -> bool {
    if let Some(v) = memo[i] {
        return v;
    }
    let mut keep = true;
    for j in 0..dets.len() {
        if j != i && rank_before(&dets[j], &dets[i]) && iou(&dets[j].bbox, &dets[i].bbox) > thr && survives(dets, j, thr, memo) {
            keep = false;
            break;
        }
    }
    memo[i] = Some(keep);
    keep
}

fn arb_detection() -> impl Strategy<Value = Detection> {
    (0u32..30, 0u32..30, 1u32..12, 1u32..12, 0u8..5).prop_map(|(x, y, w, h, c)| {
        Detection::new(BoundingBox::new(x, y, x + w, y + h).unwrap(), DetectedShape::Rectangular, 0.1 + c as f64 * 0.2)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn nms_keeps_exactly_the_unsuppressed(raw in prop::collection::vec(arb_detection(), 0..12), thr in prop::sample::select(vec![0.3, 0.5, 0.7])) {
        // Exact duplicates have no defined order between them; drop them.
        let mut dets: Vec<Detection> = Vec::new();
        for d in raw {
            if !dets.iter().any(|e| e.bbox == d.bbox && e.confidence == d.confidence) {
                dets.push(d);
            }
        }
        let kept = nms(dets.clone(), thr);
        let mut memo = vec![None; dets.len()];
        let mut expected: Vec<Detection> = (0..dets.len()).filter(|&i| survives(&dets, i, thr, &mut memo)).map(|i| dets[i]).collect();
        expected.sort_by(|a, b| if rank_before(a, b) { std::cmp::Ordering::Less } else { std::cmp::Ordering::Greater });
        prop_assert_eq!(&kept, &expected);
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(iou(&a.bbox, &b.bbox) <= thr);
            }
        }
    }
}

#[test]
fn builtin_detector_finds_generated_bars() {
    let config = GenConfig::default();
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for i in 0..80 {
        let (image, record) = generate_image(&config, 1234, i).unwrap();
        let dets = detect_bars(&image, &DetectorBackend::Builtin).unwrap();
        for w in dets.windows(2) {
            assert!(w[0].confidence >= w[1].confidence);
        }
        assert!(dets.iter().all(|d| d.confidence >= 0.25));
        let gts: Vec<BoundingBox> = record.annotations.iter().map(|a| a.bar_bbox).collect();
        let m = match_detections(&dets, &gts, 0.5);
        tp += m.true_positives;
        fp += m.false_positives;
        fn_ += m.false_negatives;
        for pair in &m.matched {
            let shape = dets[pair.pred].shape.bar_shape();
            assert_eq!(shape, Some(record.annotations[pair.gt].shape), "image {i}");
        }
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    assert!(precision >= 0.98 && recall >= 0.95, "precision {precision}, recall {recall}");
}

#[test]
fn words_and_plain_fields_are_not_bars() {
    let blank = RasterImage::new(300, 200, [120, 120, 120]).unwrap();
    assert!(detect_bars(&blank, &DetectorBackend::Builtin).unwrap().is_empty());

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for (k, word) in DISTRACTOR_WORDS.iter().enumerate() {
        let mut image = procedural_background(640, 240, &mut rng);
        let (ink, key) = if k % 2 == 0 { (WHITE, BLACK) } else { (BLACK, WHITE) };
        render_text_with_keyline(&mut image, (40, 60), word, 2 + (k as u32 % 3), ink, key).unwrap();
        let dets = detect_bars(&image, &DetectorBackend::Builtin).unwrap();
        assert!(dets.is_empty(), "{word:?} produced {dets:?}");
    }
}

#[test]
fn external_detector_round_trip() {
    let image = RasterImage::new(200, 100, [90, 90, 90]).unwrap();
    let dets = detect_bars(&image, &mock("ok")).unwrap();
    assert_eq!(dets.len(), 1);
    assert_eq!(dets[0].bbox, BoundingBox::new(0, 0, 100, 50).unwrap());
    assert_eq!(dets[0].shape, DetectedShape::Rectangular);
    assert_eq!(dets[0].confidence, 0.9);
}

#[test]
fn external_detector_failures_are_typed() {
    let image = RasterImage::new(64, 64, [90, 90, 90]).unwrap();
    let err = |mode| detect_bars(&image, &mock(mode)).unwrap_err();
    assert!(matches!(err("error"), DetectError::Adapter(AdapterError::Remote(_))));
    assert!(matches!(err("malformed"), DetectError::Adapter(AdapterError::Protocol(_))));
    assert!(matches!(err("badshape"), DetectError::Adapter(AdapterError::Protocol(_))));
    assert!(matches!(err("wrongid"), DetectError::Adapter(AdapterError::Protocol(_))));
    assert!(matches!(err("crash"), DetectError::Adapter(AdapterError::Protocol(_))));
    assert!(matches!(err("slow 5"), DetectError::Adapter(AdapterError::Timeout(_))));
    let missing = DetectorBackend::External(Arc::new(AdapterPool::single(AdapterConfig::new(""))));
    assert!(matches!(detect_bars(&image, &missing), Err(DetectError::Adapter(AdapterError::Unavailable(_)))));
}
