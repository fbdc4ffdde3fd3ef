use proptest::prelude::*;
use sembar::detect::{DetectedShape, Detection};
use sembar::metrics::{
    average_precision, coco_thresholds, iou, map_range, match_detections, precision_recall_f1, ImageSample,
};
use sembar::BoundingBox;

const EPS: f64 = 1e-9;

fn bx(x0: u32, y0: u32, x1: u32, y1: u32) -> BoundingBox {
    BoundingBox::new(x0, y0, x1, y1).unwrap()
}

fn det(b: BoundingBox, confidence: f64) -> Detection {
    Detection::new(b, DetectedShape::Rectangular, confidence)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= EPS
}

#[test]
fn iou_fixtures() {
    let cases = [
        (bx(0, 0, 10, 10), bx(0, 0, 10, 10), 1.0),
        (bx(0, 0, 10, 10), bx(20, 20, 30, 30), 0.0),
        (bx(0, 0, 10, 10), bx(10, 0, 20, 10), 0.0),
        (bx(0, 0, 2, 1), bx(1, 0, 3, 1), 1.0 / 3.0),
        (bx(0, 0, 4, 4), bx(1, 1, 3, 3), 0.25),
        (bx(0, 0, 10, 1), bx(0, 0, 6, 1), 0.6),
        (bx(0, 0, 4, 4), bx(2, 2, 6, 6), 4.0 / 28.0),
    ];
    for (a, b, want) in cases {
        assert!(close(iou(&a, &b), want), "{a} vs {b}: {} != {want}", iou(&a, &b));
        assert_eq!(iou(&a, &b), iou(&b, &a));
    }
}

#[test]
fn ap_fixtures() {
    let g = bx(0, 0, 10, 10);
    let far = bx(50, 50, 60, 60);
    let sample = |preds: Vec<Detection>, gts: Vec<BoundingBox>| ImageSample { preds, gts };

    // true positive ranked above a false positive: full precision at full recall
    assert!(close(average_precision(&[sample(vec![det(g, 0.9), det(far, 0.8)], vec![g])], 0.5), 1.0));
    // false positive ranked first: precision 1/2 everywhere
    assert!(close(average_precision(&[sample(vec![det(g, 0.8), det(far, 0.9)], vec![g])], 0.5), 0.5));
    // half the ground truth found: recall levels 0.00..=0.50 score 1
    let g2 = bx(100, 100, 110, 110);
    assert!(close(average_precision(&[sample(vec![det(g, 0.9)], vec![g, g2])], 0.5), 51.0 / 101.0));
    // TP, FP, TP over two ground truths: envelope 1 up to recall 0.5, then 2/3
    let ap = average_precision(&[sample(vec![det(g, 0.9), det(far, 0.8), det(g2, 0.7)], vec![g, g2])], 0.5);
    assert!(close(ap, (51.0 + 50.0 * 2.0 / 3.0) / 101.0), "{ap}");
    // ranking is dataset-wide: a confident miss in one image hurts another
    let ap = average_precision(&[sample(vec![det(far, 0.9)], vec![]), sample(vec![det(g, 0.8)], vec![g])], 0.5);
    assert!(close(ap, 0.5));
    // predictions with nothing to find
    assert!(close(average_precision(&[sample(vec![det(g, 0.9)], vec![])], 0.5), 0.0));
    // nothing found at all
    assert!(close(average_precision(&[sample(vec![], vec![g])], 0.5), 0.0));
}

#[test]
fn map_fixtures() {
    // IoU 0.6 matches at 0.50, 0.55 and 0.60 only: (1 + 1 + 1) / 10
    let s = ImageSample { preds: vec![det(bx(0, 0, 6, 1), 0.9)], gts: vec![bx(0, 0, 10, 1)] };
    let m = map_range(&[s]);
    assert!(close(m.ap_50, 1.0));
    assert!(close(m.map_50_95, 0.3), "{}", m.map_50_95);
    assert!(!m.zero_support);

    // vacuous: no ground truth and no predictions anywhere
    let m = map_range(&[ImageSample::default(), ImageSample::default()]);
    assert!(m.zero_support && close(m.ap_50, 1.0) && close(m.map_50_95, 1.0));

    // a perfect box scores 1 at every threshold
    let m = map_range(&[ImageSample { preds: vec![det(bx(3, 3, 9, 9), 0.5)], gts: vec![bx(3, 3, 9, 9)] }]);
    assert!(close(m.map_50_95, 1.0));
}

#[test]
fn thresholds_are_exactly_ten() {
    let t = coco_thresholds();
    assert_eq!(t.len(), 10);
    for (i, v) in t.iter().enumerate() {
        assert!(close(*v, 0.5 + 0.05 * i as f64));
    }
}

#[test]
fn prf_fixtures() {
    let (p, r, f) = precision_recall_f1(7, 3, 0);
    assert!(close(p, 0.7) && close(r, 1.0) && close(f, 2.0 * 0.7 / 1.7));
    let (p, r, f) = precision_recall_f1(3, 1, 1);
    assert!(close(p, 0.75) && close(r, 0.75) && close(f, 0.75));
    let (p, r, f) = precision_recall_f1(0, 0, 0);
    assert!(close(p, 1.0) && close(r, 1.0) && close(f, 1.0));
    let (p, r, f) = precision_recall_f1(0, 2, 2);
    assert!(close(p, 0.0) && close(r, 0.0) && close(f, 0.0));
}

/// Greedy reference with exact rational IoU comparisons.
fn reference_matches(preds: &[Detection], gts: &[BoundingBox], thr_num: u64, thr_den: u64) -> Vec<(usize, usize)> {
    let inter_union = |a: &BoundingBox, b: &BoundingBox| {
        let inter = a.intersection(b).map_or(0, |i| i.area());
        (inter, a.area() + b.area() - inter)
    };
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.partial_cmp(&preds[a].confidence).unwrap().then(a.cmp(&b)));
    let mut taken = vec![false; gts.len()];
    let mut out = Vec::new();
    for p in order {
        let mut best: Option<(usize, u64, u64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let (i, u) = inter_union(&preds[p].bbox, gt);
            let better = match best {
                None => true,
                Some((_, bi, bu)) => (i as u128) * (bu as u128) > (bi as u128) * (u as u128),
            };
            if better {
                best = Some((g, i, u));
            }
        }
        if let Some((g, i, u)) = best {
            if i > 0 && (i as u128) * (thr_den as u128) >= (thr_num as u128) * (u as u128) {
                taken[g] = true;
                out.push((p, g));
            }
        }
    }
    out
}

fn small_box() -> impl Strategy<Value = BoundingBox> {
    (0u32..12, 0u32..12, 1u32..6, 1u32..6).prop_map(|(x, y, w, h)| bx(x, y, x + w, y + h))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn greedy_matching_agrees_with_reference(
        preds in prop::collection::vec((small_box(), 0u8..4), 0..7),
        gts in prop::collection::vec(small_box(), 0..6),
    ) {
        let preds: Vec<Detection> = preds.into_iter().map(|(b, c)| det(b, 0.2 + c as f64 * 0.2)).collect();
        for (num, den) in [(1u64, 2u64), (3, 4), (1, 10)] {
            let m = match_detections(&preds, &gts, num as f64 / den as f64);
            let got: Vec<(usize, usize)> = m.matched.iter().map(|p| (p.pred, p.gt)).collect();
            prop_assert_eq!(&got, &reference_matches(&preds, &gts, num, den));
            prop_assert_eq!(m.true_positives + m.false_positives, preds.len());
            prop_assert_eq!(m.true_positives + m.false_negatives, gts.len());
        }
    }

    #[test]
    fn ap_is_a_probability_and_falls_with_threshold(
        preds in prop::collection::vec((small_box(), 0u8..10), 0..6),
        gts in prop::collection::vec(small_box(), 1..5),
    ) {
        let preds: Vec<Detection> = preds.into_iter().map(|(b, c)| det(b, c as f64 / 10.0)).collect();
        let s = [ImageSample { preds, gts }];
        let aps: Vec<f64> = coco_thresholds().iter().map(|&t| average_precision(&s, t)).collect();
        for w in aps.windows(2) {
            prop_assert!((0.0..=1.0).contains(&w[0]));
            prop_assert!(w[1] <= w[0] + EPS);
        }
    }
}
