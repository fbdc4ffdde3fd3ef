use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sembar::detect::{DetectedShape, Detection};
use sembar::extract::{associate, ExtractError};
use sembar::ocr::{OcrEngine, TextRegion};
use sembar::BoundingBox;

fn random_box(rng: &mut ChaCha8Rng, grid: u32) -> BoundingBox {
    let x0 = rng.random_range(0..grid);
    let y0 = rng.random_range(0..grid);
    let w = rng.random_range(1..5);
    let h = rng.random_range(1..5);
    BoundingBox::new(x0, y0, x0 + w, y0 + h).unwrap()
}

/// Twice the center, so every center and distance is an exact integer.
fn doubled_center(b: &BoundingBox) -> (i64, i64) {
    ((b.x_min + b.x_max) as i64, (b.y_min + b.y_max) as i64)
}

/// Exhaustive argmin of squared center distance; ties go to the smaller
/// center y, then the smaller center x, then the earlier candidate.
fn brute_force(bar: &BoundingBox, texts: &[BoundingBox]) -> Option<usize> {
    let (bx, by) = doubled_center(bar);
    let key = |t: &BoundingBox| {
        let (tx, ty) = doubled_center(t);
        ((tx - bx).pow(2) + (ty - by).pow(2), ty, tx)
    };
    let mut best: Option<usize> = None;
    for (i, t) in texts.iter().enumerate() {
        match best {
            Some(b) if key(&texts[b]) <= key(t) => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Reflection of `b` about the center of `about`: in x (k = 0), in y
/// (k = 1) or through the point (k = 2). `None` if it leaves the grid.
fn reflected(b: &BoundingBox, about: &BoundingBox, k: u32) -> Option<BoundingBox> {
    let (cx2, cy2) = doubled_center(about);
    let flip = |lo: u32, hi: u32, c2: i64| (c2 - hi as i64, c2 - lo as i64);
    let (x0, x1) = if k != 1 { flip(b.x_min, b.x_max, cx2) } else { (b.x_min as i64, b.x_max as i64) };
    let (y0, y1) = if k != 0 { flip(b.y_min, b.y_max, cy2) } else { (b.y_min as i64, b.y_max as i64) };
    if x0 < 0 || y0 < 0 {
        return None;
    }
    BoundingBox::new(x0 as u32, y0 as u32, x1 as u32, y1 as u32).ok()
}

#[test]
fn associate_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut ties_seen = 0;
    for case in 0..1000 {
        let bar_box = random_box(&mut rng, 20).translate(20, 20);
        let bar = Detection::new(bar_box, DetectedShape::Rectangular, 0.9);
        let n = rng.random_range(0..8);
        let mut boxes: Vec<BoundingBox> = (0..n).map(|_| random_box(&mut rng, 60)).collect();
        if case % 2 == 0 && !boxes.is_empty() {
            // Reflections about the bar center sit at exactly the same distance.
            let pick = boxes[rng.random_range(0..boxes.len())];
            for k in 0..rng.random_range(1..4) {
                if let Some(r) = reflected(&pick, &bar_box, k) {
                    boxes.insert(rng.random_range(0..=boxes.len()), r);
                }
            }
        }
        let texts: Vec<TextRegion> =
            boxes.iter().map(|b| TextRegion::new(*b, "1 mm", 0.9, OcrEngine::BuiltinGlyph)).collect();

        let (bx, by) = doubled_center(&bar_box);
        let dists: Vec<i64> = boxes
            .iter()
            .map(|b| {
                let (x, y) = doubled_center(b);
                (x - bx).pow(2) + (y - by).pow(2)
            })
            .collect();
        if let Some(min) = dists.iter().min() {
            if dists.iter().filter(|d| *d == min).count() > 1 {
                ties_seen += 1;
            }
        }

        match (associate(&bar, &texts), brute_force(&bar_box, &boxes)) {
            (Ok((got, dist)), Some(want)) => {
                let want_center = doubled_center(&boxes[want]);
                assert_eq!(doubled_center(&got.bbox), want_center, "case {case}");
                let exact = (dists[want] as f64).sqrt() / 2.0;
                assert!((dist - exact).abs() < 1e-9, "case {case}: distance {dist} vs {exact}");
            }
            (Err(ExtractError::NoCandidates), None) => {}
            (got, want) => panic!("case {case}: associate {got:?}, oracle {want:?}"),
        }
    }
    assert!(ties_seen >= 50, "only {ties_seen} configurations had ties");
}

#[test]
fn equidistant_candidates_resolve_upper_then_left() {
    let b = |x0, y0| BoundingBox::new(x0, y0, x0 + 2, y0 + 2).unwrap();
    let bar = Detection::new(b(10, 10), DetectedShape::Rectangular, 0.9);
    let region = |bx: BoundingBox, t: &str| TextRegion::new(bx, t, 0.9, OcrEngine::BuiltinGlyph);
    // Four candidates at distance 5 around the bar center (11, 11).
    let texts = vec![region(b(10, 15), "below"), region(b(15, 10), "right"), region(b(5, 10), "left"), region(b(10, 5), "above")];
    assert_eq!(associate(&bar, &texts).unwrap().0.text, "above");
    let texts = vec![region(b(15, 10), "right"), region(b(5, 10), "left")];
    assert_eq!(associate(&bar, &texts).unwrap().0.text, "left");
}
