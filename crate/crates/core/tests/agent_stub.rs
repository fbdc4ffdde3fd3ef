use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::Value;
use sembar::agent::{
    aggregate_rubric, build_prompt, query_agent, verify_all, verify_rules, verdict, AgentError, AxisRatings, FlagCode,
    HttpReply, HttpTransport, ImageMeta, LlmClient, LlmConfig, RecordingTransport, RubricScore, RuleConfig,
    TransportError, Verdict,
};
use sembar::detect::{DetectedShape, Detection};
use sembar::extract::{parse_scale_text, pixel_pitch, BarReading, ScaleResult};
use sembar::ocr::{OcrEngine, TextRegion};
use sembar::BoundingBox;

fn reading(text: &str, stored: &str, bar_width: u32, det_conf: f64, ocr_conf: f64) -> BarReading {
    let bar_box = BoundingBox::new(100, 600, 100 + bar_width, 610).unwrap();
    let bar = Detection::new(bar_box, DetectedShape::Rectangular, det_conf);
    let quantity = parse_scale_text(stored).unwrap();
    let text_box = BoundingBox::new(120, 620, 180, 640).unwrap();
    BarReading {
        bar,
        scale: Some(ScaleResult {
            bar,
            text: TextRegion::new(text_box, text, ocr_conf, OcrEngine::BuiltinGlyph),
            quantity,
            distance_px: 25.0,
            pixel_pitch: pixel_pitch(&quantity, &bar_box),
            flags: Vec::new(),
        }),
        flags: Vec::new(),
    }
}

fn recording_stub() -> (LlmClient, Arc<RecordingTransport>) {
    let transport = Arc::new(RecordingTransport::replying("should never be used"));
    let config = LlmConfig::from_lookup(|k| (k == "SEMBAR_LLM_STUB").then(|| "1".to_string()));
    assert!(config.stub);
    (LlmClient::with_transport(config, transport.clone()), transport)
}

fn check(r: &BarReading) -> (Vec<FlagCode>, Verdict) {
    let flags = verify_rules(r, &[], &RuleConfig::default());
    let (client, transport) = recording_stub();
    let prompt = build_prompt(&ImageMeta::default(), std::slice::from_ref(r), &flags, None);
    let report = query_agent(&prompt, &flags, &client).unwrap();
    assert_eq!(report.verdict, verdict(&flags));
    assert_eq!(report.model_id, "stub");
    assert_eq!(report.latency_ms, 0);
    assert!(transport.calls().is_empty(), "stub mode touched the network");
    (flags.iter().map(|f| f.code).collect(), report.verdict)
}

#[test]
fn fault_injection_is_always_caught() {
    for _ in 0..100 {
        assert_eq!(check(&reading("10 µm", "10 µm", 200, 0.9, 0.95)), (vec![], Verdict::Consistent));
        // corrupted unit
        let (codes, v) = check(&reading("10 xm", "10 µm", 200, 0.9, 0.95));
        assert!(codes.contains(&FlagCode::UnknownUnit) && v == Verdict::Invalid, "{codes:?}");
        // value ten times what the label says
        let (codes, v) = check(&reading("10 µm", "100 µm", 200, 0.9, 0.95));
        assert!(codes.contains(&FlagCode::ValueTextMismatch) && v == Verdict::Invalid, "{codes:?}");
        // absurd pitch: 5 cm over 2 px
        let (codes, v) = check(&reading("5 cm", "5 cm", 2, 0.9, 0.95));
        assert_eq!((codes, v), (vec![FlagCode::PitchOutOfRange], Verdict::Invalid));
        // warnings only
        let (codes, v) = check(&reading("10 µm", "10 µm", 200, 0.2, 0.3));
        assert_eq!((codes, v), (vec![FlagCode::LowDetectionConfidence, FlagCode::LowOcrConfidence], Verdict::Suspect));
    }
}

#[test]
fn missing_label_and_disagreeing_bars() {
    let bar = Detection::new(BoundingBox::new(0, 0, 100, 8).unwrap(), DetectedShape::Rectangular, 0.9);
    let empty = BarReading { bar, scale: None, flags: Vec::new() };
    assert_eq!(check(&empty), (vec![FlagCode::NoScaleText], Verdict::Invalid));

    let a = reading("10 µm", "10 µm", 200, 0.9, 0.95);
    let b = reading("10 µm", "10 µm", 40, 0.9, 0.95);
    let c = reading("20 µm", "20 µm", 380, 0.9, 0.95);
    let all = verify_all(&[a, b, c], &RuleConfig::default());
    let codes: Vec<Vec<FlagCode>> = all.iter().map(|f| f.iter().map(|x| x.code).collect()).collect();
    assert_eq!(codes[0], vec![FlagCode::InterBarInconsistency]);
    assert_eq!(codes[1], vec![FlagCode::InterBarInconsistency]);
    assert_eq!(codes[2], vec![FlagCode::InterBarInconsistency]);
    assert_eq!(verdict(&all[0]), Verdict::Suspect);
}

#[test]
fn prompts_are_deterministic_and_distinguish_inputs() {
    let meta = ImageMeta { name: Some("sample.png".into()), width: 1024, height: 728 };
    let base = vec![reading("10 µm", "10 µm", 200, 0.9, 0.95)];
    let flags = verify_rules(&base[0], &[], &RuleConfig::default());
    let p = build_prompt(&meta, &base, &flags, Some("What is the pixel size?"));
    for _ in 0..10 {
        assert_eq!(build_prompt(&meta, &base, &flags, Some("What is the pixel size?")), p);
    }
    let text = p.text();
    let order: Vec<usize> = ["### ROLE", "### IMAGE META", "### DETECTIONS", "### OCR", "### DERIVED", "### FLAGS", "### USER QUESTION"]
        .iter()
        .map(|h| text.find(h).unwrap_or_else(|| panic!("missing {h}")))
        .collect();
    assert!(order.windows(2).all(|w| w[0] < w[1]));
    assert!(!build_prompt(&meta, &base, &flags, None).text().contains("### USER QUESTION"));

    let variants = [
        vec![reading("10 µm", "10 µm", 200, 0.900001, 0.95)],
        vec![reading("10 µm", "10 µm", 200, 0.9, 0.950001)],
        vec![reading("10 µm", "10 µm", 201, 0.9, 0.95)],
        vec![reading("10 um", "10 µm", 200, 0.9, 0.95)],
        vec![reading("10.5 µm", "10.5 µm", 200, 0.9, 0.95)],
        vec![],
    ];
    let mut seen = vec![p.text()];
    for v in &variants {
        let t = build_prompt(&meta, v, &flags, Some("What is the pixel size?")).text();
        assert!(!seen.contains(&t), "two different inputs gave the same prompt");
        seen.push(t);
    }
    let other_meta = ImageMeta { name: Some("other.png".into()), ..meta.clone() };
    assert_ne!(build_prompt(&other_meta, &base, &flags, None), build_prompt(&meta, &base, &flags, None));
}

#[test]
fn live_mode_narrates_but_never_decides() {
    let transport = Arc::new(RecordingTransport::replying("Everything looks consistent.\n- Recheck the label\n* Measure twice"));
    let config = LlmConfig { model: "test-model".into(), api_key: Some("k".into()), ..LlmConfig::default() };
    let client = LlmClient::with_transport(config, transport.clone());
    let r = reading("10 xm", "10 µm", 200, 0.9, 0.95);
    let flags = verify_rules(&r, &[], &RuleConfig::default());
    let prompt = build_prompt(&ImageMeta::default(), &[r], &flags, None);
    let report = query_agent(&prompt, &flags, &client).unwrap();
    assert_eq!(report.verdict, Verdict::Invalid);
    assert_eq!(report.suggestions, vec!["Recheck the label", "Measure twice"]);
    assert_eq!(report.model_id, "test-model");
    let calls = transport.calls();
    assert_eq!(calls.len(), 1);
    assert!(calls[0].0.ends_with("/chat/completions"));
    assert_eq!(calls[0].1["model"], "test-model");
    assert_eq!(calls[0].1["messages"][1]["content"], Value::String(prompt.user.clone()));
}

#[test]
fn endpoint_failures_are_typed() {
    let prompt = build_prompt(&ImageMeta::default(), &[], &[], None);
    let run = |reply: Result<HttpReply, TransportError>| {
        let client = LlmClient::with_transport(LlmConfig::default(), Arc::new(RecordingTransport::new(reply)));
        query_agent(&prompt, &[], &client)
    };
    assert!(matches!(run(Err(TransportError::Timeout)), Err(AgentError::EndpointTimeout)));
    assert!(matches!(run(Err(TransportError::Unreachable("refused".into()))), Err(AgentError::EndpointUnreachable(_))));
    assert!(matches!(run(Ok(HttpReply { status: 503, body: "busy".into() })), Err(AgentError::EndpointUnreachable(_))));
    match run(Ok(HttpReply { status: 200, body: "{\"choices\": []}".into() })) {
        Err(AgentError::MalformedReply(partial)) => {
            assert_eq!(partial.verdict, Verdict::Consistent);
            assert!(partial.suggestions.is_empty());
        }
        other => panic!("expected a malformed reply, got {other:?}"),
    }
}

/// Transport that records the peak number of simultaneous requests.
struct SlowTransport {
    active: AtomicUsize,
    peak: Mutex<usize>,
}

impl HttpTransport for SlowTransport {
    fn post_json(&self, _: &str, _: &[(String, String)], _: &Value, _: Duration) -> Result<HttpReply, TransportError> {
        let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
        {
            let mut peak = self.peak.lock().unwrap();
            *peak = (*peak).max(now);
        }
        std::thread::sleep(Duration::from_millis(40));
        self.active.fetch_sub(1, Ordering::SeqCst);
        let body = serde_json::json!({"choices": [{"message": {"content": "ok"}}]}).to_string();
        Ok(HttpReply { status: 200, body })
    }
}

#[test]
fn concurrent_queries_respect_the_cap() {
    let transport = Arc::new(SlowTransport { active: AtomicUsize::new(0), peak: Mutex::new(0) });
    let client = Arc::new(LlmClient::with_transport(LlmConfig { max_concurrency: 3, ..LlmConfig::default() }, transport.clone()));
    let prompt = Arc::new(build_prompt(&ImageMeta::default(), &[], &[], None));
    let handles: Vec<_> = (0..12)
        .map(|_| {
            let (client, prompt) = (client.clone(), prompt.clone());
            std::thread::spawn(move || query_agent(&prompt, &[], &client).map(|r| r.narrative))
        })
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap().unwrap(), "ok");
    }
    let peak = *transport.peak.lock().unwrap();
    assert!((1..=3).contains(&peak), "peak concurrency {peak}");
}

#[test]
fn accuracy_is_the_exact_match_share() {
    let ratings = AxisRatings { scale_accuracy: 4, detection_quality: 5, ocr_reliability: 3, reasoning_quality: 4, practicality: 5 };
    let scores: Vec<RubricScore> =
        (0..10).map(|i| RubricScore { question_id: Some(format!("q{i}")), ratings, exact_match: i < 7 }).collect();
    let summary = aggregate_rubric(&scores).unwrap();
    assert_eq!(summary.count, 10);
    assert!((summary.accuracy - 0.70).abs() < 1e-12);
    assert!((summary.means.ocr_reliability - 3.0).abs() < 1e-12);
    assert!(matches!(aggregate_rubric(&[]), Err(AgentError::EmptyInput)));
    let bad = RubricScore { question_id: None, ratings: AxisRatings { practicality: 6, ..ratings }, exact_match: true };
    assert!(matches!(aggregate_rubric(&[bad]), Err(AgentError::InvalidRating(6))));
}
