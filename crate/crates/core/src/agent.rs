//! Verification of readings: deterministic rules decide the verdict, an
//! optional chat-completion endpoint adds narrative and suggestions.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::extract::{parse_scale_text, BarReading, Decimal, ScaleTextRule, UnitKind};

pub const DEFAULT_PITCH_BAND: (f64, f64) = (1e-12, 1e-3);
pub const DEFAULT_LLM_TIMEOUT: Duration = Duration::from_secs(60);
pub const DEFAULT_MAX_CONCURRENCY: usize = 4;
pub const STUB_MODEL_ID: &str = "stub";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FlagCode {
    NoScaleText,
    UnknownUnit,
    ValueTextMismatch,
    PitchOutOfRange,
    LowDetectionConfidence,
    LowOcrConfidence,
    InterBarInconsistency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warn,
    Error,
}

impl FlagCode {
    pub fn severity(&self) -> Severity {
        match self {
            FlagCode::NoScaleText | FlagCode::UnknownUnit | FlagCode::ValueTextMismatch | FlagCode::PitchOutOfRange => {
                Severity::Error
            }
            FlagCode::LowDetectionConfidence | FlagCode::LowOcrConfidence | FlagCode::InterBarInconsistency => {
                Severity::Warn
            }
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            FlagCode::NoScaleText => "NoScaleText",
            FlagCode::UnknownUnit => "UnknownUnit",
            FlagCode::ValueTextMismatch => "ValueTextMismatch",
            FlagCode::PitchOutOfRange => "PitchOutOfRange",
            FlagCode::LowDetectionConfidence => "LowDetectionConfidence",
            FlagCode::LowOcrConfidence => "LowOcrConfidence",
            FlagCode::InterBarInconsistency => "InterBarInconsistency",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flag {
    pub code: FlagCode,
    pub severity: Severity,
    pub message: String,
}

impl Flag {
    pub fn new(code: FlagCode, message: impl Into<String>) -> Self {
        Self { code, severity: code.severity(), message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Consistent,
    Suspect,
    Invalid,
}

/// Invalid if any error flag, Suspect if only warnings, else Consistent.
pub fn verdict(flags: &[Flag]) -> Verdict {
    if flags.iter().any(|f| f.severity == Severity::Error) {
        Verdict::Invalid
    } else if flags.is_empty() {
        Verdict::Consistent
    } else {
        Verdict::Suspect
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentReport {
    pub verdict: Verdict,
    pub flags: Vec<Flag>,
    pub narrative: String,
    pub suggestions: Vec<String>,
    pub model_id: String,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleConfig {
    /// Plausible meters per pixel, inclusive.
    pub pitch_band: (f64, f64),
    pub min_detection_confidence: f64,
    pub min_ocr_confidence: f64,
    /// Allowed ratio between pitches of bars in the same image.
    pub sibling_ratio_band: (f64, f64),
}

impl Default for RuleConfig {
    fn default() -> Self {
        Self {
            pitch_band: DEFAULT_PITCH_BAND,
            min_detection_confidence: 0.25,
            min_ocr_confidence: 0.5,
            sibling_ratio_band: (0.5, 2.0),
        }
    }
}

/// Checks one reading. `siblings` are the other readings of the same image.
///
/// Rules, in order: label present; unit token recognized; OCR text agrees
/// with the stored quantity; pitch plausible; detection and OCR confidence;
/// pitch agreement with sibling bars.
pub fn verify_rules(reading: &BarReading, siblings: &[BarReading], rules: &RuleConfig) -> Vec<Flag> {
    let mut flags = Vec::new();
    let Some(scale) = &reading.scale else {
        flags.push(Flag::new(FlagCode::NoScaleText, "no scale text was associated with this bar"));
        if reading.bar.confidence < rules.min_detection_confidence {
            flags.push(low_detection(reading.bar.confidence));
        }
        return flags;
    };
    match parse_scale_text(&scale.text.text) {
        Err(e) if matches!(e.rule, ScaleTextRule::UnknownUnit | ScaleTextRule::WordBoundary | ScaleTextRule::MissingUnit) => {
            flags.push(Flag::new(FlagCode::UnknownUnit, format!("text {:?} has no recognized unit", scale.text.text)));
        }
        Err(_) => {
            flags.push(Flag::new(
                FlagCode::ValueTextMismatch,
                format!("text {:?} does not read as {}", scale.text.text, scale.quantity.canonical_text()),
            ));
        }
        Ok(q) if !q.same_reading(&scale.quantity) => {
            flags.push(Flag::new(
                FlagCode::ValueTextMismatch,
                format!("text reads {} but the stored quantity is {}", q.canonical_text(), scale.quantity.canonical_text()),
            ));
        }
        Ok(_) => {}
    }
    let (lo, hi) = rules.pitch_band;
    if !(scale.pixel_pitch.is_finite() && scale.pixel_pitch >= lo && scale.pixel_pitch <= hi) {
        flags.push(Flag::new(
            FlagCode::PitchOutOfRange,
            format!("pixel pitch {:e} m/px is outside [{lo:e}, {hi:e}]", scale.pixel_pitch),
        ));
    }
    if reading.bar.confidence < rules.min_detection_confidence {
        flags.push(low_detection(reading.bar.confidence));
    }
    if scale.text.confidence < rules.min_ocr_confidence {
        flags.push(Flag::new(
            FlagCode::LowOcrConfidence,
            format!("OCR confidence {:.2} is below {:.2}", scale.text.confidence, rules.min_ocr_confidence),
        ));
    }
    let (rlo, rhi) = rules.sibling_ratio_band;
    let conflicting = siblings
        .iter()
        .filter_map(|s| s.scale.as_ref())
        .filter(|s| {
            let ratio = scale.pixel_pitch / s.pixel_pitch;
            !(ratio.is_finite() && ratio >= rlo && ratio <= rhi)
        })
        .count();
    if conflicting > 0 {
        flags.push(Flag::new(
            FlagCode::InterBarInconsistency,
            format!("pixel pitch disagrees with {conflicting} other bar(s) in the image"),
        ));
    }
    flags
}

fn low_detection(confidence: f64) -> Flag {
    Flag::new(FlagCode::LowDetectionConfidence, format!("detection confidence {confidence:.2} is low"))
}

/// Flags for every reading of an image, each checked against the others.
pub fn verify_all(readings: &[BarReading], rules: &RuleConfig) -> Vec<Vec<Flag>> {
    (0..readings.len())
        .map(|i| {
            let siblings: Vec<BarReading> =
                readings.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, r)| r.clone()).collect();
            verify_rules(&readings[i], &siblings, rules)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Prompts

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ImageMeta {
    pub name: Option<String>,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

impl Prompt {
    /// System and user parts as one document.
    pub fn text(&self) -> String {
        format!("{}\n{}", self.system, self.user)
    }
}

pub const ROLE_TEXT: &str = "You are an assistant for scanning electron microscopy image analysis. You review \
scale-bar detections, the text read next to them and the physical scale derived from both. Explain whether the \
results are consistent, point out anomalies and suggest concrete corrections or follow-up steps. The verdict is \
fixed by deterministic rules; do not contradict the FLAGS section. List each suggestion on its own line starting \
with \"- \".";

fn shape_name(r: &BarReading) -> &'static str {
    r.bar.shape.as_str()
}

/// Deterministic prompt. Sections appear in a fixed order; the question
/// section is present only when a question is given.
pub fn build_prompt(meta: &ImageMeta, readings: &[BarReading], flags: &[Flag], question: Option<&str>) -> Prompt {
    let system = format!("### ROLE\n{ROLE_TEXT}\n");
    let mut u = String::new();
    u.push_str("### IMAGE META\n");
    let _ = writeln!(u, "name: {:?}", meta.name.as_deref().unwrap_or("-"));
    let _ = writeln!(u, "size_px: {}x{}", meta.width, meta.height);
    let _ = writeln!(u, "bars: {}", readings.len());

    u.push_str("\n### DETECTIONS\n");
    if readings.is_empty() {
        u.push_str("none\n");
    }
    for (i, r) in readings.iter().enumerate() {
        let b = r.bar.bbox;
        let _ = writeln!(
            u,
            "[{i}] bbox=({}, {}, {}, {}) shape={} confidence={:.6}",
            b.x_min,
            b.y_min,
            b.x_max,
            b.y_max,
            shape_name(r),
            r.bar.confidence
        );
    }

    u.push_str("\n### OCR\n");
    if readings.is_empty() {
        u.push_str("none\n");
    }
    for (i, r) in readings.iter().enumerate() {
        match &r.scale {
            Some(s) => {
                let b = s.text.bbox;
                let _ = writeln!(
                    u,
                    "[{i}] text={:?} confidence={:.6} engine={} bbox=({}, {}, {}, {})",
                    s.text.text,
                    s.text.confidence,
                    serde_json::to_value(s.text.engine).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
                    b.x_min,
                    b.y_min,
                    b.x_max,
                    b.y_max
                );
            }
            None => {
                let _ = writeln!(u, "[{i}] no scale text");
            }
        }
    }

    u.push_str("\n### DERIVED\n");
    if readings.is_empty() {
        u.push_str("none\n");
    }
    for (i, r) in readings.iter().enumerate() {
        match &r.scale {
            Some(s) => {
                let _ = writeln!(
                    u,
                    "[{i}] quantity={} meters={:.9e} pixel_pitch_m_per_px={:.9e} bar_length_px={} distance_px={:.3}",
                    s.quantity.canonical_text(),
                    s.quantity.meters,
                    s.pixel_pitch,
                    r.bar.bbox.width(),
                    s.distance_px
                );
            }
            None => {
                let _ = writeln!(u, "[{i}] not available");
            }
        }
    }

    u.push_str("\n### FLAGS\n");
    if flags.is_empty() {
        u.push_str("none\n");
    }
    for f in flags {
        let sev = match f.severity {
            Severity::Warn => "warn",
            Severity::Error => "error",
        };
        let _ = writeln!(u, "{sev} {}: {}", f.code.as_str(), f.message);
    }
    let _ = writeln!(u, "verdict: {:?}", verdict(flags));

    if let Some(q) = question {
        u.push_str("\n### USER QUESTION\n");
        u.push_str(q.trim());
        u.push('\n');
    }
    Prompt { system, user: u }
}

/// Provisional prompt asking an expert model to rate an answer on the five
/// rubric axes. Not used for any automatic decision.
pub fn build_judge_prompt(question: &str, expected: &ExpectedAnswer, answer: &str) -> Prompt {
    let system = "### ROLE\nYou are an expert in electron microscopy grading an assistant's answer. Rate each axis \
from 1 (poor) to 5 (excellent): scale_accuracy, detection_quality, ocr_reliability, reasoning_quality, practicality. \
Reply with a JSON object holding those five integer fields and a boolean exact_match.\n"
        .to_string();
    let user = format!(
        "### QUESTION\n{}\n\n### EXPECTED\nvalue={} unit={}\n\n### ANSWER\n{}\n",
        question.trim(),
        expected.value,
        expected.unit,
        answer.trim()
    );
    Prompt { system, user }
}

// ---------------------------------------------------------------------------
// LLM client

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("endpoint timed out")]
    Timeout,
}

/// Minimal HTTP seam so tests can observe or fake network traffic.
pub trait HttpTransport: Send + Sync {
    fn post_json(&self, url: &str, headers: &[(String, String)], body: &Value, timeout: Duration) -> Result<HttpReply, TransportError>;
}

#[derive(Debug, Default)]
pub struct UreqTransport;

impl HttpTransport for UreqTransport {
    fn post_json(&self, url: &str, headers: &[(String, String)], body: &Value, timeout: Duration) -> Result<HttpReply, TransportError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(url);
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let map_err = |e: ureq::Error| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout,
            other => TransportError::Unreachable(other.to_string()),
        };
        let mut resp = req.send_json(body).map_err(map_err)?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(map_err)?;
        Ok(HttpReply { status, body })
    }
}

/// Records requests and answers with a fixed reply.
#[derive(Debug)]
pub struct RecordingTransport {
    reply: Result<HttpReply, TransportError>,
    calls: Mutex<Vec<(String, Value)>>,
}

impl RecordingTransport {
    pub fn new(reply: Result<HttpReply, TransportError>) -> Self {
        Self { reply, calls: Mutex::new(Vec::new()) }
    }

    /// Replies 200 with a chat-completion body carrying `content`.
    pub fn replying(content: &str) -> Self {
        let body = json!({"choices": [{"message": {"role": "assistant", "content": content}}]});
        Self::new(Ok(HttpReply { status: 200, body: body.to_string() }))
    }

    pub fn calls(&self) -> Vec<(String, Value)> {
        self.calls.lock().unwrap().clone()
    }
}

impl HttpTransport for RecordingTransport {
    fn post_json(&self, url: &str, _headers: &[(String, String)], body: &Value, _timeout: Duration) -> Result<HttpReply, TransportError> {
        self.calls.lock().unwrap().push((url.to_string(), body.clone()));
        self.reply.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub base_url: String,
    pub model: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub stub: bool,
    pub timeout: Duration,
    pub max_concurrency: usize,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:11434/v1".into(),
            model: "llama3".into(),
            api_key: None,
            stub: false,
            timeout: DEFAULT_LLM_TIMEOUT,
            max_concurrency: DEFAULT_MAX_CONCURRENCY,
        }
    }
}

impl LlmConfig {
    /// Reads `SEMBAR_LLM_BASE_URL`, `SEMBAR_LLM_MODEL`, `SEMBAR_LLM_API_KEY`
    /// and `SEMBAR_LLM_STUB` over the defaults.
    pub fn from_env() -> Self {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Self {
        let mut c = Self::default();
        if let Some(v) = get("SEMBAR_LLM_BASE_URL").filter(|v| !v.is_empty()) {
            c.base_url = v;
        }
        if let Some(v) = get("SEMBAR_LLM_MODEL").filter(|v| !v.is_empty()) {
            c.model = v;
        }
        c.api_key = get("SEMBAR_LLM_API_KEY").filter(|v| !v.is_empty());
        c.stub = get("SEMBAR_LLM_STUB").is_some_and(|v| matches!(v.trim(), "1" | "true" | "yes"));
        c
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("LLM endpoint unreachable: {0}")]
    EndpointUnreachable(String),
    #[error("LLM endpoint timed out")]
    EndpointTimeout,
    #[error("LLM reply could not be interpreted")]
    MalformedReply(Box<AgentReport>),
    #[error("no rubric scores to aggregate")]
    EmptyInput,
    #[error("rating {0} is outside 1..=5")]
    InvalidRating(u8),
    #[error("cannot read benchmark file: {0}")]
    Benchmark(String),
}

struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl Gate {
    fn enter(&self) -> GatePass<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|p| p.into_inner());
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap_or_else(|p| p.into_inner());
        }
        *n += 1;
        GatePass(self)
    }
}

struct GatePass<'a>(&'a Gate);

impl Drop for GatePass<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|p| p.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// Chat-completion client with a per-endpoint concurrency cap.
pub struct LlmClient {
    pub config: LlmConfig,
    transport: Arc<dyn HttpTransport>,
    gate: Gate,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient").field("config", &self.config).finish()
    }
}

impl LlmClient {
    pub fn new(config: LlmConfig) -> Self {
        Self::with_transport(config, Arc::new(UreqTransport))
    }

    pub fn with_transport(config: LlmConfig, transport: Arc<dyn HttpTransport>) -> Self {
        let limit = config.max_concurrency.max(1);
        Self { config, transport, gate: Gate { in_flight: Mutex::new(0), freed: Condvar::new(), limit } }
    }

    pub fn stub() -> Self {
        Self::new(LlmConfig { stub: true, ..LlmConfig::default() })
    }

    pub fn model_id(&self) -> &str {
        if self.config.stub {
            STUB_MODEL_ID
        } else {
            &self.config.model
        }
    }
}

fn suggestion_for(code: FlagCode) -> &'static str {
    match code {
        FlagCode::NoScaleText => "Re-analyze with an external OCR engine or enter the scale manually.",
        FlagCode::UnknownUnit => "Check the unit on the label; only cm, mm, µm, nm and pm are supported.",
        FlagCode::ValueTextMismatch => "Compare the label text with the parsed value and submit a correction.",
        FlagCode::PitchOutOfRange => "Verify that the detected bar is the scale bar and that the value is right.",
        FlagCode::LowDetectionConfidence => "Inspect the bar crop; consider an external detector.",
        FlagCode::LowOcrConfidence => "Inspect the label crop; consider an external OCR engine.",
        FlagCode::InterBarInconsistency => "Check which scale bar belongs to the micrograph panel being measured.",
    }
}

fn stub_reply(flags: &[Flag]) -> (String, Vec<String>) {
    let v = verdict(flags);
    let narrative = if flags.is_empty() {
        "Stub review: all rule checks passed; the scale reading is consistent.".to_string()
    } else {
        let codes: Vec<&str> = flags.iter().map(|f| f.code.as_str()).collect();
        format!("Stub review: verdict {v:?}; rule checks raised {}.", codes.join(", "))
    };
    let mut suggestions: Vec<String> = Vec::new();
    for f in flags {
        let s = suggestion_for(f.code).to_string();
        if !suggestions.contains(&s) {
            suggestions.push(s);
        }
    }
    (narrative, suggestions)
}

/// Bullet lines (`- ` or `* `) of a reply become suggestions.
pub fn parse_suggestions(content: &str) -> Vec<String> {
    content
        .lines()
        .map(str::trim)
        .filter_map(|l| l.strip_prefix("- ").or_else(|| l.strip_prefix("* ")))
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Asks the endpoint (or the stub) to narrate; the verdict always comes
/// from `flags`.
pub fn query_agent(prompt: &Prompt, flags: &[Flag], client: &LlmClient) -> Result<AgentReport, AgentError> {
    let v = verdict(flags);
    if client.config.stub {
        let (narrative, suggestions) = stub_reply(flags);
        return Ok(AgentReport {
            verdict: v,
            flags: flags.to_vec(),
            narrative,
            suggestions,
            model_id: STUB_MODEL_ID.into(),
            latency_ms: 0,
        });
    }
    let body = json!({
        "model": client.config.model,
        "messages": [
            {"role": "system", "content": prompt.system},
            {"role": "user", "content": prompt.user},
        ],
    });
    let mut headers = vec![("Content-Type".to_string(), "application/json".to_string())];
    if let Some(key) = &client.config.api_key {
        headers.push(("Authorization".into(), format!("Bearer {key}")));
    }
    let started = Instant::now();
    let reply = {
        let _pass = client.gate.enter();
        client.transport.post_json(&client.config.endpoint(), &headers, &body, client.config.timeout)
    };
    let latency_ms = started.elapsed().as_millis() as u64;
    let reply = reply.map_err(|e| match e {
        TransportError::Timeout => AgentError::EndpointTimeout,
        TransportError::Unreachable(m) => AgentError::EndpointUnreachable(m),
    })?;
    let report = |narrative: String, suggestions| AgentReport {
        verdict: v,
        flags: flags.to_vec(),
        narrative,
        suggestions,
        model_id: client.config.model.clone(),
        latency_ms,
    };
    if !(200..300).contains(&reply.status) {
        return Err(AgentError::EndpointUnreachable(format!("HTTP {}: {}", reply.status, reply.body)));
    }
    let content = serde_json::from_str::<Value>(&reply.body)
        .ok()
        .and_then(|v| v.pointer("/choices/0/message/content").and_then(Value::as_str).map(str::to_string));
    match content {
        Some(text) if !text.trim().is_empty() => {
            let suggestions = parse_suggestions(&text);
            Ok(report(text, suggestions))
        }
        _ => Err(AgentError::MalformedReply(Box::new(report(reply.body, Vec::new())))),
    }
}

// ---------------------------------------------------------------------------
// Rubric

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisRatings {
    pub scale_accuracy: u8,
    pub detection_quality: u8,
    pub ocr_reliability: u8,
    pub reasoning_quality: u8,
    pub practicality: u8,
}

impl AxisRatings {
    pub fn as_array(&self) -> [u8; 5] {
        [self.scale_accuracy, self.detection_quality, self.ocr_reliability, self.reasoning_quality, self.practicality]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricScore {
    #[serde(default)]
    pub question_id: Option<String>,
    pub ratings: AxisRatings,
    /// Answer matched the expected value and unit.
    pub exact_match: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisMeans {
    pub scale_accuracy: f64,
    pub detection_quality: f64,
    pub ocr_reliability: f64,
    pub reasoning_quality: f64,
    pub practicality: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RubricSummary {
    pub count: usize,
    pub means: AxisMeans,
    pub accuracy: f64,
}

pub fn aggregate_rubric(scores: &[RubricScore]) -> Result<RubricSummary, AgentError> {
    if scores.is_empty() {
        return Err(AgentError::EmptyInput);
    }
    let mut sums = [0u64; 5];
    for s in scores {
        for (i, r) in s.ratings.as_array().into_iter().enumerate() {
            if !(1..=5).contains(&r) {
                return Err(AgentError::InvalidRating(r));
            }
            sums[i] += r as u64;
        }
    }
    let n = scores.len() as f64;
    let m = sums.map(|s| s as f64 / n);
    Ok(RubricSummary {
        count: scores.len(),
        means: AxisMeans {
            scale_accuracy: m[0],
            detection_quality: m[1],
            ocr_reliability: m[2],
            reasoning_quality: m[3],
            practicality: m[4],
        },
        accuracy: scores.iter().filter(|s| s.exact_match).count() as f64 / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedAnswer {
    pub value: Decimal,
    pub unit: UnitKind,
}

/// One entry of a question benchmark file (a JSON list of these).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkQuestion {
    pub id: String,
    pub image: String,
    pub question: String,
    pub expected: ExpectedAnswer,
}

pub fn load_benchmark(path: &Path) -> Result<Vec<BenchmarkQuestion>, AgentError> {
    let bytes = std::fs::read(path).map_err(|e| AgentError::Benchmark(e.to_string()))?;
    serde_json::from_slice(&bytes).map_err(|e| AgentError::Benchmark(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn severities_are_fixed_by_code() {
        assert_eq!(FlagCode::NoScaleText.severity(), Severity::Error);
        assert_eq!(FlagCode::LowOcrConfidence.severity(), Severity::Warn);
        assert_eq!(verdict(&[]), Verdict::Consistent);
        assert_eq!(verdict(&[Flag::new(FlagCode::LowOcrConfidence, "")]), Verdict::Suspect);
        assert_eq!(
            verdict(&[Flag::new(FlagCode::LowOcrConfidence, ""), Flag::new(FlagCode::PitchOutOfRange, "")]),
            Verdict::Invalid
        );
    }

    #[test]
    fn env_lookup() {
        let c = LlmConfig::from_lookup(|k| match k {
            "SEMBAR_LLM_BASE_URL" => Some("http://x/v1/".into()),
            "SEMBAR_LLM_STUB" => Some("1".into()),
            _ => None,
        });
        assert!(c.stub);
        assert_eq!(c.endpoint(), "http://x/v1/chat/completions");
        assert_eq!(c.model, "llama3");
    }

    #[test]
    fn suggestions_from_bullets() {
        assert_eq!(parse_suggestions("Looks fine.\n- Check the unit\n* Re-run OCR\n-\n"), vec!["Check the unit", "Re-run OCR"]);
    }

    #[test]
    fn rubric_mean_and_accuracy() {
        let mk = |r: u8, ok: bool| RubricScore {
            question_id: None,
            ratings: AxisRatings { scale_accuracy: r, detection_quality: 3, ocr_reliability: 3, reasoning_quality: 3, practicality: 3 },
            exact_match: ok,
        };
        let s = aggregate_rubric(&[mk(5, true), mk(4, false), mk(4, true), mk(3, false), mk(5, true)]).unwrap();
        assert!((s.means.scale_accuracy - 4.2).abs() < 1e-12);
        assert!((s.accuracy - 0.6).abs() < 1e-12);
        assert!(matches!(aggregate_rubric(&[]), Err(AgentError::EmptyInput)));
        assert!(matches!(aggregate_rubric(&[mk(6, true)]), Err(AgentError::InvalidRating(6))));
    }
}
