//! Content-addressed filesystem store.
//!
//! ```text
//! <root>/images/<id>.png        uploaded pixels; id = sha256 of these bytes
//! <root>/results/<id>.json      latest analysis and the agent reports
//! <root>/corrections/<id>.json  append-only list of human corrections
//! ```
//!
//! Every file is written to a temporary sibling and renamed into place, so
//! readers see either the old or the new version. Writes to one id are
//! serialized by a per-id lock; reads take no lock.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::SystemTime;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use sembar::agent::{build_prompt, query_agent, verify_all, AgentReport, Flag, ImageMeta, LlmClient, RuleConfig};
use sembar::detect::DetectorBackend;
use sembar::extract::{extract_scale, parse_scale_text, BarReading, Decimal, UnitKind};
use sembar::imaging::{decode_image, encode_png, ImagingError};
use sembar::ocr::OcrEngineConfig;
use sembar::{BoundingBox, RasterImage};

use crate::error::ServiceError;

pub const MAX_UPLOAD_BYTES: u64 = 64 * 1024 * 1024;

pub trait Clock: Send + Sync {
    fn now(&self) -> SystemTime;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> SystemTime {
        SystemTime::now()
    }
}

/// Always reports the same instant. Used for reproducible responses.
#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub SystemTime);

impl Clock for FixedClock {
    fn now(&self) -> SystemTime {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JobState {
    Uploaded,
    Analyzed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub result_index: u32,
    pub value: Decimal,
    pub unit: UnitKind,
    pub author: String,
    /// RFC 3339, UTC.
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub image_id: String,
    pub state: JobState,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub backend: Option<String>,
    /// One reading per detected bar, with its verification flags.
    pub results: Vec<BarReading>,
    pub error: Option<String>,
    pub corrections: Vec<Correction>,
    pub agent_reports: Vec<AgentReport>,
}

/// Contents of `results/<id>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Analysis {
    state: JobState,
    width: u32,
    height: u32,
    backend: String,
    results: Vec<BarReading>,
    error: Option<String>,
    agent_reports: Vec<AgentReport>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CorrectionRequest {
    pub result_index: u32,
    /// A JSON number or a decimal string.
    pub value: Value,
    pub unit: String,
    pub author: String,
}

/// Detector and OCR engines for one analysis backend.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub name: String,
    pub detector: DetectorBackend,
    pub ocr: OcrEngineConfig,
    pub rules: RuleConfig,
}

impl Pipeline {
    pub fn builtin() -> Self {
        Self {
            name: "builtin".into(),
            detector: DetectorBackend::Builtin,
            ocr: OcrEngineConfig::default(),
            rules: RuleConfig::default(),
        }
    }
}

pub struct Store {
    root: PathBuf,
    clock: Arc<dyn Clock>,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("root", &self.root).finish()
    }
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn is_image_id(id: &str) -> bool {
    id.len() == 64 && id.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().expect("store paths have a parent");
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Option<T>, ServiceError> {
    match fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| ServiceError::Corrupt(format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ServiceError> {
    let bytes = serde_json::to_vec_pretty(value).expect("store records serialize");
    Ok(write_atomic(path, &bytes)?)
}

fn rfc3339(t: SystemTime) -> String {
    time::OffsetDateTime::from(t)
        .format(&time::format_description::well_known::Rfc3339)
        .expect("UTC instants format")
}

/// Turns a JSON number or string into decimal text.
fn value_text(value: &Value) -> Result<String, ServiceError> {
    match value {
        Value::Number(n) => Ok(n.to_string()),
        Value::String(s) => Ok(s.trim().to_string()),
        other => Err(ServiceError::InvalidRequest(format!("value must be a number, got {other}"))),
    }
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        Self::with_clock(root, Arc::new(SystemClock))
    }

    pub fn with_clock(root: impl Into<PathBuf>, clock: Arc<dyn Clock>) -> std::io::Result<Self> {
        let root = root.into();
        for sub in ["images", "results", "corrections"] {
            fs::create_dir_all(root.join(sub))?;
        }
        Ok(Self { root, clock, locks: Mutex::new(HashMap::new()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn image_path(&self, id: &str) -> PathBuf {
        self.root.join("images").join(format!("{id}.png"))
    }

    fn results_path(&self, id: &str) -> PathBuf {
        self.root.join("results").join(format!("{id}.json"))
    }

    fn corrections_path(&self, id: &str) -> PathBuf {
        self.root.join("corrections").join(format!("{id}.json"))
    }

    fn lock(&self, id: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap_or_else(|p| p.into_inner());
        locks.entry(id.to_string()).or_default().clone()
    }

    fn require(&self, id: &str) -> Result<(), ServiceError> {
        if is_image_id(id) && self.image_path(id).is_file() {
            Ok(())
        } else {
            Err(ServiceError::NotFound(id.to_string()))
        }
    }

    /// Stores PNG or JPEG bytes and returns their id. PNG bytes are kept
    /// verbatim; JPEG is converted to PNG first, and the id is the digest of
    /// the stored PNG. Storing the same image again changes nothing.
    pub fn upload(&self, bytes: &[u8]) -> Result<String, ServiceError> {
        if bytes.len() as u64 > MAX_UPLOAD_BYTES {
            return Err(ServiceError::TooLarge { limit: MAX_UPLOAD_BYTES });
        }
        let image = decode_image(bytes).map_err(|e| match e {
            ImagingError::UnsupportedFormat(m) => ServiceError::UnsupportedFormat(m),
            other => ServiceError::UnsupportedFormat(other.to_string()),
        })?;
        let png;
        let stored = if bytes.starts_with(b"\x89PNG") {
            bytes
        } else {
            png = encode_png(&image);
            &png[..]
        };
        let id = digest(stored);
        let lock = self.lock(&id);
        let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
        let path = self.image_path(&id);
        if !path.exists() {
            write_atomic(&path, stored)?;
            log::info!("stored image {id} ({} bytes)", stored.len());
        }
        Ok(id)
    }

    pub fn load_image(&self, id: &str) -> Result<RasterImage, ServiceError> {
        self.require(id)?;
        sembar::imaging::load_image(self.image_path(id)).map_err(|e| ServiceError::Corrupt(e.to_string()))
    }

    pub fn get(&self, id: &str) -> Result<JobRecord, ServiceError> {
        self.require(id)?;
        let analysis: Option<Analysis> = read_json(&self.results_path(id))?;
        let corrections: Vec<Correction> = read_json(&self.corrections_path(id))?.unwrap_or_default();
        Ok(match analysis {
            Some(a) => JobRecord {
                image_id: id.to_string(),
                state: a.state,
                width: Some(a.width),
                height: Some(a.height),
                backend: Some(a.backend),
                results: a.results,
                error: a.error,
                corrections,
                agent_reports: a.agent_reports,
            },
            None => JobRecord {
                image_id: id.to_string(),
                state: JobState::Uploaded,
                width: None,
                height: None,
                backend: None,
                results: Vec::new(),
                error: None,
                corrections,
                agent_reports: Vec::new(),
            },
        })
    }

    /// Runs the reading pipeline and the rule checks, replacing any earlier
    /// results. Corrections and agent reports are kept. A pipeline error is
    /// recorded as a `Failed` record rather than returned.
    pub fn analyze(&self, id: &str, pipeline: &Pipeline) -> Result<JobRecord, ServiceError> {
        let image = self.load_image(id)?;
        let lock = self.lock(id);
        let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
        let previous: Option<Analysis> = read_json(&self.results_path(id))?;
        let (state, results, error) = match extract_scale(&image, &pipeline.detector, &pipeline.ocr) {
            Ok(mut readings) => {
                let flags = verify_all(&readings, &pipeline.rules);
                for (r, f) in readings.iter_mut().zip(flags) {
                    r.flags = f;
                }
                (JobState::Analyzed, readings, None)
            }
            Err(e) => {
                log::warn!("analysis of {id} failed: {e}");
                (JobState::Failed, Vec::new(), Some(e.to_string()))
            }
        };
        let analysis = Analysis {
            state,
            width: image.width(),
            height: image.height(),
            backend: pipeline.name.clone(),
            results,
            error,
            agent_reports: previous.map(|p| p.agent_reports).unwrap_or_default(),
        };
        write_json(&self.results_path(id), &analysis)?;
        drop(_guard);
        self.get(id)
    }

    pub fn crop(&self, id: &str, region: BoundingBox) -> Result<Vec<u8>, ServiceError> {
        let image = self.load_image(id)?;
        let cropped = image.crop(region).map_err(|e| ServiceError::InvalidRequest(e.to_string()))?;
        Ok(encode_png(&cropped))
    }

    /// Appends a correction; the analysis itself is never modified.
    pub fn submit_correction(&self, id: &str, request: &CorrectionRequest) -> Result<JobRecord, ServiceError> {
        self.require(id)?;
        let text = format!("{} {}", value_text(&request.value)?, request.unit.trim());
        let quantity = parse_scale_text(&text)?;
        let lock = self.lock(id);
        let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
        let record = self.get(id)?;
        if record.state == JobState::Uploaded {
            return Err(ServiceError::NotAnalyzed(id.to_string()));
        }
        if request.result_index as usize >= record.results.len() {
            return Err(ServiceError::IndexOutOfRange { index: request.result_index, len: record.results.len() });
        }
        let mut corrections = record.corrections;
        corrections.push(Correction {
            result_index: request.result_index,
            value: quantity.value,
            unit: quantity.unit,
            author: request.author.clone(),
            timestamp: rfc3339(self.clock.now()),
        });
        write_json(&self.corrections_path(id), &corrections)?;
        drop(_guard);
        self.get(id)
    }

    /// Asks the agent about the stored results and appends its report.
    ///
    /// The endpoint is queried without holding the write lock, so a slow
    /// model does not block analysis or corrections of the same image.
    pub fn agent_query(&self, id: &str, question: Option<&str>, client: &LlmClient) -> Result<AgentReport, ServiceError> {
        let record = self.get(id)?;
        if record.state != JobState::Analyzed {
            return Err(ServiceError::NotAnalyzed(id.to_string()));
        }
        let meta = ImageMeta {
            name: Some(format!("{id}.png")),
            width: record.width.unwrap_or(0),
            height: record.height.unwrap_or(0),
        };
        let flags: Vec<Flag> = record.results.iter().flat_map(|r| r.flags.iter().cloned()).collect();
        let prompt = build_prompt(&meta, &record.results, &flags, question);
        let report = query_agent(&prompt, &flags, client)?;

        let lock = self.lock(id);
        let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
        let mut analysis: Analysis = read_json(&self.results_path(id))?
            .ok_or_else(|| ServiceError::Corrupt(format!("results for {id} disappeared")))?;
        analysis.agent_reports.push(report.clone());
        write_json(&self.results_path(id), &analysis)?;
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_strict_hex() {
        assert!(is_image_id(&"a".repeat(64)));
        assert!(!is_image_id(&"A".repeat(64)));
        assert!(!is_image_id("../../etc/passwd"));
        assert!(!is_image_id(&"a".repeat(63)));
    }

    #[test]
    fn timestamps_are_utc() {
        let t = SystemTime::UNIX_EPOCH + std::time::Duration::from_secs(1_700_000_000);
        assert_eq!(rfc3339(t), "2023-11-14T22:13:20Z");
    }

    #[test]
    fn numeric_values_keep_their_text() {
        assert_eq!(value_text(&serde_json::json!(50)).unwrap(), "50");
        assert_eq!(value_text(&serde_json::json!(0.5)).unwrap(), "0.5");
        assert_eq!(value_text(&serde_json::json!(" 2.5 ")).unwrap(), "2.5");
        assert!(value_text(&serde_json::json!([1])).is_err());
    }
}
