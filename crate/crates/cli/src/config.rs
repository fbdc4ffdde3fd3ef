//! Optional settings file.
//!
//! A `.toml` file may hold any of the sections below; every key is optional.
//! A `.json` file is read as a bare generator config, such as the
//! `gen_config.json` written next to a generated dataset.
//!
//! ```toml
//! adapter_timeout_secs = 30
//! detector = "builtin"            # or "ext:<command>"
//!
//! [ocr]
//! general = "builtin"             # or "ext:<command>"
//! numeral = "builtin"
//! fallback_confidence = 0.5
//!
//! [llm]
//! base_url = "http://127.0.0.1:11434/v1"
//! model = "llama3"
//! stub = false
//! timeout_secs = 60
//! max_concurrency = 4
//!
//! [service]
//! port = 8080
//! store = "store"
//! external_detector = "python3 detector.py"
//! external_ocr = "python3 ocr.py"
//!
//! [gen]
//! count = 100
//! size = [1024, 728]
//! split_ratios = [0.7, 0.15, 0.15]
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use sembar::adapter::{AdapterConfig, AdapterPool, DEFAULT_TIMEOUT};
use sembar::agent::LlmConfig;
use sembar::autodg::GenConfig;
use sembar::detect::DetectorBackend;
use sembar::ocr::{EngineSelector, OcrEngineConfig};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub adapter_timeout_secs: Option<u64>,
    pub detector: Option<String>,
    pub ocr: OcrSection,
    pub llm: LlmSection,
    pub service: ServiceSection,
    pub gen: Option<GenConfig>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcrSection {
    pub general: Option<String>,
    pub numeral: Option<String>,
    pub fallback_confidence: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub stub: Option<bool>,
    pub timeout_secs: Option<u64>,
    pub max_concurrency: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    pub port: Option<u16>,
    pub store: Option<PathBuf>,
    pub external_detector: Option<String>,
    pub external_ocr: Option<String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        if path.extension().is_some_and(|e| e == "json") {
            let gen: GenConfig = serde_json::from_str(&text).with_context(|| format!("invalid generator config {}", path.display()))?;
            return Ok(Self { gen: Some(gen), ..Self::default() });
        }
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn adapter_timeout(&self) -> Duration {
        self.adapter_timeout_secs.map_or(DEFAULT_TIMEOUT, Duration::from_secs)
    }

    pub fn adapter_pool(&self, command: &str) -> Arc<AdapterPool> {
        Arc::new(AdapterPool::single(AdapterConfig::new(command).with_timeout(self.adapter_timeout())))
    }

    /// `builtin` or `ext:<command>`.
    pub fn detector(&self, spec: Option<&str>) -> Result<DetectorBackend> {
        match parse_engine(spec.or(self.detector.as_deref()).unwrap_or("builtin"))? {
            None => Ok(DetectorBackend::Builtin),
            Some(cmd) => Ok(DetectorBackend::External(self.adapter_pool(&cmd))),
        }
    }

    fn selector(&self, spec: Option<&str>) -> Result<EngineSelector> {
        Ok(match parse_engine(spec.unwrap_or("builtin"))? {
            None => EngineSelector::Builtin,
            Some(cmd) => EngineSelector::External(self.adapter_pool(&cmd)),
        })
    }

    /// OCR engines; `general` overrides the file's general engine.
    pub fn ocr(&self, general: Option<&str>) -> Result<OcrEngineConfig> {
        let mut c = OcrEngineConfig {
            general: self.selector(general.or(self.ocr.general.as_deref()))?,
            numeral: self.selector(self.ocr.numeral.as_deref())?,
            ..OcrEngineConfig::default()
        };
        if let Some(f) = self.ocr.fallback_confidence {
            c.fallback_confidence = f;
        }
        Ok(c)
    }

    /// Environment variables win over the file.
    pub fn llm(&self, force_stub: bool) -> LlmConfig {
        let section = &self.llm;
        let mut c = LlmConfig::from_lookup(|key| {
            std::env::var(key).ok().or_else(|| match key {
                "SEMBAR_LLM_BASE_URL" => section.base_url.clone(),
                "SEMBAR_LLM_MODEL" => section.model.clone(),
                "SEMBAR_LLM_STUB" => section.stub.map(|s| if s { "1" } else { "0" }.to_string()),
                _ => None,
            })
        });
        if let Some(t) = section.timeout_secs {
            c.timeout = Duration::from_secs(t);
        }
        if let Some(n) = section.max_concurrency {
            c.max_concurrency = n;
        }
        c.stub |= force_stub;
        c
    }
}

/// `None` for the builtin engine, the command for `ext:<command>`.
pub fn parse_engine(spec: &str) -> Result<Option<String>> {
    let spec = spec.trim();
    if spec == "builtin" {
        return Ok(None);
    }
    match spec.strip_prefix("ext:").map(str::trim) {
        Some(cmd) if !cmd.is_empty() => Ok(Some(cmd.to_string())),
        _ => bail!("engine must be `builtin` or `ext:<command>`, got {spec:?}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn engine_specs() {
        assert_eq!(parse_engine("builtin").unwrap(), None);
        assert_eq!(parse_engine("ext: python3 a.py --x").unwrap().as_deref(), Some("python3 a.py --x"));
        assert!(parse_engine("ext:").is_err());
        assert!(parse_engine("yolo").is_err());
    }

    #[test]
    fn toml_sections() {
        let c: FileConfig = toml::from_str(
            "detector = \"ext:run\"\n[llm]\nmodel = \"m\"\nstub = true\n[gen]\ncount = 7\nsize = [400, 300]\nsplit_ratios = [0, 0, 1]\nvalue_pool = [1, 2.5]\n",
        )
        .unwrap();
        assert_eq!(c.detector.as_deref(), Some("ext:run"));
        let gen = c.gen.unwrap();
        assert_eq!((gen.count, gen.size, gen.split_ratios), (7, (400, 300), [0.0, 0.0, 1.0]));
        assert_eq!(gen.value_pool[1].to_string(), "2.5");
        assert!(toml::from_str::<FileConfig>("colour = 1").is_err());
    }
}
