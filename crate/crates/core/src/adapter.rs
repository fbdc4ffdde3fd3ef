//! Line-delimited JSON protocol for external detector and OCR engines.
//!
//! An adapter is any program that reads one JSON request per line on stdin
//! and answers with one JSON object per line on stdout. Requests carry a
//! monotonically increasing `id` that the response must echo. A response is
//! either the task payload or `{"id": .., "error": "<message>"}`.
//!
//! Each [`AdapterClient`] owns at most one child process and keeps exactly
//! one request in flight. A process that times out or breaks the protocol is
//! killed and transparently respawned on the next request.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("adapter unavailable: {0}")]
    Unavailable(String),
    #[error("adapter protocol error: {0}")]
    Protocol(String),
    #[error("adapter did not answer within {0:?}")]
    Timeout(Duration),
    #[error("adapter reported an error: {0}")]
    Remote(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterConfig {
    /// Shell command line that starts the adapter.
    pub command: String,
    #[serde(with = "millis", default = "default_timeout")]
    pub timeout: Duration,
}

fn default_timeout() -> Duration {
    DEFAULT_TIMEOUT
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

impl AdapterConfig {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

struct AdapterProcess {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl AdapterProcess {
    fn spawn(command: &str) -> Result<Self, AdapterError> {
        if command.trim().is_empty() {
            return Err(AdapterError::Unavailable("empty adapter command".into()));
        }
        let mut cmd = Command::new("sh");
        cmd.arg("-c").arg(command);
        // Own process group, so killing it also reaps whatever the shell started.
        #[cfg(unix)]
        std::os::unix::process::CommandExt::process_group(&mut cmd, 0);
        let mut child = cmd
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| AdapterError::Unavailable(format!("{command}: {e}")))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) => break,
                    Ok(_) => {
                        if tx.send(Ok(line)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });
        Ok(Self { child, stdin, lines: rx })
    }

    fn kill(mut self) {
        #[cfg(unix)]
        if let Ok(pid) = i32::try_from(self.child.id()) {
            // SAFETY: plain syscall on the group this child leads.
            unsafe {
                libc::kill(-pid, libc::SIGKILL);
            }
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// One adapter process, serialized: concurrent callers queue on the mutex.
pub struct AdapterClient {
    config: AdapterConfig,
    state: Mutex<ClientState>,
}

struct ClientState {
    process: Option<AdapterProcess>,
    next_id: u64,
}

impl std::fmt::Debug for AdapterClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdapterClient").field("config", &self.config).finish()
    }
}

impl AdapterClient {
    pub fn new(config: AdapterConfig) -> Self {
        Self {
            config,
            state: Mutex::new(ClientState { process: None, next_id: 1 }),
        }
    }

    pub fn config(&self) -> &AdapterConfig {
        &self.config
    }

    /// Sends `{"id": <next>, ..fields}` and returns the decoded payload.
    pub fn call<T: DeserializeOwned>(&self, fields: Value) -> Result<T, AdapterError> {
        let mut state = self.state.lock().unwrap_or_else(|p| p.into_inner());
        let id = state.next_id;
        state.next_id += 1;

        let mut request = match fields {
            Value::Object(map) => map,
            _ => return Err(AdapterError::Protocol("request fields must be an object".into())),
        };
        request.insert("id".into(), Value::from(id));
        let line = serde_json::to_string(&Value::Object(request)).expect("json value serializes");

        if state.process.is_none() {
            state.process = Some(AdapterProcess::spawn(&self.config.command)?);
        }
        let result = exchange(state.process.as_mut().unwrap(), &line, self.config.timeout);
        match result {
            Ok(raw) => match decode_response(id, &raw) {
                Ok(value) => Ok(value),
                Err(e) => {
                    // Remote errors leave the stream in sync; anything else
                    // means we no longer trust the process.
                    if !matches!(e, AdapterError::Remote(_)) {
                        if let Some(p) = state.process.take() {
                            p.kill();
                        }
                    }
                    Err(e)
                }
            },
            Err(e) => {
                if let Some(p) = state.process.take() {
                    p.kill();
                }
                Err(e)
            }
        }
    }
}

impl Drop for AdapterClient {
    fn drop(&mut self) {
        if let Ok(mut state) = self.state.lock() {
            if let Some(p) = state.process.take() {
                p.kill();
            }
        }
    }
}

fn exchange(process: &mut AdapterProcess, line: &str, timeout: Duration) -> Result<String, AdapterError> {
    writeln!(process.stdin, "{line}")
        .and_then(|_| process.stdin.flush())
        .map_err(|e| AdapterError::Protocol(format!("writing request: {e}")))?;
    loop {
        match process.lines.recv_timeout(timeout) {
            Ok(Ok(raw)) => {
                if raw.trim().is_empty() {
                    continue;
                }
                return Ok(raw);
            }
            Ok(Err(e)) => return Err(AdapterError::Protocol(format!("reading response: {e}"))),
            Err(RecvTimeoutError::Timeout) => return Err(AdapterError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                return Err(AdapterError::Protocol("adapter closed its output".into()))
            }
        }
    }
}

fn decode_response<T: DeserializeOwned>(id: u64, raw: &str) -> Result<T, AdapterError> {
    let value: Value = serde_json::from_str(raw.trim())
        .map_err(|e| AdapterError::Protocol(format!("response is not JSON ({e}): {}", raw.trim())))?;
    let obj = value
        .as_object()
        .ok_or_else(|| AdapterError::Protocol("response is not a JSON object".into()))?;
    match obj.get("id").and_then(Value::as_u64) {
        Some(got) if got == id => {}
        Some(got) => return Err(AdapterError::Protocol(format!("response id {got} does not match request id {id}"))),
        None => return Err(AdapterError::Protocol("response lacks a numeric id".into())),
    }
    if let Some(err) = obj.get("error") {
        let message = err.as_str().map(str::to_string).unwrap_or_else(|| err.to_string());
        return Err(AdapterError::Remote(message));
    }
    serde_json::from_value(value).map_err(|e| AdapterError::Protocol(format!("unexpected response shape: {e}")))
}

/// Round-robin set of adapter processes for parallel callers.
#[derive(Debug)]
pub struct AdapterPool {
    clients: Vec<AdapterClient>,
    next: AtomicUsize,
}

impl AdapterPool {
    pub fn new(config: AdapterConfig, size: usize) -> Self {
        Self {
            clients: (0..size.max(1)).map(|_| AdapterClient::new(config.clone())).collect(),
            next: AtomicUsize::new(0),
        }
    }

    pub fn single(config: AdapterConfig) -> Self {
        Self::new(config, 1)
    }

    pub fn config(&self) -> &AdapterConfig {
        self.clients[0].config()
    }

    pub fn call<T: DeserializeOwned>(&self, fields: Value) -> Result<T, AdapterError> {
        let i = self.next.fetch_add(1, Ordering::Relaxed) % self.clients.len();
        self.clients[i].call(fields)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[derive(Debug, Deserialize)]
    struct Echo {
        id: u64,
        text: String,
    }

    fn script(body: &str) -> AdapterConfig {
        AdapterConfig::new(format!("python3 -c '{body}'")).with_timeout(Duration::from_secs(5))
    }

    const ECHO: &str = r#"
import json, sys
for line in sys.stdin:
    req = json.loads(line)
    print(json.dumps({"id": req["id"], "text": req.get("task", "")}), flush=True)
"#;

    #[test]
    fn echo_round_trip_with_increasing_ids() {
        let client = AdapterClient::new(script(ECHO));
        let a: Echo = client.call(json!({"task": "one"})).unwrap();
        let b: Echo = client.call(json!({"task": "two"})).unwrap();
        assert_eq!((a.id, a.text.as_str()), (1, "one"));
        assert_eq!((b.id, b.text.as_str()), (2, "two"));
    }

    #[test]
    fn missing_program_is_unavailable() {
        let client = AdapterClient::new(AdapterConfig::new("").with_timeout(Duration::from_secs(1)));
        assert!(matches!(client.call::<Echo>(json!({})), Err(AdapterError::Unavailable(_))));
    }

    #[test]
    fn garbage_output_is_protocol_error() {
        let client = AdapterClient::new(script("import sys\nfor l in sys.stdin:\n    print(\"nope\", flush=True)\n"));
        assert!(matches!(client.call::<Echo>(json!({})), Err(AdapterError::Protocol(_))));
    }

    #[test]
    fn decode_checks_id_and_error() {
        assert!(matches!(decode_response::<Echo>(3, r#"{"id":4,"text":""}"#), Err(AdapterError::Protocol(_))));
        assert!(matches!(decode_response::<Echo>(3, r#"{"text":""}"#), Err(AdapterError::Protocol(_))));
        assert!(matches!(decode_response::<Echo>(3, r#"{"id":3,"error":"boom"}"#), Err(AdapterError::Remote(m)) if m == "boom"));
        assert!(matches!(decode_response::<Echo>(3, r#"{"id":3,"txt":1}"#), Err(AdapterError::Protocol(_))));
        assert!(matches!(decode_response::<Echo>(3, "[1,2]"), Err(AdapterError::Protocol(_))));
    }
}
