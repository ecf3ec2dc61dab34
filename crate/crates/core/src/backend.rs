//! Extractor backends for the NER and QA tasks.
//!
//! `rule` runs the built-in rules, `stub:<fixture.json>` replays canned
//! extractions, and `external:<address>` talks to a model server over a
//! line-delimited JSON protocol. The address is either `tcp://host:port`
//! or a command line that is spawned with the protocol on its stdio.
//!
//! Every request is one JSON object per line:
//!
//! ```text
//! {"id":1,"task":"hello"}
//! {"id":2,"task":"ner","tokens":["Quick","Heal"]}
//! {"id":3,"task":"qa","question":"what is impact?","passage":"..."}
//! ```
//!
//! and every response echoes the request id:
//!
//! ```text
//! {"id":1,"protocol":1,"tasks":["ner","qa"]}
//! {"id":2,"tags":["B-Product","I-Product"]}
//! {"id":3,"found":true,"start":10,"end":22}
//! ```
//!
//! QA offsets on the wire are Unicode character offsets into the passage.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ner::{BioTag, EntityKind};
use crate::qa::Question;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireRequest {
    pub id: i64,
    pub task: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passage: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireResponse {
    pub id: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tasks: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub found: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Which backend a task should use, as written on the command line.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BackendSpec {
    #[default]
    Rule,
    Stub(PathBuf),
    External(String),
}

impl FromStr for BackendSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "rule" {
            Ok(BackendSpec::Rule)
        } else if let Some(path) = s.strip_prefix("stub:") {
            Ok(BackendSpec::Stub(PathBuf::from(path)))
        } else if let Some(addr) = s.strip_prefix("external:") {
            Ok(BackendSpec::External(addr.to_string()))
        } else {
            Err(Error::Validation(format!(
                "backend {s:?}: expected rule, stub:<fixture> or external:<address>"
            )))
        }
    }
}

impl TryFrom<String> for BackendSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BackendSpec> for String {
    fn from(spec: BackendSpec) -> String {
        spec.to_string()
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Rule => f.write_str("rule"),
            BackendSpec::Stub(p) => write!(f, "stub:{}", p.display()),
            BackendSpec::External(a) => write!(f, "external:{a}"),
        }
    }
}

/// A resolved backend, cheap to clone and share across workers.
#[derive(Clone, Default)]
pub enum Backend {
    #[default]
    Rule,
    Stub(Arc<StubFixtures>),
    External(Arc<ExternalBackend>),
}

impl fmt::Debug for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Backend::Rule => f.write_str("Rule"),
            Backend::Stub(_) => f.write_str("Stub"),
            Backend::External(e) => write!(f, "External({})", e.address),
        }
    }
}

impl Backend {
    pub fn stub(fixtures: StubFixtures) -> Self {
        Backend::Stub(Arc::new(fixtures))
    }

    /// Resolve a spec; external backends are connected and handshaken here.
    pub fn open(spec: &BackendSpec, task: &str) -> Result<Self> {
        match spec {
            BackendSpec::Rule => Ok(Backend::Rule),
            BackendSpec::Stub(path) => Ok(Backend::stub(StubFixtures::load(path)?)),
            BackendSpec::External(addr) => {
                let ext = ExternalBackend::connect(addr)?;
                if !ext.supports(task) {
                    return Err(Error::BackendUnavailable(format!(
                        "{addr} does not offer task {task:?}"
                    )));
                }
                Ok(Backend::External(Arc::new(ext)))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Stub

/// One canned entity. Offsets are recovered by searching for `surface` in
/// the title (`sentence_index` -1) or in the given/first matching sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubEntity {
    pub kind: EntityKind,
    pub surface: String,
    #[serde(default)]
    pub sentence_index: Option<i32>,
}

/// Canned extractions keyed by ExploitDB id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubFixtures {
    #[serde(default)]
    pub ner: BTreeMap<u64, Vec<StubEntity>>,
    /// `None` marks a question the stub answers with "no answer".
    #[serde(default)]
    pub qa: BTreeMap<u64, BTreeMap<Question, Option<String>>>,
}

impl StubFixtures {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn entities(&self, edb_id: u64) -> &[StubEntity] {
        self.ner.get(&edb_id).map_or(&[], Vec::as_slice)
    }

    pub fn answer(&self, edb_id: u64, question: Question) -> Option<&str> {
        self.qa
            .get(&edb_id)
            .and_then(|m| m.get(&question))
            .and_then(|a| a.as_deref())
    }
}

// ---------------------------------------------------------------------------
// External

struct Connection {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    next_id: i64,
}

impl Connection {
    fn call(&mut self, mut req: WireRequest) -> Result<WireResponse> {
        req.id = self.next_id;
        self.next_id += 1;
        let unavailable = |e: std::io::Error| Error::BackendUnavailable(e.to_string());
        let line = serde_json::to_string(&req)?;
        self.writer
            .write_all(line.as_bytes())
            .map_err(unavailable)?;
        self.writer.write_all(b"\n").map_err(unavailable)?;
        self.writer.flush().map_err(unavailable)?;
        let mut buf = String::new();
        loop {
            buf.clear();
            if self.reader.read_line(&mut buf).map_err(unavailable)? == 0 {
                return Err(Error::BackendUnavailable("connection closed".into()));
            }
            if buf.trim().is_empty() {
                continue;
            }
            let resp: WireResponse = serde_json::from_str(buf.trim())
                .map_err(|e| Error::Protocol(format!("bad response line: {e}")))?;
            if resp.id == -1 {
                // the server could not parse our request line
                let err = resp.error.unwrap_or_default();
                return Err(Error::Protocol(format!("{} rejected: {err}", req.task)));
            }
            if resp.id != req.id {
                // stale reply to an abandoned request
                continue;
            }
            if let Some(err) = resp.error {
                return Err(Error::Protocol(format!("{} failed: {err}", req.task)));
            }
            return Ok(resp);
        }
    }
}

/// Client side of the model-server protocol. Requests are serialized
/// through a mutex, so one connection can be shared by a worker pool.
pub struct ExternalBackend {
    address: String,
    tasks: Vec<String>,
    conn: Mutex<Connection>,
    child: Mutex<Option<Child>>,
}

impl ExternalBackend {
    pub fn connect(address: &str) -> Result<Self> {
        let unavailable = |e: std::io::Error| Error::BackendUnavailable(format!("{address}: {e}"));
        if let Some(hostport) = address.strip_prefix("tcp://") {
            let stream = TcpStream::connect(hostport).map_err(unavailable)?;
            let reader = BufReader::new(stream.try_clone().map_err(unavailable)?);
            return Self::handshake(address, Box::new(reader), Box::new(stream), None);
        }
        let mut parts = address.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| Error::BackendUnavailable("empty external command".into()))?;
        let mut child = Command::new(program)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(unavailable)?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Self::handshake(
            address,
            Box::new(BufReader::new(stdout)),
            Box::new(stdin),
            Some(child),
        )
    }

    /// Run the protocol over an already-open pair of streams.
    pub fn from_streams(
        reader: impl BufRead + Send + 'static,
        writer: impl Write + Send + 'static,
    ) -> Result<Self> {
        Self::handshake("<streams>", Box::new(reader), Box::new(writer), None)
    }

    fn handshake(
        address: &str,
        reader: Box<dyn BufRead + Send>,
        writer: Box<dyn Write + Send>,
        child: Option<Child>,
    ) -> Result<Self> {
        let mut conn = Connection {
            reader,
            writer,
            next_id: 1,
        };
        let hello = conn
            .call(WireRequest {
                id: 0,
                task: "hello".into(),
                tokens: None,
                question: None,
                passage: None,
            })
            .map_err(|e| Error::BackendUnavailable(format!("{address}: handshake failed: {e}")))?;
        if hello.protocol != Some(PROTOCOL_VERSION) {
            return Err(Error::BackendUnavailable(format!(
                "{address}: unsupported protocol {:?}",
                hello.protocol
            )));
        }
        Ok(ExternalBackend {
            address: address.to_string(),
            tasks: hello.tasks.unwrap_or_default(),
            conn: Mutex::new(conn),
            child: Mutex::new(child),
        })
    }

    pub fn address(&self) -> &str {
        &self.address
    }

    pub fn supports(&self, task: &str) -> bool {
        self.tasks.iter().any(|t| t == task)
    }

    fn call(&self, req: WireRequest) -> Result<WireResponse> {
        let mut conn = self
            .conn
            .lock()
            .map_err(|_| Error::BackendUnavailable("connection poisoned".into()))?;
        conn.call(req)
    }

    /// BIO tags for one token sequence.
    pub fn tag(&self, tokens: &[String]) -> Result<Vec<BioTag>> {
        let resp = self.call(WireRequest {
            id: 0,
            task: "ner".into(),
            tokens: Some(tokens.to_vec()),
            question: None,
            passage: None,
        })?;
        let tags = resp
            .tags
            .ok_or_else(|| Error::Protocol("ner response without tags".into()))?;
        if tags.len() != tokens.len() {
            return Err(Error::Protocol(format!(
                "{} tags for {} tokens",
                tags.len(),
                tokens.len()
            )));
        }
        tags.iter().map(|t| t.parse()).collect()
    }

    /// Answer span as a byte range into `passage`, or `None` for no answer.
    pub fn answer(&self, question: &str, passage: &str) -> Result<Option<(usize, usize)>> {
        let resp = self.call(WireRequest {
            id: 0,
            task: "qa".into(),
            tokens: None,
            question: Some(question.to_string()),
            passage: Some(passage.to_string()),
        })?;
        match resp.found {
            Some(false) => Ok(None),
            Some(true) => {
                let (start, end) = resp
                    .start
                    .zip(resp.end)
                    .ok_or_else(|| Error::Protocol("found answer without offsets".into()))?;
                let to_byte = |c: usize| char_to_byte_offset(passage, c);
                match (to_byte(start), to_byte(end)) {
                    (Some(s), Some(e)) if s < e => Ok(Some((s, e))),
                    _ => Err(Error::Protocol(format!(
                        "answer offsets {start}..{end} out of range"
                    ))),
                }
            }
            None => Err(Error::Protocol("qa response without found flag".into())),
        }
    }
}

impl Drop for ExternalBackend {
    fn drop(&mut self) {
        if let Ok(mut child) = self.child.lock() {
            if let Some(mut child) = child.take() {
                // closing stdin ends the server loop; kill if it lingers
                if let Ok(mut conn) = self.conn.lock() {
                    conn.writer = Box::new(std::io::sink());
                }
                if !matches!(child.try_wait(), Ok(Some(_))) {
                    let _ = child.kill();
                }
                let _ = child.wait();
            }
        }
    }
}

/// Byte offset of the `chars`-th character (the end counts as valid).
pub fn char_to_byte_offset(s: &str, chars: usize) -> Option<usize> {
    if chars == s.chars().count() {
        return Some(s.len());
    }
    s.char_indices().nth(chars).map(|(b, _)| b)
}

pub fn byte_to_char_offset(s: &str, byte: usize) -> usize {
    s[..byte].chars().count()
}
