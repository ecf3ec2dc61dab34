//! Exploit posts, CVE records, the CPE product-vendor dictionary, and the
//! links between exploits and the CVEs they cite.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;
use std::sync::LazyLock;

use chrono::NaiveDate;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess;

static CVE_ID: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^CVE-\d{4}-\d{4,}$").unwrap());
static CVE_ID_ANYWHERE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"CVE-\d{4}-\d{4,}").unwrap());

pub fn is_cve_id(s: &str) -> bool {
    CVE_ID.is_match(s)
}

/// ExploitDB's four exploit categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExploitType {
    Remote,
    Local,
    Webapp,
    Dos,
}

impl FromStr for ExploitType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "remote" => Ok(ExploitType::Remote),
            "local" => Ok(ExploitType::Local),
            "webapp" | "webapps" | "web application" => Ok(ExploitType::Webapp),
            "dos" | "denial of service" | "dos/poc" => Ok(ExploitType::Dos),
            _ => Err(Error::UnknownExploitType(s.to_string())),
        }
    }
}

impl fmt::Display for ExploitType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExploitType::Remote => "remote",
            ExploitType::Local => "local",
            ExploitType::Webapp => "webapp",
            ExploitType::Dos => "dos",
        })
    }
}

/// One exploit post. `published` and `exploit_type` are optional because
/// headerless posts carry neither.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExploitPost {
    pub edb_id: u64,
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub poc_code: String,
    #[serde(default)]
    pub published: Option<NaiveDate>,
    #[serde(default)]
    pub exploit_type: Option<ExploitType>,
    #[serde(default)]
    pub platform: Option<String>,
    #[serde(default)]
    pub cve_ids: Vec<String>,
    #[serde(default)]
    pub vendor_homepage: Option<String>,
    #[serde(default)]
    pub author: Option<String>,
}

impl ExploitPost {
    pub fn validate(&self) -> Result<()> {
        if self.edb_id == 0 {
            return Err(Error::Validation("edb_id must be positive".into()));
        }
        if let Some(bad) = self.cve_ids.iter().find(|c| !is_cve_id(c)) {
            return Err(Error::Validation(format!(
                "post {}: malformed CVE id {bad:?}",
                self.edb_id
            )));
        }
        Ok(())
    }

    /// Render back to the raw `# Key: Value` header format. Parsing the
    /// result yields the same post.
    pub fn to_raw(&self) -> String {
        let mut out = format!("# Exploit Title: {}\n", self.title);
        if let Some(d) = self.published {
            out.push_str(&format!("# Date: {}\n", d.format("%Y-%m-%d")));
        }
        if let Some(a) = &self.author {
            out.push_str(&format!("# Exploit Author: {a}\n"));
        }
        if let Some(h) = &self.vendor_homepage {
            out.push_str(&format!("# Vendor Homepage: {h}\n"));
        }
        if !self.cve_ids.is_empty() {
            out.push_str(&format!("# CVE: {}\n", self.cve_ids.join(", ")));
        }
        if let Some(t) = self.exploit_type {
            out.push_str(&format!("# Type: {t}\n"));
        }
        if let Some(p) = &self.platform {
            out.push_str(&format!("# Platform: {p}\n"));
        }
        out.push('\n');
        out.push_str(&self.description);
        if !self.poc_code.is_empty() {
            out.push_str("\n\n");
            out.push_str(&self.poc_code);
        }
        out.push('\n');
        out
    }
}

static HEADER_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^#\s*([A-Za-z][A-Za-z \-]*?)\s*:\s*(.*?)\s*$").unwrap());

pub fn parse_date(s: &str) -> Result<NaiveDate> {
    let cleaned = s.trim().replace(',', " ");
    let cleaned = cleaned.split_whitespace().collect::<Vec<_>>().join(" ");
    NaiveDate::parse_from_str(&cleaned, "%Y-%m-%d")
        .or_else(|_| NaiveDate::parse_from_str(&cleaned, "%d %B %Y"))
        .or_else(|_| NaiveDate::parse_from_str(&cleaned, "%d %b %Y"))
        .map_err(|_| Error::BadDate(s.trim().to_string()))
}

/// Parse one raw post: leading `# Key: Value` header lines, then the body.
///
/// The body is separated into prose and PoC code with
/// [`preprocess::strip_poc`]. Without a title header the first non-empty
/// body line becomes the title.
pub fn parse_exploit_post(edb_id: u64, raw: &str) -> Result<ExploitPost> {
    let mut post = ExploitPost {
        edb_id,
        ..Default::default()
    };

    let lines: Vec<&str> = raw.lines().collect();
    let mut body_start = 0;
    let mut seen_header = false;
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            body_start = i + 1;
            if seen_header {
                break;
            }
            continue;
        }
        let Some(caps) = HEADER_LINE.captures(line.trim()) else {
            break;
        };
        seen_header = true;
        body_start = i + 1;
        let value = caps[2].trim();
        let present = !value.is_empty() && !value.eq_ignore_ascii_case("n/a");
        match caps[1].to_ascii_lowercase().as_str() {
            "exploit title" | "title" if present => post.title = value.to_string(),
            "date" if present => post.published = Some(parse_date(value)?),
            "exploit author" | "author" if present => post.author = Some(value.to_string()),
            "vendor homepage" if present => post.vendor_homepage = Some(value.to_string()),
            "cve" | "cve id" | "cve ids" => {
                for m in CVE_ID_ANYWHERE.find_iter(value) {
                    if !post.cve_ids.iter().any(|c| c == m.as_str()) {
                        post.cve_ids.push(m.as_str().to_string());
                    }
                }
            }
            "type" if present => post.exploit_type = Some(value.parse()?),
            "platform" if present => post.platform = Some(value.to_string()),
            _ => {}
        }
    }

    let mut body: Vec<&str> = lines[body_start.min(lines.len())..].to_vec();
    if post.title.is_empty() {
        let first = body
            .iter()
            .position(|l| !l.trim().is_empty())
            .ok_or(Error::MissingTitle)?;
        post.title = body[first].trim().to_string();
        body.drain(..=first);
    }

    let split = preprocess::strip_poc(&body.join("\n"));
    post.description = split.description;
    post.poc_code = split.poc_code;
    Ok(post)
}

// ---------------------------------------------------------------------------
// CVE records

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Severity {
    Critical,
    High,
    Medium,
    Low,
    Unknown,
}

impl Severity {
    pub const ALL: [Severity; 5] = [
        Severity::Critical,
        Severity::High,
        Severity::Medium,
        Severity::Low,
        Severity::Unknown,
    ];

    /// NVD buckets, each inclusive on its lower edge.
    pub fn from_score(score: Option<f64>) -> Self {
        match score {
            Some(s) if s >= 9.0 => Severity::Critical,
            Some(s) if s >= 7.0 => Severity::High,
            Some(s) if s >= 4.0 => Severity::Medium,
            Some(s) if s >= 0.0 => Severity::Low,
            _ => Severity::Unknown,
        }
    }

    pub fn is_high_or_critical(self) -> bool {
        matches!(self, Severity::Critical | Severity::High)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CveRecord {
    pub cve_id: String,
    pub description: String,
    pub published: NaiveDate,
    #[serde(default)]
    pub cvss3: Option<f64>,
    #[serde(default)]
    pub cvss2: Option<f64>,
    #[serde(default)]
    pub references: Vec<String>,
}

impl CveRecord {
    /// CVSS 3.x when available, else CVSS 2.
    pub fn effective_score(&self) -> Option<f64> {
        self.cvss3.or(self.cvss2)
    }

    pub fn severity(&self) -> Severity {
        Severity::from_score(self.effective_score())
    }

    fn is_valid(&self) -> bool {
        let in_range = |s: Option<f64>| s.is_none_or(|v| (0.0..=10.0).contains(&v));
        is_cve_id(&self.cve_id) && in_range(self.cvss3) && in_range(self.cvss2)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CveFeed {
    pub records: Vec<CveRecord>,
    /// Lines that were not valid records, or repeated an earlier id.
    pub skipped: usize,
}

impl CveFeed {
    pub fn by_id(&self) -> HashMap<&str, &CveRecord> {
        self.records
            .iter()
            .map(|r| (r.cve_id.as_str(), r))
            .collect()
    }
}

/// Read `cves.jsonl`. Invalid lines are skipped and counted.
pub fn parse_cve_records(reader: impl BufRead) -> Result<CveFeed> {
    let mut feed = CveFeed::default();
    let mut seen = HashSet::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<CveRecord>(&line) {
            Ok(rec) if rec.is_valid() && seen.insert(rec.cve_id.clone()) => feed.records.push(rec),
            _ => feed.skipped += 1,
        }
    }
    if feed.records.is_empty() {
        return Err(Error::EmptyFeed {
            skipped: feed.skipped,
        });
    }
    Ok(feed)
}

// ---------------------------------------------------------------------------
// CPE

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CpeValue {
    /// `*`
    Any,
    /// `-`
    NotApplicable,
    Value(String),
}

impl CpeValue {
    pub fn as_value(&self) -> Option<&str> {
        match self {
            CpeValue::Value(v) => Some(v),
            _ => None,
        }
    }

    fn encode(&self) -> String {
        match self {
            CpeValue::Any => "*".into(),
            CpeValue::NotApplicable => "-".into(),
            CpeValue::Value(v) => {
                let mut out = String::with_capacity(v.len());
                for c in v.chars() {
                    if matches!(c, ':' | '\\' | '*' | '?') {
                        out.push('\\');
                    }
                    out.push(c);
                }
                out
            }
        }
    }
}

impl fmt::Display for CpeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CpeValue::Any => f.write_str("any"),
            CpeValue::NotApplicable => f.write_str("n/a"),
            CpeValue::Value(v) => f.write_str(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CpeName {
    pub part: CpeValue,
    pub vendor: CpeValue,
    pub product: CpeValue,
    pub version: CpeValue,
}

impl CpeName {
    /// Formatted-string form with the remaining seven attributes as `*`.
    pub fn to_uri(&self) -> String {
        format!(
            "cpe:2.3:{}:{}:{}:{}:*:*:*:*:*:*:*",
            self.part.encode(),
            self.vendor.encode(),
            self.product.encode(),
            self.version.encode()
        )
    }
}

fn split_cpe_fields(uri: &str) -> Vec<String> {
    let mut fields = vec![String::new()];
    let mut chars = uri.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => {
                // keep the escape so `*` stays distinguishable from a literal
                let cur = fields.last_mut().unwrap();
                cur.push('\\');
                if let Some(n) = chars.next() {
                    cur.push(n);
                }
            }
            ':' => fields.push(String::new()),
            _ => fields.last_mut().unwrap().push(c),
        }
    }
    fields
}

fn decode_cpe_value(raw: &str) -> CpeValue {
    match raw {
        "*" | "" => CpeValue::Any,
        "-" => CpeValue::NotApplicable,
        _ => {
            let mut out = String::with_capacity(raw.len());
            let mut chars = raw.chars();
            while let Some(c) = chars.next() {
                if c == '\\' {
                    if let Some(n) = chars.next() {
                        out.push(n);
                    }
                } else {
                    out.push(c);
                }
            }
            CpeValue::Value(out)
        }
    }
}

/// Parse a CPE 2.3 formatted string into part/vendor/product/version.
pub fn parse_cpe_uri(uri: &str) -> Result<CpeName> {
    let uri = uri.trim();
    let malformed = || Error::MalformedCpe(uri.to_string());
    if !uri.starts_with("cpe:2.3:") {
        return Err(malformed());
    }
    let fields = split_cpe_fields(uri);
    if fields.len() < 6 {
        return Err(malformed());
    }
    let part = decode_cpe_value(&fields[2]);
    if !matches!(&part, CpeValue::Any) && !matches!(part.as_value(), Some("a" | "o" | "h")) {
        return Err(malformed());
    }
    Ok(CpeName {
        part,
        vendor: decode_cpe_value(&fields[3]),
        product: decode_cpe_value(&fields[4]),
        version: decode_cpe_value(&fields[5]),
    })
}

/// Product-name to vendor dictionary built from CPE names.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CpeDictionary {
    entries: BTreeMap<String, String>,
    /// Lines that failed to parse or had no concrete vendor/product.
    pub skipped: usize,
    /// Products seen again with a different vendor; the first vendor is kept.
    pub collisions: usize,
}

/// Lowercase, underscores to spaces, whitespace collapsed.
pub fn normalize_product_key(product: &str) -> String {
    product
        .replace('_', " ")
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

impl CpeDictionary {
    pub fn insert(&mut self, product: &str, vendor: &str) {
        let key = normalize_product_key(product);
        let vendor = vendor.trim();
        if key.is_empty() || vendor.is_empty() {
            self.skipped += 1;
            return;
        }
        match self.entries.get(&key) {
            Some(existing) if existing != vendor => self.collisions += 1,
            Some(_) => {}
            None => {
                self.entries.insert(key, vendor.to_string());
            }
        }
    }

    pub fn lookup(&self, product: &str) -> Option<&str> {
        self.entries
            .get(&normalize_product_key(product))
            .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Read `cpe.txt`: one URI per line, `#` comments and blank lines ignored.
    pub fn from_reader(reader: impl BufRead) -> Result<Self> {
        let mut lines = Vec::new();
        for line in reader.lines() {
            let line = line?;
            let t = line.trim();
            if !t.is_empty() && !t.starts_with('#') {
                lines.push(t.to_string());
            }
        }
        Ok(build_cpe_dictionary(lines))
    }
}

pub fn build_cpe_dictionary<I, S>(uris: I) -> CpeDictionary
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut dict = CpeDictionary::default();
    for uri in uris {
        match parse_cpe_uri(uri.as_ref()) {
            Ok(name) => match (name.product.as_value(), name.vendor.as_value()) {
                (Some(product), Some(vendor)) => dict.insert(product, vendor),
                _ => dict.skipped += 1,
            },
            Err(_) => dict.skipped += 1,
        }
    }
    dict
}

// ---------------------------------------------------------------------------
// Links

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploitCveLink {
    pub edb_id: u64,
    pub cve_id: String,
    /// Exploit date minus CVE date; negative when the exploit came first.
    pub day_gap: i64,
}

/// One link per (post, cited CVE) pair present in the CVE corpus. Posts
/// without a publication date produce no links.
pub fn link_exploits_to_cves(posts: &[ExploitPost], cves: &[CveRecord]) -> Vec<ExploitCveLink> {
    let by_id: HashMap<&str, &CveRecord> = cves.iter().map(|c| (c.cve_id.as_str(), c)).collect();
    let mut links = Vec::new();
    for post in posts {
        let Some(published) = post.published else {
            continue;
        };
        for cve_id in &post.cve_ids {
            if let Some(cve) = by_id.get(cve_id.as_str()) {
                links.push(ExploitCveLink {
                    edb_id: post.edb_id,
                    cve_id: cve_id.clone(),
                    day_gap: (published - cve.published).num_days(),
                });
            }
        }
    }
    links
}
