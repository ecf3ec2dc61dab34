//! Vendor lookup and attacker type.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use url::Url;

use crate::corpus::{CpeDictionary, ExploitType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackerType {
    Remote,
    Local,
}

impl fmt::Display for AttackerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackerType::Remote => "remote",
            AttackerType::Local => "local",
        })
    }
}

/// Words in DoS proof-of-concept code that point at a network attacker.
pub const REMOTE_KEYWORDS: [&str; 9] = [
    "http", "router", "web", "sock", "ipv4", "ipv6", "ping", "port", "message",
];

// Anchored on the left only: "sock" has to find "socket(AF_INET, ...)".
static REMOTE_CUE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"(?i)\b(?:{})", REMOTE_KEYWORDS.join("|"))).unwrap());

pub fn map_attacker_type(exploit_type: ExploitType, poc_code: &str) -> AttackerType {
    match exploit_type {
        ExploitType::Remote | ExploitType::Webapp => AttackerType::Remote,
        ExploitType::Local => AttackerType::Local,
        ExploitType::Dos if REMOTE_CUE.is_match(poc_code) => AttackerType::Remote,
        ExploitType::Dos => AttackerType::Local,
    }
}

/// Second-level suffixes that take one more label to reach the owner.
const COMPOUND_SUFFIXES: &[&str] = &[
    "co.uk", "org.uk", "ac.uk", "gov.uk", "me.uk", "co.jp", "ne.jp", "or.jp", "ac.jp", "com.au",
    "net.au", "org.au", "com.br", "com.cn", "net.cn", "org.cn", "com.tw", "com.hk", "co.kr",
    "co.in", "co.nz", "co.za", "com.mx", "com.ar", "com.tr", "com.sg", "com.my", "co.il", "com.ua",
    "com.pl", "com.ru",
];

/// The label just left of the public suffix, `www.` ignored.
pub fn domain_label(homepage: &str) -> Option<String> {
    let homepage = homepage.trim();
    if homepage.is_empty() {
        return None;
    }
    let url = Url::parse(homepage)
        .ok()
        .filter(|u| u.host_str().is_some())
        .or_else(|| Url::parse(&format!("http://{homepage}")).ok())?;
    let host = url.host_str()?.trim_end_matches('.').to_ascii_lowercase();
    if url
        .host()
        .is_some_and(|h| !matches!(h, url::Host::Domain(_)))
    {
        return None;
    }
    let host = host.strip_prefix("www.").unwrap_or(&host);
    let labels: Vec<&str> = host.split('.').filter(|l| !l.is_empty()).collect();
    let suffix_len = if labels.len() >= 3
        && COMPOUND_SUFFIXES.contains(&labels[labels.len() - 2..].join(".").as_str())
    {
        2
    } else {
        1
    };
    match labels.len() {
        0 => None,
        1 => Some(labels[0].to_string()),
        n if n > suffix_len => Some(labels[n - suffix_len - 1].to_string()),
        _ => Some(labels[0].to_string()),
    }
}

/// The whole product name first, then shorter and shorter tails of it, so
/// "Invensys Wonderware InBatch" finds the `wonderware inbatch` entry.
fn lookup_suffixes<'d>(product: &str, dict: &'d CpeDictionary) -> Option<&'d str> {
    let words: Vec<&str> = product.split_whitespace().collect();
    (0..words.len()).find_map(|i| dict.lookup(&words[i..].join(" ")))
}

/// Vendor by dictionary, then homepage domain, then the product's first word.
pub fn resolve_vendor(
    product: Option<&str>,
    dict: &CpeDictionary,
    homepage: Option<&str>,
) -> Option<String> {
    let product = product.map(str::trim).filter(|p| !p.is_empty());
    if let Some(vendor) = product.and_then(|p| lookup_suffixes(p, dict)) {
        return Some(vendor.to_string());
    }
    if let Some(label) = homepage.and_then(domain_label) {
        return Some(label);
    }
    product
        .and_then(|p| p.split_whitespace().next())
        .map(str::to_string)
}
