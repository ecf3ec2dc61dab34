//! Product, version, component and vulnerability-type spans.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, StubFixtures};
use crate::corpus::ExploitPost;
use crate::error::{Error, Result};
use crate::preprocess::{self, TokenizedSentence};
use crate::score::Prf;

/// The nine aspects of a CVE description.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AspectKind {
    Product,
    Version,
    Component,
    VulType,
    Vendor,
    AttackerType,
    RootCause,
    AttackVector,
    Impact,
}

impl AspectKind {
    pub const ALL: [AspectKind; 9] = [
        AspectKind::Product,
        AspectKind::Version,
        AspectKind::Component,
        AspectKind::VulType,
        AspectKind::Vendor,
        AspectKind::AttackerType,
        AspectKind::RootCause,
        AspectKind::AttackVector,
        AspectKind::Impact,
    ];
}

/// The four aspects extracted as named entities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityKind {
    Product,
    Version,
    Component,
    VulType,
}

impl EntityKind {
    pub const ALL: [EntityKind; 4] = [
        EntityKind::Product,
        EntityKind::Version,
        EntityKind::Component,
        EntityKind::VulType,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Product => "Product",
            EntityKind::Version => "Version",
            EntityKind::Component => "Component",
            EntityKind::VulType => "VulType",
        }
    }
}

impl From<EntityKind> for AspectKind {
    fn from(k: EntityKind) -> Self {
        match k {
            EntityKind::Product => AspectKind::Product,
            EntityKind::Version => AspectKind::Version,
            EntityKind::Component => AspectKind::Component,
            EntityKind::VulType => AspectKind::VulType,
        }
    }
}

impl TryFrom<AspectKind> for EntityKind {
    type Error = Error;

    fn try_from(k: AspectKind) -> Result<Self> {
        match k {
            AspectKind::Product => Ok(EntityKind::Product),
            AspectKind::Version => Ok(EntityKind::Version),
            AspectKind::Component => Ok(EntityKind::Component),
            AspectKind::VulType => Ok(EntityKind::VulType),
            other => Err(Error::Validation(format!(
                "{other:?} is not an entity kind"
            ))),
        }
    }
}

/// `sentence_index` of spans found in the post title.
pub const TITLE_SENTENCE: i32 = -1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntitySpan {
    pub kind: EntityKind,
    pub sentence_index: i32,
    pub char_start: usize,
    pub char_end: usize,
    pub surface: String,
}

impl EntitySpan {
    fn from_text(
        kind: EntityKind,
        sentence_index: i32,
        text: &str,
        start: usize,
        end: usize,
    ) -> Self {
        EntitySpan {
            kind,
            sentence_index,
            char_start: start,
            char_end: end,
            surface: text[start..end].to_string(),
        }
    }
}

// ---------------------------------------------------------------------------
// BIO

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BioTag {
    O,
    B(EntityKind),
    I(EntityKind),
}

impl fmt::Display for BioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BioTag::O => f.write_str("O"),
            BioTag::B(k) => write!(f, "B-{}", k.as_str()),
            BioTag::I(k) => write!(f, "I-{}", k.as_str()),
        }
    }
}

impl FromStr for BioTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "O" {
            return Ok(BioTag::O);
        }
        let bad = || Error::Protocol(format!("unknown BIO tag {s:?}"));
        let (prefix, kind) = s.split_once('-').ok_or_else(bad)?;
        let kind = EntityKind::ALL
            .into_iter()
            .find(|k| k.as_str() == kind)
            .ok_or_else(bad)?;
        match prefix {
            "B" => Ok(BioTag::B(kind)),
            "I" => Ok(BioTag::I(kind)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for BioTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BioTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Turn per-token tags into spans. An `I-k` that does not continue a `k`
/// span opens a new one.
pub fn decode_bio(sentence: &TokenizedSentence, tags: &[BioTag]) -> Result<Vec<EntitySpan>> {
    decode_bio_at(sentence, tags, sentence.sentence_index as i32)
}

pub(crate) fn decode_bio_at(
    sentence: &TokenizedSentence,
    tags: &[BioTag],
    sentence_index: i32,
) -> Result<Vec<EntitySpan>> {
    if tags.len() != sentence.tokens.len() {
        return Err(Error::LengthMismatch {
            left: sentence.tokens.len(),
            right: tags.len(),
        });
    }
    let mut spans = Vec::new();
    let mut open: Option<(EntityKind, usize, usize)> = None;
    let close = |open: &mut Option<(EntityKind, usize, usize)>, spans: &mut Vec<EntitySpan>| {
        if let Some((kind, start, end)) = open.take() {
            spans.push(EntitySpan::from_text(
                kind,
                sentence_index,
                &sentence.text,
                start,
                end,
            ));
        }
    };
    for (tok, tag) in sentence.tokens.iter().zip(tags) {
        match *tag {
            BioTag::O => close(&mut open, &mut spans),
            BioTag::B(kind) => {
                close(&mut open, &mut spans);
                open = Some((kind, tok.char_start, tok.char_end));
            }
            BioTag::I(kind) => match &mut open {
                Some((k, _, end)) if *k == kind => *end = tok.char_end,
                _ => {
                    close(&mut open, &mut spans);
                    open = Some((kind, tok.char_start, tok.char_end));
                }
            },
        }
    }
    close(&mut open, &mut spans);
    Ok(spans)
}

/// Tag tokens covered by `spans`. Spans are expected to sit on token
/// boundaries and not overlap.
pub fn encode_bio(sentence: &TokenizedSentence, spans: &[EntitySpan]) -> Vec<BioTag> {
    sentence
        .tokens
        .iter()
        .map(|tok| {
            spans
                .iter()
                .find(|s| tok.char_start >= s.char_start && tok.char_end <= s.char_end)
                .map_or(BioTag::O, |s| {
                    if tok.char_start == s.char_start {
                        BioTag::B(s.kind)
                    } else {
                        BioTag::I(s.kind)
                    }
                })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Rules

const RANGE_MARKERS: &[&str] = &["<", ">", "=", "before", "prior", "to", "through"];
const VERSION_CUES: &[&str] = &[
    "version", "versions", "ver", "before", "prior", "through", "<", "=",
];
const PRODUCT_TRAILERS: &[&str] = &["version", "versions", "ver", "v"];
const CONNECTORS: &[&str] = &[
    "in", "via", "on", "of", "at", "for", "within", "through", "and",
];

static QUOTED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"'([^']+)'|"([^"]+)""#).unwrap());
static BODY_QUOTED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"'([^'\s]{1,64})'|"([^"\s]{1,64})""#).unwrap());
static TRAILING_PAREN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\s*\([^()]*\)\s*$").unwrap());
static FILE_NAME: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^[\w\-]+(?:\.[\w\-]+)*\.(?:dll|php\d?|phtml|aspx?|jsp|cgi|pl|c|cc|cpp|h|swf|exe|js|py|rb|sh|so|sys|ocx|tiff?|html?|xml|jar|ini|conf|cfg|bat|vbs|dylib|ko|inc|cfm)$").unwrap()
});

fn is_range_marker(surface: &str) -> bool {
    RANGE_MARKERS.contains(&surface.to_ascii_lowercase().as_str())
}

fn is_component_token(surface: &str) -> bool {
    FILE_NAME.is_match(surface)
        || (surface.contains('_')
            && surface.chars().any(|c| c.is_alphabetic())
            && surface.chars().all(|c| c.is_alphanumeric() || c == '_'))
}

/// Version spans in a token slice, each extended left over range markers
/// (`< 2.5`, `before 2.5.2`) but never into the previous span.
fn version_spans(
    sent: &TokenizedSentence,
    range: std::ops::Range<usize>,
    sentence_index: i32,
    mut accept: impl FnMut(usize) -> bool,
) -> Vec<EntitySpan> {
    let mut out = Vec::new();
    let mut floor = range.start;
    for i in range {
        let tok = &sent.tokens[i];
        if !preprocess::is_version_token(&tok.surface) || !accept(i) {
            continue;
        }
        let mut first = i;
        while first > floor && is_range_marker(&sent.tokens[first - 1].surface) {
            first -= 1;
        }
        out.push(EntitySpan::from_text(
            EntityKind::Version,
            sentence_index,
            &sent.text,
            sent.tokens[first].char_start,
            tok.char_end,
        ));
        floor = i + 1;
    }
    out
}

fn trim_range(text: &str, mut start: usize, mut end: usize) -> Option<(usize, usize)> {
    loop {
        let before = (start, end);
        let s = &text[start..end];
        let lead = s.len()
            - s.trim_start_matches(|c: char| c.is_whitespace() || "-:,;|/".contains(c))
                .len();
        start += lead;
        let s = &text[start..end];
        let trail = s.len()
            - s.trim_end_matches(|c: char| c.is_whitespace() || "-:,;|/".contains(c))
                .len();
        end -= trail;
        if let Some(m) = TRAILING_PAREN.find(&text[start..end]) {
            end = start + m.start();
        }
        let s = &text[start..end];
        if let Some((first, _)) = s.split_once(char::is_whitespace) {
            if CONNECTORS.contains(&first.to_ascii_lowercase().as_str()) {
                start += first.len();
            }
        }
        let s = &text[start..end];
        if let Some((_, last)) = s.trim_end().rsplit_once(char::is_whitespace) {
            if CONNECTORS.contains(&last.to_ascii_lowercase().as_str()) {
                end = start + s.trim_end().len() - last.len();
            }
        }
        if (start, end) == before {
            break;
        }
    }
    (start < end).then_some((start, end))
}

/// Title convention: `Product Version - 'Component' Vulnerability Type`.
fn title_entities(title: &str) -> Vec<EntitySpan> {
    let Some(sep) = title.find(" - ") else {
        return Vec::new();
    };
    let mut spans = Vec::new();

    let head = preprocess::tokenize(&title[..sep]);
    let first_version = head
        .tokens
        .iter()
        .position(|t| preprocess::is_version_token(&t.surface));
    let mut product_end = first_version.unwrap_or(head.tokens.len());
    while product_end > 0 && is_range_marker(&head.tokens[product_end - 1].surface) {
        product_end -= 1;
    }
    while product_end > 0 {
        let s = head.tokens[product_end - 1].surface.as_str();
        if preprocess::is_punctuation_token(s)
            || PRODUCT_TRAILERS.contains(&s.to_ascii_lowercase().as_str())
        {
            product_end -= 1;
        } else {
            break;
        }
    }
    if product_end > 0 {
        spans.push(EntitySpan::from_text(
            EntityKind::Product,
            TITLE_SENTENCE,
            title,
            head.tokens[0].char_start,
            head.tokens[product_end - 1].char_end,
        ));
    }
    if let Some(fv) = first_version {
        let lo = product_end.min(fv);
        spans.extend(version_spans(
            &head,
            lo..head.tokens.len(),
            TITLE_SENTENCE,
            |_| true,
        ));
    }

    let tail_start = sep + 3;
    let tail = &title[tail_start..];
    let mut segments = Vec::new();
    let mut cursor = 0;
    for caps in QUOTED.captures_iter(tail) {
        let whole = caps.get(0).unwrap();
        let inner = caps.get(1).or_else(|| caps.get(2)).unwrap();
        spans.push(EntitySpan::from_text(
            EntityKind::Component,
            TITLE_SENTENCE,
            title,
            tail_start + inner.start(),
            tail_start + inner.end(),
        ));
        segments.push((tail_start + cursor, tail_start + whole.start()));
        cursor = whole.end();
    }
    segments.push((tail_start + cursor, title.len()));
    let vultype = segments
        .into_iter()
        .filter_map(|(s, e)| trim_range(title, s, e))
        .max_by_key(|(s, e)| (e - s, std::cmp::Reverse(*s)));
    if let Some((s, e)) = vultype {
        spans.push(EntitySpan::from_text(
            EntityKind::VulType,
            TITLE_SENTENCE,
            title,
            s,
            e,
        ));
    }
    spans
}

fn mention_regex(phrase: &str) -> Option<Regex> {
    let phrase = phrase.trim();
    if phrase.is_empty() {
        return None;
    }
    let escaped = regex::escape(phrase);
    let left = if phrase.starts_with(|c: char| c.is_alphanumeric() || c == '_') {
        r"\b"
    } else {
        ""
    };
    let right = if phrase.ends_with(|c: char| c.is_alphanumeric() || c == '_') {
        r"\b"
    } else {
        ""
    };
    RegexBuilder::new(&format!("{left}{escaped}{right}"))
        .case_insensitive(true)
        .build()
        .ok()
}

/// Rule-based extraction over the title and the tokenized description.
///
/// Title spans come from the `Product Version - 'Component' Type` layout.
/// In the body, mentions of the title product and vulnerability type are
/// tagged, version tokens that follow a product mention or a version cue
/// become versions, and quoted identifiers, file names and underscore
/// identifiers become components.
pub fn rule_extract_entities(title: &str, sentences: &[TokenizedSentence]) -> Vec<EntitySpan> {
    let mut spans = title_entities(title);
    let mentions = |kind: EntityKind| -> Vec<Regex> {
        let mut seen = HashSet::new();
        spans
            .iter()
            .filter(|s| s.kind == kind)
            .filter(|s| seen.insert(s.surface.to_lowercase()))
            .filter_map(|s| mention_regex(&s.surface))
            .collect()
    };
    let products = mentions(EntityKind::Product);
    let vultypes = mentions(EntityKind::VulType);

    let mut body = Vec::new();
    for sent in sentences {
        let idx = sent.sentence_index as i32;
        let mut product_ends = Vec::new();
        for re in &products {
            for m in re.find_iter(&sent.text) {
                product_ends.push(m.end());
                body.push(EntitySpan::from_text(
                    EntityKind::Product,
                    idx,
                    &sent.text,
                    m.start(),
                    m.end(),
                ));
            }
        }
        for re in &vultypes {
            for m in re.find_iter(&sent.text) {
                body.push(EntitySpan::from_text(
                    EntityKind::VulType,
                    idx,
                    &sent.text,
                    m.start(),
                    m.end(),
                ));
            }
        }
        body.extend(version_spans(sent, 0..sent.tokens.len(), idx, |i| {
            let tok = &sent.tokens[i];
            let after_product = product_ends.iter().any(|&e| e <= tok.char_start);
            let cued = sent.tokens[i.saturating_sub(3)..i]
                .iter()
                .any(|t| VERSION_CUES.contains(&t.surface.to_ascii_lowercase().as_str()));
            after_product || cued
        }));
        for caps in BODY_QUOTED.captures_iter(&sent.text) {
            let inner = caps.get(1).or_else(|| caps.get(2)).unwrap();
            if inner.as_str().chars().any(char::is_alphabetic) {
                body.push(EntitySpan::from_text(
                    EntityKind::Component,
                    idx,
                    &sent.text,
                    inner.start(),
                    inner.end(),
                ));
            }
        }
        for tok in &sent.tokens {
            if is_component_token(&tok.surface) {
                body.push(EntitySpan::from_text(
                    EntityKind::Component,
                    idx,
                    &sent.text,
                    tok.char_start,
                    tok.char_end,
                ));
            }
        }
    }
    spans.extend(body);
    dedup_spans(spans)
}

/// Drop repeats of (kind, lowercased surface, sentence, offsets) and order
/// by position.
pub fn dedup_spans(spans: Vec<EntitySpan>) -> Vec<EntitySpan> {
    let mut seen = HashSet::new();
    let mut out: Vec<EntitySpan> = spans
        .into_iter()
        .filter(|s| {
            seen.insert((
                s.kind,
                s.surface.to_lowercase(),
                s.sentence_index,
                s.char_start,
                s.char_end,
            ))
        })
        .collect();
    out.sort_by_key(|s| (s.sentence_index, s.char_start, s.char_end, s.kind));
    out
}

fn stub_entities(
    post: &ExploitPost,
    sentences: &[TokenizedSentence],
    fixtures: &StubFixtures,
) -> Result<Vec<EntitySpan>> {
    let mut spans = Vec::new();
    for ent in fixtures.entities(post.edb_id) {
        let mismatch = || Error::StubMismatch {
            edb_id: post.edb_id,
            detail: format!("{:?} {:?} not found", ent.kind, ent.surface),
        };
        let mut candidates: Vec<(i32, &str)> = Vec::new();
        match ent.sentence_index {
            Some(TITLE_SENTENCE) => candidates.push((TITLE_SENTENCE, &post.title)),
            Some(i) => {
                let s = sentences.get(i as usize).ok_or_else(mismatch)?;
                candidates.push((i, &s.text));
            }
            None => {
                candidates.push((TITLE_SENTENCE, &post.title));
                candidates.extend(
                    sentences
                        .iter()
                        .map(|s| (s.sentence_index as i32, s.text.as_str())),
                );
            }
        }
        let found = candidates
            .iter()
            .find_map(|(i, text)| text.find(&ent.surface).map(|at| (*i, *text, at)))
            .ok_or_else(mismatch)?;
        let (idx, text, at) = found;
        spans.push(EntitySpan::from_text(
            ent.kind,
            idx,
            text,
            at,
            at + ent.surface.len(),
        ));
    }
    Ok(spans)
}

/// Entity spans for one post with the chosen backend.
pub fn extract_entities(post: &ExploitPost, backend: &Backend) -> Result<Vec<EntitySpan>> {
    let sentences = preprocess::tokenize_description(&post.description);
    extract_entities_from(post, &sentences, backend)
}

pub fn extract_entities_from(
    post: &ExploitPost,
    sentences: &[TokenizedSentence],
    backend: &Backend,
) -> Result<Vec<EntitySpan>> {
    let spans = match backend {
        Backend::Rule => rule_extract_entities(&post.title, sentences),
        Backend::Stub(fx) => stub_entities(post, sentences, fx)?,
        Backend::External(ext) => {
            let title = preprocess::tokenize(&post.title);
            let mut spans = Vec::new();
            for (sent, idx) in std::iter::once((&title, TITLE_SENTENCE))
                .chain(sentences.iter().map(|s| (s, s.sentence_index as i32)))
            {
                if sent.tokens.is_empty() {
                    continue;
                }
                let tokens: Vec<String> = sent.tokens.iter().map(|t| t.surface.clone()).collect();
                let tags = ext.tag(&tokens)?;
                spans.extend(decode_bio_at(sent, &tags, idx)?);
            }
            spans
        }
    };
    Ok(dedup_spans(spans))
}

// ---------------------------------------------------------------------------
// Metrics

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NerMetrics {
    pub per_kind: BTreeMap<EntityKind, Prf>,
    pub overall: Prf,
}

/// Exact-span match counts, accumulated over any number of documents.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NerTally {
    counts: BTreeMap<EntityKind, (usize, usize, usize)>,
}

type SpanKey = (EntityKind, i32, usize, usize);

fn span_key(s: &EntitySpan) -> SpanKey {
    (s.kind, s.sentence_index, s.char_start, s.char_end)
}

impl NerTally {
    /// Add one document's predictions and gold spans.
    pub fn add(&mut self, pred: &[EntitySpan], gold: &[EntitySpan]) {
        let mut remaining: BTreeMap<SpanKey, usize> = BTreeMap::new();
        for g in gold {
            *remaining.entry(span_key(g)).or_default() += 1;
            self.counts.entry(g.kind).or_default().2 += 1;
        }
        for p in pred {
            let entry = self.counts.entry(p.kind).or_default();
            entry.1 += 1;
            if let Some(n) = remaining.get_mut(&span_key(p)).filter(|n| **n > 0) {
                *n -= 1;
                entry.0 += 1;
            }
        }
    }

    pub fn metrics(&self) -> NerMetrics {
        let mut total = (0, 0, 0);
        let mut per_kind = BTreeMap::new();
        for (kind, &(m, p, g)) in &self.counts {
            per_kind.insert(*kind, Prf::from_counts(m, p, g));
            total.0 += m;
            total.1 += p;
            total.2 += g;
        }
        NerMetrics {
            per_kind,
            overall: Prf::from_counts(total.0, total.1, total.2),
        }
    }
}

/// Entity-level precision/recall/F1 with exact (kind, sentence, offsets)
/// matching.
pub fn ner_metrics(pred: &[EntitySpan], gold: &[EntitySpan]) -> NerMetrics {
    let mut tally = NerTally::default();
    tally.add(pred, gold);
    tally.metrics()
}
