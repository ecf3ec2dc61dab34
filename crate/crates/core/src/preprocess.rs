//! Prose/code separation, sentence splitting and a tokenizer that keeps
//! software artifacts (versions, file names, identifiers, URLs, CVE ids)
//! together as single tokens.
//!
//! All offsets are UTF-8 byte offsets into the string they were computed
//! from, so `&text[start..end]` always yields the token surface.

use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Minimum share of punctuation among the non-whitespace characters of a
/// line for it to look like code.
pub const PUNCT_RATIO_THRESHOLD: f64 = 0.25;

/// Shortest run of consecutive code-looking lines that is removed from the
/// middle of the prose.
pub const MIN_CODE_BLOCK_LINES: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub char_start: usize,
    pub char_end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedSentence {
    pub sentence_index: usize,
    /// Byte offset of `text` inside the description it was split from.
    pub offset: usize,
    pub text: String,
    pub tokens: Vec<Token>,
}

impl TokenizedSentence {
    /// Tokenize a standalone sentence (index 0, offset 0).
    pub fn new(text: &str) -> Self {
        tokenize(text)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitBody {
    pub description: String,
    pub poc_code: String,
}

// ---------------------------------------------------------------------------
// PoC removal

static ASSIGNMENT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*(?:(?:var|let|const|my|local|int|char|unsigned|long|auto)\s+)?[$@]?[A-Za-z_][\w.\[\]'\x22$-]*\s*(?:[+\-*/.|&^]|<<|>>)?=\s*[^=\s]")
        .unwrap()
});
static HEX_DUMP: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)(?:\\x[0-9a-f]{2}){2,}|^\s*(?:0x)?[0-9a-f]{4,}:?(?:\s+[0-9a-f]{2,4}){4,}")
        .unwrap()
});

// Lowercase on purpose: prose sentences start with a capital.
static CODE_KEYWORD: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*(?:import\s+\w|from\s+[\w.]+\s+import\b|#include\b|#define\b|def\s+\w+\s*\(|class\s+\w+\s*[:({]|function\s+\w*\s*\(|sub\s+\w+\s*\{|use\s+[\w:]+;|require\s*[('\x22]|package\s+[\w.]+|(?:public|private|static|void)\s|return\b|(?:if|for|while)\s*\(|print\s*[(\x22'])")
        .unwrap()
});

static CODE_SHAPE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(concat!(
        // a bare call: s.send(payload)
        r"^\s*[\w.$>:-]+\(.*\)\s*;?\s*$",
        // markup
        r"|^\s*</?[A-Za-z][\w:.-]*(?:\s[^>]*)?/?>",
        // shell prompt
        r"|^\s*\$ \S",
        // HTTP request line and common headers
        r"|^(?:GET|POST|PUT|DELETE|HEAD|OPTIONS|PATCH|TRACE|CONNECT) \S+(?: HTTP/\d(?:\.\d)?)?\s*$",
        r"|^(?i:host|user-agent|accept(?:-[\w]+)?|content-type|content-length|cookie|set-cookie|connection|referer|origin|authorization|cache-control|pragma|upgrade-insecure-requests|x-[\w-]+): \S",
        // sanitizer reports and stack frames
        r"|^==\d+==|^\s*#\d+\s+0x[0-9a-fA-F]+",
    ))
    .unwrap()
});

fn punctuation_ratio(line: &str) -> f64 {
    let mut total = 0usize;
    let mut punct = 0usize;
    for c in line.chars().filter(|c| !c.is_whitespace()) {
        total += 1;
        if c.is_ascii_punctuation() {
            punct += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        punct as f64 / total as f64
    }
}

fn has_code_cue(line: &str) -> bool {
    let t = line.trim();
    t.ends_with(';')
        || t.ends_with('{')
        || t.starts_with('}')
        || CODE_KEYWORD.is_match(line)
        || CODE_SHAPE.is_match(line)
        || t.starts_with("#!")
        || ASSIGNMENT.is_match(line)
        || HEX_DUMP.is_match(line)
}

fn is_indented(line: &str) -> bool {
    line.starts_with("    ") || line.starts_with('\t')
}

/// Whether a single non-blank line looks like source code on its own.
pub fn looks_like_code(line: &str) -> bool {
    punctuation_ratio(line) >= PUNCT_RATIO_THRESHOLD || has_code_cue(line) || is_indented(line)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum LineClass {
    Blank,
    Prose,
    Code,
    Fenced,
}

/// Split a post body into prose and proof-of-concept code.
///
/// Fenced blocks always go to the code side. Runs of at least
/// [`MIN_CODE_BLOCK_LINES`] code-looking lines (blank lines do not break a
/// run) go to the code side, as does the trailing code region after the
/// last prose line. An isolated code-looking line inside prose stays prose.
pub fn strip_poc(body: &str) -> SplitBody {
    let lines: Vec<&str> = body.lines().collect();
    let mut class = Vec::with_capacity(lines.len());
    let mut in_fence = false;
    for line in &lines {
        let t = line.trim_start();
        if t.starts_with("```") || t.starts_with("~~~") {
            in_fence = !in_fence;
            class.push(LineClass::Fenced);
        } else if in_fence {
            class.push(LineClass::Fenced);
        } else if line.trim().is_empty() {
            class.push(LineClass::Blank);
        } else if looks_like_code(line) {
            class.push(LineClass::Code);
        } else {
            class.push(LineClass::Prose);
        }
    }

    let mut to_code = vec![false; lines.len()];
    for (i, c) in class.iter().enumerate() {
        if *c == LineClass::Fenced {
            to_code[i] = true;
        }
    }

    // Runs of code lines (fences included), skipping over blanks.
    let mut i = 0;
    while i < lines.len() {
        if !matches!(class[i], LineClass::Code | LineClass::Fenced) {
            i += 1;
            continue;
        }
        let mut members = vec![i];
        let mut j = i + 1;
        while j < lines.len() {
            match class[j] {
                LineClass::Code | LineClass::Fenced => members.push(j),
                LineClass::Blank => {}
                _ => break,
            }
            j += 1;
        }
        if members.len() >= MIN_CODE_BLOCK_LINES {
            for m in members {
                to_code[m] = true;
            }
        }
        i = j;
    }

    // Trailing region after the last prose line.
    let last_prose = class.iter().rposition(|c| *c == LineClass::Prose);
    let trailing_from = last_prose.map_or(0, |p| p + 1);
    for k in trailing_from..lines.len() {
        if class[k] != LineClass::Blank {
            to_code[k] = true;
        }
    }

    // Blank lines follow the code side only when both neighbours do.
    for k in 0..lines.len() {
        if class[k] != LineClass::Blank {
            continue;
        }
        let prev = (0..k).rev().find(|&p| class[p] != LineClass::Blank);
        let next = (k + 1..lines.len()).find(|&n| class[n] != LineClass::Blank);
        if let (Some(p), Some(n)) = (prev, next) {
            to_code[k] = to_code[p] && to_code[n];
        }
    }

    let mut description = Vec::new();
    let mut code = Vec::new();
    for (line, is_code) in lines.iter().zip(&to_code) {
        if *is_code {
            code.push(*line);
        } else {
            description.push(*line);
        }
    }
    SplitBody {
        description: description.join("\n").trim().to_string(),
        poc_code: code.join("\n").trim().to_string(),
    }
}

// ---------------------------------------------------------------------------
// Sentence splitting

const ABBREVIATIONS: &[&str] = &["e.g.", "i.e.", "cf.", "vs.", "approx."];

fn ends_with_abbreviation(text: &str, end: usize) -> bool {
    // `end` is the byte index just past the terminating period.
    let word_start = text[..end]
        .rfind(|c: char| c.is_whitespace() || c == '(')
        .map_or(0, |i| i + 1);
    let word = text[word_start..end].to_ascii_lowercase();
    ABBREVIATIONS.iter().any(|a| word == *a)
}

/// Byte ranges of the sentences in `text`, trimmed of surrounding whitespace.
///
/// A sentence ends at `.`, `!` or `?` followed by whitespace and then an
/// uppercase letter, a line break, or the end of input. Blank lines are
/// hard paragraph boundaries. Periods inside tokens (versions, file names)
/// are never followed by whitespace and so never split.
pub fn sentence_ranges(text: &str) -> Vec<Range<usize>> {
    let mut ranges = Vec::new();
    let mut start = 0usize;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut idx = 0;
    while idx < chars.len() {
        let (pos, c) = chars[idx];
        if matches!(c, '.' | '!' | '?') {
            let mut end_idx = idx + 1;
            // Absorb runs like "?!" or "..." and closing quotes/brackets.
            while end_idx < chars.len()
                && matches!(chars[end_idx].1, '.' | '!' | '?' | '"' | '\'' | ')' | ']')
            {
                end_idx += 1;
            }
            let end = chars.get(end_idx).map_or(text.len(), |(p, _)| *p);
            let boundary = match chars.get(end_idx) {
                None => true,
                Some((_, w)) if w.is_whitespace() => {
                    let mut k = end_idx;
                    let mut saw_newline = false;
                    while k < chars.len() && chars[k].1.is_whitespace() {
                        saw_newline |= chars[k].1 == '\n';
                        k += 1;
                    }
                    match chars.get(k) {
                        None => true,
                        Some((_, n)) => saw_newline || n.is_uppercase() || n.is_ascii_digit(),
                    }
                }
                _ => false,
            };
            if boundary && !(c == '.' && ends_with_abbreviation(text, pos + 1)) {
                push_trimmed(text, start..end, &mut ranges);
                start = end;
            }
            idx = end_idx;
            continue;
        }
        if c == '\n' {
            // Blank line: paragraph boundary.
            let mut k = idx + 1;
            while k < chars.len() && chars[k].1 != '\n' && chars[k].1.is_whitespace() {
                k += 1;
            }
            if k < chars.len() && chars[k].1 == '\n' {
                push_trimmed(text, start..pos, &mut ranges);
                start = chars[k].0;
                idx = k;
                continue;
            }
        }
        idx += 1;
    }
    push_trimmed(text, start..text.len(), &mut ranges);
    ranges
}

fn push_trimmed(text: &str, range: Range<usize>, out: &mut Vec<Range<usize>>) {
    let slice = &text[range.clone()];
    let lead = slice.len() - slice.trim_start().len();
    let trail = slice.len() - slice.trim_end().len();
    if lead + trail < slice.len() {
        out.push(range.start + lead..range.end - trail);
    }
}

pub fn split_sentences(description: &str) -> Vec<String> {
    sentence_ranges(description)
        .into_iter()
        .map(|r| description[r].to_string())
        .collect()
}

/// Split and tokenize a description, keeping each sentence's offset.
pub fn tokenize_description(description: &str) -> Vec<TokenizedSentence> {
    sentence_ranges(description)
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let mut s = tokenize(&description[r.clone()]);
            s.sentence_index = i;
            s.offset = r.start;
            s
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Tokenizer

pub(crate) const VERSION_PATTERN: &str = r"[vVbB]?\d+(?:\.(?:\d+|[xX*]))+(?:-?(?:sp|SP|b|beta|alpha|rc|RC|r|p|build|Beta|Alpha)\d*(?:\.\d+)*)?";

const FILE_EXTENSIONS: &str = "dll|php|php3|php4|php5|phtml|asp|aspx|jsp|cgi|pl|c|cc|cpp|h|swf|exe|js|py|rb|sh|so|sys|ocx|tiff|tif|html|htm|xml|jar|pdf|png|jpg|gif|bmp|mp3|avi|ini|conf|cfg|txt|bat|vbs|ps1|apk|ipa|dylib|ko|inc|cfm|do|action";

static TOKEN: LazyLock<Regex> = LazyLock::new(|| {
    let pattern = format!(
        concat!(
            r"(?P<url>(?:https?|ftp)://[^\s<>\x22'`]+)",
            r"|(?P<cve>CVE-\d{{4}}-\d{{4,}})",
            r"|(?P<version>{version})(?:[^\w.]|\.(?:[^\w]|$)|$)",
            r"|(?P<file>[\w\-]+(?:\.[\w\-]+)*\.(?i:{ext}))(?:[^\w.]|\.(?:[^\w]|$)|$)",
            r"|(?P<word>\w+)",
            r"|(?P<punct>[^\w\s])",
        ),
        version = VERSION_PATTERN,
        ext = FILE_EXTENSIONS,
    );
    Regex::new(&pattern).unwrap()
});

const URL_TRAILING: &[char] = &['.', ',', ';', ':', ')', ']', '!', '?', '>', '}'];

/// Tokenize one sentence. Version strings, dotted file names, identifiers
/// with underscores, URLs and CVE ids stay whole; everything else splits on
/// whitespace and punctuation, with each punctuation character kept as its
/// own token.
pub fn tokenize(sentence: &str) -> TokenizedSentence {
    let mut tokens = Vec::new();
    let mut pos = 0;
    while pos < sentence.len() {
        let Some(caps) = TOKEN.captures_at(sentence, pos) else {
            break;
        };
        let m = ["url", "cve", "version", "file", "word", "punct"]
            .iter()
            .find_map(|name| caps.name(name).map(|m| (*name, m)));
        let Some((kind, m)) = m else { break };
        let mut end = m.end();
        if kind == "url" {
            let trimmed = m.as_str().trim_end_matches(URL_TRAILING);
            end = m.start() + trimmed.len().max(1);
        }
        tokens.push(Token {
            surface: sentence[m.start()..end].to_string(),
            char_start: m.start(),
            char_end: end,
        });
        pos = end;
    }
    TokenizedSentence {
        sentence_index: 0,
        offset: 0,
        text: sentence.to_string(),
        tokens,
    }
}

static VERSION_FULL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!("^(?:{VERSION_PATTERN})$")).unwrap());

/// Whether a token is a version string on its own.
pub fn is_version_token(surface: &str) -> bool {
    VERSION_FULL.is_match(surface)
}

pub fn is_punctuation_token(surface: &str) -> bool {
    let mut chars = surface.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if !c.is_alphanumeric() && c != '_')
}
