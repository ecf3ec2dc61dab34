//! Root cause, attack vector and impact as answers to fixed questions.

use std::collections::HashMap;
use std::fmt;
use std::sync::LazyLock;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::corpus::ExploitPost;
use crate::error::{Error, Result};
use crate::ner::AspectKind;
use crate::preprocess::{self, TokenizedSentence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Question {
    RootCause,
    AttackVector,
    Impact,
}

impl Question {
    pub const ALL: [Question; 3] = [
        Question::RootCause,
        Question::AttackVector,
        Question::Impact,
    ];

    /// The question as sent to an external backend.
    pub fn text(self) -> &'static str {
        match self {
            Question::RootCause => "what is root cause?",
            Question::AttackVector => "what is attack vector?",
            Question::Impact => "what is impact?",
        }
    }

    pub fn keywords(self) -> &'static [&'static str] {
        match self {
            Question::RootCause => &["due to", "failure to"],
            Question::AttackVector => &["malformed", "specially crafted", "malicious"],
            Question::Impact => &[
                "lead to",
                "result in",
                "cause the application to",
                "attacker can",
                "allow attacker to",
                "allows remote attackers to",
                "exploit this issue to",
            ],
        }
    }
}

impl fmt::Display for Question {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.text())
    }
}

impl From<Question> for AspectKind {
    fn from(q: Question) -> Self {
        match q {
            Question::RootCause => AspectKind::RootCause,
            Question::AttackVector => AspectKind::AttackVector,
            Question::Impact => AspectKind::Impact,
        }
    }
}

impl TryFrom<AspectKind> for Question {
    type Error = Error;

    fn try_from(k: AspectKind) -> Result<Self> {
        match k {
            AspectKind::RootCause => Ok(Question::RootCause),
            AspectKind::AttackVector => Ok(Question::AttackVector),
            AspectKind::Impact => Ok(Question::Impact),
            other => Err(Error::Validation(format!(
                "{other:?} is not a question aspect"
            ))),
        }
    }
}

/// An answer clause located in the post description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSpan {
    pub question: Question,
    pub present: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub char_start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub char_end: Option<usize>,
    #[serde(default)]
    pub text: String,
}

impl AnswerSpan {
    pub fn absent(question: Question) -> Self {
        AnswerSpan {
            question,
            present: false,
            char_start: None,
            char_end: None,
            text: String::new(),
        }
    }

    pub fn found(question: Question, description: &str, start: usize, end: usize) -> Self {
        AnswerSpan {
            question,
            present: true,
            char_start: Some(start),
            char_end: Some(end),
            text: description[start..end].to_string(),
        }
    }

    pub fn answer(&self) -> Option<&str> {
        self.present.then_some(self.text.as_str())
    }
}

static TRIGGERS: LazyLock<HashMap<Question, Regex>> = LazyLock::new(|| {
    Question::ALL
        .into_iter()
        .map(|q| {
            let alts: Vec<String> = q
                .keywords()
                .iter()
                .map(|k| {
                    // inflected first word: "leads to", "resulted in", "attackers can"
                    let mut words = k.split(' ').map(regex::escape);
                    let first = format!("{}(?:s|ed|d)?", words.next().unwrap_or_default());
                    std::iter::once(first)
                        .chain(words)
                        .collect::<Vec<_>>()
                        .join(r"\s+")
                })
                .collect();
            let pattern = match q {
                // keep a directly preceding article with the modifier
                Question::AttackVector => format!(r"\b(?:(?:an?|the)\s+)?(?:{})\b", alts.join("|")),
                _ => format!(r"\b(?:{})\b", alts.join("|")),
            };
            let re = RegexBuilder::new(&pattern)
                .case_insensitive(true)
                .build()
                .unwrap();
            (q, re)
        })
        .collect()
});

fn clause_end(text: &str, from: usize) -> usize {
    let end = text[from..]
        .find([',', ';'])
        .map_or(text.len(), |i| from + i);
    let trimmed = text[from..end]
        .trim_end()
        .trim_end_matches(['.', '!', '?'])
        .trim_end();
    from + trimmed.len()
}

/// Keyword-triggered clause extraction; the longest candidate wins and the
/// earliest breaks ties. Offsets are relative to the description the
/// sentences were cut from.
pub fn rule_answer(question: Question, sentences: &[TokenizedSentence]) -> AnswerSpan {
    let re = &TRIGGERS[&question];
    let mut best: Option<(usize, usize, &TokenizedSentence)> = None;
    for sent in sentences {
        for m in re.find_iter(&sent.text) {
            let start = match question {
                Question::AttackVector => m.start(),
                _ => {
                    let rest = &sent.text[m.end()..];
                    m.end() + (rest.len() - rest.trim_start().len())
                }
            };
            let mut end = clause_end(&sent.text, start);
            if question == Question::AttackVector {
                // "a malformed image leads to a crash": the vector stops at the impact
                if let Some(m) = TRIGGERS[&Question::Impact].find_at(&sent.text, m.end()) {
                    end = end.min(sent.text[..m.start()].trim_end().len());
                }
            }
            if end <= start {
                continue;
            }
            if best.is_none_or(|(s, e, _)| end - start > e - s) {
                best = Some((start, end, sent));
            }
        }
    }
    match best {
        Some((s, e, sent)) => AnswerSpan {
            question,
            present: true,
            char_start: Some(sent.offset + s),
            char_end: Some(sent.offset + e),
            text: sent.text[s..e].to_string(),
        },
        None => AnswerSpan::absent(question),
    }
}

/// Answer one question over the post description.
pub fn answer_aspect(
    question: Question,
    post: &ExploitPost,
    backend: &Backend,
) -> Result<AnswerSpan> {
    let description = post.description.as_str();
    if description.trim().is_empty() {
        return Ok(AnswerSpan::absent(question));
    }
    match backend {
        Backend::Rule => Ok(rule_answer(
            question,
            &preprocess::tokenize_description(description),
        )),
        Backend::Stub(fx) => match fx.answer(post.edb_id, question) {
            None => Ok(AnswerSpan::absent(question)),
            Some(text) => {
                let at = description.find(text).ok_or_else(|| Error::StubMismatch {
                    edb_id: post.edb_id,
                    detail: format!("answer {text:?} to {question:?} not in description"),
                })?;
                Ok(AnswerSpan::found(
                    question,
                    description,
                    at,
                    at + text.len(),
                ))
            }
        },
        Backend::External(ext) => Ok(match ext.answer(question.text(), description)? {
            Some((s, e)) => AnswerSpan::found(question, description, s, e),
            None => AnswerSpan::absent(question),
        }),
    }
}

// ---------------------------------------------------------------------------
// Scoring

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ExactF1 {
    pub exact: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QaScores {
    pub overall: ExactF1,
    pub positive: ExactF1,
    pub negative: ExactF1,
    pub n_positive: usize,
    pub n_negative: usize,
}

/// Lowercase, drop punctuation and the articles a/an/the, split on
/// whitespace.
pub fn normalize_answer(text: &str) -> Vec<String> {
    let lowered: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    lowered
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .map(str::to_string)
        .collect()
}

/// Token-overlap F1 between normalized answers.
pub fn answer_f1(pred: &str, gold: &str) -> f64 {
    let p = normalize_answer(pred);
    let g = normalize_answer(gold);
    if p.is_empty() || g.is_empty() {
        return f64::from(u8::from(p == g));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &p {
        if let Some(n) = counts.get_mut(t.as_str()).filter(|n| **n > 0) {
            *n -= 1;
            common += 1;
        }
    }
    crate::score::Prf::from_counts(common, p.len(), g.len()).f1
}

fn score_pair(pred: &AnswerSpan, gold: &AnswerSpan) -> ExactF1 {
    match gold.answer() {
        None => {
            let s = f64::from(u8::from(!pred.present));
            ExactF1 { exact: s, f1: s }
        }
        Some(gold) => {
            let pred = pred.answer().unwrap_or("");
            ExactF1 {
                exact: f64::from(u8::from(normalize_answer(pred) == normalize_answer(gold))),
                f1: answer_f1(pred, gold),
            }
        }
    }
}

/// Exact and F1 over aligned (document, answer) lists. Positive questions
/// have a gold answer, negative ones do not; each group is a plain mean and
/// the overall score is the mean over every question.
pub fn qa_scores(preds: &[(u64, AnswerSpan)], golds: &[(u64, AnswerSpan)]) -> Result<QaScores> {
    if preds.len() != golds.len() {
        return Err(Error::AlignmentError(format!(
            "{} predictions for {} gold answers",
            preds.len(),
            golds.len()
        )));
    }
    let (mut pos, mut neg) = (ExactF1::default(), ExactF1::default());
    let (mut n_pos, mut n_neg) = (0usize, 0usize);
    for ((pid, p), (gid, g)) in preds.iter().zip(golds) {
        if pid != gid || p.question != g.question {
            return Err(Error::AlignmentError(format!(
                "prediction ({pid}, {:?}) against gold ({gid}, {:?})",
                p.question, g.question
            )));
        }
        let s = score_pair(p, g);
        let (acc, n) = if g.present {
            (&mut pos, &mut n_pos)
        } else {
            (&mut neg, &mut n_neg)
        };
        acc.exact += s.exact;
        acc.f1 += s.f1;
        *n += 1;
    }
    let mean = |sum: ExactF1, n: usize| {
        if n == 0 {
            ExactF1::default()
        } else {
            ExactF1 {
                exact: sum.exact / n as f64,
                f1: sum.f1 / n as f64,
            }
        }
    };
    let total = ExactF1 {
        exact: pos.exact + neg.exact,
        f1: pos.f1 + neg.f1,
    };
    Ok(QaScores {
        overall: mean(total, n_pos + n_neg),
        positive: mean(pos, n_pos),
        negative: mean(neg, n_neg),
        n_positive: n_pos,
        n_negative: n_neg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::tokenize_description;

    fn answer(q: Question, text: &str) -> Option<String> {
        rule_answer(q, &tokenize_description(text))
            .answer()
            .map(str::to_string)
    }

    #[test]
    fn rule_examples() {
        assert_eq!(
            answer(
                Question::RootCause,
                "The vulnerability exists due to a boundary error in the parser."
            )
            .as_deref(),
            Some("a boundary error in the parser")
        );
        assert_eq!(
            answer(
                Question::AttackVector,
                "crash it via a specially crafted PDF file."
            )
            .as_deref(),
            Some("a specially crafted PDF file")
        );
        assert_eq!(answer(Question::Impact, "Nothing to see here."), None);
        let text = "Decoding a malformed TIFF image leads to a system crash.";
        assert_eq!(
            answer(Question::AttackVector, text).as_deref(),
            Some("a malformed TIFF image")
        );
        assert_eq!(
            answer(Question::Impact, text).as_deref(),
            Some("a system crash")
        );
    }

    #[test]
    fn longest_candidate_wins() {
        let text = "This may lead to a crash. Successful exploitation will result in arbitrary code execution as root, too.";
        assert_eq!(
            answer(Question::Impact, text).as_deref(),
            Some("arbitrary code execution as root")
        );
    }

    #[test]
    fn offsets_index_the_description() {
        let desc = "First line.\n\nAn attacker can read arbitrary files; nothing else.";
        let span = rule_answer(Question::Impact, &tokenize_description(desc));
        let (s, e) = (span.char_start.unwrap(), span.char_end.unwrap());
        assert_eq!(&desc[s..e], "read arbitrary files");
    }

    #[test]
    fn stub_passthrough_and_empty_description() {
        let mut fx = crate::backend::StubFixtures::default();
        fx.qa
            .entry(7)
            .or_default()
            .insert(Question::Impact, Some("system crash".into()));
        let post =
            crate::corpus::parse_exploit_post(7, "T - x\nThe bug causes system crash.").unwrap();
        let span = answer_aspect(Question::Impact, &post, &Backend::stub(fx)).unwrap();
        assert_eq!(span.answer(), Some("system crash"));

        let empty = crate::corpus::parse_exploit_post(8, "# Exploit Title: T\n").unwrap();
        for q in Question::ALL {
            assert!(!answer_aspect(q, &empty, &Backend::Rule).unwrap().present);
        }
    }

    fn pos(text: &str) -> AnswerSpan {
        AnswerSpan {
            question: Question::Impact,
            present: true,
            char_start: Some(0),
            char_end: Some(text.len()),
            text: text.into(),
        }
    }

    #[test]
    fn scoring_examples() {
        let s = qa_scores(
            &[(1, pos("denial of service"))],
            &[(1, pos("a denial of service"))],
        )
        .unwrap();
        assert_eq!(
            s.overall,
            ExactF1 {
                exact: 1.0,
                f1: 1.0
            }
        );

        let s = qa_scores(
            &[(1, pos("cause daemon hang"))],
            &[(1, pos("crash the application"))],
        )
        .unwrap();
        assert_eq!(s.overall.f1, 0.0);

        let s = qa_scores(
            &[(1, pos("x")), (2, AnswerSpan::absent(Question::Impact))],
            &[(1, pos("x")), (2, AnswerSpan::absent(Question::Impact))],
        )
        .unwrap();
        assert_eq!(s.overall.exact, 1.0);
        assert_eq!((s.n_positive, s.n_negative), (1, 1));

        assert!(matches!(
            qa_scores(&[(1, pos("x"))], &[(2, pos("x"))]),
            Err(Error::AlignmentError(_))
        ));
    }
}
