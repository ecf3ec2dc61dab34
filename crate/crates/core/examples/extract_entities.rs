//! Rule-based entity extraction and the BIO encoding used on the wire.
//!
//!     cargo run --example extract_entities

use exploit2cve::ner::{encode_bio, rule_extract_entities, TITLE_SENTENCE};
use exploit2cve::preprocess::{tokenize, tokenize_description};

fn main() {
    let title = "Quick Heal AntiVirus Pro 7.0.0.1 - 'pepoly.dll' Stack Buffer Overflow";
    let description = "Quick Heal AntiVirus Pro version 7.0.0.1 (b2.0.0.1) ships pepoly.dll. \
                       A stack buffer overflow occurs while it parses the import table.";
    let sentences = tokenize_description(description);

    for span in rule_extract_entities(title, &sentences) {
        let place = if span.sentence_index == TITLE_SENTENCE {
            "title".to_string()
        } else {
            format!("sentence {}", span.sentence_index)
        };
        println!(
            "{:<10} {:<28} {place} [{}..{}]",
            span.kind.as_str(),
            span.surface,
            span.char_start,
            span.char_end
        );
    }

    let sent = tokenize(title);
    let spans: Vec<_> = rule_extract_entities(title, &[])
        .into_iter()
        .filter(|s| s.sentence_index == TITLE_SENTENCE)
        .collect();
    println!();
    for (tok, tag) in sent.tokens.iter().zip(encode_bio(&sent, &spans)) {
        println!("{:<14} {tag}", tok.surface);
    }
}
