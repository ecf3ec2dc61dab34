//! Rule answers to the three aspect questions, and exact/F1 scoring.
//!
//!     cargo run --example answer_questions

use exploit2cve::preprocess::tokenize_description;
use exploit2cve::qa::{qa_scores, rule_answer, AnswerSpan, Question};

fn main() -> exploit2cve::Result<()> {
    let description = "SmartBear ReadyAPI 2.5.0 and 2.6.0 are affected. \
                       A remote attacker can cause code execution by opening a soap project and import wsdl files.";
    let sentences = tokenize_description(description);

    let mut preds = Vec::new();
    for q in Question::ALL {
        let a = rule_answer(q, &sentences);
        println!("{:<24} {:?}", q.text(), a.answer());
        preds.push((46796, a));
    }

    let gold = |q: Question, text: &str| {
        let start = description.find(text).unwrap();
        AnswerSpan::found(q, description, start, start + text.len())
    };
    let golds = vec![
        (46796, AnswerSpan::absent(Question::RootCause)),
        (
            46796,
            gold(
                Question::AttackVector,
                "opening a soap project and import wsdl files",
            ),
        ),
        (46796, gold(Question::Impact, "cause code execution")),
    ];
    let scores = qa_scores(&preds, &golds)?;
    println!("\n{}", serde_json::to_string_pretty(&scores)?);
    Ok(())
}
