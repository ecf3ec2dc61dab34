//! ROUGE against a reference CVE description, plus the sampling and
//! agreement helpers used for manual review.
//!
//!     cargo run --example score_rouge

use exploit2cve::evaluate::{cohens_kappa, draw_sample, rouge_scores, sample_size};

fn main() -> exploit2cve::Result<()> {
    let composed = "code execution in smartbear's ReadyAPI 2.5.0 and 2.6.0 allows remote attacker to cause code \
                    execution via opening a soap project and import wsdl files";
    let reference = "SmartBear ReadyAPI 2.5.0 and 2.6.0 allows remote attackers to execute arbitrary Java code via \
                     a crafted request parameter in a WSDL file.";
    let s = rouge_scores(composed, reference);
    println!(
        "rouge-1 {:.3}  rouge-2 {:.3}  rouge-l {:.3}",
        s.rouge1.f1, s.rouge2.f1, s.rouge_l.f1
    );

    let n = sample_size(0.05, 0.95, 0.5)?;
    println!("\nreview sample size at 5% margin, 95% confidence: {n}");
    let population: Vec<u32> = (0..2000).collect();
    let picked = draw_sample(&population, 8, 0)?;
    println!("first draws with seed 0: {picked:?}");

    let a = ["ok", "ok", "bad", "ok", "bad", "ok"];
    let b = ["ok", "bad", "bad", "ok", "bad", "ok"];
    println!("kappa between two reviewers: {:.3}", cohens_kappa(&a, &b)?);
    Ok(())
}
