//! The whole pipeline over the fixture corpus, with canned extractions.
//!
//!     cargo run --example run_pipeline

use std::path::Path;

use exploit2cve::backend::BackendSpec;
use exploit2cve::pipeline::{
    read_jsonl, run_pipeline, ComposedRecord, PipelineConfig, COMPOSED_FILE,
};

fn main() -> exploit2cve::Result<()> {
    let corpus = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus");
    let out = tempfile::tempdir()?;

    let mut cfg = PipelineConfig::new(corpus.join("posts"), out.path());
    cfg.cves = Some(corpus.join("cves.jsonl"));
    cfg.cpe = Some(corpus.join("cpe.txt"));
    cfg.gold = Some(corpus.join("gold.jsonl"));

    for backend in [
        BackendSpec::Rule,
        BackendSpec::Stub(corpus.join("stub.json")),
    ] {
        cfg.ner_backend = backend.clone();
        cfg.qa_backend = backend.clone();
        let report = run_pipeline(&cfg)?;
        println!("== {backend}");
        let composed: Vec<ComposedRecord> = read_jsonl(&out.path().join(COMPOSED_FILE))?;
        for c in composed {
            println!("{} [{}] {}", c.edb_id, c.template_id, c.text);
        }
        println!(
            "ROUGE-1 {:.3}  ROUGE-2 {:.3}  ROUGE-L {:.3} over {} pairs",
            report.rouge.rouge1.f1, report.rouge.rouge2.f1, report.rouge.rouge_l.f1, report.n_pairs
        );
        if let (Some(ner), Some(qa)) = (report.ner, report.qa) {
            println!(
                "NER F1 {:.3}  QA exact {:.3} F1 {:.3}\n",
                ner.overall.f1, qa.overall.exact, qa.overall.f1
            );
        }
    }
    Ok(())
}
