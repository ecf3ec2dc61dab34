//! Exploit/CVE timing, missing CVE ids and severity over the fixture corpus.
//!
//!     cargo run --example timing_study

use std::path::Path;

use exploit2cve::corpus::link_exploits_to_cves;
use exploit2cve::pipeline::{load_cves, load_posts};
use exploit2cve::study::{study_report, Side};

fn main() -> exploit2cve::Result<()> {
    let corpus = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus");
    let posts = load_posts(&corpus.join("posts"))?;
    let cves = load_cves(Some(&corpus.join("cves.jsonl")))?;
    let links = link_exploits_to_cves(&posts, &cves);
    let as_of = "2020-01-01".parse().unwrap();
    let report = study_report(&posts, &cves, &links, as_of);

    println!("{} links", report.links);
    println!(
        "exploit earlier: {}, later or same day: {}",
        report.gaps.side_total(Side::Earlier),
        report.gaps.side_total(Side::Later)
    );
    for b in report.gaps.buckets.iter().filter(|b| b.count > 0) {
        println!("  {:?} {:<10} {}", b.side, b.range.label(), b.count);
    }
    for (year, share) in &report.missing.per_year {
        println!(
            "{year}: {}/{} posts cite no CVE",
            share.matching, share.total
        );
    }
    println!("severity: {:?}", report.severity);
    Ok(())
}
