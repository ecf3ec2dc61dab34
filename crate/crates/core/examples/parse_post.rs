//! Parse an ExploitDB post, a CVE feed and CPE names, then link posts to CVEs.
//!
//!     cargo run --example parse_post

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use exploit2cve::corpus::{
    link_exploits_to_cves, parse_cpe_uri, parse_cve_records, parse_exploit_post, CpeDictionary,
};

fn main() -> exploit2cve::Result<()> {
    let corpus = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus");

    let raw = std::fs::read_to_string(corpus.join("posts/40682.txt"))?;
    let post = parse_exploit_post(40682, &raw)?;
    println!("title:     {}", post.title);
    println!("published: {:?}", post.published);
    println!("type:      {:?}", post.exploit_type);
    println!("cves:      {:?}", post.cve_ids);
    println!("homepage:  {:?}", post.vendor_homepage);
    println!(
        "prose:     {} bytes, poc: {} bytes",
        post.description.len(),
        post.poc_code.len()
    );

    let feed = parse_cve_records(BufReader::new(File::open(corpus.join("cves.jsonl"))?))?;
    println!(
        "\n{} CVE records ({} lines skipped)",
        feed.records.len(),
        feed.skipped
    );
    for cve in &feed.records {
        println!("  {} {:?}", cve.cve_id, cve.severity());
    }

    let name = parse_cpe_uri("cpe:2.3:a:alienvault:ossim\\/usm:5.3.1:*:*:*:*:*:*:*")?;
    println!("\nCPE vendor {} product {}", name.vendor, name.product);
    let dict = CpeDictionary::from_reader(BufReader::new(File::open(corpus.join("cpe.txt"))?))?;
    println!(
        "dictionary: {} products, lookup(\"OSSIM/USM\") = {:?}",
        dict.len(),
        dict.lookup("OSSIM/USM")
    );

    let links = link_exploits_to_cves(&[post], &feed.records);
    for l in links {
        println!("link {} -> {}: day gap {}", l.edb_id, l.cve_id, l.day_gap);
    }
    Ok(())
}
