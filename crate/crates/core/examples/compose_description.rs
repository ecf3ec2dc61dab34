//! Fill the description templates from a set of aspects.
//!
//!     cargo run --example compose_description

use exploit2cve::compose::{fill_template, select_named_aspect, AspectSet};
use exploit2cve::gazetteer::AttackerType;

fn main() -> exploit2cve::Result<()> {
    let product = select_named_aspect(&["InBatch", "WonderWare InBatch", "InBatch"]);
    let t1 = AspectSet {
        product,
        versions: vec!["9.0sp1".into()],
        components: vec!["lm_tcp".into()],
        vultype: Some("buffer overflow".into()),
        vendor: Some("invensys".into()),
        attacker: Some(AttackerType::Remote),
        attack_vector: Some("writing a 16bit 0x0000 in an arbitrary memory location".into()),
        impact: Some("denial of service".into()),
        ..Default::default()
    };
    let c = fill_template(&t1)?;
    println!("{}: {}", c.template_id, c.text);
    for (kind, value) in &c.slots {
        println!("  {kind:?} = {value:?}");
    }

    // without a vulnerability type the root cause carries the sentence
    let t2 = AspectSet {
        product: Some("ImageIO".into()),
        components: vec!["ImageIO_Malloc".into()],
        vendor: Some("apple".into()),
        root_cause: Some("does not check the requested allocation size".into()),
        attacker: Some(AttackerType::Local),
        impact: Some("a system crash".into()),
        attack_vector: Some("a malformed TIFF image".into()),
        ..Default::default()
    };
    let c = fill_template(&t2)?;
    println!("\n{}: {}", c.template_id, c.text);
    Ok(())
}
