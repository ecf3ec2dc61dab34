//! Vendor resolution and attacker type.
//!
//!     cargo run --example vendor_lookup

use exploit2cve::corpus::{build_cpe_dictionary, ExploitType};
use exploit2cve::gazetteer::{domain_label, map_attacker_type, resolve_vendor};

fn main() {
    let dict = build_cpe_dictionary([
        "cpe:2.3:a:invensys:wonderware_inbatch:9.0:*:*:*:*:*:*:*",
        "cpe:2.3:a:smartbear:readyapi:2.5.0:*:*:*:*:*:*:*",
    ]);

    let cases = [
        (Some("WonderWare InBatch"), None),
        (Some("Invensys Wonderware InBatch"), None),
        (Some("ReadyAPI"), Some("https://smartbear.com")),
        (
            Some("Quick Heal AntiVirus Pro"),
            Some("http://www.quickheal.co.in/"),
        ),
        (Some("BMC Track-It!"), None),
    ];
    for (product, homepage) in cases {
        println!(
            "{:<30} {:<32} -> {:?}",
            format!("{product:?}"),
            format!("{homepage:?}"),
            resolve_vendor(product, &dict, homepage)
        );
    }
    println!(
        "\ndomain label of https://download.alienvault.com/x: {:?}",
        domain_label("https://download.alienvault.com/x")
    );

    println!();
    for (ty, poc) in [
        (ExploitType::Webapp, ""),
        (ExploitType::Local, ""),
        (ExploitType::Dos, "s = socket.socket(socket.AF_INET)"),
        (ExploitType::Dos, "open('crash.tiff', 'wb').write(data)"),
    ] {
        println!("{ty:<7} {poc:<40} -> {}", map_attacker_type(ty, poc));
    }
}
