//! Separate prose from proof-of-concept code, then split and tokenize.
//!
//!     cargo run --example strip_poc

use exploit2cve::preprocess::{strip_poc, tokenize_description};

const BODY: &str = "\
A heap corruption exists in ImageIO_Malloc of Apple ImageIO v4.2.1.3.
Opening a malformed TIFF image causes a system crash of the rendering process.

#!/usr/bin/env python
import struct
data = b'II*\\x00' + struct.pack('<I', 8)
open('crash.tiff', 'wb').write(data * 1000)
";

fn main() {
    let split = strip_poc(BODY);
    println!("description:\n{}\n", split.description);
    println!(
        "poc ({} lines):\n{}\n",
        split.poc_code.lines().count(),
        split.poc_code
    );

    for sent in tokenize_description(&split.description) {
        println!(
            "sentence {} at byte {}: {:?}",
            sent.sentence_index, sent.offset, sent.text
        );
        let tokens: Vec<&str> = sent.tokens.iter().map(|t| t.surface.as_str()).collect();
        println!("  {tokens:?}");
    }
}
