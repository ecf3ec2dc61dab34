//! Compose CVE-style vulnerability descriptions from ExploitDB-style
//! exploit posts.
//!
//! A post is split into prose and proof-of-concept code, nine aspects are
//! extracted (product, version, component, vulnerability type, vendor,
//! attacker type, root cause, attack vector, impact) and the aspects are
//! rendered through one of two CVE description templates. Composed
//! descriptions are scored against reference CVEs with ROUGE.
//!
//! ```
//! use exploit2cve::compose::{fill_template, AspectSet};
//! use exploit2cve::gazetteer::AttackerType;
//!
//! let aspects = AspectSet {
//!     vultype: Some("php object injection".into()),
//!     components: vec!["image.php".into()],
//!     vendor: Some("alienvault".into()),
//!     product: Some("OSSIM/USM".into()),
//!     versions: vec!["5.3.1".into()],
//!     attacker: Some(AttackerType::Remote),
//!     impact: Some("gain code execution".into()),
//!     ..Default::default()
//! };
//! let text = fill_template(&aspects).unwrap().text;
//! assert_eq!(
//!     text,
//!     "php object injection in image.php in alienvault's OSSIM/USM 5.3.1 allows remote attacker to gain code execution"
//! );
//! ```

pub mod backend;
pub mod compose;
pub mod corpus;
pub mod error;
pub mod evaluate;
pub mod gazetteer;
pub mod ner;
pub mod pipeline;
pub mod preprocess;
pub mod qa;
pub mod score;
pub mod study;

pub use error::{Error, Result};
