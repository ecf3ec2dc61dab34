//! Aspect selection and CVE template filling.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gazetteer::AttackerType;
use crate::ner::{AspectKind, EntityKind, EntitySpan};

/// One value per aspect, ready for rendering.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectSet {
    pub product: Option<String>,
    #[serde(default)]
    pub versions: Vec<String>,
    #[serde(default)]
    pub components: Vec<String>,
    pub vultype: Option<String>,
    pub vendor: Option<String>,
    pub attacker: Option<AttackerType>,
    pub root_cause: Option<String>,
    pub attack_vector: Option<String>,
    pub impact: Option<String>,
}

impl AspectSet {
    pub fn is_empty(&self) -> bool {
        AspectKind::ALL.iter().all(|k| !self.has(*k))
    }

    pub fn has(&self, kind: AspectKind) -> bool {
        let some = |s: &Option<String>| s.as_deref().is_some_and(|s| !s.trim().is_empty());
        match kind {
            AspectKind::Product => some(&self.product),
            AspectKind::Version => !self.versions.is_empty(),
            AspectKind::Component => !self.components.is_empty(),
            AspectKind::VulType => some(&self.vultype),
            AspectKind::Vendor => some(&self.vendor),
            AspectKind::AttackerType => self.attacker.is_some(),
            AspectKind::RootCause => some(&self.root_cause),
            AspectKind::AttackVector => some(&self.attack_vector),
            AspectKind::Impact => some(&self.impact),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TemplateId {
    /// `[VULTYPE] in [COMPONENT] in [VENDOR][PRODUCT][VERSION] allows [ATTACKER] to [IMPACT] via [VECTOR]`
    T1,
    /// `[COMPONENT] in [VENDOR][PRODUCT][VERSION] [ROOT CAUSE], which allows [ATTACKER] to [IMPACT] via [VECTOR]`
    T2,
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComposedDescription {
    pub template_id: TemplateId,
    /// Only slots that made it into `text`, as rendered there.
    pub slots: BTreeMap<AspectKind, String>,
    pub text: String,
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Pick the most informative of several mentions: most tokens, then most
/// characters, then most frequent, then first seen. Case-insensitive
/// repeats count as one name; its first surface is returned.
pub fn select_named_aspect<S: AsRef<str>>(mentions: &[S]) -> Option<String> {
    struct Group {
        surface: String,
        first: usize,
        count: usize,
    }
    let mut groups: HashMap<String, Group> = HashMap::new();
    for (i, m) in mentions.iter().enumerate() {
        let surface = collapse(m.as_ref());
        if surface.is_empty() {
            continue;
        }
        groups
            .entry(surface.to_lowercase())
            .or_insert(Group {
                surface,
                first: i,
                count: 0,
            })
            .count += 1;
    }
    groups
        .into_values()
        .max_by_key(|g| {
            (
                g.surface.split_whitespace().count(),
                g.surface.chars().count(),
                g.count,
                std::cmp::Reverse(g.first),
            )
        })
        .map(|g| g.surface)
}

/// Distinct surfaces of one kind in first-occurrence order.
pub fn collect_multi(spans: &[EntitySpan], kind: EntityKind) -> Vec<String> {
    dedup_case_insensitive(
        spans
            .iter()
            .filter(|s| s.kind == kind)
            .map(|s| s.surface.as_str()),
    )
}

pub fn dedup_case_insensitive<'a>(items: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    items
        .into_iter()
        .map(collapse)
        .filter(|s| !s.is_empty() && seen.insert(s.to_lowercase()))
        .collect()
}

pub fn choose_template(aspects: &AspectSet) -> TemplateId {
    if !aspects.has(AspectKind::VulType) && aspects.has(AspectKind::RootCause) {
        TemplateId::T2
    } else {
        TemplateId::T1
    }
}

/// Impacts starting with one of these read as a verb phrase after "to".
pub const IMPACT_VERBS: &[&str] = &[
    "gain", "execute", "obtain", "read", "write", "bypass", "escalate", "inject", "crash", "run",
    "cause",
];

fn join_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

fn starts_with_word(s: &str, word: &str) -> bool {
    s.split_whitespace()
        .next()
        .is_some_and(|w| w.eq_ignore_ascii_case(word))
}

struct Renderer {
    slots: BTreeMap<AspectKind, String>,
}

impl Renderer {
    fn slot(&mut self, kind: AspectKind, value: String) -> String {
        self.slots.insert(kind, value.clone());
        value
    }

    fn opt(&mut self, kind: AspectKind, value: &Option<String>) -> Option<String> {
        let v = collapse(value.as_deref().unwrap_or(""));
        (!v.is_empty()).then(|| self.slot(kind, v))
    }

    fn list(&mut self, kind: AspectKind, values: &[String]) -> Option<String> {
        let values = dedup_case_insensitive(values.iter().map(String::as_str));
        (!values.is_empty()).then(|| self.slot(kind, join_list(&values)))
    }

    /// `[VENDOR][PRODUCT][VERSION]`.
    fn target(&mut self, a: &AspectSet) -> Option<String> {
        let product = collapse(a.product.as_deref().unwrap_or(""));
        let vendor = collapse(a.vendor.as_deref().unwrap_or(""));
        let mut parts = Vec::new();
        if !vendor.is_empty() {
            if product.is_empty() {
                parts.push(self.slot(AspectKind::Vendor, vendor));
            } else if !product.to_lowercase().starts_with(&vendor.to_lowercase()) {
                parts.push(format!("{}'s", self.slot(AspectKind::Vendor, vendor)));
            }
        }
        if !product.is_empty() {
            parts.push(self.slot(AspectKind::Product, product));
        }
        if let Some(v) = self.list(AspectKind::Version, &a.versions) {
            parts.push(v);
        }
        (!parts.is_empty()).then(|| parts.join(" "))
    }

    /// `allows [ATTACKER] to [IMPACT] via [VECTOR]`, adjusted for missing
    /// pieces. `lead` goes before the allows/causes verb.
    fn consequence(&mut self, a: &AspectSet, lead: &str) -> String {
        let mut out = String::new();
        let impact = collapse(a.impact.as_deref().unwrap_or(""));
        if !impact.is_empty() {
            match a.attacker {
                Some(att) => {
                    let impact = if IMPACT_VERBS.iter().any(|v| starts_with_word(&impact, v)) {
                        impact
                    } else {
                        format!("cause {impact}")
                    };
                    let att = self.slot(AspectKind::AttackerType, format!("{att} attacker"));
                    let impact = self.slot(AspectKind::Impact, impact);
                    out.push_str(&format!("{lead}allows {att} to {impact}"));
                }
                None => {
                    let impact = if starts_with_word(&impact, "cause") {
                        impact["cause".len()..].trim_start().to_string()
                    } else {
                        impact
                    };
                    if !impact.is_empty() {
                        let impact = self.slot(AspectKind::Impact, impact);
                        out.push_str(&format!("{lead}causes {impact}"));
                    }
                }
            }
        }
        if let Some(v) = self.opt(AspectKind::AttackVector, &a.attack_vector) {
            out.push_str(&format!(" via {v}"));
        }
        out
    }
}

/// Render the aspects with the template `choose_template` picks. Missing
/// aspects drop their phrase.
pub fn fill_template(aspects: &AspectSet) -> Result<ComposedDescription> {
    if aspects.is_empty() {
        return Err(Error::EmptyAspects);
    }
    let template_id = choose_template(aspects);
    let mut r = Renderer {
        slots: BTreeMap::new(),
    };
    let text = match template_id {
        TemplateId::T1 => {
            let vultype = r.opt(AspectKind::VulType, &aspects.vultype);
            let components = r.list(AspectKind::Component, &aspects.components);
            let target = r.target(aspects);
            let subject: Vec<String> = [vultype, components, target]
                .into_iter()
                .flatten()
                .collect();
            let tail = r.consequence(aspects, " ");
            format!("{}{tail}", subject.join(" in "))
        }
        TemplateId::T2 => {
            let components = r.list(AspectKind::Component, &aspects.components);
            let target = r.target(aspects);
            let subject: Vec<String> = [components, target].into_iter().flatten().collect();
            let cause = r
                .opt(AspectKind::RootCause, &aspects.root_cause)
                .unwrap_or_default();
            let tail = r.consequence(aspects, ", which ");
            format!("{} {cause}{tail}", subject.join(" in "))
        }
    };
    let text = collapse(&text);
    if text.is_empty() {
        return Err(Error::EmptyAspects);
    }
    Ok(ComposedDescription {
        template_id,
        slots: r.slots,
        text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: &str) -> Option<String> {
        Some(x.to_string())
    }

    #[test]
    fn select_examples() {
        let m = ["XSS", "cross-site scripting", "XSS", "XSS"];
        assert_eq!(
            select_named_aspect(&m).as_deref(),
            Some("cross-site scripting")
        );
        let m = ["overflow", "buffer overflow", "overflow", "buffer overflow"];
        assert_eq!(select_named_aspect(&m).as_deref(), Some("buffer overflow"));
        assert_eq!(select_named_aspect::<&str>(&[]), None);
        let m = ["Foo", "foo", "Bar"];
        assert_eq!(select_named_aspect(&m).as_deref(), Some("Foo"));
    }

    #[test]
    fn collect_examples() {
        assert_eq!(
            dedup_case_insensitive(["2.5.2", "2.5.2", "2.6"]),
            ["2.5.2", "2.6"]
        );
        assert_eq!(dedup_case_insensitive(["libssl", "LibSSL"]), ["libssl"]);
        assert!(collect_multi(&[], EntityKind::Version).is_empty());
    }

    #[test]
    fn template_choice() {
        let mut a = AspectSet {
            vultype: s("XSS"),
            ..Default::default()
        };
        assert_eq!(choose_template(&a), TemplateId::T1);
        a.vultype = None;
        a.root_cause = s("does not check input length");
        assert_eq!(choose_template(&a), TemplateId::T2);
        a.root_cause = None;
        assert_eq!(choose_template(&a), TemplateId::T1);
    }

    #[test]
    fn invensys_row() {
        let a = AspectSet {
            vultype: s("buffer overflow"),
            components: vec!["lm_tcp".into()],
            vendor: s("invensys"),
            product: s("WonderWare InBatch"),
            versions: vec!["9.0sp1".into()],
            attacker: Some(AttackerType::Remote),
            impact: s("denial of service"),
            attack_vector: s("writing a 16bit 0x0000 in an arbitrary memory location"),
            ..Default::default()
        };
        let c = fill_template(&a).unwrap();
        assert_eq!(
            c.text,
            "buffer overflow in lm_tcp in invensys's WonderWare InBatch 9.0sp1 allows remote attacker to cause denial of service via writing a 16bit 0x0000 in an arbitrary memory location"
        );
        for v in c.slots.values() {
            assert!(c.text.contains(v.as_str()));
        }
    }

    #[test]
    fn minimal_and_adjusted_forms() {
        let a = AspectSet {
            vultype: s("XSS"),
            product: s("Foo"),
            ..Default::default()
        };
        assert_eq!(fill_template(&a).unwrap().text, "XSS in Foo");

        let a = AspectSet {
            vultype: s("heap corruption"),
            product: s("ImageIO"),
            impact: s("cause system crash"),
            ..Default::default()
        };
        assert_eq!(
            fill_template(&a).unwrap().text,
            "heap corruption in ImageIO causes system crash"
        );

        let a = AspectSet {
            product: s("Foo"),
            versions: vec!["1.0".into(), "1.1".into(), "1.2".into()],
            root_cause: s("does not validate the length field"),
            attacker: Some(AttackerType::Local),
            impact: s("gain privileges"),
            ..Default::default()
        };
        let c = fill_template(&a).unwrap();
        assert_eq!(c.template_id, TemplateId::T2);
        assert_eq!(
            c.text,
            "Foo 1.0, 1.1 and 1.2 does not validate the length field, which allows local attacker to gain privileges"
        );

        let a = AspectSet {
            vendor: s("BMC"),
            product: s("BMC Track-It!"),
            ..Default::default()
        };
        assert_eq!(fill_template(&a).unwrap().text, "BMC Track-It!");

        assert!(matches!(
            fill_template(&AspectSet::default()),
            Err(Error::EmptyAspects)
        ));
    }
}
