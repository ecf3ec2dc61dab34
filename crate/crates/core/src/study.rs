//! Corpus statistics: exploit/CVE timing, missing CVEs, severity.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::corpus::{CveRecord, ExploitCveLink, ExploitPost, Severity};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Earlier,
    Later,
}

/// Absolute day ranges. 180 belongs to the fourth range only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DayRange {
    #[serde(rename = "[0,1]")]
    UpTo1,
    #[serde(rename = "[2,7]")]
    UpTo7,
    #[serde(rename = "[8,30]")]
    UpTo30,
    #[serde(rename = "[31,180]")]
    UpTo180,
    #[serde(rename = "[181,365]")]
    UpTo365,
    #[serde(rename = ">365")]
    Over365,
}

impl DayRange {
    pub const ALL: [DayRange; 6] = [
        DayRange::UpTo1,
        DayRange::UpTo7,
        DayRange::UpTo30,
        DayRange::UpTo180,
        DayRange::UpTo365,
        DayRange::Over365,
    ];

    pub fn of(days: u64) -> Self {
        match days {
            0..=1 => DayRange::UpTo1,
            2..=7 => DayRange::UpTo7,
            8..=30 => DayRange::UpTo30,
            31..=180 => DayRange::UpTo180,
            181..=365 => DayRange::UpTo365,
            _ => DayRange::Over365,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DayRange::UpTo1 => "[0,1]",
            DayRange::UpTo7 => "[2,7]",
            DayRange::UpTo30 => "[8,30]",
            DayRange::UpTo180 => "[31,180]",
            DayRange::UpTo365 => "[181,365]",
            DayRange::Over365 => ">365",
        }
    }
}

impl fmt::Display for DayRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapBucket {
    pub side: Side,
    pub range: DayRange,
    pub count: usize,
    pub fraction: f64,
}

/// Twelve buckets, earlier side first, each side in range order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapHistogram {
    pub buckets: Vec<GapBucket>,
    pub total: usize,
}

pub fn classify_gap(day_gap: i64) -> (Side, DayRange) {
    let side = if day_gap < 0 {
        Side::Earlier
    } else {
        Side::Later
    };
    (side, DayRange::of(day_gap.unsigned_abs()))
}

impl GapHistogram {
    pub fn from_gaps(gaps: impl IntoIterator<Item = i64>) -> Self {
        let mut counts: BTreeMap<(Side, DayRange), usize> = BTreeMap::new();
        let mut total = 0;
        for g in gaps {
            *counts.entry(classify_gap(g)).or_default() += 1;
            total += 1;
        }
        let buckets = [Side::Earlier, Side::Later]
            .into_iter()
            .flat_map(|side| DayRange::ALL.into_iter().map(move |range| (side, range)))
            .map(|(side, range)| {
                let count = counts.get(&(side, range)).copied().unwrap_or(0);
                GapBucket {
                    side,
                    range,
                    count,
                    fraction: ratio(count, total),
                }
            })
            .collect();
        GapHistogram { buckets, total }
    }

    pub fn count(&self, side: Side, range: DayRange) -> usize {
        self.buckets
            .iter()
            .find(|b| b.side == side && b.range == range)
            .map_or(0, |b| b.count)
    }

    pub fn side_total(&self, side: Side) -> usize {
        self.buckets
            .iter()
            .filter(|b| b.side == side)
            .map(|b| b.count)
            .sum()
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["side", "range", "count", "fraction"])
            .map_err(csv_err)?;
        for b in &self.buckets {
            let side = if b.side == Side::Earlier {
                "earlier"
            } else {
                "later"
            };
            out.write_record([
                side,
                b.range.label(),
                &b.count.to_string(),
                &format!("{:.6}", b.fraction),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> crate::error::Error {
    crate::error::Error::Io(std::io::Error::other(e))
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// Bucket every link by the sign and size of its day gap. A gap of 0
/// counts as later.
pub fn bucketize_gaps(links: &[ExploitCveLink]) -> GapHistogram {
    GapHistogram::from_gaps(links.iter().map(|l| l.day_gap))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearShare {
    pub total: usize,
    pub matching: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeBucket {
    pub range: DayRange,
    pub count: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingCveStats {
    /// Per publication year, posts citing no CVE.
    pub per_year: BTreeMap<i32, YearShare>,
    /// Age at `as_of` of posts citing no CVE.
    pub age: Vec<AgeBucket>,
    /// Posts without a publication date, left out of both tables.
    pub undated: usize,
}

pub fn missing_cve_stats(posts: &[ExploitPost], as_of: NaiveDate) -> MissingCveStats {
    let mut per_year: BTreeMap<i32, (usize, usize)> = BTreeMap::new();
    let mut ages: BTreeMap<DayRange, usize> = BTreeMap::new();
    let mut undated = 0;
    let mut n_missing = 0;
    for post in posts {
        let Some(published) = post.published else {
            undated += 1;
            continue;
        };
        let entry = per_year.entry(published.year()).or_default();
        entry.0 += 1;
        if post.cve_ids.is_empty() {
            entry.1 += 1;
            n_missing += 1;
            let age = (as_of - published).num_days().unsigned_abs();
            *ages.entry(DayRange::of(age)).or_default() += 1;
        }
    }
    MissingCveStats {
        per_year: per_year
            .into_iter()
            .map(|(y, (total, missing))| {
                (
                    y,
                    YearShare {
                        total,
                        matching: missing,
                        fraction: ratio(missing, total),
                    },
                )
            })
            .collect(),
        age: DayRange::ALL
            .into_iter()
            .map(|range| {
                let count = ages.get(&range).copied().unwrap_or(0);
                AgeBucket {
                    range,
                    count,
                    fraction: ratio(count, n_missing),
                }
            })
            .collect(),
        undated,
    }
}

pub fn severity_distribution(cves: &[CveRecord]) -> BTreeMap<Severity, usize> {
    let mut out: BTreeMap<Severity, usize> = Severity::ALL.into_iter().map(|s| (s, 0)).collect();
    for c in cves {
        *out.entry(c.severity()).or_default() += 1;
    }
    out
}

/// Per exploit year, the share of links where the exploit came first.
pub fn earlier_share_by_year(
    posts: &[ExploitPost],
    links: &[ExploitCveLink],
) -> BTreeMap<i32, YearShare> {
    let years: BTreeMap<u64, i32> = posts
        .iter()
        .filter_map(|p| p.published.map(|d| (p.edb_id, d.year())))
        .collect();
    let mut acc: BTreeMap<i32, (usize, usize)> = BTreeMap::new();
    for link in links {
        if let Some(year) = years.get(&link.edb_id) {
            let e = acc.entry(*year).or_default();
            e.0 += 1;
            if link.day_gap < 0 {
                e.1 += 1;
            }
        }
    }
    acc.into_iter()
        .map(|(y, (total, earlier))| {
            (
                y,
                YearShare {
                    total,
                    matching: earlier,
                    fraction: ratio(earlier, total),
                },
            )
        })
        .collect()
}

/// Severity of the CVEs whose exploit was published first.
pub fn earlier_severity(links: &[ExploitCveLink], cves: &[CveRecord]) -> BTreeMap<Severity, usize> {
    let by_id: BTreeMap<&str, &CveRecord> = cves.iter().map(|c| (c.cve_id.as_str(), c)).collect();
    let earlier: Vec<CveRecord> = links
        .iter()
        .filter(|l| l.day_gap < 0)
        .filter_map(|l| by_id.get(l.cve_id.as_str()).map(|c| (*c).clone()))
        .collect();
    severity_distribution(&earlier)
}

/// Everything the `stats` subcommand writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub links: usize,
    /// Every (post, CVE) link is counted, so a post citing two CVEs counts twice.
    pub counting: String,
    pub gaps: GapHistogram,
    pub earlier_by_year: BTreeMap<i32, YearShare>,
    pub missing: MissingCveStats,
    pub severity: BTreeMap<Severity, usize>,
    pub earlier_severity: BTreeMap<Severity, usize>,
}

pub fn study_report(
    posts: &[ExploitPost],
    cves: &[CveRecord],
    links: &[ExploitCveLink],
    as_of: NaiveDate,
) -> StudyReport {
    StudyReport {
        links: links.len(),
        counting: "per-link".into(),
        gaps: bucketize_gaps(links),
        earlier_by_year: earlier_share_by_year(posts, links),
        missing: missing_cve_stats(posts, as_of),
        severity: severity_distribution(cves),
        earlier_severity: earlier_severity(links, cves),
    }
}
