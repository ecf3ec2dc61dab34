//! End-to-end runs with JSONL intermediates.
//!
//! Stages and the files they leave in the output directory:
//!
//! | stage    | reads                          | writes                          |
//! |----------|--------------------------------|---------------------------------|
//! | ingest   | posts, cves                    | `posts.jsonl`, `links.jsonl`    |
//! | extract  | `posts.jsonl`, cpe             | `aspects.jsonl`, `fallbacks.jsonl` |
//! | compose  | `aspects.jsonl`                | `composed.jsonl`                |
//! | evaluate | `composed.jsonl`, `links.jsonl`, cves, gold | `report.json`      |
//!
//! Each stage can run on its own from the files of the previous one.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendSpec};
use crate::compose::{self, AspectSet, ComposedDescription, TemplateId};
use crate::corpus::{self, CpeDictionary, CveRecord, ExploitCveLink, ExploitPost};
use crate::error::{Error, Result};
use crate::evaluate::{self, EvalReport, Fallback};
use crate::gazetteer;
use crate::ner::{self, AspectKind, EntityKind, EntitySpan, NerTally};
use crate::preprocess;
use crate::qa::{self, AnswerSpan, Question};
use crate::study::{self, StudyReport};

pub const POSTS_FILE: &str = "posts.jsonl";
pub const LINKS_FILE: &str = "links.jsonl";
pub const ASPECTS_FILE: &str = "aspects.jsonl";
pub const FALLBACKS_FILE: &str = "fallbacks.jsonl";
pub const COMPOSED_FILE: &str = "composed.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const STATS_FILE: &str = "stats.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Directory of `<edb_id>.txt` posts, or a `posts.jsonl` file.
    pub posts: PathBuf,
    /// `cves.jsonl`.
    #[serde(default)]
    pub cves: Option<PathBuf>,
    /// `cpe.txt`, one CPE 2.3 URI per line.
    #[serde(default)]
    pub cpe: Option<PathBuf>,
    #[serde(default)]
    pub ner_backend: BackendSpec,
    #[serde(default)]
    pub qa_backend: BackendSpec,
    #[serde(default)]
    pub seed: u64,
    pub out: PathBuf,
    /// Fail instead of falling back to the rule backend.
    #[serde(default)]
    pub no_fallback: bool,
    /// JSONL of [`GoldPost`] for NER and QA metrics.
    #[serde(default)]
    pub gold: Option<PathBuf>,
    /// Reference date for post ages; defaults to the newest post.
    #[serde(default)]
    pub as_of: Option<NaiveDate>,
}

impl PipelineConfig {
    pub fn new(posts: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            posts: posts.into(),
            cves: None,
            cpe: None,
            ner_backend: BackendSpec::Rule,
            qa_backend: BackendSpec::Rule,
            seed: 0,
            out: out.into(),
            no_fallback: false,
            gold: None,
            as_of: None,
        }
    }

    /// Read a TOML config. Relative paths are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let mut cfg: PipelineConfig = toml::from_str(&text)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.posts);
        rebase(&mut cfg.out);
        for p in [&mut cfg.cves, &mut cfg.cpe, &mut cfg.gold]
            .into_iter()
            .flatten()
        {
            rebase(p);
        }
        for spec in [&mut cfg.ner_backend, &mut cfg.qa_backend] {
            if let BackendSpec::Stub(p) = spec {
                rebase(p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let must_exist = |what: &str, p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(Error::Validation(format!(
                    "{what} {} does not exist",
                    p.display()
                )))
            }
        };
        must_exist("posts", &self.posts)?;
        for (what, p) in [
            ("cves", &self.cves),
            ("cpe", &self.cpe),
            ("gold", &self.gold),
        ] {
            if let Some(p) = p {
                must_exist(what, p)?;
            }
        }
        for spec in [&self.ner_backend, &self.qa_backend] {
            if let BackendSpec::Stub(p) = spec {
                must_exist("stub fixture", p)?;
            }
        }
        Ok(())
    }

    fn out_file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

// ---------------------------------------------------------------------------
// JSONL

pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    items: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush().map_err(|e| Error::file(path, e))?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::file(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Validation(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::file(path, e))
}

// ---------------------------------------------------------------------------
// Inputs

/// Posts from a directory of `<edb_id>.txt` files or from a JSONL file,
/// ordered by id.
pub fn load_posts(path: &Path) -> Result<Vec<ExploitPost>> {
    let mut posts = if path.is_dir() {
        let mut posts = Vec::new();
        for entry in fs::read_dir(path).map_err(|e| Error::file(path, e))? {
            let p = entry.map_err(|e| Error::file(path, e))?.path();
            if p.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let edb_id: u64 = p
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse().ok())
                .filter(|id| *id > 0)
                .ok_or_else(|| {
                    Error::Validation(format!("{}: file name is not an ExploitDB id", p.display()))
                })?;
            let raw = fs::read_to_string(&p).map_err(|e| Error::file(&p, e))?;
            posts.push(corpus::parse_exploit_post(edb_id, &raw).map_err(|e| e.in_post(edb_id))?);
        }
        posts
    } else {
        read_jsonl(path)?
    };
    posts.sort_by_key(|p| p.edb_id);
    for pair in posts.windows(2) {
        if pair[0].edb_id == pair[1].edb_id {
            return Err(Error::Validation(format!(
                "duplicate post id {}",
                pair[0].edb_id
            )));
        }
    }
    for p in &posts {
        p.validate()?;
    }
    Ok(posts)
}

pub fn load_cves(path: Option<&Path>) -> Result<Vec<CveRecord>> {
    match path {
        None => Ok(Vec::new()),
        Some(p) => {
            let file = File::open(p).map_err(|e| Error::file(p, e))?;
            Ok(corpus::parse_cve_records(BufReader::new(file))?.records)
        }
    }
}

pub fn load_cpe(path: Option<&Path>) -> Result<CpeDictionary> {
    match path {
        None => Ok(CpeDictionary::default()),
        Some(p) => {
            let file = File::open(p).map_err(|e| Error::file(p, e))?;
            CpeDictionary::from_reader(BufReader::new(file))
        }
    }
}

// ---------------------------------------------------------------------------
// Records

/// Everything extracted from one post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostAspects {
    pub edb_id: u64,
    pub entities: Vec<EntitySpan>,
    pub answers: Vec<AnswerSpan>,
    pub aspects: AspectSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComposedRecord {
    pub edb_id: u64,
    pub template_id: TemplateId,
    pub slots: BTreeMap<AspectKind, String>,
    pub text: String,
}

impl ComposedRecord {
    pub fn new(edb_id: u64, c: ComposedDescription) -> Self {
        ComposedRecord {
            edb_id,
            template_id: c.template_id,
            slots: c.slots,
            text: c.text,
        }
    }
}

/// Hand labels for one post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldPost {
    pub edb_id: u64,
    #[serde(default)]
    pub entities: Vec<EntitySpan>,
    #[serde(default)]
    pub answers: Vec<AnswerSpan>,
}

// ---------------------------------------------------------------------------
// Stages

pub struct Ingested {
    pub posts: Vec<ExploitPost>,
    pub cves: Vec<CveRecord>,
    pub links: Vec<ExploitCveLink>,
}

pub fn ingest(cfg: &PipelineConfig) -> Result<Ingested> {
    let posts = load_posts(&cfg.posts)?;
    let cves = load_cves(cfg.cves.as_deref())?;
    let links = corpus::link_exploits_to_cves(&posts, &cves);
    write_jsonl(&cfg.out_file(POSTS_FILE), &posts)?;
    write_jsonl(&cfg.out_file(LINKS_FILE), &links)?;
    Ok(Ingested { posts, cves, links })
}

fn is_backend_failure(e: &Error) -> bool {
    matches!(e, Error::BackendUnavailable(_) | Error::Protocol(_))
}

fn open_backend(
    spec: &BackendSpec,
    task: &str,
    cfg: &PipelineConfig,
    fallbacks: &mut Vec<Fallback>,
) -> Result<Backend> {
    match Backend::open(spec, task) {
        Ok(b) => Ok(b),
        Err(e) if is_backend_failure(&e) && !cfg.no_fallback => {
            fallbacks.push(Fallback {
                task: task.into(),
                edb_id: None,
                reason: e.to_string(),
            });
            Ok(Backend::Rule)
        }
        Err(e) => Err(e),
    }
}

/// Fold NER spans, QA answers and gazetteer lookups into one aspect set.
pub fn assemble_aspects(
    post: &ExploitPost,
    entities: &[EntitySpan],
    answers: &[AnswerSpan],
    cpe: &CpeDictionary,
) -> AspectSet {
    let named = |kind: EntityKind| {
        let mentions: Vec<&str> = entities
            .iter()
            .filter(|e| e.kind == kind)
            .map(|e| e.surface.as_str())
            .collect();
        compose::select_named_aspect(&mentions)
    };
    let answer = |q: Question| {
        answers
            .iter()
            .find(|a| a.question == q)
            .and_then(|a| a.answer())
            .map(str::to_string)
    };
    let product = named(EntityKind::Product);
    AspectSet {
        vendor: gazetteer::resolve_vendor(product.as_deref(), cpe, post.vendor_homepage.as_deref()),
        product,
        versions: compose::collect_multi(entities, EntityKind::Version),
        components: compose::collect_multi(entities, EntityKind::Component),
        vultype: named(EntityKind::VulType),
        attacker: post
            .exploit_type
            .map(|t| gazetteer::map_attacker_type(t, &post.poc_code)),
        root_cause: answer(Question::RootCause),
        attack_vector: answer(Question::AttackVector),
        impact: answer(Question::Impact),
    }
}

fn extract_post(
    post: &ExploitPost,
    ner_backend: &Backend,
    qa_backend: &Backend,
    cpe: &CpeDictionary,
    no_fallback: bool,
) -> Result<(PostAspects, Vec<Fallback>)> {
    let mut fallbacks = Vec::new();
    let mut fall_back = |task: &str, e: Error| -> Result<()> {
        if no_fallback || !is_backend_failure(&e) {
            return Err(e.in_post(post.edb_id));
        }
        fallbacks.push(Fallback {
            task: task.into(),
            edb_id: Some(post.edb_id),
            reason: e.to_string(),
        });
        Ok(())
    };
    let sentences = preprocess::tokenize_description(&post.description);
    let entities = match ner::extract_entities_from(post, &sentences, ner_backend) {
        Ok(s) => s,
        Err(e) => {
            fall_back("ner", e)?;
            ner::extract_entities_from(post, &sentences, &Backend::Rule)?
        }
    };
    let mut answers = Vec::new();
    for q in Question::ALL {
        answers.push(match qa::answer_aspect(q, post, qa_backend) {
            Ok(a) => a,
            Err(e) => {
                fall_back("qa", e)?;
                qa::rule_answer(q, &sentences)
            }
        });
    }
    let aspects = assemble_aspects(post, &entities, &answers, cpe);
    Ok((
        PostAspects {
            edb_id: post.edb_id,
            entities,
            answers,
            aspects,
        },
        fallbacks,
    ))
}

pub struct Extracted {
    pub aspects: Vec<PostAspects>,
    pub fallbacks: Vec<Fallback>,
}

/// Run NER, QA and the gazetteer over every post in parallel. Output order
/// follows the input.
pub fn extract(cfg: &PipelineConfig, posts: &[ExploitPost]) -> Result<Extracted> {
    let cpe = load_cpe(cfg.cpe.as_deref())?;
    let mut fallbacks = Vec::new();
    let ner_backend = open_backend(&cfg.ner_backend, "ner", cfg, &mut fallbacks)?;
    let qa_backend = open_backend(&cfg.qa_backend, "qa", cfg, &mut fallbacks)?;
    let results: Vec<(PostAspects, Vec<Fallback>)> = posts
        .par_iter()
        .map(|p| extract_post(p, &ner_backend, &qa_backend, &cpe, cfg.no_fallback))
        .collect::<Result<_>>()?;
    let mut aspects = Vec::with_capacity(results.len());
    for (a, f) in results {
        aspects.push(a);
        fallbacks.extend(f);
    }
    write_jsonl(&cfg.out_file(ASPECTS_FILE), &aspects)?;
    write_jsonl(&cfg.out_file(FALLBACKS_FILE), &fallbacks)?;
    Ok(Extracted { aspects, fallbacks })
}

/// Fill a template for every post that has at least one aspect.
pub fn compose(cfg: &PipelineConfig, aspects: &[PostAspects]) -> Result<Vec<ComposedRecord>> {
    let mut out = Vec::new();
    for a in aspects {
        match compose::fill_template(&a.aspects) {
            Ok(c) => out.push(ComposedRecord::new(a.edb_id, c)),
            Err(Error::EmptyAspects) => {}
            Err(e) => return Err(e.in_post(a.edb_id)),
        }
    }
    write_jsonl(&cfg.out_file(COMPOSED_FILE), &out)?;
    Ok(out)
}

/// NER and QA metrics against hand labels, over the posts present in both.
pub fn gold_metrics(
    aspects: &[PostAspects],
    gold: &[GoldPost],
) -> Result<(ner::NerMetrics, qa::QaScores)> {
    let by_id: BTreeMap<u64, &PostAspects> = aspects.iter().map(|a| (a.edb_id, a)).collect();
    let mut tally = NerTally::default();
    let (mut preds, mut golds) = (Vec::new(), Vec::new());
    for g in gold {
        let Some(pred) = by_id.get(&g.edb_id) else {
            continue;
        };
        tally.add(&pred.entities, &g.entities);
        for ga in &g.answers {
            let pa = pred
                .answers
                .iter()
                .find(|a| a.question == ga.question)
                .cloned()
                .unwrap_or_else(|| AnswerSpan::absent(ga.question));
            preds.push((g.edb_id, pa));
            golds.push((g.edb_id, ga.clone()));
        }
    }
    Ok((tally.metrics(), qa::qa_scores(&preds, &golds)?))
}

pub fn evaluate(
    cfg: &PipelineConfig,
    composed: &[ComposedRecord],
    links: &[ExploitCveLink],
    aspects: Option<&[PostAspects]>,
    fallbacks: Vec<Fallback>,
) -> Result<EvalReport> {
    let cves = load_cves(cfg.cves.as_deref())?;
    let texts: BTreeMap<u64, String> = composed
        .iter()
        .map(|c| (c.edb_id, c.text.clone()))
        .collect();
    let mut report = evaluate::evaluate_corpus(&texts, &cves, links)?;
    if let (Some(gold), Some(aspects)) = (&cfg.gold, aspects) {
        let gold: Vec<GoldPost> = read_jsonl(gold)?;
        let (ner, qa) = gold_metrics(aspects, &gold)?;
        report.ner = Some(ner);
        report.qa = Some(qa);
    }
    report.fallbacks = fallbacks;
    write_json(&cfg.out_file(REPORT_FILE), &report)?;
    Ok(report)
}

/// ingest, extract, compose, evaluate.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let ingested = ingest(cfg)?;
    let extracted = extract(cfg, &ingested.posts)?;
    let composed = compose(cfg, &extracted.aspects)?;
    evaluate(
        cfg,
        &composed,
        &ingested.links,
        Some(&extracted.aspects),
        extracted.fallbacks,
    )
}

// Stage entry points that pick up the previous stage's files.

pub fn run_extract_stage(cfg: &PipelineConfig) -> Result<Extracted> {
    let posts: Vec<ExploitPost> = read_jsonl(&cfg.out_file(POSTS_FILE))?;
    extract(cfg, &posts)
}

pub fn run_compose_stage(cfg: &PipelineConfig) -> Result<Vec<ComposedRecord>> {
    let aspects: Vec<PostAspects> = read_jsonl(&cfg.out_file(ASPECTS_FILE))?;
    compose(cfg, &aspects)
}

pub fn run_evaluate_stage(cfg: &PipelineConfig) -> Result<EvalReport> {
    let composed: Vec<ComposedRecord> = read_jsonl(&cfg.out_file(COMPOSED_FILE))?;
    let links: Vec<ExploitCveLink> = read_jsonl(&cfg.out_file(LINKS_FILE))?;
    let aspects_path = cfg.out_file(ASPECTS_FILE);
    let aspects: Option<Vec<PostAspects>> = if aspects_path.exists() {
        Some(read_jsonl(&aspects_path)?)
    } else {
        None
    };
    let fallbacks_path = cfg.out_file(FALLBACKS_FILE);
    let fallbacks = if fallbacks_path.exists() {
        read_jsonl(&fallbacks_path)?
    } else {
        Vec::new()
    };
    evaluate(cfg, &composed, &links, aspects.as_deref(), fallbacks)
}

/// Timing, missing-CVE and severity tables; writes `stats.json` and, with
/// `csv`, `gaps.csv`.
pub fn run_stats(cfg: &PipelineConfig, csv: bool) -> Result<StudyReport> {
    cfg.validate()?;
    let posts = load_posts(&cfg.posts)?;
    let cves = load_cves(cfg.cves.as_deref())?;
    let links = corpus::link_exploits_to_cves(&posts, &cves);
    let as_of = cfg
        .as_of
        .or_else(|| posts.iter().filter_map(|p| p.published).max())
        .unwrap_or_default();
    let report = study::study_report(&posts, &cves, &links, as_of);
    write_json(&cfg.out_file(STATS_FILE), &report)?;
    if csv {
        let path = cfg.out_file("gaps.csv");
        let file = File::create(&path).map_err(|e| Error::file(&path, e))?;
        report.gaps.write_csv(BufWriter::new(file))?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledItem {
    pub edb_id: u64,
    pub aspect: AspectKind,
}

/// Reproducible sample of (post, aspect) instances for manual review,
/// drawn from `aspects.jsonl`; written to `sample.jsonl`.
pub fn run_sample(cfg: &PipelineConfig, n: usize) -> Result<Vec<SampledItem>> {
    let aspects: Vec<PostAspects> = read_jsonl(&cfg.out_file(ASPECTS_FILE))?;
    let items: Vec<SampledItem> = aspects
        .iter()
        .flat_map(|a| {
            AspectKind::ALL
                .into_iter()
                .filter(|k| a.aspects.has(*k))
                .map(|aspect| SampledItem {
                    edb_id: a.edb_id,
                    aspect,
                })
        })
        .collect();
    let sample = evaluate::draw_sample(&items, n, cfg.seed)?;
    write_jsonl(&cfg.out_file("sample.jsonl"), &sample)?;
    Ok(sample)
}
