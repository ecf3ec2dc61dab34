//! Client side of the model-server protocol, against fake servers running
//! in threads over pipes or loopback TCP.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::Path;
use std::thread;

use exploit2cve::backend::{
    byte_to_char_offset, char_to_byte_offset, Backend, BackendSpec, ExternalBackend, WireRequest,
    WireResponse,
};
use exploit2cve::corpus::parse_exploit_post;
use exploit2cve::ner::{extract_entities, BioTag};
use exploit2cve::pipeline::{
    read_jsonl, run_pipeline, ComposedRecord, PipelineConfig, COMPOSED_FILE,
};
use exploit2cve::qa::{answer_aspect, Question};
use exploit2cve::Error;

type Handler = fn(&WireRequest) -> WireResponse;

/// All-O tagger that never finds an answer.
fn trivial_model(req: &WireRequest) -> WireResponse {
    let mut resp = WireResponse {
        id: req.id,
        ..Default::default()
    };
    match req.task.as_str() {
        "hello" => {
            resp.protocol = Some(1);
            resp.tasks = Some(vec!["ner".into(), "qa".into()]);
        }
        "ner" => resp.tags = Some(vec!["O".into(); req.tokens.as_ref().map_or(0, Vec::len)]),
        "qa" => resp.found = Some(false),
        other => resp.error = Some(format!("unknown task {other}")),
    }
    resp
}

fn serve(reader: impl BufRead, mut writer: impl Write, handler: Handler) {
    for line in reader.lines() {
        let Ok(line) = line else { return };
        let resp = match serde_json::from_str::<WireRequest>(&line) {
            Ok(req) => handler(&req),
            Err(e) => WireResponse {
                id: -1,
                error: Some(e.to_string()),
                ..Default::default()
            },
        };
        let out = serde_json::to_string(&resp).unwrap();
        if writeln!(writer, "{out}")
            .and_then(|_| writer.flush())
            .is_err()
        {
            return;
        }
    }
}

fn piped(handler: Handler) -> exploit2cve::Result<ExternalBackend> {
    let (to_server_r, to_server_w) = std::io::pipe().unwrap();
    let (to_client_r, to_client_w) = std::io::pipe().unwrap();
    thread::spawn(move || serve(BufReader::new(to_server_r), to_client_w, handler));
    ExternalBackend::from_streams(BufReader::new(to_client_r), to_server_w)
}

/// Loopback server accepting any number of connections.
fn tcp_server(handler: Handler) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("tcp://{}", listener.local_addr().unwrap());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { return };
            thread::spawn(move || {
                let reader = BufReader::new(stream.try_clone().unwrap());
                serve(reader, stream, handler)
            });
        }
    });
    addr
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

#[test]
fn handshake_lists_tasks() {
    let ext = piped(trivial_model).unwrap();
    assert!(ext.supports("ner"));
    assert!(ext.supports("qa"));
    assert!(!ext.supports("summarize"));
}

#[test]
fn handshake_rejects_other_protocol_versions() {
    fn v2(req: &WireRequest) -> WireResponse {
        WireResponse {
            id: req.id,
            protocol: Some(2),
            ..Default::default()
        }
    }
    assert!(matches!(piped(v2), Err(Error::BackendUnavailable(_))));
}

#[test]
fn ner_returns_one_tag_per_token() {
    let ext = piped(trivial_model).unwrap();
    for tokens in [
        vec![],
        words("Quick Heal AntiVirus Pro 7.0.0.1"),
        words("a"),
    ] {
        let tags = ext.tag(&tokens).unwrap();
        assert_eq!(tags.len(), tokens.len());
        assert!(tags.iter().all(|t| *t == BioTag::O));
    }
}

#[test]
fn ner_length_mismatch_is_a_protocol_error() {
    fn short(req: &WireRequest) -> WireResponse {
        let mut resp = trivial_model(req);
        if let Some(tags) = resp.tags.as_mut() {
            tags.pop();
        }
        resp
    }
    let ext = piped(short).unwrap();
    assert!(matches!(
        ext.tag(&words("one two")),
        Err(Error::Protocol(_))
    ));
}

#[test]
fn ner_rejects_unknown_labels() {
    fn odd(req: &WireRequest) -> WireResponse {
        let mut resp = trivial_model(req);
        if let Some(tags) = resp.tags.as_mut() {
            tags.iter_mut().for_each(|t| *t = "B-Person".into());
        }
        resp
    }
    let ext = piped(odd).unwrap();
    assert!(ext.tag(&words("Alice")).is_err());
}

#[test]
fn qa_no_answer_is_none() {
    let ext = piped(trivial_model).unwrap();
    for q in Question::ALL {
        assert_eq!(
            ext.answer(q.text(), "The parser crashes on long input.")
                .unwrap(),
            None
        );
    }
}

#[test]
fn qa_character_offsets_become_byte_offsets() {
    /// Finds "naïve parser" and reports character offsets.
    fn finder(req: &WireRequest) -> WireResponse {
        let mut resp = trivial_model(req);
        if req.task == "qa" {
            let passage = req.passage.as_deref().unwrap();
            let byte = passage.find("naïve parser").unwrap();
            let start = passage[..byte].chars().count();
            resp.found = Some(true);
            resp.start = Some(start);
            resp.end = Some(start + "naïve parser".chars().count());
        }
        resp
    }
    let ext = piped(finder).unwrap();
    let passage = "Überlauf im naïve parser führt zum Absturz.";
    let (s, e) = ext.answer("what is root cause?", passage).unwrap().unwrap();
    assert_eq!(&passage[s..e], "naïve parser");
    assert_eq!(
        char_to_byte_offset(passage, byte_to_char_offset(passage, s)),
        Some(s)
    );
}

#[test]
fn qa_out_of_range_offsets_are_rejected() {
    fn wild(req: &WireRequest) -> WireResponse {
        let mut resp = trivial_model(req);
        if req.task == "qa" {
            resp.found = Some(true);
            resp.start = Some(3);
            resp.end = Some(10_000);
        }
        resp
    }
    let ext = piped(wild).unwrap();
    assert!(matches!(
        ext.answer("what is impact?", "short"),
        Err(Error::Protocol(_))
    ));
}

#[test]
fn error_responses_surface_as_protocol_errors() {
    fn failing(req: &WireRequest) -> WireResponse {
        let mut resp = trivial_model(req);
        if req.task == "qa" {
            resp.found = None;
            resp.error = Some("model exploded".into());
        }
        resp
    }
    let ext = piped(failing).unwrap();
    let err = ext.answer("what is impact?", "text").unwrap_err();
    assert!(
        matches!(err, Error::Protocol(ref m) if m.contains("model exploded")),
        "{err}"
    );
}

#[test]
fn stale_replies_are_skipped() {
    // a server that sends an unrelated reply before each real one
    let (to_server_r, to_server_w) = std::io::pipe().unwrap();
    let (to_client_r, mut to_client_w) = std::io::pipe().unwrap();
    thread::spawn(move || {
        for line in BufReader::new(to_server_r).lines() {
            let req: WireRequest = serde_json::from_str(&line.unwrap()).unwrap();
            let stale = WireResponse {
                id: req.id + 1000,
                found: Some(true),
                ..Default::default()
            };
            writeln!(to_client_w, "{}", serde_json::to_string(&stale).unwrap()).unwrap();
            writeln!(to_client_w).unwrap();
            writeln!(
                to_client_w,
                "{}",
                serde_json::to_string(&trivial_model(&req)).unwrap()
            )
            .unwrap();
        }
    });
    let ext = ExternalBackend::from_streams(BufReader::new(to_client_r), to_server_w).unwrap();
    assert_eq!(ext.answer("what is impact?", "x").unwrap(), None);
}

#[test]
fn closed_connection_is_unavailable() {
    let (to_server_r, to_server_w) = std::io::pipe().unwrap();
    let (to_client_r, mut to_client_w) = std::io::pipe().unwrap();
    thread::spawn(move || {
        let mut line = String::new();
        BufReader::new(to_server_r).read_line(&mut line).unwrap();
        let req: WireRequest = serde_json::from_str(&line).unwrap();
        writeln!(
            to_client_w,
            "{}",
            serde_json::to_string(&trivial_model(&req)).unwrap()
        )
        .unwrap();
        // both ends drop here
    });
    let ext = ExternalBackend::from_streams(BufReader::new(to_client_r), to_server_w).unwrap();
    assert!(matches!(
        ext.tag(&words("a b")),
        Err(Error::BackendUnavailable(_))
    ));
}

#[test]
fn missing_server_is_unavailable() {
    let spec: BackendSpec = "external:/nonexistent/model-server --port 0"
        .parse()
        .unwrap();
    assert!(matches!(
        Backend::open(&spec, "ner"),
        Err(Error::BackendUnavailable(_))
    ));
    let spec: BackendSpec = "external:tcp://127.0.0.1:1".parse().unwrap();
    assert!(matches!(
        Backend::open(&spec, "qa"),
        Err(Error::BackendUnavailable(_))
    ));
}

#[test]
fn tcp_backend_drives_extraction() {
    let addr = tcp_server(trivial_model);
    let spec: BackendSpec = format!("external:{addr}").parse().unwrap();
    let ner = Backend::open(&spec, "ner").unwrap();
    let qa = Backend::open(&spec, "qa").unwrap();
    let raw = std::fs::read_to_string(corpus().join("posts/46796.txt")).unwrap();
    let post = parse_exploit_post(46796, &raw).unwrap();
    assert!(extract_entities(&post, &ner).unwrap().is_empty());
    for q in Question::ALL {
        assert!(!answer_aspect(q, &post, &qa).unwrap().present);
    }
}

fn corpus() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus")
}

fn config(out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(corpus().join("posts"), out);
    cfg.cves = Some(corpus().join("cves.jsonl"));
    cfg.cpe = Some(corpus().join("cpe.txt"));
    cfg
}

fn composed(out: &Path) -> Vec<ComposedRecord> {
    read_jsonl(&out.join(COMPOSED_FILE)).unwrap()
}

#[test]
fn unreachable_backend_falls_back_to_rules() {
    let rule_dir = tempfile::tempdir().unwrap();
    run_pipeline(&config(rule_dir.path())).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.ner_backend = "external:tcp://127.0.0.1:1".parse().unwrap();
    let report = run_pipeline(&cfg).unwrap();
    assert_eq!(report.fallbacks.len(), 1);
    assert_eq!(report.fallbacks[0].task, "ner");
    assert_eq!(composed(dir.path()), composed(rule_dir.path()));

    cfg.no_fallback = true;
    let err = run_pipeline(&cfg).unwrap_err();
    assert!(matches!(err, Error::BackendUnavailable(_)));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn server_dying_mid_run_falls_back_per_post() {
    fn hello_then_fail(req: &WireRequest) -> WireResponse {
        match req.task.as_str() {
            "hello" => trivial_model(req),
            _ => WireResponse {
                id: req.id,
                error: Some("out of memory".into()),
                ..Default::default()
            },
        }
    }
    let rule_dir = tempfile::tempdir().unwrap();
    run_pipeline(&config(rule_dir.path())).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.qa_backend = format!("external:{}", tcp_server(hello_then_fail))
        .parse()
        .unwrap();
    let report = run_pipeline(&cfg).unwrap();
    assert!(!report.fallbacks.is_empty());
    assert!(report
        .fallbacks
        .iter()
        .all(|f| f.task == "qa" && f.edb_id.is_some()));
    assert_eq!(composed(dir.path()), composed(rule_dir.path()));
}

#[test]
fn rejected_request_lines_are_protocol_errors() {
    fn rejecting(req: &WireRequest) -> WireResponse {
        match req.task.as_str() {
            "hello" => trivial_model(req),
            _ => WireResponse {
                id: -1,
                error: Some("expected value at line 1".into()),
                ..Default::default()
            },
        }
    }
    let ext = piped(rejecting).unwrap();
    let err = ext.tag(&words("a")).unwrap_err();
    assert!(
        matches!(err, Error::Protocol(ref m) if m.contains("rejected")),
        "{err}"
    );
}
