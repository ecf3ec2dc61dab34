//! Talk to a model server over the line-delimited JSON protocol. A toy
//! server runs in a thread on loopback: it tags version-looking tokens and
//! answers the impact question with the text after "cause".
//!
//!     cargo run --example external_backend

use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::thread;

use exploit2cve::backend::{Backend, BackendSpec, WireRequest, WireResponse};
use exploit2cve::corpus::ExploitPost;
use exploit2cve::ner::extract_entities;
use exploit2cve::qa::{answer_aspect, Question};

fn reply(req: &WireRequest) -> WireResponse {
    let mut resp = WireResponse {
        id: req.id,
        ..Default::default()
    };
    match req.task.as_str() {
        "hello" => {
            resp.protocol = Some(1);
            resp.tasks = Some(vec!["ner".into(), "qa".into()]);
        }
        "ner" => {
            let tokens = req.tokens.clone().unwrap_or_default();
            let tags = tokens
                .iter()
                .map(|t| {
                    let versionish =
                        t.contains('.') && t.chars().next().is_some_and(|c| c.is_ascii_digit());
                    if versionish { "B-Version" } else { "O" }.to_string()
                })
                .collect();
            resp.tags = Some(tags);
        }
        "qa" => {
            let passage = req.passage.clone().unwrap_or_default();
            match (req.question.as_deref(), passage.find("cause ")) {
                (Some("what is impact?"), Some(at)) => {
                    let start = passage[..at + 6].chars().count();
                    let end = passage.trim_end_matches('.').chars().count();
                    resp.found = Some(true);
                    resp.start = Some(start);
                    resp.end = Some(end);
                }
                _ => resp.found = Some(false),
            }
        }
        other => resp.error = Some(format!("unknown task {other}")),
    }
    resp
}

fn main() -> exploit2cve::Result<()> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            thread::spawn(move || {
                let mut writer = stream.try_clone().unwrap();
                for line in BufReader::new(stream).lines().map_while(Result::ok) {
                    let resp = match serde_json::from_str::<WireRequest>(&line) {
                        Ok(req) => reply(&req),
                        Err(e) => WireResponse {
                            id: -1,
                            error: Some(e.to_string()),
                            ..Default::default()
                        },
                    };
                    let _ = writeln!(writer, "{}", serde_json::to_string(&resp).unwrap());
                }
            });
        }
    });

    let spec: BackendSpec = format!("external:tcp://{addr}").parse()?;
    let ner = Backend::open(&spec, "ner")?;
    let qa = Backend::open(&spec, "qa")?;

    let post = ExploitPost {
        edb_id: 1,
        title: "Überwatch Server 3.2.1 - Denial of Service".into(),
        description:
            "Sending a long header to Überwatch Server 3.2.1 can cause a crash of the worker."
                .into(),
        ..Default::default()
    };
    for span in extract_entities(&post, &ner)? {
        println!(
            "{:?} {:?} in sentence {}",
            span.kind, span.surface, span.sentence_index
        );
    }
    for q in Question::ALL {
        println!(
            "{:<24} {:?}",
            q.text(),
            answer_aspect(q, &post, &qa)?.answer()
        );
    }
    Ok(())
}
