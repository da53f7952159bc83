use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::Arc;
use std::thread;

use drift_core::config::{build_embedder, build_llm, LlmConfig, RunMode};
use drift_core::corpus::{invert_dependencies, load_library, validate_library, FormalObject, Library, ObjectKind};
use drift_core::demo::{prepare, run_demo, FIXTURES_DIR, REPORT_DIR};
use drift_core::embedding::{load_index, EmbeddingProvider, MockEmbedder, MockMode};
use drift_core::evaluate::{Averaging, EvaluateError, ItemStatus, RECORDS_FILE};
use drift_core::llm::{Clock, CompletionRequest, FakeClock, Message};
use drift_core::pipeline::{build_index, cmd_eval, cmd_index, cmd_run, object_text, PipelineError};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn random_library(rng: &mut ChaCha8Rng, n: usize) -> Library {
    let ids: Vec<String> = (0..n).map(|i| format!("Obj{i:02}")).collect();
    let objects = ids.iter().map(|id| {
        let theorem = rng.gen_bool(0.6);
        let k = rng.gen_range(0..=4);
        let mut premises: BTreeSet<String> = ids.choose_multiple(rng, k).cloned().collect();
        if rng.gen_bool(0.1) {
            premises.insert("Missing.decl".into());
        }
        FormalObject {
            id: id.clone(),
            kind: if theorem {
                ObjectKind::Theorem
            } else {
                ObjectKind::Definition
            },
            signature: format!("{} {id} : Prop", if theorem { "theorem" } else { "def" }),
            source: String::new(),
            informal: theorem.then(|| format!("statement of {id}")),
            premises,
        }
    });
    Library::from_objects("random", objects).unwrap()
}

#[test]
fn inversion_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for _ in 0..20 {
        let lib = random_library(&mut rng, 50);
        let usage = invert_dependencies(&lib);
        let mut want: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for p in lib.objects() {
            let users = want.entry(p.id.clone()).or_default();
            for t in lib.objects() {
                if t.is_theorem() && t.id != p.id && t.premises.contains(&p.id) {
                    users.insert(t.id.clone());
                }
            }
        }
        let got: BTreeMap<String, BTreeSet<String>> = usage.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        assert_eq!(got, want);
    }
}

#[test]
fn library_of_1348_objects_loads() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("con-nf.jsonl");
    let mut f = fs::File::create(&path).unwrap();
    for i in 0..1348 {
        let premises: Vec<String> = (0..i % 4)
            .map(|j| format!("ConNF.obj{}", (i + 7 * j + 1) % 1348))
            .collect();
        let rec = json!({
            "id": format!("ConNF.obj{i}"),
            "kind": if i % 3 == 0 { "definition" } else { "theorem" },
            "signature": format!("theorem ConNF.obj{i} : True"),
            "source": format!("theorem ConNF.obj{i} : True := trivial"),
            "informal": if i % 3 == 0 { None } else { Some(format!("fact {i}")) },
            "premises": premises,
        });
        writeln!(f, "{rec}").unwrap();
    }
    drop(f);
    let lib = load_library(&path).unwrap();
    assert_eq!(lib.len(), 1348);
    assert!(validate_library(&lib).is_clean());
}

#[test]
fn index_is_reproducible_and_accepts_precomputed_vectors() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let lib = random_library(&mut rng, 50);
    let mut cfg = prepare(dir.path(), RunMode::Drift, 1, false).unwrap();
    cfg.corpus = dir.path().join("random.jsonl");
    lib.write_jsonl(&cfg.corpus).unwrap();
    let embedder = build_embedder(&cfg.embedder, None).unwrap();
    let first = cmd_index(&cfg, embedder.as_ref()).unwrap();
    assert_eq!(first.count, 50);
    let second = cmd_index(&cfg, embedder.as_ref()).unwrap();
    assert_eq!(first.checksum, second.checksum);

    let mock = MockEmbedder::new(8, MockMode::Text);
    let vectors_path = dir.path().join("vectors.jsonl");
    let mut lines = String::new();
    for obj in lib.objects() {
        let v = mock.embed(&[format!("precomputed {}", obj.id)]).unwrap().remove(0);
        lines.push_str(&json!({"key": obj.id, "vector": v.as_slice()}).to_string());
        lines.push('\n');
    }
    fs::write(&vectors_path, lines).unwrap();
    let index = build_index(&lib, embedder.as_ref(), &cfg.object_template, Some(&vectors_path)).unwrap();
    assert_eq!(index.dimension(), 8);
    assert_eq!(index.provider_tag(), embedder.tag());
    let v = mock.embed(&["precomputed Obj07".to_string()]).unwrap().remove(0);
    let stored = index.get("Obj07").unwrap();
    for (a, b) in stored.iter().zip(v.as_slice()) {
        assert!((a - b).abs() < 1e-6);
    }

    fs::write(&vectors_path, "{\"key\": \"Obj00\", \"vector\": [1.0]}\n").unwrap();
    let err = build_index(&lib, embedder.as_ref(), &cfg.object_template, Some(&vectors_path)).unwrap_err();
    assert!(matches!(err, PipelineError::Embedding(_)), "{err}");
}

#[test]
fn index_embeds_the_object_template() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = prepare(dir.path(), RunMode::Drift, 1, false).unwrap();
    cfg.object_template = "{id}: {signature}".into();
    let embedder = build_embedder(&cfg.embedder, None).unwrap();
    cmd_index(&cfg, embedder.as_ref()).unwrap();
    let index = load_index(cfg.index.as_deref().unwrap()).unwrap();
    let lib = load_library(&cfg.corpus).unwrap();
    let obj = lib.get("Nat.Prime").unwrap();
    let want = embedder
        .embed(&[object_text(obj, &cfg.object_template)])
        .unwrap()
        .remove(0);
    assert_eq!(index.get("Nat.Prime").unwrap(), want.as_slice());
}

#[test]
fn unmatched_item_fails_alone() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = prepare(dir.path(), RunMode::Drift, 2, false).unwrap();
    let mut bench = fs::read_to_string(&cfg.benchmark).unwrap();
    bench.push_str(&json!({"item_id": "orphan", "informal": "A statement no script knows about."}).to_string());
    bench.push('\n');
    fs::write(&cfg.benchmark, bench).unwrap();
    let embedder = build_embedder(&cfg.embedder, None).unwrap();
    cmd_index(&cfg, embedder.as_ref()).unwrap();
    let out = cmd_run(&cfg).unwrap();
    assert_eq!(out.failed(), 1);
    assert!(!out.all_failed());
    let orphan = out.report.records.iter().find(|r| r.item_id == "orphan").unwrap();
    assert_eq!(orphan.status, ItemStatus::Failed);
    assert!(orphan.error.as_deref().unwrap().starts_with("decompose"));
    assert!(out
        .report
        .records
        .iter()
        .filter(|r| r.item_id != "orphan")
        .all(|r| r.status == ItemStatus::Ok));
}

#[test]
fn eval_reaggregates_saved_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_demo(dir.path(), RunMode::Drift, 10, false).unwrap();
    let records = dir.path().join(REPORT_DIR).join(RECORDS_FILE);
    let again = cmd_eval(&records, &[1, 10], Averaging::Macro).unwrap();
    assert_eq!(again, out.run.report.summary);
    let five = cmd_eval(&records, &[5], Averaging::Macro).unwrap();
    assert_eq!(five.typecheck[0].k, 5);
    let err = cmd_eval(&records, &[11], Averaging::Macro).unwrap_err();
    assert!(
        matches!(err, PipelineError::Evaluate(EvaluateError::RecordDeficit { k: 11, .. })),
        "{err}"
    );
    let micro = cmd_eval(&records, &[1], Averaging::Micro).unwrap();
    assert_eq!(micro.averaging, Averaging::Micro);
}

#[test]
fn demo_modes_all_run() {
    for (mode, no_illustrate) in [
        (RunMode::Monolithic, false),
        (RunMode::Oracle, false),
        (RunMode::ZeroShot, false),
        (RunMode::Parametric, false),
    ] {
        let dir = tempfile::tempdir().unwrap();
        let out = run_demo(dir.path(), mode, 2, no_illustrate).unwrap();
        assert_eq!(out.run.failed(), 0, "{mode}");
        let s = &out.run.report.summary;
        match mode {
            RunMode::Oracle => {
                assert_eq!(s.retrieval.as_ref().unwrap().recall.as_str(), "100.00");
                assert!(s.coverage.is_none());
            }
            RunMode::Monolithic => assert!(s.coverage.is_some()),
            _ => assert!(s.retrieval.is_none()),
        }
        assert!(dir.path().join(FIXTURES_DIR).join("corpus.idx").exists());
    }
}

/// Serves canned HTTP responses, one per connection, and records bodies.
fn serve(responses: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut bodies = Vec::new();
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            bodies.push(String::from_utf8(buf).unwrap());
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
        bodies
    });
    (url, handle)
}

#[test]
fn http_client_retries_rate_limits() {
    let ok = json!({"choices": [{"message": {"role": "assistant", "content": "```lean\ntheorem t : True := by sorry\n```"}}]});
    let (url, server) = serve(vec![(429, "{}".into()), (429, "{}".into()), (200, ok.to_string())]);
    let cfg: LlmConfig = toml::from_str(&format!(
        "kind = \"http\"\nendpoint = \"{url}\"\nmodel = \"m\"\nmax_retries = 3\n"
    ))
    .unwrap();
    let clock = Arc::new(FakeClock::new());
    let client = build_llm("formalizer", &cfg, None).unwrap().with_clock(clock.clone());
    let req = CompletionRequest {
        provider_tag: client.provider_tag().to_string(),
        model: "m".into(),
        messages: vec![Message::user("formalize")],
        temperature: 0.7,
        seed: 42,
        max_tokens: None,
    };
    let text = client.complete(&req).unwrap();
    assert!(text.contains("theorem t"));
    let bodies = server.join().unwrap();
    assert_eq!(bodies.len(), 3);
    let body: serde_json::Value = serde_json::from_str(&bodies[2]).unwrap();
    assert_eq!(body["seed"], 42);
    assert_eq!(body["model"], "m");
    assert_eq!(client.provider_calls(), 3);
    assert!(clock.now() > std::time::Duration::ZERO);
}

#[test]
fn http_client_gives_up_on_client_errors() {
    let (url, server) = serve(vec![(400, "{\"error\": \"bad\"}".into())]);
    let cfg: LlmConfig = toml::from_str(&format!("kind = \"http\"\nendpoint = \"{url}\"\nmodel = \"m\"\n")).unwrap();
    let client = build_llm("formalizer", &cfg, None)
        .unwrap()
        .with_clock(Arc::new(FakeClock::new()));
    let req = CompletionRequest {
        provider_tag: client.provider_tag().to_string(),
        model: "m".into(),
        messages: vec![Message::user("x")],
        temperature: 0.0,
        seed: 1,
        max_tokens: Some(10),
    };
    let err = client.complete(&req).unwrap_err();
    assert!(err.to_string().contains("400"), "{err}");
    assert_eq!(server.join().unwrap().len(), 1);
}
