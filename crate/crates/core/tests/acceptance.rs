//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use drift_core::config::RunMode;
use drift_core::demo::{run_demo, FIXTURES_DIR, REPORT_DIR};
use drift_core::embedding::{
    load_index, read_index, save_index, write_index, EmbeddingVector, IndexFileError, VectorIndex,
};
use drift_core::evaluate::{
    build_report, pass_at_k, ItemRecord, ReportMeta, ReportOptions, RetrievalScore, Verdict, VerdictStatus,
    TYPECHECK_SLOT,
};
use drift_core::formalize::FormalizationAttempt;
use drift_core::illustrate::{coverage_rate, select_greedy, Candidate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

type Outcome = Result<String, String>;

struct Criterion {
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion {
            name: "metric fidelity (table P/R -> F1)",
            budget: None,
            run: metric_fidelity,
        },
        Criterion {
            name: "greedy oracle equivalence",
            budget: Some(Duration::from_secs(10)),
            run: greedy_oracle,
        },
        Criterion {
            name: "retrieval oracle equivalence",
            budget: Some(Duration::from_secs(10)),
            run: retrieval_oracle,
        },
        Criterion {
            name: "greedy hand trace",
            budget: None,
            run: hand_trace,
        },
        Criterion {
            name: "demo determinism",
            budget: Some(Duration::from_secs(30)),
            run: determinism,
        },
        Criterion {
            name: "ablation prompt matrix",
            budget: None,
            run: ablation_matrix,
        },
        Criterion {
            name: "pass@k semantics",
            budget: None,
            run: pass_at_k_semantics,
        },
        Criterion {
            name: "index persistence",
            budget: Some(Duration::from_secs(5)),
            run: index_persistence,
        },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let mut result = (c.run)();
        let elapsed = start.elapsed();
        if let (Ok(_), Some(b)) = (&result, c.budget) {
            if elapsed > b {
                result = Err(format!("took {elapsed:.2?}, budget {b:?}"));
            }
        }
        match result {
            Ok(msg) => println!("PASS  {}: {msg} ({elapsed:.2?})", c.name),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {}: {msg} ({elapsed:.2?})", c.name);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

const TABLE: [(&str, &str, f64, f64, f64); 12] = [
    ("ProofNet", "-", 11.55, 17.03, 13.77),
    ("ProofNet", "Claude", 23.02, 34.70, 27.68),
    ("ProofNet", "GPT-4.1", 21.71, 34.46, 26.64),
    ("ProofNet", "DeepSeek", 24.38, 30.28, 27.01),
    ("MiniF2F", "-", 0.36, 4.12, 0.66),
    ("MiniF2F", "Claude", 2.08, 23.71, 3.83),
    ("MiniF2F", "GPT-4.1", 1.42, 15.46, 2.60),
    ("MiniF2F", "DeepSeek", 0.98, 9.28, 1.78),
    ("ConNF", "-", 25.12, 32.06, 28.17),
    ("ConNF", "Claude", 30.97, 41.01, 35.29),
    ("ConNF", "GPT-4.1", 31.62, 40.64, 35.56),
    ("ConNF", "DeepSeek", 34.67, 39.39, 36.88),
];

fn metric_fidelity() -> Outcome {
    let mut worst = 0.0f64;
    for (bench, row, p, r, f1) in TABLE {
        let got = RetrievalScore::from_pr(p / 100.0, r / 100.0).f1 * 100.0;
        let err = (got - f1).abs();
        if err > 0.01 {
            return Err(format!("{bench} {row}: F1 {got:.4} vs {f1}"));
        }
        worst = worst.max(err);
    }
    Ok(format!("12 rows, max |ΔF1| = {worst:.4}"))
}

fn greedy_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 1000;
    for i in 0..n {
        let inst = random_greedy_instance(&mut rng);
        check_greedy(&inst).map_err(|e| format!("instance {i}: {e}"))?;
    }
    Ok(format!("{n} instances match reference greedy and meet the 1-1/e bound"))
}

fn retrieval_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 1000;
    for i in 0..n {
        let inst = random_retrieval_instance(&mut rng);
        check_retrieval(&inst).map_err(|e| format!("instance {i}: {e}"))?;
    }
    Ok(format!("{n} instances match brute-force ranking and argmax union"))
}

fn hand_trace() -> Outcome {
    let cand = |id: &str, ps: &[&str], sim: f64| Candidate {
        theorem_id: id.into(),
        similarity: sim,
        usable_premises: ps.iter().map(|s| s.to_string()).collect(),
    };
    let cands = [
        cand("T1", &["A", "B"], 0.9),
        cand("T2", &["B"], 0.8),
        cand("T3", &["C"], 0.7),
    ];
    let premises = premise_set(&["A".into(), "B".into(), "C".into()]);
    let ill = select_greedy(&cands, &premises, 3);
    let got: Vec<(&str, Vec<&str>)> = ill
        .selected
        .iter()
        .map(|s| {
            (
                s.theorem_id.as_str(),
                s.newly_covered.iter().map(String::as_str).collect(),
            )
        })
        .collect();
    let want = vec![("T1", vec!["A", "B"]), ("T3", vec!["C"])];
    if got != want {
        return Err(format!("selected {got:?}"));
    }
    let cov = coverage_rate(&ill, &premises);
    if cov != 1.0 {
        return Err(format!("coverage {cov}"));
    }
    Ok("selected [T1 {A,B}, T3 {C}], coverage 1.0".into())
}

fn snapshot(dir: &Path, out: &mut BTreeMap<String, Vec<u8>>, prefix: &str) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = format!("{prefix}{}", entry.file_name().to_string_lossy());
        if entry.file_type()?.is_dir() {
            snapshot(&entry.path(), out, &format!("{name}/"))?;
        } else {
            out.insert(name, fs::read(entry.path())?);
        }
    }
    Ok(())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for _ in 0..2 {
        let _ = fs::remove_dir_all(dir.path().join(REPORT_DIR));
        let _ = fs::remove_file(dir.path().join(FIXTURES_DIR).join("corpus.idx"));
        let out = run_demo(dir.path(), RunMode::Drift, 10, false).map_err(|e| e.to_string())?;
        if out.run.report.summary.items != 5 {
            return Err(format!("{} items", out.run.report.summary.items));
        }
        let seeds: Vec<u64> = out.run.report.records[0].attempts.iter().map(|a| a.seed).collect();
        if seeds != (42..52).collect::<Vec<_>>() {
            return Err(format!("seeds {seeds:?}"));
        }
        let mut files = BTreeMap::new();
        snapshot(&dir.path().join(REPORT_DIR), &mut files, "").map_err(|e| e.to_string())?;
        files.insert(
            "index".into(),
            fs::read(dir.path().join(FIXTURES_DIR).join("corpus.idx")).unwrap(),
        );
        runs.push(files);
    }
    let (a, b) = (&runs[0], &runs[1]);
    if a.keys().ne(b.keys()) {
        return Err("different file sets".into());
    }
    for (name, bytes) in a {
        if b[name] != *bytes {
            return Err(format!("{name} differs"));
        }
    }
    let prompts = a.keys().filter(|k| k.starts_with("prompts/")).count();
    if prompts != 5 || !a.contains_key("records.jsonl") || !a.contains_key("summary.json") {
        return Err(format!(
            "unexpected report contents: {:?}",
            a.keys().collect::<Vec<_>>()
        ));
    }
    Ok(format!("{} files byte-identical across two runs", a.len()))
}

fn ablation_matrix() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let prompts = ablation_prompts(dir.path());
    for ((name, prompt, rec), v) in prompts.iter().zip(ablation_variants()) {
        check_sections(&v, prompt)?;
        let golden = fs::read_to_string(golden_path(name)).map_err(|e| format!("{name}: golden file: {e}"))?;
        if golden != *prompt {
            return Err(format!("{name}: prompt differs from golden file"));
        }
        let mode = rec.premises.as_ref().map(|p| p.mode);
        let want = match v.mode {
            RunMode::Drift => Some(drift_core::retrieve::RetrievalMode::Drift),
            RunMode::Monolithic => Some(drift_core::retrieve::RetrievalMode::Monolithic),
            _ => None,
        };
        if mode != want {
            return Err(format!("{name}: premise set mode {mode:?}"));
        }
    }
    Ok(format!(
        "{} variants match golden prompts and section contracts",
        prompts.len()
    ))
}

fn scripted(pattern: &str) -> Vec<VerdictStatus> {
    pattern
        .chars()
        .map(|c| match c {
            'P' => VerdictStatus::Pass,
            'F' => VerdictStatus::Fail,
            'E' => VerdictStatus::Error,
            _ => VerdictStatus::Skipped,
        })
        .collect()
}

fn record(id: usize, verdicts: &[VerdictStatus]) -> ItemRecord {
    let mut r = ItemRecord::new(format!("item{id}"), "drift");
    r.attempts = verdicts
        .iter()
        .enumerate()
        .map(|(i, s)| FormalizationAttempt {
            seed: 42 + i as u64,
            temperature: 0.7,
            raw_output: None,
            error: None,
            formal_statement: None,
            verdicts: BTreeMap::from([(TYPECHECK_SLOT.to_string(), Verdict::new(*s))]),
        })
        .collect();
    r
}

fn pass_at_k_semantics() -> Outcome {
    // Monotonicity over random lists.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let all = [
        VerdictStatus::Pass,
        VerdictStatus::Fail,
        VerdictStatus::Error,
        VerdictStatus::Skipped,
    ];
    for _ in 0..2000 {
        let n = rng.gen_range(1..=12);
        let list: Vec<VerdictStatus> = (0..n).map(|_| all[rng.gen_range(0..4)]).collect();
        let mut prev = false;
        for k in 1..=n {
            let now = pass_at_k(&list, k).map_err(|e| e.to_string())?;
            if prev && !now {
                return Err(format!("not monotone at k={k} for {list:?}"));
            }
            prev = now;
        }
    }

    // Definitional counts over scripted lists.
    let patterns = [
        "PPPPPPPPPP",
        "FPPPPPPPPP",
        "FFFFFFFFFP",
        "FFFFFFFFFF",
        "EEEEEEEEEE",
        "SSSSSSSSSS",
        "PFFFFFFFFF",
        "FEFSFEFSFE",
        "EFFFFPFFFF",
    ];
    let lists: Vec<Vec<VerdictStatus>> = patterns.iter().map(|p| scripted(p)).collect();
    let at1 = patterns.iter().filter(|p| p.starts_with('P')).count();
    let at10 = patterns.iter().filter(|p| p.contains('P')).count();
    for (k, want) in [(1, at1), (10, at10)] {
        let got = lists
            .iter()
            .map(|l| pass_at_k(l, k))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?
            .into_iter()
            .filter(|b| *b)
            .count();
        if got != want {
            return Err(format!("pass@{k}: {got} items, expected {want}"));
        }
    }
    let records: Vec<ItemRecord> = lists.iter().enumerate().map(|(i, l)| record(i, l)).collect();
    let opts = ReportOptions {
        ks: vec![1, 10],
        ..ReportOptions::default()
    };
    let report = build_report(records, ReportMeta::default(), &opts).map_err(|e| e.to_string())?;
    let rate = |c: usize| format!("{:.2}", 100.0 * c as f64 / patterns.len() as f64);
    let got: Vec<(usize, String)> = report
        .summary
        .typecheck
        .iter()
        .map(|s| (s.k, s.value.as_str().to_string()))
        .collect();
    let want = vec![(1, rate(at1)), (10, rate(at10))];
    if got != want {
        return Err(format!("summary TC@k {got:?}, expected {want:?}"));
    }
    Ok(format!(
        "monotone on 2000 random lists; TC@1 {} TC@10 {}",
        want[0].1, want[1].1
    ))
}

fn index_persistence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, dim) = (10_000, 32);
    let ids: Vec<String> = (0..n)
        .map(|i| format!("Mathlib.Obj{i:05}.{}", rng.gen::<u32>()))
        .collect();
    let vectors: Vec<EmbeddingVector> = (0..n)
        .map(|_| EmbeddingVector::new((0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap())
        .collect();
    let index = VectorIndex::build(ids, vectors, "random-32").map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("random.idx");
    save_index(&index, &path).map_err(|e| e.to_string())?;
    let loaded = load_index(&path).map_err(|e| e.to_string())?;
    if loaded.len() != n || loaded.provider_tag() != index.provider_tag() || loaded.dimension() != dim {
        return Err("header fields differ after reload".into());
    }
    for ((a_id, a), (b_id, b)) in index.entries().zip(loaded.entries()) {
        if a_id != b_id || a.iter().map(|v| v.to_bits()).ne(b.iter().map(|v| v.to_bits())) {
            return Err(format!("entry {a_id} differs after reload"));
        }
    }
    let bytes = fs::read(&path).map_err(|e| e.to_string())?;
    if write_index(&loaded) != bytes {
        return Err("re-serialized index differs from file".into());
    }

    let mut positions: BTreeSet<usize> = [0, 8, 12, bytes.len() / 2, bytes.len() - 9, bytes.len() - 1].into();
    while positions.len() < 64 {
        positions.insert(rng.gen_range(0..bytes.len()));
    }
    for &pos in &positions {
        let mut bad = bytes.clone();
        bad[pos] ^= 1 << rng.gen_range(0..8);
        match read_index(&bad) {
            Err(IndexFileError::Checksum { .. }) => {}
            other => return Err(format!("corruption at byte {pos}: {:?}", other.map(|i| i.len()))),
        }
    }
    Ok(format!(
        "{n} entries bit-exact; {} single-byte corruptions detected",
        positions.len()
    ))
}
