//! Independent reference implementations shared by the integration tests and
//! the acceptance harness.

#![allow(dead_code)]

use std::collections::BTreeSet;

use drift_core::decompose::{SubQuery, SubQuerySet};
use drift_core::embedding::{EmbeddingProvider, EmbeddingVector, MockEmbedder, MockMode, VectorIndex};
use drift_core::illustrate::{select_greedy, sort_candidates, Candidate};
use drift_core::retrieve::{retrieve_drift, PremiseSet, RetrievalMode, RetrievedPremise};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn premise_set(ids: &[String]) -> PremiseSet {
    PremiseSet {
        mode: RetrievalMode::Drift,
        premises: ids
            .iter()
            .enumerate()
            .map(|(i, id)| RetrievedPremise {
                id: id.clone(),
                score: 1.0,
                sources: vec![i],
            })
            .collect(),
    }
}

pub struct GreedyInstance {
    pub candidates: Vec<Candidate>,
    pub premises: Vec<String>,
    pub budget: usize,
}

/// Up to 12 candidates over up to 10 premises; similarities come from a
/// coarse grid so ties are frequent.
pub fn random_greedy_instance(rng: &mut ChaCha8Rng) -> GreedyInstance {
    let n_premises = rng.gen_range(1..=10);
    let premises: Vec<String> = (0..n_premises).map(|i| format!("P{i}")).collect();
    let mut names: Vec<usize> = (0..40).collect();
    names.shuffle(rng);
    let n_cands = rng.gen_range(0..=12);
    let candidates = names[..n_cands]
        .iter()
        .map(|n| {
            let size = rng.gen_range(1..=n_premises.min(5));
            let usable: BTreeSet<String> = premises.choose_multiple(rng, size).cloned().collect();
            Candidate {
                theorem_id: format!("T{n:02}"),
                similarity: rng.gen_range(0..4) as f64 / 4.0,
                usable_premises: usable,
            }
        })
        .collect();
    GreedyInstance {
        candidates,
        premises,
        budget: rng.gen_range(1..=4),
    }
}

/// Reference greedy: candidates ordered by (similarity desc, id asc); each
/// round takes the first candidate of maximal positive marginal gain.
pub fn reference_greedy(
    candidates: &[Candidate],
    premises: &BTreeSet<String>,
    budget: usize,
) -> Vec<(String, BTreeSet<String>)> {
    let mut order: Vec<&Candidate> = candidates.iter().collect();
    order.sort_by(|a, b| {
        b.similarity
            .partial_cmp(&a.similarity)
            .unwrap()
            .then(a.theorem_id.cmp(&b.theorem_id))
    });
    let mut covered = BTreeSet::new();
    let mut picks = Vec::new();
    let mut used = BTreeSet::new();
    for _ in 0..budget {
        let gains: Vec<(usize, BTreeSet<String>)> = order
            .iter()
            .enumerate()
            .filter(|(i, _)| !used.contains(i))
            .map(|(i, c)| {
                let new: BTreeSet<String> = c
                    .usable_premises
                    .iter()
                    .filter(|p| premises.contains(*p) && !covered.contains(*p))
                    .cloned()
                    .collect();
                (i, new)
            })
            .collect();
        let best = gains.iter().map(|(_, g)| g.len()).max().unwrap_or(0);
        if best == 0 {
            break;
        }
        let (i, new) = gains.into_iter().find(|(_, g)| g.len() == best).unwrap();
        used.insert(i);
        covered.extend(new.iter().cloned());
        picks.push((order[i].theorem_id.clone(), new));
    }
    picks
}

/// Best coverage achievable by any subset of at most `budget` candidates.
pub fn exhaustive_optimum(candidates: &[Candidate], premises: &BTreeSet<String>, budget: usize) -> usize {
    fn go(
        cands: &[Candidate],
        premises: &BTreeSet<String>,
        start: usize,
        left: usize,
        covered: &BTreeSet<String>,
    ) -> usize {
        let mut best = covered.len();
        if left == 0 {
            return best;
        }
        for i in start..cands.len() {
            let mut next = covered.clone();
            next.extend(
                cands[i]
                    .usable_premises
                    .iter()
                    .filter(|p| premises.contains(*p))
                    .cloned(),
            );
            best = best.max(go(cands, premises, i + 1, left - 1, &next));
        }
        best
    }
    go(candidates, premises, 0, budget, &BTreeSet::new())
}

/// Checks one greedy instance; returns a description of the first mismatch.
pub fn check_greedy(inst: &GreedyInstance) -> Result<(), String> {
    let mut sorted = inst.candidates.clone();
    sort_candidates(&mut sorted);
    let set = premise_set(&inst.premises);
    let got = select_greedy(&sorted, &set, inst.budget);
    let ids: BTreeSet<String> = inst.premises.iter().cloned().collect();
    let want = reference_greedy(&inst.candidates, &ids, inst.budget);
    let got_pairs: Vec<(String, BTreeSet<String>)> = got
        .selected
        .iter()
        .map(|s| (s.theorem_id.clone(), s.newly_covered.clone()))
        .collect();
    if got_pairs != want {
        return Err(format!("selection {got_pairs:?} != reference {want:?}"));
    }
    let opt = exhaustive_optimum(&inst.candidates, &ids, inst.budget);
    let bound = (1.0 - (-1.0f64).exp()) * opt as f64;
    if (got.covered.len() as f64) < bound - 1e-12 {
        return Err(format!("coverage {} below (1-1/e)·{opt}", got.covered.len()));
    }
    Ok(())
}

pub const SUBQUERY_TEMPLATE: &str = "{description}\nFormal: {formal}";

pub struct RetrievalInstance {
    pub embedder: MockEmbedder,
    pub ids: Vec<String>,
    pub texts: Vec<String>,
    pub index: VectorIndex,
    pub query: String,
    pub k: usize,
    pub subqueries: Vec<(String, String)>,
    pub k_per_query: usize,
}

fn pool_text(j: usize) -> (String, String) {
    (format!("concept number {j}"), format!("c{j}"))
}

fn render(d: &str, f: &str) -> String {
    format!("{d}\nFormal: {f}")
}

/// Index entries are drawn from a small text pool, so duplicate vectors (and
/// hence exact score ties) are common; ids are shuffled so that tie order is
/// not insertion order.
pub fn random_retrieval_instance(rng: &mut ChaCha8Rng) -> RetrievalInstance {
    let dimension = *[3usize, 8, 16, 32].choose(rng).unwrap();
    let embedder = MockEmbedder::new(dimension, MockMode::Text);
    let pool = rng.gen_range(2..=12);
    let n = rng.gen_range(1..=30);
    let mut names: Vec<usize> = (0..100).collect();
    names.shuffle(rng);
    let ids: Vec<String> = names[..n].iter().map(|i| format!("obj{i:03}")).collect();
    let texts: Vec<String> = (0..n)
        .map(|_| {
            let (d, f) = pool_text(rng.gen_range(0..pool));
            render(&d, &f)
        })
        .collect();
    let vectors = embedder.embed(&texts).unwrap();
    let index = VectorIndex::build(ids.clone(), vectors, embedder.tag()).unwrap();
    let pick = |rng: &mut ChaCha8Rng| pool_text(rng.gen_range(0..pool + 3));
    let (qd, qf) = pick(rng);
    let n_sq = rng.gen_range(1..=5);
    let subqueries = (0..n_sq).map(|_| pick(rng)).collect();
    RetrievalInstance {
        embedder,
        ids,
        texts,
        index,
        query: render(&qd, &qf),
        k: rng.gen_range(1..=n + 2),
        subqueries,
        k_per_query: if rng.gen_bool(0.7) { 1 } else { rng.gen_range(2..=3) },
    }
}

fn raw_cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut ab = 0.0f64;
    let mut aa = 0.0f64;
    let mut bb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        ab += x as f64 * y as f64;
        aa += x as f64 * x as f64;
        bb += y as f64 * y as f64;
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// Scores every entry against `query` and sorts by (score desc, id asc).
pub fn brute_force_ranking(inst: &RetrievalInstance, query: &str, k: usize) -> Vec<(String, f64)> {
    let q = inst.embedder.embed(&[query.to_string()]).unwrap().remove(0);
    let vs: Vec<EmbeddingVector> = inst.embedder.embed(&inst.texts).unwrap();
    let mut scored: Vec<(String, f64)> = inst
        .ids
        .iter()
        .zip(&vs)
        .map(|(id, v)| (id.clone(), raw_cosine(q.as_slice(), v.as_slice())))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// Union of per-query top hits in first-occurrence order, with the indices
/// of the queries that produced each.
pub fn brute_force_union(inst: &RetrievalInstance) -> Vec<(String, Vec<usize>)> {
    let mut out: Vec<(String, Vec<usize>)> = Vec::new();
    for (qi, (d, f)) in inst.subqueries.iter().enumerate() {
        for (id, _) in brute_force_ranking(inst, &render(d, f), inst.k_per_query) {
            match out.iter_mut().find(|(x, _)| *x == id) {
                Some((_, src)) => {
                    if !src.contains(&qi) {
                        src.push(qi);
                    }
                }
                None => out.push((id, vec![qi])),
            }
        }
    }
    out
}

const SCORE_TOL: f64 = 1e-6;

pub fn check_retrieval(inst: &RetrievalInstance) -> Result<(), String> {
    let q = inst.embedder.embed(std::slice::from_ref(&inst.query)).unwrap().remove(0);
    let hits = inst.index.search(&q, inst.k).map_err(|e| e.to_string())?;
    let want = brute_force_ranking(inst, &inst.query, inst.k);
    let got_ids: Vec<&str> = hits.iter().map(|h| h.id.as_str()).collect();
    let want_ids: Vec<&str> = want.iter().map(|(id, _)| id.as_str()).collect();
    if got_ids != want_ids {
        return Err(format!("search {got_ids:?} != brute force {want_ids:?}"));
    }
    for (h, (_, s)) in hits.iter().zip(&want) {
        if (h.score - s).abs() > SCORE_TOL {
            return Err(format!("score for {} is {} not {s}", h.id, h.score));
        }
    }

    let sqs = SubQuerySet {
        items: inst
            .subqueries
            .iter()
            .map(|(d, f)| SubQuery::new(d.clone(), f.clone()))
            .collect(),
        source_item: "item".into(),
        decomposer_tag: "test".into(),
    };
    let set = retrieve_drift(&inst.index, &inst.embedder, &sqs, SUBQUERY_TEMPLATE, inst.k_per_query)
        .map_err(|e| e.to_string())?;
    let got: Vec<(String, Vec<usize>)> = set.premises.iter().map(|p| (p.id.clone(), p.sources.clone())).collect();
    let want = brute_force_union(inst);
    if got != want {
        return Err(format!("retrieve_drift {got:?} != argmax union {want:?}"));
    }
    Ok(())
}

pub const ABLATION_ITEM: &str = "demo_coprime_powers";
pub const PREMISES_HEADER: &str = "## Relevant library objects";
pub const THEOREMS_HEADER: &str = "## Example theorems using these objects";
pub const SUBQUERIES_HEADER: &str = "## Concepts in the statement";
pub const INFORMAL_HEADER: &str = "## Informal statement";

pub struct Variant {
    pub name: &'static str,
    pub mode: drift_core::config::RunMode,
    pub no_illustrate: bool,
    /// Expected presence of premises, theorems and sub-queries.
    pub sections: [bool; 3],
}

pub fn ablation_variants() -> Vec<Variant> {
    use drift_core::config::RunMode::*;
    vec![
        Variant {
            name: "drift",
            mode: Drift,
            no_illustrate: false,
            sections: [true, true, false],
        },
        Variant {
            name: "no_illustrate",
            mode: Drift,
            no_illustrate: true,
            sections: [true, false, false],
        },
        Variant {
            name: "no_decompose",
            mode: Monolithic,
            no_illustrate: true,
            sections: [true, false, false],
        },
        Variant {
            name: "zero_shot",
            mode: ZeroShot,
            no_illustrate: false,
            sections: [false, false, false],
        },
        Variant {
            name: "parametric",
            mode: Parametric,
            no_illustrate: false,
            sections: [false, false, true],
        },
    ]
}

/// Runs the demo fixtures once per variant (one sample each) and returns the
/// formalization prompt of [`ABLATION_ITEM`] together with its record.
pub fn ablation_prompts(dir: &std::path::Path) -> Vec<(&'static str, String, drift_core::evaluate::ItemRecord)> {
    use drift_core::config::build_embedder;
    use drift_core::demo::prepare;
    use drift_core::pipeline::{cmd_index, cmd_run, prompt_file_name, PROMPTS_DIR};

    let mut out = Vec::new();
    let mut indexed = false;
    for v in ablation_variants() {
        let mut cfg = prepare(dir, v.mode, 1, v.no_illustrate).unwrap();
        cfg.output = dir.join(v.name);
        if !indexed {
            let embedder = build_embedder(&cfg.embedder, None).unwrap();
            cmd_index(&cfg, embedder.as_ref()).unwrap();
            indexed = true;
        }
        let run = cmd_run(&cfg).unwrap();
        let prompt =
            std::fs::read_to_string(cfg.output.join(PROMPTS_DIR).join(prompt_file_name(ABLATION_ITEM))).unwrap();
        let rec = run
            .report
            .records
            .into_iter()
            .find(|r| r.item_id == ABLATION_ITEM)
            .unwrap();
        out.push((v.name, prompt, rec));
    }
    out
}

/// Section presence and ordering; returns a description of the violation.
pub fn check_sections(v: &Variant, prompt: &str) -> Result<(), String> {
    let headers = [PREMISES_HEADER, THEOREMS_HEADER, SUBQUERIES_HEADER];
    for (h, want) in headers.iter().zip(v.sections) {
        if prompt.contains(h) != want {
            return Err(format!("{}: section {h:?} present = {}", v.name, !want));
        }
    }
    let pos = |h: &str| prompt.find(h);
    let informal = pos(INFORMAL_HEADER).ok_or_else(|| format!("{}: no informal statement", v.name))?;
    let order: Vec<usize> = headers.iter().filter_map(|h| pos(h)).chain([informal]).collect();
    if order.windows(2).any(|w| w[0] > w[1]) {
        return Err(format!("{}: sections out of order", v.name));
    }
    Ok(())
}

pub fn golden_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(format!("prompt_{name}.txt"))
}
