//! End-to-end acceptance checks. Every check runs offline and prints one
//! `PASS`/`FAIL` line before asserting.

mod common;

use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wmtom::analyzer::{cosine, perplexity, rank_candidates, Embedder, EmbedderError, Trajectory};
use wmtom::gen::{self, GenSpec};
use wmtom::harness::{
    self, accuracy_hundredths, div_round_half_up, Condition, MatrixEnv, MatrixOutput, Profile,
};
use wmtom::provider::{ProviderHandle, ProviderMode};
use wmtom::story::{parse_story, Item, Question, StorySource, TemplateGrammar};
use wmtom::trigger::{TriggerDetector, TriggerLexicon, OURS};
use wmtom::world;

use common::{all_chains, naive_hits, oracle_answer};

/// Prints the verdict straight to stdout so it shows even when the test
/// harness captures output.
fn verdict(n: u32, what: &str, ok: bool, detail: &str) {
    let status = if ok { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {n}: {status} - {what} ({detail})").unwrap();
    out.flush().unwrap();
    drop(out);
    assert!(ok, "criterion {n} failed: {what}: {detail}");
}

fn scripted_env(script: &str) -> MatrixEnv {
    let handle = ProviderHandle::scripted("scripted-model", script);
    let provider = handle.connect(Path::new("unused")).unwrap();
    let mut env = MatrixEnv::default();
    env.profiles
        .insert("default".into(), Profile { handle, provider });
    env
}

fn cached_env(script: &str, mode: ProviderMode, cache: &Path) -> MatrixEnv {
    let mut handle = ProviderHandle::scripted("scripted-model", script);
    handle.mode = mode;
    let provider = handle.connect(cache).unwrap();
    let mut env = MatrixEnv::default();
    env.profiles.insert(
        "default".into(),
        Profile {
            handle,
            provider: Arc::clone(&provider),
        },
    );
    env
}

fn corpus(n: usize, seed: u64) -> Vec<Item> {
    gen::corpus(
        &GenSpec {
            seed,
            ..GenSpec::default()
        },
        n,
    )
    .0
}

fn row<'a>(out: &'a MatrixOutput, id: &str) -> &'a harness::ReportRow {
    out.report
        .rows
        .iter()
        .find(|r| r.condition_id == id)
        .unwrap()
}

#[test]
fn criterion_1_oracle_equivalence() {
    let started = Instant::now();
    let (mut checked, mut mismatches) = (0usize, Vec::new());
    for seed in 1..=1000u64 {
        let spec = GenSpec::sampled(seed);
        let (story, questions) = gen::generate(&spec);
        let snap = world::final_snapshot(&story, 4).unwrap();
        let agents: Vec<String> = snap.agents().into_iter().collect();
        let mut qs: Vec<Question> = questions;
        for object in snap.objects() {
            qs.push(Question::new(&story.id, Vec::new(), &object));
            for chain in all_chains(&agents, 2) {
                qs.push(Question::new(&story.id, chain, &object));
            }
        }
        for q in &qs {
            let engine = world::answer(&snap, q).unwrap();
            let oracle = oracle_answer(&story, &q.chain, &q.object);
            if let Some(gold) = &q.gold {
                if gold != &oracle {
                    mismatches.push(format!("seed {seed} gold {}: {gold} vs {oracle}", q.text));
                }
            }
            if engine != oracle {
                mismatches.push(format!(
                    "seed {seed} {}: engine {engine} vs oracle {oracle}",
                    q.text
                ));
            }
            checked += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let detail = format!(
        "{checked} questions, {} mismatches, {secs:.1}s",
        mismatches.len()
    );
    if let Some(m) = mismatches.first() {
        println!("first mismatch: {m}");
    }
    verdict(
        1,
        "engine agrees with brute-force oracle on 1000 stories",
        mismatches.is_empty() && secs < 60.0,
        &detail,
    );
}

#[test]
fn criterion_2_canonical_false_belief() {
    let lines = [
        "Alice entered the kitchen.",
        "Bob entered the kitchen.",
        "The apple is in the refrigerator.",
        "Alice exited the kitchen.",
        "Bob moved the apple to the basket.",
    ];
    let story = parse_story("s1", &lines, TemplateGrammar::Strict, StorySource::Tomi).unwrap();
    let snap = world::final_snapshot(&story, 2).unwrap();
    let ask = |chain: &[&str]| {
        let q = Question::new("s1", chain.iter().map(|s| s.to_string()).collect(), "apple");
        world::answer(&snap, &q).unwrap()
    };
    let got = (ask(&[]), ask(&["Alice"]), ask(&["Bob", "Alice"]));
    let want = (
        "basket".to_string(),
        "refrigerator".to_string(),
        "refrigerator".to_string(),
    );
    verdict(
        2,
        "canonical story answers",
        got == want,
        &format!("{got:?}"),
    );
}

/// Random text mixing lexicon words, near misses and filler.
fn random_text(rng: &mut ChaCha8Rng) -> String {
    const FILLER: [&str; 12] = [
        "the", "apple", "was", "moved", "so", "Alice", "thinks", "it", "is", "there", "and", "then",
    ];
    const NEAR: [&str; 10] = [
        "untricky",
        "trickyness",
        "puzzles",
        "confusedly",
        "co-confused",
        "tricky-ish",
        "ambiguously",
        "puzzle_box",
        "troubledx",
        "conflict",
    ];
    let seps = [" ", "  ", ", ", ". ", "\n", "; ", "! ", " (", ") ", "? "];
    let n = rng.gen_range(20..60);
    let mut s = String::new();
    for _ in 0..n {
        let w: String = match rng.gen_range(0..10) {
            0..=2 => OURS.choose(rng).unwrap().to_string(),
            3 => NEAR.choose(rng).unwrap().to_string(),
            4 => {
                let w = OURS.choose(rng).unwrap();
                if rng.gen_bool(0.5) {
                    w.to_uppercase()
                } else {
                    format!("{}{}", w[..1].to_uppercase(), &w[1..])
                }
            }
            _ => FILLER.choose(rng).unwrap().to_string(),
        };
        s.push_str(&w);
        s.push_str(seps.choose(rng).unwrap());
    }
    s
}

fn detect_chunks(lex: &TriggerLexicon, chunks: &[&str]) -> Vec<(usize, usize, String)> {
    let mut d = TriggerDetector::new(lex);
    let mut evs = Vec::new();
    for c in chunks {
        evs.extend(d.feed(c));
    }
    evs.extend(d.finish());
    evs.into_iter()
        .map(|e| (e.char_span.0, e.char_span.1, e.word))
        .collect()
}

#[test]
fn criterion_3_trigger_chunk_invariance() {
    let lex = TriggerLexicon::ours();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut cases, mut failures, mut expected_total) = (0usize, 0usize, 0usize);
    for _ in 0..100 {
        let text = random_text(&mut rng);
        let expected = naive_hits(&text, &OURS);
        expected_total += expected.len();
        for split in (0..=text.len()).filter(|i| text.is_char_boundary(*i)) {
            let got = detect_chunks(&lex, &[&text[..split], &text[split..]]);
            cases += 1;
            if got != expected {
                failures += 1;
            }
        }
    }
    let detail =
        format!("{cases} chunkings, {expected_total} expected hits, {failures} mismatches");
    verdict(
        3,
        "chunk-invariant whole-word detection",
        cases >= 10_000 && failures == 0,
        &detail,
    );
}

#[test]
fn criterion_4_k_cap_and_placement() {
    let items = corpus(12, 40);
    let env = scripted_env("stubborn:5");
    let mut problems = Vec::new();
    for k in [0usize, 1, 3, 5] {
        let cond = Condition::intervention("c", "ours", k);
        let out = harness::run_matrix(&items, &[cond], &env, 4).unwrap();
        for r in &out.records {
            if r.interventions.len() != k.min(5) {
                problems.push(format!(
                    "k={k} {}: {} injections",
                    r.item_id,
                    r.interventions.len()
                ));
            }
            for iv in &r.interventions {
                let (s, e) = iv.char_span;
                let framed = format!("\n{}\n", iv.injected_text);
                if !r.trajectory[s..e].eq_ignore_ascii_case(&iv.word)
                    || !r.trajectory[e..].starts_with(&framed)
                {
                    problems.push(format!(
                        "k={k} {}: block not right after `{}`",
                        r.item_id, iv.word
                    ));
                }
                let block = &iv.injected_text;
                let body_ok = block.starts_with("<information>\n")
                    && block.ends_with("\n</information>")
                    && block["<information>\n".len()..block.len() - "\n</information>".len()]
                        .lines()
                        .all(|l| {
                            let parts: Vec<&str> = l.splitn(3, " | ").collect();
                            parts.len() == 3
                                && parts[0]
                                    .strip_prefix("t=")
                                    .is_some_and(|t| t.parse::<usize>().is_ok())
                                && ["event", "objective", "belief"].contains(&parts[1])
                        });
                if !body_ok {
                    problems.push(format!("k={k} {}: malformed block", r.item_id));
                }
            }
        }
    }
    if let Some(p) = problems.first() {
        println!("first problem: {p}");
    }
    verdict(
        4,
        "min(k, triggers) injections, framed right after the trigger",
        problems.is_empty(),
        &format!("{} problems", problems.len()),
    );
}

fn record_then_replay(
    items: &[Item],
    conds: &[Condition],
    script: &str,
    cache: &Path,
) -> MatrixOutput {
    harness::run_matrix(
        items,
        conds,
        &cached_env(script, ProviderMode::Record, cache),
        4,
    )
    .unwrap();
    harness::run_matrix(
        items,
        conds,
        &cached_env(script, ProviderMode::Replay, cache),
        4,
    )
    .unwrap()
}

#[test]
fn criterion_5_token_accounting() {
    let items = corpus(300, 500);
    let conds = [
        Condition::baseline("baseline"),
        Condition::intervention("ours", "ours", 3),
    ];
    let cache = tempfile::tempdir().unwrap();
    let out = record_then_replay(&items, &conds, "guidable", cache.path());
    let dir = tempfile::tempdir().unwrap();
    out.write(dir.path()).unwrap();

    let text = std::fs::read_to_string(dir.path().join("records.jsonl")).unwrap();
    let recs: Vec<serde_json::Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let u = |v: &serde_json::Value, k: &str| v["tokens"][k].as_u64().unwrap();
    let identity = recs.iter().all(|r| {
        u(r, "total")
            == u(r, "prompt") + u(r, "generated") + u(r, "injected") + u(r, "wm_construction")
    });
    let mut means_ok = true;
    for c in &conds {
        let rs: Vec<&serde_json::Value> = recs
            .iter()
            .filter(|r| r["condition_id"] == c.id.as_str())
            .collect();
        let n = rs.len() as u64;
        let total: u64 = rs.iter().map(|r| u(r, "total")).sum();
        let correct = rs.iter().filter(|r| r["correct"] == true).count();
        let row = row(&out, &c.id);
        means_ok &= row.mean_tokens == div_round_half_up(total, n)
            && row.accuracy == accuracy_hundredths(correct, n as usize) as f64 / 100.0
            && row.n == n as usize;
    }
    let detail = format!("{} records", recs.len());
    verdict(
        5,
        "total = prompt + generated + injected + wm_construction; means recompute",
        identity && means_ok && recs.len() == 600,
        &detail,
    );
}

#[test]
fn criterion_6_directional_end_to_end() {
    let items = corpus(300, 600);
    let conds = [
        Condition::baseline("baseline"),
        Condition::intervention("ours", "ours", 3),
    ];
    let out = harness::run_matrix(&items, &conds, &scripted_env("guidable"), 4).unwrap();
    let (b, o) = (row(&out, "baseline"), row(&out, "ours"));
    let detail = format!(
        "baseline {:.2}% / {} tokens, ours {:.2}% / {} tokens",
        b.accuracy, b.mean_tokens, o.accuracy, o.mean_tokens
    );
    verdict(
        6,
        "intervention raises accuracy and lowers tokens",
        o.accuracy > b.accuracy && o.mean_tokens < b.mean_tokens,
        &detail,
    );
}

#[test]
fn criterion_7_k_sweep_saturation() {
    let items = corpus(40, 700);
    let base = Condition::intervention("ours", "ours", 3);
    let out = harness::k_sweep(
        &items,
        &base,
        &[1, 2, 3, 4, 5],
        &scripted_env("stubborn:2"),
        4,
    )
    .unwrap();
    let max_triggers = out
        .records
        .iter()
        .map(|r| r.interventions.len())
        .max()
        .unwrap();
    let key = |id: &str| {
        let r = row(&out, id);
        (r.n, r.correct, r.mean_tokens, r.delta_acc, r.delta_tokens)
    };
    let trajectories = |id: &str| -> Vec<&str> {
        out.records
            .iter()
            .filter(|r| r.condition_id == id)
            .map(|r| r.trajectory.as_str())
            .collect()
    };
    let same = (3..=5).all(|k| {
        let id = format!("k={k}");
        key(&id) == key("k=2") && trajectories(&id) == trajectories("k=2")
    });
    let detail = format!("max interventions {max_triggers}, k=2..5 rows identical: {same}");
    verdict(
        7,
        "reports saturate once k covers every trigger",
        same && max_triggers <= 2,
        &detail,
    );
}

/// Embeds text by whether it mentions "alpha" or "beta".
struct TopicEmbedder;

impl Embedder<f64> for TopicEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedderError> {
        let a = text.matches("alpha").count() as f64;
        let b = text.matches("beta").count() as f64;
        Ok(vec![a + 0.1, b + 0.1])
    }
}

#[test]
#[allow(clippy::approx_constant)] // expected values are given to four places
fn criterion_8_analyzer_math() {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let cos = cosine(&[1.0, 0.0], &[h, h]);
    let ppl = perplexity(&[-1.0f64, -2.0]).unwrap();

    let vocab: Vec<String> = (0..30).map(|i| format!("word{i:02}")).collect();
    let mut text = String::new();
    for (i, w) in vocab.iter().enumerate() {
        // Word i sits between i alphas and (30 - i) betas, so similarity
        // differs per word.
        text.push_str(&format!(
            "{} {w} {} | ",
            "alpha ".repeat(i + 1),
            "beta ".repeat(30 - i)
        ));
    }
    let trajs = [Trajectory {
        item_id: "t".into(),
        text,
        correct: true,
        token_logprobs: None,
    }];
    let exclusions: Vec<String> = vocab[..5].to_vec();
    let ranked = rank_candidates(&trajs, &vocab, 60, &TopicEmbedder, &exclusions).unwrap();
    let small = rank_candidates(&trajs, &vocab[..5], 60, &TopicEmbedder, &[]).unwrap();
    let ascending = ranked
        .windows(2)
        .all(|w| w[0].mean_context_similarity <= w[1].mean_context_similarity);
    let excluded = ranked.iter().all(|s| !exclusions.contains(&s.word));
    let ok = (cos - 0.7071).abs() < 1e-3
        && (ppl - 4.4817).abs() < 1e-3
        && ranked.len() == 20
        && small.len() == 5
        && ascending
        && excluded;
    let detail = format!(
        "cos {cos:.4}, ppl {ppl:.4}, ranked {} of 25, small {}",
        ranked.len(),
        small.len()
    );
    verdict(8, "cosine, perplexity and bottom-20 ranking", ok, &detail);
}

fn strip_wall_clock(records: &str) -> String {
    records
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("wall_ms");
            serde_json::to_string(&v).unwrap()
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn criterion_9_reproducibility() {
    let items = corpus(60, 900);
    let conds = [
        Condition::baseline("baseline"),
        Condition::intervention("pv", "pv", 3),
        Condition::intervention("be", "be", 3),
        Condition::intervention("ours", "ours", 3),
    ];
    let cache = tempfile::tempdir().unwrap();
    harness::run_matrix(
        &items,
        &conds,
        &cached_env("guidable", ProviderMode::Record, cache.path()),
        4,
    )
    .unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (i, d) in dirs.iter().enumerate() {
        // Different worker counts must not change the output.
        let env = cached_env("guidable", ProviderMode::Replay, cache.path());
        harness::run_matrix(&items, &conds, &env, 1 + 3 * i)
            .unwrap()
            .write(d.path())
            .unwrap();
    }
    let read = |d: &tempfile::TempDir, f: &str| std::fs::read_to_string(d.path().join(f)).unwrap();
    let reports_equal = read(&dirs[0], "report.json") == read(&dirs[1], "report.json");
    let records_equal = strip_wall_clock(&read(&dirs[0], "records.jsonl"))
        == strip_wall_clock(&read(&dirs[1], "records.jsonl"));
    let manifests_equal = read(&dirs[0], "manifest.json") == read(&dirs[1], "manifest.json");
    let detail =
        format!("report {reports_equal}, records {records_equal}, manifest {manifests_equal}");
    verdict(
        9,
        "replayed matrix is byte-identical",
        reports_equal && records_equal && manifests_equal,
        &detail,
    );
}
