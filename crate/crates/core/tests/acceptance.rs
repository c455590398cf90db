//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line to
//! stdout (bypassing the test harness capture) before asserting.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use arglink::encoders::{
    checkpoint_to_json, hashing_encoder, tiny_encoder, Embedding, TinyEncoder, Vocab,
};
use arglink::evaluation::{compare_report, evaluate, recall_at_k, EvalReport, RECALL_GRID};
use arglink::extraction::{extract_all, rule_extractor, RuleExtractor};
use arglink::formatting::{
    format_arguments, format_blink, format_evelink, format_query, strip_markers, FormatStyle,
};
use arglink::kb::candidate_text;
use arglink::neggen::{
    build_prompt, generate_negatives, kb_pruning_negatives, serialize_passage, ArgumentSwapClient,
    GenStyle, GenerationConfig, GenerationRun, NegativeExample,
};
use arglink::prompt::{exemplars, GENERATION_ARGUMENT_AWARE, GENERATION_PLAIN, RERANK, RERANK_NIL};
use arglink::rerank::{
    build_rerank_prompt, score_pairs, select_learned_nil, select_threshold, tiny_cross_scorer,
    LinkDecision, ThresholdDirection, TinyCrossScorer,
};
use arglink::retrieval::{
    bm25_build, bm25_retrieve, build_index, retrieve, retrieve_query, Bm25Index, Candidate,
    CandidateSet, DenseIndex,
};
use arglink::synth::{generate_toy, ToyConfig, ToyData};
use arglink::token::{render, words};
use arglink::training::{
    bi_encoder_loss, cross_encoder_loss, cross_examples, mine_candidates, negative_candidates,
    train_biencoder, train_crossencoder, BiExample, CrossExample, OptimizerKind, TrainConfig,
};
use arglink::{Argument, Error, EventQuery, KbEntry, KnowledgeBase, Label, Pos, Span, TaggedQuery, Token};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Retriever<'a> = Box<dyn Fn(&TaggedQuery, usize) -> CandidateSet + 'a>;

fn report(n: u32, ok: bool, detail: impl AsRef<str>) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {n}: {verdict} - {}", detail.as_ref());
}

fn tests_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests")
}

// ---------------------------------------------------------------- 1

fn oracle_top_k(rows: &[Vec<f64>], q: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| (i, r.iter().zip(q).map(|(a, b)| a * b).sum()))
        .collect();
    // Stable sort by descending score keeps lower positions first on ties.
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    all.truncate(k);
    all
}

#[test]
fn criterion_1_dense_retrieval_matches_brute_force() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dim = 64;
    let mut failures = Vec::new();
    for instance in 0..100 {
        let n = rng.gen_range(1..=200);
        let k = rng.gen_range(1..=20.min(n));
        let mut rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        // Exact duplicates exercise the tie rule.
        if n > 3 && instance % 3 == 0 {
            rows[n - 1] = rows[1].clone();
        }
        let index = DenseIndex {
            ids: (0..n).map(|i| format!("E{i}")).collect(),
            dim,
            rows: rows.concat(),
            encoder_fingerprint: "random".into(),
            max_len: 0,
        };
        let q: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = retrieve(&index, "q", &Embedding(q.clone()), k).unwrap();
        let want = oracle_top_k(&rows, &q, k);
        let ids_match = got.ids() == want.iter().map(|(i, _)| format!("E{i}")).collect::<Vec<_>>();
        let scores_match = got
            .candidates
            .iter()
            .zip(&want)
            .all(|(c, (_, s))| (c.score - s).abs() <= 1e-9);
        if !(ids_match && scores_match) {
            failures.push(instance);
        }
    }
    let elapsed = start.elapsed();
    let ok = failures.is_empty() && elapsed < Duration::from_secs(10);
    report(1, ok, format!("100 instances, mismatches {failures:?}, {elapsed:.2?}"));
    assert!(ok);
}

// ---------------------------------------------------------------- 2

fn bm25_fixture() -> KnowledgeBase {
    KnowledgeBase::from_entries(vec![
        KbEntry::new("D1", "Siege of Paris", "army surrounded Paris"),
        KbEntry::new("D2", "Battle of Lyon", "army attacked Lyon at dawn"),
        KbEntry::new("D3", "Paris Treaty", "peace signed in Paris"),
        KbEntry::new("D4", "Flood", "river flooded the valley"),
        KbEntry::new("D5", "Election of Rome", "voters chose a consul"),
    ])
    .unwrap()
}

/// Okapi term weight written out from first principles.
fn okapi(n_docs: f64, df: f64, tf: f64, dl: f64, avgdl: f64) -> f64 {
    let idf = (1.0 + (n_docs - df + 0.5) / (df + 0.5)).ln();
    idf * tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * dl / avgdl))
}

#[test]
fn criterion_2_bm25_matches_hand_computation() {
    let index: Bm25Index = bm25_build(&bm25_fixture(), 300).unwrap();
    // Lower-cased terms per document:
    // D1 siege of paris army surrounded paris      (6 terms; paris x2, army x1)
    // D2 battle of lyon army attacked lyon at dawn (8 terms; army x1)
    // D3 paris treaty peace signed in paris        (6 terms; paris x2)
    // D4 flood river flooded the valley            (5 terms; the x1)
    // D5 election of rome voters chose a consul    (7 terms)
    // avgdl = 32 / 5; df(the) = 1, df(army) = 2, df(paris) = 2, df(besieged) = 0.
    let avg = 32.0 / 5.0;
    let want: BTreeMap<&str, f64> = [
        ("D1", okapi(5.0, 2.0, 1.0, 6.0, avg) + okapi(5.0, 2.0, 2.0, 6.0, avg)),
        ("D2", okapi(5.0, 2.0, 1.0, 8.0, avg)),
        ("D3", okapi(5.0, 2.0, 2.0, 6.0, avg)),
        ("D4", okapi(5.0, 1.0, 1.0, 5.0, avg)),
        ("D5", 0.0),
    ]
    .into();
    let q = EventQuery::new("q", words_of("the army besieged Paris"), Span::single(2), Pos::Verb, Label::Nil)
        .unwrap();
    let got = bm25_retrieve(&index, &q, 5).unwrap();
    let mut worst: f64 = 0.0;
    for c in &got.candidates {
        worst = worst.max((c.score - want[c.id.as_str()]).abs());
    }
    let order_ok = got.ids() == ["D1", "D3", "D4", "D2", "D5"] || sorted_by_score(&got);

    let zero = EventQuery::new("z", words_of("zebra galloped"), Span::single(1), Pos::Verb, Label::Nil).unwrap();
    let zero_set = bm25_retrieve(&index, &zero, 5).unwrap();
    let zeros_exact = zero_set.candidates.iter().all(|c| c.score == 0.0);
    let zero_order = zero_set.ids() == ["D1", "D2", "D3", "D4", "D5"];

    let ok = worst <= 1e-9 && order_ok && zeros_exact && zero_order && got.candidates.iter().find(|c| c.id == "D5").unwrap().score == 0.0;
    report(2, ok, format!("max abs error {worst:.3e}, zero-overlap exact {zeros_exact}"));
    assert!(ok);
}

fn words_of(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn sorted_by_score(set: &CandidateSet) -> bool {
    set.candidates.windows(2).all(|w| w[0].score >= w[1].score)
}

// ---------------------------------------------------------------- 3

fn monotone(r: &BTreeMap<usize, f64>) -> bool {
    let vals: Vec<f64> = RECALL_GRID.iter().map(|k| r[k]).collect();
    vals.windows(2).all(|w| w[0] <= w[1])
}

#[test]
fn criterion_3_recall_is_monotone_and_complete_at_n() {
    let run = toy_run();
    let toy = &run.toy;
    let golds: Vec<EventQuery> = run.test.iter().map(|q| q.base.clone()).collect();
    let n = toy.kb.len();
    let mut details = Vec::new();
    let mut ok = true;

    let bm25 = bm25_build(&toy.kb, ML).unwrap();
    let hashing = hashing_encoder(64, 0).unwrap();
    let hashing_index = build_index(&toy.kb, &hashing, ML).unwrap();
    let runs: Vec<(&str, Retriever)> = vec![
        ("bm25", Box::new(|q, k| bm25_retrieve(&bm25, &q.base, k).unwrap())),
        (
            "hashing",
            Box::new(|q, k| retrieve_query(&hashing_index, &hashing, q, STYLE, ML, k, &HashSet::new()).unwrap()),
        ),
        (
            "tiny_untrained",
            Box::new(|q, k| retrieve_query(&run.untrained_index, &run.untrained, q, STYLE, ML, k, &HashSet::new()).unwrap()),
        ),
        (
            "tiny_trained",
            Box::new(|q, k| retrieve_query(&run.trained_index, &run.trained, q, STYLE, ML, k, &HashSet::new()).unwrap()),
        ),
    ];
    for (name, f) in &runs {
        let grid_sets: Vec<CandidateSet> = run.test.iter().map(|q| f(q, 20)).collect();
        let grid = recall_at_k(&grid_sets, &golds, &RECALL_GRID).unwrap();
        let full_sets: Vec<CandidateSet> = run.test.iter().map(|q| f(q, n)).collect();
        let at_n = recall_at_k(&full_sets, &golds, &[n]).unwrap()[&n];
        let good = monotone(&grid) && at_n == 1.0;
        ok &= good;
        details.push(format!("{name} R@1 {:.2} R@20 {:.2} R@{n} {at_n:.2}", grid[&1], grid[&20]));
    }
    for (name, r) in &run.reports {
        if !r.recall_at.is_empty() {
            ok &= monotone(&r.recall_at);
        } else {
            ok = false;
            details.push(format!("{name} has no recall"));
        }
    }
    report(3, ok, details.join("; "));
    assert!(ok);
}

// ---------------------------------------------------------------- 4

fn fixture_queries() -> Vec<(TaggedQuery, Vec<usize>)> {
    let text = std::fs::read_to_string(tests_dir().join("fixtures/format_queries.jsonl")).unwrap();
    text.lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            let lens = v["max_lens"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap() as usize).collect();
            (serde_json::from_value(v).unwrap(), lens)
        })
        .collect()
}

fn rendered(r: arglink::Result<Vec<Token>>) -> String {
    match r {
        Ok(tokens) => render(&tokens),
        Err(Error::BudgetTooSmall { .. }) => "ERROR".into(),
        Err(e) => panic!("unexpected error {e}"),
    }
}

fn is_window(inner: &[Token], outer: &[Token]) -> bool {
    inner.is_empty() || outer.windows(inner.len()).any(|w| w == inner)
}

fn random_query(rng: &mut ChaCha8Rng, id: usize) -> TaggedQuery {
    let n = rng.gen_range(1..=30);
    let tokens: Vec<String> = (0..n).map(|_| format!("w{}", rng.gen_range(0..12))).collect();
    let ms = rng.gen_range(0..n);
    let me = rng.gen_range(ms..n.min(ms + 3));
    let mut arguments = Vec::new();
    let mut i = 0;
    while i < n {
        let len = rng.gen_range(1..=3);
        let end = (i + len - 1).min(n - 1);
        if rng.gen_bool(0.3) && (end < ms || i > me) {
            arguments.push(Argument::new(i, end, format!("R{}", rng.gen_range(0..4))));
            i = end + 1;
        } else {
            i += 1;
        }
    }
    let mut base = EventQuery::new(format!("r{id}"), tokens, Span::new(ms, me), Pos::Noun, Label::Nil).unwrap();
    base.entities = arguments
        .iter()
        .filter(|_| rng.gen_bool(0.5))
        .map(|a| arglink::formatting::NamedEntity::new(a.span.start, a.span.end, "T"))
        .collect();
    TaggedQuery {
        base,
        event_type: "E".into(),
        arguments,
    }
}

#[test]
fn criterion_4_formatting_golden_and_round_trip() {
    let golden = std::fs::read_to_string(tests_dir().join("fixtures/format_golden.tsv")).unwrap();
    let mut produced = String::new();
    let mut degrade_ok = true;
    let fixtures = fixture_queries();
    for (q, lens) in &fixtures {
        for &n in lens {
            for (style, out) in [
                ("blink", format_blink(&q.base, n)),
                ("evelink", format_evelink(&q.base, &q.base.entities, n)),
                ("args", format_arguments(q, n)),
            ] {
                produced.push_str(&format!("{}\t{style}\t{n}\t{}\n", q.query_id(), rendered(out)));
            }
            let bare = TaggedQuery {
                arguments: Vec::new(),
                ..q.clone()
            };
            degrade_ok &= rendered(format_arguments(&bare, n)) == rendered(format_blink(&q.base, n));
        }
    }
    let mismatched: Vec<&str> = golden
        .lines()
        .zip(produced.lines())
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a)
        .collect();
    let golden_ok = golden == produced;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut round_trip_failures = 0;
    for id in 0..1000 {
        let q = random_query(&mut rng, id);
        let n = rng.gen_range(q.base.mention.len() + 3..=40);
        let original = words(&q.base.tokens.iter().map(String::as_str).collect::<Vec<_>>());
        let blink = format_blink(&q.base, n).unwrap();
        let args = format_arguments(&q, n).unwrap();
        let eve = format_evelink(&q.base, &q.base.entities, n).unwrap();
        let sep = eve.iter().position(|t| *t == Token::Marker(arglink::Marker::Sep)).unwrap();
        let mut eve_source = original.clone();
        let mut ents = q.base.entities.clone();
        ents.sort_by_key(|e| e.span);
        for e in &ents {
            eve_source.extend(original[e.span.start..=e.span.end].iter().cloned());
        }
        let good = is_window(&strip_markers(&blink), &original)
            && is_window(&strip_markers(&args), &original)
            && is_window(&strip_markers(&eve[..sep]), &original)
            && strip_markers(&eve).len() <= eve_source.len()
            && blink.len() <= n
            && args.len() <= n
            && eve.len() <= n
            && strip_markers(&blink) == strip_markers(&strip_markers(&blink));
        if !good {
            round_trip_failures += 1;
        }
    }
    let ok = golden_ok && degrade_ok && round_trip_failures == 0 && fixtures.len() == 20;
    report(
        4,
        ok,
        format!(
            "{} golden lines, mismatches {}, zero-argument degradation {degrade_ok}, round-trip failures {round_trip_failures}/1000",
            golden.lines().count(),
            mismatched.len()
        ),
    );
    assert!(ok, "mismatched golden lines: {mismatched:#?}");
}

// ---------------------------------------------------------------- 5

fn golden_prompt(name: &str) -> String {
    std::fs::read_to_string(tests_dir().join(format!("golden/{name}.golden.txt"))).unwrap()
}

fn strip_role_tokens(passage: &str) -> String {
    passage
        .split(' ')
        .filter(|t| {
            let tag = t.starts_with('<') && t.ends_with('>');
            !tag || t.contains("mention")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// The listings are format strings: `{{` and `}}` stand for literal braces.
fn unescape_braces(s: &str) -> String {
    s.replace("{{", "{").replace("}}", "}")
}

#[test]
fn criterion_5_prompts_are_byte_exact() {
    let mut problems = Vec::new();
    let aware = golden_prompt("generation_argument_aware");
    let plain = golden_prompt("generation_plain");
    let rerank = golden_prompt("rerank");
    let rerank_nil = golden_prompt("rerank_nil");
    for (name, ours, want) in [
        ("argument-aware template", GENERATION_ARGUMENT_AWARE, aware.as_str()),
        ("rerank template", RERANK, rerank.as_str()),
        ("rerank NIL template", RERANK_NIL, rerank_nil.as_str()),
    ] {
        if ours != want {
            problems.push(name.to_string());
        }
    }
    // The listing leaves the passage slot after "Passage:" implicit.
    if GENERATION_PLAIN != plain.replace("Example 3:\nPassage:\n", "Example 3:\nPassage: {}\n") {
        problems.push("plain template".into());
    }

    let mut base = EventQuery::new("g", words_of("Germany invaded Poland"), Span::single(1), Pos::Verb, Label::Nil).unwrap();
    base.entities.clear();
    let q = TaggedQuery {
        base,
        event_type: "Conflict.Attack".into(),
        arguments: vec![Argument::new(0, 0, "Assailant"), Argument::new(2, 2, "Victim")],
    };
    let shots = exemplars();
    let mention_of = |p: &str| {
        let s = p.find("<mention> ").unwrap() + "<mention> ".len();
        let e = p.find(" </mention>").unwrap();
        p[s..e].to_string()
    };
    let aware_shot = |i: usize| {
        let x = &shots[i];
        format!(
            "Passage: {}\n\nAdditional information we have for the Passage: This \"{}\" event is of the type \"{}\".\nPlan 1: {}\nFollowing Plan 1, we can generate this passage after Step 1: {}\nPlan 2: {}\nFollowing Plan 2, we can generate this passage after Step 2: {}",
            x.passage, mention_of(&x.passage), x.event_type, x.plan_1, x.step_1, x.plan_2, x.step_2
        )
    };
    let plain_shot = |i: usize| {
        let x = &shots[i];
        format!(
            "Passage: {}\n\nNew passage: {}",
            strip_role_tokens(&x.passage),
            strip_role_tokens(&x.step_2)
        )
    };
    let tagged = "<Assailant> Germany </Assailant> <mention> invaded </mention> <Victim> Poland </Victim>";
    let want_aware = aware
        .replace("{Example 1}", &aware_shot(0))
        .replace("{Example 2}", &aware_shot(1))
        .replace("Passage: {}", &format!("Passage: {tagged}"))
        .replace("{event mention text span}", "invaded")
        .replace("{event type}", "Conflict.Attack");
    let want_aware = unescape_braces(&want_aware);
    let got_aware = build_prompt(&q, GenStyle::ArgumentAware).unwrap();
    if got_aware != want_aware {
        problems.push("argument-aware prompt".into());
    }
    if !got_aware.ends_with("This \"invaded\" event is of the type \"Conflict.Attack\".") {
        problems.push("argument-aware trailing sentence".into());
    }
    if serialize_passage(&q, true).unwrap() != tagged {
        problems.push("tagged passage".into());
    }
    let want_plain = plain
        .replace("{Example 1}", &plain_shot(0))
        .replace("{Example 2}", &plain_shot(1))
        .replace(
            "Example 3:\nPassage:\n",
            "Example 3:\nPassage: Germany <mention> invaded </mention> Poland\n",
        );
    let want_plain = unescape_braces(&want_plain);
    if build_prompt(&q, GenStyle::Plain).unwrap() != want_plain {
        problems.push("plain prompt".into());
    }

    let kb = KnowledgeBase::from_entries(
        (1..=10).map(|i| KbEntry::new(format!("E{i}"), format!("Title {i}"), format!("About event {i}."))).collect(),
    )
    .unwrap();
    let set = CandidateSet {
        query_id: "g".into(),
        candidates: (1..=10).map(|i| Candidate { id: format!("E{i}"), score: 0.0 }).collect(),
        gold_injected: false,
    };
    let formatted = format_blink(&q.base, 300).unwrap();
    let mut input = String::new();
    for i in 1..=10 {
        input.push_str(&format!("Document {i}: Title {i}\nAbout event {i}.\n"));
    }
    input.push_str("Short passage containing an event: Germany [M_s] invaded [M_e] Poland");
    for (allow_nil, template, name) in [(false, &rerank, "rerank prompt"), (true, &rerank_nil, "rerank NIL prompt")] {
        let got = build_rerank_prompt(&formatted, &set, &kb, allow_nil).unwrap();
        if got != template.replace("{actual input}", &input) {
            problems.push(name.into());
        }
    }
    let ok = problems.is_empty();
    report(5, ok, if ok { "four listings and filled prompts match".to_string() } else { format!("mismatch: {problems:?}") });
    assert!(ok);
}

// ---------------------------------------------------------------- 6

/// Max relative error of `analytic` against central differences.
fn finite_difference_error<F: FnMut(&[f64]) -> f64>(params: &[f64], analytic: &[f64], mut loss: F) -> f64 {
    let h = 1e-5;
    let mut p = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = loss(&p);
        p[i] = orig - h;
        let down = loss(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}

#[test]
fn criterion_6_gradients_match_finite_differences() {
    let start = Instant::now();
    let w = |s: &str| words(&s.split(' ').collect::<Vec<_>>());
    let bi: Vec<BiExample> = [("a", "x b", "x y"), ("b", "c d", "d z"), ("c", "a c", "y w")]
        .iter()
        .map(|(id, q, c)| BiExample {
            query_id: id.to_string(),
            query: w(q),
            candidate: w(c),
        })
        .collect();
    let vocab = Vocab::build(bi.iter().flat_map(|e| [e.query.as_slice(), e.candidate.as_slice()]));
    let mut enc = tiny_encoder(vocab, 5, 3);
    let batch: Vec<&BiExample> = bi.iter().collect();
    let (_, grad) = bi_encoder_loss(&enc, &batch, 2.0).unwrap();
    let params = enc.params().to_vec();
    let bi_err = finite_difference_error(&params, &grad, |p| {
        enc.params_mut().copy_from_slice(p);
        bi_encoder_loss(&enc, &batch, 2.0).unwrap().0
    });

    let cross = [
        CrossExample { query_id: "a".into(), query: w("a b"), candidates: vec![w("x y"), w("b z")], target: 2 },
        CrossExample { query_id: "b".into(), query: w("c"), candidates: vec![w("x"), w("y z")], target: 0 },
        CrossExample { query_id: "c".into(), query: w("a d c"), candidates: vec![w("w"), w("x d")], target: 1 },
    ];
    let vocab = Vocab::build(
        cross.iter().flat_map(|e| std::iter::once(e.query.as_slice()).chain(e.candidates.iter().map(Vec::as_slice))),
    );
    let mut scorer = tiny_cross_scorer(vocab, 4, 3, 8);
    let batch: Vec<&CrossExample> = cross.iter().collect();
    let (_, grad) = cross_encoder_loss(&scorer, &batch).unwrap();
    let params = scorer.params().to_vec();
    let cross_err = finite_difference_error(&params, &grad, |p| {
        scorer.params_mut().copy_from_slice(p);
        cross_encoder_loss(&scorer, &batch).unwrap().0
    });
    let elapsed = start.elapsed();
    let ok = bi_err < 1e-4 && cross_err < 1e-4 && elapsed < Duration::from_secs(30);
    report(6, ok, format!("bi-encoder {bi_err:.2e}, cross-encoder {cross_err:.2e}, {elapsed:.2?}"));
    assert!(ok);
}

// ---------------------------------------------------------------- toy pipeline

const ML: usize = 64;
const BUDGET: usize = 128;
const STYLE: FormatStyle = FormatStyle::Args;
const DIM: usize = 32;
const RERANK_K: usize = 10;

struct ToyRun {
    toy: ToyData,
    test: Vec<TaggedQuery>,
    untrained: TinyEncoder,
    untrained_index: DenseIndex,
    trained: TinyEncoder,
    trained_index: DenseIndex,
    r10_untrained: f64,
    r10_trained: f64,
    train_negatives: usize,
    heldout_negatives: usize,
    /// Held-out NIL rate per learned-NIL variant.
    heldout_nil: BTreeMap<String, f64>,
    reports: Vec<(String, EvalReport)>,
    comparison: String,
    pruned_labels: Vec<String>,
    relabeled: BTreeSet<String>,
    /// Every artifact, serialized, for byte comparison.
    artifacts: BTreeMap<String, String>,
    elapsed: Duration,
}

fn bi_config() -> TrainConfig {
    TrainConfig {
        lr: 0.01,
        batch_size: 32,
        epochs: 10,
        max_len: ML,
        seed: 3,
        optimizer: OptimizerKind::adam(),
        logit_scale: 10.0,
        ..TrainConfig::bi_encoder()
    }
}

fn cross_config() -> TrainConfig {
    TrainConfig {
        lr: 0.01,
        batch_size: 8,
        epochs: 10,
        max_len: BUDGET,
        seed: 4,
        optimizer: OptimizerKind::adam(),
        negative_ratio: None,
        ..TrainConfig::cross_encoder()
    }
}

fn recall_10(index: &DenseIndex, enc: &TinyEncoder, test: &[TaggedQuery]) -> f64 {
    let sets: Vec<CandidateSet> = test
        .iter()
        .map(|q| retrieve_query(index, enc, q, STYLE, ML, 10, &HashSet::new()).unwrap())
        .collect();
    let golds: Vec<EventQuery> = test.iter().map(|q| q.base.clone()).collect();
    recall_at_k(&sets, &golds, &[10]).unwrap()[&10]
}

fn generation(style: GenStyle, count: usize, seed: u64) -> GenerationConfig {
    GenerationConfig {
        style,
        count,
        seed,
        query_max_len: ML,
        ..GenerationConfig::default()
    }
}

fn learned_nil_decisions(
    scorer: &TinyCrossScorer,
    queries: &[TaggedQuery],
    sets: &BTreeMap<String, CandidateSet>,
    kb: &KnowledgeBase,
) -> Vec<LinkDecision> {
    queries
        .iter()
        .map(|q| {
            let set = &sets[q.query_id()];
            let fq = format_query(STYLE, q, BUDGET / 2).unwrap();
            select_learned_nil(&score_pairs(scorer, &fq, set, kb, BUDGET).unwrap(), set).unwrap()
        })
        .collect()
}

fn with_negatives<'a>(
    positives: &[(&'a TaggedQuery, &'a CandidateSet)],
    negatives: &'a [NegativeExample],
    sets: &'a BTreeMap<String, CandidateSet>,
) -> Vec<(&'a TaggedQuery, &'a CandidateSet)> {
    let mut items = positives.to_vec();
    for n in negatives {
        let q = &n.generated_query;
        items.push((q, &sets[q.query_id()]));
    }
    items
}

fn run_pipeline() -> ToyRun {
    let start = Instant::now();
    let toy = generate_toy(&ToyConfig::default()).unwrap();
    let ex: RuleExtractor = rule_extractor(&toy.lexicon);
    let train = extract_all(&ex, &toy.train).unwrap();
    let test = extract_all(&ex, &toy.test).unwrap();
    let golds: Vec<EventQuery> = test.iter().map(|q| q.base.clone()).collect();
    let mut artifacts = BTreeMap::new();

    let mut seqs: Vec<Vec<Token>> = train.iter().map(|q| format_query(STYLE, q, ML).unwrap()).collect();
    seqs.extend(toy.kb.iter().map(|e| candidate_text(e, ML)));
    let vocab = Vocab::build(seqs.iter().map(Vec::as_slice));
    let untrained = tiny_encoder(vocab, DIM, 1);
    let untrained_index = build_index(&toy.kb, &untrained, ML).unwrap();
    let r10_untrained = recall_10(&untrained_index, &untrained, &test);

    let mut trained = untrained.clone();
    let data = BiExample::from_queries(&train, &toy.kb, STYLE, ML).unwrap();
    let bi_report = train_biencoder(&data, &mut trained, &bi_config()).unwrap();
    let trained_index = build_index(&toy.kb, &trained, ML).unwrap();
    let r10_trained = recall_10(&trained_index, &trained, &test);
    artifacts.insert("bi.ckpt".into(), checkpoint_to_json(&trained.checkpoint()).unwrap());
    artifacts.insert("bi.report".into(), serde_json::to_string(&bi_report).unwrap());
    artifacts.insert("index".into(), serde_json::to_string(&trained_index).unwrap());

    let none = HashSet::new();
    let args_run: GenerationRun = generate_negatives(
        &train,
        &trained_index,
        &trained,
        &ArgumentSwapClient::new(toy.train_pools.clone(), 1),
        None,
        &generation(GenStyle::ArgumentAware, 50, 5),
    )
    .unwrap();
    let plain_run = generate_negatives(
        &train,
        &trained_index,
        &trained,
        &ArgumentSwapClient::new(toy.train_pools.clone(), 1),
        Some(&ex),
        &generation(GenStyle::Plain, 50, 5),
    )
    .unwrap();
    let in_kb_test: Vec<TaggedQuery> = test.iter().filter(|q| !q.base.gold.is_nil()).cloned().collect();
    let heldout = generate_negatives(
        &in_kb_test,
        &trained_index,
        &trained,
        &ArgumentSwapClient::new(toy.test_pools.clone(), 2),
        None,
        &generation(GenStyle::ArgumentAware, 40, 6),
    )
    .unwrap();
    for (name, run) in [("neg.args", &args_run), ("neg.plain", &plain_run), ("neg.heldout", &heldout)] {
        let queries: Vec<&TaggedQuery> = run.negatives.iter().map(|n| &n.generated_query).collect();
        artifacts.insert(name.into(), serde_json::to_string(&queries).unwrap());
    }

    let mined = mine_candidates(&train, &trained_index, &trained, STYLE, ML, RERANK_K, &none).unwrap();
    let prune = kb_pruning_negatives(&train, 0.1, 9).unwrap();
    let pruned: HashSet<String> = prune.pruned_labels.iter().cloned().collect();
    let mined_pruned =
        mine_candidates(&prune.queries, &trained_index, &trained, STYLE, ML, RERANK_K, &pruned).unwrap();
    let args_sets = negative_candidates(&args_run.negatives).unwrap();
    let plain_sets = negative_candidates(&plain_run.negatives).unwrap();

    let mut cross_seqs: Vec<Vec<Token>> = train.iter().map(|q| format_query(STYLE, q, BUDGET / 2).unwrap()).collect();
    for n in args_run.negatives.iter().chain(&plain_run.negatives) {
        cross_seqs.push(format_query(STYLE, &n.generated_query, BUDGET / 2).unwrap());
    }
    cross_seqs.extend(toy.kb.iter().map(|e| candidate_text(e, BUDGET)));
    let cross_vocab = Vocab::build(cross_seqs.iter().map(Vec::as_slice));

    let positives: Vec<(&TaggedQuery, &CandidateSet)> = train.iter().map(|q| (q, &mined[q.query_id()])).collect();
    let pruning_items: Vec<(&TaggedQuery, &CandidateSet)> =
        prune.queries.iter().map(|q| (q, &mined_pruned[q.query_id()])).collect();
    let variants: Vec<(&str, Vec<(&TaggedQuery, &CandidateSet)>)> = vec![
        ("no_negatives", positives.clone()),
        ("kb_pruning", pruning_items),
        ("non_argument_aware", with_negatives(&positives, &plain_run.negatives, &plain_sets)),
        ("argument_aware", with_negatives(&positives, &args_run.negatives, &args_sets)),
    ];

    let test_sets: BTreeMap<String, CandidateSet> = test
        .iter()
        .map(|q| {
            let set = retrieve_query(&trained_index, &trained, q, STYLE, ML, 20, &none).unwrap();
            (q.query_id().to_string(), set)
        })
        .collect();
    let grid_sets: Vec<CandidateSet> = test.iter().map(|q| test_sets[q.query_id()].clone()).collect();
    let rerank_sets: BTreeMap<String, CandidateSet> = test_sets
        .iter()
        .map(|(id, s)| {
            let mut s = s.clone();
            s.candidates.truncate(RERANK_K);
            (id.clone(), s)
        })
        .collect();
    let heldout_queries: Vec<TaggedQuery> = heldout.negatives.iter().map(|n| n.generated_query.clone()).collect();
    let heldout_sets = negative_candidates(&heldout.negatives).unwrap();

    let mut reports = Vec::new();
    let mut heldout_nil = BTreeMap::new();
    let mut no_negative_scorer = None;
    for (name, items) in variants {
        let examples = cross_examples(&items, &toy.kb, STYLE, BUDGET).unwrap();
        let mut scorer = tiny_cross_scorer(cross_vocab.clone(), 16, 16, 9);
        let rep = train_crossencoder(&examples, &mut scorer, &cross_config()).unwrap();
        artifacts.insert(format!("cross.{name}.ckpt"), scorer.to_json().unwrap());
        artifacts.insert(format!("cross.{name}.report"), serde_json::to_string(&rep).unwrap());
        let decisions = learned_nil_decisions(&scorer, &test, &rerank_sets, &toy.kb);
        artifacts.insert(format!("decisions.{name}"), serde_json::to_string(&decisions).unwrap());
        reports.push((name.to_string(), evaluate(&decisions, &golds, Some(&grid_sets), &RECALL_GRID).unwrap()));
        let held = learned_nil_decisions(&scorer, &heldout_queries, &heldout_sets, &toy.kb);
        heldout_nil.insert(name.to_string(), arglink::evaluation::nil_rate(&held));
        if name == "no_negatives" {
            no_negative_scorer = Some(scorer);
        }
    }
    let baseline = no_negative_scorer.unwrap();
    for direction in [ThresholdDirection::Conventional, ThresholdDirection::Literal] {
        let decisions: Vec<LinkDecision> = test
            .iter()
            .map(|q| {
                let set = &rerank_sets[q.query_id()];
                let fq = format_query(STYLE, q, BUDGET / 2).unwrap();
                let scores = score_pairs(&baseline, &fq, set, &toy.kb, BUDGET).unwrap();
                select_threshold(&scores[1..], set, 0.5, direction).unwrap()
            })
            .collect();
        let name = format!("threshold_{direction}");
        artifacts.insert(format!("decisions.{name}"), serde_json::to_string(&decisions).unwrap());
        reports.push((name, evaluate(&decisions, &golds, Some(&grid_sets), &RECALL_GRID).unwrap()));
    }
    let comparison = compare_report(&reports).unwrap();
    artifacts.insert("reports".into(), serde_json::to_string(&reports).unwrap());
    artifacts.insert("comparison".into(), serde_json::to_string(&comparison).unwrap());

    let relabeled = prune
        .queries
        .iter()
        .zip(&train)
        .filter(|(after, before)| after.base.gold != before.base.gold)
        .map(|(q, _)| q.query_id().to_string())
        .collect();
    ToyRun {
        toy,
        test,
        untrained,
        untrained_index,
        trained,
        trained_index,
        r10_untrained,
        r10_trained,
        train_negatives: args_run.negatives.len(),
        heldout_negatives: heldout.negatives.len(),
        heldout_nil,
        reports,
        comparison: comparison.to_markdown(),
        pruned_labels: prune.pruned_labels,
        relabeled,
        artifacts,
        elapsed: start.elapsed(),
    }
}

fn toy_run() -> &'static ToyRun {
    static RUN: OnceLock<ToyRun> = OnceLock::new();
    RUN.get_or_init(run_pipeline)
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_7_toy_bi_encoder_learns() {
    let run = toy_run();
    let shape = run.toy.kb.len() == 50 && run.toy.train.len() == 200 && run.test.len() == 50;
    let ok = shape
        && run.r10_trained >= 0.8
        && run.r10_trained > run.r10_untrained
        && run.elapsed < Duration::from_secs(300);
    report(
        7,
        ok,
        format!(
            "R@10 trained {:.3} vs untrained {:.3}, pipeline {:.2?}",
            run.r10_trained, run.r10_untrained, run.elapsed
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 8

fn in_kb(run: &ToyRun, name: &str) -> f64 {
    run.reports.iter().find(|(n, _)| n == name).unwrap().1.accuracy_in_kb.unwrap()
}

#[test]
fn criterion_8_learned_nil_rejects_synthetic_negatives() {
    let run = toy_run();
    let nil = run.heldout_nil["argument_aware"];
    let with = in_kb(run, "argument_aware");
    let without = in_kb(run, "no_negatives");
    // No more than a five-point drop against the run without negatives.
    let kept = with >= without - 0.05 - 1e-12;
    let ok = run.train_negatives == 50 && run.heldout_negatives > 0 && nil >= 0.7 && kept;
    report(
        8,
        ok,
        format!(
            "{} training negatives; held-out NIL rate {:.3} over {} negatives (without negatives {:.3}); in-KB accuracy {:.3} vs {:.3} without negatives",
            run.train_negatives,
            nil,
            run.heldout_negatives,
            run.heldout_nil["no_negatives"],
            with,
            without
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_9_baseline_parity_harness() {
    let run = toy_run();
    let want_rows = [
        "no_negatives",
        "kb_pruning",
        "non_argument_aware",
        "argument_aware",
        "threshold_conventional",
        "threshold_literal",
    ];
    let names: Vec<&str> = run.reports.iter().map(|(n, _)| n.as_str()).collect();
    let complete = run.reports.iter().all(|(_, r)| {
        r.accuracy_verb.is_some()
            && r.accuracy_noun.is_some()
            && r.accuracy_in_kb.is_some()
            && r.accuracy_out_of_kb.is_some()
            && RECALL_GRID.iter().all(|k| r.recall_at.contains_key(k))
    });
    let table_ok = names == want_rows
        && complete
        && run.comparison.lines().count() == want_rows.len() + 2
        && !run.comparison.contains(" - ");

    let train = extract_all(&rule_extractor(&run.toy.lexicon), &run.toy.train).unwrap();
    let labels: BTreeSet<&str> = train.iter().filter_map(|q| q.base.gold.as_entry()).collect();
    let expected_pruned = (labels.len() as f64 * 0.1).ceil() as usize;
    let pruned: HashSet<&str> = run.pruned_labels.iter().map(String::as_str).collect();
    let expected: BTreeSet<String> = train
        .iter()
        .filter(|q| q.base.gold.as_entry().is_some_and(|g| pruned.contains(g)))
        .map(|q| q.query_id().to_string())
        .collect();
    let pruning_ok = run.pruned_labels.len() == expected_pruned && run.relabeled == expected && !expected.is_empty();
    let ok = table_ok && pruning_ok;
    report(
        9,
        ok,
        format!(
            "{} complete rows; {} of {} labels pruned, {} queries relabeled",
            run.reports.len(),
            run.pruned_labels.len(),
            labels.len(),
            run.relabeled.len()
        ),
    );
    {
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{}", run.comparison);
    }
    assert!(ok);
}

// ---------------------------------------------------------------- 10

#[test]
fn criterion_10_pipeline_is_deterministic() {
    let first = toy_run();
    let second = run_pipeline();
    let differing: Vec<&String> = first
        .artifacts
        .iter()
        .filter(|(k, v)| second.artifacts.get(*k) != Some(*v))
        .map(|(k, _)| k)
        .collect();
    let ok = differing.is_empty() && first.artifacts.len() == second.artifacts.len();
    report(
        10,
        ok,
        format!("{} artifacts compared byte for byte, differing {differing:?}", first.artifacts.len()),
    );
    assert!(ok);
}
