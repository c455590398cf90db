use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use arglink::encoders::{checkpoint_to_json, hashing_encoder, tiny_encoder, AnyEncoder, Vocab};
use arglink::evaluation::{compare_report, evaluate, EvalReport, RECALL_GRID};
use arglink::extraction::{extract_all, rule_extractor, ExtractorAdapter, Lexicon, NullExtractor};
use arglink::formatting::{format_query, FormatStyle};
use arglink::io::{read_jsonl, to_jsonl_string};
use arglink::kb::{candidate_text, load_kb};
use arglink::llm::{CompletionClient, ReplayClient};
use arglink::neggen::{
    generate_negatives, kb_pruning_negatives, ArgumentSwapClient, GenStyle, GenerationConfig, NegativeExample,
    Provenance,
};
use arglink::rerank::{
    llm_rerank, score_pairs, select_learned_nil, select_threshold, tiny_cross_scorer, LinkDecision,
    ThresholdDirection, TinyCrossScorer,
};
use arglink::retrieval::{bm25_build, bm25_retrieve, retrieve_query, CandidateSet, DenseIndex};
use arglink::synth::{generate_toy, ToyConfig};
use arglink::token::render_strings;
use arglink::training::{
    cross_examples, cross_query_len, mine_candidates, negative_candidates, train_biencoder, train_crossencoder,
    BiExample, OptimizerKind, TrainConfig,
};
use arglink::{EventQuery, TaggedQuery, Token};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::artifact::{digest_file, read_manifest, sha256_hex, Run};
use crate::config::{need, settings};
use crate::error::CliError;

type CliResult<T = ()> = Result<T, CliError>;

/// Fails with a data error naming the first path that does not exist.
fn check_inputs(paths: &[&Path]) -> CliResult {
    for p in paths {
        if !p.exists() {
            return Err(CliError::data(format!("missing input: {}", p.display())));
        }
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn json_bytes<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value).map_err(CliError::internal)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn jsonl_bytes<T: Serialize>(records: &[T]) -> CliResult<Vec<u8>> {
    Ok(to_jsonl_string(records)?.into_bytes())
}

fn parse_style(s: &Option<String>, default: FormatStyle) -> CliResult<FormatStyle> {
    match s {
        Some(s) => s.parse().map_err(|e: arglink::Error| CliError::usage(e.to_string())),
        None => Ok(default),
    }
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn echo(manifest: &crate::artifact::Manifest) {
    if let Ok(text) = serde_json::to_string(manifest) {
        eprintln!("{text}");
    }
}

fn load_index(path: &Path) -> CliResult<DenseIndex> {
    read_json(path)
}

fn load_encoder(path: &Path) -> CliResult<AnyEncoder> {
    Ok(AnyEncoder::load(path)?)
}

fn optimizer(name: &Option<String>) -> CliResult<Option<OptimizerKind>> {
    match name.as_deref() {
        None => Ok(None),
        Some("sgd") => Ok(Some(OptimizerKind::Sgd)),
        Some("adam") => Ok(Some(OptimizerKind::adam())),
        Some(other) => Err(CliError::usage(format!("unknown optimizer {other:?} (expected sgd or adam)"))),
    }
}

/// `"all"` keeps every negative.
fn negative_ratio(value: &Option<String>, default: Option<f64>) -> CliResult<Option<f64>> {
    match value.as_deref() {
        None => Ok(default),
        Some("all") => Ok(None),
        Some(v) => v
            .parse::<f64>()
            .map(Some)
            .map_err(|_| CliError::usage(format!("--negative-ratio expects a number or \"all\", got {v:?}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ClientKind {
    /// Deterministic offline client.
    Mock,
    /// Completions saved from an earlier run, keyed by prompt digest.
    Replay,
}

fn replay_client(path: &Option<PathBuf>) -> CliResult<ReplayClient> {
    Ok(ReplayClient::load(need(path, "replay")?)?)
}

// ------------------------------------------------------------------ gen-toy

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GenToyArgs {
    /// Directory receiving kb.jsonl, train.jsonl, test.jsonl, lexicon.json and the mock pools.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn gen_toy(a: GenToyArgs) -> CliResult {
    let dir = need(&a.out_dir, "out-dir")?;
    let cfg = ToyConfig {
        seed: a.seed.unwrap_or(ToyConfig::default().seed),
        ..ToyConfig::default()
    };
    let toy = generate_toy(&cfg)?;
    let run = Run::new("gen-toy", settings(&a)).seed("seed", cfg.seed);
    let files: Vec<(&str, Vec<u8>)> = vec![
        ("kb.jsonl", toy.kb.to_jsonl().into_bytes()),
        ("train.jsonl", jsonl_bytes(&toy.train)?),
        ("test.jsonl", jsonl_bytes(&toy.test)?),
        ("lexicon.json", json_bytes(&toy.lexicon)?),
        ("pools.train.json", json_bytes(&toy.train_pools)?),
        ("pools.test.json", json_bytes(&toy.test_pools)?),
    ];
    for (name, bytes) in files {
        echo(&run.write(&dir.join(name), &bytes)?);
    }
    Ok(())
}

// ------------------------------------------------------------------ build-kb

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct BuildKbArgs {
    /// Raw knowledge-base JSONL.
    #[arg(long = "in")]
    pub r#in: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn build_kb(a: BuildKbArgs) -> CliResult {
    let (input, out) = (need(&a.r#in, "in")?, need(&a.out, "out")?);
    check_inputs(&[input])?;
    let kb = load_kb(input)?;
    let mut run = Run::new("build-kb", settings(&a));
    run.input("in", input)?;
    echo(&run.write(out, kb.to_jsonl().as_bytes())?);
    Ok(())
}

// ------------------------------------------------------------------ tag

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractorKind {
    /// Lexicon lookup.
    Rule,
    /// No arguments; every query keeps the unknown event type.
    Null,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TagArgs {
    /// Event-query JSONL.
    #[arg(long = "in")]
    pub r#in: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub extractor: Option<ExtractorKind>,
    /// Lexicon JSON for the rule extractor.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
}

fn extractor(kind: ExtractorKind, lexicon: &Option<PathBuf>, run: &mut Run) -> CliResult<Box<dyn ExtractorAdapter>> {
    Ok(match kind {
        ExtractorKind::Null => Box::new(NullExtractor),
        ExtractorKind::Rule => {
            let path = need(lexicon, "lexicon")?;
            check_inputs(&[path])?;
            run.input("lexicon", path)?;
            let lex: Lexicon = read_json(path)?;
            Box::new(rule_extractor(&lex))
        }
    })
}

pub fn tag(a: TagArgs) -> CliResult {
    let (input, out) = (need(&a.r#in, "in")?, need(&a.out, "out")?);
    let kind = *need(&a.extractor, "extractor")?;
    check_inputs(&[input])?;
    let mut run = Run::new("tag", settings(&a));
    run.input("in", input)?;
    let ex = extractor(kind, &a.lexicon, &mut run)?;
    let queries: Vec<EventQuery> = read_jsonl(input)?;
    let tagged = extract_all(ex.as_ref(), &queries)?;
    echo(&run.write(out, &jsonl_bytes(&tagged)?)?);
    Ok(())
}

// ------------------------------------------------------------------ format

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FormatArgs {
    /// Tagged-query JSONL.
    #[arg(long = "in")]
    pub r#in: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// blink, evelink or args.
    #[arg(long)]
    pub style: Option<String>,
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Debug, Serialize)]
struct Formatted<'a> {
    query_id: &'a str,
    style: String,
    tokens: Vec<String>,
}

pub fn format(a: FormatArgs) -> CliResult {
    let (input, out) = (need(&a.r#in, "in")?, need(&a.out, "out")?);
    let style = parse_style(&a.style, FormatStyle::Args)?;
    let max_len = *need(&a.max_len, "max-len")?;
    check_inputs(&[input])?;
    let queries: Vec<TaggedQuery> = read_jsonl(input)?;
    let records = queries
        .iter()
        .map(|q| {
            Ok(Formatted {
                query_id: q.query_id(),
                style: style.to_string(),
                tokens: render_strings(&format_query(style, q, max_len)?),
            })
        })
        .collect::<arglink::Result<Vec<_>>>()?;
    let mut run = Run::new("format", settings(&a));
    run.input("in", input)?;
    echo(&run.write(out, &jsonl_bytes(&records)?)?);
    Ok(())
}

// ------------------------------------------------------------------ train-bi

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    /// Trainable embedding-average encoder.
    Tiny,
    /// Fixed feature-hashing encoder; no training.
    Hashing,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainBiArgs {
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// Tagged training queries.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Encoder checkpoint; the training report goes to `<out>.report.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub encoder_kind: Option<EncoderKind>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub style: Option<String>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// sgd or adam.
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub logit_scale: Option<f64>,
    /// Training-order seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parameter initialization seed.
    #[arg(long)]
    pub init_seed: Option<u64>,
}

pub fn train_bi(a: TrainBiArgs) -> CliResult {
    let (kb_path, q_path, out) = (need(&a.kb, "kb")?, need(&a.queries, "queries")?, need(&a.out, "out")?);
    check_inputs(&[kb_path, q_path])?;
    let kind = a.encoder_kind.unwrap_or(EncoderKind::Tiny);
    let dim = a.dim.unwrap_or(64);
    let init_seed = a.init_seed.unwrap_or(0);
    let style = parse_style(&a.style, FormatStyle::Args)?;
    let defaults = TrainConfig::bi_encoder();
    let cfg = TrainConfig {
        lr: a.lr.unwrap_or(defaults.lr),
        batch_size: a.batch_size.unwrap_or(defaults.batch_size),
        epochs: a.epochs.unwrap_or(defaults.epochs),
        max_len: a.max_len.unwrap_or(defaults.max_len),
        seed: a.seed.unwrap_or(defaults.seed),
        optimizer: optimizer(&a.optimizer)?.unwrap_or(defaults.optimizer),
        logit_scale: a.logit_scale.unwrap_or(defaults.logit_scale),
        ..defaults
    };
    cfg.validate()?;
    let kb = load_kb(kb_path)?;
    let queries: Vec<TaggedQuery> = read_jsonl(q_path)?;
    let mut run = Run::new("train-bi", settings(&a)).seed("seed", cfg.seed).seed("init-seed", init_seed);
    run.input("kb", kb_path)?;
    run.input("queries", q_path)?;

    if kind == EncoderKind::Hashing {
        let enc = hashing_encoder(dim, init_seed)?;
        echo(&run.write(out, checkpoint_to_json(&enc.checkpoint())?.as_bytes())?);
        return Ok(());
    }
    let mut seqs: Vec<Vec<Token>> = queries
        .iter()
        .map(|q| format_query(style, q, cfg.max_len))
        .collect::<arglink::Result<_>>()?;
    seqs.extend(kb.iter().map(|e| candidate_text(e, cfg.max_len)));
    let mut enc = tiny_encoder(Vocab::build(seqs.iter().map(Vec::as_slice)), dim, init_seed);
    let data = BiExample::from_queries(&queries, &kb, style, cfg.max_len)?;
    let mut report = train_biencoder(&data, &mut enc, &cfg)?;
    let ckpt = checkpoint_to_json(&enc.checkpoint())?;
    report.checkpoint = Some(sha256_hex(ckpt.as_bytes()));
    echo(&run.write(out, ckpt.as_bytes())?);
    run.write(&sidecar(out, ".report.json"), &json_bytes(&report)?)?;
    Ok(())
}

// ------------------------------------------------------------------ index

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct IndexArgs {
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// Encoder checkpoint.
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Candidate text length.
    #[arg(long)]
    pub max_len: Option<usize>,
}

pub fn index(a: IndexArgs) -> CliResult {
    let (kb_path, enc_path, out) = (need(&a.kb, "kb")?, need(&a.encoder, "encoder")?, need(&a.out, "out")?);
    check_inputs(&[kb_path, enc_path])?;
    let max_len = a.max_len.unwrap_or(300);
    let kb = load_kb(kb_path)?;
    let enc = load_encoder(enc_path)?;
    let index = arglink::retrieval::build_index(&kb, &enc, max_len)?;
    let mut run = Run::new("index", settings(&a));
    run.input("kb", kb_path)?;
    run.input("encoder", enc_path)?;
    echo(&run.write(out, &json_bytes(&index)?)?);
    Ok(())
}

// ------------------------------------------------------------------ retrieve

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum RetrievalMethod {
    Dense,
    Bm25,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RetrieveArgs {
    /// Dense index built by `index`.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Encoder checkpoint matching the index.
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    /// Knowledge base, for BM25.
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// Tagged queries.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<RetrievalMethod>,
    #[arg(long)]
    pub style: Option<String>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
}

pub fn retrieve(a: RetrieveArgs) -> CliResult {
    let (q_path, out) = (need(&a.queries, "queries")?, need(&a.out, "out")?);
    let k = a.k.unwrap_or(10);
    let mut run = Run::new("retrieve", settings(&a));
    let sets: Vec<CandidateSet> = match a.method.unwrap_or(RetrievalMethod::Dense) {
        RetrievalMethod::Dense => {
            let (idx_path, enc_path) = (need(&a.index, "index")?, need(&a.encoder, "encoder")?);
            check_inputs(&[idx_path, enc_path, q_path])?;
            let index = load_index(idx_path)?;
            let enc = load_encoder(enc_path)?;
            index.check_encoder(&enc)?;
            let style = parse_style(&a.style, FormatStyle::Args)?;
            let max_len = a.max_len.unwrap_or(index.max_len);
            let queries: Vec<TaggedQuery> = read_jsonl(q_path)?;
            run.input("index", idx_path)?;
            run.input("encoder", enc_path)?;
            let none = HashSet::new();
            queries
                .iter()
                .map(|q| retrieve_query(&index, &enc, q, style, max_len, k.min(index.len()), &none))
                .collect::<arglink::Result<_>>()?
        }
        RetrievalMethod::Bm25 => {
            let kb_path = need(&a.kb, "kb")?;
            check_inputs(&[kb_path, q_path])?;
            let kb = load_kb(kb_path)?;
            let index = bm25_build(&kb, a.max_len.unwrap_or(300))?;
            let queries: Vec<TaggedQuery> = read_jsonl(q_path)?;
            run.input("kb", kb_path)?;
            queries
                .iter()
                .map(|q| bm25_retrieve(&index, &q.base, k.min(kb.len())))
                .collect::<arglink::Result<_>>()?
        }
    };
    run.input("queries", q_path)?;
    echo(&run.write(out, &jsonl_bytes(&sets)?)?);
    Ok(())
}

// ------------------------------------------------------------------ neg-gen

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum NegStyle {
    /// Argument-aware rewriting.
    Args,
    /// Rewriting without role tags.
    Plain,
    /// Relabel queries of pruned knowledge-base entries as NIL.
    Prune,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct NegGenArgs {
    /// Tagged in-KB queries to rewrite.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-attempt generation log (JSONL).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub style: Option<NegStyle>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Paired candidates per negative.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    /// Query length when retrieving paired candidates.
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long, value_enum)]
    pub client: Option<ClientKind>,
    /// Role-value pools for the mock client.
    #[arg(long)]
    pub pools: Option<PathBuf>,
    /// Seed of the mock client.
    #[arg(long)]
    pub client_seed: Option<u64>,
    /// Saved completions for the replay client.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Lexicon used to re-tag plain-style passages.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Fraction of gold labels pruned (prune style).
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    #[arg(long)]
    pub retries: Option<usize>,
}

pub fn neg_gen(a: NegGenArgs) -> CliResult {
    let (q_path, out) = (need(&a.queries, "queries")?, need(&a.out, "out")?);
    let style = *need(&a.style, "style")?;
    let defaults = GenerationConfig::default();
    let seed = a.seed.unwrap_or(defaults.seed);
    check_inputs(&[q_path])?;
    let queries: Vec<TaggedQuery> = read_jsonl(q_path)?;
    let mut run = Run::new("neg-gen", settings(&a)).seed("seed", seed);
    run.input("queries", q_path)?;

    if style == NegStyle::Prune {
        let outcome = kb_pruning_negatives(&queries, a.fraction.unwrap_or(0.1), seed)?;
        echo(&run.write(out, &jsonl_bytes(&outcome.negatives)?)?);
        return Ok(());
    }
    let (idx_path, enc_path) = (need(&a.index, "index")?, need(&a.encoder, "encoder")?);
    check_inputs(&[idx_path, enc_path])?;
    let index = load_index(idx_path)?;
    let enc = load_encoder(enc_path)?;
    run.input("index", idx_path)?;
    run.input("encoder", enc_path)?;
    let client: Box<dyn CompletionClient> = match a.client.unwrap_or(ClientKind::Mock) {
        ClientKind::Mock => {
            let pools_path = need(&a.pools, "pools")?;
            check_inputs(&[pools_path])?;
            run.input("pools", pools_path)?;
            let client_seed = a.client_seed.unwrap_or(0);
            run.seeds.insert("client-seed".into(), client_seed);
            let pools: BTreeMap<String, Vec<String>> = read_json(pools_path)?;
            Box::new(ArgumentSwapClient::new(pools, client_seed))
        }
        ClientKind::Replay => {
            run.input("replay", need(&a.replay, "replay")?)?;
            Box::new(replay_client(&a.replay)?)
        }
    };
    let gen_style = match style {
        NegStyle::Args => GenStyle::ArgumentAware,
        _ => GenStyle::Plain,
    };
    let retag = match (&a.lexicon, gen_style) {
        (Some(_), GenStyle::Plain) => Some(extractor(ExtractorKind::Rule, &a.lexicon, &mut run)?),
        _ => None,
    };
    let cfg = GenerationConfig {
        style: gen_style,
        count: a.count.unwrap_or(defaults.count),
        seed,
        k: a.k.unwrap_or(defaults.k),
        query_style: FormatStyle::Args,
        query_max_len: a.max_len.unwrap_or(index.max_len),
        retries: a.retries.unwrap_or(defaults.retries),
        concurrency: a.concurrency.unwrap_or(defaults.concurrency),
    };
    let result = generate_negatives(&queries, &index, &enc, client.as_ref(), retag.as_deref(), &cfg)?;
    echo(&run.write(out, &jsonl_bytes(&result.negatives)?)?);
    if let Some(log) = &a.log {
        run.write(log, &jsonl_bytes(&result.log)?)?;
    }
    Ok(())
}

// ------------------------------------------------------------------ train-cross

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainCrossArgs {
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// Tagged training queries.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Dense index and encoder used to mine candidates.
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    /// Negatives from `neg-gen`.
    #[arg(long)]
    pub negatives: Option<PathBuf>,
    /// Scorer checkpoint; the training report goes to `<out>.report.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub style: Option<String>,
    /// Pair budget; queries get half.
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Candidates mined per query.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Negatives kept per positive, or "all".
    #[arg(long)]
    pub negative_ratio: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub init_seed: Option<u64>,
}

pub fn train_cross(a: TrainCrossArgs) -> CliResult {
    let kb_path = need(&a.kb, "kb")?;
    let q_path = need(&a.queries, "queries")?;
    let (idx_path, enc_path, out) = (need(&a.index, "index")?, need(&a.encoder, "encoder")?, need(&a.out, "out")?);
    let mut inputs = vec![kb_path.as_path(), q_path, idx_path, enc_path];
    inputs.extend(a.negatives.as_deref());
    check_inputs(&inputs)?;
    let style = parse_style(&a.style, FormatStyle::Args)?;
    let defaults = TrainConfig::cross_encoder();
    let cfg = TrainConfig {
        lr: a.lr.unwrap_or(defaults.lr),
        batch_size: a.batch_size.unwrap_or(defaults.batch_size),
        epochs: a.epochs.unwrap_or(defaults.epochs),
        max_len: a.max_len.unwrap_or(defaults.max_len),
        seed: a.seed.unwrap_or(defaults.seed),
        k: a.k.unwrap_or(defaults.k),
        optimizer: optimizer(&a.optimizer)?.unwrap_or(defaults.optimizer),
        negative_ratio: negative_ratio(&a.negative_ratio, defaults.negative_ratio)?,
        ..defaults
    };
    cfg.validate()?;
    let init_seed = a.init_seed.unwrap_or(0);
    let kb = load_kb(kb_path)?;
    let queries: Vec<TaggedQuery> = read_jsonl(q_path)?;
    let index = load_index(idx_path)?;
    let enc = load_encoder(enc_path)?;
    let negatives: Vec<NegativeExample> = match &a.negatives {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    let mut run = Run::new("train-cross", settings(&a)).seed("seed", cfg.seed).seed("init-seed", init_seed);
    for (role, p) in [("kb", kb_path), ("queries", q_path), ("index", idx_path), ("encoder", enc_path)] {
        run.input(role, p)?;
    }
    if let Some(p) = &a.negatives {
        run.input("negatives", p)?;
    }

    // Pruning negatives replace their origin query and hide its gold entry.
    let (pruning, generated): (Vec<&NegativeExample>, Vec<&NegativeExample>) =
        negatives.iter().partition(|n| n.provenance == Provenance::KbPruning);
    let by_id: BTreeMap<&str, &TaggedQuery> = queries.iter().map(|q| (q.query_id(), q)).collect();
    let mut pruned = HashSet::new();
    let mut replaced = HashSet::new();
    for n in &pruning {
        let origin = by_id
            .get(n.origin_query_id.as_str())
            .ok_or_else(|| CliError::data(format!("pruning negative for unknown query {:?}", n.origin_query_id)))?;
        if let Some(g) = origin.base.gold.as_entry() {
            pruned.insert(g.to_string());
        }
        replaced.insert(n.origin_query_id.as_str());
    }
    let mut mined_queries: Vec<TaggedQuery> =
        queries.iter().filter(|q| !replaced.contains(q.query_id())).cloned().collect();
    mined_queries.extend(pruning.iter().map(|n| n.generated_query.clone()));
    let mined = mine_candidates(&mined_queries, &index, &enc, style, index.max_len, cfg.k, &pruned)?;
    let generated: Vec<NegativeExample> = generated.into_iter().cloned().collect();
    let generated_sets = negative_candidates(&generated)?;

    let mut items: Vec<(&TaggedQuery, &CandidateSet)> =
        mined_queries.iter().map(|q| (q, &mined[q.query_id()])).collect();
    for n in &generated {
        let q = &n.generated_query;
        items.push((q, &generated_sets[q.query_id()]));
    }

    let qlen = cross_query_len(cfg.max_len);
    let mut seqs: Vec<Vec<Token>> = items
        .iter()
        .map(|(q, _)| format_query(style, q, qlen))
        .collect::<arglink::Result<_>>()?;
    seqs.extend(kb.iter().map(|e| candidate_text(e, cfg.max_len)));
    let vocab = Vocab::build(seqs.iter().map(Vec::as_slice));
    let mut scorer = tiny_cross_scorer(vocab, a.dim.unwrap_or(16), a.hidden.unwrap_or(16), init_seed);
    let examples = cross_examples(&items, &kb, style, cfg.max_len)?;
    let mut report = train_crossencoder(&examples, &mut scorer, &cfg)?;
    let ckpt = scorer.to_json()?;
    report.checkpoint = Some(sha256_hex(ckpt.as_bytes()));
    echo(&run.write(out, ckpt.as_bytes())?);
    run.write(&sidecar(out, ".report.json"), &json_bytes(&report)?)?;
    Ok(())
}

// ------------------------------------------------------------------ link

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    /// Arg-max over NIL and the candidates.
    Learned,
    /// Softmax confidence against `--theta`.
    Threshold,
    /// Prompted re-ranking by a completion client.
    Llm,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct LinkArgs {
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// Tagged queries to link.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Candidate sets from `retrieve`.
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    /// Cross-scorer checkpoint (learned and threshold rules).
    #[arg(long)]
    pub scorer: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub rule: Option<Rule>,
    #[arg(long)]
    pub theta: Option<f64>,
    /// conventional or literal.
    #[arg(long)]
    pub direction: Option<String>,
    /// Candidates re-ranked per query.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub style: Option<String>,
    /// Pair budget.
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long, value_enum)]
    pub client: Option<ClientKind>,
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Use the NIL-aware re-ranking prompt.
    #[arg(long)]
    pub allow_nil: Option<bool>,
}

/// Offline re-ranker: answers with the prompt's own document order.
struct EchoRanker;

impl CompletionClient for EchoRanker {
    fn complete(&self, prompt: &str) -> arglink::Result<String> {
        let start = prompt.rfind("Document 1:").unwrap_or(0);
        let answer: Vec<&str> = prompt[start..]
            .lines()
            .take_while(|l| !l.starts_with("Short passage"))
            .filter(|l| l.starts_with("Document "))
            .collect();
        Ok(answer.join("\n"))
    }
}

pub fn link(a: LinkArgs) -> CliResult {
    let kb_path = need(&a.kb, "kb")?;
    let (q_path, c_path, out) = (need(&a.queries, "queries")?, need(&a.candidates, "candidates")?, need(&a.out, "out")?);
    let rule = *need(&a.rule, "rule")?;
    check_inputs(&[kb_path, q_path, c_path])?;
    let style = parse_style(&a.style, FormatStyle::Args)?;
    let k = a.k.unwrap_or(10);
    let budget = a.max_len.unwrap_or(TrainConfig::cross_encoder().max_len);
    let kb = load_kb(kb_path)?;
    let queries: Vec<TaggedQuery> = read_jsonl(q_path)?;
    let mut sets: BTreeMap<String, CandidateSet> = BTreeMap::new();
    for mut s in read_jsonl::<CandidateSet>(c_path)? {
        s.candidates.truncate(k);
        sets.insert(s.query_id.clone(), s);
    }
    let mut run = Run::new("link", settings(&a));
    for (role, p) in [("kb", kb_path), ("queries", q_path), ("candidates", c_path)] {
        run.input(role, p)?;
    }
    let set_for = |q: &TaggedQuery| {
        sets.get(q.query_id())
            .ok_or_else(|| CliError::data(format!("no candidates for query {:?}", q.query_id())))
    };
    let qlen = cross_query_len(budget);

    let decisions: Vec<LinkDecision> = match rule {
        Rule::Learned | Rule::Threshold => {
            let s_path = need(&a.scorer, "scorer")?;
            check_inputs(&[s_path])?;
            run.input("scorer", s_path)?;
            let text =
                std::fs::read_to_string(s_path).map_err(|e| CliError::data(format!("cannot read {}: {e}", s_path.display())))?;
            let scorer = TinyCrossScorer::from_json(&text)?;
            let theta = a.theta.unwrap_or(0.5);
            let direction: ThresholdDirection = match &a.direction {
                Some(d) => d.parse().map_err(|e: arglink::Error| CliError::usage(e.to_string()))?,
                None => ThresholdDirection::default(),
            };
            queries
                .iter()
                .map(|q| {
                    let set = set_for(q)?;
                    let scores = score_pairs(&scorer, &format_query(style, q, qlen)?, set, &kb, budget)?;
                    Ok(match rule {
                        Rule::Learned => select_learned_nil(&scores, set)?,
                        _ => select_threshold(&scores[1..], set, theta, direction)?,
                    })
                })
                .collect::<CliResult<_>>()?
        }
        Rule::Llm => {
            let client: Box<dyn CompletionClient> = match a.client.unwrap_or(ClientKind::Mock) {
                ClientKind::Mock => Box::new(EchoRanker),
                ClientKind::Replay => {
                    run.input("replay", need(&a.replay, "replay")?)?;
                    Box::new(replay_client(&a.replay)?)
                }
            };
            let allow_nil = a.allow_nil.unwrap_or(true);
            queries
                .iter()
                .map(|q| Ok(llm_rerank(client.as_ref(), &format_query(style, q, qlen)?, set_for(q)?, &kb, allow_nil)?))
                .collect::<CliResult<_>>()?
        }
    };
    echo(&run.write(out, &jsonl_bytes(&decisions)?)?);
    Ok(())
}

// ------------------------------------------------------------------ eval

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct EvalArgs {
    /// Decisions from `link`.
    #[arg(long)]
    pub preds: Option<PathBuf>,
    /// The tagged queries the predictions were made for.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Candidate sets from `retrieve`, for recall.
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// The artifact at `path` must have been produced from `gold`.
fn check_lineage(path: &Path, gold_digest: &str) -> CliResult {
    let m = read_manifest(path)?;
    match m.inputs.get("queries") {
        Some(d) if d == gold_digest => Ok(()),
        Some(_) => Err(CliError::data(format!(
            "lineage mismatch: {} was produced from different queries than the gold file",
            path.display()
        ))),
        None => Err(CliError::data(format!("lineage mismatch: {} records no queries input", path.display()))),
    }
}

pub fn eval(a: EvalArgs) -> CliResult {
    let (p_path, g_path, out) = (need(&a.preds, "preds")?, need(&a.gold, "gold")?, need(&a.out, "out")?);
    let mut inputs = vec![p_path.as_path(), g_path];
    inputs.extend(a.candidates.as_deref());
    check_inputs(&inputs)?;
    let gold_digest = digest_file(g_path)?;
    check_lineage(p_path, &gold_digest)?;
    if let Some(c) = &a.candidates {
        check_lineage(c, &gold_digest)?;
    }
    let decisions: Vec<LinkDecision> = read_jsonl(p_path)?;
    let golds: Vec<EventQuery> = read_jsonl::<TaggedQuery>(g_path)?.into_iter().map(|q| q.base).collect();
    let sets: Option<Vec<CandidateSet>> = a.candidates.as_deref().map(read_jsonl).transpose()?;
    // Recall is reported only to the depth that was retrieved.
    let depth = sets.as_ref().map_or(0, |s| s.iter().map(CandidateSet::len).min().unwrap_or(0));
    let ks: Vec<usize> = RECALL_GRID.iter().copied().filter(|k| *k <= depth).collect();
    let mut report = evaluate(&decisions, &golds, sets.as_deref(), &ks)?;
    report.config_fingerprint = Some(read_manifest(p_path)?.lineage);
    let mut run = Run::new("eval", settings(&a));
    run.input("preds", p_path)?;
    run.input("queries", g_path)?;
    if let Some(c) = &a.candidates {
        run.input("candidates", c)?;
    }
    echo(&run.write(out, &json_bytes(&report)?)?);
    Ok(())
}

// ------------------------------------------------------------------ report

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ReportArgs {
    /// Evaluation reports; rows are named by file stem.
    #[arg(long, num_args = 1..)]
    #[serde(default)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn report(a: ReportArgs) -> CliResult {
    if a.runs.is_empty() {
        return Err(CliError::usage("missing required option --runs"));
    }
    let out = need(&a.out, "out")?;
    let paths: Vec<&Path> = a.runs.iter().map(PathBuf::as_path).collect();
    check_inputs(&paths)?;
    let mut run = Run::new("report", settings(&a));
    let mut runs = Vec::new();
    for p in &a.runs {
        let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let rep: EvalReport = read_json(p)?;
        run.input(&format!("run:{name}"), p)?;
        runs.push((name, rep));
    }
    let comparison = compare_report(&runs)?;
    echo(&run.write(out, &json_bytes(&comparison)?)?);
    print!("{}", comparison.to_markdown());
    Ok(())
}
