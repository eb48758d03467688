//! Command-line front end.
//!
//! Every subcommand computes its artifacts in memory and writes them only
//! once everything succeeded, each file through an atomic rename, followed
//! by a `<first artifact>.run.json` manifest. Flags win over values from
//! `--config`, which win over built-in defaults.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::analysis::{
    classify_transfer, density_report, density_table_csv, histories_from_runs, occurrence_contrast, occurrence_count,
    ContrastRow, DensityReport, Direction, OccurrenceRecord, TransferRecord,
};
use crate::bridging::{build_setting, BridgeMode, BridgeTemplate, MixRatio, ParallelPair};
use crate::config::{ExperimentConfig, LoadedConfig};
use crate::corpus::{chunk_corpus, corpus_stats, filter_corpus, Chunk, Document, DEFAULT_MAX_CHARS};
use crate::error::{Error, Result};
use crate::fixtures;
use crate::io::{read_json, read_ndjson, to_json_pretty, to_ndjson, write_atomic};
use crate::probing::{
    default_entity_templates, evaluate, render_entity_questions, ClozeQuestion, DistractorPool, EntityRecord, EvalRun,
    Setting, DEFAULT_EMA_WEIGHT,
};
use crate::protocol::Transport;
use crate::report::{curve_report, curves_csv, curves_svg};
use crate::retrieval::{
    build_index, judge_items, serve_judge, ExternalJudge, InvertedIndex, Judge, JudgeCache, JudgeItem, Judgment,
    LexicalJudge, RetrievalHit, DEFAULT_TOP_K,
};
use crate::script::parse_script_set;
use crate::scoring::stub::{serve_scorer, ConstantScorer};
use crate::scoring::{ExternalScorer, NGramModel, Scorer};

pub const JOBS_ENV: &str = "CULTUREBRIDGE_JOBS";

#[derive(Debug, Parser)]
#[command(name = "culturebridge", version, about = "Cross-lingual transfer experiment toolkit")]
pub struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true, env = JOBS_ENV)]
    pub jobs: Option<usize>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Keep only code points of the allowed scripts (plus neutral ones).
    Filter(FilterArgs),
    /// Split documents into retrieval chunks.
    Chunk(ChunkArgs),
    /// Build a bridged or unbridged continual-pretraining dataset.
    Bridge(BridgeArgs),
    /// Train a character n-gram model usable as a scorer.
    TrainNgram(TrainArgs),
    /// Evaluate cloze questions at one checkpoint.
    Eval(EvalArgs),
    /// Generate entity cloze questions from attribute records.
    Entities(EntitiesArgs),
    /// Build a BM25 index over chunks.
    Index(IndexArgs),
    /// Retrieve the top-k chunks for each question's claim.
    Search(SearchArgs),
    /// Judge whether retrieved chunks entail their claims.
    Judge(JudgeArgs),
    /// Count occurrences and compute cultural density.
    Density(DensityArgs),
    /// Classify transfer instances from evaluation runs.
    Transfer(TransferArgs),
    /// Emit accuracy/gap curves and density tables.
    Report(ReportArgs),
    /// Serve a scorer over stdin/stdout.
    ServeScorer(ServeScorerArgs),
    /// Serve the lexical judge over stdin/stdout.
    ServeJudge(ServeJudgeArgs),
    /// Write deterministic synthetic data.
    Fixture(FixtureArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct FilterArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Corpus label from the config, instead of --input.
    #[arg(long)]
    pub corpus: Option<String>,
    /// Comma-separated script classes, e.g. `latin` or `han,latin`.
    #[arg(long)]
    pub scripts: Option<String>,
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub max_chars: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Corpus manifest path; defaults to `<out>.manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ChunkArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub max_chars: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Bridged,
    Unbridged,
}

#[derive(Debug, Args, Serialize)]
pub struct BridgeArgs {
    /// Filtered monolingual corpora to mix in.
    #[arg(long, required = true, num_args = 1..)]
    pub mono: Vec<PathBuf>,
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    #[arg(long)]
    pub lang: Option<String>,
    /// Pattern with `{en}` and `{xx}`; the language's built-in one otherwise.
    #[arg(long)]
    pub template: Option<String>,
    #[arg(long)]
    pub ratio: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub order: usize,
    #[arg(long, default_value_t = 1.0)]
    pub k: f64,
    /// Train on the first N documents only.
    #[arg(long)]
    pub take: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long, num_args = 1..)]
    pub questions: Vec<PathBuf>,
    /// Evaluate only questions in this language.
    #[arg(long)]
    pub lang: Option<String>,
    /// `ngram:PATH`, `stdio:COMMAND`, `http(s)://URL` or `uniform`.
    #[arg(long)]
    pub scorer: Option<String>,
    #[arg(long)]
    pub setting: String,
    #[arg(long)]
    pub step: u64,
    /// Seconds to wait for an external scorer.
    #[arg(long)]
    pub timeout: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EntitiesArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub lang: String,
    #[arg(long)]
    pub culture: String,
    /// JSON object mapping attribute to template; built-in for en/zh.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct IndexArgs {
    #[arg(long)]
    pub chunks: PathBuf,
    #[arg(long)]
    pub lang: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SearchArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long, num_args = 1..)]
    pub questions: Vec<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct JudgeArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub hits: PathBuf,
    #[arg(long, num_args = 1..)]
    pub questions: Vec<PathBuf>,
    /// `lexical`, `stdio:COMMAND` or `http(s)://URL`.
    #[arg(long)]
    pub judge: Option<String>,
    /// Judgment cache (NDJSON), read if present and rewritten.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub timeout: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DensityArgs {
    #[arg(long, num_args = 1..)]
    pub questions: Vec<PathBuf>,
    #[arg(long)]
    pub hits: PathBuf,
    #[arg(long)]
    pub judgments: PathBuf,
    /// Corpus manifest written by `filter`.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Occurrence records; defaults to `<out>.occurrences.ndjson`.
    #[arg(long)]
    pub occurrences: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TransferArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub runs: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    pub occurrences: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    #[arg(long, num_args = 1..)]
    pub runs: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    pub density: Vec<PathBuf>,
    #[arg(long)]
    pub ema_weight: Option<f64>,
    /// Combine runs produced under different configurations.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeScorerArgs {
    #[arg(long)]
    pub scorer: String,
    /// Answer each batch in reverse order.
    #[arg(long)]
    pub reverse: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeJudgeArgs {
    #[arg(long, default_value = "en")]
    pub lang: String,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub reverse: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixtureKind {
    MixedScript,
    Pairs,
    Chunks,
    Desk,
}

#[derive(Debug, Args, Serialize)]
pub struct FixtureArgs {
    #[arg(value_enum)]
    pub kind: FixtureKind,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file, or directory for `desk`.
    #[arg(long)]
    pub out: PathBuf,
}

/// One retrieval result line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub question_id: String,
    pub query: String,
    pub k: usize,
    pub hits: Vec<RetrievalHit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSummary {
    pub records: Vec<TransferRecord>,
    pub en_to_xx: usize,
    pub xx_to_en: usize,
    pub pairs_considered: usize,
    pub contrast: Option<Vec<ContrastRow>>,
}

struct Context {
    config: Option<LoadedConfig>,
    jobs: Option<usize>,
}

impl Context {
    fn cfg(&self) -> Option<&ExperimentConfig> {
        self.config.as_ref().map(|c| &c.config)
    }

    fn hash(&self) -> Option<&str> {
        self.config.as_ref().map(|c| c.hash.as_str())
    }

    fn seed(&self, flag: Option<u64>) -> Result<u64> {
        flag.or(self.config.as_ref().map(|c| c.seed))
            .ok_or_else(|| Error::config("a seed is required: pass --seed or set `seed` in --config"))
    }

    fn lang(&self, flag: Option<&str>) -> Result<String> {
        flag.map(str::to_owned)
            .or_else(|| self.cfg().map(|c| c.lang.clone()))
            .ok_or_else(|| Error::config("a language is required: pass --lang or use --config"))
    }

    fn max_chars(&self, flag: Option<usize>) -> Result<usize> {
        let m = flag.or(self.cfg().and_then(|c| c.max_chars)).unwrap_or(DEFAULT_MAX_CHARS);
        if m == 0 {
            return Err(Error::config("--max-chars must be at least 1"));
        }
        Ok(m)
    }

    fn questions(&self, flags: &[PathBuf]) -> Result<Vec<ClozeQuestion>> {
        let paths: Vec<PathBuf> = if flags.is_empty() {
            self.cfg().map(|c| c.questions.clone()).unwrap_or_default()
        } else {
            flags.to_vec()
        };
        if paths.is_empty() {
            return Err(Error::config("no question files: pass --questions or set `questions` in --config"));
        }
        let mut out = Vec::new();
        for p in &paths {
            out.extend(read_ndjson::<ClozeQuestion>(p)?);
        }
        Ok(out)
    }
}

/// Artifacts staged in memory and committed together.
struct Artifacts {
    subcommand: &'static str,
    params: Value,
    config_hash: Option<String>,
    files: Vec<(PathBuf, Vec<u8>)>,
    started: u64,
}

#[derive(Serialize)]
struct OutputRecord {
    path: String,
    sha256: String,
    bytes: usize,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'a str,
    version: &'a str,
    subcommand: &'a str,
    config_hash: Option<&'a str>,
    params: &'a Value,
    outputs: Vec<OutputRecord>,
    started_unix: u64,
    finished_unix: u64,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

impl Artifacts {
    fn new(subcommand: &'static str, params: &impl Serialize, ctx: &Context) -> Self {
        Artifacts {
            subcommand,
            params: serde_json::to_value(params).unwrap_or(Value::Null),
            config_hash: ctx.hash().map(str::to_owned),
            files: Vec::new(),
            started: unix_now(),
        }
    }

    fn add(&mut self, path: &Path, bytes: Vec<u8>) {
        self.files.push((path.to_path_buf(), bytes));
    }

    /// Pretty JSON with the config hash added to top-level objects.
    fn add_json<T: Serialize>(&mut self, path: &Path, value: &T) -> Result<()> {
        let mut v = serde_json::to_value(value)?;
        if let Value::Object(m) = &mut v {
            m.entry("config_hash")
                .or_insert_with(|| self.config_hash.clone().map_or(Value::Null, Value::String));
        }
        let bytes = to_json_pretty(&v)?;
        self.add(path, bytes);
        Ok(())
    }

    fn commit(self) -> Result<()> {
        let Some(first) = self.files.first().map(|f| f.0.clone()) else {
            return Ok(());
        };
        let mut outputs = Vec::new();
        for (path, bytes) in &self.files {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            write_atomic(path, bytes)?;
            outputs.push(OutputRecord {
                path: path.display().to_string(),
                sha256: hex::encode(Sha256::digest(bytes)),
                bytes: bytes.len(),
            });
        }
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand: self.subcommand,
            config_hash: self.config_hash.as_deref(),
            params: &self.params,
            outputs,
            started_unix: self.started,
            finished_unix: unix_now(),
        };
        write_atomic(&with_suffix(&first, ".run.json"), &to_json_pretty(&manifest)?)
    }
}

fn open_scorer(spec: &str, timeout: Option<u64>) -> Result<Box<dyn Scorer>> {
    if spec == "uniform" {
        return Ok(Box::new(ConstantScorer::uniform()));
    }
    if let Some(path) = spec.strip_prefix("ngram:") {
        let path = Path::new(path);
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        return Ok(Box::new(NGramModel::from_json(&text)?));
    }
    let mut scorer = ExternalScorer::new(Transport::parse(spec)?);
    if let Some(t) = timeout {
        scorer = scorer.with_timeout(Duration::from_secs(t));
    }
    Ok(Box::new(scorer))
}

fn open_judge(spec: &str, timeout: Option<u64>) -> Result<Box<dyn Judge>> {
    if spec == "lexical" {
        return Ok(Box::new(LexicalJudge::default()));
    }
    let mut judge = ExternalJudge::new(Transport::parse(spec)?);
    if let Some(t) = timeout {
        judge = judge.with_timeout(Duration::from_secs(t));
    }
    Ok(Box::new(judge))
}

fn read_docs(paths: &[PathBuf]) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for p in paths {
        docs.extend(read_ndjson::<Document>(p)?);
    }
    Ok(docs)
}

fn cmd_filter(ctx: &Context, a: &FilterArgs) -> Result<()> {
    let spec = match &a.corpus {
        Some(label) => Some(
            ctx.cfg()
                .ok_or_else(|| Error::config("--corpus needs --config"))?
                .corpus(label)?
                .clone(),
        ),
        None => None,
    };
    let input = a
        .input
        .clone()
        .or_else(|| spec.as_ref().map(|s| s.path.clone()))
        .ok_or_else(|| Error::config("pass --input or --corpus"))?;
    let allowed = match (&a.scripts, &spec) {
        (Some(s), _) => parse_script_set(s)?,
        (None, Some(spec)) => spec.allowed_scripts()?,
        (None, None) => return Err(Error::config("pass --scripts or --corpus")),
    };
    let label = a
        .label
        .clone()
        .or_else(|| spec.as_ref().map(|s| s.label.clone()))
        .unwrap_or_else(|| input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    let max_chars = ctx.max_chars(a.max_chars)?;

    let docs = read_ndjson::<Document>(&input)?;
    let filtered = filter_corpus(&docs, &allowed, ctx.jobs)?;
    let mut manifest = corpus_stats(&label, &filtered.kept, max_chars, ctx.jobs)?;
    manifest.record_drops(&filtered.dropped);
    log::info!(
        "kept {} of {} documents ({} dropped)",
        filtered.kept.len(),
        docs.len(),
        filtered.dropped.len()
    );

    let mut out = Artifacts::new("filter", a, ctx);
    out.add(&a.out, to_ndjson(&filtered.kept)?);
    let manifest_path = a.manifest.clone().unwrap_or_else(|| with_suffix(&a.out, ".manifest.json"));
    out.add_json(&manifest_path, &manifest)?;
    out.commit()
}

fn cmd_chunk(ctx: &Context, a: &ChunkArgs) -> Result<()> {
    let docs = read_ndjson::<Document>(&a.input)?;
    let chunks = chunk_corpus(&docs, ctx.max_chars(a.max_chars)?, ctx.jobs)?;
    let mut out = Artifacts::new("chunk", a, ctx);
    out.add(&a.out, to_ndjson(&chunks)?);
    out.commit()
}

fn cmd_bridge(ctx: &Context, a: &BridgeArgs) -> Result<()> {
    let seed = ctx.seed(a.seed)?;
    let lang = ctx.lang(a.lang.as_deref())?;
    let template = match a.template.clone().or_else(|| ctx.cfg().and_then(|c| c.template.clone())) {
        Some(pattern) => {
            let name = BridgeTemplate::builtin(&lang).map(|t| t.display_name).unwrap_or_else(|_| lang.clone());
            BridgeTemplate::new(&lang, &pattern, &name)?
        }
        None => BridgeTemplate::builtin(&lang)?,
    };
    let ratio: MixRatio = a
        .ratio
        .clone()
        .or_else(|| ctx.cfg().and_then(|c| c.ratio.clone()))
        .unwrap_or_else(|| "1:1".to_owned())
        .parse()?;
    let pairs_path = a
        .pairs
        .clone()
        .or_else(|| ctx.cfg().and_then(|c| c.parallel.clone()))
        .ok_or_else(|| Error::config("pass --pairs or set `parallel` in --config"))?;
    let pairs = read_ndjson::<ParallelPair>(&pairs_path)?;
    let mono = read_docs(&a.mono)?;
    let mode = match a.mode {
        ModeArg::Bridged => BridgeMode::Bridged,
        ModeArg::Unbridged => BridgeMode::Unbridged,
    };
    let (docs, manifest) = build_setting(&pairs, &mono, mode, &template, ratio, seed)?;
    let mut out = Artifacts::new("bridge", a, ctx);
    out.add(&a.out, to_ndjson(&docs)?);
    let manifest_path = a.manifest.clone().unwrap_or_else(|| with_suffix(&a.out, ".manifest.json"));
    out.add_json(&manifest_path, &manifest)?;
    out.commit()
}

fn cmd_train(ctx: &Context, a: &TrainArgs) -> Result<()> {
    let docs = read_docs(&a.input)?;
    let take = a.take.unwrap_or(docs.len());
    if take > docs.len() {
        return Err(Error::data(format!("--take {take} exceeds the {} input documents", docs.len())));
    }
    let model = crate::scoring::train_ngram(&docs[..take], a.order, a.k)?;
    let mut out = Artifacts::new("train-ngram", a, ctx);
    out.add_json(&a.out, &model)?;
    out.commit()
}

fn cmd_eval(ctx: &Context, a: &EvalArgs) -> Result<()> {
    let setting: Setting = a.setting.parse()?;
    let mut questions = ctx.questions(&a.questions)?;
    if let Some(lang) = &a.lang {
        questions.retain(|q| &q.lang == lang);
    }
    let langs: BTreeSet<&str> = questions.iter().map(|q| q.lang.as_str()).collect();
    if langs.len() > 1 {
        return Err(Error::config(format!("questions span languages {langs:?}; pick one with --lang")));
    }
    let spec = a
        .scorer
        .clone()
        .or_else(|| ctx.cfg().and_then(|c| c.scorer_for(setting, a.step)).map(str::to_owned))
        .ok_or_else(|| Error::config(format!("no scorer for {setting} step {}: pass --scorer", a.step)))?;
    let scorer = open_scorer(&spec, a.timeout)?;
    let mut run = evaluate(&questions, scorer.as_ref(), setting, a.step)?;
    run.config.seed = ctx.config.as_ref().map(|c| c.seed);
    run.config.config_hash = ctx.hash().map(str::to_owned);
    log::info!("{setting} step {}: accuracy {:.4} over {}", a.step, run.accuracy, run.evaluated);
    let mut out = Artifacts::new("eval", a, ctx);
    out.add(&a.out, to_json_pretty(&run)?);
    out.commit()
}

fn cmd_entities(ctx: &Context, a: &EntitiesArgs) -> Result<()> {
    let seed = ctx.seed(a.seed)?;
    let records = read_ndjson::<EntityRecord>(&a.records)?;
    let templates = match &a.templates {
        Some(p) => read_json(p)?,
        None => default_entity_templates(&a.lang)
            .ok_or_else(|| Error::config(format!("no built-in entity templates for `{}`", a.lang)))?,
    };
    let pool = DistractorPool::from_records(&records);
    let rendered = render_entity_questions(&records, &templates, &a.lang, &a.culture, &pool, seed)?;
    let mut out = Artifacts::new("entities", a, ctx);
    out.add(&a.out, to_ndjson(&rendered.questions)?);
    out.commit()
}

fn cmd_index(ctx: &Context, a: &IndexArgs) -> Result<()> {
    let chunks = read_ndjson::<Chunk>(&a.chunks)?;
    let index = build_index(&chunks, &a.lang, ctx.jobs)?;
    let mut out = Artifacts::new("index", a, ctx);
    out.add(&a.out, index.to_json()?.into_bytes());
    out.commit()
}

fn load_index(path: &Path) -> Result<InvertedIndex> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    InvertedIndex::from_json(&text)
}

fn cmd_search(ctx: &Context, a: &SearchArgs) -> Result<()> {
    let index = load_index(&a.index)?;
    let k = a.k.or(ctx.cfg().and_then(|c| c.k)).unwrap_or(DEFAULT_TOP_K);
    let mut questions = ctx.questions(&a.questions)?;
    questions.retain(|q| q.lang == index.lang);
    if questions.is_empty() {
        return Err(Error::data(format!("no questions in the index language `{}`", index.lang)));
    }
    questions.sort_by(|x, y| x.id.cmp(&y.id));
    let mut records = Vec::with_capacity(questions.len());
    for q in &questions {
        let query = q.gold_claim()?;
        let hits = index.search(&query, k)?;
        records.push(SearchRecord {
            question_id: q.id.clone(),
            query,
            k,
            hits,
        });
    }
    let mut out = Artifacts::new("search", a, ctx);
    out.add(&a.out, to_ndjson(&records)?);
    out.commit()
}

fn cmd_judge(ctx: &Context, a: &JudgeArgs) -> Result<()> {
    let index = load_index(&a.index)?;
    let searches = read_ndjson::<SearchRecord>(&a.hits)?;
    let questions: BTreeMap<String, ClozeQuestion> =
        ctx.questions(&a.questions)?.into_iter().map(|q| (q.id.clone(), q)).collect();
    let spec = a
        .judge
        .clone()
        .or_else(|| ctx.cfg().and_then(|c| c.judge.clone()))
        .unwrap_or_else(|| "lexical".to_owned());
    let judge = open_judge(&spec, a.timeout)?;
    let mut cache = match &a.cache {
        Some(p) if p.exists() => JudgeCache::from_judgments(read_ndjson::<Judgment>(p)?),
        _ => JudgeCache::default(),
    };

    let mut items = Vec::new();
    for s in &searches {
        let q = questions
            .get(&s.question_id)
            .ok_or_else(|| Error::data(format!("hits name unknown question `{}`", s.question_id)))?;
        for h in &s.hits {
            let chunk = index
                .chunk(&h.chunk_id)
                .ok_or_else(|| Error::data(format!("chunk `{}` is not in the index", h.chunk_id)))?;
            items.push(JudgeItem {
                question: q,
                chunk_id: &chunk.chunk_id,
                chunk_text: &chunk.text,
            });
        }
    }
    let results = judge_items(judge.as_ref(), &mut cache, &items)?;
    let mut judgments = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(j) => judgments.push(j),
            Err(e) => failures.push(format!("{}: {}", e.id, e.message)),
        }
    }
    if !failures.is_empty() {
        return Err(Error::transport(format!(
            "{} judgments failed, first: {}",
            failures.len(),
            failures[0]
        )));
    }
    log::info!("{} judgments ({} from cache)", judgments.len(), cache.hits());
    let mut out = Artifacts::new("judge", a, ctx);
    out.add(&a.out, to_ndjson(&judgments)?);
    if let Some(p) = &a.cache {
        out.add(p, to_ndjson(&cache.judgments())?);
    }
    out.commit()
}

fn cmd_density(ctx: &Context, a: &DensityArgs) -> Result<()> {
    let manifest: crate::corpus::CorpusManifest = read_json(&a.manifest)?;
    let searches = read_ndjson::<SearchRecord>(&a.hits)?;
    let judgments = read_ndjson::<Judgment>(&a.judgments)?;
    let questions: BTreeMap<String, ClozeQuestion> =
        ctx.questions(&a.questions)?.into_iter().map(|q| (q.id.clone(), q)).collect();

    let mut by_question: BTreeMap<&str, Vec<Judgment>> = BTreeMap::new();
    for j in &judgments {
        by_question.entry(&j.question_id).or_default().push(j.clone());
    }
    let mut by_culture: BTreeMap<&str, Vec<OccurrenceRecord>> = BTreeMap::new();
    let mut records = Vec::new();
    for s in &searches {
        let q = questions
            .get(&s.question_id)
            .ok_or_else(|| Error::data(format!("hits name unknown question `{}`", s.question_id)))?;
        let js = by_question.get(q.id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        let r = occurrence_count(q, &manifest.label, &s.hits, s.k, js)?;
        by_culture.entry(&q.culture).or_default().push(r.clone());
        records.push(r);
    }
    let reports: Vec<DensityReport> = by_culture
        .iter()
        .map(|(culture, recs)| density_report(culture, recs, &manifest))
        .collect::<Result<_>>()?;

    let mut out = Artifacts::new("density", a, ctx);
    out.add_json(&a.out, &serde_json::json!({ "reports": reports }))?;
    let occ = a.occurrences.clone().unwrap_or_else(|| with_suffix(&a.out, ".occurrences.ndjson"));
    out.add(&occ, to_ndjson(&records)?);
    out.commit()
}

fn read_runs(paths: &[PathBuf]) -> Result<Vec<EvalRun>> {
    paths.iter().map(|p| read_json::<EvalRun>(p)).collect()
}

fn cmd_transfer(ctx: &Context, a: &TransferArgs) -> Result<()> {
    let runs = read_runs(&a.runs)?;
    crate::report::check_config_hashes(&runs, false)?;
    let histories = histories_from_runs(&runs)?;
    let mut records = Vec::new();
    for h in &histories {
        if let Some(r) = classify_transfer(h)? {
            records.push(r);
        }
    }
    let contrast = if a.occurrences.is_empty() {
        None
    } else {
        let mut occ = Vec::new();
        for p in &a.occurrences {
            occ.extend(read_ndjson::<OccurrenceRecord>(p)?);
        }
        let transferred: BTreeSet<String> = records.iter().map(|r| r.pair_id.clone()).collect();
        Some(occurrence_contrast(&transferred, &occ)?)
    };
    let summary = TransferSummary {
        en_to_xx: records.iter().filter(|r| r.direction == Direction::EnToXx).count(),
        xx_to_en: records.iter().filter(|r| r.direction == Direction::XxToEn).count(),
        pairs_considered: histories.len(),
        records,
        contrast,
    };
    let mut out = Artifacts::new("transfer", a, ctx);
    out.add_json(&a.out, &summary)?;
    out.commit()
}

#[derive(Deserialize)]
struct DensityFile {
    reports: Vec<DensityReport>,
}

fn cmd_report(ctx: &Context, a: &ReportArgs) -> Result<()> {
    let dir = a
        .out_dir
        .clone()
        .or_else(|| ctx.cfg().and_then(|c| c.output_dir.clone()))
        .ok_or_else(|| Error::config("pass --out-dir or set `output_dir` in --config"))?;
    if a.runs.is_empty() && a.density.is_empty() {
        return Err(Error::config("nothing to report: pass --runs and/or --density"));
    }
    let weight = a
        .ema_weight
        .or(ctx.cfg().and_then(|c| c.ema_weight))
        .unwrap_or(DEFAULT_EMA_WEIGHT);
    let mut out = Artifacts::new("report", a, ctx);
    let runs = read_runs(&a.runs)?;
    let mut by_lang: BTreeMap<String, Vec<EvalRun>> = BTreeMap::new();
    for r in runs {
        by_lang.entry(r.lang().to_owned()).or_default().push(r);
    }
    for (lang, runs) in &by_lang {
        let report = curve_report(runs, weight, a.force)?;
        out.add(&dir.join(format!("curves-{lang}.csv")), curves_csv(&report)?);
        out.add(&dir.join(format!("curves-{lang}.svg")), curves_svg(&report)?.into_bytes());
        out.add_json(&dir.join(format!("curves-{lang}.json")), &report)?;
    }
    if !a.density.is_empty() {
        let mut reports = Vec::new();
        for p in &a.density {
            reports.extend(read_json::<DensityFile>(p)?.reports);
        }
        out.add(&dir.join("density-table.csv"), density_table_csv(&reports)?);
    }
    out.commit()
}

fn cmd_serve_scorer(a: &ServeScorerArgs) -> Result<()> {
    let scorer = open_scorer(&a.scorer, None)?;
    let stdin = std::io::stdin().lock();
    let stdout = std::io::stdout().lock();
    serve_scorer(scorer.as_ref(), stdin, stdout, a.reverse)
}

fn cmd_serve_judge(a: &ServeJudgeArgs) -> Result<()> {
    let judge = a.threshold.map(LexicalJudge::new).unwrap_or_default();
    let stdin = std::io::stdin().lock();
    let stdout = std::io::stdout().lock();
    serve_judge(&judge, &a.lang, stdin, stdout, a.reverse)
}

fn cmd_fixture(ctx: &Context, a: &FixtureArgs) -> Result<()> {
    if let FixtureKind::Desk = a.kind {
        return fixtures::write_desk_fixture(&a.out, a.seed);
    }
    let bytes = match a.kind {
        FixtureKind::MixedScript => to_ndjson(&fixtures::mixed_script_corpus(a.count.unwrap_or(10_000), a.seed))?,
        FixtureKind::Pairs => to_ndjson(&fixtures::parallel_pairs(a.count.unwrap_or(1_000), a.seed))?,
        FixtureKind::Chunks => to_ndjson(&fixtures::retrieval_chunks(a.count.unwrap_or(1_000), 400, a.seed))?,
        FixtureKind::Desk => unreachable!(),
    };
    let mut out = Artifacts::new("fixture", a, ctx);
    out.add(&a.out, bytes);
    out.commit()
}

pub fn run(cli: Cli) -> Result<()> {
    let config = cli.config.as_deref().map(ExperimentConfig::load).transpose()?;
    if cli.jobs == Some(0) {
        return Err(Error::config("--jobs must be at least 1"));
    }
    let ctx = Context { config, jobs: cli.jobs };
    match &cli.command {
        Command::Filter(a) => cmd_filter(&ctx, a),
        Command::Chunk(a) => cmd_chunk(&ctx, a),
        Command::Bridge(a) => cmd_bridge(&ctx, a),
        Command::TrainNgram(a) => cmd_train(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Entities(a) => cmd_entities(&ctx, a),
        Command::Index(a) => cmd_index(&ctx, a),
        Command::Search(a) => cmd_search(&ctx, a),
        Command::Judge(a) => cmd_judge(&ctx, a),
        Command::Density(a) => cmd_density(&ctx, a),
        Command::Transfer(a) => cmd_transfer(&ctx, a),
        Command::Report(a) => cmd_report(&ctx, a),
        Command::ServeScorer(a) => cmd_serve_scorer(a),
        Command::ServeJudge(a) => cmd_serve_judge(a),
        Command::Fixture(a) => cmd_fixture(&ctx, a),
    }
}

/// Parses arguments, runs the subcommand and returns the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
