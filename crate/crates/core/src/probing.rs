//! Cloze probing: fill the blank with each candidate, score the four
//! statements, predict the lowest-perplexity candidate.
//!
//! Also holds the per-checkpoint accuracy curves built from evaluation runs,
//! EMA smoothing for display, the bridged-minus-unbridged transfer gap, and
//! template-based entity question generation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scoring::{ScoreResult, Scorer};
use crate::shuffle::SeededRng;

pub const BLANK: &str = "____";
pub const CANDIDATES: usize = 4;
pub const DEFAULT_EMA_WEIGHT: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClozeQuestion {
    pub id: String,
    pub pair_id: String,
    pub culture: String,
    pub lang: String,
    pub text: String,
    pub candidates: Vec<String>,
    pub gold_index: usize,
}

impl ClozeQuestion {
    pub fn validate(&self) -> Result<()> {
        let markers = self.text.matches(BLANK).count();
        if markers != 1 {
            return Err(Error::data(format!(
                "question `{}` has {markers} blank markers, expected exactly one",
                self.id
            )));
        }
        if self.candidates.len() != CANDIDATES {
            return Err(Error::data(format!(
                "question `{}` has {} candidates, expected {CANDIDATES}",
                self.id,
                self.candidates.len()
            )));
        }
        if self.candidates.iter().any(String::is_empty) {
            return Err(Error::data(format!("question `{}` has an empty candidate", self.id)));
        }
        if self.gold_index >= CANDIDATES {
            return Err(Error::data(format!(
                "question `{}` gold index {} out of range",
                self.id, self.gold_index
            )));
        }
        Ok(())
    }

    /// The statement with the gold answer filled in.
    pub fn gold_claim(&self) -> Result<String> {
        instantiate(self, self.gold_index)
    }
}

/// Replaces the single blank with candidate `index`, verbatim.
pub fn instantiate(q: &ClozeQuestion, index: usize) -> Result<String> {
    let candidate = q.candidates.get(index).ok_or_else(|| {
        Error::data(format!("question `{}` has no candidate {index}", q.id))
    })?;
    let mut parts = q.text.split(BLANK);
    let (Some(before), Some(after), None) = (parts.next(), parts.next(), parts.next()) else {
        return Err(Error::data(format!(
            "question `{}` must contain exactly one blank marker",
            q.id
        )));
    };
    Ok(format!("{before}{candidate}{after}"))
}

/// Index of the smallest perplexity; the lowest index wins ties.
pub fn argmin_perplexity(perplexities: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &p) in perplexities.iter().enumerate() {
        if !p.is_finite() {
            return None;
        }
        if best.is_none_or(|(_, b)| p < b) {
            best = Some((i, p));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub index: usize,
    pub perplexities: Vec<f64>,
}

fn prediction_from(results: Vec<std::result::Result<ScoreResult, String>>) -> std::result::Result<Prediction, String> {
    let perplexities = results
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.map(|s| s.perplexity).map_err(|e| format!("candidate {i}: {e}")))
        .collect::<std::result::Result<Vec<f64>, String>>()?;
    let index = argmin_perplexity(&perplexities).ok_or_else(|| "non-finite perplexity".to_owned())?;
    Ok(Prediction { index, perplexities })
}

/// Scores the four filled-in statements and returns the argmin.
///
/// A scorer failure on any candidate is a data error (the question is
/// unevaluable); transport failures propagate as they are.
pub fn predict(q: &ClozeQuestion, scorer: &dyn Scorer) -> Result<Prediction> {
    q.validate()?;
    let texts = (0..CANDIDATES).map(|i| instantiate(q, i)).collect::<Result<Vec<_>>>()?;
    let results = scorer
        .score_batch(&texts)?
        .into_iter()
        .map(|r| r.map_err(|e| e.message))
        .collect();
    prediction_from(results).map_err(|e| Error::data(format!("question `{}` is unevaluable: {e}", q.id)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Bridge,
    NoBridge,
}

impl Setting {
    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Bridge => "bridge",
            Setting::NoBridge => "no_bridge",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bridge" | "bridged" => Ok(Setting::Bridge),
            "no_bridge" | "no-bridge" | "unbridged" => Ok(Setting::NoBridge),
            other => Err(Error::config(format!("setting must be bridge or no_bridge, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scorer: String,
    pub setting: Setting,
    pub step: u64,
    pub lang: String,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub pair_id: String,
    pub gold_index: usize,
    pub predicted: usize,
    pub correct: bool,
    pub perplexities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnevaluableRecord {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub config: RunConfig,
    pub total: usize,
    pub evaluated: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub questions: Vec<QuestionRecord>,
    pub unevaluable: Vec<UnevaluableRecord>,
}

impl EvalRun {
    pub fn setting(&self) -> Setting {
        self.config.setting
    }

    pub fn step(&self) -> u64 {
        self.config.step
    }

    pub fn lang(&self) -> &str {
        &self.config.lang
    }
}

/// Evaluates a question set at one checkpoint.
///
/// Unevaluable questions are excluded from both numerator and denominator
/// and listed in the run. Records are sorted by question id, so the run is
/// independent of scoring order.
pub fn evaluate(questions: &[ClozeQuestion], scorer: &dyn Scorer, setting: Setting, step: u64) -> Result<EvalRun> {
    let first = questions.first().ok_or_else(|| Error::data("empty question set"))?;
    let lang = first.lang.clone();
    let mut ids = BTreeSet::new();
    let mut texts = Vec::with_capacity(questions.len() * CANDIDATES);
    for q in questions {
        if q.lang != lang {
            return Err(Error::data(format!(
                "question `{}` is `{}` but the set is `{lang}`",
                q.id, q.lang
            )));
        }
        if !ids.insert(q.id.as_str()) {
            return Err(Error::data(format!("duplicate question id `{}`", q.id)));
        }
        q.validate()?;
        for i in 0..CANDIDATES {
            texts.push(instantiate(q, i)?);
        }
    }
    let mut results = scorer.score_batch(&texts)?.into_iter();

    let mut records = Vec::new();
    let mut unevaluable = Vec::new();
    for q in questions {
        let scores = results.by_ref().take(CANDIDATES).map(|r| r.map_err(|e| e.message)).collect();
        match prediction_from(scores) {
            Ok(p) => records.push(QuestionRecord {
                id: q.id.clone(),
                pair_id: q.pair_id.clone(),
                gold_index: q.gold_index,
                predicted: p.index,
                correct: p.index == q.gold_index,
                perplexities: p.perplexities,
            }),
            Err(reason) => unevaluable.push(UnevaluableRecord { id: q.id.clone(), reason }),
        }
    }
    if records.is_empty() {
        return Err(Error::data(format!(
            "all {} questions were unevaluable",
            questions.len()
        )));
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    unevaluable.sort_by(|a, b| a.id.cmp(&b.id));
    let correct = records.iter().filter(|r| r.correct).count();
    Ok(EvalRun {
        config: RunConfig {
            scorer: scorer.identity(),
            setting,
            step,
            lang,
            seed: None,
            config_hash: None,
        },
        total: questions.len(),
        evaluated: records.len(),
        correct,
        accuracy: correct as f64 / records.len() as f64,
        questions: records,
        unevaluable,
    })
}

/// Points with strictly increasing steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    points: Vec<(u64, f64)>,
}

impl CurveSeries {
    pub fn new(points: Vec<(u64, f64)>) -> Result<Self> {
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::data("curve steps must be strictly increasing"));
        }
        Ok(CurveSeries { points })
    }

    pub fn points(&self) -> &[(u64, f64)] {
        &self.points
    }

    pub fn steps(&self) -> Vec<u64> {
        self.points.iter().map(|p| p.0).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn get(&self, step: u64) -> Option<f64> {
        self.points
            .binary_search_by_key(&step, |p| p.0)
            .ok()
            .map(|i| self.points[i].1)
    }
}

/// Accuracy per step for one setting and language.
pub fn accuracy_curve<'a>(runs: impl IntoIterator<Item = &'a EvalRun>) -> Result<CurveSeries> {
    let mut points: Vec<(u64, f64)> = runs.into_iter().map(|r| (r.step(), r.accuracy)).collect();
    points.sort_by_key(|p| p.0);
    CurveSeries::new(points)
}

/// `1 − w` rounded to 15 significant digits, so a decimal weight such as
/// 0.8 yields exactly the double nearest 0.2.
fn decimal_complement(w: f64) -> f64 {
    let c = 1.0 - w;
    format!("{c:.14e}").parse().unwrap_or(c)
}

/// `s_0 = x_0`, `s_t = weight·s_{t-1} + (1 − weight)·x_t`, evaluated as
/// `s_{t-1} + (1 − weight)·(x_t − s_{t-1})` so constant runs stay exact.
pub fn ema_smooth(series: &CurveSeries, weight: f64) -> Result<CurveSeries> {
    if !(0.0..1.0).contains(&weight) {
        return Err(Error::config(format!("EMA weight must lie in [0, 1), got {weight}")));
    }
    if series.is_empty() {
        return Err(Error::data("cannot smooth an empty series"));
    }
    let keep_new = decimal_complement(weight);
    let mut prev: Option<f64> = None;
    let points = series
        .points
        .iter()
        .map(|&(step, x)| {
            let s = match prev {
                None => x,
                Some(p) => p + keep_new * (x - p),
            };
            prev = Some(s);
            (step, s)
        })
        .collect();
    Ok(CurveSeries { points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferGap {
    pub gap: CurveSeries,
    /// Steps present in only one of the two series.
    pub dropped_steps: Vec<u64>,
}

/// Pointwise `bridge − no_bridge` over the shared steps of the raw curves.
pub fn transfer_gap(bridge: &CurveSeries, no_bridge: &CurveSeries) -> Result<TransferGap> {
    let mut points = Vec::new();
    let mut dropped = Vec::new();
    for &(step, b) in &bridge.points {
        match no_bridge.get(step) {
            Some(n) => points.push((step, b - n)),
            None => dropped.push(step),
        }
    }
    for &(step, _) in &no_bridge.points {
        if bridge.get(step).is_none() {
            dropped.push(step);
        }
    }
    dropped.sort_unstable();
    if points.is_empty() {
        return Err(Error::data("bridge and no-bridge curves share no checkpoint step"));
    }
    if !dropped.is_empty() {
        log::warn!("step grids differ; gap computed on the intersection, dropped steps {dropped:?}");
    }
    Ok(TransferGap {
        gap: CurveSeries { points },
        dropped_steps: dropped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Nationality,
    DateOfBirth,
    PlaceOfBirth,
    Occupation,
    Education,
}

impl Attribute {
    pub const ALL: [Attribute; 5] = [
        Attribute::Nationality,
        Attribute::DateOfBirth,
        Attribute::PlaceOfBirth,
        Attribute::Occupation,
        Attribute::Education,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Attribute::Nationality => "nationality",
            Attribute::DateOfBirth => "date_of_birth",
            Attribute::PlaceOfBirth => "place_of_birth",
            Attribute::Occupation => "occupation",
            Attribute::Education => "education",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nationality: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date_of_birth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub place_of_birth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occupation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub education: Option<String>,
}

impl EntityRecord {
    pub fn get(&self, attr: Attribute) -> Option<&str> {
        match attr {
            Attribute::Nationality => self.nationality.as_deref(),
            Attribute::DateOfBirth => self.date_of_birth.as_deref(),
            Attribute::PlaceOfBirth => self.place_of_birth.as_deref(),
            Attribute::Occupation => self.occupation.as_deref(),
            Attribute::Education => self.education.as_deref(),
        }
        .filter(|v| !v.is_empty())
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::data("entity record with an empty name"));
        }
        if Attribute::ALL.iter().all(|&a| self.get(a).is_none()) {
            return Err(Error::data(format!("entity `{}` has no attributes", self.name)));
        }
        Ok(())
    }
}

/// Cloze templates for one language, keyed by attribute. Each contains
/// `{person}` and the blank marker exactly once.
pub type EntityTemplates = BTreeMap<Attribute, String>;

pub fn default_entity_templates(lang: &str) -> Option<EntityTemplates> {
    let pairs: [(Attribute, &str); 5] = match lang {
        "en" => [
            (Attribute::Nationality, "{person} is a citizen of ____."),
            (Attribute::DateOfBirth, "{person} was born on ____."),
            (Attribute::PlaceOfBirth, "{person} was born in ____."),
            (Attribute::Occupation, "{person} works as ____."),
            (Attribute::Education, "{person} was educated at ____."),
        ],
        "zh" => [
            (Attribute::Nationality, "{person}的国籍是____。"),
            (Attribute::DateOfBirth, "{person}出生于____。"),
            (Attribute::PlaceOfBirth, "{person}出生在____。"),
            (Attribute::Occupation, "{person}的职业是____。"),
            (Attribute::Education, "{person}毕业于____。"),
        ],
        _ => return None,
    };
    Some(pairs.into_iter().map(|(a, t)| (a, t.to_owned())).collect())
}

fn validate_template(attr: Attribute, template: &str) -> Result<()> {
    if template.matches("{person}").count() != 1 || template.matches(BLANK).count() != 1 {
        return Err(Error::config(format!(
            "{} template must contain {{person}} and {BLANK} exactly once: {template:?}",
            attr.as_str()
        )));
    }
    Ok(())
}

/// Distinct attribute values that distractors are drawn from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistractorPool(pub BTreeMap<Attribute, BTreeSet<String>>);

impl DistractorPool {
    pub fn from_records(records: &[EntityRecord]) -> Self {
        let mut pool: BTreeMap<Attribute, BTreeSet<String>> = BTreeMap::new();
        for r in records {
            for attr in Attribute::ALL {
                if let Some(v) = r.get(attr) {
                    pool.entry(attr).or_default().insert(v.to_owned());
                }
            }
        }
        DistractorPool(pool)
    }
}

fn question_seed(seed: u64, name: &str, attr: Attribute) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    h.update([0]);
    h.update(attr.as_str().as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EntityQuestions {
    pub questions: Vec<ClozeQuestion>,
    pub warnings: Vec<String>,
}

/// Builds one multiple-choice question per (record, attribute with a
/// template and a value). Distractors and the gold position are drawn from
/// a per-(seed, person, attribute) stream, so every language receives the
/// same candidate order and the pair shares a `pair_id`.
pub fn render_entity_questions(
    records: &[EntityRecord],
    templates: &EntityTemplates,
    lang: &str,
    culture: &str,
    pool: &DistractorPool,
    seed: u64,
) -> Result<EntityQuestions> {
    for (&attr, t) in templates {
        validate_template(attr, t)?;
    }
    let mut out = EntityQuestions::default();
    let mut sorted: Vec<&EntityRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    for record in sorted {
        record.validate()?;
        for (&attr, template) in templates {
            let Some(gold) = record.get(attr) else { continue };
            let values = pool.0.get(&attr);
            let mut distractors: Vec<&String> = values
                .map(|v| v.iter().filter(|x| x.as_str() != gold).collect())
                .unwrap_or_default();
            if values.map_or(0, BTreeSet::len) < CANDIDATES || distractors.len() < CANDIDATES - 1 {
                out.warnings.push(format!(
                    "skipping {} of `{}`: distractor pool too small",
                    attr.as_str(),
                    record.name
                ));
                continue;
            }
            let mut rng = SeededRng::new(question_seed(seed, &record.name, attr));
            rng.shuffle(&mut distractors);
            let mut candidates: Vec<String> = std::iter::once(gold.to_owned())
                .chain(distractors.into_iter().take(CANDIDATES - 1).cloned())
                .collect();
            rng.shuffle(&mut candidates);
            let gold_index = candidates.iter().position(|c| c == gold).expect("gold present");
            let pair_id = format!("entity:{}:{}", attr.as_str(), record.name);
            out.questions.push(ClozeQuestion {
                id: format!("{pair_id}:{lang}"),
                pair_id,
                culture: culture.to_owned(),
                lang: lang.to_owned(),
                text: template.replacen("{person}", &record.name, 1),
                candidates,
                gold_index,
            });
        }
    }
    for w in &out.warnings {
        log::warn!("{w}");
    }
    Ok(out)
}
