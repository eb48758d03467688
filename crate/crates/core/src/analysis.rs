//! Occurrence counting, cultural density and transfer-instance analysis.
//!
//! Occurrences are counted per question as the number of top-k retrieved
//! chunks a judge marks as entailing the question's gold claim. Density
//! normalizes the summed occurrences of a culture's questions by question
//! count and corpus size. Transfer instances are pairs whose correctness
//! pattern across checkpoints shows knowledge crossing languages only when
//! bridges are present.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusManifest;
use crate::error::{Error, Result};
use crate::probing::{ClozeQuestion, EvalRun, Setting};
use crate::retrieval::{Judgment, RetrievalHit, BM25_B, BM25_K1};

pub const EN: &str = "en";
/// Checkpoints considered when classifying transfer.
pub const LAST_CHECKPOINTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccurrenceRecord {
    pub question_id: String,
    pub pair_id: String,
    pub corpus: String,
    pub entailed_count: usize,
    pub hits: usize,
    pub k: usize,
}

/// Counts hits whose judgment entails the question's claim.
///
/// Judgments for other questions are ignored; every hit must have one.
pub fn occurrence_count(
    question: &ClozeQuestion,
    corpus: &str,
    hits: &[RetrievalHit],
    k: usize,
    judgments: &[Judgment],
) -> Result<OccurrenceRecord> {
    if hits.len() > k {
        return Err(Error::data(format!(
            "question `{}` has {} hits, more than k = {k}",
            question.id,
            hits.len()
        )));
    }
    let verdicts: HashMap<&str, bool> = judgments
        .iter()
        .filter(|j| j.question_id == question.id)
        .map(|j| (j.chunk_id.as_str(), j.entails))
        .collect();
    let missing: Vec<&str> = hits
        .iter()
        .map(|h| h.chunk_id.as_str())
        .filter(|c| !verdicts.contains_key(c))
        .collect();
    if !missing.is_empty() {
        return Err(Error::data(format!(
            "question `{}` has no judgment for chunks: {}",
            question.id,
            missing.join(", ")
        )));
    }
    let entailed_count = hits.iter().filter(|h| verdicts[h.chunk_id.as_str()]).count();
    Ok(OccurrenceRecord {
        question_id: question.id.clone(),
        pair_id: question.pair_id.clone(),
        corpus: corpus.to_owned(),
        entailed_count,
        hits: hits.len(),
        k,
    })
}

/// Densities of one culture's knowledge in one corpus.
///
/// `density` is `total_entailed / (question_count · doc_count)`. The raw
/// counts are kept so the other readings can be recomputed exactly;
/// `density_per_doc` drops the question normalization and
/// `density_per_chunk` normalizes by chunks instead of documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub culture: String,
    pub corpus: String,
    pub corpus_lang: Option<String>,
    pub question_count: u64,
    pub total_entailed: u64,
    pub doc_count: u64,
    pub chunk_count: u64,
    pub k: usize,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub density: f64,
    pub density_rendered: String,
    pub density_per_doc: f64,
    pub density_per_chunk: f64,
}

/// Scientific notation with three significant digits, e.g. `9.19e-6`.
pub fn render_density(value: f64) -> String {
    format!("{value:.2e}")
}

pub fn density_report(culture: &str, records: &[OccurrenceRecord], manifest: &CorpusManifest) -> Result<DensityReport> {
    if records.is_empty() {
        return Err(Error::data(format!("no occurrence records for culture `{culture}`")));
    }
    if manifest.doc_count == 0 {
        return Err(Error::data(format!("corpus `{}` has no documents", manifest.label)));
    }
    if let Some(r) = records.iter().find(|r| r.corpus != manifest.label) {
        return Err(Error::data(format!(
            "record for `{}` comes from corpus `{}`, expected `{}`",
            r.question_id, r.corpus, manifest.label
        )));
    }
    let mut ids = BTreeSet::new();
    for r in records {
        if !ids.insert(r.question_id.as_str()) {
            return Err(Error::data(format!("duplicate occurrence record for `{}`", r.question_id)));
        }
    }
    let ks: BTreeSet<usize> = records.iter().map(|r| r.k).collect();
    if ks.len() != 1 {
        return Err(Error::data(format!("records mix retrieval depths {ks:?}")));
    }
    let q = records.len() as u64;
    let total: u64 = records.iter().map(|r| r.entailed_count as u64).sum();
    let density = total as f64 / (q as f64 * manifest.doc_count as f64);
    let density_per_chunk = if manifest.chunk_count == 0 {
        0.0
    } else {
        total as f64 / (q as f64 * manifest.chunk_count as f64)
    };
    Ok(DensityReport {
        culture: culture.to_owned(),
        corpus: manifest.label.clone(),
        corpus_lang: manifest.lang.clone(),
        question_count: q,
        total_entailed: total,
        doc_count: manifest.doc_count,
        chunk_count: manifest.chunk_count,
        k: records[0].k,
        bm25_k1: BM25_K1,
        bm25_b: BM25_B,
        density,
        density_rendered: render_density(density),
        density_per_doc: total as f64 / manifest.doc_count as f64,
        density_per_chunk,
    })
}

/// Table with one row per culture and one column per corpus language side.
pub fn density_table_csv(reports: &[DensityReport]) -> Result<Vec<u8>> {
    let mut rows: BTreeMap<&str, [Option<&str>; 2]> = BTreeMap::new();
    for r in reports {
        let slot = usize::from(r.corpus_lang.as_deref() != Some(EN));
        let row = rows.entry(&r.culture).or_default();
        if row[slot].is_some() {
            return Err(Error::data(format!(
                "two {} reports for culture `{}`",
                if slot == 0 { "English-corpus" } else { "non-English-corpus" },
                r.culture
            )));
        }
        row[slot] = Some(&r.density_rendered);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::data(format!("csv: {e}"));
    w.write_record(["culture", "en_corpus", "non_en_corpus"]).map_err(io)?;
    for (culture, [en, xx]) in rows {
        w.write_record([culture, en.unwrap_or(""), xx.unwrap_or("")]).map_err(io)?;
    }
    w.into_inner().map_err(|e| Error::data(format!("csv: {e}")))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectnessSeries {
    pub setting: Setting,
    pub lang: String,
    /// `(step, correct)`, strictly increasing in step.
    pub points: Vec<(u64, bool)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointHistory {
    pub pair_id: String,
    pub non_en_lang: String,
    pub series: Vec<CorrectnessSeries>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    EnToXx,
    XxToEn,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub pair_id: String,
    pub direction: Direction,
    pub en_correct_at_step0: bool,
    /// Non-English correctness at the last no-bridge checkpoints.
    pub no_bridge_source: Vec<bool>,
    /// Target-language correctness at the last bridge checkpoints.
    pub bridge_target: Vec<bool>,
}

impl CheckpointHistory {
    fn series(&self, setting: Setting, lang: &str) -> Option<&CorrectnessSeries> {
        self.series.iter().find(|s| s.setting == setting && s.lang == lang)
    }

    fn check_steps(s: &CorrectnessSeries, pair_id: &str) -> Result<()> {
        if s.points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::data(format!(
                "pair `{pair_id}`: {} {} steps are not strictly increasing",
                s.setting, s.lang
            )));
        }
        Ok(())
    }

    /// English correctness of the shared base model. Both settings start
    /// from it, so a step-0 point in either series counts; they must agree.
    pub fn en_step0(&self) -> Result<bool> {
        let points: BTreeSet<bool> = self
            .series
            .iter()
            .filter(|s| s.lang == EN)
            .flat_map(|s| s.points.iter().filter(|p| p.0 == 0).map(|p| p.1))
            .collect();
        match points.len() {
            1 => Ok(points.into_iter().next().unwrap_or_default()),
            0 => Err(Error::data(format!("pair `{}` has no English step-0 result", self.pair_id))),
            _ => Err(Error::data(format!(
                "pair `{}` has conflicting English step-0 results",
                self.pair_id
            ))),
        }
    }

    /// Correctness at the three largest steps after step 0.
    pub fn last_checkpoints(&self, setting: Setting, lang: &str) -> Result<Vec<bool>> {
        let s = self.series(setting, lang).ok_or_else(|| {
            Error::data(format!("pair `{}` has no {setting} series for `{lang}`", self.pair_id))
        })?;
        Self::check_steps(s, &self.pair_id)?;
        let after: Vec<bool> = s.points.iter().filter(|p| p.0 > 0).map(|p| p.1).collect();
        if after.len() < LAST_CHECKPOINTS {
            return Err(Error::data(format!(
                "pair `{}`: {setting} series for `{lang}` has {} checkpoints after step 0, need {LAST_CHECKPOINTS}",
                self.pair_id,
                after.len()
            )));
        }
        Ok(after[after.len() - LAST_CHECKPOINTS..].to_vec())
    }
}

pub fn classify_transfer(history: &CheckpointHistory) -> Result<Option<TransferRecord>> {
    let xx = history.non_en_lang.as_str();
    let en_step0 = history.en_step0()?;
    let no_bridge_xx = history.last_checkpoints(Setting::NoBridge, xx)?;
    let bridge_en = history.last_checkpoints(Setting::Bridge, EN)?;
    let bridge_xx = history.last_checkpoints(Setting::Bridge, xx)?;
    let all = |v: &[bool]| v.iter().all(|&b| b);
    let none = |v: &[bool]| v.iter().all(|&b| !b);

    let xx_to_en = !en_step0 && all(&no_bridge_xx) && all(&bridge_en);
    let en_to_xx = en_step0 && none(&no_bridge_xx) && all(&bridge_xx);
    assert!(!(xx_to_en && en_to_xx), "step-0 clauses are exclusive");

    let record = |direction, bridge_target: Vec<bool>| TransferRecord {
        pair_id: history.pair_id.clone(),
        direction,
        en_correct_at_step0: en_step0,
        no_bridge_source: no_bridge_xx.clone(),
        bridge_target,
    };
    Ok(if xx_to_en {
        Some(record(Direction::XxToEn, bridge_en))
    } else if en_to_xx {
        Some(record(Direction::EnToXx, bridge_xx))
    } else {
        None
    })
}

/// Regroups per-checkpoint evaluation runs into per-pair histories.
///
type Points = BTreeMap<u64, bool>;

/// Runs must cover English and exactly one other language. Unevaluable
/// questions leave gaps in their series.
pub fn histories_from_runs(runs: &[EvalRun]) -> Result<Vec<CheckpointHistory>> {
    let langs: BTreeSet<&str> = runs.iter().map(|r| r.lang()).filter(|l| *l != EN).collect();
    let non_en = match langs.len() {
        1 => langs.into_iter().next().unwrap_or_default().to_owned(),
        0 => return Err(Error::data("runs contain no non-English evaluation")),
        _ => return Err(Error::data(format!("runs mix non-English languages {langs:?}"))),
    };
    let mut table: BTreeMap<&str, BTreeMap<(Setting, &str), Points>> = BTreeMap::new();
    for run in runs {
        for q in &run.questions {
            let series = table
                .entry(q.pair_id.as_str())
                .or_default()
                .entry((run.setting(), run.lang()))
                .or_default();
            if series.insert(run.step(), q.correct).is_some() {
                return Err(Error::data(format!(
                    "pair `{}` answered twice at {} step {} in `{}`",
                    q.pair_id,
                    run.setting(),
                    run.step(),
                    run.lang()
                )));
            }
        }
    }
    Ok(table
        .into_iter()
        .map(|(pair_id, series)| CheckpointHistory {
            pair_id: pair_id.to_owned(),
            non_en_lang: non_en.clone(),
            series: series
                .into_iter()
                .map(|((setting, lang), points)| CorrectnessSeries {
                    setting,
                    lang: lang.to_owned(),
                    points: points.into_iter().collect(),
                })
                .collect(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastRow {
    pub corpus: String,
    pub transferred_count: u64,
    pub transferred_total: u64,
    /// Absent when no transferred instance has a record in this corpus.
    pub transferred_mean: Option<String>,
    pub all_count: u64,
    pub all_total: u64,
    pub all_mean: Option<String>,
}

/// `total / count` rounded half up to one decimal, computed exactly.
pub fn render_mean(total: u64, count: u64) -> Option<String> {
    if count == 0 {
        return None;
    }
    let tenths = (20 * total as u128 + count as u128) / (2 * count as u128);
    Some(format!("{}.{}", tenths / 10, tenths % 10))
}

/// Mean occurrence of transferred pairs against all pairs, per corpus.
pub fn occurrence_contrast(transferred: &BTreeSet<String>, records: &[OccurrenceRecord]) -> Result<Vec<ContrastRow>> {
    let known: BTreeSet<&str> = records.iter().map(|r| r.pair_id.as_str()).collect();
    if let Some(p) = transferred.iter().find(|p| !known.contains(p.as_str())) {
        return Err(Error::data(format!("transferred pair `{p}` has no occurrence record")));
    }
    let mut by_corpus: BTreeMap<&str, [u64; 4]> = BTreeMap::new();
    for r in records {
        let row = by_corpus.entry(&r.corpus).or_default();
        row[2] += 1;
        row[3] += r.entailed_count as u64;
        if transferred.contains(&r.pair_id) {
            row[0] += 1;
            row[1] += r.entailed_count as u64;
        }
    }
    Ok(by_corpus
        .into_iter()
        .map(|(corpus, [tc, tt, ac, at])| ContrastRow {
            corpus: corpus.to_owned(),
            transferred_count: tc,
            transferred_total: tt,
            transferred_mean: render_mean(tt, tc),
            all_count: ac,
            all_total: at,
            all_mean: render_mean(at, ac),
        })
        .collect())
}
