use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::tokenize::tokenize_for_index;
use crate::error::Result;
use crate::probing::ClozeQuestion;
use crate::protocol::{serve, ProtocolClient, Transport};
use crate::scoring::{ItemError, ItemResult};

pub const JUDGE_PROTOCOL: &str = "judge/1";
pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 0.5;
const TRANSPORT_ATTEMPTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub claim: String,
    pub document: String,
    /// Language of the claim and document, used by lexical judges.
    pub lang: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub question_id: String,
    pub chunk_id: String,
    pub entails: bool,
    pub judge: String,
}

pub trait Judge: Send + Sync {
    fn identity(&self) -> String;

    /// One verdict per request, in order. Failures are per item.
    fn judge_batch(&self, requests: &[JudgeRequest]) -> Vec<ItemResult<bool>>;
}

fn stopword_list(lang: &str) -> &'static str {
    match lang {
        "en" => include_str!("../../data/stopwords/en.txt"),
        "zh" => include_str!("../../data/stopwords/zh.txt"),
        "ko" => include_str!("../../data/stopwords/ko.txt"),
        "bo" => include_str!("../../data/stopwords/bo.txt"),
        "mn" => include_str!("../../data/stopwords/mn.txt"),
        _ => "",
    }
}

/// Entails when at least `threshold` of the claim's content terms occur in
/// the document. Content terms are index terms minus the language's
/// stopwords; a claim without content terms never entails.
#[derive(Debug, Clone)]
pub struct LexicalJudge {
    threshold: f64,
    stopwords: HashMap<String, HashSet<String>>,
}

impl Default for LexicalJudge {
    fn default() -> Self {
        LexicalJudge::new(DEFAULT_OVERLAP_THRESHOLD)
    }
}

impl LexicalJudge {
    pub fn new(threshold: f64) -> Self {
        let stopwords = ["en", "zh", "ko", "bo", "mn"]
            .into_iter()
            .map(|lang| {
                let words = stopword_list(lang)
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty() && !l.starts_with('#'))
                    .map(str::to_owned)
                    .collect();
                (lang.to_owned(), words)
            })
            .collect();
        LexicalJudge { threshold, stopwords }
    }

    pub fn content_terms(&self, text: &str, lang: &str) -> BTreeSet<String> {
        let stop = self.stopwords.get(lang);
        tokenize_for_index(text, lang)
            .into_iter()
            .filter(|t| stop.is_none_or(|s| !s.contains(t)))
            .collect()
    }

    /// Fraction of claim content terms present in the document.
    pub fn overlap(&self, claim: &str, document: &str, lang: &str) -> Option<f64> {
        let claim_terms = self.content_terms(claim, lang);
        if claim_terms.is_empty() {
            return None;
        }
        let doc_terms: HashSet<String> = tokenize_for_index(document, lang).into_iter().collect();
        let present = claim_terms.iter().filter(|t| doc_terms.contains(*t)).count();
        Some(present as f64 / claim_terms.len() as f64)
    }

    pub fn entails(&self, claim: &str, document: &str, lang: &str) -> bool {
        self.overlap(claim, document, lang).is_some_and(|o| o >= self.threshold)
    }
}

impl Judge for LexicalJudge {
    fn identity(&self) -> String {
        format!("lexical(threshold={})", self.threshold)
    }

    fn judge_batch(&self, requests: &[JudgeRequest]) -> Vec<ItemResult<bool>> {
        requests
            .iter()
            .map(|r| Ok(self.entails(&r.claim, &r.document, &r.lang)))
            .collect()
    }
}

/// Client for a `judge/1` server. A transport failure is retried; if every
/// attempt fails, each request in the batch receives an item error.
#[derive(Debug, Clone)]
pub struct ExternalJudge {
    client: ProtocolClient,
}

impl ExternalJudge {
    pub fn new(transport: Transport) -> Self {
        ExternalJudge {
            client: ProtocolClient::new(transport, JUDGE_PROTOCOL),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.client = self.client.with_timeout(timeout);
        self
    }
}

impl Judge for ExternalJudge {
    fn identity(&self) -> String {
        format!("external({})", self.client.transport.describe())
    }

    fn judge_batch(&self, requests: &[JudgeRequest]) -> Vec<ItemResult<bool>> {
        if requests.is_empty() {
            return Vec::new();
        }
        let wire: Vec<(String, Map<String, Value>)> = requests
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut m = Map::new();
                m.insert("claim".into(), Value::String(r.claim.clone()));
                m.insert("document".into(), Value::String(r.document.clone()));
                (i.to_string(), m)
            })
            .collect();
        let mut last_error = String::new();
        for attempt in 1..=TRANSPORT_ATTEMPTS {
            match self.client.exchange(&wire) {
                Ok(responses) => {
                    return responses
                        .into_iter()
                        .enumerate()
                        .map(|(i, r)| {
                            let obj = r?;
                            if let Some(e) = obj.get("error") {
                                return Err(ItemError {
                                    id: i.to_string(),
                                    message: format!("judge error: {e}"),
                                });
                            }
                            obj.get("entails").and_then(Value::as_bool).ok_or_else(|| ItemError {
                                id: i.to_string(),
                                message: "malformed response: missing boolean `entails`".into(),
                            })
                        })
                        .collect();
                }
                Err(e) => {
                    log::warn!("judge transport attempt {attempt}/{TRANSPORT_ATTEMPTS} failed: {e}");
                    last_error = e.to_string();
                }
            }
        }
        (0..requests.len())
            .map(|i| {
                Err(ItemError {
                    id: i.to_string(),
                    message: last_error.clone(),
                })
            })
            .collect()
    }
}

/// Verdicts keyed by (judge identity, question id, chunk id).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JudgeCache {
    entries: BTreeMap<(String, String, String), bool>,
    hits: usize,
}

impl JudgeCache {
    pub fn from_judgments(judgments: impl IntoIterator<Item = Judgment>) -> Self {
        let mut cache = JudgeCache::default();
        for j in judgments {
            cache.insert(&j);
        }
        cache
    }

    pub fn get(&self, judge: &str, question_id: &str, chunk_id: &str) -> Option<bool> {
        self.entries
            .get(&(judge.to_owned(), question_id.to_owned(), chunk_id.to_owned()))
            .copied()
    }

    pub fn insert(&mut self, j: &Judgment) {
        self.entries
            .insert((j.judge.clone(), j.question_id.clone(), j.chunk_id.clone()), j.entails);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Lookups answered from the cache so far.
    pub fn hits(&self) -> usize {
        self.hits
    }

    pub fn judgments(&self) -> Vec<Judgment> {
        self.entries
            .iter()
            .map(|((judge, q, c), &entails)| Judgment {
                question_id: q.clone(),
                chunk_id: c.clone(),
                entails,
                judge: judge.clone(),
            })
            .collect()
    }
}

/// A chunk presented to the judge.
#[derive(Debug, Clone, Copy)]
pub struct JudgeItem<'a> {
    pub question: &'a ClozeQuestion,
    pub chunk_id: &'a str,
    pub chunk_text: &'a str,
}

/// Judges whether each chunk entails its question's gold-completed claim.
///
/// Cached verdicts are reused; the rest go to the judge in one batch and are
/// added to the cache.
pub fn judge_items(judge: &dyn Judge, cache: &mut JudgeCache, items: &[JudgeItem<'_>]) -> Result<Vec<ItemResult<Judgment>>> {
    let identity = judge.identity();
    let mut out: Vec<Option<ItemResult<Judgment>>> = vec![None; items.len()];
    let mut pending = Vec::new();
    let mut requests = Vec::new();
    for (i, item) in items.iter().enumerate() {
        if let Some(entails) = cache.get(&identity, &item.question.id, item.chunk_id) {
            cache.hits += 1;
            out[i] = Some(Ok(Judgment {
                question_id: item.question.id.clone(),
                chunk_id: item.chunk_id.to_owned(),
                entails,
                judge: identity.clone(),
            }));
            continue;
        }
        requests.push(JudgeRequest {
            claim: item.question.gold_claim()?,
            document: item.chunk_text.to_owned(),
            lang: item.question.lang.clone(),
        });
        pending.push(i);
    }
    for (i, verdict) in pending.into_iter().zip(judge.judge_batch(&requests)) {
        let item = &items[i];
        out[i] = Some(match verdict {
            Ok(entails) => {
                let j = Judgment {
                    question_id: item.question.id.clone(),
                    chunk_id: item.chunk_id.to_owned(),
                    entails,
                    judge: identity.clone(),
                };
                cache.insert(&j);
                Ok(j)
            }
            Err(e) => Err(ItemError {
                id: format!("{}/{}", item.question.id, item.chunk_id),
                message: e.message,
            }),
        });
    }
    Ok(out.into_iter().map(|o| o.expect("every item judged")).collect())
}

pub fn judge_entailment(
    judge: &dyn Judge,
    cache: &mut JudgeCache,
    question: &ClozeQuestion,
    chunk_id: &str,
    chunk_text: &str,
) -> Result<ItemResult<Judgment>> {
    let item = JudgeItem {
        question,
        chunk_id,
        chunk_text,
    };
    Ok(judge_items(judge, cache, &[item])?.remove(0))
}

/// Serves `judge/1` over a line stream with an in-process judge.
pub fn serve_judge<R: std::io::BufRead, W: std::io::Write>(
    judge: &dyn Judge,
    lang: &str,
    input: R,
    output: W,
    reverse: bool,
) -> Result<()> {
    serve(JUDGE_PROTOCOL, input, output, reverse, |req| {
        let field = |name: &str| {
            req.get(name)
                .and_then(Value::as_str)
                .map(str::to_owned)
                .ok_or_else(|| format!("request has no string `{name}`"))
        };
        let request = JudgeRequest {
            claim: field("claim")?,
            document: field("document")?,
            lang: lang.to_owned(),
        };
        let entails = judge
            .judge_batch(&[request])
            .pop()
            .ok_or_else(|| "judge returned nothing".to_owned())?
            .map_err(|e| e.message)?;
        let mut out = Map::new();
        out.insert("entails".into(), Value::Bool(entails));
        Ok(out)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn question(text: &str, gold: &str) -> ClozeQuestion {
        ClozeQuestion {
            id: "q1".into(),
            pair_id: "p1".into(),
            culture: "c".into(),
            lang: "en".into(),
            text: text.into(),
            candidates: vec![gold.into(), "b".into(), "c".into(), "d".into()],
            gold_index: 0,
        }
    }

    #[test]
    fn containment_entails() {
        let j = LexicalJudge::default();
        let claim = "The capital of Korea is Seoul.";
        assert!(j.entails(claim, &format!("Intro. {claim} More text."), "en"));
    }

    #[test]
    fn disjoint_does_not_entail() {
        let j = LexicalJudge::default();
        assert!(!j.entails("Kimchi is fermented cabbage.", "Rivers flow downhill.", "en"));
    }

    #[test]
    fn half_overlap_is_the_boundary() {
        let j = LexicalJudge::default();
        let claim = "alpha beta gamma delta";
        assert_eq!(j.content_terms(claim, "en").len(), 4);
        assert_eq!(j.overlap(claim, "alpha beta", "en"), Some(0.5));
        assert!(j.entails(claim, "alpha beta", "en"));
        assert!(!j.entails(claim, "alpha", "en"));
    }

    #[test]
    fn stopwords_are_not_content() {
        let j = LexicalJudge::default();
        assert!(j.content_terms("the of and", "en").is_empty());
        assert!(!j.entails("the of and", "the of and", "en"));
        assert_eq!(j.content_terms("长城是在北京的", "zh").len(), 4);
    }

    #[test]
    fn cache_serves_repeats_identically() {
        let judge = LexicalJudge::default();
        let q = question("Dokdo lies in the ____ Sea.", "East");
        let mut cache = JudgeCache::default();
        let first = judge_entailment(&judge, &mut cache, &q, "c1", "Dokdo East Sea").unwrap().unwrap();
        let second = judge_entailment(&judge, &mut cache, &q, "c1", "ignored on a cache hit").unwrap().unwrap();
        assert!(first.entails);
        assert_eq!(first, second);
        assert_eq!(cache.hits(), 1);
        assert_eq!(cache.len(), 1);
        let rebuilt = JudgeCache::from_judgments(cache.judgments());
        assert_eq!(rebuilt.get(&judge.identity(), "q1", "c1"), Some(true));
    }

    #[test]
    fn unreachable_judge_yields_item_errors() {
        let judge = ExternalJudge::new(Transport::Stdio {
            program: "/nonexistent/judge".into(),
            args: vec![],
        });
        let q = question("x ____", "y");
        let mut cache = JudgeCache::default();
        let r = judge_entailment(&judge, &mut cache, &q, "c", "text").unwrap();
        assert!(r.is_err());
        assert!(cache.is_empty());
    }

    #[test]
    fn reference_server_speaks_judge_1() {
        let input = "{\"id\":\"a\",\"claim\":\"alpha beta\",\"document\":\"alpha beta gamma\"}\n{\"id\":\"b\",\"claim\":\"x\"}\n";
        let mut out = Vec::new();
        serve_judge(&LexicalJudge::default(), "en", input.as_bytes(), &mut out, false).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], r#"{"protocol":"judge/1"}"#);
        assert_eq!(lines[1], r#"{"entails":true,"id":"a"}"#);
        assert!(lines[2].contains("error"));
    }
}
