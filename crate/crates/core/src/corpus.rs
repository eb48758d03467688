//! Corpus documents, script-isolation filtering, chunking and manifests.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel::with_jobs;
use crate::script::{classify_char, classify_script, ScriptClass, ScriptProfile};

/// Default chunk length used before retrieval.
pub const DEFAULT_MAX_CHARS: usize = 5000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub lang: String,
    pub text: String,
    #[serde(default)]
    pub source: String,
}

impl Document {
    pub fn new(
        id: impl Into<String>,
        lang: impl Into<String>,
        text: impl Into<String>,
        source: impl Into<String>,
    ) -> Self {
        Document {
            id: id.into(),
            lang: lang.into(),
            text: text.into(),
            source: source.into(),
        }
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// The input text was already empty.
    EmptyInput,
    /// Only script-neutral characters survived the filter.
    NoAllowedScript,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedDocument {
    pub id: String,
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FilterOutcome {
    Kept(Document),
    Dropped(DroppedDocument),
}

impl FilterOutcome {
    pub fn kept(self) -> Option<Document> {
        match self {
            FilterOutcome::Kept(d) => Some(d),
            FilterOutcome::Dropped(_) => None,
        }
    }
}

/// Removes every code point whose class is outside `allowed ∪ {common}`.
///
/// Order of the surviving code points is preserved. A document left with no
/// code point from `allowed` itself is dropped.
pub fn filter_document(doc: &Document, allowed: &BTreeSet<ScriptClass>) -> FilterOutcome {
    if doc.text.is_empty() {
        return FilterOutcome::Dropped(DroppedDocument {
            id: doc.id.clone(),
            reason: DropReason::EmptyInput,
        });
    }
    let mut text = String::with_capacity(doc.text.len());
    let mut has_allowed = false;
    for c in doc.text.chars() {
        let class = classify_char(c);
        if class == ScriptClass::Common {
            text.push(c);
        } else if allowed.contains(&class) {
            has_allowed = true;
            text.push(c);
        }
    }
    if !has_allowed {
        return FilterOutcome::Dropped(DroppedDocument {
            id: doc.id.clone(),
            reason: DropReason::NoAllowedScript,
        });
    }
    FilterOutcome::Kept(Document {
        text,
        ..doc.clone()
    })
}

/// Result of filtering a whole corpus: kept documents sorted by id, plus
/// the drop log sorted by id.
#[derive(Debug, Clone, Default)]
pub struct FilteredCorpus {
    pub kept: Vec<Document>,
    pub dropped: Vec<DroppedDocument>,
}

pub fn filter_corpus(
    docs: &[Document],
    allowed: &BTreeSet<ScriptClass>,
    jobs: Option<usize>,
) -> Result<FilteredCorpus> {
    check_unique_ids(docs)?;
    let outcomes: Vec<FilterOutcome> = with_jobs(jobs, || {
        docs.par_iter().map(|d| filter_document(d, allowed)).collect()
    });
    let mut out = FilteredCorpus::default();
    for o in outcomes {
        match o {
            FilterOutcome::Kept(d) => out.kept.push(d),
            FilterOutcome::Dropped(d) => out.dropped.push(d),
        }
    }
    out.kept.sort_by(|a, b| a.id.cmp(&b.id));
    out.dropped.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

pub fn check_unique_ids(docs: &[Document]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for d in docs {
        if !seen.insert(d.id.as_str()) {
            return Err(Error::data(format!("duplicate document id `{}`", d.id)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub text: String,
    pub char_len: usize,
}

pub fn chunk_id(doc_id: &str, ordinal: usize) -> String {
    format!("{doc_id}#{ordinal}")
}

/// Code-point lengths of the chunks `text` splits into.
///
/// Within each window of `max_chars` code points the cut goes after the last
/// newline, else after the last whitespace, else at the window end.
fn chunk_lengths(chars: &[char], max_chars: usize) -> Vec<usize> {
    let mut lengths = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let remaining = chars.len() - start;
        if remaining <= max_chars {
            lengths.push(remaining);
            break;
        }
        let window = &chars[start..start + max_chars];
        let len = window
            .iter()
            .rposition(|&c| c == '\n')
            .or_else(|| window.iter().rposition(|c| c.is_whitespace()))
            .map(|i| i + 1)
            .unwrap_or(max_chars);
        lengths.push(len);
        start += len;
    }
    lengths
}

pub fn chunk_document(doc: &Document, max_chars: usize) -> Result<Vec<Chunk>> {
    if max_chars == 0 {
        return Err(Error::config("max_chars must be at least 1"));
    }
    let chars: Vec<char> = doc.text.chars().collect();
    let mut start = 0;
    let chunks = chunk_lengths(&chars, max_chars)
        .into_iter()
        .enumerate()
        .map(|(ordinal, len)| {
            let text: String = chars[start..start + len].iter().collect();
            start += len;
            Chunk {
                chunk_id: chunk_id(&doc.id, ordinal),
                doc_id: doc.id.clone(),
                text,
                char_len: len,
            }
        })
        .collect();
    Ok(chunks)
}

/// Chunks every document; output is ordered by (doc id, ordinal).
pub fn chunk_corpus(docs: &[Document], max_chars: usize, jobs: Option<usize>) -> Result<Vec<Chunk>> {
    let mut sorted: Vec<&Document> = docs.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let per_doc: Vec<Vec<Chunk>> = with_jobs(jobs, || {
        sorted
            .par_iter()
            .map(|d| chunk_document(d, max_chars))
            .collect::<Result<_>>()
    })?;
    Ok(per_doc.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub label: String,
    /// Language of the corpus, or `mixed` when documents disagree.
    pub lang: Option<String>,
    pub doc_count: u64,
    pub chunk_count: u64,
    pub max_chars: usize,
    pub total_code_points: u64,
    pub profile: ScriptProfile,
    #[serde(default)]
    pub dropped_count: u64,
    #[serde(default)]
    pub dropped_by_reason: BTreeMap<String, u64>,
    #[serde(default)]
    pub dropped: Vec<DroppedDocument>,
}

impl CorpusManifest {
    pub fn record_drops(&mut self, dropped: &[DroppedDocument]) {
        self.dropped_count = dropped.len() as u64;
        self.dropped_by_reason.clear();
        for d in dropped {
            let key = serde_json::to_value(d.reason)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default();
            *self.dropped_by_reason.entry(key).or_default() += 1;
        }
        self.dropped = dropped.to_vec();
    }
}

/// Exact per-corpus totals. Sums are order independent, so the manifest is
/// identical for any worker count.
pub fn corpus_stats(
    label: &str,
    docs: &[Document],
    max_chars: usize,
    jobs: Option<usize>,
) -> Result<CorpusManifest> {
    if max_chars == 0 {
        return Err(Error::config("max_chars must be at least 1"));
    }
    let per_doc: Vec<(ScriptProfile, u64)> = with_jobs(jobs, || {
        docs.par_iter()
            .map(|d| {
                let chars: Vec<char> = d.text.chars().collect();
                (
                    classify_script(&d.text),
                    chunk_lengths(&chars, max_chars).len() as u64,
                )
            })
            .collect()
    });
    let mut profile = ScriptProfile::default();
    let mut chunk_count = 0;
    for (p, c) in &per_doc {
        profile.merge(p);
        chunk_count += c;
    }
    let langs: BTreeSet<&str> = docs.iter().map(|d| d.lang.as_str()).collect();
    let lang = match langs.len() {
        0 => None,
        1 => langs.into_iter().next().map(str::to_owned),
        _ => Some("mixed".to_owned()),
    };
    Ok(CorpusManifest {
        label: label.to_owned(),
        lang,
        doc_count: docs.len() as u64,
        chunk_count,
        max_chars,
        total_code_points: profile.total(),
        profile,
        dropped_count: 0,
        dropped_by_reason: BTreeMap::new(),
        dropped: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(id: &str, text: &str) -> Document {
        Document::new(id, "en", text, "test")
    }

    fn set(classes: &[ScriptClass]) -> BTreeSet<ScriptClass> {
        classes.iter().copied().collect()
    }

    #[test]
    fn filter_keeps_latin_and_space() {
        let out = filter_document(&doc("d", "hello 你好"), &set(&[ScriptClass::Latin]));
        assert_eq!(out.kept().unwrap().text, "hello ");
    }

    #[test]
    fn filter_keeps_han() {
        let out = filter_document(&doc("d", "你好 world"), &set(&[ScriptClass::Han]));
        assert_eq!(out.kept().unwrap().text, "你好 ");
    }

    #[test]
    fn filter_drops_common_only() {
        let out = filter_document(&doc("d", ", . 123"), &set(&[ScriptClass::Latin]));
        assert_eq!(
            out,
            FilterOutcome::Dropped(DroppedDocument {
                id: "d".into(),
                reason: DropReason::NoAllowedScript
            })
        );
        let out = filter_document(&doc("e", ""), &set(&[ScriptClass::Latin]));
        assert!(matches!(
            out,
            FilterOutcome::Dropped(DroppedDocument {
                reason: DropReason::EmptyInput,
                ..
            })
        ));
    }

    #[test]
    fn filter_removes_fullwidth_punctuation_under_latin() {
        let out = filter_document(&doc("d", "Hi。"), &set(&[ScriptClass::Latin]));
        assert_eq!(out.kept().unwrap().text, "Hi");
    }

    #[test]
    fn hard_cut_arithmetic() {
        let d = doc("d", &"x".repeat(12_000));
        let lens: Vec<usize> = chunk_document(&d, 5000).unwrap().iter().map(|c| c.char_len).collect();
        assert_eq!(lens, vec![5000, 5000, 2000]);
    }

    #[test]
    fn exact_boundary_is_one_chunk() {
        let d = doc("d", &"x".repeat(5000));
        assert_eq!(chunk_document(&d, 5000).unwrap().len(), 1);
    }

    #[test]
    fn empty_doc_has_no_chunks() {
        assert!(chunk_document(&doc("d", ""), 10).unwrap().is_empty());
        assert!(chunk_document(&doc("d", "abc"), 0).is_err());
    }

    #[test]
    fn chunk_ids_follow_ordinals() {
        let chunks = chunk_document(&doc("doc1", "aaaa bbbb"), 5).unwrap();
        let ids: Vec<&str> = chunks.iter().map(|c| c.chunk_id.as_str()).collect();
        assert_eq!(ids, vec!["doc1#0", "doc1#1"]);
        assert_eq!(chunks[0].text, "aaaa ");
    }

    #[test]
    fn stats_counts() {
        let empty = corpus_stats("c", &[], 5000, None).unwrap();
        assert_eq!(empty.doc_count, 0);
        let docs: Vec<Document> = (0..3).map(|i| doc(&format!("d{i}"), "abcdefghij")).collect();
        let m = corpus_stats("c", &docs, 5000, None).unwrap();
        assert_eq!((m.doc_count, m.total_code_points, m.profile.latin), (3, 30, 30));
        assert_eq!(m.chunk_count, 3);
        assert_eq!(m.lang.as_deref(), Some("en"));
    }

    #[test]
    fn filter_corpus_rejects_duplicate_ids() {
        let docs = vec![doc("a", "x"), doc("a", "y")];
        assert!(filter_corpus(&docs, &set(&[ScriptClass::Latin]), None).is_err());
    }

    #[test]
    fn drops_are_tallied() {
        let docs = vec![doc("b", "..."), doc("a", "ok"), doc("c", "")];
        let filtered = filter_corpus(&docs, &set(&[ScriptClass::Latin]), Some(2)).unwrap();
        let mut m = corpus_stats("c", &filtered.kept, 5000, None).unwrap();
        m.record_drops(&filtered.dropped);
        assert_eq!(m.doc_count, 1);
        assert_eq!(m.dropped_count, 2);
        assert_eq!(m.dropped_by_reason["no_allowed_script"], 1);
        assert_eq!(m.dropped_by_reason["empty_input"], 1);
    }

    proptest! {
        #[test]
        fn filter_is_idempotent(text in "[a-zA-Z 你好안녕ༀ་ᠮ,.。0-9\n]{0,60}") {
            let allowed = set(&[ScriptClass::Latin]);
            let d = doc("d", &text);
            if let FilterOutcome::Kept(once) = filter_document(&d, &allowed) {
                let twice = filter_document(&once, &allowed).kept().unwrap();
                prop_assert_eq!(&once, &twice);
                prop_assert_eq!(classify_script(&once.text).foreign(&allowed), 0);
            }
        }

        #[test]
        fn chunking_is_lossless(text in "[ab \n]{0,300}", max in 1usize..40) {
            let d = doc("d", &text);
            let chunks = chunk_document(&d, max).unwrap();
            let joined: String = chunks.iter().map(|c| c.text.as_str()).collect();
            prop_assert_eq!(joined, text);
            for c in &chunks {
                prop_assert!(c.char_len <= max && c.char_len >= 1);
                prop_assert_eq!(c.char_len, c.text.chars().count());
            }
        }
    }
}
