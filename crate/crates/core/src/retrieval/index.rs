use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tokenize::{tokenize_for_index, TOKENIZER_VERSION};
use crate::corpus::Chunk;
use crate::error::{Error, Result};
use crate::parallel::with_jobs;

pub const INDEX_FORMAT: &str = "cb-index/1";
pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;
pub const DEFAULT_TOP_K: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    /// Position of the chunk in the index's chunk table.
    pub chunk: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexedChunk {
    pub chunk_id: String,
    pub doc_id: String,
    /// Length in index terms.
    pub len: u32,
    pub text: String,
}

/// BM25 inverted index over chunks, ordered by chunk id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    pub format: String,
    pub tokenizer: String,
    pub lang: String,
    chunks: Vec<IndexedChunk>,
    postings: BTreeMap<String, Vec<Posting>>,
    total_len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub chunk_id: String,
    pub doc_id: String,
    pub score: f64,
    pub rank: usize,
}

/// Builds the index. Chunks are sorted by id before postings are merged, so
/// the result does not depend on ingest order or worker count.
pub fn build_index(chunks: &[Chunk], lang: &str, jobs: Option<usize>) -> Result<InvertedIndex> {
    if chunks.is_empty() {
        return Err(Error::data("cannot index an empty chunk stream"));
    }
    let mut sorted: Vec<&Chunk> = chunks.iter().collect();
    sorted.sort_by(|a, b| a.chunk_id.cmp(&b.chunk_id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].chunk_id == w[1].chunk_id) {
        return Err(Error::data(format!("duplicate chunk id `{}`", w[0].chunk_id)));
    }
    if sorted.len() > u32::MAX as usize {
        return Err(Error::data("too many chunks for one index"));
    }
    let term_counts: Vec<(u32, BTreeMap<String, u32>)> = with_jobs(jobs, || {
        sorted
            .par_iter()
            .map(|c| {
                let terms = tokenize_for_index(&c.text, lang);
                let mut tf = BTreeMap::new();
                for t in &terms {
                    *tf.entry(t.clone()).or_insert(0u32) += 1;
                }
                (terms.len() as u32, tf)
            })
            .collect()
    });

    let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
    let mut indexed = Vec::with_capacity(sorted.len());
    let mut total_len = 0u64;
    for (i, (chunk, (len, tf))) in sorted.iter().zip(term_counts).enumerate() {
        for (term, count) in tf {
            postings.entry(term).or_default().push(Posting {
                chunk: i as u32,
                tf: count,
            });
        }
        total_len += len as u64;
        indexed.push(IndexedChunk {
            chunk_id: chunk.chunk_id.clone(),
            doc_id: chunk.doc_id.clone(),
            len,
            text: chunk.text.clone(),
        });
    }
    Ok(InvertedIndex {
        format: INDEX_FORMAT.to_owned(),
        tokenizer: TOKENIZER_VERSION.to_owned(),
        lang: lang.to_owned(),
        chunks: indexed,
        postings,
        total_len,
    })
}

/// One BM25 term contribution with the +1-inside-log IDF.
pub fn bm25_term(tf: f64, df: f64, n: f64, len: f64, avg_len: f64) -> f64 {
    let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
    idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * (1.0 - BM25_B + BM25_B * len / avg_len))
}

impl InvertedIndex {
    pub fn chunk_count(&self) -> usize {
        self.chunks.len()
    }

    pub fn avg_len(&self) -> f64 {
        self.total_len as f64 / self.chunks.len() as f64
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&IndexedChunk> {
        self.chunks
            .binary_search_by(|c| c.chunk_id.as_str().cmp(chunk_id))
            .ok()
            .map(|i| &self.chunks[i])
    }

    pub fn chunks(&self) -> &[IndexedChunk] {
        &self.chunks
    }

    /// Top-`k` chunks by Okapi BM25 (`k1 = 1.2`, `b = 0.75`).
    ///
    /// Query terms are treated as a set. Ties are broken by chunk id and
    /// zero-score chunks are never returned.
    pub fn search(&self, query: &str, k: usize) -> Result<Vec<RetrievalHit>> {
        if k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        let terms: BTreeSet<String> = tokenize_for_index(query, &self.lang).into_iter().collect();
        let n = self.chunks.len() as f64;
        let avg_len = self.avg_len();
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in &terms {
            let postings = self.postings(term);
            let df = postings.len() as f64;
            for p in postings {
                let len = self.chunks[p.chunk as usize].len as f64;
                *scores.entry(p.chunk).or_insert(0.0) += bm25_term(p.tf as f64, df, n, len, avg_len);
            }
        }
        let mut ranked: Vec<(u32, f64)> = scores.into_iter().filter(|&(_, s)| s > 0.0).collect();
        // chunk table is sorted by id, so the position breaks ties by chunk id
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(k);
        Ok(ranked
            .into_iter()
            .enumerate()
            .map(|(i, (c, score))| {
                let chunk = &self.chunks[c as usize];
                RetrievalHit {
                    chunk_id: chunk.chunk_id.clone(),
                    doc_id: chunk.doc_id.clone(),
                    score,
                    rank: i + 1,
                }
            })
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses a persisted index, rejecting other formats or tokenizer tags.
    pub fn from_json(json: &str) -> Result<Self> {
        let index: InvertedIndex = serde_json::from_str(json)?;
        if index.format != INDEX_FORMAT {
            return Err(Error::data(format!(
                "index format `{}` is not {INDEX_FORMAT}",
                index.format
            )));
        }
        if index.tokenizer != TOKENIZER_VERSION {
            return Err(Error::data(format!(
                "index was built with tokenizer `{}`, this build uses {TOKENIZER_VERSION}",
                index.tokenizer
            )));
        }
        if index.chunks.is_empty() {
            return Err(Error::data("index has no chunks"));
        }
        Ok(index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk(id: &str, text: &str) -> Chunk {
        Chunk {
            chunk_id: id.into(),
            doc_id: id.split('#').next().unwrap().into(),
            text: text.into(),
            char_len: text.chars().count(),
        }
    }

    #[test]
    fn postings_by_direct_counting() {
        let idx = build_index(&[chunk("c1", "a b a")], "en", None).unwrap();
        assert_eq!(idx.postings("a"), &[Posting { chunk: 0, tf: 2 }]);
        assert_eq!(idx.postings("b"), &[Posting { chunk: 0, tf: 1 }]);
        assert_eq!(idx.chunk_count(), 1);
        assert_eq!(idx.avg_len(), 3.0);
    }

    #[test]
    fn duplicate_and_empty_inputs() {
        assert!(build_index(&[], "en", None).is_err());
        assert!(build_index(&[chunk("c", "a"), chunk("c", "b")], "en", None).is_err());
    }

    #[test]
    fn single_chunk_score() {
        let idx = build_index(&[chunk("c1", "a a b")], "en", None).unwrap();
        let hits = idx.search("a", 50).unwrap();
        assert_eq!(hits.len(), 1);
        // idf = ln(0.5/1.5 + 1), tf part = 2·2.2/(2 + 1.2)
        let want = (4.0f64 / 3.0).ln() * 1.375;
        assert!((hits[0].score - want).abs() < 1e-12);
    }

    #[test]
    fn absent_terms_and_small_corpora() {
        let idx = build_index(&[chunk("a", "x y"), chunk("b", "y z"), chunk("c", "q")], "en", None).unwrap();
        assert!(idx.search("nothing", 10).unwrap().is_empty());
        assert_eq!(idx.search("y", 10).unwrap().len(), 2);
        assert!(idx.search("y", 0).is_err());
    }

    #[test]
    fn ties_break_by_chunk_id() {
        let idx = build_index(&[chunk("b", "x"), chunk("a", "x"), chunk("c", "x")], "en", None).unwrap();
        let hits = idx.search("x", 2).unwrap();
        let ids: Vec<&str> = hits.iter().map(|h| h.chunk_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b"]);
        assert_eq!(hits[1].rank, 2);
    }

    #[test]
    fn ingest_order_and_jobs_do_not_matter() {
        let chunks: Vec<Chunk> = (0..50).map(|i| chunk(&format!("d{i}#0"), &format!("w{} w{} common", i % 7, i % 3))).collect();
        let mut reversed = chunks.clone();
        reversed.reverse();
        let a = build_index(&chunks, "en", Some(1)).unwrap();
        let b = build_index(&reversed, "en", Some(4)).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn persisted_tokenizer_tag_is_checked() {
        let idx = build_index(&[chunk("c", "a")], "en", None).unwrap();
        let back = InvertedIndex::from_json(&idx.to_json().unwrap()).unwrap();
        assert_eq!(back, idx);
        let stale = idx.to_json().unwrap().replace(TOKENIZER_VERSION, "cb-tok/0");
        assert!(InvertedIndex::from_json(&stale).is_err());
    }

    #[test]
    fn extra_occurrence_never_lowers_score() {
        let base = build_index(&[chunk("a", "x y z"), chunk("b", "y y")], "en", None).unwrap();
        let more = build_index(&[chunk("a", "x x y z"), chunk("b", "y y")], "en", None).unwrap();
        let score = |idx: &InvertedIndex| idx.search("x", 5).unwrap()[0].score;
        assert!(score(&more) >= score(&base));
    }
}
