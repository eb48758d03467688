//! BM25 retrieval over corpus chunks and entailment judging of the hits.

mod index;
mod judge;
mod tokenize;

pub use index::{
    bm25_term, build_index, IndexedChunk, InvertedIndex, Posting, RetrievalHit, BM25_B, BM25_K1, DEFAULT_TOP_K,
    INDEX_FORMAT,
};
pub use judge::{
    judge_entailment, judge_items, serve_judge, ExternalJudge, Judge, JudgeCache, JudgeItem, JudgeRequest, Judgment,
    LexicalJudge, DEFAULT_OVERLAP_THRESHOLD, JUDGE_PROTOCOL,
};
pub use tokenize::{tokenize_for_index, TOKENIZER_VERSION};
