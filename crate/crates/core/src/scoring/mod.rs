//! Text scorers used by cloze probing.
//!
//! A scorer maps a text to its summed natural-log probability and the number
//! of scored events. Two implementations ship: a character n-gram model
//! trained in-process, and a client for external scorers speaking the
//! `scorer/1` NDJSON protocol.

mod external;
mod ngram;
pub mod stub;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use external::{ExternalScorer, MAX_TEXT_CODE_POINTS, SCORER_PROTOCOL};
pub use ngram::{train_ngram, NGramModel, Symbol};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    pub logprob_sum: f64,
    pub token_count: u64,
    pub perplexity: f64,
}

impl ScoreResult {
    /// Builds a result, rejecting non-finite or positive log-probabilities
    /// and empty token counts.
    pub fn new(logprob_sum: f64, token_count: u64) -> Result<Self> {
        if token_count == 0 {
            return Err(Error::data("token count must be at least 1"));
        }
        if !logprob_sum.is_finite() {
            return Err(Error::data(format!("non-finite log-probability {logprob_sum}")));
        }
        if logprob_sum > 0.0 {
            return Err(Error::data(format!("positive log-probability {logprob_sum}")));
        }
        Ok(ScoreResult {
            logprob_sum,
            token_count,
            perplexity: (-logprob_sum / token_count as f64).exp(),
        })
    }
}

/// Failure scoring a single text; the rest of the batch is unaffected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemError {
    pub id: String,
    pub message: String,
}

impl std::fmt::Display for ItemError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "request {}: {}", self.id, self.message)
    }
}

pub type ItemResult<T> = std::result::Result<T, ItemError>;

pub trait Scorer: Send + Sync {
    /// Stable identity recorded in run files.
    fn identity(&self) -> String;

    /// Scores every text, returning results in input order. The outer error
    /// is reserved for transport failures that abort the whole batch.
    fn score_batch(&self, texts: &[String]) -> Result<Vec<ItemResult<ScoreResult>>>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perplexity_of_unit_logprob() {
        let r = ScoreResult::new(-1.0, 1).unwrap();
        assert!((r.perplexity - std::f64::consts::E).abs() < 1e-12);
    }

    #[test]
    fn perplexity_recomputes() {
        let r = ScoreResult::new(-7.25, 4).unwrap();
        let again = (-r.logprob_sum / r.token_count as f64).exp();
        assert!(((r.perplexity - again) / again).abs() < 1e-12);
        assert!(r.perplexity >= 1.0);
    }

    #[test]
    fn invalid_results_are_rejected() {
        assert!(ScoreResult::new(-1.0, 0).is_err());
        assert!(ScoreResult::new(f64::NAN, 1).is_err());
        assert!(ScoreResult::new(f64::NEG_INFINITY, 1).is_err());
        assert!(ScoreResult::new(0.5, 1).is_err());
    }
}
