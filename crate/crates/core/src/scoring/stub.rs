//! Deterministic stand-in scorers and the reference `scorer/1` server.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde_json::{Map, Value};

use super::{ItemError, ItemResult, ScoreResult, Scorer, SCORER_PROTOCOL};
use crate::error::Result;
use crate::protocol::serve;

/// Returns the same result for every text, so all candidates tie.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantScorer {
    pub logprob: f64,
    pub tokens: u64,
}

impl ConstantScorer {
    pub fn uniform() -> Self {
        ConstantScorer {
            logprob: -1.0,
            tokens: 1,
        }
    }
}

impl Scorer for ConstantScorer {
    fn identity(&self) -> String {
        format!("constant(logprob={},tokens={})", self.logprob, self.tokens)
    }

    fn score_batch(&self, texts: &[String]) -> Result<Vec<ItemResult<ScoreResult>>> {
        Ok(texts
            .iter()
            .enumerate()
            .map(|(i, _)| {
                ScoreResult::new(self.logprob, self.tokens).map_err(|e| ItemError {
                    id: i.to_string(),
                    message: e.to_string(),
                })
            })
            .collect())
    }
}

/// Looks up a fixed perplexity per text; unknown texts fail as items.
#[derive(Debug, Clone, Default)]
pub struct TableScorer {
    perplexities: HashMap<String, f64>,
}

impl TableScorer {
    pub fn new(entries: impl IntoIterator<Item = (String, f64)>) -> Self {
        TableScorer {
            perplexities: entries.into_iter().collect(),
        }
    }
}

impl Scorer for TableScorer {
    fn identity(&self) -> String {
        format!("table({} entries)", self.perplexities.len())
    }

    fn score_batch(&self, texts: &[String]) -> Result<Vec<ItemResult<ScoreResult>>> {
        Ok(texts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let err = |message: String| ItemError {
                    id: i.to_string(),
                    message,
                };
                let ppl = self
                    .perplexities
                    .get(t)
                    .ok_or_else(|| err(format!("no perplexity for {t:?}")))?;
                ScoreResult::new(-ppl.ln(), 1).map_err(|e| err(e.to_string()))
            })
            .collect())
    }
}

/// Serves `scorer/1` over a line stream using any in-process scorer.
pub fn serve_scorer<R: BufRead, W: Write>(scorer: &dyn Scorer, input: R, output: W, reverse: bool) -> Result<()> {
    serve(SCORER_PROTOCOL, input, output, reverse, |req| {
        let text = req
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| "request has no string `text`".to_owned())?;
        let result = scorer
            .score_batch(&[text.to_owned()])
            .map_err(|e| e.to_string())?
            .pop()
            .ok_or_else(|| "scorer returned nothing".to_owned())?
            .map_err(|e| e.message)?;
        let mut out = Map::new();
        out.insert("logprob".into(), Value::from(result.logprob_sum));
        out.insert("tokens".into(), Value::from(result.token_count));
        Ok(out)
    })
}
