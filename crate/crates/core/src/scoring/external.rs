use serde_json::{Map, Value};

use super::{ItemError, ItemResult, ScoreResult, Scorer};
use crate::error::Result;
use crate::protocol::{ProtocolClient, Transport};

pub const SCORER_PROTOCOL: &str = "scorer/1";

/// Per-text length cap enforced before anything is sent.
pub const MAX_TEXT_CODE_POINTS: usize = 32_768;

/// Client for a `scorer/1` server.
#[derive(Debug, Clone)]
pub struct ExternalScorer {
    client: ProtocolClient,
}

impl ExternalScorer {
    pub fn new(transport: Transport) -> Self {
        ExternalScorer {
            client: ProtocolClient::new(transport, SCORER_PROTOCOL),
        }
    }

    pub fn with_timeout(mut self, timeout: std::time::Duration) -> Self {
        self.client = self.client.with_timeout(timeout);
        self
    }
}

fn parse_response(id: &str, obj: &Map<String, Value>) -> ItemResult<ScoreResult> {
    let err = |message: String| ItemError {
        id: id.to_owned(),
        message,
    };
    if let Some(e) = obj.get("error") {
        return Err(err(format!("scorer error: {e}")));
    }
    let logprob = obj
        .get("logprob")
        .and_then(Value::as_f64)
        .ok_or_else(|| err("malformed response: missing numeric `logprob`".into()))?;
    let tokens = obj
        .get("tokens")
        .and_then(Value::as_u64)
        .ok_or_else(|| err("malformed response: missing integer `tokens`".into()))?;
    ScoreResult::new(logprob, tokens).map_err(|e| err(e.to_string()))
}

impl Scorer for ExternalScorer {
    fn identity(&self) -> String {
        format!("external({})", self.client.transport.describe())
    }

    fn score_batch(&self, texts: &[String]) -> Result<Vec<ItemResult<ScoreResult>>> {
        let mut results: Vec<Option<ItemResult<ScoreResult>>> = vec![None; texts.len()];
        let mut requests = Vec::new();
        for (i, text) in texts.iter().enumerate() {
            let id = i.to_string();
            let len = text.chars().count();
            if len > MAX_TEXT_CODE_POINTS {
                results[i] = Some(Err(ItemError {
                    id,
                    message: format!("text has {len} code points, limit {MAX_TEXT_CODE_POINTS}"),
                }));
                continue;
            }
            let mut fields = Map::new();
            fields.insert("text".into(), Value::String(text.clone()));
            requests.push((id, fields));
        }
        let responses = if requests.is_empty() {
            Vec::new()
        } else {
            self.client.exchange(&requests)?
        };
        for ((id, _), response) in requests.iter().zip(responses) {
            let i: usize = id.parse().expect("numeric request id");
            results[i] = Some(response.and_then(|obj| parse_response(id, &obj)));
        }
        Ok(results.into_iter().map(|r| r.expect("every slot filled")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(json: &str) -> Map<String, Value> {
        serde_json::from_str(json).unwrap()
    }

    #[test]
    fn parses_valid_response() {
        let r = parse_response("0", &obj(r#"{"id":"0","logprob":-1.0,"tokens":1}"#)).unwrap();
        assert!((r.perplexity - std::f64::consts::E).abs() < 1e-12);
    }

    #[test]
    fn zero_tokens_is_item_error() {
        let e = parse_response("3", &obj(r#"{"id":"3","logprob":-1.0,"tokens":0}"#)).unwrap_err();
        assert_eq!(e.id, "3");
    }

    #[test]
    fn malformed_and_error_responses() {
        assert!(parse_response("0", &obj(r#"{"id":"0","tokens":1}"#)).is_err());
        assert!(parse_response("0", &obj(r#"{"id":"0","logprob":"x","tokens":1}"#)).is_err());
        assert!(parse_response("0", &obj(r#"{"id":"0","error":"boom"}"#)).is_err());
    }

    #[test]
    fn overlong_text_never_sent() {
        // spawning this program would fail the whole batch with a transport error
        let scorer = ExternalScorer::new(Transport::Stdio {
            program: "/nonexistent/scorer".into(),
            args: vec![],
        });
        let long = "a".repeat(MAX_TEXT_CODE_POINTS + 1);
        let out = scorer.score_batch(&[long]).unwrap();
        assert!(out[0].as_ref().unwrap_err().message.contains("limit"));
        assert!(scorer.score_batch(&["short".into()]).is_err());
    }
}
