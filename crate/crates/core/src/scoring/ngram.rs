use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ItemResult, ScoreResult, Scorer};
use crate::corpus::Document;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Symbol {
    Bos,
    Eos,
    Unk,
    Char(char),
}

impl From<Symbol> for String {
    fn from(s: Symbol) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for Symbol {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        match s.as_str() {
            "<s>" => Ok(Symbol::Bos),
            "</s>" => Ok(Symbol::Eos),
            "<unk>" => Ok(Symbol::Unk),
            _ => {
                let mut chars = s.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => Ok(Symbol::Char(c)),
                    _ => Err(format!("invalid n-gram symbol {s:?}")),
                }
            }
        }
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Bos => f.write_str("<s>"),
            Symbol::Eos => f.write_str("</s>"),
            Symbol::Unk => f.write_str("<unk>"),
            Symbol::Char(c) => write!(f, "{c}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct ContextCounts {
    total: u64,
    next: BTreeMap<Symbol, u64>,
}

/// Add-k smoothed character n-gram model.
///
/// The prediction vocabulary is every observed code point plus EOS and UNK,
/// plus BOS when `order >= 2` (BOS then occurs in contexts and receives
/// smoothing mass like any other symbol). For every context the distribution
/// `(c(ctx, s) + k) / (c(ctx) + k·|V|)` sums to one over that vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NGramModel {
    order: usize,
    k: f64,
    vocab: BTreeSet<char>,
    #[serde(with = "context_table")]
    contexts: HashMap<Vec<Symbol>, ContextCounts>,
}

mod context_table {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Row {
        context: Vec<Symbol>,
        total: u64,
        next: BTreeMap<Symbol, u64>,
    }

    pub fn serialize<S: Serializer>(
        table: &HashMap<Vec<Symbol>, ContextCounts>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let mut rows: Vec<Row> = table
            .iter()
            .map(|(ctx, c)| Row {
                context: ctx.clone(),
                total: c.total,
                next: c.next.clone(),
            })
            .collect();
        rows.sort_by(|a, b| a.context.cmp(&b.context));
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<HashMap<Vec<Symbol>, ContextCounts>, D::Error> {
        let rows = Vec::<Row>::deserialize(d)?;
        Ok(rows
            .into_iter()
            .map(|r| {
                (
                    r.context,
                    ContextCounts {
                        total: r.total,
                        next: r.next,
                    },
                )
            })
            .collect())
    }
}

pub fn train_ngram<'a, I>(corpus: I, order: usize, k: f64) -> Result<NGramModel>
where
    I: IntoIterator<Item = &'a Document>,
{
    if order == 0 {
        return Err(Error::config("n-gram order must be at least 1"));
    }
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::config(format!("smoothing constant must be positive, got {k}")));
    }
    let mut vocab = BTreeSet::new();
    let mut contexts: HashMap<Vec<Symbol>, ContextCounts> = HashMap::new();
    let mut docs = 0usize;
    for doc in corpus {
        docs += 1;
        let mut seq = vec![Symbol::Bos; order - 1];
        for c in doc.text.chars() {
            vocab.insert(c);
            seq.push(Symbol::Char(c));
        }
        seq.push(Symbol::Eos);
        for window in seq.windows(order) {
            let (ctx, sym) = window.split_at(order - 1);
            let entry = contexts.entry(ctx.to_vec()).or_default();
            entry.total += 1;
            *entry.next.entry(sym[0]).or_default() += 1;
        }
    }
    if docs == 0 {
        return Err(Error::data("cannot train an n-gram model on an empty corpus"));
    }
    Ok(NGramModel {
        order,
        k,
        vocab,
        contexts,
    })
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len() + 2 + usize::from(self.order >= 2)
    }

    /// Every symbol that carries probability mass.
    pub fn vocabulary(&self) -> Vec<Symbol> {
        let mut v: Vec<Symbol> = self.vocab.iter().map(|&c| Symbol::Char(c)).collect();
        v.push(Symbol::Eos);
        v.push(Symbol::Unk);
        if self.order >= 2 {
            v.push(Symbol::Bos);
        }
        v
    }

    fn map_char(&self, c: char) -> Symbol {
        if self.vocab.contains(&c) {
            Symbol::Char(c)
        } else {
            Symbol::Unk
        }
    }

    /// `p(symbol | context)`; `context` must hold `order - 1` symbols.
    pub fn prob(&self, context: &[Symbol], symbol: Symbol) -> f64 {
        let symbol = match symbol {
            Symbol::Char(c) => self.map_char(c),
            other => other,
        };
        let (count, total) = match self.contexts.get(context) {
            Some(c) => (c.next.get(&symbol).copied().unwrap_or(0), c.total),
            None => (0, 0),
        };
        (count as f64 + self.k) / (total as f64 + self.k * self.vocab_size() as f64)
    }

    pub fn score(&self, text: &str) -> ScoreResult {
        let mut seq = vec![Symbol::Bos; self.order - 1];
        seq.extend(text.chars().map(|c| self.map_char(c)));
        seq.push(Symbol::Eos);
        let logprob: f64 = seq
            .windows(self.order)
            .map(|w| {
                let (ctx, sym) = w.split_at(self.order - 1);
                self.prob(ctx, sym[0]).ln()
            })
            .sum();
        let tokens = text.chars().count() as u64 + 1;
        ScoreResult {
            logprob_sum: logprob,
            token_count: tokens,
            perplexity: (-logprob / tokens as f64).exp(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let model: NGramModel = serde_json::from_str(json)?;
        if model.order == 0 || model.k.is_nan() || model.k <= 0.0 {
            return Err(Error::data("invalid n-gram model parameters"));
        }
        Ok(model)
    }
}

impl Scorer for NGramModel {
    fn identity(&self) -> String {
        format!("ngram(order={},k={},vocab={})", self.order, self.k, self.vocab_size())
    }

    fn score_batch(&self, texts: &[String]) -> Result<Vec<ItemResult<ScoreResult>>> {
        Ok(texts.par_iter().map(|t| Ok(self.score(t))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(texts: &[&str]) -> Vec<Document> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document::new(format!("d{i}"), "xx", *t, "t"))
            .collect()
    }

    #[test]
    fn unigram_hand_counts() {
        let m = train_ngram(&corpus(&["ab"]), 1, 1.0).unwrap();
        assert_eq!(m.vocab_size(), 4);
        assert!((m.prob(&[], Symbol::Char('a')) - 2.0 / 7.0).abs() < 1e-15);
        assert!((m.prob(&[], Symbol::Eos) - 2.0 / 7.0).abs() < 1e-15);
        assert!((m.prob(&[], Symbol::Unk) - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn bigram_hand_counts() {
        let m = train_ngram(&corpus(&["aa"]), 2, 1.0).unwrap();
        assert!((m.prob(&[Symbol::Bos], Symbol::Char('a')) - 2.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn unigram_score_of_a() {
        let m = train_ngram(&corpus(&["ab"]), 1, 1.0).unwrap();
        let r = m.score("a");
        let want = (2.0f64 / 7.0).ln() * 2.0;
        assert!((r.logprob_sum - want).abs() < 1e-12);
        assert_eq!(r.token_count, 2);
    }

    #[test]
    fn empty_text_scores_eos_only() {
        let m = train_ngram(&corpus(&["ab"]), 3, 0.5).unwrap();
        let r = m.score("");
        assert_eq!(r.token_count, 1);
        assert_eq!(r, m.score(""));
    }

    #[test]
    fn unseen_chars_get_mass() {
        let m = train_ngram(&corpus(&["ab"]), 2, 1.0).unwrap();
        assert!(m.prob(&[Symbol::Char('a')], Symbol::Char('z')) > 0.0);
        assert_eq!(
            m.prob(&[Symbol::Char('a')], Symbol::Char('z')),
            m.prob(&[Symbol::Char('a')], Symbol::Unk)
        );
    }

    #[test]
    fn distributions_normalize() {
        let m = train_ngram(&corpus(&["abcab", "bca", "你好你"]), 3, 0.5).unwrap();
        let vocab = m.vocabulary();
        let mut contexts: Vec<Vec<Symbol>> = m.contexts.keys().cloned().collect();
        contexts.push(vec![Symbol::Unk, Symbol::Char('q')]);
        for ctx in contexts {
            let total: f64 = vocab.iter().map(|&s| m.prob(&ctx, s)).sum();
            assert!((total - 1.0).abs() < 1e-9, "{ctx:?} sums to {total}");
        }
    }

    #[test]
    fn larger_k_flattens_seen_mass() {
        let docs = corpus(&["aaaab"]);
        let p = |k| train_ngram(&docs, 1, k).unwrap().prob(&[], Symbol::Char('a'));
        assert!(p(0.5) > p(1.0) && p(1.0) > p(10.0));
        assert!(p(1e6) - 1.0 / 4.0 < 1e-3);
    }

    #[test]
    fn bad_parameters() {
        assert!(train_ngram(&corpus(&["a"]), 0, 1.0).is_err());
        assert!(train_ngram(&corpus(&["a"]), 1, 0.0).is_err());
        assert!(matches!(train_ngram(&corpus(&[]), 1, 1.0), Err(Error::Data(_))));
    }

    #[test]
    fn json_round_trip_preserves_scores() {
        let m = train_ngram(&corpus(&["hello world", "<s> odd"]), 2, 1.0).unwrap();
        let back = NGramModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m.score("hello <unk>"), back.score("hello <unk>"));
        assert_eq!(m.to_json().unwrap(), back.to_json().unwrap());
    }
}
