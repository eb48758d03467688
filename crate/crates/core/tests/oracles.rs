//! Property tests against small independent reimplementations.

use std::collections::BTreeSet;

use proptest::prelude::*;

use culturebridge::corpus::{chunk_document, Chunk, Document};
use culturebridge::probing::{ema_smooth, CurveSeries};
use culturebridge::retrieval::build_index;
use culturebridge::scoring::{train_ngram, Symbol};
use culturebridge::shuffle::SeededRng;

fn shuffled(items: &[u32], seed: u64) -> Vec<u32> {
    let mut v = items.to_vec();
    SeededRng::new(seed).shuffle(&mut v);
    v
}

/// Splits on string slices: newline first, then any whitespace, then a hard cut.
fn oracle_chunks(text: &str, max: usize) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = text;
    while rest.chars().count() > max {
        let end = rest.char_indices().nth(max).map(|(i, _)| i).unwrap();
        let window = &rest[..end];
        let cut = window
            .rfind('\n')
            .map(|i| i + 1)
            .or_else(|| window.char_indices().filter(|(_, c)| c.is_whitespace()).last().map(|(i, c)| i + c.len_utf8()))
            .unwrap_or(end);
        out.push(rest[..cut].to_owned());
        rest = &rest[cut..];
    }
    if !rest.is_empty() {
        out.push(rest.to_owned());
    }
    out
}

fn chunk(id: &str, text: &str) -> Chunk {
    Chunk {
        chunk_id: id.to_owned(),
        doc_id: id.to_owned(),
        text: text.to_owned(),
        char_len: text.chars().count(),
    }
}

proptest! {
    #[test]
    fn chunking_matches_string_oracle(text in "[ab \n가나\u{3000}]{0,80}", max in 1usize..12) {
        let doc = Document::new("d", "ko", text.as_str(), "t");
        let chunks = chunk_document(&doc, max).unwrap();
        let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
        prop_assert_eq!(texts.concat(), text.clone());
        prop_assert!(chunks.iter().all(|c| c.char_len <= max && c.char_len == c.text.chars().count()));
        prop_assert_eq!(texts, oracle_chunks(&text, max));
    }

    #[test]
    fn extra_occurrence_never_lowers_score(
        words in prop::collection::vec(prop::collection::vec(0usize..6, 1..12), 1..20),
        target in 0usize..20,
    ) {
        let render = |ws: &[usize]| ws.iter().map(|w| format!("w{w}")).collect::<Vec<_>>().join(" ");
        let target = target % words.len();
        let before: Vec<Chunk> = words.iter().enumerate().map(|(i, ws)| chunk(&format!("c{i:02}"), &render(ws))).collect();
        let mut after = before.clone();
        after[target] = chunk(&after[target].chunk_id, &format!("{} w0", after[target].text));
        let score = |chunks: &[Chunk]| {
            build_index(chunks, "en", None)
                .unwrap()
                .search("w0", chunks.len())
                .unwrap()
                .into_iter()
                .find(|h| h.chunk_id == chunks[target].chunk_id)
                .map_or(0.0, |h| h.score)
        };
        prop_assert!(score(&after) >= score(&before));
    }

    #[test]
    fn ngram_distributions_normalize(
        corpus in prop::collection::vec("[abc가]{0,12}", 1..6),
        order in 1usize..4,
        k in prop::sample::select(vec![0.1, 0.5, 1.0, 2.0]),
        ctx in prop::collection::vec(prop::sample::select(vec![Symbol::Bos, Symbol::Char('a'), Symbol::Char('가'), Symbol::Unk]), 3),
    ) {
        let docs: Vec<Document> = corpus.iter().enumerate().map(|(i, t)| Document::new(format!("d{i}"), "xx", t.as_str(), "")).collect();
        let model = train_ngram(&docs, order, k).unwrap();
        let context = &ctx[..order - 1];
        let vocab = model.vocabulary();
        let total: f64 = vocab.iter().map(|&s| model.prob(context, s)).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(vocab.iter().all(|&s| model.prob(context, s) > 0.0));
        let uniform = 1.0 / vocab.len() as f64;
        let smoother = train_ngram(&docs, order, k * 2.0).unwrap();
        for &s in &vocab {
            let (p, q) = (model.prob(context, s), smoother.prob(context, s));
            if p > uniform {
                prop_assert!(q <= p && q >= uniform);
            }
        }
    }

    #[test]
    fn ema_stays_within_range(values in prop::collection::vec(0.0f64..=1.0, 1..40), weight in 0.0f64..0.99) {
        let s = CurveSeries::new(values.iter().enumerate().map(|(i, &v)| (i as u64 * 100, v)).collect()).unwrap();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for v in ema_smooth(&s, weight).unwrap().values() {
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn seeds_permute_the_same_multiset(items in prop::collection::btree_set(0u32..10_000, 0..60), seed in any::<u64>()) {
        let items: Vec<u32> = items.into_iter().collect();
        let a = shuffled(&items, seed);
        let b = shuffled(&items, seed.wrapping_add(1));
        prop_assert_eq!(a.iter().collect::<BTreeSet<_>>(), b.iter().collect::<BTreeSet<_>>());
        prop_assert_eq!(a.len(), items.len());
        prop_assert_eq!(&a, &shuffled(&items, seed));
    }
}
