//! Deterministic synthetic data for tests, benchmarks and the desk-scale
//! pipeline demo. Every generator is a pure function of its seed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Serialize;

use crate::analysis::{CheckpointHistory, CorrectnessSeries, EN};
use crate::bridging::ParallelPair;
use crate::corpus::{Chunk, Document};
use crate::error::{Error, Result};
use crate::io::{to_json_pretty, to_ndjson, write_atomic};
use crate::probing::{ClozeQuestion, Setting, BLANK};
use crate::shuffle::SeededRng;

const LATIN_EXTRA: &[char] = &['é', 'ü', 'ß', 'ñ', 'ā', 'ł', 'Ø', 'ç'];
const COMMON: &[char] = &[' ', ' ', ' ', '\n', ',', '.', '!', '?', '0', '7', '(', ')', '\u{2014}', '\u{2019}'];
const OTHER: &[char] = &['Ж', 'я', 'ع', 'α', '。', '，', '😀', '×', '÷', '\u{3001}'];

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "re", "ta", "vo", "nu", "si", "be", "dra", "ko", "lin", "mar", "pel", "qua", "ros", "tem", "zul",
];

fn pick<'a, T>(rng: &mut SeededRng, items: &'a [T]) -> &'a T {
    &items[rng.below(items.len() as u64) as usize]
}

fn range_char(rng: &mut SeededRng, lo: u32, hi: u32) -> char {
    // every range used here lies outside the surrogate block
    char::from_u32(lo + rng.below((hi - lo + 1) as u64) as u32).unwrap_or('?')
}

fn script_char(rng: &mut SeededRng, script: usize) -> char {
    match script {
        0 => {
            if rng.below(10) == 0 {
                *pick(rng, LATIN_EXTRA)
            } else {
                range_char(rng, 'a' as u32, 'z' as u32)
            }
        }
        1 => {
            if rng.below(10) == 0 {
                range_char(rng, 0x3400, 0x4DBF)
            } else {
                range_char(rng, 0x4E00, 0x9FFF)
            }
        }
        2 => match rng.below(10) {
            0 => range_char(rng, 0x1100, 0x11FF),
            1 => range_char(rng, 0x3131, 0x318E),
            _ => range_char(rng, 0xAC00, 0xD7A3),
        },
        3 => {
            if rng.below(4) == 0 {
                '\u{0F0B}'
            } else {
                range_char(rng, 0x0F40, 0x0F6C)
            }
        }
        _ => range_char(rng, 0x1820, 0x1877),
    }
}

/// Documents drawing from one to three script classes plus neutral
/// punctuation and stray characters from unsupported scripts.
pub fn mixed_script_corpus(count: usize, seed: u64) -> Vec<Document> {
    let mut rng = SeededRng::new(seed);
    (0..count)
        .map(|i| {
            let n_scripts = 1 + rng.below(3) as usize;
            let scripts: Vec<usize> = (0..n_scripts).map(|_| rng.below(5) as usize).collect();
            let len = 20 + rng.below(180) as usize;
            let mut text = String::with_capacity(len * 3);
            let mut current = scripts[0];
            for _ in 0..len {
                match rng.below(20) {
                    0..=3 => text.push(*pick(&mut rng, COMMON)),
                    4 => text.push(*pick(&mut rng, OTHER)),
                    5 => current = *pick(&mut rng, &scripts),
                    _ => text.push(script_char(&mut rng, current)),
                }
            }
            if i % 500 == 0 {
                // a few documents with nothing but neutral characters
                text = "123, 456. ...".to_owned();
            }
            let lang = ["en", "zh", "ko", "bo", "mn"][scripts[0]];
            Document::new(format!("mix-{i:05}"), lang, text, "fixture:mixed")
        })
        .collect()
}

fn latin_word(rng: &mut SeededRng) -> String {
    let n = 1 + rng.below(3) as usize;
    (0..n).map(|_| *pick(rng, SYLLABLES)).collect()
}

fn hangul_word(rng: &mut SeededRng, syllables: usize) -> String {
    (0..syllables).map(|_| range_char(rng, 0xAC00, 0xD7A3)).collect()
}

fn sentence(rng: &mut SeededRng, words: usize, word: impl Fn(&mut SeededRng) -> String) -> String {
    let mut s = (0..words).map(|_| word(rng)).collect::<Vec<_>>().join(" ");
    if let Some(first) = s.get(..1) {
        let upper = first.to_uppercase();
        s.replace_range(..1, &upper);
    }
    s
}

/// English/Korean sentence pairs in the shape of a parallel corpus.
pub fn parallel_pairs(count: usize, seed: u64) -> Vec<ParallelPair> {
    let mut rng = SeededRng::new(seed);
    (0..count)
        .map(|i| {
            let n = 3 + rng.below(10) as usize;
            let en = format!("{}.", sentence(&mut rng, n, latin_word));
            let xx = format!("{}.", sentence(&mut rng, n, |r| {
                let syllables = 2 + r.below(2) as usize;
                hangul_word(r, syllables)
            }));
            ParallelPair {
                id: format!("pair-{i:05}"),
                en_text: en,
                xx_text: xx,
                lang: "ko".into(),
            }
        })
        .collect()
}

/// Chunks over a Zipf-like vocabulary for retrieval benchmarks.
pub fn retrieval_chunks(count: usize, vocab_size: usize, seed: u64) -> Vec<Chunk> {
    let mut rng = SeededRng::new(seed);
    let vocab = retrieval_vocabulary(vocab_size);
    (0..count)
        .map(|i| {
            let len = 5 + rng.below(60) as usize;
            let text = (0..len)
                .map(|_| vocab[zipf_index(&mut rng, vocab.len())].as_str())
                .collect::<Vec<_>>()
                .join(" ");
            Chunk {
                chunk_id: format!("doc{:04}#{}", i / 2, i % 2),
                doc_id: format!("doc{:04}", i / 2),
                char_len: text.chars().count(),
                text,
            }
        })
        .collect()
}

pub fn retrieval_vocabulary(size: usize) -> Vec<String> {
    (0..size).map(|i| format!("w{i}")).collect()
}

/// Index in `0..n`, skewed towards small values.
pub fn zipf_index(rng: &mut SeededRng, n: usize) -> usize {
    let a = rng.below(n as u64);
    let b = rng.below(n as u64);
    a.min(b) as usize
}

/// Bilingual retrieval fixture with a known occurrence structure.
///
/// Every cultural claim is planted in `ratio` times as many Korean documents
/// as English ones; claims marked transferred are planted at twice the base
/// frequency. Near-miss documents share a single claim term so the judge
/// has something to reject.
#[derive(Debug, Clone)]
pub struct PlantedDensity {
    pub culture: String,
    pub en_docs: Vec<Document>,
    pub xx_docs: Vec<Document>,
    pub en_questions: Vec<ClozeQuestion>,
    pub xx_questions: Vec<ClozeQuestion>,
    /// `pair_id -> (English plants, Korean plants)`.
    pub planted: BTreeMap<String, (usize, usize)>,
    pub transferred: BTreeSet<String>,
    /// Checkpoint histories whose classification yields `transferred`.
    pub histories: Vec<CheckpointHistory>,
}

pub fn planted_density(questions: usize, docs_per_corpus: usize, ratio: usize, seed: u64) -> Result<PlantedDensity> {
    let mut rng = SeededRng::new(seed);
    let mut en_questions = Vec::new();
    let mut xx_questions = Vec::new();
    let mut planted = BTreeMap::new();
    let mut transferred = BTreeSet::new();
    let mut en_passages = Vec::new();
    let mut xx_passages = Vec::new();
    let mut used = BTreeSet::new();
    let mut fresh = |rng: &mut SeededRng, make: &dyn Fn(&mut SeededRng) -> String| loop {
        let w = make(rng);
        if used.insert(w.clone()) {
            return w;
        }
    };
    let en_entity = |r: &mut SeededRng| format!("{}x{}", latin_word(r), latin_word(r));
    let xx_entity = |r: &mut SeededRng| hangul_word(r, 3);

    for i in 0..questions {
        let pair_id = format!("culture:{i:03}");
        let is_transferred = i % 4 == 0;
        let base = if is_transferred { 2 * (1 + i % 2) } else { 1 + i % 2 };
        let (en_n, xx_n) = (base, base * ratio);
        if is_transferred {
            transferred.insert(pair_id.clone());
        }
        planted.insert(pair_id.clone(), (en_n, xx_n));

        let en_terms: Vec<String> = (0..4).map(|_| fresh(&mut rng, &en_entity)).collect();
        let xx_terms: Vec<String> = (0..4).map(|_| fresh(&mut rng, &xx_entity)).collect();
        let en_claim = format!("The {} of {} is {} {}.", en_terms[0], en_terms[1], en_terms[2], en_terms[3]);
        let xx_claim = format!("{} {} {} {}.", xx_terms[0], xx_terms[1], xx_terms[2], xx_terms[3]);
        let en_distractors: Vec<String> = (0..3).map(|_| fresh(&mut rng, &en_entity)).collect();
        let xx_distractors: Vec<String> = (0..3).map(|_| fresh(&mut rng, &xx_entity)).collect();
        en_questions.push(ClozeQuestion {
            id: format!("{pair_id}:en"),
            pair_id: pair_id.clone(),
            culture: "ko".into(),
            lang: "en".into(),
            text: en_claim.replace(&en_terms[3], BLANK),
            candidates: std::iter::once(en_terms[3].clone()).chain(en_distractors).collect(),
            gold_index: 0,
        });
        xx_questions.push(ClozeQuestion {
            id: format!("{pair_id}:ko"),
            pair_id: pair_id.clone(),
            culture: "ko".into(),
            lang: "ko".into(),
            text: xx_claim.replace(&xx_terms[3], BLANK),
            candidates: std::iter::once(xx_terms[3].clone()).chain(xx_distractors).collect(),
            gold_index: 0,
        });
        for _ in 0..en_n {
            en_passages.push(en_claim.clone());
        }
        for _ in 0..xx_n {
            xx_passages.push(xx_claim.clone());
        }
        for t in en_terms.iter().take(3) {
            en_passages.push(format!("Nothing about {t} here."));
        }
        for t in xx_terms.iter().take(3) {
            xx_passages.push(format!("{t} {}.", hangul_word(&mut rng, 2)));
        }
    }
    if en_passages.len() > docs_per_corpus || xx_passages.len() > docs_per_corpus {
        return Err(Error::config(format!(
            "{docs_per_corpus} documents per corpus cannot hold {} planted passages",
            en_passages.len().max(xx_passages.len())
        )));
    }
    let mut build = |passages: Vec<String>, lang: &str, filler: &dyn Fn(&mut SeededRng) -> String| {
        let mut texts = passages;
        while texts.len() < docs_per_corpus {
            let n = 6 + rng.below(12) as usize;
            texts.push(format!("{}.", sentence(&mut rng, n, filler)));
        }
        rng.shuffle(&mut texts);
        texts
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                let filler_text = format!("{} ", sentence(&mut rng, 4, filler));
                Document::new(format!("{lang}-{i:05}"), lang, filler_text + &t, "fixture:planted")
            })
            .collect::<Vec<_>>()
    };
    let en_docs = build(en_passages, "en", &|r| latin_word(r));
    let xx_docs = build(xx_passages, "ko", &|r| hangul_word(r, 2));

    let histories = planted
        .keys()
        .map(|pair_id| transfer_history(pair_id, transferred.contains(pair_id)))
        .collect();
    Ok(PlantedDensity {
        culture: "ko".into(),
        en_docs,
        xx_docs,
        en_questions,
        xx_questions,
        planted,
        transferred,
        histories,
    })
}

/// A history that is a Korean-to-English transfer instance iff `transfer`.
fn transfer_history(pair_id: &str, transfer: bool) -> CheckpointHistory {
    let points = |first: bool, rest: [bool; 4]| {
        std::iter::once((0, first))
            .chain(rest.iter().enumerate().map(|(i, &b)| (100 * (i as u64 + 1), b)))
            .collect()
    };
    let t = transfer;
    CheckpointHistory {
        pair_id: pair_id.to_owned(),
        non_en_lang: "ko".into(),
        series: vec![
            CorrectnessSeries { setting: Setting::Bridge, lang: EN.into(), points: points(false, [false, t, true, true]) },
            CorrectnessSeries { setting: Setting::NoBridge, lang: EN.into(), points: points(false, [false; 4]) },
            CorrectnessSeries { setting: Setting::Bridge, lang: "ko".into(), points: points(false, [true; 4]) },
            CorrectnessSeries { setting: Setting::NoBridge, lang: "ko".into(), points: points(false, [false, true, t, true]) },
        ],
    }
}

#[derive(Serialize)]
struct DeskConfig<'a> {
    seed: u64,
    lang: &'a str,
    corpora: Vec<BTreeMap<&'a str, serde_json::Value>>,
    parallel: &'a str,
    questions: Vec<&'a str>,
    steps: BTreeMap<&'a str, u64>,
    checkpoints: Vec<BTreeMap<&'a str, serde_json::Value>>,
    k: usize,
    judge: &'a str,
    ema_weight: f64,
    output_dir: &'a str,
}

/// Step 0 is the shared base model trained on English only; later steps are
/// trained on growing prefixes of each setting's dataset.
fn desk_checkpoints() -> Vec<BTreeMap<&'static str, serde_json::Value>> {
    let mut out = Vec::new();
    for setting in ["bridge", "no_bridge"] {
        for step in [0u64, 100, 200, 300] {
            let scorer = if step == 0 {
                "ngram:models/base.json".to_owned()
            } else {
                format!("ngram:models/{setting}-{step}.json")
            };
            out.push(BTreeMap::from([
                ("setting", serde_json::json!(setting)),
                ("step", serde_json::json!(step)),
                ("scorer", serde_json::json!(scorer)),
            ]));
        }
    }
    out
}

/// Writes the desk-scale pipeline inputs and an experiment config into `dir`.
pub fn write_desk_fixture(dir: &Path, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = SeededRng::new(seed);
    let facts: Vec<[String; 4]> = (0..40)
        .map(|_| {
            [
                latin_word(&mut rng),
                latin_word(&mut rng),
                hangul_word(&mut rng, 2),
                hangul_word(&mut rng, 3),
            ]
        })
        .collect();

    let mut en = Vec::new();
    let mut xx = Vec::new();
    for i in 0..400 {
        let [subject, object, xx_subject, xx_object] = &facts[i % facts.len()];
        let n = 8 + rng.below(20) as usize;
        let mut text = format!("{} The home of {subject} is {object}. ", sentence(&mut rng, n, latin_word));
        if i % 7 == 0 {
            text.push_str(&hangul_word(&mut rng, 2));
        }
        en.push(Document::new(format!("en-{i:04}"), "en", text, "fixture:desk"));
        let n = 8 + rng.below(20) as usize;
        let mut text = format!("{} {xx_subject}의 고향은 {xx_object}이다. ", sentence(&mut rng, n, |r| hangul_word(r, 2)));
        if i % 5 == 0 {
            text.push_str("latin noise");
        }
        xx.push(Document::new(format!("ko-{i:04}"), "ko", text, "fixture:desk"));
    }
    let pairs = parallel_pairs(300, seed ^ 0x5eed);

    let mut questions_en = Vec::new();
    let mut questions_xx = Vec::new();
    for (i, [subject, object, xx_subject, xx_object]) in facts.iter().enumerate() {
        let gold = i % 4;
        let mut en_c: Vec<String> = (0..3).map(|j| facts[(i + j + 1) % facts.len()][1].clone()).collect();
        en_c.insert(gold, object.clone());
        let mut xx_c: Vec<String> = (0..3).map(|j| facts[(i + j + 1) % facts.len()][3].clone()).collect();
        xx_c.insert(gold, xx_object.clone());
        let pair_id = format!("fact-{i:03}");
        questions_en.push(ClozeQuestion {
            id: format!("{pair_id}:en"),
            pair_id: pair_id.clone(),
            culture: "ko".into(),
            lang: "en".into(),
            text: format!("The home of {subject} is {BLANK}."),
            candidates: en_c,
            gold_index: gold,
        });
        questions_xx.push(ClozeQuestion {
            id: format!("{pair_id}:ko"),
            pair_id,
            culture: "ko".into(),
            lang: "ko".into(),
            text: format!("{xx_subject}의 고향은 {BLANK}이다."),
            candidates: xx_c,
            gold_index: gold,
        });
    }

    write_atomic(&dir.join("en_mono.ndjson"), &to_ndjson(&en)?)?;
    write_atomic(&dir.join("ko_mono.ndjson"), &to_ndjson(&xx)?)?;
    write_atomic(&dir.join("pairs.ndjson"), &to_ndjson(&pairs)?)?;
    write_atomic(&dir.join("questions_en.ndjson"), &to_ndjson(&questions_en)?)?;
    write_atomic(&dir.join("questions_ko.ndjson"), &to_ndjson(&questions_xx)?)?;

    let corpus = |label: &str, path: &str, lang: &str, scripts: &[&str]| {
        BTreeMap::from([
            ("label", serde_json::json!(label)),
            ("path", serde_json::json!(path)),
            ("lang", serde_json::json!(lang)),
            ("scripts", serde_json::json!(scripts)),
        ])
    };
    let config = DeskConfig {
        seed,
        lang: "ko",
        corpora: vec![
            corpus("en", "en_mono.ndjson", "en", &["latin"]),
            corpus("ko", "ko_mono.ndjson", "ko", &["hangul"]),
        ],
        parallel: "pairs.ndjson",
        questions: vec!["questions_en.ndjson", "questions_ko.ndjson"],
        steps: BTreeMap::from([("every", 100), ("max", 300)]),
        checkpoints: desk_checkpoints(),
        k: 50,
        judge: "lexical",
        ema_weight: 0.8,
        output_dir: "out",
    };
    write_atomic(&dir.join("config.json"), &to_json_pretty(&config)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::classify_transfer;

    #[test]
    fn generators_are_seeded() {
        assert_eq!(mixed_script_corpus(50, 3), mixed_script_corpus(50, 3));
        assert_ne!(mixed_script_corpus(50, 3), mixed_script_corpus(50, 4));
        assert_eq!(parallel_pairs(20, 1), parallel_pairs(20, 1));
        assert_eq!(retrieval_chunks(30, 100, 2), retrieval_chunks(30, 100, 2));
    }

    #[test]
    fn pairs_are_valid() {
        for p in parallel_pairs(200, 9) {
            p.validate().unwrap();
        }
    }

    #[test]
    fn planted_structure() {
        let f = planted_density(12, 400, 10, 1).unwrap();
        assert_eq!(f.en_docs.len(), 400);
        for (en, xx) in f.planted.values() {
            assert_eq!(*xx, 10 * en);
        }
        let classified: BTreeSet<String> = f
            .histories
            .iter()
            .filter_map(|h| classify_transfer(h).unwrap())
            .map(|r| r.pair_id)
            .collect();
        assert_eq!(classified, f.transferred);
        assert!(planted_density(12, 10, 10, 1).is_err());
    }
}
