//! Python bindings. Records cross the boundary as plain dicts and lists
//! with the same field names as the NDJSON artifacts.

use pyo3::exceptions::{PyConnectionError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use culturebridge::analysis::{self, CheckpointHistory, OccurrenceRecord};
use culturebridge::bridging::{self, BridgeTemplate, ParallelPair};
use culturebridge::corpus::{self, Chunk, CorpusManifest, Document, DEFAULT_MAX_CHARS};
use culturebridge::probing::{self, ClozeQuestion, CurveSeries, Setting};
use culturebridge::retrieval::{self, Judgment, RetrievalHit};
use culturebridge::script;
use culturebridge::scoring;

fn err(e: culturebridge::Error) -> PyErr {
    match e.exit_code() {
        3 => PyConnectionError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Code-point counts per script class.
#[pyfunction]
fn classify_script<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &script::classify_script(text))
}

/// Returns `(kept, dropped)` for a list of document dicts.
#[pyfunction]
fn filter_corpus<'py>(
    py: Python<'py>,
    docs: &Bound<'py, PyAny>,
    scripts: &str,
) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let docs: Vec<Document> = from_py(docs)?;
    let allowed = script::parse_script_set(scripts).map_err(err)?;
    let out = corpus::filter_corpus(&docs, &allowed, None).map_err(err)?;
    Ok((to_py(py, &out.kept)?, to_py(py, &out.dropped)?))
}

#[pyfunction]
#[pyo3(signature = (docs, max_chars = DEFAULT_MAX_CHARS))]
fn chunk_corpus<'py>(py: Python<'py>, docs: &Bound<'py, PyAny>, max_chars: usize) -> PyResult<Bound<'py, PyAny>> {
    let docs: Vec<Document> = from_py(docs)?;
    to_py(py, &corpus::chunk_corpus(&docs, max_chars, None).map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (label, docs, max_chars = DEFAULT_MAX_CHARS))]
fn corpus_stats<'py>(
    py: Python<'py>,
    label: &str,
    docs: &Bound<'py, PyAny>,
    max_chars: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let docs: Vec<Document> = from_py(docs)?;
    to_py(py, &corpus::corpus_stats(label, &docs, max_chars, None).map_err(err)?)
}

/// Renders one pair with the built-in template for its language, or `template`.
#[pyfunction]
#[pyo3(signature = (pair, template = None))]
fn render_bridge<'py>(py: Python<'py>, pair: &Bound<'py, PyAny>, template: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let pair: ParallelPair = from_py(pair)?;
    let template = match template {
        Some(t) => BridgeTemplate::new(&pair.lang, t, &pair.lang),
        None => BridgeTemplate::builtin(&pair.lang),
    }
    .map_err(err)?;
    to_py(py, &bridging::render_bridge(&pair, &template).map_err(err)?)
}

#[pyfunction]
fn explode_pairs<'py>(py: Python<'py>, pairs: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let pairs: Vec<ParallelPair> = from_py(pairs)?;
    to_py(py, &bridging::explode_pairs(&pairs))
}

/// Add-k smoothed character n-gram model.
#[pyclass(module = "culturebridge_py", frozen)]
struct NGramModel {
    inner: scoring::NGramModel,
}

#[pymethods]
impl NGramModel {
    #[staticmethod]
    #[pyo3(signature = (texts, order = 3, k = 1.0))]
    fn train(texts: Vec<String>, order: usize, k: f64) -> PyResult<Self> {
        let docs: Vec<Document> = texts
            .into_iter()
            .enumerate()
            .map(|(i, t)| Document::new(format!("t{i}"), "", t, ""))
            .collect();
        Ok(NGramModel {
            inner: scoring::train_ngram(&docs, order, k).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(json: &str) -> PyResult<Self> {
        Ok(NGramModel {
            inner: scoring::NGramModel::from_json(json).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[getter]
    fn order(&self) -> usize {
        self.inner.order()
    }

    #[getter]
    fn k(&self) -> f64 {
        self.inner.k()
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    /// `{logprob_sum, token_count, perplexity}` for one text.
    fn score<'py>(&self, py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.score(text))
    }

    fn predict<'py>(&self, py: Python<'py>, question: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let q: ClozeQuestion = from_py(question)?;
        to_py(py, &probing::predict(&q, &self.inner).map_err(err)?)
    }

    #[pyo3(signature = (questions, setting = "bridge", step = 0))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        questions: &Bound<'py, PyAny>,
        setting: &str,
        step: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let qs: Vec<ClozeQuestion> = from_py(questions)?;
        let setting: Setting = setting.parse().map_err(err)?;
        to_py(py, &probing::evaluate(&qs, &self.inner, setting, step).map_err(err)?)
    }

    fn __repr__(&self) -> String {
        format!("NGramModel(order={}, k={}, vocab_size={})", self.inner.order(), self.inner.k(), self.inner.vocab_size())
    }
}

/// The question text with `____` replaced by candidate `index`.
#[pyfunction]
fn instantiate(question: &Bound<'_, PyAny>, index: usize) -> PyResult<String> {
    let q: ClozeQuestion = from_py(question)?;
    probing::instantiate(&q, index).map_err(err)
}

fn series(points: Vec<(u64, f64)>) -> PyResult<CurveSeries> {
    CurveSeries::new(points).map_err(err)
}

#[pyfunction]
fn ema_smooth(points: Vec<(u64, f64)>, weight: f64) -> PyResult<Vec<(u64, f64)>> {
    Ok(probing::ema_smooth(&series(points)?, weight).map_err(err)?.points().to_vec())
}

/// Per-step bridge minus no-bridge accuracy on the shared steps.
#[pyfunction]
fn transfer_gap(bridge: Vec<(u64, f64)>, no_bridge: Vec<(u64, f64)>) -> PyResult<Vec<(u64, f64)>> {
    let gap = probing::transfer_gap(&series(bridge)?, &series(no_bridge)?).map_err(err)?;
    Ok(gap.gap.points().to_vec())
}

#[pyfunction]
fn tokenize(text: &str, lang: &str) -> Vec<String> {
    retrieval::tokenize_for_index(text, lang)
}

/// BM25 index over chunk dicts.
#[pyclass(module = "culturebridge_py", frozen)]
struct Index {
    inner: retrieval::InvertedIndex,
}

#[pymethods]
impl Index {
    #[new]
    fn new(chunks: &Bound<'_, PyAny>, lang: &str) -> PyResult<Self> {
        let chunks: Vec<Chunk> = from_py(chunks)?;
        Ok(Index {
            inner: retrieval::build_index(&chunks, lang, None).map_err(err)?,
        })
    }

    #[pyo3(signature = (query, k = retrieval::DEFAULT_TOP_K))]
    fn search<'py>(&self, py: Python<'py>, query: &str, k: usize) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.search(query, k).map_err(err)?)
    }

    fn __len__(&self) -> usize {
        self.inner.chunk_count()
    }
}

#[pyfunction]
#[pyo3(signature = (claim, document, lang, threshold = retrieval::DEFAULT_OVERLAP_THRESHOLD))]
fn lexical_entails(claim: &str, document: &str, lang: &str, threshold: f64) -> bool {
    retrieval::LexicalJudge::new(threshold).entails(claim, document, lang)
}

#[pyfunction]
fn occurrence_count<'py>(
    py: Python<'py>,
    question: &Bound<'py, PyAny>,
    corpus: &str,
    hits: &Bound<'py, PyAny>,
    k: usize,
    judgments: &Bound<'py, PyAny>,
) -> PyResult<Bound<'py, PyAny>> {
    let q: ClozeQuestion = from_py(question)?;
    let hits: Vec<RetrievalHit> = from_py(hits)?;
    let judgments: Vec<Judgment> = from_py(judgments)?;
    to_py(py, &analysis::occurrence_count(&q, corpus, &hits, k, &judgments).map_err(err)?)
}

#[pyfunction]
fn density_report<'py>(
    py: Python<'py>,
    culture: &str,
    records: &Bound<'py, PyAny>,
    manifest: &Bound<'py, PyAny>,
) -> PyResult<Bound<'py, PyAny>> {
    let records: Vec<OccurrenceRecord> = from_py(records)?;
    let manifest: CorpusManifest = from_py(manifest)?;
    to_py(py, &analysis::density_report(culture, &records, &manifest).map_err(err)?)
}

/// The transfer record for one pair's history, or None.
#[pyfunction]
fn classify_transfer<'py>(py: Python<'py>, history: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let h: CheckpointHistory = from_py(history)?;
    to_py(py, &analysis::classify_transfer(&h).map_err(err)?)
}

#[pymodule]
fn culturebridge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<NGramModel>()?;
    m.add_class::<Index>()?;
    m.add_function(wrap_pyfunction!(classify_script, m)?)?;
    m.add_function(wrap_pyfunction!(filter_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(chunk_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_stats, m)?)?;
    m.add_function(wrap_pyfunction!(render_bridge, m)?)?;
    m.add_function(wrap_pyfunction!(explode_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(instantiate, m)?)?;
    m.add_function(wrap_pyfunction!(ema_smooth, m)?)?;
    m.add_function(wrap_pyfunction!(transfer_gap, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(lexical_entails, m)?)?;
    m.add_function(wrap_pyfunction!(occurrence_count, m)?)?;
    m.add_function(wrap_pyfunction!(density_report, m)?)?;
    m.add_function(wrap_pyfunction!(classify_transfer, m)?)?;
    Ok(())
}
