//! Continual-pretraining dataset construction with and without
//! cross-lingual bridges.
//!
//! A bridge is one document rendering an aligned English / non-English pair
//! through a [`BridgeTemplate`]. The unbridged setting emits the two halves
//! as independent documents instead, so parallel text never co-occurs.
//! Either way the parallel side is mixed with monolingual text at a
//! character ratio and shuffled with a seeded permutation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::script::{classify_script, ScriptClass};
use crate::shuffle::{SeededRng, SHUFFLE_ALGORITHM};

pub const EN_PLACEHOLDER: &str = "{en}";
pub const XX_PLACEHOLDER: &str = "{xx}";
pub const BRIDGE_ID_PREFIX: &str = "bridge:";
pub const EN_HALF_PREFIX: &str = "half:en:";
pub const XX_HALF_PREFIX: &str = "half:xx:";

/// Maximum realized deviation from the planned character ratio.
pub const RATIO_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelPair {
    pub id: String,
    pub en_text: String,
    pub xx_text: String,
    pub lang: String,
}

impl ParallelPair {
    /// Checks non-emptiness and script isolation of both halves.
    pub fn validate(&self) -> Result<()> {
        if self.en_text.is_empty() || self.xx_text.is_empty() {
            return Err(Error::data(format!("pair `{}` has an empty side", self.id)));
        }
        let en = classify_script(&self.en_text);
        if en.han + en.hangul + en.tibetan + en.mongolian + en.other > 0 {
            return Err(Error::data(format!(
                "pair `{}`: English side contains non-Latin-script code points",
                self.id
            )));
        }
        if classify_script(&self.xx_text).latin > 0 {
            return Err(Error::data(format!(
                "pair `{}`: non-English side contains Latin letters",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeTemplate {
    pub lang: String,
    pub pattern: String,
    pub display_name: String,
}

/// A validated template split around its two placeholders.
#[derive(Debug, Clone, Copy)]
struct TemplateParts<'a> {
    prefix: &'a str,
    middle: &'a str,
    suffix: &'a str,
}

impl BridgeTemplate {
    pub fn new(lang: &str, pattern: &str, display_name: &str) -> Result<Self> {
        let t = BridgeTemplate {
            lang: lang.to_owned(),
            pattern: pattern.to_owned(),
            display_name: display_name.to_owned(),
        };
        t.parts()?;
        Ok(t)
    }

    /// `English: {en} <Language>: {xx}`, the pattern family shipped for the
    /// studied languages.
    pub fn builtin(lang: &str) -> Result<Self> {
        let name = match lang {
            "zh" => "Chinese",
            "ko" => "Korean",
            "bo" => "Tibetan",
            "mn" => "Mongolian",
            other => {
                return Err(Error::config(format!("no built-in bridge template for `{other}`")))
            }
        };
        BridgeTemplate::new(lang, &format!("English: {{en}} {name}: {{xx}}"), name)
    }

    fn parts(&self) -> Result<TemplateParts<'_>> {
        let p = &self.pattern;
        let count = |needle: &str| p.matches(needle).count();
        if count(EN_PLACEHOLDER) != 1 || count(XX_PLACEHOLDER) != 1 {
            return Err(Error::config(format!(
                "template for `{}` must contain {{en}} and {{xx}} exactly once: {p:?}",
                self.lang
            )));
        }
        let en_at = p.find(EN_PLACEHOLDER).unwrap_or_default();
        let xx_at = p.find(XX_PLACEHOLDER).unwrap_or_default();
        if en_at > xx_at {
            return Err(Error::config(format!(
                "template for `{}` must place {{en}} before {{xx}}",
                self.lang
            )));
        }
        Ok(TemplateParts {
            prefix: &p[..en_at],
            middle: &p[en_at + EN_PLACEHOLDER.len()..xx_at],
            suffix: &p[xx_at + XX_PLACEHOLDER.len()..],
        })
    }

    /// Recovers `(en, xx)` from a rendered bridge, or `None` if `text` does
    /// not have the template's shape.
    pub fn strip(&self, text: &str) -> Option<(String, String)> {
        let parts = self.parts().ok()?;
        let body = text.strip_prefix(parts.prefix)?.strip_suffix(parts.suffix)?;
        let at = body.find(parts.middle)?;
        let en = &body[..at];
        let xx = &body[at + parts.middle.len()..];
        if en.is_empty() || xx.is_empty() {
            return None;
        }
        Some((en.to_owned(), xx.to_owned()))
    }

    pub fn matches(&self, text: &str) -> bool {
        self.strip(text).is_some()
    }
}

/// Loads a template file: either a single template object or a list of them.
pub fn parse_template_file(json: &str) -> Result<BTreeMap<String, BridgeTemplate>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum TemplateFile {
        One(BridgeTemplate),
        Many(Vec<BridgeTemplate>),
    }
    let templates = match serde_json::from_str::<TemplateFile>(json)? {
        TemplateFile::One(t) => vec![t],
        TemplateFile::Many(ts) => ts,
    };
    let mut out = BTreeMap::new();
    for t in templates {
        t.parts()?;
        if out.insert(t.lang.clone(), t).is_some() {
            return Err(Error::config("template file lists a language twice"));
        }
    }
    Ok(out)
}

pub fn render_bridge(pair: &ParallelPair, template: &BridgeTemplate) -> Result<Document> {
    let parts = template.parts()?;
    if template.lang != pair.lang {
        return Err(Error::config(format!(
            "template language `{}` does not match pair `{}` language `{}`",
            template.lang, pair.id, pair.lang
        )));
    }
    if pair.en_text.is_empty() || pair.xx_text.is_empty() {
        return Err(Error::data(format!("pair `{}` has an empty side", pair.id)));
    }
    let mut text = String::with_capacity(template.pattern.len() + pair.en_text.len() + pair.xx_text.len());
    text.push_str(parts.prefix);
    text.push_str(&pair.en_text);
    text.push_str(parts.middle);
    text.push_str(&pair.xx_text);
    text.push_str(parts.suffix);
    Ok(Document::new(
        format!("{BRIDGE_ID_PREFIX}{}", pair.id),
        pair.lang.clone(),
        text,
        "bridge",
    ))
}

pub fn explode_pairs(pairs: &[ParallelPair]) -> Vec<Document> {
    pairs
        .iter()
        .flat_map(|p| {
            [
                Document::new(format!("{EN_HALF_PREFIX}{}", p.id), "en", p.en_text.clone(), "parallel"),
                Document::new(format!("{XX_HALF_PREFIX}{}", p.id), p.lang.clone(), p.xx_text.clone(), "parallel"),
            ]
        })
        .collect()
}

/// Monolingual : parallel proportion, in characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixRatio {
    pub mono: u32,
    pub parallel: u32,
}

impl Default for MixRatio {
    fn default() -> Self {
        MixRatio { mono: 1, parallel: 1 }
    }
}

impl MixRatio {
    pub fn mono_share(&self) -> f64 {
        self.mono as f64 / (self.mono as f64 + self.parallel as f64)
    }
}

impl fmt::Display for MixRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.mono, self.parallel)
    }
}

impl FromStr for MixRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("ratio must look like `1:1`, got `{s}`"));
        let (m, p) = s.split_once(':').ok_or_else(bad)?;
        let ratio = MixRatio {
            mono: m.trim().parse().map_err(|_| bad())?,
            parallel: p.trim().parse().map_err(|_| bad())?,
        };
        if ratio.mono == 0 || ratio.parallel == 0 {
            return Err(bad());
        }
        Ok(ratio)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixPlan {
    pub mono_char_budget: u64,
    pub parallel_char_budget: u64,
    pub ratio: MixRatio,
    pub seed: u64,
}

impl MixPlan {
    /// Plan that takes `parallel_chars` of parallel text and the matching
    /// monolingual amount under `ratio`.
    pub fn balanced(parallel_chars: u64, ratio: MixRatio, seed: u64) -> Self {
        let mono = (parallel_chars as u128 * ratio.mono as u128 / ratio.parallel as u128) as u64;
        MixPlan {
            mono_char_budget: mono,
            parallel_char_budget: parallel_chars,
            ratio,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSummary {
    pub mono_docs: u64,
    pub mono_chars: u64,
    pub parallel_docs: u64,
    pub parallel_chars: u64,
    /// `2·|mono/total − planned mono share|`; equals `|mono − parallel| / total` at 1:1.
    pub ratio_deviation: f64,
}

fn char_count(d: &Document) -> u64 {
    d.text.chars().count() as u64
}

fn select_budget<'a>(docs: &'a [Document], budget: u64, side: &str) -> Result<(Vec<&'a Document>, u64)> {
    let mut sorted: Vec<&Document> = docs.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut taken = Vec::new();
    let mut chars = 0u64;
    for d in sorted {
        if chars >= budget {
            break;
        }
        chars += char_count(d);
        taken.push(d);
    }
    if chars < budget {
        return Err(Error::data(format!(
            "insufficient {side} data: {chars} characters available, budget {budget}"
        )));
    }
    Ok((taken, chars))
}

/// Selects each side in canonical id order until its budget is met, then
/// shuffles the union with the plan's seed.
pub fn mix_datasets(
    mono: &[Document],
    parallel_docs: &[Document],
    plan: &MixPlan,
) -> Result<(Vec<Document>, MixSummary)> {
    if mono.is_empty() {
        return Err(Error::data("monolingual input is empty"));
    }
    if parallel_docs.is_empty() {
        return Err(Error::data("parallel input is empty"));
    }
    if plan.mono_char_budget == 0 || plan.parallel_char_budget == 0 {
        return Err(Error::config("mix budgets must be positive"));
    }
    let (mono_sel, mono_chars) = select_budget(mono, plan.mono_char_budget, "monolingual")?;
    let (par_sel, par_chars) = select_budget(parallel_docs, plan.parallel_char_budget, "parallel")?;

    let total = (mono_chars + par_chars) as f64;
    let deviation = 2.0 * (mono_chars as f64 / total - plan.ratio.mono_share()).abs();
    if deviation > RATIO_TOLERANCE {
        return Err(Error::data(format!(
            "realized mono:parallel mix {mono_chars}:{par_chars} deviates {:.2}% from {} (limit {:.0}%)",
            deviation * 100.0,
            plan.ratio,
            RATIO_TOLERANCE * 100.0
        )));
    }

    let summary = MixSummary {
        mono_docs: mono_sel.len() as u64,
        mono_chars,
        parallel_docs: par_sel.len() as u64,
        parallel_chars: par_chars,
        ratio_deviation: deviation,
    };
    let mut mixed: Vec<Document> = mono_sel.into_iter().chain(par_sel).cloned().collect();
    mixed.sort_by(|a, b| a.id.cmp(&b.id));
    SeededRng::new(plan.seed).shuffle(&mut mixed);
    Ok((mixed, summary))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BridgeMode {
    Bridged,
    Unbridged,
}

impl FromStr for BridgeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bridged" => Ok(BridgeMode::Bridged),
            "unbridged" => Ok(BridgeMode::Unbridged),
            other => Err(Error::config(format!("mode must be bridged or unbridged, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub mode: BridgeMode,
    pub lang: String,
    pub seed: u64,
    pub ratio: String,
    pub shuffle_algorithm: String,
    pub template: Option<BridgeTemplate>,
    pub pair_count: u64,
    pub mono_input_docs: u64,
    pub mono_char_budget: u64,
    pub parallel_char_budget: u64,
    pub summary: MixSummary,
    pub output_docs: u64,
}

/// Builds one continual-pretraining dataset.
///
/// The whole parallel side is always used (its budget is its full character
/// count) so that the bridged and unbridged settings carry the same
/// sentences; the monolingual budget follows from the ratio.
pub fn build_setting(
    pairs: &[ParallelPair],
    mono: &[Document],
    mode: BridgeMode,
    template: &BridgeTemplate,
    ratio: MixRatio,
    seed: u64,
) -> Result<(Vec<Document>, DatasetManifest)> {
    if pairs.is_empty() {
        return Err(Error::data("no parallel pairs"));
    }
    let mut ids = std::collections::BTreeSet::new();
    for p in pairs {
        p.validate()?;
        if !ids.insert(p.id.as_str()) {
            return Err(Error::data(format!("duplicate pair id `{}`", p.id)));
        }
    }
    let parallel_docs = match mode {
        BridgeMode::Bridged => pairs
            .iter()
            .map(|p| render_bridge(p, template))
            .collect::<Result<Vec<_>>>()?,
        BridgeMode::Unbridged => explode_pairs(pairs),
    };
    let parallel_chars = parallel_docs.iter().map(char_count).sum();
    let plan = MixPlan::balanced(parallel_chars, ratio, seed);
    let (docs, summary) = mix_datasets(mono, &parallel_docs, &plan)?;
    let manifest = DatasetManifest {
        mode,
        lang: template.lang.clone(),
        seed,
        ratio: ratio.to_string(),
        shuffle_algorithm: SHUFFLE_ALGORITHM.to_owned(),
        template: (mode == BridgeMode::Bridged).then(|| template.clone()),
        pair_count: pairs.len() as u64,
        mono_input_docs: mono.len() as u64,
        mono_char_budget: plan.mono_char_budget,
        parallel_char_budget: plan.parallel_char_budget,
        output_docs: docs.len() as u64,
        summary,
    };
    Ok((docs, manifest))
}

/// Parallel sentences recoverable from a dataset: template-stripped bridges
/// and raw halves. Monolingual documents are ignored.
pub fn recover_sentences(docs: &[Document], template: &BridgeTemplate) -> Vec<String> {
    let mut out = Vec::new();
    for d in docs {
        if d.id.starts_with(BRIDGE_ID_PREFIX) {
            if let Some((en, xx)) = template.strip(&d.text) {
                out.push(en);
                out.push(xx);
            }
        } else if d.id.starts_with(EN_HALF_PREFIX) || d.id.starts_with(XX_HALF_PREFIX) {
            out.push(d.text.clone());
        }
    }
    out.sort();
    out
}

/// True if `text` contains Latin letters together with letters of another script.
pub fn mixes_scripts(text: &str) -> bool {
    let p = classify_script(text);
    p.latin > 0
        && [ScriptClass::Han, ScriptClass::Hangul, ScriptClass::Tibetan, ScriptClass::Mongolian]
            .iter()
            .any(|&c| p.get(c) > 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(id: &str, en: &str, xx: &str, lang: &str) -> ParallelPair {
        ParallelPair {
            id: id.into(),
            en_text: en.into(),
            xx_text: xx.into(),
            lang: lang.into(),
        }
    }

    fn docs(prefix: &str, n: usize, len: usize) -> Vec<Document> {
        (0..n)
            .map(|i| Document::new(format!("{prefix}{i:02}"), "zh", "字".repeat(len), "mono"))
            .collect()
    }

    #[test]
    fn renders_chinese_template() {
        let t = BridgeTemplate::new("zh", "English: {en} Chinese: {xx}", "Chinese").unwrap();
        let d = render_bridge(&pair("p1", "Hello.", "你好。", "zh"), &t).unwrap();
        assert_eq!(d.text, "English: Hello. Chinese: 你好。");
        assert_eq!(d.id, "bridge:p1");
    }

    #[test]
    fn renders_korean_builtin() {
        let t = BridgeTemplate::builtin("ko").unwrap();
        let d = render_bridge(&pair("p", "Hi.", "안녕.", "ko"), &t).unwrap();
        assert_eq!(d.text, "English: Hi. Korean: 안녕.");
    }

    #[test]
    fn empty_half_is_rejected() {
        let t = BridgeTemplate::builtin("zh").unwrap();
        assert!(matches!(render_bridge(&pair("p", "Hi", "", "zh"), &t), Err(Error::Data(_))));
    }

    #[test]
    fn bad_templates_are_config_errors() {
        assert!(BridgeTemplate::new("zh", "{en} {en} {xx}", "x").is_err());
        assert!(BridgeTemplate::new("zh", "{xx} then {en}", "x").is_err());
        assert!(BridgeTemplate::new("zh", "{en} only", "x").is_err());
        let t = BridgeTemplate::builtin("zh").unwrap();
        assert!(matches!(render_bridge(&pair("p", "Hi", "안녕", "ko"), &t), Err(Error::Config(_))));
    }

    #[test]
    fn substitution_does_not_rescan() {
        let t = BridgeTemplate::builtin("zh").unwrap();
        let d = render_bridge(&pair("p", "a {xx} b", "你", "zh"), &t).unwrap();
        assert_eq!(d.text, "English: a {xx} b Chinese: 你");
    }

    #[test]
    fn strip_inverts_render() {
        let t = BridgeTemplate::builtin("bo").unwrap();
        let p = pair("p", "Good day.", "བཀྲ་ཤིས་བདེ་ལེགས།", "bo");
        let d = render_bridge(&p, &t).unwrap();
        assert_eq!(t.strip(&d.text), Some((p.en_text, p.xx_text)));
        assert!(!t.matches("Good day."));
    }

    #[test]
    fn explode_conserves_halves() {
        assert!(explode_pairs(&[]).is_empty());
        let out = explode_pairs(&[pair("p", "Hi.", "你好", "zh"), pair("q", "Yes.", "是", "zh")]);
        assert_eq!(out.len(), 4);
        assert_eq!(out[0].id, "half:en:p");
        assert_eq!(out[1].id, "half:xx:p");
        let mut texts: Vec<&str> = out.iter().map(|d| d.text.as_str()).collect();
        texts.sort();
        assert_eq!(texts, vec!["Hi.", "Yes.", "你好", "是"]);
    }

    #[test]
    fn budget_arithmetic() {
        let plan = MixPlan {
            mono_char_budget: 500,
            parallel_char_budget: 500,
            ratio: MixRatio::default(),
            seed: 7,
        };
        let (out, summary) = mix_datasets(&docs("m", 10, 100), &docs("p", 10, 100), &plan).unwrap();
        assert_eq!(out.len(), 10);
        assert_eq!((summary.mono_docs, summary.parallel_docs), (5, 5));
        assert_eq!(summary.ratio_deviation, 0.0);
        // canonical order: the first five ids of each side
        let mut ids: Vec<&str> = out.iter().map(|d| d.id.as_str()).collect();
        ids.sort();
        assert_eq!(ids, vec!["m00", "m01", "m02", "m03", "m04", "p00", "p01", "p02", "p03", "p04"]);
    }

    #[test]
    fn seeds_permute_the_same_multiset() {
        let plan = |seed| MixPlan {
            mono_char_budget: 1000,
            parallel_char_budget: 1000,
            ratio: MixRatio::default(),
            seed,
        };
        let (a, _) = mix_datasets(&docs("m", 10, 100), &docs("p", 10, 100), &plan(7)).unwrap();
        let (a2, _) = mix_datasets(&docs("m", 10, 100), &docs("p", 10, 100), &plan(7)).unwrap();
        let (b, _) = mix_datasets(&docs("m", 10, 100), &docs("p", 10, 100), &plan(8)).unwrap();
        assert_eq!(a, a2);
        assert_ne!(a, b);
        let sorted = |mut v: Vec<Document>| {
            v.sort_by(|x, y| x.id.cmp(&y.id));
            v
        };
        assert_eq!(sorted(a), sorted(b));
    }

    #[test]
    fn insufficient_side_is_named() {
        let plan = MixPlan {
            mono_char_budget: 5000,
            parallel_char_budget: 500,
            ratio: MixRatio::default(),
            seed: 1,
        };
        let err = mix_datasets(&docs("m", 10, 100), &docs("p", 10, 100), &plan).unwrap_err();
        assert!(err.to_string().contains("monolingual"), "{err}");
        assert!(mix_datasets(&[], &docs("p", 1, 1), &plan).is_err());
    }

    #[test]
    fn ratio_violation_is_reported() {
        // one 1000-char mono doc against a 100-char parallel budget
        let plan = MixPlan {
            mono_char_budget: 100,
            parallel_char_budget: 100,
            ratio: MixRatio::default(),
            seed: 1,
        };
        assert!(mix_datasets(&docs("m", 1, 1000), &docs("p", 1, 100), &plan).is_err());
    }

    #[test]
    fn ratio_parsing() {
        assert_eq!("2:1".parse::<MixRatio>().unwrap(), MixRatio { mono: 2, parallel: 1 });
        assert!("0:1".parse::<MixRatio>().is_err());
        assert!("1".parse::<MixRatio>().is_err());
    }

    #[test]
    fn template_file_forms() {
        let one = parse_template_file(r#"{"lang":"zh","pattern":"EN {en} ZH {xx}","display_name":"Chinese"}"#).unwrap();
        assert_eq!(one["zh"].pattern, "EN {en} ZH {xx}");
        let many = parse_template_file(
            r#"[{"lang":"zh","pattern":"{en}|{xx}","display_name":"Chinese"},{"lang":"ko","pattern":"{en}/{xx}","display_name":"Korean"}]"#,
        )
        .unwrap();
        assert_eq!(many.len(), 2);
        assert!(parse_template_file(r#"{"lang":"zh","pattern":"{xx}","display_name":"x"}"#).is_err());
    }

    #[test]
    fn build_setting_conserves_sentences() {
        let t = BridgeTemplate::builtin("zh").unwrap();
        let pairs: Vec<ParallelPair> = (0..20)
            .map(|i| pair(&format!("p{i:02}"), &format!("Sentence number {i}."), &"中文句子".repeat(i % 3 + 1), "zh"))
            .collect();
        let mono = docs("m", 400, 10);
        let (bridged, mb) = build_setting(&pairs, &mono, BridgeMode::Bridged, &t, MixRatio::default(), 3).unwrap();
        let (plain, mu) = build_setting(&pairs, &mono, BridgeMode::Unbridged, &t, MixRatio::default(), 3).unwrap();
        assert_eq!(recover_sentences(&bridged, &t), recover_sentences(&plain, &t));
        assert!(plain.iter().all(|d| !t.matches(&d.text)));
        assert!(plain.iter().all(|d| !mixes_scripts(&d.text)));
        assert!(mb.summary.ratio_deviation <= RATIO_TOLERANCE);
        assert!(mu.summary.ratio_deviation <= RATIO_TOLERANCE);
        assert_eq!(mu.template, None);
        let json = serde_json::to_string(&mb).unwrap();
        let back: DatasetManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(back.mode, BridgeMode::Bridged);
    }
}
