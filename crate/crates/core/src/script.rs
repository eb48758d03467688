//! Code-point script classes.
//!
//! Every Unicode scalar value maps to exactly one [`ScriptClass`] through
//! fixed, versioned code-point ranges. The ranges cover the writing systems
//! of the four studied languages (Han, Hangul, Tibetan, Mongolian) plus Latin.
//! Whitespace, ASCII digits, ASCII punctuation and the General Punctuation
//! block are script-neutral ([`ScriptClass::Common`]) and survive every
//! filter. Everything else, including CJK full-width punctuation, is
//! [`ScriptClass::Other`].

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScriptClass {
    Latin,
    Han,
    Hangul,
    Tibetan,
    Mongolian,
    Common,
    Other,
}

impl ScriptClass {
    pub const ALL: [ScriptClass; 7] = [
        ScriptClass::Latin,
        ScriptClass::Han,
        ScriptClass::Hangul,
        ScriptClass::Tibetan,
        ScriptClass::Mongolian,
        ScriptClass::Common,
        ScriptClass::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScriptClass::Latin => "latin",
            ScriptClass::Han => "han",
            ScriptClass::Hangul => "hangul",
            ScriptClass::Tibetan => "tibetan",
            ScriptClass::Mongolian => "mongolian",
            ScriptClass::Common => "common",
            ScriptClass::Other => "other",
        }
    }

    /// Letter-bearing script, i.e. neither `common` nor `other`.
    pub fn is_script(self) -> bool {
        !matches!(self, ScriptClass::Common | ScriptClass::Other)
    }

    /// The script a language's text is written in, for the languages the
    /// toolkit ships defaults for.
    pub fn for_lang(lang: &str) -> Option<ScriptClass> {
        match lang {
            "en" => Some(ScriptClass::Latin),
            "zh" => Some(ScriptClass::Han),
            "ko" => Some(ScriptClass::Hangul),
            "bo" => Some(ScriptClass::Tibetan),
            "mn" => Some(ScriptClass::Mongolian),
            _ => None,
        }
    }
}

impl fmt::Display for ScriptClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScriptClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScriptClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::config(format!("unknown script class `{s}`")))
    }
}

/// Parses a comma-separated script set such as `latin` or `han,common`.
pub fn parse_script_set(spec: &str) -> Result<BTreeSet<ScriptClass>> {
    let set = spec
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(ScriptClass::from_str)
        .collect::<Result<BTreeSet<_>>>()?;
    if set.is_empty() {
        return Err(Error::config("empty script set"));
    }
    Ok(set)
}

fn is_latin_letter(c: char) -> bool {
    match c {
        'A'..='Z' | 'a'..='z' => true,
        // Latin-1 Supplement letters, excluding × and ÷
        '\u{00C0}'..='\u{00FF}' => c != '\u{00D7}' && c != '\u{00F7}',
        // Latin Extended-A and Extended-B
        '\u{0100}'..='\u{024F}' => true,
        _ => false,
    }
}

pub fn classify_char(c: char) -> ScriptClass {
    if is_latin_letter(c) {
        return ScriptClass::Latin;
    }
    match c {
        '\u{4E00}'..='\u{9FFF}' | '\u{3400}'..='\u{4DBF}' => ScriptClass::Han,
        '\u{AC00}'..='\u{D7AF}' | '\u{1100}'..='\u{11FF}' | '\u{3130}'..='\u{318F}' => {
            ScriptClass::Hangul
        }
        '\u{0F00}'..='\u{0FFF}' => ScriptClass::Tibetan,
        '\u{1800}'..='\u{18AF}' => ScriptClass::Mongolian,
        _ if c.is_whitespace()
            || c.is_ascii_digit()
            || c.is_ascii_punctuation()
            || ('\u{2000}'..='\u{206F}').contains(&c) =>
        {
            ScriptClass::Common
        }
        _ => ScriptClass::Other,
    }
}

/// Per-class code-point counts of a text.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptProfile {
    pub latin: u64,
    pub han: u64,
    pub hangul: u64,
    pub tibetan: u64,
    pub mongolian: u64,
    pub common: u64,
    pub other: u64,
}

impl ScriptProfile {
    pub fn get(&self, class: ScriptClass) -> u64 {
        match class {
            ScriptClass::Latin => self.latin,
            ScriptClass::Han => self.han,
            ScriptClass::Hangul => self.hangul,
            ScriptClass::Tibetan => self.tibetan,
            ScriptClass::Mongolian => self.mongolian,
            ScriptClass::Common => self.common,
            ScriptClass::Other => self.other,
        }
    }

    fn slot(&mut self, class: ScriptClass) -> &mut u64 {
        match class {
            ScriptClass::Latin => &mut self.latin,
            ScriptClass::Han => &mut self.han,
            ScriptClass::Hangul => &mut self.hangul,
            ScriptClass::Tibetan => &mut self.tibetan,
            ScriptClass::Mongolian => &mut self.mongolian,
            ScriptClass::Common => &mut self.common,
            ScriptClass::Other => &mut self.other,
        }
    }

    pub fn add(&mut self, class: ScriptClass, n: u64) {
        *self.slot(class) += n;
    }

    pub fn merge(&mut self, other: &ScriptProfile) {
        for class in ScriptClass::ALL {
            self.add(class, other.get(class));
        }
    }

    pub fn total(&self) -> u64 {
        ScriptClass::ALL.iter().map(|&c| self.get(c)).sum()
    }

    /// Count of code points outside `allowed` and outside `common`.
    pub fn foreign(&self, allowed: &BTreeSet<ScriptClass>) -> u64 {
        ScriptClass::ALL
            .iter()
            .filter(|c| **c != ScriptClass::Common && !allowed.contains(c))
            .map(|&c| self.get(c))
            .sum()
    }
}

pub fn classify_script(text: &str) -> ScriptProfile {
    let mut profile = ScriptProfile::default();
    for c in text.chars() {
        profile.add(classify_char(c), 1);
    }
    profile
}
