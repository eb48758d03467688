use crate::script::{classify_char, ScriptClass};

/// Tag stored in every index; indexes built with another tag are rejected.
pub const TOKENIZER_VERSION: &str = "cb-tok/1";

fn is_tibetan_delimiter(c: char) -> bool {
    // tsheg, non-breaking tsheg, shad and its variants
    matches!(c, '\u{0F0B}' | '\u{0F0C}' | '\u{0F0D}'..='\u{0F14}') || c.is_whitespace() || c.is_ascii_punctuation()
}

fn is_mongolian_delimiter(c: char) -> bool {
    // Mongolian punctuation, leaving free variation selectors and the vowel separator inside words
    matches!(c, '\u{1800}'..='\u{1805}' | '\u{1807}'..='\u{180A}')
        || c.is_whitespace()
        || c.is_ascii_punctuation()
        || ('\u{2000}'..='\u{206F}').contains(&c)
}

fn words(text: &str, out: &mut Vec<String>) {
    let mut word = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
        } else if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
}

fn split_on(text: &str, delimiter: impl Fn(char) -> bool) -> Vec<String> {
    text.split(delimiter)
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Index terms for `text` written in `lang`.
///
/// Chinese text yields one term per Han code point (other alphanumeric runs
/// stay whole words). Tibetan splits into tsheg-delimited syllables,
/// Mongolian into whitespace-delimited words. Everything else is lowercased
/// and split on non-alphanumeric characters.
pub fn tokenize_for_index(text: &str, lang: &str) -> Vec<String> {
    match lang {
        "zh" => {
            let mut out = Vec::new();
            let mut run = String::new();
            for c in text.chars() {
                if classify_char(c) == ScriptClass::Han {
                    if !run.is_empty() {
                        words(&std::mem::take(&mut run), &mut out);
                    }
                    out.push(c.to_string());
                } else {
                    run.push(c);
                }
            }
            words(&run, &mut out);
            out
        }
        "bo" => split_on(text, is_tibetan_delimiter),
        "mn" => split_on(text, is_mongolian_delimiter),
        _ => {
            let mut out = Vec::new();
            words(text, &mut out);
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latin_words() {
        assert_eq!(tokenize_for_index("Hello, World", "en"), vec!["hello", "world"]);
        assert_eq!(tokenize_for_index("", "en"), Vec::<String>::new());
    }

    #[test]
    fn han_per_code_point() {
        assert_eq!(tokenize_for_index("你好", "zh"), vec!["你", "好"]);
        assert_eq!(tokenize_for_index("在2024年，GPT", "zh"), vec!["在", "2024", "年", "gpt"]);
    }

    #[test]
    fn tibetan_syllables() {
        assert_eq!(tokenize_for_index("བོད་ཡིག་ལ", "bo"), vec!["བོད", "ཡིག", "ལ"]);
        assert_eq!(tokenize_for_index("བོད་ཡིག་།", "bo"), vec!["བོད", "ཡིག"]);
    }

    #[test]
    fn mongolian_words() {
        assert_eq!(tokenize_for_index("ᠮᠣᠩᠭᠣᠯ ᠬᠡᠯᠡ᠃", "mn"), vec!["ᠮᠣᠩᠭᠣᠯ", "ᠬᠡᠯᠡ"]);
    }

    #[test]
    fn hangul_words() {
        assert_eq!(tokenize_for_index("서울은 수도이다.", "ko"), vec!["서울은", "수도이다"]);
    }
}
