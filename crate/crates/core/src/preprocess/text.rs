//! Contraction expansion, tokenization and lemmatization.

use std::collections::HashMap;
use std::sync::OnceLock;

fn contraction_table() -> &'static HashMap<&'static str, &'static str> {
    static TABLE: OnceLock<HashMap<&'static str, &'static str>> = OnceLock::new();
    TABLE.get_or_init(|| {
        include_str!("../../data/contractions.txt")
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .filter_map(|l| l.split_once('\t'))
            .collect()
    })
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Expansion for a single contraction, lowercase.
fn expand_word(lower: &str) -> Option<String> {
    if let Some(e) = contraction_table().get(lower) {
        return Some((*e).to_string());
    }
    const SUFFIXES: &[(&str, &str)] = &[
        ("n't", " not"),
        ("'re", " are"),
        ("'ve", " have"),
        ("'ll", " will"),
        ("'m", " am"),
        ("'d", " would"),
    ];
    SUFFIXES.iter().find_map(|(suffix, expansion)| {
        let stem = lower.strip_suffix(suffix)?;
        (!stem.is_empty() && stem.chars().all(char::is_alphabetic)).then(|| format!("{stem}{expansion}"))
    })
}

fn carry_case(original: &str, expansion: String) -> String {
    match original.chars().next() {
        Some(c) if c.is_uppercase() => {
            let mut chars = expansion.chars();
            match chars.next() {
                Some(first) => first.to_uppercase().chain(chars).collect(),
                None => expansion,
            }
        }
        _ => expansion,
    }
}

/// Replaces known contractions with their expanded forms, keeping the case
/// of the leading letter.
pub fn expand_contractions(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 16);
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut String| {
        if word.is_empty() {
            return;
        }
        let core = word.trim_matches(is_apostrophe);
        if core.chars().any(is_apostrophe) {
            let lower: String = core.to_lowercase().replace('\u{2019}', "'");
            if let Some(expanded) = expand_word(&lower) {
                let start = word.find(core).unwrap_or(0);
                out.push_str(&word[..start]);
                out.push_str(&carry_case(core, expanded));
                out.push_str(&word[start + core.len()..]);
                word.clear();
                return;
            }
        }
        out.push_str(word);
        word.clear();
    };
    for c in text.chars() {
        if c.is_alphabetic() || is_apostrophe(c) {
            word.push(c);
        } else {
            flush(&mut word, &mut out);
            out.push(c);
        }
    }
    flush(&mut word, &mut out);
    out
}

/// Splits on non-alphanumeric characters, lowercases, strips digits and
/// keeps alphabetic tokens of at least two characters.
pub fn tokenize_and_normalize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter_map(|piece| {
            let token: String = piece.chars().filter(|c| !c.is_numeric()).flat_map(char::to_lowercase).collect();
            (token.chars().count() >= 2 && token.chars().all(char::is_alphabetic)).then_some(token)
        })
        .collect()
}

fn lemma_exceptions() -> &'static HashMap<&'static str, &'static str> {
    static TABLE: OnceLock<HashMap<&'static str, &'static str>> = OnceLock::new();
    TABLE.get_or_init(|| {
        include_str!("../../data/lemmas.txt")
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .filter_map(|l| {
                let mut parts = l.split_whitespace();
                Some((parts.next()?, parts.next()?))
            })
            .collect()
    })
}

const MIN_STEM: usize = 3;

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u')
}

fn has_vowel(s: &str) -> bool {
    s.chars().any(|c| is_vowel(c) || c == 'y')
}

fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Restores the stem after an `-ed` / `-ing` strip.
fn repair_stem(stem: &str) -> String {
    const ADD_E: &[&str] = &[
        "at", "bl", "iz", "c", "v", "u", "eas", "ias", "aus", "uir", "ur", "ag", "rg", "dg", "os", "is", "ut",
        "vid", "cid", "lud", "crib", "par", "clar",
    ];
    let chars: Vec<char> = stem.chars().collect();
    let n = chars.len();
    if n >= 2 && chars[n - 1] == chars[n - 2] && !is_vowel(chars[n - 1]) {
        let last = chars[n - 1];
        let keep_double = matches!(last, 's' | 'z') || (last == 'l' && n < 6);
        if !keep_double {
            return chars[..n - 1].iter().collect();
        }
        return stem.to_string();
    }
    if ADD_E.iter().any(|s| stem.ends_with(s)) {
        return format!("{stem}e");
    }
    // short consonant-vowel-consonant stem: hop(ed) -> hope
    let vowel_groups = chars
        .iter()
        .enumerate()
        .filter(|(i, c)| is_vowel(**c) && (*i == 0 || !is_vowel(chars[i - 1])))
        .count();
    if n >= 3
        && vowel_groups == 1
        && !is_vowel(chars[n - 1])
        && !matches!(chars[n - 1], 'w' | 'x' | 'y')
        && is_vowel(chars[n - 2])
        && !is_vowel(chars[n - 3])
    {
        return format!("{stem}e");
    }
    stem.to_string()
}

fn lemma_once(word: &str) -> String {
    if let Some(base) = lemma_exceptions().get(word) {
        return (*base).to_string();
    }
    let n = char_len(word);
    if n <= MIN_STEM {
        return word.to_string();
    }
    for suffix in ["ies", "ied"] {
        if let Some(stem) = word.strip_suffix(suffix) {
            if char_len(stem) >= MIN_STEM {
                return format!("{stem}y");
            }
        }
    }
    for suffix in ["sses", "shes", "ches", "xes", "zzes"] {
        if word.ends_with(suffix) {
            let stem = &word[..word.len() - 2];
            if char_len(stem) >= MIN_STEM {
                return stem.to_string();
            }
        }
    }
    if let Some(stem) = word.strip_suffix('s') {
        if !(stem.ends_with('s') || word.ends_with("us") || word.ends_with("is")) && char_len(stem) >= MIN_STEM {
            return stem.to_string();
        }
        return word.to_string();
    }
    if let Some(stem) = word.strip_suffix("ing") {
        if char_len(stem) >= MIN_STEM && has_vowel(stem) {
            return repair_stem(stem);
        }
        return word.to_string();
    }
    if !word.ends_with("eed") {
        if let Some(stem) = word.strip_suffix("ed") {
            if char_len(stem) >= MIN_STEM && has_vowel(stem) {
                return repair_stem(stem);
            }
        }
    }
    word.to_string()
}

/// Base form of a lowercase word: exception table first, then suffix rules.
/// Applied until stable, so `lemma(lemma(w)) == lemma(w)`.
pub fn lemma(word: &str) -> String {
    let mut current = word.to_string();
    for _ in 0..8 {
        let next = lemma_once(&current);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

pub fn lemmatize(tokens: &[String]) -> Vec<String> {
    tokens.iter().map(|t| lemma(t)).collect()
}
