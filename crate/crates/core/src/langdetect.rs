//! Character n-gram language identification.
//!
//! A multinomial naive Bayes classifier over character 1- to 3-grams of
//! space-padded lowercase words. Profiles are trained once from the bundled
//! sample texts in `data/lang/`.

use std::collections::HashMap;
use std::sync::OnceLock;

/// Inputs shorter than this (in characters, after trimming) are undetermined.
pub const MIN_CHARS: usize = 20;
/// Only this many leading characters are examined.
const MAX_CHARS: usize = 4096;
const MAX_GRAM: usize = 3;
const SMOOTHING: f64 = 0.5;

pub const UNDETERMINED: &str = "und";

const SAMPLES: &[(&str, &str)] = &[
    ("de", include_str!("../data/lang/de.txt")),
    ("en", include_str!("../data/lang/en.txt")),
    ("es", include_str!("../data/lang/es.txt")),
    ("fr", include_str!("../data/lang/fr.txt")),
    ("it", include_str!("../data/lang/it.txt")),
    ("nl", include_str!("../data/lang/nl.txt")),
    ("pl", include_str!("../data/lang/pl.txt")),
    ("pt", include_str!("../data/lang/pt.txt")),
    ("sv", include_str!("../data/lang/sv.txt")),
    ("tr", include_str!("../data/lang/tr.txt")),
];

struct Profile {
    code: &'static str,
    counts: HashMap<String, u32>,
    total: f64,
}

struct Profiles {
    langs: Vec<Profile>,
    /// Number of distinct grams across all profiles.
    vocabulary: f64,
}

fn profiles() -> &'static Profiles {
    static PROFILES: OnceLock<Profiles> = OnceLock::new();
    PROFILES.get_or_init(|| {
        let mut all = std::collections::HashSet::new();
        let langs: Vec<Profile> = SAMPLES
            .iter()
            .map(|(code, text)| {
                let mut counts = HashMap::new();
                for g in grams(text) {
                    all.insert(g.clone());
                    *counts.entry(g).or_insert(0) += 1;
                }
                let total = counts.values().map(|&c| c as f64).sum();
                Profile { code, counts, total }
            })
            .collect();
        Profiles { langs, vocabulary: all.len() as f64 }
    })
}

fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 2);
    out.push(' ');
    let mut last_space = true;
    for c in text.chars().take(MAX_CHARS) {
        if c.is_alphabetic() {
            out.extend(c.to_lowercase());
            last_space = false;
        } else if !last_space {
            out.push(' ');
            last_space = true;
        }
    }
    if !last_space {
        out.push(' ');
    }
    out
}

fn grams(text: &str) -> Vec<String> {
    let chars: Vec<char> = normalize(text).chars().collect();
    let mut out = Vec::new();
    for n in 1..=MAX_GRAM {
        for w in chars.windows(n) {
            if w.iter().all(|c| *c == ' ') || (n == 1 && w[0] == ' ') {
                continue;
            }
            out.push(w.iter().collect());
        }
    }
    out
}

/// Per-language posterior probabilities, in bundled-profile order.
pub fn language_posteriors(text: &str) -> Vec<(&'static str, f64)> {
    let p = profiles();
    let observed: Vec<String> = grams(text)
        .into_iter()
        .filter(|g| p.langs.iter().any(|l| l.counts.contains_key(g)))
        .collect();
    let log_likelihoods: Vec<f64> = p
        .langs
        .iter()
        .map(|l| {
            let denom = (l.total + SMOOTHING * p.vocabulary).ln();
            observed
                .iter()
                .map(|g| (l.counts.get(g).copied().unwrap_or(0) as f64 + SMOOTHING).ln() - denom)
                .sum()
        })
        .collect();
    let max = log_likelihoods.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_likelihoods.iter().map(|ll| (ll - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    p.langs.iter().zip(weights).map(|(l, w)| (l.code, w / z)).collect()
}

/// Best-matching language code and its posterior probability.
///
/// Text with fewer than [`MIN_CHARS`] characters yields `("und", 0.0)`.
pub fn detect_language(text: &str) -> (String, f64) {
    let trimmed = text.trim();
    if trimmed.chars().count() < MIN_CHARS || !trimmed.chars().any(char::is_alphabetic) {
        return (UNDETERMINED.to_string(), 0.0);
    }
    let posteriors = language_posteriors(trimmed);
    let (code, conf) = posteriors
        .into_iter()
        .fold(None, |best: Option<(&str, f64)>, (c, p)| match best {
            Some((_, bp)) if bp >= p => best,
            _ => Some((c, p)),
        })
        .expect("at least one profile");
    (code.to_string(), conf)
}
