//! Frequent n-gram mining and accept-list merging.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PreprocessError, TokenStream};

pub const MIN_N: usize = 2;
pub const MAX_N: usize = 6;
pub const JOINER: char = '_';

const SHARD: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramCandidate {
    pub phrase: Vec<String>,
    pub frequency: u64,
}

impl NgramCandidate {
    pub fn text(&self) -> String {
        self.phrase.join(" ")
    }
}

/// Counts every contiguous window of `n` tokens across the corpus and returns
/// those seen at least `min_frequency` times, most frequent first, ties in
/// lexicographic phrase order.
pub fn mine_ngrams(
    corpus: &[TokenStream],
    n: usize,
    min_frequency: u64,
) -> Result<Vec<NgramCandidate>, PreprocessError> {
    if !(MIN_N..=MAX_N).contains(&n) {
        return Err(PreprocessError::InvalidN(n));
    }
    let min_frequency = min_frequency.max(1);
    let counts = corpus
        .par_chunks(SHARD)
        .map(|shard| {
            let mut local: HashMap<&[String], u64> = HashMap::new();
            for stream in shard {
                for window in stream.tokens.windows(n) {
                    *local.entry(window).or_insert(0) += 1;
                }
            }
            local
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_insert(0) += v;
            }
            a
        });
    let mut out: Vec<NgramCandidate> = counts
        .into_iter()
        .filter(|(_, f)| *f >= min_frequency)
        .map(|(phrase, frequency)| NgramCandidate { phrase: phrase.to_vec(), frequency })
        .collect();
    out.sort_by(|a, b| b.frequency.cmp(&a.frequency).then_with(|| a.phrase.cmp(&b.phrase)));
    Ok(out)
}

/// Writes the curation report: `phrase,n,frequency`.
pub fn write_candidates_csv<W: Write>(writer: W, candidates: &[NgramCandidate]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["phrase", "n", "frequency"])?;
    for c in candidates {
        w.write_record([c.text(), c.phrase.len().to_string(), c.frequency.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Curated phrases to merge, grouped by length.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NgramAcceptList {
    by_n: BTreeMap<usize, HashSet<Vec<String>>>,
}

impl NgramAcceptList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, phrase: Vec<String>) -> Result<(), PreprocessError> {
        let n = phrase.len();
        if !(MIN_N..=MAX_N).contains(&n) {
            return Err(PreprocessError::InvalidN(n));
        }
        if let Some(bad) = phrase.iter().find(|w| w.is_empty() || w.contains(char::is_whitespace) || w.contains(JOINER)) {
            return Err(PreprocessError::InvalidPhrase { line: 0, message: format!("invalid word `{bad}`") });
        }
        self.by_n.entry(n).or_default().insert(phrase);
        Ok(())
    }

    pub fn from_phrases<I, S>(phrases: I) -> Result<Self, PreprocessError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut list = Self::new();
        for p in phrases {
            list.insert(split_phrase(p.as_ref()))?;
        }
        Ok(list)
    }

    /// Parses the accept-list file format: one phrase per line, words
    /// separated by spaces (or `_`), `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, PreprocessError> {
        let mut list = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            list.insert(split_phrase(line)).map_err(|e| PreprocessError::InvalidPhrase {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(list)
    }

    pub fn contains(&self, phrase: &[String]) -> bool {
        self.by_n.get(&phrase.len()).is_some_and(|s| s.contains(phrase))
    }

    pub fn len(&self) -> usize {
        self.by_n.values().map(HashSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Phrase lengths present, longest first.
    pub fn lengths_descending(&self) -> Vec<usize> {
        self.by_n.keys().rev().copied().collect()
    }
}

fn split_phrase(p: &str) -> Vec<String> {
    p.split(|c: char| c.is_whitespace() || c == JOINER)
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Replaces accepted phrases with underscore-joined tokens, longest phrases
/// first. Each length gets one left-to-right pass; tokens merged by a longer
/// phrase are not matched again.
pub fn merge_ngrams(tokens: &[String], accept: &NgramAcceptList) -> Vec<String> {
    let mut current: Vec<(String, bool)> = tokens.iter().map(|t| (t.clone(), false)).collect();
    for n in accept.lengths_descending() {
        if current.len() < n {
            continue;
        }
        let mut next = Vec::with_capacity(current.len());
        let mut i = 0;
        while i < current.len() {
            if i + n <= current.len() {
                let window = &current[i..i + n];
                if window.iter().all(|(_, merged)| !merged) {
                    let words: Vec<String> = window.iter().map(|(t, _)| t.clone()).collect();
                    if accept.contains(&words) {
                        next.push((words.join(&JOINER.to_string()), true));
                        i += n;
                        continue;
                    }
                }
            }
            next.push(current[i].clone());
            i += 1;
        }
        current = next;
    }
    current.into_iter().map(|(t, _)| t).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn stream(s: &str) -> TokenStream {
        TokenStream { article_id: "d".into(), tokens: toks(s) }
    }

    fn brute_count(corpus: &[TokenStream], phrase: &[String]) -> u64 {
        let mut count = 0;
        for s in corpus {
            for start in 0..s.tokens.len() {
                if start + phrase.len() <= s.tokens.len() && s.tokens[start..start + phrase.len()] == *phrase {
                    count += 1;
                }
            }
        }
        count
    }

    #[test]
    fn mine_counts_windows() {
        let out = mine_ngrams(&[stream("a b a b")], 2, 2).unwrap();
        assert_eq!(out, vec![NgramCandidate { phrase: toks("a b"), frequency: 2 }]);
        assert!(mine_ngrams(&[stream("alone")], 2, 1).unwrap().is_empty());
        assert!(matches!(mine_ngrams(&[], 7, 1), Err(PreprocessError::InvalidN(7))));
        assert!(matches!(mine_ngrams(&[], 1, 1), Err(PreprocessError::InvalidN(1))));
    }

    #[test]
    fn mine_ranks_planted_phrase_first() {
        let mut corpus = Vec::new();
        for i in 0..100 {
            corpus.push(stream(&format!("word{} mental health filler{} other{}", i % 7, i % 13, i % 5)));
        }
        let out = mine_ngrams(&corpus, 2, 1).unwrap();
        assert_eq!(out[0].phrase, toks("mental health"));
        assert_eq!(out[0].frequency, 100);
    }

    #[test]
    fn mine_ties_are_lexicographic() {
        let out = mine_ngrams(&[stream("c d a b")], 2, 1).unwrap();
        let texts: Vec<_> = out.iter().map(NgramCandidate::text).collect();
        assert_eq!(texts, ["a b", "c d", "d a"]);
    }

    #[test]
    fn merge_examples() {
        let accept = NgramAcceptList::from_phrases(["vaccine efficacy"]).unwrap();
        assert_eq!(merge_ngrams(&toks("vaccine efficacy"), &accept), toks("vaccine_efficacy"));

        let accept = NgramAcceptList::from_phrases(["body mass index", "mass index"]).unwrap();
        assert_eq!(merge_ngrams(&toks("body mass index"), &accept), toks("body_mass_index"));
        assert_eq!(merge_ngrams(&toks("high mass index"), &accept), toks("high mass_index"));

        let empty = NgramAcceptList::new();
        assert_eq!(merge_ngrams(&toks("a b c"), &empty), toks("a b c"));
    }

    #[test]
    fn merge_is_left_to_right() {
        let accept = NgramAcceptList::from_phrases(["a a"]).unwrap();
        assert_eq!(merge_ngrams(&toks("a a a"), &accept), toks("a_a a"));
        let accept = NgramAcceptList::from_phrases(["receive vaccine", "vaccine efficacy"]).unwrap();
        assert_eq!(merge_ngrams(&toks("receive vaccine efficacy"), &accept), toks("receive_vaccine efficacy"));
    }

    #[test]
    fn parse_accept_file() {
        let list = NgramAcceptList::parse("# curated\nvaccine efficacy\n\nbody mass index # trigram\nmental_health\n").unwrap();
        assert_eq!(list.len(), 3);
        assert_eq!(list.lengths_descending(), vec![3, 2]);
        assert!(list.contains(&toks("mental health")));
        match NgramAcceptList::parse("ok phrase\nsingle\n") {
            Err(PreprocessError::InvalidPhrase { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(NgramAcceptList::parse("a b c d e f g").is_err());
    }

    #[test]
    fn candidates_csv() {
        let mut buf = Vec::new();
        let c = vec![NgramCandidate { phrase: toks("mental health"), frequency: 12 }];
        write_candidates_csv(&mut buf, &c).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "phrase,n,frequency\nmental health,2,12\n");
    }

    fn small_tokens() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 0..30)
            .prop_map(|v| v.into_iter().map(String::from).collect())
    }

    proptest! {
        #[test]
        fn mined_counts_match_brute_force(docs in prop::collection::vec(small_tokens(), 1..6), n in 2usize..4) {
            let corpus: Vec<TokenStream> = docs.into_iter().map(|tokens| TokenStream { article_id: String::new(), tokens }).collect();
            for cand in mine_ngrams(&corpus, n, 1).unwrap() {
                prop_assert_eq!(cand.frequency, brute_count(&corpus, &cand.phrase));
            }
        }

        #[test]
        fn merge_never_grows_and_preserves_text(tokens in small_tokens()) {
            let accept = NgramAcceptList::from_phrases(["a b c", "b c", "d a"]).unwrap();
            let merged = merge_ngrams(&tokens, &accept);
            prop_assert!(merged.len() <= tokens.len());
            let flat: Vec<String> = merged.iter().flat_map(|t| t.split(JOINER).map(str::to_string)).collect();
            prop_assert_eq!(flat, tokens);
            // the bigram inside an accepted trigram is never merged on its own there
            for (i, t) in merged.iter().enumerate() {
                if t == "b_c" {
                    prop_assert!(i == 0 || merged[i - 1] != "a");
                }
            }
        }
    }
}
