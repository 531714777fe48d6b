//! Term frequencies over description corpora.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// Standard English stopword list (the NLTK corpus).
const ENGLISH_STOPWORDS: &[&str] = &[
    "i", "me", "my", "myself", "we", "our", "ours", "ourselves", "you", "you're", "you've", "you'll", "you'd", "your",
    "yours", "yourself", "yourselves", "he", "him", "his", "himself", "she", "she's", "her", "hers", "herself", "it",
    "it's", "its", "itself", "they", "them", "their", "theirs", "themselves", "what", "which", "who", "whom", "this",
    "that", "that'll", "these", "those", "am", "is", "are", "was", "were", "be", "been", "being", "have", "has", "had",
    "having", "do", "does", "did", "doing", "a", "an", "the", "and", "but", "if", "or", "because", "as", "until",
    "while", "of", "at", "by", "for", "with", "about", "against", "between", "into", "through", "during", "before",
    "after", "above", "below", "to", "from", "up", "down", "in", "out", "on", "off", "over", "under", "again",
    "further", "then", "once", "here", "there", "when", "where", "why", "how", "all", "any", "both", "each", "few",
    "more", "most", "other", "some", "such", "no", "nor", "not", "only", "own", "same", "so", "than", "too", "very",
    "s", "t", "can", "will", "just", "don", "don't", "should", "should've", "now", "d", "ll", "m", "o", "re", "ve",
    "y", "ain", "aren", "aren't", "couldn", "couldn't", "didn", "didn't", "doesn", "doesn't", "hadn", "hadn't",
    "hasn", "hasn't", "haven", "haven't", "isn", "isn't", "ma", "mightn", "mightn't", "mustn", "mustn't", "needn",
    "needn't", "shan", "shan't", "shouldn", "shouldn't", "wasn", "wasn't", "weren", "weren't", "won", "won't",
    "wouldn", "wouldn't",
];

/// Words that describe the task rather than the scent.
const STUDY_TERMS: &[&str] = &[
    "feel", "feels", "smell", "smells", "smelling", "scent", "like", "reference", "target", "new",
];

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Stoplist(BTreeSet<String>);

impl Stoplist {
    /// Entries pass through the same normalization as corpus tokens, so
    /// "don't" also blocks "dont".
    pub fn new<S: AsRef<str>>(words: impl IntoIterator<Item = S>) -> Self {
        Stoplist(words.into_iter().flat_map(|w| tokenize(w.as_ref())).collect())
    }

    pub fn english_with_study_terms() -> Self {
        Stoplist::new(ENGLISH_STOPWORDS.iter().chain(STUDY_TERMS))
    }

    pub fn contains(&self, term: &str) -> bool {
        self.0.contains(term)
    }
}

/// Lowercases, turns `-` and `/` into spaces, drops other punctuation and
/// splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .filter_map(|c| match c {
            '-' | '/' => Some(' '),
            c if c.is_alphanumeric() || c.is_whitespace() => Some(c),
            _ => None,
        })
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TermFrequencyTable {
    /// Descending count, ties alphabetical.
    pub terms: Vec<(String, usize)>,
}

impl TermFrequencyTable {
    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn count(&self, term: &str) -> usize {
        self.terms.iter().find(|(t, _)| t == term).map_or(0, |(_, c)| *c)
    }
}

pub fn term_frequencies<S: AsRef<str>>(corpus: &[S], stoplist: &Stoplist) -> TermFrequencyTable {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for text in corpus {
        for tok in tokenize(text.as_ref()) {
            if tok.chars().count() > 1 && !stoplist.contains(&tok) {
                *counts.entry(tok).or_default() += 1;
            }
        }
    }
    let mut terms: Vec<(String, usize)> = counts.into_iter().collect();
    // BTreeMap order is alphabetical; a stable sort by count keeps it for ties.
    terms.sort_by_key(|t| std::cmp::Reverse(t.1));
    TermFrequencyTable { terms }
}
