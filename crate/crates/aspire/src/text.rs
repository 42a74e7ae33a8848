//! Phrase normalization, stemming and the label-exclusion rule shared by
//! extraction, editing and phrase collapsing.

use std::sync::OnceLock;

use rust_stemmers::{Algorithm, Stemmer};

fn stemmer() -> &'static Stemmer {
    static STEMMER: OnceLock<Stemmer> = OnceLock::new();
    STEMMER.get_or_init(|| Stemmer::create(Algorithm::English))
}

/// Articles, determiners and quantity words. They never carry the identity
/// of an object, so roots skip them ("two dogs" and "dogs" share a root).
pub const FUNCTION_WORDS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "some", "any", "each", "every", "its", "his", "her",
    "their", "our", "my", "your", "several", "many", "few", "lots", "lot", "of", "one", "two", "three", "four",
    "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve", "dozen", "couple", "pair", "other",
    "another", "both", "all",
];

pub fn is_numeral(token: &str) -> bool {
    !token.is_empty() && token.chars().all(|c| c.is_ascii_digit())
}

/// Lowercase, trim, collapse inner whitespace and strip punctuation at the
/// edges of every token (hyphens inside a token are kept).
pub fn normalize(phrase: &str) -> String {
    tokens(phrase).join(" ")
}

pub fn tokens(phrase: &str) -> Vec<String> {
    phrase
        .split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

pub fn stem(word: &str) -> String {
    stemmer().stem(&word.to_lowercase()).into_owned()
}

/// Root of a phrase: every content token stemmed, joined by single spaces.
/// A phrase made only of function words keeps its stemmed tokens so that the
/// root is never empty for a non-empty phrase.
pub fn root(phrase: &str) -> String {
    let toks = tokens(phrase);
    let content: Vec<&String> = toks
        .iter()
        .filter(|t| !FUNCTION_WORDS.contains(&t.as_str()) && !is_numeral(t))
        .collect();
    let picked: Vec<&String> = if content.is_empty() { toks.iter().collect() } else { content };
    picked.iter().map(|t| stem(t)).collect::<Vec<_>>().join(" ")
}

/// Root of the last token, the syntactic head of an English noun phrase.
pub fn head_root(phrase: &str) -> Option<String> {
    tokens(phrase).last().map(|t| stem(t))
}

/// Whether `phrase` refers to the class object named by `label`.
///
/// A phrase matches when its root equals the label's root, or when its head
/// root equals the label's head root. Matching on any label token would
/// drop "dogs" for the label "dog sled", which names a sled.
pub fn names_label(phrase: &str, label: &str) -> bool {
    let (pr, lr) = (root(phrase), root(label));
    if pr.is_empty() || lr.is_empty() {
        return false;
    }
    pr == lr || head_root(phrase) == head_root(label)
}

/// Stem-insensitive phrase equality.
pub fn same_root(a: &str, b: &str) -> bool {
    root(a) == root(b)
}
