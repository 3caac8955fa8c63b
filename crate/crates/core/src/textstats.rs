//! Deterministic French text statistics.
//!
//! Word tokenization, sentence splitting and syllable counting back the
//! simplification-side statistics: Kandel–Moles reading ease (KMRE),
//! compression ratio and unigram novelty.

use std::collections::HashSet;
use std::ops::Range;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TextError {
    #[error("text contains no words")]
    EmptyText,
    #[error("generated text has no non-stopword unigrams")]
    NoContentWords,
}

pub type Result<T> = std::result::Result<T, TextError>;

const TERMINATORS: [char; 4] = ['.', '!', '?', '…'];
/// Closing marks allowed between a terminator and the following whitespace.
const CLOSERS: [char; 7] = ['"', '\'', '»', ')', ']', '’', '”'];
const APOSTROPHES: [char; 2] = ['\'', '’'];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedText {
    pub words: Vec<String>,
    /// Spans into `words`; they partition the word list in order.
    pub sentences: Vec<Range<usize>>,
    pub syllables_per_word: Vec<usize>,
}

impl TokenizedText {
    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    pub fn sentence_count(&self) -> usize {
        self.sentences.len()
    }

    pub fn syllable_count(&self) -> usize {
        self.syllables_per_word.iter().sum()
    }
}

/// Split `text` into words and sentences.
///
/// Words are maximal runs of letters, digits, apostrophes and internal
/// hyphens inside each whitespace-separated chunk. A chunk whose last
/// non-closing character is `.`, `!`, `?` or `…` ends the current sentence.
pub fn tokenize(text: &str) -> Result<TokenizedText> {
    let mut words = Vec::new();
    let mut sentences = Vec::new();
    let mut sentence_start = 0;

    for chunk in text.split_whitespace() {
        words.extend(chunk_words(chunk));
        if ends_sentence(chunk) && words.len() > sentence_start {
            sentences.push(sentence_start..words.len());
            sentence_start = words.len();
        }
    }
    if words.len() > sentence_start {
        sentences.push(sentence_start..words.len());
    }
    if words.is_empty() {
        return Err(TextError::EmptyText);
    }

    let syllables_per_word = words.iter().map(|w| count_syllables_fr(w)).collect();
    Ok(TokenizedText {
        words,
        sentences,
        syllables_per_word,
    })
}

/// Word tokens of `text`, possibly empty. Same rule as [`tokenize`].
pub fn words(text: &str) -> Vec<String> {
    text.split_whitespace().flat_map(chunk_words).collect()
}

/// Lowercased word tokens, the token stream used by the reference metrics.
pub fn lowercase_words(text: &str) -> Vec<String> {
    words(text).into_iter().map(|w| w.to_lowercase()).collect()
}

pub fn word_count(text: &str) -> usize {
    words(text).len()
}

fn ends_sentence(chunk: &str) -> bool {
    chunk
        .trim_end_matches(|c| CLOSERS.contains(&c))
        .chars()
        .last()
        .is_some_and(|c| TERMINATORS.contains(&c))
}

fn chunk_words(chunk: &str) -> Vec<String> {
    let chars: Vec<char> = chunk.chars().collect();
    let mut out = Vec::new();
    let mut current = String::new();

    for (i, &c) in chars.iter().enumerate() {
        let keep = if c.is_alphanumeric() || APOSTROPHES.contains(&c) {
            true
        } else if c == '-' {
            // only between two alphanumerics
            let prev = i.checked_sub(1).map(|p| chars[p]);
            let next = chars.get(i + 1).copied();
            prev.is_some_and(char::is_alphanumeric) && next.is_some_and(char::is_alphanumeric)
        } else {
            false
        };
        if keep {
            current.push(c);
        } else {
            flush_word(&mut current, &mut out);
        }
    }
    flush_word(&mut current, &mut out);
    out
}

fn flush_word(current: &mut String, out: &mut Vec<String>) {
    let trimmed = current.trim_matches(|c| APOSTROPHES.contains(&c));
    if trimmed.chars().any(char::is_alphanumeric) {
        out.push(trimmed.to_string());
    }
    current.clear();
}

fn is_vowel(c: char) -> bool {
    matches!(
        c,
        'a' | 'e'
            | 'i'
            | 'o'
            | 'u'
            | 'y'
            | 'é'
            | 'è'
            | 'ê'
            | 'ë'
            | 'à'
            | 'â'
            | 'î'
            | 'ï'
            | 'ô'
            | 'û'
            | 'ù'
            | 'ü'
            | 'œ'
    )
}

/// Number of maximal vowel clusters in `word`, never less than 1.
pub fn count_syllables_fr(word: &str) -> usize {
    let mut clusters = 0;
    let mut in_cluster = false;
    for c in word.chars().flat_map(char::to_lowercase) {
        let v = is_vowel(c);
        if v && !in_cluster {
            clusters += 1;
        }
        in_cluster = v;
    }
    clusters.max(1)
}

/// Kandel–Moles reading ease. Not clamped: very simple text scores above 100.
pub fn kmre(text: &str) -> Result<f64> {
    let tokens = tokenize(text)?;
    Ok(kmre_from_counts(
        tokens.word_count(),
        tokens.sentence_count(),
        tokens.syllable_count(),
    ))
}

pub fn kmre_from_counts(words: usize, sentences: usize, syllables: usize) -> f64 {
    let words = words as f64;
    207.0 - 1.015 * (words / sentences as f64) - 73.6 * (syllables as f64 / words)
}

/// Percentage of the source's words removed in the target. Negative when
/// the target is longer.
pub fn compression_ratio(source: &str, target: &str) -> Result<f64> {
    let source_words = word_count(source);
    if source_words == 0 {
        return Err(TextError::EmptyText);
    }
    Ok(compression_from_counts(source_words, word_count(target)))
}

pub fn compression_from_counts(source_words: usize, target_words: usize) -> f64 {
    100.0 * (1.0 - target_words as f64 / source_words as f64)
}

#[derive(Debug, Clone)]
pub struct StopwordList {
    words: HashSet<String>,
}

impl StopwordList {
    /// Build from arbitrary forms; returns `None` for an empty list.
    pub fn new<I, S>(forms: I) -> Option<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let words: HashSet<String> = forms
            .into_iter()
            .map(|s| s.as_ref().trim().to_lowercase())
            .filter(|s| !s.is_empty())
            .collect();
        (!words.is_empty()).then_some(Self { words })
    }

    /// The bundled French list (`data/stopwords_fr.txt`).
    pub fn french() -> Self {
        let forms = include_str!("../data/stopwords_fr.txt")
            .lines()
            .filter(|l| !l.starts_with('#'));
        Self::new(forms).expect("bundled stopword list is nonempty")
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(&word.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Percentage of the generated text's non-stopword unigram types that do not
/// occur in the source. Types are lowercase-folded.
pub fn novelty_unigrams(source: &str, generated: &str, stopwords: &StopwordList) -> Result<f64> {
    let source_types: HashSet<String> = lowercase_words(source).into_iter().collect();
    let generated_types: HashSet<String> = lowercase_words(generated)
        .into_iter()
        .filter(|w| !stopwords.contains(w))
        .collect();
    if generated_types.is_empty() {
        return Err(TextError::NoContentWords);
    }
    let novel = generated_types
        .iter()
        .filter(|w| !source_types.contains(*w))
        .count();
    Ok(100.0 * novel as f64 / generated_types.len() as f64)
}
