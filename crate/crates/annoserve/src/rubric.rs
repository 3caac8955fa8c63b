//! The fixed evaluation rubric.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    Informations,
    #[serde(rename = "Words/Sentences")]
    WordsSentences,
    Illustrations,
    Quality,
}

impl Category {
    pub const GUIDELINE: [Category; 3] = [Category::Informations, Category::WordsSentences, Category::Illustrations];

    pub fn name(self) -> &'static str {
        match self {
            Category::Informations => "Informations",
            Category::WordsSentences => "Words/Sentences",
            Category::Illustrations => "Illustrations",
            Category::Quality => "Quality",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scale {
    BinaryNA,
    Likert0to4,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricQuestion {
    pub code: &'static str,
    pub category: Category,
    pub scale: Scale,
    pub text: &'static str,
}

impl RubricQuestion {
    pub fn is_guideline(&self) -> bool {
        self.category != Category::Quality
    }
}

const fn q(code: &'static str, category: Category, scale: Scale, text: &'static str) -> RubricQuestion {
    RubricQuestion { code, category, scale, text }
}

use Category::*;
use Scale::*;

pub static RUBRIC: &[RubricQuestion] = &[
    q("CI3", Informations, BinaryNA, "Providing too much information can create confusion. Only important information should be given. Is this criterion met?"),
    q("CI4", Informations, BinaryNA, "Are the pieces of information placed in an order that is easy to follow and understand?"),
    q("CI5", Informations, BinaryNA, "Is the main information easy to find?"),
    q("CI6", Informations, BinaryNA, "Are pieces of information about the same topic grouped together?"),
    q("CI8", Informations, BinaryNA, "Are important pieces of information repeated?"),
    q("CPM1", WordsSentences, BinaryNA, "Are the sentences short?"),
    q("CPM2", WordsSentences, BinaryNA, "Are the words easy to understand?"),
    q("CPM3", WordsSentences, BinaryNA, "Are difficult words clearly explained when you use them?"),
    q("CPM4", WordsSentences, BinaryNA, "Are difficult words explained more than once?"),
    q("CPM5", WordsSentences, BinaryNA, "Is the language used the most suitable for the people who will use the information?"),
    q("CPM6", WordsSentences, BinaryNA, "Is the same word used throughout the document to describe the same thing?"),
    q("CPM7", WordsSentences, BinaryNA, "Difficult and abstract ideas like metaphors should not be used. Is this criterion met?"),
    q("CPM8", WordsSentences, BinaryNA, "Uncommon words in a foreign language should not be used. Is this criterion met?"),
    q("CPM9", WordsSentences, BinaryNA, "Contracted words, like text messaging slang, should not be used. Is this criterion met?"),
    q("CPM10", WordsSentences, BinaryNA, "Does the author address directly the people for whom the information is intended?"),
    q("CPM11", WordsSentences, BinaryNA, "Can you easily identify to whom or what the pronouns correspond?"),
    q("CPM12", WordsSentences, BinaryNA, "Are positive sentences rather than negative ones used whenever possible?"),
    q("CPM13", WordsSentences, BinaryNA, "Is the active voice used instead of the passive voice whenever possible?"),
    q("CPM14", WordsSentences, BinaryNA, "Is the punctuation simple?"),
    q("CPM15", WordsSentences, BinaryNA, "Are bullets or numbers used instead of lists of words separated by commas?"),
    q("CPM16", WordsSentences, BinaryNA, "Are numbers written in digits (1, 2, 3) rather than words?"),
    q("CPM17", WordsSentences, BinaryNA, "Acronyms should be avoided or explained when used. Is this criterion met?"),
    q("CPM18", WordsSentences, BinaryNA, "Abbreviations should not be used. Is this criterion met?"),
    q("CPM19", WordsSentences, BinaryNA, "Are dates written out in full?"),
    q("CPM20", WordsSentences, BinaryNA, "The use of percentages or large numbers should be limited and always explained. Is this criterion met?"),
    q("CPM21", WordsSentences, BinaryNA, "Special characters should not be used. Is this criterion met?"),
    q("I1", Illustrations, BinaryNA, "Are there examples to illustrate complex ideas?"),
    q("I2", Illustrations, BinaryNA, "Are examples, as much as possible, drawn from everyday life?"),
    q("CA1", Quality, Likert0to4, "Language fluency"),
    q("CA2", Quality, Likert0to4, "Grammar / Spelling"),
    q("CA3", Quality, Likert0to4, "Factual accuracy"),
    q("CA4", Quality, Likert0to4, "Textual coherence"),
    q("CA5", Quality, BinaryNA, "Presence of copies from the original text?"),
    q("CA6", Quality, BinaryNA, "Presence of chaotic repetitions?"),
    q("CA7", Quality, BinaryNA, "Presence of hallucinations?"),
    q("CA8", Quality, Likert0to4, "Overall perceived quality"),
];

pub fn question(code: &str) -> Option<&'static RubricQuestion> {
    RUBRIC.iter().find(|q| q.code == code)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryAnswer {
    Respected,
    NotRespected,
    #[serde(rename = "na")]
    NotApplicable,
}

impl BinaryAnswer {
    pub fn as_str(self) -> &'static str {
        match self {
            BinaryAnswer::Respected => "respected",
            BinaryAnswer::NotRespected => "not_respected",
            BinaryAnswer::NotApplicable => "na",
        }
    }
}

/// A binary answer serializes as a string, a Likert answer as an integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Answer {
    Binary(BinaryAnswer),
    Likert(u8),
}

impl std::fmt::Display for Answer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Answer::Binary(b) => f.write_str(b.as_str()),
            Answer::Likert(v) => write!(f, "{v}"),
        }
    }
}

/// Why an answer does not fit its question.
pub fn check_answer(question: &RubricQuestion, answer: Answer) -> Result<(), String> {
    match (question.scale, answer) {
        (Scale::BinaryNA, Answer::Binary(_)) => Ok(()),
        (Scale::Likert0to4, Answer::Likert(v)) if v <= 4 => Ok(()),
        (Scale::Likert0to4, Answer::Likert(v)) => Err(format!("Likert value {v} outside 0..=4")),
        (Scale::BinaryNA, Answer::Likert(_)) => Err("expected respected, not_respected or na".into()),
        (Scale::Likert0to4, Answer::Binary(_)) => Err("expected an integer 0..=4".into()),
    }
}
