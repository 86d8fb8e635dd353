//! Rule-based document, sentence and word segmentation.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

/// Collapses whitespace runs to one space, strips other control characters,
/// and trims both ends.
pub fn normalize_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.chars() {
        if c.is_whitespace() {
            pending_space = true;
        } else if c.is_control() {
            continue;
        } else {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
        }
    }
    out
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// BERT-style punctuation: ASCII symbol ranges plus common Unicode marks.
pub fn is_punctuation(c: char) -> bool {
    if c.is_ascii() {
        return c.is_ascii_punctuation();
    }
    matches!(
        c,
        '\u{2010}'..='\u{2027}' | '\u{2030}'..='\u{205E}' | '¡' | '¿' | '«' | '»' | '§' | '¶' | '·' | '\u{3001}' | '\u{3002}'
    )
}

pub const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "mr.", "mrs.", "ms.", "dr.", "prof.", "st.", "jr.", "sr.", "vs.", "inc.", "corp.", "ltd.", "co.", "gen.", "gov.",
    "sen.", "rep.", "u.s.", "u.k.", "u.n.", "e.g.", "i.e.", "jan.", "feb.", "aug.", "sept.", "oct.", "nov.", "dec.",
];

/// Splits after runs of `.`, `!` or `?` that are followed by whitespace or
/// the end of the text, except after a listed abbreviation.
#[derive(Clone, Debug)]
pub struct SentenceSplitter {
    abbreviations: HashSet<String>,
}

impl Default for SentenceSplitter {
    fn default() -> Self {
        SentenceSplitter::with_abbreviations(DEFAULT_ABBREVIATIONS.iter().copied())
    }
}

impl SentenceSplitter {
    pub fn with_abbreviations<I, S>(abbreviations: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        SentenceSplitter {
            abbreviations: abbreviations
                .into_iter()
                .map(|a| a.as_ref().trim().to_lowercase())
                .filter(|a| !a.is_empty())
                .collect(),
        }
    }

    /// One abbreviation per line, e.g. `dr.`.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::with_abbreviations(text.lines()))
    }

    /// Sentence spans `(begin, end)` as char offsets into `doc`.
    pub fn split(&self, doc: &[char]) -> Vec<(usize, usize)> {
        let n = doc.len();
        let mut spans = Vec::new();
        let mut start = 0;
        let mut i = 0;
        while i < n {
            if !is_terminator(doc[i]) {
                i += 1;
                continue;
            }
            let mut j = i;
            while j < n && is_terminator(doc[j]) {
                j += 1;
            }
            let at_boundary = j == n || doc[j].is_whitespace();
            if at_boundary && !(j - i == 1 && doc[i] == '.' && self.is_abbreviation(doc, i)) {
                push_trimmed(doc, start, j, &mut spans);
                start = j;
            }
            i = j;
        }
        push_trimmed(doc, start, n, &mut spans);
        spans
    }

    fn is_abbreviation(&self, doc: &[char], period: usize) -> bool {
        let word_start = doc[..period]
            .iter()
            .rposition(|c| c.is_whitespace())
            .map_or(0, |p| p + 1);
        let word: String = doc[word_start..=period].iter().flat_map(|c| c.to_lowercase()).collect();
        self.abbreviations.contains(&word)
    }
}

fn push_trimmed(doc: &[char], mut begin: usize, mut end: usize, spans: &mut Vec<(usize, usize)>) {
    while begin < end && doc[begin].is_whitespace() {
        begin += 1;
    }
    while end > begin && doc[end - 1].is_whitespace() {
        end -= 1;
    }
    if begin < end {
        spans.push((begin, end));
    }
}

/// Whitespace split, then every punctuation character becomes its own token.
/// Returns `(begin, end)` char spans within `[from, to)`.
pub fn split_words(doc: &[char], from: usize, to: usize) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut word_start: Option<usize> = None;
    for (i, &c) in doc.iter().enumerate().take(to).skip(from) {
        if c.is_whitespace() || is_punctuation(c) {
            if let Some(s) = word_start.take() {
                spans.push((s, i));
            }
            if is_punctuation(c) {
                spans.push((i, i + 1));
            }
        } else if word_start.is_none() {
            word_start = Some(i);
        }
    }
    if let Some(s) = word_start {
        spans.push((s, to));
    }
    spans
}

pub fn lowercase(chars: &[char]) -> String {
    chars.iter().flat_map(|c| c.to_lowercase()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chars(s: &str) -> Vec<char> {
        s.chars().collect()
    }

    fn sentences(s: &str) -> Vec<String> {
        let doc = chars(s);
        SentenceSplitter::default()
            .split(&doc)
            .into_iter()
            .map(|(b, e)| doc[b..e].iter().collect())
            .collect()
    }

    fn words(s: &str) -> Vec<String> {
        let doc = chars(s);
        split_words(&doc, 0, doc.len())
            .into_iter()
            .map(|(b, e)| lowercase(&doc[b..e]))
            .collect()
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_text("  Hello.  "), "Hello.");
        assert_eq!(normalize_text("a\tb\n\nc"), "a b c");
        assert_eq!(normalize_text("x\u{0007}y"), "xy");
        assert_eq!(normalize_text(""), "");
    }

    #[test]
    fn sentence_rules() {
        assert_eq!(sentences("One. Two!"), ["One.", "Two!"]);
        assert_eq!(sentences("No terminator"), ["No terminator"]);
        assert!(sentences("").is_empty());
        assert_eq!(sentences("Wait?! Yes... ok"), ["Wait?!", "Yes...", "ok"]);
        assert_eq!(sentences("Version 2.5 ships."), ["Version 2.5 ships."]);
    }

    #[test]
    fn abbreviations_do_not_split() {
        assert_eq!(
            sentences("Dr. Smith met Mr. Jones. Then left."),
            ["Dr. Smith met Mr. Jones.", "Then left."]
        );
        let custom = SentenceSplitter::with_abbreviations(["approx."]);
        let doc = chars("Dr. Who. approx. ten.");
        let got: Vec<String> = custom
            .split(&doc)
            .into_iter()
            .map(|(b, e)| doc[b..e].iter().collect())
            .collect();
        assert_eq!(got, ["Dr.", "Who.", "approx. ten."]);
    }

    #[test]
    fn word_rules() {
        assert_eq!(words("Hello, world"), ["hello", ",", "world"]);
        assert_eq!(words("U.S."), ["u", ".", "s", "."]);
        assert!(words("").is_empty());
        assert_eq!(words("don't  stop"), ["don", "'", "t", "stop"]);
    }
}
