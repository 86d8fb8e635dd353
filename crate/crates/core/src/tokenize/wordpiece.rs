use super::vocab::{Vocab, UNK};

pub const DEFAULT_MAX_CHARS: usize = 100;

/// Greedy longest-match-first subword split. Continuation pieces carry a
/// `##` prefix. A token longer than `max_chars`, or any position with no
/// matching piece, yields `[UNK]` for the whole token.
pub fn wordpiece(token: &str, vocab: &Vocab, max_chars: usize) -> Vec<String> {
    let chars: Vec<char> = token.chars().collect();
    if chars.is_empty() {
        return Vec::new();
    }
    if chars.len() > max_chars {
        return vec![UNK.to_string()];
    }
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut candidate = String::new();
    while start < chars.len() {
        let mut found = None;
        let mut end = chars.len();
        while end > start {
            candidate.clear();
            if start > 0 {
                candidate.push_str("##");
            }
            candidate.extend(&chars[start..end]);
            if vocab.contains(&candidate) {
                found = Some(candidate.clone());
                break;
            }
            end -= 1;
        }
        match found {
            Some(piece) => pieces.push(piece),
            None => return vec![UNK.to_string()],
        }
        start = end;
    }
    pieces
}

/// [`wordpiece`] mapped to ids.
pub fn wordpiece_ids(token: &str, vocab: &Vocab, max_chars: usize) -> Vec<u32> {
    wordpiece(token, vocab, max_chars)
        .iter()
        .map(|p| vocab.id(p).unwrap_or(vocab.unk))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Vocab {
        Vocab::from_tokens([
            "[PAD]",
            "[UNK]",
            "[CLS]",
            "[SEP]",
            "[MASK]",
            "un",
            "##aff",
            "##able",
            "unaffable",
            "aff",
            "##a",
            "want",
            "##ed",
        ])
        .unwrap()
    }

    #[test]
    fn greedy_longest_match() {
        let v = Vocab::from_tokens(["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "un", "##aff", "##able"]).unwrap();
        assert_eq!(wordpiece("unaffable", &v, 100), ["un", "##aff", "##able"]);
    }

    #[test]
    fn verbatim_token_wins() {
        assert_eq!(wordpiece("unaffable", &toy(), 100), ["unaffable"]);
        assert_eq!(wordpiece("wanted", &toy(), 100), ["want", "##ed"]);
    }

    #[test]
    fn unknown_and_overlong_tokens() {
        assert_eq!(wordpiece("xqzt", &toy(), 100), ["[UNK]"]);
        // "unx": "un" matches but "##x" does not
        assert_eq!(wordpiece("unx", &toy(), 100), ["[UNK]"]);
        assert_eq!(wordpiece("unaffable", &toy(), 5), ["[UNK]"]);
        assert_eq!(wordpiece_ids("xqzt", &toy(), 100), [1]);
    }
}
