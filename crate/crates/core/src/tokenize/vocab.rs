use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const MASK: &str = "[MASK]";

/// Token ↔ id bijection. Ids are line numbers of the vocab file.
#[derive(Clone, Debug)]
pub struct Vocab {
    ids: HashMap<String, u32>,
    tokens: Vec<String>,
    pub cls: u32,
    pub sep: u32,
    pub pad: u32,
    pub unk: u32,
    pub mask: u32,
}

impl Vocab {
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() {
                return Err(Error::Config(format!("vocab entry {i} is empty")));
            }
            if ids.insert(tok.clone(), i as u32).is_some() {
                return Err(Error::Config(format!("duplicate vocab token `{tok}` at id {i}")));
            }
        }
        let special = |name: &str| {
            ids.get(name)
                .copied()
                .ok_or_else(|| Error::Config(format!("vocab is missing special token {name}")))
        };
        Ok(Vocab {
            cls: special(CLS)?,
            sep: special(SEP)?,
            pad: special(PAD)?,
            unk: special(UNK)?,
            mask: special(MASK)?,
            ids,
            tokens,
        })
    }

    /// One token per line; the 0-based line number is the id.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = String::from_utf8(bytes)
            .map_err(|e| Error::Encoding(format!("{}: vocab is not UTF-8: {e}", path.display())))?;
        Self::from_tokens(text.lines().map(|l| l.trim_end_matches('\r')))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_are_required() {
        assert!(Vocab::from_tokens(["[CLS]", "[SEP]", "[PAD]", "[UNK]"]).is_err());
        let v = Vocab::from_tokens(["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "hi"]).unwrap();
        assert_eq!((v.pad, v.unk, v.cls, v.sep, v.mask), (0, 1, 2, 3, 4));
        assert_eq!(v.id("hi"), Some(5));
        assert_eq!(v.token(5), Some("hi"));
    }

    #[test]
    fn duplicates_break_the_bijection() {
        let err = Vocab::from_tokens(["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "a", "a"]).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn reads_line_numbered_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        std::fs::write(&path, "[PAD]\r\n[UNK]\n[CLS]\n[SEP]\n[MASK]\nworld\n").unwrap();
        let v = Vocab::from_file(&path).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("world"), Some(5));
    }
}
