use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PartOfSpeech {
    Verb,
    Noun,
    Other,
}

impl PartOfSpeech {
    pub fn as_str(self) -> &'static str {
        match self {
            PartOfSpeech::Verb => "VERB",
            PartOfSpeech::Noun => "NOUN",
            PartOfSpeech::Other => "OTHER",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "VERB" => Some(PartOfSpeech::Verb),
            "NOUN" => Some(PartOfSpeech::Noun),
            "OTHER" => Some(PartOfSpeech::Other),
            _ => None,
        }
    }
}

impl fmt::Display for PartOfSpeech {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Token table with dense ids. Each token text carries one tag.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    entries: Vec<(String, PartOfSpeech)>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a token, returning its id; an existing token keeps its id.
    pub fn insert(&mut self, token: &str, pos: PartOfSpeech) -> Result<usize> {
        if token.is_empty() || token.contains(char::is_whitespace) {
            return Err(Error::input(format!("invalid token text {token:?}")));
        }
        if let Some(&id) = self.index.get(token) {
            if self.entries[id].1 != pos {
                return Err(Error::input(format!(
                    "token {token:?} already tagged {}",
                    self.entries[id].1
                )));
            }
            return Ok(id);
        }
        let id = self.entries.len();
        self.entries.push((token.to_string(), pos));
        self.index.insert(token.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn lookup(&self, token: &str) -> Option<(usize, PartOfSpeech)> {
        self.id(token).map(|id| (id, self.entries[id].1))
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.entries.get(id).map(|e| e.0.as_str())
    }

    pub fn pos(&self, id: usize) -> Option<PartOfSpeech> {
        self.entries.get(id).map(|e| e.1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &str, PartOfSpeech)> {
        self.entries.iter().enumerate().map(|(i, (t, p))| (i, t.as_str(), *p))
    }

    /// Ids of every token carrying `pos`, ascending.
    pub fn ids_with_pos(&self, pos: PartOfSpeech) -> Vec<usize> {
        self.iter().filter(|e| e.2 == pos).map(|e| e.0).collect()
    }

    /// Parses `token<TAB>id<TAB>pos` lines; ids must be dense from 0 in order.
    pub fn parse(text: &str) -> Result<Self> {
        let mut vocab = Vocabulary::new();
        for (n, line) in text.lines().enumerate() {
            let lineno = n + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::InvalidDataset(format!(
                    "vocabulary line {lineno}: expected 3 tab-separated fields"
                )));
            }
            let id: usize = fields[1]
                .parse()
                .map_err(|_| Error::InvalidDataset(format!("vocabulary line {lineno}: bad id {:?}", fields[1])))?;
            let pos = PartOfSpeech::parse(fields[2])
                .ok_or_else(|| Error::InvalidDataset(format!("vocabulary line {lineno}: bad tag {:?}", fields[2])))?;
            if id != vocab.len() {
                return Err(Error::InvalidDataset(format!(
                    "vocabulary line {lineno}: id {id} breaks dense numbering (expected {})",
                    vocab.len()
                )));
            }
            if vocab.id(fields[0]).is_some() {
                return Err(Error::InvalidDataset(format!(
                    "vocabulary line {lineno}: duplicate token {:?}",
                    fields[0]
                )));
            }
            vocab
                .insert(fields[0], pos)
                .map_err(|e| Error::InvalidDataset(format!("vocabulary line {lineno}: {e}")))?;
        }
        Ok(vocab)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, tok, pos) in self.iter() {
            out.push_str(&format!("{tok}\t{id}\t{pos}\n"));
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut v = Vocabulary::new();
        v.insert("run", PartOfSpeech::Verb).unwrap();
        v.insert("dog", PartOfSpeech::Noun).unwrap();
        v.insert("the", PartOfSpeech::Other).unwrap();
        assert_eq!(v.to_text(), "run\t0\tVERB\ndog\t1\tNOUN\nthe\t2\tOTHER\n");
        assert_eq!(Vocabulary::parse(&v.to_text()).unwrap(), v);
    }

    #[test]
    fn rejects_sparse_ids_and_bad_tags() {
        assert!(Vocabulary::parse("a\t1\tVERB\n").is_err());
        assert!(Vocabulary::parse("a\t0\tADJ\n").is_err());
        assert!(Vocabulary::parse("a\t0\tVERB\na\t1\tVERB\n").is_err());
        assert!(Vocabulary::parse("a 0 VERB\n").is_err());
    }

    #[test]
    fn conflicting_tag_is_rejected() {
        let mut v = Vocabulary::new();
        v.insert("run", PartOfSpeech::Verb).unwrap();
        assert_eq!(v.insert("run", PartOfSpeech::Verb).unwrap(), 0);
        assert!(v.insert("run", PartOfSpeech::Noun).is_err());
    }
}
