use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved token ids.
pub mod special {
    pub const PAD: usize = 0;
    pub const BOS: usize = 1;
    pub const EOS: usize = 2;
    pub const IMAGE: usize = 3;
    pub const AUTO_IMAGE: usize = 4;
    pub const DESCRIBE: usize = 5;
}

const TOKENS: [&str; 22] = [
    "<pad>",
    "<bos>",
    "<eos>",
    "<image>",
    "<auto_image>",
    "<describe>",
    "square",
    "cross",
    "triangle",
    "red",
    "green",
    "blue",
    "yellow",
    "r0",
    "r1",
    "r2",
    "r3",
    "c0",
    "c1",
    "c2",
    "c3",
    "at",
];

/// Dense, ordered token inventory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vocabulary {
    tokens: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self {
            tokens: TOKENS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("vocabulary serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: Vocabulary = serde_json::from_str(s).map_err(|e| Error::Format(e.to_string()))?;
        let mut seen = std::collections::HashSet::new();
        if !v.tokens.iter().all(|t| seen.insert(t)) {
            return Err(Error::Format("duplicate token in vocabulary".into()));
        }
        Ok(v)
    }
}
