use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// Token table with fixed specials: PAD at index 0, UNK at index 1.
/// Regular tokens and indices are in bijection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Build from regular tokens (specials are added here). Duplicates are
    /// ignored; order of first occurrence is kept.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocabulary {
            tokens: vec!["<pad>".into(), "<unk>".into()],
            index: HashMap::new(),
        };
        v.index.insert("<pad>".into(), PAD);
        v.index.insert("<unk>".into(), UNK);
        for t in tokens {
            let t = t.into();
            if !v.index.contains_key(&t) {
                v.index.insert(t.clone(), v.tokens.len());
                v.tokens.push(t);
            }
        }
        v
    }

    /// Restore the token->index map after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // specials are always present
    }

    /// Index for a token, UNK when unseen.
    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(|s| s.as_str())
    }

    /// Map a token sequence to indices, counting out-of-vocabulary hits.
    pub fn encode(&self, tokens: &[String]) -> (Vec<usize>, usize) {
        let mut oov = 0;
        let ids = tokens
            .iter()
            .map(|t| {
                let i = self.index_of(t);
                if i == UNK {
                    oov += 1;
                }
                i
            })
            .collect();
        (ids, oov)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_are_fixed() {
        let v = Vocabulary::from_tokens(["a", "b"]);
        assert_eq!(v.index_of("<pad>"), PAD);
        assert_eq!(v.index_of("<unk>"), UNK);
        assert_eq!(v.index_of("a"), 2);
        assert_eq!(v.index_of("b"), 3);
        assert_eq!(v.index_of("zzz"), UNK);
    }

    #[test]
    fn bijection_excluding_specials() {
        let v = Vocabulary::from_tokens(["a", "b", "c", "b"]);
        assert_eq!(v.len(), 5);
        for i in 2..v.len() {
            let t = v.token(i).unwrap();
            assert_eq!(v.index_of(t), i);
        }
    }

    #[test]
    fn index_survives_serde() {
        let v = Vocabulary::from_tokens(["x", "y"]);
        let json = serde_json::to_string(&v).unwrap();
        let mut back: Vocabulary = serde_json::from_str(&json).unwrap();
        back.rebuild_index();
        assert_eq!(back, v);
        assert_eq!(back.index_of("y"), v.index_of("y"));
    }
}
