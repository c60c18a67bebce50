use std::collections::{BTreeMap, HashMap};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const PAD_INDEX: usize = 0;
pub const UNK_INDEX: usize = 1;

/// Token ↔ index map with reserved padding and unknown entries.
///
/// Regular tokens are indexed by descending frequency, then lexicographically,
/// so the result depends only on the multiset of tokens seen.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
    min_frequency: usize,
}

impl Vocabulary {
    pub fn build<'a, I>(tokens: I, min_frequency: usize) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_frequency.max(1) && t != PAD && t != UNK)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut vocab = Self { index: HashMap::new(), tokens: Vec::new(), min_frequency };
        for t in [PAD, UNK].into_iter().chain(kept.into_iter().map(|(t, _)| t)) {
            vocab.index.insert(t.to_owned(), vocab.tokens.len());
            vocab.tokens.push(t.to_owned());
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Index of `token`, or the unknown index.
    pub fn index(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_INDEX)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    /// Regular (non-special) tokens in index order.
    pub fn regular_tokens(&self) -> &[String] {
        &self.tokens[2..]
    }

    pub fn min_frequency(&self) -> usize {
        self.min_frequency
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.index(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_come_first_and_unknown_maps_to_unk() {
        let v = Vocabulary::build(["b", "a", "b"], 1);
        assert_eq!(v.token(PAD_INDEX), Some(PAD));
        assert_eq!(v.token(UNK_INDEX), Some(UNK));
        assert_eq!(v.index("b"), 2);
        assert_eq!(v.index("a"), 3);
        assert_eq!(v.index("zzz"), UNK_INDEX);
    }

    #[test]
    fn min_frequency_drops_rare_tokens() {
        let v = Vocabulary::build(["a", "a", "b"], 2);
        assert_eq!(v.len(), 3);
        assert_eq!(v.get("b"), None);
    }

    #[test]
    fn order_independent() {
        let a = Vocabulary::build(["x", "y", "y", "z"], 1);
        let b = Vocabulary::build(["z", "y", "x", "y"], 1);
        assert_eq!(a, b);
    }
}
