use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::TextError;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Word ↔ id map with PAD = 0 and UNK = 1 always present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Self { words, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.words
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from(vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()])
    }
}

impl Vocabulary {
    /// Rebuilds a vocabulary from its id-ordered word list, e.g. from a
    /// checkpoint. Returns `None` unless the reserved entries lead and every
    /// word is unique.
    pub fn from_words(words: Vec<String>) -> Option<Self> {
        let v = Self::from(words);
        let ok = v.words.len() >= 2
            && v.words[PAD] == PAD_TOKEN
            && v.words[UNK] == UNK_TOKEN
            && v.index.len() == v.words.len();
        ok.then_some(v)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Maps tokens to ids, unknown words (and a literal PAD string) to UNK.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<TokenSequence, TextError> {
        if tokens.is_empty() {
            return Err(TextError::EmptySequence);
        }
        let ids = tokens
            .iter()
            .map(|t| match self.id(t.as_ref()) {
                Some(PAD) | None => UNK,
                Some(id) => id,
            })
            .collect();
        Ok(TokenSequence {
            ids,
            words: tokens.iter().map(|t| t.as_ref().to_string()).collect(),
        })
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.word(i).unwrap_or(UNK_TOKEN).to_string())
            .collect()
    }
}

/// Counts tokens and assigns ids by descending frequency, ties broken
/// lexicographically. Tokens seen fewer than `min_count` times are left out.
pub fn build_vocab<I, T>(corpus: I, min_count: usize) -> Vocabulary
where
    I: IntoIterator<Item = T>,
    T: AsRef<[String]>,
{
    let min_count = min_count.max(1);
    let mut counts: HashMap<String, usize> = HashMap::new();
    for sentence in corpus {
        for tok in sentence.as_ref() {
            if tok != PAD_TOKEN && tok != UNK_TOKEN {
                *counts.entry(tok.clone()).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_count)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut words = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    words.extend(ranked.into_iter().map(|(w, _)| w));
    Vocabulary::from(words)
}

/// One encoded sentence: ids aligned with the surface words they came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    ids: Vec<usize>,
    words: Vec<String>,
}

impl TokenSequence {
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn truncate(&mut self, max_len: usize) {
        let n = max_len.max(1);
        self.ids.truncate(n);
        self.words.truncate(n);
    }

    /// Builds a sequence directly from ids; words are filled from `vocab`.
    pub fn from_ids(vocab: &Vocabulary, ids: Vec<usize>) -> Result<Self, TextError> {
        if ids.is_empty() {
            return Err(TextError::EmptySequence);
        }
        let words = vocab.decode(&ids);
        Ok(Self { ids, words })
    }

    /// Same tokens in reverse order.
    pub fn reversed(&self) -> Self {
        let mut s = self.clone();
        s.ids.reverse();
        s.words.reverse();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn ordering_rules() {
        let v = build_vocab([s(&["a", "b", "a"])], 1);
        assert_eq!(v.words(), &s(&[PAD_TOKEN, UNK_TOKEN, "a", "b"]));
        let v = build_vocab([s(&["a", "b", "a"])], 2);
        assert_eq!(v.id("b"), None);
        let v = build_vocab([s(&["b", "a", "b", "a", "c"])], 1);
        assert_eq!(v.id("a"), Some(2));
        assert_eq!(v.id("b"), Some(3));
        assert_eq!(v.id("c"), Some(4));
    }

    #[test]
    fn empty_corpus_has_reserved_only() {
        let v = build_vocab(Vec::<Vec<String>>::new(), 1);
        assert_eq!(v.len(), 2);
        assert_eq!(v.id(PAD_TOKEN), Some(PAD));
        assert_eq!(v.id(UNK_TOKEN), Some(UNK));
    }

    #[test]
    fn encode_maps_unknowns() {
        let v = build_vocab([s(&["love", "mondays"])], 1);
        let seq = v.encode(&s(&["love", "tuesdays", PAD_TOKEN])).unwrap();
        assert_eq!(seq.ids(), &[v.id("love").unwrap(), UNK, UNK]);
        assert_eq!(seq.words(), &s(&["love", "tuesdays", PAD_TOKEN]));
        assert!(matches!(
            v.encode::<String>(&[]),
            Err(TextError::EmptySequence)
        ));
    }

    #[test]
    fn decode_inverts_encode_for_known_words() {
        let v = build_vocab([s(&["x", "y", "z", "y"])], 1);
        let toks = s(&["z", "y", "x", "y"]);
        assert_eq!(v.decode(v.encode(&toks).unwrap().ids()), toks);
    }

    #[test]
    fn vocab_serde_roundtrip() {
        let v = build_vocab([s(&["x", "y"])], 1);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert!(Vocabulary::from_words(s(&["x", "y"])).is_none());
    }
}
