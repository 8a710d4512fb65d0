use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::normalize_text;
use crate::error::{OridError, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

pub type TokenSeq = Vec<usize>;

/// Word vocabulary with the four specials at fixed ids 0-3.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_words(words: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(words);
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (i, t) in id_to_token.iter().enumerate() {
            if token_to_id.insert(t.clone(), i).is_some() {
                return Err(OridError::InvalidArgument(format!("duplicate vocabulary token '{t}'")));
            }
        }
        Ok(Vocabulary { id_to_token, token_to_id })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.get(token).is_some_and(|&i| i >= SPECIALS.len())
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    /// Non-special words in id order.
    pub fn words(&self) -> &[String] {
        &self.id_to_token[SPECIALS.len()..]
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = OridError;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(OridError::InvalidArgument("vocabulary must start with the special tokens".into()));
        }
        Vocabulary::from_words(tokens.into_iter().skip(SPECIALS.len()))
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.id_to_token
    }
}

/// Builds a vocabulary from raw texts. Words seen fewer than `min_count`
/// times are left out and tokenize to UNK. Ids are assigned by descending
/// frequency, ties broken alphabetically.
pub fn build_vocabulary<S: AsRef<str>>(texts: &[S], min_count: usize) -> Result<Vocabulary> {
    if min_count < 1 {
        return Err(OridError::InvalidArgument("min_count must be at least 1".into()));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in texts {
        for w in normalize_text(text.as_ref()).split_whitespace() {
            *counts.entry(w.to_string()).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(OridError::EmptyCorpus);
    }
    let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_words(kept.into_iter().map(|(w, _)| w))
}

/// `[BOS] + ids (truncated to max_len - 2) + [EOS]`, right-padded with PAD to `max_len`.
pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> TokenSeq {
    let max_len = max_len.max(2);
    let mut out = Vec::with_capacity(max_len);
    out.push(BOS);
    out.extend(normalize_text(text).split_whitespace().take(max_len - 2).map(|w| vocab.id(w)));
    out.push(EOS);
    out.resize(max_len, PAD);
    out
}

/// Word ids of a text without specials or padding.
pub fn encode_words(text: &str, vocab: &Vocabulary) -> TokenSeq {
    normalize_text(text).split_whitespace().map(|w| vocab.id(w)).collect()
}

/// Words between BOS and the first EOS; PAD and BOS are skipped.
pub fn detokenize(ids: &[usize], vocab: &Vocabulary) -> String {
    let mut words = Vec::new();
    for &id in ids {
        match id {
            EOS => break,
            PAD | BOS => continue,
            _ => words.push(vocab.token(id).unwrap_or(SPECIALS[UNK])),
        }
    }
    words.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frequent_words_kept() {
        let v = build_vocabulary(&["lungs are clear", "lungs are clear", "lungs are clear"], 3).unwrap();
        for w in ["lungs", "are", "clear"] {
            assert!(v.contains(w));
        }
        assert!(v.id("clear") >= 4);
        assert_eq!(v.len(), 7);
    }

    #[test]
    fn rare_words_become_unk() {
        let v = build_vocabulary(&["nodule seen", "no acute disease", "no acute disease"], 3).unwrap();
        assert!(!v.contains("nodule") && !v.contains("seen"));
        assert_eq!(tokenize("nodule seen", &v, 4), vec![BOS, UNK, UNK, EOS]);
        let v1 = build_vocabulary(&["nodule seen", "no acute disease", "no acute disease"], 1).unwrap();
        assert!(!encode_words("nodule seen no acute disease", &v1).contains(&UNK));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(build_vocabulary::<&str>(&[], 3), Err(OridError::EmptyCorpus)));
        assert!(matches!(build_vocabulary(&["", " . "], 1), Err(OridError::EmptyCorpus)));
    }

    #[test]
    fn tokenize_edges() {
        let v = build_vocabulary(&["a b c", "a b c", "a b c"], 3).unwrap();
        assert_eq!(tokenize("", &v, 5), vec![BOS, EOS, PAD, PAD, PAD]);
        let t = tokenize("a b c", &v, 5);
        assert_eq!(t, vec![BOS, v.id("a"), v.id("b"), v.id("c"), EOS]);
        assert_eq!(tokenize("a b c a", &v, 5)[4], EOS);
    }

    #[test]
    fn serde_round_trip() {
        let v = build_vocabulary(&["x y", "x y"], 1).unwrap();
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocabulary>(&s).unwrap(), v);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn detokenize_inverts_tokenize(words in prop::collection::vec(0usize..6, 0..12), caps in any::<bool>()) {
            let lexicon = ["lungs", "are", "clear", "heart", "size", "normal"];
            let v = build_vocabulary(&[lexicon.join(" ")], 1).unwrap();
            let mut text = words.iter().map(|&i| lexicon[i]).collect::<Vec<_>>().join(" ");
            if caps {
                text = text.to_uppercase() + ".";
            }
            let ids = tokenize(&text, &v, 16);
            prop_assert_eq!(detokenize(&ids, &v), normalize_text(&text));
            // PAD never precedes EOS.
            let eos = ids.iter().position(|&t| t == EOS).unwrap();
            prop_assert!(!ids[..eos].contains(&PAD));
        }
    }
}
