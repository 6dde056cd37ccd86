use std::collections::{BTreeSet, HashMap};

use super::ModelError;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const SCORE_ID: u32 = 2;
pub(crate) const RESERVED: usize = 3;
const RESERVED_TOKENS: [&str; RESERVED] = ["<pad>", "<unk>", "<score>"];

/// Frozen token-to-id map. Ids `0..3` are reserved; the rest follow sorted
/// token order, so the mapping does not depend on record order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    max_prompt_tokens: usize,
}

/// Lowercase and split on whitespace and punctuation. Hyphens and
/// apostrophes stay inside words.
pub fn split_words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| c.is_whitespace() || (c.is_ascii_punctuation() && c != '-' && c != '\''))
        .map(|w| w.trim_matches(|c| c == '-' || c == '\''))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

impl Vocabulary {
    pub fn build<'a>(prompts: impl IntoIterator<Item = &'a str>, max_prompt_tokens: usize) -> Self {
        let words: BTreeSet<String> = prompts.into_iter().flat_map(split_words).collect();
        Self::from_tokens(words.into_iter().collect(), max_prompt_tokens)
    }

    fn from_tokens(words: Vec<String>, max_prompt_tokens: usize) -> Self {
        let tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).chain(words).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self {
            tokens,
            index,
            max_prompt_tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn max_prompt_tokens(&self) -> usize {
        self.max_prompt_tokens
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// `max_prompt_tokens` on the first line, then one token per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.max_prompt_tokens);
        for t in &self.tokens[RESERVED..] {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let mut lines = text.lines();
        let max = lines
            .next()
            .and_then(|l| l.trim().parse().ok())
            .ok_or_else(|| ModelError::Vocabulary("missing max_prompt_tokens line".into()))?;
        let words: Vec<String> = lines.filter(|l| !l.is_empty()).map(String::from).collect();
        Ok(Self::from_tokens(words, max))
    }
}

pub fn tokenize(vocab: &Vocabulary, prompt: &str) -> Vec<u32> {
    split_words(prompt)
        .take(vocab.max_prompt_tokens)
        .map(|w| vocab.id(&w))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn challenge_title_tokens() {
        let v = Vocabulary::build(["Rule of Thirds", "Macro"], 12);
        let ids = tokenize(&v, "Rule of Thirds");
        assert_eq!(ids.len(), 3);
        assert!(ids.iter().all(|&i| i as usize >= RESERVED));
        assert_eq!(ids, tokenize(&v, "rule, OF thirds!"));
    }

    #[test]
    fn empty_and_unknown() {
        let v = Vocabulary::build(["Rule of Thirds"], 12);
        assert!(tokenize(&v, "").is_empty());
        assert_eq!(tokenize(&v, "zzz-unseen"), vec![UNK_ID]);
    }

    #[test]
    fn truncates_and_is_order_independent() {
        let a = Vocabulary::build(["b a c", "d"], 2);
        let b = Vocabulary::build(["d", "c b a"], 2);
        assert_eq!(a, b);
        assert_eq!(tokenize(&a, "a b c d").len(), 2);
        assert_eq!(a.len(), RESERVED + 4);
        assert_eq!(a.token(SCORE_ID), Some("<score>"));
    }

    #[test]
    fn text_round_trip() {
        let v = Vocabulary::build(["task: image alignment", "vivid urban night"], 9);
        assert_eq!(Vocabulary::from_text(&v.to_text()).unwrap(), v);
        assert!(Vocabulary::from_text("").is_err());
    }
}
