use std::fmt;

/// Where a token sequence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SourceRole {
    #[default]
    QueryQuestion,
    CandidateQuestion,
    Context,
}

/// How punctuation inside a whitespace-delimited chunk is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PunctPolicy {
    /// Punctuation acts as a token boundary: `a.b` -> `[a, b]`.
    #[default]
    Split,
    /// Punctuation is deleted and the remaining characters are joined:
    /// `a.b` -> `[ab]`.
    Strip,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TokenizeConfig {
    pub punct_policy: PunctPolicy,
}

/// A lowercased, punctuation-free token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence {
    tokens: Vec<String>,
    role: SourceRole,
}

impl TokenSequence {
    /// Builds a sequence from pre-split tokens, dropping empty and
    /// punctuation-only entries.
    pub fn new<I, S>(tokens: I, role: SourceRole) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens = tokens
            .into_iter()
            .map(Into::into)
            .filter(|t: &String| t.chars().any(char::is_alphanumeric))
            .collect();
        Self { tokens, role }
    }

    /// Splits already-normalized text on whitespace.
    pub fn from_whitespace(text: &str, role: SourceRole) -> Self {
        Self::new(text.split_whitespace(), role)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn role(&self) -> SourceRole {
        self.role
    }

    pub fn with_role(mut self, role: SourceRole) -> Self {
        self.role = role;
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }

    /// Space-joined tokens.
    pub fn join(&self) -> String {
        self.tokens.join(" ")
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.join())
    }
}

/// Lowercases `text` and splits it into alphanumeric tokens.
///
/// Digits are kept. Pure punctuation never survives.
pub fn tokenize(text: &str, cfg: TokenizeConfig) -> TokenSequence {
    let lower = text.to_lowercase();
    let tokens: Vec<String> = match cfg.punct_policy {
        PunctPolicy::Split => lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_owned)
            .collect(),
        PunctPolicy::Strip => lower
            .split_whitespace()
            .map(|chunk| chunk.chars().filter(|c| c.is_alphanumeric()).collect::<String>())
            .filter(|t| !t.is_empty())
            .collect(),
    };
    TokenSequence {
        tokens,
        role: SourceRole::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(text: &str) -> Vec<String> {
        tokenize(text, TokenizeConfig::default()).tokens
    }

    #[test]
    fn question_text() {
        assert_eq!(
            toks("What are good scary movies ?"),
            ["what", "are", "good", "scary", "movies"]
        );
    }

    #[test]
    fn empty() {
        assert!(toks("").is_empty());
        assert!(toks("  ?!  ").is_empty());
    }

    #[test]
    fn punct_policies() {
        assert_eq!(toks("A.B.C!!"), ["a", "b", "c"]);
        let strip = TokenizeConfig {
            punct_policy: PunctPolicy::Strip,
        };
        assert_eq!(tokenize("A.B.C!!", strip).tokens, ["abc"]);
    }

    #[test]
    fn digits_survive() {
        assert_eq!(
            toks("What happened in US in 1776?"),
            ["what", "happened", "in", "us", "in", "1776"]
        );
    }

    #[test]
    fn new_drops_punctuation_only() {
        let s = TokenSequence::new(["a", "", "?!", "__eou__"], SourceRole::Context);
        assert_eq!(s.tokens(), ["a", "__eou__"]);
    }

    proptest! {
        #[test]
        fn idempotent(text in "\\PC{0,60}") {
            let once = tokenize(&text, TokenizeConfig::default());
            let twice = tokenize(&once.join(), TokenizeConfig::default());
            prop_assert_eq!(once.tokens, twice.tokens);
        }

        #[test]
        fn tokens_are_clean(text in "\\PC{0,60}") {
            for t in toks(&text) {
                prop_assert!(!t.is_empty());
                prop_assert!(t.chars().all(char::is_alphanumeric));
            }
        }
    }
}
