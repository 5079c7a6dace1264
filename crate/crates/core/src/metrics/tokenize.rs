use serde::{Deserialize, Serialize};

pub const TOKENIZER_ID: &str = "r2t-punct-v1";

/// Splits on whitespace, then makes every character that is neither
/// alphanumeric nor an internal joiner its own token. A hyphen between two
/// alphanumerics and a period between two digits stay inside the word.
/// Case is preserved.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        let mut cur = String::new();
        for (i, &c) in chars.iter().enumerate() {
            let prev = i.checked_sub(1).map(|p| chars[p]);
            let next = chars.get(i + 1).copied();
            let joiner = match c {
                '-' => prev.is_some_and(char::is_alphanumeric) && next.is_some_and(char::is_alphanumeric),
                '.' => {
                    prev.is_some_and(|p| p.is_ascii_digit()) && next.is_some_and(|n| n.is_ascii_digit())
                }
                _ => false,
            };
            if c.is_alphanumeric() || joiner {
                cur.push(c);
            } else {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// Lowercased tokens, as used by the diversity metrics and METEOR.
pub fn tokenize_lower(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.to_lowercase()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedCorpus {
    pub tokens: Vec<Vec<String>>,
    pub tokenizer_id: String,
}

impl TokenizedCorpus {
    pub fn new<S: AsRef<str>>(texts: &[S]) -> Self {
        Self {
            tokens: texts.iter().map(|t| tokenize(t.as_ref())).collect(),
            tokenizer_id: TOKENIZER_ID.to_string(),
        }
    }

    pub fn lowercased(&self) -> Self {
        Self {
            tokens: self
                .tokens
                .iter()
                .map(|s| s.iter().map(|t| t.to_lowercase()).collect())
                .collect(),
            tokenizer_id: self.tokenizer_id.clone(),
        }
    }
}
