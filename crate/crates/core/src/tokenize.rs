//! Token counting and prefix truncation used for snippet budgets and
//! history budgets.

use std::path::Path;
#[cfg(feature = "hf-tokenizer")]
use std::sync::Arc;

/// Default number of tokens kept per search-result snippet.
pub const DEFAULT_SNIPPET_TOKENS: usize = 512;

#[derive(Clone, Default)]
pub enum Tokenizer {
    /// Tokens are maximal runs of non-whitespace characters.
    #[default]
    Whitespace,
    /// A subword vocabulary loaded from a `tokenizer.json` file.
    #[cfg(feature = "hf-tokenizer")]
    Vocabulary(Arc<tokenizers::Tokenizer>),
}

impl std::fmt::Debug for Tokenizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tokenizer::Whitespace => f.write_str("Whitespace"),
            #[cfg(feature = "hf-tokenizer")]
            Tokenizer::Vocabulary(_) => f.write_str("Vocabulary(..)"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("cannot load tokenizer vocabulary {path}: {reason}")]
pub struct TokenizerLoadError {
    pub path: String,
    pub reason: String,
}

impl Tokenizer {
    #[cfg(feature = "hf-tokenizer")]
    pub fn from_vocabulary_file(path: &Path) -> Result<Self, TokenizerLoadError> {
        tokenizers::Tokenizer::from_file(path)
            .map(|t| Tokenizer::Vocabulary(Arc::new(t)))
            .map_err(|e| TokenizerLoadError {
                path: path.display().to_string(),
                reason: e.to_string(),
            })
    }

    #[cfg(not(feature = "hf-tokenizer"))]
    pub fn from_vocabulary_file(path: &Path) -> Result<Self, TokenizerLoadError> {
        Err(TokenizerLoadError {
            path: path.display().to_string(),
            reason: "built without the hf-tokenizer feature".into(),
        })
    }

    pub fn count(&self, text: &str) -> usize {
        match self {
            Tokenizer::Whitespace => text.split_whitespace().count(),
            #[cfg(feature = "hf-tokenizer")]
            Tokenizer::Vocabulary(t) => t
                .encode(text, false)
                .map(|e| e.len())
                .unwrap_or_else(|_| text.split_whitespace().count()),
        }
    }

    /// The longest prefix of `text` holding at most `budget` tokens. Original
    /// spacing inside the prefix is kept; text within budget is returned as is.
    pub fn truncate<'a>(&self, text: &'a str, budget: usize) -> &'a str {
        if budget == 0 {
            return "";
        }
        match self {
            Tokenizer::Whitespace => {
                let mut seen = 0;
                let mut in_token = false;
                for (i, ch) in text.char_indices() {
                    if ch.is_whitespace() {
                        if in_token {
                            seen += 1;
                            in_token = false;
                            if seen == budget {
                                return &text[..i];
                            }
                        }
                    } else {
                        in_token = true;
                    }
                }
                text
            }
            #[cfg(feature = "hf-tokenizer")]
            Tokenizer::Vocabulary(t) => {
                let Ok(enc) = t.encode(text, false) else {
                    return Tokenizer::Whitespace.truncate(text, budget);
                };
                let offsets = enc.get_offsets();
                if offsets.len() <= budget {
                    return text;
                }
                let mut end = offsets[budget - 1].1.min(text.len());
                while !text.is_char_boundary(end) {
                    end -= 1;
                }
                text[..end].trim_end()
            }
        }
    }
}
