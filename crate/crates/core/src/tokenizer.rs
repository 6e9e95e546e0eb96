//! Byte-level tokenizer: every UTF-8 byte is its own token, plus an end-of-answer marker.

pub type TokenId = u32;

/// Number of byte tokens.
pub const BYTE_VOCAB: usize = 256;
/// Terminates a supervised answer span and stops decoding.
pub const EOS: TokenId = 256;
/// Smallest vocabulary the model can be configured with.
pub const MIN_VOCAB: usize = BYTE_VOCAB + 1;

pub fn tokenize(text: &str) -> Vec<TokenId> {
    text.bytes().map(TokenId::from).collect()
}

/// Inverse of [`tokenize`]. Special tokens are dropped; invalid UTF-8 is replaced lossily.
pub fn detokenize(tokens: &[TokenId]) -> String {
    let bytes: Vec<u8> = tokens.iter().filter_map(|&t| u8::try_from(t).ok()).collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_byte() {
        assert_eq!(tokenize("A"), vec![65]);
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn eos_is_not_text() {
        assert_eq!(detokenize(&[72, 105, EOS]), "Hi");
    }

    proptest! {
        #[test]
        fn round_trip(s in ".*") {
            prop_assert_eq!(detokenize(&tokenize(&s)), s);
        }
    }
}
