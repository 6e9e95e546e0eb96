use super::{GtlmModel, ModelError};
use crate::graph::{GraphError, TextAttributedGraph};
use crate::layout::{build_layout, identity_permutation};
use crate::tensor::Real;
use crate::tokenizer::{detokenize, tokenize, TokenId, EOS};

const NEWLINE: TokenId = b'\n' as TokenId;

/// Free greedy decoding, or greedy decoding restricted to a closed set of answers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeMode {
    Free { max_new_tokens: usize },
    Labels(Vec<String>),
}

/// Token continuations of a closed answer set, each terminated by the end-of-answer marker.
#[derive(Debug, Clone)]
pub struct AnswerTrie {
    answers: Vec<Vec<TokenId>>,
}

impl AnswerTrie {
    pub fn new(labels: &[String]) -> Self {
        let answers = labels.iter().map(|l| tokenize(l).into_iter().chain([EOS]).collect()).collect();
        Self { answers }
    }

    /// Tokens that keep `prefix` on some answer path, ascending and deduplicated.
    pub fn allowed(&self, prefix: &[TokenId]) -> Vec<TokenId> {
        let mut next: Vec<TokenId> = self
            .answers
            .iter()
            .filter(|a| a.len() > prefix.len() && a.starts_with(prefix))
            .map(|a| a[prefix.len()])
            .collect();
        next.sort_unstable();
        next.dedup();
        next
    }
}

fn argmax<F: Real>(row: &[F], allowed: Option<&[TokenId]>) -> TokenId {
    let mut best: Option<(TokenId, F)> = None;
    let mut consider = |t: TokenId| {
        let x = row[t as usize];
        if best.is_none_or(|(_, b)| x > b) {
            best = Some((t, x));
        }
    };
    match allowed {
        Some(ts) => ts.iter().for_each(|&t| consider(t)),
        None => (0..row.len() as TokenId).for_each(&mut consider),
    }
    best.expect("non-empty candidate set").0
}

impl<F: Real> GtlmModel<F> {
    /// Greedy continuation of the target text. The graph must carry a question template
    /// without a label.
    pub fn decode(&self, g: &TextAttributedGraph, mode: &DecodeMode) -> Result<String, ModelError> {
        if g.answer.is_some() {
            return Err(GraphError::TemplateAlreadyPresent.into());
        }
        let features = self.feature_inputs(g)?;
        let mut layout = build_layout(g, &identity_permutation(g))?;
        let trie = match mode {
            DecodeMode::Labels(labels) if labels.is_empty() => return Ok(String::new()),
            DecodeMode::Labels(labels) => Some(AnswerTrie::new(labels)),
            DecodeMode::Free { .. } => None,
        };
        let budget = match mode {
            DecodeMode::Free { max_new_tokens } => *max_new_tokens,
            DecodeMode::Labels(_) => usize::MAX,
        };
        let mut out: Vec<TokenId> = Vec::new();
        while out.len() < budget {
            let prep = self.prepare_layout(layout.clone(), features.clone())?;
            let logits = self.forward_prepared(&prep, false).logits;
            let row = logits.row(logits.rows - 1);
            let tok = match &trie {
                Some(t) => argmax(row, Some(&t.allowed(&out))),
                None => argmax(row, None),
            };
            if tok == EOS || (trie.is_none() && tok == NEWLINE) {
                break;
            }
            out.push(tok);
            layout.push_target_token(tok);
        }
        Ok(detokenize(&out))
    }

    pub fn generate(&self, g: &TextAttributedGraph, max_new_tokens: usize) -> Result<String, ModelError> {
        self.decode(g, &DecodeMode::Free { max_new_tokens })
    }

    pub fn generate_constrained(&self, g: &TextAttributedGraph, labels: &[String]) -> Result<String, ModelError> {
        self.decode(g, &DecodeMode::Labels(labels.to_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trie_branches() {
        let t = AnswerTrie::new(&["Yes".into(), "No".into(), "Not".into()]);
        assert_eq!(t.allowed(&[]), vec![b'N' as u32, b'Y' as u32]);
        assert_eq!(t.allowed(&tokenize("No")), vec![b't' as u32, EOS]);
        assert_eq!(t.allowed(&tokenize("Yes")), vec![EOS]);
        assert!(t.allowed(&tokenize("Z")).is_empty());
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0], None), 1);
        assert_eq!(argmax(&[1.0, 3.0, 3.0], Some(&[0, 2])), 2);
    }
}
