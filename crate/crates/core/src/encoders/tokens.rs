use super::vocab::{TokenId, Vocabulary, BOS, EOS, PSEUDO_TOKEN};
use crate::error::{Error, Result};

/// One position of a token sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum Element {
    Token(TokenId),
    /// Pseudo-token slot. `None` means the vector is supplied at embedding time.
    Pseudo(Option<Vec<f32>>),
}

/// `BOS body.. EOS`, unpadded; padding to the encoder length happens when
/// embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    elements: Vec<Element>,
}

impl TokenSequence {
    /// Wraps `body` in BOS/EOS, failing when the result exceeds `max_len`.
    pub fn from_body(body: Vec<Element>, max_len: usize) -> Result<Self> {
        let len = body.len() + 2;
        if len > max_len {
            return Err(Error::SequenceTooLong { len, max: max_len });
        }
        if body
            .iter()
            .any(|e| matches!(e, Element::Token(t) if *t == BOS || *t == EOS || *t == super::vocab::PAD))
        {
            return Err(Error::contract("special tokens inside a sequence body"));
        }
        let mut elements = Vec::with_capacity(len);
        elements.push(Element::Token(BOS));
        elements.extend(body);
        elements.push(Element::Token(EOS));
        Ok(Self { elements })
    }

    /// Tokenizes `text`; the word `[*]` becomes an open pseudo slot.
    pub fn parse(vocab: &Vocabulary, text: &str, max_len: usize) -> Result<Self> {
        let body = Vocabulary::split(text)
            .into_iter()
            .map(|w| {
                if w == PSEUDO_TOKEN {
                    Ok(Element::Pseudo(None))
                } else {
                    vocab.id(w).map(Element::Token)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_body(body, max_len)
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Position of the EOS token (the last element).
    pub fn eos_position(&self) -> usize {
        self.elements.len() - 1
    }

    pub fn pseudo_slots(&self) -> usize {
        self.elements
            .iter()
            .filter(|e| matches!(e, Element::Pseudo(_)))
            .count()
    }

    /// Fills every open pseudo slot with `s`.
    pub fn fill_pseudo(&mut self, s: &[f32]) {
        for e in &mut self.elements {
            if let Element::Pseudo(v @ None) = e {
                *v = Some(s.to_vec());
            }
        }
    }

    /// Token ids with pseudo slots shown as the placeholder id.
    pub fn ids(&self, vocab: &Vocabulary) -> Vec<TokenId> {
        self.elements
            .iter()
            .map(|e| match e {
                Element::Token(t) => *t,
                Element::Pseudo(_) => vocab.pseudo(),
            })
            .collect()
    }

    /// Body words joined by spaces, without BOS/EOS.
    pub fn render(&self, vocab: &Vocabulary) -> String {
        let ids = self.ids(vocab);
        ids[1..ids.len() - 1]
            .iter()
            .map(|&t| vocab.token(t).unwrap_or("?"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
