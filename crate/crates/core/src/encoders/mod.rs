//! Toy vision and text encoders, word embeddings and token sequences.

mod model;
mod tokens;
mod vocab;

pub use model::{
    Architecture, Embedded, EncoderBundle, Encoders, EMBED, INFERENCE_CHUNK, LOGIT, LOG_TAU,
    MAPPER, TEXT, VISION,
};
pub(crate) use model::{he_uniform, zeros as model_zeros};
pub use tokens::{Element, TokenSequence};
pub use vocab::{TokenId, Vocabulary, BOS, EOS, PAD, PSEUDO_TOKEN};

use crate::error::Result;

/// The mapper training prompt `a photo of [*]` with the slot left open, or
/// filled with `s` when given.
pub fn assemble_training_prompt(
    vocab: &Vocabulary,
    max_len: usize,
    s: Option<&[f32]>,
    embed_dim: usize,
) -> Result<TokenSequence> {
    let mut seq = TokenSequence::parse(vocab, "a photo of [*]", max_len)?;
    if let Some(s) = s {
        crate::error::ensure!(
            s.len() == embed_dim,
            "pseudo token has width {}, expected {embed_dim}",
            s.len()
        );
        crate::error::ensure!(s.iter().all(|x| x.is_finite()), "pseudo token is not finite");
        seq.fill_pseudo(s);
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::new(["a", "photo", "of"])
    }

    #[test]
    fn training_prompt_token_order() {
        let v = vocab();
        let s = vec![0.5f32; 8];
        let seq = assemble_training_prompt(&v, 16, Some(&s), 8).unwrap();
        let want: Vec<TokenId> = vec![BOS, v.id("a").unwrap(), v.id("photo").unwrap(), v.id("of").unwrap(), v.pseudo(), EOS];
        assert_eq!(seq.ids(&v), want);
        assert_eq!(seq.elements()[4], Element::Pseudo(Some(s)));
    }

    #[test]
    fn prompts_differ_only_in_the_slot() {
        let v = vocab();
        let a = assemble_training_prompt(&v, 16, Some(&[1.0; 4]), 4).unwrap();
        let b = assemble_training_prompt(&v, 16, Some(&[2.0; 4]), 4).unwrap();
        for (i, (x, y)) in a.elements().iter().zip(b.elements()).enumerate() {
            assert_eq!(x == y, i != 4);
        }
    }

    #[test]
    fn wrong_width_is_rejected() {
        let v = vocab();
        assert!(assemble_training_prompt(&v, 16, Some(&[1.0; 3]), 4).is_err());
    }
}
