//! Mapping network from unnormalized image embeddings to pseudo tokens,
//! trained with the cycle contrastive loss against frozen encoders.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamSet, Scalar, Var};
use crate::contrastive::{symmetric_loss, temperature, train_loop, LossParts, TrainConfig, TrainLog};
use crate::encoders::{
    assemble_training_prompt, he_uniform, Architecture, EncoderBundle, Encoders, INFERENCE_CHUNK,
    MAPPER,
};
use crate::error::{ensure, Result};
use crate::retrieval::{unit_query, EmbeddingIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapperKind {
    /// Three layers with ReLU after the first two.
    #[default]
    Mlp,
    /// The same three layers with no activation at all.
    Linear,
}

const LAYERS: [&str; 3] = ["mapper.fc1", "mapper.fc2", "mapper.fc3"];

pub fn init_mapper(arch: &Architecture, seed: u64) -> ParamSet<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = [arch.embed_dim, arch.mapper_hidden, arch.mapper_hidden, arch.embed_dim];
    let mut p = ParamSet::new();
    for (i, name) in LAYERS.iter().enumerate() {
        p.insert(format!("{name}.w"), he_uniform(&mut rng, dims[i], dims[i + 1]));
        p.insert(format!("{name}.b"), crate::encoders::model_zeros(dims[i + 1]));
    }
    p
}

/// `s = f_M(v~)` for a batch of unnormalized image embeddings.
pub fn map_embedding<T: Scalar>(enc: &Encoders<'_, T>, g: &mut Graph<T>, v: Var) -> Result<Var> {
    let (_, c) = g.shape(v);
    ensure!(
        c == enc.arch.embed_dim,
        "mapper input has width {c}, expected {}",
        enc.arch.embed_dim
    );
    let mut h = v;
    for (i, name) in LAYERS.iter().enumerate() {
        let w = enc.p(g, &format!("{name}.w"));
        let b = enc.p(g, &format!("{name}.b"));
        h = g.linear(h, w, Some(b));
        if i < 2 && enc.arch.mapper_kind == MapperKind::Mlp {
            h = g.relu(h);
        }
    }
    Ok(h)
}

/// Normalized text embedding of `a photo of [*]` with `[*] = f_M(v~)`.
pub fn cycle_embedding<T: Scalar>(enc: &Encoders<'_, T>, g: &mut Graph<T>, v: Var) -> Result<Var> {
    let s = map_embedding(enc, g, v)?;
    let (b, _) = g.shape(s);
    let prompt = assemble_training_prompt(enc.vocab, enc.arch.max_len, None, enc.arch.embed_dim)?;
    let seqs = vec![prompt; b];
    let p = enc.encode_text(g, &seqs, Some(s))?;
    g.l2_normalize_rows(p)
}

fn check_frozen<T: Scalar>(params: &ParamSet<T>) -> Result<()> {
    if let Some(n) = params
        .names()
        .find(|n| !n.starts_with(MAPPER) && !params.is_frozen(n))
    {
        return Err(crate::Error::contract(format!(
            "{n} must be frozen while training the mapper"
        )));
    }
    Ok(())
}

/// Cycle loss from precomputed unnormalized image embeddings `v~`.
pub fn mapper_loss_from_features<T: Scalar>(
    enc: &Encoders<'_, T>,
    g: &mut Graph<T>,
    features: &[&[f32]],
) -> Result<LossParts> {
    check_frozen(enc.params)?;
    let vt = enc.input_rows(g, features, enc.arch.embed_dim)?;
    let v = g.l2_normalize_rows(vt)?;
    let p = cycle_embedding(enc, g, vt)?;
    let tau = temperature(enc, g);
    symmetric_loss(g, p, v, tau)
}

/// The cycle loss for a batch of images: the contrastive loss with `p` rows
/// in place of caption embeddings.
pub fn mapper_loss<T: Scalar>(
    enc: &Encoders<'_, T>,
    g: &mut Graph<T>,
    images: &[&[f32]],
) -> Result<LossParts> {
    check_frozen(enc.params)?;
    let x = enc.input_rows(g, images, enc.arch.world_dim)?;
    let vt = enc.encode_image(g, x)?;
    let v = g.l2_normalize_rows(vt)?;
    let p = cycle_embedding(enc, g, vt)?;
    let tau = temperature(enc, g);
    symmetric_loss(g, p, v, tau)
}

/// Trains only the mapper. `holdout` images drive the per-epoch
/// reconstruction metrics when non-empty.
pub fn train_mapper(
    bundle: &mut EncoderBundle,
    images: &[&[f32]],
    holdout: &[&[f32]],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    ensure!(!images.is_empty(), "empty image set");
    check_frozen(&bundle.params)?;
    // The vision encoder is frozen, so its outputs can be computed once.
    let features = bundle.image_embeddings(images)?;
    train_loop(
        bundle,
        features.len(),
        cfg,
        |b, idx| {
            let rows: Vec<&[f32]> = idx.iter().map(|&i| features[i].as_slice()).collect();
            let mut g = Graph::new();
            let parts = mapper_loss_from_features(&b.view(), &mut g, &rows)?;
            Ok((g, parts.total))
        },
        |b| {
            let mut m = BTreeMap::new();
            if !holdout.is_empty() {
                let (r1, r5) = reconstruction_eval(b, holdout)?;
                m.insert("recon_r1".to_string(), r1);
                m.insert("recon_r5".to_string(), r5);
            }
            Ok(m)
        },
    )
}

/// Pseudo tokens for a set of unnormalized image embeddings.
pub fn pseudo_tokens(bundle: &EncoderBundle, features: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
    let enc = bundle.view();
    let d = bundle.arch.embed_dim;
    let mut out = Vec::with_capacity(features.len());
    for chunk in features.chunks(INFERENCE_CHUNK) {
        let rows: Vec<&[f32]> = chunk.iter().map(Vec::as_slice).collect();
        let mut g = Graph::inference();
        let v = enc.input_rows(&mut g, &rows, d)?;
        let s = map_embedding(&enc, &mut g, v)?;
        out.extend(g.value(s).chunks(d).map(<[f32]>::to_vec));
    }
    Ok(out)
}

/// Cycle embeddings `p` for a set of images, unit norm.
pub fn cycle_embeddings(bundle: &EncoderBundle, images: &[&[f32]]) -> Result<Vec<Vec<f32>>> {
    let enc = bundle.view();
    let d = bundle.arch.embed_dim;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(INFERENCE_CHUNK) {
        let mut g = Graph::inference();
        let x = enc.input_rows(&mut g, chunk, bundle.arch.world_dim)?;
        let vt = enc.encode_image(&mut g, x)?;
        let p = cycle_embedding(&enc, &mut g, vt)?;
        out.extend(g.value(p).chunks(d).map(<[f32]>::to_vec));
    }
    Ok(out)
}

/// Queries every image with its own cycle embedding against an index of the
/// whole set; returns (R@1, R@5) for retrieving the source image.
pub fn reconstruction_eval(bundle: &EncoderBundle, images: &[&[f32]]) -> Result<(f64, f64)> {
    ensure!(!images.is_empty(), "empty image set");
    let index = EmbeddingIndex::build(bundle, images, (0..images.len() as u64).collect(), vec![(); images.len()])?;
    let queries = cycle_embeddings(bundle, images)?
        .iter()
        .map(|p| unit_query(p))
        .collect::<Result<Vec<_>>>()?;
    let k = 5.min(images.len());
    let results = index.search_all(&queries, k)?;
    let hit = |q: usize, kk: usize| results[q].hits[..kk.min(k)].iter().any(|h| h.id == q as u64);
    let n = images.len() as f64;
    let r1 = (0..images.len()).filter(|&q| hit(q, 1)).count() as f64 / n;
    let r5 = (0..images.len()).filter(|&q| hit(q, 5)).count() as f64 / n;
    Ok((r1, r5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::Vocabulary;

    fn bundle(kind: MapperKind) -> EncoderBundle {
        let vocab = Vocabulary::new(["a", "photo", "of", "car"]);
        let arch = Architecture {
            mapper_kind: kind,
            mapper_hidden: 32,
            ..Architecture::default()
        };
        let mut b = EncoderBundle::init(arch, vocab, 1.0 / 0.07, 5);
        b.freeze_encoders();
        b
    }

    #[test]
    fn three_weights_three_biases() {
        let b = bundle(MapperKind::Mlp);
        let names: Vec<_> = b.params.subset(MAPPER).names().map(str::to_string).collect();
        assert_eq!(names.len(), 6);
        assert_eq!(b.params.expect("mapper.fc3.w").shape(), &[32, 64]);
    }

    #[test]
    fn zero_mapper_outputs_bias() {
        let mut b = bundle(MapperKind::Mlp);
        for (n, t) in b.params.iter_mut() {
            if n.starts_with(MAPPER) {
                let bias = n.ends_with(".b") && n.starts_with("mapper.fc3");
                t.data_mut().iter_mut().for_each(|x| *x = if bias { 0.25 } else { 0.0 });
            }
        }
        let s = pseudo_tokens(&b, &[vec![1.0; 64]]).unwrap();
        assert!(s[0].iter().all(|&x| x == 0.25));
    }

    #[test]
    fn deterministic_and_shaped() {
        let b = bundle(MapperKind::Mlp);
        let v: Vec<f32> = (0..64).map(|i| (i as f32).sin()).collect();
        let s = pseudo_tokens(&b, &[v.clone(), v]).unwrap();
        assert_eq!(s[0], s[1]);
        assert_eq!(s[0].len(), 64);
    }

    #[test]
    fn cycle_embedding_is_unit() {
        let b = bundle(MapperKind::Linear);
        let x: Vec<f32> = (0..64).map(|i| (i as f32 * 0.3).cos()).collect();
        let p = cycle_embeddings(&b, &[&x]).unwrap();
        let n: f32 = p[0].iter().map(|z| z * z).sum::<f32>().sqrt();
        assert!((n - 1.0).abs() < 1e-5);
    }

    #[test]
    fn mapper_loss_requires_frozen_encoders() {
        let mut b = bundle(MapperKind::Mlp);
        b.params.unfreeze_prefix("text.");
        let x = vec![0.1f32; 64];
        let mut g = Graph::new();
        assert!(mapper_loss(&b.view(), &mut g, &[&x, &x]).is_err());
    }

    #[test]
    fn single_image_reconstructs() {
        let b = bundle(MapperKind::Mlp);
        let x: Vec<f32> = (0..64).map(|i| (i as f32 * 0.7).sin()).collect();
        assert_eq!(reconstruction_eval(&b, &[&x]).unwrap(), (1.0, 1.0));
    }
}
