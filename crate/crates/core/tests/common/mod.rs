#![allow(dead_code)]

use p2w_core::autodiff::ParamSet;
use p2w_core::encoders::{Architecture, EncoderBundle, Encoders, TokenSequence};
use p2w_core::mapper::MapperKind;
use p2w_core::synthworld::{vocabulary, World, WorldConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Same shape as the default architecture, shrunk so finite differences over
/// every parameter stay cheap.
pub fn small_arch(kind: MapperKind) -> Architecture {
    Architecture {
        world_dim: 12,
        embed_dim: 8,
        vision_hidden: 10,
        heads: 2,
        ff_hidden: 12,
        max_len: 16,
        norm_gain: 3.0,
        mapper_hidden: 10,
        mapper_kind: kind,
    }
}

pub fn small_bundle(seed: u64) -> EncoderBundle {
    EncoderBundle::init(small_arch(MapperKind::Mlp), vocabulary(), 1.0 / 0.07, seed)
}

pub fn random_rows(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect())
        .collect()
}

pub fn refs(rows: &[Vec<f32>]) -> Vec<&[f32]> {
    rows.iter().map(Vec::as_slice).collect()
}

/// Captions from the synthetic grammar.
pub fn captions(bundle: &EncoderBundle, n: usize, seed: u64) -> Vec<TokenSequence> {
    let cfg = WorldConfig {
        n_pretrain: n,
        ..WorldConfig::default()
    };
    let set = World::generate(cfg, seed).pretrain_set().unwrap();
    set.samples
        .iter()
        .map(|s| bundle.parse(s.caption.as_deref().unwrap()).unwrap())
        .collect()
}

pub fn view<'a>(bundle: &'a EncoderBundle, params: &'a ParamSet<f64>) -> Encoders<'a, f64> {
    Encoders::new(&bundle.arch, &bundle.vocab, params)
}
