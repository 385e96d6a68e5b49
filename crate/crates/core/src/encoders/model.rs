use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tokens::{Element, TokenSequence};
use super::vocab::{Vocabulary, PAD};
use crate::autodiff::{Graph, ParamSet, Scalar, Tensor, Var};
use crate::error::{ensure, Error, Result};
use crate::mapper::MapperKind;

/// Parameter-name prefixes of the four groups of an [`EncoderBundle`].
pub const VISION: &str = "vision.";
pub const TEXT: &str = "text.";
pub const EMBED: &str = "embed.";
pub const LOGIT: &str = "logit.";
pub const MAPPER: &str = "mapper.";

pub const LOG_TAU: &str = "logit.log_tau";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub world_dim: usize,
    /// Shared width of token embeddings and the joint embedding space.
    pub embed_dim: usize,
    pub vision_hidden: usize,
    pub heads: usize,
    pub ff_hidden: usize,
    pub max_len: usize,
    /// Row norm after the text encoder's pre-normalization. A layer norm
    /// would give sqrt(embed_dim); smaller values keep attention softer, so
    /// words around a pseudo token keep more of a say.
    pub norm_gain: f64,
    pub mapper_hidden: usize,
    pub mapper_kind: MapperKind,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            world_dim: 64,
            embed_dim: 64,
            vision_hidden: 128,
            heads: 2,
            ff_hidden: 256,
            max_len: 16,
            norm_gain: 3.0,
            mapper_hidden: 512,
            mapper_kind: MapperKind::Mlp,
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, shape: Vec<usize>, bound: f64) -> Tensor<f32> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.random_range(-bound..bound) as f32)
        .collect();
    Tensor::new(shape, data)
}

/// He-style uniform initialisation scaled by fan-in.
pub(crate) fn he_uniform<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor<f32> {
    uniform(rng, vec![fan_in, fan_out], (6.0 / fan_in as f64).sqrt())
}

pub(crate) fn xavier_uniform<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor<f32> {
    uniform(
        rng,
        vec![fan_in, fan_out],
        (6.0 / (fan_in + fan_out) as f64).sqrt(),
    )
}

pub(crate) fn zeros(n: usize) -> Tensor<f32> {
    Tensor::zeros(vec![n])
}

/// Vision encoder, text encoder, word embeddings, temperature and mapping
/// network, all in one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBundle {
    pub arch: Architecture,
    pub vocab: Vocabulary,
    pub params: ParamSet<f32>,
}

impl EncoderBundle {
    /// Freshly initialised encoders with temperature `tau_init`; the mapping
    /// network is initialised from `seed + 1`.
    pub fn init(arch: Architecture, vocab: Vocabulary, tau_init: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = arch.embed_dim;
        assert!(d % arch.heads == 0, "embed_dim must divide into heads");
        let mut p = ParamSet::new();
        p.insert("vision.fc1.w", he_uniform(&mut rng, arch.world_dim, arch.vision_hidden));
        p.insert("vision.fc1.b", zeros(arch.vision_hidden));
        p.insert("vision.fc2.w", he_uniform(&mut rng, arch.vision_hidden, d));
        p.insert("vision.fc2.b", zeros(d));

        let emb = (3.0 / d as f64).sqrt();
        p.insert("embed.tokens", uniform(&mut rng, vec![vocab.table_rows(), d], emb));
        p.insert("text.pos", uniform(&mut rng, vec![arch.max_len, d], emb));
        for name in ["text.wq", "text.wk", "text.wv", "text.wo"] {
            p.insert(name, xavier_uniform(&mut rng, d, d));
        }
        p.insert("text.bo", zeros(d));
        p.insert("text.ff1.w", he_uniform(&mut rng, d, arch.ff_hidden));
        p.insert("text.ff1.b", zeros(arch.ff_hidden));
        p.insert("text.ff2.w", xavier_uniform(&mut rng, arch.ff_hidden, d));
        p.insert("text.ff2.b", zeros(d));
        p.insert("text.proj", xavier_uniform(&mut rng, d, d));
        p.insert(LOG_TAU, Tensor::scalar(tau_init.ln() as f32));

        p.extend(crate::mapper::init_mapper(&arch, seed.wrapping_add(1)));
        Self {
            arch,
            vocab,
            params: p,
        }
    }

    pub fn view(&self) -> Encoders<'_, f32> {
        Encoders {
            arch: &self.arch,
            vocab: &self.vocab,
            params: &self.params,
        }
    }

    /// Freezes the vision encoder, text encoder, word embeddings and temperature.
    pub fn freeze_encoders(&mut self) {
        for prefix in [VISION, TEXT, EMBED, LOGIT] {
            self.params.freeze_prefix(prefix);
        }
    }

    pub fn encoders_frozen(&self) -> bool {
        self.params
            .names()
            .filter(|n| !n.starts_with(MAPPER))
            .all(|n| self.params.is_frozen(n))
    }

    pub fn tau(&self) -> f64 {
        (self.params.expect(LOG_TAU).data()[0] as f64).exp()
    }

    pub fn parse(&self, text: &str) -> Result<TokenSequence> {
        TokenSequence::parse(&self.vocab, text, self.arch.max_len)
    }
}

/// Borrowed view used for forward passes in either precision.
#[derive(Clone, Copy)]
pub struct Encoders<'a, T: Scalar> {
    pub arch: &'a Architecture,
    pub vocab: &'a Vocabulary,
    pub params: &'a ParamSet<T>,
}

/// Token embeddings of a padded batch: `batch * max_len` rows.
#[derive(Debug, Clone)]
pub struct Embedded {
    pub tokens: Var,
    pub batch: usize,
    pub lens: Vec<usize>,
}

impl<'a, T: Scalar> Encoders<'a, T> {
    pub fn new(arch: &'a Architecture, vocab: &'a Vocabulary, params: &'a ParamSet<T>) -> Self {
        Self {
            arch,
            vocab,
            params,
        }
    }

    pub fn p(&self, g: &mut Graph<T>, name: &str) -> Var {
        g.param(self.params, name)
    }

    /// Puts a batch of row vectors into the graph as a constant matrix.
    pub fn input_rows(&self, g: &mut Graph<T>, rows: &[&[f32]], dim: usize) -> Result<Var> {
        ensure!(!rows.is_empty(), "empty batch");
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            ensure!(r.len() == dim, "row has dimension {}, expected {dim}", r.len());
            data.extend(r.iter().map(|&x| T::of(x as f64)));
        }
        Ok(g.constant(rows.len(), dim, data))
    }

    /// Unnormalized image embedding: `B x world_dim -> B x d`.
    pub fn encode_image(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let (_, c) = g.shape(x);
        ensure!(
            c == self.arch.world_dim,
            "image has dimension {c}, expected {}",
            self.arch.world_dim
        );
        let (w1, b1) = (self.p(g, "vision.fc1.w"), self.p(g, "vision.fc1.b"));
        let (w2, b2) = (self.p(g, "vision.fc2.w"), self.p(g, "vision.fc2.b"));
        let h = g.linear(x, w1, Some(b1));
        let h = g.relu(h);
        Ok(g.linear(h, w2, Some(b2)))
    }

    /// Token embeddings for a batch, padded to `max_len`. Open pseudo slots take
    /// successive rows of `pseudo`; filled slots use their own vector. PAD rows
    /// are zero and the placeholder never touches the table.
    pub fn embed_tokens(
        &self,
        g: &mut Graph<T>,
        seqs: &[TokenSequence],
        pseudo: Option<Var>,
    ) -> Result<Embedded> {
        ensure!(!seqs.is_empty(), "empty text batch");
        let d = self.arch.embed_dim;
        let l = self.arch.max_len;
        let table_rows = self.vocab.table_rows();
        let supplied = match pseudo {
            Some(v) => {
                let (r, c) = g.shape(v);
                ensure!(c == d, "pseudo tokens have width {c}, expected {d}");
                r
            }
            None => 0,
        };
        let mut fixed: Vec<T> = Vec::new();
        let mut fixed_rows = 0usize;
        let mut idx = Vec::with_capacity(seqs.len() * l);
        let mut lens = Vec::with_capacity(seqs.len());
        let mut next_open = 0usize;

        // Source rows: [table | supplied pseudo rows | filled pseudo rows | zero].
        let mut slots = Vec::with_capacity(seqs.len() * l);
        for s in seqs {
            ensure!(s.len() <= l, "sequence of length {} exceeds {l}", s.len());
            lens.push(s.len());
            for e in s.elements() {
                match e {
                    Element::Token(t) => {
                        let t = *t as usize;
                        ensure!(t < table_rows, "token id {t} has no embedding row");
                        slots.push(Slot::Table(t));
                    }
                    Element::Pseudo(None) => {
                        if next_open >= supplied {
                            return Err(Error::MissingPseudoVector);
                        }
                        slots.push(Slot::Open(next_open));
                        next_open += 1;
                    }
                    Element::Pseudo(Some(v)) => {
                        ensure!(v.len() == d, "pseudo vector has width {}, expected {d}", v.len());
                        fixed.extend(v.iter().map(|&x| T::of(x as f64)));
                        slots.push(Slot::Fixed(fixed_rows));
                        fixed_rows += 1;
                    }
                }
            }
            slots.extend(std::iter::repeat_n(Slot::Pad, l - s.len()));
        }
        let fixed_base = table_rows + supplied;
        let zero_row = fixed_base + fixed_rows;
        for s in slots {
            idx.push(match s {
                Slot::Table(t) if t == PAD as usize => zero_row,
                Slot::Table(t) => t,
                Slot::Open(i) => table_rows + i,
                Slot::Fixed(i) => fixed_base + i,
                Slot::Pad => zero_row,
            });
        }

        let table = self.p(g, "embed.tokens");
        let mut parts = vec![table];
        if let Some(v) = pseudo {
            parts.push(v);
        }
        if fixed_rows > 0 {
            parts.push(g.constant(fixed_rows, d, fixed));
        }
        parts.push(g.constant(1, d, vec![T::zero(); d]));
        let source = g.concat_rows(&parts);
        let tokens = g.gather_rows(source, &idx);
        Ok(Embedded {
            tokens,
            batch: seqs.len(),
            lens,
        })
    }

    /// Text embedding read out at the EOS position: one self-attention block
    /// with key padding mask and a residual feed-forward layer.
    pub fn encode_embedded(&self, g: &mut Graph<T>, emb: &Embedded) -> Result<Var> {
        let d = self.arch.embed_dim;
        let l = self.arch.max_len;
        let b = emb.batch;
        ensure!(emb.lens.iter().all(|&n| n > 0), "sequence with no tokens");
        let positions: Vec<usize> = (0..b).flat_map(|_| 0..l).collect();
        let pos_table = self.p(g, "text.pos");
        let pos = g.gather_rows(pos_table, &positions);
        let x = g.add(emb.tokens, pos);

        let (wq, wk, wv, wo) = (
            self.p(g, "text.wq"),
            self.p(g, "text.wk"),
            self.p(g, "text.wv"),
            self.p(g, "text.wo"),
        );
        let eos_rows: Vec<usize> = emb
            .lens
            .iter()
            .enumerate()
            .map(|(i, &n)| i * l + n - 1)
            .collect();
        let x_eos = g.gather_rows(x, &eos_rows);
        // Pre-normalized sublayers: no single token can dominate by its length,
        // which matters once a pseudo token is spliced in.
        let gain = self.arch.norm_gain;
        let xn = g.l2_normalize_rows(x)?;
        let xn = g.scale(xn, gain);
        let xn_eos = g.gather_rows(xn, &eos_rows);
        let q = g.matmul(xn_eos, wq);
        let k = g.matmul(xn, wk);
        let v = g.matmul(xn, wv);

        let neg = T::of(-1e9);
        let mut mask = vec![neg; b * b * l];
        for (i, &n) in emb.lens.iter().enumerate() {
            let row = &mut mask[i * b * l..(i + 1) * b * l];
            row[i * l..i * l + n].iter_mut().for_each(|m| *m = T::zero());
        }
        let mask = g.constant(b, b * l, mask);

        let dh = d / self.arch.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut attn = None;
        for h in 0..self.arch.heads {
            let qh = g.slice_cols(q, h * dh, dh);
            let kh = g.slice_cols(k, h * dh, dh);
            let vh = g.slice_cols(v, h * dh, dh);
            let s = g.matmul_nt(qh, kh);
            let s = g.scale(s, scale);
            let s = g.add(s, mask);
            let a = g.softmax(s);
            let o = g.matmul(a, vh);
            let wo_h = g.slice_rows(wo, h * dh, dh);
            let o = g.matmul(o, wo_h);
            attn = Some(match attn {
                None => o,
                Some(acc) => g.add(acc, o),
            });
        }
        let bo = self.p(g, "text.bo");
        let attn = g.add(attn.expect("at least one head"), bo);
        let h1 = g.add(x_eos, attn);

        let (w1, b1) = (self.p(g, "text.ff1.w"), self.p(g, "text.ff1.b"));
        let (w2, b2) = (self.p(g, "text.ff2.w"), self.p(g, "text.ff2.b"));
        let h1n = g.l2_normalize_rows(h1)?;
        let h1n = g.scale(h1n, gain);
        let f = g.linear(h1n, w1, Some(b1));
        let f = g.relu(f);
        let f = g.linear(f, w2, Some(b2));
        let h2 = g.add(h1, f);
        let proj = self.p(g, "text.proj");
        Ok(g.matmul(h2, proj))
    }

    /// `embed_tokens` followed by `encode_embedded`.
    pub fn encode_text(
        &self,
        g: &mut Graph<T>,
        seqs: &[TokenSequence],
        pseudo: Option<Var>,
    ) -> Result<Var> {
        let emb = self.embed_tokens(g, seqs, pseudo)?;
        self.encode_embedded(g, &emb)
    }
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Table(usize),
    Open(usize),
    Fixed(usize),
    Pad,
}

/// Chunk size for inference-only batched encoding.
pub const INFERENCE_CHUNK: usize = 128;

impl EncoderBundle {
    /// Unnormalized image embeddings, row by row.
    pub fn image_embeddings(&self, images: &[&[f32]]) -> Result<Vec<Vec<f32>>> {
        let enc = self.view();
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(INFERENCE_CHUNK) {
            let mut g = Graph::inference();
            let x = enc.input_rows(&mut g, chunk, self.arch.world_dim)?;
            let v = enc.encode_image(&mut g, x)?;
            out.extend(g.value(v).chunks(self.arch.embed_dim).map(<[f32]>::to_vec));
        }
        Ok(out)
    }

    /// Unnormalized text embeddings, one per sequence. Sequences must have no
    /// open pseudo slots.
    pub fn text_embeddings(&self, seqs: &[TokenSequence]) -> Result<Vec<Vec<f32>>> {
        let enc = self.view();
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(INFERENCE_CHUNK) {
            let mut g = Graph::inference();
            let u = enc.encode_text(&mut g, chunk, None)?;
            out.extend(g.value(u).chunks(self.arch.embed_dim).map(<[f32]>::to_vec));
        }
        Ok(out)
    }
}
