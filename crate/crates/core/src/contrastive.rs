//! Symmetric contrastive loss and the shared training loop.

use std::collections::BTreeMap;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{backward_into, AdamWConfig, AdamWState, Graph, Scalar, Var};
use crate::encoders::{EncoderBundle, Encoders, TokenSequence, LOG_TAU};
use crate::error::{ensure, Result};

/// Tolerance on row norms accepted by [`similarity_matrix`].
const UNIT_TOL: f64 = 1e-4;

fn check_unit_rows<T: Scalar>(g: &Graph<T>, x: Var, what: &str) -> Result<()> {
    let (_, c) = g.shape(x);
    for (i, row) in g.value(x).chunks(c).enumerate() {
        let n = row.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
        ensure!((n - 1.0).abs() <= UNIT_TOL, "{what} row {i} has norm {n}, expected 1");
    }
    Ok(())
}

/// `S = U V^T` for unit-norm rows; rows index texts, columns index images.
pub fn similarity_matrix<T: Scalar>(g: &mut Graph<T>, u: Var, v: Var) -> Result<Var> {
    check_unit_rows(g, u, "text")?;
    check_unit_rows(g, v, "image")?;
    let (bu, du) = g.shape(u);
    let (bv, dv) = g.shape(v);
    ensure!(du == dv, "embedding widths differ: {du} vs {dv}");
    ensure!(bu == bv, "batch sizes differ: {bu} vs {bv}");
    Ok(g.matmul_nt(u, v))
}

fn identity<T: Scalar>(g: &mut Graph<T>, b: usize) -> Var {
    let mut eye = vec![T::zero(); b * b];
    (0..b).for_each(|i| eye[i * b + i] = T::one());
    g.constant(b, b, eye)
}

fn square_batch<T: Scalar>(g: &Graph<T>, s: Var) -> Result<usize> {
    let (r, c) = g.shape(s);
    ensure!(r == c, "similarity matrix is {r}x{c}, expected square");
    ensure!(r >= 2, "contrastive loss needs a batch of at least 2, got {r}");
    Ok(r)
}

/// Text-to-image term: each row of `tau * S` is a softmax over images.
pub fn loss_t2i<T: Scalar>(g: &mut Graph<T>, s: Var, tau: Var) -> Result<Var> {
    let b = square_batch(g, s)?;
    let z = g.mul(s, tau);
    let max: Vec<T> = g
        .value(z)
        .chunks(b)
        .map(|r| r.iter().fold(T::neg_infinity(), |m, &x| m.max(x)))
        .collect();
    let max = g.constant(b, 1, max);
    let z = g.sub(z, max);
    let e = g.exp(z);
    let lse = g.sum_rows(e);
    let lse = g.log(lse);
    let eye = identity(g, b);
    let diag = g.mul(z, eye);
    let diag = g.sum_rows(diag);
    let per_row = g.sub(lse, diag);
    let mean = g.mean_rows(per_row);
    Ok(mean)
}

/// Image-to-text term: the same loss taken down the columns of `tau * S`.
pub fn loss_i2t<T: Scalar>(g: &mut Graph<T>, s: Var, tau: Var) -> Result<Var> {
    let b = square_batch(g, s)?;
    let z = g.mul(s, tau);
    let mut max = vec![T::neg_infinity(); b];
    for row in g.value(z).chunks(b) {
        for (m, &x) in max.iter_mut().zip(row) {
            *m = m.max(x);
        }
    }
    let max = g.constant(1, b, max);
    let z = g.sub(z, max);
    let e = g.exp(z);
    let col_sum = g.mean_rows(e);
    let col_sum = g.scale(col_sum, b as f64);
    let lse = g.log(col_sum);
    let eye = identity(g, b);
    let diag = g.mul(z, eye);
    let diag = g.mean_rows(diag);
    let diag = g.scale(diag, b as f64);
    let per_col = g.sub(lse, diag);
    let per_col = g.sum_rows(per_col);
    Ok(g.scale(per_col, 1.0 / b as f64))
}

/// Both terms of the symmetric loss and their sum.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub t2i: Var,
    pub i2t: Var,
    pub total: Var,
}

/// Symmetric loss over already-normalized text rows `u` and image rows `v`.
pub fn symmetric_loss<T: Scalar>(g: &mut Graph<T>, u: Var, v: Var, tau: Var) -> Result<LossParts> {
    let s = similarity_matrix(g, u, v)?;
    let t2i = loss_t2i(g, s, tau)?;
    let i2t = loss_i2t(g, s, tau)?;
    let total = g.add(t2i, i2t);
    Ok(LossParts { t2i, i2t, total })
}

/// `tau = exp(log_tau)` as a graph node.
pub fn temperature<T: Scalar>(enc: &Encoders<'_, T>, g: &mut Graph<T>) -> Var {
    let lt = enc.p(g, LOG_TAU);
    g.exp(lt)
}

/// Contrastive loss of an image/caption batch through both encoders.
pub fn clip_loss<T: Scalar>(
    enc: &Encoders<'_, T>,
    g: &mut Graph<T>,
    images: &[&[f32]],
    captions: &[TokenSequence],
) -> Result<LossParts> {
    ensure!(
        images.len() == captions.len(),
        "{} images paired with {} captions",
        images.len(),
        captions.len()
    );
    let x = enc.input_rows(g, images, enc.arch.world_dim)?;
    let v = enc.encode_image(g, x)?;
    let v = g.l2_normalize_rows(v)?;
    let u = enc.encode_text(g, captions, None)?;
    let u = g.l2_normalize_rows(u)?;
    let tau = temperature(enc, g);
    symmetric_loss(g, u, v, tau)
}

/// Closed-form check helper: both loss terms for a given similarity matrix.
pub fn loss_values(s: &[f64], b: usize, tau: f64) -> Result<(f64, f64)> {
    ensure!(s.len() == b * b, "similarity matrix has {} entries, expected {}", s.len(), b * b);
    let mut g = Graph::<f64>::inference();
    let s = g.constant(b, b, s.to_vec());
    let t = g.scalar(tau);
    let a = loss_t2i(&mut g, s, t)?;
    let c = loss_i2t(&mut g, s, t)?;
    Ok((g.scalar_value(a), g.scalar_value(c)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: AdamWConfig,
    pub seed: u64,
    /// Upper clamp on the temperature while it is trainable.
    pub tau_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub step0_loss: f64,
    pub steps: usize,
    pub epochs: Vec<EpochLog>,
}

/// Seeded shuffled minibatches; the last partial batch is dropped.
pub(crate) fn epoch_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks_exact(batch).map(<[usize]>::to_vec).collect()
}

/// Generic minibatch loop: `loss` builds the graph for one batch, `eval`
/// computes the per-epoch metrics.
pub(crate) fn train_loop<L, E>(
    bundle: &mut EncoderBundle,
    n: usize,
    cfg: &TrainConfig,
    mut loss: L,
    mut eval: E,
) -> Result<TrainLog>
where
    L: FnMut(&EncoderBundle, &[usize]) -> Result<(Graph<f32>, Var)>,
    E: FnMut(&EncoderBundle) -> Result<BTreeMap<String, f64>>,
{
    ensure!(n > 0, "empty training set");
    ensure!(cfg.batch_size >= 2, "batch size must be at least 2");
    ensure!(
        n >= cfg.batch_size,
        "training set of {n} is smaller than one batch of {}",
        cfg.batch_size
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamWState::new(&bundle.params, cfg.optim);
    let tau_cap = cfg.tau_max.ln() as f32;
    let mut log = TrainLog::default();
    for epoch in 1..=cfg.epochs {
        let mut sum = 0.0;
        let batches = epoch_batches(n, cfg.batch_size, &mut rng);
        for idx in &batches {
            let (mut g, l) = loss(bundle, idx)?;
            let value = g.scalar_value(l) as f64;
            ensure!(value.is_finite(), "loss became non-finite at step {}", log.steps);
            if log.steps == 0 {
                log.step0_loss = value;
                info!("step 0 loss {value:.4}");
            }
            sum += value;
            backward_into(&mut g, l, &mut bundle.params);
            drop(g);
            opt.step(&mut bundle.params);
            if !bundle.params.is_frozen(LOG_TAU) {
                let t = bundle.params.get_mut(LOG_TAU).expect("temperature parameter");
                let lt = &mut t.data_mut()[0];
                *lt = lt.min(tau_cap);
            }
            log.steps += 1;
        }
        let metrics = eval(bundle)?;
        let loss = sum / batches.len() as f64;
        info!("epoch {epoch} loss {loss:.4} {metrics:?}");
        log.epochs.push(EpochLog { epoch, loss, metrics });
    }
    Ok(log)
}

/// Image/caption pairs for pretraining.
pub struct PairSet<'a> {
    pub images: Vec<&'a [f32]>,
    pub captions: Vec<TokenSequence>,
}

/// Trains vision, text, embedding table and temperature, then freezes them.
/// `validate` is called after every epoch and its value is logged as `val_r1`.
pub fn train_clip(
    bundle: &mut EncoderBundle,
    data: &PairSet<'_>,
    cfg: &TrainConfig,
    mut validate: impl FnMut(&EncoderBundle) -> Result<f64>,
) -> Result<TrainLog> {
    ensure!(
        data.images.len() == data.captions.len(),
        "{} images paired with {} captions",
        data.images.len(),
        data.captions.len()
    );
    bundle.params.freeze_prefix(crate::encoders::MAPPER);
    let log = train_loop(
        bundle,
        data.images.len(),
        cfg,
        |b, idx| {
            let images: Vec<&[f32]> = idx.iter().map(|&i| data.images[i]).collect();
            let caps: Vec<TokenSequence> = idx.iter().map(|&i| data.captions[i].clone()).collect();
            let mut g = Graph::new();
            let parts = clip_loss(&b.view(), &mut g, &images, &caps)?;
            Ok((g, parts.total))
        },
        |b| {
            let r1 = validate(b)?;
            Ok(BTreeMap::from([("val_r1".to_string(), r1)]))
        },
    )?;
    bundle.params.unfreeze_prefix(crate::encoders::MAPPER);
    bundle.freeze_encoders();
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn identity_similarity() {
        let mut g = Graph::<f64>::inference();
        let u = g.constant(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let s = similarity_matrix(&mut g, u, u).unwrap();
        assert_eq!(g.value(s), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn hand_dot_product() {
        let mut g = Graph::<f64>::inference();
        let u = g.constant(1, 2, vec![0.6, 0.8]);
        let v = g.constant(1, 2, vec![0.8, 0.6]);
        let s = similarity_matrix(&mut g, u, v).unwrap();
        close(g.value(s)[0], 0.96, 1e-12);
    }

    #[test]
    fn unnormalized_rows_rejected() {
        let mut g = Graph::<f64>::inference();
        let u = g.constant(1, 2, vec![3.0, 4.0]);
        assert!(similarity_matrix(&mut g, u, u).is_err());
    }

    #[test]
    fn uniform_gives_log_b() {
        for b in [2usize, 4, 8] {
            let (t, i) = loss_values(&vec![0.3; b * b], b, 7.0).unwrap();
            close(t, (b as f64).ln(), 1e-12);
            close(i, (b as f64).ln(), 1e-12);
        }
    }

    #[test]
    fn two_by_two_identity() {
        let (t, i) = loss_values(&[1.0, 0.0, 0.0, 1.0], 2, 1.0).unwrap();
        let want = (1.0 + (-1.0f64).exp()).ln();
        close(t, want, 1e-12);
        close(i, want, 1e-12);
        close(want, 0.313262, 1e-6);
    }

    #[test]
    fn transpose_swaps_terms() {
        let s = [0.9, -0.2, 0.4, 0.1, 0.5, -0.7, 0.3, 0.2, 0.8];
        let st: Vec<f64> = (0..9).map(|k| s[(k % 3) * 3 + k / 3]).collect();
        let (a, b) = loss_values(&s, 3, 4.0).unwrap();
        let (c, d) = loss_values(&st, 3, 4.0).unwrap();
        close(a, d, 1e-12);
        close(b, c, 1e-12);
    }

    #[test]
    fn large_tau_dominant_diagonal_goes_to_zero() {
        let (t, i) = loss_values(&[1.0, -1.0, -1.0, 1.0], 2, 100.0).unwrap();
        assert!(t < 1e-60 && i < 1e-60);
    }

    #[test]
    fn adversarial_values_stay_finite_in_f32() {
        let mut g = Graph::<f32>::inference();
        let s = g.constant(3, 3, vec![1.0, -1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, 1.0]);
        let t = g.scalar(100.0);
        let a = loss_t2i(&mut g, s, t).unwrap();
        let b = loss_i2t(&mut g, s, t).unwrap();
        assert!(g.scalar_value(a).is_finite() && g.scalar_value(b).is_finite());
    }

    #[test]
    fn batch_of_one_rejected() {
        assert!(loss_values(&[1.0], 1, 1.0).is_err());
    }

    #[test]
    fn batches_drop_the_remainder() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = epoch_batches(10, 4, &mut rng);
        assert_eq!(b.len(), 2);
        assert!(b.iter().all(|x| x.len() == 4));
    }
}
