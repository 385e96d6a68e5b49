//! Exact cosine top-k search, recall@k, late-fusion baselines and the
//! interpolation-weight sweep.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::EncoderBundle;
use crate::error::{ensure, Error, Result};

/// Scales `x` to unit length. Every query and index row goes through here,
/// so equal inputs always give bit-equal outputs.
pub fn unit_query(x: &[f32]) -> Result<Vec<f32>> {
    let n = x.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
    if !(n > 1e-12) {
        return Err(Error::DegenerateEmbedding { norm: n, context: None });
    }
    Ok(x.iter().map(|&v| (v as f64 / n) as f32).collect())
}

/// `w * t + (1 - w) * v`, renormalized.
pub fn interpolate(t: &[f32], v: &[f32], w: f64) -> Result<Vec<f32>> {
    ensure!((0.0..=1.0).contains(&w), "interpolation weight {w} outside [0, 1]");
    ensure!(t.len() == v.len(), "text and image widths differ");
    let (wt, wv) = (w as f32, (1.0 - w) as f32);
    let q: Vec<f32> = t.iter().zip(v).map(|(&a, &b)| wt * a + wv * b).collect();
    unit_query(&q)
}

pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).fold(0.0f32, |s, (&x, &y)| s + x * y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: u64,
    pub score: f32,
}

/// Descending score, then ascending id.
pub fn rank_order(a: &Hit, b: &Hit) -> Ordering {
    b.score.total_cmp(&a.score).then(a.id.cmp(&b.id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub hits: Vec<Hit>,
}

impl RankedResult {
    pub fn ids(&self) -> Vec<u64> {
        self.hits.iter().map(|h| h.id).collect()
    }
}

/// Unit-norm candidate embeddings with ids and per-candidate metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex<M> {
    ids: Vec<u64>,
    dim: usize,
    matrix: Vec<f32>,
    meta: Vec<M>,
    position: HashMap<u64, usize>,
}

impl<M> EmbeddingIndex<M> {
    /// Index over already-computed rows; each is normalized on the way in.
    pub fn from_rows(ids: Vec<u64>, rows: &[Vec<f32>], meta: Vec<M>) -> Result<Self> {
        ensure!(!rows.is_empty(), "cannot index an empty set");
        ensure!(
            ids.len() == rows.len() && meta.len() == rows.len(),
            "{} ids and {} metadata entries for {} rows",
            ids.len(),
            meta.len(),
            rows.len()
        );
        let dim = rows[0].len();
        let mut matrix = Vec::with_capacity(rows.len() * dim);
        for (id, r) in ids.iter().zip(rows) {
            ensure!(r.len() == dim, "candidate {id} has width {}, expected {dim}", r.len());
            matrix.extend(unit_query(r).map_err(|e| e.with_context(format!("candidate {id}")))?);
        }
        let mut position = HashMap::with_capacity(ids.len());
        for (i, &id) in ids.iter().enumerate() {
            ensure!(position.insert(id, i).is_none(), "duplicate candidate id {id}");
        }
        Ok(Self {
            ids,
            dim,
            matrix,
            meta,
            position,
        })
    }

    /// Index of `l2_normalize(encode_image(x))` for each image.
    pub fn build(
        bundle: &EncoderBundle,
        images: &[&[f32]],
        ids: Vec<u64>,
        meta: Vec<M>,
    ) -> Result<Self> {
        ensure!(!images.is_empty(), "cannot index an empty set");
        let rows = bundle.image_embeddings(images)?;
        Self::from_rows(ids, &rows, meta)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn meta(&self) -> &[M] {
        &self.meta
    }

    pub fn matrix(&self) -> &[f32] {
        &self.matrix
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: u64) -> Option<usize> {
        self.position.get(&id).copied()
    }

    pub fn meta_of(&self, id: u64) -> Option<&M> {
        self.position(id).map(|i| &self.meta[i])
    }

    /// Cosine similarity of `q` against every row, in index order.
    pub fn scores(&self, q: &[f32]) -> Vec<f32> {
        self.matrix.chunks(self.dim).map(|r| dot(q, r)).collect()
    }

    /// Exact top-k with ties broken by ascending id.
    pub fn topk(&self, q: &[f32], k: usize) -> Result<RankedResult> {
        ensure!(
            k >= 1 && k <= self.len(),
            "k = {k} must lie in 1..={}",
            self.len()
        );
        ensure!(q.len() == self.dim, "query width {} against index width {}", q.len(), self.dim);
        let mut hits: Vec<Hit> = self
            .scores(q)
            .into_iter()
            .zip(&self.ids)
            .map(|(score, &id)| Hit { id, score })
            .collect();
        if k < hits.len() {
            hits.select_nth_unstable_by(k - 1, rank_order);
            hits.truncate(k);
        }
        hits.sort_unstable_by(rank_order);
        Ok(RankedResult { hits })
    }

    /// `topk` for many queries, in parallel, results in query order.
    pub fn search_all(&self, queries: &[Vec<f32>], k: usize) -> Result<Vec<RankedResult>>
    where
        M: Sync,
    {
        eval_pool().install(|| queries.par_iter().map(|q| self.topk(q, k)).collect())
    }
}

/// Thread pool for evaluation, sized by `P2W_THREADS` when set.
pub fn eval_pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let n = std::env::var("P2W_THREADS")
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&n| n > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("evaluation thread pool")
    })
}

/// Fraction of queries with a valid target among their first `k` hits.
/// `is_target(q, meta)` is the ground truth; every query must have at least
/// one target somewhere in the index.
pub fn recall_at_k<M>(
    index: &EmbeddingIndex<M>,
    results: &[RankedResult],
    k: usize,
    is_target: impl Fn(usize, &M) -> bool,
) -> Result<f64> {
    ensure!(!results.is_empty(), "no queries");
    let mut hits = 0usize;
    for (q, r) in results.iter().enumerate() {
        ensure!(r.hits.len() >= k, "query {q} has {} results, need {k}", r.hits.len());
        ensure!(
            index.meta().iter().any(|m| is_target(q, m)),
            "query {q} has no valid target in the pool"
        );
        let found = r.hits[..k].iter().any(|h| {
            let m = index.meta_of(h.id).expect("hit id comes from the index");
            is_target(q, m)
        });
        hits += found as usize;
    }
    Ok(hits as f64 / results.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recalls {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
}

impl Recalls {
    pub fn get(&self, k: usize) -> f64 {
        match k {
            1 => self.r1,
            5 => self.r5,
            10 => self.r10,
            _ => panic!("recall is tracked at 1, 5 and 10 only"),
        }
    }
}

/// R@1, R@5 and R@10 for one method on one task.
pub fn recalls<M: Sync>(
    index: &EmbeddingIndex<M>,
    queries: &[Vec<f32>],
    is_target: impl Fn(usize, &M) -> bool,
) -> Result<(Recalls, Vec<RankedResult>)> {
    let k = 10.min(index.len());
    let results = index.search_all(queries, k)?;
    let r = |kk: usize| recall_at_k(index, &results, kk.min(k), &is_target);
    Ok((
        Recalls {
            r1: r(1)?,
            r5: r(5)?,
            r10: r(10)?,
        },
        results,
    ))
}

/// Image-only baseline query: `v` itself.
pub fn image_only_queries(v: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
    v.iter().map(|x| unit_query(x)).collect()
}

/// Text-only baseline query: the text embedding.
pub fn text_only_queries(t: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
    t.iter().map(|x| unit_query(x)).collect()
}

/// Average baseline: `w t + (1 - w) v` for normalized `t` and `v`.
pub fn average_queries(t: &[Vec<f32>], v: &[Vec<f32>], w: f64) -> Result<Vec<Vec<f32>>> {
    ensure!(t.len() == v.len(), "{} text and {} image queries", t.len(), v.len());
    t.iter()
        .zip(v)
        .map(|(a, b)| interpolate(&unit_query(a)?, &unit_query(b)?, w))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub w: f64,
    pub recall: Recalls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSweep {
    pub rows: Vec<SweepRow>,
}

impl WeightSweep {
    /// Row with the best R@`k`; the lowest `w` wins ties.
    pub fn best(&self, k: usize) -> &SweepRow {
        self.rows
            .iter()
            .fold(None::<&SweepRow>, |best, r| match best {
                Some(b) if b.recall.get(k) >= r.recall.get(k) => Some(b),
                _ => Some(r),
            })
            .expect("sweep has rows")
    }
}

/// `{0, 1/n, ..., 1}`.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    (0..=n).map(|i| i as f64 / n as f64).collect()
}

pub fn weight_sweep<M: Sync>(
    index: &EmbeddingIndex<M>,
    t: &[Vec<f32>],
    v: &[Vec<f32>],
    grid: &[f64],
    is_target: impl Fn(usize, &M) -> bool,
) -> Result<WeightSweep> {
    ensure!(
        grid.contains(&0.0) && grid.contains(&1.0),
        "sweep grid must contain both endpoints"
    );
    let mut seen = HashSet::new();
    let mut rows = Vec::with_capacity(grid.len());
    for &w in grid {
        ensure!(seen.insert(w.to_bits()), "weight {w} repeated in grid");
        let q = average_queries(t, v, w)?;
        let (recall, _) = recalls(index, &q, &is_target)?;
        rows.push(SweepRow { w, recall });
    }
    Ok(WeightSweep { rows })
}
