//! Central finite-difference checking of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{backward_into, Graph, ParamSet, Var};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `name[index]` of the coordinate with the largest error.
    pub worst: Option<String>,
    pub failures: Vec<String>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Number of coordinates sampled across all entries; `None` checks all.
    pub samples: Option<usize>,
    pub seed: u64,
    /// Gradients smaller than this are compared absolutely.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            samples: None,
            seed: 0,
            floor: 1e-6,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the analytic gradient of `loss_fn` with central differences for
/// every entry of `params` (inputs included, if they were put there).
pub fn grad_check<F>(params: &ParamSet<f64>, loss_fn: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamSet<f64>) -> Result<Var>,
{
    let mut analytic = params.clone();
    analytic.zero_grads();
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, &analytic)?;
    backward_into(&mut g, loss, &mut analytic);

    let coords: Vec<(String, usize)> = params
        .iter()
        .flat_map(|(n, t)| (0..t.len()).map(move |i| (n.to_string(), i)))
        .collect();
    let chosen: Vec<usize> = match opts.samples {
        Some(k) if k < coords.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut idx = sample(&mut rng, coords.len(), k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..coords.len()).collect(),
    };

    let eval = |set: &ParamSet<f64>| -> Result<f64> {
        let mut g = Graph::inference();
        let l = loss_fn(&mut g, set)?;
        Ok(g.scalar_value(l))
    };

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
        failures: Vec::new(),
        tolerance: opts.tolerance,
    };
    let mut probe = params.clone();
    for ci in chosen {
        let (name, i) = &coords[ci];
        let a = analytic
            .get(name)
            .and_then(|t| t.grad())
            .map_or(0.0, |g| g[*i]);
        let orig = probe.expect(name).data()[*i];
        probe.get_mut(name).unwrap().data_mut()[*i] = orig + opts.step;
        let up = eval(&probe)?;
        probe.get_mut(name).unwrap().data_mut()[*i] = orig - opts.step;
        let down = eval(&probe)?;
        probe.get_mut(name).unwrap().data_mut()[*i] = orig;
        let n = (up - down) / (2.0 * opts.step);
        let err = relative_error(a, n, opts.floor);
        report.checked += 1;
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst = Some(format!("{name}[{i}]"));
        }
        if err > opts.tolerance {
            report
                .failures
                .push(format!("{name}[{i}]: analytic {a:e} numeric {n:e} rel {err:e}"));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::Rng;

    fn random(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn linear_layer_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ParamSet::new();
        p.insert("x", random(&mut rng, vec![4, 3]));
        p.insert("w", random(&mut rng, vec![3, 5]));
        p.insert("b", random(&mut rng, vec![5]));
        p.insert("c", random(&mut rng, vec![4, 5]));
        let rep = grad_check(
            &p,
            |g, p| {
                let (x, w, b, c) = (g.param(p, "x"), g.param(p, "w"), g.param(p, "b"), g.param(p, "c"));
                let y = g.linear(x, w, Some(b));
                let z = g.mul(y, c);
                Ok(g.sum_all(z))
            },
            GradCheckOptions {
                tolerance: 1e-7,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(rep.passed(), "{:?}", rep.failures);
        assert!(rep.max_rel_err <= 1e-7);
    }

    #[test]
    fn three_layer_relu_net() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ParamSet::new();
        p.insert("x", random(&mut rng, vec![5, 6]));
        for (i, (a, b)) in [(6, 8), (8, 8), (8, 3)].into_iter().enumerate() {
            p.insert(format!("w{i}"), random(&mut rng, vec![a, b]));
            p.insert(format!("b{i}"), random(&mut rng, vec![b]));
        }
        let rep = grad_check(
            &p,
            |g, p| {
                let mut h = g.param(p, "x");
                for i in 0..3 {
                    let w = g.param(p, &format!("w{i}"));
                    let b = g.param(p, &format!("b{i}"));
                    h = g.linear(h, w, Some(b));
                    if i < 2 {
                        h = g.relu(h);
                    }
                }
                let sq = g.mul(h, h);
                Ok(g.sum_all(sq))
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(rep.passed(), "{:?}", rep.failures);
    }

    #[test]
    fn softmax_log_composite() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ParamSet::new();
        p.insert("z", random(&mut rng, vec![4, 6]));
        p.insert("c", random(&mut rng, vec![4, 6]));
        let rep = grad_check(
            &p,
            |g, p| {
                let z = g.param(p, "z");
                let c = g.param(p, "c");
                let s = g.softmax(z);
                let l = g.log(s);
                let m = g.mul(l, c);
                Ok(g.sum_all(m))
            },
            GradCheckOptions {
                tolerance: 1e-5,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(rep.passed(), "{:?}", rep.failures);
    }

    #[test]
    fn every_primitive_at_many_points() {
        // Exercises exp, l2-normalize, concat, slices, mean-pool, gather and
        // the transposed matmul in one scalar.
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mut p = ParamSet::new();
            p.insert("a", random(&mut rng, vec![3, 4]));
            p.insert("b", random(&mut rng, vec![2, 4]));
            p.insert("r", random(&mut rng, vec![4]));
            let rep = grad_check(
                &p,
                |g, p| {
                    let a = g.param(p, "a");
                    let b = g.param(p, "b");
                    let r = g.param(p, "r");
                    let cat = g.concat_rows(&[a, b]);
                    let n = g.l2_normalize_rows(cat)?;
                    let s = g.matmul_nt(n, cat);
                    let e = g.exp(s);
                    let rows = g.gather_rows(e, &[4, 0, 0, 2]);
                    let cols = g.slice_cols(rows, 1, 3);
                    let top = g.slice_rows(cols, 1, 3);
                    let pooled = g.mean_rows(top);
                    let rr = g.slice_cols(r, 0, 3);
                    let w = g.add(pooled, rr);
                    let sums = g.sum_rows(w);
                    let l = g.log(sums);
                    Ok(g.sum_all(l))
                },
                GradCheckOptions {
                    seed,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(rep.passed(), "seed {seed}: {:?}", rep.failures);
        }
    }
}
