#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// A tree over a single covariate with distinct sorted values, described by
/// its leaf intervals of row ranks.
#[derive(Clone, Debug)]
pub struct EnumTree {
    pub log_prior: f64,
    pub leaves: Vec<(usize, usize)>,
    pub depth: u32,
}

/// Every tree reachable under the minimum-node-size rule, with its structural
/// log prior computed directly from the split-probability recursion.
pub fn enumerate_trees(n: usize, min_node: usize, alpha: f64, beta: f64) -> Vec<EnumTree> {
    fn rec(a: usize, b: usize, depth: u32, ms: usize, alpha: f64, beta: f64) -> Vec<EnumTree> {
        let size = b - a;
        let psplit = alpha * (1.0 + depth as f64).powf(-beta);
        let ncuts = if size >= 2 * ms { size - 2 * ms + 1 } else { 0 };
        let mut out = vec![EnumTree {
            log_prior: if ncuts > 0 { (1.0 - psplit).ln() } else { 0.0 },
            leaves: vec![(a, b)],
            depth,
        }];
        if ncuts == 0 {
            return out;
        }
        for c in a + ms..=b - ms {
            let left = rec(a, c, depth + 1, ms, alpha, beta);
            let right = rec(c, b, depth + 1, ms, alpha, beta);
            for l in &left {
                for r in &right {
                    let mut leaves = l.leaves.clone();
                    leaves.extend_from_slice(&r.leaves);
                    out.push(EnumTree {
                        log_prior: psplit.ln() - (ncuts as f64).ln() + l.log_prior + r.log_prior,
                        leaves,
                        depth: l.depth.max(r.depth),
                    });
                }
            }
        }
        out
    }
    rec(0, n, 0, min_node, alpha, beta)
}

fn incidence(n: usize, leaves: &[(usize, usize)]) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, leaves.len());
    for (j, &(lo, hi)) in leaves.iter().enumerate() {
        for i in lo..hi {
            a[(i, j)] = 1.0;
        }
    }
    a
}

/// Exact posterior of a two-tree ensemble on a single covariate with the
/// terminal means integrated out, `y ~ N(0, s2 I + t2 (A1 A1' + A2 A2'))`.
/// Returns the posterior over the depth of the first tree and the posterior
/// mean of the fitted function at each row.
pub fn two_tree_posterior(y: &[f64], trees: &[EnumTree], s2: f64, t2: f64) -> (Vec<f64>, Vec<f64>) {
    let n = y.len();
    let yv = DVector::from_column_slice(y);
    let grams: Vec<DMatrix<f64>> = trees
        .iter()
        .map(|t| {
            let a = incidence(n, &t.leaves);
            &a * a.transpose()
        })
        .collect();
    let max_depth = trees.iter().map(|t| t.depth).max().unwrap() as usize;
    let mut terms: Vec<(usize, f64, DVector<f64>)> = Vec::with_capacity(trees.len() * trees.len());
    for (i, t1) in trees.iter().enumerate() {
        for (j, t2_) in trees.iter().enumerate() {
            let k = (&grams[i] + &grams[j]) * t2;
            let cov = DMatrix::identity(n, n) * s2 + &k;
            let chol = cov.cholesky().expect("positive definite");
            let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let alpha = chol.solve(&yv);
            let quad = yv.dot(&alpha);
            terms.push((t1.depth as usize, t1.log_prior + t2_.log_prior - 0.5 * (logdet + quad), k * alpha));
        }
    }
    let top = terms.iter().map(|l| l.1).fold(f64::NEG_INFINITY, f64::max);
    let mut probs = vec![0.0; max_depth + 1];
    let mut mean = DVector::zeros(n);
    for (d, l, f) in terms {
        let w = (l - top).exp();
        probs[d] += w;
        mean += f * w;
    }
    let total: f64 = probs.iter().sum();
    (
        probs.iter().map(|p| p / total).collect(),
        mean.iter().map(|v| v / total).collect(),
    )
}

/// Pearson goodness-of-fit p-value, pooling trailing cells until each has an
/// expected count of at least 5.
pub fn chi_square_p(observed: &[usize], probs: &[f64]) -> f64 {
    let total: usize = observed.iter().sum();
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (&ob, &p) in observed.iter().zip(probs) {
        o += ob as f64;
        e += p * total as f64;
        if e >= 5.0 {
            cells.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += o;
                last.1 += e;
            }
            None => cells.push((o, e)),
        }
    }
    let stat: f64 = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let df = cells.len() as f64 - 1.0;
    if df < 1.0 {
        return 1.0;
    }
    1.0 - ChiSquared::new(df).unwrap().cdf(stat)
}
