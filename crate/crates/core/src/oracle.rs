//! Reference implementations used to verify the optimized code paths.
//!
//! Everything here is written from the definitions with plain loops and does
//! not call into the tape, the loss module or the k-NN evaluator. The test
//! suites and the `selftest` command compare the main implementations
//! against these.

use crate::error::Result;
use crate::tensor::Tensor;

/// Agreement check used by every gradient test: relative error
/// `|a-b| / max(|a|,|b|)` at most `rel`, or absolute error at most `abs_floor`.
pub fn grad_close(analytic: f64, numeric: f64, rel: f64, abs_floor: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= abs_floor || diff <= rel * analytic.abs().max(numeric.abs())
}

#[derive(Clone, Debug)]
pub struct GradMismatch {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Central finite differences `(f(θ+h) - f(θ-h)) / 2h` for every element of
/// every parameter tensor.
pub fn finite_difference_grads(
    params: &[Tensor],
    h: f64,
    mut f: impl FnMut(&[Tensor]) -> Result<f64>,
) -> Result<Vec<Tensor>> {
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut g = Tensor::zeros(params[p].shape());
        for i in 0..params[p].numel() {
            let orig = params[p].data()[i];
            work[p].data_mut()[i] = orig + h;
            let up = f(&work)?;
            work[p].data_mut()[i] = orig - h;
            let down = f(&work)?;
            work[p].data_mut()[i] = orig;
            g.data_mut()[i] = (up - down) / (2.0 * h);
        }
        out.push(g);
    }
    Ok(out)
}

/// Compares analytic gradients with finite differences and returns every
/// element that disagrees.
pub fn compare_grads(
    analytic: &[Tensor],
    numeric: &[Tensor],
    rel: f64,
    abs_floor: f64,
) -> Vec<GradMismatch> {
    let mut bad = Vec::new();
    for (p, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        for (i, (&av, &nv)) in a.data().iter().zip(n.data()).enumerate() {
            if !grad_close(av, nv, rel, abs_floor) {
                bad.push(GradMismatch {
                    param: p,
                    index: i,
                    analytic: av,
                    numeric: nv,
                });
            }
        }
    }
    bad
}

/// Batch centering and population scaling with no epsilon, using a two-pass
/// per-column loop.
pub fn normalize_columns(z: &Tensor) -> Tensor {
    let (n, d) = (z.rows(), z.cols());
    let mut out = z.clone();
    for j in 0..d {
        let mut mean = 0.0;
        for i in 0..n {
            mean += z.get2(i, j);
        }
        mean /= n as f64;
        let mut var = 0.0;
        for i in 0..n {
            let c = z.get2(i, j) - mean;
            var += c * c;
        }
        let std = (var / n as f64).sqrt();
        for i in 0..n {
            out.data_mut()[i * d + j] = (z.get2(i, j) - mean) / std;
        }
    }
    out
}

/// Cross-correlation written entry by entry as the cosine between column
/// `i` of `za` and column `j` of `zb` over the batch:
/// `C_ij = Σ_b a_bi b_bj / sqrt(Σ_b a_bi² · Σ_b b_bj²)`.
///
/// On batch-normalized inputs this coincides with `za^T zb / N`.
pub fn cross_correlation_loops(za: &Tensor, zb: &Tensor) -> Tensor {
    let (n, d) = (za.rows(), za.cols());
    let mut c = Tensor::zeros(&[d, d]);
    for i in 0..d {
        for j in 0..d {
            let mut num = 0.0;
            let mut sa = 0.0;
            let mut sb = 0.0;
            for b in 0..n {
                let a = za.get2(b, i);
                let bb = zb.get2(b, j);
                num += a * bb;
                sa += a * a;
                sb += bb * bb;
            }
            c.data_mut()[i * d + j] = num / (sa * sb).sqrt();
        }
    }
    c
}

/// `Σ_b x_bi y_bj / N`, the plain batch average of outer products.
pub fn batch_outer_mean(x: &Tensor, y: &Tensor) -> Tensor {
    let (n, d) = (x.rows(), x.cols());
    let mut c = Tensor::zeros(&[d, d]);
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for b in 0..n {
                s += x.get2(b, i) * y.get2(b, j);
            }
            c.data_mut()[i * d + j] = s / n as f64;
        }
    }
    c
}

/// Ground-truth correlations by materializing the interpolated embeddings
/// `Z^M = λ·za + (1-λ)·zb[perm]` and correlating them with each view.
pub fn ground_truth_materialized(
    za: &Tensor,
    zb: &Tensor,
    lambda: f64,
    perm: &[usize],
) -> (Tensor, Tensor) {
    let (n, d) = (za.rows(), za.cols());
    let mut zm = Tensor::zeros(&[n, d]);
    for b in 0..n {
        for j in 0..d {
            zm.data_mut()[b * d + j] = lambda * za.get2(b, j) + (1.0 - lambda) * zb.get2(perm[b], j);
        }
    }
    (batch_outer_mean(&zm, za), batch_outer_mean(&zm, zb))
}

/// Barlow Twins terms from a correlation matrix by direct summation:
/// `(Σ_i (1-C_ii)², Σ_{i≠j} C_ij²)`.
pub fn barlow_terms_loops(c: &Tensor) -> (f64, f64) {
    let d = c.rows();
    let mut inv = 0.0;
    let mut red = 0.0;
    for i in 0..d {
        for j in 0..d {
            let v = c.get2(i, j);
            if i == j {
                inv += (1.0 - v) * (1.0 - v);
            } else {
                red += v * v;
            }
        }
    }
    (inv, red)
}

/// Exhaustive similarity-weighted k-NN. For every query, cosine similarity
/// to every bank row is computed, the bank is fully sorted by (similarity
/// descending, index ascending), the first `k` rows vote with weight
/// `exp(sim / temperature)` (or 1 when `temperature` is `None`), and the
/// lowest class index wins ties.
pub fn knn_brute_force(
    bank: &Tensor,
    bank_labels: &[usize],
    queries: &Tensor,
    class_count: usize,
    k: usize,
    temperature: Option<f64>,
) -> Vec<usize> {
    let unit = |row: &[f64]| {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        row.iter().map(|v| v / n).collect::<Vec<_>>()
    };
    let bank_rows: Vec<Vec<f64>> = (0..bank.rows()).map(|i| unit(bank.row(i))).collect();
    let mut preds = Vec::with_capacity(queries.rows());
    for q in 0..queries.rows() {
        let qr = unit(queries.row(q));
        let mut sims: Vec<(f64, usize)> = bank_rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(&qr).map(|(a, b)| a * b).sum(), i))
            .collect();
        sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut votes = vec![0.0; class_count];
        for &(s, i) in sims.iter().take(k) {
            votes[bank_labels[i]] += temperature.map_or(1.0, |t| (s / t).exp());
        }
        let mut best = 0;
        for c in 1..class_count {
            if votes[c] > votes[best] {
                best = c;
            }
        }
        preds.push(best);
    }
    preds
}
