//! Representation quality: weighted k-NN on frozen features, linear probing,
//! and a redundancy diagnostic on embeddings.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::keyed_rng;
use crate::diffcore::Tape;
use crate::error::{Error, Result};
use crate::losses::cross_correlation_value;
use crate::oracle::normalize_columns;
use crate::tensor::Tensor;
use crate::trainloop::optim::{adam_step, OptimState};

/// Norm floor for feature normalization; an all-zero feature row stays zero.
pub const FEATURE_NORM_FLOOR: f64 = 1e-12;

pub const DEFAULT_KNN_TEMPERATURE: f64 = 0.5;

/// Row-normalized features with labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBank {
    features: Tensor,
    labels: Vec<usize>,
    class_count: usize,
}

impl FeatureBank {
    /// Normalizes every row to unit L2 norm.
    pub fn new(features: &Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let (m, _) = features.expect_matrix("FeatureBank")?;
        if labels.len() != m {
            return Err(Error::dim("FeatureBank", format!("{} labels for {m} rows", labels.len())));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Contract(format!("label {l} out of range for {class_count} classes")));
        }
        Ok(FeatureBank {
            features: features.normalize_rows(FEATURE_NORM_FLOOR)?,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Voting {
    /// Each neighbor contributes `exp(sim / temperature)`.
    Weighted { temperature: f64 },
    /// Each neighbor contributes 1.
    Uniform,
}

impl Default for Voting {
    fn default() -> Self {
        Voting::Weighted {
            temperature: DEFAULT_KNN_TEMPERATURE,
        }
    }
}

/// `k = 200` for banks of 2000 or more; otherwise `min(200, max(1, M/10))`.
pub fn default_k(bank_len: usize) -> usize {
    if bank_len >= 2000 {
        200
    } else {
        (bank_len / 10).clamp(1, 200)
    }
}

/// Predicted class for every query row.
///
/// Neighbors are ranked by cosine similarity (ties broken by lower bank
/// index); votes are summed per class and the lowest class index wins ties.
pub fn knn_predict(bank: &FeatureBank, queries: &FeatureBank, k: usize, voting: Voting) -> Result<Vec<usize>> {
    if bank.is_empty() {
        return Err(Error::Contract("k-NN bank is empty".into()));
    }
    if k == 0 || k > bank.len() {
        return Err(Error::Contract(format!("k={k} must be in 1..={}", bank.len())));
    }
    if bank.class_count != queries.class_count {
        return Err(Error::Contract(format!(
            "bank has {} classes, queries {}",
            bank.class_count, queries.class_count
        )));
    }
    if bank.features.cols() != queries.features.cols() {
        return Err(Error::dim(
            "knn",
            format!("{} vs {} feature columns", bank.features.cols(), queries.features.cols()),
        ));
    }
    if let Voting::Weighted { temperature } = voting {
        if !(temperature > 0.0) {
            return Err(Error::Parameter(format!("temperature must be > 0, got {temperature}")));
        }
    }
    let sims = queries.features.matmul(&bank.features.transpose()?)?;
    let mut preds = Vec::with_capacity(queries.len());
    let mut order: Vec<usize> = (0..bank.len()).collect();
    let mut votes = vec![0.0; bank.class_count];
    for q in 0..queries.len() {
        let row = sims.row(q);
        order.iter_mut().enumerate().for_each(|(i, o)| *o = i);
        let by_rank = |a: &usize, b: &usize| row[*b].total_cmp(&row[*a]).then(a.cmp(b));
        if k < order.len() {
            order.select_nth_unstable_by(k - 1, by_rank);
        }
        let top = &mut order[..k];
        top.sort_unstable_by(by_rank);
        votes.iter_mut().for_each(|v| *v = 0.0);
        for &i in top.iter() {
            votes[bank.labels[i]] += match voting {
                Voting::Weighted { temperature } => (row[i] / temperature).exp(),
                Voting::Uniform => 1.0,
            };
        }
        let mut best = 0;
        for c in 1..votes.len() {
            if votes[c] > votes[best] {
                best = c;
            }
        }
        preds.push(best);
    }
    Ok(preds)
}

/// Top-1 accuracy of [`knn_predict`] against the query labels.
pub fn knn_evaluate(bank: &FeatureBank, queries: &FeatureBank, k: usize, voting: Voting) -> Result<f64> {
    let preds = knn_predict(bank, queries, k, voting)?;
    Ok(accuracy(&preds, &queries.labels))
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Per-epoch multiplicative decay of the learning rate.
    pub gamma: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 100,
            batch_size: 512,
            lr: 1e-3,
            gamma: 0.97,
            weight_decay: 1e-6,
            seed: 0,
        }
    }
}

/// Linear classifier trained on frozen features.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe {
    weight: Tensor,
    bias: Tensor,
    mean: Tensor,
    scale: Tensor,
}

impl LinearProbe {
    pub fn predict(&self, features: &Tensor) -> Result<Vec<usize>> {
        let x = standardize(features, &self.mean, &self.scale)?;
        let logits = x.matmul(&self.weight)?;
        let c = logits.cols();
        Ok((0..logits.rows())
            .map(|i| {
                let row = logits.row(i);
                let mut best = 0;
                for j in 1..c {
                    if row[j] + self.bias.data()[j] > row[best] + self.bias.data()[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }
}

fn standardize(x: &Tensor, mean: &Tensor, scale: &Tensor) -> Result<Tensor> {
    let (n, d) = x.expect_matrix("standardize")?;
    if d != mean.numel() {
        return Err(Error::dim("linear_probe", format!("{d} features, probe expects {}", mean.numel())));
    }
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        out.extend(
            x.row(i)
                .iter()
                .zip(mean.data().iter().zip(scale.data()))
                .map(|(v, (m, s))| (v - m) / s),
        );
    }
    Tensor::new(vec![n, d], out)
}

/// Trains an affine softmax classifier with Adam and exponential learning
/// rate decay `lr · gamma^epoch`. Features are standardized with the
/// training-set column statistics first. Inputs are plain tensors, so no
/// gradient can reach the encoder that produced them.
pub fn train_linear_probe(
    features: &Tensor,
    labels: &[usize],
    class_count: usize,
    cfg: &ProbeConfig,
) -> Result<LinearProbe> {
    let (n, d) = features.expect_matrix("linear_probe")?;
    if labels.len() != n || n == 0 {
        return Err(Error::dim("linear_probe", format!("{} labels for {n} rows", labels.len())));
    }
    if class_count < 2 {
        return Err(Error::Contract("linear probe needs at least two classes".into()));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= class_count) {
        return Err(Error::Contract(format!("label {l} out of range for {class_count} classes")));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("probe batch size must be positive".into()));
    }
    let mean = features.sum_axis0()?.scale(1.0 / n as f64);
    let mut var = vec![0.0; d];
    for i in 0..n {
        for (j, v) in var.iter_mut().enumerate() {
            let c = features.get2(i, j) - mean.data()[j];
            *v += c * c;
        }
    }
    let scale = Tensor::vector(var.into_iter().map(|v| (v / n as f64).sqrt().max(1e-6)).collect());
    let x = standardize(features, &mean, &scale)?;

    let mut weight = Tensor::zeros(&[d, class_count]);
    let mut bias = Tensor::zeros(&[class_count]);
    let mut state = OptimState::new([&weight, &bias]);
    let mut order: Vec<usize> = (0..n).collect();
    let mut lr = cfg.lr;
    for epoch in 0..cfg.epochs {
        let mut rng = keyed_rng(&[0x5052_4F42, cfg.seed, epoch as u64]);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let xb = x.select_rows(chunk)?;
            let mut onehot = Tensor::zeros(&[chunk.len(), class_count]);
            for (r, &i) in chunk.iter().enumerate() {
                onehot.data_mut()[r * class_count + labels[i]] = 1.0;
            }
            let mut tape = Tape::new();
            let w = tape.leaf(weight.clone());
            let b = tape.leaf(bias.clone());
            let xv = tape.constant(xb);
            let y = tape.constant(onehot);
            let xw = tape.matmul(xv, w)?;
            let logits = tape.add_row(xw, b)?;
            let lse = tape.logsumexp_rows(logits, false)?;
            let picked = tape.mul(logits, y)?;
            let picked = tape.sum(picked)?;
            let lse = tape.sum(lse)?;
            let nll = tape.sub(lse, picked)?;
            let loss = tape.scale(nll, 1.0 / chunk.len() as f64)?;
            tape.backward(loss)?;
            let grads = [tape.grad(w).cloned().unwrap(), tape.grad(b).cloned().unwrap()];
            adam_step(&mut [&mut weight, &mut bias], &grads, &mut state, lr, cfg.weight_decay)?;
        }
        lr *= cfg.gamma;
    }
    Ok(LinearProbe {
        weight,
        bias,
        mean,
        scale,
    })
}

/// Trains on `(train_features, train_labels)` and returns top-1 accuracy on
/// the test split.
pub fn linear_probe(
    train_features: &Tensor,
    train_labels: &[usize],
    test_features: &Tensor,
    test_labels: &[usize],
    class_count: usize,
    cfg: &ProbeConfig,
) -> Result<f64> {
    if let Some(l) = test_labels.iter().find(|&&l| l >= class_count) {
        return Err(Error::Contract(format!("test label {l} out of range for {class_count} classes")));
    }
    if test_features.cols() != train_features.cols() {
        return Err(Error::dim(
            "linear_probe",
            format!("{} vs {} feature columns", train_features.cols(), test_features.cols()),
        ));
    }
    let probe = train_linear_probe(train_features, train_labels, class_count, cfg)?;
    Ok(accuracy(&probe.predict(test_features)?, test_labels))
}

/// Redundancy summary of an embedding batch: the self cross-correlation of
/// its batch-normalized columns, reduced to
/// `(mean |off-diagonal entry|, mean diagonal entry)`.
///
/// Constant columns are left at zero after centering.
pub fn redundancy_diagnostic(z: &Tensor) -> Result<(f64, f64)> {
    let (n, d) = z.expect_matrix("redundancy_diagnostic")?;
    if n < 2 {
        return Err(Error::DegenerateBatch {
            op: "redundancy_diagnostic",
            rows: n,
        });
    }
    let mut zn = normalize_columns(z);
    zn.data_mut().iter_mut().for_each(|v| {
        if !v.is_finite() {
            *v = 0.0;
        }
    });
    let c = cross_correlation_value(&zn, &zn)?;
    let mut off = 0.0;
    let mut diag = 0.0;
    for i in 0..d {
        for j in 0..d {
            let v = c.0.get2(i, j);
            if i == j {
                diag += v;
            } else {
                off += v.abs();
            }
        }
    }
    let off_count = (d * d - d).max(1);
    Ok((off / off_count as f64, diag / d as f64))
}
