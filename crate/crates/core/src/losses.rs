//! Objectives: batch cross-correlation, the Barlow Twins loss, the mixup
//! regularizer built on ground-truth correlations, and an InfoNCE baseline.
//!
//! Loss arithmetic follows the executable reference form: squared Frobenius
//! distances, and a regularizer weighted by `lambda_bt` inside `l_reg` with
//! `lambda_reg` applied on top in the total.

use serde::{Deserialize, Serialize};

use crate::augment::{MixedBatch, Permutation};
use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{forward, BoundParams};
use crate::tensor::Tensor;

/// Numerical slack allowed outside `[-1, 1]` for correlation entries.
pub const CORRELATION_SLACK: f64 = 1e-6;

/// Row-norm floor below which InfoNCE rejects an embedding.
const ZERO_NORM: f64 = 1e-12;

/// A `d × d` correlation matrix held as a plain value.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossCorrelation(pub Tensor);

impl CrossCorrelation {
    pub fn new(c: Tensor) -> Result<Self> {
        let (r, k) = c.expect_matrix("CrossCorrelation")?;
        if r != k {
            return Err(Error::dim("CrossCorrelation", format!("non-square [{r}x{k}]")));
        }
        Ok(CrossCorrelation(c))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    /// True if every entry lies in `[-1-slack, 1+slack]`.
    pub fn within_unit_range(&self) -> bool {
        let b = 1.0 + CORRELATION_SLACK;
        self.0.data().iter().all(|v| v.abs() <= b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_bt: f64,
    pub lambda_reg: f64,
    pub tau: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_bt >= 0.0) {
            return Err(Error::Config(format!("lambda_bt must be >= 0, got {}", self.lambda_bt)));
        }
        if !(self.lambda_reg >= 0.0) {
            return Err(Error::Config(format!("lambda_reg must be >= 0, got {}", self.lambda_reg)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Per-step decomposition of the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub invariance: f64,
    pub redundancy: f64,
    pub l_bt: f64,
    pub l_reg: f64,
    pub total: f64,
}

/// Differentiable Barlow Twins terms (and the combined `l_bt`).
#[derive(Clone, Copy, Debug)]
pub struct BarlowTerms {
    pub invariance: Var,
    pub redundancy: Var,
    pub l_bt: Var,
}

impl BarlowTerms {
    pub fn values(&self, tape: &Tape) -> (f64, f64, f64) {
        let v = |x: Var| tape.value(x).data()[0];
        (v(self.invariance), v(self.redundancy), v(self.l_bt))
    }
}

/// Centers each column over the batch and divides by its population
/// standard deviation (epsilon-stabilized).
pub fn normalize_embeddings(tape: &mut Tape, z: Var) -> Result<Var> {
    let mean = tape.batch_mean(z)?;
    let std = tape.batch_std(z)?;
    let centered = tape.sub_row(z, mean)?;
    tape.div_row(centered, std)
}

/// `C = za_nᵀ · zb_n / N`.
pub fn cross_correlation(tape: &mut Tape, za_n: Var, zb_n: Var) -> Result<Var> {
    let a = tape.value(za_n);
    let b = tape.value(zb_n);
    if a.shape() != b.shape() {
        return Err(Error::dim(
            "cross_correlation",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let (n, _) = a.expect_matrix("cross_correlation")?;
    let at = tape.transpose(za_n)?;
    let prod = tape.matmul(at, zb_n)?;
    tape.scale(prod, 1.0 / n as f64)
}

/// Plain-value `za_nᵀ · zb_n / N` for already normalized inputs.
pub fn cross_correlation_value(za_n: &Tensor, zb_n: &Tensor) -> Result<CrossCorrelation> {
    if za_n.shape() != zb_n.shape() {
        return Err(Error::dim(
            "cross_correlation",
            format!("{:?} vs {:?}", za_n.shape(), zb_n.shape()),
        ));
    }
    let (n, _) = za_n.expect_matrix("cross_correlation")?;
    CrossCorrelation::new(za_n.transpose()?.matmul(zb_n)?.scale(1.0 / n as f64))
}

/// Invariance `Σ_i (1 - C_ii)²`, redundancy `Σ_{i≠j} C_ij²`, and
/// `l_bt = invariance + lambda_bt · redundancy`.
pub fn barlow_twins_loss(tape: &mut Tape, c: Var, lambda_bt: f64) -> Result<BarlowTerms> {
    barlow_twins_loss_with_target(tape, c, lambda_bt, 1.0)
}

/// Same as [`barlow_twins_loss`] with a configurable diagonal target. Only
/// the self-test uses a target other than 1 (to prove it can fail).
pub(crate) fn barlow_twins_loss_with_target(
    tape: &mut Tape,
    c: Var,
    lambda_bt: f64,
    diag_target: f64,
) -> Result<BarlowTerms> {
    let diag = tape.diag(c)?;
    let gap = tape.add_const(diag, -diag_target)?;
    let gap2 = tape.pow2(gap)?;
    let invariance = tape.sum(gap2)?;

    let c2 = tape.pow2(c)?;
    let all = tape.sum(c2)?;
    let diag2 = tape.pow2(diag)?;
    let on = tape.sum(diag2)?;
    let redundancy = tape.sub(all, on)?;

    let weighted = tape.scale(redundancy, lambda_bt)?;
    let l_bt = tape.add(invariance, weighted)?;
    Ok(BarlowTerms {
        invariance,
        redundancy,
        l_bt,
    })
}

/// Evaluates [`barlow_twins_loss`] on a plain matrix: `(invariance, redundancy, l_bt)`.
pub fn barlow_twins_terms(c: &CrossCorrelation, lambda_bt: f64) -> Result<(f64, f64, f64)> {
    let mut tape = Tape::new();
    let cv = tape.constant(c.0.clone());
    let t = barlow_twins_loss(&mut tape, cv, lambda_bt)?;
    Ok(t.values(&tape))
}

/// Ground-truth correlations of the mixed batch under the assumption that
/// input interpolation carries over to the embeddings:
///
/// * `C^{MA}_gt = λ·za_nᵀza_n/N + (1-λ)·zb_n[perm]ᵀza_n/N`
/// * `C^{MB}_gt = λ·za_nᵀzb_n/N + (1-λ)·zb_n[perm]ᵀzb_n/N`
///
/// Returned as plain values: they are regression targets and carry no gradient.
pub fn ground_truth_cc(
    za_n: &Tensor,
    zb_n: &Tensor,
    lambda: f64,
    perm: &Permutation,
) -> Result<(CrossCorrelation, CrossCorrelation)> {
    if za_n.shape() != zb_n.shape() {
        return Err(Error::dim(
            "ground_truth_cc",
            format!("{:?} vs {:?}", za_n.shape(), zb_n.shape()),
        ));
    }
    let (n, _) = za_n.expect_matrix("ground_truth_cc")?;
    if perm.len() != n {
        return Err(Error::Permutation(format!(
            "permutation of {} for a batch of {n}",
            perm.len()
        )));
    }
    let inv_n = 1.0 / n as f64;
    let za_t = za_n.transpose()?;
    let zs_t = zb_n.select_rows(perm.as_slice())?.transpose()?;
    let mix = |x: &Tensor, y: &Tensor| -> Result<Tensor> {
        x.scale(lambda * inv_n).add(&y.scale((1.0 - lambda) * inv_n))
    };
    let gt_a = mix(&za_t.matmul(za_n)?, &zs_t.matmul(za_n)?)?;
    let gt_b = mix(&za_t.matmul(zb_n)?, &zs_t.matmul(zb_n)?)?;
    Ok((CrossCorrelation::new(gt_a)?, CrossCorrelation::new(gt_b)?))
}

/// `l_reg = lambda_bt · (‖C^{MA} - C^{MA}_gt‖²_F + ‖C^{MB} - C^{MB}_gt‖²_F)`.
pub fn mixup_reg_loss(
    tape: &mut Tape,
    cm_a: Var,
    cm_b: Var,
    gt_a: &CrossCorrelation,
    gt_b: &CrossCorrelation,
    lambda_bt: f64,
) -> Result<Var> {
    let sq_dist = |tape: &mut Tape, c: Var, gt: &CrossCorrelation| -> Result<Var> {
        if tape.value(c).shape() != gt.0.shape() {
            return Err(Error::dim(
                "mixup_reg_loss",
                format!("{:?} vs {:?}", tape.value(c).shape(), gt.0.shape()),
            ));
        }
        let target = tape.constant(gt.0.clone());
        let diff = tape.sub(c, target)?;
        let d2 = tape.pow2(diff)?;
        tape.sum(d2)
    };
    let a = sq_dist(tape, cm_a, gt_a)?;
    let b = sq_dist(tape, cm_b, gt_b)?;
    let s = tape.add(a, b)?;
    tape.scale(s, lambda_bt)
}

/// Plain-value [`mixup_reg_loss`].
pub fn mixup_reg_value(
    cm_a: &CrossCorrelation,
    cm_b: &CrossCorrelation,
    gt_a: &CrossCorrelation,
    gt_b: &CrossCorrelation,
    lambda_bt: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.constant(cm_a.0.clone());
    let b = tape.constant(cm_b.0.clone());
    let l = mixup_reg_loss(&mut tape, a, b, gt_a, gt_b, lambda_bt)?;
    Ok(tape.value(l).data()[0])
}

/// `total = l_bt + lambda_reg · l_reg`, with every component recorded.
pub fn total_loss(
    (invariance, redundancy, l_bt): (f64, f64, f64),
    l_reg: f64,
    weights: &LossWeights,
) -> LossBreakdown {
    LossBreakdown {
        invariance,
        redundancy,
        l_bt,
        l_reg,
        total: l_bt + weights.lambda_reg * l_reg,
    }
}

/// InfoNCE on raw embeddings:
/// `-Σ_b cos(a_b, b_b)/τ + Σ_b log Σ_{b'≠b} exp(cos(a_b, b_b')/τ)`.
pub fn info_nce_loss(tape: &mut Tape, za: Var, zb: Var, tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("temperature must be > 0, got {tau}")));
    }
    if tape.value(za).shape() != tape.value(zb).shape() {
        return Err(Error::dim(
            "info_nce_loss",
            format!("{:?} vs {:?}", tape.value(za).shape(), tape.value(zb).shape()),
        ));
    }
    let (n, _) = tape.value(za).expect_matrix("info_nce_loss")?;
    if n < 2 {
        return Err(Error::DegenerateBatch {
            op: "info_nce_loss",
            rows: n,
        });
    }
    let an = unit_rows(tape, za)?;
    let bn = unit_rows(tape, zb)?;
    let bt = tape.transpose(bn)?;
    let cos = tape.matmul(an, bt)?;
    let logits = tape.scale(cos, 1.0 / tau)?;

    let pos = tape.diag(logits)?;
    let similarity = tape.sum(pos)?;
    let lse = tape.logsumexp_rows(logits, true)?;
    let contrastive = tape.sum(lse)?;
    tape.sub(contrastive, similarity)
}

fn unit_rows(tape: &mut Tape, z: Var) -> Result<Var> {
    let sq = tape.pow2(z)?;
    let ss = tape.sum_axis1(sq)?;
    if tape.value(ss).data().iter().any(|&v| v.sqrt() < ZERO_NORM) {
        return Err(Error::domain("info_nce_loss", "zero-norm embedding row"));
    }
    let norm = tape.sqrt(ss)?;
    tape.div_col(z, norm)
}

/// Which objective a training run optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Bt,
    Mixbt,
    Infonce,
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bt" => Ok(Objective::Bt),
            "mixbt" => Ok(Objective::Mixbt),
            "infonce" => Ok(Objective::Infonce),
            other => Err(Error::Config(format!(
                "objective must be bt, mixbt or infonce, got {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Objective::Bt => "bt",
            Objective::Mixbt => "mixbt",
            Objective::Infonce => "infonce",
        })
    }
}

/// Scalar loss node plus its recorded breakdown.
pub struct StepLoss {
    pub total: Var,
    pub breakdown: LossBreakdown,
}

/// Full objective for one batch: forward both views (and the mixed batch
/// when one is given), normalize, correlate and combine.
///
/// `Bt` with a mixed batch records `l_reg` as a monitored value only; the
/// returned total is `l_bt`. For `Infonce` the breakdown carries the InfoNCE
/// value in `l_bt` and `total`, with the correlation terms zeroed.
pub fn step_objective(
    tape: &mut Tape,
    bound: &BoundParams,
    y_a: &Tensor,
    y_b: &Tensor,
    mixed: Option<&MixedBatch>,
    objective: Objective,
    weights: &LossWeights,
) -> Result<StepLoss> {
    let xa = tape.constant(y_a.clone());
    let xb = tape.constant(y_b.clone());
    let za = forward(tape, bound, xa)?;
    let zb = forward(tape, bound, xb)?;

    if objective == Objective::Infonce {
        let total = info_nce_loss(tape, za, zb, weights.tau)?;
        let v = tape.value(total).data()[0];
        return Ok(StepLoss {
            total,
            breakdown: LossBreakdown {
                l_bt: v,
                total: v,
                ..LossBreakdown::default()
            },
        });
    }

    let za_n = normalize_embeddings(tape, za)?;
    let zb_n = normalize_embeddings(tape, zb)?;
    let c = cross_correlation(tape, za_n, zb_n)?;
    let terms = barlow_twins_loss(tape, c, weights.lambda_bt)?;

    let (l_reg, l_reg_value) = match (objective, mixed) {
        (Objective::Mixbt | Objective::Bt, Some(mix)) => {
            let xm = tape.constant(mix.y_m.clone());
            let zm = forward(tape, bound, xm)?;
            let zm_n = normalize_embeddings(tape, zm)?;
            let cm_a = cross_correlation(tape, zm_n, za_n)?;
            let cm_b = cross_correlation(tape, zm_n, zb_n)?;
            let (gt_a, gt_b) = ground_truth_cc(
                tape.value(za_n),
                tape.value(zb_n),
                mix.lambda,
                &mix.perm,
            )?;
            let l = mixup_reg_loss(tape, cm_a, cm_b, &gt_a, &gt_b, weights.lambda_bt)?;
            let v = tape.value(l).data()[0];
            (Some(l), v)
        }
        (Objective::Mixbt, None) => {
            return Err(Error::Contract("mixbt objective needs a mixed batch".into()));
        }
        _ => (None, 0.0),
    };

    let total = match l_reg {
        Some(l) if objective == Objective::Mixbt => {
            let w = tape.scale(l, weights.lambda_reg)?;
            tape.add(terms.l_bt, w)?
        }
        _ => terms.l_bt,
    };
    let (invariance, redundancy, l_bt) = terms.values(tape);
    let breakdown = LossBreakdown {
        invariance,
        redundancy,
        l_bt,
        l_reg: l_reg_value,
        total: tape.value(total).data()[0],
    };
    Ok(StepLoss { total, breakdown })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;

    fn norm_value(z: &Tensor) -> Tensor {
        let mut t = Tape::new();
        let v = t.constant(z.clone());
        let n = normalize_embeddings(&mut t, v).unwrap();
        t.value(n).clone()
    }

    #[test]
    fn normalize_hand_case() {
        let n = norm_value(&Tensor::from_rows(&[[1.0], [3.0]]));
        assert_eq!(n.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn normalize_fixed_point_and_constant_column() {
        let z = oracle::normalize_columns(&Tensor::from_rows(&[
            [0.3, 2.0],
            [1.7, -1.0],
            [-0.4, 0.5],
            [2.2, 0.1],
        ]));
        let n = norm_value(&z);
        assert!(n.max_abs_diff(&z) < 1e-12);

        let c = norm_value(&Tensor::from_rows(&[[4.0], [4.0], [4.0]]));
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exact_unit_columns_are_untouched() {
        let z = Tensor::from_rows(&[[1.0, -1.0], [-1.0, 1.0], [1.0, 1.0], [-1.0, -1.0]]);
        assert_eq!(norm_value(&z), z);
    }

    #[test]
    fn correlation_examples() {
        let a = Tensor::from_rows(&[[1.0], [-1.0]]);
        let b = Tensor::from_rows(&[[-1.0], [1.0]]);
        assert_eq!(cross_correlation_value(&a, &a).unwrap().0.data(), &[1.0]);
        assert_eq!(cross_correlation_value(&a, &b).unwrap().0.data(), &[-1.0]);
        assert!(cross_correlation_value(&a, &Tensor::zeros(&[3, 1])).is_err());
    }

    #[test]
    fn correlation_matches_loop_oracle_on_integers() {
        let za = Tensor::from_rows(&[[1.0, 2.0], [3.0, -1.0], [0.0, 4.0], [-2.0, 1.0]]);
        let zb = Tensor::from_rows(&[[2.0, 0.0], [-1.0, 1.0], [5.0, 3.0], [1.0, -2.0]]);
        let c = cross_correlation_value(&za, &zb).unwrap();
        let o = oracle::batch_outer_mean(&za, &zb);
        assert!(c.0.max_abs_diff(&o) <= 1e-12);
    }

    #[test]
    fn barlow_examples() {
        let id = CrossCorrelation::new(Tensor::identity(3)).unwrap();
        assert_eq!(barlow_twins_terms(&id, 0.5).unwrap(), (0.0, 0.0, 0.0));

        let c = CrossCorrelation::new(Tensor::from_rows(&[[1.0, 0.5], [0.5, 1.0]])).unwrap();
        let (inv, red, l) = barlow_twins_terms(&c, 0.0078125).unwrap();
        assert_eq!((inv, red, l), (0.0, 0.5, 0.00390625));

        let z = CrossCorrelation::new(Tensor::zeros(&[2, 2])).unwrap();
        let (inv, red, _) = barlow_twins_terms(&z, 1.0).unwrap();
        assert_eq!((inv, red), (2.0, 0.0));

        assert!(CrossCorrelation::new(Tensor::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn ground_truth_endpoints() {
        let za = oracle::normalize_columns(&Tensor::from_rows(&[[1.0, 2.0], [3.0, -1.0], [0.0, 4.0]]));
        let zb = oracle::normalize_columns(&Tensor::from_rows(&[[2.0, 0.0], [-1.0, 1.0], [5.0, 3.0]]));
        let perm = Permutation::new(vec![2, 0, 1]).unwrap();
        let (gt_a, _) = ground_truth_cc(&za, &zb, 1.0, &perm).unwrap();
        assert_eq!(gt_a, cross_correlation_value(&za, &za).unwrap());
        let id = Permutation::identity(3);
        let (_, gt_b) = ground_truth_cc(&za, &zb, 0.0, &id).unwrap();
        assert_eq!(gt_b, cross_correlation_value(&zb, &zb).unwrap());
        assert!(ground_truth_cc(&za, &zb, 0.5, &Permutation::identity(2)).is_err());
    }

    #[test]
    fn ground_truth_matches_materialized_integer_case() {
        let za = Tensor::from_rows(&[[1.0, 2.0], [3.0, -1.0], [0.0, 4.0]]);
        let zb = Tensor::from_rows(&[[2.0, 0.0], [-1.0, 1.0], [5.0, 3.0]]);
        let perm = Permutation::new(vec![1, 2, 0]).unwrap();
        let (gt_a, gt_b) = ground_truth_cc(&za, &zb, 0.3, &perm).unwrap();
        let (oa, ob) = oracle::ground_truth_materialized(&za, &zb, 0.3, perm.as_slice());
        assert!(gt_a.0.max_abs_diff(&oa) <= 1e-12);
        assert!(gt_b.0.max_abs_diff(&ob) <= 1e-12);
    }

    #[test]
    fn mixup_reg_examples() {
        let a = CrossCorrelation::new(Tensor::from_rows(&[[0.2, 0.1], [0.0, 0.7]])).unwrap();
        let b = CrossCorrelation::new(Tensor::from_rows(&[[0.9, -0.3], [0.4, 0.5]])).unwrap();
        assert_eq!(mixup_reg_value(&a, &b, &a, &b, 0.5).unwrap(), 0.0);
        let mut a2 = a.clone();
        a2.0.data_mut()[1] += 1.0;
        assert_eq!(mixup_reg_value(&a2, &b, &a, &b, 0.5).unwrap(), 0.5);
        let wrong = CrossCorrelation::new(Tensor::zeros(&[3, 3])).unwrap();
        assert!(mixup_reg_value(&a, &b, &wrong, &b, 0.5).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let w = LossWeights {
            lambda_bt: 0.0078125,
            lambda_reg: 4.0,
            tau: 0.1,
        };
        assert_eq!(total_loss((0.5, 0.5, 1.0), 2.0, &w).total, 9.0);
        let w0 = LossWeights { lambda_reg: 0.0, ..w };
        assert_eq!(total_loss((0.5, 0.5, 1.0), 2.0, &w0).total, 1.0);
        let defaults = LossWeights {
            lambda_bt: 0.0078125,
            lambda_reg: 4.0 * 0.0078125,
            tau: 0.1,
        };
        assert!(defaults.validate().is_ok());
        assert!(LossWeights { tau: 0.0, ..w }.validate().is_err());
        assert!(LossWeights { lambda_reg: -1.0, ..w }.validate().is_err());
    }

    #[test]
    fn info_nce_hand_case() {
        let mut t = Tape::new();
        let e = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let a = t.constant(e.clone());
        let b = t.constant(e);
        let l = info_nce_loss(&mut t, a, b, 1.0).unwrap();
        assert!((t.value(l).data()[0] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn info_nce_scale_invariant_and_rejects_zero_rows() {
        let za = Tensor::from_rows(&[[1.0, 2.0], [-0.5, 0.3], [2.0, -1.0]]);
        let zb = Tensor::from_rows(&[[0.4, 1.0], [1.5, 0.2], [-1.0, -1.0]]);
        let eval = |a: &Tensor, b: &Tensor| {
            let mut t = Tape::new();
            let av = t.constant(a.clone());
            let bv = t.constant(b.clone());
            let l = info_nce_loss(&mut t, av, bv, 0.5).unwrap();
            t.value(l).data()[0]
        };
        let base = eval(&za, &zb);
        let scaled = eval(&za.scale(10.0), &zb.scale(10.0));
        assert!((base - scaled).abs() < 1e-12);

        let mut t = Tape::new();
        let z = t.constant(Tensor::from_rows(&[[0.0, 0.0], [1.0, 0.0]]));
        assert!(matches!(
            info_nce_loss(&mut t, z, z, 1.0),
            Err(Error::NumericDomain { .. })
        ));
    }

    #[test]
    fn objective_parsing() {
        assert_eq!("mixbt".parse::<Objective>().unwrap(), Objective::Mixbt);
        assert!("simclr".parse::<Objective>().is_err());
        assert_eq!(Objective::Infonce.to_string(), "infonce");
    }
}
