//! Oracle suites runnable from the command line.
//!
//! Each suite compares an optimized code path against its loop-based
//! reference in [`crate::oracle`] on seeded random instances.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::augment::{keyed_rng, Permutation};
use crate::diffcore::Tape;
use crate::error::Result;
use crate::eval::{knn_predict, FeatureBank, Voting};
use crate::losses::{
    barlow_twins_loss_with_target, cross_correlation, ground_truth_cc, info_nce_loss,
    mixup_reg_loss, normalize_embeddings,
};
use crate::model::{forward, EncoderConfig, ModelConfig, ModelParams, ProjectorConfig};
use crate::oracle;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    pub detail: String,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Knobs for proving the suites can fail.
#[derive(Clone, Copy, Debug, Default)]
pub struct Corruption {
    /// Replaces the Barlow Twins diagonal target 1 with `1 + offset`.
    pub bt_target_offset: f64,
}

pub fn run_all(corruption: Corruption) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        gradient_suite(corruption)?,
        barlow_value_suite(corruption)?,
        cross_correlation_suite()?,
        ground_truth_suite()?,
        knn_suite()?,
    ])
}

fn gaussian(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect()).expect("shape")
}

fn toy_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            input_dim: 6,
            hidden_dims: vec![5, 4],
        },
        projector: ProjectorConfig {
            hidden_dim: 4,
            output_dim: 3,
        },
    }
}

/// Glorot weights with nonzero biases, so no embedding row is identically zero.
pub fn toy_params(seed: u64, rng: &mut impl Rng) -> Result<Vec<Tensor>> {
    let mut params = ModelParams::init(&toy_config(), seed)?.to_tensors();
    for b in params.iter_mut().skip(1).step_by(2) {
        *b = gaussian(b.shape(), rng).scale(0.3);
    }
    Ok(params)
}

#[derive(Clone, Copy)]
enum ToyLoss {
    Barlow,
    Mixup,
    InfoNce,
}

/// Loss of the toy model as a function of its flat parameter list. The
/// mixup targets are passed in so finite differences can hold them fixed.
fn toy_loss(
    params: &[Tensor],
    which: ToyLoss,
    ya: &Tensor,
    yb: &Tensor,
    ym: &Tensor,
    targets: Option<&(crate::losses::CrossCorrelation, crate::losses::CrossCorrelation)>,
    target_offset: f64,
) -> Result<(f64, Vec<Tensor>)> {
    let model = ModelParams::from_tensors(params.to_vec(), 2)?;
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let xa = tape.constant(ya.clone());
    let xb = tape.constant(yb.clone());
    let za = forward(&mut tape, &bound, xa)?;
    let zb = forward(&mut tape, &bound, xb)?;
    let loss = match which {
        ToyLoss::InfoNce => info_nce_loss(&mut tape, za, zb, 0.5)?,
        ToyLoss::Barlow => {
            let za_n = normalize_embeddings(&mut tape, za)?;
            let zb_n = normalize_embeddings(&mut tape, zb)?;
            let c = cross_correlation(&mut tape, za_n, zb_n)?;
            barlow_twins_loss_with_target(&mut tape, c, 0.25, 1.0 + target_offset)?.l_bt
        }
        ToyLoss::Mixup => {
            let za_n = normalize_embeddings(&mut tape, za)?;
            let zb_n = normalize_embeddings(&mut tape, zb)?;
            let xm = tape.constant(ym.clone());
            let zm = forward(&mut tape, &bound, xm)?;
            let zm_n = normalize_embeddings(&mut tape, zm)?;
            let cm_a = cross_correlation(&mut tape, zm_n, za_n)?;
            let cm_b = cross_correlation(&mut tape, zm_n, zb_n)?;
            let (gt_a, gt_b) = targets.expect("mixup targets");
            mixup_reg_loss(&mut tape, cm_a, cm_b, gt_a, gt_b, 0.25)?
        }
    };
    let value = tape.value(loss).data()[0];
    tape.backward(loss)?;
    Ok((value, bound.grads(&tape)?))
}

fn normalized(z: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.constant(z.clone());
    let n = normalize_embeddings(&mut tape, v)?;
    Ok(tape.value(n).clone())
}

fn gradient_suite(corruption: Corruption) -> Result<SuiteReport> {
    let mut cases = 0;
    let mut failures = 0;
    let mut detail = String::new();
    for seed in 0..10u64 {
        let mut rng = keyed_rng(&[0x4752_4144, seed]);
        let params = toy_params(seed, &mut rng)?;
        let ya = gaussian(&[4, 6], &mut rng);
        let yb = gaussian(&[4, 6], &mut rng);
        let lambda: f64 = rng.random_range(0.1..0.9);
        let perm = Permutation::random(4, &mut rng);
        let ym = ya.zip_map(&yb.select_rows(perm.as_slice())?, |a, b| lambda * a + (1.0 - lambda) * b)?;
        let model = ModelParams::from_tensors(params.clone(), 2)?;
        let za_n = normalized(&model.embed(&ya)?)?;
        let zb_n = normalized(&model.embed(&yb)?)?;
        let targets = ground_truth_cc(&za_n, &zb_n, lambda, &perm)?;
        for which in [ToyLoss::Barlow, ToyLoss::Mixup, ToyLoss::InfoNce] {
            let off = corruption.bt_target_offset;
            let (_, analytic) = toy_loss(&params, which, &ya, &yb, &ym, Some(&targets), off)?;
            let numeric = oracle::finite_difference_grads(&params, 1e-5, |p| {
                Ok(toy_loss(p, which, &ya, &yb, &ym, Some(&targets), off)?.0)
            })?;
            let bad = oracle::compare_grads(&analytic, &numeric, 1e-4, 1e-7);
            cases += 1;
            if !bad.is_empty() {
                failures += 1;
                if detail.is_empty() {
                    detail = format!("seed {seed}: {} mismatched entries, first {:?}", bad.len(), bad[0]);
                }
            }
        }
    }
    Ok(SuiteReport {
        name: "gradients",
        cases,
        failures,
        detail,
    })
}

fn barlow_value_suite(corruption: Corruption) -> Result<SuiteReport> {
    let mut failures = 0;
    let mut detail = String::new();
    let cases = 100;
    for seed in 0..cases as u64 {
        let mut rng = keyed_rng(&[0x4256_414C, seed]);
        let d = rng.random_range(2..6);
        let c = gaussian(&[d, d], &mut rng);
        let lambda_bt = rng.random_range(0.0..1.0);
        let mut tape = Tape::new();
        let cv = tape.constant(c.clone());
        let t = barlow_twins_loss_with_target(&mut tape, cv, lambda_bt, 1.0 + corruption.bt_target_offset)?;
        let (inv, red, l_bt) = t.values(&tape);
        let (oi, or) = oracle::barlow_terms_loops(&c);
        let tol = 1e-10 * (1.0 + oi.abs() + or.abs());
        if (inv - oi).abs() > tol || (red - or).abs() > tol || (l_bt - (oi + lambda_bt * or)).abs() > tol {
            failures += 1;
            if detail.is_empty() {
                detail = format!("seed {seed}: got ({inv}, {red}), oracle ({oi}, {or})");
            }
        }
    }
    Ok(SuiteReport {
        name: "barlow-terms",
        cases,
        failures,
        detail,
    })
}

fn cross_correlation_suite() -> Result<SuiteReport> {
    let mut failures = 0;
    let mut detail = String::new();
    let cases = 200;
    for seed in 0..cases as u64 {
        let mut rng = keyed_rng(&[0x4343_4F52, seed]);
        let n = rng.random_range(2..=6);
        let d = rng.random_range(1..=4);
        let za = gaussian(&[n, d], &mut rng);
        let zb = gaussian(&[n, d], &mut rng);
        let mut tape = Tape::new();
        let a = tape.constant(za.clone());
        let b = tape.constant(zb.clone());
        let an = normalize_embeddings(&mut tape, a)?;
        let bn = normalize_embeddings(&mut tape, b)?;
        let c = cross_correlation(&mut tape, an, bn)?;
        let want = oracle::cross_correlation_loops(&oracle::normalize_columns(&za), &oracle::normalize_columns(&zb));
        let err = tape.value(c).max_abs_diff(&want);
        if !(err <= 1e-10) {
            failures += 1;
            if detail.is_empty() {
                detail = format!("seed {seed}: max deviation {err:e}");
            }
        }
    }
    Ok(SuiteReport {
        name: "cross-correlation",
        cases,
        failures,
        detail,
    })
}

fn ground_truth_suite() -> Result<SuiteReport> {
    let mut failures = 0;
    let mut detail = String::new();
    let mut cases = 0;
    for seed in 0..50u64 {
        let mut rng = keyed_rng(&[0x4754_4343, seed]);
        let n = rng.random_range(2..=6);
        let d = rng.random_range(1..=4);
        let za = oracle::normalize_columns(&gaussian(&[n, d], &mut rng));
        let zb = oracle::normalize_columns(&gaussian(&[n, d], &mut rng));
        let perm = Permutation::random(n, &mut rng);
        for lambda in [0.0, 0.25, 0.5, 1.0] {
            cases += 1;
            let (ga, gb) = ground_truth_cc(&za, &zb, lambda, &perm)?;
            let (wa, wb) = oracle::ground_truth_materialized(&za, &zb, lambda, perm.as_slice());
            let err = ga.0.max_abs_diff(&wa).max(gb.0.max_abs_diff(&wb));
            if !(err <= 1e-10) {
                failures += 1;
                if detail.is_empty() {
                    detail = format!("seed {seed}, lambda {lambda}: max deviation {err:e}");
                }
            }
        }
    }
    Ok(SuiteReport {
        name: "ground-truth-cc",
        cases,
        failures,
        detail,
    })
}

fn knn_suite() -> Result<SuiteReport> {
    let mut failures = 0;
    let mut detail = String::new();
    let cases = 100;
    for seed in 0..cases as u64 {
        let mut rng = keyed_rng(&[0x4B4E_4E4F, seed]);
        let m = rng.random_range(1..=50);
        let q = rng.random_range(1..=20);
        let dim = rng.random_range(1..=5);
        let classes = rng.random_range(1..=4);
        let k = rng.random_range(1..=7.min(m));
        let bank = gaussian(&[m, dim], &mut rng);
        let queries = gaussian(&[q, dim], &mut rng);
        let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..classes)).collect();
        let fb = FeatureBank::new(&bank, labels.clone(), classes)?;
        let fq = FeatureBank::new(&queries, vec![0; q], classes)?;
        for (voting, temp) in [(Voting::default(), Some(0.5)), (Voting::Uniform, None)] {
            let got = knn_predict(&fb, &fq, k, voting)?;
            let want = oracle::knn_brute_force(&bank, &labels, &queries, classes, k, temp);
            if got != want {
                failures += 1;
                if detail.is_empty() {
                    detail = format!("seed {seed}: {got:?} vs {want:?}");
                }
            }
        }
    }
    Ok(SuiteReport {
        name: "knn",
        cases: 2 * cases,
        failures,
        detail,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_suites_pass() {
        for r in run_all(Corruption::default()).unwrap() {
            assert!(r.passed(), "{}: {}", r.name, r.detail);
        }
    }

    #[test]
    fn corrupted_target_is_caught() {
        let reports = run_all(Corruption { bt_target_offset: 0.1 }).unwrap();
        let bt = reports.iter().find(|r| r.name == "barlow-terms").unwrap();
        assert!(!bt.passed());
    }
}
