// The mixup regularizer: correlations of a mixed batch against ground truth
// built from the two views, plus the full objective for one batch.

use mixbt::augment::{keyed_rng, mix_batch, sample_lambda, Permutation, ViewPair};
use mixbt::diffcore::Tape;
use mixbt::losses::{cross_correlation_value, ground_truth_cc, mixup_reg_value, step_objective, LossWeights, Objective};
use mixbt::model::{EncoderConfig, ModelConfig, ModelParams, ProjectorConfig};
use mixbt::oracle::normalize_columns;
use mixbt::Tensor;
use rand::Rng;

fn main() -> mixbt::Result<()> {
    let mut rng = keyed_rng(&[7]);
    let (n, dim) = (8, 12);
    let rows = |rng: &mut rand_chacha::ChaCha8Rng| {
        Tensor::new(vec![n, dim], (0..n * dim).map(|_| rng.random::<f64>()).collect())
    };
    let pair = ViewPair {
        y_a: rows(&mut rng)?,
        y_b: rows(&mut rng)?,
        sample_ids: (0..n).collect(),
    };
    let lambda = sample_lambda(1.0, &mut rng)?;
    let perm = Permutation::random(n, &mut rng);
    println!("lambda {lambda:.4}  perm {:?}", perm.as_slice());
    let mixed = mix_batch(&pair, lambda, perm)?;

    // If embeddings interpolated exactly like inputs, the regularizer would vanish.
    let za = normalize_columns(&rows(&mut rng)?);
    let zb = normalize_columns(&rows(&mut rng)?);
    let (gt_a, gt_b) = ground_truth_cc(&za, &zb, 0.5, &Permutation::identity(n))?;
    let zm = za.scale(0.5).add(&zb.scale(0.5))?;
    let ca = cross_correlation_value(&zm, &za)?;
    let cb = cross_correlation_value(&zm, &zb)?;
    println!("l_reg at the interpolation fixed point: {:e}", mixup_reg_value(&ca, &cb, &gt_a, &gt_b, 1.0)?);

    let cfg = ModelConfig {
        encoder: EncoderConfig {
            input_dim: dim,
            hidden_dims: vec![16],
        },
        projector: ProjectorConfig {
            hidden_dim: 16,
            output_dim: 4,
        },
    };
    let params = ModelParams::init(&cfg, 1)?;
    let weights = LossWeights {
        lambda_bt: 0.25,
        lambda_reg: 1.0,
        tau: 0.5,
    };
    for objective in [Objective::Bt, Objective::Mixbt] {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let step = step_objective(&mut tape, &bound, &pair.y_a, &pair.y_b, Some(&mixed), objective, &weights)?;
        let b = step.breakdown;
        println!(
            "{objective:>6}: invariance {:.4} redundancy {:.4} l_bt {:.4} l_reg {:.4} total {:.4}",
            b.invariance, b.redundancy, b.l_bt, b.l_reg, b.total
        );
    }
    Ok(())
}
