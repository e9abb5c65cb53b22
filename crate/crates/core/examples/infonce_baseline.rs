// The contrastive baseline on the same synthetic data, next to Barlow Twins.

use mixbt::losses::Objective;
use mixbt::trainloop::{pretrain, RunConfig};

fn main() -> mixbt::Result<()> {
    for objective in [Objective::Infonce, Objective::Bt] {
        let cfg = RunConfig {
            objective,
            synthetic_per_class: 128,
            synthetic_test_per_class: 32,
            synthetic_dim: 16,
            hidden_dims: vec![32],
            projector_hidden: 32,
            d: 16,
            batch_size: 64,
            epochs: 5,
            warmup_epochs: 1,
            ..RunConfig::default()
        };
        let (train, test) = cfg.load_data()?;
        let run = pretrain(&cfg, &train, Some(&test), None)?;
        let first = run.epochs.first().expect("epoch").mean.total;
        let last = run.epochs.last().expect("epoch").mean.total;
        println!(
            "{objective:>8}: loss {first:.4} -> {last:.4}, k-NN top-1 {:.4}",
            run.final_knn().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
