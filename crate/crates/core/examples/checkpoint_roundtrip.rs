// Saves a short training run to a checkpoint, loads it back and checks that
// the encoder features are bit-identical.

use mixbt::trainloop::{pretrain, Checkpoint, RunConfig};

fn main() -> mixbt::Result<()> {
    let cfg = RunConfig {
        synthetic_per_class: 64,
        synthetic_test_per_class: 16,
        synthetic_dim: 16,
        hidden_dims: vec![32],
        projector_hidden: 32,
        d: 8,
        batch_size: 32,
        epochs: 3,
        warmup_epochs: 1,
        ..RunConfig::default()
    };
    let (train, test) = cfg.load_data()?;
    let run = pretrain(&cfg, &train, Some(&test), None)?;

    let ck = Checkpoint {
        params: run.params.clone(),
        optim: run.optim.clone(),
    };
    let bytes = ck.to_bytes();
    let back = Checkpoint::from_bytes(&bytes)?;
    back.ensure_architecture(&cfg.model_config(train.dim()))?;
    assert_eq!(back.params.features(&test.images)?, run.params.features(&test.images)?);
    println!(
        "{} bytes, {} optimizer steps, architecture {:?}",
        bytes.len(),
        back.optim.step,
        back.config().layer_dims()
    );
    Ok(())
}
