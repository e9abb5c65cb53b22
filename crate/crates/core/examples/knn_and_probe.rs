// k-NN and linear-probe accuracy of a randomly initialized encoder on
// synthetic blobs. Random projections already keep well-separated classes apart.

use mixbt::data::make_synthetic_split;
use mixbt::eval::{default_k, knn_evaluate, linear_probe, redundancy_diagnostic, FeatureBank, ProbeConfig, Voting};
use mixbt::model::{EncoderConfig, ModelConfig, ModelParams, ProjectorConfig};

fn main() -> mixbt::Result<()> {
    let (train, test) = make_synthetic_split(3, 200, 50, 32, 10.0, 5)?;
    let cfg = ModelConfig {
        encoder: EncoderConfig {
            input_dim: 32,
            hidden_dims: vec![64, 32],
        },
        projector: ProjectorConfig {
            hidden_dim: 64,
            output_dim: 16,
        },
    };
    let params = ModelParams::init(&cfg, 0)?;
    let train_f = params.features(&train.images)?;
    let test_f = params.features(&test.images)?;

    let bank = FeatureBank::new(&train_f, train.labels.clone(), 3)?;
    let queries = FeatureBank::new(&test_f, test.labels.clone(), 3)?;
    let k = default_k(bank.len());
    for voting in [Voting::default(), Voting::Uniform] {
        println!("k-NN (k={k}, {voting:?}) top-1 {:.4}", knn_evaluate(&bank, &queries, k, voting)?);
    }

    let probe = ProbeConfig {
        epochs: 30,
        ..ProbeConfig::default()
    };
    let acc = linear_probe(&train_f, &train.labels, &test_f, &test.labels, 3, &probe)?;
    println!("linear probe top-1 {acc:.4}");

    let (off, diag) = redundancy_diagnostic(&params.embed(&train.images)?)?;
    println!("embedding self-correlation: mean |off-diagonal| {off:.4}, mean diagonal {diag:.4}");
    Ok(())
}
