// Trains two short runs into a temporary directory and merges their curves
// into a CSV table and an SVG chart.

use mixbt::curves::{to_csv, to_svg, RunCurves};
use mixbt::losses::Objective;
use mixbt::trainloop::{pretrain, RunConfig};

fn main() -> mixbt::Result<()> {
    let root = std::env::temp_dir().join(format!("mixbt-curves-example-{}", std::process::id()));
    let mut curves = Vec::new();
    for objective in [Objective::Bt, Objective::Mixbt] {
        let cfg = RunConfig {
            objective,
            synthetic_per_class: 64,
            synthetic_test_per_class: 16,
            synthetic_dim: 16,
            hidden_dims: vec![32],
            projector_hidden: 32,
            d: 8,
            batch_size: 32,
            epochs: 6,
            warmup_epochs: 1,
            eval_every: 2,
            ..RunConfig::default()
        };
        let (train, test) = cfg.load_data()?;
        let dir = root.join(objective.to_string());
        pretrain(&cfg, &train, Some(&test), Some(&dir))?;
        curves.push(RunCurves::load(&dir)?);
    }
    print!("{}", to_csv(&curves));
    let svg = to_svg(&curves);
    println!("svg: {} bytes, {} polylines", svg.len(), svg.matches("<polyline").count());
    let _ = std::fs::remove_dir_all(&root);
    Ok(())
}
