// Pretrains on separable synthetic blobs and reports k-NN accuracy.
//
// `cargo run --release --example pretrain_synthetic -- [epochs] [bt|mixbt|infonce]`

use mixbt::trainloop::{pretrain_with, Progress, RunConfig};

fn main() -> mixbt::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(20);
    let objective = args.next().unwrap_or_else(|| "mixbt".into()).parse()?;

    let cfg = RunConfig {
        epochs,
        warmup_epochs: (epochs / 10).min(epochs - 1),
        objective,
        ..RunConfig::default()
    };
    let (train, test) = cfg.load_data()?;
    let run = pretrain_with(&cfg, &train, Some(&test), None, |p| match p {
        Progress::Epoch(s) => println!(
            "epoch {:3}  l_bt {:10.4}  l_reg {:8.4}  offdiag {:.4}",
            s.epoch, s.mean.l_bt, s.mean.l_reg, s.offdiag_mean
        ),
        Progress::Eval(e) => println!("  knn top-1 {:.4}", e.knn_top1),
    })?;
    let first = run.epochs.first().map(|e| e.mean.l_bt).unwrap_or(f64::NAN);
    let last = run.epochs.last().map(|e| e.mean.l_bt).unwrap_or(f64::NAN);
    println!("l_bt {first:.4} -> {last:.4}");
    if let Some(e) = run.evals.last() {
        println!("final knn {:.4}  linear {:?}", e.knn_top1, e.linear_top1);
    }
    Ok(())
}
