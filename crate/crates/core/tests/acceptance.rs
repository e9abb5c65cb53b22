// Acceptance checks, one PASS/FAIL line per criterion. Runs without the
// libtest harness so every line shows in `cargo test` output.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use mixbt::augment::{keyed_rng, Permutation};
use mixbt::diffcore::{Tape, Var};
use mixbt::eval::{knn_predict, FeatureBank, Voting};
use mixbt::losses::{
    barlow_twins_loss, cross_correlation, cross_correlation_value, ground_truth_cc, info_nce_loss, mixup_reg_loss,
    mixup_reg_value, normalize_embeddings, Objective,
};
use mixbt::model::{forward, EncoderConfig, ModelConfig, ModelParams, ProjectorConfig};
use mixbt::oracle;
use mixbt::trainloop::{pretrain, DatasetKind, RunConfig, Schedule};
use mixbt::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);

fn gaussian(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

fn check(cond: bool, ok: String, bad: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(bad)
    }
}

// 1. Gradients of every loss on a toy model against central differences.

#[derive(Clone, Copy, Debug)]
enum Loss {
    Barlow,
    Mixup,
    InfoNce,
}

struct Toy {
    ya: Tensor,
    yb: Tensor,
    ym: Tensor,
    targets: (mixbt::losses::CrossCorrelation, mixbt::losses::CrossCorrelation),
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

fn normalized(z: &Tensor) -> Tensor {
    let mut t = Tape::new();
    let v = t.constant(z.clone());
    let n = normalize_embeddings(&mut t, v).unwrap();
    t.value(n).clone()
}

fn toy_objective(params: &[Tensor], loss: Loss, toy: &Toy) -> mixbt::Result<(f64, Vec<Tensor>)> {
    let model = ModelParams::from_tensors(params.to_vec(), 2)?;
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let embed = |tape: &mut Tape, y: &Tensor| -> mixbt::Result<Var> {
        let x = tape.constant(y.clone());
        forward(tape, &bound, x)
    };
    let za = embed(&mut tape, &toy.ya)?;
    let zb = embed(&mut tape, &toy.yb)?;
    let l = match loss {
        Loss::InfoNce => info_nce_loss(&mut tape, za, zb, 0.5)?,
        Loss::Barlow => {
            let a = normalize_embeddings(&mut tape, za)?;
            let b = normalize_embeddings(&mut tape, zb)?;
            let c = cross_correlation(&mut tape, a, b)?;
            barlow_twins_loss(&mut tape, c, 0.25)?.l_bt
        }
        Loss::Mixup => {
            let a = normalize_embeddings(&mut tape, za)?;
            let b = normalize_embeddings(&mut tape, zb)?;
            let zm = embed(&mut tape, &toy.ym)?;
            let m = normalize_embeddings(&mut tape, zm)?;
            let cma = cross_correlation(&mut tape, m, a)?;
            let cmb = cross_correlation(&mut tape, m, b)?;
            mixup_reg_loss(&mut tape, cma, cmb, &toy.targets.0, &toy.targets.1, 0.25)?
        }
    };
    let v = tape.value(l).item()?;
    tape.backward(l)?;
    Ok((v, bound.grads(&tape)?))
}

fn ac1() -> Outcome {
    let (rel, floor) = (1e-4, 1e-8);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut by_floor = 0usize;
    for seed in 0..50u64 {
        let mut rng = keyed_rng(&[0xAC1, seed]);
        let mut params = ModelParams::init(&toy_config(), seed).unwrap().to_tensors();
        for b in params.iter_mut().skip(1).step_by(2) {
            *b = gaussian(b.shape(), &mut rng).scale(0.3);
        }
        let ya = gaussian(&[4, 6], &mut rng);
        let yb = gaussian(&[4, 6], &mut rng);
        let lambda = rng.random_range(0.1..0.9);
        let perm = Permutation::random(4, &mut rng);
        let ym = ya
            .zip_map(&yb.select_rows(perm.as_slice()).unwrap(), |a, b| lambda * a + (1.0 - lambda) * b)
            .unwrap();
        let model = ModelParams::from_tensors(params.clone(), 2).unwrap();
        let za = normalized(&model.embed(&ya).unwrap());
        let zb = normalized(&model.embed(&yb).unwrap());
        let targets = ground_truth_cc(&za, &zb, lambda, &perm).unwrap();
        let toy = Toy { ya, yb, ym, targets };
        for loss in [Loss::Barlow, Loss::Mixup, Loss::InfoNce] {
            let (_, analytic) = toy_objective(&params, loss, &toy).map_err(|e| format!("{loss:?}: {e}"))?;
            let numeric = oracle::finite_difference_grads(&params, 1e-5, |p| Ok(toy_objective(p, loss, &toy)?.0))
                .map_err(|e| format!("{loss:?}: {e}"))?;
            for (a, n) in analytic.iter().zip(&numeric) {
                for (&x, &y) in a.data().iter().zip(n.data()) {
                    checked += 1;
                    let scale = x.abs().max(y.abs());
                    let r = if scale > 0.0 { (x - y).abs() / scale } else { 0.0 };
                    if r <= rel {
                        worst = worst.max(r);
                    } else {
                        by_floor += 1;
                    }
                }
            }
            let bad = oracle::compare_grads(&analytic, &numeric, rel, floor);
            if let Some(m) = bad.first() {
                return Err(format!("seed {seed} {loss:?}: {} entries off, first {m:?}", bad.len()));
            }
        }
    }
    Ok(format!(
        "{checked} gradient entries over 50 seeds x 3 losses; {} within relative 1e-4 (worst {worst:.2e}), \
         {by_floor} near-zero entries within absolute {floor:e}",
        checked - by_floor
    ))
}

// 2. Cross-correlation against the entry-by-entry definition.

fn ac2() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..200u64 {
        let mut rng = keyed_rng(&[0xAC2, seed]);
        let n = rng.random_range(2..=6);
        let d = rng.random_range(1..=4);
        let za = gaussian(&[n, d], &mut rng);
        let zb = gaussian(&[n, d], &mut rng);
        let mut tape = Tape::new();
        let a = tape.constant(za.clone());
        let b = tape.constant(zb.clone());
        let an = normalize_embeddings(&mut tape, a).unwrap();
        let bn = normalize_embeddings(&mut tape, b).unwrap();
        let c = cross_correlation(&mut tape, an, bn).unwrap();
        let want = oracle::cross_correlation_loops(&oracle::normalize_columns(&za), &oracle::normalize_columns(&zb));
        worst = worst.max(tape.value(c).max_abs_diff(&want));
    }
    check(
        worst <= 1e-10,
        format!("200 instances, max deviation {worst:.2e}"),
        format!("max deviation {worst:.2e} > 1e-10"),
    )
}

// 3. Ground-truth correlations against materialize-then-correlate.

fn ac3() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..200u64 {
        let mut rng = keyed_rng(&[0xAC3, seed]);
        let n = rng.random_range(2..=6);
        let d = rng.random_range(1..=4);
        let za = oracle::normalize_columns(&gaussian(&[n, d], &mut rng));
        let zb = oracle::normalize_columns(&gaussian(&[n, d], &mut rng));
        let perm = Permutation::random(n, &mut rng);
        for lambda in [0.0, 0.25, 0.5, 1.0] {
            let (ga, gb) = ground_truth_cc(&za, &zb, lambda, &perm).unwrap();
            let (wa, wb) = oracle::ground_truth_materialized(&za, &zb, lambda, perm.as_slice());
            worst = worst.max(ga.0.max_abs_diff(&wa)).max(gb.0.max_abs_diff(&wb));
        }
    }
    check(
        worst <= 1e-10,
        format!("200 instances x 4 mix ratios, max deviation {worst:.2e}"),
        format!("max deviation {worst:.2e} > 1e-10"),
    )
}

// 4. Fixed points of both losses and the lambda_reg = 0 endpoint.

fn reg_at_interpolation(za: &Tensor, zb: &Tensor, lambda: f64, perm: &Permutation) -> f64 {
    let zm = za
        .zip_map(&zb.select_rows(perm.as_slice()).unwrap(), |a, b| lambda * a + (1.0 - lambda) * b)
        .unwrap();
    let (ga, gb) = ground_truth_cc(za, zb, lambda, perm).unwrap();
    let ca = cross_correlation_value(&zm, za).unwrap();
    let cb = cross_correlation_value(&zm, zb).unwrap();
    mixup_reg_value(&ca, &cb, &ga, &gb, 1.0).unwrap()
}

fn endpoint_runs() -> (mixbt::trainloop::RunArtifacts, mixbt::trainloop::RunArtifacts) {
    let base = RunConfig {
        synthetic_per_class: 160,
        synthetic_test_per_class: 20,
        synthetic_dim: 16,
        hidden_dims: vec![32, 16],
        projector_hidden: 32,
        d: 8,
        batch_size: 32,
        epochs: 10,
        warmup_epochs: 1,
        lambda_reg: 0.0,
        seed: 11,
        ..RunConfig::default()
    };
    let (train, test) = base.load_data().unwrap();
    let bt = RunConfig {
        objective: Objective::Bt,
        ..base.clone()
    };
    let mx = RunConfig {
        objective: Objective::Mixbt,
        ..base
    };
    (
        pretrain(&bt, &train, Some(&test), None).unwrap(),
        pretrain(&mx, &train, Some(&test), None).unwrap(),
    )
}

fn ac4() -> Outcome {
    let mut t = Tape::new();
    let c = t.constant(Tensor::identity(5));
    let l = barlow_twins_loss(&mut t, c, 0.0078125).unwrap();
    let at_identity = t.value(l.l_bt).item().unwrap();
    if at_identity != 0.0 {
        return Err(format!("L_BT(I) = {at_identity:e}"));
    }

    let mut nonzero = Vec::new();
    for seed in 0..20u64 {
        let mut rng = keyed_rng(&[0xAC4, seed]);
        let n = 8;
        let za = normalized(&gaussian(&[n, 3], &mut rng));
        let zb = normalized(&gaussian(&[n, 3], &mut rng));
        let perm = Permutation::random(n, &mut rng);
        for lambda in [0.0, 1.0] {
            let v = reg_at_interpolation(&za, &zb, lambda, &perm);
            if v != 0.0 {
                nonzero.push(format!("gaussian seed {seed} lambda {lambda}: {v:e}"));
            }
        }
        // Balanced +-1 columns are exactly batch-normalized; with dyadic
        // mix ratios every product and sum is exact.
        let pm = |rng: &mut rand_chacha::ChaCha8Rng| {
            let mut cols = Vec::new();
            for _ in 0..3 {
                let mut col = vec![1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0];
                rand::seq::SliceRandom::shuffle(col.as_mut_slice(), rng);
                cols.push(col);
            }
            Tensor::new(vec![n, 3], (0..n * 3).map(|i| cols[i % 3][i / 3]).collect()).unwrap()
        };
        let za = pm(&mut rng);
        let zb = pm(&mut rng);
        for lambda in [0.25, 0.5, 0.75] {
            let v = reg_at_interpolation(&za, &zb, lambda, &perm);
            if v != 0.0 {
                nonzero.push(format!("+-1 seed {seed} lambda {lambda}: {v:e}"));
            }
        }
    }
    if let Some(first) = nonzero.first() {
        return Err(format!("{} nonzero L_reg at the fixed point, first {first}", nonzero.len()));
    }

    let (bt, mx) = endpoint_runs();
    if bt.steps.len() != 100 {
        return Err(format!("expected 100 steps, ran {}", bt.steps.len()));
    }
    let same_steps = bt.steps.iter().zip(&mx.steps).all(|(a, b)| {
        a.loss.total.to_bits() == b.loss.total.to_bits()
            && a.loss.l_bt.to_bits() == b.loss.l_bt.to_bits()
            && a.loss.l_reg.to_bits() == b.loss.l_reg.to_bits()
    });
    let same_params = bt
        .params
        .tensors()
        .iter()
        .zip(mx.params.tensors())
        .all(|(a, b)| a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    check(
        same_steps && same_params,
        "L_BT(I) = 0, L_reg = 0 at 200 interpolation fixed points, bt == mixbt(lambda_reg=0) bitwise over 100 steps".into(),
        format!("trajectories differ: losses equal {same_steps}, params equal {same_params}"),
    )
}

// 5. Smoke training on separable synthetic data.

fn ac5() -> Outcome {
    let cfg = RunConfig {
        dataset: DatasetKind::Synthetic,
        synthetic_classes: 2,
        synthetic_per_class: 500,
        synthetic_dim: 64,
        synthetic_separation: 10.0,
        hidden_dims: vec![256, 128],
        d: 64,
        lambda_bt: 0.0078125,
        lambda_reg: 4.0 * 0.0078125,
        objective: Objective::Mixbt,
        epochs: 100,
        ..RunConfig::default()
    };
    let (train, test) = cfg.load_data().unwrap();
    let run = pretrain(&cfg, &train, Some(&test), None).map_err(|e| e.to_string())?;
    let first = run.epochs.first().unwrap();
    let last = run.epochs.last().unwrap();
    let knn = run.final_knn().unwrap();
    let a = last.mean.l_bt <= 0.5 * first.mean.l_bt;
    let b = knn >= 0.90;
    let c = last.offdiag_mean < first.offdiag_mean;
    let summary = format!(
        "L_BT {:.4} -> {:.4} ({:.1}%), k-NN top-1 {knn:.4}, off-diagonal {:.4} -> {:.4}",
        first.mean.l_bt,
        last.mean.l_bt,
        100.0 * last.mean.l_bt / first.mean.l_bt,
        first.offdiag_mean,
        last.offdiag_mean
    );
    check(a && b && c, summary.clone(), format!("(a) {a} (b) {b} (c) {c}: {summary}"))
}

// 6. Two CLI invocations with the same config and seed.

fn ac6() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "synthetic_per_class = 128\nsynthetic_test_per_class = 32\nsynthetic_dim = 36\n\
         hidden_dims = [64, 32]\nprojector_hidden = 64\nd = 16\nbatch_size = 64\n\
         epochs = 6\nwarmup_epochs = 1\neval_every = 3\nseed = 5\n",
    )
    .unwrap();
    let run = |out: &Path, threads: &str| {
        let status = Command::new(env!("CARGO_BIN_EXE_mixbt"))
            .args(["pretrain", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(out)
            .env("RAYON_NUM_THREADS", threads)
            .env_remove("MIXBT_SEED")
            .output()
            .unwrap();
        if !status.status.success() {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned());
        }
        Ok(std::fs::read(out.join("metrics.csv")).unwrap())
    };
    let a = run(&dir.path().join("a"), "1")?;
    let b = run(&dir.path().join("b"), "4")?;
    check(
        a == b,
        format!("metrics.csv byte-identical ({} bytes, 1 vs 4 threads)", a.len()),
        "metrics.csv differs between invocations".into(),
    )
}

// 7. k-NN against the exhaustive oracle.

fn ac7() -> Outcome {
    let mut mismatches = 0;
    for seed in 0..100u64 {
        let mut rng = keyed_rng(&[0xAC7, seed]);
        let m = rng.random_range(1..=50);
        let q = rng.random_range(1..=20);
        let dim = rng.random_range(1..=6);
        let classes = rng.random_range(1..=5);
        let k = rng.random_range(1..=7.min(m));
        let bank = gaussian(&[m, dim], &mut rng);
        let queries = gaussian(&[q, dim], &mut rng);
        let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..classes)).collect();
        let fb = FeatureBank::new(&bank, labels.clone(), classes).unwrap();
        let fq = FeatureBank::new(&queries, vec![0; q], classes).unwrap();
        let got = knn_predict(&fb, &fq, k, Voting::default()).unwrap();
        if got != oracle::knn_brute_force(&bank, &labels, &queries, classes, k, Some(0.5)) {
            mismatches += 1;
        }
    }
    check(
        mismatches == 0,
        "100 instances, identical predictions".into(),
        format!("{mismatches} instances disagree"),
    )
}

// 8. Learning-rate schedule shape.

fn ac8() -> Outcome {
    let base = 0.01;
    let s = Schedule::new(base, 10, 100).unwrap();
    let lr = |e: f64| s.lr_at(e).unwrap();
    let start = lr(0.0);
    let peak = lr(10.0);
    let mid = lr(55.0);
    let end = lr(100.0);
    let jump = (lr(10.0 - 1e-10) - peak).abs().max((lr(10.0 + 1e-10) - peak).abs());
    let ok = start == 0.0
        && (peak - base).abs() <= 1e-15
        && (mid - base / 2.0).abs() <= 1e-15
        && end <= 1e-6 * base
        && jump <= 1e-12;
    let summary = format!("lr(0)={start:e} lr(10)={peak} lr(55)={mid} lr(100)={end:e} junction gap {jump:.1e}");
    check(ok, summary.clone(), summary)
}

// 9. CIFAR-10 subsample, only when the data is available.

fn ac9() -> Option<Outcome> {
    let dir = std::env::var_os("MIXBT_CIFAR_DIR")?;
    let cfg = RunConfig {
        dataset: DatasetKind::Cifar10,
        data_dir: Some(dir.into()),
        max_per_class: Some(500),
        hidden_dims: vec![512, 256],
        projector_hidden: 512,
        d: 128,
        epochs: 50,
        warmup_epochs: 5,
        eval_every: 5,
        aug_crop_scale_min: 0.6,
        objective: Objective::Mixbt,
        ..RunConfig::default()
    };
    let out = tempfile::tempdir().unwrap();
    let result = (|| -> Outcome {
        let (train, test) = cfg.load_data().map_err(|e| e.to_string())?;
        let run = pretrain(&cfg, &train, Some(&test), Some(out.path())).map_err(|e| e.to_string())?;
        let finite = run.steps.iter().all(|s| {
            let l = s.loss;
            [l.invariance, l.redundancy, l.l_bt, l.l_reg, l.total].iter().all(|v| v.is_finite())
        });
        let evals = mixbt::curves::read_evals(&out.path().join("eval.csv")).map_err(|e| e.to_string())?;
        let epochs: Vec<usize> = evals.iter().map(|e| e.epoch).collect();
        let want: Vec<usize> = (5..=50).step_by(5).collect();
        check(
            finite && epochs == want,
            format!("{} steps finite, eval epochs {epochs:?}, final k-NN {:?}", run.steps.len(), run.final_knn()),
            format!("finite {finite}, eval epochs {epochs:?}"),
        )
    })();
    Some(result)
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("1", "gradient correctness", ac1),
        ("2", "cross-correlation oracle", ac2),
        ("3", "ground-truth correlation oracle", ac3),
        ("4", "loss fixed points", ac4),
        ("5", "smoke training", ac5),
        ("6", "determinism", ac6),
        ("7", "k-NN oracle", ac7),
        ("8", "schedule shape", ac8),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("AC{id} PASS {name} [{secs:.1}s]: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("AC{id} FAIL {name} [{secs:.1}s]: {msg}");
            }
        }
    }
    let t = Instant::now();
    match ac9() {
        None => println!("AC9 SKIP cifar-10 subsample: MIXBT_CIFAR_DIR not set"),
        Some(Ok(msg)) => println!("AC9 PASS cifar-10 subsample [{:.1}s]: {msg}", t.elapsed().as_secs_f64()),
        Some(Err(msg)) => {
            failed += 1;
            println!("AC9 FAIL cifar-10 subsample [{:.1}s]: {msg}", t.elapsed().as_secs_f64());
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
