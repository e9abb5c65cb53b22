//! Command-line front end. `main.rs` only forwards to [`run`].
//!
//! Exit codes: 0 success, 1 selftest failure, 2 usage/config/shape/input
//! errors, 3 numeric blow-up during training. The last stdout line of every
//! successful command is `RESULT key=value ...`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::data::{load_cifar10, make_synthetic_split, Dataset};
use crate::error::{Error, Result};
use crate::eval::{default_k, knn_evaluate, linear_probe, FeatureBank, ProbeConfig, Voting, DEFAULT_KNN_TEMPERATURE};
use crate::losses::Objective;
use crate::selftest::{run_all, Corruption};
use crate::trainloop::pretrain::EVAL_HEADER;
use crate::trainloop::{pretrain_with, Checkpoint, Progress, RunConfig};
use crate::curves::{to_csv, to_svg, RunCurves};

pub const SEED_ENV: &str = "MIXBT_SEED";

#[derive(Parser, Debug)]
#[command(name = "mixbt", version, about = "Barlow Twins / mixup Barlow Twins pretraining")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pretrain an encoder from a TOML run config.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        objective: Option<Objective>,
        /// Overrides MIXBT_SEED, which overrides the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Weighted k-NN accuracy of a checkpoint's encoder features.
    EvalKnn {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A CIFAR-10 binary directory, or `synthetic[:key=value,...]`.
        #[arg(long)]
        data: String,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        max_per_class: Option<usize>,
        /// Row appended here; defaults to eval.csv next to the checkpoint.
        #[arg(long)]
        eval_csv: Option<PathBuf>,
    },
    /// Linear probe accuracy on a checkpoint's frozen encoder features.
    LinearProbe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: String,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long)]
        max_per_class: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Merge run directories into one per-epoch table (.csv) or chart (.svg).
    ExportCurves {
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the oracle comparison suites.
    Selftest {
        #[arg(long, hide = true, default_value_t = 0.0)]
        corrupt_bt_target: f64,
    },
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numeric_blowup() {
                3
            } else {
                2
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Pretrain {
            config,
            objective,
            seed,
            out,
        } => cmd_pretrain(&config, objective, seed, &out),
        Command::EvalKnn {
            checkpoint,
            data,
            k,
            max_per_class,
            eval_csv,
        } => cmd_eval_knn(&checkpoint, &data, k, max_per_class, eval_csv),
        Command::LinearProbe {
            checkpoint,
            data,
            epochs,
            max_per_class,
            seed,
        } => cmd_linear_probe(&checkpoint, &data, epochs, max_per_class, seed),
        Command::ExportCurves { runs, out } => cmd_export(&runs, &out),
        Command::Selftest { corrupt_bt_target } => cmd_selftest(corrupt_bt_target),
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn cmd_pretrain(config: &Path, objective: Option<Objective>, seed: Option<u64>, out: &Path) -> Result<i32> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(o) = objective {
        cfg.objective = o;
    }
    if let Some(s) = seed.or(env_seed()?) {
        cfg.seed = s;
    }
    cfg.validate()?;
    let (train, test) = cfg.load_data()?;
    let run = pretrain_with(&cfg, &train, Some(&test), Some(out), |p| match p {
        Progress::Epoch(s) => eprintln!(
            "epoch {:4}  total {:.6}  l_bt {:.6}  l_reg {:.6}  offdiag {:.4}",
            s.epoch, s.mean.total, s.mean.l_bt, s.mean.l_reg, s.offdiag_mean
        ),
        Progress::Eval(e) => eprintln!("  eval epoch {}  knn_top1 {:.4}", e.epoch, e.knn_top1),
    })?;
    let last = run.epochs.last().expect("at least one epoch");
    let eval = run.evals.last().expect("final eval");
    let linear = eval.linear_top1.map(|v| v.to_string()).unwrap_or_else(|| "none".into());
    println!(
        "RESULT command=pretrain objective={} seed={} epochs={} steps={} l_bt={} total={} knn_top1={} linear_top1={linear} out={}",
        cfg.objective,
        cfg.seed,
        cfg.epochs,
        run.steps.len(),
        last.mean.l_bt,
        last.mean.total,
        eval.knn_top1,
        out.display()
    );
    Ok(0)
}

/// `synthetic[:classes=2,per_class=500,test_per_class=100,dim=64,sep=10,seed=0]`
/// or a CIFAR-10 directory.
fn load_data_arg(spec: &str, max_per_class: Option<usize>) -> Result<(Dataset, Dataset)> {
    let Some(rest) = spec.strip_prefix("synthetic") else {
        return load_cifar10(Path::new(spec), max_per_class);
    };
    let d = RunConfig::default();
    let (mut classes, mut per, mut test_per, mut dim, mut sep, mut seed) = (
        d.synthetic_classes,
        d.synthetic_per_class,
        d.synthetic_test_per_class,
        d.synthetic_dim,
        d.synthetic_separation,
        0u64,
    );
    let rest = match rest.strip_prefix(':') {
        Some(r) => r,
        None if rest.is_empty() => "",
        None => return Err(Error::Config(format!("cannot parse data spec {spec:?}"))),
    };
    for kv in rest.split(',').filter(|s| !s.is_empty()) {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value in data spec, got {kv:?}")))?;
        let bad = |_| Error::Config(format!("bad value for {k}: {v:?}"));
        match k {
            "classes" => classes = v.parse().map_err(bad)?,
            "per_class" => per = v.parse().map_err(bad)?,
            "test_per_class" => test_per = v.parse().map_err(bad)?,
            "dim" => dim = v.parse().map_err(bad)?,
            "sep" | "separation" => sep = v.parse().map_err(|_| Error::Config(format!("bad value for {k}: {v:?}")))?,
            "seed" => seed = v.parse().map_err(bad)?,
            other => return Err(Error::Config(format!("unknown data spec key {other:?}"))),
        }
    }
    if let Some(cap) = max_per_class {
        per = per.min(cap);
        test_per = test_per.min(cap);
    }
    make_synthetic_split(classes, per, test_per, dim, sep, seed)
}

fn features(ck: &Checkpoint, ds: &Dataset) -> Result<FeatureBank> {
    if ds.dim() != ck.params.input_dim() {
        return Err(Error::dim(
            "checkpoint",
            format!("data has {} values per sample, model expects {}", ds.dim(), ck.params.input_dim()),
        ));
    }
    FeatureBank::new(&ck.params.features(&ds.images)?, ds.labels.clone(), ds.meta.class_count)
}

fn epoch_from_name(path: &Path) -> Option<usize> {
    let stem = path.file_stem()?.to_str()?;
    stem.strip_prefix("checkpoint_e")?.parse().ok()
}

fn cmd_eval_knn(
    checkpoint: &Path,
    data: &str,
    k: Option<usize>,
    max_per_class: Option<usize>,
    eval_csv: Option<PathBuf>,
) -> Result<i32> {
    let ck = Checkpoint::load(checkpoint)?;
    let (train, test) = load_data_arg(data, max_per_class)?;
    let bank = features(&ck, &train)?;
    let queries = features(&ck, &test)?;
    let k = k.unwrap_or_else(|| default_k(bank.len()));
    let acc = knn_evaluate(
        &bank,
        &queries,
        k,
        Voting::Weighted {
            temperature: DEFAULT_KNN_TEMPERATURE,
        },
    )?;
    let csv = eval_csv.unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).join("eval.csv"));
    append_eval_row(&csv, epoch_from_name(checkpoint), acc)?;
    println!("knn top-1 {acc}");
    println!("RESULT command=eval-knn k={k} knn_top1={acc} bank={} queries={}", bank.len(), queries.len());
    Ok(0)
}

fn append_eval_row(path: &Path, epoch: Option<usize>, acc: f64) -> Result<()> {
    let fresh = !path.exists();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let epoch = epoch.map(|e| e.to_string()).unwrap_or_default();
    let mut text = String::new();
    if fresh {
        text.push_str(EVAL_HEADER);
        text.push('\n');
    }
    text.push_str(&format!("{epoch},{acc},\n"));
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn cmd_linear_probe(checkpoint: &Path, data: &str, epochs: usize, max_per_class: Option<usize>, seed: u64) -> Result<i32> {
    let ck = Checkpoint::load(checkpoint)?;
    let (train, test) = load_data_arg(data, max_per_class)?;
    for ds in [&train, &test] {
        if ds.dim() != ck.params.input_dim() {
            return Err(Error::dim(
                "checkpoint",
                format!("data has {} values per sample, model expects {}", ds.dim(), ck.params.input_dim()),
            ));
        }
    }
    let cfg = ProbeConfig {
        epochs,
        seed,
        ..ProbeConfig::default()
    };
    let acc = linear_probe(
        &ck.params.features(&train.images)?,
        &train.labels,
        &ck.params.features(&test.images)?,
        &test.labels,
        train.meta.class_count,
        &cfg,
    )?;
    println!("linear top-1 {acc}");
    println!("RESULT command=linear-probe epochs={epochs} linear_top1={acc}");
    Ok(0)
}

fn cmd_export(runs: &[PathBuf], out: &Path) -> Result<i32> {
    let curves = runs.iter().map(|r| RunCurves::load(r)).collect::<Result<Vec<_>>>()?;
    let (body, kind) = match out.extension().and_then(|e| e.to_str()) {
        Some("csv") => (to_csv(&curves), "csv"),
        Some("svg") => (to_svg(&curves), "svg"),
        _ => return Err(Error::Config(format!("--out must end in .csv or .svg, got {}", out.display()))),
    };
    std::fs::write(out, &body).map_err(|e| Error::io(out, e))?;
    let rows = curves
        .iter()
        .flat_map(|c| c.knn.keys())
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    println!("RESULT command=export-curves format={kind} runs={} rows={rows} out={}", curves.len(), out.display());
    Ok(0)
}

fn cmd_selftest(offset: f64) -> Result<i32> {
    let reports = run_all(Corruption {
        bt_target_offset: offset,
    })?;
    let mut failed = 0;
    for r in &reports {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        println!("{status} {} ({}/{} cases) {}", r.name, r.cases - r.failures, r.cases, r.detail);
        if !r.passed() {
            failed += 1;
        }
    }
    println!(
        "RESULT command=selftest suites={} failed={failed} status={}",
        reports.len(),
        if failed == 0 { "pass" } else { "fail" }
    );
    Ok(if failed == 0 { 0 } else { 1 })
}
