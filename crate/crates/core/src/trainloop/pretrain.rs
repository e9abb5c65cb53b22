use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;

use crate::augment::{keyed_rng, make_views, mix_batch, sample_lambda, Permutation};
use crate::data::{batches, Dataset};
use crate::diffcore::Tape;
use crate::error::{Error, Result};
use crate::eval::{default_k, knn_evaluate, linear_probe, redundancy_diagnostic, FeatureBank, ProbeConfig, Voting};
use crate::losses::{step_objective, LossBreakdown, Objective};
use crate::model::ModelParams;
use crate::trainloop::checkpoint::Checkpoint;
use crate::trainloop::config::RunConfig;
use crate::trainloop::optim::{adam_step, OptimState};

const MIX_STREAM: u64 = 0x4D49_5855;
const PROBE_STREAM: u64 = 0x4449_4147;
const INIT_STREAM: u64 = 0x494E_4954;
const DIAGNOSTIC_ROWS: usize = 512;

pub const METRICS_HEADER: &str = "step,epoch,lr,invariance,redundancy,l_bt,l_reg,total";
pub const EVAL_HEADER: &str = "epoch,knn_top1,linear_top1";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    /// 1-based global step.
    pub step: usize,
    /// 1-based epoch.
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step, self.epoch, self.lr, l.invariance, l.redundancy, l.l_bt, l.l_reg, l.total
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRecord {
    pub epoch: usize,
    pub knn_top1: f64,
    /// Only computed after the final epoch.
    pub linear_top1: Option<f64>,
}

impl EvalRecord {
    pub fn csv_row(&self) -> String {
        let lin = self.linear_top1.map(|v| v.to_string()).unwrap_or_default();
        format!("{},{},{lin}", self.epoch, self.knn_top1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    /// Per-step losses averaged over the epoch.
    pub mean: LossBreakdown,
    /// Mean |off-diagonal| of the embedding self-correlation on a fixed
    /// probe subset of the training set.
    pub offdiag_mean: f64,
    pub diag_mean: f64,
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub params: ModelParams,
    pub optim: OptimState,
    pub steps: Vec<StepMetrics>,
    pub evals: Vec<EvalRecord>,
    pub epochs: Vec<EpochSummary>,
}

impl RunArtifacts {
    pub fn final_knn(&self) -> Option<f64> {
        self.evals.last().map(|e| e.knn_top1)
    }
}

/// Events reported while training.
pub enum Progress<'a> {
    Epoch(&'a EpochSummary),
    Eval(&'a EvalRecord),
}

pub fn pretrain(cfg: &RunConfig, train: &Dataset, test: Option<&Dataset>, out: Option<&Path>) -> Result<RunArtifacts> {
    pretrain_with(cfg, train, test, out, |_| {})
}

/// Trains from a fresh initialization keyed by `cfg.seed`.
///
/// With `out` set, `metrics.csv`, `eval.csv`, `config.resolved.toml` and a
/// checkpoint per evaluation point are written there. k-NN accuracy is
/// measured on `test` (train features as the bank) every `eval_every`
/// epochs and after the last one.
pub fn pretrain_with(
    cfg: &RunConfig,
    train: &Dataset,
    test: Option<&Dataset>,
    out: Option<&Path>,
    mut progress: impl FnMut(Progress<'_>),
) -> Result<RunArtifacts> {
    cfg.validate()?;
    if let Some(t) = test {
        if t.dim() != train.dim() || t.meta.class_count != train.meta.class_count {
            return Err(Error::dim("pretrain", "train and test splits differ in width or classes"));
        }
    }
    let model_cfg = cfg.model_config(train.dim());
    let mut params = ModelParams::init(&model_cfg, crate::augment::stream_seed(&[INIT_STREAM, cfg.seed]))?;
    let mut optim = OptimState::new(params.tensors());
    let schedule = cfg.schedule();
    let weights = cfg.loss_weights();
    let aug = cfg.augment();
    let shape = train.meta.shape;
    let seed = cfg.seed;

    let diag_rows = {
        let n = train.len().min(DIAGNOSTIC_ROWS);
        let mut idx = sample(&mut keyed_rng(&[PROBE_STREAM, seed]), train.len(), n).into_vec();
        idx.sort_unstable();
        train.images.select_rows(&idx)?
    };

    let mut writers = match out {
        Some(dir) => Some(OutWriters::create(dir, cfg)?),
        None => None,
    };

    let mut steps = Vec::new();
    let mut evals = Vec::new();
    let mut epochs = Vec::new();
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        let plan = batches(train.len(), cfg.batch_size, epoch, seed)?;
        let nb = plan.len() as f64;
        let mut sum = LossBreakdown::default();
        for (b, idx) in plan.iter().enumerate() {
            step += 1;
            let blowup = |detail: String| Error::NonFiniteLoss {
                step,
                epoch,
                batch: b,
                detail,
            };
            let lr = schedule.lr_at((epoch - 1) as f64 + b as f64 / nb)?;
            let images = train.images.select_rows(idx)?;
            let pair = make_views(&images, idx, shape, epoch, seed, &aug)?;
            let mixed = if cfg.objective == Objective::Infonce {
                None
            } else {
                let mut rng = keyed_rng(&[MIX_STREAM, seed, epoch as u64, b as u64]);
                let lambda = sample_lambda(cfg.alpha, &mut rng)?;
                let perm = Permutation::random(idx.len(), &mut rng);
                Some(mix_batch(&pair, lambda, perm)?)
            };

            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let guard = |e: Error| if e.is_numeric_blowup() { blowup(e.to_string()) } else { e };
            let loss = step_objective(&mut tape, &bound, &pair.y_a, &pair.y_b, mixed.as_ref(), cfg.objective, &weights)
                .map_err(guard)?;
            let l = loss.breakdown;
            if ![l.invariance, l.redundancy, l.l_bt, l.l_reg, l.total].iter().all(|v| v.is_finite()) {
                return Err(blowup(format!("{l:?}")));
            }
            tape.backward(loss.total).map_err(guard)?;
            let grads = bound.grads(&tape)?;
            adam_step(&mut params.tensors_mut(), &grads, &mut optim, lr, cfg.weight_decay).map_err(guard)?;

            let m = StepMetrics { step, epoch, lr, loss: l };
            if let Some(w) = writers.as_mut() {
                w.step(&m)?;
            }
            sum.invariance += l.invariance;
            sum.redundancy += l.redundancy;
            sum.l_bt += l.l_bt;
            sum.l_reg += l.l_reg;
            sum.total += l.total;
            steps.push(m);
        }
        let (offdiag_mean, diag_mean) = redundancy_diagnostic(&params.embed(&diag_rows)?)?;
        let summary = EpochSummary {
            epoch,
            mean: LossBreakdown {
                invariance: sum.invariance / nb,
                redundancy: sum.redundancy / nb,
                l_bt: sum.l_bt / nb,
                l_reg: sum.l_reg / nb,
                total: sum.total / nb,
            },
            offdiag_mean,
            diag_mean,
        };
        progress(Progress::Epoch(&summary));
        epochs.push(summary);

        let last = epoch == cfg.epochs;
        if let Some(test) = test.filter(|_| last || epoch % cfg.eval_every == 0) {
            let record = evaluate(cfg, &params, train, test, epoch, last)?;
            progress(Progress::Eval(&record));
            if let Some(w) = writers.as_mut() {
                w.eval(&record)?;
                let ck = Checkpoint {
                    params: params.clone(),
                    optim: optim.clone(),
                };
                ck.save(&w.dir.join(format!("checkpoint_e{epoch:04}.bin")))?;
            }
            evals.push(record);
        }
        if let Some(w) = writers.as_mut() {
            w.flush()?;
        }
    }
    if let Some(w) = writers.as_mut() {
        let ck = Checkpoint {
            params: params.clone(),
            optim: optim.clone(),
        };
        ck.save(&w.dir.join("checkpoint_final.bin"))?;
    }
    Ok(RunArtifacts {
        params,
        optim,
        steps,
        evals,
        epochs,
    })
}

fn evaluate(
    cfg: &RunConfig,
    params: &ModelParams,
    train: &Dataset,
    test: &Dataset,
    epoch: usize,
    with_probe: bool,
) -> Result<EvalRecord> {
    let train_f = params.features(&train.images)?;
    let test_f = params.features(&test.images)?;
    let classes = train.meta.class_count;
    let bank = FeatureBank::new(&train_f, train.labels.clone(), classes)?;
    let queries = FeatureBank::new(&test_f, test.labels.clone(), classes)?;
    let k = cfg.knn_k.unwrap_or_else(|| default_k(bank.len())).min(bank.len());
    let knn_top1 = knn_evaluate(&bank, &queries, k, Voting::Weighted { temperature: cfg.knn_temp })?;
    let linear_top1 = if with_probe && classes >= 2 {
        let probe = ProbeConfig {
            seed: cfg.seed,
            ..ProbeConfig::default()
        };
        Some(linear_probe(&train_f, &train.labels, &test_f, &test.labels, classes, &probe)?)
    } else {
        None
    };
    Ok(EvalRecord {
        epoch,
        knn_top1,
        linear_top1,
    })
}

struct OutWriters {
    dir: std::path::PathBuf,
    metrics: BufWriter<File>,
    eval: BufWriter<File>,
}

impl OutWriters {
    fn create(dir: &Path, cfg: &RunConfig) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let resolved = dir.join("config.resolved.toml");
        std::fs::write(&resolved, cfg.to_toml()).map_err(|e| Error::io(&resolved, e))?;
        let open = |name: &str, header: &str| -> Result<BufWriter<File>> {
            let path = dir.join(name);
            let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
            writeln!(w, "{header}").map_err(|e| Error::io(&path, e))?;
            Ok(w)
        };
        Ok(OutWriters {
            dir: dir.to_path_buf(),
            metrics: open("metrics.csv", METRICS_HEADER)?,
            eval: open("eval.csv", EVAL_HEADER)?,
        })
    }

    fn step(&mut self, m: &StepMetrics) -> Result<()> {
        writeln!(self.metrics, "{}", m.csv_row()).map_err(|e| Error::io(self.dir.join("metrics.csv"), e))
    }

    fn eval(&mut self, r: &EvalRecord) -> Result<()> {
        writeln!(self.eval, "{}", r.csv_row()).map_err(|e| Error::io(self.dir.join("eval.csv"), e))
    }

    fn flush(&mut self) -> Result<()> {
        self.metrics.flush().map_err(|e| Error::io(self.dir.join("metrics.csv"), e))?;
        self.eval.flush().map_err(|e| Error::io(self.dir.join("eval.csv"), e))
    }
}

