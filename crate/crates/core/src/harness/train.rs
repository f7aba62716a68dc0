use std::fmt::Write as _;
use std::path::Path;

use crate::data::rng::SplitMix64;
use crate::data::{load_split, DatasetManifest, Split};
use crate::diff::Bindings;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{bind_params, init_params, SegModel};
use crate::optim::{sharpmin_step, Optimizer, SharpMinConfig};
use crate::uncertainty::UncertaintyState;

use super::config::{PlateauConfig, RunConfig};
use super::objective::{prepare_all, Objective, PreparedCase, Targets};

/// One epoch of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub losses: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub lr: f64,
    pub grad_evals: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub loss_names: Vec<String>,
    pub sigma_names: Vec<String>,
    pub rows: Vec<EpochRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss");
        for n in &self.loss_names {
            let _ = write!(out, ",loss_{n}");
        }
        for n in &self.sigma_names {
            let _ = write!(out, ",sigma2_{n}");
        }
        out.push_str(",lr,grad_evals\n");
        for r in &self.rows {
            let _ = write!(out, "{},{},{}", r.epoch, r.train_loss, r.val_loss);
            for v in r.losses.iter().chain(&r.sigma2) {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{},{}", r.lr, r.grad_evals);
        }
        out
    }

    pub fn total_grad_evals(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.grad_evals)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: SegModel,
    pub last: SegModel,
    pub log: TrainLog,
    /// Final noise parameters in uncertainty mode.
    pub uncertainty: Option<UncertaintyState>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Settings shared by segmentation training and distillation.
pub(crate) struct FitSettings<'a> {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub sharpmin: SharpMinConfig,
    pub plateau: &'a PlateauConfig,
    pub loss_names: Vec<String>,
    pub sigma_names: Vec<String>,
}

pub(crate) struct FitResult {
    pub best: Vec<Grid>,
    pub last: Vec<Grid>,
    pub log: TrainLog,
    pub best_epoch: usize,
    pub best_val: f64,
}

fn divergence(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { op, .. } => Error::Divergence {
            epoch,
            what: op.to_string(),
        },
        other => other,
    }
}

/// Generic minibatch loop: shuffled batches, optional sharpness-aware
/// steps, plateau scheduling on validation loss, and best-epoch tracking.
///
/// `batch_loss(params, batch, step_seed)` returns the total, the per-loss
/// values and the gradients. `val_loss(params)` returns the validation
/// objective. The trailing `sigma_names.len()` parameters are log-variances.
pub(crate) fn fit<B, V>(
    mut s: FitSettings<'_>,
    mut params: Vec<Grid>,
    n_train: usize,
    batch_loss: B,
    val_loss: V,
) -> Result<FitResult>
where
    B: Fn(&[Grid], &[usize], u64) -> Result<(f64, Vec<f64>, Vec<Grid>)>,
    V: Fn(&[Grid]) -> Result<f64>,
{
    if n_train == 0 {
        return Err(Error::Dataset("training split is empty".into()));
    }
    let root = SplitMix64::new(s.seed);
    let mut order_rng = root.fork(1);
    let mut step_rng = root.fork(2);
    let mut scheduler = s.plateau.scheduler()?;
    let mut order: Vec<usize> = (0..n_train).collect();
    let n_sigma = s.sigma_names.len();
    let mut grad_evals = 0u64;
    let mut rows = Vec::with_capacity(s.epochs);
    let mut best = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;

    for epoch in 1..=s.epochs {
        order_rng.shuffle(&mut order);
        let lr = s.optimizer.lr();
        let mut total = 0.0;
        let mut per_loss = vec![0.0; s.loss_names.len()];
        let mut batches = 0usize;
        for batch in order.chunks(s.batch_size) {
            let step_seed = step_rng.next_u64();
            let mut first_terms: Option<Vec<f64>> = None;
            let outcome = sharpmin_step(
                &mut params,
                |p| {
                    let (value, terms, grads) = batch_loss(p, batch, step_seed)?;
                    if !value.is_finite() {
                        return Err(Error::NonFinite { node: 0, op: "loss" });
                    }
                    first_terms.get_or_insert(terms);
                    Ok((value, grads))
                },
                &mut s.optimizer,
                &s.sharpmin,
            )
            .map_err(|e| divergence(epoch, e))?;
            grad_evals += outcome.grad_evals as u64;
            total += outcome.loss;
            for (acc, v) in per_loss.iter_mut().zip(first_terms.unwrap_or_default()) {
                *acc += v;
            }
            batches += 1;
        }
        if params.iter().any(|p| !p.all_finite()) {
            return Err(Error::Divergence {
                epoch,
                what: "parameters".into(),
            });
        }
        let val = val_loss(&params).map_err(|e| divergence(epoch, e))?;
        if !val.is_finite() {
            return Err(Error::Divergence {
                epoch,
                what: "validation loss".into(),
            });
        }
        if val < best_val {
            best_val = val;
            best_epoch = epoch;
            best.clone_from(&params);
        }
        let sigma2 = params[params.len() - n_sigma..].iter().map(|p| p.item().exp()).collect();
        rows.push(EpochRow {
            epoch,
            train_loss: total / batches as f64,
            val_loss: val,
            losses: per_loss.iter().map(|v| v / batches as f64).collect(),
            sigma2,
            lr,
            grad_evals,
        });
        let mult = scheduler.step(val);
        if mult != 1.0 {
            s.optimizer.set_lr(lr * mult)?;
        }
    }
    Ok(FitResult {
        best,
        last: params,
        log: TrainLog {
            loss_names: s.loss_names,
            sigma_names: s.sigma_names,
            rows,
        },
        best_epoch,
        best_val,
    })
}

pub(crate) fn load_prepared(cfg: &RunConfig, split: Split) -> Result<Vec<PreparedCase>> {
    let manifest = DatasetManifest::load(&cfg.data)?;
    let mut cases = load_split(&cfg.data, &manifest, split)?;
    let limit = match split {
        Split::Train => cfg.train_limit,
        Split::Val => cfg.val_limit,
        Split::Test => None,
    };
    if let Some(n) = limit {
        cases.truncate(n);
    }
    if cases.is_empty() {
        return Err(Error::Dataset(format!("split {split} is empty")));
    }
    prepare_all(cases)
}

/// Validation objective with the current parameters: per-loss means over the
/// split, combined like the training objective.
pub fn validation_loss(
    objective: &Objective,
    model: &SegModel,
    log_vars: &[f64],
    val: &[PreparedCase],
) -> Result<f64> {
    let mut sums = vec![0.0; objective.kinds.len()];
    for case in val {
        let logits = model.logits(&case.case.image, &case.case.prompt)?;
        let prob = logits.map(crate::diff::sigmoid);
        for (s, v) in sums.iter_mut().zip(objective.term_values(&prob, &case.targets)?) {
            *s += v;
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / val.len() as f64).collect();
    objective.total_from_values(&means, log_vars)
}

/// Trains a model of `cfg.width` on prepared cases.
pub fn train_on(cfg: &RunConfig, train: &[PreparedCase], val: &[PreparedCase]) -> Result<TrainOutcome> {
    cfg.validate()?;
    let objective = Objective::new(cfg.loss_mode, cfg.active_losses()?, cfg.loss_config);
    let width = cfg.width;
    let mut params = init_params(cfg.seed, width)?;
    let n_model = params.len();
    let n_sigma = objective.n_log_vars();
    params.extend((0..n_sigma).map(|_| Grid::scalar(0.0)));
    let optimizer = Optimizer::new(cfg.optimizer, cfg.lr, cfg.adamw, &params)?;
    let noisy = cfg.noisy_loss;

    let batch_loss = |p: &[Grid], batch: &[usize], step_seed: u64| -> Result<(f64, Vec<f64>, Vec<Grid>)> {
        let cases: Vec<&PreparedCase> = batch.iter().map(|&i| &train[i]).collect();
        let noise: Option<Vec<Targets>> = noisy.map(|_| {
            let mut rng = SplitMix64::new(step_seed);
            cases.iter().map(|c| Targets::random(c.case.mask.shape(), &mut rng)).collect()
        });
        let bg = objective.build(width, &cases, noisy.zip(noise.as_deref()))?;
        let mut b = Bindings::new();
        bind_params(&bg.params, &p[..n_model], &mut b);
        for (&node, s) in bg.log_vars.iter().zip(&p[n_model..]) {
            b.bind(node, s.clone());
        }
        let trace = bg.graph.forward(&b)?;
        let terms = bg.losses.iter().map(|&n| trace.value(n).item()).collect();
        let grads = bg.graph.backward(&trace, &bg.wrt())?;
        Ok((trace.output_value(), terms, grads))
    };
    let val_loss = |p: &[Grid]| -> Result<f64> {
        let model = SegModel {
            width,
            seed: cfg.seed,
            params: p[..n_model].to_vec(),
        };
        let log_vars: Vec<f64> = p[n_model..].iter().map(Grid::item).collect();
        validation_loss(&objective, &model, &log_vars, val)
    };

    let settings = FitSettings {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        optimizer,
        sharpmin: cfg.sharpmin,
        plateau: &cfg.plateau,
        loss_names: objective.loss_names(),
        sigma_names: if n_sigma > 0 { objective.loss_names() } else { Vec::new() },
    };
    let fit = fit(settings, params, train.len(), batch_loss, val_loss)?;
    let uncertainty = if n_sigma > 0 {
        Some(UncertaintyState::from_log_vars(
            fit.last[n_model..].iter().map(Grid::item).collect(),
        )?)
    } else {
        None
    };
    let as_model = |p: &[Grid]| SegModel {
        width,
        seed: cfg.seed,
        params: p[..n_model].to_vec(),
    };
    Ok(TrainOutcome {
        model: as_model(&fit.best),
        last: as_model(&fit.last),
        log: fit.log,
        uncertainty,
        best_epoch: fit.best_epoch,
        best_val_loss: fit.best_val,
    })
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TEACHER_FILE: &str = "teacher.ckpt";
pub const LOG_FILE: &str = "train_log.csv";

pub(crate) fn write_outputs(out: &Path, outcome: &TrainOutcome, ckpt: &str, log: &str) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    outcome.model.save(&out.join(ckpt))?;
    let path = out.join(log);
    std::fs::write(&path, outcome.log.to_csv()).map_err(|e| Error::io(&path, e))
}

/// Loads the dataset named by `cfg`, trains, and writes the best checkpoint
/// and log to `cfg.out` when set. With distillation enabled a teacher of
/// `cfg.distill.teacher_width` is trained first and the returned outcome is
/// the distilled student.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_cases = load_prepared(cfg, Split::Train)?;
    let val_cases = load_prepared(cfg, Split::Val)?;
    if !cfg.distill.enabled {
        let outcome = train_on(cfg, &train_cases, &val_cases)?;
        if let Some(out) = &cfg.out {
            write_outputs(out, &outcome, CHECKPOINT_FILE, LOG_FILE)?;
        }
        return Ok(outcome);
    }
    let teacher_cfg = RunConfig {
        width: cfg.distill.teacher_width,
        ..cfg.clone()
    };
    let teacher = train_on(&teacher_cfg, &train_cases, &val_cases)?;
    let student = super::distill::distill_on(&teacher.model, cfg, &train_cases, &val_cases)?;
    if let Some(out) = &cfg.out {
        write_outputs(out, &teacher, TEACHER_FILE, "teacher_log.csv")?;
        write_outputs(out, &student, CHECKPOINT_FILE, LOG_FILE)?;
    }
    Ok(student)
}

