//! Teacher to student logit distillation as a phase after teacher training.

use std::path::Path;

use crate::data::Split;
use crate::diff::{Bindings, Graph};
use crate::error::Result;
use crate::grid::Grid;
use crate::model::{bind_params, build_distill, build_logits, distill_loss, init_params, param_shapes, ParamNodes, SegModel, PARAM_NAMES};

use super::config::RunConfig;
use super::objective::PreparedCase;
use super::train::{fit, load_prepared, write_outputs, FitSettings, TrainOutcome, CHECKPOINT_FILE, LOG_FILE};
use crate::optim::Optimizer;

fn teacher_logits(teacher: &SegModel, cases: &[PreparedCase]) -> Result<Vec<Grid>> {
    cases.iter().map(|c| teacher.logits(&c.case.image, &c.case.prompt)).collect()
}

/// Trains a fresh student of `cfg.width` for `cfg.distill.epochs` epochs on
/// the mean squared logit difference to `teacher`.
pub fn distill_on(
    teacher: &SegModel,
    cfg: &RunConfig,
    train: &[PreparedCase],
    val: &[PreparedCase],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_targets = teacher_logits(teacher, train)?;
    let val_targets = teacher_logits(teacher, val)?;
    let width = cfg.width;
    let params = init_params(cfg.seed, width)?;
    let optimizer = Optimizer::new(cfg.optimizer, cfg.lr, cfg.adamw, &params)?;

    let batch_loss = |p: &[Grid], batch: &[usize], _seed: u64| -> Result<(f64, Vec<f64>, Vec<Grid>)> {
        let mut g = Graph::new();
        let nodes = ParamNodes(
            param_shapes(width)
                .iter()
                .zip(PARAM_NAMES)
                .map(|(s, name)| g.leaf(name, s))
                .collect(),
        );
        let mut terms = Vec::with_capacity(batch.len());
        for &i in batch {
            let (h, w) = train[i].hw();
            let x = g.constant(train[i].input.clone());
            let logits = build_logits(&mut g, x, &nodes, h, w);
            let t = g.constant(train_targets[i].clone());
            terms.push(build_distill(&mut g, logits, t));
        }
        let sum = terms.into_iter().reduce(|a, b| g.add(a, b)).expect("non-empty batch");
        let total = g.scale(sum, 1.0 / batch.len() as f64);
        g.set_output(total);
        let mut b = Bindings::new();
        bind_params(&nodes, p, &mut b);
        let (value, grads) = g.value_and_grad(&b, &nodes.0)?;
        Ok((value, vec![value], grads))
    };
    let val_loss = |p: &[Grid]| -> Result<f64> {
        let student = SegModel {
            width,
            seed: cfg.seed,
            params: p.to_vec(),
        };
        let mut sum = 0.0;
        for (case, t) in val.iter().zip(&val_targets) {
            sum += distill_loss(t, &student.logits(&case.case.image, &case.case.prompt)?)?;
        }
        Ok(sum / val.len() as f64)
    };

    let settings = FitSettings {
        epochs: cfg.distill.epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        optimizer,
        sharpmin: cfg.sharpmin,
        plateau: &cfg.plateau,
        loss_names: vec!["distill".into()],
        sigma_names: Vec::new(),
    };
    let fit = fit(settings, params, train.len(), batch_loss, val_loss)?;
    let as_model = |p: Vec<Grid>| SegModel {
        width,
        seed: cfg.seed,
        params: p,
    };
    Ok(TrainOutcome {
        model: as_model(fit.best),
        last: as_model(fit.last),
        log: fit.log,
        uncertainty: None,
        best_epoch: fit.best_epoch,
        best_val_loss: fit.best_val,
    })
}

/// Loads a teacher checkpoint and distills it into a student on the dataset
/// named by `cfg`, writing the student to `cfg.out` when set.
pub fn distill(teacher_path: &Path, cfg: &RunConfig) -> Result<TrainOutcome> {
    let teacher = SegModel::load(teacher_path)?;
    let train = load_prepared(cfg, Split::Train)?;
    let val = load_prepared(cfg, Split::Val)?;
    let student = distill_on(&teacher, cfg, &train, &val)?;
    if let Some(out) = &cfg.out {
        write_outputs(out, &student, CHECKPOINT_FILE, LOG_FILE)?;
    }
    Ok(student)
}
