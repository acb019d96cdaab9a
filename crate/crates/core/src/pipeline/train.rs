use log::debug;

use crate::data::{BatchStream, DomainDataset, SplitPlan, Split};
use crate::error::{Error, Result};
use crate::loss;
use crate::nn::{self, AdamConfig, AdamState, ArchSpec, Matrix, ParamVector};
use crate::seed;
use crate::trajectory::{Checkpoint, CheckpointStore, EvalRecord, TrajectoryLog};

const STREAM_INIT: u64 = 0x696e_6974;
const STREAM_BATCHES: u64 = 0x6261_7463;

/// What the trained network minimizes.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// Cross-entropy against the true labels.
    HardLabel,
    /// Tempered cross-entropy against a frozen teacher's predictions on the
    /// same batch; labels are never used for the gradient.
    Distill {
        teacher_arch: &'a ArchSpec,
        teacher: &'a ParamVector,
        tau: f64,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct TrainSettings {
    pub iterations: u64,
    pub eval_every: u64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub checkpoint_every: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn accuracy(logits: &Matrix, labels: &[usize]) -> f64 {
    let correct = logits
        .iter_rows()
        .zip(labels)
        .filter(|(row, &label)| argmax(row) == label)
        .count();
    correct as f64 / labels.len() as f64
}

fn check_eval_set(inputs: &Matrix, labels: &[usize]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::Domain("evaluation needs at least one example".into()));
    }
    if inputs.rows() != labels.len() {
        return Err(Error::Config(format!(
            "{} inputs but {} labels",
            inputs.rows(),
            labels.len()
        )));
    }
    Ok(())
}

/// Mean hard-label cross-entropy and argmax accuracy.
pub fn evaluate(arch: &ArchSpec, params: &ParamVector, inputs: &Matrix, labels: &[usize]) -> Result<Evaluation> {
    check_eval_set(inputs, labels)?;
    let logits = nn::forward(arch, params, inputs)?;
    let losses = logits
        .iter_rows()
        .zip(labels)
        .map(|(z, &y)| loss::hard_label_loss(z, y))
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        loss: loss::batch_mean_loss(&losses)?,
        accuracy: accuracy(&logits, labels),
    })
}

/// Mean distillation loss against precomputed teacher logits, plus accuracy
/// against the true labels.
pub fn evaluate_distill(
    arch: &ArchSpec,
    params: &ParamVector,
    inputs: &Matrix,
    labels: &[usize],
    teacher_logits: &Matrix,
    tau: f64,
) -> Result<Evaluation> {
    check_eval_set(inputs, labels)?;
    let logits = nn::forward(arch, params, inputs)?;
    let losses = logits
        .iter_rows()
        .zip(teacher_logits.iter_rows())
        .map(|(zs, zt)| loss::kd_loss(zs, zt, tau))
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        loss: loss::batch_mean_loss(&losses)?,
        accuracy: accuracy(&logits, labels),
    })
}

/// Runs `settings.iterations` Adam steps on source-train batches.
///
/// The initialization is stored as iteration 0, then every
/// `checkpoint_every`-th iteration and always the last one. Validation on the
/// source-val split runs every `eval_every` iterations, scored with the
/// training objective's loss. Everything is a pure function of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn train_model<S: CheckpointStore + ?Sized>(
    arch: &ArchSpec,
    objective: Objective<'_>,
    dataset: &DomainDataset,
    plan: &SplitPlan,
    settings: &TrainSettings,
    seed: u64,
    store: &mut S,
) -> Result<TrajectoryLog> {
    arch.validate()?;
    settings.adam.validate()?;
    if settings.eval_every == 0 || settings.checkpoint_every == 0 {
        return Err(Error::Config("eval_every and checkpoint_every must be positive".into()));
    }
    if let Objective::Distill { tau, teacher_arch, .. } = objective {
        if tau.is_nan() || tau <= 0.0 {
            return Err(Error::Domain(format!("temperature must be positive, got {tau}")));
        }
        if teacher_arch.num_classes != arch.num_classes {
            return Err(Error::Config("teacher and student disagree on the class count".into()));
        }
    }

    let mut params = nn::init_params(arch, &mut seed::rng(seed, &[STREAM_INIT]));
    store.write(&Checkpoint::new(0, params.clone()))?;
    let mut log = TrajectoryLog::new();
    if settings.iterations == 0 {
        return Ok(log);
    }

    let (val_inputs, val_labels) = dataset.gather(&plan.refs(Split::Val));
    let val_teacher_logits = match objective {
        Objective::Distill { teacher_arch, teacher, .. } if !val_labels.is_empty() => {
            Some(nn::forward(teacher_arch, teacher, &val_inputs)?)
        }
        _ => None,
    };

    let mut adam = AdamState::new(settings.adam, params.len());
    let mut batches = BatchStream::new(dataset, plan, settings.batch_size, seed::derive(seed, &[STREAM_BATCHES]))?;
    for iteration in 1..=settings.iterations {
        let batch = batches.next().expect("batch stream is endless");
        if let Some(leak) = batch.refs.iter().find(|r| r.domain == plan.target) {
            return Err(Error::Domain(format!(
                "target-domain example {leak:?} reached a training batch"
            )));
        }
        let weights = params.to_f64();
        let tape = nn::forward_tape(arch, &weights, &batch.inputs)?;
        let logits = tape.logits();
        let b = batch.labels.len();
        let mut dlogits = Matrix::zeros(b, arch.num_classes);
        let mut total = 0.0;
        match objective {
            Objective::HardLabel => {
                for (i, (z, &y)) in logits.iter_rows().zip(&batch.labels).enumerate() {
                    total += loss::hard_label_loss(z, y)?;
                    for (d, g) in dlogits.row_mut(i).iter_mut().zip(loss::hard_label_grad(z, y)?) {
                        *d = g / b as f64;
                    }
                }
            }
            Objective::Distill { teacher_arch, teacher, tau } => {
                let teacher_logits = nn::forward(teacher_arch, teacher, &batch.inputs)?;
                for (i, (zs, zt)) in logits.iter_rows().zip(teacher_logits.iter_rows()).enumerate() {
                    total += loss::kd_loss(zs, zt, tau)?;
                    for (d, g) in dlogits.row_mut(i).iter_mut().zip(loss::kd_loss_grad(zs, zt, tau)?) {
                        *d = g / b as f64;
                    }
                }
            }
        }
        let train_loss = total / b as f64;
        if !train_loss.is_finite() {
            return Err(Error::NonFinite {
                iteration,
                what: "training loss",
                value: train_loss,
            });
        }
        let grad = nn::backward_tape(arch, &weights, &tape, &dlogits)?;
        adam.step(&mut params, &grad).map_err(|e| match e {
            Error::NonFinite { what, value, .. } => Error::NonFinite { iteration, what, value },
            other => other,
        })?;
        if !params.is_finite() {
            return Err(Error::NonFinite {
                iteration,
                what: "parameter",
                value: params.as_slice().iter().find(|v| !v.is_finite()).copied().unwrap_or(f32::NAN) as f64,
            });
        }

        if iteration % settings.checkpoint_every == 0 || iteration == settings.iterations {
            store.write(&Checkpoint::new(iteration, params.clone()))?;
        }
        if iteration % settings.eval_every == 0 {
            let eval = match (&objective, &val_teacher_logits) {
                (Objective::Distill { tau, .. }, Some(t)) => {
                    evaluate_distill(arch, &params, &val_inputs, &val_labels, t, *tau)?
                }
                _ => evaluate(arch, &params, &val_inputs, &val_labels)?,
            };
            if !eval.loss.is_finite() {
                return Err(Error::NonFinite {
                    iteration,
                    what: "validation loss",
                    value: eval.loss,
                });
            }
            debug!(
                "iteration {iteration}: train loss {train_loss:.5}, val loss {:.5}, val acc {:.4}",
                eval.loss, eval.accuracy
            );
            log.push(EvalRecord {
                iteration,
                val_loss: eval.loss,
                val_accuracy: eval.accuracy,
            })?;
        }
    }
    Ok(log)
}
