//! Glue for running and scoring whole tasks. This is the only place that
//! reads the hidden-label oracle.

use std::fmt::Write as _;

use crate::config::TrainConfig;
use crate::data::{SyntheticSpec, Task, UnlabeledSet};
use crate::ensemble::EnsembleModel;
use crate::error::{Error, Result};
use crate::label_embedding::{ClassId, ClassSplit};
use crate::linalg::Matrix;
use crate::predictor::{evaluate, predict_gzsl, predict_zsl, EvalMode, EvalReport};
use crate::progressive::{train, RoundView, RunOutput};

/// Settings for the small synthetic task: 10 members, 8-dimensional
/// projections, 10 refinement rounds, an extractor with one hidden layer as
/// wide as the input, one hidden head layer of width 64, and three epochs of
/// seen-only training before the first selection.
pub fn desk_config(spec: &SyntheticSpec) -> TrainConfig {
    TrainConfig {
        k: 10,
        h: Some(8),
        max_iter: 10,
        extractor_widths: vec![spec.feature_dim],
        head_hidden: vec![64],
        init_epochs: 3,
        seed: spec.seed,
        ..TrainConfig::default()
    }
}

/// Hidden instances and their true labels, restricted to unseen classes in
/// zero-shot mode.
pub fn test_split(task: &Task, mode: EvalMode) -> Result<(Matrix, Vec<ClassId>)> {
    let (_, unlabeled) = task.dataset.partition();
    let labels = task.oracle.labels_for(&unlabeled.ids)?;
    let keep: Vec<usize> = (0..labels.len())
        .filter(|&i| mode == EvalMode::Gzsl || task.split.is_unseen(labels[i]))
        .collect();
    let rows: Vec<f64> = keep.iter().flat_map(|&i| unlabeled.features[i].iter().copied()).collect();
    let x = Matrix::from_vec(keep.len(), unlabeled.dim, rows)?;
    Ok((x, keep.iter().map(|&i| labels[i]).collect()))
}

pub fn predict(model: &EnsembleModel, x: &Matrix, split: &ClassSplit, mode: EvalMode, seen_offset: f64) -> Result<Vec<ClassId>> {
    match mode {
        EvalMode::Zsl => predict_zsl(model, x, split.unseen()),
        EvalMode::Gzsl => predict_gzsl(model, x, split, seen_offset),
    }
}

pub fn evaluate_model(model: &EnsembleModel, task: &Task, mode: EvalMode, seen_offset: f64) -> Result<EvalReport> {
    let (x, truth) = test_split(task, mode)?;
    if truth.is_empty() {
        return Err(Error::Data("no hidden instances to evaluate".into()));
    }
    let preds = predict(model, &x, &task.split, mode, seen_offset)?;
    evaluate(&preds, &truth, &task.split, mode)
}

/// Trains on the task, logging the oracle accuracy (per-class Top-1 in the
/// configured mode, or H for generalized runs) after every round.
pub fn train_task(config: &TrainConfig, task: &Task) -> Result<RunOutput> {
    let (labeled, unlabeled): (_, UnlabeledSet) = task.dataset.partition();
    let mode = if config.gzsl_mode { EvalMode::Gzsl } else { EvalMode::Zsl };
    let test = test_split(task, mode)?;
    let split = task.split.clone();
    let offset = config.seen_offset;
    let mut monitor = |round: &RoundView<'_>| -> Option<f64> {
        if test.1.is_empty() {
            return None;
        }
        let preds = predict(round.model, &test.0, &split, mode, offset).ok()?;
        let report = evaluate(&preds, &test.1, &split, mode).ok()?;
        Some(report.gzsl.map_or(report.per_class_top1, |g| g.harmonic))
    };
    train(config, &labeled, &unlabeled, &task.attributes, &task.split, &mut monitor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub label: String,
    pub report: EvalReport,
}

pub fn format_table(header: &str, rows: &[ResultRow]) -> String {
    let mut s = String::new();
    let gzsl = rows.iter().any(|r| r.report.gzsl.is_some());
    let _ = write!(s, "{header}\tper_class_top1\tmacc");
    if gzsl {
        s.push_str("\tu\ts\th");
    }
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{}\t{:.6}\t{:.6}", r.label, r.report.per_class_top1, r.report.macc);
        if let Some(g) = r.report.gzsl {
            let _ = write!(s, "\t{:.6}\t{:.6}\t{:.6}", g.unseen, g.seen, g.harmonic);
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    K,
    H,
}

/// Trains once per value of `param`, everything else fixed.
pub fn sweep(base: &TrainConfig, task: &Task, param: SweepParam, values: &[usize]) -> Result<Vec<ResultRow>> {
    let mode = if base.gzsl_mode { EvalMode::Gzsl } else { EvalMode::Zsl };
    values
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            match param {
                SweepParam::K => cfg.k = v,
                SweepParam::H => cfg.h = Some(v),
            }
            let out = train_task(&cfg, task)?;
            Ok(ResultRow { label: v.to_string(), report: evaluate_model(&out.model, task, mode, cfg.seen_offset)? })
        })
        .collect()
}

/// The full model against the single-classifier and no-projection variants.
pub fn ablate(base: &TrainConfig, task: &Task) -> Result<Vec<ResultRow>> {
    let mode = if base.gzsl_mode { EvalMode::Gzsl } else { EvalMode::Zsl };
    let variants = [
        ("full", TrainConfig { single_classifier: false, no_projection: false, ..base.clone() }),
        ("single_classifier", TrainConfig { single_classifier: true, no_projection: false, ..base.clone() }),
        ("no_projection", TrainConfig { single_classifier: false, no_projection: true, ..base.clone() }),
    ];
    variants
        .into_iter()
        .map(|(label, cfg)| {
            let out = train_task(&cfg, task)?;
            Ok(ResultRow { label: label.into(), report: evaluate_model(&out.model, task, mode, cfg.seen_offset)? })
        })
        .collect()
}
