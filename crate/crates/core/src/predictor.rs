//! Zero-shot and generalized zero-shot inference plus evaluation metrics.
//!
//! Every head votes only among the unseen classes of its own subset; the votes
//! are normalized by how many heads could have voted for each class. Ties are
//! always broken toward the smallest class id.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::ensemble::{class_scores, EnsembleModel};
use crate::error::{Error, Result};
use crate::label_embedding::{AttributeMatrix, ClassId, ClassSplit};
use crate::linalg::Matrix;

/// Argmax of `scores` over the classes in `subset`, smallest id on ties.
pub fn restricted_argmax(scores: &[f64], subset: &[ClassId]) -> Result<ClassId> {
    let mut best: Option<(ClassId, f64)> = None;
    for &c in subset {
        let s = *scores
            .get(c)
            .ok_or_else(|| Error::Argument(format!("class {} has no score", c + 1)))?;
        best = match best {
            Some((bc, bs)) if bs > s || (bs == s && bc < c) => Some((bc, bs)),
            _ => Some((c, s)),
        };
    }
    best.map(|(c, _)| c).ok_or_else(|| Error::Argument("empty class subset".into()))
}

/// Prediction of a single ensemble member, restricted to its subset.
pub fn classifier_predict(v: &[f64], projection: &Matrix, attrs: &AttributeMatrix, subset: &[ClassId]) -> Result<ClassId> {
    if subset.is_empty() {
        return Err(Error::Argument("empty class subset".into()));
    }
    restricted_argmax(&class_scores(v, projection, attrs)?, subset)
}

/// Normalized vote fractions over the unseen classes.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteTable {
    unseen: Vec<ClassId>,
    coverage: Vec<usize>,
    /// `raw[i][k]`: class chosen by member `k` for instance `i`.
    pub raw: Vec<Vec<ClassId>>,
    /// `phi[i][j]`: vote fraction of instance `i` for `unseen[j]`.
    pub phi: Vec<Vec<f64>>,
    /// `support[i][j]`: mean winning score among the members that voted `unseen[j]` (0 without votes).
    pub support: Vec<Vec<f64>>,
    /// Per-instance argmax of `phi`.
    pub predictions: Vec<ClassId>,
}

impl VoteTable {
    pub fn unseen(&self) -> &[ClassId] {
        &self.unseen
    }

    /// Number of subsets containing each unseen class, aligned with [`Self::unseen`].
    pub fn coverage(&self) -> &[usize] {
        &self.coverage
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn phi(&self, instance: usize, class: ClassId) -> Option<f64> {
        let j = self.unseen.binary_search(&class).ok()?;
        Some(self.phi[instance][j])
    }
}

/// Builds the vote table from each member's restricted prediction.
///
/// `raw_scores[i][k]`, when given, is the inner-product score of member `k`'s
/// chosen class and feeds [`VoteTable::support`].
pub fn ensemble_vote(
    raw: Vec<Vec<ClassId>>,
    raw_scores: Option<&[Vec<f64>]>,
    subsets: &[Vec<ClassId>],
    unseen: &[ClassId],
) -> Result<VoteTable> {
    let mut unseen = unseen.to_vec();
    unseen.sort_unstable();
    let position = |c: ClassId| unseen.binary_search(&c).ok();

    let mut coverage = vec![0usize; unseen.len()];
    for z in subsets {
        for &c in z {
            let j = position(c).ok_or_else(|| Error::Argument(format!("subset class {} is not unseen", c + 1)))?;
            coverage[j] += 1;
        }
    }
    if let Some(j) = coverage.iter().position(|&n| n == 0) {
        return Err(Error::Config(format!("unseen class {} is in no subset", unseen[j] + 1)));
    }

    let mut phi = Vec::with_capacity(raw.len());
    let mut support = Vec::with_capacity(raw.len());
    let mut predictions = Vec::with_capacity(raw.len());
    for (i, votes) in raw.iter().enumerate() {
        if votes.len() != subsets.len() {
            return Err(Error::Shape(format!("instance {i} has {} votes for {} members", votes.len(), subsets.len())));
        }
        let mut counts = vec![0usize; unseen.len()];
        let mut score_sum = vec![0.0; unseen.len()];
        for (k, &c) in votes.iter().enumerate() {
            if !subsets[k].contains(&c) {
                return Err(Error::Argument(format!("member {k} voted class {} outside its subset", c + 1)));
            }
            let j = position(c).unwrap();
            counts[j] += 1;
            if let Some(s) = raw_scores {
                score_sum[j] += s[i][k];
            }
        }
        let row: Vec<f64> = counts.iter().zip(&coverage).map(|(&n, &cov)| n as f64 / cov as f64).collect();
        let sup: Vec<f64> = counts
            .iter()
            .zip(&score_sum)
            .map(|(&n, &s)| if n == 0 { 0.0 } else { s / n as f64 })
            .collect();
        // strict comparison keeps the smallest id on ties
        let mut best = 0;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        predictions.push(unseen[best]);
        phi.push(row);
        support.push(sup);
    }
    Ok(VoteTable { unseen, coverage, raw, phi, support, predictions })
}

/// Runs every member on the batch and aggregates their votes.
pub fn vote(model: &EnsembleModel, x: &Matrix, unseen: &[ClassId]) -> Result<VoteTable> {
    let scores = model.scores_batch(x)?;
    let subsets = model.projections().subsets();
    let mut raw = Vec::with_capacity(x.rows());
    let mut raw_scores = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let mut picks = Vec::with_capacity(model.k());
        let mut vals = Vec::with_capacity(model.k());
        for (k, s) in scores.iter().enumerate() {
            let c = restricted_argmax(s.row(i), &subsets[k])?;
            picks.push(c);
            vals.push(s.get(i, c));
        }
        raw.push(picks);
        raw_scores.push(vals);
    }
    ensemble_vote(raw, Some(&raw_scores), subsets, unseen)
}

/// Zero-shot predictions restricted to the unseen classes.
pub fn predict_zsl(model: &EnsembleModel, x: &Matrix, unseen: &[ClassId]) -> Result<Vec<ClassId>> {
    Ok(vote(model, x, unseen)?.predictions)
}

/// Generalized scores over all classes: vote fractions for unseen classes and
/// the member-averaged inner product, minus `seen_offset`, for seen classes.
pub fn gzsl_score_table(model: &EnsembleModel, x: &Matrix, split: &ClassSplit, seen_offset: f64) -> Result<Vec<Vec<f64>>> {
    let table = vote(model, x, split.unseen())?;
    let scores = model.scores_batch(x)?;
    let k = model.k() as f64;
    let l = split.num_classes();
    let mut out = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let mut row = vec![0.0; l];
        for &c in split.seen() {
            row[c] = scores.iter().map(|s| s.get(i, c)).sum::<f64>() / k - seen_offset;
        }
        for (j, &c) in table.unseen().iter().enumerate() {
            row[c] = table.phi[i][j];
        }
        out.push(row);
    }
    Ok(out)
}

pub fn gzsl_scores(model: &EnsembleModel, x: &[f64], split: &ClassSplit, seen_offset: f64) -> Result<Vec<f64>> {
    let x = Matrix::from_vec(1, x.len(), x.to_vec())?;
    Ok(gzsl_score_table(model, &x, split, seen_offset)?.remove(0))
}

/// Index of the largest entry, smallest index on ties.
pub fn argmax(scores: &[f64]) -> ClassId {
    let mut best = 0;
    for c in 1..scores.len() {
        if scores[c] > scores[best] {
            best = c;
        }
    }
    best
}

pub fn predict_gzsl(model: &EnsembleModel, x: &Matrix, split: &ClassSplit, seen_offset: f64) -> Result<Vec<ClassId>> {
    Ok(gzsl_score_table(model, x, split, seen_offset)?.iter().map(|r| argmax(r)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Zsl,
    Gzsl,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GzslMetrics {
    /// Per-class Top-1 over unseen classes.
    pub unseen: f64,
    /// Per-class Top-1 over seen classes.
    pub seen: f64,
    /// Harmonic mean of the two.
    pub harmonic: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub per_class_top1: f64,
    pub macc: f64,
    pub gzsl: Option<GzslMetrics>,
    /// Classes of the evaluated group with no test instances.
    pub excluded: Vec<ClassId>,
    pub instances: usize,
}

pub fn harmonic_mean(u: f64, s: f64) -> f64 {
    if u + s > 0.0 {
        2.0 * u * s / (u + s)
    } else {
        0.0
    }
}

/// Mean per-class accuracy over `classes` having test instances, and the
/// classes without any.
fn per_class_top1(predictions: &[ClassId], truth: &[ClassId], classes: &[ClassId], l: usize) -> (f64, Vec<ClassId>) {
    let mut total = vec![0usize; l];
    let mut correct = vec![0usize; l];
    for (&p, &t) in predictions.iter().zip(truth) {
        total[t] += 1;
        if p == t {
            correct[t] += 1;
        }
    }
    let mut sum = 0.0;
    let mut present = 0;
    let mut excluded = Vec::new();
    for &c in classes {
        if total[c] == 0 {
            excluded.push(c);
        } else {
            sum += correct[c] as f64 / total[c] as f64;
            present += 1;
        }
    }
    (if present == 0 { 0.0 } else { sum / present as f64 }, excluded)
}

pub fn evaluate(predictions: &[ClassId], truth: &[ClassId], split: &ClassSplit, mode: EvalMode) -> Result<EvalReport> {
    if predictions.len() != truth.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", predictions.len(), truth.len())));
    }
    let l = split.num_classes();
    if let Some(&bad) = truth.iter().chain(predictions).find(|&&c| c >= l) {
        return Err(Error::Label(format!("class {} outside 1..={l}", bad + 1)));
    }
    let correct = predictions.iter().zip(truth).filter(|(p, t)| p == t).count();
    let macc = if truth.is_empty() { 0.0 } else { correct as f64 / truth.len() as f64 };

    match mode {
        EvalMode::Zsl => {
            if let Some(&bad) = truth.iter().find(|&&c| !split.is_unseen(c)) {
                return Err(Error::Label(format!("zero-shot evaluation on seen class {}", bad + 1)));
            }
            let (top1, excluded) = per_class_top1(predictions, truth, split.unseen(), l);
            Ok(EvalReport { mode, per_class_top1: top1, macc, gzsl: None, excluded, instances: truth.len() })
        }
        EvalMode::Gzsl => {
            let all: Vec<ClassId> = (0..l).collect();
            let (top1, excluded) = per_class_top1(predictions, truth, &all, l);
            let (u, _) = per_class_top1(predictions, truth, split.unseen(), l);
            let (s, _) = per_class_top1(predictions, truth, split.seen(), l);
            Ok(EvalReport {
                mode,
                per_class_top1: top1,
                macc,
                gzsl: Some(GzslMetrics { unseen: u, seen: s, harmonic: harmonic_mean(u, s) }),
                excluded,
                instances: truth.len(),
            })
        }
    }
}

impl EvalReport {
    /// `metric=value` lines with six decimals.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.metrics() {
            writeln!(out, "{k}={v:.6}").unwrap();
        }
        out
    }

    pub fn metrics(&self) -> Vec<(&'static str, f64)> {
        let mut m = vec![("per_class_top1", self.per_class_top1), ("macc", self.macc)];
        if let Some(g) = self.gzsl {
            m.extend([("u", g.unseen), ("s", g.seen), ("h", g.harmonic)]);
        }
        m
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mode = match self.mode {
            EvalMode::Zsl => "zero-shot",
            EvalMode::Gzsl => "generalized zero-shot",
        };
        writeln!(out, "{mode} evaluation over {} instances", self.instances).unwrap();
        writeln!(out, "  per-class top-1 : {:.2}%", 100.0 * self.per_class_top1).unwrap();
        writeln!(out, "  multi-class acc : {:.2}%", 100.0 * self.macc).unwrap();
        if let Some(g) = self.gzsl {
            writeln!(out, "  unseen (u)      : {:.2}%", 100.0 * g.unseen).unwrap();
            writeln!(out, "  seen (s)        : {:.2}%", 100.0 * g.seen).unwrap();
            writeln!(out, "  harmonic (H)    : {:.2}%", 100.0 * g.harmonic).unwrap();
        }
        if !self.excluded.is_empty() {
            let ids: Vec<String> = self.excluded.iter().map(|c| (c + 1).to_string()).collect();
            writeln!(out, "  warning: no test instances for classes {}", ids.join(",")).unwrap();
        }
        out
    }
}

/// Parses a `metric=value` file back into a map.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Data(format!("line {}: expected metric=value", n + 1)))?;
        let v: f64 = v.parse().map_err(|_| Error::Data(format!("line {}: bad value {v:?}", n + 1)))?;
        out.insert(k.to_string(), v);
    }
    Ok(out)
}
