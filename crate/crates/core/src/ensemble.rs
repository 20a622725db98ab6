//! The ensemble network: a shared extractor feeding K embedding heads, each
//! scored against its own projected attribute vectors with a softmax over every
//! class, seen and unseen alike.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adam::{adam_step, AdamState, Parameters};
use crate::error::{Error, Result};
use crate::label_embedding::{AttributeMatrix, ClassId, ProjectionSet};
use crate::linalg::{dot, Matrix};
use crate::mlp::{Mlp, MlpSpec, MlpTrace};

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    extractor: Mlp,
    heads: Vec<Mlp>,
    projections: ProjectionSet,
    attributes: AttributeMatrix,
    // per head, L x h with row c = P_k M_c
    class_embeddings: Vec<Matrix>,
}

/// Gradient buffers shaped like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleGrads {
    pub extractor: Mlp,
    pub heads: Vec<Mlp>,
}

impl EnsembleModel {
    /// `extractor` maps inputs to shared features; `head_hidden` lists the
    /// hidden widths of every head, whose output width is the projection dim.
    pub fn new(
        extractor: &MlpSpec,
        head_hidden: &[usize],
        head_relu_last: bool,
        projections: ProjectionSet,
        attributes: AttributeMatrix,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut widths = vec![extractor.output_dim()];
        widths.extend_from_slice(head_hidden);
        widths.push(projections.h());
        let head_spec = MlpSpec::new(widths, head_relu_last)?;
        let extractor = Mlp::new(extractor, &mut rng);
        let heads = (0..projections.k()).map(|_| Mlp::new(&head_spec, &mut rng)).collect();
        EnsembleModel::from_parts(extractor, heads, projections, attributes)
    }

    pub fn from_parts(extractor: Mlp, heads: Vec<Mlp>, projections: ProjectionSet, attributes: AttributeMatrix) -> Result<Self> {
        if heads.len() != projections.k() {
            return Err(Error::Shape(format!("{} heads for {} projections", heads.len(), projections.k())));
        }
        if projections.m() != attributes.dim() {
            return Err(Error::Shape(format!(
                "projections act on dim {}, attributes have dim {}",
                projections.m(),
                attributes.dim()
            )));
        }
        for head in &heads {
            if head.input_dim() != extractor.output_dim() || head.output_dim() != projections.h() {
                return Err(Error::Shape(format!(
                    "head maps {} -> {}, expected {} -> {}",
                    head.input_dim(),
                    head.output_dim(),
                    extractor.output_dim(),
                    projections.h()
                )));
            }
        }
        let m_by_class = attributes.by_class();
        let class_embeddings = projections
            .projections()
            .iter()
            .map(|p| m_by_class.matmul(&p.transpose()))
            .collect::<Result<Vec<_>>>()?;
        Ok(EnsembleModel { extractor, heads, projections, attributes, class_embeddings })
    }

    pub fn k(&self) -> usize {
        self.heads.len()
    }

    pub fn num_classes(&self) -> usize {
        self.attributes.num_classes()
    }

    pub fn input_dim(&self) -> usize {
        self.extractor.input_dim()
    }

    pub fn extractor(&self) -> &Mlp {
        &self.extractor
    }

    pub fn extractor_mut(&mut self) -> &mut Mlp {
        &mut self.extractor
    }

    pub fn heads(&self) -> &[Mlp] {
        &self.heads
    }

    pub fn heads_mut(&mut self) -> &mut [Mlp] {
        &mut self.heads
    }

    pub fn projections(&self) -> &ProjectionSet {
        &self.projections
    }

    pub fn attributes(&self) -> &AttributeMatrix {
        &self.attributes
    }

    /// Projected attribute vectors of head `k`, one row per class.
    pub fn class_embeddings(&self, k: usize) -> &Matrix {
        &self.class_embeddings[k]
    }

    pub fn zero_grads(&self) -> EnsembleGrads {
        EnsembleGrads {
            extractor: self.extractor.zeros_like(),
            heads: self.heads.iter().map(Mlp::zeros_like).collect(),
        }
    }

    /// Per-head embeddings `v^k = f_k(f_v(x))` of a single instance.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let x = Matrix::from_vec(1, x.len(), x.to_vec())?;
        Ok(self.embed_batch(&x)?.into_iter().map(|m| m.into_vec()).collect())
    }

    /// Per-head embeddings for a batch, each `n x h`.
    pub fn embed_batch(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        let features = self.extractor.forward(x)?;
        let features = features.output();
        self.heads
            .par_iter()
            .map(|head| Ok(head.forward(features)?.output().clone()))
            .collect()
    }

    /// Per-head inner-product scores against every class, each `n x L`.
    pub fn scores_batch(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        let embeddings = self.embed_batch(x)?;
        Ok(embeddings
            .par_iter()
            .zip(&self.class_embeddings)
            .map(|(v, e)| score_rows(v, e))
            .collect())
    }

    /// Mean over the batch of the per-head negative log-likelihoods, summed over heads.
    pub fn nll_loss(&self, x: &Matrix, labels: &[ClassId]) -> Result<f64> {
        self.check_batch(x, labels)?;
        let scores = self.scores_batch(x)?;
        let n = labels.len() as f64;
        let mut total = 0.0;
        for s in &scores {
            for (i, &y) in labels.iter().enumerate() {
                total += -log_softmax_at(s.row(i), y);
            }
        }
        Ok(total / n)
    }

    /// Loss and its analytic gradient. Head passes may run in parallel; the
    /// extractor gradient is reduced in head order.
    pub fn backward(&self, x: &Matrix, labels: &[ClassId]) -> Result<(f64, EnsembleGrads)> {
        self.check_batch(x, labels)?;
        let n = labels.len() as f64;
        let ext_trace = self.extractor.forward(x)?;
        let features = ext_trace.output();

        let per_head: Vec<(f64, Mlp, Matrix)> = self
            .heads
            .par_iter()
            .zip(&self.class_embeddings)
            .map(|(head, emb)| {
                let trace: MlpTrace = head.forward(features)?;
                let v = trace.output();
                let mut scores = score_rows(v, emb);
                let mut loss = 0.0;
                for (i, &y) in labels.iter().enumerate() {
                    let row = scores.row_mut(i);
                    loss += -softmax_in_place(row, y);
                    row[y] -= 1.0;
                    row.iter_mut().for_each(|g| *g /= n);
                }
                // d loss / d v = (softmax - onehot)/n · E
                let d_v = scores.matmul(emb)?;
                let mut grad = head.zeros_like();
                let d_features = head.backward(&trace, &d_v, &mut grad);
                Ok((loss, grad, d_features))
            })
            .collect::<Result<_>>()?;

        let mut grads = self.zero_grads();
        let mut d_features = Matrix::zeros(features.rows(), features.cols());
        let mut loss = 0.0;
        for (k, (l, g, d)) in per_head.into_iter().enumerate() {
            loss += l;
            grads.heads[k] = g;
            d_features.as_mut_slice().iter_mut().zip(d.as_slice()).for_each(|(a, b)| *a += b);
        }
        self.extractor.backward(&ext_trace, &d_features, &mut grads.extractor);
        Ok((loss / n, grads))
    }

    fn check_batch(&self, x: &Matrix, labels: &[ClassId]) -> Result<()> {
        if labels.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        if x.rows() != labels.len() {
            return Err(Error::Shape(format!("{} instances with {} labels", x.rows(), labels.len())));
        }
        let l = self.num_classes();
        if let Some(&bad) = labels.iter().find(|&&y| y >= l) {
            return Err(Error::Label(format!("label {} outside 1..={l}", bad + 1)));
        }
        Ok(())
    }
}

impl Parameters for EnsembleModel {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.extractor.tensors();
        self.heads.iter().for_each(|h| t.extend(h.tensors()));
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.extractor.tensors_mut();
        self.heads.iter_mut().for_each(|h| t.extend(h.tensors_mut()));
        t
    }
}

impl Parameters for EnsembleGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.extractor.tensors();
        self.heads.iter().for_each(|h| t.extend(h.tensors()));
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.extractor.tensors_mut();
        self.heads.iter_mut().for_each(|h| t.extend(h.tensors_mut()));
        t
    }
}

/// Scores `⟨v, P M_c⟩` for every class `c`.
pub fn class_scores(v: &[f64], projection: &Matrix, attrs: &AttributeMatrix) -> Result<Vec<f64>> {
    if projection.rows() != v.len() || projection.cols() != attrs.dim() {
        return Err(Error::Shape(format!(
            "embedding of length {} against {}x{} projection and attribute dim {}",
            v.len(),
            projection.rows(),
            projection.cols(),
            attrs.dim()
        )));
    }
    // vᵀP once, then one dot per class
    let mut vp = vec![0.0; projection.cols()];
    for (r, &vr) in v.iter().enumerate() {
        for (o, &p) in vp.iter_mut().zip(projection.row(r)) {
            *o += vr * p;
        }
    }
    Ok((0..attrs.num_classes()).map(|c| dot(&vp, attrs.column(c))).collect())
}

fn score_rows(v: &Matrix, class_emb: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(v.rows(), class_emb.rows());
    for i in 0..v.rows() {
        let vi = v.row(i);
        for (c, s) in out.row_mut(i).iter_mut().enumerate() {
            *s = dot(vi, class_emb.row(c));
        }
    }
    out
}

/// Numerically stable softmax of `scores`.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let mut p = scores.to_vec();
    if !p.is_empty() {
        softmax_in_place(&mut p, 0);
    }
    p
}

fn log_softmax_at(scores: &[f64], y: usize) -> f64 {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scores[y] - max - lse
}

/// Replaces `row` by its softmax; returns the log-probability of `y`.
fn softmax_in_place(row: &mut [f64], y: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for s in row.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    let log_p = row[y].ln() - sum.ln();
    row.iter_mut().for_each(|s| *s /= sum);
    log_p
}

/// Runs `batches` Adam steps on minibatches of `batch_size` drawn uniformly
/// with replacement from `data`, returning the mean batch loss (0 when no
/// batches run).
pub fn train_epoch<R: Rng>(
    model: &mut EnsembleModel,
    state: &mut AdamState,
    data: &[(&[f64], ClassId)],
    batches: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("no training instances".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let d = model.input_dim();
    let mut total = 0.0;
    for _ in 0..batches {
        let mut x = Matrix::zeros(batch_size, d);
        let mut labels = Vec::with_capacity(batch_size);
        for r in 0..batch_size {
            let (features, y) = data[rng.random_range(0..data.len())];
            if features.len() != d {
                return Err(Error::Shape(format!("instance has {} features, model expects {d}", features.len())));
            }
            x.row_mut(r).copy_from_slice(features);
            labels.push(y);
        }
        let (loss, grads) = model.backward(&x, &labels)?;
        adam_step(model, &grads, state)?;
        total += loss;
    }
    Ok(if batches == 0 { 0.0 } else { total / batches as f64 })
}
