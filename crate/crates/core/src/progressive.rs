//! Progressive training: alternate between voting on the unlabeled pool,
//! reselecting the most confident pseudo-labeled instances per class from
//! scratch, and refining the ensemble on the labeled data plus that set.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::AdamState;
use crate::config::TrainConfig;
use crate::data::{LabeledSet, UnlabeledSet};
use crate::ensemble::{train_epoch, EnsembleModel};
use crate::error::{Error, Result};
use crate::label_embedding::{
    build_projection_set, default_projection_dim, identity_projection_set, AttributeMatrix, ClassId, ClassSplit,
    ProjectionSet,
};
use crate::mlp::MlpSpec;
use crate::predictor::{argmax, gzsl_score_table, vote, VoteTable};

/// `min(⌊ρ·N_avg⌋, N_max)`, at least 1.
pub fn compute_n_pseudo(n_avg: f64, rho: f64, n_max: usize) -> usize {
    ((rho * n_avg).floor() as usize).min(n_max).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoEntry {
    /// Row in the unlabeled set.
    pub index: usize,
    pub id: u64,
    pub label: ClassId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PseudoSet {
    pub iteration: usize,
    pub entries: Vec<PseudoEntry>,
}

impl PseudoSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> HashSet<u64> {
        self.entries.iter().map(|e| e.id).collect()
    }

    /// Selected count per class.
    pub fn composition(&self) -> BTreeMap<ClassId, usize> {
        let mut m = BTreeMap::new();
        for e in &self.entries {
            *m.entry(e.label).or_default() += 1;
        }
        m
    }

    /// Members of `previous` no longer selected.
    pub fn churn_from(&self, previous: &PseudoSet) -> usize {
        let now = self.ids();
        previous.entries.iter().filter(|e| !now.contains(&e.id)).count()
    }
}

/// Ranks every instance per class by `key` (larger first, then smaller id),
/// keeps the top `n_pseudo`, and drops those whose `owner` is another class.
fn select_top_per_class<K>(classes: &[ClassId], ids: &[u64], owner: &[ClassId], n_pseudo: usize, key: K) -> Vec<PseudoEntry>
where
    K: Fn(usize, usize) -> (f64, f64),
{
    let mut entries = Vec::new();
    let mut order: Vec<usize> = (0..ids.len()).collect();
    for (j, &c) in classes.iter().enumerate() {
        order.sort_by(|&a, &b| {
            let (ka, kb) = (key(a, j), key(b, j));
            kb.0.total_cmp(&ka.0).then(kb.1.total_cmp(&ka.1)).then(ids[a].cmp(&ids[b]))
        });
        for &i in order.iter().take(n_pseudo) {
            if owner[i] == c {
                entries.push(PseudoEntry { index: i, id: ids[i], label: c, score: key(i, j).0 });
            }
        }
    }
    entries
}

/// Top `n_pseudo` instances per unseen class by vote fraction, each instance
/// kept only for its own predicted class. Equal fractions fall back to the
/// mean score of the voting members, then to the smaller instance id.
pub fn select_pseudo(table: &VoteTable, ids: &[u64], n_pseudo: usize) -> PseudoSet {
    let entries = select_top_per_class(table.unseen(), ids, &table.predictions, n_pseudo, |i, j| {
        (table.phi[i][j], table.support[i][j])
    });
    PseudoSet { iteration: 0, entries }
}

/// Selection over every class from generalized scores (`scores[i][c]`).
pub fn select_pseudo_all(scores: &[Vec<f64>], ids: &[u64], n_pseudo: usize) -> PseudoSet {
    let l = scores.first().map_or(0, Vec::len);
    let owner: Vec<ClassId> = scores.iter().map(|r| argmax(r)).collect();
    let classes: Vec<ClassId> = (0..l).collect();
    let entries = select_top_per_class(&classes, ids, &owner, n_pseudo, |i, c| (scores[i][c], 0.0));
    PseudoSet { iteration: 0, entries }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub mean_loss: f64,
    pub pseudo_count: usize,
    pub composition: BTreeMap<ClassId, usize>,
    pub churn: usize,
    /// Whether this round selected among unseen classes only.
    pub unseen_only: bool,
    pub oracle_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunHistory {
    pub init_loss: f64,
    pub init_oracle_accuracy: Option<f64>,
    pub records: Vec<IterationRecord>,
}

impl RunHistory {
    /// Tab-separated, one row per refinement round, preceded by a header and
    /// a comment carrying the initial round.
    pub fn to_tsv(&self) -> String {
        let acc = |a: Option<f64>| a.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        let mut s = format!("# init loss={:.9} oracle={}\n", self.init_loss, acc(self.init_oracle_accuracy));
        s.push_str("iteration\tloss\tpseudo\tchurn\toracle\tcomposition\n");
        for r in &self.records {
            let comp: Vec<String> = r.composition.iter().map(|(c, n)| format!("{}:{n}", c + 1)).collect();
            let _ = writeln!(
                s,
                "{}\t{:.9}\t{}\t{}\t{}\t{}",
                r.iteration,
                r.mean_loss,
                r.pseudo_count,
                r.churn,
                acc(r.oracle_accuracy),
                comp.join(",")
            );
        }
        s
    }
}

/// What a [`Monitor`] sees after each round.
pub struct RoundView<'a> {
    /// 0 for the initial round.
    pub iteration: usize,
    pub model: &'a EnsembleModel,
    pub pseudo: &'a PseudoSet,
    /// The round's training set: labeled instances first, then pseudo-labeled ones.
    pub train: &'a [(&'a [f64], ClassId)],
}

/// Observer hook run after every round. The returned accuracy, if any, is
/// logged in the history; the trainer itself never sees hidden labels.
pub trait Monitor {
    fn observe(&mut self, round: &RoundView<'_>) -> Option<f64>;
}

impl Monitor for () {
    fn observe(&mut self, _: &RoundView<'_>) -> Option<f64> {
        None
    }
}

impl<F: FnMut(&RoundView<'_>) -> Option<f64>> Monitor for F {
    fn observe(&mut self, round: &RoundView<'_>) -> Option<f64> {
        self(round)
    }
}

pub struct RunOutput {
    pub model: EnsembleModel,
    pub optimizer: AdamState,
    pub history: RunHistory,
    pub final_pseudo: PseudoSet,
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Projections for the configured variant: fitted projections, or identity
/// projections for either ablation.
pub fn projections_for(config: &TrainConfig, attrs: &AttributeMatrix, split: &ClassSplit) -> Result<ProjectionSet> {
    let m = attrs.dim();
    if config.single_classifier {
        identity_projection_set(split, m, 1, config.seed)
    } else if config.no_projection {
        identity_projection_set(split, m, config.k, config.seed)
    } else {
        let h = config.h.unwrap_or_else(|| default_projection_dim(m));
        build_projection_set(attrs, split, config.k, h, config.seed)
    }
}

/// Fresh ensemble for `config`, initialized from its seed.
pub fn init_model(config: &TrainConfig, input_dim: usize, projections: ProjectionSet, attrs: &AttributeMatrix) -> Result<EnsembleModel> {
    let mut widths = vec![input_dim];
    widths.extend_from_slice(&config.extractor_widths);
    let extractor = MlpSpec::new(widths, true)?;
    EnsembleModel::new(
        &extractor,
        &config.head_hidden,
        config.head_relu_last,
        projections,
        attrs.clone(),
        derive_seed(config.seed, 1),
    )
}

/// Progressive training in the conventional setting: pseudo-labels come from
/// unseen classes only.
pub fn run(
    config: &TrainConfig,
    labeled: &LabeledSet,
    unlabeled: &UnlabeledSet,
    attrs: &AttributeMatrix,
    split: &ClassSplit,
    monitor: &mut dyn Monitor,
) -> Result<RunOutput> {
    run_inner(config, labeled, unlabeled, attrs, split, monitor, false)
}

/// Generalized variant: unseen-only selection up to `t_unseen_only`, then
/// selection over all classes ranked by generalized scores.
pub fn run_gzsl(
    config: &TrainConfig,
    labeled: &LabeledSet,
    unlabeled: &UnlabeledSet,
    attrs: &AttributeMatrix,
    split: &ClassSplit,
    monitor: &mut dyn Monitor,
) -> Result<RunOutput> {
    run_inner(config, labeled, unlabeled, attrs, split, monitor, true)
}

/// Dispatches on `config.gzsl_mode`.
pub fn train(
    config: &TrainConfig,
    labeled: &LabeledSet,
    unlabeled: &UnlabeledSet,
    attrs: &AttributeMatrix,
    split: &ClassSplit,
    monitor: &mut dyn Monitor,
) -> Result<RunOutput> {
    run_inner(config, labeled, unlabeled, attrs, split, monitor, config.gzsl_mode)
}

fn run_inner(
    config: &TrainConfig,
    labeled: &LabeledSet,
    unlabeled: &UnlabeledSet,
    attrs: &AttributeMatrix,
    split: &ClassSplit,
    monitor: &mut dyn Monitor,
    gzsl: bool,
) -> Result<RunOutput> {
    config.validate()?;
    if labeled.is_empty() {
        return Err(Error::Data("no labeled instances".into()));
    }
    if let Some(&y) = labeled.labels.iter().find(|&&y| !split.is_seen(y)) {
        return Err(Error::Label(format!("labeled set contains non-seen class {}", y + 1)));
    }
    if unlabeled.dim != labeled.dim {
        return Err(Error::Shape(format!("labeled dim {} vs unlabeled dim {}", labeled.dim, unlabeled.dim)));
    }
    if attrs.num_classes() != split.num_classes() {
        return Err(Error::Shape("attribute matrix and split disagree on class count".into()));
    }

    let projections = projections_for(config, attrs, split)?;
    let mut model = init_model(config, labeled.dim, projections, attrs)?;
    let mut optimizer = AdamState::new(&model, config.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2));

    let base = labeled.pairs();
    let mut init_loss = 0.0;
    for _ in 0..config.init_epochs {
        init_loss = train_epoch(&mut model, &mut optimizer, &base, config.batches_per_iter, config.batch_size, &mut rng)?;
    }
    let mut history = RunHistory { init_loss, ..Default::default() };
    let mut pseudo = PseudoSet::default();
    history.init_oracle_accuracy = monitor.observe(&RoundView { iteration: 0, model: &model, pseudo: &pseudo, train: &base });

    let present: HashSet<ClassId> = labeled.labels.iter().copied().collect();
    let n_avg = labeled.len() as f64 / present.len() as f64;
    let n_pseudo = compute_n_pseudo(n_avg, config.rho, config.n_max);
    let x_unlabeled = unlabeled.to_matrix();

    for iteration in 1..=config.max_iter {
        let unseen_only = !gzsl || iteration <= config.t_unseen_only;
        let mut next = if unlabeled.is_empty() {
            PseudoSet::default()
        } else if unseen_only {
            select_pseudo(&vote(&model, &x_unlabeled, split.unseen())?, &unlabeled.ids, n_pseudo)
        } else {
            let scores = gzsl_score_table(&model, &x_unlabeled, split, config.seen_offset)?;
            select_pseudo_all(&scores, &unlabeled.ids, n_pseudo)
        };
        next.iteration = iteration;
        let churn = next.churn_from(&pseudo);
        pseudo = next;

        let mut train_set = base.clone();
        train_set.extend(pseudo.entries.iter().map(|e| (unlabeled.features[e.index].as_slice(), e.label)));
        let loss = train_epoch(&mut model, &mut optimizer, &train_set, config.batches_per_iter, config.batch_size, &mut rng)?;

        let oracle_accuracy = monitor.observe(&RoundView { iteration, model: &model, pseudo: &pseudo, train: &train_set });
        history.records.push(IterationRecord {
            iteration,
            mean_loss: loss,
            pseudo_count: pseudo.len(),
            composition: pseudo.composition(),
            churn,
            unseen_only,
            oracle_accuracy,
        });
    }
    Ok(RunOutput { model, optimizer, history, final_pseudo: pseudo })
}
