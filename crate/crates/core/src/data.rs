//! Feature datasets, their line-oriented text formats, and the synthetic task
//! generator.
//!
//! Class ids are one-based in every file and zero-based in memory.
//!
//! ```text
//! features:   dim=<d> count=<n>        then  id<TAB>label-or-?<TAB>v1,v2,...
//! labels:     count=<n>                then  id<TAB>label
//! attributes: dim=<m> count=<L>        then  class<TAB>v1,v2,...
//! split:      seen: 1,2,...            and   unseen: 11,12,...
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::label_embedding::{AttributeMatrix, ClassId, ClassSplit};
use crate::linalg::Matrix;

pub const FEATURES_FILE: &str = "features.txt";
pub const LABELS_FILE: &str = "labels.txt";
pub const ATTRIBUTES_FILE: &str = "attributes.txt";
pub const SPLIT_FILE: &str = "split.txt";
pub const CONFIG_FILE: &str = "config.cfg";

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: u64,
    pub features: Vec<f64>,
    pub label: Option<ClassId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    dim: usize,
    instances: Vec<Instance>,
    pub provenance: String,
}

impl FeatureDataset {
    pub fn new(dim: usize, instances: Vec<Instance>, provenance: impl Into<String>) -> Result<Self> {
        let mut ids = HashSet::with_capacity(instances.len());
        for inst in &instances {
            if inst.features.len() != dim {
                return Err(Error::Data(format!("instance {} has {} features, expected {dim}", inst.id, inst.features.len())));
            }
            if inst.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("instance {} has a non-finite feature", inst.id)));
            }
            if !ids.insert(inst.id) {
                return Err(Error::Data(format!("duplicate instance id {}", inst.id)));
            }
        }
        Ok(FeatureDataset { dim, instances, provenance: provenance.into() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Splits into the visible-label part and the label-free part.
    pub fn partition(&self) -> (LabeledSet, UnlabeledSet) {
        let mut labeled = LabeledSet { dim: self.dim, ids: vec![], features: vec![], labels: vec![] };
        let mut unlabeled = UnlabeledSet { dim: self.dim, ids: vec![], features: vec![] };
        for inst in &self.instances {
            match inst.label {
                Some(y) => {
                    labeled.ids.push(inst.id);
                    labeled.features.push(inst.features.clone());
                    labeled.labels.push(y);
                }
                None => {
                    unlabeled.ids.push(inst.id);
                    unlabeled.features.push(inst.features.clone());
                }
            }
        }
        (labeled, unlabeled)
    }
}

/// Instances with visible labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub dim: usize,
    pub ids: Vec<u64>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<ClassId>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn pairs(&self) -> Vec<(&[f64], ClassId)> {
        self.features.iter().map(Vec::as_slice).zip(self.labels.iter().copied()).collect()
    }
}

/// Instances without labels. Carries no class information by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSet {
    pub dim: usize,
    pub ids: Vec<u64>,
    pub features: Vec<Vec<f64>>,
}

impl UnlabeledSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(self.features.len(), self.dim, self.features.concat()).expect("validated on construction")
    }
}

/// True labels of hidden instances, for evaluation only.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelOracle {
    labels: BTreeMap<u64, ClassId>,
}

impl LabelOracle {
    pub fn new(labels: BTreeMap<u64, ClassId>) -> Self {
        LabelOracle { labels }
    }

    pub fn get(&self, id: u64) -> Option<ClassId> {
        self.labels.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, ClassId)> + '_ {
        self.labels.iter().map(|(&k, &v)| (k, v))
    }

    /// Labels aligned with `ids`; fails if any id is unknown.
    pub fn labels_for(&self, ids: &[u64]) -> Result<Vec<ClassId>> {
        ids.iter()
            .map(|id| self.get(*id).ok_or_else(|| Error::Data(format!("no oracle label for instance {id}"))))
            .collect()
    }
}

/// A complete task as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub dataset: FeatureDataset,
    pub attributes: AttributeMatrix,
    pub split: ClassSplit,
    pub oracle: LabelOracle,
}

impl Task {
    /// Hides every unseen-class label, plus `seen_holdout` of each seen class
    /// (chosen with `seed`), moving the hidden labels into the oracle.
    pub fn from_full(full: FeatureDataset, attributes: AttributeMatrix, split: ClassSplit, seen_holdout: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&seen_holdout) {
            return Err(Error::Config(format!("seen holdout fraction {seen_holdout} outside [0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
        for (i, inst) in full.instances.iter().enumerate() {
            let y = inst.label.ok_or_else(|| Error::Data(format!("instance {} has no label", inst.id)))?;
            by_class.entry(y).or_default().push(i);
        }
        let mut hide = vec![false; full.len()];
        for (&c, idx) in &by_class {
            if split.is_unseen(c) {
                idx.iter().for_each(|&i| hide[i] = true);
            } else if seen_holdout > 0.0 {
                let n = (seen_holdout * idx.len() as f64).round() as usize;
                for pick in rand::seq::index::sample(&mut rng, idx.len(), n.min(idx.len())) {
                    hide[idx[pick]] = true;
                }
            }
        }
        let mut oracle = BTreeMap::new();
        let mut instances = full.instances;
        for (inst, &h) in instances.iter_mut().zip(&hide) {
            if h {
                oracle.insert(inst.id, inst.label.take().unwrap());
            }
        }
        let dataset = FeatureDataset::new(full.dim, instances, full.provenance)?;
        Ok(Task { dataset, attributes, split, oracle: LabelOracle::new(oracle) })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        load_dataset(&dir.join(FEATURES_FILE), &dir.join(LABELS_FILE), &dir.join(ATTRIBUTES_FILE), &dir.join(SPLIT_FILE))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join(FEATURES_FILE), format_features(&self.dataset).as_bytes())?;
        write_atomic(&dir.join(LABELS_FILE), format_labels(&self.oracle).as_bytes())?;
        write_atomic(&dir.join(ATTRIBUTES_FILE), format_attributes(&self.attributes).as_bytes())?;
        write_atomic(&dir.join(SPLIT_FILE), format_split(&self.split).as_bytes())?;
        Ok(())
    }
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn join_floats(v: &[f64]) -> String {
    let mut s = String::with_capacity(v.len() * 12);
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        write!(s, "{x}").unwrap();
    }
    s
}

pub fn format_features(ds: &FeatureDataset) -> String {
    let mut out = format!("dim={} count={}\n", ds.dim, ds.len());
    for inst in &ds.instances {
        let label = inst.label.map_or_else(|| "?".to_string(), |y| (y + 1).to_string());
        writeln!(out, "{}\t{}\t{}", inst.id, label, join_floats(&inst.features)).unwrap();
    }
    out
}

pub fn format_labels(oracle: &LabelOracle) -> String {
    let mut out = format!("count={}\n", oracle.len());
    for (id, y) in oracle.iter() {
        writeln!(out, "{id}\t{}", y + 1).unwrap();
    }
    out
}

pub fn format_attributes(attrs: &AttributeMatrix) -> String {
    let mut out = format!("dim={} count={}\n", attrs.dim(), attrs.num_classes());
    for c in 0..attrs.num_classes() {
        writeln!(out, "{}\t{}", c + 1, join_floats(attrs.column(c))).unwrap();
    }
    out
}

pub fn format_split(split: &ClassSplit) -> String {
    let ids = |v: &[ClassId]| v.iter().map(|c| (c + 1).to_string()).collect::<Vec<_>>().join(",");
    format!("seen: {}\nunseen: {}\n", ids(split.seen()), ids(split.unseen()))
}

struct LineReader<'a> {
    path: &'a Path,
    lines: Vec<(usize, &'a str)>,
}

impl<'a> LineReader<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
            .filter(|(_, l)| !l.trim().is_empty())
            .collect();
        LineReader { path, lines }
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::validation(self.path, line, msg)
    }

    /// Parses a `key=value key=value` header into the requested keys.
    fn header(&self, keys: &[&str]) -> Result<Vec<usize>> {
        let &(n, line) = self.lines.first().ok_or_else(|| self.err(1, "missing header"))?;
        let mut found = BTreeMap::new();
        for tok in line.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| self.err(n, format!("malformed header token {tok:?}")))?;
            let v: usize = v.parse().map_err(|_| self.err(n, format!("header value {v:?} is not a count")))?;
            found.insert(k, v);
        }
        keys.iter()
            .map(|k| found.get(k).copied().ok_or_else(|| self.err(n, format!("header lacks {k}="))))
            .collect()
    }

    fn body(&self) -> &[(usize, &'a str)] {
        &self.lines[1.min(self.lines.len())..]
    }

    fn floats(&self, line: usize, field: &str, dim: usize) -> Result<Vec<f64>> {
        let v = field
            .split(',')
            .map(|s| {
                let x: f64 = s.trim().parse().map_err(|_| self.err(line, format!("bad number {s:?}")))?;
                if x.is_finite() {
                    Ok(x)
                } else {
                    Err(self.err(line, format!("non-finite value {s:?}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if v.len() != dim {
            return Err(self.err(line, format!("row has {} values, header says dim={dim}", v.len())));
        }
        Ok(v)
    }

    fn class_id(&self, line: usize, field: &str, classes: usize) -> Result<ClassId> {
        let c: usize = field.trim().parse().map_err(|_| self.err(line, format!("bad class id {field:?}")))?;
        if c == 0 || c > classes {
            return Err(self.err(line, format!("class id {c} outside 1..={classes}")));
        }
        Ok(c - 1)
    }
}

pub fn parse_features(path: &Path, text: &str, classes: usize) -> Result<FeatureDataset> {
    let r = LineReader::new(path, text);
    let hdr = r.header(&["dim", "count"])?;
    let (dim, count) = (hdr[0], hdr[1]);
    let mut instances = Vec::with_capacity(count);
    let mut seen_ids = HashSet::new();
    for &(n, line) in r.body() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(r.err(n, format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let id: u64 = fields[0].trim().parse().map_err(|_| r.err(n, format!("bad instance id {:?}", fields[0])))?;
        if !seen_ids.insert(id) {
            return Err(r.err(n, format!("duplicate instance id {id}")));
        }
        let label = match fields[1].trim() {
            "?" => None,
            s => Some(r.class_id(n, s, classes)?),
        };
        instances.push(Instance { id, features: r.floats(n, fields[2], dim)?, label });
    }
    if instances.len() != count {
        return Err(r.err(1, format!("header says count={count}, file has {} rows", instances.len())));
    }
    FeatureDataset::new(dim, instances, path.display().to_string())
}

pub fn parse_labels(path: &Path, text: &str, classes: usize) -> Result<LabelOracle> {
    let r = LineReader::new(path, text);
    let count = r.header(&["count"])?[0];
    let mut labels = BTreeMap::new();
    for &(n, line) in r.body() {
        let (id, y) = line.split_once('\t').ok_or_else(|| r.err(n, "expected id<TAB>label"))?;
        let id: u64 = id.trim().parse().map_err(|_| r.err(n, format!("bad instance id {id:?}")))?;
        if labels.insert(id, r.class_id(n, y, classes)?).is_some() {
            return Err(r.err(n, format!("duplicate instance id {id}")));
        }
    }
    if labels.len() != count {
        return Err(r.err(1, format!("header says count={count}, file has {} rows", labels.len())));
    }
    Ok(LabelOracle::new(labels))
}

pub fn parse_attributes(path: &Path, text: &str) -> Result<AttributeMatrix> {
    let r = LineReader::new(path, text);
    let hdr = r.header(&["dim", "count"])?;
    let (dim, count) = (hdr[0], hdr[1]);
    let mut cols: Vec<Option<Vec<f64>>> = vec![None; count];
    for &(n, line) in r.body() {
        let (id, vals) = line.split_once('\t').ok_or_else(|| r.err(n, "expected class<TAB>values"))?;
        let c = r.class_id(n, id, count)?;
        if cols[c].is_some() {
            return Err(r.err(n, format!("class {} listed twice", c + 1)));
        }
        let v = r.floats(n, vals, dim)?;
        if v.iter().all(|&x| x == 0.0) {
            return Err(r.err(n, format!("class {} has an all-zero attribute vector", c + 1)));
        }
        cols[c] = Some(v);
    }
    let cols = cols
        .into_iter()
        .enumerate()
        .map(|(c, v)| v.ok_or_else(|| r.err(1, format!("class {} has no attribute row", c + 1))))
        .collect::<Result<Vec<_>>>()?;
    AttributeMatrix::from_columns(&cols)
}

pub fn parse_split(path: &Path, text: &str) -> Result<ClassSplit> {
    let r = LineReader::new(path, text);
    let mut seen = None;
    let mut unseen = None;
    for &(n, line) in &r.lines {
        let (key, ids) = line.split_once(':').ok_or_else(|| r.err(n, "expected `seen:` or `unseen:`"))?;
        let ids = ids
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| match s.parse::<usize>() {
                Ok(c) if c >= 1 => Ok(c - 1),
                _ => Err(r.err(n, format!("bad class id {s:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let slot = match key.trim() {
            "seen" => &mut seen,
            "unseen" => &mut unseen,
            other => return Err(r.err(n, format!("unknown split key {other:?}"))),
        };
        if slot.replace(ids).is_some() {
            return Err(r.err(n, format!("{} listed twice", key.trim())));
        }
    }
    let seen = seen.ok_or_else(|| r.err(1, "missing `seen:` line"))?;
    let unseen = unseen.ok_or_else(|| r.err(1, "missing `unseen:` line"))?;
    ClassSplit::new(seen, unseen).map_err(|e| r.err(1, e.to_string()))
}

/// Loads and cross-validates the four task files. Hidden labels stay in the
/// returned oracle.
pub fn load_dataset(features: &Path, labels: &Path, attributes: &Path, split: &Path) -> Result<Task> {
    let attrs = parse_attributes(attributes, &read(attributes)?)?;
    let split_v = parse_split(split, &read(split)?)?;
    if split_v.num_classes() != attrs.num_classes() {
        return Err(Error::validation(
            split,
            1,
            format!("split covers {} classes, attributes define {}", split_v.num_classes(), attrs.num_classes()),
        ));
    }
    let l = attrs.num_classes();
    let dataset = parse_features(features, &read(features)?, l)?;
    let oracle = parse_labels(labels, &read(labels)?, l)?;
    for inst in dataset.instances() {
        let hidden = oracle.get(inst.id);
        match (inst.label, hidden) {
            (Some(_), Some(_)) => {
                return Err(Error::Data(format!("instance {} has both a visible and a hidden label", inst.id)));
            }
            (Some(y), None) if !split_v.is_seen(y) => {
                return Err(Error::Data(format!("instance {} carries visible unseen label {}", inst.id, y + 1)));
            }
            _ => {}
        }
    }
    Ok(Task { dataset, attributes: attrs, split: split_v, oracle })
}

/// Parameters of the synthetic zero-shot task.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub seen_classes: usize,
    pub attribute_dim: usize,
    pub feature_dim: usize,
    pub instances_per_class: usize,
    pub noise_sigma: f64,
    pub attribute_density: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 15,
            seen_classes: 10,
            attribute_dim: 20,
            feature_dim: 30,
            instances_per_class: 40,
            noise_sigma: 0.1,
            attribute_density: 0.5,
            seed: 0,
        }
    }
}

const MAX_ATTRIBUTE_REJECTIONS: usize = 1000;

/// Draws binary class attributes, a random linear attribute-to-feature map, and
/// noisy instances around each class prototype. The last `L - L^s` classes are
/// unseen. Every instance keeps its true label.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(FeatureDataset, AttributeMatrix, ClassSplit)> {
    if spec.seen_classes == 0 || spec.seen_classes >= spec.classes {
        return Err(Error::Config(format!("need 0 < seen classes < classes, got {} of {}", spec.seen_classes, spec.classes)));
    }
    if spec.attribute_dim < 2 || spec.feature_dim == 0 {
        return Err(Error::Config("attribute dim must be at least 2 and feature dim positive".into()));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(Error::Config(format!("noise sigma {} must be non-negative", spec.noise_sigma)));
    }
    if !(spec.attribute_density > 0.0 && spec.attribute_density < 1.0) {
        return Err(Error::Config(format!("attribute density {} outside (0, 1)", spec.attribute_density)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let m = spec.attribute_dim;

    let mut attrs: Vec<Vec<f64>> = Vec::with_capacity(spec.classes);
    let mut rejections = 0;
    while attrs.len() < spec.classes {
        let a: Vec<f64> = (0..m).map(|_| if rng.random_bool(spec.attribute_density) { 1.0 } else { 0.0 }).collect();
        if a.iter().all(|&x| x == 0.0) || attrs.contains(&a) {
            rejections += 1;
            if rejections > MAX_ATTRIBUTE_REJECTIONS {
                return Err(Error::Config(format!(
                    "could not draw {} distinct attribute vectors of dim {m}",
                    spec.classes
                )));
            }
            continue;
        }
        attrs.push(a);
    }

    let g_dist = Normal::new(0.0, 1.0 / (m as f64).sqrt()).expect("valid normal");
    let map: Vec<Vec<f64>> = (0..spec.feature_dim).map(|_| (0..m).map(|_| g_dist.sample(&mut rng)).collect()).collect();
    let prototypes: Vec<Vec<f64>> = attrs
        .iter()
        .map(|a| map.iter().map(|row| row.iter().zip(a).map(|(g, x)| g * x).sum()).collect())
        .collect();

    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid normal");
    let mut instances = Vec::with_capacity(spec.classes * spec.instances_per_class);
    let mut id = 1u64;
    for (c, proto) in prototypes.iter().enumerate() {
        for _ in 0..spec.instances_per_class {
            let features = if spec.noise_sigma == 0.0 {
                proto.clone()
            } else {
                proto.iter().map(|p| p + noise.sample(&mut rng)).collect()
            };
            instances.push(Instance { id, features, label: Some(c) });
            id += 1;
        }
    }
    let provenance = format!("synthetic seed={} sigma={}", spec.seed, spec.noise_sigma);
    Ok((
        FeatureDataset::new(spec.feature_dim, instances, provenance)?,
        AttributeMatrix::from_columns(&attrs)?,
        ClassSplit::leading_seen(spec.seen_classes, spec.classes)?,
    ))
}
