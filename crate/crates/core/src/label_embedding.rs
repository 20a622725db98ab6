//! Adaptive label-embedding projections.
//!
//! Each ensemble member gets its own orthonormal-row projection `P` of the
//! attribute space, chosen to maximize the cosine-weighted association between
//! every seen class and a random half of the unseen classes. The optimum is
//! given by the top eigenvectors of the symmetrized association matrix.

use std::io::{Read, Write};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{cosine_similarity, norm, sym_eig, Matrix};

/// Class index, zero-based. Text and binary files store `id + 1`.
pub type ClassId = usize;

const COVERAGE_ATTEMPTS: u64 = 100;

/// Disjoint seen and unseen class ids covering `0..L`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSplit {
    seen: Vec<ClassId>,
    unseen: Vec<ClassId>,
}

impl ClassSplit {
    pub fn new(mut seen: Vec<ClassId>, mut unseen: Vec<ClassId>) -> Result<Self> {
        seen.sort_unstable();
        unseen.sort_unstable();
        if seen.is_empty() || unseen.is_empty() {
            return Err(Error::Config("both seen and unseen class sets must be nonempty".into()));
        }
        let total = seen.len() + unseen.len();
        let mut present = vec![false; total];
        for &c in seen.iter().chain(&unseen) {
            if c >= total {
                return Err(Error::Config(format!("class id {} outside 1..={total}", c + 1)));
            }
            if present[c] {
                return Err(Error::Config(format!("class id {} listed twice", c + 1)));
            }
            present[c] = true;
        }
        Ok(ClassSplit { seen, unseen })
    }

    /// Classes `0..n_seen` seen, the rest unseen.
    pub fn leading_seen(n_seen: usize, n_classes: usize) -> Result<Self> {
        ClassSplit::new((0..n_seen).collect(), (n_seen..n_classes).collect())
    }

    pub fn seen(&self) -> &[ClassId] {
        &self.seen
    }

    pub fn unseen(&self) -> &[ClassId] {
        &self.unseen
    }

    pub fn num_classes(&self) -> usize {
        self.seen.len() + self.unseen.len()
    }

    pub fn is_seen(&self, c: ClassId) -> bool {
        self.seen.binary_search(&c).is_ok()
    }

    pub fn is_unseen(&self, c: ClassId) -> bool {
        self.unseen.binary_search(&c).is_ok()
    }
}

/// Semantic class descriptors: one `m`-dimensional attribute vector per class.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeMatrix {
    // one row per class
    by_class: Matrix,
}

impl AttributeMatrix {
    /// Builds from per-class vectors. Every vector must be finite and nonzero.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Data("attribute matrix has no classes".into()));
        }
        let by_class = Matrix::from_rows(columns)?;
        if by_class.cols() == 0 {
            return Err(Error::Data("attribute vectors are empty".into()));
        }
        for c in 0..by_class.rows() {
            if norm(by_class.row(c)) == 0.0 {
                return Err(Error::DegenerateVector(format!("class {} has an all-zero attribute vector", c + 1)));
            }
        }
        Ok(AttributeMatrix { by_class })
    }

    /// Attribute dimension `m`.
    pub fn dim(&self) -> usize {
        self.by_class.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.by_class.rows()
    }

    pub fn column(&self, c: ClassId) -> &[f64] {
        self.by_class.row(c)
    }

    /// The `m x L` matrix with one column per class.
    pub fn to_matrix(&self) -> Matrix {
        self.by_class.transpose()
    }

    /// `L x m` view, one row per class.
    pub fn by_class(&self) -> &Matrix {
        &self.by_class
    }
}

/// K projections with the unseen subsets they were fitted to.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    h: usize,
    m: usize,
    subsets: Vec<Vec<ClassId>>,
    projections: Vec<Matrix>,
}

impl ProjectionSet {
    pub fn new(subsets: Vec<Vec<ClassId>>, projections: Vec<Matrix>) -> Result<Self> {
        if subsets.is_empty() || subsets.len() != projections.len() {
            return Err(Error::Shape(format!(
                "{} subsets for {} projections",
                subsets.len(),
                projections.len()
            )));
        }
        let (h, m) = (projections[0].rows(), projections[0].cols());
        if projections.iter().any(|p| p.rows() != h || p.cols() != m) {
            return Err(Error::Shape("projections differ in shape".into()));
        }
        if subsets.iter().any(Vec::is_empty) {
            return Err(Error::Argument("empty unseen subset".into()));
        }
        Ok(ProjectionSet { h, m, subsets, projections })
    }

    pub fn k(&self) -> usize {
        self.projections.len()
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn subsets(&self) -> &[Vec<ClassId>] {
        &self.subsets
    }

    pub fn subset(&self, k: usize) -> &[ClassId] {
        &self.subsets[k]
    }

    pub fn projections(&self) -> &[Matrix] {
        &self.projections
    }

    pub fn projection(&self, k: usize) -> &Matrix {
        &self.projections[k]
    }

    /// Number of subsets containing each class, indexed by class id.
    pub fn coverage(&self, num_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; num_classes];
        for z in &self.subsets {
            for &c in z {
                counts[c] += 1;
            }
        }
        counts
    }

    /// Serializes as: `u64` K, h, m, then K subset sizes, then the subset ids
    /// (one-based), then every projection row-major as `f64`. All little-endian.
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for v in [self.k(), self.h, self.m] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for z in &self.subsets {
            w.write_all(&(z.len() as u64).to_le_bytes())?;
        }
        for z in &self.subsets {
            for &c in z {
                w.write_all(&(c as u64 + 1).to_le_bytes())?;
            }
        }
        for p in &self.projections {
            for x in p.as_slice() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut rd = crate::binio::Reader::new(r);
        let k = rd.count("K")?;
        let h = rd.count("h")?;
        let m = rd.count("m")?;
        let sizes = (0..k).map(|_| rd.count("subset size")).collect::<Result<Vec<_>>>()?;
        let mut subsets = Vec::with_capacity(k);
        for size in sizes {
            let mut z = Vec::with_capacity(size);
            for _ in 0..size {
                let id = rd.u64()?;
                if id == 0 {
                    return Err(Error::Data("class id 0 in projection file".into()));
                }
                z.push(id as usize - 1);
            }
            subsets.push(z);
        }
        let mut projections = Vec::with_capacity(k);
        for _ in 0..k {
            projections.push(Matrix::from_vec(h, m, rd.f64s(h * m)?)?);
        }
        rd.expect_end()?;
        ProjectionSet::new(subsets, projections)
    }
}

/// Default projected dimension: 70 for wide attribute spaces, else `⌈0.8·m⌉`.
pub fn default_projection_dim(m: usize) -> usize {
    if m > 70 {
        70
    } else {
        ((0.8 * m as f64).ceil() as usize).max(1)
    }
}

/// Draws `k` random unseen subsets of size `⌈L^u/2⌉`.
///
/// When some unseen class ends up in no subset the whole draw is repeated with
/// `seed + 1`, `seed + 2`, ... up to 100 attempts.
pub fn sample_subsets(split: &ClassSplit, k: usize, seed: u64) -> Result<Vec<Vec<ClassId>>> {
    if k == 0 {
        return Err(Error::Argument("need at least one subset".into()));
    }
    let unseen = split.unseen();
    let size = unseen.len().div_ceil(2);
    if k * size < unseen.len() {
        return Err(Error::Config(format!(
            "{k} subsets of size {size} cannot cover {} unseen classes",
            unseen.len()
        )));
    }
    for attempt in 0..COVERAGE_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
        let subsets: Vec<Vec<ClassId>> = (0..k)
            .map(|_| {
                let mut z: Vec<ClassId> = sample(&mut rng, unseen.len(), size).into_iter().map(|i| unseen[i]).collect();
                z.sort_unstable();
                z
            })
            .collect();
        let mut covered = vec![false; split.num_classes()];
        subsets.iter().flatten().for_each(|&c| covered[c] = true);
        if unseen.iter().all(|&c| covered[c]) {
            return Ok(subsets);
        }
    }
    Err(Error::Config(format!(
        "no full coverage of {} unseen classes after {COVERAGE_ATTEMPTS} draws of {k} subsets",
        unseen.len()
    )))
}

/// `B = Σ_{i∈S, j∈Z} ½·A_ij·(M_i M_jᵀ + M_j M_iᵀ)` with `A_ij` the cosine
/// similarity of the raw attribute vectors.
pub fn build_association_matrix(attrs: &AttributeMatrix, split: &ClassSplit, subset: &[ClassId]) -> Result<Matrix> {
    if let Some(&c) = subset.iter().find(|&&c| !split.is_unseen(c)) {
        return Err(Error::Argument(format!("class {} in subset is not unseen", c + 1)));
    }
    let m = attrs.dim();
    let seen = split.seen();

    // W[i] = Σ_j A_ij M_j, so X = Σ_i M_i W[i]ᵀ and B = (X + Xᵀ)/2
    let mut weighted = Matrix::zeros(seen.len(), m);
    for (row, &i) in seen.iter().enumerate() {
        let out = weighted.row_mut(row);
        for &j in subset {
            let a = cosine_similarity(attrs.column(i), attrs.column(j))?;
            for (o, x) in out.iter_mut().zip(attrs.column(j)) {
                *o += a * x;
            }
        }
    }
    let mut x = Matrix::zeros(m, m);
    for (row, &i) in seen.iter().enumerate() {
        let mi = attrs.column(i);
        let wi = weighted.row(row);
        for (p, &mp) in mi.iter().enumerate() {
            if mp == 0.0 {
                continue;
            }
            for (o, &wq) in x.row_mut(p).iter_mut().zip(wi) {
                *o += mp * wq;
            }
        }
    }
    let mut b = Matrix::zeros(m, m);
    for p in 0..m {
        for q in 0..m {
            b.set(p, q, 0.5 * (x.get(p, q) + x.get(q, p)));
        }
    }
    Ok(b)
}

/// Rows of the result are the top-`h` eigenvectors of `b`.
pub fn compute_projection(b: &Matrix, h: usize) -> Result<Matrix> {
    if h > b.rows() {
        return Err(Error::Argument(format!("projection dim {h} exceeds attribute dim {}", b.rows())));
    }
    Ok(sym_eig(b, h)?.vectors.transpose())
}

/// `tr(P B Pᵀ)`.
pub fn projection_objective(p: &Matrix, b: &Matrix) -> Result<f64> {
    Ok(p.matmul(b)?.matmul(&p.transpose())?.trace())
}

/// Samples `k` unseen subsets from `seed` and fits one projection per subset.
pub fn build_projection_set(
    attrs: &AttributeMatrix,
    split: &ClassSplit,
    k: usize,
    h: usize,
    seed: u64,
) -> Result<ProjectionSet> {
    check_dims(attrs, split, h)?;
    let subsets = sample_subsets(split, k, seed)?;
    fit_subsets(attrs, split, subsets, h)
}

/// Single projection fitted to the full unseen set.
pub fn full_subset_projection(attrs: &AttributeMatrix, split: &ClassSplit, h: usize) -> Result<ProjectionSet> {
    check_dims(attrs, split, h)?;
    fit_subsets(attrs, split, vec![split.unseen().to_vec()], h)
}

/// Identity projections (`h = m`) over `k` random subsets, or over the full
/// unseen set when `k == 1`. These reproduce the "original label embedding"
/// baselines.
pub fn identity_projection_set(split: &ClassSplit, m: usize, k: usize, seed: u64) -> Result<ProjectionSet> {
    let subsets = if k == 1 { vec![split.unseen().to_vec()] } else { sample_subsets(split, k, seed)? };
    let projections = vec![Matrix::identity(m); subsets.len()];
    ProjectionSet::new(subsets, projections)
}

fn check_dims(attrs: &AttributeMatrix, split: &ClassSplit, h: usize) -> Result<()> {
    if attrs.num_classes() != split.num_classes() {
        return Err(Error::Shape(format!(
            "attribute matrix has {} classes, split has {}",
            attrs.num_classes(),
            split.num_classes()
        )));
    }
    if h == 0 || h > attrs.dim() {
        return Err(Error::Argument(format!("projection dim {h} outside 1..={}", attrs.dim())));
    }
    Ok(())
}

fn fit_subsets(attrs: &AttributeMatrix, split: &ClassSplit, subsets: Vec<Vec<ClassId>>, h: usize) -> Result<ProjectionSet> {
    let projections = subsets
        .par_iter()
        .map(|z| compute_projection(&build_association_matrix(attrs, split, z)?, h))
        .collect::<Result<Vec<_>>>()?;
    ProjectionSet::new(subsets, projections)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_attrs(classes: usize, m: usize, seed: u64) -> AttributeMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols: Vec<Vec<f64>> = (0..classes).map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        AttributeMatrix::from_columns(&cols).unwrap()
    }

    fn naive_association(attrs: &AttributeMatrix, split: &ClassSplit, subset: &[ClassId]) -> Matrix {
        let m = attrs.dim();
        let mut b = Matrix::zeros(m, m);
        for &i in split.seen() {
            for &j in subset {
                let (mi, mj) = (attrs.column(i), attrs.column(j));
                let dot: f64 = mi.iter().zip(mj).map(|(a, b)| a * b).sum();
                let a = dot / (norm(mi) * norm(mj));
                for p in 0..m {
                    for q in 0..m {
                        b.set(p, q, b.get(p, q) + 0.5 * a * (mi[p] * mj[q] + mj[p] * mi[q]));
                    }
                }
            }
        }
        b
    }

    #[test]
    fn subsets_cover_unseen_classes() {
        let split = ClassSplit::leading_seen(40, 50).unwrap();
        let subsets = sample_subsets(&split, 50, 11).unwrap();
        assert_eq!(subsets.len(), 50);
        assert!(subsets.iter().all(|z| z.len() == 5 && z.iter().all(|&c| split.is_unseen(c))));
        for z in &subsets {
            let mut d = z.clone();
            d.dedup();
            assert_eq!(d.len(), z.len());
        }
        let mut covered = [false; 50];
        subsets.iter().flatten().for_each(|&c| covered[c] = true);
        assert!(split.unseen().iter().all(|&c| covered[c]));
    }

    #[test]
    fn single_subset_of_two_unseen_cannot_cover() {
        let split = ClassSplit::leading_seen(3, 5).unwrap();
        assert!(matches!(sample_subsets(&split, 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn subsets_are_deterministic() {
        let split = ClassSplit::leading_seen(4, 10).unwrap();
        assert_eq!(sample_subsets(&split, 4, 5).unwrap(), sample_subsets(&split, 4, 5).unwrap());
    }

    #[test]
    fn coverage_resample_shifts_seed() {
        // with 3 subsets of 2 out of 5 unseen, coverage fails often; the returned draw
        // must equal the first covering draw in the seed sequence
        let split = ClassSplit::leading_seen(1, 6).unwrap();
        let got = sample_subsets(&split, 3, 0).unwrap();
        let mut covered = vec![false; 6];
        got.iter().flatten().for_each(|&c| covered[c] = true);
        assert!(covered[1..].iter().all(|&b| b));
    }

    #[test]
    fn association_identical_and_orthogonal_columns() {
        let split = ClassSplit::leading_seen(1, 2).unwrap();
        let same = AttributeMatrix::from_columns(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let b = build_association_matrix(&same, &split, &[1]).unwrap();
        assert_eq!(b, Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap());
        let orth = AttributeMatrix::from_columns(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = build_association_matrix(&orth, &split, &[1]).unwrap();
        assert_eq!(b, Matrix::zeros(2, 2));
    }

    #[test]
    fn association_matches_naive_double_loop() {
        let attrs = random_attrs(4, 3, 8);
        let split = ClassSplit::leading_seen(2, 4).unwrap();
        let b = build_association_matrix(&attrs, &split, &[2, 3]).unwrap();
        assert!(b.max_abs_diff(&naive_association(&attrs, &split, &[2, 3])) < 1e-12);
        assert_eq!(b, b.transpose());
    }

    #[test]
    fn association_rejects_seen_class_in_subset() {
        let attrs = random_attrs(4, 3, 8);
        let split = ClassSplit::leading_seen(2, 4).unwrap();
        assert!(matches!(build_association_matrix(&attrs, &split, &[1]), Err(Error::Argument(_))));
    }

    #[test]
    fn zero_attribute_column_rejected() {
        let err = AttributeMatrix::from_columns(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::DegenerateVector(_)));
    }

    #[test]
    fn projection_examples() {
        let p = compute_projection(&Matrix::identity(3), 3).unwrap();
        assert!(p.matmul(&p.transpose()).unwrap().max_abs_diff(&Matrix::identity(3)) < 1e-12);
        assert!((projection_objective(&p, &Matrix::identity(3)).unwrap() - 3.0).abs() < 1e-12);

        let b = Matrix::diag(&[5.0, 3.0, 1.0]);
        let p = compute_projection(&b, 2).unwrap();
        assert!((projection_objective(&p, &b).unwrap() - 8.0).abs() < 1e-12);
        assert!(p.col(2).iter().all(|&x| x == 0.0));

        assert!(matches!(compute_projection(&b, 4), Err(Error::Argument(_))));
    }

    #[test]
    fn projection_set_shapes_at_reference_scale() {
        let attrs = random_attrs(50, 85, 1);
        let split = ClassSplit::leading_seen(40, 50).unwrap();
        let set = build_projection_set(&attrs, &split, 50, 70, 3).unwrap();
        assert_eq!(set.k(), 50);
        for p in set.projections() {
            assert_eq!((p.rows(), p.cols()), (70, 85));
            assert!(p.matmul(&p.transpose()).unwrap().max_abs_diff(&Matrix::identity(70)) < 1e-8);
        }
        assert!(set.subsets().iter().all(|z| z.len() == 5));
        assert!(split.unseen().iter().all(|&c| set.coverage(50)[c] >= 1));
    }

    #[test]
    fn projection_set_deterministic_and_optimal() {
        let attrs = random_attrs(8, 6, 2);
        let split = ClassSplit::leading_seen(5, 8).unwrap();
        let a = build_projection_set(&attrs, &split, 4, 3, 9).unwrap();
        let b = build_projection_set(&attrs, &split, 4, 3, 9).unwrap();
        assert_eq!(a, b);
        for k in 0..a.k() {
            let bk = build_association_matrix(&attrs, &split, a.subset(k)).unwrap();
            let top: f64 = sym_eig(&bk, 3).unwrap().values.iter().sum();
            let obj = projection_objective(a.projection(k), &bk).unwrap();
            assert!((obj - top).abs() <= 1e-6 * top.abs().max(1.0));
        }
    }

    #[test]
    fn ablation_sets() {
        let attrs = random_attrs(6, 4, 2);
        let split = ClassSplit::leading_seen(3, 6).unwrap();
        let single = full_subset_projection(&attrs, &split, 3).unwrap();
        assert_eq!(single.k(), 1);
        assert_eq!(single.subset(0), split.unseen());
        let ident = identity_projection_set(&split, 4, 1, 0).unwrap();
        assert_eq!(ident.projection(0), &Matrix::identity(4));
        assert_eq!(ident.subset(0), split.unseen());
    }

    #[test]
    fn binary_round_trip() {
        let attrs = random_attrs(7, 5, 4);
        let split = ClassSplit::leading_seen(4, 7).unwrap();
        let set = build_projection_set(&attrs, &split, 3, 2, 1).unwrap();
        let mut buf = Vec::new();
        set.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 * (3 + 3 + 3 * 2) + 8 * 3 * 2 * 5);
        assert_eq!(ProjectionSet::read_from(&mut buf.as_slice()).unwrap(), set);
        buf.push(0);
        assert!(ProjectionSet::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn default_dim_rule() {
        assert_eq!(default_projection_dim(85), 70);
        assert_eq!(default_projection_dim(312), 70);
        assert_eq!(default_projection_dim(20), 16);
        assert_eq!(default_projection_dim(1), 1);
    }
}
