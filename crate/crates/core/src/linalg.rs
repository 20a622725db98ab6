//! Dense row-major matrices and the symmetric eigensolver used to build label
//! embedding projections.

use std::fmt;

use crate::error::{Error, Result};

/// Off-diagonal Frobenius norm at which the Jacobi iteration stops, relative to
/// `max(1, ‖A‖_F)`.
pub const JACOBI_TOLERANCE: f64 = 1e-10;
const JACOBI_MAX_SWEEPS: usize = 100;
const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// Dense matrix of `f64` stored row-major.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite matrix entry at ({}, {})", pos / cols.max(1), pos % cols.max(1))));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("rows have unequal lengths".into()));
        }
        Matrix::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Matrix::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), v)).collect())
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        let tol = rel_tol * self.max_abs().max(1.0);
        (0..self.rows).all(|i| (i + 1..self.cols).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine of the angle between `a` and `b`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateVector("cosine similarity of a zero-norm vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Leading eigenpairs of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult {
    /// Eigenvalues, non-increasing.
    pub values: Vec<f64>,
    /// `n x h` matrix whose columns are the matching unit eigenvectors.
    pub vectors: Matrix,
}

impl EigenResult {
    pub fn vector(&self, i: usize) -> Vec<f64> {
        self.vectors.col(i)
    }
}

/// Top `h` eigenpairs of the symmetric matrix `a` by cyclic Jacobi rotations.
///
/// Each eigenvector is oriented so that its first entry of largest magnitude is
/// positive. Repeated eigenvalues yield an arbitrary orthonormal basis of the
/// eigenspace.
pub fn sym_eig(a: &Matrix, h: usize) -> Result<EigenResult> {
    if !a.is_square() {
        return Err(Error::Shape(format!("eigendecomposition needs a square matrix, got {}x{}", a.rows, a.cols)));
    }
    let n = a.rows;
    if h == 0 || h > n {
        return Err(Error::Argument(format!("requested {h} eigenpairs of a {n}x{n} matrix")));
    }
    if !a.is_symmetric(SYMMETRY_TOLERANCE) {
        return Err(Error::Symmetry(format!("{n}x{n} input differs from its transpose")));
    }

    let mut w = a.clone();
    // symmetrize away rounding noise so the rotations see an exactly symmetric input
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (w.get(i, j) + w.get(j, i));
            w.set(i, j, avg);
            w.set(j, i, avg);
        }
    }
    let mut v = Matrix::identity(n);
    let tol = JACOBI_TOLERANCE * a.frobenius_norm().max(1.0);

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&w) < tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                rotate(&mut w, &mut v, p, q);
            }
        }
    }
    if !converged && off_diagonal_norm(&w) >= tol {
        return Err(Error::Numerical(format!("Jacobi iteration did not converge for {n}x{n} matrix")));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w.get(j, j).total_cmp(&w.get(i, i)));

    let mut values = Vec::with_capacity(h);
    let mut vectors = Matrix::zeros(n, h);
    for (out, &idx) in order.iter().take(h).enumerate() {
        values.push(w.get(idx, idx));
        let mut col = v.col(idx);
        orient(&mut col);
        for (r, x) in col.into_iter().enumerate() {
            vectors.set(r, out, x);
        }
    }
    Ok(EigenResult { values, vectors })
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows;
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a.get(i, j) * a.get(i, j);
            }
        }
    }
    s.sqrt()
}

/// One Jacobi rotation annihilating `a[p][q]`, accumulated into `v`.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let apq = a.get(p, q);
    if apq == 0.0 {
        return;
    }
    let n = a.rows;
    let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    for k in 0..n {
        let (akp, akq) = (a.get(k, p), a.get(k, q));
        a.set(k, p, c * akp - s * akq);
        a.set(k, q, s * akp + c * akq);
    }
    for k in 0..n {
        let (apk, aqk) = (a.get(p, k), a.get(q, k));
        a.set(p, k, c * apk - s * aqk);
        a.set(q, k, s * apk + c * aqk);
    }
    a.set(p, q, 0.0);
    a.set(q, p, 0.0);
    for k in 0..n {
        let (vkp, vkq) = (v.get(k, p), v.get(k, q));
        v.set(k, p, c * vkp - s * vkq);
        v.set(k, q, s * vkp + c * vkq);
    }
}

fn orient(col: &mut [f64]) {
    let mut best = 0;
    for (i, x) in col.iter().enumerate() {
        if x.abs() > col[best].abs() {
            best = i;
        }
    }
    if col[best] < 0.0 {
        col.iter_mut().for_each(|x| *x = -*x);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let x = rng.random_range(-1.0..1.0);
                a.set(i, j, x);
                a.set(j, i, x);
            }
        }
        a
    }

    /// Projector onto the span of the given columns.
    fn projector(vectors: &Matrix) -> Matrix {
        vectors.matmul(&vectors.transpose()).unwrap()
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let r = sym_eig(&Matrix::identity(4), 4).unwrap();
        assert_eq!(r.values, vec![1.0; 4]);
        let gram = r.vectors.transpose().matmul(&r.vectors).unwrap();
        assert!(gram.max_abs_diff(&Matrix::identity(4)) < 1e-12);
    }

    #[test]
    fn diagonal_picks_largest_entries() {
        let r = sym_eig(&Matrix::diag(&[3.0, 1.0, 2.0]), 2).unwrap();
        assert_eq!(r.values, vec![3.0, 2.0]);
        assert_eq!(r.vector(0), vec![1.0, 0.0, 0.0]);
        assert_eq!(r.vector(1), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn residuals_and_reconstruction() {
        for seed in 0..10 {
            let n = 2 + seed as usize;
            let a = random_symmetric(n, seed);
            let r = sym_eig(&a, n).unwrap();
            let mut recon = Matrix::zeros(n, n);
            for (i, &lambda) in r.values.iter().enumerate() {
                let u = r.vector(i);
                let au = a.matvec(&u).unwrap();
                let resid = au.iter().zip(&u).fold(0.0f64, |m, (x, y)| m.max((x - lambda * y).abs()));
                assert!(resid < 1e-7 * lambda.abs().max(1.0), "residual {resid}");
                for p in 0..n {
                    for q in 0..n {
                        recon.set(p, q, recon.get(p, q) + lambda * u[p] * u[q]);
                    }
                }
            }
            assert!(recon.max_abs_diff(&a) < 1e-6);
            let gram = r.vectors.transpose().matmul(&r.vectors).unwrap();
            assert!(gram.max_abs_diff(&Matrix::identity(n)) < 1e-8);
            assert!(r.values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn repeated_eigenvalue_subspace_is_stable() {
        // diag(2, 2, 1) rotated: the top-2 eigenspace is fixed even though its basis is not
        let q = sym_eig(&random_symmetric(3, 99), 3).unwrap().vectors;
        let a = q.matmul(&Matrix::diag(&[2.0, 2.0, 1.0])).unwrap().matmul(&q.transpose()).unwrap();
        let r = sym_eig(&a, 2).unwrap();
        let expected = Matrix::from_rows(&[q.col(0), q.col(1)]).unwrap().transpose();
        assert!(projector(&r.vectors).max_abs_diff(&projector(&expected)) < 1e-9);
    }

    #[test]
    fn sign_convention_is_deterministic() {
        let a = random_symmetric(6, 3);
        let r = sym_eig(&a, 6).unwrap();
        for i in 0..6 {
            let u = r.vector(i);
            let big = u.iter().cloned().fold(0.0f64, |m, x| m.max(x.abs()));
            let first = u.iter().find(|x| x.abs() == big).unwrap();
            assert!(*first > 0.0);
        }
        assert_eq!(r, sym_eig(&a, 6).unwrap());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(sym_eig(&Matrix::zeros(2, 3), 1), Err(Error::Shape(_))));
        let asym = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&asym, 1), Err(Error::Symmetry(_))));
        assert!(matches!(sym_eig(&Matrix::identity(3), 0), Err(Error::Argument(_))));
        assert!(matches!(sym_eig(&Matrix::identity(3), 4), Err(Error::Argument(_))));
    }

    #[test]
    fn cosine_examples() {
        let v = [0.3, -2.0, 5.0];
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let expected = 1.0 / 2.0f64.sqrt();
        assert!((cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - expected).abs() < 1e-15);
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::DegenerateVector(_))));
        assert!(matches!(cosine_similarity(&[1.0], &[1.0, 0.0]), Err(Error::Shape(_))));
    }

    proptest::proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(
            a in proptest::collection::vec(-10.0f64..10.0, 4),
            b in proptest::collection::vec(-10.0f64..10.0, 4),
            alpha in -5.0f64..5.0,
            beta in -5.0f64..5.0,
        ) {
            proptest::prop_assume!(norm(&a) > 1e-3 && norm(&b) > 1e-3 && alpha.abs() > 1e-3 && beta.abs() > 1e-3);
            let base = cosine_similarity(&a, &b).unwrap();
            proptest::prop_assert!((base - cosine_similarity(&b, &a).unwrap()).abs() < 1e-12);
            let sa: Vec<f64> = a.iter().map(|x| alpha * x).collect();
            let sb: Vec<f64> = b.iter().map(|x| beta * x).collect();
            let scaled = cosine_similarity(&sa, &sb).unwrap();
            proptest::prop_assert!((scaled - (alpha * beta).signum() * base).abs() < 1e-9);
        }
    }
}
