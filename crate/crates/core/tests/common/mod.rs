//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use pren::adam::Parameters;
use pren::ensemble::EnsembleModel;
use pren::label_embedding::{build_projection_set, AttributeMatrix, ClassId, ClassSplit};
use pren::linalg::Matrix;
use pren::mlp::MlpSpec;

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = gaussian(rng);
            a.set(i, j, v);
            a.set(j, i, v);
        }
    }
    a
}

fn mat_vec(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// All eigenvalues of a symmetric matrix, largest first, by power iteration
/// with Hotelling deflation on a shifted copy that is positive semidefinite.
pub fn power_iteration_eigenvalues(a: &Matrix) -> Vec<f64> {
    let n = a.rows();
    let shift = a.frobenius_norm() + 1.0;
    let mut b: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| a.get(i, j) + if i == j { shift } else { 0.0 }).collect())
        .collect();
    let mut values = Vec::with_capacity(n);
    for round in 0..n {
        // deterministic start vector with all components nonzero
        let mut v = unit(&(0..n).map(|i| 1.0 + 0.1 * ((i * 7 + round * 3) % 11) as f64).collect::<Vec<_>>());
        let mut lambda = 0.0;
        for _ in 0..200_000 {
            let w = mat_vec(&b, &v);
            let next = w.iter().zip(&v).map(|(x, y)| x * y).sum::<f64>();
            let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if wn == 0.0 {
                lambda = 0.0;
                break;
            }
            let nv: Vec<f64> = w.iter().map(|x| x / wn).collect();
            let residual = w.iter().zip(&v).map(|(x, y)| (x - next * y).powi(2)).sum::<f64>().sqrt();
            v = nv;
            lambda = next;
            if residual < 1e-13 * shift {
                break;
            }
        }
        values.push(lambda - shift);
        for i in 0..n {
            for j in 0..n {
                b[i][j] -= lambda * v[i] * v[j];
            }
        }
    }
    values.sort_by(|x, y| y.total_cmp(x));
    values
}

/// `h x m` matrix with orthonormal rows: Gram-Schmidt on Gaussian rows.
pub fn random_orthonormal_rows(h: usize, m: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(h);
    while rows.len() < h {
        let mut v: Vec<f64> = (0..m).map(|_| gaussian(rng)).collect();
        for _ in 0..2 {
            for r in &rows {
                let d: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(a, b)| *a -= d * b);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            rows.push(v.iter().map(|x| x / n).collect());
        }
    }
    Matrix::from_rows(&rows).unwrap()
}

/// `tr(P B Pᵀ)` with explicit loops.
pub fn trace_objective(p: &Matrix, b: &Matrix) -> f64 {
    let mut t = 0.0;
    for r in 0..p.rows() {
        for i in 0..b.rows() {
            for j in 0..b.cols() {
                t += p.get(r, i) * b.get(i, j) * p.get(r, j);
            }
        }
    }
    t
}

/// Direct reading of the normalized vote: for each unseen class, the number of
/// members voting for it over the number of subsets that contain it.
pub fn brute_force_phi(raw: &[ClassId], subsets: &[Vec<ClassId>], unseen: &[ClassId]) -> Vec<f64> {
    unseen
        .iter()
        .map(|&c| {
            let votes = raw.iter().filter(|&&v| v == c).count();
            let coverage = subsets.iter().filter(|z| z.contains(&c)).count();
            votes as f64 / coverage as f64
        })
        .collect()
}

/// Smallest class with the maximal value.
pub fn brute_force_winner(phi: &[f64], unseen: &[ClassId]) -> ClassId {
    let best = phi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    unseen.iter().zip(phi).filter(|(_, &p)| p == best).map(|(&c, _)| c).min().unwrap()
}

pub fn random_attributes(m: usize, l: usize, rng: &mut ChaCha8Rng) -> AttributeMatrix {
    let cols: Vec<Vec<f64>> = (0..l).map(|_| (0..m).map(|_| gaussian(rng)).collect()).collect();
    AttributeMatrix::from_columns(&cols).unwrap()
}

/// The small network used for gradient checks: 6 inputs, a 5-wide extractor,
/// 4-dimensional projections, 3 members and 6 classes (3 seen, 3 unseen).
pub fn toy_model(seed: u64) -> EnsembleModel {
    let mut rng: ChaCha8Rng = rand::SeedableRng::seed_from_u64(seed);
    let attrs = random_attributes(7, 6, &mut rng);
    let split = ClassSplit::leading_seen(3, 6).unwrap();
    let proj = build_projection_set(&attrs, &split, 3, 4, seed).unwrap();
    let extractor = MlpSpec::new(vec![6, 5], true).unwrap();
    EnsembleModel::new(&extractor, &[7], false, proj, attrs, seed + 1).unwrap()
}

pub fn random_batch(n: usize, d: usize, classes: usize, rng: &mut ChaCha8Rng) -> (Matrix, Vec<ClassId>) {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| gaussian(rng)).collect()).collect();
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    (Matrix::from_rows(&rows).unwrap(), labels)
}

/// Central differences of the loss for every parameter coordinate.
pub fn numeric_gradient(model: &EnsembleModel, x: &Matrix, labels: &[ClassId], step: f64) -> Vec<f64> {
    let mut probe = model.clone();
    let shapes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
    let mut out = Vec::new();
    for (ti, &len) in shapes.iter().enumerate() {
        for j in 0..len {
            let orig = probe.tensors()[ti][j];
            probe.tensors_mut()[ti][j] = orig + step;
            let up = probe.nll_loss(x, labels).unwrap();
            probe.tensors_mut()[ti][j] = orig - step;
            let down = probe.nll_loss(x, labels).unwrap();
            probe.tensors_mut()[ti][j] = orig;
            out.push((up - down) / (2.0 * step));
        }
    }
    out
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Largest relative deviation between the analytic gradient and central
/// differences over every parameter coordinate, with the coordinate count.
pub fn max_gradient_error(model: &EnsembleModel, x: &Matrix, labels: &[ClassId], step: f64) -> (f64, usize) {
    let (_, grads) = model.backward(x, labels).unwrap();
    let analytic: Vec<f64> = grads.tensors().iter().flat_map(|t| t.iter().copied()).collect();
    let numeric = numeric_gradient(model, x, labels, step);
    let worst = analytic.iter().zip(&numeric).map(|(&a, &n)| relative_error(a, n)).fold(0.0, f64::max);
    (worst, analytic.len())
}
