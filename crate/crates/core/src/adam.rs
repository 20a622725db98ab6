//! Bias-corrected Adam.

use crate::error::{Error, Result};

/// Anything exposing its trainable tensors in a fixed order.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<P: Parameters + ?Sized>(params: &P, config: AdamConfig) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        AdamState {
            config,
            step: 0,
            first_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

pub fn adam_step<P, G>(params: &mut P, grads: &G, state: &mut AdamState) -> Result<()>
where
    P: Parameters + ?Sized,
    G: Parameters + ?Sized,
{
    let grads = grads.tensors();
    let mut params = params.tensors_mut();
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::Shape(format!(
            "{} parameter tensors, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
        if p.len() != g.len() || p.len() != state.first_moment[i].len() {
            return Err(Error::Shape(format!("tensor {i}: {} params, {} gradients", p.len(), g.len())));
        }
    }

    state.step += 1;
    let AdamConfig { learning_rate, beta1, beta2, epsilon } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        for j in 0..p.len() {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Flat(Vec<Vec<f64>>);

    impl Parameters for Flat {
        fn tensors(&self) -> Vec<&[f64]> {
            self.0.iter().map(Vec::as_slice).collect()
        }
        fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
            self.0.iter_mut().map(Vec::as_mut_slice).collect()
        }
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = Flat(vec![vec![1.0, -2.0], vec![3.0]]);
        let g = Flat(vec![vec![0.0, 0.0], vec![0.0]]);
        let mut s = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &g, &mut s).unwrap();
        assert_eq!(p.0, vec![vec![1.0, -2.0], vec![3.0]]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_by_hand() {
        // m̂ = 0.5, v̂ = 0.25, so p' = 1 - 0.001·0.5/(0.5 + 1e-8)
        let mut p = Flat(vec![vec![1.0]]);
        let g = Flat(vec![vec![0.5]]);
        let mut s = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &g, &mut s).unwrap();
        let expected = 1.0 - 0.001 * 0.5 / (0.5 + 1e-8);
        assert!((p.0[0][0] - expected).abs() < 1e-15);
        assert!((p.0[0][0] - 0.999).abs() < 1e-6);
    }

    #[test]
    fn identical_parameters_stay_identical() {
        let mut p = Flat(vec![vec![0.7, 0.7]]);
        let mut s = AdamState::new(&p, AdamConfig::default());
        for step in 0..20 {
            let g = Flat(vec![vec![(step as f64).sin(); 2]]);
            adam_step(&mut p, &g, &mut s).unwrap();
            assert_eq!(p.0[0][0], p.0[0][1]);
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut p = Flat(vec![vec![1.0]]);
        let mut s = AdamState::new(&p, AdamConfig::default());
        assert!(adam_step(&mut p, &Flat(vec![vec![1.0, 2.0]]), &mut s).is_err());
        assert!(adam_step(&mut p, &Flat(vec![]), &mut s).is_err());
        assert_eq!(s.step, 0);
    }
}
