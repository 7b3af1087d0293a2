//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use super::DenseMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    first_moment: Vec<DenseMatrix>,
    second_moment: Vec<DenseMatrix>,
    step: u64,
}

impl AdamState {
    /// Zeroed moments shaped like `params`.
    pub fn new(params: &[DenseMatrix], config: AdamConfig) -> Self {
        let zeros: Vec<_> = params
            .iter()
            .map(|p| DenseMatrix::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            config,
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[DenseMatrix] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[DenseMatrix] {
        &self.second_moment
    }
}

/// One Adam update applied in place to `params`.
pub fn adam_step(params: &mut [&mut DenseMatrix], grads: &[DenseMatrix], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "{} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                state.first_moment.len()
            ),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if !p.same_shape(g) || !p.same_shape(&state.first_moment[i]) {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "slot {i}: param {:?}, grad {:?}, moment {:?}",
                    p.shape(),
                    g.shape(),
                    state.first_moment[i].shape()
                ),
            ));
        }
    }

    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);

    for (i, p) in params.iter_mut().enumerate() {
        let m = state.first_moment[i].as_mut_slice();
        let v = state.second_moment[i].as_mut_slice();
        for (k, (w, &gk)) in p.as_mut_slice().iter_mut().zip(grads[i].as_slice()).enumerate() {
            m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
            v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = DenseMatrix::from_rows(&[&[1.0, -2.0]]);
        let orig = p.clone();
        let mut st = AdamState::new(&[p.clone()], AdamConfig::default());
        adam_step(&mut [&mut p], &[DenseMatrix::zeros(1, 2)], &mut st).unwrap();
        assert_eq!(p, orig);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g and v̂ = g² after one step, so Δ = lr·g/(|g| + ε) ≈ lr·sign(g).
        let cfg = AdamConfig::default();
        let mut p = DenseMatrix::from_rows(&[&[0.0, 0.0, 0.0]]);
        let g = DenseMatrix::from_rows(&[&[0.5, -3.0, 1e-2]]);
        let mut st = AdamState::new(&[p.clone()], cfg);
        adam_step(&mut [&mut p], &[g.clone()], &mut st).unwrap();
        for k in 0..3 {
            let gk = g.get(0, k);
            let expected = -cfg.learning_rate * gk / (gk.abs() + cfg.epsilon);
            assert!((p.get(0, k) - expected).abs() < 1e-15);
            assert!((p.get(0, k).abs() - cfg.learning_rate).abs() < 1e-8);
        }
    }

    #[test]
    fn deterministic() {
        let p0 = DenseMatrix::from_rows(&[&[0.3, 0.1]]);
        let g = DenseMatrix::from_rows(&[&[0.2, -0.7]]);
        let st0 = AdamState::new(&[p0.clone()], AdamConfig::default());
        let (mut a, mut b) = (p0.clone(), p0);
        let (mut sa, mut sb) = (st0.clone(), st0);
        adam_step(&mut [&mut a], &[g.clone()], &mut sa).unwrap();
        adam_step(&mut [&mut b], &[g], &mut sb).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = DenseMatrix::zeros(2, 2);
        let mut st = AdamState::new(&[p.clone()], AdamConfig::default());
        assert!(adam_step(&mut [&mut p], &[DenseMatrix::zeros(1, 2)], &mut st).is_err());
        assert_eq!(st.step_count(), 0);
    }
}
