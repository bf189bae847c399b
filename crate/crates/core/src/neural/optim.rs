//! Adam, gradient clipping and the learning-rate schedule.

use super::tensor::{Mat, Scalar};

pub const LR_MAX: f64 = 1e-4;
pub const LR_MIN: f64 = 1e-6;

/// Linear decay from `max` at step 0 to `min` at `total`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LinearSchedule {
    pub max: f64,
    pub min: f64,
}

impl Default for LinearSchedule {
    fn default() -> Self {
        LinearSchedule {
            max: LR_MAX,
            min: LR_MIN,
        }
    }
}

impl LinearSchedule {
    pub fn at(&self, step: u64, total: u64) -> f64 {
        if total == 0 {
            return self.max;
        }
        let frac = step.min(total) as f64 / total as f64;
        self.max + (self.min - self.max) * frac
    }
}

/// The default schedule: 1e-4 down to 1e-6.
pub fn lr_schedule(step: u64, total_steps: u64) -> f64 {
    LinearSchedule::default().at(step, total_steps)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState<S> {
    pub m: Vec<Mat<S>>,
    pub v: Vec<Mat<S>>,
    pub step: u64,
    pub cfg: AdamConfig,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &[Mat<S>]) -> AdamState<S> {
        let zeros = || params.iter().map(|p| Mat::zeros(p.rows, p.cols)).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
            cfg: AdamConfig::default(),
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step<S: Scalar>(params: &mut [Mat<S>], grads: &[Mat<S>], state: &mut AdamState<S>, lr: f64) {
    assert_eq!(params.len(), grads.len(), "parameter and gradient count");
    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.cfg;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let (b1, b2) = (S::from_f64_lossy(beta1), S::from_f64_lossy(beta2));
    let step_size = S::from_f64_lossy(lr * c2.sqrt() / c1);
    let eps = S::from_f64_lossy(eps * c2.sqrt());
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.m[i].data;
        let v = &mut state.v[i].data;
        for j in 0..p.data.len() {
            let gj = g.data[j];
            m[j] = b1 * m[j] + (S::one() - b1) * gj;
            v[j] = b2 * v[j] + (S::one() - b2) * gj * gj;
            p.data[j] -= step_size * m[j] / (v[j].sqrt() + eps);
        }
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm<S: Scalar>(grads: &mut [Mat<S>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data.iter())
        .map(|x| x.as_f64() * x.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = S::from_f64_lossy(max_norm / norm);
        for g in grads.iter_mut() {
            g.data.iter_mut().for_each(|x| *x = *x * s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(lr_schedule(0, 1000), 1e-4);
        assert!((lr_schedule(1000, 1000) - 1e-6).abs() < 1e-18);
        assert!((lr_schedule(500, 1000) - 5.05e-5).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // With bias correction the first step is lr * g / |g|.
        let mut p = vec![Mat::from_vec(1, 2, vec![1.0f64, -1.0])];
        let g = vec![Mat::from_vec(1, 2, vec![0.5f64, -2.0])];
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, 0.1);
        assert!((p[0].data[0] - 0.9).abs() < 1e-6);
        assert!((p[0].data[1] + 0.9).abs() < 1e-6);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn clipping() {
        let mut g = vec![Mat::from_vec(1, 2, vec![3.0f64, 4.0])];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0].data[0] - 0.6).abs() < 1e-12);
    }
}
