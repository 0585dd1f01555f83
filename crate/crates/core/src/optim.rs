//! Adam / AdamW with explicit, copyable state.
//!
//! The state is a plain value (`m`, `v`, `t`) so that agent algorithms can
//! deep-copy it, share it, or drive it with an externally supplied step index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paramvec::ParamVector;

/// How weight decay enters the update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    /// AdamW: `p <- p - alpha * lambda * p` applied outside the moments.
    Decoupled,
    /// Classic Adam L2: `g <- g + lambda * p` before the moments are updated.
    AdamStyle,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub b1: f64,
    pub b2: f64,
    pub eps: f64,
    pub decay_mode: DecayMode,
    /// When false the first moment is the raw (decayed) gradient, no EMA.
    pub use_m: bool,
    /// With `use_m = false`, still divide the raw first moment by `1 - b1^t`.
    pub bias_correct_raw_m: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            alpha: 1e-3,
            lambda: 1e-2,
            b1: 0.9,
            b2: 0.999,
            eps: 1e-8,
            decay_mode: DecayMode::Decoupled,
            use_m: true,
            bias_correct_raw_m: true,
        }
    }
}

impl AdamConfig {
    /// Baseline AdamW defaults.
    pub fn adamw() -> Self {
        Self::default()
    }

    /// Adam with L2-style decay, the default inside the agent algorithms.
    pub fn adam_style() -> Self {
        AdamConfig {
            decay_mode: DecayMode::AdamStyle,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0
            && self.alpha.is_finite()
            && self.lambda >= 0.0
            && self.lambda.is_finite()
            && (0.0..1.0).contains(&self.b1)
            && (0.0..1.0).contains(&self.b2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam config: {self:?}")))
        }
    }

    fn m_correction(&self, t: u64) -> f64 {
        if self.use_m || self.bias_correct_raw_m {
            1.0 - self.b1.powi(t as i32)
        } else {
            1.0
        }
    }

    fn v_correction(&self, t: u64) -> f64 {
        1.0 - self.b2.powi(t as i32)
    }
}

/// Accumulated Adam moments and the index of the last step taken.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: ParamVector,
    pub v: ParamVector,
    pub t: u64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        AdamState {
            m: ParamVector::zeros(dim),
            v: ParamVector::zeros(dim),
            t: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    /// Deep copy; the copy and the source evolve independently.
    pub fn copy_state(&self) -> AdamState {
        self.clone()
    }

    /// One Adam step with the step counter advanced by one.
    pub fn step(&mut self, params: &mut ParamVector, grad: &ParamVector, cfg: &AdamConfig) -> Result<()> {
        let t = self.t + 1;
        self.step_at(params, grad, t, cfg)
    }

    /// One Adam step using an explicit step index `t` for bias correction.
    ///
    /// The counter is set to `t`. Calling this twice with the same `t`
    /// mutates the moments twice, which is what the connected-momenta
    /// algorithm does for prey and predator.
    pub fn step_at(
        &mut self,
        params: &mut ParamVector,
        grad: &ParamVector,
        t: u64,
        cfg: &AdamConfig,
    ) -> Result<()> {
        let n = self.dim();
        if params.len() != n || grad.len() != n {
            return Err(Error::invalid(format!(
                "Adam dimension mismatch: state {n}, params {}, grad {}",
                params.len(),
                grad.len()
            )));
        }
        if t == 0 {
            return Err(Error::InvalidState("Adam step index must be >= 1".into()));
        }
        if let Some(i) = grad.as_slice().iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric {
                step: t,
                what: format!("gradient entry {i} is {}", grad[i]),
            });
        }
        self.t = t;
        let mc = cfg.m_correction(t);
        let vc = cfg.v_correction(t);
        let coupled = cfg.decay_mode == DecayMode::AdamStyle && cfg.lambda != 0.0;
        let decoupled = cfg.decay_mode == DecayMode::Decoupled && cfg.lambda != 0.0;
        let shrink = 1.0 - cfg.alpha * cfg.lambda;

        let m = self.m.as_mut_slice();
        let v = self.v.as_mut_slice();
        let p = params.as_mut_slice();
        for i in 0..n {
            let g = if coupled { grad[i] + cfg.lambda * p[i] } else { grad[i] };
            m[i] = if cfg.use_m {
                cfg.b1 * m[i] + (1.0 - cfg.b1) * g
            } else {
                g
            };
            v[i] = cfg.b2 * v[i] + (1.0 - cfg.b2) * g * g;
            let m_hat = m[i] / mc;
            let v_hat = v[i] / vc;
            if decoupled {
                p[i] *= shrink;
            }
            p[i] -= cfg.alpha * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        Ok(())
    }

    /// Apply the Adam direction from the current moments without touching them.
    pub fn apply_frozen(&self, params: &mut ParamVector, cfg: &AdamConfig) -> Result<()> {
        if self.t == 0 {
            return Err(Error::InvalidState("no Adam step has been taken".into()));
        }
        let mc = cfg.m_correction(self.t);
        let vc = cfg.v_correction(self.t);
        for ((p, m), v) in params
            .as_mut_slice()
            .iter_mut()
            .zip(self.m.as_slice())
            .zip(self.v.as_slice())
        {
            *p -= cfg.alpha * (m / mc) / ((v / vc).sqrt() + cfg.eps);
        }
        Ok(())
    }

    /// `‖m̂ / (√v̂ + ε)‖` for the most recent step.
    pub fn effective_step_norm(&self, cfg: &AdamConfig) -> Result<f64> {
        if self.t == 0 {
            return Err(Error::InvalidState(
                "effective step norm requested before the first step".into(),
            ));
        }
        let mc = cfg.m_correction(self.t);
        let vc = cfg.v_correction(self.t);
        let s: f64 = self
            .m
            .as_slice()
            .iter()
            .zip(self.v.as_slice())
            .map(|(m, v)| {
                let r = (m / mc) / ((v / vc).sqrt() + cfg.eps);
                r * r
            })
            .sum();
        Ok(s.sqrt())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(
    state: &mut AdamState,
    params: &mut ParamVector,
    grad: &ParamVector,
    cfg: &AdamConfig,
) -> Result<()> {
    state.step(params, grad, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(x: f64) -> ParamVector {
        ParamVector::new(vec![x])
    }

    fn no_decay() -> AdamConfig {
        AdamConfig {
            lambda: 0.0,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn first_step_unit_gradient() {
        let cfg = no_decay();
        let mut st = AdamState::new(1);
        let mut p = scalar(0.0);
        st.step(&mut p, &scalar(1.0), &cfg).unwrap();
        assert_eq!(st.t, 1);
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15, "{}", p[0]);
        assert!((p[0] - (-9.999_999_90e-4)).abs() < 1e-12);
        let esn = st.effective_step_norm(&cfg).unwrap();
        assert!((esn - 1.0 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let cfg = no_decay();
        let mut st = AdamState::new(3);
        let mut p = ParamVector::new(vec![1.0, -2.0, 3.5]);
        let before = p.clone();
        st.step(&mut p, &ParamVector::zeros(3), &cfg).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.effective_step_norm(&cfg).unwrap(), 0.0);
    }

    #[test]
    fn raw_first_moment_is_bias_corrected_by_default() {
        let cfg = AdamConfig {
            use_m: false,
            ..no_decay()
        };
        let mut st = AdamState::new(1);
        let mut p = scalar(0.0);
        st.step(&mut p, &scalar(2.0), &cfg).unwrap();
        assert_eq!(st.m[0], 2.0);
        // m̂ = 2 / 0.1 = 20, v̂ = 4, step = -alpha * 20 / (2 + eps)
        let expected = -1e-3 * 20.0 / (2.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((p[0] + 10.0 * 1e-3).abs() < 1e-9);

        let cfg_nc = AdamConfig {
            bias_correct_raw_m: false,
            ..cfg
        };
        let mut st = AdamState::new(1);
        let mut p = scalar(0.0);
        st.step(&mut p, &scalar(2.0), &cfg_nc).unwrap();
        assert!((p[0] + 1e-3 * 2.0 / (2.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn effective_step_norm_two_dims() {
        let cfg = no_decay();
        let mut st = AdamState::new(2);
        let mut p = ParamVector::zeros(2);
        st.step(&mut p, &ParamVector::new(vec![1.0, 1.0]), &cfg).unwrap();
        let esn = st.effective_step_norm(&cfg).unwrap();
        assert!((esn - 2f64.sqrt() / (1.0 + 1e-8)).abs() < 1e-14);
    }

    #[test]
    fn effective_step_norm_requires_a_step() {
        let st = AdamState::new(2);
        assert!(matches!(
            st.effective_step_norm(&AdamConfig::default()),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn adam_style_decay_enters_gradient() {
        let cfg = AdamConfig {
            lambda: 0.5,
            decay_mode: DecayMode::AdamStyle,
            ..AdamConfig::default()
        };
        let mut st = AdamState::new(1);
        let mut p = scalar(2.0);
        st.step(&mut p, &scalar(0.0), &cfg).unwrap();
        // g' = 0 + 0.5 * 2 = 1, so the first step is -alpha / (1 + eps)
        assert!((p[0] - (2.0 - 1e-3 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((st.m[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn decoupled_decay_shrinks_params() {
        let cfg = AdamConfig {
            lambda: 0.5,
            ..AdamConfig::default()
        };
        let mut st = AdamState::new(1);
        let mut p = scalar(2.0);
        st.step(&mut p, &scalar(0.0), &cfg).unwrap();
        assert_eq!(st.m[0], 0.0);
        assert!((p[0] - 2.0 * (1.0 - 1e-3 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_reports_step() {
        let mut st = AdamState::new(2);
        st.t = 6;
        let mut p = ParamVector::zeros(2);
        let err = st
            .step(&mut p, &ParamVector::new(vec![0.0, f64::NAN]), &AdamConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::Numeric { step: 7, .. }));
        assert_eq!(st.t, 6);
    }

    #[test]
    fn dimension_mismatch() {
        let mut st = AdamState::new(2);
        let mut p = ParamVector::zeros(3);
        assert!(st.step(&mut p, &ParamVector::zeros(3), &AdamConfig::default()).is_err());
    }

    #[test]
    fn constant_gradient_first_step_is_sign() {
        let cfg = no_decay();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g: Vec<f64> = (0..50).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut st = AdamState::new(50);
        let mut p = ParamVector::zeros(50);
        st.step(&mut p, &ParamVector::new(g.clone()), &cfg).unwrap();
        for (pi, gi) in p.as_slice().iter().zip(&g) {
            assert!((pi + cfg.alpha * gi.signum()).abs() <= cfg.alpha * 1e-6);
        }
    }

    fn random_grads(n: usize, steps: usize, seed: u64) -> Vec<ParamVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..steps)
            .map(|_| ParamVector::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect()
    }

    #[test]
    fn decay_modes_agree_without_decay() {
        let grads = random_grads(8, 200, 11);
        let run = |mode| {
            let cfg = AdamConfig {
                lambda: 0.0,
                decay_mode: mode,
                ..AdamConfig::default()
            };
            let mut st = AdamState::new(8);
            let mut p = ParamVector::new(vec![0.25; 8]);
            let mut traj = Vec::new();
            for g in &grads {
                st.step(&mut p, g, &cfg).unwrap();
                traj.extend(p.as_slice().iter().map(|x| x.to_bits()));
            }
            traj
        };
        assert_eq!(run(DecayMode::Decoupled), run(DecayMode::AdamStyle));
    }

    #[test]
    fn copy_isolation_and_determinism() {
        let cfg = AdamConfig::default();
        let grads = random_grads(5, 110, 5);
        let mut src = AdamState::new(5);
        let fresh = src.copy_state();
        assert_eq!(fresh, AdamState::new(5));

        let mut p = ParamVector::new(vec![1.0; 5]);
        for g in &grads[..10] {
            src.step(&mut p, g, &cfg).unwrap();
        }
        let mut copy = src.copy_state();
        assert_eq!(copy.t, 10);
        assert!(copy.m.as_slice().iter().zip(src.m.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(copy.v.as_slice().iter().zip(src.v.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));

        let snapshot = src.clone();
        let mut q = p.clone();
        for g in &grads[10..] {
            copy.step(&mut q, g, &cfg).unwrap();
        }
        assert_eq!(copy.t, 110);
        assert_eq!(src, snapshot);

        // same inputs, same trajectory
        let mut again = snapshot.copy_state();
        let mut q2 = p.clone();
        for g in &grads[10..] {
            again.step(&mut q2, g, &cfg).unwrap();
        }
        assert_eq!(q, q2);
        assert_eq!(again, copy);
    }

    #[test]
    fn step_at_reuses_index() {
        let cfg = no_decay();
        let mut st = AdamState::new(1);
        let mut p = scalar(0.0);
        st.step_at(&mut p, &scalar(1.0), 3, &cfg).unwrap();
        st.step_at(&mut p, &scalar(1.0), 3, &cfg).unwrap();
        assert_eq!(st.t, 3);
        assert!(st.step_at(&mut p, &scalar(1.0), 0, &cfg).is_err());
    }

    #[test]
    fn frozen_application_leaves_moments() {
        let cfg = no_decay();
        let mut st = AdamState::new(1);
        let mut p = scalar(0.0);
        st.step(&mut p, &scalar(1.0), &cfg).unwrap();
        let before = st.clone();
        let mut q = scalar(0.0);
        st.apply_frozen(&mut q, &cfg).unwrap();
        assert_eq!(st, before);
        assert_eq!(q, p);
    }

    #[test]
    fn config_validation() {
        assert!(AdamConfig::default().validate().is_ok());
        assert!(AdamConfig { b1: 1.0, ..AdamConfig::default() }.validate().is_err());
        assert!(AdamConfig { alpha: 0.0, ..AdamConfig::default() }.validate().is_err());
        assert!(AdamConfig { lambda: -1.0, ..AdamConfig::default() }.validate().is_err());
        assert!(AdamConfig { eps: 0.0, ..AdamConfig::default() }.validate().is_err());
    }
}
