//! Predator–prey optimization.
//!
//! Two agents move through parameter space. The prey descends the loss with
//! Adam and flees the predator with speed `P(d) = A·exp(-d/σ)`; the predator
//! chases the prey with constant speed `α_p`. Both displacements are along the
//! unit vector `l` pointing from predator to prey and are scaled by the Adam
//! learning rate.
//!
//! Two variants are provided:
//!
//! * [`Algorithm::Separate`]: each agent owns a copy of the pre-training
//!   optimizer state ([`ppm_step`]).
//! * [`Algorithm::Connected`]: one shared Adam moment store that both agents
//!   update in turn ([`ppconn_step`]).
//!
//! When `A > α_p` the separation settles at `d* = σ·ln(A/α_p)`, where flee
//! and chase speeds balance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{AdamConfig, AdamState};
use crate::oracle::GradientOracle;
use crate::paramvec::{unit_direction, ParamVector, DEFAULT_DEGENERATE_FLOOR};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialParams {
    /// Interaction strength `A`.
    pub amplitude: f64,
    /// Interaction radius `σ`.
    pub sigma: f64,
}

impl PotentialParams {
    pub fn new(amplitude: f64, sigma: f64) -> Result<Self> {
        let p = PotentialParams { amplitude, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.amplitude > 0.0 && self.sigma > 0.0 && self.amplitude.is_finite() && self.sigma.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "potential needs A > 0 and sigma > 0, got A={} sigma={}",
                self.amplitude, self.sigma
            )))
        }
    }

    pub fn potential(&self, d: f64) -> Result<f64> {
        potential(d, self)
    }

    pub fn limit_distance(&self, alpha_p: f64) -> Result<Option<f64>> {
        limit_distance(self, alpha_p)
    }
}

/// `A·exp(-d/σ)`.
pub fn potential(d: f64, p: &PotentialParams) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::invalid(format!("potential of negative distance {d}")));
    }
    Ok(p.amplitude * (-d / p.sigma).exp())
}

/// Separation at which flee speed equals chase speed, `σ·ln(A/α_p)`.
///
/// Returns `None` when `A < α_p`: the predator is faster and no positive
/// equilibrium exists.
pub fn limit_distance(p: &PotentialParams, alpha_p: f64) -> Result<Option<f64>> {
    if !(alpha_p > 0.0) {
        return Err(Error::invalid(format!("alpha_p must be > 0, got {alpha_p}")));
    }
    if p.amplitude >= alpha_p {
        Ok(Some(p.sigma * (p.amplitude / alpha_p).ln()))
    } else {
        Ok(None)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Separate optimizers seeded from the pre-training state.
    Separate,
    /// One Adam moment store shared by prey and predator.
    Connected,
}

/// How the predator uses the shared moments in the connected variant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharedMomentsMode {
    /// The predator runs a full Adam update on the shared moments with its
    /// own (possibly zero) gradient plus decay, mutating them.
    Literal,
    /// The predator steps along the prey's freshly updated moments and leaves
    /// them untouched.
    #[default]
    Frozen,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpmConfig {
    pub potential: PotentialParams,
    /// Predator speed `α_p`.
    pub alpha_p: f64,
    /// Prey-only Adam steps before the predator is released.
    pub n_d: u64,
    /// Whether the predator evaluates its own loss gradient.
    pub grad_pred: bool,
    pub adam: AdamConfig,
    pub degenerate_floor: f64,
    pub shared_moments: SharedMomentsMode,
}

impl Default for PpmConfig {
    /// Transformer settings: A = 150, σ = 10, α_p = 2A/3, N_d = 5.
    fn default() -> Self {
        PpmConfig {
            potential: PotentialParams {
                amplitude: 150.0,
                sigma: 10.0,
            },
            alpha_p: 100.0,
            n_d: 5,
            grad_pred: false,
            adam: AdamConfig::adam_style(),
            degenerate_floor: DEFAULT_DEGENERATE_FLOOR,
            shared_moments: SharedMomentsMode::Frozen,
        }
    }
}

impl PpmConfig {
    pub fn validate(&self) -> Result<()> {
        self.potential.validate()?;
        self.adam.validate()?;
        if !(self.alpha_p >= 0.0) || !self.alpha_p.is_finite() {
            return Err(Error::Config(format!("alpha_p must be >= 0, got {}", self.alpha_p)));
        }
        if !(self.degenerate_floor >= 0.0) {
            return Err(Error::Config("degenerate_floor must be >= 0".into()));
        }
        Ok(())
    }

    /// Gradient evaluations per main-loop iteration.
    pub fn calls_per_step(&self) -> u64 {
        1 + self.grad_pred as u64
    }
}

/// Optimizer state of an agent pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AgentMoments {
    Separate { prey: AdamState, predator: AdamState },
    Shared(AdamState),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentPair {
    pub prey: ParamVector,
    pub predator: ParamVector,
    pub moments: AgentMoments,
    /// Index of the last Adam step (pre-training steps included).
    pub t: u64,
}

impl AgentPair {
    /// A pair at explicit positions with fresh optimizer state.
    pub fn from_positions(prey: ParamVector, predator: ParamVector, algorithm: Algorithm) -> Result<Self> {
        if prey.len() != predator.len() {
            return Err(Error::invalid("prey and predator dimensions differ"));
        }
        let dim = prey.len();
        let moments = match algorithm {
            Algorithm::Separate => AgentMoments::Separate {
                prey: AdamState::new(dim),
                predator: AdamState::new(dim),
            },
            Algorithm::Connected => AgentMoments::Shared(AdamState::new(dim)),
        };
        Ok(AgentPair {
            prey,
            predator,
            moments,
            t: 0,
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        match self.moments {
            AgentMoments::Separate { .. } => Algorithm::Separate,
            AgentMoments::Shared(_) => Algorithm::Connected,
        }
    }

    pub fn distance(&self) -> Result<f64> {
        self.prey.distance(&self.predator)
    }

    /// Run one main-loop iteration of whichever algorithm the pair was built for.
    pub fn step(&mut self, oracle: &mut dyn GradientOracle, cfg: &PpmConfig) -> Result<StepRecord> {
        match self.algorithm() {
            Algorithm::Separate => ppm_step(self, oracle, cfg),
            Algorithm::Connected => ppconn_step(self, oracle, cfg),
        }
    }
}

/// What happened during one main-loop iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    /// Predator–prey distance after the optimizer moves, before interaction.
    pub distance: Option<f64>,
    pub potential: Option<f64>,
    pub prey_loss: f64,
    pub predator_loss: Option<f64>,
    pub prey_step_norm: f64,
    pub predator_step_norm: Option<f64>,
    pub oracle_calls: u64,
    pub interaction_skipped: bool,
}

/// Outcome of [`interact`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interaction {
    pub distance: f64,
    pub potential: f64,
}

/// Move the prey away from and the predator towards each other's position.
///
/// Returns `None` (and leaves the pair unchanged) when the agents coincide to
/// within the degenerate floor.
pub fn interact(pair: &mut AgentPair, cfg: &PpmConfig) -> Result<Option<Interaction>> {
    let (d, l) = match unit_direction(&pair.prey, &pair.predator, cfg.degenerate_floor) {
        Ok(v) => v,
        Err(Error::DegenerateDirection { distance, .. }) => {
            log::warn!(
                "step {}: predator and prey coincide (d = {distance:e}); interaction skipped",
                pair.t
            );
            return Ok(None);
        }
        Err(e) => return Err(e),
    };
    let p = cfg.potential.potential(d)?;
    let alpha = cfg.adam.alpha;
    pair.prey.axpy_in_place(alpha * p, &l)?;
    pair.predator.axpy_in_place(alpha * cfg.alpha_p, &l)?;
    Ok(Some(Interaction {
        distance: d,
        potential: p,
    }))
}

/// Build an agent pair from `theta0`.
///
/// The predator stays at `theta0`; the prey takes `cfg.n_d` Adam steps from
/// it. For [`Algorithm::Separate`] both agents get deep copies of the
/// accumulated optimizer state; for [`Algorithm::Connected`] the accumulated
/// state becomes the single shared store.
pub fn ppm_pretrain(
    theta0: ParamVector,
    oracle: &mut dyn GradientOracle,
    cfg: &PpmConfig,
    algorithm: Algorithm,
) -> Result<AgentPair> {
    cfg.validate()?;
    if oracle.dim() != theta0.len() {
        return Err(Error::invalid(format!(
            "oracle dimension {} does not match parameters {}",
            oracle.dim(),
            theta0.len()
        )));
    }
    let mut state = AdamState::new(theta0.len());
    let mut theta = theta0.clone();
    for _ in 0..cfg.n_d {
        let (_, g) = oracle.loss_and_grad(&theta)?;
        state.step(&mut theta, &g, &cfg.adam)?;
    }
    let t = state.t;
    let moments = match algorithm {
        Algorithm::Separate => AgentMoments::Separate {
            prey: state.copy_state(),
            predator: state.copy_state(),
        },
        Algorithm::Connected => AgentMoments::Shared(state),
    };
    Ok(AgentPair {
        prey: theta,
        predator: theta0,
        moments,
        t,
    })
}

/// One iteration of the separate-optimizer algorithm.
pub fn ppm_step(pair: &mut AgentPair, oracle: &mut dyn GradientOracle, cfg: &PpmConfig) -> Result<StepRecord> {
    let AgentMoments::Separate { prey: prey_state, predator: pred_state } = &mut pair.moments else {
        return Err(Error::InvalidState("ppm_step needs separate optimizer states".into()));
    };
    let calls_before = oracle.calls();
    let t = pair.t + 1;

    let (prey_loss, g) = oracle.loss_and_grad(&pair.prey)?;
    check_loss(prey_loss, t)?;
    prey_state.step_at(&mut pair.prey, &g, t, &cfg.adam)?;
    let prey_step_norm = prey_state.effective_step_norm(&cfg.adam)?;

    let (predator_loss, predator_step_norm) = if cfg.grad_pred {
        let (loss, gp) = oracle.loss_and_grad(&pair.predator)?;
        check_loss(loss, t)?;
        pred_state.step_at(&mut pair.predator, &gp, t, &cfg.adam)?;
        (Some(loss), Some(pred_state.effective_step_norm(&cfg.adam)?))
    } else {
        (None, None)
    };
    pair.t = t;

    let hit = interact(pair, cfg)?;
    Ok(StepRecord {
        t,
        distance: hit.map(|h| h.distance),
        potential: hit.map(|h| h.potential),
        prey_loss,
        predator_loss,
        prey_step_norm,
        predator_step_norm,
        oracle_calls: oracle.calls() - calls_before,
        interaction_skipped: hit.is_none(),
    })
}

/// One iteration of the connected-momenta algorithm.
///
/// Both Adam updates use the same step index `t`. Without `grad_pred` the
/// predator's gradient is zero, but in [`SharedMomentsMode::Literal`] its
/// update still folds `λ·y` into the shared moments.
pub fn ppconn_step(pair: &mut AgentPair, oracle: &mut dyn GradientOracle, cfg: &PpmConfig) -> Result<StepRecord> {
    let AgentMoments::Shared(state) = &mut pair.moments else {
        return Err(Error::InvalidState("ppconn_step needs a shared moment store".into()));
    };
    let calls_before = oracle.calls();
    let t = pair.t + 1;

    let (prey_loss, g) = oracle.loss_and_grad(&pair.prey)?;
    check_loss(prey_loss, t)?;
    state.step_at(&mut pair.prey, &g, t, &cfg.adam)?;
    let prey_step_norm = state.effective_step_norm(&cfg.adam)?;

    let (predator_loss, gp) = if cfg.grad_pred {
        let (loss, gp) = oracle.loss_and_grad(&pair.predator)?;
        check_loss(loss, t)?;
        (Some(loss), gp)
    } else {
        (None, ParamVector::zeros(pair.predator.len()))
    };

    let predator_step_norm = match cfg.shared_moments {
        SharedMomentsMode::Literal => {
            state.step_at(&mut pair.predator, &gp, t, &cfg.adam)?;
            state.effective_step_norm(&cfg.adam)?
        }
        SharedMomentsMode::Frozen => {
            if cfg.grad_pred {
                let mut scratch = state.copy_state();
                scratch.step_at(&mut pair.predator, &gp, t, &cfg.adam)?;
                scratch.effective_step_norm(&cfg.adam)?
            } else {
                state.apply_frozen(&mut pair.predator, &cfg.adam)?;
                prey_step_norm
            }
        }
    };
    pair.t = t;

    let hit = interact(pair, cfg)?;
    Ok(StepRecord {
        t,
        distance: hit.map(|h| h.distance),
        potential: hit.map(|h| h.potential),
        prey_loss,
        predator_loss,
        prey_step_norm,
        predator_step_norm: Some(predator_step_norm),
        oracle_calls: oracle.calls() - calls_before,
        interaction_skipped: hit.is_none(),
    })
}

fn check_loss(loss: f64, step: u64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric {
            step,
            what: format!("loss is {loss}"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::FnOracle;

    fn pp(a: f64, s: f64) -> PotentialParams {
        PotentialParams::new(a, s).unwrap()
    }

    fn zero_oracle(dim: usize) -> FnOracle<impl FnMut(&ParamVector, u64) -> Result<(f64, ParamVector)>> {
        FnOracle::new(dim, move |_, _| Ok((0.0, ParamVector::zeros(dim))))
    }

    fn cfg(a: f64, sigma: f64, alpha_p: f64, alpha: f64) -> PpmConfig {
        PpmConfig {
            potential: pp(a, sigma),
            alpha_p,
            adam: AdamConfig {
                alpha,
                lambda: 0.0,
                ..AdamConfig::adam_style()
            },
            ..PpmConfig::default()
        }
    }

    /// Scalar reference map for the separation under pure interaction.
    fn distance_map(d: f64, c: &PpmConfig) -> f64 {
        d + c.adam.alpha * (c.potential.amplitude * (-d / c.potential.sigma).exp() - c.alpha_p)
    }

    #[test]
    fn potential_examples() {
        assert_eq!(potential(0.0, &pp(150.0, 10.0)).unwrap(), 150.0);
        let v = potential(10.0, &pp(150.0, 10.0)).unwrap();
        assert!((v - 55.181_916_175_716_35).abs() < 1e-10, "{v}");
        let v = potential(1.0, &pp(15.0, 1.0)).unwrap();
        assert!((v - 5.518_191_617_571_635).abs() < 1e-12, "{v}");
        assert!(potential(-1e-9, &pp(1.0, 1.0)).is_err());
        assert!(PotentialParams::new(0.0, 1.0).is_err());
        assert!(PotentialParams::new(1.0, -1.0).is_err());
    }

    #[test]
    fn potential_is_strictly_decreasing() {
        let p = pp(150.0, 10.0);
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let v = potential(i as f64 * 0.5, &p).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn limit_distance_examples() {
        let p = pp(150.0, 10.0);
        let d = limit_distance(&p, 100.0).unwrap().unwrap();
        assert!((d - 4.054_651_081_081_644).abs() < 1e-12, "{d}");
        let back = potential(d, &p).unwrap();
        assert!((back - 100.0).abs() <= 1e-12 * 100.0);

        assert_eq!(limit_distance(&p, 150.0).unwrap(), Some(0.0));
        let d = limit_distance(&pp(15.0, 1.0), 10.0).unwrap().unwrap();
        assert!((d - 0.405_465_108_108_164_4).abs() < 1e-13);

        assert_eq!(limit_distance(&p, 200.0).unwrap(), None);
        assert!(limit_distance(&p, 0.0).is_err());
        assert!(limit_distance(&p, -3.0).is_err());
    }

    #[test]
    fn interact_one_dimensional() {
        let c = cfg(std::f64::consts::E, 1.0, 0.0, 1.0);
        let mut pair = AgentPair::from_positions(
            ParamVector::new(vec![1.0]),
            ParamVector::new(vec![0.0]),
            Algorithm::Separate,
        )
        .unwrap();
        let hit = interact(&mut pair, &c).unwrap().unwrap();
        assert_eq!(hit.distance, 1.0);
        assert!((hit.potential - 1.0).abs() < 1e-15);
        assert!((pair.prey[0] - 2.0).abs() < 1e-15);
        assert_eq!(pair.predator[0], 0.0);
        assert!((pair.distance().unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn interact_at_balance_keeps_distance() {
        let p = pp(150.0, 10.0);
        let d0 = 3.0;
        let c = PpmConfig {
            alpha_p: potential(d0, &p).unwrap(),
            ..cfg(150.0, 10.0, 0.0, 0.01)
        };
        let mut pair = AgentPair::from_positions(
            ParamVector::new(vec![0.0, d0]),
            ParamVector::new(vec![0.0, 0.0]),
            Algorithm::Separate,
        )
        .unwrap();
        interact(&mut pair, &c).unwrap();
        assert!((pair.distance().unwrap() - d0).abs() < 1e-12);
    }

    #[test]
    fn interact_at_limit_distance() {
        let c = cfg(150.0, 10.0, 100.0, 1.0);
        let ds = limit_distance(&c.potential, 100.0).unwrap().unwrap();
        let mut pair = AgentPair::from_positions(
            ParamVector::new(vec![ds, 0.0, 0.0]),
            ParamVector::new(vec![0.0, 0.0, 0.0]),
            Algorithm::Connected,
        )
        .unwrap();
        interact(&mut pair, &c).unwrap();
        assert!((pair.distance().unwrap() - ds).abs() < 1e-9);
    }

    #[test]
    fn interact_skips_degenerate_pair() {
        let c = cfg(150.0, 10.0, 100.0, 1.0);
        let x = ParamVector::new(vec![0.3, 0.3]);
        let mut pair = AgentPair::from_positions(x.clone(), x.clone(), Algorithm::Separate).unwrap();
        assert!(interact(&mut pair, &c).unwrap().is_none());
        assert_eq!(pair.prey, x);
        assert_eq!(pair.predator, x);
    }

    #[test]
    fn pretrain_without_steps() {
        let c = PpmConfig { n_d: 0, ..cfg(150.0, 10.0, 100.0, 1e-3) };
        let theta = ParamVector::new(vec![1.0, 2.0, 3.0]);
        let mut o = zero_oracle(3);
        let pair = ppm_pretrain(theta.clone(), &mut o, &c, Algorithm::Separate).unwrap();
        assert_eq!(pair.prey, theta);
        assert_eq!(pair.predator, theta);
        assert_eq!(pair.t, 0);
        assert_eq!(o.calls(), 0);
        assert_eq!(
            pair.moments,
            AgentMoments::Separate {
                prey: AdamState::new(3),
                predator: AdamState::new(3)
            }
        );
    }

    #[test]
    fn pretrain_separates_agents() {
        let c = cfg(150.0, 10.0, 100.0, 1e-3);
        let theta = ParamVector::new(vec![0.0; 4]);
        let mut o = FnOracle::new(4, |p: &ParamVector, _| {
            // quadratic bowl centred at (1, 1, 1, 1)
            let g: Vec<f64> = p.as_slice().iter().map(|x| x - 1.0).collect();
            Ok((0.0, ParamVector::new(g)))
        });
        for alg in [Algorithm::Separate, Algorithm::Connected] {
            let pair = ppm_pretrain(theta.clone(), &mut o, &c, alg).unwrap();
            assert_eq!(pair.t, 5);
            assert_eq!(pair.predator, theta);
            assert!(pair.distance().unwrap() > 0.0);
            match &pair.moments {
                AgentMoments::Separate { prey, predator } => {
                    assert_eq!(prey, predator);
                    assert_eq!(prey.t, 5);
                }
                AgentMoments::Shared(s) => assert_eq!(s.t, 5),
            }
        }
        assert_eq!(o.calls(), 10);
    }

    #[test]
    fn pretrain_on_flat_landscape_keeps_agents_together() {
        let c = PpmConfig { n_d: 7, ..cfg(150.0, 10.0, 100.0, 1e-3) };
        let theta = ParamVector::new(vec![0.5; 3]);
        let pair = ppm_pretrain(theta.clone(), &mut zero_oracle(3), &c, Algorithm::Connected).unwrap();
        assert_eq!(pair.distance().unwrap(), 0.0);
    }

    #[test]
    fn separate_copies_are_not_aliased() {
        let c = PpmConfig {
            grad_pred: true,
            ..cfg(150.0, 10.0, 100.0, 1e-3)
        };
        let theta = ParamVector::new(vec![0.0; 2]);
        let mut o = FnOracle::new(2, |p: &ParamVector, _| {
            Ok((0.0, ParamVector::new(vec![p[0] - 1.0, 2.0 * p[1] + 1.0])))
        });
        let mut pair = ppm_pretrain(theta, &mut o, &c, Algorithm::Separate).unwrap();
        ppm_step(&mut pair, &mut o, &c).unwrap();
        let AgentMoments::Separate { prey, predator } = &pair.moments else { unreachable!() };
        assert_ne!(prey.m, predator.m);
    }

    #[test]
    fn oracle_call_counts() {
        for alg in [Algorithm::Separate, Algorithm::Connected] {
            for grad_pred in [false, true] {
                let c = PpmConfig {
                    grad_pred,
                    ..cfg(150.0, 10.0, 100.0, 1e-3)
                };
                let mut o = FnOracle::new(3, |p: &ParamVector, _| Ok((0.0, p.clone())));
                let mut pair = ppm_pretrain(ParamVector::new(vec![1.0, -1.0, 0.5]), &mut o, &c, alg).unwrap();
                let steps = 17;
                for _ in 0..steps {
                    let rec = pair.step(&mut o, &c).unwrap();
                    assert_eq!(rec.oracle_calls, 1 + grad_pred as u64);
                    assert_eq!(rec.predator_loss.is_some(), grad_pred);
                }
                assert_eq!(o.calls(), c.n_d + steps * c.calls_per_step());
                assert_eq!(pair.t, c.n_d + steps);
            }
        }
    }

    #[test]
    fn step_kind_must_match_moments() {
        let c = cfg(150.0, 10.0, 100.0, 1e-3);
        let x = ParamVector::new(vec![1.0]);
        let y = ParamVector::new(vec![0.0]);
        let mut sep = AgentPair::from_positions(x.clone(), y.clone(), Algorithm::Separate).unwrap();
        let mut con = AgentPair::from_positions(x, y, Algorithm::Connected).unwrap();
        assert!(ppconn_step(&mut sep, &mut zero_oracle(1), &c).is_err());
        assert!(ppm_step(&mut con, &mut zero_oracle(1), &c).is_err());
    }

    #[test]
    fn pure_interaction_follows_distance_map() {
        let c = cfg(150.0, 10.0, 100.0, 1e-3);
        for alg in [Algorithm::Separate, Algorithm::Connected] {
            let mut pair = AgentPair::from_positions(
                ParamVector::new(vec![0.02, -0.01, 0.005]),
                ParamVector::new(vec![0.0, 0.0, 0.0]),
                alg,
            )
            .unwrap();
            let mut o = zero_oracle(3);
            let mut d = pair.distance().unwrap();
            for _ in 0..3000 {
                let rec = pair.step(&mut o, &c).unwrap();
                assert!((rec.distance.unwrap() - d).abs() <= 1e-12 * d);
                let expected = distance_map(d, &c);
                let measured = pair.distance().unwrap();
                assert!(
                    (measured - expected).abs() <= 1e-10 * expected,
                    "{alg:?}: {measured} vs {expected}"
                );
                d = measured;
            }
        }
    }

    #[test]
    fn distance_converges_monotonically_from_below() {
        let c = cfg(150.0, 10.0, 100.0, 1e-3);
        let ds = limit_distance(&c.potential, c.alpha_p).unwrap().unwrap();
        let mut pair = AgentPair::from_positions(
            ParamVector::new(vec![0.1, 0.0]),
            ParamVector::new(vec![0.0, 0.0]),
            Algorithm::Connected,
        )
        .unwrap();
        let mut o = zero_oracle(2);
        let mut prev = pair.distance().unwrap();
        for _ in 0..4000 {
            pair.step(&mut o, &c).unwrap();
            let d = pair.distance().unwrap();
            assert!(d >= prev && d <= ds + 1e-12);
            prev = d;
        }
        assert!((prev - ds).abs() < 1e-6);
    }

    #[test]
    fn fixed_point_is_reached_from_far_and_near() {
        let c = cfg(150.0, 10.0, 100.0, 1e-3);
        let ds = limit_distance(&c.potential, c.alpha_p).unwrap().unwrap();
        // stability of the discrete map: alpha * A / sigma < 2
        assert!(c.adam.alpha * c.potential.amplitude / c.potential.sigma < 2.0);
        for &d0 in &[1e-3, 0.5, 2.0, ds, 7.0, 10.0 * ds] {
            let mut pair = AgentPair::from_positions(
                ParamVector::new(vec![0.0, d0]),
                ParamVector::new(vec![0.0, 0.0]),
                Algorithm::Separate,
            )
            .unwrap();
            let mut o = zero_oracle(2);
            for _ in 0..8000 {
                pair.step(&mut o, &c).unwrap();
            }
            let d = pair.distance().unwrap();
            assert!((d - ds).abs() < 1e-6, "d0={d0}: {d}");
        }
    }

    #[test]
    fn prey_flees_and_predator_chases() {
        let c = PpmConfig {
            grad_pred: true,
            ..cfg(15.0, 1.0, 10.0, 1e-2)
        };
        let mut o = FnOracle::new(3, |p: &ParamVector, _| {
            let g: Vec<f64> = p.as_slice().iter().enumerate().map(|(i, x)| (i as f64 + 1.0) * x).collect();
            Ok((0.0, ParamVector::new(g)))
        });
        for alg in [Algorithm::Separate, Algorithm::Connected] {
            let mut pair = ppm_pretrain(ParamVector::new(vec![1.0, 2.0, -1.0]), &mut o, &c, alg).unwrap();
            for _ in 0..50 {
                // replay the optimizer half of the step to get x' and y'
                let mut probe = pair.clone();
                let cfg_no_hunt = PpmConfig {
                    potential: pp(1e-300, 1e-300),
                    alpha_p: 0.0,
                    ..c
                };
                probe.step(&mut o, &cfg_no_hunt).unwrap();
                let (x1, y1) = (probe.prey.clone(), probe.predator.clone());

                pair.step(&mut o, &c).unwrap();
                let l = x1.sub(&y1).unwrap();
                assert!(pair.prey.sub(&x1).unwrap().dot(&l).unwrap() >= 0.0);
                assert!(pair.predator.sub(&y1).unwrap().dot(&l).unwrap() >= 0.0);
            }
        }
    }

    #[test]
    fn connected_moments_are_shared() {
        // With decay on and no predator gradient, the predator's update still
        // writes lambda * y into the shared moments, which the prey then sees.
        let c = PpmConfig {
            adam: AdamConfig {
                lambda: 0.1,
                use_m: true,
                ..AdamConfig::adam_style()
            },
            shared_moments: SharedMomentsMode::Literal,
            ..cfg(150.0, 10.0, 100.0, 1e-3)
        };
        let y = ParamVector::new(vec![3.0, -2.0]);
        let x = ParamVector::new(vec![3.5, -2.0]);
        let mut pair = AgentPair::from_positions(x.clone(), y.clone(), Algorithm::Connected).unwrap();
        let mut o = zero_oracle(2);
        ppconn_step(&mut pair, &mut o, &c).unwrap();
        let AgentMoments::Shared(s) = &pair.moments else { unreachable!() };

        // reference: two literal updates on one store, same t
        let mut st = AdamState::new(2);
        let (mut xr, mut yr) = (x, y);
        st.step_at(&mut xr, &ParamVector::zeros(2), 1, &c.adam).unwrap();
        let after_prey = st.clone();
        st.step_at(&mut yr, &ParamVector::zeros(2), 1, &c.adam).unwrap();
        assert_eq!(s, &st);
        assert_ne!(s, &after_prey);

        // frozen mode leaves the prey's moments in place
        let c_frozen = PpmConfig {
            shared_moments: SharedMomentsMode::Frozen,
            ..c
        };
        let mut pair = AgentPair::from_positions(
            ParamVector::new(vec![3.5, -2.0]),
            ParamVector::new(vec![3.0, -2.0]),
            Algorithm::Connected,
        )
        .unwrap();
        ppconn_step(&mut pair, &mut o, &c_frozen).unwrap();
        let AgentMoments::Shared(s) = &pair.moments else { unreachable!() };
        assert_eq!(s, &after_prey);
    }

    #[test]
    fn connected_zero_oracle_predator_only_interacts() {
        let c = cfg(150.0, 10.0, 100.0, 1e-3);
        let y = ParamVector::new(vec![0.0, 0.0]);
        let mut pair = AgentPair::from_positions(ParamVector::new(vec![1.0, 0.0]), y.clone(), Algorithm::Connected).unwrap();
        ppconn_step(&mut pair, &mut zero_oracle(2), &c).unwrap();
        // predator moved only by alpha * alpha_p along l = (1, 0)
        assert!((pair.predator[0] - 1e-3 * 100.0).abs() < 1e-15);
        assert_eq!(pair.predator[1], 0.0);
    }
}
