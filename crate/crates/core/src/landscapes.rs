//! Synthetic ravine landscapes and trajectory analysis.
//!
//! [`QuadraticRavine`] is `f(x) = (c/2)·Σ_{i≥2} x_i² − s·x_1`: stiff in every
//! transverse direction and flat (or gently sloped) along the first axis.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::agents::{ppm_pretrain, Algorithm, PpmConfig};
use crate::data::derive_seed;
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, AdamState};
use crate::oracle::GradientOracle;
use crate::paramvec::ParamVector;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RavineSpec {
    pub dim: usize,
    /// Transverse stiffness `c`.
    pub curvature: f64,
    /// Slope `s` along the first axis.
    pub slope: f64,
    /// Standard deviation of the per-coordinate gradient noise.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for RavineSpec {
    fn default() -> Self {
        RavineSpec {
            dim: 10,
            curvature: 1.0,
            slope: 0.0,
            noise_std: 1.0,
            seed: 0,
        }
    }
}

impl RavineSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config(format!("ravine needs dim >= 2, got {}", self.dim)));
        }
        for (name, v) in [
            ("curvature", self.curvature),
            ("slope", self.slope),
            ("noise_std", self.noise_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Gradient oracle for a [`RavineSpec`]. Noise on call `k` is drawn from a
/// stream keyed by `(seed, k)`, so runs replay exactly.
#[derive(Clone, Debug)]
pub struct QuadraticRavine {
    spec: RavineSpec,
    calls: u64,
}

impl QuadraticRavine {
    pub fn new(spec: RavineSpec) -> Result<Self> {
        spec.validate()?;
        Ok(QuadraticRavine { spec, calls: 0 })
    }

    pub fn spec(&self) -> &RavineSpec {
        &self.spec
    }

    /// Noise-free loss.
    pub fn loss(&self, x: &ParamVector) -> f64 {
        let xs = x.as_slice();
        0.5 * self.spec.curvature * xs[1..].iter().map(|v| v * v).sum::<f64>() - self.spec.slope * xs[0]
    }
}

impl GradientOracle for QuadraticRavine {
    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn loss_and_grad(&mut self, x: &ParamVector) -> Result<(f64, ParamVector)> {
        if x.len() != self.spec.dim {
            return Err(Error::invalid(format!(
                "ravine of dimension {} evaluated at a {}-vector",
                self.spec.dim,
                x.len()
            )));
        }
        let k = self.calls;
        self.calls += 1;
        let c = self.spec.curvature;
        let mut g: Vec<f64> = x.as_slice().iter().map(|v| c * v).collect();
        g[0] = -self.spec.slope;
        if self.spec.noise_std > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.spec.seed, 1, k));
            for gi in &mut g {
                let z: f64 = StandardNormal.sample(&mut rng);
                *gi += self.spec.noise_std * z;
            }
        }
        Ok((self.loss(x), ParamVector::new(g)))
    }

    fn calls(&self) -> u64 {
        self.calls
    }
}

/// Always returns zero loss and a zero gradient.
#[derive(Clone, Debug)]
pub struct ZeroOracle {
    dim: usize,
    calls: u64,
}

impl ZeroOracle {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("zero oracle needs dim >= 1"));
        }
        Ok(ZeroOracle { dim, calls: 0 })
    }
}

impl GradientOracle for ZeroOracle {
    fn dim(&self) -> usize {
        self.dim
    }

    fn loss_and_grad(&mut self, x: &ParamVector) -> Result<(f64, ParamVector)> {
        if x.len() != self.dim {
            return Err(Error::invalid("dimension mismatch"));
        }
        self.calls += 1;
        Ok((0.0, ParamVector::zeros(self.dim)))
    }

    fn calls(&self) -> u64 {
        self.calls
    }
}

/// Minimum trajectory length accepted by [`axis_progress`].
pub const MIN_TRAJECTORY: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct AxisProgress {
    /// `|x_1(t) − x_1(0)|` for every recorded step.
    pub displacement: Vec<f64>,
    /// Growth exponent: displacement scales like `t^κ`.
    pub kappa: f64,
}

/// Displacement along the first axis and its growth exponent.
///
/// `κ` is half the log–log slope of the mean squared displacement over lag
/// `τ`, computed on the second half of the run for about twenty log-spaced
/// lags spanning the decade below an eighth of that half. Averaging over all
/// start times makes the estimate stable for diffusive motion, where a single
/// path's displacement curve is too rough to fit. Short lags are left out
/// because momentum correlates consecutive steps and makes a random walk look
/// ballistic over a few dozen steps.
pub fn axis_progress(x1: &[f64]) -> Result<AxisProgress> {
    if x1.len() < MIN_TRAJECTORY {
        return Err(Error::invalid(format!(
            "trajectory of {} points is shorter than {MIN_TRAJECTORY}",
            x1.len()
        )));
    }
    let displacement: Vec<f64> = x1.iter().map(|x| (x - x1[0]).abs()).collect();
    let half = &x1[x1.len() / 2..];
    let max_lag = (half.len() / 8).max(2);
    let min_lag = (max_lag / 10).max(1);
    let span = max_lag as f64 / min_lag as f64;
    let mut lags: Vec<usize> = (0..20)
        .map(|i| (min_lag as f64 * span.powf(i as f64 / 19.0)).round() as usize)
        .collect();
    lags.dedup();
    let mut xs = Vec::with_capacity(lags.len());
    let mut ys = Vec::with_capacity(lags.len());
    for &lag in &lags {
        let n = half.len() - lag;
        let msd = half.windows(lag + 1).map(|w| (w[lag] - w[0]).powi(2)).sum::<f64>() / n as f64;
        if !(msd > 0.0) || !msd.is_finite() {
            return Err(Error::Fit(format!("mean squared displacement at lag {lag} is {msd}")));
        }
        xs.push((lag as f64).ln());
        ys.push(msd.ln());
    }
    let (slope, _) = ols_slope(&xs, &ys)?;
    Ok(AxisProgress {
        displacement,
        kappa: slope / 2.0,
    })
}

fn ols_slope(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Fit("need at least two distinct abscissae".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// One row of a trajectory dump.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: u64,
    pub x_1: f64,
    pub transverse_rms: f64,
    pub d_t: Option<f64>,
    pub p_d_t: Option<f64>,
}

impl TrajectoryRow {
    fn of(t: u64, x: &ParamVector, d: Option<f64>, p: Option<f64>) -> Self {
        let xs = x.as_slice();
        let rms = (xs[1..].iter().map(|v| v * v).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
        TrajectoryRow {
            t,
            x_1: xs[0],
            transverse_rms: rms,
            d_t: d,
            p_d_t: p,
        }
    }
}

pub fn write_trajectory_csv(rows: &[TrajectoryRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::invalid(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(())
}

/// Run plain Adam from the origin for `steps` steps and record the path.
pub fn adam_trajectory(spec: RavineSpec, adam: &AdamConfig, steps: usize) -> Result<Vec<TrajectoryRow>> {
    let mut oracle = QuadraticRavine::new(spec)?;
    let mut x = ParamVector::zeros(spec.dim);
    let mut state = AdamState::new(spec.dim);
    let mut rows = Vec::with_capacity(steps + 1);
    rows.push(TrajectoryRow::of(0, &x, None, None));
    for _ in 0..steps {
        let (_, g) = oracle.loss_and_grad(&x)?;
        state.step(&mut x, &g, adam)?;
        rows.push(TrajectoryRow::of(state.t, &x, None, None));
    }
    Ok(rows)
}

/// Pre-train and run a predator–prey pair from the origin, recording the prey.
pub fn agent_trajectory(
    spec: RavineSpec,
    cfg: &PpmConfig,
    algorithm: Algorithm,
    steps: usize,
) -> Result<Vec<TrajectoryRow>> {
    let mut oracle = QuadraticRavine::new(spec)?;
    let mut pair = ppm_pretrain(ParamVector::zeros(spec.dim), &mut oracle, cfg, algorithm)?;
    let mut rows = Vec::with_capacity(steps + 1);
    rows.push(TrajectoryRow::of(pair.t, &pair.prey, pair.distance().ok(), None));
    for _ in 0..steps {
        let rec = pair.step(&mut oracle, cfg)?;
        rows.push(TrajectoryRow::of(rec.t, &pair.prey, rec.distance, rec.potential));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ravine(c: f64, s: f64, noise: f64, seed: u64) -> QuadraticRavine {
        QuadraticRavine::new(RavineSpec {
            dim: 2,
            curvature: c,
            slope: s,
            noise_std: noise,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn valley_bottom_is_flat() {
        let mut r = ravine(3.0, 0.0, 0.0, 0);
        let (loss, g) = r.loss_and_grad(&ParamVector::new(vec![5.0, 0.0])).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn hand_computed_point() {
        let mut r = ravine(2.0, 0.0, 0.0, 0);
        let (loss, g) = r.loss_and_grad(&ParamVector::new(vec![0.0, 3.0])).unwrap();
        assert_eq!(loss, 9.0);
        assert_eq!(g.as_slice(), &[0.0, 6.0]);
        let mut r = ravine(2.0, 0.5, 0.0, 0);
        let (loss, g) = r.loss_and_grad(&ParamVector::new(vec![2.0, 3.0])).unwrap();
        assert_eq!(loss, 8.0);
        assert_eq!(g.as_slice(), &[-0.5, 6.0]);
    }

    #[test]
    fn noise_is_replayable_per_call_index() {
        let x = ParamVector::new(vec![1.0, 1.0]);
        let mut a = ravine(1.0, 0.0, 0.5, 9);
        let mut b = ravine(1.0, 0.0, 0.5, 9);
        let a0 = a.loss_and_grad(&x).unwrap().1;
        let a1 = a.loss_and_grad(&x).unwrap().1;
        assert_eq!(a0, b.loss_and_grad(&x).unwrap().1);
        assert_eq!(a1, b.loss_and_grad(&x).unwrap().1);
        assert_ne!(a0, a1);
        assert_eq!(a.calls(), 2);

        let mut quiet = ravine(1.0, 0.0, 0.0, 9);
        let q0 = quiet.loss_and_grad(&x).unwrap();
        assert_eq!(q0, quiet.loss_and_grad(&x).unwrap());
    }

    #[test]
    fn zero_oracle_counts_calls() {
        let mut z = ZeroOracle::new(3).unwrap();
        let (l, g) = z.loss_and_grad(&ParamVector::new(vec![1.0, -2.0, 3.0])).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g, ParamVector::zeros(3));
        z.loss_and_grad(&ParamVector::zeros(3)).unwrap();
        assert_eq!(z.calls(), 2);
        assert!(ZeroOracle::new(0).is_err());
    }

    #[test]
    fn linear_motion_has_unit_exponent() {
        let x: Vec<f64> = (0..1000).map(|t| 0.37 * t as f64).collect();
        let ap = axis_progress(&x).unwrap();
        assert!((ap.kappa - 1.0).abs() < 1e-6, "{}", ap.kappa);
        assert!((ap.displacement[10] - 3.7).abs() < 1e-12);
    }

    #[test]
    fn random_walk_has_half_exponent() {
        // one walk is noisy over a single decade of lags; the median is not
        let mut ks = Vec::new();
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut x = vec![0.0];
            for _ in 0..10_000 {
                let z: f64 = StandardNormal.sample(&mut rng);
                x.push(x.last().unwrap() + z);
            }
            ks.push(axis_progress(&x).unwrap().kappa);
        }
        ks.sort_by(f64::total_cmp);
        let med = 0.5 * (ks[4] + ks[5]);
        assert!((med - 0.5).abs() <= 0.1, "{ks:?}");
    }

    #[test]
    fn degenerate_trajectories() {
        assert!(matches!(axis_progress(&[2.0; 500]), Err(Error::Fit(_))));
        assert!(matches!(axis_progress(&[0.0; 99]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn transverse_rms_stays_bounded_under_adam() {
        // c·α = 1e-2 here; Adam steps have size ≈ α, so the valley walls
        // confine the transverse coordinates to a band of width ≈ noise / c.
        let spec = RavineSpec {
            dim: 5,
            curvature: 10.0,
            slope: 0.0,
            noise_std: 1.0,
            seed: 4,
        };
        let adam = AdamConfig {
            lambda: 0.0,
            use_m: false,
            ..AdamConfig::adam_style()
        };
        let rows = adam_trajectory(spec, &adam, 10_000).unwrap();
        let first = rows[1000..2000].iter().map(|r| r.transverse_rms).fold(0.0, f64::max);
        let last = rows[9000..].iter().map(|r| r.transverse_rms).fold(0.0, f64::max);
        assert!(last < 0.5, "{last}");
        assert!(last < 3.0 * first.max(1e-3));
    }

    #[test]
    fn trajectory_csv_has_header_and_rows() {
        let rows = adam_trajectory(RavineSpec::default(), &AdamConfig::adam_style(), 3).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x_1,transverse_rms,d_t,p_d_t\n"));
        assert_eq!(text.lines().count(), 5);
    }
}
