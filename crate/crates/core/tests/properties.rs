use drivenhunt::agents::{interact, AgentPair, Algorithm, PotentialParams, PpmConfig};
use drivenhunt::data::{split_dataset, ModArithSpec, ModOp};
use drivenhunt::harness::fit_linear;
use drivenhunt::optim::{AdamConfig, AdamState};
use drivenhunt::ParamVector;
use proptest::prelude::*;

fn vec_pair(dim: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(-5.0..5.0f64, dim),
        prop::collection::vec(-5.0..5.0f64, dim),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interaction_keeps_the_pair_on_its_line(
        (x, y) in vec_pair(5),
        a in 1.0..200.0f64,
        sigma in 0.5..20.0f64,
        ap_frac in 0.1..0.99f64,
    ) {
        let cfg = PpmConfig {
            potential: PotentialParams::new(a, sigma).unwrap(),
            alpha_p: a * ap_frac,
            ..PpmConfig::default()
        };
        let mut pair = AgentPair::from_positions(ParamVector::new(x), ParamVector::new(y), Algorithm::Connected).unwrap();
        let before = pair.prey.sub(&pair.predator).unwrap();
        let d0 = before.norm().unwrap();
        prop_assume!(d0 > 1e-6);
        let hit = interact(&mut pair, &cfg).unwrap().unwrap();
        let after = pair.prey.sub(&pair.predator).unwrap();
        let alpha = cfg.adam.alpha;
        let want = d0 + alpha * (hit.potential - cfg.alpha_p);
        prop_assert!((after.norm().unwrap() - want).abs() < 1e-9 * (1.0 + want));
        let cos = after.dot(&before).unwrap() / (after.norm().unwrap() * d0);
        prop_assert!((cos - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adam_without_gradient_or_decay_stays_put(x in prop::collection::vec(-3.0..3.0f64, 1..20), steps in 1usize..20) {
        let cfg = AdamConfig { lambda: 0.0, ..AdamConfig::adamw() };
        let mut p = ParamVector::new(x.clone());
        let mut s = AdamState::new(x.len());
        for _ in 0..steps {
            s.step(&mut p, &ParamVector::zeros(x.len()), &cfg).unwrap();
        }
        prop_assert_eq!(p.as_slice(), &x[..]);
    }

    #[test]
    fn adam_first_step_has_size_alpha(g in prop::collection::vec(0.01..10.0f64, 1..10), alpha in 1e-4..1e-1f64) {
        let cfg = AdamConfig { alpha, lambda: 0.0, ..AdamConfig::adam_style() };
        let mut p = ParamVector::zeros(g.len());
        let mut s = AdamState::new(g.len());
        s.step(&mut p, &ParamVector::new(g.clone()), &cfg).unwrap();
        for v in p.as_slice() {
            prop_assert!((v.abs() - alpha).abs() < alpha * 1e-6);
        }
    }

    #[test]
    fn smaller_beta_trains_on_a_prefix(seed in any::<u64>(), lo in 0.2..0.6f64, hi in 0.6..1.0f64, add in any::<bool>()) {
        let spec = |beta| ModArithSpec {
            p: 13,
            op: if add { ModOp::Addition } else { ModOp::Division },
            beta,
            seed,
            ..ModArithSpec::default()
        };
        let (small, test_a) = split_dataset(&spec(lo)).unwrap();
        let (large, test_b) = split_dataset(&spec(hi)).unwrap();
        prop_assert_eq!(&test_a.features, &test_b.features);
        prop_assert_eq!(&test_a.labels, &test_b.labels);
        prop_assert!(small.len() <= large.len());
        for i in 0..small.len() {
            prop_assert_eq!(small.tokens(i), large.tokens(i));
        }
    }

    #[test]
    fn linear_fit_ignores_point_order(pts in prop::collection::vec((0.0..100.0f64, -50.0..50.0f64), 4..12), seed in any::<u64>()) {
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let Ok(a) = fit_linear(&xs, &ys) else { return Ok(()); };
        let mut idx: Vec<usize> = (0..pts.len()).collect();
        idx.sort_by_key(|&i| (i as u64).wrapping_mul(seed | 1).rotate_left(17));
        let xs2: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
        let ys2: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
        let b = fit_linear(&xs2, &ys2).unwrap();
        prop_assert!((a.slope - b.slope).abs() < 1e-9 * (1.0 + a.slope.abs()));
        prop_assert!((a.intercept - b.intercept).abs() < 1e-7 * (1.0 + a.intercept.abs()));
        prop_assert!(a.r2 <= 1.0 + 1e-12);
    }
}
