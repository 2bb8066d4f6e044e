use proptest::prelude::*;
use stopbed::belief::{
    expected_info_gain_gaussian, gaussian_kl, gaussian_update, grid_kl, grid_update, GaussianBelief, GridBelief,
    NoiseModel, ThetaGrid,
};
use stopbed::env::lingauss::{LinGaussConfig, LinGaussEnv};
use stopbed::env::Environment;
use stopbed::mdp::{stopping_value, transition, Formulation, RewardSpec};
use stopbed::train::{Curriculum, Encoder};

proptest! {
    #[test]
    fn gaussian_update_shrinks_variance(
        m in -5.0..5.0f64, v in 0.01..20.0f64, xi in -3.0..3.0f64, y in -20.0..20.0f64, s in 0.1..3.0f64,
    ) {
        let b = GaussianBelief::new(m, v).unwrap();
        let noise = NoiseModel::new(s).unwrap();
        let post = gaussian_update(&b, xi, y, &noise).unwrap();
        prop_assert!(post.variance() <= v);
        prop_assert!(gaussian_kl(&post, &b) >= -1e-12);
        let gain = expected_info_gain_gaussian(&b, xi, &noise).unwrap();
        prop_assert!((gain - 0.5 * (v / post.variance()).ln()).abs() < 1e-9);
    }

    #[test]
    fn grid_update_stays_normalised(
        logl in prop::collection::vec(-50.0..5.0f64, 36),
    ) {
        let prior = GridBelief::uniform(ThetaGrid::new(6).unwrap());
        let post = grid_update(&prior, &logl).unwrap();
        prop_assert!((post.total_mass() - 1.0).abs() < 1e-12);
        prop_assert!(post.masses().iter().all(|m| *m >= 0.0));
        prop_assert!(grid_kl(&post, &prior).unwrap() >= -1e-12);
    }

    #[test]
    fn terminal_stopping_value_never_drops_below_cost(
        ys in prop::collection::vec(-15.0..15.0f64, 3), xs in prop::collection::vec(0.1..3.0f64, 3),
    ) {
        let env = LinGaussEnv::new(LinGaussConfig::with_horizon_and_cost(3, -0.2)).unwrap();
        let spec = RewardSpec::constant(Formulation::Terminal, -0.2);
        let mut s = env.initial_state();
        for (k, (x, y)) in xs.iter().zip(&ys).enumerate() {
            s = transition(&s, &[*x], &[*y], &env).unwrap();
            prop_assert_eq!(s.stage(), k + 1);
            prop_assert!(stopping_value(&s, &spec).unwrap() >= -0.2 * (k + 1) as f64 - 1e-12);
        }
        prop_assert!(transition(&s, &[1.0], &[0.0], &env).is_err());
    }

    #[test]
    fn squash_stays_in_the_box(raw in -1e3..1e3f64) {
        let env = LinGaussEnv::new(LinGaussConfig::default()).unwrap();
        let enc = Encoder::new(&env).unwrap();
        let xi = enc.squash(&[raw])[0];
        prop_assert!((0.1..=3.0).contains(&xi));
        prop_assert!(enc.squash_jacobian(&[raw])[0] >= 0.0);
    }

    #[test]
    fn sigmoid_schedule_is_monotone(total in 2usize..400, steep in 1.0..30.0f64, mid in 0.1..0.9f64) {
        let c = Curriculum::Sigmoid { steepness: steep, midpoint: mid, lock: 10 };
        let ps: Vec<f64> = (0..total).map(|l| c.p_stop(l, total)).collect();
        prop_assert!(ps.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(ps.iter().all(|p| (0.0..=1.0).contains(p)));
        prop_assert_eq!(*ps.last().unwrap(), 1.0);
    }
}
