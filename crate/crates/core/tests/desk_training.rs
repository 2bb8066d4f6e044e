//! Short desk-scale runs on the linear-Gaussian problem.

use stopbed::env::lingauss::{LinGaussConfig, LinGaussEnv};
use stopbed::exec::Execution;
use stopbed::mdp::Formulation;
use stopbed::train::{baseline_threshold, evaluate, train, Curriculum, OracleAgent, TrainConfig};

fn setup(n: usize, c: f64) -> (LinGaussConfig, LinGaussEnv) {
    let cfg = LinGaussConfig::with_horizon_and_cost(n, c);
    (cfg.clone(), LinGaussEnv::new(cfg).unwrap())
}

#[test]
fn oracle_policy_reaches_the_three_stage_optimum() {
    let (cfg, env) = setup(3, 0.0);
    let agent = OracleAgent::new(cfg.clone()).unwrap();
    let spec = cfg.reward_spec(Formulation::Terminal);
    let (stats, _) = evaluate(&agent, &env, &spec, 10_000, 5, Execution::Parallel).unwrap();
    assert!((stats.avg_reward - 2.749).abs() <= 3.0 * stats.reward_se, "{stats:?}");
    assert_eq!(stats.stop_hist, vec![0, 0, 0, 10_000]);
}

#[test]
fn zero_cost_training_runs_to_the_horizon_at_the_upper_design() {
    let (cfg, env) = setup(3, 0.0);
    // At 60 iterations the designs sit around 2.8 and straddle the bin edge.
    let t = TrainConfig {
        seed: 1,
        iterations: 150,
        ..TrainConfig::desk()
    };
    let out = train(&env, &cfg.cost, &t, Execution::Parallel).unwrap();
    let tau = out.record.tail_mean(20, |r| r.avg_stop_stage);
    assert!((2.9..=3.0).contains(&tau), "final-20 stop stage {tau}");

    let spec = cfg.reward_spec(Formulation::Terminal);
    let (learned, _) = evaluate(&out.agent, &env, &spec, 10_000, 9, Execution::Parallel).unwrap();
    let near_top = learned.designs.fraction_within(0, 2.8, 3.0);
    println!("design mass in [2.8, 3.0]: {near_top:.3}; learned reward {:.4}", learned.avg_reward);
    assert!(near_top >= 0.9, "{near_top}");

    let naive = baseline_threshold(&out.agent, &env, &spec, 1.8, 10_000, 9, Execution::Parallel).unwrap();
    assert!(naive.avg_reward < learned.avg_reward, "{} vs {}", naive.avg_reward, learned.avg_reward);
    assert!(naive.avg_stop_stage < learned.avg_stop_stage);
}

#[test]
fn costly_experiments_stop_after_the_first() {
    let (cfg, env) = setup(3, -0.5);
    for curriculum in [Curriculum::default(), Curriculum::Vanilla] {
        let t = TrainConfig {
            seed: 2,
            curriculum,
            ..TrainConfig::desk()
        };
        let out = train(&env, &cfg.cost, &t, Execution::Parallel).unwrap();
        let tau = out.record.tail_mean(20, |r| r.avg_stop_stage);
        assert!((1.0..=1.2).contains(&tau), "{curriculum:?}: {tau}");
    }
}
