use multistep::env::EnvConfig;
use multistep::planner::{iterated_batch_run, CemConfig, LoopConfig, LoopMode};
use multistep::train::TrainConfig;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn returns_trend_upward_over_iterations() {
    let loop_cfg = LoopConfig {
        mode: LoopMode::IteratedBatch,
        n_iterations: 10,
        episodes_per_iteration: 1,
        eval_episodes: 1,
        seeds: vec![0, 1, 2],
    };
    let train = TrainConfig {
        hidden: 32,
        epochs: 5,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let cem = CemConfig {
        plan_horizon: 15,
        population: 64,
        elites: 8,
        iterations: 3,
        ..CemConfig::default()
    };
    let curve = iterated_batch_run(&loop_cfg, &train, &cem, &EnvConfig::default()).unwrap();
    assert_eq!(curve.rows.len(), 30);

    let at = |its: std::ops::Range<usize>| {
        let v: Vec<f64> = curve.rows.iter().filter(|r| its.contains(&r.iteration)).map(|r| r.ret).collect();
        mean(&v)
    };
    let first = at(0..3);
    let last = at(7..10);
    assert!(last > first, "first three {first}, last three {last}\n{}", curve.to_csv());
}
