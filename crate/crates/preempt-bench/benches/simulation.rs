use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use preempt_core::rng::episode_rng;
use preempt_core::sim::sample_attempt;
use preempt_core::{
    apply_guards, run_episodes, run_pbt_episode, BtRunConfig, ConfusionSpec, FloorMode,
    GuardedParams, Policy, SimConfig, TaskTimings,
};

fn worked_params() -> GuardedParams {
    let timings = TaskTimings::new(20.0, 10.0, 5.0).unwrap();
    let confusion = ConfusionSpec::new(0.4, 0.1, 0.3, 0.1, 0.05, 0.05).unwrap();
    apply_guards(&timings, &confusion).unwrap()
}

fn bench_sampling(c: &mut Criterion) {
    let params = worked_params();
    c.bench_function("sample_attempt", |b| {
        b.iter_batched(
            || episode_rng(0, 0),
            |mut rng| sample_attempt(&mut rng, &params, Policy::Preemptive, FloorMode::None),
            BatchSize::SmallInput,
        )
    });
}

fn bench_episode_batches(c: &mut Criterion) {
    let params = worked_params();
    for policy in [Policy::Reactive, Policy::Preemptive] {
        let cfg = SimConfig {
            policy,
            n_episodes: 1000,
            seed: 0,
            ..SimConfig::default()
        };
        let name = match policy {
            Policy::Reactive => "run_episodes_reactive_1k",
            Policy::Preemptive => "run_episodes_preemptive_1k",
        };
        c.bench_function(name, |b| b.iter(|| run_episodes(&params, &cfg).unwrap()));
    }
}

fn bench_bt_episode(c: &mut Criterion) {
    let params = worked_params();
    let cfg = BtRunConfig::default();
    c.bench_function("bt_episode", |b| {
        b.iter(|| run_pbt_episode(&params, &cfg, 0).unwrap())
    });
}

criterion_group!(
    benches,
    bench_sampling,
    bench_episode_batches,
    bench_bt_episode
);
criterion_main!(benches);
