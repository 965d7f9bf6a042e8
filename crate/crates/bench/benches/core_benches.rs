use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use music_core::agent::{self, AgentOptimizers, AgentParams, TransitionBatch};
use music_core::env::{self, EnvKind, EnvParams, StateSplit};
use music_core::mi::{self, MiConfig, StatisticsNetwork};
use music_core::nn::{adam_step, AdamState, Mlp, MlpSpec, OutputActivation};
use music_core::replay::{ReplayBuffer, SamplerConfig, TrajectoryRecord};

fn bench_mlp(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spec = MlpSpec::with_relu_hidden(10, &[64, 64, 64], 1, OutputActivation::Linear).unwrap();
    let net = Mlp::init(spec, &mut rng);
    let batch = Array2::from_shape_fn((128, 10), |_| rng.gen_range(-1.0..1.0f32));
    c.bench_function("mlp_forward_128x10_64x3", |b| {
        b.iter(|| net.forward(black_box(&batch)).unwrap())
    });
    c.bench_function("mlp_forward_backward_adam", |b| {
        let mut net = net.clone();
        let mut opt = AdamState::for_net(&net, 1e-3);
        b.iter(|| {
            let (out, cache) = net.forward_cached(black_box(&batch)).unwrap();
            let grads = net.backward(&cache, &out).unwrap();
            adam_step(&mut net, &grads, &mut opt).unwrap();
        })
    });
}

fn bench_mi(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t_joint: Vec<f32> = (0..1024).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let t_marg: Vec<f32> = (0..1024).map(|_| rng.gen_range(-2.0..2.0)).collect();
    c.bench_function("dv_bound_1024", |b| {
        b.iter(|| mi::dv_bound(black_box(&t_joint), black_box(&t_marg)).unwrap())
    });

    let mut net = StatisticsNetwork::init(2, 2, &[64, 64], &mut rng).unwrap();
    let mut opt = AdamState::for_net(&net.mlp, 1e-3);
    let surr = Array2::from_shape_fn((51, 2), |_| rng.gen_range(0.0..1.0f32));
    let agent_states = Array2::from_shape_fn((51, 2), |_| rng.gen_range(0.0..1.0f32));
    c.bench_function("estimator_step_51_pairs", |b| {
        b.iter(|| {
            mi::train_on_pairs(&mut net, &surr, &agent_states, &mut opt, &mut rng).unwrap()
        })
    });

    let split = StateSplit::default_position_split();
    let cfg = MiConfig::default();
    let s0: Vec<f32> = (0..6).map(|_| rng.gen_range(0.0..1.0)).collect();
    let s1: Vec<f32> = (0..6).map(|_| rng.gen_range(0.0..1.0)).collect();
    c.bench_function("transition_reward", |b| {
        b.iter(|| mi::transition_reward(&net, black_box(&s0), black_box(&s1), &split, &cfg).unwrap())
    });
}

fn bench_env(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = EnvParams::new(EnvKind::PointPush, 50);
    let (state, _) = env::reset(&params, &mut rng);
    c.bench_function("env_step", |b| {
        b.iter(|| env::step(&params, black_box(&state), [0.3, -0.7]))
    });
}

fn bench_replay(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut buffer = ReplayBuffer::new(100_000);
    for i in 0..200 {
        let len = 50;
        let traj = TrajectoryRecord::new(
            vec![vec![0.1; 6]; len + 1],
            vec![vec![0.0, 0.0]; len],
            vec![0.5, 0.5],
            vec![0.0; len],
        )
        .unwrap();
        let id = buffer.store(traj).unwrap();
        buffer.update_priorities(&[id], &[(i % 7) as f32 * 0.1]).unwrap();
    }
    let cfg = SamplerConfig::default();
    c.bench_function("sample_prioritized_128_of_10k", |b| {
        b.iter(|| buffer.sample_prioritized(128, &cfg, &mut rng).unwrap())
    });
    c.bench_function("sample_uniform_128_of_10k", |b| {
        b.iter(|| buffer.sample_uniform(128, &mut rng).unwrap())
    });
}

fn bench_agent(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut params = AgentParams::new(6, 2, 2, &[64, 64, 64], 0.98, &mut rng).unwrap();
    let mut opts = AgentOptimizers::new(&params, 1e-3, 1e-3);
    let n = 128;
    let batch = TransitionBatch {
        obs: Array2::from_shape_fn((n, 6), |_| rng.gen_range(0.0..1.0f32)),
        goals: Array2::from_shape_fn((n, 2), |_| rng.gen_range(0.0..1.0f32)),
        actions: Array2::from_shape_fn((n, 2), |_| rng.gen_range(-1.0..1.0f32)),
        rewards: Array1::from_shape_fn(n, |_| rng.gen_range(0.0..1.0f32)),
        next_obs: Array2::from_shape_fn((n, 6), |_| rng.gen_range(0.0..1.0f32)),
        dones: (0..n).map(|i| i % 16 == 0).collect(),
        weights: None,
    };
    c.bench_function("agent_update_128", |b| {
        b.iter(|| agent::update(&mut params, &batch, &mut opts, 0.95, 1.0).unwrap())
    });
}

criterion_group!(benches, bench_mlp, bench_mi, bench_env, bench_replay, bench_agent);
criterion_main!(benches);
