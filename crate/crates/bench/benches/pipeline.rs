use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slap_core::graph::shortest_plan;
use slap_core::planner::{options_graph, top_level};
use slap_core::policy::{ppo_loss_and_grad, random_samples, LossWeights, PolicyParams};
use slap_core::{Action, EnvConfig, Obstacle2d};

fn env() -> Obstacle2d {
    Obstacle2d::new(EnvConfig::default()).unwrap()
}

fn bench_step(c: &mut Criterion) {
    let env = env();
    let task = env.sample_task(1).unwrap();
    let a = Action::new(0.03, -0.02, 0.0);
    c.bench_function("env_step", |b| b.iter(|| env.step(black_box(&task.initial_state), a)));
    c.bench_function("abstract_state", |b| b.iter(|| env.abstract_state(black_box(&task.initial_state))));
}

fn bench_planning(c: &mut Criterion) {
    let env = env();
    let task = env.sample_task(1).unwrap();
    c.bench_function("top_level_graph", |b| b.iter(|| top_level(&env, black_box(&task)).unwrap()));
    c.bench_function("options_graph", |b| b.iter(|| options_graph(&env, black_box(&task)).unwrap()));
    let graph = options_graph(&env, &task).unwrap();
    c.bench_function("shortest_plan", |b| b.iter(|| shortest_plan(black_box(&graph)).unwrap()));
}

fn bench_ppo(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = PolicyParams::init(10, 3, 64, &[-0.5], &mut rng);
    let samples = random_samples(&params, 16, &mut rng);
    let w = LossWeights { policy: 1.0, value: 0.5, entropy: 0.01 };
    c.bench_function("ppo_loss_and_grad_16", |b| b.iter(|| ppo_loss_and_grad(black_box(&params), black_box(&samples), 0.2, w)));
}

criterion_group!(benches, bench_step, bench_planning, bench_ppo);
criterion_main!(benches);
