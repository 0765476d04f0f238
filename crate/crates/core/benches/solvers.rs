use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rpmqp::aircraft::{aircraft_scenario, ScenarioConfig};
use rpmqp::bench::{run_random_suite, ASM_MAX_ITERS};
use rpmqp::mpc::{closed_loop_simulate, Controller};
use rpmqp::par::Execution;
use rpmqp::RpmConfig;

fn random_suite(c: &mut Criterion) {
    let cfg = RpmConfig::default();
    let mut group = c.benchmark_group("random_suite_50");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_function(format!("{exec:?}").to_lowercase(), |b| {
            b.iter(|| run_random_suite(50, 42, 8, 16, &cfg, exec).unwrap())
        });
    }
    group.finish();
}

/// Short warm-started closed loop against the cold-start active set.
fn aircraft_closed_loop(c: &mut Criterion) {
    let mut group = c.benchmark_group("aircraft_closed_loop_60");
    group.sample_size(10);
    for n in [10, 20, 30, 50] {
        let cfg = ScenarioConfig { horizon: n, t_sim: 60, ..Default::default() };
        let sc = aircraft_scenario(&cfg).unwrap();
        let controllers = [Controller::Rpm(cfg.rpm_config()), Controller::ActiveSet { max_iters: ASM_MAX_ITERS }];
        for controller in controllers {
            group.bench_with_input(BenchmarkId::new(controller.name(), n), &sc, |b, sc| {
                b.iter(|| {
                    closed_loop_simulate(&sc.spec, black_box(&controller), &sc.x_init, &sc.u_init_prev, &sc.y_ref, sc.t_sim)
                        .unwrap()
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, random_suite, aircraft_closed_loop);
criterion_main!(benches);
