use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use cvtomo::analysis::nearest_cat;
use cvtomo::bures::{build_density, sample_prior};
use cvtomo::fock::{make_state, wigner_with, DensityMatrix, GridSpec, Parity, StateSpec, C64};
use cvtomo::measurement::{LikelihoodModel, MeasurementConfig, Scheme};
use cvtomo::par::{self, Execution};
use cvtomo::simulate::{simulate_dataset, SimConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn executions() -> Vec<(&'static str, Execution)> {
    vec![
        ("sequential", Execution::Sequential),
        #[cfg(feature = "parallel")]
        ("parallel", Execution::Parallel),
    ]
}

fn likelihood(c: &mut Criterion) {
    let cutoff = 10;
    let rho = make_state(&StateSpec::Coherent { alpha: C64::new(1.2, 0.4) }, cutoff).unwrap();
    let mut group = c.benchmark_group("log_likelihood");
    for scheme in [Scheme::Homodyne, Scheme::Heterodyne] {
        let sim = SimConfig::new(StateSpec::Coherent { alpha: C64::new(1.2, 0.4) }, scheme, 8000, 1.0, cutoff, 1);
        let data = simulate_dataset(&sim).unwrap();
        for (name, exec) in executions() {
            let model = LikelihoodModel::new(&data, &MeasurementConfig::new(1.0, cutoff).unwrap())
                .unwrap()
                .with_execution(exec);
            group.bench_function(BenchmarkId::new(name, scheme.short()), |b| b.iter(|| model.log_likelihood(&rho).unwrap()));
        }
    }
    group.finish();
}

fn wigner_grid(c: &mut Criterion) {
    let rho = make_state(&StateSpec::Cat { alpha: C64::new(1.6, 0.0), parity: Parity::Odd }, 12).unwrap();
    let grid = GridSpec::square(5.0, 0.1);
    let mut group = c.benchmark_group("wigner");
    group.sample_size(20);
    for (name, exec) in executions() {
        group.bench_function(name, |b| b.iter(|| wigner_with(&rho, &grid, exec).unwrap()));
    }
    group.finish();
}

fn cat_fits(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let states: Vec<DensityMatrix> =
        (0..64).map(|_| build_density(&sample_prior(&mut rng, 11).unwrap()).unwrap()).collect();
    let mut group = c.benchmark_group("nearest_cat");
    group.sample_size(10);
    for (name, exec) in executions() {
        group.bench_function(name, |b| {
            b.iter(|| par::map_indexed(exec, states.len(), |i| nearest_cat(&states[i], Parity::Odd, 4.0)))
        });
    }
    group.finish();
}

criterion_group!(benches, likelihood, wigner_grid, cat_fits);
criterion_main!(benches);
