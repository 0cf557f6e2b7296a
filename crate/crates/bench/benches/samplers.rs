use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use mam_core::{
    nb_log_pmf, positions_for_seed, simulate_car_mam, simulate_mam, CarSampler, FieldKind, GenerativeParams,
    MamSampler, MixingWeights, ModelConfig, SamplerSettings, Scheme, SpatialConfig,
};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn density(c: &mut Criterion) {
    c.bench_function("nb_log_pmf x1000", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for y in 0..1000u64 {
                acc += nb_log_pmf(black_box(y % 97), 12.5, 300.0).unwrap();
            }
            acc
        })
    });
}

fn mam_sweep(c: &mut Criterion) {
    let params = GenerativeParams::new(Scheme::Additive, DMatrix::from_row_slice(2, 2, &[12.0, 3.0, 3.0, 12.0]), 300.0, 0.01).unwrap();
    let data = simulate_mam(2000, &params, &[0.5, 0.5], 1).unwrap();
    let settings = SamplerSettings::new(10, 5, 1);
    for scheme in [Scheme::Additive, Scheme::Codominance0] {
        let cfg = ModelConfig::new(2, scheme).unwrap();
        let mut sampler = MamSampler::new(&data, &cfg, &settings).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut state = sampler.initial_state(MixingWeights::Global(vec![0.5, 0.5]), &mut rng).unwrap();
        c.bench_function(&format!("mam sweep p=2000 k=2 {scheme}"), |b| {
            b.iter(|| sampler.sweep(&mut state, &mut rng).unwrap())
        });
    }
}

fn car_sweeps(c: &mut Criterion) {
    let params = GenerativeParams::new(
        Scheme::Additive,
        DMatrix::from_row_slice(3, 2, &[10.0, 10.0, 40.0, 40.0, 70.0, 70.0]),
        300.0,
        0.01,
    )
    .unwrap();
    let spatial = SpatialConfig { radius: 10_000.0, scale: 100_000.0, ..Default::default() };
    let (data, _) = simulate_car_mam(&params, positions_for_seed(500, 1), FieldKind::ReciprocalCar, 0.1, &spatial, 1).unwrap();
    let cfg = ModelConfig::new(3, Scheme::Additive).unwrap().with_spatial(spatial);
    let settings = SamplerSettings::new(10, 5, 1);
    let mut sampler = CarSampler::new(&data, &cfg, &settings).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let state = sampler.initial_state(&mut rng).unwrap();
    let loglik = sampler.component_loglik(&state);
    c.bench_function("car field update p=500 k=3", |b| {
        b.iter_batched_ref(|| state.clone(), |st| sampler.sample_x(st, &loglik, &mut rng), BatchSize::SmallInput)
    });
    let mut st = state.clone();
    c.bench_function("car-mam sweep p=500 k=3", |b| b.iter(|| sampler.sweep(&mut st, &mut rng).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = density, mam_sweep, car_sweeps
}
criterion_main!(benches);
