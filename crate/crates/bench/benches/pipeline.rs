//! Benchmarks for the hot paths: participation fits, the bootstrap, and a
//! full day-by-day analysis.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use stagewise_bench::bench_roster;
use stagewise_core::estimators::{EstimatorSpec, Method};
use stagewise_core::harness::{self, AnalysisOptions};
use stagewise_core::inference;
use stagewise_core::survival::{fit_cox, fit_km, CoxOptions, SurvivalKind};

fn participation_fits(c: &mut Criterion) {
    let roster = bench_roster(2000, 30);
    c.bench_function("fit_km_2000_units_day_15", |b| {
        b.iter(|| fit_km(black_box(&roster), 15).unwrap())
    });
    let options = CoxOptions::default();
    c.bench_function("fit_cox_2000_units_day_15", |b| {
        b.iter(|| fit_cox(black_box(&roster), 15, &options).unwrap())
    });
}

fn bootstrap(c: &mut Criterion) {
    let roster = bench_roster(500, 20);
    let spec = EstimatorSpec::new(Method::Ipw);
    c.bench_function("bootstrap_ipw_500_units_200_replicates", |b| {
        b.iter(|| {
            inference::bootstrap_ci(black_box(&roster), 10, &spec, 200, 0.95, 7).unwrap()
        })
    });
}

fn full_analysis(c: &mut Criterion) {
    let roster = bench_roster(400, 30);
    let km = AnalysisOptions { bootstrap_replicates: 100, ..AnalysisOptions::default() };
    let cox = AnalysisOptions { survival: SurvivalKind::Cox, ..km.clone() };
    let mut group = c.benchmark_group("analyze_400_units_30_days");
    group.sample_size(10);
    group.bench_function("km", |b| {
        b.iter(|| harness::analyze(black_box(&roster), &km).unwrap())
    });
    group.bench_function("cox", |b| {
        b.iter(|| harness::analyze(black_box(&roster), &cox).unwrap())
    });
    group.finish();
}

criterion_group!(benches, participation_fits, bootstrap, full_analysis);
criterion_main!(benches);
