use criterion::{criterion_group, criterion_main, Criterion};
use lagcast_bench::bench_fit;
use lagcast_core::{
    cross_basis, fit_climate_var, fit_forest, fit_var, fit_zaga, forecast_climate,
    forecast_recursive, select_lag_bic, BasisSpec, Covariate, ExogSpec, FittedBasis, ForestConfig,
};
use std::hint::black_box;

fn benches(c: &mut Criterion) {
    let (_panel, fit) = bench_fit();
    let precip_col = Covariate::ALL
        .iter()
        .position(|cv| *cv == Covariate::Precip)
        .unwrap();
    let precip: Vec<f64> = fit.climate.column(precip_col).iter().copied().collect();
    let spec = BasisSpec::default_bspline();
    let start = fit.months[0];

    c.bench_function("bspline_design_249", |b| {
        b.iter(|| {
            let basis = FittedBasis::fit_to_values(&spec, black_box(&precip)).unwrap();
            black_box(basis.eval_matrix(&precip).unwrap())
        })
    });

    c.bench_function("cross_basis_249x18", |b| {
        b.iter(|| {
            black_box(cross_basis(black_box(&precip), 18, &spec, &BasisSpec::Linear).unwrap())
        })
    });

    c.bench_function("fit_zaga_231x27", |b| {
        b.iter(|| black_box(fit_zaga(&fit.assembled.design, &fit.assembled.y).unwrap()))
    });

    let mut slow = c.benchmark_group("heavy");
    slow.sample_size(10);
    let forest_config = ForestConfig {
        n_trees: 100,
        mtry: None,
        min_node_size: 5,
        seed: 1,
    };
    slow.bench_function("fit_forest_100_trees", |b| {
        b.iter(|| {
            black_box(fit_forest(&fit.assembled.design, &fit.assembled.y, &forest_config).unwrap())
        })
    });
    slow.bench_function("select_var_bic_p13", |b| {
        b.iter(|| black_box(select_lag_bic(&fit.climate, start, 13, ExogSpec::default()).unwrap()))
    });
    slow.finish();

    c.bench_function("fit_var_p3", |b| {
        b.iter(|| black_box(fit_var(&fit.climate, start, 3, ExogSpec::default()).unwrap()))
    });

    let climate_model = fit_climate_var(&fit).unwrap();
    let climate_fc = forecast_climate(&fit, &climate_model, 3).unwrap();
    c.bench_function("forecast_recursive_h3", |b| {
        b.iter(|| black_box(forecast_recursive(&fit, black_box(&climate_fc)).unwrap()))
    });
}

criterion_group!(hotpaths, benches);
criterion_main!(hotpaths);
