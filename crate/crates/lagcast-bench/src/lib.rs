//! Shared setup for the criterion benchmarks: a simulated single-canton
//! panel and a fully fitted canton to pull realistic designs from.

use lagcast_core::{
    fit_canton, simulate_panel, BasisSpec, CantonFit, CantonSpec, ExogSpec, ForestConfig,
    MethodChoice, MonthlyPanel, SimConfig,
};

pub fn bench_panel() -> MonthlyPanel {
    let config = SimConfig {
        n_cantons: 2,
        n_months: 252,
        ..SimConfig::default()
    };
    simulate_panel(&config, 99).expect("simulate bench panel").0
}

pub fn bench_spec(panel: &MonthlyPanel) -> CantonSpec {
    let linear = (BasisSpec::Linear, BasisSpec::Linear);
    let smooth = (BasisSpec::default_bspline(), BasisSpec::Linear);
    let n = panel.months.len();
    CantonSpec {
        train_start: panel.months[0],
        train_end: panel.months[n - 4],
        horizon: 3,
        max_lag: 18,
        bases: [smooth, smooth, linear, linear, linear],
        method: MethodChoice::Both,
        n_boot: 100,
        block_len: 6,
        seed: 99,
        forest: ForestConfig {
            n_trees: 100,
            mtry: None,
            min_node_size: 5,
            seed: 0,
        },
        var_p_max: 13,
        var_exog: ExogSpec::default(),
    }
}

pub fn bench_fit() -> (MonthlyPanel, CantonFit) {
    let panel = bench_panel();
    let spec = bench_spec(&panel);
    let id = panel.canton_ids()[0].clone();
    let fit = fit_canton(&panel, &id, &spec).expect("fit bench canton");
    (panel, fit)
}
