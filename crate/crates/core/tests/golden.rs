//! Report output on a fixed seed must not drift. Regenerate the files with
//! `UPDATE_GOLDEN=1 cargo test -p survey-core --test golden` after an
//! intentional change.

use std::path::PathBuf;

use survey_core::active::Criterion;
use survey_core::data::{Holdout, SplitSpec};
use survey_core::harness::{
    generate_synthetic, simulate_strategies, ModelKind, SimulationConfig, Strategy, SynthModel,
};

fn check(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(expected == actual, "{name} differs from the golden copy");
}

#[test]
fn gaussian_report_is_stable() {
    let data = generate_synthetic(80, 8, 2, 0.0, 7, SynthModel::OrderedLogit { categories: 4 }).unwrap().data;
    let spec = SplitSpec { seed: 7, train_fraction: 0.5, holdout: Holdout::Sparse { fraction: 0.2 } };
    let config = SimulationConfig { rank: 2, lambda_grid_size: 6, ..SimulationConfig::default() };
    let strategies = [Strategy::active(Criterion::A), Strategy::random(7)];
    let reports = simulate_strategies(&data, &spec, &strategies, ModelKind::GaussianPmf, 3, &config).unwrap();
    check("active_report.csv", &reports[0].to_csv());
    check("random_report.csv", &reports[1].to_csv());
    check("active_paths.csv", &reports[0].paths_csv());
}
