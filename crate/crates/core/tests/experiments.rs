use proptest::prelude::*;

use sdot::costs::CostSpec;
use sdot::experiments::{emit_report, quantile, run_experiment, ExperimentConfig, ExperimentReport, ReportFormat, Statistic};
use sdot::measures::MeasureSpec;

fn small_config(statistic: Statistic, replicates: usize) -> ExperimentConfig {
    ExperimentConfig {
        name: Some("small".into()),
        source: MeasureSpec::Discrete { points: vec![vec![0.0], vec![0.5], vec![1.0]], weights: vec![0.2, 0.3, 0.5] },
        target: MeasureSpec::UniformBox { lo: vec![0.0], hi: vec![1.0], quadrature: None },
        cost: Some(CostSpec::Power { exponent: 2.0 }),
        cost_matrix: None,
        cost_matrix_csv: None,
        n: 500,
        replicates,
        master_seed: 99,
        statistic,
        backend: None,
        law_draws: 2000,
        wp_exponent: None,
        contrast: None,
        solver: None,
        thresholds: None,
        output_dir: None,
    }
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let cfg = small_config(Statistic::Cost, 40);
    let a = serde_json::to_string(&run_experiment(&cfg).unwrap()).unwrap();
    let b = serde_json::to_string(&run_experiment(&cfg).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn adding_a_replicate_keeps_earlier_ones() {
    let five = run_experiment(&small_config(Statistic::Cost, 5)).unwrap();
    let six = run_experiment(&small_config(Statistic::Cost, 6)).unwrap();
    assert_eq!(five.statistics[..], six.statistics[..5]);
}

#[test]
fn law_draw_count_does_not_touch_statistics() {
    let a = run_experiment(&small_config(Statistic::Potentials, 10)).unwrap();
    let mut cfg = small_config(Statistic::Potentials, 10);
    cfg.law_draws = 3000;
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.statistics, b.statistics);
    assert_eq!(a.law_draws[..], b.law_draws[..2000]);
}

#[test]
fn json_report_round_trips() {
    let rep = run_experiment(&small_config(Statistic::SupNormPotentials, 20)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = emit_report(&rep, dir.path(), ReportFormat::Json).unwrap();
    let back: ExperimentReport = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(back, rep);
}

#[test]
fn csv_has_one_row_per_value() {
    let rep = run_experiment(&small_config(Statistic::Wp, 15)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = emit_report(&rep, dir.path(), ReportFormat::Csv).unwrap();
    let mut rd = csv::Reader::from_path(path).unwrap();
    assert_eq!(rd.headers().unwrap(), vec!["source", "value"]);
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), rep.statistics.len() + rep.law_draws.len());
    assert_eq!(rows.iter().filter(|r| &r[0] == "empirical").count(), rep.statistics.len());
}

#[test]
fn discrete_target_uses_the_lp_path() {
    let mut cfg = small_config(Statistic::Cost, 30);
    cfg.target = MeasureSpec::Discrete { points: vec![vec![0.0], vec![1.0]], weights: vec![0.5, 0.5] };
    cfg.source = MeasureSpec::Discrete { points: vec![vec![0.0], vec![1.0]], weights: vec![0.5, 0.5] };
    let rep = run_experiment(&cfg).unwrap();
    assert_eq!(rep.statistics.len(), 30);
    assert!(rep.statistics.iter().all(|v| *v >= -1e-9));
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = small_config(Statistic::Cost, 0);
    assert!(run_experiment(&cfg).is_err());
    cfg.replicates = 3;
    cfg.n = 0;
    assert!(run_experiment(&cfg).is_err());
}

proptest! {
    #[test]
    fn quantiles_are_monotone(sample in prop::collection::vec(-100.0f64..100.0, 1..200),
                              a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(quantile(&sample, lo) <= quantile(&sample, hi));
        let min = sample.iter().copied().fold(f64::INFINITY, f64::min);
        let max = sample.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(quantile(&sample, 0.0), min);
        prop_assert_eq!(quantile(&sample, 1.0), max);
    }
}
