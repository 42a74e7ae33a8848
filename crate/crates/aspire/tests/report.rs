use std::collections::BTreeMap;

use aspire::pipeline::{RunManifest, RunSummary};
use aspire::{format_delta, Error, Report};
use aspire_core::Metrics;

fn metrics(avg: f64, worst: f64) -> Metrics {
    Metrics {
        average_accuracy: avg,
        per_group_accuracy: BTreeMap::from([("g".to_owned(), worst)]),
        worst_group_accuracy: worst,
    }
}

fn manifest(strategy: &str, aspire: bool, avg: f64, worst: f64, base: Option<Metrics>) -> RunManifest {
    RunManifest {
        format: 1,
        config_hash: format!("{strategy}{aspire}"),
        dataset_hash: "d".into(),
        test_hash: "t".into(),
        strategy: strategy.into(),
        aspire,
        seed: 0,
        artifacts: BTreeMap::new(),
        base_metrics: base,
        metrics: metrics(avg, worst),
        timings_ms: BTreeMap::new(),
        summary: RunSummary::default(),
        warnings: vec![],
    }
}

#[test]
fn table_one_delta() {
    assert_eq!(format_delta(0.787, 0.744), "+4.3");
    assert_eq!(format_delta(0.744, 0.787), "-4.3");
}

#[test]
fn base_and_aspire_rows() {
    let runs = vec![
        ("erm".to_owned(), manifest("erm", false, 0.80, 0.744, None)),
        ("erm+aspire".to_owned(), manifest("erm", true, 0.79, 0.787, None)),
    ];
    let r = Report::build(&runs).unwrap();
    assert_eq!(r.rows.len(), 2);
    assert_eq!(r.rows[0].delta_worst_group, None);
    assert_eq!(r.rows[1].delta_worst_group.as_deref(), Some("+4.3"));
    assert_eq!(r.rows[1].delta_average.as_deref(), Some("-1.0"));
    let table = r.to_table();
    assert!(table.lines().count() == 3 && table.contains("+4.3"));

    let back = Report::from_json(&r.to_json()).unwrap();
    assert_eq!(back, r);
}

#[test]
fn strategies_pair_separately() {
    let runs = vec![
        ("a".to_owned(), manifest("erm", false, 0.8, 0.5, None)),
        ("b".to_owned(), manifest("groupdro", false, 0.8, 0.7, None)),
        ("c".to_owned(), manifest("groupdro", true, 0.8, 0.75, Some(metrics(0.9, 0.1)))),
        ("d".to_owned(), manifest("jtt", true, 0.8, 0.6, Some(metrics(0.85, 0.4)))),
    ];
    let r = Report::build(&runs).unwrap();
    assert_eq!(r.rows[2].delta_worst_group.as_deref(), Some("+5.0"));
    assert_eq!(r.rows[2].reference.as_deref(), Some("baseline"));
    // No JTT counterpart: falls back to the run's own step-1 classifier.
    assert_eq!(r.rows[3].delta_worst_group.as_deref(), Some("+20.0"));
    assert_eq!(r.rows[3].reference.as_deref(), Some("base_model"));
}

#[test]
fn mismatched_datasets_are_refused() {
    let mut other = manifest("erm", true, 0.8, 0.7, None);
    other.dataset_hash = "elsewhere".into();
    let runs = vec![("a".to_owned(), manifest("erm", false, 0.8, 0.5, None)), ("b".to_owned(), other)];
    assert!(matches!(Report::build(&runs), Err(Error::DatasetMismatch { .. })));
    assert!(matches!(Report::build(&[]), Err(Error::EmptyReport)));
}
