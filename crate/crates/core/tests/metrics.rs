use std::collections::BTreeMap;

use aspire_core::{
    evaluate, evaluate_ungrouped, Dims, GroupSchema, GroupedDataset, LabeledImage, Metrics, Origin, Pixels,
    Predictions,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CLASSES: [&str; 2] = ["pos", "neg"];

fn px(i: usize) -> Pixels {
    Pixels::new(Dims::new(1, 2, 1), vec![(i % 256) as u8, (i / 256) as u8]).unwrap()
}

/// Builds a dataset where group `g` has `total` items of which the first
/// `correct` are predicted right. All items are labeled "pos".
fn fixture(groups: &[(&str, usize, usize)]) -> (GroupedDataset, Predictions) {
    let schema = GroupSchema::from([
        ("pos".to_owned(), groups.iter().map(|g| g.0.to_owned()).collect()),
        ("neg".to_owned(), vec![]),
    ]);
    let mut ds = GroupedDataset::new("fixture", CLASSES.map(String::from).to_vec(), Some(schema)).unwrap();
    let mut preds = Predictions::new();
    let mut n = 0;
    for &(g, correct, total) in groups {
        for j in 0..total {
            let it = LabeledImage::new(px(n), "pos", Some(g.to_owned()), Origin::Train);
            preds.insert(it.id().to_owned(), if j < correct { "pos" } else { "neg" }.to_owned());
            ds.push(it).unwrap();
            n += 1;
        }
    }
    (ds, preds)
}

fn assert_metrics(m: &Metrics, average: f64, worst: f64, table: &[(&str, f64)]) {
    assert!((m.average_accuracy - average).abs() < 1e-12, "{m:?}");
    assert!((m.worst_group_accuracy - worst).abs() < 1e-12, "{m:?}");
    let expected: BTreeMap<String, f64> = table.iter().map(|(g, a)| (g.to_string(), *a)).collect();
    assert_eq!(m.per_group_accuracy.len(), expected.len());
    for (g, a) in expected {
        assert!((m.per_group_accuracy[&g] - a).abs() < 1e-12, "group {g}: {m:?}");
    }
}

#[test]
fn three_groups_direct_arithmetic() {
    let (ds, p) = fixture(&[("g1", 9, 10), ("g2", 4, 10), ("g3", 8, 10)]);
    let m = evaluate(&p, &ds).unwrap();
    assert_metrics(&m, 0.7, 0.4, &[("g1", 0.9), ("g2", 0.4), ("g3", 0.8)]);
}

#[test]
fn all_correct() {
    let (ds, p) = fixture(&[("g1", 3, 3), ("g2", 5, 5)]);
    let m = evaluate(&p, &ds).unwrap();
    assert_metrics(&m, 1.0, 1.0, &[("g1", 1.0), ("g2", 1.0)]);
}

#[test]
fn twelve_items_four_groups_hand_table() {
    // a: 3/4, b: 2/4, c: 1/3, d: 1/1 -> 7 of 12 correct overall.
    let (ds, p) = fixture(&[("a", 3, 4), ("b", 2, 4), ("c", 1, 3), ("d", 1, 1)]);
    assert_eq!(ds.len(), 12);
    let m = evaluate(&p, &ds).unwrap();
    assert_metrics(&m, 7.0 / 12.0, 1.0 / 3.0, &[("a", 0.75), ("b", 0.5), ("c", 1.0 / 3.0), ("d", 1.0)]);
}

#[test]
fn smallest_group_is_best() {
    // big: 4/8, small: 2/2. Overall 6/10.
    let (ds, p) = fixture(&[("big", 4, 8), ("small", 2, 2)]);
    let m = evaluate(&p, &ds).unwrap();
    assert_metrics(&m, 0.6, 0.5, &[("big", 0.5), ("small", 1.0)]);
    let min = m.per_group_accuracy.values().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(min, m.worst_group_accuracy);
}

#[test]
fn group_with_zero_accuracy() {
    let (ds, p) = fixture(&[("g1", 0, 3), ("g2", 5, 5)]);
    let m = evaluate(&p, &ds).unwrap();
    assert_metrics(&m, 5.0 / 8.0, 0.0, &[("g1", 0.0), ("g2", 1.0)]);
}

fn ungrouped(labels: &[usize], n_classes: usize) -> GroupedDataset {
    let classes = (0..n_classes).map(|c| format!("c{c}")).collect();
    GroupedDataset::from_items(
        "u",
        classes,
        None,
        labels
            .iter()
            .enumerate()
            .map(|(i, &c)| LabeledImage::new(px(i), format!("c{c}"), None, Origin::Train)),
    )
    .unwrap()
}

#[test]
fn ungrouped_two_classes() {
    let ds = ungrouped(&[0, 0, 1, 1], 2);
    let preds: Predictions = ds
        .iter()
        .enumerate()
        .map(|(i, it)| (it.id().to_owned(), if i == 3 { "c0".into() } else { it.label.clone() }))
        .collect();
    let m = evaluate_ungrouped(&preds, &ds).unwrap();
    assert_metrics(&m, 0.75, 0.5, &[("c0", 1.0), ("c1", 0.5)]);
}

#[test]
fn ungrouped_single_class() {
    let ds = ungrouped(&[0, 0, 0], 1);
    let preds: Predictions = ds.iter().map(|it| (it.id().to_owned(), it.label.clone())).collect();
    let m = evaluate_ungrouped(&preds, &ds).unwrap();
    assert_eq!(m.worst_group_accuracy, m.average_accuracy);
}

#[test]
fn ungrouped_fifteen_classes_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let labels: Vec<usize> = (0..600).map(|_| rng.gen_range(0..15)).collect();
    let ds = ungrouped(&labels, 15);
    let guesses: Vec<usize> = (0..labels.len()).map(|_| rng.gen_range(0..15)).collect();
    let preds: Predictions = ds
        .iter()
        .zip(&guesses)
        .map(|(it, g)| (it.id().to_owned(), format!("c{g}")))
        .collect();
    let m = evaluate_ungrouped(&preds, &ds).unwrap();

    let mut worst = f64::INFINITY;
    for c in 0..15 {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.is_empty() {
            continue;
        }
        let hits = idx.iter().filter(|&&i| guesses[i] == c).count();
        let acc = hits as f64 / idx.len() as f64;
        assert!((m.per_group_accuracy[&format!("c{c}")] - acc).abs() < 1e-12);
        worst = worst.min(acc);
    }
    let total_hits = (0..labels.len()).filter(|&i| labels[i] == guesses[i]).count();
    assert!((m.average_accuracy - total_hits as f64 / labels.len() as f64).abs() < 1e-12);
    assert_eq!(m.worst_group_accuracy, worst);
}

proptest! {
    #[test]
    fn evaluate_is_permutation_invariant(
        spec in prop::collection::vec((1usize..6, 0usize..6), 1..6),
        seed in any::<u64>(),
    ) {
        let groups: Vec<(String, usize, usize)> = spec
            .iter()
            .enumerate()
            .map(|(i, &(total, c))| (format!("g{i}"), c.min(total), total))
            .collect();
        let borrowed: Vec<(&str, usize, usize)> = groups.iter().map(|(g, c, t)| (g.as_str(), *c, *t)).collect();
        let (ds, p) = fixture(&borrowed);
        let m = evaluate(&p, &ds).unwrap();

        let mut items = ds.items().to_vec();
        items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let shuffled = GroupedDataset::from_items(
            "shuffled",
            ds.classes().to_vec(),
            ds.group_schema().cloned(),
            items,
        ).unwrap();
        let m2 = evaluate(&p, &shuffled).unwrap();
        prop_assert_eq!(&m.per_group_accuracy, &m2.per_group_accuracy);
        prop_assert!((m.average_accuracy - m2.average_accuracy).abs() < 1e-12);

        let min = m.per_group_accuracy.values().copied().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(min, m.worst_group_accuracy);
        for a in m.per_group_accuracy.values() {
            prop_assert!((0.0..=1.0).contains(a));
        }
    }
}
