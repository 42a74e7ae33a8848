//! Full desk-scale training runs on the default synthetic benchmark.

use aspire_classifier::{train, TrainConfig};
use aspire_core::evaluate;
use synthbench::{make_benchmark, BenchConfig};

const SEEDS: u64 = 5;

#[test]
fn erm_fits_training_data_and_takes_the_shortcut() {
    let (mut worst, mut average) = (0.0, 0.0);
    for seed in 0..SEEDS {
        let b = make_benchmark(&BenchConfig { seed, ..BenchConfig::default() }).unwrap();
        let clf = train(&b.train, &TrainConfig::desk().with_seed(seed)).unwrap();

        let train_preds = clf.predict_labels(b.train.iter()).unwrap();
        let hits = b.train.iter().filter(|it| train_preds[it.id()] == it.label).count();
        let acc = hits as f64 / b.train.len() as f64;
        assert!(acc >= 0.95, "seed {seed}: train accuracy {acc:.3}");

        let m = evaluate(&clf.predict_labels(b.test.iter()).unwrap(), &b.test).unwrap();
        worst += m.worst_group_accuracy / SEEDS as f64;
        average += m.average_accuracy / SEEDS as f64;
    }
    assert!(worst <= average - 0.15, "worst {worst:.3} vs average {average:.3}");
}
