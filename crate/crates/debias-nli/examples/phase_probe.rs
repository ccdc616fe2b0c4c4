// Scratch probe: all acceptance cells x 5 seeds through the real train()
// (will be replaced by the polished examples).

use debias_nli::data::LabelMap;
use debias_nli::model::ModelSpec;
use debias_nli::synthetic::{gen_dataset_a, gen_dataset_b};
use debias_nli::train::{evaluate, train, Method, TrainConfig};
use rayon::prelude::*;

fn main() {
    let train_ds = gen_dataset_b(1000, 0).unwrap();
    let test_ds = gen_dataset_a(1000, 1).unwrap();
    let spec = ModelSpec::synthetic();
    let vocab = debias_nli::data::build_vocab(&[&train_ds], 1).unwrap();

    let cells: Vec<(Method, f64, f64, &str)> = vec![
        (Method::Baseline, 0.0, 0.0, "train=1, test~0.5"),
        (Method::Method1, 1.0, 4.0, "test>=0.95"),
        (Method::Method1, 5.0, 2.0, "test>=0.95"),
        (Method::Method1, 0.25, 3.0, "test>=0.95"),
        (Method::Method1, 0.1, 1.0, "test<=0.60"),
        (Method::Method1, 1.0, 0.5, "test<=0.60"),
        (Method::Method1, 5.0, 0.1, "test<=0.60"),
        (Method::Method2, 0.5, 3.0, "test>=0.95"),
        (Method::Method2, 0.25, 4.0, "test>=0.95"),
        (Method::Method2, 0.1, 1.0, "test<=0.60"),
        (Method::Method2, 1.0, 20.0, "train<0.99"),
    ];

    let mut jobs = Vec::new();
    for (m, a, b, want) in &cells {
        for seed in 1..=5u64 {
            jobs.push((*m, *a, *b, *want, seed));
        }
    }
    let results: Vec<(usize, String, f64, f64)> = jobs
        .par_iter()
        .enumerate()
        .map(|(i, &(method, alpha, beta, want, seed))| {
            let cfg = TrainConfig::synthetic(method, alpha, beta, seed);
            let model = spec
                .build(vocab.clone(), train_ds.label_space.clone(), seed)
                .unwrap();
            let t0 = std::time::Instant::now();
            let (m, report) = train(&train_ds, None, model, &cfg).unwrap();
            let tr = evaluate(&m, &train_ds, LabelMap::Identity).unwrap();
            let te = evaluate(&m, &test_ds, LabelMap::Identity).unwrap();
            (
                i,
                format!(
                    "{method} a={alpha:<4} b={beta:<4} seed={seed} [{want}] -> train={tr:.3} test={te:.3} ep={} conv={} {:.1?}",
                    report.epochs_run, report.converged, t0.elapsed()
                ),
                tr,
                te,
            )
        })
        .collect();

    let mut sorted = results;
    sorted.sort_by_key(|r| r.0);
    for (i, line, _, _) in &sorted {
        println!("{line}");
        if (i + 1) % 5 == 0 {
            // median over the 5 seeds of this cell
            let block: Vec<&(usize, String, f64, f64)> =
                sorted.iter().filter(|r| r.0 / 5 == i / 5).collect();
            let mut trains: Vec<f64> = block.iter().map(|r| r.2).collect();
            let mut tests: Vec<f64> = block.iter().map(|r| r.3).collect();
            trains.sort_by(f64::total_cmp);
            tests.sort_by(f64::total_cmp);
            println!("  == median train={} test={}", trains[2], tests[2]);
        }
    }
}
