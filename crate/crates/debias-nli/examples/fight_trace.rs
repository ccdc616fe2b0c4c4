// temp: microscope on the c-row tug of war (library impl, untied, full batch)
use debias_nli::model::ModelSpec;
use debias_nli::synthetic::{gen_dataset_a, gen_dataset_b};
use debias_nli::train::{train, Method, TrainConfig};
use debias_nli::data::LabelMap;
use debias_nli::train::evaluate;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let alpha: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.25);
    let beta: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3.0);
    let train_ds = gen_dataset_b(1000, 0).unwrap();
    let test_ds = gen_dataset_a(1000, 1).unwrap();
    let spec = ModelSpec::synthetic();
    let vocab = debias_nli::data::build_vocab(&[&train_ds], 1).unwrap();
    // instrument by re-running with increasing epoch budgets (cheap enough)
    for cap in [5, 10, 20, 40, 80, 160, 320, 640, 1280] {
        let mut cfg = TrainConfig::synthetic(Method::Method1, alpha, beta, 1);
        cfg.max_epochs = cap;
        cfg.stop.acc_patience = usize::MAX;
        let model = spec.build(vocab.clone(), train_ds.label_space.clone(), 1).unwrap();
        let (m, report) = train(&train_ds, None, model, &cfg).unwrap();
        let c_row = m.hypothesis.embedding.value.row(4); // token c
        let c_norm: f64 = c_row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let last = report.rows.last().unwrap();
        let te = evaluate(&m, &test_ds, LabelMap::Identity).unwrap();
        println!(
            "ep {cap:>5}: |e_c|={c_norm:<8.4} train={:.2} head={:.2} test={te:.2} main={:.4} adv={:.4}",
            last.train_acc,
            last.adv_acc.unwrap_or(f64::NAN),
            last.main_loss,
            last.adv_loss.unwrap_or(f64::NAN),
        );
    }
}
