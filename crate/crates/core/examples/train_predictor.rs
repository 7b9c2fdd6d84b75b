//! Trains the learned latency predictor on simulated measurements and
//! compares it with the raw table estimate on held-out architectures.
//!
//! `cargo run --release --example train_predictor -- [samples] [epochs]`
//! (defaults 9000 and 200, about a minute in release)

use coinfer::design_space::SpaceConfig;
use coinfer::perf::{estimate_cost, LatencyLut, SystemConfig};
use coinfer::predictor::{
    accuracy_report, build_dataset, generate_labeled, predict_accuracy_report, train, OverheadModel, PredictorModel,
    TrainConfig,
};

fn main() {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("numeric argument"));
    let samples = args.next().unwrap_or(9000);
    let epochs = args.next().unwrap_or(200);

    let space: SpaceConfig = serde_json::from_str(include_str!("data/space.json")).unwrap();
    let sys: SystemConfig = serde_json::from_str(include_str!("data/system.json")).unwrap();
    let lut = LatencyLut::synthetic(&space, &sys);
    let data = generate_labeled(&space, &sys, &lut, &OverheadModel::default(), samples, 1).unwrap();
    let (graphs, norm) = build_dataset(&data, &sys, &lut).unwrap();

    let mut model = PredictorModel::standard(1);
    model.latency_norm = norm;
    let cfg = TrainConfig { epochs, seed: 1, ..TrainConfig::default() };
    let report = train(&mut model, &graphs, &cfg).unwrap();
    for rec in report.history.iter().step_by((epochs / 10).max(1)) {
        println!("epoch {:>4} train MAPE {:.4} val MAPE {:.4}", rec.epoch, rec.train_mape, rec.val_mape);
    }

    let held: Vec<_> = report.val_indices.iter().map(|&i| graphs[i].clone()).collect();
    let learned = predict_accuracy_report(&model, &held, 0.1).unwrap();
    let truth: Vec<f64> = report.val_indices.iter().map(|&i| data[i].latency_ms).collect();
    let raw: Vec<f64> = report
        .val_indices
        .iter()
        .map(|&i| estimate_cost(&data[i].arch, &sys, &lut).unwrap().total_latency_ms)
        .collect();
    let table = accuracy_report(&raw, &truth, 0.1).unwrap();
    println!(
        "predictor: {:.1}% within 10%, {:.1}% pairs ordered",
        100.0 * learned.within_bound_fraction,
        100.0 * learned.pairwise_order_accuracy
    );
    println!(
        "table sum: {:.1}% within 10%, {:.1}% pairs ordered",
        100.0 * table.within_bound_fraction,
        100.0 * table.pairwise_order_accuracy
    );
}
