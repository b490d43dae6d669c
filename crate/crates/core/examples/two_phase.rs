//! Two-phase training on synthetic marker crops.
//!
//! cargo run --release -p flank-core --example two_phase

use flank_core::dataset::LabeledImages;
use flank_core::eval::evaluate_images;
use flank_core::nn::{reference_model, train_phase, TrainConfig};
use flank_core::synth::marker_dataset;
use flank_core::Model;
use std::time::Instant;

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7u64);
    let t = Instant::now();
    let all = marker_dataset(2000, 64, seed);
    let (train, val) = (
        LabeledImages::new(all.images[..1600].to_vec(), all.labels[..1600].to_vec()),
        LabeledImages::new(all.images[1600..].to_vec(), all.labels[1600..].to_vec()),
    );
    println!("data: {:.1?}", t.elapsed());

    let model: Model = reference_model(64, seed).unwrap();
    let cfg1 = TrainConfig::phase1(seed);
    let (model, h1) = train_phase(model, &train, &[&val], &cfg1.mask_for(5).unwrap(), &cfg1).unwrap();
    let p1 = evaluate_images(&model, &val, "val").unwrap().accuracy;
    println!("phase1: {:.1?} val {p1:.4} history {:?}", t.elapsed(), h1.epochs.iter().map(|e| (e.train_loss, e.validation_accuracy[0])).collect::<Vec<_>>());

    let cfg2 = TrainConfig::phase2(seed);
    let (model, h2) = train_phase(model, &train, &[&val], &cfg2.mask_for(5).unwrap(), &cfg2).unwrap();
    let p2 = evaluate_images(&model, &val, "val").unwrap().accuracy;
    println!("phase2: {:.1?} val {p2:.4} history {:?}", t.elapsed(), h2.epochs.iter().map(|e| (e.train_loss, e.validation_accuracy[0])).collect::<Vec<_>>());
}
