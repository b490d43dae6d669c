//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use flank_core::label::Keypoint;
use flank_core::nn::{Layer, LayerKind, LayeredModel, Tensor};
use flank_core::{Flank, Side};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FRONT: [&str; 2] = ["nose", "front paws"];
pub const BACK: [&str; 2] = ["tailbase", "back paws"];

/// Strict rule by exhaustive pairwise comparison.
pub fn strict_oracle(front: &[f64], back: &[f64]) -> Flank {
    if front.is_empty() || back.is_empty() {
        return Flank::Undefined;
    }
    let all_pairs = |rel: fn(f64, f64) -> bool| front.iter().all(|&f| back.iter().all(|&b| rel(f, b)));
    if all_pairs(|f, b| f > b) {
        Flank::Right
    } else if all_pairs(|f, b| f < b) {
        Flank::Left
    } else {
        Flank::Undefined
    }
}

/// Head/tail-first rule for keypoints named after `FRONT` / `BACK`.
pub fn anchor_oracle(kps: &[Keypoint]) -> Flank {
    let x = |name: &str| kps.iter().find(|k| k.visible && k.name == name).map(|k| k.x);
    if let (Some(h), Some(t)) = (x("nose"), x("tailbase")) {
        if h != t {
            return if h > t { Flank::Right } else { Flank::Left };
        }
    }
    if let (Some(f), Some(b)) = (x("front paws"), x("back paws")) {
        if f != b {
            return if f > b { Flank::Right } else { Flank::Left };
        }
    }
    Flank::Undefined
}

pub fn visible_xs(kps: &[Keypoint], names: &[&str]) -> Vec<f64> {
    kps.iter()
        .filter(|k| k.visible && names.contains(&k.name.as_str()))
        .map(|k| k.x)
        .collect()
}

/// Random annotation with two front and two back keypoints plus distractors.
pub fn random_annotation(rng: &mut ChaCha8Rng, width: f64, height: f64) -> Vec<Keypoint> {
    let mut kps = Vec::new();
    for name in FRONT.iter().chain(BACK.iter()) {
        kps.push(Keypoint::new(
            *name,
            rng.gen_range(0.0..=width),
            rng.gen_range(0.0..=height),
            rng.gen_bool(0.8),
        ));
    }
    if rng.gen_bool(0.5) {
        kps.push(Keypoint::new("hip", rng.gen_range(0.0..=width), rng.gen_range(0.0..=height), rng.gen_bool(0.5)));
    }
    kps
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Direct loop-nest forward pass of one sample, returning logits.
pub fn naive_logits(model: &LayeredModel<f64>, input: &[f64]) -> Vec<f64> {
    let mut x = input.to_vec();
    for layer in model.layers() {
        x = naive_layer(layer, &x);
    }
    x
}

pub fn naive_layer(layer: &Layer<f64>, x: &[f64]) -> Vec<f64> {
    let w = layer.weight.data();
    let b = layer.bias.data();
    match layer.kind {
        LayerKind::ConvBlock { in_channels, out_channels, size } => {
            let s = size as isize;
            let at = |c: usize, y: isize, xx: isize| {
                if y < 0 || xx < 0 || y >= s || xx >= s {
                    0.0
                } else {
                    x[(c * size + y as usize) * size + xx as usize]
                }
            };
            let mut conv = vec![0.0; out_channels * size * size];
            for o in 0..out_channels {
                for y in 0..s {
                    for xx in 0..s {
                        let mut acc = b[o];
                        for c in 0..in_channels {
                            for ky in 0..3isize {
                                for kx in 0..3isize {
                                    let wi = ((o * in_channels + c) * 3 + ky as usize) * 3 + kx as usize;
                                    acc += w[wi] * at(c, y + ky - 1, xx + kx - 1);
                                }
                            }
                        }
                        conv[(o * size + y as usize) * size + xx as usize] = relu(acc);
                    }
                }
            }
            let half = size / 2;
            let mut out = vec![0.0; out_channels * half * half];
            for o in 0..out_channels {
                for py in 0..half {
                    for px in 0..half {
                        let mut m = f64::NEG_INFINITY;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                m = m.max(conv[(o * size + 2 * py + dy) * size + 2 * px + dx]);
                            }
                        }
                        out[(o * half + py) * half + px] = m;
                    }
                }
            }
            out
        }
        LayerKind::Dense { inputs, outputs, relu: r } => (0..outputs)
            .map(|o| {
                let v = b[o] + (0..inputs).map(|i| w[o * inputs + i] * x[i]).sum::<f64>();
                if r {
                    relu(v)
                } else {
                    v
                }
            })
            .collect(),
    }
}

pub fn naive_softmax(logits: &[f64]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    [e0 / (e0 + e1), e1 / (e0 + e1)]
}

pub fn naive_mean_loss(model: &LayeredModel<f64>, batch: &Tensor<f64>, labels: &[Side]) -> f64 {
    let n = labels.len();
    let per = batch.len() / n;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let p = naive_softmax(&naive_logits(model, &batch.data()[i * per..(i + 1) * per]));
            -p[s.index()].ln()
        })
        .sum();
    total / n as f64
}

/// Small random architecture with random parameters and a matching batch.
pub fn random_small_case(seed: u64) -> (LayeredModel<f64>, Tensor<f64>, Vec<Side>) {
    let mut r = rng(seed);
    let size = [4usize, 8][r.gen_range(0..2)];
    let in_channels = r.gen_range(1..=3);
    let conv_count = r.gen_range(1..=2usize.min(size.trailing_zeros() as usize - 1));
    let mut layers: Vec<Layer<f64>> = Vec::new();
    let (mut c, mut s) = (in_channels, size);
    for _ in 0..conv_count {
        let out = r.gen_range(2..=4);
        layers.push(Layer::zeros(LayerKind::ConvBlock { in_channels: c, out_channels: out, size: s }));
        c = out;
        s /= 2;
    }
    let mut width = c * s * s;
    if r.gen_bool(0.7) {
        let hidden = r.gen_range(3..=6);
        layers.push(Layer::zeros(LayerKind::Dense { inputs: width, outputs: hidden, relu: true }));
        width = hidden;
    }
    layers.push(Layer::zeros(LayerKind::Dense { inputs: width, outputs: 2, relu: false }));
    for layer in &mut layers {
        for v in layer.weight.data_mut() {
            *v = r.gen_range(-0.8..0.8);
        }
        for v in layer.bias.data_mut() {
            *v = r.gen_range(-0.2..0.2);
        }
    }
    let model = LayeredModel::from_layers(size, in_channels, layers).expect("valid chain");
    let n = r.gen_range(1..=3);
    let data: Vec<f64> = (0..n * in_channels * size * size).map(|_| r.gen_range(0.0..1.0)).collect();
    let batch = Tensor::from_vec(&[n, in_channels, size, size], data).unwrap();
    let labels = (0..n).map(|_| Side::from_index(r.gen_range(0..2))).collect();
    (model, batch, labels)
}

/// Relative error with an absolute floor on the denominator.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn param(m: &mut LayeredModel<f64>, layer: usize, which: usize, i: usize) -> &mut f64 {
    let layer = &mut m.layers_mut()[layer];
    if which == 0 {
        &mut layer.weight.data_mut()[i]
    } else {
        &mut layer.bias.data_mut()[i]
    }
}

/// Worst relative error between analytic gradients and central differences.
pub fn max_gradient_error(model: &LayeredModel<f64>, batch: &Tensor<f64>, labels: &[Side], step: f64, floor: f64) -> f64 {
    let (_, grads) = model.loss_and_grads(batch, labels).unwrap();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for l in 0..model.layer_count() {
        for which in 0..2 {
            let len = if which == 0 { model.layers()[l].weight.len() } else { model.layers()[l].bias.len() };
            for i in 0..len {
                let orig = *param(&mut probe, l, which, i);
                *param(&mut probe, l, which, i) = orig + step;
                let up = naive_mean_loss(&probe, batch, labels);
                *param(&mut probe, l, which, i) = orig - step;
                let down = naive_mean_loss(&probe, batch, labels);
                *param(&mut probe, l, which, i) = orig;
                let numeric = (up - down) / (2.0 * step);
                let analytic = if which == 0 { grads[l].weight[i] } else { grads[l].bias[i] };
                worst = worst.max(relative_error(analytic, numeric, floor));
            }
        }
    }
    worst
}

pub mod pipeline {
    use flank_core::dataset::{build_manifest, ingest, load_samples, BuildOptions, DatasetManifest, DistributionStats};
    use flank_core::eval::{evaluate, split_by_species, EvalReport};
    use flank_core::nn::{reference_model, to_bytes, train_phase, TrainConfig};
    use flank_core::skeleton::builtin_source;
    use flank_core::synth::synthetic_scenes;
    use flank_core::{DerivationConfig, Model};
    use std::collections::BTreeSet;
    use std::path::Path;

    pub struct Artifacts {
        pub manifest: DatasetManifest,
        pub manifest_text: String,
        pub stats: DistributionStats,
        pub checkpoint: Vec<u8>,
        pub report: EvalReport,
        pub report_json: String,
    }

    pub fn build(dir: &Path, images: usize, seed: u64) -> (DatasetManifest, DistributionStats) {
        let source = builtin_source("synthetic").unwrap();
        let doc = synthetic_scenes(&dir.join("images"), images, seed).unwrap();
        let outcome = ingest(&doc, &source.policy).unwrap();
        let opts = BuildOptions {
            derivation: DerivationConfig::default(),
            target_size: 32,
            margin: 0.1,
            images_root: dir.join("images"),
            crop_dir: dir.join("crops"),
        };
        let (manifest, stats, failures) = build_manifest(&outcome.records, &source.map, &opts).unwrap();
        assert!(failures.is_empty(), "{failures:?}");
        manifest.write(&dir.join("manifest.jsonl")).unwrap();
        (manifest, stats)
    }

    /// Scenes -> manifest -> two training phases -> checkpoint -> species-holdout evaluation.
    pub fn run(dir: &Path, seed: u64) -> Artifacts {
        let (manifest, stats) = build(dir, 24, seed);
        let manifest_text = std::fs::read_to_string(dir.join("manifest.jsonl")).unwrap();
        let holdout: BTreeSet<String> = ["leopard".to_string()].into();
        let split = split_by_species(&manifest, &holdout).unwrap();
        let (train, _) = load_samples(&split.train, Some(32));
        let model: Model = reference_model(32, seed).unwrap();
        let mut cfg = TrainConfig::phase1(seed);
        cfg.epochs = 2;
        cfg.batch_size = 8;
        let (model, _) = train_phase(model, &train, &[], &cfg.mask_for(5).unwrap(), &cfg).unwrap();
        let mut cfg = TrainConfig::phase2(seed);
        cfg.epochs = 2;
        cfg.batch_size = 8;
        let (model, _) = train_phase(model, &train, &[], &cfg.mask_for(5).unwrap(), &cfg).unwrap();
        let checkpoint = to_bytes(&model);
        let report = evaluate(&model, &split.validation, "leopard").unwrap();
        let report_json = serde_json::to_string_pretty(&report).unwrap();
        Artifacts { manifest, manifest_text, stats, checkpoint, report, report_json }
    }
}
