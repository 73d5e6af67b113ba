use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use loco_bench::{bench_model, localization_fixture, utterance};
use loco_core::localize::{gen_proposals, TFas};
use loco_core::losses::{stage_loss, LossConfig};
use loco_core::metrics::{ar_at_an, default_ar_iou_grid, default_iou_thresholds, mean_ap, roc_auc};
use loco_core::model::{model_backward, model_forward};

fn model(c: &mut Criterion) {
    let params = bench_model();
    let x = utterance(350);
    let loss_cfg = LossConfig::default();
    c.bench_function("forward T=350", |b| {
        b.iter(|| model_forward(black_box(&x), &params).unwrap())
    });
    c.bench_function("forward+backward T=350", |b| {
        b.iter(|| {
            let trace = model_forward(black_box(&x), &params).unwrap();
            let loss = stage_loss(&trace, 1, None, &loss_cfg).unwrap();
            model_backward(&trace, &params, &loss.grads).unwrap()
        })
    });
}

fn localization(c: &mut Criterion) {
    let scores: Vec<f64> = (0..5000).map(|t| ((t * 7919) % 1000) as f64 / 1000.0).collect();
    let tfas = TFas::new(scores.clone(), 50).unwrap();
    c.bench_function("gen_proposals T=5000", |b| {
        b.iter(|| gen_proposals(black_box(&tfas), 0.5))
    });

    let labels: Vec<u8> = (0..scores.len()).map(|t| u8::from(t % 3 == 0)).collect();
    c.bench_function("roc_auc n=5000", |b| {
        b.iter(|| roc_auc(black_box(&scores), &labels).unwrap())
    });

    let (proposals, gt) = localization_fixture(100);
    let thresholds = default_iou_thresholds();
    let grid = default_ar_iou_grid();
    c.bench_function("mAP 100 utterances", |b| {
        b.iter(|| mean_ap(black_box(&proposals), &gt, &thresholds))
    });
    c.bench_function("AR@10 100 utterances", |b| {
        b.iter(|| ar_at_an(black_box(&proposals), &gt, 10, &grid))
    });
}

criterion_group!(benches, model, localization);
criterion_main!(benches);
