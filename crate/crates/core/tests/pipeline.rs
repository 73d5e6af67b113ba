use loco_core::features::{synth_dataset, DatasetManifest, Split, SynthConfig};
use loco_core::localize::gen_proposals;
use loco_core::metrics::{evaluate, EvalConfig, FrameData};
use loco_core::model::{load_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, ModelConfig};
use loco_core::pipeline::{
    eval_set, evaluate_scores, ground_truth, infer_all, proposals_at, read_frame_scores_csv, read_proposals_jsonl,
    write_frame_scores_csv, write_proposals_jsonl, TrainingSet,
};
use loco_core::trainer::{train_stage1, train_stage2, NoHooks, TrainConfig};
use loco_core::LossConfig;

fn synth(n: usize, seed: u64, split: Split) -> SynthConfig {
    SynthConfig {
        n_utterances: n,
        frames_range: (40, 60),
        segment_len_range: (8, 14),
        dim: 6,
        class_shift: 3.0,
        split,
        seed,
        ..SynthConfig::default()
    }
}

fn small_train_config() -> TrainConfig {
    TrainConfig {
        stage1_steps: 20,
        stage2_epochs: 2,
        batch_size: 2,
        eval_every: 10,
        model: ModelConfig {
            input_dim: 6,
            hidden_dim: 4,
            proj_kernel: 3,
            block_kernel: 3,
            ..ModelConfig::default()
        },
        loss: LossConfig {
            top_k: 8,
            pairs_per_utterance: 16,
            ..LossConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn disk_round_trip_from_synthesis_to_report() {
    let dir = tempfile::tempdir().unwrap();
    let train_dir = dir.path().join("train");
    let test_dir = dir.path().join("test");
    synth_dataset(&synth(10, 1, Split::Train), &train_dir).unwrap();
    synth_dataset(&synth(6, 2, Split::Test), &test_dir).unwrap();

    let train_manifest = DatasetManifest::read(train_dir.join("manifest.json")).unwrap();
    assert_eq!(train_manifest.split, Split::Train);
    let train = TrainingSet::from_sequences(&train_manifest.load_all().unwrap());
    let test_seqs = DatasetManifest::read(test_dir.join("manifest.json"))
        .unwrap()
        .load_all()
        .unwrap();
    let test = eval_set(&test_seqs).unwrap();

    let cfg = small_train_config();
    let stage1 = train_stage1(&train, &test, &cfg, &mut NoHooks).unwrap();
    let ckpt_path = dir.path().join("s1.ckpt");
    save_checkpoint(&Checkpoint::new(stage1.params.clone(), cfg.seed, 1), &ckpt_path).unwrap();
    let loaded = load_checkpoint(&ckpt_path).unwrap();
    assert_eq!(loaded.params, stage1.params);
    assert_eq!(loaded.header.stage, 1);

    let scores = infer_all(
        &loaded.params,
        test.iter()
            .map(|e| (e.id.as_str(), &e.feats, e.fps))
            .collect::<Vec<_>>(),
        cfg.lambda_a,
    )
    .unwrap();
    let proposals = proposals_at(&scores, cfg.theta_f);
    let jsonl = dir.path().join("proposals.jsonl");
    let csv = dir.path().join("scores.csv");
    write_proposals_jsonl(&proposals, &jsonl).unwrap();
    write_frame_scores_csv(&scores, &csv).unwrap();
    let proposals_back = read_proposals_jsonl(&jsonl).unwrap();
    let scores_back = read_frame_scores_csv(&csv, 50).unwrap();
    assert_eq!(proposals_back, proposals);
    assert_eq!(scores_back, scores);

    let direct = evaluate_scores(&scores, &test, cfg.theta_f, &EvalConfig::default()).unwrap();
    let flat: Vec<f64> = test.iter().flat_map(|e| scores_back[&e.id].scores.clone()).collect();
    let labels: Vec<u8> = test.iter().flat_map(|e| e.frame_labels.clone()).collect();
    let from_files = evaluate(
        Some(FrameData {
            scores: &flat,
            labels: &labels,
        }),
        &proposals_back,
        &ground_truth(&test),
        &EvalConfig::default(),
    )
    .unwrap();
    assert_eq!(direct, from_files);
    assert_eq!(train.audit().reads(), 0);
}

#[test]
fn training_is_reproducible_to_the_byte() {
    let seqs = loco_core::features::synth_sequences(&synth(8, 3, Split::Train)).unwrap();
    let val = eval_set(&loco_core::features::synth_sequences(&synth(4, 4, Split::Val)).unwrap()).unwrap();
    let cfg = small_train_config();
    let run = || {
        let train = TrainingSet::from_sequences(&seqs);
        let s1 = train_stage1(&train, &val, &cfg, &mut NoHooks).unwrap();
        let s2 = train_stage2(&s1.params, &train, &val, &cfg, &mut NoHooks).unwrap();
        (
            write_checkpoint(&Checkpoint::new(s1.params, cfg.seed, 1)).unwrap(),
            write_checkpoint(&Checkpoint::new(s2.params, cfg.seed, 2)).unwrap(),
        )
    };
    assert_eq!(run(), run());
}

#[test]
fn proposals_respect_their_invariants_on_model_output() {
    let seqs = loco_core::features::synth_sequences(&synth(6, 5, Split::Test)).unwrap();
    let test = eval_set(&seqs).unwrap();
    let params = loco_core::ModelParams::init(&small_train_config().model, 9).unwrap();
    let scores = infer_all(
        &params,
        test.iter()
            .map(|e| (e.id.as_str(), &e.feats, e.fps))
            .collect::<Vec<_>>(),
        0.9,
    )
    .unwrap();
    for (id, tfas) in &scores {
        let duration = tfas.len() as f64 / f64::from(tfas.fps);
        let props = gen_proposals(tfas, 0.5);
        for p in &props {
            assert!(p.is_valid(), "{id}: {p:?}");
            assert!(p.end <= duration + 1e-12);
        }
        for w in props.windows(2) {
            assert!(w[0].end < w[1].start, "{id}: adjacent proposals {w:?}");
        }
    }
}
