mod common;

use std::fs;
use std::path::PathBuf;

use deteclap::eval::*;
use deteclap::labels::{LabelPlan, Modality};
use deteclap::model::{checkpoint, Model};
use deteclap::nn::Tensor;
use deteclap::objectives::Variant;
use deteclap::Error;

fn eye(n: usize) -> Tensor {
    Tensor::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
}

#[test]
fn orthonormal_embeddings_retrieve_perfectly() {
    let m = retrieval_both(&eye(12), &eye(12)).unwrap();
    assert_eq!(m.audio_to_visual, Recalls { r1: 1.0, r5: 1.0, r10: 1.0, sum_r: 3.0 });
    assert_eq!(m.sum_r, 6.0);
}

#[test]
fn positive_always_second() {
    let n = 10;
    let sims: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if j == i { 0.8 } else if j == (i + 1) % n { 0.9 } else { 0.1 }).collect()).collect();
    let r = Recalls::from_ranks(&positive_ranks(&sims).unwrap());
    assert_eq!((r.r1, r.r5, r.r10), (0.0, 1.0, 1.0));
    assert_eq!(rank_of(&[0.5, 0.5, 0.5], 1), 1);
    assert!(retrieval_eval(&eye(3), &eye(4)).is_err());
}

#[test]
fn average_precision_examples() {
    let ap = average_precision(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap();
    assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    assert!((ap - 0.8333).abs() < 1e-4);
    assert_eq!(average_precision(&[0.9, 0.1], &[true, false]), Some(1.0));
    assert_eq!(average_precision(&[0.1, 0.9], &[true, false]), Some(0.5));
    assert_eq!(average_precision(&[0.1, 0.9], &[false, false]), None);
    let scores = vec![vec![0.9, 0.1], vec![0.1, 0.9]];
    let rel = vec![vec![true, false], vec![false, false]];
    assert_eq!(mean_average_precision(&scores, &rel).unwrap(), 1.0);
    assert_eq!(accuracy(&[vec![0.5, 0.5], vec![0.1, 0.2]], &[0, 1]).unwrap(), 1.0);
    assert!(accuracy(&[], &[]).is_err());
}

#[test]
fn metric_oracle_suite_is_clean() {
    assert_eq!(common::metric_oracle_suite(200, 5), Vec::<String>::new());
}

fn correlation(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().map(|&x| x as f64).sum::<f64>() / n, b.iter().map(|&x| x as f64).sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64 - ma, y as f64 - mb);
        sab += x * y;
        saa += x * x;
        sbb += y * y;
    }
    sab / (saa * sbb).sqrt()
}

#[test]
fn synthetic_clips_are_seeded_and_class_structured() {
    let cfg = SynthConfig { clips: 16, classes: 4, test_fraction: 0.25, ..SynthConfig::default() };
    let a = synth_clips(&cfg, 9).unwrap();
    let b = synth_clips(&cfg, 9).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.waveform == y.waveform && x.frame == y.frame));
    assert_ne!(a[0].frame, synth_clips(&cfg, 10).unwrap()[0].frame);
    assert_eq!(a.iter().filter(|c| c.split == Split::Test).count(), 4);
    let (mut same, mut cross) = (Vec::new(), Vec::new());
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let r = correlation(&a[i].frame, &a[j].frame);
            if a[i].class == a[j].class { same.push(r) } else { cross.push(r) }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&same) > mean(&cross) + 0.1, "same {} cross {}", mean(&same), mean(&cross));
    assert_eq!(class_objects(3, 4), [3, 0]);
}

#[test]
fn corpus_files_and_manifest() {
    let c = common::corpus(&SynthConfig { clips: 4, classes: 2, ..SynthConfig::default() }, 2);
    let root = c.dir.path();
    assert_eq!(c.data.clips.len(), 4);
    assert_eq!(c.data.clips[0].audio.len(), 64);
    assert_eq!(c.data.clips[0].visual.len(), 16);
    let manifest = CorpusManifest::load(&root.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.split(Split::Train).len(), 4);
    for (clip, (a, v)) in &c.pairs {
        a.validate(2).unwrap();
        v.validate(2).unwrap();
        assert!(manifest.entries.iter().any(|e| &e.clip == clip));
    }
    let text = manifest.render().unwrap();
    assert_eq!(CorpusManifest::parse(&text, root.to_path_buf(), "m").unwrap().entries, manifest.entries);

    let first = &manifest.entries[0];
    let dup = CorpusManifest::new(PathBuf::from("."), vec![first.clone(), first.clone()]);
    assert!(dup.is_err());
    fs::remove_file(manifest.resolve(&first.frame.path)).unwrap();
    assert!(matches!(CorpusManifest::load(&root.join("manifest.jsonl")), Err(Error::Input(_))));
    assert!(matches!(CorpusManifest::parse("{broken", PathBuf::from("."), "m"), Err(Error::Parse { .. })));
}

#[test]
fn unmasked_embeddings_are_deterministic() {
    let c = common::corpus(&SynthConfig { clips: 3, classes: 3, ..SynthConfig::default() }, 1);
    let model = Model::new(c.cfg.clone(), 0).unwrap();
    let (a1, v1) = embed_corpus(&model, &c.data, Split::Train).unwrap();
    let (a2, v2) = embed_corpus(&model, &c.data, Split::Train).unwrap();
    assert_eq!((a1.clone(), v1.clone()), (a2, v2));
    let sims = cosine_matrix(&a1, &a1).unwrap();
    for (i, row) in sims.iter().enumerate() {
        assert!((row[i] - 1.0).abs() < 1e-12);
    }
    assert!(matches!(embed_corpus(&model, &c.data, Split::Test), Err(Error::Contract(_))));
}

fn quick(steps: u64) -> TrainConfig {
    TrainConfig { steps, batch_size: 2, ..TrainConfig::default() }
}

#[test]
fn two_clip_reconstruction_collapses() {
    let c = common::corpus(&SynthConfig { clips: 2, classes: 2, ..SynthConfig::default() }, 0);
    let run = train(&c.cfg, 0, &c.data, Variant::Base, &Default::default(), &quick(600), &CheckpointSink::default()).unwrap();
    assert_eq!(run.trace.len(), 600);
    let first = common::fixed_mask_recon(&Model::new(c.cfg.clone(), 0).unwrap(), &c.data);
    let last = common::fixed_mask_recon(&run.model, &c.data);
    assert!(last <= 0.1 * first, "L_r {first} -> {last}");
}

#[test]
fn label_variant_trains_both_heads() {
    let c = common::corpus(&SynthConfig { clips: 4, classes: 4, ..SynthConfig::default() }, 0);
    let targets = LabelPlan::new(Variant::Or).build(&c.pairs).unwrap();
    let run = train(&c.cfg, 0, &c.data, Variant::Or, &targets, &quick(1), &CheckpointSink::default()).unwrap();
    let l = run.trace[0].loss;
    assert!(l.l_a2l > 0.0 && l.l_v2l > 0.0);
    assert!((l.l_deteclap - (l.l_c + l.l_r + l.l_a2l + l.l_v2l)).abs() < 1e-12);
    assert!(matches!(train(&c.cfg, 0, &c.data, Variant::Or, &Default::default(), &quick(1), &CheckpointSink::default()), Err(Error::Contract(_))));
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let c = common::corpus(&SynthConfig { clips: 4, classes: 4, ..SynthConfig::default() }, 0);
    let targets = LabelPlan::new(Variant::Or).build(&c.pairs).unwrap();
    let mut bytes = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let sink = CheckpointSink { dir: Some(dir.path().to_path_buf()), extra: serde_json::json!({}) };
        let run = train(&c.cfg, 3, &c.data, Variant::Or, &targets, &TrainConfig { checkpoint_every: 2, ..quick(5) }, &sink).unwrap();
        assert_eq!(run.checkpoints.len(), 3);
        let last = run.checkpoints.last().unwrap();
        let (header, model) = checkpoint::load(last).unwrap();
        assert_eq!(header.step, 5);
        assert_eq!(model.params, run.model.params);
        bytes.push(fs::read(last).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn divergence_is_reported() {
    let c = common::corpus(&SynthConfig { clips: 2, classes: 2, ..SynthConfig::default() }, 0);
    let cfg = TrainConfig { lr: 1e200, ..quick(20) };
    match train(&c.cfg, 0, &c.data, Variant::Base, &Default::default(), &cfg, &CheckpointSink::default()) {
        Err(Error::NonFinite { step, .. }) => assert!(step <= 20),
        other => panic!("expected divergence, got {:?}", other.map(|r| r.trace.len())),
    }
    let mut single = c.data.clone();
    single.clips[1].split = Split::Test;
    assert!(matches!(train(&c.cfg, 0, &single, Variant::Base, &Default::default(), &quick(1), &CheckpointSink::default()), Err(Error::Contract(_))));
}

#[test]
fn sweep_rows_follow_the_grid() {
    let c = common::corpus(&SynthConfig { clips: 4, classes: 4, ..SynthConfig::default() }, 0);
    let tc = quick(3);
    let setup = SweepSetup { data: &c.data, pairs: &c.pairs, plan: LabelPlan::new(Variant::Or), model: &c.cfg, train: &tc, seed: 0, eval_split: Split::Train };
    let table = threshold_sweep(&setup, Modality::Visual, &[0.2, 0.5], 0.5, 2).unwrap();
    assert_eq!(table.rows.len(), 2);
    assert_eq!((table.rows[1].theta_visual, table.rows[1].theta_audio), (0.5, 0.5));
    for row in &table.rows {
        assert!((row.sum_r - row.retrieval.sum_r).abs() < SUM_R_TOL);
    }
    // Thresholds outside every score leave all labels equal.
    let hi = threshold_sweep(&setup, Modality::Visual, &[0.999, 1.0], 1.0, 1).unwrap();
    assert_eq!(hi.rows[0].sum_r, hi.rows[1].sum_r);
    assert!(threshold_sweep(&setup, Modality::Audio, &[], 0.5, 1).is_err());
    assert!(threshold_sweep(&setup, Modality::Audio, &[1.2], 0.5, 1).is_err());
}

#[test]
fn classification_probe_runs_and_checks_inputs() {
    let c = common::corpus(&SynthConfig { clips: 4, classes: 2, ..SynthConfig::default() }, 0);
    let model = Model::new(c.cfg.clone(), 0).unwrap();
    let cfg = FinetuneConfig { epochs: 2, batch_size: 2, ..FinetuneConfig::default() };
    let (res, tuned) = classify_finetune(&model, &c.data, &cfg, 0, Split::Train, Split::Train).unwrap();
    assert_eq!((res.classes, res.train_clips, res.eval_clips), (2, 4, 4));
    assert!(res.accuracy.is_some_and(|a| (0.0..=1.0).contains(&a)));
    assert_ne!(tuned.params, model.params);
    let multi = FinetuneConfig { task: Task::Multi, full: false, ..cfg.clone() };
    let (res, tuned) = classify_finetune(&model, &c.data, &multi, 0, Split::Train, Split::Train).unwrap();
    assert!(res.map.is_some());
    assert_eq!(tuned.params, model.params);
    assert!(classify_finetune(&model, &c.data, &cfg, 0, Split::Test, Split::Train).is_err());
}

#[test]
fn report_round_trip_and_table() {
    let mut r = MetricsReport::new(1, "or", serde_json::json!({"seed": 1}));
    r.retrieval = Some(retrieval_both(&eye(4), &eye(4)).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.json");
    r.save(&p).unwrap();
    assert_eq!(MetricsReport::load(&p).unwrap(), r);
    let table = render_table(&[r]);
    assert!(table.contains("100.0"), "{table}");
    assert_eq!(percent(0.152), "15.2");
}
