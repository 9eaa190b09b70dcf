use meshforge::body_model::{procedural_template, BodyShape, Detail};
use meshforge::pose_sequence::synthetic_sequence;
use meshforge::recover_net::{
    dataset_mean_phi, evaluate_clips, prepare_clips, recover_clip, train_clips, ModelConfig, ModelParams, TrainConfig,
};
use meshforge::scene_gen::{export_dataset, generate_sequence, import_dataset, ExportOptions, SceneConfig, Viewpoint};

fn dataset() -> (meshforge::body_model::BodyTemplate, Vec<meshforge::scene_gen::SequenceAnnotation>) {
    let t = procedural_template(Detail::Low);
    let cfg = SceneConfig {
        viewpoints: vec![Viewpoint::E, Viewpoint::S],
        ..SceneConfig::default()
    };
    let seqs = (0..2u64)
        .flat_map(|s| {
            let poses = synthetic_sequence(20 + s, 8, 2, &BodyShape::unit(s as usize), 30.0).unwrap();
            generate_sequence(&format!("m{s}"), &poses, &t, None, &cfg).unwrap()
        })
        .collect();
    (t, seqs)
}

#[test]
fn exported_dataset_reimports_identically() {
    let (t, seqs) = dataset();
    let dir = tempfile::tempdir().unwrap();
    let opts = ExportOptions {
        body_faces: t.faces.clone(),
        ..ExportOptions::default()
    };
    let manifest = export_dataset(&seqs, dir.path(), &opts).unwrap();
    assert_eq!(manifest.total_frames, 32);
    let (again, back) = import_dataset(dir.path()).unwrap();
    assert_eq!(again, manifest);
    assert_eq!(back, seqs);
}

#[test]
fn short_training_lowers_loss_and_recovery_depends_on_order() {
    let (t, seqs) = dataset();
    let cfg = TrainConfig {
        model: ModelConfig::tiny(),
        max_steps: 60,
        learning_rate: 3e-3,
        ..TrainConfig::default()
    };
    let clips = prepare_clips(&seqs, &t, &cfg).unwrap();
    assert_eq!(clips.len(), 8);
    let init = ModelParams::random(&cfg.model, dataset_mean_phi(&seqs).unwrap(), 1).unwrap();
    let before = evaluate_clips(&init, &clips, &t, cfg.lambda).unwrap();
    let (trained, curve) = train_clips(init, &clips, &t, &cfg).unwrap();
    let after = evaluate_clips(&trained, &clips, &t, cfg.lambda).unwrap();
    assert_eq!(curve.len(), 60);
    assert!(after.loss < 0.8 * before.loss, "{} -> {}", before.loss, after.loss);

    // the recurrent state carries history: reversing a clip changes the last frame's estimate
    let frames = &clips[0].images;
    let forward = recover_clip(frames, &trained).unwrap();
    let reversed: Vec<_> = frames.iter().rev().cloned().collect();
    let backward = recover_clip(&reversed, &trained).unwrap();
    assert_ne!(forward[0], backward[frames.len() - 1]);
    assert!(forward.iter().chain(&backward).all(|p| p.validate().is_ok()));
}
