use std::fs;

use mmface::denoiser::DenoiserConfig;
use mmface::diffusion::ScheduleConfig;
use mmface::facegen::Modality;
use mmface::trainer::{load_checkpoint, load_model, read_manifest, run, train_parallel_baseline, TrainConfig, TrainState, Variant};

fn config(variant: Variant, iters: usize) -> TrainConfig {
    TrainConfig {
        variant,
        iters,
        batch: 4,
        lr: 1e-3,
        checkpoint_every: 20,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn loss_rows(text: &str) -> Vec<(usize, f64, String)> {
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].to_string())
        })
        .collect()
}

#[test]
fn loss_log_has_one_row_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = TrainState::new(&DenoiserConfig::micro(), ScheduleConfig::default(), config(Variant::M5MultiSurr, 60)).unwrap();
    let summary = run(&mut s, dir.path(), |_, _| {}).unwrap();
    let text = fs::read_to_string(&summary.loss_csv).unwrap();
    assert!(text.starts_with("iter,loss,modality\n"));
    let rows = loss_rows(&text);
    assert_eq!(rows.len(), 60);
    assert!(rows.iter().enumerate().all(|(i, r)| r.0 == i + 1 && r.1.is_finite() && r.1 > 0.0));
    assert!(rows.iter().all(|r| ["all", "none"].contains(&r.2.as_str())));
    for step in [20, 40, 60] {
        assert!(dir.path().join(format!("checkpoints/step_{step:06}")).is_dir());
    }
    assert_eq!(read_manifest(&summary.final_checkpoint).unwrap().iteration, 60);
}

#[test]
fn resuming_from_a_checkpoint_reproduces_the_uninterrupted_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut s = TrainState::new(&DenoiserConfig::micro(), ScheduleConfig::default(), config(Variant::M6FullEam, 60)).unwrap();
    run(&mut s, a.path(), |_, _| {}).unwrap();

    fs::copy(a.path().join("loss.csv"), b.path().join("loss.csv")).unwrap();
    let mut resumed = load_checkpoint(&a.path().join("checkpoints/step_000040")).unwrap();
    assert_eq!(resumed.iter, 40);
    run(&mut resumed, b.path(), |_, _| {}).unwrap();

    assert_eq!(resumed.iter, s.iter);
    assert_eq!(resumed.model.params().content_hash(), s.model.params().content_hash());
    assert_eq!(resumed.rng(), s.rng());
    let csv = |d: &tempfile::TempDir| fs::read(d.path().join("loss.csv")).unwrap();
    assert_eq!(csv(&a), csv(&b));
    let manifest = |d: &tempfile::TempDir| fs::read(d.path().join("final/manifest.json")).unwrap();
    assert_eq!(manifest(&a), manifest(&b));
}

#[test]
fn single_precision_runs_store_rounded_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        fp64: false,
        ..config(Variant::M2DecorOnly, 5)
    };
    let mut s = TrainState::new(&DenoiserConfig::micro(), ScheduleConfig::default(), cfg).unwrap();
    run(&mut s, dir.path(), |_, _| {}).unwrap();
    let (model, manifest) = load_model(&dir.path().join("final")).unwrap();
    assert_eq!(manifest.dtype, "f32");
    for (_, t) in model.params().iter() {
        assert!(t.data().iter().all(|v| (*v as f32) as f64 == *v));
    }
    assert_eq!(model.params().content_hash(), s.model.params().content_hash());
}

#[test]
fn parallel_baseline_trains_one_model_per_modality() {
    let dir = tempfile::tempdir().unwrap();
    let mods = [Modality::Mask, Modality::LowRes];
    let out = train_parallel_baseline(
        &DenoiserConfig::micro(),
        &ScheduleConfig::default(),
        &config(Variant::M3Full, 3),
        &mods,
        dir.path(),
        |_, _, _| {},
    )
    .unwrap();
    assert_eq!(out.len(), 2);
    for ((m, path), want) in out.iter().zip(mods) {
        assert_eq!(*m, want);
        let (model, manifest) = load_model(path).unwrap();
        assert_eq!(manifest.train.variant, Variant::UniSingle(want));
        assert_eq!(model.config().modalities, vec![want]);
        assert!(path.starts_with(dir.path().join(format!("uni_{want}"))));
    }
}
