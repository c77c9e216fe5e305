use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
[model]
width = 16
blocks = 1
d = 8
K = 2
t_emb_dim = 8
[schedule]
T = 20
beta_start = 0.001
beta_end = 0.3
[train]
iters = 4
batch = 2
lr = 0.001
checkpoint_every = 2
[sample]
count = 2
";

fn mmface(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmface")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_config(dir: &Path, name: &str, extra: &str) -> String {
    let out = dir.join("run");
    let text = format!("{TINY}{extra}[paths]\nout_dir = {:?}\n", out.to_str().unwrap());
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn gradcheck_passes() {
    let o = mmface(&["gradcheck"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("max relative error"));
}

#[test]
fn bad_invocations_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[model]\nwidht = 3\n").unwrap();
    assert_eq!(code(&mmface(&["train", "--config", bad.to_str().unwrap()])), 1);
    assert_eq!(code(&mmface(&["train", "--config", "/nonexistent.toml"])), 1);
    assert_eq!(code(&mmface(&["frobnicate"])), 1);
    assert_eq!(code(&mmface(&["eval", "--ckpt", "/nonexistent", "--protocol", "uni:mask"])), 1);
    assert_eq!(code(&mmface(&["--help"])), 0);
}

#[test]
fn train_then_sample_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "m6.toml", "");
    let cfg = {
        let text = fs::read_to_string(&cfg).unwrap().replace("iters = 4", "iters = 4\nvariant = \"M6_FULL_EAM\"");
        fs::write(&cfg, text).unwrap();
        cfg
    };
    let o = mmface(&["train", "--config", &cfg]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.path().join("run");
    assert!(run.join("final/manifest.json").is_file());
    assert!(run.join("config.resolved.toml").is_file());
    assert_eq!(fs::read_to_string(run.join("loss.csv")).unwrap().lines().count(), 5);

    let resumed = mmface(&["train", "--config", &cfg, "--resume", run.join("checkpoints/step_000002").to_str().unwrap()]);
    assert_eq!(code(&resumed), 0);

    let ckpt = run.to_str().unwrap();
    let out = dir.path().join("uncond");
    let o = mmface(&["sample", "--ckpt", ckpt, "--config", &cfg, "--guidance", "none", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("sample_0000.pgm").is_file() && out.join("sample_0001.pgm").is_file());
    assert!(out.join("samples.csv").is_file());

    let out = dir.path().join("cond");
    let o = mmface(&[
        "sample", "--ckpt", ckpt, "--config", &cfg, "--cond", "mask=eval_seed:3,attr=eval_seed:3",
        "--guidance", "per_modality", "--w", "1,2", "--count", "1", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("sample_0000.pgm").is_file() && !out.join("sample_0001.pgm").exists());

    let o = mmface(&["sample", "--ckpt", ckpt, "--config", &cfg, "--cond", "mask=eval_seed:3", "--w", "-1"]);
    assert_eq!(code(&o), 1);

    let report = dir.path().join("report.csv");
    let o = mmface(&["eval", "--ckpt", ckpt, "--config", &cfg, "--protocol", "uni:mask", "--n", "2", "--out", report.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&report).unwrap();
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn divergence_exits_with_numeric_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "nan.toml", "");
    let text = fs::read_to_string(&cfg).unwrap().replace("lr = 0.001", "lr = 1e300");
    fs::write(&cfg, text).unwrap();
    let o = mmface(&["train", "--config", &cfg]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverged"));
}

#[test]
fn datagen_exports_conditions() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    let o = mmface(&["datagen", "--count", "3", "--export", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    for f in ["image_00002.pgm", "mask_00000.pgm", "sketch_00001.pgm", "lowres_00002.pgm", "attributes.csv", "params.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert_eq!(fs::read_to_string(out.join("attributes.csv")).unwrap().lines().count(), 4);
}

#[test]
fn ablate_writes_one_row_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let configs = dir.path().join("configs");
    fs::create_dir(&configs).unwrap();
    write_config(&configs, "base.toml", "");
    let out = dir.path().join("ablation");
    let o = mmface(&["ablate", "--configs", configs.to_str().unwrap(), "--n", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let table = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].starts_with("variant,condition_decoration,inter_modal_learning,adjust_noise,multi_modal_training,"));
    let names: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["M1_PARALLEL", "M2_DECOR_ONLY", "M3_FULL", "M5_MULTI_SURR", "M6_FULL_EAM"]);
    let width = lines[0].split(',').count();
    assert!(lines.iter().all(|l| l.split(',').count() == width));
    assert_eq!(fs::read_to_string(out.join("ablation_tasks.csv")).unwrap().lines().count(), 1 + 5 * 3);
    for v in ["M2_DECOR_ONLY", "M6_FULL_EAM", "M1_PARALLEL/uni_mask", "M1_PARALLEL/uni_attr"] {
        assert!(out.join(v).join("final/manifest.json").is_file(), "{v}");
    }

    let again = mmface(&["ablate", "--configs", configs.to_str().unwrap(), "--n", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&again), 0);
    assert!(String::from_utf8_lossy(&again.stderr).contains("reusing"));
    assert_eq!(fs::read_to_string(out.join("ablation.csv")).unwrap(), table);
}
