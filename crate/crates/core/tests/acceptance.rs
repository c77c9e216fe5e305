//! End-to-end acceptance checks, one report line per criterion.
//!
//! Criteria 7 to 9 also read desk-scale training runs from `MMFACE_DESK_DIR`
//! (default `target/desk` in the workspace), laid out as written by
//! `mmface ablate --out <dir>`. Without those runs the desk parts are
//! reported as skipped.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use mmface::analytic::{overlapping_mixture, separated_mixture, verify_cfg_reduction, OracleOptions};
use mmface::cli::{evaluate_checkpoint, gradcheck_micro, RunConfig};
use mmface::conditioning::surrogate_name;
use mmface::denoiser::{eam_combine, DenoiserConfig};
use mmface::diffusion::{compose_cfg, q_sample, sample, GuidanceSpec, Models, NoiseSchedule, ScheduleConfig};
use mmface::evalkit::{EvalReport, Protocol};
use mmface::facegen::{derive_conditions, render, sample_params, Modality};
use mmface::trainer::{load_model, run, save_checkpoint, TrainConfig, TrainState, Variant};

enum Outcome {
    Pass(String),
    Skip(String),
}

type Check = Result<Outcome, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    ensure(elapsed <= limit, format!("{what} took {elapsed:.1?}, limit {limit:?}"))
}

fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn c1_weighting_identities() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let len = rng.gen_range(1..64);
        let k = rng.gen_range(1..6);
        let n_b = randn(&mut rng, len);
        let n_k: Vec<Vec<f64>> = (0..k).map(|_| randn(&mut rng, len)).collect();
        let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..2.0)).collect();

        let zero = eam_combine(&n_b, &n_k, &vec![0.0; k]).map_err(|e| e.to_string())?;
        worst = worst.max(max_abs_diff(&zero, &n_b));
        let same = eam_combine(&n_b, &vec![n_b.clone(); k], &w).map_err(|e| e.to_string())?;
        worst = worst.max(max_abs_diff(&same, &n_b));

        let base = eam_combine(&n_b, &n_k, &w).map_err(|e| e.to_string())?;
        for j in 0..k {
            let delta = rng.gen_range(-1.0..1.0);
            let mut w2 = w.clone();
            w2[j] += delta;
            let moved = eam_combine(&n_b, &n_k, &w2).map_err(|e| e.to_string())?;
            for i in 0..len {
                let expect = delta * (n_k[j][i] - n_b[i]) / k as f64;
                worst = worst.max((moved[i] - base[i] - expect).abs());
            }
        }
    }
    ensure(worst <= 1e-12, format!("max deviation {worst:e}"))?;
    within(start.elapsed(), Duration::from_secs(1), "identities")?;
    Ok(Outcome::Pass(format!("100 instances, max deviation {worst:.1e}")))
}

fn c2_guidance_identities() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let c = randn(&mut rng, 32);
        let u = randn(&mut rng, 32);
        let w = rng.gen_range(0.0..5.0);
        let scalar = compose_cfg(std::slice::from_ref(&c), std::slice::from_ref(&u), &GuidanceSpec::scalar(w)).map_err(|e| e.to_string())?;
        let per = compose_cfg(std::slice::from_ref(&c), std::slice::from_ref(&u), &GuidanceSpec::per_modality(vec![w]))
            .map_err(|e| e.to_string())?;
        ensure(
            scalar.iter().zip(&per).all(|(a, b)| a.to_bits() == b.to_bits()),
            "M=1 per-modality differs from scalar",
        )?;
        let plain = compose_cfg(std::slice::from_ref(&c), std::slice::from_ref(&u), &GuidanceSpec::scalar(0.0)).map_err(|e| e.to_string())?;
        ensure(plain == c, "w=0 does not return the conditional prediction")?;
        let both = compose_cfg(
            &[c.clone(), c.clone()],
            &[u.clone(), u.clone()],
            &GuidanceSpec::per_modality(vec![1.0, 1.0]),
        )
        .map_err(|e| e.to_string())?;
        for i in 0..32 {
            ensure(both[i] == 4.0 * c[i] - 2.0 * u[i], "M=2 example is not 4a-2u")?;
        }
    }
    within(start.elapsed(), Duration::from_secs(1), "identities")?;
    Ok(Outcome::Pass("bitwise M=1, w=0 and 4a-2u over 100 instances".into()))
}

fn c3_gradient_check() -> Check {
    let start = Instant::now();
    let err = gradcheck_micro(0).map_err(|e| e.to_string())?;
    ensure(err < 1e-4, format!("max relative error {err:e}"))?;
    within(start.elapsed(), Duration::from_secs(60), "gradient check")?;
    Ok(Outcome::Pass(format!("64 probes, max relative error {err:.2e}")))
}

fn c4_forward_statistics() -> Check {
    let start = Instant::now();
    let sched = NoiseSchedule::desk();
    let img = render(&sample_params(4).unwrap(), 16);
    // background, skin and hair pixels
    let pixels = [0usize, 8 * 16 + 8, 2 * 16 + 8];
    let x0: Vec<f64> = pixels.iter().map(|&p| img.pixels[p]).collect();
    let n = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for t in [1, sched.len() / 2, sched.len()] {
        let ab = sched.alpha_bar(t);
        let mut sum = vec![0.0; x0.len()];
        let mut sq = vec![0.0; x0.len()];
        for _ in 0..n {
            let eps = randn(&mut rng, x0.len());
            let x = q_sample(&x0, t, &eps, &sched).map_err(|e| e.to_string())?;
            for i in 0..x.len() {
                sum[i] += x[i];
                sq[i] += x[i] * x[i];
            }
        }
        for i in 0..x0.len() {
            let mean = sum[i] / n as f64;
            let var = sq[i] / n as f64 - mean * mean;
            let target = ab.sqrt() * x0[i];
            let sigma = ((1.0 - ab) / n as f64).sqrt();
            ensure(
                (mean - target).abs() <= 3.0 * sigma,
                format!("t={t} pixel {i}: mean {mean} vs {target}"),
            )?;
            ensure(
                (var / (1.0 - ab) - 1.0).abs() <= 0.05,
                format!("t={t} pixel {i}: variance {var} vs {}", 1.0 - ab),
            )?;
        }
    }
    within(start.elapsed(), Duration::from_secs(10), "forward statistics")?;
    Ok(Outcome::Pass("t in {1, T/2, T}, 10^4 draws".into()))
}

fn c5_analytic_sampler() -> Check {
    let start = Instant::now();
    let opts = OracleOptions::default();
    let report = verify_cfg_reduction(&separated_mixture(), &overlapping_mixture(), &NoiseSchedule::desk(), &opts)
        .map_err(|e| e.to_string())?;
    let failed: Vec<String> = report
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{}: {}", c.name, c.detail))
        .collect();
    ensure(failed.is_empty(), failed.join("; "))?;
    within(start.elapsed(), Duration::from_secs(120), "oracle suite")?;
    let sweep = report.chains.last().map(|c| c.label.clone()).unwrap_or_default();
    Ok(Outcome::Pass(format!(
        "{} chains, {} checks passed (last: {sweep})",
        opts.chains,
        report.checks.len()
    )))
}

fn micro_state(variant: Variant, iters: usize, batch: usize, p_uncond: f64) -> TrainState {
    let cfg = TrainConfig {
        variant,
        iters,
        batch,
        p_uncond,
        ..TrainConfig::default()
    };
    TrainState::new(&DenoiserConfig::micro(), ScheduleConfig::default(), cfg).unwrap()
}

fn surrogate_has_grad(s: &TrainState, m: Modality) -> bool {
    let ps = s.model.params();
    ps.grad(ps.id(&surrogate_name(m)).unwrap()).data().iter().any(|&g| g != 0.0)
}

fn c6_surrogate_gradient_flow() -> Check {
    let start = Instant::now();
    for active in Modality::ALL {
        let mut s = micro_state(Variant::M3Full, 1, 4, 0.0);
        let mut plan = s.draw_step().map_err(|e| e.to_string())?;
        plan.modality = Some(active);
        s.apply_step(&plan).map_err(|e| e.to_string())?;
        for m in Modality::ALL {
            ensure(surrogate_has_grad(&s, m), format!("M3, {active} active: {m} surrogate has no gradient"))?;
        }
        let mut s = micro_state(Variant::M2DecorOnly, 1, 4, 0.0);
        let mut plan = s.draw_step().map_err(|e| e.to_string())?;
        plan.modality = Some(active);
        s.apply_step(&plan).map_err(|e| e.to_string())?;
        for m in Modality::ALL {
            ensure(
                surrogate_has_grad(&s, m) == (m == active),
                format!("M2, {active} active: {m} surrogate gradient wrong"),
            )?;
        }
    }
    within(start.elapsed(), Duration::from_secs(5), "surrogate flow")?;
    Ok(Outcome::Pass("all 4 under M3, only the active one under M2, for each modality".into()))
}

fn loss_ratio(losses: &[f64]) -> f64 {
    let head = losses[..100].iter().sum::<f64>() / 100.0;
    let tail = losses[losses.len() - 100..].iter().sum::<f64>() / 100.0;
    tail / head
}

fn desk_dir() -> PathBuf {
    std::env::var_os("MMFACE_DESK_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target/desk"))
}

fn read_losses(path: &Path) -> Result<Vec<f64>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).and_then(|v| v.parse().ok()).ok_or_else(|| format!("bad row `{l}`")))
        .collect()
}

fn c7_training_viability() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut s = micro_state(Variant::M3Full, 500, 32, 0.1);
    let summary = run(&mut s, dir.path(), |_, _| {}).map_err(|e| e.to_string())?;
    let micro = loss_ratio(&summary.losses);
    // strictly below 0.7; first baseline 0.421, frozen at 0.43
    ensure(micro <= 0.43, format!("micro loss ratio {micro:.3} above the pinned 0.43"))?;
    within(start.elapsed(), Duration::from_secs(300), "micro smoke run")?;

    let csv = desk_dir().join("M3_FULL/loss.csv");
    if !csv.exists() {
        return Ok(Outcome::Skip(format!(
            "micro ratio {micro:.3}; desk run not found at {}",
            csv.display()
        )));
    }
    let losses = read_losses(&csv)?;
    ensure(losses.len() == 10_000, format!("desk run has {} iterations", losses.len()))?;
    let desk = loss_ratio(&losses);
    // strictly below 0.7; first baseline 0.0886, frozen at 0.10
    ensure(desk < 0.7, format!("desk loss ratio {desk:.4}"))?;
    ensure(desk <= 0.10, format!("desk loss ratio {desk:.4} above the 0.10 regression pin"))?;
    Ok(Outcome::Pass(format!("micro ratio {micro:.3}, desk ratio {desk:.4}")))
}

/// Number of evaluation faces for the desk criteria.
const DESK_EVAL_N: usize = 200;

fn desk_eval(name: &str, protocol: Protocol) -> Result<EvalReport, String> {
    let cfg = RunConfig::default();
    evaluate_checkpoint(&cfg, &desk_dir().join(name), &protocol, DESK_EVAL_N).map_err(|e| format!("{name}: {e}"))
}

fn desk_missing(names: &[&str]) -> Option<String> {
    names
        .iter()
        .map(|n| desk_dir().join(n))
        .find(|d| !d.exists())
        .map(|d| format!("desk run not found at {}", d.display()))
}

fn c8_conditioning_efficacy() -> Check {
    if let Some(msg) = desk_missing(&["M3_FULL"]) {
        return Ok(Outcome::Skip(msg));
    }
    let uncond = desk_eval("M3_FULL", Protocol::Uncond)?;
    let masked = desk_eval("M3_FULL", Protocol::Uni(Modality::Mask))?;
    let attr = desk_eval("M3_FULL", Protocol::Uni(Modality::Attr))?;
    let mask_margin = masked.mask_acc.mean - uncond.mask_acc.mean;
    let attr_margin = attr.attr_acc.mean - 0.5;
    ensure(mask_margin > 0.0, format!("mask-conditioned {:.4} vs unconditional {:.4}", masked.mask_acc.mean, uncond.mask_acc.mean))?;
    ensure(attr_margin > 0.0, format!("attribute accuracy {:.4} not above chance", attr.attr_acc.mean))?;
    Ok(Outcome::Pass(format!(
        "mask {:.4} vs uncond {:.4} (+{mask_margin:.4}); attr {:.4} vs 0.5 (+{attr_margin:.4})",
        masked.mask_acc.mean, uncond.mask_acc.mean, attr.attr_acc.mean
    )))
}

fn c9_ablation_ordering() -> Check {
    if let Some(msg) = desk_missing(&["M1_PARALLEL", "M3_FULL", "M5_MULTI_SURR", "M6_FULL_EAM"]) {
        return Ok(Outcome::Skip(msg));
    }
    let multi = Protocol::Multi(vec![Modality::Mask, Modality::Attr]);
    let m6 = desk_eval("M6_FULL_EAM", multi.clone())?.mask_acc.mean;
    let m3 = desk_eval("M3_FULL", multi.clone())?.mask_acc.mean;
    let m1 = desk_eval("M1_PARALLEL", multi)?.mask_acc.mean;
    let m5_attr = desk_eval("M5_MULTI_SURR", Protocol::Uni(Modality::Attr))?.attr_acc.mean;
    let m3_attr = desk_eval("M3_FULL", Protocol::Uni(Modality::Attr))?.attr_acc.mean;
    let detail = format!(
        "multi mask M6 {m6:.4}, M3 {m3:.4}, M1 {m1:.4}; uni attr M5 {m5_attr:.4}, M3 {m3_attr:.4}"
    );
    let mut violated = Vec::new();
    if m6 < m3 {
        violated.push("M6 >= M3");
    }
    if m3 <= m1 {
        violated.push("M3 > M1");
    }
    if m5_attr >= m3_attr {
        violated.push("M5 attr < M3 attr");
    }
    ensure(violated.is_empty(), format!("violated {}: {detail}", violated.join(", ")))?;
    Ok(Outcome::Pass(detail))
}

fn checkpoint_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn c10_determinism() -> Check {
    let run_once = |dir: &Path| -> Result<Vec<(PathBuf, Vec<u8>)>, String> {
        let mut s = micro_state(Variant::M6FullEam, 20, 4, 0.1);
        for _ in 0..20 {
            s.train_step().map_err(|e| e.to_string())?;
        }
        save_checkpoint(dir, &s).map_err(|e| e.to_string())?;
        Ok(checkpoint_bytes(dir))
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_once(a.path())?;
    ensure(first == run_once(b.path())?, "checkpoints differ between identical runs")?;

    let (model, man) = load_model(a.path()).map_err(|e| e.to_string())?;
    let sched = man.schedule.build().map_err(|e| e.to_string())?;
    let cs = derive_conditions(&sample_params(8).unwrap(), 16).restrict(&[Modality::Mask, Modality::LowRes]);
    let spec = GuidanceSpec::scalar(1.5);
    let draw = || sample(&Models::Unified(&model), &cs, &spec, &sched, 77, 2).map_err(|e| e.to_string());
    let (x, y) = (draw()?, draw()?);
    let same = x
        .iter()
        .zip(&y)
        .all(|(p, q)| p.pixels.iter().zip(&q.pixels).all(|(u, v)| u.to_bits() == v.to_bits()));
    ensure(same, "sampled images differ between identical calls")?;
    Ok(Outcome::Pass(format!("{} checkpoint files and 2 images bit-identical", first.len())))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("weighting identities", c1_weighting_identities),
        ("guidance identities", c2_guidance_identities),
        ("gradient correctness", c3_gradient_check),
        ("forward-process statistics", c4_forward_statistics),
        ("analytic sampler", c5_analytic_sampler),
        ("surrogate gradient flow", c6_surrogate_gradient_flow),
        ("desk training viability", c7_training_viability),
        ("conditioning efficacy", c8_conditioning_efficacy),
        ("ablation ordering", c9_ablation_ordering),
        ("determinism", c10_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let label = format!("criterion {:>2} {name}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|p| label.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(Outcome::Pass(d)) => println!("PASS {label} ({secs:.1}s): {d}"),
            Ok(Outcome::Skip(d)) => println!("SKIP {label} ({secs:.1}s): {d}"),
            Err(d) => {
                failures += 1;
                println!("FAIL {label} ({secs:.1}s): {d}");
            }
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
