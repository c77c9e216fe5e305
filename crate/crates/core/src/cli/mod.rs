//! Command-line front end. [`run_cli`] parses arguments, dispatches and maps
//! failures to exit codes.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analytic::{overlapping_mixture, separated_mixture, verify_cfg_reduction, OracleOptions};
use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::diffusion::{sample, write_samples, GuidanceMode, GuidanceSpec, Models, NoiseSchedule};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, EvalReport, Protocol, EVAL_SEED_BASE, REPORT_CSV_HEADER};
use crate::facegen::export::{export_dataset, read_attr, read_lowres, read_mask, read_sketch};
use crate::facegen::{derive_conditions, render, sample_params, ConditionSet, Modality};
use crate::numerics::{grad_check, Tensor};
use crate::trainer::{
    load_checkpoint, load_model, read_manifest, run, train_parallel_baseline, Manifest, TrainState, Variant,
};
pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VERIFY: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "mmface", version, about = "Multi-modal conditioned diffusion on procedural faces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Export rendered faces with all derived conditions.
    Datagen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        export: PathBuf,
    },
    /// Train the variant named in the config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Resume from this checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Sample images from a checkpoint.
    Sample {
        /// Checkpoint directory, or a directory of `uni_<modality>` runs for parallel guidance.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated `modality=source`, where source is `eval_seed:K` or a file.
        /// Attribute files may select a row as `path.csv#ROW`.
        #[arg(long, default_value = "")]
        cond: String,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        guidance: Option<GuidanceMode>,
        /// One weight, or one per active modality separated by commas.
        #[arg(long)]
        w: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score generated images against oracle conditions.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// `uncond`, `uni:<modality>`, `multi:all` or `multi:<m>+<m>`.
        #[arg(long)]
        protocol: String,
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// A second checkpoint evaluated under the same protocol.
        #[arg(long)]
        against: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        guidance: Option<GuidanceMode>,
        #[arg(long)]
        w: Option<String>,
        /// Write the report CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate the ablation variants and write a comparison table.
    Ablate {
        /// Directory with `base.toml` and optional per-variant overrides `<VARIANT>.toml`.
        #[arg(long)]
        configs: PathBuf,
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Output root; defaults to the base config's out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the micro denoiser's gradients.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check guided reverse chains against an analytic mixture.
    OracleCheck {
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write chain statistics CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

/// Outcome of a command that ran to completion.
#[derive(Debug, PartialEq)]
pub enum Status {
    Ok,
    VerificationFailed,
}

pub fn exit_code(result: &Result<Status>) -> i32 {
    match result {
        Ok(Status::Ok) => EXIT_OK,
        Ok(Status::VerificationFailed) => EXIT_VERIFY,
        Err(e) if e.is_numeric() => EXIT_NUMERIC,
        Err(_) => EXIT_USAGE,
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = execute(cli.command);
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    exit_code(&result)
}

pub fn execute(command: Command) -> Result<Status> {
    match command {
        Command::Datagen { config, count, export } => datagen(&load_or_default(config.as_deref())?, count, &export),
        Command::Train { config, resume } => train(&RunConfig::load(&config)?, resume.as_deref()),
        Command::Sample {
            ckpt,
            config,
            cond,
            count,
            seed,
            guidance,
            w,
            out,
        } => {
            let mut cfg = load_or_default(config.as_deref())?;
            override_guidance(&mut cfg, guidance, w.as_deref())?;
            if let Some(c) = count {
                cfg.sample.count = c;
            }
            if let Some(s) = seed {
                cfg.sample.seed = s;
            }
            let out = out.unwrap_or_else(|| cfg.paths.out_dir.join("samples"));
            sample_cmd(&cfg, &ckpt, &cond, &out)
        }
        Command::Eval {
            ckpt,
            protocol,
            n,
            against,
            config,
            guidance,
            w,
            out,
        } => {
            let mut cfg = load_or_default(config.as_deref())?;
            override_guidance(&mut cfg, guidance, w.as_deref())?;
            eval_cmd(&cfg, &ckpt, against.as_deref(), &Protocol::parse(&protocol)?, n, out.as_deref())
        }
        Command::Ablate { configs, n, out } => ablate(&configs, n, out.as_deref()),
        Command::Gradcheck { seed } => {
            let err = gradcheck_micro(seed)?;
            println!("max relative error {err:.3e} (tolerance {GRADCHECK_TOL:e})");
            Ok(if err < GRADCHECK_TOL { Status::Ok } else { Status::VerificationFailed })
        }
        Command::OracleCheck { chains, seed, csv } => oracle_check(chains, seed, csv.as_deref()),
    }
}

fn load_or_default(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn parse_weights(s: &str) -> Result<config::Weights> {
    let ws = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Config(format!("bad guidance weight list `{s}`: {e}")))?;
    Ok(if ws.len() == 1 {
        config::Weights::One(ws[0])
    } else {
        config::Weights::Many(ws)
    })
}

fn override_guidance(cfg: &mut RunConfig, mode: Option<GuidanceMode>, w: Option<&str>) -> Result<()> {
    if let Some(m) = mode {
        cfg.sample.guidance = m;
    }
    if let Some(w) = w {
        cfg.sample.w = parse_weights(w)?;
    }
    cfg.guidance_spec().validate()
}

fn datagen(cfg: &RunConfig, count: usize, dir: &Path) -> Result<Status> {
    let seeds: Vec<u64> = (0..count as u64).map(|i| cfg.data.seed.wrapping_add(i)).collect();
    export_dataset(dir, &seeds, cfg.data.side)?;
    cfg.write_resolved(dir)?;
    println!("exported {count} faces to {}", dir.display());
    Ok(Status::Ok)
}

fn train(cfg: &RunConfig, resume: Option<&Path>) -> Result<Status> {
    let out = &cfg.paths.out_dir;
    let mut state = match resume {
        Some(dir) => {
            let s = load_checkpoint(dir)?;
            if s.model.config() != &cfg.variant_model_config()? || s.schedule_config != cfg.schedule_config() {
                return Err(Error::Config(format!(
                    "checkpoint {} does not match the configured model",
                    dir.display()
                )));
            }
            let mut s = s;
            s.config.iters = cfg.train.iters;
            s
        }
        None => TrainState::new(&cfg.base_model_config(), cfg.schedule_config(), cfg.train_config())?,
    };
    cfg.write_resolved(out)?;
    let every = (cfg.train.iters / 20).max(1);
    let summary = run(&mut state, out, |i, l| {
        if i % every == 0 {
            eprintln!("iter {i:>6}  loss {l:.5}");
        }
    })?;
    println!("final checkpoint {}", summary.final_checkpoint.display());
    Ok(Status::Ok)
}

/// Models behind a checkpoint path: a single checkpoint, or a directory of
/// per-modality runs named `uni_<modality>` for parallel guidance.
pub enum Loaded {
    Unified(Denoiser, Manifest),
    PerModality(Vec<(Modality, Denoiser, Manifest)>),
}

fn checkpoint_dir(p: &Path) -> Option<PathBuf> {
    [p.to_path_buf(), p.join("final")]
        .into_iter()
        .find(|d| d.join("manifest.json").is_file())
}

pub fn load_models(path: &Path) -> Result<Loaded> {
    if let Some(dir) = checkpoint_dir(path) {
        let (m, man) = load_model(&dir)?;
        return Ok(Loaded::Unified(m, man));
    }
    let mut per = Vec::new();
    for m in Modality::ALL {
        if let Some(dir) = checkpoint_dir(&path.join(format!("uni_{m}"))) {
            let (model, man) = load_model(&dir)?;
            if model.config().modalities != [m] {
                return Err(Error::Checkpoint(format!("{} is not a {m}-only model", dir.display())));
            }
            per.push((m, model, man));
        }
    }
    if per.is_empty() {
        return Err(Error::Checkpoint(format!("no checkpoint found at {}", path.display())));
    }
    let first = &per[0].2;
    if per.iter().any(|(_, _, m)| m.schedule != first.schedule || m.model.side != first.model.side) {
        return Err(Error::Checkpoint("per-modality checkpoints disagree on side or schedule".into()));
    }
    Ok(Loaded::PerModality(per))
}

impl Loaded {
    pub fn models(&self) -> Models<'_> {
        match self {
            Loaded::Unified(m, _) => Models::Unified(m),
            Loaded::PerModality(per) => Models::PerModality(per.iter().map(|(m, d, _)| (*m, d as _)).collect()),
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        match self {
            Loaded::Unified(_, man) => man.schedule.build(),
            Loaded::PerModality(per) => per[0].2.schedule.build(),
        }
    }

    pub fn side(&self) -> usize {
        match self {
            Loaded::Unified(m, _) => m.config().side,
            Loaded::PerModality(per) => per[0].1.config().side,
        }
    }

    /// Per-modality models only compose in parallel; other modes keep their weights.
    pub fn adapt_guidance(&self, spec: &GuidanceSpec) -> GuidanceSpec {
        match (self, spec.mode) {
            (Loaded::PerModality(_), GuidanceMode::None) => GuidanceSpec::parallel(vec![0.0]),
            (Loaded::PerModality(_), _) => GuidanceSpec::parallel(spec.w.clone()),
            _ => spec.clone(),
        }
    }
}

/// Parses `mask=eval_seed:3,attr=a.csv#2,...` into a condition set.
pub fn parse_conditions(spec: &str, side: usize) -> Result<ConditionSet> {
    let mut cs = ConditionSet::empty(side);
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (name, source) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("condition `{item}` is not modality=source")))?;
        let m = Modality::parse(name.trim())?;
        if cs.is_active(m) {
            return Err(Error::Config(format!("modality {m} given twice")));
        }
        let source = source.trim();
        if let Some(k) = source.strip_prefix("eval_seed:") {
            let k: u64 = k
                .parse()
                .map_err(|_| Error::Config(format!("bad eval seed `{k}`")))?;
            let full = derive_conditions(&sample_params(EVAL_SEED_BASE + k)?, side);
            let one = full.restrict(&[m]);
            match m {
                Modality::Mask => cs.mask = one.mask,
                Modality::Attr => cs.attr = one.attr,
                Modality::Sketch => cs.sketch = one.sketch,
                Modality::LowRes => cs.lowres = one.lowres,
            }
            continue;
        }
        let path = Path::new(source);
        match m {
            Modality::Mask => cs.mask = Some(read_mask(path)?),
            Modality::Sketch => cs.sketch = Some(read_sketch(path)?),
            Modality::LowRes => cs.lowres = Some(read_lowres(path)?),
            Modality::Attr => {
                let (file, row) = match source.rsplit_once('#') {
                    Some((f, r)) => (f, r.parse().map_err(|_| Error::Config(format!("bad row `{r}`")))?),
                    None => (source, 0),
                };
                cs.attr = Some(read_attr(Path::new(file), row)?);
            }
        }
    }
    cs.validate()?;
    Ok(cs)
}

fn sample_cmd(cfg: &RunConfig, ckpt: &Path, cond: &str, out: &Path) -> Result<Status> {
    let loaded = load_models(ckpt)?;
    let cs = parse_conditions(cond, loaded.side())?;
    let spec = loaded.adapt_guidance(&cfg.guidance_spec());
    let images = sample(&loaded.models(), &cs, &spec, &loaded.schedule()?, cfg.sample.seed, cfg.sample.count)?;
    write_samples(out, &images, cfg.sample.seed, &cs, &spec)?;
    cfg.write_resolved(out)?;
    println!("wrote {} samples to {}", images.len(), out.display());
    Ok(Status::Ok)
}

pub fn evaluate_checkpoint(cfg: &RunConfig, ckpt: &Path, protocol: &Protocol, n: usize) -> Result<EvalReport> {
    let loaded = load_models(ckpt)?;
    let spec = loaded.adapt_guidance(&cfg.guidance_spec());
    let id = match &loaded {
        Loaded::Unified(_, man) => man.train.variant.to_string(),
        Loaded::PerModality(_) => "PARALLEL".to_string(),
    };
    let id = format!("{id}@{}", spec.label());
    evaluate(&id, &loaded.models(), protocol, &spec, &loaded.schedule()?, loaded.side(), n)
}

fn eval_cmd(
    cfg: &RunConfig,
    ckpt: &Path,
    against: Option<&Path>,
    protocol: &Protocol,
    n: usize,
    out: Option<&Path>,
) -> Result<Status> {
    let mut reports = vec![evaluate_checkpoint(cfg, ckpt, protocol, n)?];
    if let Some(other) = against {
        reports.push(evaluate_checkpoint(cfg, other, protocol, n)?);
    }
    for r in &reports {
        eprint!("{}", r.table());
    }
    if let [a, b] = reports.as_slice() {
        eprintln!(
            "difference (first − second): mask {:+.4}  attr {:+.4}  sketch {:+.4}  lowres {:+.3} dB",
            a.mask_acc.mean - b.mask_acc.mean,
            a.attr_acc.mean - b.attr_acc.mean,
            a.sketch_f1.mean - b.sketch_f1.mean,
            a.lowres_psnr.mean - b.lowres_psnr.mean
        );
    }
    let mut csv = format!("{REPORT_CSV_HEADER}\n");
    for r in &reports {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    match out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(p, csv).map_err(|e| Error::io(p, e))?;
        }
        None => print!("{csv}"),
    }
    Ok(Status::Ok)
}

/// Variants compared by `ablate`, in table order.
pub const ABLATION_VARIANTS: [&str; 5] = ["M1_PARALLEL", "M2_DECOR_ONLY", "M3_FULL", "M5_MULTI_SURR", "M6_FULL_EAM"];
/// Modalities of the parallel baseline and of the multi-modal protocol.
pub const ABLATION_MODALITIES: [Modality; 2] = [Modality::Mask, Modality::Attr];

/// Table-2 flags: condition decoration, inter-modal learning, adjusted noise, multi-modal training.
fn ablation_flags(name: &str) -> [bool; 4] {
    match name {
        "M2_DECOR_ONLY" => [true, false, false, false],
        "M3_FULL" => [true, true, false, false],
        "M5_MULTI_SURR" => [true, true, false, true],
        "M6_FULL_EAM" => [true, true, true, false],
        _ => [false, false, false, false],
    }
}

pub const ABLATION_CSV_PREFIX: &str = "variant,condition_decoration,inter_modal_learning,adjust_noise,multi_modal_training";

fn ablation_config(dir: &Path, name: &str) -> Result<RunConfig> {
    let own = dir.join(format!("{name}.toml"));
    let base = dir.join("base.toml");
    let cfg = if own.is_file() {
        RunConfig::load(&own)?
    } else if base.is_file() {
        RunConfig::load(&base)?
    } else {
        RunConfig::default()
    };
    Ok(match name {
        "M1_PARALLEL" => cfg,
        _ => cfg.with_variant(name.parse()?),
    })
}

/// True when `dir` already holds a finished run of exactly this configuration.
fn finished_run(dir: &Path, cfg: &RunConfig) -> bool {
    let Ok(man) = read_manifest(&dir.join("final")) else {
        return false;
    };
    let (Ok(model), train) = (cfg.variant_model_config(), cfg.train_config()) else {
        return false;
    };
    man.model == model && man.schedule == cfg.schedule_config() && man.train == train && man.iteration == train.iters
}

fn ablate(configs: &Path, n: usize, out: Option<&Path>) -> Result<Status> {
    if !configs.is_dir() {
        return Err(Error::Config(format!("{} is not a directory", configs.display())));
    }
    let root = match out {
        Some(o) => o.to_path_buf(),
        None => ablation_config(configs, "M3_FULL")?.paths.out_dir,
    };
    let protocols = [
        Protocol::Multi(ABLATION_MODALITIES.to_vec()),
        Protocol::Uni(Modality::Mask),
        Protocol::Uni(Modality::Attr),
    ];
    let mut table = format!("{ABLATION_CSV_PREFIX},{REPORT_CSV_HEADER}\n");
    let mut tasks = format!("variant,{REPORT_CSV_HEADER}\n");
    for name in ABLATION_VARIANTS {
        let cfg = ablation_config(configs, name)?;
        let dir = root.join(name);
        let progress = |i: usize, l: f64| {
            if i.is_multiple_of(1000) {
                eprintln!("{name} iter {i} loss {l:.5}");
            }
        };
        if name == "M1_PARALLEL" {
            let todo: Vec<Modality> = ABLATION_MODALITIES
                .into_iter()
                .filter(|&m| !finished_run(&dir.join(format!("uni_{m}")), &cfg.with_variant(Variant::UniSingle(m))))
                .collect();
            if !todo.is_empty() {
                train_parallel_baseline(
                    &cfg.base_model_config(),
                    &cfg.schedule_config(),
                    &cfg.train_config(),
                    &todo,
                    &dir,
                    |_, i, l| progress(i, l),
                )?;
            }
        } else if !finished_run(&dir, &cfg) {
            let mut state = TrainState::new(&cfg.base_model_config(), cfg.schedule_config(), cfg.train_config())?;
            run(&mut state, &dir, progress)?;
        } else {
            eprintln!("{name}: reusing {}", dir.join("final").display());
        }
        cfg.write_resolved(&dir)?;
        let flags = ablation_flags(name).map(|f| f.to_string()).join(",");
        for (i, p) in protocols.iter().enumerate() {
            let mut r = evaluate_checkpoint(&cfg, &dir, p, n)?;
            r.id = name.to_string();
            eprint!("{}", r.table());
            if i == 0 {
                let _ = writeln!(table, "{name},{flags},{}", r.csv_row());
            }
            let _ = writeln!(tasks, "{name},{}", r.csv_row());
        }
    }
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    for (file, body) in [("ablation.csv", &table), ("ablation_tasks.csv", &tasks)] {
        let p = root.join(file);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    print!("{table}");
    Ok(Status::Ok)
}

/// Largest relative error of 64 finite-difference probes on the micro
/// denoiser with the weighting module and every surrogate in play.
pub fn gradcheck_micro(seed: u64) -> Result<f64> {
    let config = DenoiserConfig {
        k: 3,
        ..DenoiserConfig::micro()
    };
    let mut model = Denoiser::init(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9c);
    // The zero-initialised tensors are moved off zero so every path carries gradient.
    for name in ["eam.L2", "head.skip"] {
        let dims = model.params().get(name)?.dims().to_vec();
        let data = (0..dims.iter().product()).map(|_| rng.gen_range(-0.1..0.1)).collect();
        model.params_mut().set(name, Tensor::new(dims, data)?)?;
    }
    let side = model.config().side;
    let face = sample_params(seed)?;
    let cs = derive_conditions(&face, side).restrict(&[Modality::Sketch]);
    let x0 = render(&face, side).pixels;
    let eps: Vec<f64> = (0..x0.len())
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    let x_t: Vec<f64> = x0.iter().zip(&eps).map(|(a, e)| 0.8 * a + 0.6 * e).collect();
    let t = model.config().timesteps / 5;
    let mut params = model.params().clone();
    let report = grad_check(&mut params, 1e-5, 64, seed, |g| model.loss(g, &x_t, t, &cs, &eps))?;
    Ok(report.max_rel_error)
}

fn oracle_check(chains: Option<usize>, seed: u64, csv: Option<&Path>) -> Result<Status> {
    let mut opts = OracleOptions {
        seed,
        ..OracleOptions::default()
    };
    if let Some(c) = chains {
        opts.chains = c;
    }
    let sched = NoiseSchedule::desk();
    let report = verify_cfg_reduction(&separated_mixture(), &overlapping_mixture(), &sched, &opts)?;
    for c in &report.checks {
        println!("{} {:<28} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    match csv {
        Some(p) => fs::write(p, report.chains_csv()).map_err(|e| Error::io(p, e))?,
        None => print!("{}", report.chains_csv()),
    }
    Ok(if report.passed() { Status::Ok } else { Status::VerificationFailed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Ok(Status::Ok)), 0);
        assert_eq!(exit_code(&Ok(Status::VerificationFailed)), 2);
        assert_eq!(exit_code(&Err(Error::Config("x".into()))), 1);
        assert_eq!(exit_code(&Err(Error::Diverged { iter: 3, loss: f64::NAN })), 3);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_cli(["mmface", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run_cli(["mmface", "eval", "--protocol", "uni:mask"]), EXIT_USAGE);
    }

    #[test]
    fn condition_specs() {
        let cs = parse_conditions("mask=eval_seed:2, attr=eval_seed:2", 16).unwrap();
        assert_eq!(cs.active(), vec![Modality::Mask, Modality::Attr]);
        let truth = derive_conditions(&sample_params(EVAL_SEED_BASE + 2).unwrap(), 16);
        assert_eq!(cs.mask, truth.mask);
        assert!(parse_conditions("", 16).unwrap().is_empty());
        assert!(parse_conditions("mask=eval_seed:1,mask=eval_seed:2", 16).is_err());
        assert!(parse_conditions("text=eval_seed:1", 16).is_err());
        assert!(parse_conditions("mask", 16).is_err());
    }

    #[test]
    fn missing_checkpoint_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_models(dir.path()).is_err());
    }
}
