//! Uni-modal training with surrogates, the ablation variants, Adam, and
//! deterministic checkpoint/resume.

mod checkpoint;
mod optim;

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::conditioning::SurrogateMode;
use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::diffusion::{q_sample, NoiseSchedule, ScheduleConfig};
use crate::error::{Error, Result};
use crate::facegen::{derive_conditions, render, sample_params, ConditionSet, FaceParams, Modality};
use crate::numerics::Graph;

pub use checkpoint::{load_checkpoint, load_model, read_manifest, save_checkpoint, Manifest, TensorEntry};
pub use optim::Adam;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Active tokens decorated with their surrogate, inactive modalities omitted.
    M2DecorOnly,
    /// Decoration plus bare surrogates for inactive modalities.
    M3Full,
    /// All conditions every step, no surrogates.
    M4MultiNoSurr,
    /// All conditions every step, with surrogates.
    M5MultiSurr,
    /// M3 plus auxiliary heads and the weighting module.
    M6FullEam,
    /// One modality only, for the parallel baseline.
    UniSingle(Modality),
}

impl Variant {
    /// Adjusts the surrogate mode, modality set and head count of `base`.
    pub fn model_config(&self, base: &DenoiserConfig) -> DenoiserConfig {
        let mut c = base.clone();
        c.modalities = Modality::ALL.to_vec();
        c.k = 0;
        match self {
            Variant::M2DecorOnly => c.surrogates = SurrogateMode::Decorate,
            Variant::M3Full | Variant::M5MultiSurr => c.surrogates = SurrogateMode::InterModal,
            Variant::M4MultiNoSurr => c.surrogates = SurrogateMode::None,
            Variant::M6FullEam => {
                c.surrogates = SurrogateMode::InterModal;
                c.k = base.k;
            }
            Variant::UniSingle(m) => {
                c.surrogates = SurrogateMode::Decorate;
                c.modalities = vec![*m];
            }
        }
        c
    }

    pub fn is_multi_modal(&self) -> bool {
        matches!(self, Variant::M4MultiNoSurr | Variant::M5MultiSurr)
    }

    /// The fully conditioned set for this variant's step modality.
    pub fn condition_set(&self, face: &FaceParams, side: usize, modality: Option<Modality>) -> ConditionSet {
        let full = derive_conditions(face, side);
        match (self, modality) {
            (Variant::UniSingle(m), _) => full.restrict(&[*m]),
            (_, Some(m)) => full.restrict(&[m]),
            (_, None) => full,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::M2DecorOnly => f.write_str("M2_DECOR_ONLY"),
            Variant::M3Full => f.write_str("M3_FULL"),
            Variant::M4MultiNoSurr => f.write_str("M4_MULTI_NOSURR"),
            Variant::M5MultiSurr => f.write_str("M5_MULTI_SURR"),
            Variant::M6FullEam => f.write_str("M6_FULL_EAM"),
            Variant::UniSingle(m) => write!(f, "UNI_SINGLE:{m}"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v = match s {
            "M2_DECOR_ONLY" => Variant::M2DecorOnly,
            "M3_FULL" => Variant::M3Full,
            "M4_MULTI_NOSURR" => Variant::M4MultiNoSurr,
            "M5_MULTI_SURR" => Variant::M5MultiSurr,
            "M6_FULL_EAM" => Variant::M6FullEam,
            _ => match s.strip_prefix("UNI_SINGLE:") {
                Some(m) => Variant::UniSingle(Modality::parse(m)?),
                None => return Err(Error::Config(format!("unknown variant `{s}`"))),
            },
        };
        Ok(v)
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub iters: usize,
    pub batch: usize,
    pub lr: f64,
    pub p_uncond: f64,
    pub seed: u64,
    /// When false, parameters and optimizer moments are rounded to 32-bit
    /// after every update and stored as 32-bit floats.
    pub fp64: bool,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::M3Full,
            iters: 10_000,
            batch: 32,
            lr: 1e-4,
            p_uncond: 0.1,
            seed: 0,
            fp64: true,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if !(0.0..=0.5).contains(&self.p_uncond) {
            return Err(Error::Config(format!("p_uncond must lie in [0, 0.5], got {}", self.p_uncond)));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// One training example as drawn, before conditions are derived.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannedSample {
    pub face: FaceParams,
    pub uncond: bool,
    pub t: usize,
    pub eps: Vec<f64>,
}

/// Everything random about one step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepPlan {
    /// `None` when every modality is active.
    pub modality: Option<Modality>,
    pub samples: Vec<PlannedSample>,
}

impl StepPlan {
    pub fn modality_label(&self) -> &'static str {
        self.modality.map_or("all", |m| m.name())
    }
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Denoiser,
    pub adam: Adam,
    pub schedule_config: ScheduleConfig,
    pub config: TrainConfig,
    pub iter: usize,
    rng: ChaCha8Rng,
    schedule: NoiseSchedule,
}

impl TrainState {
    /// Fresh model for `config.variant` built on `base`.
    pub fn new(base: &DenoiserConfig, schedule_config: ScheduleConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let schedule = schedule_config.build()?;
        let mut model_cfg = config.variant.model_config(base);
        model_cfg.timesteps = schedule.len();
        if config.variant == Variant::M6FullEam && model_cfg.k == 0 {
            return Err(Error::Config("M6_FULL_EAM needs K ≥ 1".into()));
        }
        let mut model = Denoiser::init(model_cfg, config.seed)?;
        if !config.fp64 {
            let params = model.params_mut();
            let ids: Vec<_> = params.ids().collect();
            for id in ids {
                params.value_mut(id).data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
            }
        }
        let adam = Adam::new(model.params(), config.lr);
        // The data stream uses its own seed so the draw sequence is independent of initialisation.
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_da7a);
        Ok(Self {
            model,
            adam,
            schedule_config,
            config,
            iter: 0,
            rng,
            schedule,
        })
    }

    pub(crate) fn from_parts(
        model: Denoiser,
        adam: Adam,
        schedule_config: ScheduleConfig,
        config: TrainConfig,
        iter: usize,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        let schedule = schedule_config.build()?;
        Ok(Self {
            model,
            adam,
            schedule_config,
            config,
            iter,
            rng,
            schedule,
        })
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    /// Draws the modality, faces, dropout flags, timesteps and noise for one step.
    pub fn draw_step(&mut self) -> Result<StepPlan> {
        let modality = match self.config.variant {
            Variant::UniSingle(m) => Some(m),
            v if v.is_multi_modal() => None,
            _ => Some(draw_modality(&mut self.rng)),
        };
        let p = self.model.config().pixels();
        let t_max = self.schedule.len();
        let mut samples = Vec::with_capacity(self.config.batch);
        for _ in 0..self.config.batch {
            let face = sample_params(self.rng.gen())?;
            let uncond = self.rng.gen::<f64>() < self.config.p_uncond;
            let t = self.rng.gen_range(1..=t_max);
            let eps = (0..p).map(|_| self.rng.sample(StandardNormal)).collect();
            samples.push(PlannedSample { face, uncond, t, eps });
        }
        Ok(StepPlan { modality, samples })
    }

    /// Zeroes the accumulators, then accumulates the batch-mean gradient of `plan`.
    /// Returns the batch-mean loss.
    pub fn accumulate(&mut self, plan: &StepPlan) -> Result<f64> {
        let side = self.model.config().side;
        let b = plan.samples.len() as f64;
        let variant = self.config.variant;
        let iter = self.iter + 1;
        let diverged = |e: Error| if e.is_numeric() { Error::Diverged { iter, loss: f64::NAN } } else { e };
        let mut grads = Vec::with_capacity(plan.samples.len());
        let mut total = 0.0;
        for s in &plan.samples {
            let cs = if s.uncond {
                ConditionSet::empty(side)
            } else {
                variant.condition_set(&s.face, side, plan.modality)
            };
            let x0 = render(&s.face, side).pixels;
            let x_t = q_sample(&x0, s.t, &s.eps, &self.schedule)?;
            let mut g = Graph::new(self.model.params());
            let loss = self.model.loss(&mut g, &x_t, s.t, &cs, &s.eps).map_err(diverged)?;
            total += g.value(loss).data()[0];
            grads.push(g.backward(loss).map_err(diverged)?);
        }
        let params = self.model.params_mut();
        params.zero_grads();
        for g in &grads {
            params.accumulate(g, 1.0 / b);
        }
        let loss = total / b;
        if !loss.is_finite() {
            return Err(Error::Diverged { iter, loss });
        }
        Ok(loss)
    }

    /// Accumulates `plan` and applies one optimizer update.
    pub fn apply_step(&mut self, plan: &StepPlan) -> Result<f64> {
        let loss = self.accumulate(plan)?;
        self.adam.step(self.model.params_mut(), !self.config.fp64);
        self.iter += 1;
        Ok(loss)
    }

    /// Draws and applies one step, returning the loss and step modality.
    pub fn train_step(&mut self) -> Result<(f64, Option<Modality>)> {
        let plan = self.draw_step()?;
        let loss = self.apply_step(&plan)?;
        Ok((loss, plan.modality))
    }
}

/// Uniform draw over the four modalities.
pub fn draw_modality<R: Rng>(rng: &mut R) -> Modality {
    Modality::ALL[rng.gen_range(0..Modality::ALL.len())]
}

/// Result of [`run`].
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub final_checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub losses: Vec<f64>,
}

pub const LOSS_CSV_HEADER: &str = "iter,loss,modality";

fn read_losses(path: &Path, up_to: usize) -> Result<Vec<(usize, f64, String)>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for line in BufReader::new(f).lines().skip(1) {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split(',');
        let parsed = (|| {
            let it: usize = parts.next()?.parse().ok()?;
            let loss: f64 = parts.next()?.parse().ok()?;
            Some((it, loss, parts.next()?.to_string()))
        })();
        let row = parsed.ok_or_else(|| Error::Checkpoint(format!("malformed loss row `{line}`")))?;
        if row.0 <= up_to {
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Trains until `state.config.iters`, writing `loss.csv`, periodic checkpoints
/// under `checkpoints/` and the final state under `final/`. A state loaded
/// from a checkpoint resumes and keeps the loss rows up to its iteration.
pub fn run(state: &mut TrainState, out_dir: &Path, mut progress: impl FnMut(usize, f64)) -> Result<RunSummary> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv_path = out_dir.join("loss.csv");
    let previous = if state.iter > 0 && csv_path.exists() {
        read_losses(&csv_path, state.iter)?
    } else {
        Vec::new()
    };
    let file = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut csv = BufWriter::new(file);
    let io = |e| Error::io(&csv_path, e);
    writeln!(csv, "{LOSS_CSV_HEADER}").map_err(io)?;
    let mut losses = Vec::new();
    for (it, loss, m) in previous {
        writeln!(csv, "{it},{loss},{m}").map_err(io)?;
        losses.push(loss);
    }
    while state.iter < state.config.iters {
        let plan = state.draw_step()?;
        let loss = match state.apply_step(&plan) {
            Ok(l) => l,
            Err(e) => {
                csv.flush().map_err(io)?;
                return Err(e);
            }
        };
        writeln!(csv, "{},{loss},{}", state.iter, plan.modality_label()).map_err(io)?;
        losses.push(loss);
        progress(state.iter, loss);
        if state.iter.is_multiple_of(state.config.checkpoint_every) {
            csv.flush().map_err(io)?;
            save_checkpoint(&out_dir.join("checkpoints").join(format!("step_{:06}", state.iter)), state)?;
        }
    }
    csv.flush().map_err(io)?;
    let final_checkpoint = out_dir.join("final");
    save_checkpoint(&final_checkpoint, state)?;
    Ok(RunSummary {
        final_checkpoint,
        loss_csv: csv_path,
        losses,
    })
}

/// Trains one single-modality model per entry of `modalities`, each under
/// `out_dir/uni_{name}`. Returns the final checkpoint of each.
pub fn train_parallel_baseline(
    base: &DenoiserConfig,
    schedule: &ScheduleConfig,
    config: &TrainConfig,
    modalities: &[Modality],
    out_dir: &Path,
    mut progress: impl FnMut(Modality, usize, f64),
) -> Result<Vec<(Modality, PathBuf)>> {
    let mut out = Vec::new();
    for &m in modalities {
        let cfg = TrainConfig {
            variant: Variant::UniSingle(m),
            ..config.clone()
        };
        let mut state = TrainState::new(base, schedule.clone(), cfg)?;
        let summary = run(&mut state, &out_dir.join(format!("uni_{m}")), |i, l| progress(m, i, l))?;
        out.push((m, summary.final_checkpoint));
    }
    Ok(out)
}
