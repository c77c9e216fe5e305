//! Forward corruption, the DDPM reverse step, guidance composition and the sampler.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::facegen::{pgm, ConditionSet, Image, Modality};

/// Serializable description of a linear schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(rename = "T")]
    pub t: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            t: 200,
            beta_start: 1e-4,
            beta_end: 0.04,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.t, self.beta_start, self.beta_end)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// `T` betas spaced linearly from `beta_start` to `beta_end`.
    pub fn linear(t: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t < 2 {
            return Err(Error::Config(format!("schedule needs at least 2 steps, got {t}")));
        }
        if !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < beta_start < beta_end < 1, got {beta_start} and {beta_end}"
            )));
        }
        let beta: Vec<f64> = (0..t)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (t - 1) as f64)
            .collect();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect::<Vec<_>>();
        let last = *alpha_bar.last().unwrap();
        if last >= 0.05 {
            return Err(Error::Config(format!(
                "schedule leaves alpha_bar_T = {last:.4}; it must end below 0.05"
            )));
        }
        Ok(Self { beta, alpha, alpha_bar })
    }

    /// 200 steps from 1e-4 to 0.04.
    pub fn desk() -> Self {
        ScheduleConfig::default().build().expect("desk schedule is valid")
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    fn check(&self, t: usize) -> Result<usize> {
        if t < 1 || t > self.len() {
            return Err(Error::InvalidArgument(format!("timestep {t} outside 1..={}", self.len())));
        }
        Ok(t - 1)
    }

    /// Values at 1-based step `t`.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }
}

/// `√ᾱ·x0 + √(1−ᾱ)·eps` for an explicit `ᾱ`.
pub fn q_sample_with(alpha_bar: f64, x0: &[f64], eps: &[f64]) -> Vec<f64> {
    let (a, s) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x0.iter().zip(eps).map(|(x, e)| a * x + s * e).collect()
}

pub fn q_sample(x0: &[f64], t: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    let i = sched.check(t)?;
    if x0.len() != eps.len() {
        return Err(Error::shape("q_sample", &[x0.len()], &[eps.len()]));
    }
    Ok(q_sample_with(sched.alpha_bar[i], x0, eps))
}

/// The deterministic part of the reverse step.
pub fn posterior_mean(x_t: &[f64], t: usize, eps_hat: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    let i = sched.check(t)?;
    if x_t.len() != eps_hat.len() {
        return Err(Error::shape("ancestral_step", &[x_t.len()], &[eps_hat.len()]));
    }
    let c = sched.beta[i] / (1.0 - sched.alpha_bar[i]).sqrt();
    let inv = 1.0 / sched.alpha[i].sqrt();
    Ok(x_t.iter().zip(eps_hat).map(|(x, e)| inv * (x - c * e)).collect())
}

/// One ancestral step `x_t → x_{t−1}` with variance `β_t`; no noise at `t = 1`.
pub fn ancestral_step<R: Rng>(
    x_t: &[f64],
    t: usize,
    eps_hat: &[f64],
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut x = posterior_mean(x_t, t, eps_hat, sched)?;
    if t > 1 {
        let sigma = sched.beta(t).sqrt();
        for v in x.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += sigma * z;
        }
    }
    Ok(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceMode {
    None,
    Scalar,
    PerModality,
    Parallel,
}

impl fmt::Display for GuidanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GuidanceMode::None => "none",
            GuidanceMode::Scalar => "scalar",
            GuidanceMode::PerModality => "per_modality",
            GuidanceMode::Parallel => "parallel",
        })
    }
}

impl FromStr for GuidanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(GuidanceMode::None),
            "scalar" => Ok(GuidanceMode::Scalar),
            "per_modality" => Ok(GuidanceMode::PerModality),
            "parallel" => Ok(GuidanceMode::Parallel),
            _ => Err(Error::InvalidArgument(format!("unknown guidance mode `{s}`"))),
        }
    }
}

/// Guidance mode and its weights: one for `Scalar`, one per conditional
/// branch for `PerModality` and `Parallel`, none for `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSpec {
    pub mode: GuidanceMode,
    pub w: Vec<f64>,
}

impl GuidanceSpec {
    pub fn none() -> Self {
        Self {
            mode: GuidanceMode::None,
            w: vec![],
        }
    }

    pub fn scalar(w: f64) -> Self {
        Self {
            mode: GuidanceMode::Scalar,
            w: vec![w],
        }
    }

    pub fn per_modality(w: Vec<f64>) -> Self {
        Self {
            mode: GuidanceMode::PerModality,
            w,
        }
    }

    pub fn parallel(w: Vec<f64>) -> Self {
        Self {
            mode: GuidanceMode::Parallel,
            w,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(w) = self.w.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidArgument(format!("guidance weights must be finite and ≥ 0, got {w}")));
        }
        let ok = match self.mode {
            GuidanceMode::None => self.w.is_empty(),
            GuidanceMode::Scalar => self.w.len() == 1,
            GuidanceMode::PerModality | GuidanceMode::Parallel => !self.w.is_empty(),
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "{} guidance cannot take {} weights",
                self.mode,
                self.w.len()
            )));
        }
        Ok(())
    }

    /// Per-branch weights for `n` conditional branches; a single weight is broadcast.
    pub fn branch_weights(&self, n: usize) -> Result<Vec<f64>> {
        match self.w.len() {
            1 => Ok(vec![self.w[0]; n]),
            len if len == n => Ok(self.w.clone()),
            len => Err(Error::InvalidArgument(format!(
                "{} guidance has {len} weights for {n} conditions",
                self.mode
            ))),
        }
    }

    /// Short text form such as `scalar:2` or `per_modality:1;1`.
    pub fn label(&self) -> String {
        let w: Vec<String> = self.w.iter().map(|w| w.to_string()).collect();
        if w.is_empty() {
            self.mode.to_string()
        } else {
            format!("{}:{}", self.mode, w.join(";"))
        }
    }
}

/// Combines conditional and unconditional predictions according to `spec`.
pub fn compose_cfg(eps_conds: &[Vec<f64>], eps_unconds: &[Vec<f64>], spec: &GuidanceSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let len_err = |what: &str| {
        Err(Error::InvalidArgument(format!(
            "{} guidance with {} conditional and {} unconditional maps: {what}",
            spec.mode,
            eps_conds.len(),
            eps_unconds.len()
        )))
    };
    let n = match eps_conds.first() {
        Some(c) => c.len(),
        None => return len_err("no conditional map"),
    };
    if let Some(bad) = eps_conds.iter().chain(eps_unconds).find(|m| m.len() != n) {
        return Err(Error::shape("compose_cfg", &[n], &[bad.len()]));
    }
    match spec.mode {
        GuidanceMode::None => {
            if eps_conds.len() != 1 {
                return len_err("expected exactly one conditional map");
            }
            Ok(eps_conds[0].clone())
        }
        GuidanceMode::Scalar => {
            if eps_conds.len() != 1 || eps_unconds.len() != 1 {
                return len_err("expected one of each");
            }
            let w = spec.w[0];
            Ok(eps_conds[0]
                .iter()
                .zip(&eps_unconds[0])
                .map(|(c, u)| (w + 1.0) * c - w * u)
                .collect())
        }
        GuidanceMode::PerModality | GuidanceMode::Parallel => {
            if eps_unconds.len() != eps_conds.len() {
                return len_err("expected one unconditional map per conditional map");
            }
            if spec.w.len() != eps_conds.len() {
                return len_err("expected one weight per conditional map");
            }
            Ok((0..n)
                .map(|j| {
                    // Folding from the first term keeps M = 1 identical to the scalar form.
                    let pos = eps_conds.iter().zip(&spec.w).map(|(c, w)| (w + 1.0) * c[j]).reduce(|a, b| a + b);
                    let neg = eps_unconds.iter().zip(&spec.w).map(|(u, w)| w * u[j]).reduce(|a, b| a + b);
                    pos.unwrap_or(0.0) - neg.unwrap_or(0.0)
                })
                .collect())
        }
    }
}

/// Anything that predicts noise for a flattened image.
pub trait EpsModel {
    fn side(&self) -> usize;
    fn predict_eps(&self, x_t: &[f64], t: usize, cs: &ConditionSet) -> Result<Vec<f64>>;
}

impl EpsModel for Denoiser {
    fn side(&self) -> usize {
        self.config().side
    }

    fn predict_eps(&self, x_t: &[f64], t: usize, cs: &ConditionSet) -> Result<Vec<f64>> {
        self.eps(x_t, t, cs)
    }
}

/// One unified model, or one model per modality for parallel composition.
pub enum Models<'a> {
    Unified(&'a dyn EpsModel),
    PerModality(Vec<(Modality, &'a dyn EpsModel)>),
}

impl Models<'_> {
    fn side(&self) -> Result<usize> {
        match self {
            Models::Unified(m) => Ok(m.side()),
            Models::PerModality(v) => v
                .first()
                .map(|(_, m)| m.side())
                .ok_or_else(|| Error::InvalidArgument("no per-modality models supplied".into())),
        }
    }
}

/// Guided noise estimate at one step.
pub fn guided_eps(models: &Models<'_>, x_t: &[f64], t: usize, cs: &ConditionSet, spec: &GuidanceSpec) -> Result<Vec<f64>> {
    let empty = ConditionSet::empty(cs.side);
    let active = cs.active();
    match (spec.mode, models) {
        (GuidanceMode::Parallel, Models::PerModality(per)) => {
            if active.is_empty() {
                return Err(Error::InvalidArgument("parallel guidance needs an active modality".into()));
            }
            let mut conds = Vec::new();
            let mut unconds = Vec::new();
            for m in &active {
                let model = per
                    .iter()
                    .find(|(pm, _)| pm == m)
                    .map(|(_, model)| *model)
                    .ok_or_else(|| Error::InvalidArgument(format!("no parallel model for {m}")))?;
                conds.push(model.predict_eps(x_t, t, &cs.restrict(&[*m]))?);
                unconds.push(model.predict_eps(x_t, t, &empty)?);
            }
            let spec = GuidanceSpec::parallel(spec.branch_weights(active.len())?);
            compose_cfg(&conds, &unconds, &spec)
        }
        (GuidanceMode::Parallel, Models::Unified(_)) => {
            Err(Error::InvalidArgument("parallel guidance needs one model per modality".into()))
        }
        (_, Models::PerModality(_)) => Err(Error::InvalidArgument(format!(
            "{} guidance needs a single unified model",
            spec.mode
        ))),
        (GuidanceMode::None, Models::Unified(m)) => m.predict_eps(x_t, t, cs),
        (GuidanceMode::Scalar, Models::Unified(m)) => {
            let c = m.predict_eps(x_t, t, cs)?;
            let u = m.predict_eps(x_t, t, &empty)?;
            compose_cfg(&[c], &[u], spec)
        }
        (GuidanceMode::PerModality, Models::Unified(m)) => {
            if active.is_empty() {
                return Err(Error::InvalidArgument("per-modality guidance needs an active modality".into()));
            }
            let conds = active
                .iter()
                .map(|&a| m.predict_eps(x_t, t, &cs.restrict(&[a])))
                .collect::<Result<Vec<_>>>()?;
            // The unified model has a single unconditional branch, shared by every term.
            let u = m.predict_eps(x_t, t, &empty)?;
            let unconds = vec![u; conds.len()];
            let spec = GuidanceSpec::per_modality(spec.branch_weights(active.len())?);
            compose_cfg(&conds, &unconds, &spec)
        }
    }
}

/// Runs one reverse chain from `x_T ~ N(0, I)` using `rng`.
pub fn sample_one<R: Rng>(
    models: &Models<'_>,
    cs: &ConditionSet,
    spec: &GuidanceSpec,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Image> {
    let side = models.side()?;
    if cs.side != side {
        return Err(Error::InvalidArgument(format!(
            "condition side {} does not match model side {side}",
            cs.side
        )));
    }
    let mut x: Vec<f64> = (0..side * side).map(|_| rng.sample(StandardNormal)).collect();
    for t in (1..=sched.len()).rev() {
        let eps = guided_eps(models, &x, t, cs, spec)?;
        x = ancestral_step(&x, t, &eps, sched, rng)?;
    }
    Image::new(side, x)
}

/// `n` images; image `i` uses stream `i` of a generator seeded with `seed`.
pub fn sample(
    models: &Models<'_>,
    cs: &ConditionSet,
    spec: &GuidanceSpec,
    sched: &NoiseSchedule,
    seed: u64,
    n: usize,
) -> Result<Vec<Image>> {
    spec.validate()?;
    cs.validate()?;
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            sample_one(models, cs, spec, sched, &mut rng)
        })
        .collect()
}

/// Writes `sample_{i}.pgm` for each image plus `samples.csv` describing the run.
pub fn write_samples(dir: &Path, images: &[Image], seed: u64, cs: &ConditionSet, spec: &GuidanceSpec) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let active: Vec<&str> = cs.active().iter().map(|m| m.name()).collect();
    let active = if active.is_empty() { "none".to_string() } else { active.join(";") };
    let csv_path = dir.join("samples.csv");
    let mut csv = String::from("file,seed,stream,active,guidance\n");
    for (i, img) in images.iter().enumerate() {
        let name = format!("sample_{i:04}.pgm");
        pgm::write_image(&dir.join(&name), img)?;
        csv.push_str(&format!("{name},{seed},{i},{active},{}\n", spec.label()));
    }
    fs::File::create(&csv_path)
        .and_then(|mut f| f.write_all(csv.as_bytes()))
        .map_err(|e| Error::io(&csv_path, e))
}
