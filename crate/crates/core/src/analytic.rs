//! Closed-form noise predictions for 1-D Gaussian mixtures, and reverse-chain
//! checks of the sampler and guidance composition built on them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::diffusion::{ancestral_step, compose_cfg, GuidanceSpec, NoiseSchedule};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture1D {
    components: Vec<Component>,
}

impl GaussianMixture1D {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument("a mixture needs at least one component".into()));
        }
        if components.iter().any(|c| !(c.weight > 0.0 && c.std > 0.0 && c.mean.is_finite())) {
            return Err(Error::InvalidArgument("weights and std devs must be positive".into()));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { components })
    }

    /// `(weight, mean, std)` triples.
    pub fn from_triples(t: &[(f64, f64, f64)]) -> Result<Self> {
        Self::new(
            t.iter()
                .map(|&(weight, mean, std)| Component { weight, mean, std })
                .collect(),
        )
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    fn log_terms(&self, x: f64) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| {
                let z = (x - c.mean) / c.std;
                c.weight.ln() - c.std.ln() - 0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln()
            })
            .collect()
    }

    pub fn log_density(&self, x: f64) -> f64 {
        let terms = self.log_terms(x);
        let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        max + terms.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
    }

    /// Posterior probability of each component at `x`.
    pub fn responsibilities(&self, x: f64) -> Vec<f64> {
        let terms = self.log_terms(x);
        let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = terms.iter().map(|l| (l - max).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    /// `d/dx log p(x)`.
    pub fn score(&self, x: f64) -> f64 {
        self.responsibilities(x)
            .iter()
            .zip(&self.components)
            .map(|(r, c)| -r * (x - c.mean) / (c.std * c.std))
            .sum()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * Normal::new(c.mean, c.std).expect("valid component").cdf(x))
            .sum()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = self.components.last().expect("non-empty");
        for c in &self.components {
            acc += c.weight;
            if u < acc {
                chosen = c;
                break;
            }
        }
        let z: f64 = rng.sample(StandardNormal);
        chosen.mean + chosen.std * z
    }

    /// Index of the component whose mean is nearest `x`.
    pub fn nearest(&self, x: f64) -> usize {
        let mut best = 0;
        for (i, c) in self.components.iter().enumerate() {
            if (x - c.mean).abs() < (x - self.components[best].mean).abs() {
                best = i;
            }
        }
        best
    }
}

/// The forward-process pushforward of `gm` to step `t`.
pub fn marginal_at(gm: &GaussianMixture1D, t: usize, sched: &NoiseSchedule) -> Result<GaussianMixture1D> {
    check_t(t, sched)?;
    let ab = sched.alpha_bar(t);
    GaussianMixture1D::new(
        gm.components
            .iter()
            .map(|c| Component {
                weight: c.weight,
                mean: ab.sqrt() * c.mean,
                std: (ab * c.std * c.std + 1.0 - ab).sqrt(),
            })
            .collect(),
    )
}

fn check_t(t: usize, sched: &NoiseSchedule) -> Result<()> {
    if t < 1 || t > sched.len() {
        return Err(Error::InvalidArgument(format!("timestep {t} outside 1..={}", sched.len())));
    }
    Ok(())
}

/// `eps* = −√(1−ᾱ_t) · ∇ log p_t(x)`.
pub fn optimal_eps(gm: &GaussianMixture1D, x: f64, t: usize, sched: &NoiseSchedule) -> Result<f64> {
    let m = marginal_at(gm, t, sched)?;
    Ok(-(1.0 - sched.alpha_bar(t)).sqrt() * m.score(x))
}

/// Optimal noise prediction given that `x_0` came from component `component`.
pub fn optimal_eps_conditional(
    gm: &GaussianMixture1D,
    component: usize,
    x: f64,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<f64> {
    let c = *gm
        .components
        .get(component)
        .ok_or_else(|| Error::InvalidArgument(format!("no component {component}")))?;
    let single = GaussianMixture1D::new(vec![Component { weight: 1.0, ..c }])?;
    optimal_eps(&single, x, t, sched)
}

/// Runs `n` reverse chains of the 1-D sampler with noise predictions from
/// `eps_fn(x, t)`. Chain `i` draws from stream `i` of `seed`.
pub fn run_chains(
    sched: &NoiseSchedule,
    n: usize,
    seed: u64,
    eps_fn: impl Fn(f64, usize) -> Result<f64>,
) -> Result<Vec<f64>> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut x: f64 = rng.sample(StandardNormal);
            for t in (1..=sched.len()).rev() {
                let e = eps_fn(x, t)?;
                x = ancestral_step(&[x], t, &[e], sched, &mut rng)?[0];
            }
            Ok(x)
        })
        .collect()
}

/// Guided 1-D chains: conditional on `component` with scalar strength `w`.
pub fn guided_chains(
    gm: &GaussianMixture1D,
    component: usize,
    w: f64,
    sched: &NoiseSchedule,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let spec = GuidanceSpec::scalar(w);
    run_chains(sched, n, seed, |x, t| {
        let c = optimal_eps_conditional(gm, component, x, t, sched)?;
        let u = optimal_eps(gm, x, t, sched)?;
        Ok(compose_cfg(&[vec![c]], &[vec![u]], &spec)?[0])
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainStats {
    pub label: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    /// Fraction of chains nearest each component mean.
    pub fractions: Vec<f64>,
}

impl ChainStats {
    pub fn from_samples(label: impl Into<String>, xs: &[f64], gm: &GaussianMixture1D) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0).max(1.0);
        let mut counts = vec![0usize; gm.len()];
        for &x in xs {
            counts[gm.nearest(x)] += 1;
        }
        Self {
            label: label.into(),
            n,
            mean,
            std: var.sqrt(),
            fractions: counts.into_iter().map(|c| c as f64 / n as f64).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct OracleReport {
    pub checks: Vec<Check>,
    pub chains: Vec<ChainStats>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            detail,
        });
    }

    /// `label,n,mean,std,frac_0,frac_1,...`
    pub fn chains_csv(&self) -> String {
        let k = self.chains.iter().map(|c| c.fractions.len()).max().unwrap_or(0);
        let mut out = String::from("label,n,mean,std");
        for i in 0..k {
            out.push_str(&format!(",frac_{i}"));
        }
        out.push('\n');
        for c in &self.chains {
            out.push_str(&format!("{},{},{},{}", c.label, c.n, c.mean, c.std));
            for f in &c.fractions {
                out.push_str(&format!(",{f}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Tolerances and chain counts for [`verify_cfg_reduction`].
#[derive(Clone, Debug)]
pub struct OracleOptions {
    pub chains: usize,
    pub seed: u64,
    /// The conditioned component.
    pub component: usize,
    pub mean_tol: f64,
    pub std_tol: f64,
    pub weight_tol: f64,
    /// Strengths for the monotonicity sweep.
    pub sweep: Vec<f64>,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            chains: 5000,
            seed: 0,
            component: 1,
            mean_tol: 0.05,
            std_tol: 0.05,
            weight_tol: 0.03,
            sweep: vec![0.0, 1.0, 2.0, 4.0],
        }
    }
}

/// Checks the guidance composers and the reverse chain against the mixture oracle.
///
/// `gm` drives the identities, the conditional chain and the weight recovery;
/// `sweep_gm` (overlapping components, so guidance has room to act) drives
/// the monotone-strength sweep.
pub fn verify_cfg_reduction(
    gm: &GaussianMixture1D,
    sweep_gm: &GaussianMixture1D,
    sched: &NoiseSchedule,
    opts: &OracleOptions,
) -> Result<OracleReport> {
    let mut report = OracleReport::default();
    let k = opts.component;
    let target = *gm
        .components
        .get(k)
        .ok_or_else(|| Error::InvalidArgument(format!("no component {k}")))?;

    // (a) one-modality composition equals the scalar form, (b) w = 0 is the conditional.
    let mut same = true;
    let mut zero = true;
    let mut worst = String::new();
    for t in [1, sched.len() / 4, sched.len() / 2, sched.len()] {
        for i in 0..=40 {
            let x = -4.0 + 0.2 * i as f64;
            let c = vec![optimal_eps_conditional(gm, k, x, t, sched)?];
            let u = vec![optimal_eps(gm, x, t, sched)?];
            for w in [0.0, 0.5, 1.0, 3.0, 7.5] {
                let s = compose_cfg(std::slice::from_ref(&c), std::slice::from_ref(&u), &GuidanceSpec::scalar(w))?;
                let p = compose_cfg(std::slice::from_ref(&c), std::slice::from_ref(&u), &GuidanceSpec::per_modality(vec![w]))?;
                if s[0].to_bits() != p[0].to_bits() {
                    same = false;
                    worst = format!("t={t} x={x} w={w}: {} vs {}", s[0], p[0]);
                }
                if w == 0.0 && (s[0] != c[0] || p[0] != c[0]) {
                    zero = false;
                    worst = format!("t={t} x={x}: w=0 gave {} not {}", s[0], c[0]);
                }
            }
        }
    }
    report.check("per_modality_equals_scalar", same, worst.clone());
    report.check("zero_weight_is_conditional", zero, worst);

    // (c) conditional chains land on the conditioned component.
    let xs = run_chains(sched, opts.chains, opts.seed, |x, t| optimal_eps_conditional(gm, k, x, t, sched))?;
    let st = ChainStats::from_samples(format!("conditional_{k}"), &xs, gm);
    report.check(
        "conditional_mean",
        (st.mean - target.mean).abs() <= opts.mean_tol,
        format!("mean {:.4} target {} ± {}", st.mean, target.mean, opts.mean_tol),
    );
    report.check(
        "conditional_std",
        (st.std - target.std).abs() <= opts.std_tol,
        format!("std {:.4} target {} ± {}", st.std, target.std, opts.std_tol),
    );
    report.chains.push(st);

    // Unconditional chains recover the mixture weights.
    let xs = run_chains(sched, opts.chains, opts.seed.wrapping_add(1), |x, t| optimal_eps(gm, x, t, sched))?;
    let st = ChainStats::from_samples("unconditional", &xs, gm);
    let worst = st
        .fractions
        .iter()
        .zip(&gm.components)
        .map(|(f, c)| (f - c.weight).abs())
        .fold(0.0, f64::max);
    report.check(
        "unconditional_weights",
        worst <= opts.weight_tol,
        format!("max weight error {worst:.4} (tolerance {})", opts.weight_tol),
    );
    report.chains.push(st);

    // Guidance strength sweep.
    let mut last = f64::NEG_INFINITY;
    let mut monotone = true;
    let mut fracs = Vec::new();
    for &w in &opts.sweep {
        let xs = guided_chains(sweep_gm, k, w, sched, opts.chains, opts.seed.wrapping_add(2))?;
        let st = ChainStats::from_samples(format!("sweep_w{w}"), &xs, sweep_gm);
        let f = st.fractions[k];
        monotone &= f > last;
        last = f;
        fracs.push(format!("{w}:{f:.4}"));
        report.chains.push(st);
    }
    report.check("guidance_monotone", monotone, fracs.join(" "));
    Ok(report)
}

/// The well-separated mixture used by the oracle suite.
pub fn separated_mixture() -> GaussianMixture1D {
    GaussianMixture1D::from_triples(&[(0.5, -2.0, 0.3), (0.5, 2.0, 0.3)]).expect("valid mixture")
}

/// Overlapping mixture for the guidance sweep.
pub fn overlapping_mixture() -> GaussianMixture1D {
    GaussianMixture1D::from_triples(&[(0.5, -0.25, 0.5), (0.5, 0.25, 0.5)]).expect("valid mixture")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_gaussian_marginal_and_eps() {
        let s = NoiseSchedule::desk();
        let gm = GaussianMixture1D::from_triples(&[(1.0, 0.0, 1.0)]).unwrap();
        for t in [1, 50, 200] {
            let m = marginal_at(&gm, t, &s).unwrap();
            assert!((m.components()[0].std - 1.0).abs() < 1e-15);
            let x = 0.7;
            let e = optimal_eps(&gm, x, t, &s).unwrap();
            assert!((e - (1.0 - s.alpha_bar(t)).sqrt() * x).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_mixture_has_zero_eps_at_origin() {
        let s = NoiseSchedule::desk();
        let gm = separated_mixture();
        for t in [1, 100, 200] {
            assert_eq!(optimal_eps(&gm, 0.0, t, &s).unwrap(), 0.0);
        }
    }

    #[test]
    fn score_matches_log_density_differences() {
        let s = NoiseSchedule::desk();
        let gm = GaussianMixture1D::from_triples(&[(0.3, -1.0, 0.4), (0.7, 1.5, 0.8)]).unwrap();
        for t in [1, 20, 120] {
            let m = marginal_at(&gm, t, &s).unwrap();
            for x in [-2.0, -0.3, 0.4, 2.5] {
                let h = 1e-5;
                let fd = (m.log_density(x + h) - m.log_density(x - h)) / (2.0 * h);
                let a = m.score(x);
                let rel = (a - fd).abs() / (a.abs() + fd.abs()).max(1e-8);
                assert!(rel < 1e-6, "t={t} x={x}: {a} vs {fd}");
            }
        }
    }

    #[test]
    fn late_marginal_means_vanish() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let m = marginal_at(&separated_mixture(), 1000, &s).unwrap();
        for c in m.components() {
            assert!(c.mean.abs() < 0.02);
        }
    }

    #[test]
    fn rejects_bad_mixtures() {
        assert!(GaussianMixture1D::from_triples(&[(0.5, 0.0, 1.0)]).is_err());
        assert!(GaussianMixture1D::from_triples(&[(1.0, 0.0, 0.0)]).is_err());
        assert!(GaussianMixture1D::from_triples(&[]).is_err());
    }
}
