//! Alignment and quality metrics computed through the inversion oracle.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::diffusion::{sample, GuidanceSpec, Models, NoiseSchedule};
use crate::error::{Error, Result};
use crate::facegen::{
    block_mean, derive_conditions, invert_params, mask, render, sample_params, sobel_edges, ConditionSet, FaceParams,
    Image, Modality, ATTR_BITS, NUM_FIELDS,
};

/// PSNR reported for identical inputs.
pub const PSNR_CAP_DB: f64 = 99.0;
/// Minimum set size for [`pfd`].
pub const PFD_MIN_SET: usize = 50;
pub const PFD_RIDGE: f64 = 1e-6;
/// Evaluation faces are drawn from seeds starting here, disjoint from training draws in practice.
pub const EVAL_SEED_BASE: u64 = 1 << 40;

/// Per-pixel agreement of two class maps.
pub fn mask_agreement(pred: &[u8], cond: &[u8]) -> f64 {
    let hits = pred.iter().zip(cond).filter(|(a, b)| a == b).count();
    hits as f64 / cond.len() as f64
}

/// Fraction of attribute bits that agree.
pub fn attr_agreement(pred: &[u8; ATTR_BITS], cond: &[u8; ATTR_BITS]) -> f64 {
    pred.iter().zip(cond).filter(|(a, b)| a == b).count() as f64 / ATTR_BITS as f64
}

pub fn mask_accuracy(img: &Image, mask_cond: &[u8]) -> f64 {
    mask_agreement(&mask(&invert_params(img), img.side), mask_cond)
}

pub fn attr_accuracy(img: &Image, attr_cond: &[u8; ATTR_BITS]) -> f64 {
    attr_agreement(&invert_params(img).attributes(), attr_cond)
}

fn dilate(edges: &[u8], side: usize) -> Vec<bool> {
    let mut out = vec![false; edges.len()];
    for r in 0..side {
        for c in 0..side {
            if edges[r * side + c] == 0 {
                continue;
            }
            for dr in r.saturating_sub(1)..=(r + 1).min(side - 1) {
                for dc in c.saturating_sub(1)..=(c + 1).min(side - 1) {
                    out[dr * side + dc] = true;
                }
            }
        }
    }
    out
}

/// F1 of two edge maps where a hit may be off by one pixel in any direction.
pub fn edge_f1(pred: &[u8], cond: &[u8], side: usize) -> f64 {
    let np = pred.iter().filter(|&&e| e != 0).count();
    let nc = cond.iter().filter(|&&e| e != 0).count();
    if np == 0 && nc == 0 {
        return 1.0;
    }
    if np == 0 || nc == 0 {
        return 0.0;
    }
    let near_cond = dilate(cond, side);
    let near_pred = dilate(pred, side);
    let tp_p = pred.iter().zip(&near_cond).filter(|(&e, &n)| e != 0 && n).count();
    let tp_r = cond.iter().zip(&near_pred).filter(|(&e, &n)| e != 0 && n).count();
    let precision = tp_p as f64 / np as f64;
    let recall = tp_r as f64 / nc as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn sketch_f1(img: &Image, sketch_cond: &[u8]) -> f64 {
    edge_f1(&sobel_edges(img), sketch_cond, img.side)
}

/// PSNR of the block means of `img` against `lr_cond`, peak-to-peak 2, capped.
pub fn lowres_psnr(img: &Image, lr_cond: &[f64]) -> f64 {
    let lr = block_mean(img);
    let mse = lr.iter().zip(lr_cond).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / lr.len() as f64;
    if mse == 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (4.0 / mse).log10()).min(PSNR_CAP_DB)
}

/// Normalised recovered parameters, mean intensity and edge density.
pub fn pfd_features(img: &Image) -> Vec<f64> {
    pfd_features_with(img, &invert_params(img))
}

fn pfd_features_with(img: &Image, p: &FaceParams) -> Vec<f64> {
    let mut f = p.normalized().to_vec();
    f.push(img.mean());
    let edges = sobel_edges(img);
    f.push(edges.iter().map(|&e| e as f64).sum::<f64>() / edges.len() as f64);
    f
}

pub const PFD_DIM: usize = NUM_FIELDS + 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Frechet {
    pub d2: f64,
    /// Whether a covariance was singular and the ridge was added.
    pub ridge: bool,
}

fn mean_cov(rows: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    if n < 2 || d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidArgument("need at least two equal-length feature vectors".into()));
    }
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let mu = x.row_mean().transpose();
    let mut c = DMatrix::zeros(d, d);
    for i in 0..n {
        let v = x.row(i).transpose() - &mu;
        c += &v * v.transpose();
    }
    Ok((mu, c / (n as f64 - 1.0)))
}

/// Square root of a symmetric positive semi-definite matrix; negative
/// eigenvalues from rounding are clamped to zero.
pub fn sqrtm_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let s = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&s) * eig.eigenvectors.transpose()
}

fn is_singular(c: &DMatrix<f64>) -> bool {
    let eig = SymmetricEigen::new((c + c.transpose()) * 0.5);
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    min <= 1e-12 * max.max(1.0)
}

/// Fréchet distance between Gaussian fits of two feature sets.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Frechet> {
    let (mu_a, mut ca) = mean_cov(a)?;
    let (mu_b, mut cb) = mean_cov(b)?;
    if mu_a.len() != mu_b.len() {
        return Err(Error::shape("frechet_distance", &[mu_a.len()], &[mu_b.len()]));
    }
    let ridge = is_singular(&ca) || is_singular(&cb);
    if ridge {
        let eye = DMatrix::<f64>::identity(ca.nrows(), ca.ncols()) * PFD_RIDGE;
        ca += &eye;
        cb += &eye;
    }
    let ra = sqrtm_psd(&ca);
    let cross = sqrtm_psd(&(&ra * &cb * &ra));
    let d2 = (&mu_a - &mu_b).norm_squared() + ca.trace() + cb.trace() - 2.0 * cross.trace();
    Ok(Frechet { d2: d2.max(0.0), ridge })
}

/// Fréchet distance over oracle features of two image sets.
pub fn pfd(set_a: &[Image], set_b: &[Image]) -> Result<Frechet> {
    if set_a.len() < PFD_MIN_SET || set_b.len() < PFD_MIN_SET {
        return Err(Error::InvalidArgument(format!(
            "each set needs at least {PFD_MIN_SET} images, got {} and {}",
            set_a.len(),
            set_b.len()
        )));
    }
    let fa: Vec<_> = set_a.iter().map(pfd_features).collect();
    let fb: Vec<_> = set_b.iter().map(pfd_features).collect();
    frechet_distance(&fa, &fb)
}

/// Which conditions are presented at evaluation time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Protocol {
    Uncond,
    Uni(Modality),
    Multi(Vec<Modality>),
}

impl Protocol {
    /// `uncond`, `uni:<m>`, `multi:all` or `multi:<m>+<m>...`.
    pub fn parse(s: &str) -> Result<Self> {
        if s == "uncond" {
            return Ok(Protocol::Uncond);
        }
        if let Some(m) = s.strip_prefix("uni:") {
            return Ok(Protocol::Uni(Modality::parse(m)?));
        }
        if let Some(set) = s.strip_prefix("multi:") {
            if set == "all" {
                return Ok(Protocol::Multi(Modality::ALL.to_vec()));
            }
            let mut ms = set.split('+').map(Modality::parse).collect::<Result<Vec<_>>>()?;
            ms.sort();
            ms.dedup();
            return Ok(Protocol::Multi(ms));
        }
        Err(Error::InvalidArgument(format!("unknown protocol `{s}`")))
    }

    pub fn modalities(&self) -> Vec<Modality> {
        match self {
            Protocol::Uncond => vec![],
            Protocol::Uni(m) => vec![*m],
            Protocol::Multi(ms) => ms.clone(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Protocol::Uncond => "uncond".into(),
            Protocol::Uni(m) => format!("uni:{m}"),
            Protocol::Multi(ms) if ms.len() == Modality::ALL.len() => "multi:all".into(),
            Protocol::Multi(ms) => {
                let names: Vec<&str> = ms.iter().map(|m| m.name()).collect();
                format!("multi:{}", names.join("+"))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self { mean, std: var.sqrt() }
    }
}

/// Metrics of one evaluation. All four alignment metrics are measured
/// against the ground-truth conditions whether or not they were presented.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub id: String,
    pub protocol: String,
    pub n: usize,
    pub mask_acc: Summary,
    pub attr_acc: Summary,
    pub sketch_f1: Summary,
    pub lowres_psnr: Summary,
    pub in_range: f64,
    pub pfd: Option<Frechet>,
}

pub const REPORT_CSV_HEADER: &str = "id,protocol,n,mask_acc_mean,mask_acc_std,attr_acc_mean,attr_acc_std,sketch_f1_mean,sketch_f1_std,lowres_psnr_mean,lowres_psnr_std,in_range,pfd,pfd_ridge";

impl EvalReport {
    pub fn csv_row(&self) -> String {
        let s = |x: &Summary| format!("{},{}", x.mean, x.std);
        let (pfd, ridge) = match &self.pfd {
            Some(f) => (f.d2.to_string(), f.ridge.to_string()),
            None => (String::new(), String::new()),
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.id,
            self.protocol,
            self.n,
            s(&self.mask_acc),
            s(&self.attr_acc),
            s(&self.sketch_f1),
            s(&self.lowres_psnr),
            self.in_range,
            pfd,
            ridge
        )
    }

    pub fn table(&self) -> String {
        let mut t = String::new();
        let _ = writeln!(t, "{} [{}] n={}", self.id, self.protocol, self.n);
        for (name, s) in [
            ("mask accuracy", &self.mask_acc),
            ("attr accuracy", &self.attr_acc),
            ("sketch F1", &self.sketch_f1),
            ("low-res PSNR (dB)", &self.lowres_psnr),
        ] {
            let _ = writeln!(t, "  {name:<18} {:>8.4} ± {:.4}", s.mean, s.std);
        }
        let _ = writeln!(t, "  {:<18} {:>8.4}", "pixels in ±1.5", self.in_range);
        match &self.pfd {
            Some(f) => {
                let _ = writeln!(t, "  {:<18} {:>8.4}{}", "PFD", f.d2, if f.ridge { " (ridge)" } else { "" });
            }
            None => {
                let _ = writeln!(t, "  {:<18} {:>8}", "PFD", "n/a");
            }
        }
        t
    }
}

/// Per-image alignment of `img` with every condition of `truth`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageScores {
    pub mask_acc: f64,
    pub attr_acc: f64,
    pub sketch_f1: f64,
    pub lowres_psnr: f64,
}

pub fn score_image(img: &Image, truth: &ConditionSet) -> Result<(ImageScores, FaceParams)> {
    let (Some(m), Some(a), Some(s), Some(l)) = (&truth.mask, &truth.attr, &truth.sketch, &truth.lowres) else {
        return Err(Error::InvalidArgument("scoring needs the full condition set".into()));
    };
    let p = invert_params(img);
    let scores = ImageScores {
        mask_acc: mask_agreement(&mask(&p, img.side), m),
        attr_acc: attr_agreement(&p.attributes(), a),
        sketch_f1: edge_f1(&sobel_edges(img), s, img.side),
        lowres_psnr: lowres_psnr(img, l),
    };
    Ok((scores, p))
}

/// Samples one image per evaluation face under `protocol` and scores it.
pub fn evaluate(
    id: &str,
    models: &Models<'_>,
    protocol: &Protocol,
    spec: &GuidanceSpec,
    sched: &NoiseSchedule,
    side: usize,
    n: usize,
) -> Result<EvalReport> {
    if n == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one sample".into()));
    }
    let keep = protocol.modalities();
    let mut scores = Vec::with_capacity(n);
    let mut feats_gen = Vec::with_capacity(n);
    let mut feats_real = Vec::with_capacity(n);
    let mut in_range = 0usize;
    for i in 0..n {
        let seed = EVAL_SEED_BASE + i as u64;
        let face = sample_params(seed)?;
        let truth = derive_conditions(&face, side);
        let cs = truth.restrict(&keep);
        let img = sample(models, &cs, spec, sched, seed, 1)?.remove(0);
        in_range += img.pixels.iter().filter(|v| v.abs() <= 1.5).count();
        let (s, p) = score_image(&img, &truth)?;
        feats_gen.push(pfd_features_with(&img, &p));
        let real = render(&face, side);
        feats_real.push(pfd_features_with(&real, &face));
        scores.push(s);
    }
    let col = |f: fn(&ImageScores) -> f64| Summary::of(&scores.iter().map(f).collect::<Vec<_>>());
    let pfd = if n >= PFD_MIN_SET {
        Some(frechet_distance(&feats_gen, &feats_real)?)
    } else {
        None
    };
    Ok(EvalReport {
        id: id.to_string(),
        protocol: protocol.label(),
        n,
        mask_acc: col(|s| s.mask_acc),
        attr_acc: col(|s| s.attr_acc),
        sketch_f1: col(|s| s.sketch_f1),
        lowres_psnr: col(|s| s.lowres_psnr),
        in_range: in_range as f64 / (n * side * side) as f64,
        pfd,
    })
}
