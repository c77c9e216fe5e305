//! Procedural toy faces and the condition modalities derived from them.
//!
//! Geometry is expressed in fractions of the image side so that a single
//! [`FaceParams`] renders consistently at any supported resolution.

mod conditions;
pub mod export;
mod geometry;
mod invert;
pub mod pgm;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use conditions::{block_mean, derive_conditions, sobel_edges, ATTR_NAMES, SKETCH_THRESHOLD};
pub use geometry::{mask, render, Class, EYE_INTENSITY, MOUTH_INTENSITY};
pub use invert::{invert_params, invert_params_with_residual, lattice_step, lattice_value, InvertOptions};

/// Image sides the generator supports.
pub const SUPPORTED_SIDES: [usize; 2] = [16, 32];
/// Number of condition modalities.
pub const NUM_MODALITIES: usize = 4;
pub const ATTR_BITS: usize = 6;
pub const NUM_CLASSES: usize = 5;

const MAX_TRIES: usize = 1000;

/// Low-dimensional description of one face. Lengths are fractions of the image side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceParams {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
    pub eye_dx: f64,
    pub eye_r: f64,
    pub mouth_w: f64,
    /// Mouth curvature, positive is a smile.
    pub kappa: f64,
    pub hair_h: f64,
    pub g_skin: f64,
    pub g_hair: f64,
    pub g_bg: f64,
}

pub const NUM_FIELDS: usize = 11;

/// `(name, lo, hi)` for every field, in declaration order.
pub const FIELD_RANGES: [(&str, f64, f64); NUM_FIELDS] = [
    ("cx", 0.38, 0.62),
    ("cy", 0.38, 0.62),
    ("r", 0.25, 0.38),
    ("eye_dx", 0.08, 0.16),
    ("eye_r", 0.03, 0.08),
    ("mouth_w", 0.10, 0.20),
    ("kappa", -1.0, 1.0),
    ("hair_h", 0.05, 0.25),
    ("g_skin", 0.35, 0.85),
    ("g_hair", 0.05, 0.45),
    ("g_bg", 0.0, 0.25),
];

impl FaceParams {
    pub fn to_array(&self) -> [f64; NUM_FIELDS] {
        [
            self.cx,
            self.cy,
            self.r,
            self.eye_dx,
            self.eye_r,
            self.mouth_w,
            self.kappa,
            self.hair_h,
            self.g_skin,
            self.g_hair,
            self.g_bg,
        ]
    }

    pub fn from_array(a: [f64; NUM_FIELDS]) -> Self {
        Self {
            cx: a[0],
            cy: a[1],
            r: a[2],
            eye_dx: a[3],
            eye_r: a[4],
            mouth_w: a[5],
            kappa: a[6],
            hair_h: a[7],
            g_skin: a[8],
            g_hair: a[9],
            g_bg: a[10],
        }
    }

    /// Each field mapped to `[0, 1]` over its declared range.
    pub fn normalized(&self) -> [f64; NUM_FIELDS] {
        let mut a = self.to_array();
        for (v, (_, lo, hi)) in a.iter_mut().zip(FIELD_RANGES) {
            *v = (*v - lo) / (hi - lo);
        }
        a
    }

    pub fn in_ranges(&self) -> bool {
        self.to_array()
            .iter()
            .zip(FIELD_RANGES)
            .all(|(v, (_, lo, hi))| (lo..=hi).contains(v))
    }

    /// Ranges hold and eyes and mouth lie strictly inside the face disc.
    pub fn is_valid(&self) -> bool {
        self.in_ranges() && geometry::features_inside(self)
    }

    /// The six binary attributes, in [`ATTR_NAMES`] order.
    pub fn attributes(&self) -> [u8; ATTR_BITS] {
        [
            (self.kappa > 0.2) as u8,
            (self.r >= 0.315) as u8,
            (self.eye_r >= 0.055) as u8,
            (self.hair_h >= 0.15) as u8,
            (self.g_skin >= 0.6) as u8,
            (self.mouth_w >= 0.15) as u8,
        ]
    }
}

/// Draws uniform parameters, resampling until the geometry is valid.
/// Also returns the number of draws it took.
pub fn sample_params_counted(seed: u64) -> Result<(FaceParams, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for tries in 1..=MAX_TRIES {
        let mut a = [0.0; NUM_FIELDS];
        for (v, (_, lo, hi)) in a.iter_mut().zip(FIELD_RANGES) {
            *v = rng.gen_range(lo..=hi);
        }
        let p = FaceParams::from_array(a);
        if p.is_valid() {
            return Ok((p, tries));
        }
    }
    Err(Error::RejectionLimit(MAX_TRIES))
}

pub fn sample_params(seed: u64) -> Result<FaceParams> {
    sample_params_counted(seed).map(|(p, _)| p)
}

/// Conditioning modalities with stable indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Mask = 0,
    Attr = 1,
    Sketch = 2,
    LowRes = 3,
}

impl Modality {
    pub const ALL: [Modality; NUM_MODALITIES] = [Modality::Mask, Modality::Attr, Modality::Sketch, Modality::LowRes];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Mask => "mask",
            Modality::Attr => "attr",
            Modality::Sketch => "sketch",
            Modality::LowRes => "lowres",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown modality `{s}`")))
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Greyscale image in `[-1, 1]`, row-major, `side × side`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub side: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(side: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != side * side {
            return Err(Error::InvalidArgument(format!(
                "image of side {side} needs {} pixels, got {}",
                side * side,
                pixels.len()
            )));
        }
        Ok(Self { side, pixels })
    }

    pub fn constant(side: usize, v: f64) -> Self {
        Self {
            side,
            pixels: vec![v; side * side],
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.side + col]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }
}

/// A subset of modality payloads. A payload is present iff its modality is active.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ConditionSet {
    pub side: usize,
    /// `side²` class indices in `0..5`.
    pub mask: Option<Vec<u8>>,
    pub attr: Option<[u8; ATTR_BITS]>,
    /// `side²` binary edges.
    pub sketch: Option<Vec<u8>>,
    /// `(side/4)²` block means in `[-1, 1]`.
    pub lowres: Option<Vec<f64>>,
}

impl ConditionSet {
    pub fn empty(side: usize) -> Self {
        Self {
            side,
            ..Default::default()
        }
    }

    pub fn is_active(&self, m: Modality) -> bool {
        match m {
            Modality::Mask => self.mask.is_some(),
            Modality::Attr => self.attr.is_some(),
            Modality::Sketch => self.sketch.is_some(),
            Modality::LowRes => self.lowres.is_some(),
        }
    }

    /// Active modalities in index order.
    pub fn active(&self) -> Vec<Modality> {
        Modality::ALL.into_iter().filter(|&m| self.is_active(m)).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.active().is_empty()
    }

    /// Keeps only the payloads of `keep`.
    pub fn restrict(&self, keep: &[Modality]) -> Self {
        let k = |m| keep.contains(&m);
        Self {
            side: self.side,
            mask: self.mask.clone().filter(|_| k(Modality::Mask)),
            attr: self.attr.filter(|_| k(Modality::Attr)),
            sketch: self.sketch.clone().filter(|_| k(Modality::Sketch)),
            lowres: self.lowres.clone().filter(|_| k(Modality::LowRes)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.side;
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !SUPPORTED_SIDES.contains(&s) {
            return bad(&format!("unsupported side {s}"));
        }
        if let Some(mask) = &self.mask {
            if mask.len() != s * s || mask.iter().any(|&c| c as usize >= NUM_CLASSES) {
                return bad("mask payload must hold side² classes in 0..5");
            }
        }
        if let Some(attr) = &self.attr {
            if attr.iter().any(|&b| b > 1) {
                return bad("attribute bits must be 0 or 1");
            }
        }
        if let Some(sk) = &self.sketch {
            if sk.len() != s * s || sk.iter().any(|&b| b > 1) {
                return bad("sketch payload must hold side² binary values");
            }
        }
        if let Some(lr) = &self.lowres {
            if lr.len() != (s / 4) * (s / 4) || lr.iter().any(|v| !(-1.0..=1.0).contains(v)) {
                return bad("low-res payload must hold (side/4)² values in [-1, 1]");
            }
        }
        Ok(())
    }
}
