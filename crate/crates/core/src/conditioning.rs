//! Modality encoders, the surrogate bank, and fusion of an arbitrary active
//! subset into one token sequence.
//!
//! Every encoder is a per-position linear map: token `i` of a modality has its
//! own weight block, so the token index carries the spatial layout.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::facegen::{ConditionSet, Modality, ATTR_BITS, NUM_CLASSES};
use crate::numerics::{Axis, Graph, ParamId, ParamStore, Tensor, Var};

pub const SURROGATE_INIT_STD: f64 = 0.02;

/// How surrogates enter the token sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateMode {
    /// No surrogates at all.
    None,
    /// Active tokens are decorated with their surrogate; inactive modalities are omitted.
    Decorate,
    /// Decoration plus a bare surrogate token for every inactive modality.
    InterModal,
}

/// Number of tokens `encode` produces for `m` at image side `side`.
pub fn token_count(m: Modality, side: usize) -> usize {
    match m {
        Modality::Mask | Modality::Sketch => 16,
        Modality::Attr => 1,
        Modality::LowRes => (side / 4) * (side / 4),
    }
}

/// Per-token input width of the encoder for `m`.
pub fn token_input_dim(m: Modality, side: usize) -> usize {
    let patch = (side / 4) * (side / 4);
    match m {
        Modality::Mask => patch * NUM_CLASSES,
        Modality::Sketch => patch,
        Modality::Attr => ATTR_BITS,
        Modality::LowRes => 1,
    }
}

pub fn surrogate_name(m: Modality) -> String {
    format!("surrogate.{}", m.name())
}

fn enc_weight_name(m: Modality) -> String {
    format!("enc.{}.weight", m.name())
}

fn enc_bias_name(m: Modality) -> String {
    format!("enc.{}.bias", m.name())
}

/// Encoder inputs for one modality as an `n × k` matrix.
pub fn payload_matrix(m: Modality, cs: &ConditionSet) -> Result<Tensor> {
    let side = cs.side;
    let ps = side / 4;
    let missing = || Error::InvalidArgument(format!("no {m} payload"));
    let n = token_count(m, side);
    let k = token_input_dim(m, side);
    let mut data = vec![0.0; n * k];
    match m {
        Modality::Mask | Modality::Sketch => {
            let values = if m == Modality::Mask { cs.mask.as_ref() } else { cs.sketch.as_ref() }.ok_or_else(missing)?;
            if values.len() != side * side {
                return Err(Error::InvalidArgument(format!("{m} payload has {} values", values.len())));
            }
            for pr in 0..4 {
                for pc in 0..4 {
                    let token = pr * 4 + pc;
                    for r in 0..ps {
                        for c in 0..ps {
                            let v = values[(pr * ps + r) * side + pc * ps + c] as usize;
                            let pix = r * ps + c;
                            if m == Modality::Mask {
                                data[token * k + pix * NUM_CLASSES + v] = 1.0;
                            } else {
                                data[token * k + pix] = v as f64;
                            }
                        }
                    }
                }
            }
        }
        Modality::Attr => {
            let bits = cs.attr.ok_or_else(missing)?;
            for (d, b) in data.iter_mut().zip(bits) {
                *d = b as f64;
            }
        }
        Modality::LowRes => {
            let lr = cs.lowres.as_ref().ok_or_else(missing)?;
            if lr.len() != n {
                return Err(Error::InvalidArgument(format!("lowres payload has {} values", lr.len())));
            }
            data.copy_from_slice(lr);
        }
    }
    Tensor::new(vec![n, k], data)
}

/// Fused conditioning tokens and the modality each token came from
/// (`None` for the null token used when nothing else is present).
pub struct TokenSequence {
    pub tokens: Var,
    pub tags: Vec<Option<Modality>>,
}

#[derive(Clone, Debug)]
struct EncoderIds {
    weight: ParamId,
    bias: ParamId,
}

/// Encoders and surrogates for a set of modalities.
#[derive(Clone, Debug)]
pub struct Conditioner {
    side: usize,
    d: usize,
    mode: SurrogateMode,
    encoders: BTreeMap<Modality, EncoderIds>,
    surrogates: BTreeMap<Modality, ParamId>,
}

impl Conditioner {
    /// Adds freshly initialised encoder and surrogate tensors to `params`.
    pub fn init_params<R: Rng>(
        params: &mut BTreeMap<String, Tensor>,
        modalities: &[Modality],
        mode: SurrogateMode,
        side: usize,
        d: usize,
        rng: &mut R,
    ) {
        for &m in modalities {
            let n = token_count(m, side);
            let k = token_input_dim(m, side);
            let w = Normal::new(0.0, 1.0 / (k as f64).sqrt()).unwrap();
            let data = (0..n * k * d).map(|_| w.sample(rng)).collect();
            params.insert(enc_weight_name(m), Tensor::from_parts(vec![n * k, d], data));
            params.insert(enc_bias_name(m), Tensor::zeros(&[n, d]));
        }
        if mode != SurrogateMode::None {
            let e = Normal::new(0.0, SURROGATE_INIT_STD).unwrap();
            for &m in modalities {
                let data = (0..d).map(|_| e.sample(rng)).collect();
                params.insert(surrogate_name(m), Tensor::from_parts(vec![1, d], data));
            }
        }
    }

    pub fn new(params: &ParamStore, modalities: &[Modality], mode: SurrogateMode, side: usize, d: usize) -> Result<Self> {
        let mut encoders = BTreeMap::new();
        let mut surrogates = BTreeMap::new();
        for &m in modalities {
            encoders.insert(
                m,
                EncoderIds {
                    weight: params.id(&enc_weight_name(m))?,
                    bias: params.id(&enc_bias_name(m))?,
                },
            );
            if mode != SurrogateMode::None {
                surrogates.insert(m, params.id(&surrogate_name(m))?);
            }
        }
        Ok(Self {
            side,
            d,
            mode,
            encoders,
            surrogates,
        })
    }

    pub fn mode(&self) -> SurrogateMode {
        self.mode
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.encoders.keys().copied().collect()
    }

    pub fn surrogate_id(&self, m: Modality) -> Option<ParamId> {
        self.surrogates.get(&m).copied()
    }

    /// `token_count(m) × d` tokens for one payload.
    pub fn encode(&self, g: &mut Graph<'_>, m: Modality, cs: &ConditionSet) -> Result<Var> {
        let ids = self
            .encoders
            .get(&m)
            .ok_or_else(|| Error::InvalidArgument(format!("model has no {m} encoder")))?;
        if cs.side != self.side {
            return Err(Error::InvalidArgument(format!(
                "condition side {} does not match model side {}",
                cs.side, self.side
            )));
        }
        let x = g.constant(payload_matrix(m, cs)?);
        let w = g.param(ids.weight);
        let b = g.param(ids.bias);
        let y = g.row_block_matmul(x, w)?;
        g.add(y, b)
    }

    /// Token sequence for `cs`, modalities in index order.
    pub fn fuse(&self, g: &mut Graph<'_>, cs: &ConditionSet) -> Result<TokenSequence> {
        let mut parts = Vec::new();
        let mut tags = Vec::new();
        for m in Modality::ALL {
            let surrogate = self.surrogates.get(&m).copied();
            if cs.is_active(m) {
                let mut tok = self.encode(g, m, cs)?;
                if let Some(id) = surrogate {
                    let e = g.param(id);
                    tok = g.add_row(tok, e)?;
                }
                tags.extend(std::iter::repeat_n(Some(m), token_count(m, self.side)));
                parts.push(tok);
            } else if self.mode == SurrogateMode::InterModal {
                if let Some(id) = surrogate {
                    parts.push(g.param(id));
                    tags.push(Some(m));
                }
            }
        }
        if parts.is_empty() {
            parts.push(g.constant(Tensor::zeros(&[1, self.d])));
            tags.push(None);
        }
        let tokens = if parts.len() == 1 { parts[0] } else { g.concat(&parts, Axis::Rows)? };
        Ok(TokenSequence { tokens, tags })
    }
}
