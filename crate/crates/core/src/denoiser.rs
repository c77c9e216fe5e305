//! The noise-prediction network: an MLP-residual trunk that reads the fused
//! condition tokens through one attention query per block, a base noise head,
//! optional auxiliary heads and the weighting module that blends them.
//!
//! Every head also carries a time-gated per-pixel skip of `x_t`. A head that
//! is linear in the `width`-dimensional trunk feature cannot span the full
//! `S²` pixel space; the skip supplies the missing directions.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::conditioning::{Conditioner, SurrogateMode};
use crate::error::{Error, Result};
use crate::facegen::{ConditionSet, Modality};
use crate::numerics::{Axis, Graph, ParamId, ParamStore, Tensor, Var};

pub const EAM_HIDDEN: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub side: usize,
    pub width: usize,
    pub blocks: usize,
    /// Token dimension.
    pub d: usize,
    /// Auxiliary noise heads; 0 disables the weighting module.
    pub k: usize,
    pub t_emb_dim: usize,
    /// Diffusion steps, the longest period of the time embedding.
    pub timesteps: usize,
    /// Modalities with an encoder, in index order.
    pub modalities: Vec<Modality>,
    pub surrogates: SurrogateMode,
}

impl DenoiserConfig {
    pub fn desk() -> Self {
        Self {
            side: 16,
            width: 128,
            blocks: 4,
            d: 64,
            k: 3,
            t_emb_dim: 32,
            timesteps: 200,
            modalities: Modality::ALL.to_vec(),
            surrogates: SurrogateMode::InterModal,
        }
    }

    pub fn micro() -> Self {
        Self {
            width: 32,
            blocks: 2,
            d: 8,
            ..Self::desk()
        }
    }

    pub fn pixels(&self) -> usize {
        self.side * self.side
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !crate::facegen::SUPPORTED_SIDES.contains(&self.side) {
            return bad(format!("unsupported image side {}", self.side));
        }
        if self.width == 0 || self.blocks == 0 || self.d == 0 {
            return bad("width, blocks and d must be at least 1".into());
        }
        if self.t_emb_dim < 2 || !self.t_emb_dim.is_multiple_of(2) {
            return bad(format!("t_emb_dim must be even and at least 2, got {}", self.t_emb_dim));
        }
        if self.timesteps < 1 {
            return bad("timesteps must be at least 1".into());
        }
        if self.modalities.is_empty() {
            return bad("at least one modality is required".into());
        }
        let mut sorted = self.modalities.clone();
        sorted.sort();
        sorted.dedup();
        if sorted != self.modalities {
            return bad("modalities must be unique and in index order".into());
        }
        Ok(())
    }
}

/// Sinusoidal embedding of `t` with periods spaced geometrically from 1 to `timesteps`.
pub fn time_embedding(t: usize, dim: usize, timesteps: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let frac = if half > 1 { i as f64 / (half - 1) as f64 } else { 0.0 };
        let period = (timesteps as f64).powf(frac);
        let angle = t as f64 / period;
        out[i] = angle.sin();
        out[half + i] = angle.cos();
    }
    out
}

/// `eps = n_b + (1/K) Σ_k w_k (n_k − n_b)`.
pub fn eam_combine(n_b: &[f64], n_k: &[Vec<f64>], w: &[f64]) -> Result<Vec<f64>> {
    if n_k.len() != w.len() || n_k.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "need K ≥ 1 maps and as many weights, got {} maps and {} weights",
            n_k.len(),
            w.len()
        )));
    }
    if let Some(bad) = n_k.iter().find(|m| m.len() != n_b.len()) {
        return Err(Error::shape("eam_combine", &[n_b.len()], &[bad.len()]));
    }
    let k = n_k.len() as f64;
    Ok(n_b
        .iter()
        .enumerate()
        .map(|(j, &b)| {
            let s: f64 = n_k.iter().zip(w).map(|(m, wk)| wk * (m[j] - b)).sum();
            b + s / k
        })
        .collect())
}

/// Graph nodes of one forward pass.
pub struct ForwardVars {
    pub n_b: Var,
    pub n_k: Vec<Var>,
    pub w: Option<Var>,
    pub eps: Var,
    pub f_u: Var,
    pub tokens: Var,
}

/// Values of one forward pass, each map flattened row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserOutput {
    pub n_b: Vec<f64>,
    pub n_k: Vec<Vec<f64>>,
    pub w: Vec<f64>,
    pub eps: Vec<f64>,
    pub f_u: Vec<f64>,
}

#[derive(Clone, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn apply(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w)?;
        g.add(y, b)
    }
}

#[derive(Clone, Debug)]
struct Block {
    q: ParamId,
    wk: ParamId,
    wv: ParamId,
    l1: Linear,
    l2: Linear,
}

#[derive(Clone, Debug)]
struct Eam {
    l1: Linear,
    l2: Linear,
}

#[derive(Clone, Debug)]
struct Ids {
    trunk_in: Linear,
    temb: Linear,
    blocks: Vec<Block>,
    base: Linear,
    aux: Vec<Linear>,
    skip: Linear,
    eam: Option<Eam>,
}

/// Network structure plus its parameters.
#[derive(Clone, Debug)]
pub struct Denoiser {
    config: DenoiserConfig,
    params: ParamStore,
    cond: Conditioner,
    ids: Ids,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    let n = Normal::new(0.0, std).unwrap();
    Tensor::from_parts(vec![rows, cols], (0..rows * cols).map(|_| n.sample(rng)).collect())
}

fn insert_linear(map: &mut BTreeMap<String, Tensor>, name: &str, w: Tensor) {
    let cols = w.dims()[1];
    map.insert(format!("{name}.bias"), Tensor::zeros(&[1, cols]));
    map.insert(name.to_string(), w);
}

fn fresh_params(config: &DenoiserConfig, seed: u64) -> BTreeMap<String, Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = BTreeMap::new();
    let c = config;
    let (p, w, d) = (c.pixels(), c.width, c.d);
    let he = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();

    Conditioner::init_params(&mut map, &c.modalities, c.surrogates, c.side, d, &mut rng);
    insert_linear(&mut map, "trunk.in", gaussian(&mut rng, p, w, he(p)));
    insert_linear(&mut map, "temb.proj", gaussian(&mut rng, c.t_emb_dim, w, he(c.t_emb_dim)));
    for b in 0..c.blocks {
        map.insert(format!("block{b}.q"), gaussian(&mut rng, d, 1, 1.0));
        map.insert(format!("block{b}.Wk"), gaussian(&mut rng, d, d, he(d)));
        map.insert(format!("block{b}.Wv"), gaussian(&mut rng, d, d, he(d)));
        insert_linear(&mut map, &format!("block{b}.W1"), gaussian(&mut rng, 2 * w + d, w, he(2 * w + d)));
        // Residual branches start small so the trunk is close to linear at init.
        insert_linear(&mut map, &format!("block{b}.W2"), gaussian(&mut rng, w, w, 0.1 * he(w)));
    }
    insert_linear(&mut map, "head.base", gaussian(&mut rng, w, p, he(w)));
    for k in 0..c.k {
        insert_linear(&mut map, &format!("head.aux{k}"), gaussian(&mut rng, w, p, he(w)));
    }
    insert_linear(&mut map, "head.skip", Tensor::zeros(&[w, p]));
    if c.k > 0 {
        insert_linear(&mut map, "eam.L1", gaussian(&mut rng, d + w, EAM_HIDDEN, he(d + w)));
        insert_linear(&mut map, "eam.L2", Tensor::zeros(&[EAM_HIDDEN, c.k]));
    }
    map
}

impl Denoiser {
    /// Fresh parameters drawn from `seed`.
    pub fn init(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let map = fresh_params(&config, seed);
        Self::from_params(config, ParamStore::new(map))
    }

    /// Wraps an existing parameter set, checking every tensor name and shape.
    pub fn from_params(config: DenoiserConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let expected: BTreeMap<String, Vec<usize>> = fresh_params(&config, 0)
            .into_iter()
            .map(|(k, v)| (k, v.dims().to_vec()))
            .collect();
        for (name, dims) in &expected {
            let t = params
                .get(name)
                .map_err(|_| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if t.dims() != dims.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has dims {:?}, expected {dims:?}",
                    t.dims()
                )));
            }
        }
        if let Some(extra) = params.names().iter().find(|n| !expected.contains_key(*n)) {
            return Err(Error::Checkpoint(format!("unexpected tensor `{extra}`")));
        }
        let lin = |name: &str| -> Result<Linear> {
            Ok(Linear {
                w: params.id(name)?,
                b: params.id(&format!("{name}.bias"))?,
            })
        };
        let blocks = (0..config.blocks)
            .map(|b| {
                Ok(Block {
                    q: params.id(&format!("block{b}.q"))?,
                    wk: params.id(&format!("block{b}.Wk"))?,
                    wv: params.id(&format!("block{b}.Wv"))?,
                    l1: lin(&format!("block{b}.W1"))?,
                    l2: lin(&format!("block{b}.W2"))?,
                })
            })
            .collect::<Result<_>>()?;
        let ids = Ids {
            trunk_in: lin("trunk.in")?,
            temb: lin("temb.proj")?,
            blocks,
            base: lin("head.base")?,
            aux: (0..config.k).map(|k| lin(&format!("head.aux{k}"))).collect::<Result<_>>()?,
            skip: lin("head.skip")?,
            eam: if config.k > 0 {
                Some(Eam {
                    l1: lin("eam.L1")?,
                    l2: lin("eam.L2")?,
                })
            } else {
                None
            },
        };
        let cond = Conditioner::new(&params, &config.modalities, config.surrogates, config.side, config.d)?;
        Ok(Self {
            config,
            params,
            cond,
            ids,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn conditioner(&self) -> &Conditioner {
        &self.cond
    }

    /// Records a forward pass on `g`. The graph may borrow any store with the
    /// same tensor names as [`Self::params`], such as a perturbed copy.
    pub fn forward(&self, g: &mut Graph<'_>, x_t: &[f64], t: usize, cs: &ConditionSet) -> Result<ForwardVars> {
        let c = &self.config;
        if g.params().names() != self.params.names() {
            return Err(Error::InvalidArgument("graph parameters do not match this model".into()));
        }
        if t < 1 || t > c.timesteps {
            return Err(Error::InvalidArgument(format!("timestep {t} outside 1..={}", c.timesteps)));
        }
        if x_t.len() != c.pixels() {
            return Err(Error::InvalidArgument(format!(
                "x_t has {} values, expected {}",
                x_t.len(),
                c.pixels()
            )));
        }
        let ids = &self.ids;
        let seq = self.cond.fuse(g, cs)?;
        let tokens = seq.tokens;

        let x = g.constant(Tensor::row(x_t.to_vec())?);
        let temb = g.constant(Tensor::row(time_embedding(t, c.t_emb_dim, c.timesteps))?);
        let temb = ids.temb.apply(g, temb)?;
        let mut h = ids.trunk_in.apply(g, x)?;
        let inv_sqrt_d = 1.0 / (c.d as f64).sqrt();
        for blk in &ids.blocks {
            // scores = C·(Wk·q)/√d over tokens, ctx = (aᵀ·C)·Wv
            let wk = g.param(blk.wk);
            let q = g.param(blk.q);
            let kq = g.matmul(wk, q)?;
            let s = g.matmul(tokens, kq)?;
            let s = g.scale(s, inv_sqrt_d)?;
            let a = g.softmax(s, Axis::Rows)?;
            let at = g.transpose(a)?;
            let pooled = g.matmul(at, tokens)?;
            let wv = g.param(blk.wv);
            let ctx = g.matmul(pooled, wv)?;

            let z = g.concat(&[h, temb, ctx], Axis::Cols)?;
            let z = blk.l1.apply(g, z)?;
            let z = g.silu(z)?;
            let z = blk.l2.apply(g, z)?;
            h = g.add(h, z)?;
        }
        let f_u = h;

        let gate = ids.skip.apply(g, temb)?;
        let skip = g.mul(gate, x)?;
        let head = |g: &mut Graph<'_>, lin: &Linear| -> Result<Var> {
            let y = lin.apply(g, f_u)?;
            g.add(y, skip)
        };
        let n_b = head(g, &ids.base)?;
        let n_k = ids.aux.iter().map(|l| head(g, l)).collect::<Result<Vec<_>>>()?;

        let (w, eps) = match &ids.eam {
            None => (None, n_b),
            Some(eam) => {
                let pooled = g.mean(tokens, Axis::Rows)?;
                let z = g.concat(&[pooled, f_u], Axis::Cols)?;
                let z = eam.l1.apply(g, z)?;
                let z = g.silu(z)?;
                let z = eam.l2.apply(g, z)?;
                let s = g.sigmoid(z)?;
                let w = g.scale(s, 2.0)?;
                let diffs = n_k.iter().map(|&nk| g.sub(nk, n_b)).collect::<Result<Vec<_>>>()?;
                let diffs = g.concat(&diffs, Axis::Rows)?;
                let mix = g.matmul(w, diffs)?;
                let mix = g.scale(mix, 1.0 / c.k as f64)?;
                (Some(w), g.add(n_b, mix)?)
            }
        };
        Ok(ForwardVars {
            n_b,
            n_k,
            w,
            eps,
            f_u,
            tokens,
        })
    }

    /// Forward pass returning plain values.
    pub fn predict(&self, x_t: &[f64], t: usize, cs: &ConditionSet) -> Result<DenoiserOutput> {
        let mut g = Graph::new(&self.params);
        let v = self.forward(&mut g, x_t, t, cs)?;
        let data = |g: &Graph<'_>, v: Var| g.value(v).data().to_vec();
        Ok(DenoiserOutput {
            n_b: data(&g, v.n_b),
            n_k: v.n_k.iter().map(|&n| data(&g, n)).collect(),
            w: v.w.map(|w| data(&g, w)).unwrap_or_default(),
            eps: data(&g, v.eps),
            f_u: data(&g, v.f_u),
        })
    }

    /// Noise prediction only.
    pub fn eps(&self, x_t: &[f64], t: usize, cs: &ConditionSet) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let v = self.forward(&mut g, x_t, t, cs)?;
        Ok(g.value(v.eps).data().to_vec())
    }

    /// Records the squared-error training loss for one sample.
    pub fn loss(&self, g: &mut Graph<'_>, x_t: &[f64], t: usize, cs: &ConditionSet, eps: &[f64]) -> Result<Var> {
        let v = self.forward(g, x_t, t, cs)?;
        g.squared_error(v.eps, Tensor::row(eps.to_vec())?)
    }
}
