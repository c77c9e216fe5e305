//! Oracle inversion: recover [`FaceParams`] from an image by lattice search.
//!
//! Each field lives on a lattice of `points` values spanning its range. The
//! search is coordinate descent over lattice moves, minimising pixel L2 to
//! the rendered candidate. Each refinement halves the lattice step around
//! the current best. Coordinates are integer lattice indices so that
//! lattice points are reproduced bit-exactly.

use super::{render, FaceParams, Image, FIELD_RANGES, NUM_FIELDS};

#[derive(Clone, Copy, Debug)]
pub struct InvertOptions {
    /// Lattice points per field at the coarsest level.
    pub points: usize,
    pub refinements: usize,
    pub max_sweeps: usize,
    /// Independent coarse-level descents; the lowest residual wins.
    pub starts: usize,
}

impl Default for InvertOptions {
    fn default() -> Self {
        Self {
            points: 5,
            refinements: 2,
            max_sweeps: 30,
            starts: 8,
        }
    }
}

/// Lattice spacing of `field` at refinement `level` (0 = coarsest).
pub fn lattice_step(field: usize, level: usize, opts: &InvertOptions) -> f64 {
    let (_, lo, hi) = FIELD_RANGES[field];
    (hi - lo) / (opts.points - 1) as f64 / (1u64 << level) as f64
}

fn value_at(field: usize, idx: i64, level: usize, opts: &InvertOptions) -> f64 {
    let (_, lo, hi) = FIELD_RANGES[field];
    let max_idx = ((opts.points - 1) << level) as f64;
    (lo + (hi - lo) * (idx as f64 / max_idx)).min(hi)
}

/// The coarse-lattice value `k` of `field`, `k ∈ 0..points`.
pub fn lattice_value(field: usize, k: usize, opts: &InvertOptions) -> f64 {
    value_at(field, k as i64, 0, opts)
}

fn params_at(idx: &[i64; NUM_FIELDS], level: usize, opts: &InvertOptions) -> FaceParams {
    let mut a = [0.0; NUM_FIELDS];
    for (f, v) in a.iter_mut().enumerate() {
        *v = value_at(f, idx[f], level, opts);
    }
    FaceParams::from_array(a)
}

fn sse(a: &Image, b: &Image) -> f64 {
    a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn descend(img: &Image, idx: &mut [i64; NUM_FIELDS], best: &mut f64, level: usize, opts: &InvertOptions) {
    let top = (opts.points - 1) as i64;
    let max_idx = top << level;
    let moves: Vec<i64> = if level == 0 {
        (-top..=top).filter(|&m| m != 0).collect()
    } else {
        vec![-2, -1, 1, 2]
    };
    for _ in 0..opts.max_sweeps {
        let mut improved = false;
        for f in 0..NUM_FIELDS {
            let mut field_best = None;
            for &m in &moves {
                let cand_i = idx[f] + m;
                if !(0..=max_idx).contains(&cand_i) {
                    continue;
                }
                let mut cand = *idx;
                cand[f] = cand_i;
                let p = params_at(&cand, level, opts);
                if !p.is_valid() {
                    continue;
                }
                let err = sse(&render(&p, img.side), img);
                if err < *best {
                    *best = err;
                    field_best = Some(cand_i);
                }
            }
            if let Some(i) = field_best {
                idx[f] = i;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
}

/// Best lattice candidate and its squared pixel residual.
pub fn invert_params_with_residual(img: &Image, opts: &InvertOptions) -> (FaceParams, f64) {
    let top = (opts.points - 1) as i64;
    let mut winner: Option<([i64; NUM_FIELDS], f64)> = None;
    for start in coarse_starts(opts) {
        let mut idx = start;
        let mut best = sse(&render(&params_at(&idx, 0, opts), img.side), img);
        descend(img, &mut idx, &mut best, 0, opts);
        if winner.is_none_or(|(_, b)| best < b) {
            winner = Some((idx, best));
        }
    }
    let (mut idx, mut best) = winner.unwrap_or(([top / 2; NUM_FIELDS], f64::INFINITY));
    for level in 1..=opts.refinements {
        idx.iter_mut().for_each(|i| *i *= 2);
        descend(img, &mut idx, &mut best, level, opts);
    }
    (params_at(&idx, opts.refinements, opts), best)
}

/// Deterministic valid starting points on the coarse lattice; the centre comes first.
fn coarse_starts(opts: &InvertOptions) -> Vec<[i64; NUM_FIELDS]> {
    let top = (opts.points - 1) as i64;
    let mut starts = vec![[top / 2; NUM_FIELDS]];
    let mut state: u64 = 0x9e37_79b9_7f4a_7c15;
    while starts.len() < opts.starts {
        let mut idx = [0; NUM_FIELDS];
        for i in idx.iter_mut() {
            // splitmix64
            state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            *i = ((z ^ (z >> 31)) % (top as u64 + 1)) as i64;
        }
        if params_at(&idx, 0, opts).is_valid() {
            starts.push(idx);
        }
    }
    starts
}

pub fn invert_params(img: &Image) -> FaceParams {
    invert_params_with_residual(img, &InvertOptions::default()).0
}
