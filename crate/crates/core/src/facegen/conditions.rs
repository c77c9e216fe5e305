use super::geometry::mask;
use super::{render, ConditionSet, FaceParams, Image};

pub const ATTR_NAMES: [&str; 6] = ["smiling", "wide_face", "big_eyes", "long_hair", "bright_skin", "wide_mouth"];

/// Sobel magnitudes above this count as sketch edges.
pub const SKETCH_THRESHOLD: f64 = 0.25;

/// Binary edge map: unnormalised 3×3 Sobel magnitude above [`SKETCH_THRESHOLD`],
/// borders replicated.
pub fn sobel_edges(img: &Image) -> Vec<u8> {
    let s = img.side as isize;
    let px = |r: isize, c: isize| img.at(r.clamp(0, s - 1) as usize, c.clamp(0, s - 1) as usize);
    let mut out = Vec::with_capacity(img.pixels.len());
    for r in 0..s {
        for c in 0..s {
            let gx = (px(r - 1, c + 1) + 2.0 * px(r, c + 1) + px(r + 1, c + 1))
                - (px(r - 1, c - 1) + 2.0 * px(r, c - 1) + px(r + 1, c - 1));
            let gy = (px(r + 1, c - 1) + 2.0 * px(r + 1, c) + px(r + 1, c + 1))
                - (px(r - 1, c - 1) + 2.0 * px(r - 1, c) + px(r - 1, c + 1));
            out.push(((gx * gx + gy * gy).sqrt() > SKETCH_THRESHOLD) as u8);
        }
    }
    out
}

/// Mean over non-overlapping 4×4 blocks: `(side/4)²` values.
pub fn block_mean(img: &Image) -> Vec<f64> {
    let lo = img.side / 4;
    let mut out = vec![0.0; lo * lo];
    for r in 0..img.side {
        for c in 0..img.side {
            out[(r / 4) * lo + c / 4] += img.at(r, c) / 16.0;
        }
    }
    out
}

/// All four condition payloads for a face.
pub fn derive_conditions(p: &FaceParams, side: usize) -> ConditionSet {
    let img = render(p, side);
    ConditionSet {
        side,
        mask: Some(mask(p, side)),
        attr: Some(p.attributes()),
        sketch: Some(sobel_edges(&img)),
        lowres: Some(block_mean(&img)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::facegen::{sample_params, Modality};

    #[test]
    fn constant_image_has_no_edges() {
        assert!(sobel_edges(&Image::constant(16, 0.3)).iter().all(|&e| e == 0));
    }

    #[test]
    fn payload_dims() {
        let p = sample_params(9).unwrap();
        for side in [16, 32] {
            let cs = derive_conditions(&p, side);
            cs.validate().unwrap();
            assert_eq!(cs.active(), Modality::ALL.to_vec());
            assert_eq!(cs.lowres.as_ref().unwrap().len(), (side / 4) * (side / 4));
        }
    }

    #[test]
    fn conditions_deterministic_in_seed() {
        let a = derive_conditions(&sample_params(4).unwrap(), 16);
        let b = derive_conditions(&sample_params(4).unwrap(), 16);
        assert_eq!(a, b);
    }

    #[test]
    fn block_mean_of_constant() {
        let lr = block_mean(&Image::constant(16, -0.5));
        assert_eq!(lr.len(), 16);
        assert!(lr.iter().all(|&v| (v + 0.5).abs() < 1e-15));
    }
}
