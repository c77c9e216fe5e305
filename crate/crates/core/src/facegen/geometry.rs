use super::{FaceParams, Image};

/// Semantic classes with their mask indices. Painting order is
/// background, hair, skin, eyes, mouth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Class {
    Background = 0,
    Skin = 1,
    Eye = 2,
    Mouth = 3,
    Hair = 4,
}

pub const EYE_INTENSITY: f64 = 0.05;
pub const MOUTH_INTENSITY: f64 = 0.15;

// Eye centres sit this fraction of the radius above the face centre.
const EYE_RISE: f64 = 0.3;
// Mouth corners sit this fraction of the radius below the face centre.
const MOUTH_DROP: f64 = 0.45;
// Sag of the mouth centre relative to its corners, per unit kappa, in mouth half-widths.
const MOUTH_SAG: f64 = 0.35;
const MOUTH_HALF_THICKNESS: f64 = 0.05;

fn mouth_curve_y(p: &FaceParams, dx: f64) -> f64 {
    let u = dx / p.mouth_w;
    p.cy + MOUTH_DROP * p.r + p.kappa * MOUTH_SAG * p.mouth_w * (1.0 - u * u)
}

/// Class at a point given in fractions of the image side (`x` right, `y` down).
pub(crate) fn class_at(p: &FaceParams, x: f64, y: f64) -> Class {
    let dx = x - p.cx;
    let dy = y - p.cy;
    if dx.abs() <= p.mouth_w && (y - mouth_curve_y(p, dx)).abs() <= MOUTH_HALF_THICKNESS {
        return Class::Mouth;
    }
    let ey = dy + EYE_RISE * p.r;
    let er2 = p.eye_r * p.eye_r;
    if (dx - p.eye_dx).powi(2) + ey * ey <= er2 || (dx + p.eye_dx).powi(2) + ey * ey <= er2 {
        return Class::Eye;
    }
    let d2 = dx * dx + dy * dy;
    if d2 <= p.r * p.r {
        return Class::Skin;
    }
    let outer = p.r + p.hair_h;
    if dy < 0.0 && d2 <= outer * outer {
        return Class::Hair;
    }
    Class::Background
}

fn intensity(p: &FaceParams, c: Class) -> f64 {
    match c {
        Class::Background => p.g_bg,
        Class::Hair => p.g_hair,
        Class::Skin => p.g_skin,
        Class::Eye => EYE_INTENSITY,
        Class::Mouth => MOUTH_INTENSITY,
    }
}

/// Eyes and mouth strictly inside the face disc, eyes not touching each other.
pub(crate) fn features_inside(p: &FaceParams) -> bool {
    let eye_reach = (p.eye_dx.powi(2) + (EYE_RISE * p.r).powi(2)).sqrt() + p.eye_r;
    if eye_reach >= p.r || p.eye_dx <= p.eye_r {
        return false;
    }
    (0..=10).all(|i| {
        let dx = p.mouth_w * (i as f64 / 5.0 - 1.0);
        let dy = mouth_curve_y(p, dx) - p.cy;
        (dx * dx + dy * dy).sqrt() + MOUTH_HALF_THICKNESS < p.r
    })
}

/// Renders with a 2×2 supersample per pixel, mapped to `[-1, 1]` via `2g − 1`.
pub fn render(p: &FaceParams, side: usize) -> Image {
    let s = side as f64;
    let mut pixels = Vec::with_capacity(side * side);
    for row in 0..side {
        for col in 0..side {
            let mut acc = 0.0;
            for (oy, ox) in [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)] {
                let c = class_at(p, (col as f64 + ox) / s, (row as f64 + oy) / s);
                acc += intensity(p, c);
            }
            pixels.push(2.0 * (acc / 4.0) - 1.0);
        }
    }
    Image { side, pixels }
}

/// Class map sampled once at each pixel centre.
pub fn mask(p: &FaceParams, side: usize) -> Vec<u8> {
    let s = side as f64;
    let mut out = Vec::with_capacity(side * side);
    for row in 0..side {
        for col in 0..side {
            out.push(class_at(p, (col as f64 + 0.5) / s, (row as f64 + 0.5) / s) as u8);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::facegen::{sample_params, FIELD_RANGES};

    #[test]
    fn far_corner_is_background() {
        let mut p = sample_params(11).unwrap();
        p.g_bg = 0.0;
        let img = render(&p, 16);
        let row = if p.cy < 0.5 { 15 } else { 0 };
        let col = if p.cx < 0.5 { 15 } else { 0 };
        assert_eq!(img.at(row, col), -1.0);
    }

    #[test]
    fn centre_pixel_is_skin() {
        for seed in 0..20 {
            let mut p = sample_params(seed).unwrap();
            p.cx = 0.5 + 0.5 / 16.0;
            p.cy = 0.5 + 0.5 / 16.0;
            if !p.is_valid() {
                continue;
            }
            let img = render(&p, 16);
            let m = mask(&p, 16);
            if m[8 * 16 + 8] == Class::Skin as u8 {
                assert!((img.at(8, 8) - (2.0 * p.g_skin - 1.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mean_intensity_monotone_in_skin() {
        let mut p = sample_params(2).unwrap();
        let mut last = f64::NEG_INFINITY;
        for g in [0.35, 0.45, 0.55, 0.65, 0.85] {
            p.g_skin = g;
            let m = render(&p, 16).mean();
            assert!(m > last);
            last = m;
        }
    }

    #[test]
    fn skin_pixels_match_skin_intensity() {
        for seed in 0..50 {
            let p = sample_params(seed).unwrap();
            let img = render(&p, 16);
            let m = mask(&p, 16);
            for row in 1..15 {
                for col in 1..15 {
                    let c = m[row * 16 + col];
                    let boundary = (0..3)
                        .flat_map(|dr| (0..3).map(move |dc| (dr, dc)))
                        .any(|(dr, dc)| m[(row + dr - 1) * 16 + col + dc - 1] != c);
                    if c == Class::Skin as u8 && !boundary {
                        assert!((img.at(row, col) - (2.0 * p.g_skin - 1.0)).abs() <= 0.5, "seed {seed} at ({row},{col})");
                    }
                }
            }
        }
    }

    #[test]
    fn range_corners_respect_validity() {
        // The centre of every range is a valid face.
        let mid: Vec<f64> = FIELD_RANGES.iter().map(|(_, lo, hi)| 0.5 * (lo + hi)).collect();
        let p = FaceParams::from_array(mid.try_into().unwrap());
        assert!(p.is_valid());
        let mut big = p;
        big.eye_dx = 0.16;
        big.eye_r = 0.08;
        big.r = 0.25;
        assert!(!big.is_valid());
    }
}
