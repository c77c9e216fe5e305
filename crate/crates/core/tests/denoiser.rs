use mmface::conditioning::SurrogateMode;
use mmface::denoiser::{eam_combine, time_embedding, Denoiser, DenoiserConfig, EAM_HIDDEN};
use mmface::facegen::{derive_conditions, sample_params, ConditionSet, Modality, ATTR_BITS, NUM_CLASSES};
use mmface::numerics::ParamStore;
use mmface::trainer::Variant;
use proptest::prelude::*;

/// Scalar count written out layer by layer.
fn expected_params(c: &DenoiserConfig) -> usize {
    let (p, w, d) = (c.pixels(), c.width, c.d);
    let patch = (c.side / 4) * (c.side / 4);
    let mut n = 0;
    for m in &c.modalities {
        let (tokens, width) = match m {
            Modality::Mask => (16, patch * NUM_CLASSES),
            Modality::Sketch => (16, patch),
            Modality::Attr => (1, ATTR_BITS),
            Modality::LowRes => (patch, 1),
        };
        n += tokens * width * d + tokens * d;
        if c.surrogates != SurrogateMode::None {
            n += d;
        }
    }
    n += p * w + w + c.t_emb_dim * w + w;
    n += c.blocks * (d + 2 * d * d + (2 * w + d) * w + w + w * w + w);
    n += (2 + c.k) * (w * p + p);
    if c.k > 0 {
        n += (d + w) * EAM_HIDDEN + EAM_HIDDEN + EAM_HIDDEN * c.k + c.k;
    }
    n
}

fn count(v: Variant, base: &DenoiserConfig) -> usize {
    Denoiser::init(v.model_config(base), 0).unwrap().params().scalar_count()
}

#[test]
fn parameter_counts_match_the_layer_layout() {
    let desk = DenoiserConfig::desk();
    assert_eq!(count(Variant::M3Full, &desk), 469_696);
    assert_eq!(count(Variant::M2DecorOnly, &desk), 469_696);
    assert_eq!(count(Variant::M4MultiNoSurr, &desk), 469_440);
    assert_eq!(count(Variant::M6FullEam, &desk), 581_315);
    assert_eq!(count(Variant::M6FullEam, &DenoiserConfig::micro()), 74_283);
    for v in [Variant::M3Full, Variant::M6FullEam, Variant::M4MultiNoSurr, Variant::UniSingle(Modality::Sketch)] {
        for base in [DenoiserConfig::desk(), DenoiserConfig::micro()] {
            let c = v.model_config(&base);
            assert_eq!(count(v, &base), expected_params(&c), "{v}");
        }
    }
}

#[test]
fn from_params_rejects_missing_and_misshapen_tensors() {
    let c = DenoiserConfig::micro();
    let m = Denoiser::init(c.clone(), 1).unwrap();
    let mut map: std::collections::BTreeMap<_, _> = m.params().iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    assert!(Denoiser::from_params(c.clone(), ParamStore::new(map.clone())).is_ok());
    let skip = map.remove("head.skip").unwrap();
    assert!(Denoiser::from_params(c.clone(), ParamStore::new(map.clone())).is_err());
    map.insert("head.skip".into(), skip.reshape(vec![1, 32 * 256]).unwrap());
    assert!(Denoiser::from_params(c, ParamStore::new(map)).is_err());
}

#[test]
fn predictions_are_deterministic_and_shaped() {
    let m = Denoiser::init(DenoiserConfig::micro(), 5).unwrap();
    let cs = derive_conditions(&sample_params(9).unwrap(), 16);
    let x: Vec<f64> = (0..256).map(|i| ((i * 37) % 17) as f64 / 8.0 - 1.0).collect();
    let a = m.predict(&x, 40, &cs).unwrap();
    let b = m.predict(&x, 40, &cs).unwrap();
    assert_eq!(a.eps, b.eps);
    assert_eq!(a.eps.len(), 256);
    assert_eq!(a.n_k.len(), 3);
    assert_eq!(a.w.len(), 3);
    let recombined = eam_combine(&a.n_b, &a.n_k, &a.w).unwrap();
    for (r, e) in recombined.iter().zip(&a.eps) {
        assert!((r - e).abs() < 1e-12);
    }
    let u = m.eps(&x, 40, &ConditionSet::empty(16)).unwrap();
    assert_ne!(u, a.eps);
    assert!(m.eps(&x, 0, &cs).is_err());
    assert!(m.eps(&x, 201, &cs).is_err());
    assert!(m.eps(&x[..255], 40, &cs).is_err());
}

proptest! {
    #[test]
    fn time_embeddings_are_unit_pairs(t in 1usize..=200, half in 1usize..33) {
        let e = time_embedding(t, 2 * half, 200);
        for i in 0..half {
            prop_assert!((e[i] * e[i] + e[half + i] * e[half + i] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn eam_is_affine_in_each_map(
        b in prop::collection::vec(-3.0f64..3.0, 5),
        n in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 5), 1..5),
        shift in -2.0f64..2.0,
    ) {
        let k = n.len();
        let w = vec![1.0; k];
        let out = eam_combine(&b, &n, &w).unwrap();
        let mean: Vec<f64> = (0..5).map(|j| n.iter().map(|m| m[j]).sum::<f64>() / k as f64).collect();
        for j in 0..5 {
            prop_assert!((out[j] - mean[j]).abs() < 1e-12);
        }
        let moved: Vec<Vec<f64>> = n.iter().map(|m| m.iter().map(|v| v + shift).collect()).collect();
        let bm: Vec<f64> = b.iter().map(|v| v + shift).collect();
        let out2 = eam_combine(&bm, &moved, &vec![0.7; k]).unwrap();
        let out3 = eam_combine(&b, &n, &vec![0.7; k]).unwrap();
        for j in 0..5 {
            prop_assert!((out2[j] - out3[j] - shift).abs() < 1e-12);
        }
    }
}
