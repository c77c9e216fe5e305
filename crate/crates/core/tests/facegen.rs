use mmface::facegen::*;

#[test]
fn ten_thousand_draws_stay_in_range_with_low_rejection() {
    let mut tries = 0;
    let mut lo = [f64::INFINITY; NUM_FIELDS];
    let mut hi = [f64::NEG_INFINITY; NUM_FIELDS];
    for s in 0..10_000 {
        let (p, n) = sample_params_counted(s).unwrap();
        tries += n;
        assert!(p.is_valid());
        for (f, v) in p.to_array().into_iter().enumerate() {
            lo[f] = lo[f].min(v);
            hi[f] = hi[f].max(v);
        }
    }
    for (f, (_, a, b)) in FIELD_RANGES.iter().enumerate() {
        assert!(lo[f] >= *a && hi[f] <= *b, "field {f}: [{}, {}]", lo[f], hi[f]);
    }
    assert_eq!(tries, 10_544);
    assert!(1.0 - 10_000.0 / (tries as f64) < 0.5);
}

#[test]
fn mask_histogram_golden() {
    let m = mask(&sample_params(0).unwrap(), 16);
    let mut h = [0; NUM_CLASSES];
    for c in m {
        h[c as usize] += 1;
    }
    assert_eq!(h, [92, 76, 8, 8, 72]);
}

#[test]
fn lattice_points_invert_exactly() {
    let opts = InvertOptions::default();
    let mut checked = 0;
    for s in 0..5u64 {
        let mut a = [0.0; NUM_FIELDS];
        for (f, v) in a.iter_mut().enumerate() {
            *v = lattice_value(f, ((s as usize) + f) % opts.points, &opts);
        }
        let p = FaceParams::from_array(a);
        if !p.is_valid() {
            continue;
        }
        let (q, residual) = invert_params_with_residual(&render(&p, 16), &opts);
        assert_eq!(residual, 0.0);
        assert_eq!(render(&q, 16), render(&p, 16));
        checked += 1;
    }
    assert!(checked >= 3, "only {checked} lattice faces were valid");
}

fn attr_agreement(side: usize) -> f64 {
    let mut agree = 0;
    for s in 0..200 {
        let p = sample_params(s).unwrap();
        let q = invert_params(&render(&p, side));
        agree += p.attributes().iter().zip(q.attributes()).filter(|(a, b)| **a == *b).count();
    }
    agree as f64 / (200 * ATTR_BITS) as f64
}

#[test]
fn recovered_attributes_agree_at_32() {
    assert!(attr_agreement(32) >= 0.95);
}

#[test]
fn recovered_attributes_agree_at_16() {
    // sub-pixel attribute thresholds blur at the smaller side
    assert!(attr_agreement(16) >= 0.90);
}

#[test]
fn inversion_error_bounds_at_16() {
    // worst absolute error over 100 seeds, in finest-lattice steps
    let bounds = [1.02, 2.69, 3.74, 5.27, 7.63, 6.92, 8.73, 15.36, 2.0, 13.42, 3.56];
    let opts = InvertOptions::default();
    for s in 0..100 {
        let p = sample_params(s).unwrap();
        let q = invert_params(&render(&p, 16));
        for (f, (a, b)) in p.to_array().into_iter().zip(q.to_array()).enumerate() {
            let e = (a - b).abs() / lattice_step(f, opts.refinements, &opts);
            assert!(e <= bounds[f], "seed {s} field {f}: {e}");
        }
    }
}

#[test]
fn conditions_are_deterministic_and_well_formed() {
    for s in [0, 17, 99] {
        let p = sample_params(s).unwrap();
        for side in SUPPORTED_SIDES {
            let a = derive_conditions(&p, side);
            assert_eq!(a, derive_conditions(&sample_params(s).unwrap(), side));
            a.validate().unwrap();
            assert_eq!(a.active(), Modality::ALL.to_vec());
        }
    }
}
