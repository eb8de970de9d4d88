mod common;

use common::phantoms::{ball, ellipsoid, naive_first_order, random_blob, random_phantom};
use common::rng;
use proptest::prelude::*;
use radmi::hcr::{compute_first_order, compute_shape_features, extract_hcr, HcrScaler, HCR_NAMES, N_HCR};
use radmi::volume::{resample_mask, Interpolation, Mask, MaskedVolume, Volume};

#[test]
fn first_order_matches_naive_reference_on_random_phantoms() {
    let mut r = rng(2024);
    for case in 0..20 {
        let mv = random_phantom(&mut r);
        let values: Vec<f64> = mv
            .volume
            .voxels()
            .iter()
            .zip(mv.mask.voxels())
            .filter(|(_, &m)| m == 1)
            .map(|(&v, _)| v as f64)
            .collect();
        let sp = mv.spacing();
        let want = naive_first_order(&values, sp[0] * sp[1] * sp[2], 0.1);
        let got = compute_first_order(&mv, 0.1).unwrap().to_array();
        for (i, (g, w)) in got.iter().zip(&want).enumerate() {
            let rel = (g - w).abs() / w.abs().max(1e-12);
            assert!(rel <= 1e-5 || (g - w).abs() <= 1e-12, "case {case}, {}: {g} vs {w}", HCR_NAMES[14 + i]);
        }
    }
}

#[test]
fn ellipsoid_major_axis_matches_second_moment() {
    let f = compute_shape_features(&ellipsoid([20.0, 10.0, 5.0], [1.0; 3])).unwrap();
    let want = 4.0 * 20.0 / 5f64.sqrt();
    assert!((f.major_axis - want).abs() / want < 0.02, "{} vs {want}", f.major_axis);
    let minor = 4.0 * 10.0 / 5f64.sqrt();
    assert!((f.minor_axis - minor).abs() / minor < 0.02, "{} vs {minor}", f.minor_axis);
    assert!(f.major_axis >= f.minor_axis && f.minor_axis >= f.least_axis);
}

#[test]
fn cube_sphericity_reaches_the_closed_form() {
    let want = (36.0 * std::f64::consts::PI).powf(1.0 / 3.0) / 6.0;
    for side in [32usize, 40] {
        let m = Mask::from_fn([side + 2; 3], [1.0; 3], |x, y, z| {
            [x, y, z].iter().all(|&c| (1..=side).contains(&c))
        })
        .unwrap();
        let f = compute_shape_features(&m).unwrap();
        assert!((f.sphericity - want).abs() / want < 0.02, "side {side}: {}", f.sphericity);
    }
}

#[test]
fn ball_sphericity_grows_with_radius_and_stays_round() {
    let radii = [5.0, 10.0, 20.0, 40.0];
    let f: Vec<_> = radii.iter().map(|&r| compute_shape_features(&ball(r)).unwrap()).collect();
    for w in f.windows(2) {
        assert!(w[1].sphericity + 0.01 >= w[0].sphericity);
    }
    let r20 = &f[2];
    assert!((r20.elongation - 1.0).abs() < 0.02 && (r20.flatness - 1.0).abs() < 0.02);
    assert!(f.iter().all(|s| s.sphericity > 0.0 && s.sphericity <= 1.05));
}

#[test]
fn anisotropic_spacing_keeps_axis_lengths() {
    for semi in [[18.0, 11.0, 7.0], [9.0, 14.0, 12.0]] {
        let aniso = ellipsoid(semi, [1.0, 1.0, 2.0]);
        let iso = resample_mask(&aniso, [1.0; 3], Interpolation::Nearest).unwrap();
        let a = compute_shape_features(&aniso).unwrap();
        let b = compute_shape_features(&iso).unwrap();
        for (x, y) in [(a.major_axis, b.major_axis), (a.minor_axis, b.minor_axis), (a.least_axis, b.least_axis)] {
            assert!((x - y).abs() / y < 0.03, "{semi:?}: {x} vs {y}");
        }
    }
}

#[test]
fn mesh_volume_tracks_voxel_volume_for_large_blobs() {
    let mut r = rng(5);
    let mut checked = 0;
    while checked < 10 {
        let m = random_blob(&mut r, [30, 26, 22], [1.0, 0.8, 1.5], 3);
        if m.count() < 1000 {
            continue;
        }
        let f = compute_shape_features(&m).unwrap();
        assert!((f.mesh_volume - f.voxel_volume).abs() / f.voxel_volume < 0.05);
        checked += 1;
    }
}

fn shifted(mv: &MaskedVolume, shift: [usize; 3]) -> MaskedVolume {
    let d = mv.dims();
    let nd = [d[0] + shift[0] + 1, d[1] + shift[1], d[2] + shift[2] + 2];
    let sp = mv.spacing();
    let inside = |x: usize, y: usize, z: usize| {
        x >= shift[0] && y >= shift[1] && z >= shift[2] && x - shift[0] < d[0] && y - shift[1] < d[1] && z - shift[2] < d[2]
    };
    let mask = Mask::from_fn(nd, sp, |x, y, z| inside(x, y, z) && mv.mask.get(x - shift[0], y - shift[1], z - shift[2])).unwrap();
    let mut vox = vec![-7.5f32; nd.iter().product()];
    for z in 0..nd[2] {
        for y in 0..nd[1] {
            for x in 0..nd[0] {
                if inside(x, y, z) {
                    vox[radmi::volume::flat_index(nd, x, y, z)] = mv.volume.get(x - shift[0], y - shift[1], z - shift[2]);
                }
            }
        }
    }
    MaskedVolume::new(Volume::new(nd, sp, vox).unwrap(), mask).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn all_features_are_translation_invariant(seed in 0u64..10_000, sx in 0usize..5, sy in 0usize..5, sz in 0usize..5) {
        let mv = random_phantom(&mut rng(seed));
        let a = extract_hcr(&mv, 0.1).unwrap();
        let b = extract_hcr(&shifted(&mv, [sx, sy, sz]), 0.1).unwrap();
        prop_assert_eq!(a.values, b.values);
    }

    #[test]
    fn shape_ignores_intensity(seed in 0u64..10_000) {
        let mv = random_phantom(&mut rng(seed));
        let a = compute_shape_features(&mv.mask).unwrap();
        let other = mv.volume.map(|v| 3.0 * v - 1.0).unwrap();
        let b = compute_shape_features(&MaskedVolume::new(other, mv.mask.clone()).unwrap().mask).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn phantom_vector_has_32_finite_values() {
    let mv = random_phantom(&mut rng(1));
    let h = extract_hcr(&mv, 0.1).unwrap();
    assert_eq!(h.values.len(), N_HCR);
    assert!(h.values.iter().all(|v| v.is_finite()));
}

#[test]
fn scaler_fit_on_train_applies_to_held_out() {
    let mut r = rng(8);
    let rows: Vec<Vec<f64>> = (0..30)
        .map(|_| extract_hcr(&random_phantom(&mut r), 0.1).unwrap().values)
        .collect();
    let (train, test) = rows.split_at(20);
    let scaler = HcrScaler::fit(train, &HCR_NAMES).unwrap();
    let scaled = scaler.apply_all(train).unwrap();
    for j in 0..N_HCR {
        let col: Vec<f64> = scaled.iter().map(|r| r[j]).collect();
        let m = col.iter().sum::<f64>() / col.len() as f64;
        let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
        assert!(m.abs() < 1e-9, "{}: mean {m}", HCR_NAMES[j]);
        assert!((sd - 1.0).abs() < 1e-9, "{}: std {sd}", HCR_NAMES[j]);
    }
    let held = scaler.apply_all(test).unwrap();
    assert!(held.iter().flatten().all(|v| v.is_finite()));
    // no clamping: a held-out row maps back exactly
    for (raw, s) in test.iter().zip(&held) {
        for j in 0..N_HCR {
            let back = s[j] * scaler.std[j] + scaler.mean[j];
            assert!((back - raw[j]).abs() <= 1e-9 * raw[j].abs().max(1.0));
        }
    }
}
