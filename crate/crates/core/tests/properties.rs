use proptest::prelude::*;
use seacolor::attenuation::{attenuation_gradients, population_std};
use seacolor::backscatter::{backscatter_gradients, backscatter_loss, direct_signal, fit_backscatter};
use seacolor::domain::{AttenuationParams, BackscatterParams, FitState, Image, ParamSet, RangeMap, Raster};
use seacolor::eval::angular_error;
use seacolor::formation::{attenuation_map, backscatter_raw, cged, ged, synthesize};
use seacolor::io::{decode_pfm, encode_pfm, load_image, save_image, ImageFileSpec};
use seacolor::optim::AdamState;
use seacolor::{validate_pair, AdamConfig, AttenuationLossConfig, BackscatterLossConfig, BoundMode};

fn params12(lo: f64, hi: f64) -> impl Strategy<Value = [f64; 12]> {
    prop::array::uniform12(lo..hi)
}

fn finite() -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO
}

proptest! {
    #[test]
    fn ged_and_cged_partition_unity(x in -50.0..50.0f64) {
        let g = ged(x);
        prop_assert!((0.0..=1.0).contains(&g));
        prop_assert!((g + cged(x) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn backscatter_grows_with_range_without_residual(
        gamma in 0.0..2.0f64, beta in 0.0..3.0f64, z1 in 0.01..20.0f64, dz in 0.0..20.0f64
    ) {
        let p = BackscatterParams::new([gamma; 3], [beta; 3], [0.0; 3], [1.0; 3]).unwrap();
        let range = RangeMap::new(2, 1, vec![z1, z1 + dz]).unwrap();
        let b = backscatter_raw(&p, &range);
        prop_assert!(b.pixels()[0][0] <= b.pixels()[1][0]);
        prop_assert!(b.pixels()[1][0] <= gamma);
    }

    #[test]
    fn attenuation_is_a_fraction(p in params12(0.0, 3.0), z in 0.001..30.0f64) {
        let at = AttenuationParams::from_flat_projected(p);
        let a = attenuation_map(&at, &RangeMap::new(1, 1, vec![z]).unwrap());
        for c in 0..3 {
            prop_assert!(a.pixels()[0][c] > 0.0 && a.pixels()[0][c] <= 1.0);
        }
    }

    #[test]
    fn backscatter_loss_is_nonnegative_and_monotone_in_k(
        d in prop::collection::vec(prop::array::uniform3(-1.0..1.0f64), 1..40),
        k in 1.5..1e4f64, extra in 0.1..100.0f64
    ) {
        let dhat = Raster::from_vec(d.len(), 1, d.clone()).unwrap();
        let lo = backscatter_loss(&dhat, &BackscatterLossConfig { k, bound_mode: BoundMode::Clamp });
        let hi = backscatter_loss(&dhat, &BackscatterLossConfig { k: k + extra, bound_mode: BoundMode::Clamp });
        prop_assert!(lo >= 0.0);
        if d.iter().flatten().any(|v| *v < 0.0) {
            prop_assert!(hi > lo);
        } else {
            prop_assert_eq!(hi, lo);
        }
    }

    #[test]
    fn fitting_keeps_parameters_nonnegative(
        img in prop::collection::vec(prop::array::uniform3(0.0..1.0f64), 16),
        z in prop::collection::vec(0.1..10.0f64, 16),
        p in params12(0.0, 0.05),
    ) {
        let image = Image::new(4, 4, img).unwrap();
        let range = RangeMap::new(4, 4, z).unwrap();
        let pair = validate_pair(&image, &range).unwrap();
        let mut bs = BackscatterParams::from_flat_projected(p);
        let cfg = BackscatterLossConfig::default();
        let adam = AdamConfig { learning_rate: 0.1, ..AdamConfig::default() };
        for _ in 0..20 {
            bs = fit_backscatter(&pair, &bs, 1, &cfg, &adam).unwrap().params;
            prop_assert!(bs.to_flat().iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn invalid_pixels_do_not_matter(
        img in prop::collection::vec(prop::array::uniform3(0.0..1.0f64), 36),
        z in prop::collection::vec(0.1..10.0f64, 36),
        noise in prop::collection::vec(prop::array::uniform3(0.0..1.0f64), 36),
        bs in params12(0.01, 2.0), at in params12(0.01, 1.0),
    ) {
        let mut zs = z.clone();
        let mut perturbed_z = z;
        let mut perturbed_img = img.clone();
        for i in (0..36).step_by(5) {
            zs[i] = f64::NAN;
            perturbed_z[i] = if i % 2 == 0 { 0.0 } else { -3.0 };
            perturbed_img[i] = noise[i];
        }
        let a = (Image::new(6, 6, img).unwrap(), RangeMap::new(6, 6, zs).unwrap());
        let b = (Image::new(6, 6, perturbed_img).unwrap(), RangeMap::new(6, 6, perturbed_z).unwrap());
        let pa = validate_pair(&a.0, &a.1).unwrap();
        let pb = validate_pair(&b.0, &b.1).unwrap();
        let cfg = BackscatterLossConfig::default();
        let bs = BackscatterParams::from_flat_projected(bs);
        let ga = backscatter_gradients(&pa, &bs, &cfg);
        let gb = backscatter_gradients(&pb, &bs, &cfg);
        prop_assert_eq!(ga, gb);
        let at = AttenuationParams::from_flat_projected(at);
        let acfg = AttenuationLossConfig::default();
        let da = direct_signal(&pa, &bs, &cfg);
        let db = direct_signal(&pb, &bs, &cfg);
        prop_assert_eq!(
            attenuation_gradients(&pa, &da, &at, &acfg).unwrap(),
            attenuation_gradients(&pb, &db, &at, &acfg).unwrap()
        );
    }

    #[test]
    fn state_text_round_trips_exactly(
        bs in prop::array::uniform12(finite()), at in prop::array::uniform12(finite()),
        m in prop::array::uniform12(finite()), v in prop::array::uniform12(finite()), step in any::<u64>(),
    ) {
        let mut state = FitState::new(
            BackscatterParams::from_flat_projected(bs),
            AttenuationParams::from_flat_projected(at),
        );
        state.backscatter_opt = AdamState { m, v: v.map(f64::abs), step };
        state.attenuation_opt.step = step / 2;
        let back = FitState::from_text(&state.to_text()).unwrap();
        prop_assert_eq!(back, state);
    }

    #[test]
    fn pfm_round_trips_bit_exactly(
        w in 1usize..9, h in 1usize..9, seed in prop::collection::vec(any::<u32>(), 64)
    ) {
        let values: Vec<f32> = seed[..w * h].iter().map(|b| f32::from_bits(*b)).collect();
        let bytes = encode_pfm(w, h, &values);
        let (dw, dh, decoded) = decode_pfm(std::path::Path::new("mem.pfm"), &bytes).unwrap();
        prop_assert_eq!((dw, dh), (w, h));
        let same = values.iter().zip(&decoded).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }

    #[test]
    fn angular_error_ignores_scale_and_channel_order(
        rgb in prop::array::uniform3(0.0..1.0f64), s in 0.01..100.0f64
    ) {
        prop_assume!(rgb.iter().any(|v| *v > 1e-6));
        let base = angular_error(rgb).unwrap();
        prop_assert!((0.0..=90.0).contains(&base));
        prop_assert!((angular_error(rgb.map(|v| v * s)).unwrap() - base).abs() < 1e-9);
        prop_assert!((angular_error([rgb[2], rgb[0], rgb[1]]).unwrap() - base).abs() < 1e-9);
        prop_assert!((angular_error([rgb[1], rgb[0], rgb[2]]).unwrap() - base).abs() < 1e-9);
    }

    #[test]
    fn std_is_shift_invariant(values in prop::collection::vec(-10.0..10.0f64, 2..50), shift in -5.0..5.0f64) {
        let a = population_std(values.iter().copied());
        let b = population_std(values.iter().map(|v| v + shift));
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn formation_inverts_exactly(
        j in prop::collection::vec(prop::array::uniform3(0.0..1.0f64), 25),
        z in prop::collection::vec(0.1..8.0f64, 25),
        bs in params12(0.0, 0.3), at in params12(0.0, 0.3),
    ) {
        let truth = Image::new(5, 5, j.clone()).unwrap();
        let range = RangeMap::new(5, 5, z).unwrap();
        let pair = validate_pair(&truth, &range).unwrap();
        let bs = BackscatterParams::from_flat_projected(bs);
        let at = AttenuationParams::from_flat_projected(at);
        let captured = synthesize(&pair, &bs, &at);
        let b = backscatter_raw(&bs, &range);
        let a = attenuation_map(&at, &range);
        for i in 0..25 {
            for c in 0..3 {
                let unclamped = j[i][c] * a.pixels()[i][c] + b.pixels()[i][c];
                if unclamped < 1.0 && a.pixels()[i][c] > 1e-6 {
                    let back = (captured.pixels()[i][c] - b.pixels()[i][c]) / a.pixels()[i][c];
                    prop_assert!((back - j[i][c]).abs() < 1e-9);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn png16_round_trip_within_one_step(
        px in prop::collection::vec(prop::array::uniform3(0.0..=1.0f64), 12)
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = Image::new(4, 3, px).unwrap();
        let spec = ImageFileSpec::default();
        save_image(&img, &path, &spec).unwrap();
        let back: Image<f64> = load_image(&path, &spec).unwrap();
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            for c in 0..3 {
                prop_assert!((a[c] - b[c]).abs() <= 1.0 / 65535.0);
            }
        }
    }
}
