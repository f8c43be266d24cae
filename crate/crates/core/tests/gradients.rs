//! Analytic gradients against central differences of an independently
//! written loss.

use proptest::prelude::*;
use seacolor::attenuation::{attenuation_gradients, attenuation_loss, recover_true_color};
use seacolor::backscatter::{backscatter_gradients, backscatter_loss, direct_signal};
use seacolor::domain::{AttenuationParams, BackscatterParams, Image, ParamSet, RangeMap};
use seacolor::{validate_pair, AttenuationLossConfig, BackscatterLossConfig, BoundMode};

const STEP: f64 = 1e-6;
const KINK: f64 = 1e-3;
const TOL: f64 = 1e-4;
// Denominator floor, absolute and relative to the loss: the difference
// quotient carries roundoff near eps * loss / STEP.
const FLOOR: f64 = 1e-2;
const LOSS_FLOOR: f64 = 1e-4;
const SIDE: usize = 8;

fn reference_backscatter(img: &[[f64; 3]], z: &[f64], p: &[f64; 12], k: f64, mode: BoundMode) -> f64 {
    let mut total = 0.0;
    for (px, &z) in img.iter().zip(z) {
        for c in 0..3 {
            let raw = p[c] * (1.0 - (-p[3 + c] * z).exp()) + p[6 + c] * (-p[9 + c] * z).exp();
            let b = match mode {
                BoundMode::Clamp => raw.clamp(0.0, 1.0),
                BoundMode::Sigmoid => 1.0 / (1.0 + (-raw).exp()),
            };
            let d = px[c] - b;
            total += d.max(0.0) + k * (-d).max(0.0);
        }
    }
    total / img.len() as f64
}

fn reference_attenuation(d: &[[f64; 3]], z: &[f64], p: &[f64; 12]) -> f64 {
    let n = d.len() as f64;
    let (mut sat, mut int, mut var) = (0.0, 0.0, 0.0);
    for c in 0..3 {
        let (v, w, x, y) = (p[c], p[3 + c], p[6 + c], p[9 + c]);
        let j: Vec<f64> = d
            .iter()
            .zip(z)
            .map(|(d, &z)| d[c].max(0.0) * ((w * (-v * z).exp() + y * (-x * z).exp()) * z).exp())
            .collect();
        let dc: Vec<f64> = d.iter().map(|d| d[c]).collect();
        let std = |s: &[f64]| {
            let m = s.iter().sum::<f64>() / n;
            (s.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt()
        };
        sat += j.iter().map(|v| (v - 1.0).max(0.0).powi(2)).sum::<f64>();
        let mean = j.iter().sum::<f64>() / n;
        int += (mean - 0.5).powi(2);
        var += (std(&j) - std(&dc)).powi(2);
    }
    sat / (3.0 * n) + int / 3.0 + var / 3.0
}

fn central_difference(f: impl Fn(&[f64; 12]) -> f64, p: &[f64; 12]) -> [f64; 12] {
    std::array::from_fn(|i| {
        let (mut hi, mut lo) = (*p, *p);
        hi[i] += STEP;
        lo[i] -= STEP;
        (f(&hi) - f(&lo)) / (2.0 * STEP)
    })
}

fn relative_error(a: f64, f: f64, loss: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(FLOOR).max(LOSS_FLOOR * loss.abs())
}

fn pixels() -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(0.0..1.0f64), SIDE * SIDE)
}

fn ranges() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.1..10.0f64, SIDE * SIDE)
}

fn params() -> impl Strategy<Value = [f64; 12]> {
    prop::array::uniform12(0.01..2.0f64)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, max_global_rejects: 100_000, ..ProptestConfig::default() })]

    #[test]
    fn backscatter_gradient_matches_differences(
        img in pixels(), z in ranges(), p in params(), sigmoid in any::<bool>()
    ) {
        let mode = if sigmoid { BoundMode::Sigmoid } else { BoundMode::Clamp };
        for (px, &z) in img.iter().zip(&z) {
            for c in 0..3 {
                let raw = p[c] * (1.0 - (-p[3 + c] * z).exp()) + p[6 + c] * (-p[9 + c] * z).exp();
                let b = if sigmoid { 1.0 / (1.0 + (-raw).exp()) } else { raw.clamp(0.0, 1.0) };
                prop_assume!((px[c] - b).abs() > KINK);
                prop_assume!(sigmoid || (raw.abs() > KINK && (raw - 1.0).abs() > KINK));
            }
        }
        let image = Image::new(SIDE, SIDE, img.clone()).unwrap();
        let range = RangeMap::new(SIDE, SIDE, z.clone()).unwrap();
        let pair = validate_pair(&image, &range).unwrap();
        let cfg = BackscatterLossConfig { k: 1000.0, bound_mode: mode };
        let bs = BackscatterParams::from_flat_projected(p);
        let analytic = backscatter_gradients(&pair, &bs, &cfg);
        let reference = reference_backscatter(&img, &z, &p, 1000.0, mode);
        prop_assert!((analytic.loss - reference).abs() <= 1e-12 * reference.max(1.0));
        let lib_loss = backscatter_loss(&direct_signal(&pair, &bs, &cfg), &cfg);
        prop_assert!((lib_loss - reference).abs() <= 1e-12 * reference.max(1.0));
        let fd = central_difference(|q| reference_backscatter(&img, &z, q, 1000.0, mode), &p);
        for i in 0..12 {
            let err = relative_error(analytic.grad[i], fd[i], reference);
            prop_assert!(err < TOL, "param {} ({}): analytic {} fd {} rel {}",
                i, BackscatterParams::<f64>::key(i), analytic.grad[i], fd[i], err);
        }
    }

    #[test]
    fn attenuation_gradient_matches_differences(d in pixels(), z in ranges(), p in params()) {
        let image = Image::new(SIDE, SIDE, d.clone()).unwrap();
        let range = RangeMap::new(SIDE, SIDE, z.clone()).unwrap();
        let pair = validate_pair(&image, &range).unwrap();
        let cfg = BackscatterLossConfig::default();
        let dhat = direct_signal(&pair, &BackscatterParams::zero(), &cfg);
        let at = AttenuationParams::from_flat_projected(p);
        let rec = recover_true_color(&pair, &dhat, &at).unwrap();
        for j in rec.preclamp.pixels() {
            for c in 0..3 {
                prop_assume!((j[c] - 1.0).abs() > KINK);
            }
        }
        let acfg = AttenuationLossConfig::default();
        let analytic = attenuation_gradients(&pair, &dhat, &at, &acfg).unwrap();
        let reference = reference_attenuation(&d, &z, &p);
        let scale = reference.abs().max(1.0);
        prop_assert!((analytic.loss - reference).abs() <= 1e-10 * scale, "{} vs {}", analytic.loss, reference);
        let lib_loss = attenuation_loss(&rec.preclamp, &dhat, &acfg).unwrap();
        prop_assert!((lib_loss - reference).abs() <= 1e-10 * scale);
        let fd = central_difference(|q| reference_attenuation(&d, &z, q), &p);
        for i in 0..12 {
            let err = relative_error(analytic.grad[i], fd[i], reference);
            prop_assert!(err < TOL, "param {} ({}): analytic {} fd {} rel {}",
                i, AttenuationParams::<f64>::key(i), analytic.grad[i], fd[i], err);
        }
    }
}
