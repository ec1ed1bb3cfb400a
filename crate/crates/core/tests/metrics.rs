use cuboidcast::metrics::*;
use cuboidcast::train::persistence;
use cuboidcast_tensor::Tensor;
use proptest::prelude::*;

fn frames(shape: [usize; 5], f: impl FnMut(usize) -> f32) -> Tensor<f32> {
    Tensor::from_fn(shape, f)
}

fn scaled(values: &[f64], shape: [usize; 5]) -> Tensor<f32> {
    Tensor::new(shape, values.iter().map(|&v| (v / 255.0) as f32).collect()).unwrap()
}

#[test]
fn identical_frames_score_perfectly() {
    let x = frames([2, 3, 12, 12, 1], |i| ((i * 37) % 17) as f32 / 16.0);
    assert_eq!(mse(&x, &x).unwrap(), 0.0);
    assert_eq!(mae(&x, &x).unwrap(), 0.0);
    assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-9);
    let c = csi_pooled(&x, &x, &CsiConfig::default()).unwrap();
    assert!(c.csi.iter().all(|&v| v == 1.0));
    let p = csi_per_step(&x, &x, &CsiConfig::default()).unwrap();
    assert_eq!((p.csi_m6, p.csi_m3), (1.0, Some(1.0)));
}

#[test]
fn reported_error_sums_pixels_per_frame() {
    let a = Tensor::<f32>::zeros([1, 1, 2, 2, 1]);
    let b = Tensor::<f32>::full([1, 1, 2, 2, 1], 0.5);
    assert_eq!(mse(&a, &b).unwrap(), 1.0);
    assert_eq!(mae(&a, &b).unwrap(), 2.0);
    // Two samples times two frames: still a per-frame average.
    let a = Tensor::<f32>::zeros([2, 2, 2, 2, 1]);
    let b = Tensor::<f32>::full([2, 2, 2, 2, 1], 0.5);
    assert_eq!(mse(&a, &b).unwrap(), 1.0);
}

#[test]
fn persistence_on_constant_sequence_is_exact() {
    let x = Tensor::<f32>::full([2, 4, 12, 12, 1], 0.3);
    let p = persistence(&x, 3);
    assert_eq!(p.shape(), &[2, 3, 12, 12, 1]);
    assert_eq!(mse(&p, &Tensor::full([2, 3, 12, 12, 1], 0.3)).unwrap(), 0.0);
}

#[test]
fn shape_mismatch_is_an_error() {
    let a = Tensor::<f32>::zeros([1, 1, 2, 2, 1]);
    let b = Tensor::<f32>::zeros([1, 2, 2, 2, 1]);
    assert!(mse(&a, &b).is_err());
    assert!(mae(&a, &b).is_err());
}

fn ssim_constants(a: f64, b: f64) -> f64 {
    // Zero variance everywhere, so only the luminance term survives.
    let c1 = 0.01f64.powi(2);
    (2.0 * a * b + c1) / (a * a + b * b + c1)
}

#[test]
fn ssim_of_constants_matches_closed_form() {
    let a = vec![0.5; 16 * 16];
    let b = vec![0.6; 16 * 16];
    assert!((ssim_frame(&a, &b, 16, 16).unwrap() - ssim_constants(0.5, 0.6)).abs() < 1e-12);
}

#[test]
fn ssim_of_inverted_binary_pattern_is_low() {
    let x: Vec<f64> = (0..16 * 16).map(|i| ((i / 16 + i % 16) % 2) as f64).collect();
    let y: Vec<f64> = x.iter().map(|v| 1.0 - v).collect();
    assert!(ssim_frame(&x, &y, 16, 16).unwrap() < 0.1);
}

#[test]
fn ssim_rejects_frames_smaller_than_window() {
    let a = vec![0.0; 10 * 10];
    assert!(matches!(ssim_frame(&a, &a, 10, 10), Err(cuboidcast::Error::Config(_))));
}

#[test]
fn csi_hand_counted_case() {
    let truth = scaled(&[200.0, 100.0, 10.0, 0.0], [1, 1, 2, 2, 1]);
    let pred = scaled(&[190.0, 10.0, 10.0, 0.0], [1, 1, 2, 2, 1]);
    let r = csi_pooled(&pred, &truth, &CsiConfig { thresholds: vec![74.0, 133.0] }).unwrap();
    assert_eq!(r.counts[1], Contingency { hits: 1, misses: 0, false_alarms: 0 });
    assert_eq!(r.counts[0], Contingency { hits: 1, misses: 1, false_alarms: 0 });
    assert_eq!(r.csi, vec![0.5, 1.0]);
    assert_eq!(r.csi_m, 0.75);
}

#[test]
fn empty_contingency_scores_zero() {
    assert_eq!(Contingency::default().csi(), 0.0);
    let zeros = Tensor::<f32>::zeros([1, 2, 2, 2, 1]);
    let r = csi_pooled(&zeros, &zeros, &CsiConfig::default()).unwrap();
    assert!(r.csi.iter().all(|&v| v == 0.0));
}

#[test]
fn all_zero_prediction_misses_everything() {
    let truth = Tensor::<f32>::full([1, 1, 3, 3, 1], 1.0);
    let zeros = Tensor::<f32>::zeros([1, 1, 3, 3, 1]);
    assert!(csi_pooled(&zeros, &truth, &CsiConfig::default()).unwrap().csi.iter().all(|&v| v == 0.0));
}

#[test]
fn time_constant_fields_pool_like_per_step() {
    let one: Vec<f64> = (0..9).map(|i| (i * 29 % 256) as f64).collect();
    let other: Vec<f64> = (0..9).map(|i| (i * 71 % 256) as f64).collect();
    let pred: Vec<f64> = one.iter().cycle().take(27).copied().collect();
    let truth: Vec<f64> = other.iter().cycle().take(27).copied().collect();
    let pooled = csi_pooled_values(&pred, &truth, &DEFAULT_THRESHOLDS);
    let per = csi_per_step_values(&pred, &truth, [1, 3, 9], &DEFAULT_THRESHOLDS);
    for (a, b) in pooled.csi.iter().zip(&per.csi) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn thresholds_must_increase() {
    assert!(CsiConfig { thresholds: vec![74.0, 16.0] }.validate().is_err());
    assert!(CsiConfig { thresholds: vec![0.0, 16.0] }.validate().is_err());
    assert!(CsiConfig { thresholds: vec![300.0] }.validate().is_err());
    assert!(CsiConfig::default().validate().is_ok());
}

#[test]
fn accumulator_merge_equals_single_pass() {
    let pred = frames([4, 3, 4, 4, 1], |i| ((i * 13) % 256) as f32 / 255.0);
    let truth = frames([4, 3, 4, 4, 1], |i| ((i * 101) % 256) as f32 / 255.0);
    let mut whole = CsiAccumulator::new(&DEFAULT_THRESHOLDS, 3);
    whole.add(&pred, &truth).unwrap();
    let half = |t: &Tensor<f32>, s| t.slice_rows(s, s + 2).unwrap();
    let mut a = CsiAccumulator::new(&DEFAULT_THRESHOLDS, 3);
    let mut b = CsiAccumulator::new(&DEFAULT_THRESHOLDS, 3);
    a.add(&half(&pred, 0), &half(&truth, 0)).unwrap();
    b.add(&half(&pred, 2), &half(&truth, 2)).unwrap();
    a.merge(&b);
    assert_eq!(a.pooled(), whole.pooled());
    assert_eq!(a.per_step(), whole.per_step());
}

/// `a_k = b_k ln k` evaluated term by term from the weighting rule.
fn footnote_weights() -> Vec<f64> {
    let mut out = Vec::new();
    for k in 1..=12u32 {
        let b = if k <= 4 {
            1.5
        } else if k <= 11 {
            2.0
        } else {
            3.0
        };
        out.push(b * f64::from(k).ln());
    }
    out
}

#[test]
fn nino_weights_follow_the_rule() {
    let w = nino_weights(12);
    assert_eq!(w[0], 0.0);
    assert_eq!(w, footnote_weights());
}

fn series(n: usize, k: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..k).map(|j| ((i * 7 + j * 3) % 11) as f64 - 5.0 + 0.1 * i as f64).collect()).collect()
}

#[test]
fn nino_perfect_and_anti_correlation() {
    let y = series(6, 12);
    let s = nino_corr_skill(&y, &y).unwrap();
    assert!(s.c.iter().all(|&c| (c - 1.0).abs() < 1e-12));
    assert!((s.c_m - 1.0).abs() < 1e-12);
    let want = footnote_weights().iter().sum::<f64>() / 12.0;
    assert!((s.c_wm - want).abs() < 1e-12, "{} vs {want}", s.c_wm);
    let neg: Vec<Vec<f64>> = y.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
    assert!(nino_corr_skill(&neg, &y).unwrap().c.iter().all(|&c| (c + 1.0).abs() < 1e-12));
}

#[test]
fn nino_zero_variance_lead_is_zero() {
    let mut x = series(4, 3);
    for r in &mut x {
        r[1] = 2.0;
    }
    let s = nino_corr_skill(&x, &series(4, 3)).unwrap();
    assert_eq!(s.c[1], 0.0);
    assert_eq!(s.degenerate_leads, vec![2]);
    assert!(nino_corr_skill(&x[..1], &x[..1]).is_err());
}

/// Exceedance counting done the slow way, one pixel at a time.
fn oracle(pred: &[f64], truth: &[f64], tau: f64) -> f64 {
    let (mut h, mut m, mut f) = (0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p >= tau, t >= tau) {
            (true, true) => h += 1,
            (false, true) => m += 1,
            (true, false) => f += 1,
            _ => {}
        }
    }
    if h + m + f == 0 {
        0.0
    } else {
        h as f64 / (h + m + f) as f64
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_4x4x3_matches_counting_oracle(
        pred in prop::collection::vec(0u8..=255, 48),
        truth in prop::collection::vec(0u8..=255, 48),
    ) {
        let (p, t): (Vec<f64>, Vec<f64>) = (pred.iter().map(|&v| v as f64).collect(), truth.iter().map(|&v| v as f64).collect());
        let pooled = csi_pooled_values(&p, &t, &DEFAULT_THRESHOLDS);
        let per = csi_per_step_values(&p, &t, [1, 3, 16], &DEFAULT_THRESHOLDS);
        for (j, &tau) in DEFAULT_THRESHOLDS.iter().enumerate() {
            prop_assert_eq!(pooled.csi[j], oracle(&p, &t, tau));
            let steps: f64 = (0..3).map(|s| oracle(&p[s * 16..(s + 1) * 16], &t[s * 16..(s + 1) * 16], tau)).sum::<f64>() / 3.0;
            prop_assert!((per.csi[j] - steps).abs() < 1e-15);
        }
        prop_assert_eq!(pooled.csi_m, pooled.csi.iter().sum::<f64>() / 6.0);
    }

    #[test]
    fn byte_data_thresholds_survive_f32_rescaling(v in 0u8..=255) {
        // A pixel stored as v/255 in f32 must count as >= tau exactly when v >= tau.
        let t = Tensor::<f32>::new([1, 1, 1, 1, 1], vec![v as f32 / 255.0]).unwrap();
        let r = csi_pooled(&t, &t, &CsiConfig::default()).unwrap();
        for (j, &tau) in DEFAULT_THRESHOLDS.iter().enumerate() {
            prop_assert_eq!(r.counts[j].hits, u64::from(v as f64 >= tau));
        }
    }

    #[test]
    fn nino_is_invariant_to_positive_affine_rescaling(scale in 0.01f64..100.0, shift in -50.0f64..50.0) {
        let (x, y) = (series(7, 12), series(7, 12).into_iter().rev().collect::<Vec<_>>());
        let xs: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| v * scale + shift).collect()).collect();
        let a = nino_corr_skill(&x, &y).unwrap();
        let b = nino_corr_skill(&xs, &y).unwrap();
        for (p, q) in a.c.iter().zip(&b.c) {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }
}
