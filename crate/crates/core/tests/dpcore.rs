use privsynth::dpcore::*;
use privsynth::noise::NoiseSource;
use proptest::prelude::*;

fn random_gradient(noise: &mut NoiseSource) -> Vec<f64> {
    let dim = 1 + noise.uniform_int(0, 40);
    // norms spread over many orders of magnitude
    let scale = 10f64.powf(-3.0 + 7.0 * noise.uniform());
    noise.gaussian_vec(dim).into_iter().map(|x| x * scale).collect()
}

#[test]
fn ten_thousand_clipped_norms_stay_within_bound() {
    let mut noise = NoiseSource::new(11, 0);
    for i in 0..10_000 {
        let c = 10f64.powf(-2.0 + 4.0 * noise.uniform());
        let cfg = ClipConfig::new(c).unwrap();
        let g = random_gradient(&mut noise);
        let clipped = clip_vector(&g, &cfg).unwrap();
        assert!(l2_norm(&clipped) <= c, "case {i}: norm {} > C {c}", l2_norm(&clipped));
    }
}

#[test]
fn zero_noise_aggregate_is_clipped_mean() {
    let mut noise = NoiseSource::new(12, 0);
    for _ in 0..200 {
        let b = 1 + noise.uniform_int(0, 20);
        let dim = 1 + noise.uniform_int(0, 10);
        let c = 0.1 + 3.0 * noise.uniform();
        let cfg = ClipConfig::new(c).unwrap();
        let grads: Vec<Vec<f64>> = (0..b)
            .map(|_| noise.gaussian_vec(dim).into_iter().map(|x| 5.0 * x).collect())
            .collect();
        // reference clipped mean without the ulp adjustment
        let mut want = vec![0.0; dim];
        for g in &grads {
            let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            let s = if n > c { c / n } else { 1.0 };
            for (w, x) in want.iter_mut().zip(g) {
                *w += s * x / b as f64;
            }
        }
        let got = sanitize_batch(&grads, &cfg, 0.0, &mut noise).unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-12, "{g} vs {w}");
        }
    }
}

#[test]
fn aggregate_noise_has_stated_scale() {
    // single zero gradient: output is pure N(0, (σ1·C/b)²)
    let (sigma1, c, b) = (1.7, 0.8, 4.0);
    let cfg = ClipConfig::new(c).unwrap();
    let mut noise = NoiseSource::new(13, 0);
    let draws: Vec<f64> = (0..20_000)
        .map(|_| sanitize_with_normalizer(&[vec![0.0]], 1, b, &cfg, sigma1, &mut noise).unwrap()[0])
        .collect();
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let sd = (draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let want = sigma1 * c / b;
    assert!(mean.abs() < 4.0 * want / n.sqrt());
    assert!((sd / want - 1.0).abs() < 0.03, "sd {sd}, want {want}");
}

#[test]
fn histogram_noise_has_stated_scale() {
    let (k1, sigma2) = (4usize, 3.0);
    let mut noise = NoiseSource::new(14, 0);
    let counts = vec![10.0; 5];
    let mut sq = 0.0;
    let reps = 4000;
    for _ in 0..reps {
        let out = perturb_histogram(&counts, k1, sigma2, PrivacyMode::Enforced, &mut noise).unwrap();
        sq += out.iter().map(|x| (x - 10.0).powi(2)).sum::<f64>();
    }
    let sd = (sq / (reps * 5) as f64).sqrt();
    let want = (k1 as f64).sqrt() * sigma2;
    assert!((sd / want - 1.0).abs() < 0.03, "sd {sd}, want {want}");
}

#[test]
fn zero_sigma2_needs_testing_mode() {
    let mut noise = NoiseSource::new(15, 0);
    let counts = [3.0, 0.0];
    assert!(perturb_histogram(&counts, 1, 0.0, PrivacyMode::Enforced, &mut noise).is_err());
    assert_eq!(
        perturb_histogram(&counts, 1, 0.0, PrivacyMode::Testing, &mut noise).unwrap(),
        counts.to_vec()
    );
    assert!(perturb_histogram(&counts, 0, 1.0, PrivacyMode::Enforced, &mut noise).is_err());
    assert!(perturb_histogram(&[-1.0], 1, 1.0, PrivacyMode::Enforced, &mut noise).is_err());
}

#[test]
fn non_finite_gradients_rejected() {
    let cfg = ClipConfig::new(1.0).unwrap();
    assert!(clip_vector(&[f64::NAN], &cfg).is_err());
    assert!(clip_vector(&[f64::INFINITY, 0.0], &cfg).is_err());
    assert!(ClipConfig::new(0.0).is_err());
    assert!(ClipConfig::new(f64::NAN).is_err());
}

proptest! {
    #[test]
    fn clipping_is_identity_inside_the_ball(v in prop::collection::vec(-1.0f64..1.0, 1..20), c in 0.1f64..10.0) {
        let cfg = ClipConfig::new(c).unwrap();
        let n = l2_norm(&v);
        let out = clip_vector(&v, &cfg).unwrap();
        if n <= c {
            prop_assert_eq!(out, v);
        } else {
            prop_assert!(l2_norm(&out) <= c);
            // direction preserved
            let dot: f64 = out.iter().zip(&v).map(|(a, b)| a * b).sum();
            prop_assert!(dot >= 0.0);
            prop_assert!((l2_norm(&out) - c).abs() <= 1e-12 * c);
        }
    }

    #[test]
    fn one_record_moves_aggregate_by_at_most_c_over_b(
        grads in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 1..10),
        extra in prop::collection::vec(-50.0f64..50.0, 3),
        c in 0.1f64..5.0,
        b in 1.0f64..20.0,
    ) {
        let cfg = ClipConfig::new(c).unwrap();
        let mut noise = NoiseSource::new(0, 0);
        let base = sanitize_with_normalizer(&grads, 3, b, &cfg, 0.0, &mut noise).unwrap();
        let mut more = grads.clone();
        more.push(extra);
        let bigger = sanitize_with_normalizer(&more, 3, b, &cfg, 0.0, &mut noise).unwrap();
        let diff: Vec<f64> = base.iter().zip(&bigger).map(|(x, y)| x - y).collect();
        prop_assert!(l2_norm(&diff) <= c / b * (1.0 + 1e-12));
    }
}
