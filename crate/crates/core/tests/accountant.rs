mod common;

use privsynth::accountant::*;

#[test]
fn sgm_matches_quadrature_at_documented_point() {
    let got = rdp_sgm(4.0, &SgmParams::single(0.01, 2.0).unwrap()).unwrap();
    let want = common::quadrature_rdp(4, 0.01, 2.0);
    assert!(common::rel_err(got, want, 0.0) < 1e-8, "got {got:e}, quadrature {want:e}");
}

#[test]
fn sgm_matches_quadrature_on_spread_of_cases() {
    for &(alpha, q, sigma) in &[
        (2u32, 0.001, 10.0),
        (2, 0.5, 0.5),
        (16, 1.0, 0.5),
        (16, 0.001, 0.5),
        (7, 0.2, 1.3),
        (12, 0.03, 4.0),
    ] {
        let got = rdp_sgm(f64::from(alpha), &SgmParams::single(q, sigma).unwrap()).unwrap();
        let want = common::quadrature_rdp(alpha, q, sigma);
        assert!(
            common::rel_err(got, want, 0.0) < 1e-8,
            "alpha={alpha} q={q} sigma={sigma}: got {got:e}, quadrature {want:e}"
        );
    }
}

#[test]
fn theorem_composite_equals_scan() {
    let orders = default_orders();
    let (t, sigma1, q, sigma2, delta): (u64, f64, f64, f64, f64) = (500, 1.2, 0.02, 484.0, 1e-5);
    let single = sgm_curve(&orders, &SgmParams::single(q, sigma1).unwrap()).unwrap();
    let copies: Vec<RdpCurve> = (0..t).map(|_| single.clone()).collect();
    let mut all = copies;
    all.push(gaussian_query_curve(&orders, sigma2).unwrap());
    let composed = compose_rdp(&orders, &all).unwrap();

    // T·γ_F(α) + α/(2σ2²) at every α
    for (i, &a) in orders.iter().enumerate() {
        let want = t as f64 * single.gammas()[i] + a / (2.0 * sigma2 * sigma2);
        assert!((composed.gammas()[i] - want).abs() <= 1e-12 * want.max(1.0));
    }
    // from-scratch scan of the closed expression
    let scan = orders
        .iter()
        .map(|&a| {
            let g = rdp_sgm(a, &SgmParams::single(q, sigma1).unwrap()).unwrap();
            t as f64 * g + a / (2.0 * sigma2 * sigma2) - delta.ln() / (a - 1.0)
        })
        .fold(f64::INFINITY, f64::min);
    let eps = rdp_to_dp(&composed, delta).unwrap().epsilon;
    assert!((eps - scan).abs() < 1e-10);
}

#[test]
fn calibration_round_trip() {
    let orders = default_orders();
    let budget = PrivacyBudget::new(2.0, 1e-5).unwrap();
    let cal = calibrate_sigma1(&budget, 1000, 0.05, 484.0, &orders).unwrap();
    let eps = composite_epsilon(&orders, 1e-5, 1000, 0.05, cal.sigma1, 484.0).unwrap().epsilon;
    assert!(eps <= 2.0 && eps >= 2.0 - 1e-3);
}

#[test]
fn calibration_matches_gaussian_mechanism_bisection() {
    let orders = default_orders();
    let delta = 1e-5;
    let target = 2.0;
    let cal = calibrate_sigma1(
        &PrivacyBudget::new(target, delta).unwrap(),
        1,
        1.0,
        f64::INFINITY,
        &orders,
    )
    .unwrap();

    let (mut lo, mut hi) = (1e-3, 1e3);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if common::gaussian_epsilon(mid, delta, &orders) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    assert!((cal.sigma1 - hi).abs() < 1e-8 * hi, "{} vs {}", cal.sigma1, hi);
}
