use parakernel::appendix_ops::{
    admissible, appendix_boundedness_probe, kernel_k1_eval, kernel_k_eval, AppendixKernelParams, AppendixProbeParams,
    AppendixVariant,
};
use parakernel::probe::{Rule, Verdict};
use parakernel::Error;
use proptest::prelude::*;

fn example() -> AppendixKernelParams {
    AppendixKernelParams {
        n: 1,
        m: 1,
        r: 1.0,
        lambda1: -0.1,
        lambda2: 1.0,
        mu: 0.5,
        sigma: 1.0,
        delta: 0.1,
        kappa: 0.25,
        p: 2.0,
    }
}

fn series<'a>(r: &'a parakernel::probe::ProbeReport, name: &str) -> &'a parakernel::probe::Series {
    r.series.iter().find(|s| s.name == name).unwrap()
}

#[test]
fn admissible_sets_give_stable_estimates() {
    let sets = [
        example(),
        AppendixKernelParams { n: 2, m: 2, r: 2.0, lambda1: 0.0, lambda2: 0.5, ..example() },
        AppendixKernelParams { n: 2, m: 1, r: 0.5, lambda1: 0.0, lambda2: 0.0, mu: 0.2, p: 3.0, ..example() },
    ];
    for k in &sets {
        assert!(admissible(k).unwrap());
        for v in [AppendixVariant::Lp, AppendixVariant::LpInfTilde] {
            let r = appendix_boundedness_probe(k, v, &AppendixProbeParams::default()).unwrap();
            assert_eq!(r.verdict(), Verdict::Pass, "{v:?} {k:?}: {:?}", series(&r, "estimate").values);
        }
    }
}

#[test]
fn inadmissible_sets_blow_up_on_both_sides() {
    let (lo, hi) = example().mu_range();
    for mu in [lo - 0.6, hi + 0.5] {
        let k = AppendixKernelParams { mu, ..example() };
        assert!(!admissible(&k).unwrap());
        let r = appendix_boundedness_probe(&k, AppendixVariant::Lp, &AppendixProbeParams::default()).unwrap();
        let b = series(&r, "blow_up");
        assert!(matches!(b.rule, Rule::Growth { min } if min == 2.0));
        assert!(b.values.windows(2).all(|w| w[1] >= 2.0 * w[0]), "mu = {mu}: {:?}", b.values);
        assert_eq!(r.verdict(), Verdict::Fail);
    }
}

#[test]
fn layer_far_field_is_stable_in_delta() {
    let k = AppendixKernelParams { kappa: 0.25, ..example() };
    let r = appendix_boundedness_probe(&k, AppendixVariant::LayerLp1, &AppendixProbeParams::default()).unwrap();
    let v = &series(&r, "ratio").values;
    assert_eq!(r.verdict(), Verdict::Pass, "{v:?}");
    assert!(v.iter().all(|&x| x > 0.0 && x.is_finite()));
}

#[test]
fn limiting_example_at_mu_equal_r() {
    // μ = r, λ = 0: R_x^r R_y^0 τ^{−(n+2−r)/2} (|y″|)^{−r} e^{…}
    let k = AppendixKernelParams { n: 2, m: 1, r: 1.5, lambda1: 0.0, lambda2: 0.0, mu: 1.5, ..example() };
    let (x, y, t, s) = ([0.2, 0.7], [-0.1, 0.4], 0.5, 0.25);
    let tau: f64 = t - s;
    let rx = 0.7 / (0.7 + tau.sqrt());
    let expected = rx.powf(1.5) * tau.powf(-0.5 * (2.0 + 2.0 - 1.5)) * 0.4f64.powf(-1.5) * (-(0.09 + 0.09) / tau).exp();
    assert!((kernel_k_eval(&k, &x, &y, t, s) / expected - 1.0).abs() < 1e-12);
}

#[test]
fn invalid_parameters_are_structural_errors() {
    let bad = [
        AppendixKernelParams { lambda1: -0.5, lambda2: -0.5, ..example() },
        AppendixKernelParams { m: 2, ..example() },
        AppendixKernelParams { r: 0.0, ..example() },
        AppendixKernelParams { p: 1.0, ..example() },
    ];
    for k in &bad {
        assert!(matches!(admissible(k), Err(Error::Structural(_))), "{k:?}");
    }
}

fn params() -> impl Strategy<Value = AppendixKernelParams> {
    (1usize..=3, 0.1..2.0f64, -0.9..1.0f64, -0.5..1.0f64, -1.5..1.5f64, 0.5..2.0f64, 1.2..4.0f64).prop_map(
        |(n, r, l1, l2, mu, sigma, p)| AppendixKernelParams {
            n,
            m: 1,
            r,
            lambda1: l1,
            lambda2: l2,
            mu,
            sigma,
            delta: 0.1,
            kappa: 0.25,
            p,
        },
    )
}

proptest! {
    #[test]
    fn kernel_is_nonnegative_causal_and_parabolically_homogeneous(
        k in params(),
        x in prop::collection::vec(-2.0..2.0f64, 3),
        y in prop::collection::vec(-2.0..2.0f64, 3),
        s in 0.0..1.0f64,
        tau in 0.01..2.0f64,
        scale in 0.3..3.0f64,
    ) {
        let (x, y) = (&x[..k.n], &y[..k.n]);
        prop_assume!(x[k.n - 1].abs() > 1e-3 && y[k.n - 1].abs() > 1e-3);
        let v = kernel_k_eval(&k, x, y, s + tau, s);
        prop_assert!(v >= 0.0 && v.is_finite());
        prop_assert_eq!(kernel_k_eval(&k, x, y, s, s + tau), 0.0);
        prop_assert!(kernel_k1_eval(&k, x, y, s + tau, s) <= v);
        let xs: Vec<f64> = x.iter().map(|c| c * scale).collect();
        let ys: Vec<f64> = y.iter().map(|c| c * scale).collect();
        let w = kernel_k_eval(&k, &xs, &ys, scale * scale * (s + tau), scale * scale * s);
        let expected = v * scale.powf(-(k.n as f64 + 2.0));
        prop_assert!((w - expected).abs() <= 1e-10 * expected.max(1e-300));
    }

    #[test]
    fn admissibility_matches_the_mu_interval(k in params()) {
        prop_assume!(k.lambda1 + k.lambda2 > -1.0);
        let (lo, hi) = k.mu_range();
        prop_assert_eq!(admissible(&k).unwrap(), lo < k.mu && k.mu < hi);
        prop_assert!((hi - lo - (1.0 + k.lambda1 + k.lambda2)).abs() < 1e-12);
    }
}
