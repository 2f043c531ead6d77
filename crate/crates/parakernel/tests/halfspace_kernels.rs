use parakernel::kernel_halfspace::difference::{difference_kernel_check, DifferenceKernel};
use parakernel::kernel_halfspace::{
    bound_fit_half, gamma_dirichlet, numeric_kernel, HalfSampleSpec, Method, Region, DEFAULT_EPS,
};
use parakernel::kernel_wholespace::{gamma, SampleSpec};
use parakernel::probe::Verdict;
use parakernel::{CoefficientField, MultiIndex};
use proptest::prelude::*;

fn switching2() -> CoefficientField {
    CoefficientField::switching(2, 0.5, 8, 1.0).unwrap()
}

#[test]
fn numeric_kernel_converges_to_images() {
    let f = switching2();
    let (y, s, t) = ([0.0, 0.5], 0.1, 0.6);
    let xs = [[0.0, 0.5], [0.3, 0.4], [-0.2, 0.8], [0.1, 0.25]];
    let errors: Vec<f64> = (0..3)
        .map(|level| {
            let k = numeric_kernel(&f, &y, s, t, level).unwrap();
            xs.iter()
                .map(|x| {
                    let exact = gamma_dirichlet(&f, x, &y, t, s, Method::Images).unwrap();
                    (k.value_at(x) - exact).abs() / exact
                })
                .fold(0.0, f64::max)
        })
        .collect();
    assert!(errors[2] <= 0.02, "{errors:?}");
    assert!((errors[1] / errors[2]).log2() >= 1.0, "{errors:?}");
}

#[test]
fn zero_order_fit_is_stable_under_doubling() {
    let z = MultiIndex::zero(2);
    let spec = HalfSampleSpec::default();
    for f in [CoefficientField::identity(2).unwrap(), switching2()] {
        let sigma = f.nu() / 8.0;
        let a = bound_fit_half(&f, &z, &z, DEFAULT_EPS, sigma, Region::Quadrant, &spec).unwrap();
        let b = bound_fit_half(&f, &z, &z, DEFAULT_EPS, sigma, Region::Quadrant, &spec.doubled()).unwrap();
        assert!(a.bounded && b.bounded);
        assert!((b.constant / a.constant - 1.0).abs() <= 0.1, "{} {}", a.constant, b.constant);
    }
}

#[test]
fn unweighted_regions_fit_finite_constants() {
    let f = switching2();
    let spec = HalfSampleSpec::default();
    let orders = [
        (MultiIndex::new(vec![0, 2]), MultiIndex::new(vec![0, 1])),
        (MultiIndex::new(vec![1, 1]), MultiIndex::new(vec![0, 2])),
        (MultiIndex::new(vec![0, 1]), MultiIndex::new(vec![1, 0])),
    ];
    for region in Region::UNWEIGHTED {
        for (a, b) in &orders {
            if !region.admits(a, b) {
                continue;
            }
            let fit = bound_fit_half(&f, a, b, DEFAULT_EPS, f.nu() / 8.0, region, &spec).unwrap();
            assert!(fit.bounded && fit.constant > 0.0, "{region:?} {a} {b}");
        }
    }
}

#[test]
fn weighted_second_normal_derivative_needs_eps() {
    // D_{x_n}² at the wall: the ℛ^{−ε} allowance keeps the fit finite
    let f = CoefficientField::identity(1).unwrap();
    let a = MultiIndex::new(vec![2]);
    let z = MultiIndex::zero(1);
    let spec = HalfSampleSpec::default();
    let fit = bound_fit_half(&f, &a, &z, DEFAULT_EPS, 0.125, Region::Quadrant, &spec).unwrap();
    assert!(fit.bounded);
}

#[test]
fn difference_kernels_fit_on_identity() {
    let f = CoefficientField::identity(2).unwrap();
    let spec = HalfSampleSpec {
        base: SampleSpec { tau_count: 1, s_count: 1, directions: 2, ..SampleSpec::default() },
        normal_count: 17,
        ..Default::default()
    };
    let report = difference_kernel_check(&f, &[-0.3, 0.0, 1.0, 1.6], DEFAULT_EPS, 0.125, &spec, 0.15).unwrap();
    let failing: Vec<_> = report.failing().map(|s| (&s.name, &s.values)).collect();
    assert_eq!(report.verdict(), Verdict::Pass, "{failing:?}");
    assert_eq!(report.series.len(), DifferenceKernel::ALL.len() * 4);
}

proptest! {
    #[test]
    fn sandwich_and_symmetry(
        x0 in -2.0f64..2.0, x1 in 0.0f64..2.0,
        y0 in -2.0f64..2.0, y1 in 1e-3f64..2.0,
        s in 0.0f64..1.0, tau in 1e-3f64..1.0,
    ) {
        let f = switching2();
        let (x, y) = ([x0, x1], [y0, y1]);
        let d = gamma_dirichlet(&f, &x, &y, s + tau, s, Method::Images).unwrap();
        let g = gamma(&f, &x, &y, s + tau, s).unwrap();
        prop_assert!(d >= 0.0 && d <= g);
        if x1 > 0.0 {
            let e = gamma_dirichlet(&f, &y, &x, s + tau, s, Method::Images).unwrap();
            prop_assert!((d - e).abs() <= 1e-14 * d.abs().max(1e-300));
        }
        let wall = gamma_dirichlet(&f, &[x0, 0.0], &y, s + tau, s, Method::Images).unwrap();
        prop_assert_eq!(wall, 0.0);
    }
}
