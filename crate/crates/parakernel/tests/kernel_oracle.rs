use nalgebra::DMatrix;
use parakernel::grid::Domain;
use parakernel::kernel_wholespace::gamma;
use parakernel::solver::delta_propagation;
use parakernel::CoefficientField;

fn worst_error(field: &CoefficientField, level: u32) -> f64 {
    let n = field.dim();
    let y = vec![0.1; n];
    let k = delta_propagation(field, Domain::WholeSpace, &y, 0.0, 1.0, level).unwrap();
    let pts: Vec<Vec<f64>> = vec![
        y.clone(),
        y.iter().map(|v| v + 0.7).collect(),
        y.iter().enumerate().map(|(i, v)| v - 1.3 + 0.5 * i as f64).collect(),
    ];
    pts.iter()
        .map(|x| {
            let exact = gamma(field, x, &y, 1.0, 0.0).unwrap();
            (k.value_at(x) - exact).abs() / exact
        })
        .fold(0.0, f64::max)
}

#[test]
fn one_dimensional_families_converge_at_second_order() {
    let fields = [
        CoefficientField::identity(1).unwrap(),
        CoefficientField::constant(DMatrix::from_element(1, 1, 2.0), 0.5).unwrap(),
        CoefficientField::switching(1, 0.5, 8, 1.0).unwrap(),
    ];
    for field in &fields {
        let errs: Vec<f64> = (0..3).map(|l| worst_error(field, l)).collect();
        assert!(errs[2] < 0.01, "{errs:?}");
        assert!(errs.windows(2).all(|w| (w[0] / w[1]).log2() > 1.8), "{errs:?}");
    }
}

#[test]
fn mixed_coefficients_are_propagated_correctly() {
    let field = CoefficientField::constant(DMatrix::from_row_slice(2, 2, &[1.5, 0.4, 0.4, 0.7]), 0.5).unwrap();
    let errs: Vec<f64> = (0..2).map(|l| worst_error(&field, l)).collect();
    assert!(errs[1] < 0.01 && errs[0] / errs[1] > 3.4, "{errs:?}");
}
