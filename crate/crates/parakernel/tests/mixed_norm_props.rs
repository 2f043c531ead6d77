use parakernel::grid::{Axis, Domain, GridFunction};
use parakernel::mixed_norms::{norm, NormSpec, Order};
use proptest::prelude::*;

fn field(vals: &[f64]) -> GridFunction {
    let mut g = GridFunction::zeros(Domain::WholeSpace, vec![Axis::cells(0.0, 1.0, 4), Axis::cells(-1.0, 1.0, 3), Axis::lattice(0.25, 0.25, 4)]);
    g.values.copy_from_slice(vals);
    g
}

fn exponent() -> impl Strategy<Value = f64> {
    1.01f64..16.0
}

fn order() -> impl Strategy<Value = Order> {
    prop_oneof![Just(Order::SpaceThenTime), Just(Order::TimeThenSpace)]
}

proptest! {
    #[test]
    fn homogeneous(v in prop::collection::vec(-5.0f64..5.0, 48), c in -10.0f64..10.0, p in exponent(), q in exponent(), o in order()) {
        let spec = NormSpec::new(p, q, o);
        let f = field(&v);
        let a = norm(&f.map(|x| c * x), &spec).unwrap();
        let b = c.abs() * norm(&f, &spec).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * b.max(1e-300));
    }

    #[test]
    fn minkowski(u in prop::collection::vec(-5.0f64..5.0, 48), v in prop::collection::vec(-5.0f64..5.0, 48), p in exponent(), q in exponent(), o in order()) {
        let spec = NormSpec::new(p, q, o);
        let (f, g) = (field(&u), field(&v));
        let sum = f.combine(1.0, &g, 1.0).unwrap();
        let lhs = norm(&sum, &spec).unwrap();
        let rhs = norm(&f, &spec).unwrap() + norm(&g, &spec).unwrap();
        prop_assert!(lhs <= rhs * (1.0 + 1e-12));
    }

    #[test]
    fn equal_exponents_ignore_order(v in prop::collection::vec(-5.0f64..5.0, 48), p in exponent()) {
        let f = field(&v);
        let a = norm(&f, &NormSpec::new(p, p, Order::SpaceThenTime)).unwrap();
        let b = norm(&f, &NormSpec::new(p, p, Order::TimeThenSpace)).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
    }
}
