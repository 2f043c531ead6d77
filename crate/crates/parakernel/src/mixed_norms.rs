//! Discrete anisotropic mixed norms `L_{p,q}` (space inside, time outside)
//! and `L̃_{p,q}` (time inside, space outside), optionally weighted by
//! `x_n^μ` or `d̂(x)^μ`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Domain, GridFunction};

/// Smallest accepted exponent.
pub const EXPONENT_MIN: f64 = 1.01;
/// Largest accepted exponent.
pub const EXPONENT_MAX: f64 = 64.0;
/// Denominators below this make [`norm_ratio`] return `+∞`.
pub const RATIO_FLOOR: f64 = 1e-30;

/// Integration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    /// `‖f‖_{p,q}`: `L_p` in space, then `L_q` in time.
    SpaceThenTime,
    /// `|||f|||_{p,q}`: `L_q` in time, then `L_p` in space.
    TimeThenSpace,
}

impl Order {
    pub const BOTH: [Order; 2] = [Order::SpaceThenTime, Order::TimeThenSpace];

    pub fn tag(self) -> &'static str {
        match self {
            Order::SpaceThenTime => "space_then_time",
            Order::TimeThenSpace => "time_then_space",
        }
    }
}

/// Base of the power weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    #[default]
    None,
    /// `x_n^μ`, half-space lattices only.
    NormalCoordinate,
    /// `d̂(x)^μ`, distance to the boundary of a box.
    BoundaryDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    pub p: f64,
    pub q: f64,
    pub order: Order,
    #[serde(default)]
    pub weight: WeightKind,
    #[serde(default)]
    pub mu: f64,
}

impl NormSpec {
    pub fn new(p: f64, q: f64, order: Order) -> Self {
        Self { p, q, order, weight: WeightKind::None, mu: 0.0 }
    }

    pub fn weighted(mut self, weight: WeightKind, mu: f64) -> Self {
        self.weight = weight;
        self.mu = mu;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("p", self.p), ("q", self.q)] {
            if !(EXPONENT_MIN..=EXPONENT_MAX).contains(&v) {
                return Err(Error::Spec(format!("{name} = {v} outside [{EXPONENT_MIN}, {EXPONENT_MAX}]")));
            }
        }
        if !self.mu.is_finite() {
            return Err(Error::Spec(format!("weight power mu = {} is not finite", self.mu)));
        }
        Ok(())
    }

    pub fn check_domain(&self, domain: &Domain) -> Result<()> {
        match (self.weight, domain) {
            (WeightKind::NormalCoordinate, Domain::HalfSpace)
            | (WeightKind::BoundaryDistance, Domain::Box { .. })
            | (WeightKind::None, _) => Ok(()),
            (w, d) => Err(Error::Spec(format!("weight {w:?} is not defined on {d:?}"))),
        }
    }
}

/// Weight value at every space node of `f`.
pub fn weight_values(f: &GridFunction, weight: WeightKind, mu: f64) -> Vec<f64> {
    let ns = f.space_len();
    let n = f.space_dim();
    match (weight, &f.domain) {
        (WeightKind::None, _) => vec![1.0; ns],
        (WeightKind::NormalCoordinate, _) => (0..ns).map(|i| f.space_point(i)[n - 1].powf(mu)).collect(),
        (WeightKind::BoundaryDistance, Domain::Box { lower, upper }) => (0..ns)
            .map(|i| {
                let x = f.space_point(i);
                let d = (0..n).map(|a| (x[a] - lower[a]).min(upper[a] - x[a])).fold(f64::INFINITY, f64::min);
                d.powf(mu)
            })
            .collect(),
        (WeightKind::BoundaryDistance, _) => vec![f64::NAN; ns],
    }
}

/// Cell measure of every space node.
pub fn space_measures(f: &GridFunction) -> Vec<f64> {
    (0..f.space_len()).map(|i| f.space_weight(i)).collect()
}

/// Mixed norm of time-major `values` with explicit quadrature weights.
///
/// Exponents may be any value in `[1, ∞]`; `∞` is a max over nodes of
/// positive weight. `space_weight` multiplies `|f|` pointwise.
pub fn mixed_norm_raw(
    values: &[f64],
    space_measure: &[f64],
    time_measure: &[f64],
    space_weight: &[f64],
    p: f64,
    q: f64,
    order: Order,
) -> f64 {
    let ns = space_measure.len();
    let nt = time_measure.len();
    debug_assert_eq!(values.len(), ns * nt);
    let scale = values
        .iter()
        .enumerate()
        .map(|(idx, v)| (v * space_weight[idx % ns]).abs())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    let g = |k: usize, i: usize| (values[k * ns + i] * space_weight[i]).abs() / scale;
    let inner = |it: &mut dyn Iterator<Item = (f64, f64)>, e: f64| -> f64 {
        if e.is_infinite() {
            it.filter(|(w, _)| *w > 0.0).map(|(_, v)| v).fold(0.0, f64::max)
        } else {
            it.map(|(w, v)| w * v.powf(e)).sum::<f64>().powf(1.0 / e)
        }
    };
    let (outer_len, outer_measure, outer_exp, inner_exp) = match order {
        Order::SpaceThenTime => (nt, time_measure, q, p),
        Order::TimeThenSpace => (ns, space_measure, p, q),
    };
    let partial: Vec<f64> = (0..outer_len)
        .into_par_iter()
        .map(|o| match order {
            Order::SpaceThenTime => inner(&mut (0..ns).map(|i| (space_measure[i], g(o, i))), inner_exp),
            Order::TimeThenSpace => inner(&mut (0..nt).map(|k| (time_measure[k], g(k, o))), inner_exp),
        })
        .collect();
    scale * inner(&mut outer_measure.iter().copied().zip(partial), outer_exp)
}

pub fn norm(f: &GridFunction, spec: &NormSpec) -> Result<f64> {
    spec.validate()?;
    spec.check_domain(&f.domain)?;
    f.check_finite()?;
    let w = weight_values(f, spec.weight, spec.mu);
    Ok(mixed_norm_raw(&f.values, &space_measures(f), f.time_axis().weights(), &w, spec.p, spec.q, spec.order))
}

/// `Σ norm(numerators) / norm(denominator)`; `+∞` if the denominator vanishes
/// while some numerator does not.
pub fn norm_ratio(numerators: &[GridFunction], denominator: &GridFunction, spec: &NormSpec) -> Result<f64> {
    if let Some(bad) = numerators.iter().position(|g| !g.same_lattice(denominator)) {
        return Err(Error::Data(format!("numerator {bad} lives on a different lattice than the denominator")));
    }
    let top: f64 = numerators.iter().map(|g| norm(g, spec)).sum::<Result<f64>>()?;
    if top == 0.0 {
        return Ok(0.0);
    }
    let bottom = norm(denominator, spec)?;
    Ok(if bottom < RATIO_FLOOR { f64::INFINITY } else { top / bottom })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;
    use approx::assert_relative_eq;

    fn unit_grid(domain: Domain, n: usize, cells: usize, f: impl Fn(&[f64], f64) -> f64) -> GridFunction {
        let mut axes: Vec<Axis> = (0..n).map(|_| Axis::cells(0.0, 1.0, cells)).collect();
        axes.push(Axis::cells(0.0, 1.0, cells));
        GridFunction::from_fn(domain, axes, f)
    }

    #[test]
    fn unit_mass() {
        let g = unit_grid(Domain::WholeSpace, 2, 8, |_, _| 1.0);
        for (p, q) in [(1.5, 3.0), (2.0, 2.0), (7.0, 1.2)] {
            for order in Order::BOTH {
                assert_relative_eq!(norm(&g, &NormSpec::new(p, q, order)).unwrap(), 1.0, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn separable_factorizes() {
        let g = unit_grid(Domain::WholeSpace, 1, 32, |x, t| (1.0 + x[0] * x[0]) * (2.0 - t));
        let gx = unit_grid(Domain::WholeSpace, 1, 32, |x, _| 1.0 + x[0] * x[0]);
        let ht = unit_grid(Domain::WholeSpace, 1, 32, |_, t| 2.0 - t);
        let (p, q) = (3.0, 1.5);
        // ‖g‖_p from a t-constant field, ‖h‖_q from an x-constant field
        let a = norm(&gx, &NormSpec::new(p, p, Order::SpaceThenTime)).unwrap();
        let b = norm(&ht, &NormSpec::new(q, q, Order::SpaceThenTime)).unwrap();
        for order in Order::BOTH {
            assert_relative_eq!(norm(&g, &NormSpec::new(p, q, order)).unwrap(), a * b, max_relative = 1e-12);
        }
    }

    #[test]
    fn normal_weight_example_converges_at_second_order() {
        let exact = 3f64.sqrt().recip();
        let spec = NormSpec::new(2.0, 2.0, Order::SpaceThenTime).weighted(WeightKind::NormalCoordinate, 1.0);
        let errs: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|&c| (norm(&unit_grid(Domain::HalfSpace, 1, c, |_, _| 1.0), &spec).unwrap() - exact).abs())
            .collect();
        assert!(errs[2] < 1e-4);
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() >= 1.9, "{errs:?}");
        }
    }

    #[test]
    fn smooth_separable_converges_at_second_order() {
        // ‖sin(πx)·t‖ with p=q=2 is 2^{-1/2}·3^{-1/2}
        let exact = (1.0f64 / 6.0).sqrt();
        let spec = NormSpec::new(2.0, 2.0, Order::TimeThenSpace);
        let errs: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|&c| {
                let g = unit_grid(Domain::WholeSpace, 1, c, |x, t| (std::f64::consts::PI * x[0]).sin() * t);
                (norm(&g, &spec).unwrap() - exact).abs()
            })
            .collect();
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() >= 1.9, "{errs:?}");
        }
    }

    #[test]
    fn boundary_distance_weight() {
        let dom = Domain::Box { lower: vec![0.0], upper: vec![1.0] };
        let g = unit_grid(dom, 1, 400, |_, _| 1.0);
        // ∫₀¹ d(x)² dx = 1/12
        let spec = NormSpec::new(2.0, 2.0, Order::SpaceThenTime).weighted(WeightKind::BoundaryDistance, 1.0);
        assert_relative_eq!(norm(&g, &spec).unwrap(), (1.0f64 / 12.0).sqrt(), max_relative = 1e-5);
    }

    #[test]
    fn invalid_norm_settings_are_rejected() {
        let g = unit_grid(Domain::WholeSpace, 1, 4, |_, _| 1.0);
        let w = NormSpec::new(2.0, 2.0, Order::SpaceThenTime).weighted(WeightKind::NormalCoordinate, 1.0);
        assert!(matches!(norm(&g, &w), Err(Error::Spec(_))));
        assert!(matches!(norm(&g, &NormSpec::new(1.0, 2.0, Order::SpaceThenTime)), Err(Error::Spec(_))));
        let bad = g.map(|_| f64::NAN);
        assert!(matches!(norm(&bad, &NormSpec::new(2.0, 2.0, Order::SpaceThenTime)), Err(Error::Data(_))));
    }

    #[test]
    fn ratio_edge_cases() {
        let spec = NormSpec::new(2.0, 2.0, Order::SpaceThenTime);
        let g = unit_grid(Domain::WholeSpace, 1, 4, |x, _| x[0]);
        let z = g.map(|_| 0.0);
        assert_eq!(norm_ratio(&[z.clone()], &g, &spec).unwrap(), 0.0);
        assert_eq!(norm_ratio(std::slice::from_ref(&g), &g, &spec).unwrap(), 1.0);
        assert_eq!(norm_ratio(std::slice::from_ref(&g), &z, &spec).unwrap(), f64::INFINITY);
        let other = unit_grid(Domain::WholeSpace, 1, 5, |_, _| 1.0);
        assert!(matches!(norm_ratio(&[other], &g, &spec), Err(Error::Data(_))));
    }
}
