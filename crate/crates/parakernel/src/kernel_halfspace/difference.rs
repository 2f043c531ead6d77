//! Difference kernels between weighted Dirichlet and whole-space second
//! derivatives, and fits of their pointwise bounds.

use serde::Serialize;

use super::{boundary_factor, sweep, Derivative, HalfKernel, HalfSampleSpec, Parts};
use crate::coeffs::CoefficientField;
use crate::error::{Error, Result};
use crate::kernel_wholespace::MultiIndex;
use crate::probe::{ProbeReport, Rule, Series};

/// Which difference kernel to evaluate. With `w = (x_n/y_n)^μ`:
///
/// * `CalG`: `w D_iD_jΓ^D − D_iD_jΓ`
/// * `D2yCalG`: the same with `D_{y_k}D_{y_l}` applied to both terms
/// * `PartialsCalG`: the same with `∂_s` applied to both terms
/// * `CalGij`: `w D_iD_jΓ^D − χ_{x_n>√τ} D_iD_jΓ`
/// * `PartialsCalGij`: `∂_s` of `CalGij`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DifferenceKernel {
    CalG,
    D2yCalG,
    PartialsCalG,
    CalGij,
    PartialsCalGij,
}

impl DifferenceKernel {
    pub const ALL: [DifferenceKernel; 5] = [
        DifferenceKernel::CalG,
        DifferenceKernel::D2yCalG,
        DifferenceKernel::PartialsCalG,
        DifferenceKernel::CalGij,
        DifferenceKernel::PartialsCalGij,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            DifferenceKernel::CalG => "calG",
            DifferenceKernel::D2yCalG => "D2y_calG",
            DifferenceKernel::PartialsCalG => "partials_calG",
            DifferenceKernel::CalGij => "calGij",
            DifferenceKernel::PartialsCalGij => "partials_calGij",
        }
    }

    /// Only defined for `x_n, y_n > √τ`.
    pub fn needs_interior(self) -> bool {
        matches!(self, DifferenceKernel::CalG | DifferenceKernel::D2yCalG | DifferenceKernel::PartialsCalG)
    }

    fn ds(self) -> bool {
        matches!(self, DifferenceKernel::PartialsCalG | DifferenceKernel::PartialsCalGij)
    }

    /// Power of `τ` in the bound.
    pub fn exponent(self, n: usize) -> f64 {
        match self {
            DifferenceKernel::CalG | DifferenceKernel::CalGij => (n + 1) as f64 / 2.0,
            _ => (n + 3) as f64 / 2.0,
        }
    }

    fn derivative(self, k: &HalfKernel, n: usize, (i, j): (usize, usize), (p, l): (usize, usize)) -> Result<Derivative> {
        let alpha = MultiIndex::pair(n, i, j);
        let beta = if self == DifferenceKernel::D2yCalG { MultiIndex::pair(n, p, l) } else { MultiIndex::zero(n) };
        k.derivative(&alpha, &beta, self.ds())
    }

    /// Log of the bound's spatial factor (everything except `C`, the power
    /// of `τ` and the Gaussian).
    fn log_bound(self, xn: f64, yn: f64, tau: f64, mu: f64, eps: f64) -> f64 {
        if self.needs_interior() {
            return -yn.ln();
        }
        let (rx, ry) = (boundary_factor(xn, tau), boundary_factor(yn, tau));
        let ry_pow = if self.ds() { -eps } else { 1.0 };
        // ln(x_n^{μ−1} y_n^{−μ} + y_n^{−1}) via log-sum-exp
        let a = (mu - 1.0) * xn.ln() - mu * yn.ln();
        let b = -yn.ln();
        let m = a.max(b);
        (1.0 - eps) * rx.ln() + ry_pow * ry.ln() + m + ((a - m).exp() + (b - m).exp()).ln()
    }
}

/// Point query for [`difference_kernel_eval`].
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceKernelQuery {
    pub kernel: DifferenceKernel,
    pub mu: f64,
    /// `(i, j)` of `D_{x_i}D_{x_j}`.
    pub i: usize,
    pub j: usize,
    /// `(k, l)` of `D_{y_k}D_{y_l}`, used by `D2yCalG` only.
    pub y_pair: (usize, usize),
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub t: f64,
    pub s: f64,
}

/// Kernel value over `e^{log_g}`: `(w − 1)·direct − w·image·e^{−c}`, or
/// `w·(direct − image·e^{−c})` when the whole-space term is switched off.
fn combine(p: &Parts, lw: f64, subtract_whole: bool) -> f64 {
    let w = lw.exp();
    if subtract_whole {
        lw.exp_m1() * p.direct - w * p.image * (-p.c).exp()
    } else {
        w * p.dirichlet_factor()
    }
}

fn subtracts(kernel: DifferenceKernel, xn: f64, tau: f64) -> bool {
    kernel.needs_interior() || xn > tau.sqrt()
}

pub fn difference_kernel_eval(q: &DifferenceKernelQuery, field: &CoefficientField) -> Result<f64> {
    let n = field.dim();
    super::check_points(&q.x, &q.y, n)?;
    if q.i >= n || q.j >= n || q.y_pair.0 >= n || q.y_pair.1 >= n {
        return Err(Error::Structural(format!("indices must be below {n}")));
    }
    if !q.mu.is_finite() {
        return Err(Error::Domain(format!("weight power must be finite, got {}", q.mu)));
    }
    if !(q.t > q.s) {
        return Ok(0.0);
    }
    let tau = q.t - q.s;
    let (xn, yn) = (q.x[n - 1], q.y[n - 1]);
    if q.kernel.needs_interior() && !(xn > tau.sqrt() && yn > tau.sqrt()) {
        return Err(Error::Domain(format!(
            "{} needs x_n, y_n > sqrt(t - s) = {}, got x_n = {xn}, y_n = {yn}",
            q.kernel.tag(),
            tau.sqrt()
        )));
    }
    let k = HalfKernel::new(field, q.t, q.s)?;
    let d = q.kernel.derivative(&k, n, (q.i, q.j), q.y_pair)?;
    let p = k.parts(&d, &q.x, &q.y);
    let lw = q.mu * (xn / yn).ln();
    let lw = if xn == 0.0 && q.mu == 0.0 { 0.0 } else { lw };
    Ok(combine(&p, lw, subtracts(q.kernel, xn, tau)) * p.log_g.exp())
}

/// Sup over samples, index pairs and each `μ` in `mus` of
/// `|kernel| / (bound factor · τ^{−e} · e^{−σ|x−y|²/τ})`.
pub fn difference_kernel_fit(
    field: &CoefficientField,
    kernel: DifferenceKernel,
    mus: &[f64],
    eps: f64,
    sigma: f64,
    spec: &HalfSampleSpec,
) -> Result<Vec<f64>> {
    let n = field.dim();
    let exponent = kernel.exponent(n);
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let y_pairs = if kernel == DifferenceKernel::D2yCalG { pairs.clone() } else { vec![(0, 0)] };
    let spec = if kernel.needs_interior() {
        spec.clone().with_normal_range(spec.normal_min.max(1.001), spec.normal_max)
    } else {
        spec.clone()
    };
    let (best, _) = sweep(
        field,
        &spec,
        mus.len(),
        |xn, yn| !kernel.needs_interior() || (xn > 1.0 && yn > 1.0),
        |s, tau| {
            let k = HalfKernel::new(field, s + tau, s)?;
            let mut ds = Vec::new();
            for &ij in &pairs {
                for &kl in &y_pairs {
                    ds.push(kernel.derivative(&k, n, ij, kl)?);
                }
            }
            Ok(move |x: &[f64], y: &[f64], tau: f64, out: &mut [f64]| {
                let (xn, yn) = (x[n - 1], y[n - 1]);
                let rho2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / tau;
                let sub = subtracts(kernel, xn, tau);
                let pt = k.point(x, y);
                let parts: Vec<Parts> = ds.iter().map(|d| d.parts(&pt)).collect();
                for (o, &mu) in out.iter_mut().zip(mus) {
                    let lw = mu * (xn / yn).ln();
                    let lb = kernel.log_bound(xn, yn, tau, mu, eps);
                    let f = parts.iter().map(|p| combine(p, lw, sub).abs()).fold(0.0, f64::max);
                    *o = if f == 0.0 { 0.0 } else { (f.ln() + pt.log_g() + exponent * tau.ln() - lb + sigma * rho2).exp() };
                }
            })
        },
    )?;
    Ok(best)
}

/// Fit every difference kernel at `spec` and at `spec.doubled()`.
/// Interior kernels must give finite constants; the quadrant kernels must
/// also be stable within `band` under the doubling.
pub fn difference_kernel_check(
    field: &CoefficientField,
    mus: &[f64],
    eps: f64,
    sigma: f64,
    spec: &HalfSampleSpec,
    band: f64,
) -> Result<ProbeReport> {
    let mut report = ProbeReport::new("difference-kernel", "difference-kernel");
    report.param("eps", eps).param("sigma", sigma).param("n", field.dim());
    let doubled = spec.doubled();
    for kernel in DifferenceKernel::ALL {
        let coarse = difference_kernel_fit(field, kernel, mus, eps, sigma, spec)?;
        let fine = difference_kernel_fit(field, kernel, mus, eps, sigma, &doubled)?;
        for (k, &mu) in mus.iter().enumerate() {
            let rule = if kernel.needs_interior() { Rule::Finite } else { Rule::Band { tol: band } };
            let name = format!("{}[mu={mu}]", kernel.tag());
            report.fit(name.clone(), fine[k]);
            report.push(Series::new(name, "fitted_constant", vec![0.0, 1.0], vec![coarse[k], fine[k]], rule));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel_halfspace::gamma_dirichlet_deriv;
    use crate::kernel_wholespace::{gamma_deriv, SampleSpec};
    use approx::assert_relative_eq;

    fn query(kernel: DifferenceKernel, mu: f64, x: Vec<f64>, y: Vec<f64>) -> DifferenceKernelQuery {
        DifferenceKernelQuery { kernel, mu, i: 0, j: 0, y_pair: (0, 0), x, y, t: 1.0, s: 0.0 }
    }

    #[test]
    fn unit_weight_is_plain_difference() {
        let f = CoefficientField::identity(2).unwrap();
        let (x, y) = (vec![0.2, 1.5], vec![0.0, 1.2]);
        let a = MultiIndex::pair(2, 0, 0);
        let z = MultiIndex::zero(2);
        let exact = gamma_dirichlet_deriv(&f, &a, &z, &x, &y, 1.0, 0.0).unwrap() - gamma_deriv(&f, &a, &z, &x, &y, 1.0, 0.0).unwrap();
        let v = difference_kernel_eval(&query(DifferenceKernel::CalGij, 0.0, x.clone(), y.clone()), &f).unwrap();
        assert_relative_eq!(v, exact, max_relative = 1e-10);
        let v = difference_kernel_eval(&query(DifferenceKernel::CalG, 0.0, x, y), &f).unwrap();
        assert_relative_eq!(v, exact, max_relative = 1e-10);
    }

    #[test]
    fn indicator_off_near_wall() {
        let f = CoefficientField::identity(2).unwrap();
        let (x, y) = (vec![0.2, 0.5], vec![0.0, 1.2]);
        let a = MultiIndex::pair(2, 0, 1);
        let z = MultiIndex::zero(2);
        let mu = 1.6;
        let exact = (0.5f64 / 1.2).powf(mu) * gamma_dirichlet_deriv(&f, &a, &z, &x, &y, 1.0, 0.0).unwrap();
        let q = DifferenceKernelQuery { j: 1, ..query(DifferenceKernel::CalGij, mu, x, y) };
        assert_relative_eq!(difference_kernel_eval(&q, &f).unwrap(), exact, max_relative = 1e-12);
    }

    #[test]
    fn interior_hypothesis_enforced() {
        let f = CoefficientField::identity(2).unwrap();
        let q = query(DifferenceKernel::CalG, 0.0, vec![0.0, 0.5], vec![0.0, 2.0]);
        assert!(matches!(difference_kernel_eval(&q, &f), Err(Error::Domain(_))));
    }

    #[test]
    fn tangential_calg_fit_is_finite() {
        let f = CoefficientField::identity(2).unwrap();
        let spec = HalfSampleSpec {
            base: SampleSpec { tau_count: 1, s_count: 1, ..SampleSpec::default() },
            normal_count: 9,
            ..Default::default()
        };
        let c = difference_kernel_fit(&f, DifferenceKernel::CalG, &[-0.3, 0.0, 1.0, 1.6], 0.1, 0.125, &spec).unwrap();
        assert!(c.iter().all(|v| v.is_finite() && *v > 0.0), "{c:?}");
    }
}
