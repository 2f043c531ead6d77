//! Dirichlet Green function `Γ^D` of the half space `{x_n > 0}`.
//!
//! For fields with `a^{in} = 0` (`i ≠ n`) the method of images applies:
//! `Γ^D(x,y) = Γ(x−y) − Γ(x−y*)` with `y* = (y′, −y_n)`. Since `B` is then
//! block diagonal, `Γ(x−y*) = Γ(x−y)·exp(−b x_n y_n)` with `b = (B⁻¹)_{nn}`,
//! and every derivative is `Γ(x−y)` times a difference of two Hermite
//! polynomials. Keeping that factorisation avoids cancellation at the wall
//! and lets bound fits work in log space.

pub mod difference;
pub mod local;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeffs::CoefficientField;
use crate::error::{Error, Result};
use crate::grid::Domain;
use crate::kernel_wholespace::{logspace, HermitePoly, MultiIndex, Powers, SampleSpec, WholeKernel, DIVERGENCE_THRESHOLD, MAX_ORDER};
use crate::solver::{delta_propagation, PropagatedKernel};

/// Default `ε` in the boundary exponents.
pub const DEFAULT_EPS: f64 = 0.1;
/// Default refinement level of the numeric kernel.
pub const NUMERIC_LEVEL: u32 = 2;

/// How `Γ^D` is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum Method {
    Images,
    /// Finite-difference propagation of a narrow Gaussian (see [`delta_propagation`]).
    Numeric { level: u32 },
}

/// `ℛ_x`, `ℛ_y` and the `ε` of the decay exponents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFactors {
    pub rx: f64,
    pub ry: f64,
    pub eps: f64,
}

/// `x_n / (x_n + √τ)`.
pub fn boundary_factor(xn: f64, tau: f64) -> f64 {
    xn / (xn + tau.sqrt())
}

/// Exponent of `ℛ` for a normal derivative order `k`: `1 − k` for `k ≤ 1`,
/// `2 − k − ε` otherwise.
pub fn boundary_exponent(k: usize, eps: f64) -> f64 {
    if k <= 1 {
        1.0 - k as f64
    } else {
        2.0 - k as f64 - eps
    }
}

impl BoundaryFactors {
    pub fn new(xn: f64, yn: f64, tau: f64, eps: f64) -> Self {
        Self { rx: boundary_factor(xn, tau), ry: boundary_factor(yn, tau), eps }
    }

    /// `ℛ_x^{p(α_n)} ℛ_y^{p(β_n)}`.
    pub fn weight(&self, alpha: &MultiIndex, beta: &MultiIndex) -> f64 {
        self.rx.powf(boundary_exponent(alpha.normal(), self.eps)) * self.ry.powf(boundary_exponent(beta.normal(), self.eps))
    }
}

/// A derivative of `Γ^D` prepared for repeated evaluation: a signed sum of
/// Hermite polynomials, each carrying the parity its image term picks up.
#[derive(Debug, Clone)]
pub struct Derivative {
    terms: Vec<(f64, HermitePoly, f64)>,
}

/// `D Γ = e^{log_g}·direct` and `D Γ^D = e^{log_g}(direct − image·e^{−c})`.
#[derive(Debug, Clone, Copy)]
pub struct Parts {
    pub direct: f64,
    pub image: f64,
    pub log_g: f64,
    pub c: f64,
}

impl Parts {
    /// `direct − image·e^{−c}`, accurate when `c` is small.
    pub fn dirichlet_factor(&self) -> f64 {
        (self.direct - self.image) - self.image * (-self.c).exp_m1()
    }

    pub fn dirichlet(&self) -> f64 {
        self.dirichlet_factor() * self.log_g.exp()
    }

    pub fn whole(&self) -> f64 {
        self.direct * self.log_g.exp()
    }
}

/// `Γ^D(·;t,s)` by images, for a fixed pair of times.
#[derive(Debug, Clone)]
pub struct HalfKernel {
    whole: WholeKernel,
    a_s: DMatrix<f64>,
    n: usize,
}

fn check_points(x: &[f64], y: &[f64], n: usize) -> Result<()> {
    if x.len() != n || y.len() != n {
        return Err(Error::Structural(format!("points must have {n} coordinates")));
    }
    if !(y[n - 1] > 0.0) {
        return Err(Error::Domain(format!("source must satisfy y_n > 0, got {}", y[n - 1])));
    }
    if !(x[n - 1] >= 0.0) {
        return Err(Error::Domain(format!("target must satisfy x_n >= 0, got {}", x[n - 1])));
    }
    Ok(())
}

impl HalfKernel {
    pub fn new(field: &CoefficientField, t: f64, s: f64) -> Result<Self> {
        if !field.is_reflection_compatible() {
            return Err(Error::Capability("method of images needs a^{in} = 0 for i != n".into()));
        }
        Ok(Self { whole: WholeKernel::new(field, t, s)?, a_s: field.at(s).clone(), n: field.dim() })
    }

    pub fn whole(&self) -> &WholeKernel {
        &self.whole
    }

    pub fn tau(&self) -> f64 {
        self.whole.tau()
    }

    fn c(&self, x: &[f64], y: &[f64]) -> f64 {
        let last = self.n - 1;
        self.whole.inv_entry(last, last) * x[last] * y[last]
    }

    /// `Γ^D(x, y)`.
    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        let z: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        -self.whole.value(&z) * (-self.c(x, y)).exp_m1()
    }

    /// `D_x^α D_y^β Γ^D`, or `∂_s D_x^α D_y^β Γ^D` when `ds` is set.
    pub fn derivative(&self, alpha: &MultiIndex, beta: &MultiIndex, ds: bool) -> Result<Derivative> {
        let n = self.n;
        if alpha.dim() != n || beta.dim() != n {
            return Err(Error::Structural(format!("multi-indices must have dimension {n}")));
        }
        let order = alpha.order() + beta.order() + if ds { 2 } else { 0 };
        if order > MAX_ORDER {
            return Err(Error::Capability(format!("derivative order {order} exceeds supported order {MAX_ORDER}")));
        }
        // (coefficient, y multi-index) pairs; ∂_s = −a^{kl}(s) D_{y_k} D_{y_l}
        let ys: Vec<(f64, MultiIndex)> = if ds {
            let mut v = Vec::new();
            for k in 0..n {
                for l in 0..n {
                    if self.a_s[(k, l)] != 0.0 {
                        v.push((-self.a_s[(k, l)], beta.plus(&MultiIndex::pair(n, k, l))));
                    }
                }
            }
            v
        } else {
            vec![(1.0, beta.clone())]
        };
        let terms = ys
            .into_iter()
            .map(|(coef, b)| {
                let sign = if b.order() % 2 == 0 { 1.0 } else { -1.0 };
                let image = if b.normal() % 2 == 0 { 1.0 } else { -1.0 };
                (coef * sign, self.whole.poly(&alpha.plus(&b)), image)
            })
            .collect();
        Ok(Derivative { terms })
    }

    /// Point data shared by every derivative at `(x, y)`.
    pub fn point(&self, x: &[f64], y: &[f64]) -> Point {
        let last = self.n - 1;
        let z: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        let mut zs = z.clone();
        zs[last] = x[last] + y[last];
        Point { v: Powers::new(&self.whole.v(&z)), vs: Powers::new(&self.whole.v(&zs)), log_g: self.whole.log_value(&z), c: self.c(x, y) }
    }

    pub fn parts(&self, d: &Derivative, x: &[f64], y: &[f64]) -> Parts {
        d.parts(&self.point(x, y))
    }
}

/// `v` at `x − y` and at `x − y*`, plus `log Γ(x − y)` and `c`.
#[derive(Debug, Clone)]
pub struct Point {
    v: Powers,
    vs: Powers,
    log_g: f64,
    c: f64,
}

impl Point {
    pub fn log_g(&self) -> f64 {
        self.log_g
    }
}

impl Derivative {
    pub fn parts(&self, pt: &Point) -> Parts {
        let (mut direct, mut image) = (0.0, 0.0);
        for (coef, poly, parity) in &self.terms {
            direct += coef * poly.eval_powers(&pt.v);
            image += coef * parity * poly.eval_powers(&pt.vs);
        }
        Parts { direct, image, log_g: pt.log_g, c: pt.c }
    }
}

/// Finite-difference `Γ^D(·, y; t, s)` on a half-space lattice.
pub fn numeric_kernel(field: &CoefficientField, y: &[f64], s: f64, t: f64, level: u32) -> Result<PropagatedKernel> {
    delta_propagation(field, Domain::HalfSpace, y, s, t, level)
}

/// `Γ^D(x,y;t,s)`; zero for `t <= s`.
pub fn gamma_dirichlet(field: &CoefficientField, x: &[f64], y: &[f64], t: f64, s: f64, method: Method) -> Result<f64> {
    check_points(x, y, field.dim())?;
    if !(t > s) {
        return Ok(0.0);
    }
    match method {
        Method::Images => Ok(HalfKernel::new(field, t, s)?.value(x, y)),
        Method::Numeric { level } => Ok(numeric_kernel(field, y, s, t, level)?.value_at(x)),
    }
}

/// `D_x^α D_y^β Γ^D(x,y;t,s)` by images; zero for `t <= s`.
pub fn gamma_dirichlet_deriv(
    field: &CoefficientField,
    alpha: &MultiIndex,
    beta: &MultiIndex,
    x: &[f64],
    y: &[f64],
    t: f64,
    s: f64,
) -> Result<f64> {
    check_points(x, y, field.dim())?;
    if !field.is_reflection_compatible() {
        return Err(Error::Capability("method of images needs a^{in} = 0 for i != n".into()));
    }
    if !(t > s) {
        return Ok(0.0);
    }
    let k = HalfKernel::new(field, t, s)?;
    let d = k.derivative(alpha, beta, false)?;
    Ok(k.parts(&d, x, y).dirichlet())
}

/// `∂_s D_x^α D_y^β Γ^D(x,y;t,s) = −a^{kl}(s) D_x^α D_y^{β+e_k+e_l} Γ^D`.
pub fn gamma_dirichlet_deriv_ds(
    field: &CoefficientField,
    alpha: &MultiIndex,
    beta: &MultiIndex,
    x: &[f64],
    y: &[f64],
    t: f64,
    s: f64,
) -> Result<f64> {
    check_points(x, y, field.dim())?;
    if !(t > s) {
        return Ok(0.0);
    }
    let k = HalfKernel::new(field, t, s)?;
    let d = k.derivative(alpha, beta, true)?;
    Ok(k.parts(&d, x, y).dirichlet())
}

/// Least-squares slope of `log|D_x^α D_y^β Γ^D|` against `log x_n` for
/// `x_n / √τ` in `[10⁻⁴, 10⁻²]`, with `x′ = y′`.
pub fn boundary_slope(
    field: &CoefficientField,
    alpha: &MultiIndex,
    beta: &MultiIndex,
    y: &[f64],
    t: f64,
    s: f64,
) -> Result<f64> {
    let k = HalfKernel::new(field, t, s)?;
    check_points(y, y, field.dim())?;
    let d = k.derivative(alpha, beta, false)?;
    let last = field.dim() - 1;
    let pts: Vec<(f64, f64)> = logspace(1e-4, 1e-2, 9)
        .into_iter()
        .map(|r| {
            let mut x = y.to_vec();
            x[last] = r * k.tau().sqrt();
            let p = k.parts(&d, &x, y);
            (x[last].ln(), p.dirichlet_factor().abs().ln() + p.log_g)
        })
        .collect();
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (u, v)| (a + u, b + v));
    let (mx, my) = (sx / m, sy / m);
    let (num, den) = pts.iter().fold((0.0, 0.0), |(a, b), (u, v)| (a + (u - mx) * (v - my), b + (u - mx) * (u - mx)));
    Ok(num / den)
}

// ─── bound fits ─────────────────────────────────────────────────────────

/// Sample lattice for half-space fits: times from `base`; normal
/// coordinates `x_n/√τ`, `y_n/√τ` log-spaced on `[normal_min, normal_max]`
/// and, to resolve the Gaussian regime, also uniformly spaced on
/// `(0, linear_max]`; tangential separations `|x′ − y′|/√τ` on
/// `[0, tangential_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HalfSampleSpec {
    pub base: SampleSpec,
    pub normal_min: f64,
    pub normal_max: f64,
    pub normal_count: usize,
    pub linear_max: f64,
    pub linear_count: usize,
    pub tangential_max: f64,
    pub tangential_count: usize,
}

impl Default for HalfSampleSpec {
    fn default() -> Self {
        Self {
            base: SampleSpec { directions: 2, ..SampleSpec::default() },
            normal_min: 1e-3,
            normal_max: 1e3,
            normal_count: 25,
            linear_max: 12.0,
            linear_count: 24,
            tangential_max: 12.0,
            tangential_count: 25,
        }
    }
}

impl HalfSampleSpec {
    pub fn doubled(&self) -> Self {
        Self {
            base: self.base.doubled(),
            normal_count: crate::kernel_wholespace::doubled_count(self.normal_count),
            linear_count: 2 * self.linear_count,
            tangential_count: crate::kernel_wholespace::doubled_count(self.tangential_count),
            ..self.clone()
        }
    }

    pub fn with_normal_range(mut self, lo: f64, hi: f64) -> Self {
        self.normal_min = lo;
        self.normal_max = hi;
        self
    }

    pub fn normals(&self) -> Vec<f64> {
        let step = self.linear_max / self.linear_count.max(1) as f64;
        let linear = (1..=self.linear_count).map(|k| k as f64 * step);
        let mut v: Vec<f64> = logspace(self.normal_min, self.normal_max, self.normal_count)
            .into_iter()
            .chain(linear)
            .filter(|&x| x >= self.normal_min && x <= self.normal_max)
            .collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    /// Tangential offsets (unit-`√τ` vectors of dimension `n − 1`).
    pub fn tangentials(&self, n: usize) -> Vec<Vec<f64>> {
        if n == 1 {
            return vec![vec![]];
        }
        let rhos = crate::kernel_wholespace::linspace(0.0, self.tangential_max, self.tangential_count);
        let dirs = if n == 2 { vec![vec![1.0]] } else { self.base.unit_directions(n - 1) };
        let mut out = Vec::new();
        for &r in &rhos {
            for d in &dirs {
                out.push(d.iter().map(|c| c * r).collect());
                if r == 0.0 {
                    break;
                }
            }
        }
        out
    }
}

/// One sample geometry in units of `√τ`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Scaled<'a> {
    pub xn: f64,
    pub yn: f64,
    pub tangential: &'a [f64],
}

/// Running maxima of `eval` over every `(s, τ)` pair and scaled geometry
/// accepted by `keep`. `setup` builds the per-pair evaluator; `eval` writes
/// one ratio per output slot.
pub(crate) fn sweep<S, E>(
    field: &CoefficientField,
    spec: &HalfSampleSpec,
    slots: usize,
    keep: impl Fn(f64, f64) -> bool + Sync,
    setup: S,
) -> Result<(Vec<f64>, usize)>
where
    S: Fn(f64, f64) -> Result<E> + Sync,
    E: Fn(&[f64], &[f64], f64, &mut [f64]),
{
    let n = field.dim();
    let normals = spec.normals();
    let tangentials = spec.tangentials(n);
    let mut pairs = Vec::new();
    for &s in &spec.base.starts() {
        for &tau in &spec.base.taus() {
            pairs.push((s, tau));
        }
    }
    let geoms: Vec<Scaled> = normals
        .iter()
        .flat_map(|&xn| normals.iter().map(move |&yn| (xn, yn)))
        .filter(|&(xn, yn)| keep(xn, yn))
        .flat_map(|(xn, yn)| tangentials.iter().map(move |t| Scaled { xn, yn, tangential: t }))
        .collect();
    let per_pair: Vec<Result<Vec<f64>>> = pairs
        .par_iter()
        .map(|&(s, tau)| {
            let eval = setup(s, tau)?;
            let r = tau.sqrt();
            let mut best = vec![0.0f64; slots];
            let mut cur = vec![0.0f64; slots];
            let mut x = vec![0.0; n];
            let mut y = vec![0.0; n];
            for g in &geoms {
                for (k, c) in g.tangential.iter().enumerate() {
                    x[k] = c * r;
                }
                x[n - 1] = g.xn * r;
                y[n - 1] = g.yn * r;
                eval(&x, &y, tau, &mut cur);
                for (b, c) in best.iter_mut().zip(&cur) {
                    // NaN propagates so a broken evaluation cannot hide
                    if c.is_nan() || *c > *b {
                        *b = *c;
                    }
                }
            }
            Ok(best)
        })
        .collect();
    let mut out = vec![0.0f64; slots];
    for r in per_pair {
        for (o, v) in out.iter_mut().zip(r?) {
            if v.is_nan() || v > *o {
                *o = v;
            }
        }
    }
    Ok((out, pairs.len() * geoms.len()))
}

/// Sample region of a half-space fit. `Quadrant` carries the `ℛ` factors;
/// the others are the unweighted regions, with `√(τ/8)` as the distance
/// threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Quadrant,
    /// `x_n, y_n ≥ √(τ/8)`, any orders.
    AwayBoth,
    /// `α_n ≤ 1`, `β_n ≤ 1`, anywhere.
    LowNormal,
    /// `α_n ≤ 1`, `y_n ≥ √(τ/8)`.
    AwayY,
    /// `β_n ≤ 1`, `x_n ≥ √(τ/8)`.
    AwayX,
}

impl Region {
    pub const UNWEIGHTED: [Region; 4] = [Region::AwayBoth, Region::LowNormal, Region::AwayY, Region::AwayX];

    /// Whether `(α, β)` satisfies the region's order restriction.
    pub fn admits(self, alpha: &MultiIndex, beta: &MultiIndex) -> bool {
        match self {
            Region::Quadrant | Region::AwayBoth => true,
            Region::LowNormal => alpha.normal() <= 1 && beta.normal() <= 1,
            Region::AwayY => alpha.normal() <= 1,
            Region::AwayX => beta.normal() <= 1,
        }
    }

    fn keeps(self, xn: f64, yn: f64) -> bool {
        let d = (0.125f64).sqrt();
        match self {
            Region::Quadrant | Region::LowNormal => true,
            Region::AwayBoth => xn >= d && yn >= d,
            Region::AwayY => yn >= d,
            Region::AwayX => xn >= d,
        }
    }
}

/// Fitted `C` in `|D^αD^βΓ^D| ≤ C ℛ_x^{p(α_n)} ℛ_y^{p(β_n)} τ^{−(n+|α|+|β|)/2} e^{−σ|x−y|²/τ}`
/// (no `ℛ` factors outside [`Region::Quadrant`]).
#[derive(Debug, Clone, Serialize)]
pub struct HalfBoundFit {
    pub alpha: MultiIndex,
    pub beta: MultiIndex,
    pub sigma: f64,
    pub eps: f64,
    pub region: Region,
    pub constant: f64,
    pub bounded: bool,
    pub samples: usize,
}

pub fn bound_fit_half(
    field: &CoefficientField,
    alpha: &MultiIndex,
    beta: &MultiIndex,
    eps: f64,
    sigma: f64,
    region: Region,
    spec: &HalfSampleSpec,
) -> Result<HalfBoundFit> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    if !(eps > 0.0 && eps <= 0.5) {
        return Err(Error::Domain(format!("eps must lie in (0, 1/2], got {eps}")));
    }
    if !region.admits(alpha, beta) {
        return Err(Error::Domain(format!("region {region:?} does not admit alpha = {alpha}, beta = {beta}")));
    }
    let n = field.dim();
    let exponent = (n + alpha.order() + beta.order()) as f64 / 2.0;
    let (pa, pb) = match region {
        Region::Quadrant => (boundary_exponent(alpha.normal(), eps), boundary_exponent(beta.normal(), eps)),
        _ => (0.0, 0.0),
    };
    let (best, samples) = sweep(
        field,
        spec,
        1,
        |xn, yn| region.keeps(xn, yn),
        |s, tau| {
            let k = HalfKernel::new(field, s + tau, s)?;
            let d = k.derivative(alpha, beta, false)?;
            Ok(move |x: &[f64], y: &[f64], tau: f64, out: &mut [f64]| {
                let p = k.parts(&d, x, y);
                let f = p.dirichlet_factor();
                out[0] = if f == 0.0 {
                    0.0
                } else {
                    let rho2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / tau;
                    let lr = pa * boundary_factor(x[n - 1], tau).ln() + pb * boundary_factor(y[n - 1], tau).ln();
                    (f.abs().ln() + p.log_g + exponent * tau.ln() - lr + sigma * rho2).exp()
                };
            })
        },
    )?;
    let constant = best[0];
    Ok(HalfBoundFit {
        alpha: alpha.clone(),
        beta: beta.clone(),
        sigma,
        eps,
        region,
        constant,
        bounded: constant.is_finite() && constant <= DIVERGENCE_THRESHOLD,
        samples,
    })
}
