//! Closed-form whole-space Green function
//! `Γ(x,y;t,s) = (4π)^{-n/2} det(B)^{-1/2} exp(-¼⟨B⁻¹(x−y), x−y⟩)`, its
//! derivatives, and empirical fits of Gaussian upper bounds.
//!
//! Derivatives use the polynomial recursion `D^{γ+e_i}Γ = (v_i P_γ + ∂_i P_γ)Γ`
//! with `v = −½B⁻¹(x−y)`, so `P_γ` is a polynomial in `v` whose derivatives
//! only involve the constant matrix `M = ½B⁻¹`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeffs::{AccumulatedDiffusion, CoefficientField};
use crate::error::{Error, Result};

/// Highest total derivative order `|α| + |β|` supported by the recursion.
pub const MAX_ORDER: usize = 4;

/// Running supremum above which a bound fit is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e30;

/// A multi-index `α = (α_1, …, α_n)`; the last component is the normal one.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct MultiIndex(Vec<usize>);

impl MultiIndex {
    pub fn new(components: Vec<usize>) -> Self {
        Self(components)
    }

    pub fn zero(n: usize) -> Self {
        Self(vec![0; n])
    }

    pub fn unit(n: usize, i: usize) -> Self {
        let mut v = vec![0; n];
        v[i] = 1;
        Self(v)
    }

    /// `e_i + e_j`.
    pub fn pair(n: usize, i: usize, j: usize) -> Self {
        let mut v = vec![0; n];
        v[i] += 1;
        v[j] += 1;
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &[usize] {
        &self.0
    }

    /// `|α|`.
    pub fn order(&self) -> usize {
        self.0.iter().sum()
    }

    /// `α_n`, the order in the normal direction.
    pub fn normal(&self) -> usize {
        *self.0.last().unwrap_or(&0)
    }

    pub fn plus(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// All multi-indices of dimension `n` and total order exactly `k`.
    pub fn all_of_order(n: usize, k: usize) -> Vec<Self> {
        fn rec(n: usize, k: usize, prefix: &mut Vec<usize>, out: &mut Vec<MultiIndex>) {
            if prefix.len() == n - 1 {
                prefix.push(k);
                out.push(MultiIndex(prefix.clone()));
                prefix.pop();
                return;
            }
            for a in (0..=k).rev() {
                prefix.push(a);
                rec(n, k - a, prefix, out);
                prefix.pop();
            }
        }
        let mut out = Vec::new();
        rec(n, k, &mut Vec::new(), &mut out);
        out
    }
}

impl std::fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|c| c.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Polynomial in the variables `v_1, …, v_n`, stored as exponent → coefficient.
#[derive(Debug, Clone)]
pub struct HermitePoly {
    terms: Vec<(Vec<u8>, f64)>,
}

impl HermitePoly {
    /// `P_γ` for the derivative `D_z^γ` of `exp(−½⟨Mz, z⟩)`, with `M = ½B⁻¹`.
    fn build(gamma: &[usize], m: &[f64], n: usize) -> Self {
        let mut p: BTreeMap<Vec<u8>, f64> = BTreeMap::new();
        p.insert(vec![0; n], 1.0);
        for (i, &count) in gamma.iter().enumerate() {
            for _ in 0..count {
                let mut next: BTreeMap<Vec<u8>, f64> = BTreeMap::new();
                for (e, &c) in &p {
                    // v_i * term
                    let mut up = e.clone();
                    up[i] += 1;
                    *next.entry(up).or_insert(0.0) += c;
                    // ∂_i term, with ∂_i v_j = −M_{ji}
                    for j in 0..n {
                        if e[j] > 0 && m[j * n + i] != 0.0 {
                            let mut down = e.clone();
                            down[j] -= 1;
                            *next.entry(down).or_insert(0.0) -= c * e[j] as f64 * m[j * n + i];
                        }
                    }
                }
                next.retain(|_, c| *c != 0.0);
                p = next;
            }
        }
        Self { terms: p.into_iter().collect() }
    }

    /// Value from a precomputed power table.
    pub fn eval_powers(&self, p: &Powers) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| e.iter().zip(&p.0).fold(*c, |acc, (&k, row)| acc * row[k as usize]))
            .sum()
    }

    /// Value at `v`.
    pub fn eval(&self, v: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| e.iter().zip(v).fold(*c, |acc, (&k, &vi)| acc * vi.powi(k as i32)))
            .sum()
    }
}

/// `v_i^k` for `k <= MAX_ORDER`, shared by every polynomial evaluated at `v`.
#[derive(Debug, Clone)]
pub struct Powers(Vec<[f64; MAX_ORDER + 1]>);

impl Powers {
    pub fn new(v: &[f64]) -> Self {
        Self(
            v.iter()
                .map(|&x| {
                    let mut row = [1.0; MAX_ORDER + 1];
                    for k in 1..=MAX_ORDER {
                        row[k] = row[k - 1] * x;
                    }
                    row
                })
                .collect(),
        )
    }
}

/// `Γ(·;t,s)` for a fixed pair of times, ready for repeated evaluation in `z = x − y`.
#[derive(Debug, Clone)]
pub struct WholeKernel {
    n: usize,
    inv: Vec<f64>,
    half_inv: Vec<f64>,
    prefactor: f64,
    tau: f64,
}

impl WholeKernel {
    pub fn new(field: &CoefficientField, t: f64, s: f64) -> Result<Self> {
        Ok(Self::from_accumulated(&field.accumulate(s, t)?))
    }

    pub fn from_accumulated(acc: &AccumulatedDiffusion) -> Self {
        let n = acc.dim();
        let inv: Vec<f64> = (0..n * n).map(|k| acc.inv[(k / n, k % n)]).collect();
        let half_inv = inv.iter().map(|v| 0.5 * v).collect();
        let prefactor = (4.0 * PI).powf(-(n as f64) / 2.0) / acc.det.sqrt();
        Self { n, inv, half_inv, prefactor, tau: acc.t - acc.s }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `t − s`.
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Entry `(i, j)` of `B⁻¹`.
    pub fn inv_entry(&self, i: usize, j: usize) -> f64 {
        self.inv[i * self.n + j]
    }

    fn quad(&self, z: &[f64]) -> f64 {
        let n = self.n;
        let mut q = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += self.inv[i * n + j] * z[j];
            }
            q += row * z[i];
        }
        q
    }

    /// `Γ` at `z = x − y`.
    pub fn value(&self, z: &[f64]) -> f64 {
        self.prefactor * (-0.25 * self.quad(z)).exp()
    }

    /// `log Γ` at `z`, finite even where `Γ` underflows.
    pub fn log_value(&self, z: &[f64]) -> f64 {
        self.prefactor.ln() - 0.25 * self.quad(z)
    }

    /// `v = −½B⁻¹z`, the argument of the Hermite polynomials.
    pub fn v(&self, z: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n).map(|i| -(0..n).map(|j| self.half_inv[i * n + j] * z[j]).sum::<f64>()).collect()
    }

    /// Polynomial factor `P_γ` such that `D_z^γ Γ = P_γ(v) Γ`.
    pub fn poly(&self, gamma: &MultiIndex) -> HermitePoly {
        HermitePoly::build(gamma.components(), &self.half_inv, self.n)
    }

    /// `D_z^γ Γ(z)` using a prebuilt polynomial.
    pub fn deriv_with(&self, poly: &HermitePoly, z: &[f64]) -> f64 {
        poly.eval(&self.v(z)) * self.value(z)
    }

    /// `(P_γ(v), log Γ)` so callers can combine in log space.
    pub fn deriv_log_parts(&self, poly: &HermitePoly, z: &[f64]) -> (f64, f64) {
        (poly.eval(&self.v(z)), self.log_value(z))
    }

    /// `D_z^γ Γ(z)`.
    pub fn deriv(&self, gamma: &MultiIndex, z: &[f64]) -> f64 {
        self.deriv_with(&self.poly(gamma), z)
    }

    /// `D_{z_i} D_{z_j} Γ = (v_i v_j − M_{ij}) Γ`.
    pub fn d2(&self, i: usize, j: usize, z: &[f64]) -> f64 {
        let v = self.v(z);
        (v[i] * v[j] - self.half_inv[i * self.n + j]) * self.value(z)
    }
}

fn check_order(alpha: &MultiIndex, beta: &MultiIndex, n: usize) -> Result<()> {
    if alpha.dim() != n || beta.dim() != n {
        return Err(Error::Structural(format!("multi-indices must have dimension {n}")));
    }
    let k = alpha.order() + beta.order();
    if k > MAX_ORDER {
        return Err(Error::Capability(format!("derivative order {k} exceeds supported order {MAX_ORDER}")));
    }
    Ok(())
}

fn diff(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

/// `Γ(x,y;t,s)`; exactly zero for `t <= s`.
pub fn gamma(field: &CoefficientField, x: &[f64], y: &[f64], t: f64, s: f64) -> Result<f64> {
    if !(t > s) {
        return Ok(0.0);
    }
    Ok(WholeKernel::new(field, t, s)?.value(&diff(x, y)))
}

/// `D_x^α D_y^β Γ(x,y;t,s) = (−1)^{|β|} D^{α+β}Γ`; zero for `t <= s`.
pub fn gamma_deriv(
    field: &CoefficientField,
    alpha: &MultiIndex,
    beta: &MultiIndex,
    x: &[f64],
    y: &[f64],
    t: f64,
    s: f64,
) -> Result<f64> {
    check_order(alpha, beta, field.dim())?;
    if !(t > s) {
        return Ok(0.0);
    }
    let k = WholeKernel::new(field, t, s)?;
    let sign = if beta.order() % 2 == 0 { 1.0 } else { -1.0 };
    Ok(sign * k.deriv(&alpha.plus(beta), &diff(x, y)))
}

/// `Σ_{kl} a^{kl} D^{γ + e_k + e_l}Γ(z)` for a given coefficient matrix.
fn contract(k: &WholeKernel, a: &nalgebra::DMatrix<f64>, gamma: &MultiIndex, z: &[f64]) -> f64 {
    let n = k.dim();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let aij = a[(i, j)];
            if aij != 0.0 {
                acc += aij * k.deriv(&gamma.plus(&MultiIndex::pair(n, i, j)), z);
            }
        }
    }
    acc
}

/// `∂_s Γ = −a^{ij}(s) D_{y_i} D_{y_j} Γ`, with `A(s)` taken from the interval
/// on the left of `s` when `s` is a breakpoint.
pub fn gamma_ds(field: &CoefficientField, x: &[f64], y: &[f64], t: f64, s: f64) -> Result<f64> {
    gamma_deriv_ds(field, &MultiIndex::zero(field.dim()), &MultiIndex::zero(field.dim()), x, y, t, s)
}

/// `∂_t Γ = a^{ij}(t) D_{x_i} D_{x_j} Γ`.
pub fn gamma_dt(field: &CoefficientField, x: &[f64], y: &[f64], t: f64, s: f64) -> Result<f64> {
    gamma_deriv_dt(field, &MultiIndex::zero(field.dim()), &MultiIndex::zero(field.dim()), x, y, t, s)
}

/// `∂_s D_x^α D_y^β Γ`; requires `|α| + |β| + 2 <= 4`.
pub fn gamma_deriv_ds(
    field: &CoefficientField,
    alpha: &MultiIndex,
    beta: &MultiIndex,
    x: &[f64],
    y: &[f64],
    t: f64,
    s: f64,
) -> Result<f64> {
    let n = field.dim();
    check_order(&alpha.plus(&MultiIndex::pair(n, 0, 0)), beta, n)?;
    if !(t > s) {
        return Ok(0.0);
    }
    let k = WholeKernel::new(field, t, s)?;
    // D_y^β D_{y_k} D_{y_l} contributes (−1)^{|β|} and the y-pair is even.
    let sign = if beta.order() % 2 == 0 { -1.0 } else { 1.0 };
    Ok(sign * contract(&k, field.at(s), &alpha.plus(beta), &diff(x, y)))
}

/// `∂_t D_x^α D_y^β Γ`; requires `|α| + |β| + 2 <= 4`.
pub fn gamma_deriv_dt(
    field: &CoefficientField,
    alpha: &MultiIndex,
    beta: &MultiIndex,
    x: &[f64],
    y: &[f64],
    t: f64,
    s: f64,
) -> Result<f64> {
    let n = field.dim();
    check_order(&alpha.plus(&MultiIndex::pair(n, 0, 0)), beta, n)?;
    if !(t > s) {
        return Ok(0.0);
    }
    let k = WholeKernel::new(field, t, s)?;
    let sign = if beta.order() % 2 == 0 { 1.0 } else { -1.0 };
    Ok(sign * contract(&k, field.at(t), &alpha.plus(beta), &diff(x, y)))
}

// ─── verification helpers ───────────────────────────────────────────────

/// Tensor trapezoid rule on the cube `center ± radius` with `points` nodes per axis.
pub fn trapezoid_cube<F>(n: usize, center: &[f64], radius: f64, points: usize, f: F) -> f64
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let h = 2.0 * radius / (points - 1) as f64;
    let total = points.pow(n as u32);
    let partial: Vec<f64> = (0..total)
        .into_par_iter()
        .with_min_len(1024)
        .map(|idx| {
            let mut z = vec![0.0; n];
            let mut w = 1.0;
            let mut rem = idx;
            for (k, zk) in z.iter_mut().enumerate() {
                let i = rem % points;
                rem /= points;
                *zk = center[k] - radius + i as f64 * h;
                if i == 0 || i == points - 1 {
                    w *= 0.5;
                }
            }
            w * f(&z)
        })
        .collect();
    partial.iter().sum::<f64>() * h.powi(n as i32)
}

/// Quadrature nodes per axis used by the normalization and semigroup checks.
pub const CHECK_POINTS_PER_AXIS: usize = 1 << 7;

/// `∫ Γ(x,y;t,s) dy` on the cube of radius `12√(ν⁻¹(t−s))` around `x`
/// (at least `8.4` standard deviations in every direction).
pub fn normalization(field: &CoefficientField, x: &[f64], t: f64, s: f64) -> Result<f64> {
    let k = WholeKernel::new(field, t, s)?;
    let radius = 12.0 * ((t - s) / field.nu()).sqrt();
    Ok(trapezoid_cube(field.dim(), x, radius, CHECK_POINTS_PER_AXIS, |y| k.value(&diff(x, y))))
}

/// `∫ Γ(x,z;t,r) Γ(z,y;r,s) dz` on a cube around the midpoint of `x` and `y`.
pub fn chapman_kolmogorov(field: &CoefficientField, x: &[f64], y: &[f64], t: f64, r: f64, s: f64) -> Result<f64> {
    let k1 = WholeKernel::new(field, t, r)?;
    let k2 = WholeKernel::new(field, r, s)?;
    let center: Vec<f64> = x.iter().zip(y).map(|(a, b)| 0.5 * (a + b)).collect();
    let spread = x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let radius = 12.0 * ((t - s) / field.nu()).sqrt() + 0.5 * spread;
    Ok(trapezoid_cube(field.dim(), &center, radius, CHECK_POINTS_PER_AXIS, |z| {
        k1.value(&diff(x, z)) * k2.value(&diff(z, y))
    }))
}

/// Closed-form `D_x^α D_y^β Γ` against a central difference (step `h·√(t−s)`)
/// of the closed form one order lower. Returns `(closed, fd, scaled error)`;
/// the error is relative to `max(|closed|, 10⁻²(t−s)^{−(n+|α|+|β|)/2})`.
pub fn derivative_fd_check(
    field: &CoefficientField,
    alpha: &MultiIndex,
    beta: &MultiIndex,
    x: &[f64],
    y: &[f64],
    t: f64,
    s: f64,
    h: f64,
) -> Result<(f64, f64, f64)> {
    let closed = gamma_deriv(field, alpha, beta, x, y, t, s)?;
    let n = field.dim();
    let step = h * (t - s).sqrt();
    let (lower_a, lower_b, dir, on_x) = if let Some(i) = alpha.components().iter().position(|&a| a > 0) {
        let mut a = alpha.components().to_vec();
        a[i] -= 1;
        (MultiIndex::new(a), beta.clone(), i, true)
    } else if let Some(i) = beta.components().iter().position(|&b| b > 0) {
        let mut b = beta.components().to_vec();
        b[i] -= 1;
        (alpha.clone(), MultiIndex::new(b), i, false)
    } else {
        // zero order: compare with gamma itself
        let g = gamma(field, x, y, t, s)?;
        return Ok((closed, g, (closed - g).abs() / closed.abs().max(f64::MIN_POSITIVE)));
    };
    let shifted = |delta: f64| -> Result<f64> {
        let mut xs = x.to_vec();
        let mut ys = y.to_vec();
        if on_x {
            xs[dir] += delta;
        } else {
            ys[dir] += delta;
        }
        gamma_deriv(field, &lower_a, &lower_b, &xs, &ys, t, s)
    };
    let fd = (shifted(step)? - shifted(-step)?) / (2.0 * step);
    let order = alpha.order() + beta.order();
    let scale = closed.abs().max(1e-2 * (t - s).powf(-((n + order) as f64) / 2.0));
    Ok((closed, fd, (closed - fd).abs() / scale))
}

/// Scaled residual `|∂_tΓ − a^{ij}(t)D_iD_jΓ| · (t−s)^{(n+2)/2}` where `∂_tΓ`
/// is a Richardson-extrapolated central difference of the closed form in `t`.
/// `t` must lie strictly between breakpoints, at distance above `4k`.
pub fn pde_residual(field: &CoefficientField, x: &[f64], y: &[f64], t: f64, s: f64, k: f64) -> Result<f64> {
    let g = |tt: f64| gamma(field, x, y, tt, s);
    let c1 = (g(t + k)? - g(t - k)?) / (2.0 * k);
    let c2 = (g(t + 2.0 * k)? - g(t - 2.0 * k)?) / (4.0 * k);
    let dt = (4.0 * c1 - c2) / 3.0;
    let n = field.dim();
    let kern = WholeKernel::new(field, t, s)?;
    let z = diff(x, y);
    let a = field.at(t);
    let mut rhs = 0.0;
    for i in 0..n {
        for j in 0..n {
            rhs += a[(i, j)] * kern.d2(i, j, &z);
        }
    }
    Ok((dt - rhs).abs() * (t - s).powf((n as f64 + 2.0) / 2.0))
}

// ─── Gaussian bound fits ────────────────────────────────────────────────

/// Lattice of sample geometries for bound fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSpec {
    /// `t − s` log-spaced on `[tau_min, tau_max]`.
    pub tau_min: f64,
    pub tau_max: f64,
    pub tau_count: usize,
    /// `|x − y| / √(t−s)` uniformly spaced on `[0, rho_max]`.
    pub rho_max: f64,
    pub rho_count: usize,
    /// Number of directions for `x − y` (ignored when `n = 1`).
    pub directions: usize,
    /// Start times `s` uniformly spaced on `[0, s_max]`.
    pub s_max: f64,
    pub s_count: usize,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            tau_min: 1e-3,
            tau_max: 1.0,
            tau_count: 7,
            rho_max: 24.0,
            rho_count: 49,
            directions: 4,
            s_max: 1.0,
            s_count: 3,
        }
    }
}

/// Nested doubling of a sample count (`c` → `2c − 1`, keeping end points).
pub fn doubled_count(c: usize) -> usize {
    if c <= 1 {
        c
    } else {
        2 * c - 1
    }
}

/// `count` points uniformly spaced on `[lo, hi]` (just `lo` when `count == 1`).
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![lo];
    }
    (0..count).map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64).collect()
}

/// `count` points log-spaced on `[lo, hi]`.
pub fn logspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    linspace(lo.ln(), hi.ln(), count).into_iter().map(f64::exp).collect()
}

impl SampleSpec {
    /// Every count doubled in the nested sense.
    pub fn doubled(&self) -> Self {
        Self {
            tau_count: doubled_count(self.tau_count),
            rho_count: doubled_count(self.rho_count),
            directions: 2 * self.directions,
            s_count: doubled_count(self.s_count),
            ..self.clone()
        }
    }

    pub fn taus(&self) -> Vec<f64> {
        logspace(self.tau_min, self.tau_max, self.tau_count)
    }

    pub fn rhos(&self) -> Vec<f64> {
        linspace(0.0, self.rho_max, self.rho_count)
    }

    pub fn starts(&self) -> Vec<f64> {
        linspace(0.0, self.s_max, self.s_count)
    }

    /// Unit directions covering a half sphere (enough since `|D^γΓ|` is even in `z`).
    pub fn unit_directions(&self, n: usize) -> Vec<Vec<f64>> {
        match n {
            1 => vec![vec![1.0]],
            2 => (0..self.directions)
                .map(|k| {
                    let th = PI * k as f64 / self.directions as f64;
                    vec![th.cos(), th.sin()]
                })
                .collect(),
            _ => {
                // Fibonacci points on the upper hemisphere, padded with zeros for n > 3.
                let m = self.directions.max(1);
                let golden = PI * (3.0 - 5f64.sqrt());
                (0..m)
                    .map(|k| {
                        let zc = 1.0 - (k as f64 + 0.5) / m as f64;
                        let r = (1.0 - zc * zc).sqrt();
                        let th = golden * k as f64;
                        let mut d = vec![0.0; n];
                        d[0] = r * th.cos();
                        d[1] = r * th.sin();
                        d[2] = zc;
                        d
                    })
                    .collect()
            }
        }
    }
}

/// Result of fitting `C` in `|D^αD^βΓ| ≤ C (t−s)^{−e} exp(−σ|x−y|²/(t−s))`.
#[derive(Debug, Clone, Serialize)]
pub struct GaussianBoundFit {
    pub alpha: MultiIndex,
    pub beta: MultiIndex,
    pub sigma: f64,
    /// Whether the time derivative `∂_t D^αD^βΓ` was fitted (exponent + 1).
    pub time_derivative: bool,
    /// Supremum of the ratio over the samples (may be `+∞`).
    pub constant: f64,
    /// `constant <= 10³⁰`.
    pub bounded: bool,
    pub samples: usize,
}

/// `exp(ln|p| + log_g + e·ln τ + σρ²)`, returning 0 when `p == 0`.
pub(crate) fn log_ratio(p: f64, log_g: f64, exponent: f64, tau: f64, sigma_rho2: f64) -> f64 {
    if p == 0.0 {
        return 0.0;
    }
    (p.abs().ln() + log_g + exponent * tau.ln() + sigma_rho2).exp()
}

/// Fit the constant of the whole-space Gaussian bound over `spec`.
pub fn bound_fit_whole(
    field: &CoefficientField,
    alpha: &MultiIndex,
    beta: &MultiIndex,
    sigma: f64,
    spec: &SampleSpec,
    time_derivative: bool,
) -> Result<GaussianBoundFit> {
    let n = field.dim();
    if time_derivative {
        check_order(&alpha.plus(&MultiIndex::pair(n, 0, 0)), beta, n)?;
    } else {
        check_order(alpha, beta, n)?;
    }
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    let gamma_idx = alpha.plus(beta);
    let order = gamma_idx.order();
    let exponent = (n + order) as f64 / 2.0 + if time_derivative { 1.0 } else { 0.0 };
    let dirs = spec.unit_directions(n);
    let rhos = spec.rhos();
    let mut pairs = Vec::new();
    for &s in &spec.starts() {
        for &tau in &spec.taus() {
            pairs.push((s, tau));
        }
    }
    let per_pair: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|&(s, tau)| {
            let t = s + tau;
            let k = WholeKernel::new(field, t, s)?;
            let polys: Vec<(f64, HermitePoly)> = if time_derivative {
                let a = field.at(t);
                let mut v = Vec::new();
                for i in 0..n {
                    for j in 0..n {
                        if a[(i, j)] != 0.0 {
                            v.push((a[(i, j)], k.poly(&gamma_idx.plus(&MultiIndex::pair(n, i, j)))));
                        }
                    }
                }
                v
            } else {
                vec![(1.0, k.poly(&gamma_idx))]
            };
            let mut best: f64 = 0.0;
            for d in &dirs {
                for &rho in &rhos {
                    let z: Vec<f64> = d.iter().map(|c| c * rho * tau.sqrt()).collect();
                    let mut p = 0.0;
                    let mut log_g = 0.0;
                    for (c, poly) in &polys {
                        let (pv, lg) = k.deriv_log_parts(poly, &z);
                        p += c * pv;
                        log_g = lg;
                    }
                    best = best.max(log_ratio(p, log_g, exponent, tau, sigma * rho * rho));
                }
            }
            Ok(best)
        })
        .collect();
    let mut constant: f64 = 0.0;
    for r in per_pair {
        constant = constant.max(r?);
    }
    Ok(GaussianBoundFit {
        alpha: alpha.clone(),
        beta: beta.clone(),
        sigma,
        time_derivative,
        constant,
        bounded: constant.is_finite() && constant <= DIVERGENCE_THRESHOLD,
        samples: pairs.len() * dirs.len() * rhos.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn id1() -> CoefficientField {
        CoefficientField::identity(1).unwrap()
    }

    #[test]
    fn heat_kernel_at_origin() {
        let g = gamma(&id1(), &[0.3], &[0.3], 1.0, 0.0).unwrap();
        assert_relative_eq!(g, 1.0 / (4.0 * PI).sqrt(), max_relative = 1e-14);
        assert_relative_eq!(g, 0.2820948, epsilon = 1e-7);
    }

    #[test]
    fn causal_zero() {
        assert_eq!(gamma(&id1(), &[0.0], &[0.0], 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(gamma(&id1(), &[0.0], &[1.0], 0.0, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn first_derivative_signs() {
        let f = id1();
        let a = gamma_deriv(&f, &MultiIndex::new(vec![1]), &MultiIndex::zero(1), &[1.0], &[0.0], 1.0, 0.0).unwrap();
        let expect = -0.5 * (4.0 * PI).powf(-0.5) * (-0.25f64).exp();
        assert_relative_eq!(a, expect, max_relative = 1e-13);
        assert_relative_eq!(a, -0.109848, epsilon = 1e-6);
        let b = gamma_deriv(&f, &MultiIndex::zero(1), &MultiIndex::new(vec![1]), &[1.0], &[0.0], 1.0, 0.0).unwrap();
        assert_relative_eq!(b, -a, max_relative = 1e-15);
    }

    #[test]
    fn zero_order_equals_gamma() {
        let f = CoefficientField::switching(2, 0.5, 8, 2.0).unwrap();
        let z = MultiIndex::zero(2);
        let d = gamma_deriv(&f, &z, &z, &[0.2, -0.1], &[0.5, 0.4], 1.3, 0.1).unwrap();
        assert_eq!(d, gamma(&f, &[0.2, -0.1], &[0.5, 0.4], 1.3, 0.1).unwrap());
    }

    #[test]
    fn order_above_four_is_capability_error() {
        let a = MultiIndex::new(vec![3]);
        let b = MultiIndex::new(vec![2]);
        assert!(matches!(gamma_deriv(&id1(), &a, &b, &[0.0], &[0.0], 1.0, 0.0), Err(Error::Capability(_))));
    }

    #[test]
    fn time_derivative_at_origin() {
        let f = id1();
        let dt = gamma_dt(&f, &[0.0], &[0.0], 1.0, 0.0).unwrap();
        assert_relative_eq!(dt, -0.5 / (4.0 * PI).sqrt(), max_relative = 1e-14);
        // finite difference in t of the closed form
        let k = 1e-4;
        let fd = (gamma(&f, &[0.0], &[0.0], 1.0 + k, 0.0).unwrap() - gamma(&f, &[0.0], &[0.0], 1.0 - k, 0.0).unwrap())
            / (2.0 * k);
        assert!((fd - dt).abs() < 1e-6);
        assert_relative_eq!(dt, -0.141047, epsilon = 1e-6);
    }

    #[test]
    fn ds_is_minus_dt_for_constant_coefficients() {
        let f = CoefficientField::diagonal(&[0.5, 2.0], 0.5).unwrap();
        let (x, y) = ([0.3, -0.2], [-0.1, 0.5]);
        let ds = gamma_ds(&f, &x, &y, 1.7, 0.4).unwrap();
        let dt = gamma_dt(&f, &x, &y, 1.7, 0.4).unwrap();
        assert_relative_eq!(ds, -dt, max_relative = 1e-13);
    }

    #[test]
    fn ds_uses_left_interval_at_breakpoint() {
        let f = CoefficientField::switching(1, 0.5, 4, 1.0).unwrap();
        let ds = gamma_ds(&f, &[0.0], &[0.1], 1.0, 0.25).unwrap();
        let k = WholeKernel::new(&f, 1.0, 0.25).unwrap();
        assert_relative_eq!(ds, -0.5 * k.d2(0, 0, &[-0.1]), max_relative = 1e-13);
    }

    #[test]
    fn far_tail_is_negligible() {
        // |x−y|²/(t−s) = 100: Gaussian factor e^{-25}
        let ds = gamma_ds(&id1(), &[10.0], &[0.0], 1.0, 0.0).unwrap();
        assert!(ds.abs() < 1e-9);
        let exact = (25.0 - 0.5) * (4.0 * PI).powf(-0.5) * (-25.0f64).exp();
        assert_relative_eq!(ds.abs(), exact, max_relative = 1e-12);
        // |x−y|²/(t−s) = 200
        let far = gamma_ds(&id1(), &[200f64.sqrt()], &[0.0], 1.0, 0.0).unwrap();
        assert!(far.abs() < 1e-15);
    }

    #[test]
    fn anisotropic_value_at_distance_two() {
        let f = CoefficientField::constant(nalgebra::DMatrix::from_element(1, 1, 2.0), 0.5).unwrap();
        let g = gamma(&f, &[2.0], &[0.0], 1.0, 0.0).unwrap();
        assert_relative_eq!(g, (8.0 * PI).powf(-0.5) * (-0.5f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(g, 0.12099, epsilon = 1e-5);
    }

    #[test]
    fn second_derivative_fast_path_matches_recursion() {
        let f = CoefficientField::constant(nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.7]), 0.5).unwrap();
        let k = WholeKernel::new(&f, 0.8, 0.0).unwrap();
        let z = [0.4, -0.9];
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(k.d2(i, j, &z), k.deriv(&MultiIndex::pair(2, i, j), &z), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn all_of_order_counts() {
        assert_eq!(MultiIndex::all_of_order(2, 3).len(), 4);
        assert_eq!(MultiIndex::all_of_order(3, 2).len(), 6);
        assert!(MultiIndex::all_of_order(3, 2).iter().all(|m| m.order() == 2));
    }

    #[test]
    fn heat_kernel_fit_is_exact_at_quarter_rate() {
        let spec = SampleSpec { s_count: 1, ..SampleSpec::default() };
        let z = MultiIndex::zero(1);
        let fit = bound_fit_whole(&id1(), &z, &z, 0.25, &spec, false).unwrap();
        assert_relative_eq!(fit.constant, (4.0 * PI).powf(-0.5), max_relative = 1e-10);
        assert!(fit.bounded);
        let bad = bound_fit_whole(&id1(), &z, &z, 0.5, &spec, false).unwrap();
        assert!(!bad.bounded);
    }

    #[test]
    fn fitted_constant_is_monotone_in_sigma() {
        let spec = SampleSpec { rho_max: 8.0, ..SampleSpec::default() };
        let f = CoefficientField::switching(2, 0.5, 8, 2.0).unwrap();
        let a = MultiIndex::new(vec![1, 1]);
        let z = MultiIndex::zero(2);
        let c1 = bound_fit_whole(&f, &a, &z, 0.05, &spec, false).unwrap().constant;
        let c2 = bound_fit_whole(&f, &a, &z, 0.06, &spec, false).unwrap().constant;
        assert!(c2 >= c1);
    }

    #[test]
    fn kernel_has_unit_mass_in_the_worst_direction() {
        // ν = 1/2 with a = 1/ν along x_1: the widest Gaussian the cube must hold
        let f = CoefficientField::diagonal(&[2.0, 0.5], 0.5).unwrap();
        let m = normalization(&f, &[0.3, -0.2], 0.7, 0.1).unwrap();
        assert!((m - 1.0).abs() < 1e-12, "{m}");
    }

    #[test]
    fn semigroup_across_a_breakpoint() {
        let f = CoefficientField::switching(1, 0.5, 4, 1.0).unwrap();
        let (x, y) = ([0.4], [-0.3]);
        let direct = gamma(&f, &x, &y, 0.9, 0.1).unwrap();
        let composed = chapman_kolmogorov(&f, &x, &y, 0.9, 0.4, 0.1).unwrap();
        assert!((composed / direct - 1.0).abs() < 1e-12, "{composed} vs {direct}");
    }
}
