//! Model kernels with ℛ-factors and probes of their boundedness.
//!
//! With `x = (x′, x″)`, `x″ ∈ ℝᵐ`, the model kernel is
//!
//! `K = R_x^{λ₁+r} R_y^{λ₂} (t−s)^{−(n+2−r)/2} |x″|^{μ−r} |y″|^{−μ} e^{−σ|x−y|²/(t−s)}`
//!
//! with `R_x = |x″|/(|x″|+√(t−s))`, and the layer variant carries the extra
//! factor `(δ/(t−s))^κ` once `t − s > δ`.
//!
//! The probes work on the reduced operator seen by functions of `|y″|` that
//! are constant over long stretches of `y′`: the `y′` Gaussian integrates to
//! `(π(t−s)/σ)^{(n−m)/2}` and the sphere in `ℝᵐ` to
//! `e^{−σ(ρ−ρ′)²/τ} + e^{−σ(ρ+ρ′)²/τ}` (`m = 1`) or
//! `2π e^{−σ(ρ−ρ′)²/τ} ∫e^{−z(1−cos θ)}dθ/2π` with `z = 2σρρ′/τ` (`m = 2`).
//! Ratios on this class are lower bounds for the full operator norm.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::{ProbeReport, Rule, Series};
use crate::quadrature::{legendre, on_panel};
use crate::testfn::GaussianSum;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppendixKernelParams {
    pub n: usize,
    pub m: usize,
    pub r: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub mu: f64,
    pub sigma: f64,
    /// Layer width of the `(δ/(t−s))^κ` variant.
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    pub p: f64,
}

fn default_delta() -> f64 {
    0.1
}

fn default_kappa() -> f64 {
    0.25
}

impl AppendixKernelParams {
    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.n, self.m);
        if n == 0 || m == 0 || m > n {
            return Err(Error::Structural(format!("need 1 <= m <= n, got m = {m}, n = {n}")));
        }
        if !(self.r > 0.0 && self.r <= 2.0) {
            return Err(Error::Structural(format!("r = {} outside (0, 2]", self.r)));
        }
        if !(self.lambda1 + self.lambda2 > -(m as f64)) {
            return Err(Error::Structural(format!(
                "lambda1 + lambda2 = {} must exceed -m = {}",
                self.lambda1 + self.lambda2,
                -(m as f64)
            )));
        }
        if !(self.sigma > 0.0 && self.delta > 0.0 && self.kappa > 0.0) {
            return Err(Error::Structural("sigma, delta and kappa must be positive".into()));
        }
        if !(self.p > 1.0 && self.p.is_finite()) || !self.mu.is_finite() {
            return Err(Error::Structural(format!("need 1 < p < inf and finite mu, got p = {}, mu = {}", self.p, self.mu)));
        }
        Ok(())
    }

    /// Open interval of admissible `μ`.
    pub fn mu_range(&self) -> (f64, f64) {
        let (m, p) = (self.m as f64, self.p);
        (-m / p - self.lambda1, m - m / p + self.lambda2)
    }

    /// `|x″|^{μ−r} R_x^{λ₁+r} · R_y^{λ₂} |y″|^{−μ}` in a form that stays
    /// finite as either norm tends to 0.
    fn ratio_factors(&self, xn: f64, yn: f64, sq: f64) -> f64 {
        let (l1, l2, r, mu) = (self.lambda1, self.lambda2, self.r, self.mu);
        xn.powf(mu + l1) * (xn + sq).powf(-(l1 + r)) * yn.powf(l2 - mu) * (yn + sq).powf(-l2)
    }

    fn time_factor(&self, tau: f64) -> f64 {
        tau.powf(-0.5 * (self.n as f64 + 2.0 - self.r))
    }
}

/// `(δ/τ)^κ` past the layer, 1 before it.
fn layer_factor(delta: f64, kappa: f64, tau: f64) -> f64 {
    if tau > delta {
        (delta / tau).powf(kappa)
    } else {
        1.0
    }
}

fn split_norms(params: &AppendixKernelParams, x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    assert!(x.len() == params.n && y.len() == params.n, "points must have n = {} coordinates", params.n);
    let tail = params.n - params.m;
    let norm = |v: &[f64]| v[tail..].iter().map(|c| c * c).sum::<f64>().sqrt();
    let dist2 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
    (norm(x), norm(y), dist2)
}

/// The model kernel at `(x, y; t, s)`; zero for `t ≤ s`.
pub fn kernel_k_eval(params: &AppendixKernelParams, x: &[f64], y: &[f64], t: f64, s: f64) -> f64 {
    if t <= s {
        return 0.0;
    }
    let tau = t - s;
    let (xn, yn, dist2) = split_norms(params, x, y);
    params.ratio_factors(xn, yn, tau.sqrt()) * params.time_factor(tau) * (-params.sigma * dist2 / tau).exp()
}

/// The layer model kernel: [`kernel_k_eval`] times `(δ/(t−s))^κ` for `t > s + δ`.
pub fn kernel_k1_eval(params: &AppendixKernelParams, x: &[f64], y: &[f64], t: f64, s: f64) -> f64 {
    kernel_k_eval(params, x, y, t, s) * layer_factor(params.delta, params.kappa, t - s)
}

/// `−m/p − λ₁ < μ < m − m/p + λ₂`.
pub fn admissible(params: &AppendixKernelParams) -> Result<bool> {
    params.validate()?;
    let (lo, hi) = params.mu_range();
    Ok(lo < params.mu && params.mu < hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AppendixVariant {
    /// Boundedness in `L_p(ℝⁿ×ℝ)`.
    #[serde(rename = "Lp")]
    Lp,
    /// Boundedness in `L̃_{p,∞}` (sup in time inside the space norm).
    #[serde(rename = "Lp_inf_tilde")]
    LpInfTilde,
    /// `L_{p,1}` on a layer `|s−s⁰| ≤ δ` into `L_{p,1}` on `t > s⁰+2δ`.
    #[serde(rename = "layer_Lp1")]
    LayerLp1,
}

impl AppendixVariant {
    pub fn tag(self) -> &'static str {
        match self {
            AppendixVariant::Lp => "Lp",
            AppendixVariant::LpInfTilde => "Lp_inf_tilde",
            AppendixVariant::LayerLp1 => "layer_Lp1",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppendixProbeParams {
    pub levels: usize,
    pub trials: usize,
    pub seed: u64,
    /// Innermost radius `|x″|` of the lattice.
    pub inner: f64,
    /// Level-0 outer radius; level `ℓ` uses `outer · enlarge^ℓ` and the time
    /// horizon `(outer · enlarge^ℓ)²`.
    pub outer: f64,
    pub enlarge: f64,
    /// Ratio of neighbouring radial cells.
    pub cell_ratio: f64,
    pub time_cells: usize,
    pub iterations: usize,
    /// `δ` ladder of the layer variant.
    pub deltas: Vec<f64>,
    /// Far-field time window of the layer variant, in units of `δ`.
    pub layer_window: f64,
    pub cap: f64,
    /// Growth per level expected when `μ` is inadmissible.
    pub blow_up: f64,
}

impl Default for AppendixProbeParams {
    fn default() -> Self {
        Self {
            levels: 3,
            trials: 4,
            seed: 0,
            inner: 1e-4,
            outer: 1.0,
            enlarge: 8.0,
            cell_ratio: 1.25,
            time_cells: 16,
            iterations: 40,
            deltas: vec![0.04, 0.02, 0.01],
            layer_window: 1e4,
            cap: 1.25,
            blow_up: 2.0,
        }
    }
}

impl AppendixProbeParams {
    fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.trials == 0 || self.time_cells == 0 {
            return Err(Error::InvalidInput("levels, trials and time_cells must be positive".into()));
        }
        if !(self.inner > 0.0 && self.outer > self.inner && self.enlarge > 1.0 && self.cell_ratio > 1.0) {
            return Err(Error::InvalidInput("need 0 < inner < outer, enlarge > 1 and cell_ratio > 1".into()));
        }
        if self.deltas.is_empty() || self.deltas.iter().any(|&d| !(d > 0.0)) || !(self.layer_window > 2.0) {
            return Err(Error::InvalidInput("deltas must be positive and layer_window above 2".into()));
        }
        if !(self.cap > 1.0 && self.blow_up > 1.0) {
            return Err(Error::InvalidInput("cap and blow_up must exceed 1".into()));
        }
        Ok(())
    }
}

/// Geometric radial cells on `[lo, hi]`: faces, collocation nodes and
/// measures `∫ρ^{m−1}dρ`.
struct Radial {
    faces: Vec<f64>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Radial {
    fn new(lo: f64, hi: f64, ratio: f64, m: usize) -> Self {
        let cells = ((hi / lo).ln() / ratio.ln()).ceil().max(1.0) as usize;
        let q = (hi / lo).powf(1.0 / cells as f64);
        let faces: Vec<f64> = (0..=cells).map(|i| lo * q.powi(i as i32)).collect();
        let nodes = faces.windows(2).map(|f| (f[0] * f[1]).sqrt()).collect();
        let weights = faces.windows(2).map(|f| (f[1].powi(m as i32) - f[0].powi(m as i32)) / m as f64).collect();
        Self { faces, nodes, weights }
    }

    fn len(&self) -> usize {
        self.nodes.len()
    }
}

const ANGULAR_NODES: usize = 16;
const DYADIC_LEVELS: usize = 40;

/// Reduced kernel on `|x″|` and `|y″|`.
struct Reduced<'a> {
    k: &'a AppendixKernelParams,
    layer: Option<f64>,
    gauss4: Vec<(f64, f64)>,
    angular: Vec<(f64, f64)>,
}

impl<'a> Reduced<'a> {
    fn new(k: &'a AppendixKernelParams, layer: Option<f64>) -> Self {
        Self { k, layer, gauss4: legendre(4), angular: legendre(ANGULAR_NODES) }
    }

    /// `(1/2π)∫_0^{2π} e^{−z(1−cos θ)} dθ`, on a window around `θ = 0`
    /// holding the peak.
    fn sphere2(&self, z: f64) -> f64 {
        let top = if z > 0.0 { (10.0 / z.sqrt()).min(std::f64::consts::PI) } else { std::f64::consts::PI };
        on_panel(&self.angular, 0.0, top).map(|(th, w)| w * (-z * (1.0 - th.cos())).exp()).sum::<f64>()
            / std::f64::consts::PI
    }

    /// Kernel density in `ρ′` (including `ρ′^{m−1}`) at lag `tau`.
    fn density(&self, rho: f64, rp: f64, tau: f64) -> f64 {
        let k = self.k;
        let sq = tau.sqrt();
        let tangential = (std::f64::consts::PI * tau / k.sigma).powf(0.5 * (k.n - k.m) as f64);
        let near = (-k.sigma * (rho - rp).powi(2) / tau).exp();
        let sphere = match k.m {
            1 => near + (-k.sigma * (rho + rp).powi(2) / tau).exp(),
            _ => 2.0 * std::f64::consts::PI * near * self.sphere2(2.0 * k.sigma * rho * rp / tau),
        };
        let layer = self.layer.map_or(1.0, |d| layer_factor(d, k.kappa, tau));
        k.ratio_factors(rho, rp, sq) * k.time_factor(tau) * tangential * sphere * rp.powi(k.m as i32 - 1) * layer
    }

    /// `∫_cell density(ρ, ·, τ)`, resolving the Gaussian peak at `ρ′ = ρ`.
    fn cell(&self, rho: f64, lo: f64, hi: f64, tau: f64) -> f64 {
        let width = (tau / self.k.sigma).sqrt();
        let (a, b) = (lo.max(rho - 8.0 * width), hi.min(rho + 8.0 * width));
        if a >= b {
            return 0.0;
        }
        let pieces = ((b - a) / (2.0 * width)).ceil().clamp(1.0, 8.0) as usize;
        let h = (b - a) / pieces as f64;
        (0..pieces)
            .map(|i| {
                on_panel(&self.gauss4, a + i as f64 * h, a + (i + 1) as f64 * h)
                    .map(|(y, w)| w * self.density(rho, y, tau))
                    .sum::<f64>()
            })
            .sum()
    }

    /// `∫_{τ_a}^{τ_b}` of [`Self::cell`]; dyadic toward `τ = 0` when
    /// `τ_a = 0`, closing the last piece with the `τ^{r/2−1}` power law.
    fn lag_integral(&self, rho: f64, lo: f64, hi: f64, ta: f64, tb: f64) -> f64 {
        let f = |t: f64| self.cell(rho, lo, hi, t);
        let panel = |a: f64, b: f64| on_panel(&self.gauss4, a, b).map(|(t, w)| w * f(t)).sum::<f64>();
        if ta > 0.0 {
            return panel(ta, tb);
        }
        let mut total = 0.0;
        let mut b = tb;
        for _ in 0..DYADIC_LEVELS {
            let a = 0.5 * b;
            total += panel(a, b);
            b = a;
        }
        total + f(b) * b / (0.5 * self.k.r)
    }
}

/// Largest `‖Ax‖_{p,w_out} / ‖x‖_{p,w_in}` reached by Boyd's iteration for
/// a nonnegative operator, started from a positive vector.
fn boyd(
    apply: &dyn Fn(&[f64]) -> Vec<f64>,
    adjoint: &dyn Fn(&[f64]) -> Vec<f64>,
    w_in: &[f64],
    w_out: &[f64],
    p: f64,
    iterations: usize,
) -> f64 {
    let q = p / (p - 1.0);
    let norm = |v: &[f64], w: &[f64]| v.iter().zip(w).map(|(a, b)| b * a.abs().powf(p)).sum::<f64>().powf(1.0 / p);
    let mut x: Vec<f64> = vec![1.0; w_in.len()];
    let mut best = 0.0f64;
    for _ in 0..iterations {
        let nx = norm(&x, w_in);
        if !(nx > 0.0) {
            break;
        }
        x.iter_mut().for_each(|v| *v /= nx);
        let y = apply(&x);
        best = best.max(norm(&y, w_out));
        // dual step in the weighted pairing: x ← (A*(w_out y^{p−1}) / w_in)^{q−1}
        let g: Vec<f64> = y.iter().zip(w_out).map(|(v, w)| w * v.max(0.0).powf(p - 1.0)).collect();
        let z = adjoint(&g);
        x = z.iter().zip(w_in).map(|(v, w)| (v.max(0.0) / w).powf(q - 1.0)).collect();
    }
    best
}

/// Space-time operator on `radial × uniform time cells`, stored by lag.
struct Toeplitz {
    /// `lags[l][a * nr + j]`: input cell `j` at time cell `i`, output node `a`
    /// at time `t_{i+l}`.
    lags: Vec<Vec<f64>>,
    nr: usize,
}

impl Toeplitz {
    fn build(red: &Reduced<'_>, radial: &Radial, dt: f64, nt: usize) -> Self {
        let nr = radial.len();
        let mut lags = vec![vec![0.0; nr * nr]; nt];
        for a in 0..nr {
            for j in 0..nr {
                let (lo, hi) = (radial.faces[j], radial.faces[j + 1]);
                for (l, lag) in lags.iter_mut().enumerate() {
                    lag[a * nr + j] = red.lag_integral(radial.nodes[a], lo, hi, l as f64 * dt, (l + 1) as f64 * dt);
                }
            }
        }
        Self { lags, nr }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (nr, nt) = (self.nr, self.lags.len());
        let mut out = vec![0.0; nr * nt];
        for k in 0..nt {
            for i in 0..=k {
                let m = &self.lags[k - i];
                let src = &x[i * nr..(i + 1) * nr];
                for a in 0..nr {
                    out[k * nr + a] += m[a * nr..(a + 1) * nr].iter().zip(src).map(|(u, v)| u * v).sum::<f64>();
                }
            }
        }
        out
    }

    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        let (nr, nt) = (self.nr, self.lags.len());
        let mut out = vec![0.0; nr * nt];
        for k in 0..nt {
            for i in 0..=k {
                let m = &self.lags[k - i];
                for a in 0..nr {
                    let v = y[k * nr + a];
                    for j in 0..nr {
                        out[i * nr + j] += m[a * nr + j] * v;
                    }
                }
            }
        }
        out
    }

    /// `∫_0^T` of the kernel, the operator seen by time-constant inputs.
    fn total(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.nr * self.nr];
        for lag in &self.lags {
            m.iter_mut().zip(lag).for_each(|(a, b)| *a += b);
        }
        m
    }
}

fn dense_apply(m: &[f64], n: usize, x: &[f64]) -> Vec<f64> {
    (0..n).map(|a| m[a * n..(a + 1) * n].iter().zip(x).map(|(u, v)| u * v).sum()).collect()
}

fn dense_adjoint(m: &[f64], n: usize, y: &[f64]) -> Vec<f64> {
    (0..n).map(|j| (0..n).map(|a| m[a * n + j] * y[a]).sum()).collect()
}

/// Seeded trial `g(ρ)φ(s)`: bumps in `ln ρ` over `[ln lo, ln hi]` and in
/// `s ∈ [0, 1]`.
fn trial(seed: u64, lo: f64, hi: f64) -> GaussianSum {
    let (a, b) = (lo.ln(), hi.ln());
    let span = b - a;
    GaussianSum::random(seed, &[a, 0.2], &[b, 0.8], &[0.1 * span, 0.1], &[0.3 * span, 0.4])
}

fn lp_norm(v: &[f64], w: &[f64], p: f64) -> f64 {
    v.iter().zip(w).map(|(a, b)| b * a.abs().powf(p)).sum::<f64>().powf(1.0 / p)
}

/// One enlargement level of the `Lp` or `L̃p∞` probe: best trial ratios and
/// the Boyd estimate.
fn level_estimates(
    k: &AppendixKernelParams,
    variant: AppendixVariant,
    probe: &AppendixProbeParams,
    level: usize,
) -> (Vec<f64>, f64) {
    let outer = probe.outer * probe.enlarge.powi(level as i32);
    let radial = Radial::new(probe.inner, outer, probe.cell_ratio, k.m);
    let horizon = outer * outer;
    let nt = probe.time_cells;
    let dt = horizon / nt as f64;
    let red = Reduced::new(k, None);
    let op = Toeplitz::build(&red, &radial, dt, nt);
    let nr = radial.len();
    let p = k.p;
    let st_weights: Vec<f64> = (0..nt).flat_map(|_| radial.weights.iter().map(|w| w * dt)).collect();
    let sample = |g: &GaussianSum| -> Vec<f64> {
        (0..nt)
            .flat_map(|i| {
                let s = (i as f64 + 0.5) / nt as f64;
                radial.nodes.iter().map(move |&r| g.eval(&[r.ln(), s])).collect::<Vec<_>>()
            })
            .collect()
    };
    let trials: Vec<f64> = (0..probe.trials)
        .map(|t| {
            let x = sample(&trial(probe.seed.wrapping_add(t as u64), probe.inner, probe.outer));
            let y = op.apply(&x);
            match variant {
                AppendixVariant::Lp => lp_norm(&y, &st_weights, p) / lp_norm(&x, &st_weights, p),
                _ => {
                    let sup = |v: &[f64]| -> Vec<f64> {
                        (0..nr).map(|a| (0..nt).map(|i| v[i * nr + a].abs()).fold(0.0, f64::max)).collect()
                    };
                    lp_norm(&sup(&y), &radial.weights, p) / lp_norm(&sup(&x), &radial.weights, p)
                }
            }
        })
        .collect();
    let power = match variant {
        AppendixVariant::Lp => {
            boyd(&|x| op.apply(x), &|y| op.adjoint(y), &st_weights, &st_weights, p, probe.iterations)
        }
        _ => {
            let m = op.total();
            boyd(
                &|x| dense_apply(&m, nr, x),
                &|y| dense_adjoint(&m, nr, y),
                &radial.weights,
                &radial.weights,
                p,
                probe.iterations,
            )
        }
    };
    (trials, power)
}

/// Far-field ratio `∫_{t>s⁰+2δ}‖Kh(·,t)‖_p dt / ‖h‖_{p,1}` of the layer
/// kernel for self-similar trials `g(ρ/√δ)φ((s−s⁰)/δ)`.
fn layer_ratios(k: &AppendixKernelParams, probe: &AppendixProbeParams, delta: f64) -> Vec<f64> {
    let d_min = probe.deltas.iter().copied().fold(f64::INFINITY, f64::min);
    let d_max = probe.deltas.iter().copied().fold(0.0, f64::max);
    let window = probe.layer_window;
    let radial = Radial::new(0.05 * d_min.sqrt(), 4.0 * (window * d_max).sqrt(), probe.cell_ratio, k.m);
    let nr = radial.len();
    let red = Reduced::new(k, Some(delta));
    let n_in = 8;
    let ds = 2.0 * delta / n_in as f64;
    let in_faces: Vec<f64> = (0..=n_in).map(|i| -delta + i as f64 * ds).collect();
    let mut out_faces = vec![2.0 * delta];
    let mut w = 0.25 * delta;
    while *out_faces.last().unwrap() < window * delta {
        out_faces.push(out_faces.last().unwrap() + w);
        w *= 1.5;
    }
    let gauss2 = legendre(2);
    let out_times: Vec<(f64, f64)> = out_faces.windows(2).flat_map(|f| on_panel(&gauss2, f[0], f[1]).collect::<Vec<_>>()).collect();
    // blocks[q][i][a * nr + j]
    let blocks: Vec<Vec<Vec<f64>>> = out_times
        .iter()
        .map(|&(t, _)| {
            (0..n_in)
                .map(|i| {
                    let (ta, tb) = (t - in_faces[i + 1], t - in_faces[i]);
                    let mut m = vec![0.0; nr * nr];
                    for a in 0..nr {
                        for j in 0..nr {
                            m[a * nr + j] = red.lag_integral(radial.nodes[a], radial.faces[j], radial.faces[j + 1], ta, tb);
                        }
                    }
                    m
                })
                .collect()
        })
        .collect();
    let p = k.p;
    let sd = delta.sqrt();
    (0..probe.trials)
        .map(|t| {
            // trials live on ρ/√δ ∈ [0.2, 5] and (s−s⁰)/δ ∈ [−1, 1]
            let g = trial(probe.seed.wrapping_add(t as u64), 0.2, 5.0);
            let h: Vec<Vec<f64>> = (0..n_in)
                .map(|i| {
                    let u = 0.5 * ((in_faces[i] + in_faces[i + 1]) / delta + 1.0);
                    radial.nodes.iter().map(|&r| g.eval(&[(r / sd).ln(), u])).collect()
                })
                .collect();
            let input: f64 = h.iter().map(|hi| ds * lp_norm(hi, &radial.weights, p)).sum();
            let far: f64 = blocks
                .iter()
                .zip(&out_times)
                .map(|(b, &(_, wt))| {
                    let mut y = vec![0.0; nr];
                    for (m, hi) in b.iter().zip(&h) {
                        y.iter_mut().zip(dense_apply(m, nr, hi)).for_each(|(a, v)| *a += v);
                    }
                    wt * lp_norm(&y, &radial.weights, p)
                })
                .sum();
            far / input
        })
        .collect()
}

/// Lower-bound norm estimates of the model operator. Admissible `μ` must
/// give estimates growing by at most `cap` per level; inadmissible `μ` adds
/// a `blow_up` series that passes when every level grows by at least
/// `blow_up`, while the stability series is expected to fail.
pub fn appendix_boundedness_probe(
    params: &AppendixKernelParams,
    variant: AppendixVariant,
    probe: &AppendixProbeParams,
) -> Result<ProbeReport> {
    let ok = admissible(params)?;
    probe.validate()?;
    if params.m > 2 {
        return Err(Error::Capability(format!("appendix probes support m <= 2, got m = {}", params.m)));
    }
    let mut report = ProbeReport::new("", "appendix-probe");
    let (lo, hi) = params.mu_range();
    report
        .param("variant", variant.tag())
        .param("n", params.n)
        .param("m", params.m)
        .param("r", params.r)
        .param("lambda", format!("({}, {})", params.lambda1, params.lambda2))
        .param("mu", params.mu)
        .param("p", params.p)
        .param("mu_range", format!("({lo}, {hi})"))
        .param("admissible", ok);
    if variant == AppendixVariant::LayerLp1 {
        let table: Vec<Vec<f64>> = probe.deltas.iter().map(|&d| layer_ratios(params, probe, d)).collect();
        let best: Vec<f64> = table.iter().map(|r| r.iter().copied().fold(0.0, f64::max)).collect();
        report.push(Series::new("ratio", "far_field_ratio", probe.deltas.clone(), best.clone(), Rule::Band {
            tol: probe.cap - 1.0,
        }));
        for t in 0..probe.trials {
            let vals = table.iter().map(|r| r[t]).collect();
            report.push(Series::new(format!("trial[{t}]"), "far_field_ratio", probe.deltas.clone(), vals, Rule::Info));
        }
        if let Some(&last) = best.last() {
            report.fit("ratio", last);
        }
        return Ok(report);
    }
    let levels: Vec<f64> = (0..probe.levels).map(|l| l as f64).collect();
    let runs: Vec<(Vec<f64>, f64)> = (0..probe.levels).map(|l| level_estimates(params, variant, probe, l)).collect();
    let best: Vec<f64> = runs.iter().map(|(t, p)| t.iter().copied().fold(*p, f64::max)).collect();
    report.push(Series::new("estimate", "norm_lower_bound", levels.clone(), best.clone(), Rule::Stable { cap: probe.cap }));
    if !ok {
        report.push(Series::new("blow_up", "norm_lower_bound", levels.clone(), best.clone(), Rule::Growth {
            min: probe.blow_up,
        }));
    }
    for t in 0..probe.trials {
        let vals = runs.iter().map(|r| r.0[t]).collect();
        report.push(Series::new(format!("trial[{t}]"), "norm_ratio", levels.clone(), vals, Rule::Info));
    }
    report.push(Series::new("power", "norm_ratio", levels, runs.iter().map(|r| r.1).collect(), Rule::Info));
    if let Some(&last) = best.last() {
        report.fit("norm_lower_bound", last);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

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

    #[test]
    fn admissibility_inequality() {
        assert!(admissible(&example()).unwrap());
        assert!(!admissible(&AppendixKernelParams { mu: 2.0, ..example() }).unwrap());
        let (_, hi) = example().mu_range();
        assert_eq!(hi, 1.5);
        assert!(!admissible(&AppendixKernelParams { mu: hi, ..example() }).unwrap());
        let bad = AppendixKernelParams { lambda1: -0.6, lambda2: -0.4, ..example() };
        assert!(matches!(admissible(&bad), Err(Error::Structural(_))));
    }

    #[test]
    fn ratio_factors_tend_to_one_far_from_the_axis() {
        let k = AppendixKernelParams { n: 2, m: 1, r: 0.5, lambda1: 0.0, lambda2: 0.0, mu: 0.5, ..example() };
        let (t, s) = (1.0, 0.99);
        let x = [0.3, 50.0];
        let y = [0.25, 50.0];
        // |x″|^{μ−r}|y″|^{−μ} = 50^{−1/2} remains
        let plain = (0.01f64).powf(-0.5 * (2.0 + 2.0 - 0.5)) * (-(0.05f64 * 0.05) / 0.01).exp() / 50f64.sqrt();
        assert!((kernel_k_eval(&k, &x, &y, t, s) / plain - 1.0).abs() < 0.01);
        assert_eq!(kernel_k_eval(&k, &x, &y, 0.5, 0.5), 0.0);
        assert_eq!(kernel_k_eval(&k, &x, &y, 0.4, 0.5), 0.0);
    }

    #[test]
    fn r_factor_limits() {
        // λ = 0, μ = r = 1 and y″ = x″ leave R_x / |x″|
        let k = AppendixKernelParams { n: 1, m: 1, r: 1.0, lambda1: 0.0, lambda2: 0.0, mu: 1.0, ..example() };
        let r_x = |xn: f64, tau: f64| {
            kernel_k_eval(&k, &[xn], &[xn], tau, 0.0) * tau.powf(0.5 * (1.0 + 2.0 - 1.0)) * xn
        };
        let tau = 1.0;
        assert!((r_x(1e3, tau) - 1.0).abs() < 0.01);
        let small = 1e-3;
        assert!((r_x(small, tau) / small - 1.0).abs() < 0.01);
    }

    #[test]
    fn kernel_is_nonnegative_and_decreasing_in_distance() {
        let k = AppendixKernelParams { n: 2, m: 1, r: 1.5, lambda1: 0.3, lambda2: -0.2, mu: 0.4, ..example() };
        let mut last = f64::INFINITY;
        for i in 0..40 {
            let v = kernel_k1_eval(&k, &[0.1 * i as f64, 0.7], &[0.0, -0.7], 0.9, 0.3);
            assert!(v >= 0.0 && v <= last);
            last = v;
        }
    }

    #[test]
    fn sphere_average_matches_series() {
        // (1/2π)∫e^{−z(1−cos θ)}dθ = e^{−z} I₀(z)
        let k = example();
        let red = Reduced::new(&k, None);
        for z in [0.0f64, 0.3, 2.0, 15.0, 400.0] {
            let series: f64 = (0..200).scan(1.0f64, |term, j: i32| {
                let v = *term;
                *term *= (z / 2.0).powi(2) / ((j + 1) as f64).powi(2);
                Some(v)
            }).sum::<f64>();
            let expected = if z < 50.0 { series * (-z).exp() } else { (2.0 * std::f64::consts::PI * z).powf(-0.5) * (1.0 + 1.0 / (8.0 * z)) };
            assert!((red.sphere2(z) / expected - 1.0).abs() < 1e-5, "z = {z}");
        }
    }

    #[test]
    fn reduced_kernel_integrates_the_full_kernel() {
        // m = n = 1: ∫_{ℝ} K dy over |y| in a cell equals the reduced cell integral
        let k = AppendixKernelParams { n: 1, m: 1, r: 1.0, lambda1: 0.2, lambda2: 0.3, mu: 0.4, ..example() };
        let red = Reduced::new(&k, None);
        let (rho, lo, hi, tau) = (0.8, 0.5, 1.1, 0.05);
        let h = 1e-5;
        let direct: f64 = (0..((hi - lo) / h) as usize)
            .map(|i| {
                let y = lo + (i as f64 + 0.5) * h;
                (kernel_k_eval(&k, &[rho], &[y], tau, 0.0) + kernel_k_eval(&k, &[rho], &[-y], tau, 0.0)) * h
            })
            .sum();
        let reduced = red.cell(rho, lo, hi, tau);
        assert!((reduced / direct - 1.0).abs() < 1e-4, "{reduced} {direct}");
    }

    #[test]
    fn boyd_finds_the_matrix_norm() {
        let m = [2.0, 1.0, 1.0, 3.0];
        let w = [1.0, 1.0];
        let est = boyd(&|x| dense_apply(&m, 2, x), &|y| dense_adjoint(&m, 2, y), &w, &w, 2.0, 60);
        let exact = (5.0 + 5.0f64.sqrt()) / 2.0;
        assert!((est - exact).abs() < 1e-10, "{est} {exact}");
    }
}
