//! Implicit-Euler finite-difference solver for `∂_t u − a^{ij}(t)D_iD_ju = f`
//! with zero initial data and zero Dirichlet data on every lattice face, plus
//! derivative extraction, coercivity ratios, μ-scans and the time change
//! `τ = ∫ a^{nn}`.
//!
//! Each step uses the exact interval average `ā_k = B(t_{k+1}, t_k)/Δt`, so
//! coefficient jumps anywhere inside a step are integrated exactly.

mod stencil;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use stencil::Stencil;

use crate::coeffs::CoefficientField;
use crate::error::{Error, Result};
use crate::grid::{Axis, Domain, GridFunction};
use crate::mixed_norms::{norm, NormSpec, Order};
use crate::probe::{ProbeReport, Rule, Series};

/// Relative residual at which conjugate gradients stops.
pub const CG_TOLERANCE: f64 = 1e-12;
const CG_MAX_ITER: usize = 5000;

/// Right-hand side of a solve.
#[derive(Clone, Copy)]
pub enum Forcing<'a> {
    Zero,
    /// Values on exactly the solve lattice.
    Grid(&'a GridFunction),
    /// Sampled at every cell centre and every time level `t_k`.
    Func(&'a (dyn Fn(&[f64], f64) -> f64 + Sync)),
}

/// One implicit-Euler run on the lattice `axes × {start + kΔt : k = 1..steps}`.
#[derive(Clone)]
pub struct SolveRequest<'a> {
    pub domain: Domain,
    pub field: &'a CoefficientField,
    /// Space axes; all must be cell axes.
    pub axes: Vec<Axis>,
    pub start: f64,
    pub dt: f64,
    pub steps: usize,
    pub forcing: Forcing<'a>,
    /// Data at `start`; zero when absent.
    pub initial: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub u: GridFunction,
    /// Forcing sampled on the lattice of `u`.
    pub f: GridFunction,
    /// `ā_k` used on step `k`.
    pub averages: Vec<DMatrix<f64>>,
    pub cg_iterations: usize,
    /// Largest scaled residual of the discrete equation over all steps.
    pub max_residual: f64,
}

impl SolveRequest<'_> {
    fn time_axis(&self) -> Axis {
        Axis::lattice(self.start + self.dt, self.dt, self.steps)
    }

    fn check(&self) -> Result<()> {
        if self.axes.len() != self.field.dim() {
            return Err(Error::Structural(format!(
                "{} space axes for a {}-dimensional coefficient field",
                self.axes.len(),
                self.field.dim()
            )));
        }
        if !(self.dt > 0.0) || self.steps == 0 {
            return Err(Error::InvalidInput(format!("need dt > 0 and steps >= 1, got {} and {}", self.dt, self.steps)));
        }
        check_domain_axes(&self.domain, &self.axes)
    }
}

fn check_domain_axes(domain: &Domain, axes: &[Axis]) -> Result<()> {
    let face = |a: &Axis, end: bool| {
        let f = a.faces().unwrap_or(&[]);
        if end { f.last().copied() } else { f.first().copied() }
    };
    match domain {
        Domain::WholeSpace => Ok(()),
        Domain::HalfSpace => match axes.last().and_then(|a| face(a, false)) {
            Some(v) if v.abs() < 1e-14 => Ok(()),
            _ => Err(Error::Data("half-space lattices need the normal axis to start with a face at 0".into())),
        },
        Domain::Box { lower, upper } => {
            let ok = axes.iter().enumerate().all(|(i, a)| {
                matches!((face(a, false), face(a, true)), (Some(l), Some(u)) if (l - lower[i]).abs() < 1e-12 && (u - upper[i]).abs() < 1e-12)
            });
            if ok { Ok(()) } else { Err(Error::Data("box lattice faces do not match the box".into())) }
        }
    }
}

/// Preconditioned conjugate gradients for `(I − dt·L_a)x = b` in the
/// cell-measure inner product, preconditioned by line solves.
fn pcg(st: &Stencil, a: &DMatrix<f64>, dt: f64, b: &[f64], x: &mut [f64]) -> Result<usize> {
    let len = b.len();
    let apply = |v: &[f64], out: &mut [f64]| {
        st.apply(a, v, out);
        out.par_iter_mut().zip(v).for_each(|(o, v)| *o = v - dt * *o);
    };
    let bnorm = st.dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let mut ap = vec![0.0; len];
    apply(x, &mut ap);
    let mut r: Vec<f64> = b.iter().zip(&ap).map(|(b, a)| b - a).collect();
    let mut z = vec![0.0; len];
    st.precondition(a, dt, &r, &mut z);
    let mut p = z.clone();
    let mut rz = st.dot(&r, &z);
    for it in 0..CG_MAX_ITER {
        if st.dot(&r, &r).sqrt() <= CG_TOLERANCE * bnorm {
            return Ok(it);
        }
        apply(&p, &mut ap);
        let alpha = rz / st.dot(&p, &ap);
        x.par_iter_mut().zip(&p).for_each(|(x, p)| *x += alpha * p);
        r.par_iter_mut().zip(&ap).for_each(|(r, a)| *r -= alpha * a);
        st.precondition(a, dt, &r, &mut z);
        let rz_new = st.dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_iter_mut().zip(&z).for_each(|(p, z)| *p = z + beta * *p);
    }
    Err(Error::Numerical(format!("conjugate gradients did not reach {CG_TOLERANCE:e} in {CG_MAX_ITER} iterations")))
}

/// Sample a forcing on `axes × time`.
fn sample_forcing(domain: &Domain, axes: &[Axis], time: Axis, forcing: Forcing<'_>) -> Result<GridFunction> {
    let mut all = axes.to_vec();
    all.push(time);
    match forcing {
        Forcing::Zero => Ok(GridFunction::zeros(domain.clone(), all)),
        Forcing::Func(f) => {
            let mut g = GridFunction::zeros(domain.clone(), all);
            let ns = g.space_len();
            let times = g.time_axis().nodes().to_vec();
            let pts: Vec<Vec<f64>> = (0..ns).map(|i| g.space_point(i)).collect();
            g.values.par_iter_mut().enumerate().for_each(|(idx, v)| *v = f(&pts[idx % ns], times[idx / ns]));
            Ok(g)
        }
        Forcing::Grid(g) => {
            if g.axes != all || &g.domain != domain {
                return Err(Error::Data("forcing lattice differs from the solve lattice".into()));
            }
            Ok(g.clone())
        }
    }
}

pub fn solve(req: &SolveRequest<'_>) -> Result<SolveOutput> {
    req.check()?;
    let st = Stencil::new(&req.axes)?;
    let time = req.time_axis();
    let f = sample_forcing(&req.domain, &req.axes, time.clone(), req.forcing)?;
    f.check_finite()?;
    let ns = st.len();
    let mut prev = match &req.initial {
        Some(v) if v.len() == ns => v.clone(),
        Some(v) => return Err(Error::Data(format!("initial data has {} values, lattice has {ns}", v.len()))),
        None => vec![0.0; ns],
    };
    let mut all = req.axes.clone();
    all.push(time);
    let mut u = GridFunction::zeros(req.domain.clone(), all);
    let mut averages = Vec::with_capacity(req.steps);
    let (mut iterations, mut max_residual) = (0, 0.0f64);
    let mut lu = vec![0.0; ns];
    for k in 0..req.steps {
        let t0 = req.start + k as f64 * req.dt;
        let abar = req.field.integral(t0, t0 + req.dt) / req.dt;
        let fk = f.slice(k);
        let rhs: Vec<f64> = prev.iter().zip(fk).map(|(p, f)| p + req.dt * f).collect();
        let mut next = prev.clone();
        iterations += pcg(&st, &abar, req.dt, &rhs, &mut next)?;
        st.apply(&abar, &next, &mut lu);
        let sup = |v: &[f64]| v.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
        let scale = sup(fk).max(sup(&prev).max(sup(&next)) / req.dt).max(f64::MIN_POSITIVE);
        let res = (0..ns).map(|i| ((next[i] - prev[i]) / req.dt - lu[i] - fk[i]).abs()).fold(0.0, f64::max) / scale;
        max_residual = max_residual.max(res);
        u.slice_mut(k).copy_from_slice(&next);
        averages.push(abar);
        prev = next;
    }
    Ok(SolveOutput { u, f, averages, cg_iterations: iterations, max_residual })
}

/// `∂_t u` and the Hessian of a solver output lattice.
#[derive(Debug, Clone)]
pub struct Derivatives {
    pub dt: GridFunction,
    /// `D_iD_ju` for `i ≤ j`.
    pub hessian: BTreeMap<(usize, usize), GridFunction>,
}

impl Derivatives {
    /// Pointwise Frobenius norm `(Σ_{i,j} |D_iD_ju|²)^{1/2}` over all ordered pairs.
    pub fn hessian_magnitude(&self) -> GridFunction {
        let mut out = self.dt.map(|_| 0.0);
        for (&(i, j), g) in &self.hessian {
            let mult = if i == j { 1.0 } else { 2.0 };
            out.values.iter_mut().zip(&g.values).for_each(|(o, v)| *o += mult * v * v);
        }
        out.map(f64::sqrt)
    }
}

/// Backward differences in time (zero data before the first level) and the
/// solver's own spatial stencils, so `∂_tu − Σ ā_ij D_iD_ju` reproduces the
/// discrete forcing.
pub fn derivatives(u: &GridFunction) -> Result<Derivatives> {
    let st = Stencil::new(u.space_axes())?;
    let dt = u
        .time_axis()
        .spacing()
        .ok_or_else(|| Error::Data("time derivative needs a uniform time axis".into()))?;
    let ns = u.space_len();
    let mut du = u.map(|_| 0.0);
    for k in 0..u.time_len() {
        let cur = u.slice(k);
        let out = du.slice_mut(k);
        if k == 0 {
            out.iter_mut().zip(cur).for_each(|(o, c)| *o = c / dt);
        } else {
            let prev = &u.values[(k - 1) * ns..k * ns];
            out.iter_mut().zip(cur.iter().zip(prev)).for_each(|(o, (c, p))| *o = (c - p) / dt);
        }
    }
    let n = u.space_dim();
    let mut hessian = BTreeMap::new();
    for i in 0..n {
        for j in i..n {
            let mut g = u.map(|_| 0.0);
            for k in 0..u.time_len() {
                let (src, dst) = (u.slice(k).to_vec(), g.slice_mut(k));
                st.hessian_entry(i, j, &src, dst);
            }
            hessian.insert((i, j), g);
        }
    }
    Ok(Derivatives { dt: du, hessian })
}

/// Norms and ratios of one solve in one [`NormSpec`].
#[derive(Debug, Clone, Serialize)]
pub struct CoercivityReport {
    pub level: usize,
    pub p: f64,
    pub q: f64,
    pub order: Order,
    pub mu: f64,
    pub norm_f: f64,
    pub norm_dt: f64,
    /// Norm of the pointwise Frobenius magnitude of the Hessian.
    pub norm_hessian: f64,
    /// `‖D_iD_ju‖` keyed `"ij"` (1-based).
    pub norm_dij: BTreeMap<String, f64>,
    pub dt_ratio: f64,
    pub hessian_ratio: f64,
    /// `(‖∂_tu‖ + Σ_{i,j}‖D_iD_ju‖)/‖f‖` over all ordered pairs.
    pub total_ratio: f64,
}

/// A solve with its derivatives, ready for norm evaluation in many specs.
pub struct Coercivity {
    pub level: usize,
    pub f: GridFunction,
    pub derivs: Derivatives,
    hess: GridFunction,
}

impl Coercivity {
    pub fn new(out: &SolveOutput, level: usize) -> Result<Self> {
        let derivs = derivatives(&out.u)?;
        let hess = derivs.hessian_magnitude();
        Ok(Self { level, f: out.f.clone(), derivs, hess })
    }

    pub fn report(&self, spec: &NormSpec) -> Result<CoercivityReport> {
        let norm_f = norm(&self.f, spec)?;
        let norm_dt = norm(&self.derivs.dt, spec)?;
        let norm_hessian = norm(&self.hess, spec)?;
        let mut norm_dij = BTreeMap::new();
        let mut sum = norm_dt;
        for (&(i, j), g) in &self.derivs.hessian {
            let v = norm(g, spec)?;
            sum += if i == j { v } else { 2.0 * v };
            norm_dij.insert(format!("{}{}", i + 1, j + 1), v);
        }
        let ratio = |top: f64| {
            if top == 0.0 {
                0.0
            } else if norm_f < crate::mixed_norms::RATIO_FLOOR {
                f64::INFINITY
            } else {
                top / norm_f
            }
        };
        Ok(CoercivityReport {
            level: self.level,
            p: spec.p,
            q: spec.q,
            order: spec.order,
            mu: spec.mu,
            norm_f,
            norm_dt,
            norm_hessian,
            norm_dij,
            dt_ratio: ratio(norm_dt),
            hessian_ratio: ratio(norm_hessian),
            total_ratio: ratio(sum),
        })
    }
}

pub fn coercivity_report(out: &SolveOutput, spec: &NormSpec, level: usize) -> Result<CoercivityReport> {
    Coercivity::new(out, level)?.report(spec)
}

/// Growth of the total ratio of one `(μ, p, q, order)` across levels.
#[derive(Debug, Clone, Serialize)]
pub struct MuGrowth {
    pub mu: f64,
    pub p: f64,
    pub q: f64,
    pub order: Order,
    pub ratios: Vec<f64>,
    /// `ratio[ℓ+1]/ratio[ℓ]`.
    pub factors: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MuScanTable {
    pub rows: Vec<CoercivityReport>,
    pub growth: Vec<MuGrowth>,
}

/// Evaluate every `(μ, (p, q), order)` on a ladder of solves (one per level).
pub fn mu_scan(levels: &[Coercivity], base: NormSpec, exponents: &[(f64, f64)], mus: &[f64]) -> Result<MuScanTable> {
    let mut rows = Vec::new();
    let mut growth = Vec::new();
    for &mu in mus {
        for &(p, q) in exponents {
            for order in Order::BOTH {
                let spec = NormSpec { p, q, order, weight: base.weight, mu };
                let reports = levels.iter().map(|c| c.report(&spec)).collect::<Result<Vec<_>>>()?;
                let ratios: Vec<f64> = reports.iter().map(|r| r.total_ratio).collect();
                let factors = ratios.windows(2).map(|w| w[1] / w[0]).collect();
                growth.push(MuGrowth { mu, p, q, order, ratios, factors });
                rows.extend(reports);
            }
        }
    }
    Ok(MuScanTable { rows, growth })
}

/// The monotone map `τ(t) = ∫₀ᵗ a^{nn}`, exact and piecewise linear.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeChange {
    /// `(t, τ(t))` at 0 and at every breakpoint.
    knots: Vec<(f64, f64)>,
    /// `a^{nn}` on each segment, extended at both ends.
    slopes: Vec<f64>,
}

pub fn time_change(field: &CoefficientField) -> Result<TimeChange> {
    let n = field.dim() - 1;
    let mut ts: Vec<f64> = std::iter::once(0.0).chain(field.breakpoints().iter().copied()).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let knots: Vec<(f64, f64)> = ts.iter().map(|&t| (t, if t == 0.0 { 0.0 } else { signed_integral(field, t, n) })).collect();
    let mut slopes: Vec<f64> = Vec::with_capacity(knots.len() + 1);
    slopes.push(field.at(knots[0].0 - 1.0)[(n, n)]);
    for w in knots.windows(2) {
        slopes.push((w[1].1 - w[0].1) / (w[1].0 - w[0].0));
    }
    slopes.push(field.at(knots[knots.len() - 1].0 + 1.0)[(n, n)]);
    if let Some(bad) = slopes.iter().find(|&&s| !(s > 0.0)) {
        return Err(Error::Ellipticity { lower: *bad });
    }
    Ok(TimeChange { knots, slopes })
}

fn signed_integral(field: &CoefficientField, t: f64, n: usize) -> f64 {
    if t > 0.0 { field.integral_entry(0.0, t, n, n) } else { -field.integral_entry(t, 0.0, n, n) }
}

impl TimeChange {
    pub fn eval(&self, t: f64) -> f64 {
        let seg = self.knots.partition_point(|k| k.0 <= t);
        let (t0, tau0) = if seg == 0 { self.knots[0] } else { self.knots[seg - 1] };
        tau0 + self.slopes[seg] * (t - t0)
    }

    pub fn inverse(&self, tau: f64) -> f64 {
        let seg = self.knots.partition_point(|k| k.1 <= tau);
        let (t0, tau0) = if seg == 0 { self.knots[0] } else { self.knots[seg - 1] };
        t0 + (tau - tau0) / self.slopes[seg]
    }

    /// Factor `1/a^{nn}(t)` multiplying the right-hand side in the new time.
    pub fn rhs_scale(&self, t: f64) -> f64 {
        let seg = self.knots.partition_point(|k| k.0 < t);
        1.0 / self.slopes[seg]
    }
}

/// Grid used to propagate a narrow Gaussian in place of `δ_y`.
#[derive(Debug, Clone)]
pub struct PropagatedKernel {
    pub domain: Domain,
    pub axes: Vec<Axis>,
    pub values: Vec<f64>,
    pub h: f64,
    pub steps: usize,
}

/// Cells per `√(ντ)` at level 0.
pub const KERNEL_CELLS_PER_SCALE: f64 = 4.0;
/// Time steps at level 0; each level halves `h` and quarters `Δt`.
pub const KERNEL_STEPS: usize = 16;
/// Truncation half-width in units of `√(ν⁻¹τ)`.
pub const KERNEL_HALF_WIDTH: f64 = 8.0;

/// Finite-difference stand-in for `Γ(·, y; t, s)` (whole space) or
/// `Γ^D(·, y; t, s)` (half space): the surrogate `exp(−|x−y|²/(2h)²)`,
/// normalised on the lattice, is propagated from `s` to `t`.
pub fn delta_propagation(field: &CoefficientField, domain: Domain, y: &[f64], s: f64, t: f64, level: u32) -> Result<PropagatedKernel> {
    if t <= s {
        return Err(Error::Ordering { s, t });
    }
    let n = field.dim();
    if y.len() != n {
        return Err(Error::Structural(format!("source point has {} coordinates, field has {n}", y.len())));
    }
    let tau = t - s;
    let nu = field.nu();
    let h0 = (nu * tau).sqrt() / (KERNEL_CELLS_PER_SCALE * f64::from(1u32 << level));
    let half = KERNEL_HALF_WIDTH * (tau / nu).sqrt();
    let axes: Vec<Axis> = (0..n)
        .map(|i| match (&domain, i == n - 1) {
            (Domain::HalfSpace, true) => {
                let hi = y[i] + half;
                Axis::cells(0.0, hi, (hi / h0).ceil() as usize)
            }
            _ => Axis::cells(y[i] - half, y[i] + half, (2.0 * half / h0).ceil() as usize),
        })
        .collect();
    if matches!(domain, Domain::HalfSpace) && y[n - 1] <= 0.0 {
        return Err(Error::Domain(format!("source must satisfy y_n > 0, got {}", y[n - 1])));
    }
    let h = axes.iter().map(|a| a.spacing().unwrap_or(h0)).fold(0.0, f64::max);
    let mut probe = axes.clone();
    probe.push(Axis::lattice(s, 1.0, 1));
    let g = GridFunction::from_fn(domain.clone(), probe, |x, _| {
        (-x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (4.0 * h * h)).exp()
    });
    let mass: f64 = (0..g.space_len()).map(|i| g.space_weight(i) * g.values[i]).sum();
    let initial: Vec<f64> = g.values.iter().map(|v| v / mass).collect();
    let steps = KERNEL_STEPS << (2 * level);
    let req = SolveRequest {
        domain: domain.clone(),
        field,
        axes: axes.clone(),
        start: s,
        dt: tau / steps as f64,
        steps,
        forcing: Forcing::Zero,
        initial: Some(initial),
    };
    let out = solve(&req)?;
    let values = out.u.slice(steps - 1).to_vec();
    Ok(PropagatedKernel { domain, axes, values, h, steps })
}

impl PropagatedKernel {
    /// Multilinear interpolation between cell centres; beyond the outermost
    /// centres the odd ghost value is used, so the result is 0 on every face.
    pub fn value_at(&self, x: &[f64]) -> f64 {
        interpolate(&self.axes, &self.values, x)
    }
}

/// Multilinear interpolation of cell-centred data with odd reflection at faces.
pub fn interpolate(axes: &[Axis], values: &[f64], x: &[f64]) -> f64 {
    // per axis: up to two (index, sign, weight) taps
    let mut taps: Vec<[(usize, f64, f64); 2]> = Vec::with_capacity(axes.len());
    for (a, &xa) in axes.iter().zip(x) {
        let nodes = a.nodes();
        let faces = a.faces().expect("cell axis");
        let (lo, hi) = (faces[0], faces[faces.len() - 1]);
        if xa <= lo || xa >= hi {
            return 0.0;
        }
        let last = nodes.len() - 1;
        let tap = if xa < nodes[0] {
            let ghost = 2.0 * lo - nodes[0];
            let wgt = (xa - ghost) / (nodes[0] - ghost);
            [(0, -1.0, 1.0 - wgt), (0, 1.0, wgt)]
        } else if xa >= nodes[last] {
            let ghost = 2.0 * hi - nodes[last];
            let wgt = (xa - nodes[last]) / (ghost - nodes[last]);
            [(last, 1.0, 1.0 - wgt), (last, -1.0, wgt)]
        } else {
            let k = nodes.partition_point(|&v| v <= xa) - 1;
            let wgt = (xa - nodes[k]) / (nodes[k + 1] - nodes[k]);
            [(k, 1.0, 1.0 - wgt), (k + 1, 1.0, wgt)]
        };
        taps.push(tap);
    }
    let n = axes.len();
    let mut total = 0.0;
    for corner in 0..(1usize << n) {
        let mut idx = 0;
        let mut coef = 1.0;
        for a in 0..n {
            let (k, sign, w) = taps[a][(corner >> a) & 1];
            idx = idx * axes[a].len() + k;
            coef *= sign * w;
        }
        total += coef * values[idx];
    }
    total
}

// ─── coercivity ladders ─────────────────────────────────────────────────

/// Right-hand sides of coercivity ladders, all with time profile `sin(πt/T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForcingFamily {
    /// `exp(−|x−c|²/w²)`.
    Bump { center: Vec<f64>, width: f64 },
    /// `(x_n/d)² e^{−(x_n/d)²} · exp(−|x′|²/w²)` with `d = distance·shrink^{−ℓ}`
    /// on level `ℓ`, so the support closes in on the wall.
    WallBump { distance: f64, shrink: f64, tangential_width: f64 },
}

impl ForcingFamily {
    fn wall_distance(&self, level: usize) -> Option<f64> {
        match self {
            ForcingFamily::WallBump { distance, shrink, .. } => Some(distance / shrink.powi(level as i32)),
            ForcingFamily::Bump { .. } => None,
        }
    }

    fn eval(&self, level: usize, horizon: f64, x: &[f64], t: f64) -> f64 {
        let time = (std::f64::consts::PI * t / horizon).sin();
        match self {
            ForcingFamily::Bump { center, width } => {
                let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c).powi(2)).sum();
                (-r2 / (width * width)).exp() * time
            }
            ForcingFamily::WallBump { tangential_width, .. } => {
                let n = x.len();
                let s = x[n - 1] / self.wall_distance(level).unwrap_or(1.0);
                let r2: f64 = x[..n - 1].iter().map(|a| a * a).sum();
                s * s * (-s * s).exp() * (-r2 / (tangential_width * tangential_width)).exp() * time
            }
        }
    }
}

/// Refinement ladder: level `ℓ` uses cells of width `spacing/2^ℓ` and
/// `steps·2^ℓ` implicit-Euler steps on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ladder {
    pub levels: usize,
    pub spacing: f64,
    pub steps: usize,
    pub horizon: f64,
    /// Half-width of whole-space boxes and tangential axes; normal extent of
    /// half-space lattices.
    pub extent: f64,
    /// Growth ratio of the wall-graded normal cells.
    pub wall_ratio: f64,
}

impl Default for Ladder {
    fn default() -> Self {
        Self { levels: 3, spacing: 0.25, steps: 8, horizon: 1.0, extent: 6.0, wall_ratio: 1.2 }
    }
}

impl Ladder {
    /// Space axes of one level. Half-space normal axes are graded from the
    /// wall so that a wall bump at distance `d` gets cells of width `d/6`.
    pub fn axes(&self, domain: &Domain, n: usize, level: usize, wall: Option<f64>) -> Vec<Axis> {
        let h = self.spacing / f64::from(1u32 << level);
        let uniform = |lo: f64, hi: f64| Axis::cells(lo, hi, ((hi - lo) / h).round().max(3.0) as usize);
        match domain {
            Domain::WholeSpace => (0..n).map(|_| uniform(-self.extent, self.extent)).collect(),
            Domain::HalfSpace => (0..n)
                .map(|i| {
                    if i + 1 < n {
                        uniform(-self.extent, self.extent)
                    } else {
                        let first = wall.map_or(h, |d| h.min(d / 6.0));
                        Axis::graded_from_wall(first, self.wall_ratio, h, self.extent)
                    }
                })
                .collect(),
            Domain::Box { lower, upper } => lower.iter().zip(upper).map(|(&l, &u)| uniform(l, u)).collect(),
        }
    }

    fn validate(&self, domain: &Domain, n: usize) -> Result<()> {
        if self.levels == 0 || self.steps == 0 || !(self.spacing > 0.0 && self.horizon > 0.0) {
            return Err(Error::InvalidInput("ladder needs levels, steps, spacing and horizon positive".into()));
        }
        if !(self.extent > 0.0 && self.wall_ratio >= 1.0) {
            return Err(Error::InvalidInput("ladder needs extent > 0 and wall_ratio >= 1".into()));
        }
        if let Domain::Box { lower, upper } = domain {
            if lower.len() != n || upper.len() != n || lower.iter().zip(upper).any(|(l, u)| !(u > l)) {
                return Err(Error::Structural(format!("box bounds must be {n} increasing pairs")));
            }
        }
        Ok(())
    }
}

/// Check a ladder and forcing family against the domain.
fn check_ladder(domain: &Domain, n: usize, ladder: &Ladder, forcing: &ForcingFamily) -> Result<()> {
    ladder.validate(domain, n)?;
    match forcing {
        ForcingFamily::Bump { center, width } if center.len() != n || !(*width > 0.0) => {
            Err(Error::Structural(format!("bump needs {n} centre coordinates and a positive width")))
        }
        ForcingFamily::WallBump { distance, shrink, tangential_width } => {
            if !matches!(domain, Domain::HalfSpace) {
                return Err(Error::Domain("wall bumps live on the half space".into()));
            }
            if !(*distance > 0.0 && *shrink >= 1.0 && *tangential_width > 0.0) {
                return Err(Error::InvalidInput("wall bump needs distance > 0, shrink >= 1, tangential_width > 0".into()));
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

fn solve_level(domain: &Domain, field: &CoefficientField, ladder: &Ladder, forcing: &ForcingFamily, level: usize) -> Result<SolveOutput> {
    let axes = ladder.axes(domain, field.dim(), level, forcing.wall_distance(level));
    let steps = ladder.steps << level;
    let f = |x: &[f64], t: f64| forcing.eval(level, ladder.horizon, x, t);
    solve(&SolveRequest {
        domain: domain.clone(),
        field,
        axes,
        start: 0.0,
        dt: ladder.horizon / steps as f64,
        steps,
        forcing: Forcing::Func(&f),
        initial: None,
    })
}

/// The raw solve of one level of `ladder`.
pub fn ladder_solve(
    domain: &Domain,
    field: &CoefficientField,
    ladder: &Ladder,
    forcing: &ForcingFamily,
    level: usize,
) -> Result<SolveOutput> {
    check_ladder(domain, field.dim(), ladder, forcing)?;
    solve_level(domain, field, ladder, forcing, level)
}

/// Solve every level of `ladder` with `forcing` and keep the derivatives.
pub fn coercivity_ladder(
    domain: &Domain,
    field: &CoefficientField,
    ladder: &Ladder,
    forcing: &ForcingFamily,
) -> Result<Vec<Coercivity>> {
    check_ladder(domain, field.dim(), ladder, forcing)?;
    (0..ladder.levels).map(|level| Coercivity::new(&solve_level(domain, field, ladder, forcing, level)?, level)).collect()
}

/// What a coercivity report asserts about one norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Expectation {
    /// Largest allowed growth of the total ratio per level.
    pub cap: f64,
    /// Designed blow-up: smallest growth per level of the total ratio.
    pub blow_up: Option<f64>,
    /// Upper limit on the Hessian ratio at every level.
    pub hessian_limit: Option<f64>,
}

/// Series `total[...]` (stable within `cap`), `hessian[...]` and `dt[...]`
/// for every spec, plus `blow_up[...]` and limits when requested.
pub fn coercivity_probe(levels: &[Coercivity], specs: &[(NormSpec, Expectation)]) -> Result<ProbeReport> {
    let mut report = ProbeReport::new("", "coercivity");
    let lv: Vec<f64> = levels.iter().map(|c| c.level as f64).collect();
    for (spec, exp) in specs {
        spec.validate()?;
        let reports = levels.iter().map(|c| c.report(spec)).collect::<Result<Vec<_>>>()?;
        let tag = format!("[p={},q={},{},mu={}]", spec.p, spec.q, spec.order.tag(), spec.mu);
        let total: Vec<f64> = reports.iter().map(|r| r.total_ratio).collect();
        let hess: Vec<f64> = reports.iter().map(|r| r.hessian_ratio).collect();
        report.push(Series::new(format!("total{tag}"), "total_ratio", lv.clone(), total.clone(), Rule::Stable { cap: exp.cap }));
        if let Some(min) = exp.blow_up {
            report.push(Series::new(format!("blow_up{tag}"), "total_ratio", lv.clone(), total.clone(), Rule::Growth { min }));
        }
        let hess_rule = exp.hessian_limit.map_or(Rule::Info, |limit| Rule::AtMost { limit });
        report.push(Series::new(format!("hessian{tag}"), "hessian_ratio", lv.clone(), hess, hess_rule));
        report.push(Series::new(format!("dt{tag}"), "dt_ratio", lv.clone(), reports.iter().map(|r| r.dt_ratio).collect(), Rule::Info));
        if let Some(&last) = total.last() {
            report.fit(format!("total{tag}"), last);
        }
    }
    Ok(report)
}
