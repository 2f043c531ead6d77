//! The singular integral operators built from second derivatives of the
//! Green functions, applied to lattice functions, with norm and
//! cancellation probes.
//!
//! [`Operator::apply`] evaluates the space convolution spectrally and the
//! time integral exactly for inputs that are piecewise constant in time (see
//! [`spectral`]). [`direct_value`] is the reference quadrature: the
//! subtracted form `∫𝒦(x,y)(h(y,s) − h(x,s)) dy` with a graded `s`-mesh.

pub mod cancellation;
mod spectral;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeffs::CoefficientField;
use crate::error::{Error, Result};
use crate::grid::{Axis, Domain, GridFunction};
use crate::kernel_wholespace::WholeKernel;
use crate::mixed_norms::{norm, weight_values, NormSpec, Order, WeightKind};
use crate::probe::{ProbeReport, Rule, Series};
use crate::testfn::GaussianSum;

pub use cancellation::{cancellation_decay_probe, CancellationParams, Center, Geometry};
use spectral::Propagator;

/// Geometric levels of the graded `s`-mesh toward `s = t`.
pub const GRADED_LEVELS: u32 = 12;
/// Default growth cap between consecutive refinements.
pub const DEFAULT_CAP: f64 = 1.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    /// `𝔊_ij = D_{x_i}D_{x_j}Γ`.
    #[serde(rename = "frakG")]
    FrakG,
    /// `𝔊̂_ij = χ_{x_n>√(t−s)} D_{x_i}D_{x_j}Γ`.
    #[serde(rename = "frakG_hat")]
    FrakGHat,
    /// `𝔊^D_ij = (x_n/y_n)^μ D_{x_i}D_{x_j}Γ^D`.
    #[serde(rename = "frakG_D")]
    FrakGD,
    /// `𝒢_ij = 𝔊^D_ij − 𝔊̂_ij` on the half-space.
    #[serde(rename = "calG")]
    CalG,
}

impl KernelKind {
    pub fn tag(self) -> &'static str {
        match self {
            KernelKind::FrakG => "frakG",
            KernelKind::FrakGHat => "frakG_hat",
            KernelKind::FrakGD => "frakG_D",
            KernelKind::CalG => "calG",
        }
    }

    pub fn is_half_space(self) -> bool {
        matches!(self, KernelKind::FrakGD | KernelKind::CalG)
    }
}

/// Kernel choice with 0-based indices `(i, j)` and weight power `μ`.
#[derive(Debug, Clone, Copy)]
pub struct KernelSelector<'a> {
    pub kind: KernelKind,
    pub i: usize,
    pub j: usize,
    pub mu: f64,
    pub field: &'a CoefficientField,
}

impl<'a> KernelSelector<'a> {
    pub fn new(kind: KernelKind, i: usize, j: usize, mu: f64, field: &'a CoefficientField) -> Result<Self> {
        let s = Self { kind, i, j, mu, field };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.field.dim();
        if self.i >= n || self.j >= n {
            return Err(Error::Structural(format!("indices ({}, {}) out of range for n = {n}", self.i, self.j)));
        }
        if !self.mu.is_finite() {
            return Err(Error::Spec(format!("weight power mu = {} is not finite", self.mu)));
        }
        if self.kind.is_half_space() && !self.field.is_reflection_compatible() {
            return Err(Error::Capability(format!(
                "{} needs a reflection-compatible field (a^{{in}} = 0 for i != n)",
                self.kind.tag()
            )));
        }
        Ok(())
    }

    /// The truncated and difference kernels are claimed bounded only when
    /// not both indices are normal.
    pub fn in_hypothesis(&self) -> bool {
        let last = self.field.dim() - 1;
        !(matches!(self.kind, KernelKind::FrakGHat | KernelKind::CalG) && self.i == last && self.j == last)
    }

    pub fn describe(&self) -> String {
        format!("{}[{},{}; mu={}]", self.kind.tag(), self.i + 1, self.j + 1, self.mu)
    }
}

/// A linear map between lattice functions with its lattice adjoint.
pub trait LinearOperator {
    fn apply(&self, h: &GridFunction) -> Result<GridFunction>;
    fn adjoint(&self, g: &GridFunction) -> Result<GridFunction>;
}

/// Odd/zero extensions between a half-space lattice and its mirror image.
struct Mirror {
    normal: usize,
    /// `x_n^μ` per normal row.
    power: Vec<f64>,
}

impl Mirror {
    fn ext_index(&self, i: usize, flip: bool) -> usize {
        let (q, r) = (i / self.normal, i % self.normal);
        let base = q * 2 * self.normal;
        if flip {
            base + self.normal - 1 - r
        } else {
            base + self.normal + r
        }
    }

    /// `v ↦ (v, −v∘reflect)`, each value first multiplied by `scale(row)`.
    fn odd(&self, values: &[f64], ns: usize, scale: impl Fn(usize) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; 2 * values.len()];
        for (k, s) in values.chunks_exact(ns).enumerate() {
            let o = &mut out[2 * k * ns..2 * (k + 1) * ns];
            for (i, v) in s.iter().enumerate() {
                let w = v * scale(i % self.normal);
                o[self.ext_index(i, false)] = w;
                o[self.ext_index(i, true)] = -w;
            }
        }
        out
    }

    fn zero(&self, values: &[f64], ns: usize, scale: impl Fn(usize) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; 2 * values.len()];
        for (k, s) in values.chunks_exact(ns).enumerate() {
            let o = &mut out[2 * k * ns..2 * (k + 1) * ns];
            for (i, v) in s.iter().enumerate() {
                o[self.ext_index(i, false)] = v * scale(i % self.normal);
            }
        }
        out
    }

    /// Restriction to `x_n > 0`; with `fold`, subtract the mirror value.
    fn restrict(&self, ext: &[f64], ns: usize, fold: bool, scale: impl Fn(usize) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; ext.len() / 2];
        for (k, o) in out.chunks_exact_mut(ns).enumerate() {
            let e = &ext[2 * k * ns..2 * (k + 1) * ns];
            for (i, v) in o.iter_mut().enumerate() {
                let mut x = e[self.ext_index(i, false)];
                if fold {
                    x -= e[self.ext_index(i, true)];
                }
                *v = x * scale(i % self.normal);
            }
        }
        out
    }
}

/// A selector bound to one lattice, with precomputed propagators.
pub struct Operator<'a> {
    pub selector: KernelSelector<'a>,
    domain: Domain,
    axes: Vec<Axis>,
    prop: Propagator<'a>,
    mirror: Option<Mirror>,
}

impl<'a> Operator<'a> {
    pub fn new(selector: KernelSelector<'a>, domain: &Domain, axes: &[Axis]) -> Result<Self> {
        selector.validate()?;
        let n = selector.field.dim();
        if axes.len() != n + 1 {
            return Err(Error::Spec(format!("lattice has {} axes, the field needs {}", axes.len(), n + 1)));
        }
        let (space, time) = axes.split_at(n);
        let kind = selector.kind;
        let (prop, mirror) = match (kind.is_half_space(), domain) {
            (false, Domain::WholeSpace) => (Propagator::new(selector.field, space, &time[0], selector.i, selector.j)?, None),
            (true, Domain::HalfSpace) => {
                let normal = &space[n - 1];
                let (Some(h), Some(faces)) = (normal.spacing(), normal.faces()) else {
                    return Err(Error::Spec("the normal axis must be a uniform cell axis".into()));
                };
                if faces[0].abs() > 1e-12 * h {
                    return Err(Error::Spec(format!("the normal axis must start at the wall, not at {}", faces[0])));
                }
                let hi = *faces.last().unwrap();
                let mut ext: Vec<Axis> = space[..n - 1].to_vec();
                ext.push(Axis::cells(-hi, hi, 2 * normal.len()));
                let power = normal.nodes().iter().map(|x| x.powf(selector.mu)).collect();
                let prop = Propagator::new(selector.field, &ext, &time[0], selector.i, selector.j)?;
                (prop, Some(Mirror { normal: normal.len(), power }))
            }
            (_, d) => return Err(Error::Spec(format!("{} cannot act on a {d:?} lattice", kind.tag()))),
        };
        Ok(Self { selector, domain: domain.clone(), axes: axes.to_vec(), prop, mirror })
    }

    /// An operator on the lattice of `template`.
    pub fn on(selector: KernelSelector<'a>, template: &GridFunction) -> Result<Self> {
        Self::new(selector, &template.domain, &template.axes)
    }

    fn check(&self, h: &GridFunction) -> Result<()> {
        if h.domain != self.domain || h.axes != self.axes {
            return Err(Error::Spec(format!("input lattice differs from the lattice of {}", self.selector.describe())));
        }
        Ok(())
    }

    fn wrap(&self, values: Vec<f64>) -> GridFunction {
        GridFunction { domain: self.domain.clone(), axes: self.axes.clone(), values }
    }

    fn space_len(&self) -> usize {
        self.axes[..self.axes.len() - 1].iter().map(Axis::len).product()
    }
}

impl LinearOperator for Operator<'_> {
    fn apply(&self, h: &GridFunction) -> Result<GridFunction> {
        self.check(h)?;
        let ns = self.space_len();
        let values = match (self.selector.kind, &self.mirror) {
            (KernelKind::FrakG, _) => self.prop.full(&h.values),
            (KernelKind::FrakGHat, _) => self.prop.truncated(&h.values),
            (kind, Some(m)) => {
                let p = &m.power;
                let ext = self.prop.full(&m.odd(&h.values, ns, |r| 1.0 / p[r]));
                let mut out = m.restrict(&ext, ns, false, |r| p[r]);
                if kind == KernelKind::CalG {
                    let cut = self.prop.truncated(&m.zero(&h.values, ns, |_| 1.0));
                    let cut = m.restrict(&cut, ns, false, |_| 1.0);
                    out.iter_mut().zip(cut).for_each(|(a, b)| *a -= b);
                }
                out
            }
            (_, None) => unreachable!("half-space kinds always carry a mirror"),
        };
        Ok(self.wrap(values))
    }

    fn adjoint(&self, g: &GridFunction) -> Result<GridFunction> {
        self.check(g)?;
        let ns = self.space_len();
        let values = match (self.selector.kind, &self.mirror) {
            (KernelKind::FrakG, _) => self.prop.full_adjoint(&g.values),
            (KernelKind::FrakGHat, _) => self.prop.truncated_adjoint(&g.values),
            (kind, Some(m)) => {
                let p = &m.power;
                let ext = self.prop.full_adjoint(&m.zero(&g.values, ns, |r| p[r]));
                let mut out = m.restrict(&ext, ns, true, |r| 1.0 / p[r]);
                if kind == KernelKind::CalG {
                    let cut = self.prop.truncated_adjoint(&m.zero(&g.values, ns, |_| 1.0));
                    let cut = m.restrict(&cut, ns, false, |_| 1.0);
                    out.iter_mut().zip(cut).for_each(|(a, b)| *a -= b);
                }
                out
            }
            (_, None) => unreachable!("half-space kinds always carry a mirror"),
        };
        Ok(self.wrap(values))
    }
}

/// `(𝒦h)(x,t)` on the lattice of `h`.
pub fn apply(selector: &KernelSelector<'_>, h: &GridFunction) -> Result<GridFunction> {
    Operator::on(*selector, h)?.apply(h)
}

const GAUSS2: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];

/// Reference value of `(𝒦h)` at space node `x_index` and time node
/// `t_index` by direct summation over the lattice, for the whole-space kinds.
///
/// The inner integral is taken in subtracted form for lags below
/// `h_max²/ν`, where the kernel is narrower than the lattice resolves and
/// lives well inside the box; longer lags use the plain lattice sum, which
/// is accurate there and does not assume the box holds the kernel's full
/// (zero) mean. The
/// `s`-integral uses two-point Gauss panels on the time cells, the
/// coefficient breakpoints, the truncation lag and [`GRADED_LEVELS`] dyadic
/// panels toward `s = t`.
pub fn direct_value(selector: &KernelSelector<'_>, h: &GridFunction, x_index: usize, t_index: usize) -> Result<f64> {
    if selector.kind.is_half_space() || h.domain != Domain::WholeSpace {
        return Err(Error::Capability("direct summation covers the whole-space kernels only".into()));
    }
    let cells = spectral::TimeCells::new(h.time_axis())?;
    let n = h.space_dim();
    let x = h.space_point(x_index);
    let tk = cells.node(t_index);
    let cut = match selector.kind {
        KernelKind::FrakGHat if x[n - 1] <= 0.0 => return Ok(0.0),
        KernelKind::FrakGHat => Some(tk - x[n - 1] * x[n - 1]),
        _ => None,
    };
    let lo = cells.faces[0];
    let mut faces: Vec<f64> = cells.faces[..=t_index + 1].to_vec();
    faces.extend(selector.field.breakpoints().iter().copied().filter(|&b| b > lo && b < tk));
    let w = cells.widths[t_index];
    faces.extend((1..=GRADED_LEVELS).map(|l| tk - w * 0.5f64.powi(l as i32)));
    faces.extend(cut.filter(|&c| c > lo));
    faces.sort_by(f64::total_cmp);
    faces.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * (1.0 + b.abs()));
    let ns = h.space_len();
    let points: Vec<(Vec<f64>, f64)> = (0..ns).map(|i| (h.space_point(i), h.space_weight(i))).collect();
    let h_max = h.space_axes().iter().flat_map(|a| a.weights().iter().copied()).fold(0.0, f64::max);
    let subtract_below = h_max * h_max / selector.field.nu();
    let mut z = vec![0.0; n];
    let mut total = 0.0;
    for pair in faces.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if cut.is_some_and(|c| b <= c) {
            continue;
        }
        let m = cells.faces[1..].partition_point(|&f| f < 0.5 * (a + b));
        let slice = h.slice(m);
        for g in GAUSS2 {
            let s = 0.5 * (a + b) + 0.5 * (b - a) * g;
            let hx = if tk - s < subtract_below { slice[x_index] } else { 0.0 };
            let kernel = WholeKernel::new(selector.field, tk, s)?;
            let mut inner = 0.0;
            for (i, (y, vol)) in points.iter().enumerate() {
                for c in 0..n {
                    z[c] = x[c] - y[c];
                }
                inner += kernel.d2(selector.i, selector.j, &z) * (slice[i] - hx) * vol;
            }
            total += 0.5 * (b - a) * inner;
        }
    }
    Ok(total)
}

/// Lattice and trial-function parameters of [`operator_norm_probe`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormProbeParams {
    pub trials: usize,
    /// Number of refinement levels; each halves the space and time steps.
    pub levels: usize,
    pub seed: u64,
    /// Level-0 cells per space axis across `[−extent, extent]`.
    pub cells: usize,
    /// Level-0 time steps on `(0, horizon]`.
    pub steps: usize,
    pub extent: f64,
    pub horizon: f64,
    /// Power iterations on `𝒦*𝒦` (used for `p = q = 2` only).
    pub power_iterations: usize,
    pub cap: f64,
}

impl Default for NormProbeParams {
    fn default() -> Self {
        Self {
            trials: 4,
            levels: 3,
            seed: 0,
            cells: 12,
            steps: 8,
            extent: 2.0,
            horizon: 1.0,
            power_iterations: 8,
            cap: DEFAULT_CAP,
        }
    }
}

impl NormProbeParams {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.levels == 0 {
            return Err(Error::InvalidInput("trials and levels must be at least 1".into()));
        }
        if self.cells < 2 || self.cells % 2 != 0 || self.steps == 0 {
            return Err(Error::InvalidInput(format!(
                "cells = {} must be even and at least 2, steps = {} positive",
                self.cells, self.steps
            )));
        }
        if !(self.extent > 0.0 && self.horizon > 0.0 && self.cap > 1.0) {
            return Err(Error::InvalidInput("extent, horizon must be positive and cap above 1".into()));
        }
        Ok(())
    }

    /// Lattice at refinement `level` for the given domain.
    pub fn lattice(&self, n: usize, half: bool, level: usize) -> (Domain, Vec<Axis>) {
        let c = self.cells << level;
        let mut axes: Vec<Axis> = (0..n).map(|_| Axis::cells(-self.extent, self.extent, c)).collect();
        let domain = if half {
            axes[n - 1] = Axis::cells(0.0, self.extent, c / 2);
            Domain::HalfSpace
        } else {
            Domain::WholeSpace
        };
        let nt = self.steps << level;
        let dt = self.horizon / nt as f64;
        axes.push(Axis::lattice(dt, dt, nt));
        (domain, axes)
    }

    /// Seeded trial function number `k`, the same at every level.
    pub fn trial(&self, n: usize, half: bool, k: usize) -> GaussianSum {
        let e = self.extent;
        let mut lo = vec![-0.5 * e; n];
        let mut hi = vec![0.5 * e; n];
        if half {
            lo[n - 1] = 0.25 * e;
            hi[n - 1] = 0.5 * e;
        }
        lo.push(0.15 * self.horizon);
        hi.push(0.5 * self.horizon);
        let mut w_lo = vec![0.15 * e; n];
        let mut w_hi = vec![0.35 * e; n];
        w_lo.push(0.1 * self.horizon);
        w_hi.push(0.25 * self.horizon);
        GaussianSum::random(self.seed.wrapping_add(k as u64), &lo, &hi, &w_lo, &w_hi)
    }
}

fn sample(g: &GaussianSum, domain: &Domain, axes: &[Axis]) -> GridFunction {
    GridFunction::from_fn(domain.clone(), axes.to_vec(), |x, t| {
        let mut z = x.to_vec();
        z.push(t);
        g.eval(&z)
    })
}

fn l2_spec(spec: &NormSpec) -> bool {
    spec.p == 2.0 && spec.q == 2.0
}

/// Largest `‖Tg‖/‖g‖` seen while iterating `g ← T*Tg` with
/// `T = W𝒦W⁻¹` in the unweighted lattice `L_2`.
pub fn power_estimate(op: &dyn LinearOperator, start: &GridFunction, spec: &NormSpec, iterations: usize) -> Result<f64> {
    let w = weight_values(start, spec.weight, spec.mu);
    let ns = w.len();
    let plain = NormSpec::new(2.0, 2.0, Order::SpaceThenTime);
    let scale = |f: &GridFunction, inverse: bool| {
        f.values
            .iter()
            .enumerate()
            .map(|(idx, v)| if inverse { v / w[idx % ns] } else { v * w[idx % ns] })
            .collect::<Vec<f64>>()
    };
    let with = |f: &GridFunction, values: Vec<f64>| GridFunction { domain: f.domain.clone(), axes: f.axes.clone(), values };
    let mut g = with(start, scale(start, false));
    let mut best: f64 = 0.0;
    for _ in 0..iterations.max(1) {
        let ng = norm(&g, &plain)?;
        if ng == 0.0 {
            break;
        }
        let u = op.apply(&with(&g, scale(&g, true)))?;
        let u = with(&u, scale(&u, false));
        best = best.max(norm(&u, &plain)? / ng);
        let z = op.adjoint(&with(&u, scale(&u, false)))?;
        let z = with(&z, scale(&z, true));
        let nz = norm(&z, &plain)?;
        if nz == 0.0 {
            break;
        }
        g = z.map(|v| v / nz);
    }
    Ok(best)
}

/// Per-level ratios `‖𝒦h‖_out/‖h‖_in` of each trial and of the power
/// iteration (when both specs are the same `L_2` norm).
pub struct NormEstimates {
    pub trials: Vec<Vec<f64>>,
    pub power: Option<Vec<f64>>,
}

impl NormEstimates {
    /// Best lower bound per level.
    pub fn best(&self) -> Vec<f64> {
        let levels = self.trials.first().map_or(0, Vec::len);
        (0..levels)
            .map(|l| {
                let t = self.trials.iter().map(|v| v[l]).fold(0.0, f64::max);
                self.power.as_ref().map_or(t, |p| t.max(p[l]))
            })
            .collect()
    }
}

/// Ratios for every trial at every level, with operators built by `make`.
pub fn norm_estimates<'o, F>(
    n: usize,
    half: bool,
    params: &NormProbeParams,
    spec_in: &NormSpec,
    spec_out: &NormSpec,
    make: F,
) -> Result<NormEstimates>
where
    F: Fn(&Domain, &[Axis]) -> Result<Box<dyn LinearOperator + Sync + 'o>> + Sync,
{
    params.validate()?;
    spec_in.validate()?;
    spec_out.validate()?;
    let power_on = l2_spec(spec_in) && spec_in == spec_out && params.power_iterations > 0;
    let mut trials = vec![Vec::new(); params.trials];
    let mut power = power_on.then(Vec::new);
    for level in 0..params.levels {
        let (domain, axes) = params.lattice(n, half, level);
        spec_in.check_domain(&domain)?;
        spec_out.check_domain(&domain)?;
        let op = make(&domain, &axes)?;
        let inputs: Vec<GridFunction> = (0..params.trials).map(|k| sample(&params.trial(n, half, k), &domain, &axes)).collect();
        let ratios: Vec<f64> = inputs
            .par_iter()
            .map(|h| -> Result<f64> {
                let out = op.apply(h)?;
                let below = norm(h, spec_in)?;
                Ok(if below == 0.0 { 0.0 } else { norm(&out, spec_out)? / below })
            })
            .collect::<Result<_>>()?;
        for (t, r) in trials.iter_mut().zip(ratios) {
            t.push(r);
        }
        if let Some(p) = power.as_mut() {
            p.push(power_estimate(op.as_ref(), &inputs[0], spec_in, params.power_iterations)?);
        }
    }
    Ok(NormEstimates { trials, power })
}

/// Lower-bound operator-norm estimates per refinement level; passes when the
/// best estimate grows by at most `params.cap` between levels.
pub fn operator_norm_probe(
    selector: &KernelSelector<'_>,
    spec_in: &NormSpec,
    spec_out: &NormSpec,
    params: &NormProbeParams,
) -> Result<ProbeReport> {
    selector.validate()?;
    let n = selector.field.dim();
    let half = selector.kind.is_half_space();
    let est = norm_estimates(n, half, params, spec_in, spec_out, |d, a| {
        Ok(Box::new(Operator::new(*selector, d, a)?) as Box<dyn LinearOperator + Sync>)
    })?;
    let mut report = ProbeReport::new("", "operator-norm");
    report
        .param("kernel", selector.describe())
        .param("spec_in", describe_spec(spec_in))
        .param("spec_out", describe_spec(spec_out))
        .param("trials", params.trials)
        .param("seed", params.seed);
    report.outside_hypothesis = !selector.in_hypothesis();
    let levels: Vec<f64> = (0..params.levels).map(|l| l as f64).collect();
    let best = est.best();
    if let Some(&last) = best.last() {
        report.fit("norm_lower_bound", last);
    }
    report.push(Series::new("estimate", "norm_lower_bound", levels.clone(), best, Rule::Stable { cap: params.cap }));
    for (k, t) in est.trials.into_iter().enumerate() {
        report.push(Series::new(format!("trial[{k}]"), "norm_ratio", levels.clone(), t, Rule::Info));
    }
    if let Some(p) = est.power {
        report.push(Series::new("power", "norm_ratio", levels, p, Rule::Info));
    }
    Ok(report)
}

pub(crate) fn describe_spec(spec: &NormSpec) -> String {
    let w = match spec.weight {
        WeightKind::None => String::new(),
        k => format!(" {k:?}^{}", spec.mu),
    };
    format!("p={} q={} {}{w}", spec.p, spec.q, spec.order.tag())
}
