//! Far-field decay of the operators on moment-free dipoles.
//!
//! Inputs are products of Gaussians in space and compact bumps in time, so
//! the space integral is a Gaussian convolution in closed form: for
//! `Σ = 2B(t,s) + w²I`, `∫D_iD_jΓ(x−y;t,s)G_w(y−c)dy = D_iD_jN(x−c; Σ)`.
//! For the half-space kinds the input carries the factor `y_n^μ`, which the
//! weight `(x_n/y_n)^μ` cancels, and reflected centres give the image term;
//! the truncated whole-space part of `𝒢_ij` keeps one Gauss–Hermite integral
//! in `y_n`. The remaining `s`-integral uses Gauss panels graded toward
//! `s = t`, and the far-field and input norms are quadratures on graded
//! lattices.
//!
//! Each family follows parabolic scaling: space geometry uses bumps of width
//! `δ/10` in time profiles of half-width `κ_t δ²`; time geometry uses a
//! spatial Gaussian of width `κ_s √δ`; the centre sits `wall_ratio` length
//! scales above the wall.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{KernelKind, KernelSelector, GRADED_LEVELS};
use crate::error::{Error, Result};
use crate::grid::Axis;
use crate::probe::{ProbeReport, Rule, Series};
use crate::quadrature::{hermite_expectation, legendre, on_panel};

/// Relative size above which a discrete moment counts as nonzero.
pub const MOMENT_TOL: f64 = 1e-12;
/// Bump widths kept between a half-space input and the wall.
const WALL_WIDTHS: f64 = 6.0;
const HERMITE_NODES: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    /// `∫h(y,s)dy ≡ 0`, support `|y−y⁰| ≤ δ`; far field over `|x−y⁰| > 2δ`.
    SpaceMomentZero,
    /// `∫h(y,s)ds ≡ 0`, support `|s−s⁰| ≤ δ`; far field over `|t−s⁰| > 2δ`.
    TimeMomentZero,
}

impl Geometry {
    pub fn tag(self) -> &'static str {
        match self {
            Geometry::SpaceMomentZero => "space_moment_zero",
            Geometry::TimeMomentZero => "time_moment_zero",
        }
    }
}

/// Tangential position and time of a dipole centre; the normal coordinate
/// follows from `wall_ratio`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Center {
    #[serde(default)]
    pub tangential: Vec<f64>,
    pub s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CancellationParams {
    pub deltas: Vec<f64>,
    pub centers: Vec<Center>,
    /// `q` of `|||h|||_{1,q}` (space geometry) or `p` of `‖h‖_{p,1}` (time).
    pub exponent: f64,
    pub time_scale: f64,
    pub space_scale: f64,
    pub wall_ratio: f64,
    /// Half-width of the far-field space box.
    pub outer: f64,
    /// Length of the far-field time window past the input.
    pub tail: f64,
    /// Allowed relative change between neighbouring ratios.
    pub band: f64,
}

impl Default for CancellationParams {
    fn default() -> Self {
        Self {
            deltas: vec![0.05, 0.025, 0.0125],
            centers: vec![Center { tangential: Vec::new(), s: 0.2 }, Center { tangential: Vec::new(), s: 0.3 }],
            exponent: 2.0,
            time_scale: 4.0,
            space_scale: 0.25,
            wall_ratio: 2.0,
            outer: 3.0,
            tail: 4.0,
            band: 0.25,
        }
    }
}

/// Bump `(1 − u²)⁴` on `[−1, 1]`.
fn bump(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - u * u).powi(4)
    }
}

/// Gaussian density `N(·; Σ)` in at most two dimensions and its first two
/// derivatives.
struct Smooth {
    inv: [[f64; 2]; 2],
    dim: usize,
    norm: f64,
}

impl Smooth {
    fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        let dim = sigma.nrows();
        let mut inv = [[0.0; 2]; 2];
        let det = match dim {
            0 => 1.0,
            1 => {
                inv[0][0] = 1.0 / sigma[(0, 0)];
                sigma[(0, 0)]
            }
            _ => {
                let det = sigma.determinant();
                inv = [[sigma[(1, 1)] / det, -sigma[(0, 1)] / det], [-sigma[(1, 0)] / det, sigma[(0, 0)] / det]];
                det
            }
        };
        if !(det > 0.0) {
            return Err(Error::Degenerate { det });
        }
        let norm = (2.0 * std::f64::consts::PI).powf(-0.5 * dim as f64) / det.sqrt();
        Ok(Self { inv, dim, norm })
    }

    fn deriv(&self, z: &[f64], idx: &[usize]) -> f64 {
        let mut v = [0.0; 2];
        let mut quad = 0.0;
        for a in 0..self.dim {
            v[a] = (0..self.dim).map(|b| self.inv[a][b] * z[b]).sum();
            quad += v[a] * z[a];
        }
        let value = self.norm * (-0.5 * quad).exp();
        match *idx {
            [] => value,
            [a] => -v[a] * value,
            [a, b] => (v[a] * v[b] - self.inv[a][b]) * value,
            _ => unreachable!("at most two derivatives"),
        }
    }
}

/// One Gaussian of a dipole.
struct Lobe {
    center: Vec<f64>,
    sign: f64,
}

struct Setup<'s, 'f> {
    sel: &'s KernelSelector<'f>,
    lobes: Vec<Lobe>,
    width: f64,
    /// Time profile, its support and an interior panel face.
    profile: Box<dyn Fn(f64) -> f64 + 's>,
    support: (f64, f64),
    split: f64,
    hermite: Vec<(f64, f64)>,
}

impl Setup<'_, '_> {
    fn n(&self) -> usize {
        self.sel.field.dim()
    }

    fn has_cut(&self) -> bool {
        matches!(self.sel.kind, KernelKind::FrakGHat | KernelKind::CalG)
    }

    /// Gauss nodes `(s, weight·profile(s))` for output time `t` on the row
    /// at height `xn`.
    fn s_nodes(&self, t: f64, xn: f64, rule: &[(f64, f64)]) -> Vec<(f64, f64)> {
        let (lo, top) = self.support;
        let hi = top.min(t);
        if hi <= lo {
            return Vec::new();
        }
        let mut faces = vec![lo, hi];
        faces.extend((1..8).map(|k| lo + (top - lo) * k as f64 / 8.0).filter(|&f| f < hi));
        faces.push(self.split);
        faces.extend((1..=GRADED_LEVELS).map(|l| hi - (hi - lo) * 0.5f64.powi(l as i32)));
        faces.extend(self.sel.field.breakpoints().iter().copied());
        if self.has_cut() {
            faces.push(t - xn * xn);
        }
        faces.retain(|&f| f >= lo && f <= hi);
        faces.sort_by(f64::total_cmp);
        faces.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * (1.0 + b.abs()));
        faces.windows(2).flat_map(|p| on_panel(rule, p[0], p[1]).map(|(s, w)| (s, w * (self.profile)(s))).collect::<Vec<_>>()).collect()
    }

    /// `∫_0^∞ ∂^k_{x_n}N(x_n−y; 2b) y^μ N(y−c; w²) dy`.
    fn normal_factor(&self, xn: f64, b: f64, c: f64, k: usize) -> f64 {
        let w2 = self.width * self.width;
        let sn = 2.0 * b + w2;
        let pref = (-(xn - c).powi(2) / (2.0 * sn)).exp() / (2.0 * std::f64::consts::PI * sn).sqrt();
        let m = (w2 * xn + 2.0 * b * c) / sn;
        let sd = (2.0 * b * w2 / sn).sqrt();
        let mu = self.sel.mu;
        let e: f64 = self
            .hermite
            .iter()
            .map(|&(z, wt)| {
                let y = m + sd * z;
                if y <= 0.0 {
                    return 0.0;
                }
                let d = (xn - y) / (2.0 * b);
                let poly = match k {
                    0 => 1.0,
                    1 => -d,
                    _ => d * d - 1.0 / (2.0 * b),
                };
                wt * poly * y.powf(mu)
            })
            .sum();
        pref * e
    }

    /// Output values at time `t` along the row `xn` for each tangential point.
    fn row(&self, t: f64, xn: f64, tangential: &[Vec<f64>], rule: &[(f64, f64)], out: &mut [f64]) -> Result<()> {
        let n = self.n();
        let (i, j) = (self.sel.i, self.sel.j);
        let kind = self.sel.kind;
        if matches!(kind, KernelKind::FrakGHat) && xn <= 0.0 {
            return Ok(());
        }
        let tidx: Vec<usize> = [i, j].into_iter().filter(|&a| a < n - 1).collect();
        let kn = 2 - tidx.len();
        let weight = if kind.is_half_space() { xn.powf(self.sel.mu) } else { 1.0 };
        let mut x = vec![0.0; n];
        let mut z = vec![0.0; n];
        for (s, ws) in self.s_nodes(t, xn, rule) {
            if ws == 0.0 {
                continue;
            }
            let b = self.sel.field.integral(s, t);
            let sigma = &b * 2.0 + DMatrix::identity(n, n) * (self.width * self.width);
            let full = Smooth::new(&sigma)?;
            let cut = self.has_cut() && t - s < xn * xn;
            let tang = if cut && kind == KernelKind::CalG {
                let normal: Vec<f64> =
                    self.lobes.iter().map(|l| self.normal_factor(xn, b[(n - 1, n - 1)], l.center[n - 1], kn)).collect();
                Some((Smooth::new(&sigma.view((0, 0), (n - 1, n - 1)).into_owned())?, normal))
            } else {
                None
            };
            for (o, xt) in out.iter_mut().zip(tangential) {
                x[..n - 1].copy_from_slice(xt);
                x[n - 1] = xn;
                let mut v = 0.0;
                for (li, lobe) in self.lobes.iter().enumerate() {
                    let d2 = |zz: &mut Vec<f64>, reflect: bool| {
                        for a in 0..n {
                            zz[a] = x[a] - lobe.center[a];
                        }
                        if reflect {
                            zz[n - 1] = x[n - 1] + lobe.center[n - 1];
                        }
                        full.deriv(zz, &[i, j])
                    };
                    let term = match kind {
                        KernelKind::FrakG => d2(&mut z, false),
                        KernelKind::FrakGHat => {
                            if cut {
                                d2(&mut z, false)
                            } else {
                                0.0
                            }
                        }
                        KernelKind::FrakGD | KernelKind::CalG => {
                            let mut t = weight * (d2(&mut z, false) - d2(&mut z, true));
                            if let Some((tg, normal)) = &tang {
                                let mut zt = [0.0; 2];
                                for a in 0..n - 1 {
                                    zt[a] = x[a] - lobe.center[a];
                                }
                                t -= tg.deriv(&zt, &tidx) * normal[li];
                            }
                            t
                        }
                    };
                    v += lobe.sign * term;
                }
                *o += ws * v;
            }
        }
        Ok(())
    }
}

/// Shift an axis by `by`.
fn shifted(axis: Axis, by: f64) -> Axis {
    Axis::from_faces(axis.faces().expect("cell axis").iter().map(|f| f + by).collect())
}

/// Panels from `a` with first width `first` growing by `ratio` up to `b`.
fn geometric_faces(a: f64, b: f64, first: f64, ratio: f64) -> Vec<f64> {
    let mut faces = vec![a];
    let mut w = first;
    while *faces.last().unwrap() < b - 1e-12 {
        let next = (faces.last().unwrap() + w).min(b);
        faces.push(if b - next < 0.5 * w { b } else { next });
        w *= ratio;
    }
    faces
}

fn time_nodes(faces: &[f64], rule: &[(f64, f64)]) -> Vec<(f64, f64)> {
    faces.windows(2).flat_map(|p| on_panel(rule, p[0], p[1]).collect::<Vec<_>>()).collect()
}

/// Far-field functional and input norm for one `(δ, centre)`.
pub struct DecayMeasurement {
    pub far_field: f64,
    pub input_norm: f64,
}

impl DecayMeasurement {
    pub fn ratio(&self) -> f64 {
        self.far_field / self.input_norm
    }
}

/// Lengths of the parabolically scaled family at `delta`.
fn scales(geometry: Geometry, delta: f64, params: &CancellationParams) -> (f64, f64) {
    match geometry {
        Geometry::SpaceMomentZero => (delta, delta / 10.0),
        Geometry::TimeMomentZero => {
            let w = params.space_scale * delta.sqrt();
            (delta.sqrt(), w)
        }
    }
}

pub fn measure(
    sel: &KernelSelector<'_>,
    geometry: Geometry,
    delta: f64,
    center: &Center,
    params: &CancellationParams,
) -> Result<DecayMeasurement> {
    let n = sel.field.dim();
    if n > 2 {
        return Err(Error::Capability(format!("cancellation probes support n <= 2, got n = {n}")));
    }
    if center.tangential.len() != n - 1 {
        return Err(Error::InvalidInput(format!("centre needs {} tangential coordinates", n - 1)));
    }
    let half = sel.kind.is_half_space();
    if half && n == 1 && geometry == Geometry::SpaceMomentZero {
        return Err(Error::Capability("a tangential dipole needs n >= 2 on the half-space".into()));
    }
    let (length, width) = scales(geometry, delta, params);
    let mut y0 = center.tangential.clone();
    y0.push(params.wall_ratio * length);
    if y0[n - 1] - WALL_WIDTHS * width <= 0.0 {
        return Err(Error::Construction(format!(
            "dipole at height {} is within {WALL_WIDTHS} widths ({width}) of the wall",
            y0[n - 1]
        )));
    }
    let s0 = center.s;
    let lobes: Vec<Lobe> = match geometry {
        Geometry::SpaceMomentZero => [1.0, -1.0]
            .into_iter()
            .map(|sign| {
                let mut c = y0.clone();
                c[0] += sign * 0.5 * delta;
                Lobe { center: c, sign }
            })
            .collect(),
        Geometry::TimeMomentZero => vec![Lobe { center: y0.clone(), sign: 1.0 }],
    };
    let (profile, support): (Box<dyn Fn(f64) -> f64>, (f64, f64)) = match geometry {
        Geometry::SpaceMomentZero => {
            let d = params.time_scale * delta * delta;
            (Box::new(move |s| bump((s - s0) / d)), (s0 - d, s0 + d))
        }
        Geometry::TimeMomentZero => {
            let h = 0.5 * delta;
            (Box::new(move |s| bump((s - s0 + h) / h) - bump((s - s0 - h) / h)), (s0 - delta, s0 + delta))
        }
    };
    let setup = Setup { sel, lobes, width, profile, support, split: s0, hermite: hermite_expectation(HERMITE_NODES) };
    let gl2 = legendre(2);
    let gl4 = legendre(4);

    // input: moment check and norm
    let rho = |y: &[f64]| if half { y[n - 1].powf(sel.mu) } else { 1.0 };
    let g = |y: &[f64]| -> f64 {
        setup
            .lobes
            .iter()
            .map(|l| {
                let e: f64 = y.iter().zip(&l.center).map(|(a, c)| (a - c).powi(2)).sum();
                l.sign * (-0.5 * e / (width * width)).exp()
            })
            .sum::<f64>()
            * (2.0 * std::f64::consts::PI * width * width).powf(-0.5 * n as f64)
            * rho(y)
    };
    let in_axes: Vec<Axis> = (0..n)
        .map(|a| {
            let e = WALL_WIDTHS * width + if a == 0 && geometry == Geometry::SpaceMomentZero { 0.5 * delta } else { 0.0 };
            let cells = 2 * (e / (0.25 * width)).ceil() as usize;
            Axis::cells(y0[a] - e, y0[a] + e, cells)
        })
        .collect();
    let in_points = tensor_points(&in_axes);
    let p_in = params.exponent;
    let s_rule: Vec<(f64, f64)> = time_nodes(&geometric_faces(support.0, support.1, (support.1 - support.0) / 16.0, 1.0), &gl4);
    let input_norm = match geometry {
        Geometry::SpaceMomentZero => {
            let (mut moment, mut mass) = (0.0, 0.0);
            for (y, vol) in &in_points {
                let v = g(y) * vol;
                moment += v;
                mass += v.abs();
            }
            if moment.abs() > MOMENT_TOL * mass {
                return Err(Error::Construction(format!("space moment {moment:e} of mass {mass:e} is not zero")));
            }
            let lq: f64 = s_rule.iter().map(|&(s, w)| w * (setup.profile)(s).abs().powf(p_in)).sum::<f64>().powf(1.0 / p_in);
            mass * lq
        }
        Geometry::TimeMomentZero => {
            let moment: f64 = s_rule.iter().map(|&(s, w)| w * (setup.profile)(s)).sum();
            let l1: f64 = s_rule.iter().map(|&(s, w)| w * (setup.profile)(s).abs()).sum();
            if moment.abs() > MOMENT_TOL * l1 {
                return Err(Error::Construction(format!("time moment {moment:e} of mass {l1:e} is not zero")));
            }
            let lp: f64 = in_points.iter().map(|(y, vol)| vol * g(y).abs().powf(p_in)).sum::<f64>().powf(1.0 / p_in);
            lp * l1
        }
    };

    // output lattice
    let first = match geometry {
        Geometry::SpaceMomentZero => delta / 16.0,
        Geometry::TimeMomentZero => width / 8.0,
    };
    let max_w = params.outer / 30.0;
    let mut out_axes: Vec<Axis> =
        (0..n - 1).map(|a| shifted(Axis::graded_symmetric(first, 1.1, max_w, params.outer), y0[a])).collect();
    out_axes.push(if half || sel.kind == KernelKind::FrakGHat {
        Axis::graded_from_wall(first, 1.1, max_w, y0[n - 1] + params.outer)
    } else {
        shifted(Axis::graded_symmetric(first, 1.1, max_w, params.outer), y0[n - 1])
    });
    let t_nodes = match geometry {
        Geometry::SpaceMomentZero => {
            let (a, b) = support;
            let mut faces: Vec<f64> = (0..8).map(|k| a + (b - a) * k as f64 / 8.0).collect();
            faces.extend(geometric_faces(b, b + params.tail, (b - a) / 8.0, 1.5));
            time_nodes(&faces, &gl2)
        }
        Geometry::TimeMomentZero => {
            let a = s0 + 2.0 * delta;
            time_nodes(&geometric_faces(a, a + params.tail, delta / 4.0, 1.5), &gl2)
        }
    };
    let tangential_pts: Vec<(Vec<f64>, f64)> =
        if n == 1 { vec![(Vec::new(), 1.0)] } else { tensor_points(&out_axes[..n - 1]) };
    let tangential: Vec<Vec<f64>> = tangential_pts.iter().map(|p| p.0.clone()).collect();
    let normal = &out_axes[n - 1];
    let nt = t_nodes.len();
    // values[row][tangential][time]
    let mut values = vec![vec![vec![0.0; nt]; tangential.len()]; normal.len()];
    let mut buf = vec![0.0; tangential.len()];
    for (r, &xn) in normal.nodes().iter().enumerate() {
        for (k, &(t, _)) in t_nodes.iter().enumerate() {
            buf.iter_mut().for_each(|v| *v = 0.0);
            setup.row(t, xn, &tangential, &gl2, &mut buf)?;
            for (q, v) in buf.iter().enumerate() {
                values[r][q][k] = *v;
            }
        }
    }
    let e = p_in;
    let far_field = match geometry {
        Geometry::SpaceMomentZero => {
            let mut acc = 0.0;
            for (r, (&xn, &hn)) in normal.nodes().iter().zip(normal.weights()).enumerate() {
                for (q, (xt, vol)) in tangential_pts.iter().enumerate() {
                    let dist2: f64 =
                        xt.iter().zip(&y0).map(|(a, c)| (a - c).powi(2)).sum::<f64>() + (xn - y0[n - 1]).powi(2);
                    if dist2 <= 4.0 * delta * delta {
                        continue;
                    }
                    let lq: f64 =
                        values[r][q].iter().zip(&t_nodes).map(|(v, (_, w))| w * v.abs().powf(e)).sum::<f64>().powf(1.0 / e);
                    acc += vol * hn * lq;
                }
            }
            acc
        }
        Geometry::TimeMomentZero => (0..nt)
            .map(|k| {
                let mut s = 0.0;
                for (r, &hn) in normal.weights().iter().enumerate() {
                    for (q, (_, vol)) in tangential_pts.iter().enumerate() {
                        s += vol * hn * values[r][q][k].abs().powf(e);
                    }
                }
                t_nodes[k].1 * s.powf(1.0 / e)
            })
            .sum(),
    };
    Ok(DecayMeasurement { far_field, input_norm })
}

/// Cell centres and volumes of a tensor lattice.
fn tensor_points(axes: &[Axis]) -> Vec<(Vec<f64>, f64)> {
    let mut pts = vec![(Vec::new(), 1.0)];
    for ax in axes {
        pts = pts
            .into_iter()
            .flat_map(|(p, w)| {
                ax.nodes().iter().zip(ax.weights()).map(move |(&x, &h)| {
                    let mut q = p.clone();
                    q.push(x);
                    (q, w * h)
                })
            })
            .collect();
    }
    pts
}

/// Far-field/input ratios for every `δ` and centre. Passes when neighbouring
/// ratios differ by at most the factor `1 + band`, both along the `δ`
/// ladder and across centres. The ratio follows the local anisotropy of the
/// coefficients at `s⁰`, so centres are best compared within one coefficient
/// regime.
pub fn cancellation_decay_probe(
    selector: &KernelSelector<'_>,
    geometry: Geometry,
    params: &CancellationParams,
) -> Result<ProbeReport> {
    selector.validate()?;
    if params.deltas.is_empty() || params.centers.is_empty() {
        return Err(Error::InvalidInput("need at least one delta and one centre".into()));
    }
    if params.deltas.iter().any(|&d| !(d > 0.0)) || !(params.exponent >= 1.0) {
        return Err(Error::InvalidInput("deltas must be positive and the exponent at least 1".into()));
    }
    let n = selector.field.dim();
    let centers: Vec<Center> = params
        .centers
        .iter()
        .map(|c| {
            let mut c = c.clone();
            if c.tangential.is_empty() {
                c.tangential = vec![0.0; n - 1];
            }
            c
        })
        .collect();
    let mut report = ProbeReport::new("", "cancellation");
    report
        .param("kernel", selector.describe())
        .param("geometry", geometry.tag())
        .param("exponent", params.exponent)
        .param("deltas", format!("{:?}", params.deltas));
    report.outside_hypothesis = !selector.in_hypothesis();
    let mut table = Vec::with_capacity(centers.len());
    for (k, c) in centers.iter().enumerate() {
        let m: Vec<DecayMeasurement> =
            params.deltas.iter().map(|&d| measure(selector, geometry, d, c, params)).collect::<Result<_>>()?;
        let ratios: Vec<f64> = m.iter().map(DecayMeasurement::ratio).collect();
        let tag = format!("center={k}");
        report.push(Series::new(format!("ratio[{tag}]"), "far_field_ratio", params.deltas.clone(), ratios.clone(), Rule::Band {
            tol: params.band,
        }));
        report.push(Series::new(
            format!("far_field[{tag}]"),
            "far_field",
            params.deltas.clone(),
            m.iter().map(|d| d.far_field).collect(),
            Rule::Info,
        ));
        report.push(Series::new(
            format!("input_norm[{tag}]"),
            "input_norm",
            params.deltas.clone(),
            m.iter().map(|d| d.input_norm).collect(),
            Rule::Info,
        ));
        table.push(ratios);
    }
    if centers.len() > 1 {
        let idx: Vec<f64> = (0..centers.len()).map(|k| k as f64).collect();
        for (l, &d) in params.deltas.iter().enumerate() {
            let across = table.iter().map(|r| r[l]).collect();
            report.push(Series::new(format!("across_centers[delta={d}]"), "far_field_ratio", idx.clone(), across, Rule::Band {
                tol: params.band,
            }));
        }
    }
    if let Some(max) = table.iter().flatten().copied().reduce(f64::max) {
        report.fit("max_ratio", max);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::CoefficientField;

    #[test]
    fn coincident_lobes_cancel_exactly() {
        let f = CoefficientField::identity(2).unwrap();
        let sel = KernelSelector::new(KernelKind::FrakG, 0, 0, 0.0, &f).unwrap();
        let lobes = [1.0, -1.0].map(|sign| Lobe { center: vec![0.0, 1.0], sign }).into_iter().collect();
        let setup = Setup {
            sel: &sel,
            lobes,
            width: 0.05,
            profile: Box::new(|s| bump(s - 0.5)),
            support: (0.0, 1.0),
            split: 0.5,
            hermite: hermite_expectation(8),
        };
        let mut out = vec![0.0; 2];
        setup.row(0.8, 1.3, &[vec![0.2], vec![-0.4]], &legendre(2), &mut out).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn gaussian_convolution_matches_quadrature() {
        // D_1D_1 of Γ(·;t,s) * G_w against a direct sum on a fine lattice
        let f = CoefficientField::switching(2, 0.5, 8, 1.0).unwrap();
        let (t, s, w) = (0.6, 0.45, 0.1);
        let c = [0.1, 0.8];
        let b = f.integral(s, t);
        let sigma = &b * 2.0 + DMatrix::identity(2, 2) * (w * w);
        let closed = Smooth::new(&sigma).unwrap().deriv(&[0.3 - c[0], 0.9 - c[1]], &[0, 0]);
        let kernel = crate::kernel_wholespace::WholeKernel::new(&f, t, s).unwrap();
        let h = 0.004;
        let mut direct = 0.0;
        for a in -250..250 {
            for bb in -250..250 {
                let y = [c[0] + (a as f64 + 0.5) * h, c[1] + (bb as f64 + 0.5) * h];
                let gw = (-((y[0] - c[0]).powi(2) + (y[1] - c[1]).powi(2)) / (2.0 * w * w)).exp()
                    / (2.0 * std::f64::consts::PI * w * w);
                direct += kernel.d2(0, 0, &[0.3 - y[0], 0.9 - y[1]]) * gw * h * h;
            }
        }
        assert!((closed - direct).abs() < 1e-6 * closed.abs().max(1.0), "{closed} {direct}");
    }

    #[test]
    fn normal_factor_matches_quadrature() {
        let f = CoefficientField::identity(2).unwrap();
        let sel = KernelSelector::new(KernelKind::CalG, 0, 1, 0.7, &f).unwrap();
        let setup = Setup {
            sel: &sel,
            lobes: Vec::new(),
            width: 0.1,
            profile: Box::new(|_| 1.0),
            support: (0.0, 1.0),
            split: 0.5,
            hermite: hermite_expectation(HERMITE_NODES),
        };
        let (xn, b, c) = (0.5, 0.02, 0.6);
        let fast = setup.normal_factor(xn, b, c, 1);
        let h = 1e-4;
        let direct: f64 = (1..20000)
            .map(|k| {
                let y = k as f64 * h;
                let g = (-(xn - y).powi(2) / (4.0 * b)).exp() / (4.0 * std::f64::consts::PI * b).sqrt();
                let gw = (-(y - c).powi(2) / 0.02).exp() / (0.02 * std::f64::consts::PI).sqrt();
                -(xn - y) / (2.0 * b) * g * y.powf(0.7) * gw * h
            })
            .sum();
        assert!((fast - direct).abs() < 1e-6 * direct.abs(), "{fast} {direct}");
    }

    #[test]
    fn wall_clearance_is_enforced() {
        let f = CoefficientField::identity(2).unwrap();
        let sel = KernelSelector::new(KernelKind::CalG, 0, 0, 1.0, &f).unwrap();
        let params = CancellationParams { wall_ratio: 0.3, ..Default::default() };
        let c = Center { tangential: vec![0.0], s: 0.3 };
        assert!(matches!(measure(&sel, Geometry::SpaceMomentZero, 0.1, &c, &params), Err(Error::Construction(_))));
    }
}
