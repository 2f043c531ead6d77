//! Local regularity of caloric functions: gradient bounds in half-size
//! cylinders and weighted normal-derivative bounds near the wall.
//!
//! Cylinders are `Q_R(x⁰,t⁰) = {|x − x⁰| < R, t⁰ − R² < t ≤ t⁰}`; the half
//! variant intersects with `{x_n > 0}` and uses the wall value 0 as the
//! lower neighbour of the first normal node.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HalfKernel;
use crate::coeffs::CoefficientField;
use crate::error::{Error, Result};
use crate::grid::{Axis, Domain, GridFunction};
use crate::probe::{ProbeReport, Rule, Series};

/// Where the cylinder sits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cylinder {
    pub center: Vec<f64>,
    pub t0: f64,
    pub radius: f64,
    /// Intersect with `{x_n > 0}` (then `center` should lie on the wall).
    pub half: bool,
}

impl Cylinder {
    fn contains(&self, x: &[f64], t: f64, r: f64) -> bool {
        let d2: f64 = x.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum();
        let n = x.len();
        d2 < r * r && t <= self.t0 && t > self.t0 - r * r && (!self.half || x[n - 1] > 0.0)
    }
}

/// Measured ratios for one function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalRatios {
    /// `sup_{Q_{R/2}} |Du| / (R⁻¹ sup_{Q_R} |u|)`.
    pub gradient: f64,
    /// `sup_{Q^+_{R/8^k}} x_n^{k−2+ε}|D^k_{x_n}u| / (R^{ε−2} sup_{Q_R}|u|)`;
    /// `None` for the interior variant.
    pub normal: Option<f64>,
    /// Largest relative residual `|∂_tu − a^{ij}D_iD_ju| / (R⁻² sup|u|)`.
    pub residual: f64,
}

/// Neighbour values along one axis, with the wall point `(0, 0)` below the
/// first normal node in the half variant.
struct Line<'a> {
    nodes: &'a [f64],
    stride: usize,
    wall: bool,
}

impl Line<'_> {
    /// `(coordinate, value)` at offset `d` from node index `i` of a point
    /// whose flat index is `base`; `None` outside the lattice.
    fn at(&self, slice: &[f64], base: usize, i: usize, d: isize) -> Option<(f64, f64)> {
        let j = i as isize + d;
        if j >= 0 && (j as usize) < self.nodes.len() {
            let idx = (base as isize + d * self.stride as isize) as usize;
            Some((self.nodes[j as usize], slice[idx]))
        } else if self.wall && j == -1 {
            Some((0.0, 0.0))
        } else {
            None
        }
    }
}

/// First and second derivatives from three (possibly uneven) points.
fn three_point(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> (f64, f64) {
    let (h1, h2) = (b.0 - a.0, c.0 - b.0);
    let d1 = (-h2 / (h1 * (h1 + h2))) * a.1 + ((h2 - h1) / (h1 * h2)) * b.1 + (h1 / (h2 * (h1 + h2))) * c.1;
    let d2 = 2.0 * (a.1 / (h1 * (h1 + h2)) - b.1 / (h1 * h2) + c.1 / (h2 * (h1 + h2)));
    (d1, d2)
}

/// `k!·u[x_0, …, x_k]`, the divided-difference estimate of `D^k u`.
fn divided(points: &[(f64, f64)]) -> f64 {
    let mut v: Vec<f64> = points.iter().map(|p| p.1).collect();
    let k = points.len() - 1;
    for level in 1..=k {
        for i in 0..=(k - level) {
            v[i] = (v[i + 1] - v[i]) / (points[i + level].0 - points[i].0);
        }
    }
    (1..=k).map(|m| m as f64).product::<f64>() * v[0]
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut st = vec![1; shape.len()];
    for a in (0..shape.len().saturating_sub(1)).rev() {
        st[a] = st[a + 1] * shape[a + 1];
    }
    st
}

/// Ratios for one function sampled on a space-time lattice containing the
/// cylinder.
pub fn local_ratios(
    u: &GridFunction,
    field: &CoefficientField,
    cyl: &Cylinder,
    k: usize,
    eps: f64,
    residual_tol: f64,
) -> Result<LocalRatios> {
    let n = u.space_dim();
    if n != field.dim() || cyl.center.len() != n {
        return Err(Error::Structural(format!("grid, field and cylinder dimensions differ ({n}, {}, {})", field.dim(), cyl.center.len())));
    }
    if k < 2 {
        return Err(Error::Domain(format!("normal derivative order must be at least 2, got {k}")));
    }
    u.check_finite()?;
    let r = cyl.radius;
    let shape = u.space_shape();
    let st = strides(&shape);
    let lines: Vec<Line> = (0..n)
        .map(|a| Line { nodes: u.axes[a].nodes(), stride: st[a], wall: cyl.half && a == n - 1 })
        .collect();
    let times = u.time_axis().nodes();
    let mut sup_u: f64 = 0.0;
    let mut grad: f64 = 0.0;
    let mut normal: f64 = 0.0;
    let mut residual: f64 = 0.0;
    let inner = r / 8f64.powi(k as i32);
    let mut x = vec![0.0; n];
    for (kt, &t) in times.iter().enumerate() {
        let slice = u.slice(kt);
        let a = field.at(t);
        for idx in 0..u.space_len() {
            u.space_point_into(idx, &mut x);
            if !cyl.contains(&x, t, r) {
                continue;
            }
            sup_u = sup_u.max(slice[idx].abs());
            let multi = u.space_multi(idx);
            // first and pure second derivatives per axis
            let mut d1 = vec![f64::NAN; n];
            let mut d2 = vec![f64::NAN; n];
            for (ax, line) in lines.iter().enumerate() {
                let i = multi[ax];
                if let (Some(p), Some(q)) = (line.at(slice, idx, i, -1), line.at(slice, idx, i, 1)) {
                    let (f1, f2) = three_point(p, (line.nodes[i], slice[idx]), q);
                    d1[ax] = f1;
                    d2[ax] = f2;
                }
            }
            if cyl.contains(&x, t, r / 2.0) && d1.iter().all(|v| v.is_finite()) {
                grad = grad.max(d1.iter().map(|v| v * v).sum::<f64>().sqrt());
            }
            if cyl.half && cyl.contains(&x, t, inner) {
                let line = &lines[n - 1];
                let i = multi[n - 1];
                let lo = i.saturating_sub(k / 2) as isize - i as isize;
                let pts: Option<Vec<(f64, f64)>> = (0..=k as isize).map(|o| line.at(slice, idx, i, lo + o)).collect();
                if let Some(pts) = pts {
                    normal = normal.max(x[n - 1].powf(k as f64 - 2.0 + eps) * divided(&pts).abs());
                }
            }
            // residual at interior space-time nodes
            if kt > 0 && kt + 1 < times.len() && d2.iter().all(|v| v.is_finite()) {
                let ut = (u.slice(kt + 1)[idx] - u.slice(kt - 1)[idx]) / (times[kt + 1] - times[kt - 1]);
                let mut lap = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        let aij = a[(i, j)];
                        if aij == 0.0 {
                            continue;
                        }
                        lap += aij * if i == j { d2[i] } else { mixed(&lines, slice, idx, &multi, i, j).unwrap_or(f64::NAN) };
                    }
                }
                residual = residual.max((ut - lap).abs());
            }
        }
    }
    if sup_u == 0.0 {
        return Ok(LocalRatios { gradient: 0.0, normal: cyl.half.then_some(0.0), residual: 0.0 });
    }
    let residual = residual / (sup_u / (r * r));
    if !(residual <= residual_tol) {
        return Err(Error::InvalidInput(format!("PDE residual {residual:e} exceeds tolerance {residual_tol:e}")));
    }
    Ok(LocalRatios {
        gradient: grad / (sup_u / r),
        normal: cyl.half.then(|| normal / (r.powf(eps - 2.0) * sup_u)),
        residual,
    })
}

/// Central mixed difference `D_iD_ju` from the four diagonal neighbours.
fn mixed(lines: &[Line], slice: &[f64], idx: usize, multi: &[usize], i: usize, j: usize) -> Option<f64> {
    let (li, lj) = (&lines[i], &lines[j]);
    let (pi, qi) = (li.at(slice, idx, multi[i], -1)?, li.at(slice, idx, multi[i], 1)?);
    let (pj, qj) = (lj.at(slice, idx, multi[j], -1)?, lj.at(slice, idx, multi[j], 1)?);
    let corner = |di: isize, dj: isize| -> Option<f64> {
        let ii = multi[i] as isize + di;
        let jj = multi[j] as isize + dj;
        if ii < 0 || jj < 0 || ii as usize >= li.nodes.len() || jj as usize >= lj.nodes.len() {
            return if (li.wall && ii == -1) || (lj.wall && jj == -1) { Some(0.0) } else { None };
        }
        let at = idx as isize + di * li.stride as isize + dj * lj.stride as isize;
        Some(slice[at as usize])
    };
    let v = corner(1, 1)? - corner(1, -1)? - corner(-1, 1)? + corner(-1, -1)?;
    Some(v / ((qi.0 - pi.0) * (qj.0 - pj.0)))
}

/// Ratios for each member of a family; every ratio must stay at or below
/// `cap`.
pub fn local_regularity_probe(
    family: &[GridFunction],
    field: &CoefficientField,
    cyl: &Cylinder,
    k: usize,
    eps: f64,
    residual_tol: f64,
    cap: f64,
) -> Result<ProbeReport> {
    let ratios = family.iter().map(|u| local_ratios(u, field, cyl, k, eps, residual_tol)).collect::<Result<Vec<_>>>()?;
    let levels: Vec<f64> = (0..ratios.len()).map(|i| i as f64).collect();
    let mut report = ProbeReport::new("local-regularity", "local-regularity");
    report.param("radius", cyl.radius).param("half", cyl.half).param("k", k).param("eps", eps);
    report.push(Series::new(
        "gradient",
        "sup|Du| R / sup|u|",
        levels.clone(),
        ratios.iter().map(|r| r.gradient).collect(),
        Rule::AtMost { limit: cap },
    ));
    if cyl.half {
        report.push(Series::new(
            "normal",
            format!("sup x_n^(k-2+eps)|D^k u| R^(2-eps) / sup|u| (k={k})"),
            levels.clone(),
            ratios.iter().map(|r| r.normal.unwrap_or(f64::NAN)).collect(),
            Rule::AtMost { limit: cap },
        ));
    }
    report.push(Series::new("residual", "relative PDE residual", levels, ratios.iter().map(|r| r.residual).collect(), Rule::Info));
    Ok(report)
}

/// Lattice around a cylinder: uniform tangential cells, and a normal axis
/// graded from the wall (half variant) so that `Q^+_{R/8^k}` is resolved.
pub fn cylinder_axes(cyl: &Cylinder, cells: usize, k: usize, time_steps: usize) -> Vec<Axis> {
    let n = cyl.center.len();
    let r = cyl.radius;
    let mut axes: Vec<Axis> = (0..n)
        .map(|a| {
            if cyl.half && a == n - 1 {
                let inner = r / 8f64.powi(k as i32);
                Axis::graded_from_wall(inner / 16.0, 1.15, 2.0 * r / cells as f64, r * 1.05)
            } else {
                Axis::cells(cyl.center[a] - 1.05 * r, cyl.center[a] + 1.05 * r, cells)
            }
        })
        .collect();
    let dt = r * r / time_steps as f64;
    axes.push(Axis::lattice(cyl.t0 - r * r - dt, dt, time_steps + 2));
    axes
}

/// `count` slices `u = Γ^D(·, y; ·, s)` with seeded sources: `y` at distance
/// in `[R, 3R]` from the centre with `y_n ∈ [R/4, 2R]`, and `s` at least
/// `R²/4` before the cylinder starts.
pub fn kernel_slices(field: &CoefficientField, cyl: &Cylinder, count: usize, seed: u64, axes: &[Axis]) -> Result<Vec<GridFunction>> {
    let n = field.dim();
    let r = cyl.radius;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_first = axes[n].nodes()[0];
    (0..count)
        .map(|_| {
            let mut y = cyl.center.clone();
            for c in y.iter_mut().take(n - 1) {
                *c += rng.gen_range(-2.0 * r..=2.0 * r);
            }
            y[n - 1] = rng.gen_range(0.25 * r..=2.0 * r);
            let s = t_first - rng.gen_range(0.25 * r * r..=r * r);
            let domain = if cyl.half { Domain::HalfSpace } else { Domain::WholeSpace };
            let kernels: Vec<HalfKernel> =
                axes[n].nodes().iter().map(|&t| HalfKernel::new(field, t, s)).collect::<Result<_>>()?;
            let times: Vec<f64> = axes[n].nodes().to_vec();
            Ok(GridFunction::from_fn(domain, axes.to_vec(), |x, t| {
                let kt = times.iter().position(|&v| v == t).expect("lattice time");
                kernels[kt].value(x, &y)
            }))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cyl(half: bool) -> Cylinder {
        Cylinder { center: vec![0.0, 0.0], t0: 1.0, radius: 0.5, half }
    }

    #[test]
    fn constant_has_zero_gradient() {
        let f = CoefficientField::identity(2).unwrap();
        let c = Cylinder { center: vec![0.0, 1.0], ..cyl(false) };
        let axes = cylinder_axes(&c, 16, 2, 8);
        let u = GridFunction::from_fn(Domain::WholeSpace, axes, |_, _| 3.0);
        let r = local_ratios(&u, &f, &c, 2, 0.1, 1e-8).unwrap();
        assert!(r.gradient < 1e-12);
        assert!(r.normal.is_none());
    }

    #[test]
    fn linear_normal_solution_has_unit_ratio() {
        let f = CoefficientField::identity(2).unwrap();
        let c = cyl(true);
        let axes = cylinder_axes(&c, 32, 2, 8);
        let u = GridFunction::from_fn(Domain::HalfSpace, axes, |x, _| x[1]);
        let r = local_ratios(&u, &f, &c, 2, 0.1, 1e-8).unwrap();
        assert!((r.gradient - 1.0).abs() < 0.05, "{r:?}");
        assert!(r.normal.unwrap() < 1e-6);
        assert!(r.residual < 1e-8);
    }

    #[test]
    fn rejects_non_solutions() {
        let f = CoefficientField::identity(2).unwrap();
        let c = cyl(true);
        let axes = cylinder_axes(&c, 16, 2, 8);
        let u = GridFunction::from_fn(Domain::HalfSpace, axes, |x, _| x[1] * x[1]);
        assert!(matches!(local_ratios(&u, &f, &c, 2, 0.1, 1e-3), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn kernel_slices_are_bounded() {
        let f = CoefficientField::switching(2, 0.5, 8, 4.0).unwrap();
        let c = cyl(true);
        let axes = cylinder_axes(&c, 32, 2, 16);
        let fam = kernel_slices(&f, &c, 4, 11, &axes).unwrap();
        let rep = local_regularity_probe(&fam, &f, &c, 2, 0.1, 0.1, 50.0).unwrap();
        assert_eq!(rep.verdict(), crate::probe::Verdict::Pass, "{:?}", rep.series);
    }
}
