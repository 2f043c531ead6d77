//! One runner per experiment kind. Every runner returns a [`ProbeReport`]
//! whose verdict follows from its series alone.

use parakernel::appendix_ops::{appendix_boundedness_probe, AppendixProbeParams};
use parakernel::kernel_halfspace::difference::difference_kernel_check;
use parakernel::kernel_halfspace::local::{cylinder_axes, kernel_slices, local_regularity_probe};
use parakernel::kernel_halfspace::{bound_fit_half, boundary_slope, gamma_dirichlet, numeric_kernel, Method, Region};
use parakernel::kernel_wholespace::{
    bound_fit_whole, chapman_kolmogorov, derivative_fd_check, gamma, normalization, pde_residual,
};
use parakernel::mixed_norms::NormSpec;
use parakernel::operators::{cancellation_decay_probe, operator_norm_probe, KernelSelector, NormProbeParams};
use parakernel::probe::{ProbeReport, Rule, Series};
use parakernel::solver::{coercivity_ladder, coercivity_probe, delta_propagation, Expectation};
use parakernel::{CoefficientField, Domain, MultiIndex, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{
    AppendixConfig, CancellationConfig, CoercivityParams, DifferenceKernelParams, ExperimentConfig, HalfspaceCheck,
    HalfspaceCheckParams, KernelCheck, KernelCheckParams, Kind, LocalRegularityParams, OperatorNormParams, Params,
};
use crate::error::CliError;

/// Run `cfg` and label the report with its id and kind.
pub fn run(cfg: &ExperimentConfig) -> std::result::Result<ProbeReport, CliError> {
    let field = cfg.field()?;
    let field = || field.as_ref().expect("validated configs carry coefficients");
    let report = match &cfg.params {
        Params::KernelCheck(p) => kernel_check(field(), p, cfg.seed),
        Params::HalfspaceCheck(p) => halfspace_check(field(), p, cfg.seed),
        Params::DifferenceKernel(p) => difference_kernel(field(), p),
        Params::Coercivity(p) => coercivity(field(), p, cfg.kind == Kind::MuScan),
        Params::OperatorNorm(p) => operator_norm(field(), p, cfg.seed),
        Params::Cancellation(p) => cancellation(field(), p),
        Params::AppendixProbe(p) => appendix(p, cfg.seed),
        Params::LocalRegularity(p) => local_regularity(field(), p, cfg.seed),
    };
    let mut report = report.map_err(|source| CliError::Run { id: cfg.id.clone(), source })?;
    report.experiment = cfg.id.clone();
    report.kind = cfg.kind.tag().to_string();
    report.param("seed", cfg.seed);
    if let Some(c) = &cfg.coefficients {
        report.param("coefficients", serde_json::to_string(c).unwrap_or_default());
    }
    Ok(report)
}

fn index_levels(len: usize) -> Vec<f64> {
    (0..len).map(|k| k as f64).collect()
}

/// Every `(α, β)` with `|α| + |β| = k` in dimension `n`.
fn splits(n: usize, k: usize) -> Vec<(MultiIndex, MultiIndex)> {
    MultiIndex::all_of_order(2 * n, k)
        .into_iter()
        .map(|g| {
            let c = g.components();
            (MultiIndex::new(c[..n].to_vec()), MultiIndex::new(c[n..].to_vec()))
        })
        .collect()
}

// ─── kernel-check ───────────────────────────────────────────────────────

struct Sample {
    x: Vec<f64>,
    y: Vec<f64>,
    s: f64,
    t: f64,
}

/// Seeded points with `t − s ∈ [0.2, 0.9]`, `t` kept `5k` away from every
/// breakpoint so that the time differences stay on one interval.
fn whole_samples(field: &CoefficientField, count: usize, seed: u64, k: f64) -> Vec<Sample> {
    let n = field.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let s = rng.gen_range(0.0..0.5);
        let t = s + rng.gen_range(0.2..0.9);
        if !field.is_breakpoint(t, 5.0 * k) {
            out.push(Sample { x, y, s, t });
        }
    }
    out
}

/// Worst relative error of the propagated delta against the closed form.
fn oracle_error(field: &CoefficientField, level: u32) -> Result<f64> {
    let n = field.dim();
    let y = vec![0.1; n];
    let k = delta_propagation(field, Domain::WholeSpace, &y, 0.0, 1.0, level)?;
    let pts = [
        y.clone(),
        y.iter().map(|v| v + 0.7).collect(),
        y.iter().enumerate().map(|(i, v)| v - 1.3 + 0.5 * i as f64).collect::<Vec<_>>(),
    ];
    pts.iter().try_fold(0.0f64, |worst, x| {
        let exact = gamma(field, x, &y, 1.0, 0.0)?;
        Ok(worst.max((k.value_at(x) - exact).abs() / exact))
    })
}

fn kernel_check(field: &CoefficientField, p: &KernelCheckParams, seed: u64) -> Result<ProbeReport> {
    let n = field.dim();
    let mut report = ProbeReport::new("", "kernel-check");
    report.param("n", n).param("nu", field.nu());
    let pts = whole_samples(field, p.points, seed, p.residual_step);
    let lv = index_levels(pts.len());
    for check in &p.checks {
        match check {
            KernelCheck::Oracle => {
                let errs = (0..p.oracle_levels).map(|l| oracle_error(field, l)).collect::<Result<Vec<_>>>()?;
                let last = p.oracle_levels.saturating_sub(1);
                let levels = index_levels(errs.len());
                report.push(Series::new("oracle", "relative error vs delta propagation", levels, errs.clone(), Rule::Info));
                report.push(Series::new(
                    format!("oracle[level={last}]"),
                    "relative error vs delta propagation",
                    vec![f64::from(last)],
                    errs.last().copied().into_iter().collect(),
                    Rule::AtMost { limit: p.oracle_tol },
                ));
            }
            KernelCheck::Normalization => {
                let v = pts.iter().map(|q| Ok((normalization(field, &q.x, q.t, q.s)? - 1.0).abs())).collect::<Result<Vec<_>>>()?;
                report.push(Series::new("normalization", "|integral of gamma dy - 1|", lv.clone(), v, Rule::AtMost { limit: p.normalization_tol }));
            }
            KernelCheck::Semigroup => {
                let v = pts
                    .iter()
                    .map(|q| {
                        let r = 0.5 * (q.s + q.t);
                        let direct = gamma(field, &q.x, &q.y, q.t, q.s)?;
                        Ok((chapman_kolmogorov(field, &q.x, &q.y, q.t, r, q.s)? - direct).abs() / direct)
                    })
                    .collect::<Result<Vec<_>>>()?;
                report.push(Series::new("chapman_kolmogorov", "relative defect", lv.clone(), v, Rule::AtMost { limit: p.semigroup_tol }));
            }
            KernelCheck::Derivatives => {
                for order in 1..=p.max_order {
                    let pairs = splits(n, order);
                    let v = pairs
                        .iter()
                        .map(|(a, b)| {
                            pts.iter().try_fold(0.0f64, |worst, q| {
                                let (_, _, err) = derivative_fd_check(field, a, b, &q.x, &q.y, q.t, q.s, p.fd_step)?;
                                Ok(worst.max(err))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    report.push(Series::new(
                        format!("fd[order={order}]"),
                        "scaled closed-form vs difference error, worst point per (alpha, beta)",
                        index_levels(v.len()),
                        v,
                        Rule::AtMost { limit: p.fd_tol },
                    ));
                }
            }
            KernelCheck::Residual => {
                let v = pts.iter().map(|q| pde_residual(field, &q.x, &q.y, q.t, q.s, p.residual_step)).collect::<Result<Vec<_>>>()?;
                report.push(Series::new("pde_residual", "scaled |dt gamma - a^ij DiDj gamma|", lv.clone(), v, Rule::AtMost { limit: p.residual_tol }));
            }
            KernelCheck::Bounds => {
                let sigmas = if p.sigmas.is_empty() { vec![field.nu() / 8.0] } else { p.sigmas.clone() };
                let fine = p.sample.doubled();
                for &sigma in &sigmas {
                    for order in 0..=p.max_order {
                        for (a, b) in splits(n, order) {
                            let c0 = bound_fit_whole(field, &a, &b, sigma, &p.sample, false)?.constant;
                            let c1 = bound_fit_whole(field, &a, &b, sigma, &fine, false)?.constant;
                            let name = format!("bound[alpha={a},beta={b},sigma={sigma}]");
                            report.fit(name.clone(), c1);
                            report.push(Series::new(name, "fitted_constant", vec![0.0, 1.0], vec![c0, c1], Rule::Band { tol: p.bound_band }));
                        }
                    }
                }
            }
        }
    }
    Ok(report)
}

// ─── halfspace-check ────────────────────────────────────────────────────

fn halfspace_check(field: &CoefficientField, p: &HalfspaceCheckParams, seed: u64) -> Result<ProbeReport> {
    let n = field.dim();
    let mut report = ProbeReport::new("", "halfspace-check");
    report.param("n", n).param("nu", field.nu()).param("eps", p.eps);
    if !field.is_reflection_compatible() {
        // images need a^{in} = 0 for i != n; nothing here is claimed otherwise
        report.param("reflection_compatible", false);
        report.outside_hypothesis = true;
        return Ok(report);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last = n - 1;
    for check in &p.checks {
        match check {
            HalfspaceCheck::Sandwich => {
                let mut violations = 0usize;
                for _ in 0..p.samples {
                    let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
                    let mut y: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
                    x[last] = rng.gen_range(0.0..2.0);
                    y[last] = rng.gen_range(1e-3..2.0);
                    let s = rng.gen_range(0.0..1.0);
                    let t = s + rng.gen_range(1e-3..1.0);
                    let d = gamma_dirichlet(field, &x, &y, t, s, Method::Images)?;
                    let g = gamma(field, &x, &y, t, s)?;
                    x[last] = 0.0;
                    let wall = gamma_dirichlet(field, &x, &y, t, s, Method::Images)?;
                    if !(d >= 0.0 && d <= g) || wall != 0.0 {
                        violations += 1;
                    }
                }
                report.push(Series::new(
                    "sandwich",
                    "violations of 0 <= gamma_D <= gamma or gamma_D = 0 on the wall",
                    vec![p.samples as f64],
                    vec![violations as f64],
                    Rule::AtMost { limit: 0.0 },
                ));
            }
            HalfspaceCheck::Slope => {
                let zero = MultiIndex::zero(n);
                let v = (0..p.slopes)
                    .map(|_| {
                        let mut y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                        y[last] = rng.gen_range(0.3..1.5);
                        let s = rng.gen_range(0.0..0.5);
                        let t = s + rng.gen_range(0.1..0.5);
                        boundary_slope(field, &zero, &zero, &y, t, s)
                    })
                    .collect::<Result<Vec<_>>>()?;
                report.push(Series::new("wall_slope", "d log gamma_D / d log x_n", index_levels(v.len()), v, Rule::Relative { target: 1.0, tol: p.slope_tol }));
            }
            HalfspaceCheck::Fits => {
                let sigma = p.sigma.unwrap_or(field.nu() / 8.0);
                let mut fit = |name: String, a: &MultiIndex, b: &MultiIndex| -> Result<()> {
                    let c = bound_fit_half(field, a, b, p.eps, sigma, Region::Quadrant, &p.sample)?.constant;
                    report.fit(name.clone(), c);
                    report.push(Series::new(name, "fitted_constant", vec![0.0], vec![c], Rule::Finite));
                    Ok(())
                };
                for order in 0..=p.max_order {
                    for (a, b) in splits(n, order).into_iter().filter(|(a, b)| a.normal() <= 1 && b.normal() <= 1) {
                        fit(format!("fit[alpha={a},beta={b},sigma={sigma}]"), &a, &b)?;
                    }
                }
                let twice = MultiIndex::pair(n, last, last);
                let zero = MultiIndex::zero(n);
                let side = MultiIndex::unit(n, 0);
                for (a, b) in [(twice.clone(), zero.clone()), (zero, twice.clone()), (twice, side)] {
                    fit(format!("fit_eps[alpha={a},beta={b},sigma={sigma}]"), &a, &b)?;
                }
            }
            HalfspaceCheck::Numeric => {
                let mut y = vec![0.0; n];
                y[last] = 0.5;
                let (s, t) = (0.1, 0.6);
                let offsets = [(0.0, 0.5), (0.3, 0.4), (-0.2, 0.8), (0.1, 0.25)];
                let xs: Vec<Vec<f64>> = offsets
                    .iter()
                    .map(|&(tan, normal)| {
                        let mut x = y.clone();
                        if n > 1 {
                            x[0] = tan;
                        }
                        x[last] = normal;
                        x
                    })
                    .collect();
                let errs = (0..p.numeric_levels)
                    .map(|level| {
                        let k = numeric_kernel(field, &y, s, t, level)?;
                        xs.iter().try_fold(0.0f64, |worst, x| {
                            let exact = gamma_dirichlet(field, x, &y, t, s, Method::Images)?;
                            Ok(worst.max((k.value_at(x) - exact).abs() / exact))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
                let final_level = p.numeric_levels - 1;
                report.push(Series::new("numeric_error", "relative error of the numeric kernel vs images", index_levels(errs.len()), errs.clone(), Rule::Info));
                report.push(Series::new(
                    format!("numeric_error[level={final_level}]"),
                    "relative error of the numeric kernel vs images",
                    vec![f64::from(final_level)],
                    errs.last().copied().into_iter().collect(),
                    Rule::AtMost { limit: p.numeric_tol },
                ));
                report.push(Series::new("numeric_order", "observed order log2(e_l / e_l+1)", index_levels(orders.len()), orders, Rule::AtLeast { limit: p.min_order }));
            }
        }
    }
    Ok(report)
}

fn difference_kernel(field: &CoefficientField, p: &DifferenceKernelParams) -> Result<ProbeReport> {
    let sigma = p.sigma.unwrap_or(field.nu() / 8.0);
    difference_kernel_check(field, &p.mus, p.eps, sigma, &p.sample, p.band)
}

// ─── coercivity and mu-scan ─────────────────────────────────────────────

fn coercivity(field: &CoefficientField, p: &CoercivityParams, scan: bool) -> Result<ProbeReport> {
    let levels = coercivity_ladder(&p.domain, field, &p.ladder, &p.forcing)?;
    let mut specs = Vec::new();
    for fam in &p.norms {
        for &mu in &fam.mus {
            let inside = -1.0 / fam.p < mu && mu < 2.0 - 1.0 / fam.p;
            let blow_up = if scan && inside { None } else { p.blow_up };
            for &order in &fam.orders {
                let spec = NormSpec::new(fam.p, fam.q, order).weighted(p.weight, mu);
                specs.push((spec, Expectation { cap: p.cap, blow_up, hessian_limit: p.hessian_limit }));
            }
        }
    }
    let mut report = coercivity_probe(&levels, &specs)?;
    report
        .param("domain", serde_json::to_string(&p.domain).unwrap_or_default())
        .param("forcing", serde_json::to_string(&p.forcing).unwrap_or_default())
        .param("ladder", serde_json::to_string(&p.ladder).unwrap_or_default())
        .param("weight", format!("{:?}", p.weight));
    Ok(report)
}

// ─── operator probes ────────────────────────────────────────────────────

fn spec_tag(spec: &NormSpec) -> String {
    format!("p={},q={},{},mu={}", spec.p, spec.q, spec.order.tag(), spec.mu)
}

fn operator_norm(field: &CoefficientField, p: &OperatorNormParams, seed: u64) -> Result<ProbeReport> {
    let mut report = ProbeReport::new("", "operator-norm");
    let probe = NormProbeParams { seed, ..p.probe.clone() };
    for k in &p.kernels {
        let sel = KernelSelector::new(k.kind, k.i, k.j, k.mu, field)?;
        for spec in &p.norms {
            let r = operator_norm_probe(&sel, spec, spec, &probe)?;
            report.absorb(&format!("{}/{}/", sel.describe(), spec_tag(spec)), r);
        }
    }
    report.param("levels", probe.levels).param("trials", probe.trials).param("cells", probe.cells);
    Ok(report)
}

fn cancellation(field: &CoefficientField, p: &CancellationConfig) -> Result<ProbeReport> {
    let mut report = ProbeReport::new("", "cancellation");
    for k in &p.kernels {
        let sel = KernelSelector::new(k.kind, k.i, k.j, k.mu, field)?;
        for &g in &p.geometries {
            let r = cancellation_decay_probe(&sel, g, &p.probe)?;
            report.absorb(&format!("{}/{}/", sel.describe(), g.tag()), r);
        }
    }
    report.param("deltas", format!("{:?}", p.probe.deltas)).param("band", p.probe.band);
    Ok(report)
}

fn appendix(p: &AppendixConfig, seed: u64) -> Result<ProbeReport> {
    let mut report = ProbeReport::new("", "appendix-probe");
    let probe = AppendixProbeParams { seed, ..p.probe.clone() };
    for (k, set) in p.sets.iter().enumerate() {
        for &v in &p.variants {
            let r = appendix_boundedness_probe(set, v, &probe)?;
            let (lo, hi) = set.mu_range();
            report.param(
                format!("set{k}"),
                format!(
                    "n={} m={} r={} lambda=({}, {}) mu={} p={} window=({lo}, {hi}) admissible={}",
                    set.n, set.m, set.r, set.lambda1, set.lambda2, set.mu, set.p, r.params.get("admissible").map_or("?", String::as_str)
                ),
            );
            report.absorb(&format!("set{k}/{}/", v.tag()), r);
        }
    }
    Ok(report)
}

fn local_regularity(field: &CoefficientField, p: &LocalRegularityParams, seed: u64) -> Result<ProbeReport> {
    let axes = cylinder_axes(&p.cylinder, p.cells, p.k, p.time_steps);
    let family = kernel_slices(field, &p.cylinder, p.count, seed, &axes)?;
    local_regularity_probe(&family, field, &p.cylinder, p.k, p.eps, p.residual_tol, p.cap)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_cover_every_pair_once() {
        // multi-indices of order k in 2n variables: C(k + 2n − 1, 2n − 1)
        assert_eq!(splits(1, 3).len(), 4);
        assert_eq!(splits(2, 2).len(), 10);
        let all = splits(2, 1);
        assert!(all.iter().all(|(a, b)| a.order() + b.order() == 1));
    }

    #[test]
    fn samples_avoid_breakpoints() {
        let f = CoefficientField::switching(1, 0.5, 8, 1.0).unwrap();
        for q in whole_samples(&f, 40, 7, 1e-3) {
            assert!(!f.is_breakpoint(q.t, 5e-3));
            assert!(q.t - q.s >= 0.2);
        }
    }
}
