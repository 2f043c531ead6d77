//! Acceptance run over the shipped manifest.
//!
//! Runs every config in `configs/acceptance/manifest.json` on one thread,
//! then again into a second directory, and prints one PASS/FAIL line per
//! criterion. Tolerances are pinned here, independent of the configs: a
//! series only counts if it carries exactly the rule listed below.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use parakernel::probe::{ProbeReport, Rule, Series};
use parakernel_cli::config::Coefficients;
use parakernel_cli::{run_one, suite, with_threads, ExperimentConfig, Outcome};

struct Run {
    cfg: ExperimentConfig,
    report: ProbeReport,
    outcome: Outcome,
    elapsed: Duration,
}

struct Runs(BTreeMap<String, Run>);

type Check = Result<(), String>;

fn manifest() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/acceptance/manifest.json")
}

fn run_all(out: &Path) -> Result<Runs, String> {
    let (_, configs) = suite::load(&manifest()).map_err(|e| e.to_string())?;
    let mut runs = BTreeMap::new();
    for cfg in configs {
        let start = Instant::now();
        let done = with_threads(Some(1), || run_one(&cfg, out)).and_then(|r| r).map_err(|e| format!("{}: {e}", cfg.id))?;
        let run = Run { report: done.report, outcome: done.outcome, elapsed: start.elapsed(), cfg };
        eprintln!("  ran {} in {:.1} s: {}", run.cfg.id, run.elapsed.as_secs_f64(), run.outcome.tag());
        runs.insert(run.cfg.id.clone(), run);
    }
    Ok(Runs(runs))
}

impl Runs {
    fn get(&self, id: &str) -> Result<&Run, String> {
        self.0.get(id).ok_or_else(|| format!("no experiment {id:?} in the manifest"))
    }

    /// Experiment `id` ended with outcome `want`.
    fn outcome(&self, id: &str, want: Outcome) -> Result<&Run, String> {
        let run = self.get(id)?;
        if run.outcome != want {
            return Err(format!("{id}: outcome {}, want {}", run.outcome.tag(), want.tag()));
        }
        Ok(run)
    }

    fn seconds(&self, ids: &[&str]) -> f64 {
        ids.iter().filter_map(|id| self.0.get(*id)).map(|r| r.elapsed.as_secs_f64()).sum()
    }
}

/// Series of `run` selected by `pick`: at least `count` of them, each with
/// `rule`, at least `levels` values, and passing.
fn need(run: &Run, pick: impl Fn(&str) -> bool, rule: Rule, count: usize, levels: usize) -> Check {
    let chosen: Vec<&Series> = run.report.series.iter().filter(|s| pick(&s.name)).collect();
    let id = &run.cfg.id;
    if chosen.len() < count {
        return Err(format!("{id}: {} matching series, want at least {count}", chosen.len()));
    }
    for s in chosen {
        if s.rule != rule {
            return Err(format!("{id}/{}: rule {:?}, want {rule:?}", s.name, s.rule));
        }
        if s.values.len() < levels {
            return Err(format!("{id}/{}: {} levels, want {levels}", s.name, s.values.len()));
        }
        if !s.passes() {
            return Err(format!("{id}/{}: fails with values {:?}", s.name, s.values));
        }
    }
    Ok(())
}

fn named(name: &str) -> impl Fn(&str) -> bool + '_ {
    move |s| s == name
}

fn prefixed(prefix: &str) -> impl Fn(&str) -> bool + '_ {
    move |s| s.starts_with(prefix)
}

/// `|α| + |β|` read off a `bound[alpha=(..),beta=(..),sigma=..]` name.
fn bound_order(name: &str) -> usize {
    let head = name.split(",sigma").next().unwrap_or("");
    head.chars().filter_map(|c| c.to_digit(10)).map(|d| d as usize).sum()
}

/// Number of pairs `(α, β)` in `dim` variables with `|α| + |β| ≤ 3`.
fn pairs_up_to_three(dim: usize) -> usize {
    let m = 2 * dim;
    (m + 1) * (m + 2) * (m + 3) / 6
}

const FAMILIES: [&str; 3] = ["identity", "anisotropic", "switching"];

fn kernel_ids(dims: &[&str]) -> Vec<String> {
    FAMILIES.iter().flat_map(|f| dims.iter().map(move |d| format!("kernel-{f}-{d}"))).collect()
}

fn c1(runs: &Runs) -> Check {
    for id in kernel_ids(&["1d", "2d"]) {
        let run = runs.outcome(&id, Outcome::Pass)?;
        need(run, named("oracle[level=2]"), Rule::AtMost { limit: 0.01 }, 1, 1)?;
    }
    Ok(())
}

fn c2(runs: &Runs) -> Check {
    let mut ids = kernel_ids(&["1d", "2d"]);
    ids.extend(["kernel-identity-3d".into(), "kernel-switching-3d".into()]);
    for id in ids {
        let run = runs.outcome(&id, Outcome::Pass)?;
        need(run, named("normalization"), Rule::AtMost { limit: 1e-8 }, 1, 1)?;
        need(run, named("chapman_kolmogorov"), Rule::AtMost { limit: 1e-6 }, 1, 1)?;
    }
    Ok(())
}

fn c3(runs: &Runs) -> Check {
    let mut ids = kernel_ids(&["1d", "2d"]);
    ids.extend(["kernel-identity-3d".into(), "kernel-switching-3d".into()]);
    for id in ids {
        let run = runs.outcome(&id, Outcome::Pass)?;
        for k in 1..=3 {
            need(run, named(&format!("fd[order={k}]")), Rule::AtMost { limit: 1e-6 }, 1, 1)?;
        }
        need(run, named("pde_residual"), Rule::AtMost { limit: 1e-8 }, 1, 1)?;
    }
    Ok(())
}

fn c4(runs: &Runs) -> Check {
    for id in kernel_ids(&["1d", "2d"]) {
        let run = runs.outcome(&id, Outcome::Pass)?;
        let nu = run.cfg.field().map_err(|e| e.to_string())?.ok_or("no coefficients")?.nu();
        let tag = format!("sigma={}]", nu / 8.0);
        let dim = if id.ends_with("1d") { 1 } else { 2 };
        let picked = |s: &str| s.starts_with("bound[") && s.ends_with(&tag) && bound_order(s) <= 3;
        need(run, picked, Rule::Band { tol: 0.1 }, pairs_up_to_three(dim), 2)?;
        if !run.report.series.iter().any(|s| s.name.starts_with("bound[") && bound_order(&s.name) == 3) {
            return Err(format!("{id}: no third-order bound fit"));
        }
    }
    let run = runs.outcome("kernel-identity-sigma-too-large", Outcome::ExpectedFailMatched)?;
    if !run.report.failing().any(|s| s.name.starts_with("bound[") && s.name.ends_with("sigma=2]")) {
        return Err("kernel-identity-sigma-too-large: no failing fit at sigma = 2".into());
    }
    Ok(())
}

fn c5(runs: &Runs) -> Check {
    for id in ["halfspace-identity-1d", "halfspace-switching-2d"] {
        let run = runs.outcome(id, Outcome::Pass)?;
        need(run, named("sandwich"), Rule::AtMost { limit: 0.0 }, 1, 1)?;
        need(run, named("wall_slope"), Rule::Relative { target: 1.0, tol: 0.1 }, 1, 1)?;
        need(run, prefixed("fit["), Rule::Finite, 1, 1)?;
        need(run, prefixed("fit_eps["), Rule::Finite, 1, 1)?;
    }
    Ok(())
}

fn c6(runs: &Runs) -> Check {
    let run = runs.outcome("halfspace-switching-2d", Outcome::Pass)?;
    need(run, named("numeric_error[level=2]"), Rule::AtMost { limit: 0.02 }, 1, 1)?;
    need(run, named("numeric_order"), Rule::AtLeast { limit: 1.0 }, 1, 1)
}

fn c7(runs: &Runs) -> Check {
    for id in ["difference-identity-2d", "difference-switching-2d"] {
        let run = runs.outcome(id, Outcome::Pass)?;
        for mu in ["-0.3", "0", "1", "1.6"] {
            for kernel in ["calG", "D2y_calG", "partials_calG"] {
                need(run, named(&format!("{kernel}[mu={mu}]")), Rule::Finite, 1, 1)?;
            }
            for kernel in ["calGij", "partials_calGij"] {
                need(run, named(&format!("{kernel}[mu={mu}]")), Rule::Band { tol: 0.15 }, 1, 2)?;
            }
        }
    }
    Ok(())
}

const ORDERS: [&str; 2] = ["space_then_time", "time_then_space"];

fn totals(run: &Run, p: u32, q: u32, mu: &str, rule: Rule) -> Check {
    for order in ORDERS {
        need(run, named(&format!("total[p={p},q={q},{order},mu={mu}]")), rule, 1, 3)?;
    }
    Ok(())
}

fn c8(runs: &Runs) -> Check {
    let heat = runs.outcome("coercivity-heat-2d", Outcome::Pass)?;
    if !matches!(heat.cfg.coefficients, Some(Coefficients::Identity { .. })) {
        return Err("coercivity-heat-2d: coefficients are not the identity".into());
    }
    need(heat, prefixed("hessian[p=2,q=2,"), Rule::AtMost { limit: 1.05 }, 2, 3)?;
    let run = runs.outcome("coercivity-switching-2d", Outcome::Pass)?;
    for (p, q) in [(2, 2), (4, 2), (2, 4)] {
        totals(run, p, q, "0", Rule::Stable { cap: 1.25 })?;
    }
    Ok(())
}

fn c9(runs: &Runs) -> Check {
    let run = runs.outcome("mu-scan-halfspace-2d", Outcome::Pass)?;
    for (p, q, mus) in [(2, 2, ["-0.3", "0", "1", "1.3"]), (2, 4, ["-0.3", "0", "1", "1.3"]), (4, 2, ["-0.05", "0", "1", "1.55"])] {
        for mu in mus {
            totals(run, p, q, mu, Rule::Stable { cap: 1.25 })?;
        }
    }
    let sharp = runs.outcome("mu-scan-sharpness-2d", Outcome::ExpectedFailMatched)?;
    for order in ORDERS {
        need(sharp, named(&format!("blow_up[p=2,q=2,{order},mu=1.8]")), Rule::Growth { min: 1.5 }, 1, 3)?;
    }
    Ok(())
}

fn c10(runs: &Runs) -> Check {
    let run = runs.outcome("cancellation-2d", Outcome::Pass)?;
    for kernel in ["frakG[", "frakG_hat[", "calG["] {
        for geometry in ["/space_moment_zero/", "/time_moment_zero/"] {
            need(run, |s| s.starts_with(kernel) && s.contains(geometry) && s.contains("/ratio["), Rule::Band { tol: 0.25 }, 1, 3)?;
        }
    }
    Ok(())
}

fn c11(runs: &Runs) -> Check {
    let run = runs.outcome("operator-truncated-2d", Outcome::Pass)?;
    for norm in ["/p=2,q=2,space_then_time,", "/p=2,q=4,time_then_space,"] {
        need(run, |s| s.starts_with("frakG_hat[") && s.contains(norm) && s.ends_with("/estimate"), Rule::Stable { cap: 1.25 }, 2, 3)?;
    }
    Ok(())
}

fn field<'a>(desc: &'a str, key: &str) -> Option<&'a str> {
    desc.split_whitespace().find_map(|w| w.strip_prefix(key)?.strip_prefix('='))
}

fn c12(runs: &Runs) -> Check {
    let run = runs.outcome("appendix-admissible", Outcome::Pass)?;
    let sets: Vec<&String> = run.report.params.iter().filter(|(k, _)| k.starts_with("set")).map(|(_, v)| v).collect();
    if sets.len() < 4 || sets.iter().any(|d| field(d, "admissible") != Some("true")) {
        return Err(format!("appendix-admissible: {} sets, want at least 4 admissible", sets.len()));
    }
    for (key, values) in [("r", &["0.5", "1", "2"][..]), ("m", &["1", "2"][..])] {
        if let Some(v) = values.iter().find(|v| !sets.iter().any(|d| field(d, key) == Some(**v))) {
            return Err(format!("appendix-admissible: no set with {key}={v}"));
        }
    }
    need(run, |s| s.ends_with("/estimate"), Rule::Stable { cap: 1.25 }, sets.len(), 3)?;
    let bad = runs.outcome("appendix-inadmissible", Outcome::ExpectedFailMatched)?;
    need(bad, |s| s.ends_with("/blow_up"), Rule::Growth { min: 2.0 }, 2, 3)?;
    let layer = runs.outcome("appendix-layer", Outcome::Pass)?;
    need(layer, |s| s.ends_with("/layer_Lp1/ratio"), Rule::Band { tol: 0.25 }, 1, 3)
}

fn c13(runs: &Runs) -> Check {
    let run = runs.outcome("box-demo-2d", Outcome::Pass)?;
    if !matches!(run.cfg.coefficients, Some(Coefficients::Switching { .. })) {
        return Err("box-demo-2d: coefficients do not switch in time".into());
    }
    for mu in ["0", "0.5"] {
        totals(run, 2, 2, mu, Rule::Stable { cap: 1.25 })?;
    }
    Ok(())
}

/// Every file under `a` has a byte-identical twin under `b`, and no extras.
fn c14(a: &Path, b: &Path) -> Check {
    let list = |d: &Path| -> Result<Vec<PathBuf>, String> {
        let mut v: Vec<PathBuf> =
            std::fs::read_dir(d).map_err(|e| e.to_string())?.map(|e| e.map(|e| e.path()).map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
        v.sort();
        Ok(v)
    };
    let (fa, fb) = (list(a)?, list(b)?);
    let names = |v: &[PathBuf]| v.iter().map(|p| p.file_name().unwrap().to_owned()).collect::<Vec<_>>();
    if names(&fa) != names(&fb) {
        return Err("the two runs wrote different file sets".into());
    }
    if fa.is_empty() {
        return Err("no reports written".into());
    }
    for (x, y) in fa.iter().zip(&fb) {
        if std::fs::read(x).map_err(|e| e.to_string())? != std::fs::read(y).map_err(|e| e.to_string())? {
            return Err(format!("{} differs between runs", x.file_name().unwrap().to_string_lossy()));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let (first, second) = (tempfile::tempdir().expect("temp dir"), tempfile::tempdir().expect("temp dir"));
    eprintln!("acceptance: first run");
    let runs = match run_all(first.path()) {
        Ok(r) => r,
        Err(e) => {
            println!("acceptance aborted: {e}");
            return ExitCode::FAILURE;
        }
    };
    eprintln!("acceptance: second run");
    let repeat = run_all(second.path()).map(|_| ());

    let kernel12 = kernel_ids(&["1d", "2d"]);
    let kernel12: Vec<&str> = kernel12.iter().map(String::as_str).collect();
    let mut kernel123 = kernel12.clone();
    kernel123.extend(["kernel-identity-3d", "kernel-switching-3d"]);
    let mut kernel_fail = kernel12.clone();
    kernel_fail.push("kernel-identity-sigma-too-large");
    type Criterion<'a> = (&'a str, Vec<&'a str>, fn(&Runs) -> Check);
    let criteria: Vec<Criterion> = vec![
        ("kernel matches the delta-propagation oracle", kernel12.clone(), c1),
        ("normalization and Chapman-Kolmogorov", kernel123.clone(), c2),
        ("derivatives and PDE residual", kernel123, c3),
        ("Gaussian bound fits and the sigma failure path", kernel_fail, c4),
        ("Dirichlet kernel sandwich, wall slope and fits", vec!["halfspace-identity-1d", "halfspace-switching-2d"], c5),
        ("images against the numeric Dirichlet kernel", vec!["halfspace-switching-2d"], c6),
        ("difference kernels", vec!["difference-identity-2d", "difference-switching-2d"], c7),
        ("whole-space coercivity", vec!["coercivity-heat-2d", "coercivity-switching-2d"], c8),
        ("half-space weighted coercivity and sharpness", vec!["mu-scan-halfspace-2d", "mu-scan-sharpness-2d"], c9),
        ("cancellation decay", vec!["cancellation-2d"], c10),
        ("truncated operator", vec!["operator-truncated-2d"], c11),
        ("appendix probes", vec!["appendix-admissible", "appendix-inadmissible", "appendix-layer"], c12),
        ("box-domain demo", vec!["box-demo-2d"], c13),
    ];

    let mut all = true;
    for (k, (title, ids, check)) in criteria.iter().enumerate() {
        let result = check(&runs);
        all &= result.is_ok();
        line(k + 1, title, runs.seconds(ids), &result);
    }
    let det = repeat.and_then(|()| c14(first.path(), second.path()));
    all &= det.is_ok();
    line(14, "determinism at one thread", runs.seconds(&runs.0.keys().map(String::as_str).collect::<Vec<_>>()), &det);

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn line(k: usize, title: &str, seconds: f64, result: &Check) {
    match result {
        Ok(()) => println!("criterion {k:>2} PASS  {title} ({seconds:.1} s)"),
        Err(e) => println!("criterion {k:>2} FAIL  {title} ({seconds:.1} s): {e}"),
    }
}
