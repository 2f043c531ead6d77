//! Experiment configs.
//!
//! A config is a TOML document with a header (`id`, `kind`, `seed`,
//! `expect`), an optional `[coefficients]` table and a kind-specific
//! `[params]` table. Parsing happens in two passes over the same source so
//! that every error carries the line and key it refers to.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use parakernel::appendix_ops::{AppendixKernelParams, AppendixProbeParams, AppendixVariant};
use parakernel::kernel_halfspace::local::Cylinder;
use parakernel::kernel_halfspace::HalfSampleSpec;
use parakernel::kernel_wholespace::SampleSpec;
use parakernel::mixed_norms::{NormSpec, Order, WeightKind};
use parakernel::operators::{CancellationParams, Geometry, KernelKind, NormProbeParams};
use parakernel::solver::{ForcingFamily, Ladder};
use parakernel::{CoefficientField, Domain};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    KernelCheck,
    HalfspaceCheck,
    DifferenceKernel,
    Coercivity,
    MuScan,
    OperatorNorm,
    Cancellation,
    AppendixProbe,
    LocalRegularity,
}

impl Kind {
    pub fn tag(self) -> &'static str {
        match self {
            Kind::KernelCheck => "kernel-check",
            Kind::HalfspaceCheck => "halfspace-check",
            Kind::DifferenceKernel => "difference-kernel",
            Kind::Coercivity => "coercivity",
            Kind::MuScan => "mu-scan",
            Kind::OperatorNorm => "operator-norm",
            Kind::Cancellation => "cancellation",
            Kind::AppendixProbe => "appendix-probe",
            Kind::LocalRegularity => "local-regularity",
        }
    }

    fn needs_coefficients(self) -> bool {
        self != Kind::AppendixProbe
    }
}

/// Declared outcome. `fail` marks designed-divergence runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expect {
    #[default]
    Pass,
    Fail,
}

/// Coefficient family of the `[coefficients]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Coefficients {
    Identity { dim: usize },
    Constant { matrix: Vec<Vec<f64>>, nu: f64 },
    Diagonal { entries: Vec<f64>, nu: f64 },
    Switching { dim: usize, nu: f64, switches: usize, horizon: f64 },
    Piecewise { breakpoints: Vec<f64>, matrices: Vec<Vec<Vec<f64>>>, nu: f64 },
}

fn square(rows: &[Vec<f64>]) -> parakernel::Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(parakernel::Error::Structural(format!("matrix must be square, got {n} rows of lengths {:?}", rows.iter().map(Vec::len).collect::<Vec<_>>())));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl Coefficients {
    pub fn build(&self) -> parakernel::Result<CoefficientField> {
        match self {
            Coefficients::Identity { dim } => CoefficientField::identity(*dim),
            Coefficients::Constant { matrix, nu } => CoefficientField::constant(square(matrix)?, *nu),
            Coefficients::Diagonal { entries, nu } => CoefficientField::diagonal(entries, *nu),
            Coefficients::Switching { dim, nu, switches, horizon } => CoefficientField::switching(*dim, *nu, *switches, *horizon),
            Coefficients::Piecewise { breakpoints, matrices, nu } => {
                let mats = matrices.iter().map(|m| square(m)).collect::<parakernel::Result<Vec<_>>>()?;
                CoefficientField::piecewise(breakpoints.clone(), mats, *nu)
            }
        }
    }
}

// ─── per-kind parameters ────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelCheck {
    Oracle,
    Normalization,
    Semigroup,
    Derivatives,
    Residual,
    Bounds,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelCheckParams {
    pub checks: Vec<KernelCheck>,
    /// Oracle levels `0..oracle_levels`; the last one is held to `oracle_tol`.
    pub oracle_levels: u32,
    pub oracle_tol: f64,
    /// Seeded sample points for the pointwise checks.
    pub points: usize,
    pub normalization_tol: f64,
    pub semigroup_tol: f64,
    pub fd_step: f64,
    pub fd_tol: f64,
    pub residual_step: f64,
    pub residual_tol: f64,
    /// Largest `|α|+|β|` for derivatives and bound fits.
    pub max_order: usize,
    /// Gaussian rates; empty means `ν/8`.
    pub sigmas: Vec<f64>,
    pub bound_band: f64,
    pub sample: SampleSpec,
}

impl Default for KernelCheckParams {
    fn default() -> Self {
        Self {
            checks: vec![
                KernelCheck::Oracle,
                KernelCheck::Normalization,
                KernelCheck::Semigroup,
                KernelCheck::Derivatives,
                KernelCheck::Residual,
                KernelCheck::Bounds,
            ],
            oracle_levels: 3,
            oracle_tol: 0.01,
            points: 6,
            normalization_tol: 1e-8,
            semigroup_tol: 1e-6,
            fd_step: 1e-4,
            fd_tol: 1e-6,
            residual_step: 1e-3,
            residual_tol: 1e-8,
            max_order: 3,
            sigmas: Vec::new(),
            bound_band: 0.1,
            sample: SampleSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HalfspaceCheck {
    Sandwich,
    Slope,
    Fits,
    Numeric,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HalfspaceCheckParams {
    pub checks: Vec<HalfspaceCheck>,
    /// Seeded `(x, y, s, t)` samples for the sandwich check.
    pub samples: usize,
    /// Seeded `(y, s, t)` samples for the wall slope.
    pub slopes: usize,
    pub slope_tol: f64,
    /// Largest `|α|+|β|` of the fits with `α_n, β_n ≤ 1`.
    pub max_order: usize,
    pub eps: f64,
    /// Gaussian rate; `ν/8` when absent.
    pub sigma: Option<f64>,
    pub sample: HalfSampleSpec,
    pub numeric_levels: u32,
    pub numeric_tol: f64,
    pub min_order: f64,
}

impl Default for HalfspaceCheckParams {
    fn default() -> Self {
        Self {
            checks: vec![HalfspaceCheck::Sandwich, HalfspaceCheck::Slope, HalfspaceCheck::Fits, HalfspaceCheck::Numeric],
            samples: 400,
            slopes: 6,
            slope_tol: 0.1,
            max_order: 2,
            eps: parakernel::kernel_halfspace::DEFAULT_EPS,
            sigma: None,
            sample: HalfSampleSpec::default(),
            numeric_levels: 3,
            numeric_tol: 0.02,
            min_order: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DifferenceKernelParams {
    pub mus: Vec<f64>,
    pub eps: f64,
    pub sigma: Option<f64>,
    pub band: f64,
    pub sample: HalfSampleSpec,
}

impl Default for DifferenceKernelParams {
    fn default() -> Self {
        Self {
            mus: vec![-0.3, 0.0, 1.0, 1.6],
            eps: parakernel::kernel_halfspace::DEFAULT_EPS,
            sigma: None,
            band: 0.15,
            sample: HalfSampleSpec::default(),
        }
    }
}

/// One exponent pair with its weight powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormFamily {
    pub p: f64,
    pub q: f64,
    #[serde(default = "both_orders")]
    pub orders: Vec<Order>,
    #[serde(default = "zero_mu")]
    pub mus: Vec<f64>,
}

fn both_orders() -> Vec<Order> {
    Order::BOTH.to_vec()
}

fn zero_mu() -> Vec<f64> {
    vec![0.0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoercivityParams {
    pub domain: Domain,
    pub ladder: Ladder,
    pub forcing: ForcingFamily,
    pub weight: WeightKind,
    pub norms: Vec<NormFamily>,
    pub cap: f64,
    pub hessian_limit: Option<f64>,
    /// Smallest growth per level demanded of designed blow-ups. For
    /// `coercivity` it applies to every norm; for `mu-scan` only to weights
    /// outside `(−1/p, 2 − 1/p)`.
    pub blow_up: Option<f64>,
}

impl Default for CoercivityParams {
    fn default() -> Self {
        Self {
            domain: Domain::WholeSpace,
            ladder: Ladder::default(),
            forcing: ForcingFamily::Bump { center: Vec::new(), width: 0.7 },
            weight: WeightKind::None,
            norms: vec![NormFamily { p: 2.0, q: 2.0, orders: both_orders(), mus: zero_mu() }],
            cap: 1.25,
            hessian_limit: None,
            blow_up: None,
        }
    }
}

/// Kernel, index pair (0-based, `n − 1` is the normal direction) and weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub i: usize,
    pub j: usize,
    #[serde(default)]
    pub mu: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorNormParams {
    pub kernels: Vec<KernelSpec>,
    pub norms: Vec<NormSpec>,
    pub probe: NormProbeParams,
}

impl Default for OperatorNormParams {
    fn default() -> Self {
        Self {
            kernels: vec![KernelSpec { kind: KernelKind::FrakGHat, i: 0, j: 0, mu: 0.0 }],
            norms: vec![NormSpec::new(2.0, 2.0, Order::SpaceThenTime)],
            probe: NormProbeParams::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CancellationConfig {
    pub kernels: Vec<KernelSpec>,
    pub geometries: Vec<Geometry>,
    pub probe: CancellationParams,
}

impl Default for CancellationConfig {
    fn default() -> Self {
        Self {
            kernels: vec![KernelSpec { kind: KernelKind::FrakG, i: 0, j: 1, mu: 0.0 }],
            geometries: vec![Geometry::SpaceMomentZero, Geometry::TimeMomentZero],
            probe: CancellationParams::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppendixConfig {
    pub sets: Vec<AppendixKernelParams>,
    pub variants: Vec<AppendixVariant>,
    pub probe: AppendixProbeParams,
}

impl Default for AppendixConfig {
    fn default() -> Self {
        Self { sets: Vec::new(), variants: vec![AppendixVariant::Lp], probe: AppendixProbeParams::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalRegularityParams {
    pub cylinder: Cylinder,
    pub k: usize,
    pub eps: f64,
    pub residual_tol: f64,
    pub cap: f64,
    pub cells: usize,
    pub time_steps: usize,
    pub count: usize,
}

impl Default for LocalRegularityParams {
    fn default() -> Self {
        Self {
            cylinder: Cylinder { center: vec![0.0, 0.0], t0: 1.0, radius: 0.5, half: true },
            k: 2,
            eps: 0.1,
            residual_tol: 0.1,
            cap: 50.0,
            cells: 32,
            time_steps: 16,
            count: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Params {
    KernelCheck(KernelCheckParams),
    HalfspaceCheck(HalfspaceCheckParams),
    DifferenceKernel(DifferenceKernelParams),
    /// Shared by `coercivity` and `mu-scan`.
    Coercivity(CoercivityParams),
    OperatorNorm(OperatorNormParams),
    Cancellation(CancellationConfig),
    AppendixProbe(AppendixConfig),
    LocalRegularity(LocalRegularityParams),
}

// ─── parsing ────────────────────────────────────────────────────────────

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    id: String,
    kind: Kind,
    seed: u64,
    #[serde(default)]
    expect: Expect,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    coefficients: Option<Coefficients>,
    #[serde(default)]
    #[allow(dead_code)]
    params: toml::Table,
}

/// Second pass: only `params`, typed.
#[derive(Deserialize)]
struct Typed<T: Default> {
    #[serde(default)]
    params: T,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub id: String,
    pub kind: Kind,
    pub seed: u64,
    pub expect: Expect,
    pub description: Option<String>,
    pub coefficients: Option<Coefficients>,
    pub params: Params,
    /// The parsed document, echoed into reports.
    pub echo: toml::Table,
    pub source: Option<PathBuf>,
}

fn typed<T: DeserializeOwned + Default>(text: &str, origin: &str) -> Result<T, CliError> {
    toml::from_str::<Typed<T>>(text).map(|t| t.params).map_err(|e| CliError::config(origin, e))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        cfg.source = Some(path.to_path_buf());
        Ok(cfg)
    }

    /// Parse and validate; `origin` names the document in messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let header: Header = toml::from_str(text).map_err(|e| CliError::config(origin, e))?;
        let echo: toml::Table = toml::from_str(text).map_err(|e| CliError::config(origin, e))?;
        let params = match header.kind {
            Kind::KernelCheck => Params::KernelCheck(typed(text, origin)?),
            Kind::HalfspaceCheck => Params::HalfspaceCheck(typed(text, origin)?),
            Kind::DifferenceKernel => Params::DifferenceKernel(typed(text, origin)?),
            Kind::Coercivity => Params::Coercivity(typed(text, origin)?),
            Kind::MuScan => {
                let mut p: CoercivityParams = typed(text, origin)?;
                let has = |key: &str| echo.get("params").and_then(|v| v.get(key)).is_some();
                if !has("domain") {
                    p.domain = Domain::HalfSpace;
                }
                if !has("weight") {
                    p.weight = WeightKind::NormalCoordinate;
                }
                if !has("blow_up") {
                    p.blow_up = Some(1.5);
                }
                Params::Coercivity(p)
            }
            Kind::OperatorNorm => Params::OperatorNorm(typed(text, origin)?),
            Kind::Cancellation => Params::Cancellation(typed(text, origin)?),
            Kind::AppendixProbe => Params::AppendixProbe(typed(text, origin)?),
            Kind::LocalRegularity => Params::LocalRegularity(typed(text, origin)?),
        };
        let cfg = Self {
            id: header.id,
            kind: header.kind,
            seed: header.seed,
            expect: header.expect,
            description: header.description,
            coefficients: header.coefficients,
            params,
            echo,
            source: None,
        };
        cfg.validate(origin)?;
        Ok(cfg)
    }

    fn validate(&self, origin: &str) -> Result<(), CliError> {
        let invalid = |path: &str, msg: String| CliError::Invalid { origin: origin.to_string(), path: path.to_string(), msg };
        if self.id.is_empty() || !self.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.') {
            return Err(invalid("id", format!("{:?} must be non-empty and use only [A-Za-z0-9._-]", self.id)));
        }
        let field = match (&self.coefficients, self.kind.needs_coefficients()) {
            (Some(c), _) => Some(c.build().map_err(|e| invalid("coefficients", e.to_string()))?),
            (None, true) => return Err(invalid("coefficients", format!("required for kind {}", self.kind.tag()))),
            (None, false) => None,
        };
        let n = field.as_ref().map_or(0, CoefficientField::dim);
        match &self.params {
            Params::KernelCheck(p) => {
                if p.max_order > parakernel::kernel_wholespace::MAX_ORDER - 1 {
                    return Err(invalid("params.max_order", format!("{} exceeds {}", p.max_order, parakernel::kernel_wholespace::MAX_ORDER - 1)));
                }
                if p.sigmas.iter().any(|&s| !(s > 0.0)) {
                    return Err(invalid("params.sigmas", "every rate must be positive".into()));
                }
                if p.points == 0 {
                    return Err(invalid("params.points", "need at least one sample point".into()));
                }
            }
            Params::HalfspaceCheck(p) => {
                if p.max_order > 2 {
                    return Err(invalid("params.max_order", format!("{} exceeds 2", p.max_order)));
                }
                if p.numeric_levels < 2 && p.checks.contains(&HalfspaceCheck::Numeric) {
                    return Err(invalid("params.numeric_levels", "an observed order needs at least 2 levels".into()));
                }
            }
            Params::DifferenceKernel(p) => {
                if n < 2 {
                    return Err(invalid("coefficients.dim", "difference kernels need n >= 2".into()));
                }
                if p.mus.is_empty() {
                    return Err(invalid("params.mus", "need at least one weight power".into()));
                }
            }
            Params::Coercivity(p) => {
                if p.norms.is_empty() || p.norms.iter().any(|f| f.orders.is_empty() || f.mus.is_empty()) {
                    return Err(invalid("params.norms", "need at least one (p, q) with orders and mus".into()));
                }
                if let ForcingFamily::Bump { center, .. } = &p.forcing {
                    if center.len() != n {
                        return Err(invalid("params.forcing.center", format!("needs {n} coordinates, got {}", center.len())));
                    }
                }
                if self.kind == Kind::MuScan && !(p.domain == Domain::HalfSpace && p.weight == WeightKind::NormalCoordinate) {
                    return Err(invalid("params.domain", "mu-scan runs on the half space with the x_n weight".into()));
                }
            }
            Params::OperatorNorm(p) => {
                if p.kernels.is_empty() || p.norms.is_empty() {
                    return Err(invalid("params.kernels", "need at least one kernel and one norm".into()));
                }
                if let Some(k) = p.kernels.iter().find(|k| k.i >= n || k.j >= n) {
                    return Err(invalid("params.kernels", format!("indices ({}, {}) out of range for n = {n}", k.i, k.j)));
                }
            }
            Params::Cancellation(p) => {
                if p.kernels.is_empty() || p.geometries.is_empty() {
                    return Err(invalid("params.kernels", "need at least one kernel and one geometry".into()));
                }
                if let Some(k) = p.kernels.iter().find(|k| k.i >= n || k.j >= n) {
                    return Err(invalid("params.kernels", format!("indices ({}, {}) out of range for n = {n}", k.i, k.j)));
                }
            }
            Params::AppendixProbe(p) => {
                if p.sets.is_empty() || p.variants.is_empty() {
                    return Err(invalid("params.sets", "need at least one parameter set and one variant".into()));
                }
                for (k, s) in p.sets.iter().enumerate() {
                    s.validate().map_err(|e| invalid(&format!("params.sets[{k}]"), e.to_string()))?;
                }
            }
            Params::LocalRegularity(p) => {
                if p.cylinder.center.len() != n {
                    return Err(invalid("params.cylinder.center", format!("needs {n} coordinates")));
                }
                if p.count == 0 {
                    return Err(invalid("params.count", "need at least one kernel slice".into()));
                }
            }
        }
        Ok(())
    }

    pub fn field(&self) -> Result<Option<CoefficientField>, CliError> {
        self.coefficients.as_ref().map(|c| c.build().map_err(CliError::from)).transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
id = "k1"
kind = "kernel-check"
seed = 3
[coefficients]
family = "identity"
dim = 1
"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = ExperimentConfig::parse(BASE, "inline").unwrap();
        assert_eq!(c.expect, Expect::Pass);
        let Params::KernelCheck(p) = &c.params else { panic!("wrong params") };
        assert_eq!(p.max_order, 3);
        assert_eq!(p.sample, SampleSpec::default());
    }

    #[test]
    fn missing_seed_names_the_field() {
        let text = BASE.replace("seed = 3\n", "");
        let msg = ExperimentConfig::parse(&text, "inline").unwrap_err().to_string();
        assert!(msg.contains("seed"), "{msg}");
    }

    #[test]
    fn unknown_param_names_the_key() {
        let text = format!("{BASE}[params]\nsigmaz = [0.1]\n");
        let msg = ExperimentConfig::parse(&text, "inline").unwrap_err().to_string();
        assert!(msg.contains("sigmaz"), "{msg}");
    }

    #[test]
    fn mu_scan_defaults_to_the_weighted_half_space() {
        let text = r#"
id = "scan"
kind = "mu-scan"
seed = 1
[coefficients]
family = "switching"
dim = 2
nu = 0.5
switches = 8
horizon = 1.0
[params.forcing]
family = "bump"
center = [0.0, 1.0]
width = 0.5
"#;
        let c = ExperimentConfig::parse(text, "inline").unwrap();
        let Params::Coercivity(p) = &c.params else { panic!("wrong params") };
        assert_eq!(p.domain, Domain::HalfSpace);
        assert_eq!(p.blow_up, Some(1.5));
    }

    #[test]
    fn coefficients_are_checked() {
        let text = BASE.replace("family = \"identity\"\ndim = 1", "family = \"constant\"\nmatrix = [[1.0, 0.2]]\nnu = 0.5");
        let err = ExperimentConfig::parse(&text, "inline").unwrap_err();
        assert!(matches!(err, CliError::Invalid { ref path, .. } if path == "coefficients"), "{err}");
    }
}
