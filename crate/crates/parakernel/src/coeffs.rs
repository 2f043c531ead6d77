//! Time-dependent coefficient matrices `A(t)` and their exact time integrals.
//!
//! Every field is stored as a piecewise-constant sequence of symmetric
//! matrices over breakpoints `τ_0 < τ_1 < … < τ_K`. Matrix `k` is attached to
//! the half-open interval `(τ_k, τ_{k+1}]`; the first matrix extends to
//! `-∞` and the last to `+∞`. Integrals of the stored representation are
//! therefore exact sums of interval lengths times matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default sampling density for analytic families, in intervals per unit time.
pub const SAMPLES_PER_UNIT_TIME: usize = 1 << 10;

const SYMMETRY_TOL: f64 = 1e-14;
const ELLIPTICITY_REL_TOL: f64 = 1e-12;
const DEGENERACY_TOL: f64 = 1e-30;

/// Label recording how a field was built; echoed into reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum FamilyTag {
    Identity,
    Constant,
    Switching { switches: usize, horizon: f64 },
    Piecewise,
    Sampled { per_unit: usize },
}

/// The coefficient matrix `A(t) = {a^{ij}(t)}` with declared ellipticity `ν`.
#[derive(Debug, Clone)]
pub struct CoefficientField {
    n: usize,
    times: Vec<f64>,
    mats: Vec<DMatrix<f64>>,
    nu: f64,
    tag: FamilyTag,
}

/// Outcome of [`CoefficientField::validate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EllipticityReport {
    /// Smallest Rayleigh quotient found over the sweep.
    pub lower: f64,
    /// Largest Rayleigh quotient found over the sweep.
    pub upper: f64,
    pub nu: f64,
    /// `lower >= ν` and `upper <= 1/ν` up to a relative tolerance of `1e-12`.
    pub pass: bool,
}

/// `B(t, s) = ∫_s^t A(τ) dτ` with its Cholesky-based determinant and inverse.
#[derive(Debug, Clone)]
pub struct AccumulatedDiffusion {
    pub s: f64,
    pub t: f64,
    pub b: DMatrix<f64>,
    pub det: f64,
    pub inv: DMatrix<f64>,
}

impl CoefficientField {
    /// General piecewise-constant field. `times` has one more entry than `mats`.
    pub fn piecewise(times: Vec<f64>, mats: Vec<DMatrix<f64>>, nu: f64) -> Result<Self> {
        Self::build(times, mats, nu, FamilyTag::Piecewise)
    }

    /// `A ≡ I` in dimension `n`, with `ν = 1`.
    pub fn identity(n: usize) -> Result<Self> {
        Self::build(vec![0.0, 1.0], vec![DMatrix::identity(n, n)], 1.0, FamilyTag::Identity)
    }

    /// A constant matrix.
    pub fn constant(mat: DMatrix<f64>, nu: f64) -> Result<Self> {
        Self::build(vec![0.0, 1.0], vec![mat], nu, FamilyTag::Constant)
    }

    /// A constant diagonal matrix.
    pub fn diagonal(diag: &[f64], nu: f64) -> Result<Self> {
        Self::constant(DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(diag)), nu)
    }

    /// Diagonal field switching `switches` times on `[0, horizon]`.
    ///
    /// On interval `k` the entry `a^{ii}` equals `ν` when `i + k` is even and
    /// `1/ν` otherwise, so the anisotropy flips at every breakpoint while the
    /// ellipticity bounds stay exactly `[ν, 1/ν]`.
    pub fn switching(n: usize, nu: f64, switches: usize, horizon: f64) -> Result<Self> {
        if switches == 0 || !(horizon > 0.0) {
            return Err(Error::Structural("switching family needs switches >= 1 and horizon > 0".into()));
        }
        if !(nu > 0.0 && nu <= 1.0) {
            return Err(Error::Structural(format!("ellipticity constant must lie in (0, 1], got {nu}")));
        }
        let dt = horizon / switches as f64;
        let times: Vec<f64> = (0..=switches).map(|k| k as f64 * dt).collect();
        let mats = (0..switches)
            .map(|k| DMatrix::from_fn(n, n, |i, j| if i != j { 0.0 } else if (i + k) % 2 == 0 { nu } else { 1.0 / nu }))
            .collect();
        Self::build(times, mats, nu, FamilyTag::Switching { switches, horizon })
    }

    /// Sample an analytic family `f` onto `per_unit` intervals per unit time on
    /// `[0, horizon]` (midpoint values), merging equal neighbours.
    pub fn sampled<F>(n: usize, horizon: f64, per_unit: usize, nu: f64, f: F) -> Result<Self>
    where
        F: Fn(f64) -> DMatrix<f64>,
    {
        let cells = ((horizon * per_unit as f64).round() as usize).max(1);
        let dt = horizon / cells as f64;
        let mut times = vec![0.0];
        let mut mats: Vec<DMatrix<f64>> = Vec::new();
        for k in 0..cells {
            let m = f((k as f64 + 0.5) * dt);
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Structural(format!("sample {k} is not {n}x{n}")));
            }
            let end = (k + 1) as f64 * dt;
            match mats.last() {
                Some(prev) if *prev == m => *times.last_mut().unwrap() = end,
                _ => {
                    mats.push(m);
                    times.push(end);
                }
            }
        }
        Self::build(times, mats, nu, FamilyTag::Sampled { per_unit })
    }

    fn build(times: Vec<f64>, mats: Vec<DMatrix<f64>>, nu: f64, tag: FamilyTag) -> Result<Self> {
        if mats.is_empty() {
            return Err(Error::Structural("at least one matrix is required".into()));
        }
        if times.len() != mats.len() + 1 {
            return Err(Error::Structural(format!(
                "{} breakpoints for {} matrices; expected one more breakpoint than matrices",
                times.len(),
                mats.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Structural("breakpoints must be finite and strictly increasing".into()));
        }
        if !(nu > 0.0 && nu <= 1.0) {
            return Err(Error::Structural(format!("ellipticity constant must lie in (0, 1], got {nu}")));
        }
        let n = mats[0].nrows();
        if n == 0 {
            return Err(Error::Structural("dimension must be at least 1".into()));
        }
        for (k, m) in mats.iter().enumerate() {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Structural(format!("matrix {k} is not {n}x{n}")));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Structural(format!("matrix {k} has non-finite entries")));
            }
            let scale = m.amax().max(1.0);
            for i in 0..n {
                for j in 0..i {
                    if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                        return Err(Error::Structural(format!("matrix {k} is not symmetric at ({i},{j})")));
                    }
                }
            }
        }
        Ok(Self { n, times, mats, nu, tag })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn tag(&self) -> &FamilyTag {
        &self.tag
    }

    /// Breakpoints `τ_0 < … < τ_K`.
    pub fn breakpoints(&self) -> &[f64] {
        &self.times
    }

    /// Stored matrices, one per interval.
    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.mats
    }

    /// Index of the interval `(τ_k, τ_{k+1}]` containing `t`; at a breakpoint
    /// this is the interval on the left.
    pub fn interval_index(&self, t: f64) -> usize {
        let below = self.times.partition_point(|&b| b < t);
        below.saturating_sub(1).min(self.mats.len() - 1)
    }

    /// `A(t)`, left-continuous at breakpoints.
    pub fn at(&self, t: f64) -> &DMatrix<f64> {
        &self.mats[self.interval_index(t)]
    }

    /// Whether `t` coincides with an interior breakpoint (within `tol`).
    pub fn is_breakpoint(&self, t: f64, tol: f64) -> bool {
        self.times[1..self.times.len() - 1].iter().any(|b| (b - t).abs() <= tol)
    }

    /// Exact `∫_s^t A` for `s <= t` (zero matrix when `s == t`).
    pub fn integral(&self, s: f64, t: f64) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.n, self.n);
        if !(t > s) {
            return acc;
        }
        let last = self.mats.len() - 1;
        let first = self.interval_index(s);
        for k in first..=last {
            let lo = if k == 0 { f64::NEG_INFINITY } else { self.times[k] };
            let hi = if k == last { f64::INFINITY } else { self.times[k + 1] };
            let len = t.min(hi) - s.max(lo);
            if len > 0.0 {
                acc += &self.mats[k] * len;
            }
            if hi >= t {
                break;
            }
        }
        acc
    }

    /// Exact `∫_s^t a^{ij}` for a single entry.
    pub fn integral_entry(&self, s: f64, t: f64, i: usize, j: usize) -> f64 {
        if !(t > s) {
            return 0.0;
        }
        let last = self.mats.len() - 1;
        let mut acc = 0.0;
        for k in self.interval_index(s)..=last {
            let lo = if k == 0 { f64::NEG_INFINITY } else { self.times[k] };
            let hi = if k == last { f64::INFINITY } else { self.times[k + 1] };
            let len = t.min(hi) - s.max(lo);
            if len > 0.0 {
                acc += self.mats[k][(i, j)] * len;
            }
            if hi >= t {
                break;
            }
        }
        acc
    }

    /// `B(t, s)` with determinant and inverse.
    pub fn accumulate(&self, s: f64, t: f64) -> Result<AccumulatedDiffusion> {
        if !(t > s) {
            return Err(Error::Ordering { s, t });
        }
        let b = self.integral(s, t);
        let scale = (t - s).powi(self.n as i32);
        let chol = b.clone().cholesky().ok_or(Error::Degenerate { det: 0.0 })?;
        let det = chol.determinant();
        if !(det / scale >= DEGENERACY_TOL) {
            return Err(Error::Degenerate { det: det / scale });
        }
        let inv = chol.inverse();
        Ok(AccumulatedDiffusion { s, t, b, det, inv })
    }

    /// Sweep Rayleigh quotients over every stored matrix and over `samples`
    /// uniformly spaced times on `[τ_0, τ_K]`.
    pub fn validate(&self, samples: usize) -> Result<EllipticityReport> {
        let mut indices: Vec<usize> = (0..self.mats.len()).collect();
        let (t0, t1) = (self.times[0], *self.times.last().unwrap());
        for k in 0..samples {
            let t = t0 + (t1 - t0) * (k as f64 + 0.5) / samples as f64;
            indices.push(self.interval_index(t));
        }
        indices.sort_unstable();
        indices.dedup();
        let mut lower = f64::INFINITY;
        let mut upper = f64::NEG_INFINITY;
        for k in indices {
            let eig = self.mats[k].clone().symmetric_eigenvalues();
            lower = lower.min(eig.min());
            upper = upper.max(eig.max());
        }
        if lower <= 0.0 {
            return Err(Error::Ellipticity { lower });
        }
        let pass = lower >= self.nu * (1.0 - ELLIPTICITY_REL_TOL) && upper <= (1.0 + ELLIPTICITY_REL_TOL) / self.nu;
        Ok(EllipticityReport { lower, upper, nu: self.nu, pass })
    }

    /// True when `a^{in} = 0` for `i ≠ n` on every interval, so that the field
    /// commutes with reflection across `{x_n = 0}`.
    pub fn is_reflection_compatible(&self) -> bool {
        let last = self.n - 1;
        self.mats.iter().all(|m| (0..last).all(|i| m[(i, last)] == 0.0 && m[(last, i)] == 0.0))
    }

    /// Restrict to the upper-left `k×k` block (used for tangential sub-problems).
    pub fn leading_block(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.n {
            return Err(Error::Structural(format!("block size {k} out of range 1..={}", self.n)));
        }
        let mats = self.mats.iter().map(|m| m.view((0, 0), (k, k)).into_owned()).collect();
        Self::build(self.times.clone(), mats, self.nu, self.tag.clone())
    }
}

impl AccumulatedDiffusion {
    pub fn dim(&self) -> usize {
        self.b.nrows()
    }

    /// `⟨B⁻¹ z, z⟩`.
    pub fn quad_inv(&self, z: &[f64]) -> f64 {
        let n = self.dim();
        let mut q = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += self.inv[(i, j)] * z[j];
            }
            q += row * z[i];
        }
        q
    }

    /// Eigenvalues of `B / (t - s)`.
    pub fn normalized_eigenvalues(&self) -> Vec<f64> {
        let scaled = &self.b / (self.t - self.s);
        scaled.symmetric_eigenvalues().iter().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mat2(a: f64, b: f64, c: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[a, b, b, c])
    }

    #[test]
    fn identity_bounds_are_one() {
        let r = CoefficientField::identity(2).unwrap().validate(64).unwrap();
        assert_eq!((r.lower, r.upper), (1.0, 1.0));
        assert!(r.pass);
    }

    #[test]
    fn anisotropic_bounds_match_diagonal() {
        let r = CoefficientField::diagonal(&[0.5, 2.0], 0.5).unwrap().validate(16).unwrap();
        assert_relative_eq!(r.lower, 0.5, max_relative = 1e-12);
        assert_relative_eq!(r.upper, 2.0, max_relative = 1e-12);
        assert!(r.pass);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let f = CoefficientField::constant(mat2(1.0, 3.0, 1.0), 0.5).unwrap();
        assert!(matches!(f.validate(8), Err(Error::Ellipticity { .. })));
    }

    #[test]
    fn asymmetric_matrix_is_structural() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 1.0]);
        assert!(matches!(CoefficientField::constant(m, 0.5), Err(Error::Structural(_))));
    }

    #[test]
    fn declared_nu_too_large_fails_validation() {
        let r = CoefficientField::diagonal(&[0.5, 2.0], 0.8).unwrap().validate(4).unwrap();
        assert!(!r.pass);
    }

    #[test]
    fn accumulate_identity() {
        let f = CoefficientField::identity(2).unwrap();
        let b = f.accumulate(0.0, 2.0).unwrap();
        assert_eq!(b.b, DMatrix::identity(2, 2) * 2.0);
        assert_relative_eq!(b.det, 4.0, max_relative = 1e-15);
    }

    #[test]
    fn accumulate_piecewise_sum() {
        let m = |a: f64| DMatrix::from_element(1, 1, a);
        let f = CoefficientField::piecewise(vec![0.0, 1.0, 2.0], vec![m(1.0), m(4.0)], 0.25).unwrap();
        assert_eq!(f.accumulate(0.0, 2.0).unwrap().b[(0, 0)], 5.0);
        assert_eq!(f.accumulate(0.5, 1.5).unwrap().b[(0, 0)], 2.5);
        // beyond the last breakpoint the last matrix continues
        assert_eq!(f.accumulate(2.0, 3.0).unwrap().b[(0, 0)], 4.0);
    }

    #[test]
    fn empty_interval_is_ordering_error() {
        let f = CoefficientField::identity(1).unwrap();
        assert!(matches!(f.accumulate(1.0, 1.0), Err(Error::Ordering { .. })));
        assert!(matches!(f.accumulate(2.0, 1.0), Err(Error::Ordering { .. })));
    }

    #[test]
    fn singular_integral_is_degenerate() {
        let f = CoefficientField::piecewise(vec![0.0, 1.0], vec![mat2(1.0, 1.0, 1.0)], 0.5).unwrap();
        assert!(matches!(f.accumulate(0.0, 1.0), Err(Error::Degenerate { .. })));
    }

    #[test]
    fn left_continuity_at_breakpoints() {
        let f = CoefficientField::switching(1, 0.5, 4, 1.0).unwrap();
        assert_eq!(f.at(0.25)[(0, 0)], 0.5);
        assert_eq!(f.at(0.2500001)[(0, 0)], 2.0);
        assert_eq!(f.at(-3.0)[(0, 0)], 0.5);
        assert_eq!(f.at(7.0)[(0, 0)], 2.0);
    }

    #[test]
    fn switching_family_flips_anisotropy() {
        let f = CoefficientField::switching(2, 0.5, 8, 2.0).unwrap();
        assert_eq!(f.matrices().len(), 8);
        assert_eq!(f.matrices()[0], mat2(0.5, 0.0, 2.0));
        assert_eq!(f.matrices()[1], mat2(2.0, 0.0, 0.5));
        assert!(f.is_reflection_compatible());
        assert!(f.validate(100).unwrap().pass);
    }

    #[test]
    fn sampled_family_merges_constant_runs() {
        let f = CoefficientField::sampled(1, 2.0, SAMPLES_PER_UNIT_TIME, 0.5, |t| {
            DMatrix::from_element(1, 1, if t < 1.0 { 1.0 } else { 2.0 })
        })
        .unwrap();
        assert_eq!(f.matrices().len(), 2);
        assert_eq!(f.accumulate(0.0, 2.0).unwrap().b[(0, 0)], 3.0);
    }

    #[test]
    fn reflection_compatibility_detects_cross_terms() {
        let f = CoefficientField::constant(mat2(1.0, 0.2, 1.0), 0.5).unwrap();
        assert!(!f.is_reflection_compatible());
    }
}
