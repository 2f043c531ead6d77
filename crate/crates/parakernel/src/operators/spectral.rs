//! FFT evaluation of `∫_{-∞}^t ∫ D_iD_jΓ(x−y;t,s) h(y,s) dy ds` on uniform
//! cell lattices.
//!
//! `h` is piecewise constant in time on the cells `(t_m − w_m, t_m]`. In
//! Fourier variables the kernel is `−ξ_iξ_j exp(−ξᵀB(t,s)ξ)`, and `B` is
//! piecewise linear in `s`, so every cell integral is exact:
//! `∫ exp(−E − λ(t_m−s)) ds = e^{−E}·L·φ(Lλ)` with `φ(z) = (1 − e^{−z})/z`.
//! The multiplier vanishes at `ξ = 0`, which is the discrete zero-mean
//! identity. Lattices are zero-padded to twice their size.

use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::coeffs::CoefficientField;
use crate::error::{Error, Result};
use crate::grid::Axis;

type C = Complex64;

const ZERO: C = C { re: 0.0, im: 0.0 };

/// `(1 − e^{−z})/z`, continuous at 0.
pub(crate) fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-5 {
        1.0 - z * (0.5 - z / 6.0)
    } else {
        -(-z).exp_m1() / z
    }
}

/// Padded n-dimensional FFT on a uniform cell lattice; the last axis is the
/// normal axis and the fastest in memory.
pub(crate) struct SpaceFft {
    dims: Vec<usize>,
    padded: Vec<usize>,
    total: usize,
    /// `ξ` of every padded mode, `n` entries per mode.
    xi: Vec<f64>,
    /// Modes on a Nyquist plane, zeroed by every multiplier.
    nyquist: Vec<bool>,
    normal_nodes: Vec<f64>,
    fwd: Vec<Arc<dyn Fft<f64>>>,
    inv: Vec<Arc<dyn Fft<f64>>>,
}

impl SpaceFft {
    pub fn new(axes: &[Axis]) -> Result<Self> {
        let mut spacing = Vec::with_capacity(axes.len());
        for (a, ax) in axes.iter().enumerate() {
            match (ax.spacing(), ax.faces()) {
                (Some(h), Some(_)) => spacing.push(h),
                _ => return Err(Error::Spec(format!("space axis {a} must be a uniform cell axis"))),
            }
        }
        let dims: Vec<usize> = axes.iter().map(Axis::len).collect();
        let padded: Vec<usize> = dims.iter().map(|d| 2 * d).collect();
        let total: usize = padded.iter().product();
        let n = dims.len();
        let freq: Vec<Vec<(f64, bool)>> = padded
            .iter()
            .zip(&spacing)
            .map(|(&p, &h)| {
                (0..p)
                    .map(|k| {
                        let signed = if k < p / 2 { k as f64 } else { k as f64 - p as f64 };
                        (2.0 * std::f64::consts::PI * signed / (p as f64 * h), k == p / 2)
                    })
                    .collect()
            })
            .collect();
        let mut xi = vec![0.0; total * n];
        let mut nyquist = vec![false; total];
        for (idx, nyq) in nyquist.iter_mut().enumerate() {
            let mut rest = idx;
            for a in (0..n).rev() {
                let k = rest % padded[a];
                rest /= padded[a];
                xi[idx * n + a] = freq[a][k].0;
                *nyq |= freq[a][k].1;
            }
        }
        let mut planner = FftPlanner::new();
        let fwd = padded.iter().map(|&p| planner.plan_fft_forward(p)).collect();
        let inv = padded.iter().map(|&p| planner.plan_fft_inverse(p)).collect();
        let normal_nodes = axes[n - 1].nodes().to_vec();
        Ok(Self { dims, padded, total, xi, nyquist, normal_nodes, fwd, inv })
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn space_len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn normal_nodes(&self) -> &[f64] {
        &self.normal_nodes
    }

    fn n(&self) -> usize {
        self.dims.len()
    }

    /// `ξᵀAξ` for every mode.
    pub fn quad(&self, a: &DMatrix<f64>) -> Vec<f64> {
        let n = self.n();
        self.xi
            .chunks_exact(n)
            .map(|x| (0..n).map(|i| (0..n).map(|j| a[(i, j)] * x[i] * x[j]).sum::<f64>()).sum())
            .collect()
    }

    /// Symbol of `D_iD_j`: `−ξ_iξ_j`.
    pub fn second_derivative(&self, i: usize, j: usize) -> Vec<f64> {
        let n = self.n();
        (0..self.total).map(|p| if self.nyquist[p] { 0.0 } else { -self.xi[p * n + i] * self.xi[p * n + j] }).collect()
    }

    /// Apply 1-D transforms along axes `range` of a padded array.
    fn transform(&self, data: &mut [C], axes: std::ops::Range<usize>, inverse: bool) {
        let mut line = Vec::new();
        for a in axes {
            let len = self.padded[a];
            let stride: usize = self.padded[a + 1..].iter().product();
            let plan = if inverse { &self.inv[a] } else { &self.fwd[a] };
            line.resize(len, ZERO);
            let block = len * stride;
            for base in (0..self.total).step_by(block) {
                for off in 0..stride {
                    let start = base + off;
                    for (k, v) in line.iter_mut().enumerate() {
                        *v = data[start + k * stride];
                    }
                    plan.process(&mut line);
                    for (k, v) in line.iter().enumerate() {
                        data[start + k * stride] = *v;
                    }
                }
            }
        }
    }

    /// Padded flat index of an unpadded flat index.
    fn padded_index(&self, mut i: usize) -> usize {
        let mut out = 0;
        let mut mult = 1;
        for a in (0..self.n()).rev() {
            out += (i % self.dims[a]) * mult;
            i /= self.dims[a];
            mult *= self.padded[a];
        }
        out
    }

    pub fn forward(&self, values: &[f64]) -> Vec<C> {
        let mut data = vec![ZERO; self.total];
        for (i, &v) in values.iter().enumerate() {
            data[self.padded_index(i)] = C::new(v, 0.0);
        }
        self.transform(&mut data, 0..self.n(), false);
        data
    }

    pub fn inverse(&self, mut spec: Vec<C>) -> Vec<f64> {
        self.transform(&mut spec, 0..self.n(), true);
        let scale = 1.0 / self.total as f64;
        (0..self.space_len()).map(|i| spec[self.padded_index(i)].re * scale).collect()
    }

    /// Tangential lattice size (padded and unpadded).
    fn tangential(&self) -> (usize, usize) {
        let n = self.n();
        (self.padded[..n - 1].iter().product(), self.dims[..n - 1].iter().product())
    }

    fn normal_phase(&self, r: usize, sign: f64) -> Vec<C> {
        let p = self.padded[self.n() - 1];
        (0..p).map(|k| C::from_polar(1.0, sign * 2.0 * std::f64::consts::PI * (k * r % p) as f64 / p as f64)).collect()
    }

    /// Inverse transform of `spec` evaluated only on normal row `r`.
    pub fn row_inverse(&self, spec: &[C], r: usize) -> Vec<f64> {
        let n = self.n();
        let pn = self.padded[n - 1];
        let phase = self.normal_phase(r, 1.0);
        let (tp, _) = self.tangential();
        let mut line: Vec<C> =
            (0..tp).map(|q| spec[q * pn..(q + 1) * pn].iter().zip(&phase).map(|(a, b)| a * b).sum()).collect();
        let tangential = SpaceFftView { parent: self, padded: &self.padded[..n - 1] };
        tangential.transform(&mut line, true);
        let scale = 1.0 / self.total as f64;
        let dims = &self.dims[..n - 1];
        (0..dims.iter().product::<usize>()).map(|i| line[tangential.padded_index(dims, i)].re * scale).collect()
    }

    /// Spectrum of a field supported on normal row `r` with the given
    /// tangential values.
    pub fn row_forward(&self, row: &[f64], r: usize) -> Vec<C> {
        let n = self.n();
        let tangential = SpaceFftView { parent: self, padded: &self.padded[..n - 1] };
        let (tp, _) = self.tangential();
        let mut line = vec![ZERO; tp];
        for (i, &v) in row.iter().enumerate() {
            line[tangential.padded_index(&self.dims[..n - 1], i)] = C::new(v, 0.0);
        }
        tangential.transform(&mut line, false);
        let phase = self.normal_phase(r, -1.0);
        let mut out = Vec::with_capacity(self.total);
        for q in line {
            out.extend(phase.iter().map(|p| q * p));
        }
        out
    }
}

/// The tangential sub-lattice of a [`SpaceFft`] (all axes but the last).
struct SpaceFftView<'a> {
    parent: &'a SpaceFft,
    padded: &'a [usize],
}

impl SpaceFftView<'_> {
    fn total(&self) -> usize {
        self.padded.iter().product()
    }

    fn transform(&self, data: &mut [C], inverse: bool) {
        let total = self.total();
        let mut line = Vec::new();
        for a in 0..self.padded.len() {
            let len = self.padded[a];
            let stride: usize = self.padded[a + 1..].iter().product();
            let plan = if inverse { &self.parent.inv[a] } else { &self.parent.fwd[a] };
            line.resize(len, ZERO);
            for base in (0..total).step_by(len * stride) {
                for off in 0..stride {
                    for (k, v) in line.iter_mut().enumerate() {
                        *v = data[base + off + k * stride];
                    }
                    plan.process(&mut line);
                    for (k, v) in line.iter().enumerate() {
                        data[base + off + k * stride] = *v;
                    }
                }
            }
        }
    }

    fn padded_index(&self, dims: &[usize], mut i: usize) -> usize {
        let mut out = 0;
        let mut mult = 1;
        for a in (0..dims.len()).rev() {
            out += (i % dims[a]) * mult;
            i /= dims[a];
            mult *= self.padded[a];
        }
        out
    }
}

/// Time cells `(t_m − w_m, t_m]` read off a lattice time axis.
#[derive(Debug, Clone)]
pub(crate) struct TimeCells {
    /// `faces[m] = t_m − w_m`, `faces[m+1] = t_m`.
    pub faces: Vec<f64>,
    pub widths: Vec<f64>,
}

impl TimeCells {
    pub fn new(axis: &Axis) -> Result<Self> {
        let (nodes, widths) = (axis.nodes(), axis.weights());
        if let Some(f) = axis.faces() {
            if nodes.iter().zip(&f[1..]).any(|(t, r)| (t - r).abs() > 1e-9 * (1.0 + r.abs())) {
                return Err(Error::Spec("time nodes must be right endpoints of their cells".into()));
            }
        }
        let mut faces = vec![nodes[0] - widths[0]];
        for (m, (&t, &w)) in nodes.iter().zip(widths).enumerate() {
            let left = t - w;
            if !(w > 0.0) || (left - faces[m]).abs() > 1e-9 * (1.0 + t.abs()) {
                return Err(Error::Spec(format!(
                    "time node {m} at {t} with weight {w} does not close the cell ending at {}",
                    faces[m]
                )));
            }
            faces.push(t);
        }
        Ok(Self { faces, widths: widths.to_vec() })
    }

    pub fn len(&self) -> usize {
        self.widths.len()
    }

    pub fn node(&self, m: usize) -> f64 {
        self.faces[m + 1]
    }
}

/// Precomputed cell propagators for one `(field, lattice, i, j)`.
pub(crate) struct Propagator<'a> {
    pub space: SpaceFft,
    pub time: TimeCells,
    field: &'a CoefficientField,
    /// `−ξ_iξ_j`.
    mult: Vec<f64>,
    /// `ξᵀA_kξ` for every interval of the field that meets the time range.
    lambdas: Vec<Option<Vec<f64>>>,
    /// `exp(−ξᵀB(t_m, t_m − w_m)ξ)`.
    decay: Vec<Vec<f64>>,
    /// `∫_{cell m} exp(−ξᵀB(t_m, s)ξ) ds`.
    cell: Vec<Vec<f64>>,
}

impl<'a> Propagator<'a> {
    pub fn new(field: &'a CoefficientField, space_axes: &[Axis], time_axis: &Axis, i: usize, j: usize) -> Result<Self> {
        let space = SpaceFft::new(space_axes)?;
        let time = TimeCells::new(time_axis)?;
        let mult = space.second_derivative(i, j);
        let mut lambdas = vec![None; field.matrices().len()];
        let (lo, hi) = (time.faces[0], *time.faces.last().unwrap());
        for k in field.interval_index(lo.next_up())..=field.interval_index(hi) {
            lambdas[k] = Some(space.quad(&field.matrices()[k]));
        }
        let mut p = Self { space, time, field, mult, lambdas, decay: Vec::new(), cell: Vec::new() };
        let (decay, cell) = (0..p.time.len()).map(|m| p.lag_integral(p.time.faces[m], p.time.node(m))).unzip();
        p.decay = decay;
        p.cell = cell;
        Ok(p)
    }

    /// `(exp(−ξᵀB(hi,lo)ξ), ∫_lo^hi exp(−ξᵀB(hi,s)ξ) ds)`, exact across
    /// coefficient breakpoints.
    fn lag_integral(&self, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
        let total = self.space.total();
        let mut e = vec![0.0f64; total];
        let mut integral = vec![0.0; total];
        let bps = self.field.breakpoints();
        let mut upper = hi;
        while upper > lo {
            let k = self.field.interval_index(upper);
            let start = if k == 0 { f64::NEG_INFINITY } else { bps[k] };
            let lower = start.max(lo);
            let len = upper - lower;
            let lam = self.lambdas[k].as_ref().expect("interval inside the lattice time range");
            for p in 0..total {
                integral[p] += (-e[p]).exp() * len * phi1(len * lam[p]);
                e[p] += len * lam[p];
            }
            upper = lower;
        }
        (e.into_iter().map(|v| (-v).exp()).collect(), integral)
    }

    fn spectra(&self, values: &[f64]) -> Vec<Vec<C>> {
        let ns = self.space.space_len();
        values.chunks_exact(ns).map(|s| self.space.forward(s)).collect()
    }

    /// Running sums `S_m = d_m S_{m−1} + c_m ĥ_m`.
    fn running(&self, hat: &[Vec<C>]) -> Vec<Vec<C>> {
        let mut out: Vec<Vec<C>> = Vec::with_capacity(hat.len());
        for (m, hm) in hat.iter().enumerate() {
            let s: Vec<C> = match out.last() {
                Some(prev) => (0..hm.len()).map(|p| prev[p] * self.decay[m][p] + hm[p] * self.cell[m][p]).collect(),
                None => hm.iter().zip(&self.cell[m]).map(|(h, c)| h * c).collect(),
            };
            out.push(s);
        }
        out
    }

    fn with_mult(&self, mut spec: Vec<C>) -> Vec<C> {
        spec.iter_mut().zip(&self.mult).for_each(|(v, m)| *v *= m);
        spec
    }

    /// Plain convolution in time-major layout.
    pub fn full(&self, values: &[f64]) -> Vec<f64> {
        let running = self.running(&self.spectra(values));
        running.into_iter().flat_map(|s| self.space.inverse(self.with_mult(s))).collect()
    }

    /// Adjoint of [`Self::full`] for the lattice inner product.
    pub fn full_adjoint(&self, values: &[f64]) -> Vec<f64> {
        let nt = self.time.len();
        let weighted = self.time_weighted(values);
        let hat = self.spectra(&weighted);
        let mut acc: Vec<Vec<C>> = vec![Vec::new(); nt];
        let mut tail: Option<Vec<C>> = None;
        for m in (0..nt).rev() {
            let t: Vec<C> = match tail {
                Some(prev) => (0..hat[m].len()).map(|p| hat[m][p] + prev[p] * self.decay[m + 1][p]).collect(),
                None => hat[m].clone(),
            };
            acc[m] = t.iter().zip(&self.cell[m]).map(|(v, c)| v * c).collect();
            tail = Some(t);
        }
        self.finish_adjoint(acc)
    }

    fn time_weighted(&self, values: &[f64]) -> Vec<f64> {
        let ns = self.space.space_len();
        values.iter().enumerate().map(|(idx, v)| v * self.time.widths[idx / ns]).collect()
    }

    fn finish_adjoint(&self, acc: Vec<Vec<C>>) -> Vec<f64> {
        acc.into_iter()
            .enumerate()
            .flat_map(|(m, a)| {
                let w = self.time.widths[m];
                self.space.inverse(self.with_mult(a)).into_iter().map(move |v| v / w)
            })
            .collect()
    }

    /// Normal rows with `x_n > 0`, sorted by `σ = x_n²`.
    fn positive_rows(&self) -> Vec<(usize, f64)> {
        let mut rows: Vec<(usize, f64)> =
            self.space.normal_nodes().iter().enumerate().filter(|(_, &x)| x > 0.0).map(|(r, &x)| (r, x * x)).collect();
        rows.sort_by(|a, b| a.1.total_cmp(&b.1));
        rows
    }

    fn row_count(&self) -> usize {
        self.space.normal_nodes().len()
    }

    /// Truncated convolution: only lags `t − s < x_n²` contribute, and the
    /// output vanishes for `x_n ≤ 0`.
    pub fn truncated(&self, values: &[f64]) -> Vec<f64> {
        let hat = self.spectra(values);
        let running = self.running(&hat);
        let ns = self.space.space_len();
        let nr = self.row_count();
        let rows = self.positive_rows();
        let mut out = vec![0.0; values.len()];
        for k in 0..self.time.len() {
            let tk = self.time.node(k);
            let lag_max = tk - self.time.faces[0];
            let slice = &mut out[k * ns..(k + 1) * ns];
            let mut full_rows = Vec::new();
            let mut m = k;
            let mut prop = vec![1.0; self.space.total()];
            for &(r, sigma) in &rows {
                if sigma >= lag_max {
                    full_rows.push(r);
                    continue;
                }
                let s_cut = tk - sigma;
                while s_cut <= self.time.faces[m] {
                    prop.iter_mut().zip(&self.decay[m]).for_each(|(p, d)| *p *= d);
                    m -= 1;
                }
                let (_, part) = self.lag_integral(s_cut, self.time.node(m));
                let spec: Vec<C> = (0..prop.len())
                    .map(|p| {
                        let old = running[m][p] - hat[m][p] * part[p];
                        (running[k][p] - old * prop[p]) * self.mult[p]
                    })
                    .collect();
                scatter_row(slice, &self.space.row_inverse(&spec, r), r, nr);
            }
            if !full_rows.is_empty() {
                let full = self.space.inverse(self.with_mult(running[k].clone()));
                for r in full_rows {
                    for (q, chunk) in full.chunks_exact(nr).enumerate() {
                        slice[q * nr + r] = chunk[r];
                    }
                }
            }
        }
        out
    }

    /// Adjoint of [`Self::truncated`] for the lattice inner product.
    pub fn truncated_adjoint(&self, values: &[f64]) -> Vec<f64> {
        let ns = self.space.space_len();
        let nr = self.row_count();
        let total = self.space.total();
        let nt = self.time.len();
        let weighted = self.time_weighted(values);
        let rows = self.positive_rows();
        let mut acc: Vec<Vec<C>> = vec![vec![ZERO; total]; nt];
        for k in 0..nt {
            let tk = self.time.node(k);
            let slice = &weighted[k * ns..(k + 1) * ns];
            let row_specs: Vec<(f64, Vec<C>)> = rows
                .iter()
                .filter_map(|&(r, sigma)| {
                    let row: Vec<f64> = slice.iter().skip(r).step_by(nr).copied().collect();
                    row.iter().any(|&v| v != 0.0).then(|| (sigma, self.space.row_forward(&row, r)))
                })
                .collect();
            if row_specs.is_empty() {
                continue;
            }
            let mut suffix = vec![ZERO; total];
            for (_, s) in &row_specs {
                suffix.iter_mut().zip(s).for_each(|(a, b)| *a += b);
            }
            let mut next = 0;
            let mut prop = vec![1.0; total];
            for m in (0..=k).rev() {
                if m < k {
                    prop.iter_mut().zip(&self.decay[m + 1]).for_each(|(p, d)| *p *= d);
                }
                let lag_lo = tk - self.time.node(m);
                let lag_hi = tk - self.time.faces[m];
                while next < row_specs.len() && row_specs[next].0 < lag_hi {
                    let (sigma, spec) = &row_specs[next];
                    suffix.iter_mut().zip(spec).for_each(|(a, b)| *a -= b);
                    if *sigma > lag_lo {
                        let node = self.time.node(m);
                        let (_, part) = self.lag_integral(node - (sigma - lag_lo), node);
                        for p in 0..total {
                            acc[m][p] += spec[p] * (prop[p] * part[p]);
                        }
                    }
                    next += 1;
                }
                if next == row_specs.len() {
                    break;
                }
                for p in 0..total {
                    acc[m][p] += suffix[p] * (prop[p] * self.cell[m][p]);
                }
            }
        }
        self.finish_adjoint(acc)
    }
}

fn scatter_row(slice: &mut [f64], row: &[f64], r: usize, nr: usize) {
    for (q, v) in row.iter().enumerate() {
        slice[q * nr + r] = *v;
    }
}
