//! Cell-centred difference operators with odd ghost reflection at every box
//! face (zero Dirichlet data on the faces).
//!
//! Pure second derivatives use the flux form
//! `[(u_{k+1}−u_k)/dr_k − (u_k−u_{k−1})/dl_k]/w_k`. Mixed derivatives use
//! `M_ij = −¼(D_i^{+*}D_j^+ + D_j^{+*}D_i^+ + D_i^{−*}D_j^− + D_j^{−*}D_i^−)`
//! with `*` the adjoint in the cell-measure inner product; this keeps
//! `−Σ a_ij M_ij` positive definite for every elliptic `a`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DMatrixView};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Axis;

#[derive(Debug, Clone)]
struct AxisStencil {
    len: usize,
    stride: usize,
    w: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    diag: Vec<f64>,
    /// `D^+` coefficients at `(k, k+1)`.
    fwd: Vec<(f64, f64)>,
    /// `D^−` coefficients at `(k−1, k)`.
    bwd: Vec<(f64, f64)>,
}

impl AxisStencil {
    fn new(axis: &Axis, stride: usize) -> Result<Self> {
        let faces = axis.faces().ok_or_else(|| Error::Data("difference stencils need cell axes".into()))?;
        let x = axis.nodes();
        let w = axis.weights().to_vec();
        let len = x.len();
        if len < 3 {
            return Err(Error::Data(format!("axis with {len} cells is too small for the stencils")));
        }
        let dl: Vec<f64> = (0..len).map(|k| if k == 0 { 2.0 * (x[0] - faces[0]) } else { x[k] - x[k - 1] }).collect();
        let dr: Vec<f64> =
            (0..len).map(|k| if k == len - 1 { 2.0 * (faces[len] - x[k]) } else { x[k + 1] - x[k] }).collect();
        let mut lo = vec![0.0; len];
        let mut hi = vec![0.0; len];
        let mut diag = vec![0.0; len];
        let mut fwd = vec![(0.0, 0.0); len];
        let mut bwd = vec![(0.0, 0.0); len];
        for k in 0..len {
            let (l, r) = (1.0 / (dl[k] * w[k]), 1.0 / (dr[k] * w[k]));
            diag[k] = -(l + r);
            if k == 0 {
                diag[k] -= l;
                bwd[k] = (0.0, 2.0 / dl[k]);
            } else {
                lo[k] = l;
                bwd[k] = (-1.0 / dl[k], 1.0 / dl[k]);
            }
            if k == len - 1 {
                diag[k] -= r;
                fwd[k] = (-2.0 / dr[k], 0.0);
            } else {
                hi[k] = r;
                fwd[k] = (-1.0 / dr[k], 1.0 / dr[k]);
            }
        }
        Ok(Self { len, stride, w, lo, hi, diag, fwd, bwd })
    }

    fn pos(&self, idx: usize) -> usize {
        (idx / self.stride) % self.len
    }

    fn second(&self, u: &[f64], idx: usize, k: usize) -> f64 {
        let mut v = self.diag[k] * u[idx];
        if k > 0 {
            v += self.lo[k] * u[idx - self.stride];
        }
        if k + 1 < self.len {
            v += self.hi[k] * u[idx + self.stride];
        }
        v
    }

    fn fwd(&self, u: &[f64], idx: usize, k: usize) -> f64 {
        let (a, b) = self.fwd[k];
        a * u[idx] + if k + 1 < self.len { b * u[idx + self.stride] } else { 0.0 }
    }

    fn bwd(&self, u: &[f64], idx: usize, k: usize) -> f64 {
        let (a, b) = self.bwd[k];
        b * u[idx] + if k > 0 { a * u[idx - self.stride] } else { 0.0 }
    }
}

/// Second-order difference operators on a tensor lattice of cells.
#[derive(Debug, Clone)]
pub struct Stencil {
    axes: Vec<AxisStencil>,
    measure: Vec<f64>,
    spectral: OnceLock<Spectral>,
}

/// Eigen-decomposition of the axis-0 second difference, `D_00 = W^{-½}QΛQᵀW^{½}`.
#[derive(Debug, Clone)]
struct Spectral {
    /// `W^{½}Q`
    forward: DMatrix<f64>,
    /// `W^{-½}Q`
    backward: DMatrix<f64>,
    lambda: Vec<f64>,
}

impl Spectral {
    fn new(axis: &AxisStencil) -> Self {
        let n = axis.len;
        let sw: Vec<f64> = axis.w.iter().map(|w| w.sqrt()).collect();
        let uniform = axis.w.iter().all(|w| (w - axis.w[0]).abs() <= 1e-12 * axis.w[0]);
        let (q, lambda) = if uniform {
            // odd-ghost Dirichlet modes sin(θ_m(k+½)), θ_m = πm/N
            let h = axis.w[0];
            let q = DMatrix::from_fn(n, n, |k, m| {
                let mm = (m + 1) as f64;
                let norm = if m + 1 == n { (n as f64).sqrt() } else { (n as f64 / 2.0).sqrt() };
                (std::f64::consts::PI * mm * (k as f64 + 0.5) / n as f64).sin() / norm
            });
            let lambda = (1..=n)
                .map(|m| -4.0 / (h * h) * (std::f64::consts::PI * m as f64 / (2.0 * n as f64)).sin().powi(2))
                .collect();
            (q, lambda)
        } else {
            let s = DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    axis.diag[i]
                } else if j == i + 1 {
                    axis.hi[i] * sw[i] / sw[j]
                } else if i == j + 1 {
                    axis.lo[i] * sw[i] / sw[j]
                } else {
                    0.0
                }
            });
            let e = s.symmetric_eigen();
            (e.eigenvectors, e.eigenvalues.iter().copied().collect())
        };
        let forward = DMatrix::from_fn(n, n, |k, m| sw[k] * q[(k, m)]);
        let backward = DMatrix::from_fn(n, n, |k, m| q[(k, m)] / sw[k]);
        Self { forward, backward, lambda }
    }
}

impl Stencil {
    pub fn new(space_axes: &[Axis]) -> Result<Self> {
        let n = space_axes.len();
        let mut strides = vec![1; n];
        for a in (0..n.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * space_axes[a + 1].len();
        }
        let axes = space_axes.iter().zip(&strides).map(|(ax, &s)| AxisStencil::new(ax, s)).collect::<Result<Vec<_>>>()?;
        let len: usize = space_axes.iter().map(Axis::len).product();
        let measure = (0..len).map(|idx| axes.iter().map(|a| a.w[a.pos(idx)]).product()).collect();
        Ok(Self { axes, measure, spectral: OnceLock::new() })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.measure.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measure.is_empty()
    }

    /// Cell measures, the weights of the inner product.
    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    /// Positions along every axis of the first cell of line `row` (lines
    /// run along the last axis).
    fn row_positions(&self, row: usize) -> Vec<usize> {
        let base = row * self.axes[self.dim() - 1].len;
        self.axes.iter().map(|a| a.pos(base)).collect()
    }

    fn line_len(&self) -> usize {
        self.axes[self.dim() - 1].len
    }

    /// `M_ij u` at one cell, `pos` holding the cell's position on every axis.
    fn mixed(&self, i: usize, j: usize, u: &[f64], idx: usize, pos: &[usize]) -> f64 {
        let (ai, aj) = (&self.axes[i], &self.axes[j]);
        let (pi, pj) = (pos[i], pos[j]);
        // w^{-1}(D_a^±)^T w applied to D_b^± u, expanded in place
        let fwd_adj = |a: &AxisStencil, pa: usize, b: &AxisStencil, pb: usize| {
            let mut s = a.fwd[pa].0 * b.fwd(u, idx, pb);
            if pa > 0 {
                s += a.w[pa - 1] / a.w[pa] * a.fwd[pa - 1].1 * b.fwd(u, idx - a.stride, pb);
            }
            s
        };
        let bwd_adj = |a: &AxisStencil, pa: usize, b: &AxisStencil, pb: usize| {
            let mut s = a.bwd[pa].1 * b.bwd(u, idx, pb);
            if pa + 1 < a.len {
                s += a.w[pa + 1] / a.w[pa] * a.bwd[pa + 1].0 * b.bwd(u, idx + a.stride, pb);
            }
            s
        };
        -0.25 * (fwd_adj(ai, pi, aj, pj) + fwd_adj(aj, pj, ai, pi) + bwd_adj(ai, pi, aj, pj) + bwd_adj(aj, pj, ai, pi))
    }

    /// Run `f(idx, positions)` for every cell, writing into `out`.
    fn for_each_cell<F>(&self, out: &mut [f64], f: F)
    where
        F: Fn(usize, &[usize]) -> f64 + Sync,
    {
        let len = self.line_len();
        let last = self.dim() - 1;
        out.par_chunks_mut(len).enumerate().for_each(|(row, o)| {
            let mut pos = self.row_positions(row);
            for (k, v) in o.iter_mut().enumerate() {
                pos[last] = k;
                *v = f(row * len + k, &pos);
            }
        });
    }

    /// `D_iD_j u` into `out`.
    pub fn hessian_entry(&self, i: usize, j: usize, u: &[f64], out: &mut [f64]) {
        if i == j {
            self.for_each_cell(out, |idx, pos| self.axes[i].second(u, idx, pos[i]));
        } else {
            self.for_each_cell(out, |idx, pos| self.mixed(i, j, u, idx, pos));
        }
    }

    /// `Σ a_ij D_iD_j u` into `out`.
    pub fn apply(&self, a: &DMatrix<f64>, u: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let pairs: Vec<(usize, usize, f64)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, a[(i, j)] + a[(j, i)]))
            .filter(|p| p.2 != 0.0)
            .collect();
        self.for_each_cell(out, |idx, pos| {
            let mut v: f64 = (0..n).map(|i| a[(i, i)] * self.axes[i].second(u, idx, pos[i])).sum();
            for &(i, j, c) in &pairs {
                v += c * self.mixed(i, j, u, idx, pos);
            }
            v
        });
    }

    /// Solve `(I − dt·(T + shift))z = r` line by line along the last axis,
    /// where `T` keeps the full last-axis second difference and the diagonal
    /// of axes `first..n−1`.
    fn lines(&self, a: &DMatrix<f64>, dt: f64, first: usize, shift: f64, r: &[f64], z: &mut [f64]) {
        let n = self.dim() - 1;
        let last = &self.axes[n];
        let len = last.len;
        let ann = a[(n, n)];
        z.par_chunks_mut(len).zip(r.par_chunks(len)).enumerate().for_each(|(row, (zl, rl))| {
            let pos = self.row_positions(row);
            let others: f64 = shift + (first..n).map(|i| a[(i, i)] * self.axes[i].diag[pos[i]]).sum::<f64>();
            let mut c = vec![0.0; len];
            let mut d = vec![0.0; len];
            for k in 0..len {
                let diag = 1.0 - dt * (others + ann * last.diag[k]);
                let sub = -dt * ann * last.lo[k];
                let sup = -dt * ann * last.hi[k];
                let (cp, dp) = if k > 0 { (c[k - 1], d[k - 1]) } else { (0.0, 0.0) };
                let denom = diag - sub * cp;
                c[k] = sup / denom;
                d[k] = (rl[k] - sub * dp) / denom;
            }
            zl[len - 1] = d[len - 1];
            for k in (0..len - 1).rev() {
                zl[k] = d[k] - c[k] * zl[k + 1];
            }
        });
    }

    /// Line solves along the last axis with the diagonal of the other axes.
    pub fn line_solve(&self, a: &DMatrix<f64>, dt: f64, r: &[f64], z: &mut [f64]) {
        self.lines(a, dt, 0, 0.0, r, z);
    }

    /// Approximate `(I − dt·L_a)^{-1}r`: exact along axis 0 by eigen-transform
    /// and along the last axis by line solves; mixed terms are dropped. Exact
    /// for diagonal `a` when `n ≤ 2`.
    pub fn precondition(&self, a: &DMatrix<f64>, dt: f64, r: &[f64], z: &mut [f64]) {
        if self.dim() == 1 {
            return self.line_solve(a, dt, r, z);
        }
        let sp = self.spectral.get_or_init(|| Spectral::new(&self.axes[0]));
        let n0 = self.axes[0].len;
        let rest = r.len() / n0;
        let rh = DMatrixView::from_slice(r, rest, n0) * &sp.forward;
        let mut zh = DMatrix::zeros(rest, n0);
        let a00 = a[(0, 0)];
        for m in 0..n0 {
            self.lines(a, dt, 1, a00 * sp.lambda[m], rh.column(m).as_slice(), zh.column_mut(m).as_mut_slice());
        }
        let out = zh * sp.backward.transpose();
        z.copy_from_slice(out.as_slice());
    }

    /// Weighted inner product with a fixed-chunk ordered reduction, so the
    /// result does not depend on the thread count.
    pub fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        const CHUNK: usize = 4096;
        let parts: Vec<f64> = a
            .par_chunks(CHUNK)
            .zip(b.par_chunks(CHUNK))
            .zip(self.measure.par_chunks(CHUNK))
            .map(|((x, y), w)| x.iter().zip(y).zip(w).map(|((x, y), w)| w * x * y).sum())
            .collect();
        parts.iter().sum()
    }
}
