//! Tensor-product space-time lattices and scalar fields on them.
//!
//! Values are stored time-major: the time index is the slowest, and inside a
//! time slice the space index is row-major with axis 0 slowest.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which region a lattice discretizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Domain {
    /// A box truncation of `ℝⁿ`.
    WholeSpace,
    /// A box truncation of `{x_n > 0}`; the wall is `x_n = 0`.
    HalfSpace,
    /// The bounded box `∏(lower_i, upper_i)`.
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

/// One lattice axis: node coordinates with quadrature weights.
///
/// Cell axes carry their cell faces (node `i` is the midpoint of
/// `[faces[i], faces[i+1]]`, weight = width); nodal axes use trapezoid weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Axis {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    faces: Option<Vec<f64>>,
    /// Uniform spacing, when the axis is uniform.
    spacing: Option<f64>,
}

impl Axis {
    /// `count` uniform cells on `[lo, hi]`, nodes at cell centres.
    pub fn cells(lo: f64, hi: f64, count: usize) -> Self {
        let h = (hi - lo) / count as f64;
        let faces: Vec<f64> = (0..=count).map(|i| lo + i as f64 * h).collect();
        let mut a = Self::from_faces(faces);
        a.spacing = Some(h);
        a
    }

    /// Cells with arbitrary increasing faces.
    pub fn from_faces(faces: Vec<f64>) -> Self {
        let nodes = faces.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let weights = faces.windows(2).map(|w| w[1] - w[0]).collect();
        Self { nodes, weights, faces: Some(faces), spacing: None }
    }

    /// Cells on `[0, hi]` whose widths grow geometrically by `ratio` from
    /// `first` until reaching `max_width`, then stay uniform.
    pub fn graded_from_wall(first: f64, ratio: f64, max_width: f64, hi: f64) -> Self {
        let mut faces = vec![0.0];
        let mut w = first;
        while *faces.last().unwrap() < hi - 1e-12 {
            let next = (faces.last().unwrap() + w).min(hi);
            // avoid a sliver cell at the far end
            let next = if hi - next < 0.5 * w { hi } else { next };
            faces.push(next);
            w = (w * ratio).min(max_width);
        }
        Self::from_faces(faces)
    }

    /// Cells on `[-hi, hi]`, graded symmetrically away from 0.
    pub fn graded_symmetric(first: f64, ratio: f64, max_width: f64, hi: f64) -> Self {
        let half = Self::graded_from_wall(first, ratio, max_width, hi);
        let f = half.faces.unwrap();
        let mut faces: Vec<f64> = f.iter().rev().map(|v| -v).collect();
        faces.extend_from_slice(&f[1..]);
        Self::from_faces(faces)
    }

    /// `count` nodes from `lo` to `hi` inclusive, trapezoid weights.
    pub fn nodal(lo: f64, hi: f64, count: usize) -> Self {
        let h = (hi - lo) / (count - 1) as f64;
        let nodes = (0..count).map(|i| lo + i as f64 * h).collect();
        let weights = (0..count).map(|i| if i == 0 || i == count - 1 { 0.5 * h } else { h }).collect();
        Self { nodes, weights, faces: None, spacing: Some(h) }
    }

    /// Uniform nodes `offset + i·h`, each carrying weight `h`.
    pub fn lattice(offset: f64, spacing: f64, count: usize) -> Self {
        let nodes = (0..count).map(|i| offset + i as f64 * spacing).collect();
        Self { nodes, weights: vec![spacing; count], faces: None, spacing: Some(spacing) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn faces(&self) -> Option<&[f64]> {
        self.faces.as_deref()
    }

    pub fn spacing(&self) -> Option<f64> {
        self.spacing
    }

    pub fn offset(&self) -> f64 {
        self.nodes[0]
    }

    pub fn is_uniform(&self) -> bool {
        self.spacing.is_some()
    }

    /// Smallest distance between neighbouring nodes.
    pub fn min_step(&self) -> f64 {
        self.nodes.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }
}

/// Values of a scalar field on a space-time lattice.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridFunction {
    pub domain: Domain,
    /// Space axes followed by the time axis.
    pub axes: Vec<Axis>,
    pub values: Vec<f64>,
}

/// Header written next to a raw grid dump.
#[derive(Debug, Clone, Serialize)]
pub struct GridHeader<'a> {
    pub format: &'static str,
    pub layout: &'static str,
    pub dtype: &'static str,
    pub domain: &'a Domain,
    /// Node counts, space axes first, time last.
    pub shape: Vec<usize>,
    /// Uniform spacing per axis (`null` for graded axes).
    pub spacings: Vec<Option<f64>>,
    /// First node coordinate per axis.
    pub offsets: Vec<f64>,
    /// Cell faces for graded axes.
    pub faces: Vec<Option<Vec<f64>>>,
}

impl GridFunction {
    pub fn zeros(domain: Domain, axes: Vec<Axis>) -> Self {
        let len = axes.iter().map(Axis::len).product();
        Self { domain, axes, values: vec![0.0; len] }
    }

    /// Sample `f(x, t)` at every lattice node.
    pub fn from_fn<F>(domain: Domain, axes: Vec<Axis>, f: F) -> Self
    where
        F: Fn(&[f64], f64) -> f64,
    {
        let mut g = Self::zeros(domain, axes);
        let ns = g.space_len();
        let mut x = vec![0.0; g.space_dim()];
        for k in 0..g.time_len() {
            let t = g.time_axis().nodes()[k];
            for i in 0..ns {
                g.space_point_into(i, &mut x);
                g.values[k * ns + i] = f(&x, t);
            }
        }
        g
    }

    pub fn space_dim(&self) -> usize {
        self.axes.len() - 1
    }

    pub fn space_axes(&self) -> &[Axis] {
        &self.axes[..self.axes.len() - 1]
    }

    pub fn time_axis(&self) -> &Axis {
        self.axes.last().expect("grid has a time axis")
    }

    pub fn space_shape(&self) -> Vec<usize> {
        self.space_axes().iter().map(Axis::len).collect()
    }

    pub fn space_len(&self) -> usize {
        self.space_axes().iter().map(Axis::len).product()
    }

    pub fn time_len(&self) -> usize {
        self.time_axis().len()
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let ns = self.space_len();
        &self.values[k * ns..(k + 1) * ns]
    }

    pub fn slice_mut(&mut self, k: usize) -> &mut [f64] {
        let ns = self.space_len();
        &mut self.values[k * ns..(k + 1) * ns]
    }

    /// Multi-index of a flat space index.
    pub fn space_multi(&self, mut i: usize) -> Vec<usize> {
        let shape = self.space_shape();
        let mut m = vec![0; shape.len()];
        for a in (0..shape.len()).rev() {
            m[a] = i % shape[a];
            i /= shape[a];
        }
        m
    }

    /// Coordinates of a flat space index.
    pub fn space_point_into(&self, mut i: usize, x: &mut [f64]) {
        let axes = self.space_axes();
        for a in (0..axes.len()).rev() {
            let len = axes[a].len();
            x[a] = axes[a].nodes()[i % len];
            i /= len;
        }
    }

    pub fn space_point(&self, i: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.space_dim()];
        self.space_point_into(i, &mut x);
        x
    }

    /// Quadrature weight (cell measure) of a flat space index.
    pub fn space_weight(&self, mut i: usize) -> f64 {
        let axes = self.space_axes();
        let mut w = 1.0;
        for a in (0..axes.len()).rev() {
            let len = axes[a].len();
            w *= axes[a].weights()[i % len];
            i /= len;
        }
        w
    }

    /// Same axes (node coordinates and weights) and domain.
    pub fn same_lattice(&self, other: &Self) -> bool {
        self.domain == other.domain && self.axes == other.axes
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::Data(format!("non-finite value at flat index {i}"))),
            None => Ok(()),
        }
    }

    /// A new function on the same lattice with `f` applied to every value.
    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Self {
        Self { domain: self.domain.clone(), axes: self.axes.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// `a·self + b·other` on a shared lattice.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if !self.same_lattice(other) {
            return Err(Error::Data("lattice mismatch".into()));
        }
        Ok(Self {
            domain: self.domain.clone(),
            axes: self.axes.clone(),
            values: self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect(),
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn header(&self) -> GridHeader<'_> {
        GridHeader {
            format: "parakernel.grid/1",
            layout: "time-major, space row-major (axis 0 slowest)",
            dtype: "f64-le",
            domain: &self.domain,
            shape: self.axes.iter().map(Axis::len).collect(),
            spacings: self.axes.iter().map(Axis::spacing).collect(),
            offsets: self.axes.iter().map(Axis::offset).collect(),
            faces: self.axes.iter().map(|a| if a.is_uniform() { None } else { a.faces().map(<[f64]>::to_vec) }).collect(),
        }
    }

    /// Raw little-endian `f64` values in storage order.
    pub fn write_raw<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_axis_centres_and_weights() {
        let a = Axis::cells(0.0, 1.0, 4);
        assert_eq!(a.nodes(), &[0.125, 0.375, 0.625, 0.875]);
        assert_eq!(a.weights().iter().sum::<f64>(), 1.0);
        assert_eq!(a.spacing(), Some(0.25));
    }

    #[test]
    fn graded_axis_starts_at_wall_and_covers_range() {
        let a = Axis::graded_from_wall(0.01, 1.2, 0.2, 2.0);
        let f = a.faces().unwrap();
        assert_eq!(f[0], 0.0);
        assert!((f.last().unwrap() - 2.0).abs() < 1e-12);
        assert!((a.nodes()[0] - 0.005).abs() < 1e-15);
        assert!((a.weights().iter().sum::<f64>() - 2.0).abs() < 1e-12);
        let s = Axis::graded_symmetric(0.01, 1.2, 0.2, 2.0);
        assert_eq!(s.len(), 2 * a.len());
        assert!((s.nodes()[a.len()] - 0.005).abs() < 1e-15);
    }

    #[test]
    fn from_fn_layout_is_time_major() {
        let g = GridFunction::from_fn(
            Domain::WholeSpace,
            vec![Axis::cells(0.0, 2.0, 2), Axis::cells(0.0, 3.0, 3), Axis::lattice(1.0, 1.0, 2)],
            |x, t| 100.0 * t + 10.0 * x[0] + x[1],
        );
        assert_eq!(g.values.len(), 12);
        assert_eq!(g.slice(1)[0], 200.0 + 5.0 + 0.5);
        assert_eq!(g.space_multi(4), vec![1, 1]);
        assert_eq!(g.space_point(4), vec![1.5, 1.5]);
    }

    #[test]
    fn header_reports_shape_and_offsets() {
        let g = GridFunction::zeros(Domain::HalfSpace, vec![Axis::cells(0.0, 1.0, 4), Axis::lattice(0.1, 0.1, 3)]);
        let h = g.header();
        assert_eq!(h.shape, vec![4, 3]);
        assert_eq!(h.offsets, vec![0.125, 0.1]);
        let mut buf = Vec::new();
        g.write_raw(&mut buf).unwrap();
        assert_eq!(buf.len(), 12 * 8);
    }
}
