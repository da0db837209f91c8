//! Periodic domain split into overlapping elements, and fields sampled on them.
//!
//! Elements are indexed `0..M`; element `e` is centred at `X = (e + 1)·h`, so the
//! grid points are `h, 2h, …, M·h = L`. Each element stores a left half
//! `[X − h, X⁻]` and a right half `[X⁺, X + h]`, each with `subgrid + 1` nodes.
//! The centre node therefore appears twice, which lets a field carry a
//! derivative kink at `X` while its value stays continuous.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which half of an element a node belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    fn slot(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainGrid {
    length: f64,
    elements: usize,
    subgrid: usize,
}

impl DomainGrid {
    pub const MIN_ELEMENTS: usize = 3;
    pub const MIN_SUBGRID: usize = 8;

    pub fn new(length: f64, elements: usize, subgrid: usize) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "domain length must be positive and finite, got {length}"
            )));
        }
        if elements < Self::MIN_ELEMENTS {
            return Err(Error::InvalidGrid(format!(
                "need at least {} elements for the j-1, j, j+1 coupling, got {elements}",
                Self::MIN_ELEMENTS
            )));
        }
        if subgrid < Self::MIN_SUBGRID {
            return Err(Error::InvalidGrid(format!(
                "need at least {} subgrid cells per half-element, got {subgrid}",
                Self::MIN_SUBGRID
            )));
        }
        Ok(Self {
            length,
            elements,
            subgrid,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn elements(&self) -> usize {
        self.elements
    }

    /// Cells per half-element.
    pub fn subgrid(&self) -> usize {
        self.subgrid
    }

    /// Grid spacing `h = L / M`.
    pub fn spacing(&self) -> f64 {
        self.length / self.elements as f64
    }

    /// Subgrid cell width.
    pub fn cell_width(&self) -> f64 {
        self.spacing() / self.subgrid as f64
    }

    /// Grid point of element `e`.
    pub fn center(&self, e: usize) -> f64 {
        (e + 1) as f64 * self.spacing()
    }

    /// All grid points, in element order.
    pub fn grid_points(&self) -> Vec<f64> {
        (0..self.elements).map(|e| self.center(e)).collect()
    }

    /// Periodic element index.
    pub fn wrap(&self, e: isize) -> usize {
        e.rem_euclid(self.elements as isize) as usize
    }

    pub fn neighbor(&self, e: usize, offset: isize) -> usize {
        self.wrap(e as isize + offset)
    }

    /// Nodes per half-element, including both ends.
    pub fn half_len(&self) -> usize {
        self.subgrid + 1
    }

    pub fn nodes_per_element(&self) -> usize {
        2 * self.half_len()
    }

    pub fn node_count(&self) -> usize {
        self.elements * self.nodes_per_element()
    }

    /// Offset `x − X` of node `i` on the given half.
    pub fn node_offset(&self, side: Side, i: usize) -> f64 {
        let dx = self.cell_width();
        match side {
            Side::Left => -self.spacing() + i as f64 * dx,
            Side::Right => i as f64 * dx,
        }
    }

    /// Flat index of a node inside an `ElementField`.
    pub fn node_index(&self, e: usize, side: Side, i: usize) -> usize {
        e * self.nodes_per_element() + side.slot() * self.half_len() + i
    }

    /// Position of a node folded into `[0, L)`.
    pub fn node_position(&self, e: usize, side: Side, i: usize) -> f64 {
        (self.center(e) + self.node_offset(side, i)).rem_euclid(self.length)
    }

    pub fn ensure_same(&self, other: &DomainGrid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "(L={}, M={}, n={}) vs (L={}, M={}, n={})",
                self.length, self.elements, self.subgrid, other.length, other.elements, other.subgrid
            )))
        }
    }

    pub fn inner_product(&self, u: &ElementField, v: &ElementField) -> Result<f64> {
        self.ensure_same(&u.grid)?;
        self.ensure_same(&v.grid)?;
        Ok((0..self.elements).map(|e| element_dot(self, u, v, e)).sum())
    }

    /// Inner product restricted to one element.
    pub fn element_inner_product(&self, u: &ElementField, v: &ElementField, e: usize) -> Result<f64> {
        self.ensure_same(&u.grid)?;
        self.ensure_same(&v.grid)?;
        Ok(element_dot(self, u, v, e))
    }

    /// `(Σ_j ‖∂ᵅ u_j‖²)^{1/2}` with each half differentiated separately.
    pub fn seminorm(&self, u: &ElementField, order: u32) -> Result<f64> {
        self.ensure_same(&u.grid)?;
        let dx = self.cell_width();
        let sum: f64 = match order {
            0 => return Ok(self.inner_product(u, u)?.max(0.0).sqrt()),
            1 => u
                .halves()
                .map(|half| half.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / dx)
                .sum(),
            2 => u.halves().map(|half| second_derivative_energy(half, dx)).sum(),
            other => return Err(Error::UnsupportedOrder(other)),
        };
        Ok(sum.sqrt())
    }
}

/// Cell mass rule: the mean of the lumped and consistent P1 mass matrices.
/// Exact for constants, second order for smooth products.
#[inline]
pub(crate) fn cell_mass(dx: f64, a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    dx / 12.0 * (5.0 * (a0 * b0 + a1 * b1) + a0 * b1 + a1 * b0)
}

/// Local mass matrix of one cell, matching `cell_mass`.
pub(crate) fn cell_mass_matrix(dx: f64) -> [[f64; 2]; 2] {
    let d = 5.0 * dx / 12.0;
    let o = dx / 12.0;
    [[d, o], [o, d]]
}

fn half_dot(a: &[f64], b: &[f64], dx: f64) -> f64 {
    a.windows(2)
        .zip(b.windows(2))
        .map(|(p, q)| cell_mass(dx, p[0], p[1], q[0], q[1]))
        .sum()
}

fn element_dot(g: &DomainGrid, u: &ElementField, v: &ElementField, e: usize) -> f64 {
    let dx = g.cell_width();
    Side::BOTH
        .iter()
        .map(|&s| half_dot(u.half(e, s), v.half(e, s), dx))
        .sum()
}

fn second_derivative_energy(half: &[f64], dx: f64) -> f64 {
    let n = half.len();
    let inv = 1.0 / (dx * dx);
    let d2 = |i: usize| -> f64 {
        if i == 0 {
            (2.0 * half[0] - 5.0 * half[1] + 4.0 * half[2] - half[3]) * inv
        } else if i == n - 1 {
            (2.0 * half[n - 1] - 5.0 * half[n - 2] + 4.0 * half[n - 3] - half[n - 4]) * inv
        } else {
            (half[i - 1] - 2.0 * half[i] + half[i + 1]) * inv
        }
    };
    let vals: Vec<f64> = (0..n).map(|i| d2(i).powi(2)).collect();
    vals.windows(2).map(|w| 0.5 * dx * (w[0] + w[1])).sum()
}

/// A field sampled on every element's subgrid.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementField {
    grid: DomainGrid,
    values: Vec<f64>,
}

impl ElementField {
    pub fn zeros(grid: &DomainGrid) -> Self {
        Self {
            grid: *grid,
            values: vec![0.0; grid.node_count()],
        }
    }

    pub fn constant(grid: &DomainGrid, c: f64) -> Self {
        Self {
            grid: *grid,
            values: vec![c; grid.node_count()],
        }
    }

    /// Samples `f(element, side, x − X)` at every node.
    pub fn from_fn(grid: &DomainGrid, mut f: impl FnMut(usize, Side, f64) -> f64) -> Self {
        let mut out = Self::zeros(grid);
        for e in 0..grid.elements {
            for side in Side::BOTH {
                for i in 0..grid.half_len() {
                    let idx = grid.node_index(e, side, i);
                    out.values[idx] = f(e, side, grid.node_offset(side, i));
                }
            }
        }
        out
    }

    /// Samples a periodic function of the global coordinate on every element.
    pub fn from_global(grid: &DomainGrid, f: impl Fn(f64) -> f64) -> Self {
        let l = grid.length;
        Self::from_fn(grid, |e, _, s| f((grid.center(e) + s).rem_euclid(l)))
    }

    /// Samples `f(side, x − X)` on element `e` only; zero elsewhere.
    pub fn on_element(grid: &DomainGrid, e: usize, mut f: impl FnMut(Side, f64) -> f64) -> Self {
        Self::from_fn(grid, |k, side, s| if k == e { f(side, s) } else { 0.0 })
    }

    pub fn from_values(grid: &DomainGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::GridMismatch(format!(
                "expected {} node values, got {}",
                grid.node_count(),
                values.len()
            )));
        }
        Ok(Self { grid: *grid, values })
    }

    pub fn grid(&self) -> &DomainGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn half(&self, e: usize, side: Side) -> &[f64] {
        let start = self.grid.node_index(e, side, 0);
        &self.values[start..start + self.grid.half_len()]
    }

    pub fn half_mut(&mut self, e: usize, side: Side) -> &mut [f64] {
        let start = self.grid.node_index(e, side, 0);
        let len = self.grid.half_len();
        &mut self.values[start..start + len]
    }

    fn halves(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.grid.half_len())
    }

    /// `(u(X⁻), u(X⁺))` on element `e`.
    pub fn center_limits(&self, e: usize) -> (f64, f64) {
        let n = self.grid.subgrid;
        (self.half(e, Side::Left)[n], self.half(e, Side::Right)[0])
    }

    /// Centre value of element `e` (mean of the two limits).
    pub fn center_value(&self, e: usize) -> f64 {
        let (l, r) = self.center_limits(e);
        0.5 * (l + r)
    }

    pub fn center_values(&self) -> Vec<f64> {
        (0..self.grid.elements).map(|e| self.center_value(e)).collect()
    }

    /// End values `(u_j(X_{j-1}), u_j(X_{j+1}))` of element `e`.
    pub fn end_values(&self, e: usize) -> (f64, f64) {
        let n = self.grid.subgrid;
        (self.half(e, Side::Left)[0], self.half(e, Side::Right)[n])
    }

    /// Largest jump between the two copies of a centre node.
    pub fn continuity_defect(&self) -> f64 {
        (0..self.grid.elements)
            .map(|e| {
                let (l, r) = self.center_limits(e);
                (l - r).abs()
            })
            .fold(0.0, f64::max)
    }

    /// `self += a · other`.
    pub fn axpy(&mut self, a: f64, other: &ElementField) -> Result<()> {
        self.grid.ensure_same(&other.grid)?;
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += a * y;
        }
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        self.values.iter_mut().for_each(|x| *x *= a);
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// Copy with every element except `e` zeroed.
    pub fn restricted_to(&self, e: usize) -> Self {
        let mut out = Self::zeros(&self.grid);
        for side in Side::BOTH {
            out.half_mut(e, side).copy_from_slice(self.half(e, side));
        }
        out
    }

    /// Pointwise map.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Pointwise product.
    pub fn mul(&self, other: &ElementField) -> Result<Self> {
        self.grid.ensure_same(&other.grid)?;
        Ok(Self {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect(),
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    /// Global field rebuilt from right halves: `u(x) = u_j(x)` on `[X_j, X_{j+1})`.
    /// Point `k = e·n + i` sits at `X_e + i·dx`.
    pub fn right_half_trace(&self) -> Vec<f64> {
        let n = self.grid.subgrid;
        (0..self.grid.elements)
            .flat_map(|e| self.half(e, Side::Right)[..n].iter().copied())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid() -> DomainGrid {
        DomainGrid::new(4.0, 4, 64).unwrap()
    }

    #[test]
    fn grid_points_and_spacing() {
        let g = grid();
        assert_eq!(g.spacing(), 1.0);
        assert_eq!(g.grid_points(), vec![1.0, 2.0, 3.0, 4.0]);
        let g = DomainGrid::new(2.0 * PI, 8, 32).unwrap();
        assert!((g.spacing() - PI / 4.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(matches!(DomainGrid::new(1.0, 2, 8), Err(Error::InvalidGrid(_))));
        assert!(matches!(DomainGrid::new(0.0, 4, 8), Err(Error::InvalidGrid(_))));
        assert!(matches!(DomainGrid::new(-1.0, 4, 8), Err(Error::InvalidGrid(_))));
        assert!(matches!(DomainGrid::new(1.0, 4, 7), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn periodic_wrap() {
        let g = grid();
        for e in 0..4isize {
            assert_eq!(g.wrap(e + 4), g.wrap(e));
            assert_eq!(g.wrap(e - 4), g.wrap(e));
        }
        assert_eq!(g.neighbor(0, -1), 3);
        assert_eq!(g.neighbor(3, 1), 0);
    }

    #[test]
    fn elements_overlap_neighbours() {
        let g = grid();
        let h = g.spacing();
        for e in 0..g.elements() {
            let next = g.neighbor(e, 1);
            // Right half of e and left half of its neighbour cover the same interval.
            let a = g.node_position(e, Side::Right, 0);
            let b = g.node_position(next, Side::Left, 0);
            assert!((a - b).abs() < 1e-14);
            let a = g.node_position(e, Side::Right, g.subgrid());
            let b = g.node_position(next, Side::Left, g.subgrid());
            assert!((a - b).abs() < 1e-14 || (a - b).abs() > 4.0 - 1e-12);
            assert!((g.center(e) + h - g.center(e + 1)).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_field_measures_double_cover() {
        let g = grid();
        let one = ElementField::constant(&g, 1.0);
        assert!((g.inner_product(&one, &one).unwrap() - 2.0 * g.length()).abs() < 1e-12);
    }

    #[test]
    fn ground_mode_is_normalized_and_orthogonal_to_first_sine() {
        let g = grid();
        let h = g.spacing();
        let ground = ElementField::on_element(&g, 1, |_, _| 1.0 / (2.0 * h).sqrt());
        let sine = ElementField::on_element(&g, 1, |_, s| (PI * s / h).sin() / h.sqrt());
        assert!((g.inner_product(&ground, &ground).unwrap() - 1.0).abs() < 1e-12);
        assert!(g.inner_product(&ground, &sine).unwrap().abs() < 1e-12);
    }

    #[test]
    fn seminorms_of_reference_modes() {
        let g = grid();
        let h = g.spacing();
        let one = ElementField::constant(&g, 1.0);
        assert_eq!(g.seminorm(&one, 1).unwrap(), 0.0);
        let sine = ElementField::on_element(&g, 0, |_, s| (PI * s / h).sin() / h.sqrt());
        assert!((g.seminorm(&sine, 0).unwrap() - 1.0).abs() < 1e-3);
        assert!((g.seminorm(&sine, 1).unwrap() - PI / h).abs() < 1e-3 * PI / h);
        assert!((g.seminorm(&sine, 2).unwrap() - PI * PI / (h * h)).abs() < 1e-2 * PI * PI);
        assert!(matches!(g.seminorm(&sine, 3), Err(Error::UnsupportedOrder(3))));
    }

    #[test]
    fn kinked_mode_keeps_value_continuity() {
        let g = grid();
        let h = g.spacing();
        let kinked = ElementField::on_element(&g, 2, |_, s| (2.0 * PI * s.abs() / h).sin() / h.sqrt());
        assert!(kinked.continuity_defect() < 1e-15);
        assert!((g.seminorm(&kinked, 1).unwrap() - 2.0 * PI / h).abs() < 2e-3 * 2.0 * PI / h);
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let a = ElementField::zeros(&grid());
        let b = ElementField::zeros(&DomainGrid::new(4.0, 4, 32).unwrap());
        assert!(matches!(grid().inner_product(&a, &b), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn quadrature_is_second_order() {
        let errs: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|&n| {
                let g = DomainGrid::new(1.0, 4, n).unwrap();
                let h = g.spacing();
                let u = ElementField::on_element(&g, 0, |_, s| (3.0 * s / h).exp());
                let v = ElementField::on_element(&g, 0, |_, s| (2.0 * s / h).cos());
                // ∫_{-h}^{h} e^{3s/h} cos(2s/h) ds in closed form.
                let prim = |s: f64| {
                    let a = 3.0 / h;
                    let b = 2.0 / h;
                    (a * s).exp() * (a * (b * s).cos() + b * (b * s).sin()) / (a * a + b * b)
                };
                (g.inner_product(&u, &v).unwrap() - (prim(h) - prim(-h))).abs()
            })
            .collect();
        assert!(errs[0] / errs[1] >= 3.9, "{errs:?}");
        assert!(errs[1] / errs[2] >= 3.9, "{errs:?}");
    }

    #[test]
    fn right_half_trace_covers_domain_once() {
        let g = DomainGrid::new(1.0, 4, 8).unwrap();
        let u = ElementField::from_global(&g, |x| x);
        let trace = u.right_half_trace();
        assert_eq!(trace.len(), 32);
        let dx = g.cell_width();
        for (k, v) in trace.iter().enumerate() {
            let x = ((k as f64 + 8.0) * dx).rem_euclid(1.0);
            assert!((v - x).abs() < 1e-12);
        }
    }
}
