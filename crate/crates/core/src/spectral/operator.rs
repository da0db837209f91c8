use nalgebra::{DMatrix, DMatrixViewMut};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::{cell_mass_matrix, DomainGrid, ElementField, Side};

/// A node value as a combination of at most two unknowns.
type NodeMap = [(usize, f64); 2];

/// The coupled diffusion operator on the space of element fields that satisfy
/// the value coupling `u_j(X_{j±1}) = (1−γ)·u_j(X_j) + γ·u_{j±1}(X_{j±1})`.
///
/// Unknowns are the centre value and interior subgrid values of every
/// element; end values are eliminated through the value coupling. Stiffness
/// and mass are assembled from P1 cells, so `−L = M⁻¹K` is self-adjoint under
/// the mass inner product and the flux coupling holds as the natural
/// boundary condition.
pub struct CoupledOperator {
    grid: DomainGrid,
    gamma: f64,
    stiffness: CscMatrix<f64>,
    mass: CscMatrix<f64>,
    mass_factor: CscCholesky<f64>,
}

impl std::fmt::Debug for CoupledOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoupledOperator")
            .field("grid", &self.grid)
            .field("gamma", &self.gamma)
            .field("dofs", &self.dofs())
            .finish()
    }
}

pub(crate) fn check_coupling(gamma: f64) -> Result<()> {
    if (0.0..=1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::InvalidCoupling(gamma))
    }
}

impl CoupledOperator {
    pub fn assemble(grid: &DomainGrid, gamma: f64) -> Result<Self> {
        check_coupling(gamma)?;
        let n = dofs_for(grid);
        let dx = grid.cell_width();
        let mut k = CooMatrix::new(n, n);
        let mut m = CooMatrix::new(n, n);
        let kc = [[1.0 / dx, -1.0 / dx], [-1.0 / dx, 1.0 / dx]];
        let mc = cell_mass_matrix(dx);
        for e in 0..grid.elements() {
            for side in Side::BOTH {
                for i in 0..grid.subgrid() {
                    let maps = [node_map(grid, gamma, e, side, i), node_map(grid, gamma, e, side, i + 1)];
                    for (a, ma) in maps.iter().enumerate() {
                        for (b, mb) in maps.iter().enumerate() {
                            for &(p, cp) in ma {
                                for &(q, cq) in mb {
                                    let w = cp * cq;
                                    if w != 0.0 {
                                        k.push(p, q, w * kc[a][b]);
                                        m.push(p, q, w * mc[a][b]);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let stiffness = CscMatrix::from(&k);
        let mass = CscMatrix::from(&m);
        let mass_factor = CscCholesky::factor(&mass)
            .map_err(|e| Error::Eigen(format!("mass matrix is not positive definite: {e:?}")))?;
        Ok(Self {
            grid: *grid,
            gamma,
            stiffness,
            mass,
            mass_factor,
        })
    }

    pub fn grid(&self) -> &DomainGrid {
        &self.grid
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Number of unknowns.
    pub fn dofs(&self) -> usize {
        self.stiffness.nrows()
    }

    pub fn stiffness(&self) -> &CscMatrix<f64> {
        &self.stiffness
    }

    pub fn mass(&self) -> &CscMatrix<f64> {
        &self.mass
    }

    pub fn dense_stiffness(&self) -> DMatrix<f64> {
        DMatrix::from(&self.stiffness)
    }

    pub fn dense_mass(&self) -> DMatrix<f64> {
        DMatrix::from(&self.mass)
    }

    pub fn center_dof(&self, e: usize) -> usize {
        center_dof(&self.grid, e)
    }

    /// Field with the given unknowns; end values follow from the coupling.
    pub fn prolong(&self, x: &[f64]) -> ElementField {
        let g = &self.grid;
        let gamma = self.gamma;
        let mut f = ElementField::zeros(g);
        for e in 0..g.elements() {
            for side in Side::BOTH {
                let half = f.half_mut(e, side);
                for (i, v) in half.iter_mut().enumerate() {
                    *v = node_map(g, gamma, e, side, i).iter().map(|&(p, c)| c * x[p]).sum();
                }
            }
        }
        f
    }

    /// Unknowns read off a field (centre = mean of its two limits).
    pub fn restrict(&self, u: &ElementField) -> Result<Vec<f64>> {
        self.grid.ensure_same(u.grid())?;
        let g = &self.grid;
        let n = g.subgrid();
        let mut x = vec![0.0; self.dofs()];
        for e in 0..g.elements() {
            let base = e * (2 * n - 1);
            let left = u.half(e, Side::Left);
            let right = u.half(e, Side::Right);
            x[base..base + n - 1].copy_from_slice(&left[1..n]);
            x[base + n - 1] = u.center_value(e);
            x[base + n..base + 2 * n - 1].copy_from_slice(&right[1..n]);
        }
        Ok(x)
    }

    /// Largest violation of value continuity at centres and the value coupling at ends.
    pub fn constraint_defect(&self, u: &ElementField) -> Result<f64> {
        self.grid.ensure_same(u.grid())?;
        let g = &self.grid;
        let (gp, ga) = (1.0 - self.gamma, self.gamma);
        let mut worst = u.continuity_defect();
        for e in 0..g.elements() {
            let c = u.center_value(e);
            let (lo, hi) = u.end_values(e);
            let want_lo = gp * c + ga * u.center_value(g.neighbor(e, -1));
            let want_hi = gp * c + ga * u.center_value(g.neighbor(e, 1));
            worst = worst.max((lo - want_lo).abs()).max((hi - want_hi).abs());
        }
        Ok(worst)
    }

    /// `b_p = ⟨u, φ_p⟩` for every unknown's shape function `φ_p`.
    pub fn load(&self, u: &ElementField) -> Result<Vec<f64>> {
        self.grid.ensure_same(u.grid())?;
        let g = &self.grid;
        let mc = cell_mass_matrix(g.cell_width());
        let mut b = vec![0.0; self.dofs()];
        for e in 0..g.elements() {
            for side in Side::BOTH {
                let half = u.half(e, side);
                for i in 0..g.subgrid() {
                    let w0 = mc[0][0] * half[i] + mc[0][1] * half[i + 1];
                    let w1 = mc[1][0] * half[i] + mc[1][1] * half[i + 1];
                    for &(p, c) in &node_map(g, self.gamma, e, side, i) {
                        b[p] += c * w0;
                    }
                    for &(p, c) in &node_map(g, self.gamma, e, side, i + 1) {
                        b[p] += c * w1;
                    }
                }
            }
        }
        Ok(b)
    }

    /// Mass-orthogonal projection of an arbitrary field onto the coupled space.
    pub fn project(&self, u: &ElementField) -> Result<Vec<f64>> {
        let mut b = self.load(u)?;
        self.solve_mass(&mut b);
        Ok(b)
    }

    pub fn solve_mass(&self, b: &mut [f64]) {
        solve_in_place(&self.mass_factor, b);
    }

    pub fn mass_apply(&self, x: &[f64]) -> Vec<f64> {
        csc_apply(&self.mass, x)
    }

    pub fn stiffness_apply(&self, x: &[f64]) -> Vec<f64> {
        csc_apply(&self.stiffness, x)
    }

    /// `xᵀKx`, the diffusion energy of the field with unknowns `x`.
    pub fn energy(&self, x: &[f64]) -> f64 {
        dot(x, &self.stiffness_apply(x))
    }

    /// `−M⁻¹K x` on unknowns.
    pub fn apply_dofs(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.stiffness_apply(x);
        self.solve_mass(&mut y);
        y.iter_mut().for_each(|v| *v = -*v);
        y
    }

    /// `L_γ u` for a field in the coupled space.
    pub fn apply(&self, u: &ElementField) -> Result<ElementField> {
        let defect = self.constraint_defect(u)?;
        if defect > 1e-10 * (1.0 + u.max_abs()) {
            return Err(Error::Constraint(defect));
        }
        Ok(self.prolong(&self.apply_dofs(&self.restrict(u)?)))
    }

    /// Residual of the flux coupling at every centre, using second-order
    /// one-sided derivatives on each half.
    pub fn flux_defect(&self, u: &ElementField) -> Result<Vec<f64>> {
        self.grid.ensure_same(u.grid())?;
        let g = &self.grid;
        let (gp, ga) = (1.0 - self.gamma, self.gamma);
        let dx = g.cell_width();
        let d_start = |h: &[f64]| (-3.0 * h[0] + 4.0 * h[1] - h[2]) / (2.0 * dx);
        let d_end = |h: &[f64]| {
            let n = h.len() - 1;
            (3.0 * h[n] - 4.0 * h[n - 1] + h[n - 2]) / (2.0 * dx)
        };
        Ok((0..g.elements())
            .map(|e| {
                let left = u.half(e, Side::Left);
                let right = u.half(e, Side::Right);
                let prev_at_center = d_end(u.half(g.neighbor(e, -1), Side::Right));
                let next_at_center = d_start(u.half(g.neighbor(e, 1), Side::Left));
                d_end(left) - d_start(right) + ga * prev_at_center - ga * next_at_center - gp * d_start(left)
                    + gp * d_end(right)
            })
            .collect())
    }

    /// Coupled field with independent standard-normal unknowns.
    pub fn random_field(&self, rng: &mut impl Rng) -> ElementField {
        let x: Vec<f64> = (0..self.dofs()).map(|_| rng.sample(StandardNormal)).collect();
        self.prolong(&x)
    }
}

pub(crate) fn dofs_for(grid: &DomainGrid) -> usize {
    grid.elements() * (2 * grid.subgrid() - 1)
}

pub(crate) fn center_dof(grid: &DomainGrid, e: usize) -> usize {
    e * (2 * grid.subgrid() - 1) + grid.subgrid() - 1
}

/// Unknowns behind node `i` of one half of element `e`.
fn node_map(g: &DomainGrid, gamma: f64, e: usize, side: Side, i: usize) -> NodeMap {
    let n = g.subgrid();
    let base = e * (2 * n - 1);
    let center = base + n - 1;
    match (side, i) {
        (Side::Left, 0) => [(center, 1.0 - gamma), (center_dof(g, g.neighbor(e, -1)), gamma)],
        (Side::Right, i) if i == n => [(center, 1.0 - gamma), (center_dof(g, g.neighbor(e, 1)), gamma)],
        (Side::Left, i) => [(base + i - 1, 1.0), (0, 0.0)],
        (Side::Right, i) => [(center + i, 1.0), (0, 0.0)],
    }
}

pub(crate) fn solve_in_place(factor: &CscCholesky<f64>, b: &mut [f64]) {
    let n = b.len();
    factor.solve_mut(DMatrixViewMut::from_slice(b, n, 1));
}

/// `a + s·b` for matrices of equal shape.
pub(crate) fn csc_add_scaled(a: &CscMatrix<f64>, s: f64, b: &CscMatrix<f64>) -> CscMatrix<f64> {
    let mut coo = CooMatrix::new(a.nrows(), a.ncols());
    for (i, j, v) in a.triplet_iter() {
        coo.push(i, j, *v);
    }
    for (i, j, v) in b.triplet_iter() {
        coo.push(i, j, s * v);
    }
    CscMatrix::from(&coo)
}

pub(crate) fn csc_apply(a: &CscMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; a.nrows()];
    let (offsets, rows, vals) = a.csc_data();
    for (col, &xc) in x.iter().enumerate() {
        if xc == 0.0 {
            continue;
        }
        for idx in offsets[col]..offsets[col + 1] {
            y[rows[idx]] += vals[idx] * xc;
        }
    }
    y
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
