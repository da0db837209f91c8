use std::f64::consts::PI;
use std::ops::Range;

use nalgebra::{DMatrix, SymmetricEigen};

use super::operator::CoupledOperator;
use crate::error::{Error, Result};
use crate::grid::{DomainGrid, ElementField};

/// Relative gap below which neighbouring eigenvalues form one cluster.
pub const CLUSTER_GAP: f64 = 1e-6;
/// Residual tolerance relative to the largest eigenvalue of the discretization.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

/// One insulated mode shape on an element: the level `n` gives the rate
/// `(nπ/h)²`; even levels `n ≥ 2` carry three shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InsulatedMode {
    pub level: usize,
    pub shape: usize,
}

impl InsulatedMode {
    /// Shapes at level `n`: 1 for `n = 0` and odd `n`, 3 for even `n ≥ 2`.
    pub fn multiplicity(level: usize) -> usize {
        if level >= 2 && level % 2 == 0 {
            3
        } else {
            1
        }
    }

    /// All shapes up to and including `max_level`, level-major.
    pub fn up_to(max_level: usize) -> Vec<InsulatedMode> {
        (0..=max_level)
            .flat_map(|level| (0..Self::multiplicity(level)).map(move |shape| InsulatedMode { level, shape }))
            .collect()
    }

    pub fn rate(&self, h: f64) -> f64 {
        let k = self.level as f64 * PI / h;
        k * k
    }

    /// Mode value at offset `s = x − X` (`|s| ≤ h`); normalized on `[−h, h]`.
    pub fn value(&self, h: f64, s: f64) -> f64 {
        let n = self.level as f64;
        let norm = 1.0 / h.sqrt();
        match (self.level, self.shape) {
            (0, _) => 1.0 / (2.0 * h).sqrt(),
            (l, _) if l % 2 == 1 => norm * (n * PI * s / h).sin(),
            (_, 0) => norm * (n * PI * s / h).cos(),
            (_, 1) => norm * (n * PI * s / h).sin(),
            _ => norm * (n * PI * s.abs() / h).sin(),
        }
    }

    /// The mode sampled on element `e`, zero elsewhere.
    pub fn sample(&self, grid: &DomainGrid, e: usize) -> ElementField {
        let h = grid.spacing();
        ElementField::on_element(grid, e, |_, s| self.value(h, s))
    }
}

/// Ascending eigenpairs of `−L_γ` with mass-orthonormal eigenfields.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    grid: DomainGrid,
    gamma: f64,
    values: Vec<f64>,
    fields: Vec<ElementField>,
    residuals: Vec<f64>,
    clusters: Vec<Range<usize>>,
}

impl EigenSystem {
    /// Closed-form eigenpairs of the insulated operator, the first `count` in
    /// ascending order (ties ordered by element, then shape).
    pub fn insulated(grid: &DomainGrid, count: usize) -> Self {
        let h = grid.spacing();
        let m = grid.elements();
        let mut pairs = Vec::with_capacity(count);
        let mut level = 0;
        while pairs.len() < count {
            for e in 0..m {
                for shape in 0..InsulatedMode::multiplicity(level) {
                    pairs.push((InsulatedMode { level, shape }, e));
                }
            }
            level += 1;
        }
        pairs.truncate(count);
        let values: Vec<f64> = pairs.iter().map(|(mode, _)| mode.rate(h)).collect();
        let fields = pairs.iter().map(|(mode, e)| mode.sample(grid, *e)).collect();
        let clusters = group_clusters(&values, 0.0);
        Self {
            grid: *grid,
            gamma: 0.0,
            residuals: vec![0.0; count],
            values,
            fields,
            clusters,
        }
    }

    /// Generalized symmetric eigensolve `K x = λ M x`, keeping the lowest `count` pairs.
    pub fn solve(op: &CoupledOperator, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::Eigen("requested zero eigenpairs".into()));
        }
        let n = op.dofs();
        let k = op.dense_stiffness();
        let m = op.dense_mass();
        let chol = m
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Eigen("mass matrix is not positive definite".into()))?;
        let l = chol.l();
        let diag = l.diagonal();
        let cond = (diag.max() / diag.min()).powi(2);
        let x = l
            .solve_lower_triangular(&k)
            .ok_or_else(|| Error::Eigen(format!("singular mass factor (condition ~{cond:.3e})")))?;
        let mut c = l
            .solve_lower_triangular(&x.transpose())
            .ok_or_else(|| Error::Eigen(format!("singular mass factor (condition ~{cond:.3e})")))?;
        c = (&c + c.transpose()) * 0.5;
        let eig = SymmetricEigen::try_new(c.clone(), f64::EPSILON, 0)
            .ok_or_else(|| Error::Eigen(format!("QR iteration did not converge (mass condition ~{cond:.3e})")))?;
        // The QR solver can pair a deflated 2×2 block's values with the wrong
        // vectors; Rayleigh quotients of the returned vectors are reliable.
        let rayleigh: Vec<f64> = (0..n)
            .map(|i| {
                let v = eig.eigenvectors.column(i);
                v.dot(&(&c * v))
            })
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| rayleigh[a].total_cmp(&rayleigh[b]));
        let top = rayleigh[order[n - 1]].abs().max(1.0);
        let floor = 1e-12 * top;
        let keep = count.min(n);
        let mut ys = DMatrix::zeros(n, keep);
        let mut values = Vec::with_capacity(keep);
        for (col, &idx) in order[..keep].iter().enumerate() {
            let lambda = rayleigh[idx];
            if lambda < -floor {
                return Err(Error::Eigen(format!(
                    "negative eigenvalue {lambda:e} (mass condition ~{cond:.3e})"
                )));
            }
            values.push(lambda.max(0.0));
            ys.set_column(col, &eig.eigenvectors.column(idx));
        }
        let xs = l
            .transpose()
            .solve_upper_triangular(&ys)
            .ok_or_else(|| Error::Eigen("singular mass factor".into()))?;

        let ones = vec![1.0; n];
        let mass_ones = op.mass_apply(&ones);
        let mut fields = Vec::with_capacity(keep);
        let mut residuals = Vec::with_capacity(keep);
        for (col, &lambda) in values.iter().enumerate() {
            let mut v: Vec<f64> = xs.column(col).iter().copied().collect();
            orient(&mut v, &mass_ones);
            let kv = op.stiffness_apply(&v);
            let mv = op.mass_apply(&v);
            let r: Vec<f64> = kv.iter().zip(&mv).map(|(a, b)| a - lambda * b).collect();
            let rr = DMatrix::from_column_slice(n, 1, &r);
            let res = l.solve_lower_triangular(&rr).map(|z| z.norm()).unwrap_or(f64::INFINITY);
            if !(res <= RESIDUAL_TOLERANCE * top) {
                return Err(Error::Eigen(format!(
                    "pair {col} has residual {res:e} above {:e} (mass condition ~{cond:.3e})",
                    RESIDUAL_TOLERANCE * top
                )));
            }
            residuals.push(res);
            fields.push(op.prolong(&v));
        }
        let clusters = group_clusters(&values, floor);
        Ok(Self {
            grid: *op.grid(),
            gamma: op.gamma(),
            values,
            fields,
            residuals,
            clusters,
        })
    }

    pub fn grid(&self) -> &DomainGrid {
        &self.grid
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn fields(&self) -> &[ElementField] {
        &self.fields
    }

    pub fn field(&self, k: usize) -> &ElementField {
        &self.fields[k]
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn clusters(&self) -> &[Range<usize>] {
        &self.clusters
    }

    /// Size of the cluster containing pair `k`.
    pub fn multiplicity(&self, k: usize) -> usize {
        self.clusters
            .iter()
            .find(|c| c.contains(&k))
            .map(|c| c.len())
            .unwrap_or(1)
    }

    /// Indices of the `M` slowest pairs, after checking they are separated
    /// from the rest of the spectrum.
    pub fn slow_range(&self) -> Result<Range<usize>> {
        let m = self.grid.elements();
        if self.len() <= m {
            return Err(Error::SlowCluster(format!(
                "need more than {m} eigenpairs to isolate the slow cluster, have {}",
                self.len()
            )));
        }
        let top = self.values[m - 1];
        let next = self.values[m];
        if !(top < 0.5 * next) {
            return Err(Error::SlowCluster(format!(
                "slowest {m} rates end at {top:e}, too close to the next rate {next:e}"
            )));
        }
        Ok(0..m)
    }

    /// Mean rate of the slow cluster.
    pub fn slow_rate(&self) -> Result<f64> {
        let r = self.slow_range()?;
        let m = r.len() as f64;
        Ok(self.values[r].iter().sum::<f64>() / m)
    }
}

/// Positive mean, or failing that a positive leading significant entry.
fn orient(v: &mut [f64], mass_ones: &[f64]) {
    let mean: f64 = v.iter().zip(mass_ones).map(|(a, b)| a * b).sum();
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let flip = if mean.abs() > 1e-8 * scale * mass_ones.iter().sum::<f64>() {
        mean < 0.0
    } else {
        v.iter().find(|x| x.abs() > 1e-3 * scale).is_some_and(|x| *x < 0.0)
    };
    if flip {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn group_clusters(values: &[f64], floor: f64) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=values.len() {
        let split = i == values.len() || {
            let (a, b) = (values[i - 1], values[i]);
            (b - a).abs() > CLUSTER_GAP * a.abs().max(b.abs()).max(floor / CLUSTER_GAP)
        };
        if split {
            out.push(start..i);
            start = i;
        }
    }
    out
}

/// Sine of the largest principal angle between two orthonormal families.
pub fn subspace_distance(grid: &DomainGrid, a: &[ElementField], b: &[ElementField]) -> Result<f64> {
    let mut s = DMatrix::zeros(a.len(), b.len());
    for (i, u) in a.iter().enumerate() {
        for (j, v) in b.iter().enumerate() {
            s[(i, j)] = grid.inner_product(u, v)?;
        }
    }
    let sv = s.singular_values();
    let smallest = sv.iter().fold(f64::INFINITY, |m, &x| m.min(x)).min(1.0);
    Ok((1.0 - smallest * smallest).max(0.0).sqrt())
}

/// Insulated modes of the given level on every element, element-major.
pub(crate) fn insulated_level(grid: &DomainGrid, level: usize) -> Vec<ElementField> {
    (0..grid.elements())
        .flat_map(|e| {
            (0..InsulatedMode::multiplicity(level)).map(move |shape| InsulatedMode { level, shape }.sample(grid, e))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Side;

    #[test]
    fn insulated_spectrum_at_unit_spacing() {
        let g = DomainGrid::new(4.0, 4, 32).unwrap();
        let sys = EigenSystem::insulated(&g, 4 * 9);
        let pi2 = PI * PI;
        let want = [(0.0, 1), (pi2, 1), (4.0 * pi2, 3), (9.0 * pi2, 1), (16.0 * pi2, 3)];
        let clusters = sys.clusters();
        assert_eq!(clusters.len(), 5);
        for (c, (lambda, mult)) in clusters.iter().zip(want) {
            assert_eq!(c.len(), 4 * mult);
            assert!((sys.value(c.start) - lambda).abs() < 1e-12);
        }
    }

    #[test]
    fn ground_mode_is_one_at_half_spacing() {
        let g = DomainGrid::new(2.0, 4, 16).unwrap();
        let sys = EigenSystem::insulated(&g, 4);
        assert!(sys
            .field(0)
            .half(0, Side::Left)
            .iter()
            .all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn insulated_modes_are_orthonormal() {
        let g = DomainGrid::new(4.0, 4, 64).unwrap();
        let modes = InsulatedMode::up_to(4);
        let fields: Vec<_> = modes.iter().map(|m| m.sample(&g, 1)).collect();
        for (i, a) in fields.iter().enumerate() {
            for (j, b) in fields.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                let got = g.inner_product(a, b).unwrap();
                // Sampled kinked modes carry O((nπ/N)²) quadrature error.
                let level = modes[i].level.max(modes[j].level) as f64;
                let tol = 0.1 * (level * std::f64::consts::PI / 64.0).powi(2) + 1e-12;
                assert!((got - want).abs() < tol, "{i} {j} {got}");
            }
        }
    }

    #[test]
    fn numeric_insulated_spectrum_matches_closed_form() {
        let g = DomainGrid::new(4.0, 4, 32).unwrap();
        let op = CoupledOperator::assemble(&g, 0.0).unwrap();
        let sys = EigenSystem::solve(&op, 36).unwrap();
        let exact = EigenSystem::insulated(&g, 36);
        for k in 0..36 {
            let (a, b) = (sys.value(k), exact.value(k));
            assert!((a - b).abs() <= 2e-3 * b.max(1.0), "{k}: {a} vs {b}");
        }
        let sizes: Vec<usize> = sys.clusters().iter().map(|c| c.len()).collect();
        assert_eq!(sizes, vec![4, 4, 12, 4, 12]);
    }

    #[test]
    fn numeric_eigenfields_are_orthonormal_with_small_residuals() {
        let g = DomainGrid::new(4.0, 4, 16).unwrap();
        let op = CoupledOperator::assemble(&g, 0.3).unwrap();
        let sys = EigenSystem::solve(&op, 20).unwrap();
        for a in 0..20 {
            for b in 0..20 {
                let want = if a == b { 1.0 } else { 0.0 };
                let got = g.inner_product(sys.field(a), sys.field(b)).unwrap();
                assert!((got - want).abs() < 1e-9);
            }
            let lu = op.apply(sys.field(a)).unwrap();
            let mut r = lu;
            r.axpy(sys.value(a), sys.field(a)).unwrap();
            assert!(g.seminorm(&r, 0).unwrap() < 1e-8 * (1.0 + sys.value(a)));
        }
        assert_eq!(sys.value(0), 0.0f64.max(sys.value(0)));
        assert!(sys.value(0) < 1e-9);
    }

    #[test]
    fn eigenfields_satisfy_flux_coupling() {
        let g = DomainGrid::new(4.0, 4, 64).unwrap();
        let op = CoupledOperator::assemble(&g, 0.4).unwrap();
        let sys = EigenSystem::solve(&op, 8).unwrap();
        for k in 0..8 {
            let f = sys.field(k);
            let defect = op.flux_defect(f).unwrap().iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let scale = sys.value(k).sqrt() * f.max_abs() + 1e-3;
            assert!(defect < 0.05 * scale, "{k}: {defect} vs {scale}");
        }
    }

    #[test]
    fn slow_range_requires_separation() {
        let g = DomainGrid::new(4.0, 4, 16).unwrap();
        let op = CoupledOperator::assemble(&g, 1.0).unwrap();
        let sys = EigenSystem::solve(&op, 12).unwrap();
        assert!(matches!(sys.slow_range(), Err(Error::SlowCluster(_))));
        let op = CoupledOperator::assemble(&g, 0.05).unwrap();
        let sys = EigenSystem::solve(&op, 12).unwrap();
        assert_eq!(sys.slow_range().unwrap(), 0..4);
    }

    #[test]
    fn clusters_split_on_relative_gap() {
        let c = group_clusters(&[0.0, 0.0, 1.0, 1.0 + 1e-9, 2.0], 1e-12);
        assert_eq!(c, vec![0..2, 2..4, 4..5]);
    }
}
