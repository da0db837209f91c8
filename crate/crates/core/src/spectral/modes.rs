use nalgebra::DMatrix;

use super::eigen::{insulated_level, EigenSystem, InsulatedMode};
use crate::error::{Error, Result};
use crate::grid::{DomainGrid, ElementField};

/// Per-element mode family `φ_{j,l}`, `l` ordered level-major as in
/// [`InsulatedMode::up_to`].
///
/// Without coupling these are the closed-form insulated modes, each supported
/// on one element. With coupling, each cluster of the numeric spectrum is
/// rotated onto the insulated modes of the same level (polar factor of the
/// overlap matrix), giving an orthonormal basis of the cluster in which each
/// member is concentrated on one element.
#[derive(Debug, Clone)]
pub struct ElementModes {
    grid: DomainGrid,
    gamma: f64,
    shapes: Vec<InsulatedMode>,
    fields: Vec<ElementField>,
    rates: Vec<f64>,
    supported: bool,
}

impl ElementModes {
    /// Closed-form insulated modes up to `max_level`.
    pub fn insulated(grid: &DomainGrid, max_level: usize) -> Self {
        let shapes = InsulatedMode::up_to(max_level);
        let h = grid.spacing();
        let mut fields = Vec::new();
        let mut rates = Vec::new();
        for e in 0..grid.elements() {
            for mode in &shapes {
                fields.push(mode.sample(grid, e));
                rates.push(mode.rate(h));
            }
        }
        Self {
            grid: *grid,
            gamma: 0.0,
            shapes,
            fields,
            rates,
            supported: true,
        }
    }

    /// Localized cluster bases of a numeric eigen-system, up to `max_level`.
    pub fn localized(eig: &EigenSystem, max_level: usize) -> Result<Self> {
        let grid = *eig.grid();
        let m = grid.elements();
        let shapes = InsulatedMode::up_to(max_level);
        let per = shapes.len();
        let needed = m * per;
        if eig.len() < needed {
            return Err(Error::SlowCluster(format!(
                "localizing {per} modes per element needs {needed} eigenpairs, have {}",
                eig.len()
            )));
        }
        let mut fields = vec![ElementField::zeros(&grid); needed];
        let mut rates = vec![0.0; needed];
        let mut offset = 0;
        let mut first_shape = 0;
        for level in 0..=max_level {
            let mult = InsulatedMode::multiplicity(level);
            let d = m * mult;
            let range = offset..offset + d;
            if range.end < eig.len() {
                let (top, next) = (eig.value(range.end - 1), eig.value(range.end));
                if !(next > top * (1.0 + 1e-3) + 1e-12) {
                    return Err(Error::SlowCluster(format!(
                        "level {level} cluster is not separated ({top:e} vs next {next:e})"
                    )));
                }
            }
            let targets = insulated_level(&grid, level);
            let mut overlap = DMatrix::zeros(d, d);
            for (a, v) in eig.fields()[range.clone()].iter().enumerate() {
                for (b, t) in targets.iter().enumerate() {
                    let e = b / mult;
                    overlap[(a, b)] = grid.element_inner_product(v, t, e)?;
                }
            }
            let svd = overlap.svd(true, true);
            let (u, vt) = match (svd.u, svd.v_t) {
                (Some(u), Some(vt)) => (u, vt),
                _ => return Err(Error::Eigen("overlap SVD failed".into())),
            };
            let rot = u * vt;
            for b in 0..d {
                let (e, shape) = (b / mult, b % mult);
                let slot = e * per + first_shape + shape;
                let mut phi = ElementField::zeros(&grid);
                let mut rate = 0.0;
                for a in 0..d {
                    let c = rot[(a, b)];
                    phi.axpy(c, eig.field(offset + a))?;
                    rate += c * c * eig.value(offset + a);
                }
                fields[slot] = phi;
                rates[slot] = rate;
            }
            offset += d;
            first_shape += mult;
        }
        Ok(Self {
            grid,
            gamma: eig.gamma(),
            shapes,
            fields,
            rates,
            supported: false,
        })
    }

    pub fn grid(&self) -> &DomainGrid {
        &self.grid
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Modes per element.
    pub fn per_element(&self) -> usize {
        self.shapes.len()
    }

    pub fn shapes(&self) -> &[InsulatedMode] {
        &self.shapes
    }

    pub fn field(&self, j: usize, l: usize) -> &ElementField {
        &self.fields[j * self.per_element() + l]
    }

    /// Element outside which `φ_{j,l}` vanishes, when there is one.
    pub fn support(&self, j: usize, _l: usize) -> Option<usize> {
        self.supported.then_some(j)
    }

    /// Decay rate of `φ_{j,l}`: the eigenvalue, or the Rayleigh quotient for a
    /// rotated cluster member.
    pub fn rate(&self, j: usize, l: usize) -> f64 {
        self.rates[j * self.per_element() + l]
    }

    /// `φ_{j,l}(X_j)`.
    pub fn center_value(&self, j: usize, l: usize) -> f64 {
        self.field(j, l).center_value(j)
    }

    /// Index range of the fast modes (`l ≥ 1`).
    pub fn fast(&self) -> std::ops::Range<usize> {
        1..self.per_element()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::CoupledOperator;

    #[test]
    fn thirteen_modes_up_to_level_six() {
        let g = DomainGrid::new(4.0, 4, 16).unwrap();
        let modes = ElementModes::insulated(&g, 6);
        assert_eq!(modes.per_element(), 13);
        assert!(modes.rate(0, 12) < 400.0 / (g.spacing() * g.spacing()));
    }

    #[test]
    fn localized_modes_reproduce_insulated_modes_without_coupling() {
        let g = DomainGrid::new(4.0, 4, 32).unwrap();
        let op = CoupledOperator::assemble(&g, 0.0).unwrap();
        let eig = EigenSystem::solve(&op, 4 * 5).unwrap();
        let loc = ElementModes::localized(&eig, 2).unwrap();
        let exact = ElementModes::insulated(&g, 2);
        for j in 0..4 {
            for l in 0..5 {
                let e = exact.field(j, l);
                let ip = g.inner_product(loc.field(j, l), e).unwrap() / g.inner_product(e, e).unwrap().sqrt();
                assert!(ip > 0.999, "{j} {l}: {ip}");
            }
        }
    }

    #[test]
    fn localized_modes_are_orthonormal_and_concentrated() {
        let g = DomainGrid::new(4.0, 4, 16).unwrap();
        let op = CoupledOperator::assemble(&g, 0.1).unwrap();
        let eig = EigenSystem::solve(&op, 4 * 5).unwrap();
        let loc = ElementModes::localized(&eig, 2).unwrap();
        for a in 0..20 {
            for b in 0..20 {
                let got = g.inner_product(&loc.fields[a], &loc.fields[b]).unwrap();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((got - want).abs() < 1e-9);
            }
        }
        for j in 0..4 {
            let f = loc.field(j, 0);
            let own = g.element_inner_product(f, f, j).unwrap();
            assert!(own > 0.9, "{own}");
        }
    }
}
