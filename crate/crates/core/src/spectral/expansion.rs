use super::eigen::EigenSystem;
use super::modes::ElementModes;
use crate::error::{Error, Result};
use crate::grid::{DomainGrid, ElementField, Side};

/// Which slow-subspace function to expand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlowMode {
    /// The localized slow mode of element `j`.
    Localized(usize),
    /// Slow eigenpair `k < M`; must be a simple eigenvalue.
    Eigen(usize),
}

/// Weak-coupling expansion of a slow field about its centre values:
/// `e = c_j + γ F1 + γ² F2 + R` on every element.
#[derive(Debug, Clone)]
pub struct GroundModeExpansion {
    gamma: f64,
    centers: Vec<f64>,
    curvature: Vec<f64>,
    first: ElementField,
    second: ElementField,
    remainder: ElementField,
    remainder_norm: f64,
}

impl GroundModeExpansion {
    /// Expansion of an arbitrary field at coupling `gamma`.
    pub fn of_field(field: &ElementField, gamma: f64) -> Result<Self> {
        let g = *field.grid();
        let h = g.spacing();
        let centers = field.center_values();
        let c = |e: usize, off: isize| centers[g.neighbor(e, off)];
        let curvature: Vec<f64> = (0..g.elements())
            .map(|e| (c(e, -1) - 2.0 * c(e, 0) + c(e, 1)) / (2.0 * h * h))
            .collect();
        let first = ElementField::from_fn(&g, |e, side, s| match side {
            Side::Left => (c(e, 0) - c(e, -1)) / h * s,
            Side::Right => (c(e, 1) - c(e, 0)) / h * s,
        });
        let second = ElementField::from_fn(&g, |e, side, s| match side {
            Side::Left => curvature[e] * s * (s + h),
            Side::Right => curvature[e] * s * (s - h),
        });
        let mut remainder = field.clone();
        remainder.axpy(-gamma, &first)?;
        remainder.axpy(-gamma * gamma, &second)?;
        for e in 0..g.elements() {
            for side in Side::BOTH {
                remainder.half_mut(e, side).iter_mut().for_each(|v| *v -= centers[e]);
            }
        }
        let remainder_norm = g.seminorm(&remainder, 0)?;
        Ok(Self {
            gamma,
            centers,
            curvature,
            first,
            second,
            remainder,
            remainder_norm,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `e(X_j)` per element.
    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    /// `A_j = (c_{j−1} − 2c_j + c_{j+1}) / (2h²)`.
    pub fn curvature(&self) -> &[f64] {
        &self.curvature
    }

    /// Piecewise-linear first-order correction.
    pub fn first(&self) -> &ElementField {
        &self.first
    }

    /// Piecewise-quadratic second-order correction.
    pub fn second(&self) -> &ElementField {
        &self.second
    }

    pub fn remainder(&self) -> &ElementField {
        &self.remainder
    }

    pub fn remainder_norm(&self) -> f64 {
        self.remainder_norm
    }

    pub fn grid(&self) -> &DomainGrid {
        self.first.grid()
    }
}

/// Expansion of a slow mode of `eig`; fails when the slow cluster is not
/// isolated or an eigen selection is degenerate.
pub fn expand_ground_mode(eig: &EigenSystem, mode: SlowMode) -> Result<GroundModeExpansion> {
    let slow = eig.slow_range()?;
    let field = match mode {
        SlowMode::Eigen(k) => {
            if !slow.contains(&k) {
                return Err(Error::SlowCluster(format!("pair {k} is not in the slow cluster")));
            }
            if eig.multiplicity(k) > 1 {
                return Err(Error::SlowCluster(format!(
                    "slow pair {k} is degenerate (multiplicity {})",
                    eig.multiplicity(k)
                )));
            }
            eig.field(k).clone()
        }
        SlowMode::Localized(j) => {
            if j >= eig.grid().elements() {
                return Err(Error::SlowCluster(format!("element {j} out of range")));
            }
            ElementModes::localized(eig, 0)?.field(j, 0).clone()
        }
    };
    GroundModeExpansion::of_field(&field, eig.gamma())
}

/// Expansions of every localized slow mode, element order.
pub fn expand_localized_modes(eig: &EigenSystem) -> Result<Vec<GroundModeExpansion>> {
    eig.slow_range()?;
    let slow = ElementModes::localized(eig, 0)?;
    (0..eig.grid().elements())
        .map(|j| GroundModeExpansion::of_field(slow.field(j, 0), eig.gamma()))
        .collect()
}
