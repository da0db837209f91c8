//! Discrete grid-value SDE models: conventional finite differences, the
//! coupling-parameterized reduced model, the holistic model and its
//! introductory variant, plus the reduced slow equation in localized slow
//! coordinates.

use nalgebra::DMatrix;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use serde::{Deserialize, Serialize};

use crate::averaging::{AveragedCoeffs, FastModeStats, MartingaleDriver};
use crate::dynamics::{ModelTrajectory, SpdeConfig};
use crate::error::{Error, Result};
use crate::grid::{DomainGrid, ElementField};
use crate::noise::{
    channel, stream_id, DriverNormalization, ElementNoiseProjection, FieldSampler, NoisePath, QWienerSpec,
};
use crate::spectral::{dot, solve_in_place, CoupledOperator, EigenSystem, ElementModes};

const THREE_ROOT_TWO: f64 = 3.0 * std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    ConventionalFd,
    GammaReduced,
    Holistic,
    HolisticIntroVariant,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::ConventionalFd,
        ModelKind::GammaReduced,
        ModelKind::Holistic,
        ModelKind::HolisticIntroVariant,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::ConventionalFd => "conventional-fd",
            ModelKind::GammaReduced => "gamma-reduced",
            ModelKind::Holistic => "holistic",
            ModelKind::HolisticIntroVariant => "holistic-intro-variant",
        }
    }
}

/// Switches that select variants and ablate individual terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOptions {
    /// Multiply the deviation term by `α`.
    pub deviation_alpha: bool,
    /// Drop the limit-driver and `γ³` terms of the reduced model.
    pub truncate: bool,
    /// Keep the multiplicative deviation term.
    pub deviation: bool,
    /// Keep the noise-diffusion stencil term.
    pub stencil: bool,
    /// Implicit weight of the diffusion stencil; 0 is fully explicit.
    pub theta: f64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            deviation_alpha: false,
            truncate: false,
            deviation: true,
            stencil: true,
            theta: 0.0,
        }
    }
}

/// Per-step increments every model may draw on.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDrivers {
    pub dt: f64,
    /// `ΔW(X_j)`.
    pub grid: Vec<f64>,
    /// `√q^h_{j,0} Δβ_{j,0}`.
    pub slow: Vec<f64>,
    /// `Δβ̌_j`.
    pub deviation: Vec<f64>,
    /// `Δβ̂^γ_{j,0}`; zeros when no limit driver is bound.
    pub limit: Vec<f64>,
}

impl StepDrivers {
    pub fn zeros(elements: usize, dt: f64) -> Self {
        Self {
            dt,
            grid: vec![0.0; elements],
            slow: vec![0.0; elements],
            deviation: vec![0.0; elements],
            limit: vec![0.0; elements],
        }
    }
}

/// Read-only tables that turn member paths into [`StepDrivers`].
#[derive(Debug, Clone)]
pub struct ModelNoise {
    grid: DomainGrid,
    sampler: FieldSampler,
    projection: ElementNoiseProjection,
    limit: Option<MartingaleDriver>,
}

impl ModelNoise {
    pub fn new(
        spec: &QWienerSpec,
        grid: &DomainGrid,
        normalization: DriverNormalization,
        limit: Option<MartingaleDriver>,
    ) -> Result<Self> {
        let slow = ElementModes::insulated(grid, 0);
        let projection = ElementNoiseProjection::new(spec, &slow, normalization)?;
        if let Some(l) = &limit {
            if l.elements() != grid.elements() {
                return Err(Error::GridMismatch(format!(
                    "limit driver has {} elements, grid has {}",
                    l.elements(),
                    grid.elements()
                )));
            }
        }
        Ok(Self {
            grid: *grid,
            sampler: FieldSampler::new(spec, &grid.grid_points()),
            projection,
            limit,
        })
    }

    pub fn projection(&self) -> &ElementNoiseProjection {
        &self.projection
    }

    pub fn limit(&self) -> Option<&MartingaleDriver> {
        self.limit.as_ref()
    }

    pub fn drivers(&self, paths: &MemberPaths, step: usize) -> Result<StepDrivers> {
        let m = self.grid.elements();
        let inc = paths.global.step_increments(step)?;
        let deviation = paths.deviation.step_increments(step)?;
        if deviation.len() != m {
            return Err(Error::InvalidNoise(format!(
                "deviation path has {} modes, need {m}",
                deviation.len()
            )));
        }
        let limit = match (&self.limit, &paths.limit) {
            (Some(d), Some(p)) => d.increments(p, step)?,
            (Some(_), None) => return Err(Error::InvalidNoise("limit driver bound without a limit path".into())),
            _ => vec![0.0; m],
        };
        Ok(StepDrivers {
            dt: paths.global.dt(step)?,
            grid: self.sampler.increment(inc),
            slow: (0..m).map(|j| self.projection.amplitude_increment(inc, j, 0)).collect(),
            deviation: deviation.to_vec(),
            limit,
        })
    }
}

/// The independent paths of one ensemble member.
#[derive(Debug, Clone)]
pub struct MemberPaths {
    pub global: NoisePath,
    pub deviation: NoisePath,
    pub limit: Option<NoisePath>,
}

impl MemberPaths {
    /// Paths on the member's global, deviation and martingale channels.
    pub fn sample(spec: &QWienerSpec, noise: &ModelNoise, times: &[f64], seed: u64, member: u64) -> Result<Self> {
        let m = noise.grid.elements();
        Ok(Self {
            global: NoisePath::global(spec, times, seed, member)?,
            deviation: NoisePath::sample(m, times, seed, stream_id(member, channel::DEVIATION))?,
            limit: match noise.limit() {
                Some(d) => Some(NoisePath::sample(
                    d.drivers_per_step(),
                    times,
                    seed,
                    stream_id(member, channel::MARTINGALE),
                )?),
                None => None,
            },
        })
    }

    pub fn steps(&self) -> usize {
        self.global.steps()
    }
}

/// `(U_{j−1} − 2U_j + U_{j+1}) / h²`, periodic.
fn laplacian(u: &[f64], j: usize, inv_h2: f64) -> f64 {
    let m = u.len();
    (u[(j + m - 1) % m] - 2.0 * u[j] + u[(j + 1) % m]) * inv_h2
}

/// `v_{j−1} − 2v_j + v_{j+1}`, periodic.
fn second_difference(v: &[f64], j: usize) -> f64 {
    let m = v.len();
    v[(j + m - 1) % m] - 2.0 * v[j] + v[(j + 1) % m]
}

/// One γ-order family of the reduced model's increment.
#[derive(Debug, Clone, PartialEq)]
pub struct TermFamily {
    pub label: &'static str,
    pub order: u32,
    pub values: Vec<f64>,
}

/// A grid-value SDE stepper.
pub struct DiscreteModel {
    kind: ModelKind,
    grid: DomainGrid,
    alpha: f64,
    sigma: f64,
    gamma: f64,
    dt: f64,
    coeffs: AveragedCoeffs,
    centers: Vec<f64>,
    options: ModelOptions,
    implicit: Option<CscCholesky<f64>>,
}

impl std::fmt::Debug for DiscreteModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiscreteModel")
            .field("kind", &self.kind)
            .field("grid", &self.grid)
            .field("gamma", &self.gamma)
            .field("options", &self.options)
            .finish()
    }
}

impl DiscreteModel {
    /// `coeffs` must come from the same grid and `σ`; the coupling is read
    /// from `cfg` for the reduced model and is 1 otherwise.
    pub fn new(
        kind: ModelKind,
        grid: &DomainGrid,
        cfg: &SpdeConfig,
        coeffs: AveragedCoeffs,
        options: ModelOptions,
    ) -> Result<Self> {
        cfg.validate()?;
        if coeffs.elements() != grid.elements() || (coeffs.h - grid.spacing()).abs() > 1e-12 * grid.spacing() {
            return Err(Error::GridMismatch(
                "averaged coefficients belong to another grid".into(),
            ));
        }
        if kind != ModelKind::ConventionalFd && coeffs.sigma != cfg.sigma {
            return Err(Error::InvalidNoise(format!(
                "coefficients were computed for sigma = {}, model runs at {}",
                coeffs.sigma, cfg.sigma
            )));
        }
        let gamma = match kind {
            ModelKind::GammaReduced => {
                if !(cfg.gamma > 0.0 && cfg.gamma <= 1.0) {
                    return Err(Error::InvalidCoupling(cfg.gamma));
                }
                cfg.gamma
            }
            _ => 1.0,
        };
        if !(0.0..=1.0).contains(&options.theta) {
            return Err(Error::Config(vec![format!(
                "theta = {} must lie in [0, 1]",
                options.theta
            )]));
        }
        let h = grid.spacing();
        let implicit = if options.theta > 0.0 {
            let m = grid.elements();
            let r = options.theta * cfg.dt * gamma * gamma / (h * h);
            let mut coo = CooMatrix::new(m, m);
            for j in 0..m {
                coo.push(j, j, 1.0 + 2.0 * r);
                coo.push(j, (j + 1) % m, -r);
                coo.push(j, (j + m - 1) % m, -r);
            }
            Some(
                CscCholesky::factor(&CscMatrix::from(&coo))
                    .map_err(|e| Error::Eigen(format!("implicit stencil: {e:?}")))?,
            )
        } else {
            None
        };
        let slow = ElementModes::insulated(grid, 0);
        let centers = (0..grid.elements()).map(|j| slow.center_value(j, 0)).collect();
        Ok(Self {
            kind,
            grid: *grid,
            alpha: cfg.alpha,
            sigma: cfg.sigma,
            gamma,
            dt: cfg.dt,
            coeffs,
            centers,
            options,
            implicit,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn coeffs(&self) -> &AveragedCoeffs {
        &self.coeffs
    }

    fn deviation_scale(&self) -> f64 {
        match (self.options.deviation, self.options.deviation_alpha) {
            (false, _) => 0.0,
            (true, false) => THREE_ROOT_TWO,
            (true, true) => THREE_ROOT_TWO * self.alpha,
        }
    }

    /// Diffusion weight left explicit.
    fn explicit_weight(&self) -> f64 {
        1.0 - self.options.theta
    }

    /// Deterministic drift `dU/dt` at `u` (noise switched off).
    pub fn drift(&self, u: &[f64]) -> Vec<f64> {
        let inv_h2 = 1.0 / self.grid.spacing().powi(2);
        let alpha = self.alpha;
        let g2 = self.gamma * self.gamma;
        (0..u.len())
            .map(|j| {
                let v = u[j];
                let lap = laplacian(u, j, inv_h2);
                match self.kind {
                    ModelKind::ConventionalFd => lap + (alpha * v - alpha * v.powi(3)),
                    ModelKind::Holistic | ModelKind::HolisticIntroVariant => {
                        lap + (self.coeffs.hat_alpha[j] * v - alpha * v.powi(3))
                    }
                    ModelKind::GammaReduced => g2 * lap + (g2 * self.coeffs.hat_alpha[j] * v - alpha * v.powi(3)),
                }
            })
            .collect()
    }

    /// One Euler–Maruyama step (θ-implicit diffusion when configured).
    pub fn step(&self, u: &mut [f64], d: &StepDrivers, step: usize) -> Result<()> {
        if u.len() != self.grid.elements() {
            return Err(Error::GridMismatch(format!(
                "state has {} values, grid has {} elements",
                u.len(),
                self.grid.elements()
            )));
        }
        if (d.dt - self.dt).abs() > 1e-9 * self.dt {
            return Err(Error::InvalidNoise(format!(
                "driver dt = {} but model dt = {}",
                d.dt, self.dt
            )));
        }
        let mut next = match self.kind {
            ModelKind::ConventionalFd => self.conventional(u, d),
            ModelKind::Holistic => self.holistic(u, d, false),
            ModelKind::HolisticIntroVariant => self.holistic(u, d, true),
            ModelKind::GammaReduced => self.gamma_reduced(u, d),
        };
        if let Some(f) = &self.implicit {
            solve_in_place(f, &mut next);
        }
        if let Some(i) = next.iter().position(|v| !v.is_finite()) {
            return Err(Error::Unstable {
                step,
                detail: format!("{} grid value {i} = {}", self.kind.name(), next[i]),
            });
        }
        u.copy_from_slice(&next);
        Ok(())
    }

    fn conventional(&self, u: &[f64], d: &StepDrivers) -> Vec<f64> {
        let inv_h2 = self.explicit_weight() / self.grid.spacing().powi(2);
        let (dt, alpha, sigma) = (self.dt, self.alpha, self.sigma);
        (0..u.len())
            .map(|j| {
                let v = u[j];
                v + dt * (laplacian(u, j, inv_h2) + (alpha * v - alpha * v.powi(3))) + sigma * d.grid[j]
            })
            .collect()
    }

    fn holistic(&self, u: &[f64], d: &StepDrivers, intro: bool) -> Vec<f64> {
        let inv_h2 = self.explicit_weight() / self.grid.spacing().powi(2);
        let (dt, alpha, sigma) = (self.dt, self.alpha, self.sigma);
        let dev = self.deviation_scale();
        let c = &self.centers;
        // dB_{j,0} = √q^h β_{j,0} c_j.
        let db0: Vec<f64> = d.slow.iter().zip(c).map(|(s, c)| s * c).collect();
        (0..u.len())
            .map(|j| {
                let v = u[j];
                let hat = self.coeffs.hat_alpha[j];
                let check = self.coeffs.deviation[j].sqrt() * d.deviation[j] * c[j];
                // Literal form: the three stencil drivers share β_{j,0}, so the
                // stencil only sees variation of the neighbour centre values.
                let stencil = match (self.options.stencil, intro) {
                    (false, _) => 0.0,
                    (true, false) => d.slow[j] * second_difference(c, j),
                    (true, true) => second_difference(&db0, j),
                };
                v + dt * (laplacian(u, j, inv_h2) + (hat * v - alpha * v.powi(3)))
                    + sigma * db0[j]
                    + dev * v * check
                    + sigma / 4.0 * stencil
            })
            .collect()
    }

    fn gamma_reduced(&self, u: &[f64], d: &StepDrivers) -> Vec<f64> {
        let inv_h2 = self.explicit_weight() / self.grid.spacing().powi(2);
        let (dt, alpha, sigma) = (self.dt, self.alpha, self.sigma);
        let g = self.gamma;
        let g2 = g * g;
        let g3 = g2 * g;
        let dev = self.deviation_scale();
        let c = &self.centers;
        let stencil_on = if self.options.stencil { 1.0 } else { 0.0 };
        (0..u.len())
            .map(|j| {
                let v = u[j];
                let hat = self.coeffs.hat_alpha[j];
                let q = self.coeffs.deviation[j].sqrt();
                let db0 = d.slow[j] * c[j];
                let check = q * d.deviation[j] * c[j];
                let stencil = stencil_on * d.slow[j] * second_difference(c, j);
                let mut next = v
                    + dt * (g2 * laplacian(u, j, inv_h2) + (g2 * hat * v - alpha * v.powi(3)))
                    + sigma * g * db0
                    + dev * g2 * v * check
                    + sigma * g2 / 4.0 * stencil;
                if !self.options.truncate {
                    let hat_db0 = d.limit[j] * c[j];
                    let hat_stencil = stencil_on * d.limit[j] * second_difference(c, j);
                    let check_stencil = stencil_on * q * d.deviation[j] * second_difference(c, j);
                    next += sigma * g2 * hat_db0 + sigma * g3 / 4.0 * hat_stencil + dev / 4.0 * g3 * v * check_stencil;
                }
                next
            })
            .collect()
    }

    /// The reduced model's increment split by γ-order (explicit diffusion).
    pub fn gamma_terms(&self, u: &[f64], d: &StepDrivers) -> Vec<TermFamily> {
        let inv_h2 = 1.0 / self.grid.spacing().powi(2);
        let (g, dt, sigma) = (self.gamma, self.dt, self.sigma);
        let c = &self.centers;
        let dev = self.deviation_scale();
        let m = u.len();
        let family = |label, order, f: &dyn Fn(usize) -> f64| TermFamily {
            label,
            order,
            values: (0..m).map(f).collect(),
        };
        vec![
            family("cubic", 0, &|j| -dt * self.alpha * u[j].powi(3)),
            family("slow-noise", 1, &|j| sigma * g * d.slow[j] * c[j]),
            family("diffusion", 2, &|j| dt * g * g * laplacian(u, j, inv_h2)),
            family("linear", 2, &|j| dt * g * g * self.coeffs.hat_alpha[j] * u[j]),
            family("limit-noise", 2, &|j| sigma * g * g * d.limit[j] * c[j]),
            family("deviation", 2, &|j| {
                dev * g * g * u[j] * self.coeffs.deviation[j].sqrt() * d.deviation[j] * c[j]
            }),
            family("stencil", 2, &|j| {
                sigma * g * g / 4.0 * d.slow[j] * second_difference(c, j)
            }),
            family("limit-stencil", 3, &|j| {
                sigma * g.powi(3) / 4.0 * d.limit[j] * second_difference(c, j)
            }),
            family("deviation-stencil", 3, &|j| {
                dev / 4.0
                    * g.powi(3)
                    * u[j]
                    * self.coeffs.deviation[j].sqrt()
                    * d.deviation[j]
                    * second_difference(c, j)
            }),
        ]
    }

    /// Full run from grid values `u0`, keeping every `stride`-th state.
    pub fn run(&self, u0: &[f64], noise: &ModelNoise, paths: &MemberPaths, stride: usize) -> Result<ModelTrajectory> {
        let mut u = u0.to_vec();
        let steps = paths.steps();
        let stride = stride.max(1);
        let times = paths.global.times();
        let mut traj = ModelTrajectory::new(paths.global.seed(), self.kind.name());
        traj.push(times[0], u.clone())?;
        for s in 0..steps {
            let d = noise.drivers(paths, s)?;
            self.step(&mut u, &d, s)?;
            if (s + 1) % stride == 0 || s + 1 == steps {
                traj.push(times[s + 1], u.clone())?;
            }
        }
        Ok(traj)
    }
}

/// The averaged slow equation on localized slow coordinates `a_j`:
/// `da = [−A a + αγ² a + α⟨F̄(U₀), φ⟩] dt + σγ √q^h dβ + αγ² 3√(2Q) U dβ̌`,
/// with `U₀ = Σ a_j φ_j`, `F̄(u) = −(u³ + 3γ² m u)` and grid values
/// `U_i = Σ_j φ_j(X_i) a_j`.
pub struct ReducedSlowModel {
    grid: DomainGrid,
    alpha: f64,
    sigma: f64,
    gamma: f64,
    slow: ElementModes,
    /// `A_ij = ⟨∂φ_i, ∂φ_j⟩`.
    stiffness: DMatrix<f64>,
    /// `C_ij = φ_j(X_i)`.
    centers: DMatrix<f64>,
    centers_inv: DMatrix<f64>,
    second_moment: ElementField,
    deviation: Vec<f64>,
}

impl std::fmt::Debug for ReducedSlowModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReducedSlowModel")
            .field("grid", &self.grid)
            .field("gamma", &self.gamma)
            .finish()
    }
}

impl ReducedSlowModel {
    pub fn new(
        op: &CoupledOperator,
        eig: &EigenSystem,
        stats: &FastModeStats,
        coeffs: &AveragedCoeffs,
        alpha: f64,
    ) -> Result<Self> {
        let grid = *op.grid();
        grid.ensure_same(eig.grid())?;
        grid.ensure_same(stats.grid())?;
        if (op.gamma() - eig.gamma()).abs() > 0.0 {
            return Err(Error::InvalidCoupling(eig.gamma()));
        }
        let slow = ElementModes::localized(eig, 0)?;
        let m = grid.elements();
        let dofs: Vec<Vec<f64>> = (0..m).map(|j| op.restrict(slow.field(j, 0))).collect::<Result<_>>()?;
        let k_dofs: Vec<Vec<f64>> = dofs.iter().map(|x| op.stiffness_apply(x)).collect();
        let stiffness = DMatrix::from_fn(m, m, |i, j| dot(&dofs[i], &k_dofs[j]));
        let centers = DMatrix::from_fn(m, m, |i, j| slow.field(j, 0).center_value(i));
        let centers_inv = centers
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::SlowCluster("slow modes do not determine the grid values".into()))?;
        Ok(Self {
            grid,
            alpha,
            sigma: stats.sigma(),
            gamma: eig.gamma(),
            slow,
            stiffness,
            centers,
            centers_inv,
            second_moment: stats.second_moment().clone(),
            deviation: coeffs.deviation.clone(),
        })
    }

    pub fn to_grid(&self, a: &[f64]) -> Vec<f64> {
        (&self.centers * nalgebra::DVector::from_column_slice(a))
            .as_slice()
            .to_vec()
    }

    pub fn from_grid(&self, u: &[f64]) -> Vec<f64> {
        (&self.centers_inv * nalgebra::DVector::from_column_slice(u))
            .as_slice()
            .to_vec()
    }

    /// `U₀ = Σ a_j φ_j`.
    pub fn field(&self, a: &[f64]) -> Result<ElementField> {
        let mut f = ElementField::zeros(&self.grid);
        for (j, aj) in a.iter().enumerate() {
            f.axpy(*aj, self.slow.field(j, 0))?;
        }
        Ok(f)
    }

    /// `da/dt` without noise.
    pub fn drift(&self, a: &[f64]) -> Result<Vec<f64>> {
        let g2 = self.gamma * self.gamma;
        let u0 = self.field(a)?;
        let mut fbar = u0.map(|v| -v.powi(3));
        fbar.axpy(-3.0 * g2, &u0.mul(&self.second_moment)?)?;
        let linear = &self.stiffness * nalgebra::DVector::from_column_slice(a);
        (0..a.len())
            .map(|j| {
                let proj = self.grid.inner_product(&fbar, self.slow.field(j, 0))?;
                Ok(-linear[j] + self.alpha * g2 * a[j] + self.alpha * proj)
            })
            .collect()
    }

    /// Grid-value drift `C·drift(C⁻¹U)`.
    pub fn grid_drift(&self, u: &[f64]) -> Result<Vec<f64>> {
        Ok(self.to_grid(&self.drift(&self.from_grid(u))?))
    }

    pub fn step(&self, a: &mut [f64], d: &StepDrivers, step: usize) -> Result<()> {
        let drift = self.drift(a)?;
        let u = self.to_grid(a);
        let g = self.gamma;
        for j in 0..a.len() {
            a[j] += d.dt * drift[j]
                + self.sigma * g * d.slow[j]
                + self.alpha * g * g * THREE_ROOT_TWO * self.deviation[j].sqrt() * u[j] * d.deviation[j];
        }
        if let Some(i) = a.iter().position(|v| !v.is_finite()) {
            return Err(Error::Unstable {
                step,
                detail: format!("slow amplitude {i} = {}", a[i]),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::averaging::MomentReading;
    use crate::dynamics::{InitialProfile, Scheme};
    use crate::noise::uniform_times;
    use std::f64::consts::PI;

    fn cfg(alpha: f64, sigma: f64, gamma: f64, dt: f64) -> SpdeConfig {
        SpdeConfig {
            alpha,
            sigma,
            gamma,
            dt,
            horizon: 1.0,
            scheme: Scheme::SemiImplicit,
            initial: InitialProfile::default(),
        }
    }

    fn grid() -> DomainGrid {
        DomainGrid::new(2.0 * PI, 8, 16).unwrap()
    }

    fn noisy_coeffs(g: &DomainGrid, sigma: f64) -> (QWienerSpec, AveragedCoeffs) {
        let spec = QWienerSpec::power_law(g.length(), 16, 3.0).unwrap();
        let modes = ElementModes::insulated(g, 7);
        let proj = ElementNoiseProjection::new(&spec, &modes, DriverNormalization::Projection).unwrap();
        let stats = FastModeStats::new(&spec, &proj, &modes, sigma).unwrap();
        (spec, AveragedCoeffs::compute(&stats, 1.0, MomentReading::Projection))
    }

    #[test]
    fn fd_unit_state_is_stationary() {
        let g = grid();
        let m = DiscreteModel::new(
            ModelKind::ConventionalFd,
            &g,
            &cfg(1.0, 0.0, 1.0, 1e-3),
            AveragedCoeffs::quiet(1.0, &g),
            ModelOptions::default(),
        )
        .unwrap();
        let mut u = vec![1.0; 8];
        m.step(&mut u, &StepDrivers::zeros(8, 1e-3), 0).unwrap();
        assert!(u.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn fd_sine_decays_at_discrete_symbol_rate() {
        let g = grid();
        let dt = 1e-6;
        let m = DiscreteModel::new(
            ModelKind::ConventionalFd,
            &g,
            &cfg(0.0, 0.0, 1.0, dt),
            AveragedCoeffs::quiet(0.0, &g),
            ModelOptions::default(),
        )
        .unwrap();
        let xs = g.grid_points();
        let mut u: Vec<f64> = xs.iter().map(|x| x.sin()).collect();
        let before = u[1];
        m.step(&mut u, &StepDrivers::zeros(8, dt), 0).unwrap();
        let h = g.spacing();
        let symbol = 4.0 * (h / 2.0).sin().powi(2) / (h * h);
        assert!(((before - u[1]) / (dt * before) - symbol).abs() < 1e-6);
    }

    #[test]
    fn fd_step_matches_hand_arithmetic() {
        // M = 4, L = 4 (h = 1), α = 0, σ = 1.
        let g = DomainGrid::new(4.0, 4, 8).unwrap();
        let m = DiscreteModel::new(
            ModelKind::ConventionalFd,
            &g,
            &cfg(0.0, 1.0, 1.0, 0.1),
            AveragedCoeffs::quiet(0.0, &g),
            ModelOptions::default(),
        )
        .unwrap();
        let mut u = vec![1.0, 0.0, -1.0, 2.0];
        let mut d = StepDrivers::zeros(4, 0.1);
        d.grid = vec![0.1, -0.2, 0.3, 0.0];
        m.step(&mut u, &d, 0).unwrap();
        // U_0: 1 + 0.1·(2 − 2 + 0) + 0.1 = 1.1, U_1: 0 + 0.1·(1 − 0 − 1) − 0.2 = −0.2,
        // U_2: −1 + 0.1·(0 + 2 + 2) + 0.3 = −0.3, U_3: 2 + 0.1·(−1 − 4 + 1) = 1.6.
        let want = [1.1, -0.2, -0.3, 1.6];
        for (a, b) in u.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{u:?}");
        }
    }

    #[test]
    fn quiet_holistic_equals_fd_bitwise() {
        let g = grid();
        let (spec, coeffs) = noisy_coeffs(&g, 0.0);
        let c = cfg(1.0, 0.0, 1.0, 1e-3);
        let fd = DiscreteModel::new(
            ModelKind::ConventionalFd,
            &g,
            &c,
            coeffs.clone(),
            ModelOptions::default(),
        )
        .unwrap();
        let hol = DiscreteModel::new(ModelKind::Holistic, &g, &c, coeffs, ModelOptions::default()).unwrap();
        let noise = ModelNoise::new(&spec, &g, DriverNormalization::Projection, None).unwrap();
        let paths = MemberPaths::sample(&spec, &noise, &uniform_times(1e-3, 200), 4, 0).unwrap();
        let u0 = InitialProfile::default().on_grid(&g);
        let a = fd.run(&u0, &noise, &paths, 1).unwrap();
        let b = hol.run(&u0, &noise, &paths, 1).unwrap();
        assert_eq!(a.states(), b.states());
    }

    #[test]
    fn quiet_holistic_fixed_point() {
        let g = grid();
        let mut coeffs = AveragedCoeffs::quiet(2.0, &g);
        coeffs.hat_alpha = vec![1.5; 8];
        let m = DiscreteModel::new(
            ModelKind::Holistic,
            &g,
            &cfg(2.0, 0.0, 1.0, 1e-3),
            coeffs,
            ModelOptions::default(),
        )
        .unwrap();
        let root = (1.5f64 / 2.0).sqrt();
        let mut u = vec![root; 8];
        m.step(&mut u, &StepDrivers::zeros(8, 1e-3), 0).unwrap();
        assert!(u.iter().all(|&v| (v - root).abs() < 1e-15));
    }

    #[test]
    fn uniform_drivers_get_no_stencil_correction() {
        let g = grid();
        let (_, coeffs) = noisy_coeffs(&g, 0.5);
        let c = cfg(1.0, 0.5, 1.0, 1e-3);
        let with = DiscreteModel::new(
            ModelKind::HolisticIntroVariant,
            &g,
            &c,
            coeffs.clone(),
            ModelOptions::default(),
        )
        .unwrap();
        let without = DiscreteModel::new(
            ModelKind::HolisticIntroVariant,
            &g,
            &c,
            coeffs,
            ModelOptions {
                stencil: false,
                ..ModelOptions::default()
            },
        )
        .unwrap();
        let mut d = StepDrivers::zeros(8, 1e-3);
        d.slow = vec![0.03; 8];
        let (mut a, mut b) = (vec![0.2; 8], vec![0.2; 8]);
        with.step(&mut a, &d, 0).unwrap();
        without.step(&mut b, &d, 0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
        d.slow[3] = -0.05;
        with.step(&mut a, &d, 0).unwrap();
        without.step(&mut b, &d, 0).unwrap();
        assert!((a[2] - b[2]).abs() > 1e-4);
    }

    #[test]
    fn truncated_reduced_model_at_full_coupling_is_holistic() {
        let g = grid();
        let (spec, coeffs) = noisy_coeffs(&g, 0.5);
        let c = cfg(1.0, 0.5, 1.0, 1e-3);
        let opts = ModelOptions {
            truncate: true,
            ..ModelOptions::default()
        };
        let red = DiscreteModel::new(ModelKind::GammaReduced, &g, &c, coeffs.clone(), opts).unwrap();
        let hol = DiscreteModel::new(ModelKind::Holistic, &g, &c, coeffs, opts).unwrap();
        let noise = ModelNoise::new(&spec, &g, DriverNormalization::Projection, None).unwrap();
        let paths = MemberPaths::sample(&spec, &noise, &uniform_times(1e-3, 300), 8, 2).unwrap();
        let u0 = InitialProfile::default().on_grid(&g);
        assert_eq!(
            red.run(&u0, &noise, &paths, 1).unwrap().states(),
            hol.run(&u0, &noise, &paths, 1).unwrap().states()
        );
    }

    #[test]
    fn weak_coupling_leaves_only_the_cubic() {
        let g = grid();
        let (_, coeffs) = noisy_coeffs(&g, 0.5);
        let mut d = StepDrivers::zeros(8, 1e-3);
        d.slow = (0..8).map(|j| 0.01 * j as f64).collect();
        d.deviation = vec![0.02; 8];
        d.limit = vec![-0.01; 8];
        let u: Vec<f64> = (0..8).map(|j| (j as f64).cos()).collect();
        let gaps: Vec<f64> = [1e-2, 1e-3]
            .iter()
            .map(|&gamma| {
                let m = DiscreteModel::new(
                    ModelKind::GammaReduced,
                    &g,
                    &cfg(1.0, 0.5, gamma, 1e-3),
                    coeffs.clone(),
                    ModelOptions::default(),
                )
                .unwrap();
                let mut next = u.clone();
                m.step(&mut next, &d, 0).unwrap();
                next.iter()
                    .zip(&u)
                    .map(|(n, v)| (n - (v - 1e-3 * v.powi(3))).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        assert!(gaps[1] < gaps[0] / 5.0, "{gaps:?}");
    }

    #[test]
    fn gamma_term_families_scale_with_their_order() {
        let g = grid();
        let (_, coeffs) = noisy_coeffs(&g, 0.5);
        let mut d = StepDrivers::zeros(8, 1e-3);
        d.slow = (0..8).map(|j| 0.01 * (j as f64 + 1.0)).collect();
        d.deviation = vec![0.02; 8];
        d.limit = (0..8).map(|j| 0.01 * (j as f64).sin()).collect();
        let u: Vec<f64> = (0..8).map(|j| 1.0 + (j as f64).cos()).collect();
        let at = |gamma: f64| {
            DiscreteModel::new(
                ModelKind::GammaReduced,
                &g,
                &cfg(1.0, 0.5, gamma, 1e-3),
                coeffs.clone(),
                ModelOptions::default(),
            )
            .unwrap()
            .gamma_terms(&u, &d)
        };
        let (a, b) = (at(0.05), at(0.1));
        for (x, y) in a.iter().zip(&b) {
            let nx = x.values.iter().map(|v| v.abs()).fold(0.0, f64::max);
            let ny = y.values.iter().map(|v| v.abs()).fold(0.0, f64::max);
            if nx == 0.0 {
                // Uniform centre values make the stencil families vanish.
                assert_eq!(ny, 0.0, "{}", x.label);
                continue;
            }
            let slope = (ny / nx).log2();
            assert!((slope - x.order as f64).abs() < 1e-9, "{}: {slope}", x.label);
        }
    }

    #[test]
    fn reduced_slow_model_quiet_zero_stays_zero() {
        let g = DomainGrid::new(2.0 * PI, 8, 16).unwrap();
        let (_spec, coeffs) = noisy_coeffs(&g, 0.0);
        let spec = QWienerSpec::power_law(g.length(), 16, 3.0).unwrap();
        let modes = ElementModes::insulated(&g, 7);
        let proj = ElementNoiseProjection::new(&spec, &modes, DriverNormalization::Projection).unwrap();
        let stats = FastModeStats::new(&spec, &proj, &modes, 0.0).unwrap();
        let op = CoupledOperator::assemble(&g, 0.1).unwrap();
        let eig = EigenSystem::solve(&op, 16).unwrap();
        let red = ReducedSlowModel::new(&op, &eig, &stats, &coeffs, 1.0).unwrap();
        let mut a = vec![0.0; 8];
        for s in 0..10 {
            red.step(&mut a, &StepDrivers::zeros(8, 1e-3), s).unwrap();
        }
        assert!(a.iter().all(|&v| v == 0.0));
        let u = vec![0.3, -0.1, 0.2, 0.0, 0.5, -0.4, 0.1, 0.2];
        let back = red.to_grid(&red.from_grid(&u));
        assert!(back.iter().zip(&u).all(|(x, y)| (x - y).abs() < 1e-12));
    }
}
