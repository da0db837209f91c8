//! Time stepping of the continuum systems: the periodic reference SPDE on a
//! fine grid and the coupled overlapping-element system.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DomainGrid, ElementField};
use crate::noise::{FieldSampler, NoisePath, QWienerSpec};
use crate::spectral::{csc_add_scaled, solve_in_place, CoupledOperator, ElementModes};

/// Time discretization of the linear diffusion part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Diffusion implicit, reaction and noise explicit.
    #[default]
    SemiImplicit,
    /// Everything explicit; guarded by `dt·λ_max ≤ 2`.
    Explicit,
}

/// One term `cos·cos(2πnx/L) + sin·sin(2πnx/L)` of an initial profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub wavenumber: u32,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// Smooth deterministic initial data, sampled identically onto every
/// representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialProfile {
    Constant { value: f64 },
    Trig { terms: Vec<TrigTerm> },
}

impl Default for InitialProfile {
    fn default() -> Self {
        Self::Trig {
            terms: vec![
                TrigTerm {
                    wavenumber: 1,
                    cos: 0.0,
                    sin: 0.5,
                },
                TrigTerm {
                    wavenumber: 2,
                    cos: 0.2,
                    sin: 0.0,
                },
            ],
        }
    }
}

impl InitialProfile {
    pub fn eval(&self, length: f64, x: f64) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Trig { terms } => terms
                .iter()
                .map(|t| {
                    let k = 2.0 * PI * t.wavenumber as f64 / length;
                    t.cos * (k * x).cos() + t.sin * (k * x).sin()
                })
                .sum(),
        }
    }

    pub fn on_points(&self, length: f64, points: usize) -> Vec<f64> {
        let dx = length / points as f64;
        (0..points).map(|p| self.eval(length, p as f64 * dx)).collect()
    }

    pub fn on_grid(&self, grid: &DomainGrid) -> Vec<f64> {
        grid.grid_points()
            .iter()
            .map(|&x| self.eval(grid.length(), x))
            .collect()
    }

    pub fn on_elements(&self, grid: &DomainGrid) -> ElementField {
        let l = grid.length();
        ElementField::from_global(grid, |x| self.eval(l, x))
    }
}

/// Physical and time-stepping parameters shared by every solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdeConfig {
    pub alpha: f64,
    pub sigma: f64,
    /// Interelement coupling; ignored by the reference solver.
    #[serde(default = "full_coupling")]
    pub gamma: f64,
    pub dt: f64,
    pub horizon: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub initial: InitialProfile,
}

fn full_coupling() -> f64 {
    1.0
}

impl SpdeConfig {
    /// Every violated constraint, or `Ok`.
    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub(crate) fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !self.alpha.is_finite() {
            p.push(format!("alpha = {} must be finite", self.alpha));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            p.push(format!("sigma = {} must be finite and non-negative", self.sigma));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            p.push(format!("gamma = {} must lie in [0, 1]", self.gamma));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            p.push(format!("dt = {} must be positive", self.dt));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            p.push(format!("horizon = {} must be positive", self.horizon));
        } else if self.dt > 0.0 && self.dt > self.horizon {
            p.push(format!("dt = {} exceeds the horizon {}", self.dt, self.horizon));
        }
        p
    }

    /// Whole steps in the horizon.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round().max(1.0) as usize
    }

    pub fn times(&self) -> Vec<f64> {
        crate::noise::uniform_times(self.dt, self.steps())
    }
}

/// Sampled states of one solver or model run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTrajectory {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    seed: u64,
    source: String,
}

impl ModelTrajectory {
    pub fn new(seed: u64, source: impl Into<String>) -> Self {
        Self {
            times: Vec::new(),
            states: Vec::new(),
            seed,
            source: source.into(),
        }
    }

    /// Appends a snapshot; times must increase strictly.
    pub fn push(&mut self, t: f64, state: Vec<f64>) -> Result<()> {
        if let Some(&last) = self.times.last() {
            if !(t > last) {
                return Err(Error::NonMonotoneTimes(self.times.len()));
            }
        }
        self.times.push(t);
        self.states.push(state);
        Ok(())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn last(&self) -> Option<&[f64]> {
        self.states.last().map(|s| s.as_slice())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV with header `t,U_1,…,U_n`.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        let width = self.states.first().map_or(0, |s| s.len());
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=width).map(|j| format!("U_{j}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (t, s) in self.times.iter().zip(&self.states) {
            let row: Vec<String> = std::iter::once(t.to_string())
                .chain(s.iter().map(|v| v.to_string()))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Little-endian binary: magic, `u64` rows and width, then per row `t`
    /// followed by the state.
    pub fn write_binary(&self, mut out: impl Write) -> Result<()> {
        let width = self.states.first().map_or(0, |s| s.len());
        out.write_all(b"OSDTRAJ1")?;
        out.write_all(&(self.times.len() as u64).to_le_bytes())?;
        out.write_all(&(width as u64).to_le_bytes())?;
        for (t, s) in self.times.iter().zip(&self.states) {
            out.write_all(&t.to_le_bytes())?;
            for v in s {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

fn check_finite(values: &[f64], step: usize) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::Unstable {
            step,
            detail: format!("value {} at index {i}", values[i]),
        }),
    }
}

fn check_step_size(path: &NoisePath, step: usize, dt: f64) -> Result<()> {
    let got = path.dt(step)?;
    if (got - dt).abs() > 1e-9 * dt {
        return Err(Error::InvalidNoise(format!(
            "path step {step} has dt = {got}, solver was built for {dt}"
        )));
    }
    Ok(())
}

fn sample_times(steps: usize, stride: usize) -> impl Fn(usize) -> bool {
    let stride = stride.max(1);
    move |s| s % stride == 0 || s == steps
}

/// Periodic reference solver for `u_t = u_xx + α(u − u³) + σẆ` on a uniform
/// fine grid `x_p = p·L/P`.
pub struct ReferenceSolver {
    length: f64,
    points: usize,
    cfg: SpdeConfig,
    sampler: FieldSampler,
    factor: Option<CscCholesky<f64>>,
}

impl std::fmt::Debug for ReferenceSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReferenceSolver")
            .field("length", &self.length)
            .field("points", &self.points)
            .field("cfg", &self.cfg)
            .finish()
    }
}

impl ReferenceSolver {
    pub fn new(spec: &QWienerSpec, points: usize, cfg: &SpdeConfig) -> Result<Self> {
        cfg.validate()?;
        if points < 8 {
            return Err(Error::InvalidGrid(format!(
                "reference grid needs at least 8 points, got {points}"
            )));
        }
        let length = spec.length();
        let dx = length / points as f64;
        let r = cfg.dt / (dx * dx);
        let factor = match cfg.scheme {
            Scheme::SemiImplicit => {
                let mut coo = CooMatrix::new(points, points);
                for p in 0..points {
                    coo.push(p, p, 1.0 + 2.0 * r);
                    coo.push(p, (p + 1) % points, -r);
                    coo.push(p, (p + points - 1) % points, -r);
                }
                Some(
                    CscCholesky::factor(&CscMatrix::from(&coo))
                        .map_err(|e| Error::Eigen(format!("implicit diffusion matrix: {e:?}")))?,
                )
            }
            Scheme::Explicit => {
                if 4.0 * r > 2.0 {
                    return Err(Error::Unstable {
                        step: 0,
                        detail: format!("explicit step violates dt·λ_max ≤ 2 (dt·λ_max = {})", 4.0 * r),
                    });
                }
                None
            }
        };
        let xs: Vec<f64> = (0..points).map(|p| p as f64 * dx).collect();
        Ok(Self {
            length,
            points,
            cfg: cfg.clone(),
            sampler: FieldSampler::new(spec, &xs),
            factor,
        })
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.points as f64
    }

    pub fn initial(&self) -> Vec<f64> {
        self.cfg.initial.on_points(self.length, self.points)
    }

    /// One step driven by the global path's increments at `step`.
    pub fn step(&self, u: &mut [f64], path: &NoisePath, step: usize) -> Result<()> {
        check_step_size(path, step, self.cfg.dt)?;
        let dt = self.cfg.dt;
        let alpha = self.cfg.alpha;
        let sigma = self.cfg.sigma;
        let noise = self.sampler.increment(path.step_increments(step)?);
        let n = self.points;
        let inv_dx2 = 1.0 / (self.spacing() * self.spacing());
        let mut next: Vec<f64> = (0..n)
            .map(|p| {
                let v = u[p];
                let react = alpha * (v - v.powi(3));
                let explicit_diffusion = match self.factor {
                    Some(_) => 0.0,
                    None => (u[(p + n - 1) % n] - 2.0 * v + u[(p + 1) % n]) * inv_dx2,
                };
                v + dt * (explicit_diffusion + react) + sigma * noise[p]
            })
            .collect();
        if let Some(f) = &self.factor {
            solve_in_place(f, &mut next);
        }
        check_finite(&next, step)?;
        u.copy_from_slice(&next);
        Ok(())
    }

    /// Full run from the configured initial profile, keeping every `stride`-th
    /// state and the last one.
    pub fn run(&self, path: &NoisePath, stride: usize) -> Result<ModelTrajectory> {
        let mut u = self.initial();
        let steps = path.steps();
        let keep = sample_times(steps, stride);
        let mut traj = ModelTrajectory::new(path.seed(), "reference");
        traj.push(path.times()[0], u.clone())?;
        for s in 0..steps {
            self.step(&mut u, path, s)?;
            if keep(s + 1) {
                traj.push(path.times()[s + 1], u.clone())?;
            }
        }
        Ok(traj)
    }

    /// Values at the points of an element grid's right-half trace; needs the
    /// fine grid to refine the trace grid.
    pub fn on_trace(&self, u: &[f64], grid: &DomainGrid) -> Result<Vec<f64>> {
        let trace = grid.elements() * grid.subgrid();
        if self.points % trace != 0 {
            return Err(Error::GridMismatch(format!(
                "{} reference points do not refine a {trace}-point trace",
                self.points
            )));
        }
        let stride = self.points / trace;
        let shift = grid.subgrid();
        Ok((0..trace).map(|k| u[((k + shift) % trace) * stride]).collect())
    }

    /// Values at the grid points `X_j`.
    pub fn on_grid(&self, u: &[f64], grid: &DomainGrid) -> Result<Vec<f64>> {
        let m = grid.elements();
        if self.points % m != 0 {
            return Err(Error::GridMismatch(format!(
                "{} reference points do not refine {m} grid points",
                self.points
            )));
        }
        let stride = self.points / m;
        Ok((0..m).map(|j| u[((j + 1) % m) * stride]).collect())
    }
}

/// Semi-implicit stepper for the coupled element system
/// `u_t = L_γ u + α(γ²u − u³) + σγ Π ΔW`, in constrained unknowns.
pub struct CoupledSolver {
    op: CoupledOperator,
    cfg: SpdeConfig,
    /// Column `k`: load vector of `√q_k e_k`.
    noise_load: DMatrix<f64>,
    factor: Option<CscCholesky<f64>>,
    max_rate: f64,
}

impl std::fmt::Debug for CoupledSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoupledSolver")
            .field("op", &self.op)
            .field("cfg", &self.cfg)
            .field("max_rate", &self.max_rate)
            .finish()
    }
}

impl CoupledSolver {
    pub fn new(grid: &DomainGrid, spec: &QWienerSpec, cfg: &SpdeConfig) -> Result<Self> {
        cfg.validate()?;
        spec.ensure_grid(grid)?;
        let op = CoupledOperator::assemble(grid, cfg.gamma)?;
        let sq = spec.sqrt_coeffs();
        let mut noise_load = DMatrix::zeros(op.dofs(), spec.modes());
        for (k, s) in sq.iter().enumerate() {
            let field = ElementField::from_global(grid, |x| s * spec.basis(k, x));
            let b = op.load(&field)?;
            noise_load.column_mut(k).copy_from_slice(&b);
        }
        let max_rate = max_rate(&op);
        let factor = match cfg.scheme {
            Scheme::SemiImplicit => {
                let system = csc_add_scaled(op.mass(), cfg.dt, op.stiffness());
                Some(
                    CscCholesky::factor(&system)
                        .map_err(|e| Error::Eigen(format!("implicit element system: {e:?}")))?,
                )
            }
            Scheme::Explicit => {
                if cfg.dt * max_rate > 2.0 {
                    return Err(Error::Unstable {
                        step: 0,
                        detail: format!("explicit step violates dt·λ_max ≤ 2 (dt·λ_max = {})", cfg.dt * max_rate),
                    });
                }
                None
            }
        };
        Ok(Self {
            op,
            cfg: cfg.clone(),
            noise_load,
            factor,
            max_rate,
        })
    }

    pub fn operator(&self) -> &CoupledOperator {
        &self.op
    }

    /// Estimate of the largest rate of `−L_γ`.
    pub fn max_rate(&self) -> f64 {
        self.max_rate
    }

    /// Constrained unknowns of the configured initial profile.
    pub fn initial(&self) -> Result<Vec<f64>> {
        self.op.project(&self.cfg.initial.on_elements(self.op.grid()))
    }

    pub fn field(&self, x: &[f64]) -> ElementField {
        self.op.prolong(x)
    }

    /// Load vector of `σγ Π ΔW` for one step of the global path.
    pub fn noise_load(&self, path: &NoisePath, step: usize) -> Result<Vec<f64>> {
        let inc = path.step_increments(step)?;
        if inc.len() != self.noise_load.ncols() {
            return Err(Error::InvalidNoise(format!(
                "path has {} modes, solver expects {}",
                inc.len(),
                self.noise_load.ncols()
            )));
        }
        let scale = self.cfg.sigma * self.cfg.gamma;
        let mut b = vec![0.0; self.op.dofs()];
        for (k, d) in inc.iter().enumerate() {
            let c = scale * d;
            if c != 0.0 {
                for (bi, g) in b.iter_mut().zip(self.noise_load.column(k).iter()) {
                    *bi += c * g;
                }
            }
        }
        Ok(b)
    }

    pub fn step(&self, x: &mut [f64], path: &NoisePath, step: usize) -> Result<()> {
        check_step_size(path, step, self.cfg.dt)?;
        let dt = self.cfg.dt;
        let (alpha, g2) = (self.cfg.alpha, self.cfg.gamma * self.cfg.gamma);
        let reaction = self.op.prolong(x).map(|u| alpha * (g2 * u - u.powi(3)));
        let load = self.op.load(&reaction)?;
        let noise = self.noise_load(path, step)?;
        match &self.factor {
            Some(f) => {
                let mut rhs = self.op.mass_apply(x);
                for ((r, l), n) in rhs.iter_mut().zip(&load).zip(&noise) {
                    *r += dt * l + n;
                }
                solve_in_place(f, &mut rhs);
                x.copy_from_slice(&rhs);
            }
            None => {
                let mut rhs = self.op.stiffness_apply(x);
                for ((r, l), n) in rhs.iter_mut().zip(&load).zip(&noise) {
                    *r = dt * (l - *r) + n;
                }
                self.op.solve_mass(&mut rhs);
                x.iter_mut().zip(&rhs).for_each(|(v, d)| *v += d);
            }
        }
        check_finite(x, step)
    }

    /// Full run from the configured initial profile; states are the
    /// right-half traces of the element fields.
    pub fn run(&self, path: &NoisePath, stride: usize) -> Result<ModelTrajectory> {
        let mut x = self.initial()?;
        let steps = path.steps();
        let keep = sample_times(steps, stride);
        let mut traj = ModelTrajectory::new(path.seed(), format!("coupled(gamma={})", self.cfg.gamma));
        traj.push(path.times()[0], self.field(&x).right_half_trace())?;
        for s in 0..steps {
            self.step(&mut x, path, s)?;
            if keep(s + 1) {
                traj.push(path.times()[s + 1], self.field(&x).right_half_trace())?;
            }
        }
        Ok(traj)
    }
}

/// Power-iteration estimate of the top rate of `M⁻¹K`, padded by 5%.
fn max_rate(op: &CoupledOperator) -> f64 {
    let n = op.dofs();
    let mut x: Vec<f64> = (0..n)
        .map(|i| if i % 2 == 0 { 1.0 } else { -0.7 } + 1e-3 * i as f64)
        .collect();
    let mut rate = 0.0;
    for _ in 0..300 {
        let mut y = op.apply_dofs(&x);
        y.iter_mut().for_each(|v| *v = -*v);
        let norm = op.mass_apply(&y).iter().zip(&y).map(|(a, b)| a * b).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        y.iter_mut().for_each(|v| *v /= norm);
        rate = op.energy(&y);
        x = y;
    }
    1.05 * rate
}

/// Slow amplitudes and fast remainder of an element field.
#[derive(Debug, Clone)]
pub struct SlowFastSplit {
    pub amplitudes: Vec<f64>,
    pub fast: ElementField,
}

/// `a_j = ⟨u, φ_j⟩` against the orthonormal slow family (level 0 of `slow`),
/// and `u − Σ a_j φ_j`.
pub fn slow_fast_decompose(state: &ElementField, slow: &ElementModes) -> Result<SlowFastSplit> {
    let g = state.grid();
    g.ensure_same(slow.grid())?;
    let mut fast = state.clone();
    let mut amplitudes = Vec::with_capacity(g.elements());
    for j in 0..g.elements() {
        let phi = slow.field(j, 0);
        let a = g.inner_product(state, phi)?;
        fast.axpy(-a, phi)?;
        amplitudes.push(a);
    }
    Ok(SlowFastSplit { amplitudes, fast })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{uniform_times, NoisePath};
    use crate::spectral::EigenSystem;

    fn quiet(alpha: f64, gamma: f64, dt: f64, initial: InitialProfile) -> SpdeConfig {
        SpdeConfig {
            alpha,
            sigma: 0.0,
            gamma,
            dt,
            horizon: 1.0,
            scheme: Scheme::SemiImplicit,
            initial,
        }
    }

    fn sine() -> InitialProfile {
        InitialProfile::Trig {
            terms: vec![TrigTerm {
                wavenumber: 1,
                cos: 0.0,
                sin: 1.0,
            }],
        }
    }

    #[test]
    fn config_validation_is_itemized() {
        let mut cfg = quiet(1.0, 2.0, -1.0, sine());
        cfg.sigma = -1.0;
        match cfg.validate() {
            Err(Error::Config(items)) => assert_eq!(items.len(), 3, "{items:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reference_sine_decays_at_heat_kernel_rate() {
        let l = 2.0 * PI;
        let spec = QWienerSpec::power_law(l, 4, 3.0).unwrap();
        let dt = 1e-4;
        let cfg = quiet(0.0, 1.0, dt, sine());
        let solver = ReferenceSolver::new(&spec, 512, &cfg).unwrap();
        let path = NoisePath::global(&spec, &uniform_times(dt, 1), 1, 0).unwrap();
        let mut u = solver.initial();
        let before = u[128];
        solver.step(&mut u, &path, 0).unwrap();
        let want = (-(2.0 * PI / l).powi(2) * dt).exp();
        assert!((u[128] / before - want).abs() < 1e-8, "{}", u[128] / before - want);
    }

    #[test]
    fn reference_fixed_points_are_stationary() {
        let spec = QWienerSpec::power_law(1.0, 4, 3.0).unwrap();
        let path = NoisePath::global(&spec, &uniform_times(1e-3, 20), 1, 0).unwrap();
        for value in [-1.0, 0.0, 1.0] {
            let cfg = quiet(2.0, 1.0, 1e-3, InitialProfile::Constant { value });
            let traj = ReferenceSolver::new(&spec, 64, &cfg).unwrap().run(&path, 5).unwrap();
            assert!(traj.last().unwrap().iter().all(|&v| (v - value).abs() < 1e-13));
            assert_eq!(traj.len(), 5);
        }
    }

    #[test]
    fn explicit_reference_is_guarded() {
        let spec = QWienerSpec::power_law(1.0, 4, 3.0).unwrap();
        let mut cfg = quiet(0.0, 1.0, 1e-3, sine());
        cfg.scheme = Scheme::Explicit;
        assert!(matches!(
            ReferenceSolver::new(&spec, 64, &cfg),
            Err(Error::Unstable { .. })
        ));
        cfg.dt = 1e-4;
        assert!(ReferenceSolver::new(&spec, 64, &cfg).is_ok());
    }

    #[test]
    fn insulated_constant_elements_are_stationary() {
        let g = DomainGrid::new(4.0, 4, 8).unwrap();
        let spec = QWienerSpec::power_law(4.0, 4, 3.0).unwrap();
        let solver = CoupledSolver::new(&g, &spec, &quiet(0.0, 0.0, 1e-2, sine())).unwrap();
        let op = solver.operator();
        let field = ElementField::from_fn(&g, |e, _, _| [1.0, -2.0, 0.5, 3.0][e]);
        let mut x = op.restrict(&field).unwrap();
        let start = x.clone();
        let path = NoisePath::global(&spec, &uniform_times(1e-2, 10), 1, 0).unwrap();
        for s in 0..10 {
            solver.step(&mut x, &path, s).unwrap();
        }
        for (a, b) in x.iter().zip(&start) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn explicit_and_semi_implicit_coupled_steps_agree() {
        let g = DomainGrid::new(4.0, 4, 8).unwrap();
        let spec = QWienerSpec::power_law(4.0, 8, 3.0).unwrap();
        let mut cfg = SpdeConfig {
            sigma: 0.3,
            ..quiet(1.0, 0.7, 1e-5, sine())
        };
        let implicit = CoupledSolver::new(&g, &spec, &cfg).unwrap();
        cfg.scheme = Scheme::Explicit;
        let explicit = CoupledSolver::new(&g, &spec, &cfg).unwrap();
        let path = NoisePath::global(&spec, &uniform_times(1e-5, 50), 3, 0).unwrap();
        let mut a = implicit.initial().unwrap();
        let mut b = a.clone();
        for s in 0..50 {
            implicit.step(&mut a, &path, s).unwrap();
            explicit.step(&mut b, &path, s).unwrap();
        }
        let gap = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(gap < 1e-3, "{gap}");
    }

    #[test]
    fn explicit_coupled_step_is_guarded() {
        let g = DomainGrid::new(4.0, 4, 8).unwrap();
        let spec = QWienerSpec::power_law(4.0, 8, 3.0).unwrap();
        let cfg = SpdeConfig {
            scheme: Scheme::Explicit,
            ..quiet(1.0, 0.5, 1e-2, sine())
        };
        assert!(matches!(
            CoupledSolver::new(&g, &spec, &cfg),
            Err(Error::Unstable { .. })
        ));
    }

    #[test]
    fn blow_up_is_reported_with_the_step() {
        let spec = QWienerSpec::power_law(1.0, 4, 3.0).unwrap();
        let cfg = quiet(-50.0, 1.0, 0.1, InitialProfile::Constant { value: 10.0 });
        let solver = ReferenceSolver::new(&spec, 16, &cfg).unwrap();
        let path = NoisePath::global(&spec, &uniform_times(0.1, 10), 1, 0).unwrap();
        assert!(matches!(solver.run(&path, 1), Err(Error::Unstable { .. })));
    }

    #[test]
    fn slow_fast_split_recomposes() {
        let g = DomainGrid::new(4.0, 4, 16).unwrap();
        let op = CoupledOperator::assemble(&g, 0.2).unwrap();
        let eig = EigenSystem::solve(&op, 8).unwrap();
        let slow = ElementModes::localized(&eig, 0).unwrap();
        let mut rng = crate::noise::stream_rng(1, 0);
        let u = op.random_field(&mut rng);
        let split = slow_fast_decompose(&u, &slow).unwrap();
        let mut back = split.fast.clone();
        for j in 0..4 {
            back.axpy(split.amplitudes[j], slow.field(j, 0)).unwrap();
            assert!(g.inner_product(&split.fast, slow.field(j, 0)).unwrap().abs() < 1e-12);
        }
        assert!(back.values().iter().zip(u.values()).all(|(a, b)| (a - b).abs() < 1e-12));
        let total = g.inner_product(&u, &u).unwrap();
        let slow_energy: f64 = split.amplitudes.iter().map(|a| a * a).sum();
        let fast_energy = g.inner_product(&split.fast, &split.fast).unwrap();
        assert!((total - slow_energy - fast_energy).abs() < 1e-10 * total);

        let c = 1.7;
        let pure = slow.field(2, 0).scaled(c);
        let split = slow_fast_decompose(&pure, &slow).unwrap();
        assert!((split.amplitudes[2] - c).abs() < 1e-12);
        assert!(split.fast.max_abs() < 1e-12);
    }

    #[test]
    fn trajectory_rejects_unordered_times_and_exports() {
        let mut t = ModelTrajectory::new(3, "test");
        t.push(0.0, vec![1.0, 2.0]).unwrap();
        assert!(t.push(0.0, vec![1.0, 2.0]).is_err());
        t.push(0.5, vec![3.0, 4.0]).unwrap();
        let mut csv = Vec::new();
        t.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "t,U_1,U_2\n0,1,2\n0.5,3,4\n");
        let mut bin = Vec::new();
        t.write_binary(&mut bin).unwrap();
        assert_eq!(bin.len(), 8 + 16 + 2 * 3 * 8);
    }

    #[test]
    fn trace_sampling_matches_element_positions() {
        let g = DomainGrid::new(2.0 * PI, 8, 16).unwrap();
        let spec = QWienerSpec::power_law(g.length(), 4, 3.0).unwrap();
        let solver = ReferenceSolver::new(&spec, 1024, &quiet(0.0, 1.0, 1e-3, sine())).unwrap();
        let u = solver.initial();
        let on_trace = solver.on_trace(&u, &g).unwrap();
        let field = sine().on_elements(&g).right_half_trace();
        for (a, b) in on_trace.iter().zip(&field) {
            assert!((a - b).abs() < 1e-12);
        }
        let grid_vals = solver.on_grid(&u, &g).unwrap();
        for (a, x) in grid_vals.iter().zip(g.grid_points()) {
            assert!((a - x.sin()).abs() < 1e-12);
        }
    }
}
