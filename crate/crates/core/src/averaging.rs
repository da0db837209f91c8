//! Stationary statistics of the fast element modes and the coefficients they
//! induce on the slow grid-value dynamics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DomainGrid, ElementField};
use crate::noise::{DriverNormalization, ElementNoiseProjection, NoisePath, QWienerSpec};
use crate::spectral::{ElementModes, GroundModeExpansion};

/// Fast modes are kept while `λ ≤ FAST_CUTOFF / h²`.
pub const FAST_CUTOFF: f64 = 400.0;

/// How the slow projection of `η̃²` is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentReading {
    /// Projection onto the element ground mode, evaluated at the grid point.
    #[default]
    Projection,
    /// Value at the grid point.
    Pointwise,
}

/// Per-element stationary variances of the fast OU modes.
#[derive(Debug, Clone)]
pub struct FastModeStats {
    grid: DomainGrid,
    sigma: f64,
    fast: usize,
    /// `(j, k)`-indexed, `k = 0..fast` for mode `l = k + 1`.
    rates: Vec<f64>,
    qh: Vec<f64>,
    variance: Vec<f64>,
    fields: Vec<ElementField>,
    ground: Vec<ElementField>,
    second_moment: ElementField,
    tail_variance: Vec<f64>,
    next_rate: f64,
}

impl FastModeStats {
    /// Stationary statistics `v = σ² q^h / (2λ)` of every fast mode with
    /// `λ ≤ FAST_CUTOFF / h²`, driven by the projected noise. `modes` must be
    /// the insulated family.
    pub fn new(spec: &QWienerSpec, proj: &ElementNoiseProjection, modes: &ElementModes, sigma: f64) -> Result<Self> {
        let grid = *modes.grid();
        let kept = kept_fast_modes(modes);
        // Spectral mass beyond the kept modes: Σ_k q_k ∫_{I_j} e_k² − Σ_{l kept} q^h_{j,l}.
        let scale = match proj.normalization() {
            DriverNormalization::Projection => 1.0,
            DriverNormalization::Halved => 0.5,
        };
        let basis: Vec<ElementField> = (0..spec.modes())
            .map(|k| ElementField::from_global(&grid, |x| spec.basis(k, x)))
            .collect();
        let mut tail_mass = Vec::with_capacity(grid.elements());
        for j in 0..grid.elements() {
            let mut local = 0.0;
            for (b, q) in basis.iter().zip(spec.coeffs()) {
                local += q * grid.element_inner_product(b, b, j)?;
            }
            let kept_mass: f64 = proj.qh(j, 0) + kept.iter().map(|&l| proj.qh(j, l)).sum::<f64>();
            tail_mass.push((scale * local - kept_mass).max(0.0));
        }
        Self::from_drive(modes, sigma, |j, l| proj.qh(j, l), &tail_mass)
    }

    /// Statistics for an explicit drive `q^h_{j,l}` and per-element drive mass
    /// `tail_mass` beyond the kept modes.
    pub fn from_drive(
        modes: &ElementModes,
        sigma: f64,
        drive: impl Fn(usize, usize) -> f64,
        tail_mass: &[f64],
    ) -> Result<Self> {
        if modes.gamma() != 0.0 {
            return Err(Error::InvalidNoise("fast statistics use the insulated modes".into()));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InvalidNoise(format!(
                "noise amplitude {sigma} must be non-negative"
            )));
        }
        let grid = *modes.grid();
        if tail_mass.len() != grid.elements() {
            return Err(Error::GridMismatch(format!(
                "{} tail masses for {} elements",
                tail_mass.len(),
                grid.elements()
            )));
        }
        let h = grid.spacing();
        let kept = kept_fast_modes(modes);
        let fast = kept.len();
        let max_level = kept.iter().map(|&l| modes.shapes()[l].level).max().unwrap_or(0);
        let next_rate = ((max_level + 1) as f64 * std::f64::consts::PI / h).powi(2);

        let mut rates = Vec::with_capacity(grid.elements() * fast);
        let mut qh = Vec::with_capacity(grid.elements() * fast);
        let mut fields = Vec::with_capacity(grid.elements() * fast);
        let mut ground = Vec::with_capacity(grid.elements());
        for j in 0..grid.elements() {
            ground.push(modes.field(j, 0).clone());
            for &l in &kept {
                let rate = modes.rate(j, l);
                let q = drive(j, l);
                if rate <= 0.0 {
                    return Err(Error::InvalidNoise(format!("fast mode ({j}, {l}) has zero rate")));
                }
                if !(q.is_finite() && q >= 0.0) {
                    return Err(Error::InvalidNoise(format!("drive of mode ({j}, {l}) is {q}")));
                }
                rates.push(rate);
                qh.push(q);
                fields.push(modes.field(j, l).clone());
            }
        }
        let variance: Vec<f64> = qh
            .iter()
            .zip(&rates)
            .map(|(q, r)| sigma * sigma * q / (2.0 * r))
            .collect();

        let mut second_moment = ElementField::zeros(&grid);
        for (f, v) in fields.iter().zip(&variance) {
            second_moment.axpy(*v, &f.map(|x| x * x))?;
        }
        let tail_variance = tail_mass
            .iter()
            .map(|t| sigma * sigma * t / (2.0 * next_rate))
            .collect();

        Ok(Self {
            grid,
            sigma,
            fast,
            rates,
            qh,
            variance,
            fields,
            ground,
            second_moment,
            tail_variance,
            next_rate,
        })
    }

    pub fn grid(&self) -> &DomainGrid {
        &self.grid
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Fast modes kept per element.
    pub fn fast_modes(&self) -> usize {
        self.fast
    }

    pub fn rate(&self, j: usize, k: usize) -> f64 {
        self.rates[j * self.fast + k]
    }

    pub fn qh(&self, j: usize, k: usize) -> f64 {
        self.qh[j * self.fast + k]
    }

    /// Stationary variance `v_{j,k}`.
    pub fn variance(&self, j: usize, k: usize) -> f64 {
        self.variance[j * self.fast + k]
    }

    pub fn mode(&self, j: usize, k: usize) -> &ElementField {
        &self.fields[j * self.fast + k]
    }

    /// `E η̃²(x) = Σ_k v_k e_k(x)²`.
    pub fn second_moment(&self) -> &ElementField {
        &self.second_moment
    }

    /// Upper bound on `Σ v` over the modes beyond the cutoff.
    pub fn tail_variance(&self, j: usize) -> f64 {
        self.tail_variance[j]
    }

    /// Rate of the first level beyond the cutoff.
    pub fn next_rate(&self) -> f64 {
        self.next_rate
    }

    /// Slow-mode reading `m_j` of `E η̃²`.
    pub fn slow_second_moment(&self, j: usize, reading: MomentReading) -> f64 {
        let c = self.ground[j].center_value(j);
        match reading {
            MomentReading::Projection => {
                let b = self.projection_constants(j);
                (0..self.fast).map(|k| self.variance(j, k) * b[k][k]).sum::<f64>() * c
            }
            MomentReading::Pointwise => (0..self.fast)
                .map(|k| self.variance(j, k) * self.mode(j, k).center_value(j).powi(2))
                .sum(),
        }
    }

    /// `b_{kl} = ⟨e_k e_l, e_0⟩` on element `j`, by quadrature.
    fn projection_constants(&self, j: usize) -> Vec<Vec<f64>> {
        let e0 = &self.ground[j];
        let g = &self.grid;
        (0..self.fast)
            .map(|k| {
                (0..self.fast)
                    .map(|l| {
                        let prod = self.mode(j, k).mul(self.mode(j, l)).expect("same grid");
                        g.element_inner_product(&prod, e0, j).expect("same grid")
                    })
                    .collect()
            })
            .collect()
    }

    /// Coefficients `b_{kl}` of `Y = Σ b_{kl} η_k η_l` for the chosen reading.
    pub fn quadratic_form(&self, j: usize, reading: MomentReading) -> Vec<Vec<f64>> {
        match reading {
            MomentReading::Projection => self.projection_constants(j),
            MomentReading::Pointwise => {
                let c: Vec<f64> = (0..self.fast).map(|k| self.mode(j, k).center_value(j)).collect();
                c.iter().map(|a| c.iter().map(|b| a * b).collect()).collect()
            }
        }
    }
}

/// Fast indices `l ≥ 1` with `λ ≤ FAST_CUTOFF / h²`.
fn kept_fast_modes(modes: &ElementModes) -> Vec<usize> {
    let h = modes.grid().spacing();
    let cutoff = FAST_CUTOFF / (h * h);
    modes.fast().filter(|&l| modes.rate(0, l) <= cutoff).collect()
}

/// Drive `q^h_{j,l} = q_l·h` with level profile `q_l = level⁻²`, and the
/// matching tail mass `h·Σ_{n > max} mult(n)/n²`; the regime in which the
/// drive of every element mode scales linearly with the element size.
pub fn scaled_drive(modes: &ElementModes) -> (impl Fn(usize, usize) -> f64 + '_, Vec<f64>) {
    let h = modes.grid().spacing();
    let kept = kept_fast_modes(modes);
    let top = kept.iter().map(|&l| modes.shapes()[l].level).max().unwrap_or(0);
    let tail_per_length: f64 = (top + 1..200_000)
        .map(|n| crate::spectral::InsulatedMode::multiplicity(n) as f64 / (n * n) as f64)
        .sum();
    let drive = move |_j: usize, l: usize| {
        let level = modes.shapes()[l].level.max(1) as f64;
        h / (level * level)
    };
    (drive, vec![h * tail_per_length; modes.grid().elements()])
}

/// `−(Ū³ + 3Ū m_j)` per element.
pub fn averaged_drift(ubar: &[f64], second_moment: &[f64]) -> Vec<f64> {
    ubar.iter()
        .zip(second_moment)
        .map(|(u, m)| -(u * u * u + 3.0 * u * m))
        .collect()
}

/// Coefficients of the averaged grid-value model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedCoeffs {
    pub alpha: f64,
    pub sigma: f64,
    pub h: f64,
    pub reading: MomentReading,
    /// `α̂_j = α − 3α m_j`.
    pub hat_alpha: Vec<f64>,
    /// Deviation variance `Q_j`.
    pub deviation: Vec<f64>,
    /// Slow reading `m_j` of the fast second moment.
    pub second_moment: Vec<f64>,
    /// Bound on the `α̂_j` error from dropping modes beyond the cutoff.
    pub hat_alpha_bound: Vec<f64>,
    /// Bound on the `Q_j` error from dropping modes beyond the cutoff.
    pub deviation_bound: Vec<f64>,
}

impl AveragedCoeffs {
    pub fn compute(stats: &FastModeStats, alpha: f64, reading: MomentReading) -> Self {
        let g = stats.grid();
        let h = g.spacing();
        let m = g.elements();
        let mut hat_alpha = Vec::with_capacity(m);
        let mut deviation = Vec::with_capacity(m);
        let mut second_moment = Vec::with_capacity(m);
        let mut hat_alpha_bound = Vec::with_capacity(m);
        let mut deviation_bound = Vec::with_capacity(m);
        let lambda_next = stats.next_rate();
        for j in 0..m {
            let mj = stats.slow_second_moment(j, reading);
            second_moment.push(mj);
            hat_alpha.push(alpha - 3.0 * alpha * mj);
            deviation.push(deviation_variance(stats, j, reading));

            let tail = stats.tail_variance(j);
            let kept: f64 = (0..stats.fast_modes()).map(|k| stats.variance(j, k)).sum();
            let (alpha_bound, q_bound) = match reading {
                MomentReading::Projection => (
                    3.0 * alpha.abs() * tail / (2.0 * h),
                    tail * tail / (2.0 * h * lambda_next),
                ),
                MomentReading::Pointwise => (
                    3.0 * alpha.abs() * tail / h,
                    2.0 * (tail * tail + 2.0 * tail * kept) / (h * h * lambda_next),
                ),
            };
            hat_alpha_bound.push(alpha_bound);
            deviation_bound.push(q_bound);
        }
        Self {
            alpha,
            sigma: stats.sigma(),
            h,
            reading,
            hat_alpha,
            deviation,
            second_moment,
            hat_alpha_bound,
            deviation_bound,
        }
    }

    /// Coefficients with no fast-mode contribution (`σ = 0`).
    pub fn quiet(alpha: f64, grid: &DomainGrid) -> Self {
        let m = grid.elements();
        Self {
            alpha,
            sigma: 0.0,
            h: grid.spacing(),
            reading: MomentReading::Projection,
            hat_alpha: vec![alpha; m],
            deviation: vec![0.0; m],
            second_moment: vec![0.0; m],
            hat_alpha_bound: vec![0.0; m],
            deviation_bound: vec![0.0; m],
        }
    }

    pub fn elements(&self) -> usize {
        self.hat_alpha.len()
    }
}

/// `Q_j = ∫_0^∞ Cov(Y(s), Y(0)) ds` for `Y = Σ b_{kl} η_k η_l` with
/// independent stationary OU modes:
/// `Q_j = 2 Σ_{k,l} b_{kl}² v_k v_l / (λ_k + λ_l)`.
pub fn deviation_variance(stats: &FastModeStats, j: usize, reading: MomentReading) -> f64 {
    let b = stats.quadratic_form(j, reading);
    let n = stats.fast_modes();
    let mut q = 0.0;
    for k in 0..n {
        for l in 0..n {
            let (vk, vl) = (stats.variance(j, k), stats.variance(j, l));
            q += 2.0 * b[k][l].powi(2) * vk * vl / (stats.rate(j, k) + stats.rate(j, l));
        }
    }
    q
}

/// `α̂_j` through the field second moment rather than the mode sum.
pub fn hat_alpha_from_field(stats: &FastModeStats, alpha: f64, j: usize) -> Result<f64> {
    let g = stats.grid();
    let e0 = &stats.ground[j];
    let proj = g.element_inner_product(stats.second_moment(), e0, j)?;
    Ok(alpha - 3.0 * alpha * proj * e0.center_value(j))
}

/// Exact OU transition `dη = −λη dt + s dβ` over `dt`, with standard normal `z`.
pub fn ou_exact_step(x: f64, rate: f64, noise_rate: f64, dt: f64, z: f64) -> f64 {
    let decay = (-rate * dt).exp();
    let var = noise_rate * (1.0 - decay * decay) / (2.0 * rate);
    x * decay + var.sqrt() * z
}

/// Variance of `(1/γ)∫_0^t η ds` for the stationary OU process on the slow
/// clock (`dη = −(λ/γ²)η dt + (σ/γ)√q dβ`).
pub fn integrated_ou_variance(sigma: f64, qh: f64, rate: f64, gamma: f64, t: f64) -> f64 {
    let g2 = gamma * gamma;
    sigma * sigma * qh / (rate * rate) * (t - g2 * (1.0 - (-rate * t / g2).exp()) / rate)
}

/// Amplitude law of the martingale-limit driver of each fast mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LimitScaling {
    /// `√(q^h/λ)`.
    #[default]
    RootRate,
    /// `√q^h / λ`, the scaling of the integrated OU process.
    Rate,
}

/// Combined per-element driver `β̂_{j,0} = Σ_k a_{j,k} β̂_{j,k}` with
/// `a_{j,k} = amp(q^h, λ)·⟨e_{j,k}, F1_j⟩`, where `F1_j` is the first-order
/// correction of element `j`'s own slow mode.
#[derive(Debug, Clone)]
pub struct MartingaleDriver {
    fast: usize,
    amplitudes: Vec<f64>,
}

impl MartingaleDriver {
    pub fn new(stats: &FastModeStats, expansions: &[GroundModeExpansion], scaling: LimitScaling) -> Result<Self> {
        let g = stats.grid();
        if expansions.len() != g.elements() {
            return Err(Error::GridMismatch(format!(
                "{} expansions for {} elements",
                expansions.len(),
                g.elements()
            )));
        }
        let fast = stats.fast_modes();
        let mut amplitudes = Vec::with_capacity(g.elements() * fast);
        for (j, x) in expansions.iter().enumerate() {
            g.ensure_same(x.grid())?;
            for k in 0..fast {
                let overlap = g.element_inner_product(stats.mode(j, k), x.first(), j)?;
                let (q, r) = (stats.qh(j, k), stats.rate(j, k));
                let amp = match scaling {
                    LimitScaling::RootRate => (q / r).sqrt(),
                    LimitScaling::Rate => q.sqrt() / r,
                };
                amplitudes.push(amp * overlap);
            }
        }
        Ok(Self { fast, amplitudes })
    }

    /// Standard drivers needed per step (`M × fast`).
    pub fn drivers_per_step(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn elements(&self) -> usize {
        self.amplitudes.len() / self.fast.max(1)
    }

    /// Variance rate `Σ_k a_{j,k}²` of element `j`.
    pub fn variance_rate(&self, j: usize) -> f64 {
        self.amplitudes[j * self.fast..(j + 1) * self.fast]
            .iter()
            .map(|a| a * a)
            .sum()
    }

    /// Per-element increments from a path with `drivers_per_step()` modes.
    pub fn increments(&self, path: &NoisePath, step: usize) -> Result<Vec<f64>> {
        if path.modes() != self.drivers_per_step() {
            return Err(Error::InvalidNoise(format!(
                "martingale path has {} modes, need {}",
                path.modes(),
                self.drivers_per_step()
            )));
        }
        let inc = path.step_increments(step)?;
        Ok(self
            .amplitudes
            .chunks(self.fast.max(1))
            .zip(inc.chunks(self.fast.max(1)))
            .map(|(a, d)| a.iter().zip(d).map(|(x, y)| x * y).sum())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{stream_rng, uniform_times, NoisePath};
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::PI;

    fn setup(sigma: f64, subgrid: usize) -> (QWienerSpec, ElementNoiseProjection, ElementModes, FastModeStats) {
        let g = DomainGrid::new(2.0 * PI, 8, subgrid).unwrap();
        let spec = QWienerSpec::power_law(g.length(), 32, 3.0).unwrap();
        let modes = ElementModes::insulated(&g, 7);
        let proj = ElementNoiseProjection::new(&spec, &modes, DriverNormalization::Projection).unwrap();
        let stats = FastModeStats::new(&spec, &proj, &modes, sigma).unwrap();
        (spec, proj, modes, stats)
    }

    #[test]
    fn lyapunov_variance_of_a_single_mode() {
        // 2λv = σ²q with λ = π², σ = 1, q = 1.
        let v = 1.0 / (2.0 * PI * PI);
        assert!((v - 0.050660).abs() < 1e-6);
        let mut rng = stream_rng(5, 0);
        let (rate, dt, steps, reps) = (PI * PI, 1e-3 / (PI * PI), 10_000, 2_000);
        let mut xs = Vec::with_capacity(reps);
        for _ in 0..reps {
            let mut x = 0.0;
            for _ in 0..steps {
                let z: f64 = StandardNormal.sample(&mut rng);
                x += -rate * x * dt + dt.sqrt() * z;
            }
            xs.push(x);
        }
        let var = xs.iter().map(|x| x * x).sum::<f64>() / reps as f64;
        let se = var * (2.0 / reps as f64).sqrt();
        assert!((var - v).abs() < 3.0 * se + 1e-3 * v, "{var} vs {v}");
    }

    #[test]
    fn cutoff_keeps_twelve_fast_modes() {
        let (_, _, _, stats) = setup(0.5, 32);
        assert_eq!(stats.fast_modes(), 12);
        let h = stats.grid().spacing();
        assert!((stats.next_rate() - 49.0 * PI * PI / (h * h)).abs() < 1e-9);
    }

    #[test]
    fn quiet_noise_leaves_alpha_untouched() {
        let (_, _, _, stats) = setup(0.0, 16);
        let c = AveragedCoeffs::compute(&stats, 1.3, MomentReading::Projection);
        assert!(c.hat_alpha.iter().all(|&a| a == 1.3));
        assert!(c.deviation.iter().all(|&q| q == 0.0));
        assert!(stats.second_moment().max_abs() == 0.0);
    }

    #[test]
    fn noise_lowers_alpha_and_deviation_is_non_negative() {
        let (_, _, _, stats) = setup(0.5, 32);
        let c = AveragedCoeffs::compute(&stats, 1.0, MomentReading::Projection);
        for j in 0..8 {
            assert!(c.hat_alpha[j] < 1.0);
            assert!(c.deviation[j] >= 0.0);
            let via_field = hat_alpha_from_field(&stats, 1.0, j).unwrap();
            assert!((via_field - c.hat_alpha[j]).abs() < 1e-3 * (1.0 - c.hat_alpha[j]));
        }
    }

    #[test]
    fn single_mode_hat_alpha_arithmetic() {
        // α = σ = 1, q^h = 0.1, λ = π²/h², h = 1: α̂ = 1 − 3·0.1/(2π²)·(1/2).
        let (alpha, sigma, q, h) = (1.0f64, 1.0f64, 0.1f64, 1.0f64);
        let lambda = PI * PI / (h * h);
        let v = sigma * sigma * q / (2.0 * lambda);
        let direct = alpha - 3.0 * alpha * v / (2.0 * h);
        let formula = 1.0 - 3.0 * 0.1 / (2.0 * PI * PI * 2.0);
        assert!((direct - formula).abs() < 1e-15);
        assert!((direct - 0.99240).abs() < 1e-5);
    }

    #[test]
    fn projection_constants_match_closed_form() {
        let (_, _, _, stats) = setup(0.5, 64);
        let h = stats.grid().spacing();
        let b = stats.quadratic_form(2, MomentReading::Projection);
        for k in 0..stats.fast_modes() {
            for l in 0..stats.fast_modes() {
                let want = if k == l { 1.0 / (2.0 * h).sqrt() } else { 0.0 };
                assert!((b[k][l] - want).abs() < 2e-3 * want.max(1.0), "{k} {l} {}", b[k][l]);
            }
        }
    }

    #[test]
    fn gaussian_moment_oracle_for_averaged_drift() {
        let (u, v) = (0.7f64, 0.2f64);
        let drift = averaged_drift(&[u, 0.0], &[v, v]);
        assert!((drift[0] + 0.763).abs() < 1e-12);
        assert_eq!(drift[1], 0.0);
        assert_eq!(averaged_drift(&[u], &[0.0])[0], -u.powi(3));
        let mut rng = stream_rng(9, 0);
        let n = 1_000_000;
        let mut s = 0.0;
        let mut s2 = 0.0;
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            let y = -(u + v.sqrt() * z).powi(3);
            s += y;
            s2 += y * y;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - drift[0]).abs() < 3.0 * se, "{mean} vs {}", drift[0]);
    }

    #[test]
    fn flat_expansion_gives_silent_martingale_driver() {
        let (_, _, _, stats) = setup(0.5, 16);
        let flat = ElementField::constant(stats.grid(), 1.0);
        let x = vec![GroundModeExpansion::of_field(&flat, 0.1).unwrap(); 8];
        let d = MartingaleDriver::new(&stats, &x, LimitScaling::RootRate).unwrap();
        assert!((0..8).all(|j| d.variance_rate(j) == 0.0));
    }

    #[test]
    fn martingale_driver_variance_matches_rate() {
        let (_, _, _, stats) = setup(0.5, 16);
        let op = crate::spectral::CoupledOperator::assemble(stats.grid(), 0.1).unwrap();
        let eig = crate::spectral::EigenSystem::solve(&op, 16).unwrap();
        let x = crate::spectral::expand_localized_modes(&eig).unwrap();
        let d = MartingaleDriver::new(&stats, &x, LimitScaling::RootRate).unwrap();
        let reps = 20_000;
        let times = uniform_times(1.0, 1);
        let mut acc = 0.0;
        for r in 0..reps {
            let path = NoisePath::sample(d.drivers_per_step(), &times, 3, r).unwrap();
            acc += d.increments(&path, 0).unwrap()[3].powi(2);
        }
        let var = acc / reps as f64;
        let want = d.variance_rate(3);
        assert!(want > 0.0);
        assert!(
            (var - want).abs() < 4.0 * want * (2.0 / reps as f64).sqrt(),
            "{var} vs {want}"
        );
    }

    #[test]
    fn exact_ou_step_preserves_stationary_variance() {
        let (rate, s) = (3.0, 0.4);
        let v = s / (2.0 * rate);
        let z = 1.0;
        let x = ou_exact_step(0.0, rate, s, 1e9, z);
        assert!((x - v.sqrt()).abs() < 1e-12);
    }
}
