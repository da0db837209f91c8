//! Q-Wiener noise: spectral description, sampled Brownian coefficients, and
//! their projection onto per-element modes.
//!
//! All randomness comes from ChaCha streams keyed by `(seed, stream)`, so every
//! solver in a comparison can be driven by the same coefficient matrix.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DomainGrid, ElementField};
use crate::spectral::ElementModes;

/// Stream channels; combined with a member index by [`stream_id`].
pub mod channel {
    /// Global Fourier coefficients of W.
    pub const GLOBAL: u64 = 0;
    /// Per-element deviation drivers.
    pub const DEVIATION: u64 = 1;
    /// Per-element, per-fast-mode martingale-limit drivers.
    pub const MARTINGALE: u64 = 2;
    /// Free channel for oracles and calibration runs.
    pub const AUXILIARY: u64 = 3;
}

const CHANNELS: u64 = 8;

/// Stream number of `channel` for ensemble member `member`.
pub fn stream_id(member: u64, channel: u64) -> u64 {
    member * CHANNELS + channel
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fourier basis of `L²(0, L)`: `e_0 = √(1/L)`, `e_{2m} = √(2/L)cos(2mπx/L)`,
/// `e_{2m−1} = √(2/L)sin(2mπx/L)`.
pub fn fourier_basis(length: f64, k: usize, x: f64) -> f64 {
    if k == 0 {
        return (1.0 / length).sqrt();
    }
    let m = k.div_ceil(2) as f64;
    let arg = 2.0 * m * PI * x / length;
    let amp = (2.0 / length).sqrt();
    if k % 2 == 0 {
        amp * arg.cos()
    } else {
        amp * arg.sin()
    }
}

/// Wavenumber `2mπ/L` of basis function `k`.
pub fn fourier_wavenumber(length: f64, k: usize) -> f64 {
    2.0 * PI * k.div_ceil(2) as f64 / length
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QWienerSpec {
    length: f64,
    coeffs: Vec<f64>,
}

impl QWienerSpec {
    /// Minimum decay exponent for the power-law family.
    pub const MIN_DECAY: f64 = 2.0;

    /// Explicit, finitely supported coefficients `q_0..q_{K}`.
    pub fn explicit(length: f64, coeffs: Vec<f64>) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidNoise(format!("domain length {length} must be positive")));
        }
        if coeffs.len() < 2 {
            return Err(Error::InvalidNoise("need at least two coefficients (K >= 1)".into()));
        }
        if let Some((k, q)) = coeffs.iter().enumerate().find(|(_, q)| !(q.is_finite() && **q >= 0.0)) {
            return Err(Error::InvalidNoise(format!(
                "q_{k} = {q} must be finite and non-negative"
            )));
        }
        Ok(Self { length, coeffs })
    }

    /// `q_k = (1 + k)^{-decay}` for `k < modes`.
    pub fn power_law(length: f64, modes: usize, decay: f64) -> Result<Self> {
        if !(decay >= Self::MIN_DECAY) {
            return Err(Error::InvalidNoise(format!(
                "decay exponent {decay} is below {}",
                Self::MIN_DECAY
            )));
        }
        Self::explicit(length, (0..modes).map(|k| (1.0 + k as f64).powf(-decay)).collect())
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn modes(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn sqrt_coeffs(&self) -> Vec<f64> {
        self.coeffs.iter().map(|q| q.sqrt()).collect()
    }

    /// `Σ_k k·q_k` at the truncation.
    pub fn weighted_trace(&self) -> f64 {
        self.coeffs.iter().enumerate().map(|(k, q)| k as f64 * q).sum()
    }

    pub fn basis(&self, k: usize, x: f64) -> f64 {
        fourier_basis(self.length, k, x)
    }

    /// Same coefficients on a different grid length is meaningless; this checks it.
    pub fn ensure_grid(&self, grid: &DomainGrid) -> Result<()> {
        if (self.length - grid.length()).abs() > 1e-12 * self.length {
            return Err(Error::GridMismatch(format!(
                "noise length {} vs grid length {}",
                self.length,
                grid.length()
            )));
        }
        Ok(())
    }
}

/// `times[i] = i·dt`, `i = 0..=steps`.
pub fn uniform_times(dt: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|i| i as f64 * dt).collect()
}

/// Sampled standard Brownian coefficients on a time grid.
///
/// Logically a `modes × steps` matrix; stored step-major so one step's
/// increments are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    times: Vec<f64>,
    modes: usize,
    increments: Vec<f64>,
    seed: u64,
    stream: u64,
}

impl NoisePath {
    pub fn sample(modes: usize, times: &[f64], seed: u64, stream: u64) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::NonMonotoneTimes(0));
        }
        if let Some(i) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::NonMonotoneTimes(i + 1));
        }
        let mut rng = stream_rng(seed, stream);
        let mut increments = Vec::with_capacity(modes * (times.len() - 1));
        for w in times.windows(2) {
            let sd = (w[1] - w[0]).sqrt();
            for _ in 0..modes {
                let z: f64 = StandardNormal.sample(&mut rng);
                increments.push(sd * z);
            }
        }
        Ok(Self {
            times: times.to_vec(),
            modes,
            increments,
            seed,
            stream,
        })
    }

    /// Global path for `spec` on the member's global channel.
    pub fn global(spec: &QWienerSpec, times: &[f64], seed: u64, member: u64) -> Result<Self> {
        Self::sample(spec.modes(), times, seed, stream_id(member, channel::GLOBAL))
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn dt(&self, step: usize) -> Result<f64> {
        self.check_step(step)?;
        Ok(self.times[step + 1] - self.times[step])
    }

    pub fn check_step(&self, step: usize) -> Result<()> {
        if step >= self.steps() {
            return Err(Error::StepOutOfRange {
                step,
                steps: self.steps(),
            });
        }
        Ok(())
    }

    /// Increments of every mode over `[t_step, t_{step+1}]`.
    pub fn step_increments(&self, step: usize) -> Result<&[f64]> {
        self.check_step(step)?;
        Ok(&self.increments[step * self.modes..(step + 1) * self.modes])
    }

    pub fn increment(&self, mode: usize, step: usize) -> Result<f64> {
        Ok(self.step_increments(step)?[mode])
    }

    /// `β_k(t_i)` by cumulative summation.
    pub fn cumulative(&self, mode: usize) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.times.len());
        out.push(0.0);
        for chunk in self.increments.chunks(self.modes) {
            acc += chunk[mode];
            out.push(acc);
        }
        out
    }

    /// Path on every `factor`-th time point, with increments summed.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.steps() % factor != 0 {
            return Err(Error::InvalidNoise(format!(
                "cannot coarsen {} steps by {factor}",
                self.steps()
            )));
        }
        let coarse_steps = self.steps() / factor;
        let mut increments = vec![0.0; coarse_steps * self.modes];
        for (s, chunk) in self.increments.chunks(self.modes).enumerate() {
            let dst = &mut increments[(s / factor) * self.modes..(s / factor + 1) * self.modes];
            dst.iter_mut().zip(chunk).for_each(|(d, x)| *d += x);
        }
        Ok(Self {
            times: self.times.iter().step_by(factor).copied().collect(),
            modes: self.modes,
            increments,
            seed: self.seed,
            stream: self.stream,
        })
    }

    const MAGIC: &'static [u8; 8] = b"OSDPATH1";

    /// Little-endian column export: header, times, then step-major increments.
    pub fn write_binary(&self, mut out: impl Write) -> Result<()> {
        out.write_all(Self::MAGIC)?;
        for v in [self.modes as u64, self.steps() as u64, self.seed, self.stream] {
            out.write_all(&v.to_le_bytes())?;
        }
        for t in &self.times {
            out.write_all(&t.to_le_bytes())?;
        }
        for x in &self.increments {
            out.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(mut input: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Format("not a noise-path file".into()));
        }
        let mut word = [0u8; 8];
        let mut next_u64 = |input: &mut dyn Read| -> Result<u64> {
            input.read_exact(&mut word)?;
            Ok(u64::from_le_bytes(word))
        };
        let modes = next_u64(&mut input)? as usize;
        let steps = next_u64(&mut input)? as usize;
        let seed = next_u64(&mut input)?;
        let stream = next_u64(&mut input)?;
        let mut read_f64s = |n: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; n * 8];
            input.read_exact(&mut buf)?;
            Ok(buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect())
        };
        let times = read_f64s(steps + 1)?;
        let increments = read_f64s(steps * modes)?;
        Ok(Self {
            times,
            modes,
            increments,
            seed,
            stream,
        })
    }
}

/// Precomputed `√q_k e_k(x_p)` for a fixed set of points.
#[derive(Debug, Clone)]
pub struct FieldSampler {
    points: usize,
    modes: usize,
    table: Vec<f64>,
}

impl FieldSampler {
    pub fn new(spec: &QWienerSpec, points: &[f64]) -> Self {
        let sq = spec.sqrt_coeffs();
        let modes = spec.modes();
        let mut table = Vec::with_capacity(points.len() * modes);
        for &x in points {
            for (k, s) in sq.iter().enumerate() {
                table.push(s * spec.basis(k, x));
            }
        }
        Self {
            points: points.len(),
            modes,
            table,
        }
    }

    pub fn points(&self) -> usize {
        self.points
    }

    /// `ΔW(x_p) = Σ_k √q_k e_k(x_p) Δβ_k`, written into `out`.
    pub fn increment_into(&self, increments: &[f64], out: &mut [f64]) {
        debug_assert_eq!(increments.len(), self.modes);
        for (row, o) in self.table.chunks(self.modes).zip(out.iter_mut()) {
            *o = row.iter().zip(increments).map(|(a, b)| a * b).sum();
        }
    }

    pub fn increment(&self, increments: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.points];
        self.increment_into(increments, &mut out);
        out
    }
}

/// How the element driver amplitude is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriverNormalization {
    /// `√q^h β e = ⟨W, e⟩ e / ‖e‖`.
    #[default]
    Projection,
    /// `√(2q^h) β e = ⟨W, e⟩ e / ‖e‖`, i.e. `q^h` halved.
    Halved,
}

/// Linear map from global Brownian coefficients to per-element mode drivers.
#[derive(Debug, Clone)]
pub struct ElementNoiseProjection {
    elements: usize,
    per_element: usize,
    modes: usize,
    sqrt_q: Vec<f64>,
    /// `⟨e_k, φ_{j,l}⟩ / ‖φ_{j,l}‖`, indexed `[(j·per_element + l)·modes + k]`.
    weights: Vec<f64>,
    qh: Vec<f64>,
    normalization: DriverNormalization,
}

impl ElementNoiseProjection {
    pub fn new(spec: &QWienerSpec, modes: &ElementModes, normalization: DriverNormalization) -> Result<Self> {
        let grid = modes.grid();
        spec.ensure_grid(grid)?;
        let k_count = spec.modes();
        let basis: Vec<ElementField> = (0..k_count)
            .map(|k| ElementField::from_global(grid, |x| spec.basis(k, x)))
            .collect();
        let per_element = modes.per_element();
        let mut weights = Vec::with_capacity(grid.elements() * per_element * k_count);
        for j in 0..grid.elements() {
            for l in 0..per_element {
                let phi = modes.field(j, l);
                let norm = match modes.support(j, l) {
                    Some(e) => grid.element_inner_product(phi, phi, e)?,
                    None => grid.inner_product(phi, phi)?,
                }
                .sqrt();
                for b in &basis {
                    let w = match modes.support(j, l) {
                        Some(e) => grid.element_inner_product(b, phi, e)?,
                        None => grid.inner_product(b, phi)?,
                    };
                    weights.push(w / norm);
                }
            }
        }
        let q = spec.coeffs();
        let scale = match normalization {
            DriverNormalization::Projection => 1.0,
            DriverNormalization::Halved => 0.5,
        };
        let qh = weights
            .chunks(k_count)
            .map(|w| scale * w.iter().zip(q).map(|(w, q)| q * w * w).sum::<f64>())
            .collect();
        Ok(Self {
            elements: grid.elements(),
            per_element,
            modes: k_count,
            sqrt_q: spec.sqrt_coeffs(),
            weights,
            qh,
            normalization,
        })
    }

    pub fn elements(&self) -> usize {
        self.elements
    }

    pub fn per_element(&self) -> usize {
        self.per_element
    }

    pub fn normalization(&self) -> DriverNormalization {
        self.normalization
    }

    fn slot(&self, j: usize, l: usize) -> usize {
        j * self.per_element + l
    }

    pub fn weights(&self, j: usize, l: usize) -> &[f64] {
        let s = self.slot(j, l) * self.modes;
        &self.weights[s..s + self.modes]
    }

    /// Drive variance rate `q^h_{j,l}`.
    pub fn qh(&self, j: usize, l: usize) -> f64 {
        self.qh[self.slot(j, l)]
    }

    fn amplitude_scale(&self) -> f64 {
        match self.normalization {
            DriverNormalization::Projection => 1.0,
            DriverNormalization::Halved => std::f64::consts::FRAC_1_SQRT_2,
        }
    }

    /// `√q^h_{j,l} Δβ_{j,l} = Σ_k √q_k w_{jlk} Δβ_k` (scaled under `Halved`).
    pub fn amplitude_increment(&self, increments: &[f64], j: usize, l: usize) -> f64 {
        self.amplitude_scale()
            * self
                .weights(j, l)
                .iter()
                .zip(&self.sqrt_q)
                .zip(increments)
                .map(|((w, s), d)| w * s * d)
                .sum::<f64>()
    }

    /// Unit-rate driver increment `Δβ_{j,l}`; zero when the mode is not driven.
    pub fn driver_increment(&self, path: &NoisePath, step: usize, j: usize, l: usize) -> Result<f64> {
        let inc = path.step_increments(step)?;
        let qh = self.qh(j, l);
        Ok(if qh > 0.0 {
            self.amplitude_increment(inc, j, l) / qh.sqrt()
        } else {
            0.0
        })
    }

    /// `ΔW^γ_{j,l} = γ √q^h_{j,l} Δβ_{j,l}` for every `(j, l)`, flattened.
    pub fn element_increments(&self, path: &NoisePath, step: usize, gamma: f64) -> Result<Vec<f64>> {
        if path.modes() != self.modes {
            return Err(Error::InvalidNoise(format!(
                "path has {} modes, projection expects {}",
                path.modes(),
                self.modes
            )));
        }
        let inc = path.step_increments(step)?;
        Ok((0..self.elements)
            .flat_map(|j| (0..self.per_element).map(move |l| (j, l)))
            .map(|(j, l)| gamma * self.amplitude_increment(inc, j, l))
            .collect())
    }

    /// Predicted correlation of two element drivers.
    pub fn driver_correlation(&self, a: (usize, usize), b: (usize, usize)) -> f64 {
        let scale = self.amplitude_scale().powi(2);
        let cov: f64 = self
            .weights(a.0, a.1)
            .iter()
            .zip(self.weights(b.0, b.1))
            .zip(&self.sqrt_q)
            .map(|((x, y), s)| s * s * x * y)
            .sum::<f64>()
            * scale;
        cov / (self.qh(a.0, a.1) * self.qh(b.0, b.1)).sqrt()
    }

    /// `max_j Σ_l λ_l q^h_{j,l}` for the given per-mode rates.
    pub fn trace_bound(&self, rates: impl Fn(usize, usize) -> f64) -> f64 {
        (0..self.elements)
            .map(|j| (0..self.per_element).map(|l| rates(j, l) * self.qh(j, l)).sum::<f64>())
            .fold(0.0, f64::max)
    }
}
