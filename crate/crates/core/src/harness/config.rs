use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::averaging::{LimitScaling, MomentReading};
use crate::dynamics::{InitialProfile, Scheme, SpdeConfig};
use crate::error::{Error, Result};
use crate::grid::DomainGrid;
use crate::models::{ModelKind, ModelOptions};
use crate::noise::{DriverNormalization, QWienerSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub length: f64,
    pub elements: usize,
    pub subgrid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// Number of global Fourier modes (power-law spectrum).
    pub modes: usize,
    /// Power-law exponent of `q_k`.
    pub decay: f64,
    /// Explicit `q_k`; overrides `modes` and `decay`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<Vec<f64>>,
    #[serde(default)]
    pub normalization: DriverNormalization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpdeSection {
    pub alpha: f64,
    pub sigma: f64,
    #[serde(default = "one")]
    pub gamma: f64,
    /// Defaults to `1e-4·h²`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub horizon: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub initial: InitialProfile,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kinds: Vec<ModelKind>,
    #[serde(default)]
    pub options: ModelOptions,
    #[serde(default)]
    pub reading: MomentReading,
    #[serde(default)]
    pub limit_scaling: LimitScaling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub members: usize,
    pub seed: u64,
    /// Fine reference points; defaults to `8·M·N`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_points: Option<usize>,
    /// Keep every `stride`-th state in trajectory exports; 0 keeps only the end.
    #[serde(default)]
    pub stride: usize,
    /// Add stencil-free and deviation-free holistic runs to comparisons.
    #[serde(default)]
    pub ablation: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Gamma,
    H,
    Dt,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gamma" => Ok(Self::Gamma),
            "h" => Ok(Self::H),
            "dt" => Ok(Self::Dt),
            other => Err(Error::Sweep(format!(
                "unknown axis {other:?} (expected gamma, h or dt)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Gamma => "gamma",
            Self::H => "h",
            Self::Dt => "dt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

impl SweepSection {
    /// `AXIS=v1,v2,...`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (axis, values) = spec
            .split_once('=')
            .ok_or_else(|| Error::Sweep(format!("expected AXIS=v1,v2,... in {spec:?}")))?;
        let values = values
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Sweep(format!("sweep value {v:?} is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            axis: SweepAxis::parse(axis.trim())?,
            values,
        })
    }
}

/// A complete, validated description of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    pub noise: NoiseSection,
    pub spde: SpdeSection,
    pub model: ModelSection,
    pub ensemble: EnsembleSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    /// `L = 2π, M = 8, N = 64`, 32 noise modes with decay 3, `σ = 0.5`,
    /// `α = 1`, `dt = 1e-4·h²`, `T = 1`, 256 members.
    fn default() -> Self {
        Self {
            grid: GridSection {
                length: 2.0 * std::f64::consts::PI,
                elements: 8,
                subgrid: 64,
            },
            noise: NoiseSection {
                modes: 32,
                decay: 3.0,
                coeffs: None,
                normalization: DriverNormalization::Projection,
            },
            spde: SpdeSection {
                alpha: 1.0,
                sigma: 0.5,
                gamma: 1.0,
                dt: None,
                horizon: 1.0,
                scheme: Scheme::SemiImplicit,
                initial: InitialProfile::default(),
            },
            model: ModelSection {
                kinds: vec![ModelKind::ConventionalFd, ModelKind::Holistic],
                options: ModelOptions::default(),
                reading: MomentReading::Projection,
                limit_scaling: LimitScaling::RootRate,
            },
            ensemble: EnsembleSection {
                members: 256,
                seed: 2024,
                reference_points: None,
                stride: 0,
                ablation: false,
            },
            sweep: None,
            output: default_output(),
        }
    }
}

impl RunConfig {
    /// Parses and fully validates TOML text.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn spacing(&self) -> f64 {
        self.grid.length / self.grid.elements as f64
    }

    pub fn dt(&self) -> f64 {
        self.spde.dt.unwrap_or(1e-4 * self.spacing().powi(2))
    }

    pub fn reference_points(&self) -> usize {
        self.ensemble
            .reference_points
            .unwrap_or(8 * self.grid.elements * self.grid.subgrid)
    }

    pub fn domain_grid(&self) -> Result<DomainGrid> {
        DomainGrid::new(self.grid.length, self.grid.elements, self.grid.subgrid)
    }

    pub fn noise_spec(&self) -> Result<QWienerSpec> {
        match &self.noise.coeffs {
            Some(c) => QWienerSpec::explicit(self.grid.length, c.clone()),
            None => QWienerSpec::power_law(self.grid.length, self.noise.modes, self.noise.decay),
        }
    }

    pub fn spde_config(&self) -> SpdeConfig {
        SpdeConfig {
            alpha: self.spde.alpha,
            sigma: self.spde.sigma,
            gamma: self.spde.gamma,
            dt: self.dt(),
            horizon: self.spde.horizon,
            scheme: self.spde.scheme,
            initial: self.spde.initial.clone(),
        }
    }

    /// Every violated constraint across all sections.
    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        let g = &self.grid;
        if !(g.length.is_finite() && g.length > 0.0) {
            p.push(format!("grid.length = {} must be positive", g.length));
        }
        if g.elements < 3 {
            p.push(format!("grid.elements = {} must be at least 3", g.elements));
        }
        if g.subgrid < 8 {
            p.push(format!("grid.subgrid = {} must be at least 8", g.subgrid));
        }
        match &self.noise.coeffs {
            Some(c) => {
                if c.len() < 2 {
                    p.push("noise.coeffs needs at least 2 entries".into());
                }
                if c.iter().any(|q| !(q.is_finite() && *q >= 0.0)) {
                    p.push("noise.coeffs must be finite and non-negative".into());
                }
            }
            None => {
                if self.noise.modes < 2 {
                    p.push(format!("noise.modes = {} must be at least 2", self.noise.modes));
                }
                if !(self.noise.decay.is_finite() && self.noise.decay >= 2.0) {
                    p.push(format!(
                        "noise.decay = {} must be at least 2 (trace class)",
                        self.noise.decay
                    ));
                }
            }
        }
        p.extend(self.spde_config().problems().into_iter().map(|s| format!("spde: {s}")));
        if self.model.kinds.is_empty() {
            p.push("model.kinds must name at least one model".into());
        }
        if self.model.kinds.contains(&ModelKind::GammaReduced) && self.spde.gamma <= 0.0 {
            p.push("the gamma-reduced model needs spde.gamma > 0".into());
        }
        if !(0.0..=1.0).contains(&self.model.options.theta) {
            p.push(format!(
                "model.options.theta = {} must lie in [0, 1]",
                self.model.options.theta
            ));
        }
        if self.ensemble.members == 0 {
            p.push("ensemble.members must be at least 1".into());
        }
        let trace = g.elements * g.subgrid;
        let points = self.reference_points();
        if trace > 0 && (points < trace || points % trace != 0) {
            p.push(format!(
                "ensemble.reference_points = {points} must be a positive multiple of elements·subgrid = {trace}"
            ));
        }
        if let Some(s) = &self.sweep {
            p.extend(self.sweep_problems(s));
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    fn sweep_problems(&self, s: &SweepSection) -> Vec<String> {
        let mut p = Vec::new();
        if s.values.len() < 3 {
            p.push(format!("sweep needs at least 3 values, got {}", s.values.len()));
        }
        for v in &s.values {
            match s.axis {
                SweepAxis::Gamma if !(*v > 0.0 && *v <= 1.0) => {
                    p.push(format!("sweep gamma value {v} must lie in (0, 1]"))
                }
                SweepAxis::H | SweepAxis::Dt if !(v.is_finite() && *v > 0.0) => {
                    p.push(format!("sweep {} value {v} must be positive", s.axis.name()))
                }
                SweepAxis::H => {
                    let m = self.grid.length / v;
                    if (m - m.round()).abs() > 1e-9 * m || m.round() < 3.0 {
                        p.push(format!(
                            "sweep h value {v} does not divide the length into ≥ 3 elements"
                        ));
                    }
                }
                _ => {}
            }
        }
        p
    }

    /// The configuration with one sweep value applied.
    pub fn at_sweep_value(&self, axis: SweepAxis, value: f64) -> Result<Self> {
        let mut c = self.clone();
        c.sweep = None;
        match axis {
            SweepAxis::Gamma => c.spde.gamma = value,
            SweepAxis::Dt => c.spde.dt = Some(value),
            SweepAxis::H => {
                c.grid.elements = (self.grid.length / value).round() as usize;
                if let Some(points) = self.ensemble.reference_points {
                    let trace = c.grid.elements * c.grid.subgrid;
                    c.ensemble.reference_points = Some(points.div_ceil(trace) * trace);
                }
            }
        }
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(cfg.hash().unwrap().len(), 64);
        let h = 2.0 * std::f64::consts::PI / 8.0;
        assert!((cfg.dt() - 1e-4 * h * h).abs() < 1e-18);
    }

    #[test]
    fn every_problem_is_reported() {
        let mut cfg = RunConfig::default();
        cfg.grid.elements = 2;
        cfg.spde.sigma = -1.0;
        cfg.ensemble.members = 0;
        match cfg.validate() {
            Err(Error::Config(items)) => assert!(items.len() >= 3, "{items:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = RunConfig::default().to_toml().unwrap();
        text.push_str("\nbogus = 1\n");
        assert!(matches!(RunConfig::from_toml(&text), Err(Error::Config(_))));
    }

    #[test]
    fn sweep_flags_parse_and_validate() {
        let s = SweepSection::parse("gamma=0.9, 0.99,1").unwrap();
        assert_eq!(s.axis, SweepAxis::Gamma);
        assert_eq!(s.values, vec![0.9, 0.99, 1.0]);
        assert!(SweepSection::parse("zeta=1,2,3").is_err());
        assert!(SweepSection::parse("gamma").is_err());
        let mut cfg = RunConfig::default();
        cfg.sweep = Some(SweepSection::parse("h=0.3,0.2,0.1").unwrap());
        assert!(cfg.validate().is_err());
        let l = cfg.grid.length;
        cfg.sweep = Some(SweepSection {
            axis: SweepAxis::H,
            values: vec![l / 8.0, l / 16.0, l / 32.0],
        });
        cfg.validate().unwrap();
        assert_eq!(cfg.at_sweep_value(SweepAxis::H, l / 16.0).unwrap().grid.elements, 16);
    }
}
