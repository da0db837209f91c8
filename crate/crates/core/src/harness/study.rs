use serde::{Deserialize, Serialize};

use crate::averaging::{scaled_drive, AveragedCoeffs, FastModeStats};
use crate::error::{Error, Result};
use crate::grid::DomainGrid;
use crate::harness::config::{RunConfig, SweepAxis};
use crate::harness::ensemble::{Ablation, Ensemble, EnsembleOutput, MemberRecord, Target};
use crate::harness::stats::{fit_order, Moments, OrderFit};
use crate::noise::ElementNoiseProjection;
use crate::spectral::{expand_localized_modes, CoupledOperator, EigenSystem, ElementModes};

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

/// One sweep value and its metrics; `abscissa` is what orders are fitted
/// against (`1 − γ` for coupling sweeps).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub value: f64,
    pub abscissa: f64,
    pub metrics: Vec<f64>,
}

/// A sweep table with a log-log order fit per metric column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub axis: String,
    pub columns: Vec<String>,
    pub rows: Vec<StudyRow>,
    /// `None` when fewer than 3 rows have positive abscissa and metric.
    pub fits: Vec<Option<OrderFit>>,
}

impl StudyTable {
    fn new(axis: &str, columns: Vec<String>, rows: Vec<StudyRow>) -> Self {
        let fits = (0..columns.len())
            .map(|c| {
                let (xs, ys): (Vec<f64>, Vec<f64>) = rows
                    .iter()
                    .filter(|r| r.abscissa > 0.0 && r.metrics[c] > 0.0)
                    .map(|r| (r.abscissa, r.metrics[c]))
                    .unzip();
                fit_order(&xs, &ys).ok()
            })
            .collect();
        Self {
            axis: axis.to_owned(),
            columns,
            rows,
            fits,
        }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn fit(&self, name: &str) -> Option<&OrderFit> {
        self.fits[self.column(name)?].as_ref()
    }

    pub fn values(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.column(name)?;
        Some(self.rows.iter().map(|r| r.metrics[c]).collect())
    }
}

fn require_points(values: &[f64]) -> Result<()> {
    if values.len() < 3 {
        return Err(Error::Sweep(format!(
            "need at least 3 sweep values, got {}",
            values.len()
        )));
    }
    Ok(())
}

/// Slow-cluster rate `λ₀(γ)` and the first fast rate over a coupling sweep.
pub fn eigen_sweep(grid: &DomainGrid, gammas: &[f64]) -> Result<StudyTable> {
    require_points(gammas)?;
    let count = 2 * grid.elements() + 2;
    let rows = gammas
        .iter()
        .map(|&gamma| {
            let op = CoupledOperator::assemble(grid, gamma)?;
            let eig = EigenSystem::solve(&op, count)?;
            let slow = eig.slow_range()?;
            let next = eig.values().get(slow.end).copied().unwrap_or(f64::NAN);
            Ok(StudyRow {
                value: gamma,
                abscissa: gamma,
                metrics: vec![eig.slow_rate()?, next],
            })
        })
        .collect::<Result<_>>()?;
    Ok(StudyTable::new(
        "gamma",
        vec!["lambda0".into(), "first_fast".into()],
        rows,
    ))
}

/// Largest remainder `‖e_j − center − γF₁ − γ²F₂‖₀` of the localized slow
/// modes over a coupling sweep.
pub fn expansion_sweep(grid: &DomainGrid, gammas: &[f64]) -> Result<StudyTable> {
    require_points(gammas)?;
    let count = 2 * grid.elements() + 2;
    let rows = gammas
        .iter()
        .map(|&gamma| {
            let op = CoupledOperator::assemble(grid, gamma)?;
            let eig = EigenSystem::solve(&op, count)?;
            let worst = expand_localized_modes(&eig)?
                .iter()
                .map(|x| x.remainder_norm())
                .fold(0.0, f64::max);
            Ok(StudyRow {
                value: gamma,
                abscissa: gamma,
                metrics: vec![worst],
            })
        })
        .collect::<Result<_>>()?;
    Ok(StudyTable::new("gamma", vec!["remainder".into()], rows))
}

/// How fast-mode drives scale with the element size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriveRegime {
    /// Projections of the configured Q-Wiener noise.
    #[default]
    Projected,
    /// `q^h_{j,l} = q_l·h` with a fixed decaying `q_l`.
    Scaled,
}

/// Averaged coefficients of `cfg` at element size `h`.
pub fn coefficients_at(cfg: &RunConfig, h: f64, regime: DriveRegime) -> Result<AveragedCoeffs> {
    let c = cfg.at_sweep_value(SweepAxis::H, h)?;
    let grid = c.domain_grid()?;
    let modes = ElementModes::insulated(&grid, 7);
    let stats = match regime {
        DriveRegime::Projected => {
            let spec = c.noise_spec()?;
            let proj = ElementNoiseProjection::new(&spec, &modes, c.noise.normalization)?;
            FastModeStats::new(&spec, &proj, &modes, c.spde.sigma)?
        }
        DriveRegime::Scaled => {
            let (drive, tail) = scaled_drive(&modes);
            FastModeStats::from_drive(&modes, c.spde.sigma, drive, &tail)?
        }
    };
    Ok(AveragedCoeffs::compute(&stats, c.spde.alpha, c.model.reading))
}

/// `max_j |α̂_j − α|` and `max_j Q_j` over element sizes `hs`.
pub fn coefficient_sweep(cfg: &RunConfig, hs: &[f64], regime: DriveRegime) -> Result<StudyTable> {
    require_points(hs)?;
    let rows = hs
        .iter()
        .map(|&h| {
            let c = coefficients_at(cfg, h, regime)?;
            let shift = c.hat_alpha.iter().map(|a| (a - c.alpha).abs()).fold(0.0, f64::max);
            let q = c.deviation.iter().copied().fold(0.0, f64::max);
            Ok(StudyRow {
                value: h,
                abscissa: h,
                metrics: vec![shift, q],
            })
        })
        .collect::<Result<_>>()?;
    Ok(StudyTable::new(
        "h",
        vec!["hat_alpha_shift".into(), "deviation_q".into()],
        rows,
    ))
}

/// Mean over members of the mean-square trace gap between two targets.
pub fn pathwise_gap(out: &EnsembleOutput, a: Target, b: Target) -> Result<Moments> {
    let (ra, rb) = (records(out, a)?, records(out, b)?);
    Ok(ra
        .iter()
        .zip(rb)
        .map(|(x, y)| {
            let n = x.values.len() as f64;
            x.values
                .iter()
                .zip(&y.values)
                .map(|(p, q)| (p - q).powi(2))
                .sum::<f64>()
                / n
        })
        .collect())
}

fn records(out: &EnsembleOutput, t: Target) -> Result<&[MemberRecord]> {
    out.of(t).ok_or_else(|| Error::Format(format!("no records for {t}")))
}

/// Paired weak errors of one target against the reference at each grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakErrors {
    pub target: String,
    /// `E u_j − E u_ref,j`.
    pub mean: Vec<f64>,
    pub mean_ci: Vec<f64>,
    /// `Var u_j − Var u_ref,j`.
    pub variance: Vec<f64>,
    pub variance_ci: Vec<f64>,
    /// Quantile levels and per-point quantile differences.
    pub quantile_levels: Vec<f64>,
    pub quantiles: Vec<Vec<f64>>,
}

impl WeakErrors {
    pub fn max_mean(&self) -> f64 {
        self.mean.iter().fold(0.0, |m, e| m.max(e.abs()))
    }

    pub fn max_variance(&self) -> f64 {
        self.variance.iter().fold(0.0, |m, e| m.max(e.abs()))
    }

    /// Half-width of the CI on the point that attains `max_mean`.
    fn max_mean_ci(&self) -> f64 {
        argmax_abs(&self.mean).map_or(0.0, |j| self.mean_ci[j])
    }

    fn max_variance_ci(&self) -> f64 {
        argmax_abs(&self.variance).map_or(0.0, |j| self.variance_ci[j])
    }
}

fn argmax_abs(v: &[f64]) -> Option<usize> {
    (0..v.len()).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()))
}

const QUANTILE_LEVELS: [f64; 3] = [0.1, 0.5, 0.9];

/// Linear-interpolated empirical quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Weak errors of `target` against `Target::Reference` in `out`. Both
/// moments are estimated from paired per-member differences, so common
/// noise cancels from the confidence intervals.
pub fn weak_errors(out: &EnsembleOutput, target: Target, grid: &DomainGrid) -> Result<WeakErrors> {
    let model: Vec<Vec<f64>> = records(out, target)?.iter().map(|r| r.grid_values(grid)).collect();
    let reference: Vec<Vec<f64>> = records(out, Target::Reference)?
        .iter()
        .map(|r| r.grid_values(grid))
        .collect();
    let m = grid.elements();
    let mut w = WeakErrors {
        target: target.to_string(),
        mean: Vec::with_capacity(m),
        mean_ci: Vec::with_capacity(m),
        variance: Vec::with_capacity(m),
        variance_ci: Vec::with_capacity(m),
        quantile_levels: QUANTILE_LEVELS.to_vec(),
        quantiles: Vec::with_capacity(m),
    };
    for j in 0..m {
        let x: Vec<f64> = model.iter().map(|u| u[j]).collect();
        let y: Vec<f64> = reference.iter().map(|u| u[j]).collect();
        let diff: Moments = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let mx = x.iter().sum::<f64>() / x.len() as f64;
        let my = y.iter().sum::<f64>() / y.len() as f64;
        let spread: Moments = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - mx).powi(2) - (b - my).powi(2))
            .collect();
        let mut xs = x.clone();
        let mut ys = y.clone();
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        w.mean.push(diff.mean());
        w.mean_ci.push(Z95 * diff.std_error());
        w.variance.push(sample_variance(&x) - sample_variance(&y));
        w.variance_ci.push(Z95 * spread.std_error());
        w.quantiles.push(
            QUANTILE_LEVELS
                .iter()
                .map(|&p| quantile(&xs, p) - quantile(&ys, p))
                .collect(),
        );
    }
    Ok(w)
}

fn sample_variance(x: &[f64]) -> f64 {
    x.iter().copied().collect::<Moments>().variance()
}

/// Model weak errors against the reference, with a verdict on holistic
/// versus conventional finite differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub members: usize,
    pub errors: Vec<WeakErrors>,
    /// `Some(true)` when the holistic worst-point mean and variance errors
    /// do not exceed the finite-difference ones beyond their combined CI.
    pub holistic_within_fd: Option<bool>,
}

impl ComparisonReport {
    pub fn get(&self, target: Target) -> Option<&WeakErrors> {
        let name = target.to_string();
        self.errors.iter().find(|e| e.target == name)
    }
}

fn comparison_targets(cfg: &RunConfig) -> Vec<Target> {
    let mut targets = vec![Target::Reference];
    targets.extend(cfg.model.kinds.iter().map(|&k| Target::Model(k)));
    if cfg.ensemble.ablation {
        targets.push(Target::Ablated(Ablation::NoStencil));
        targets.push(Target::Ablated(Ablation::NoDeviation));
    }
    targets
}

/// Runs the reference and every configured model on common paths.
pub fn compare_models(cfg: &RunConfig, cache: Option<&std::path::Path>) -> Result<ComparisonReport> {
    let ens = Ensemble::new(cfg.clone(), comparison_targets(cfg))?;
    let out = ens.run(cache)?;
    report(&out, &ens.setup().grid)
}

fn report(out: &EnsembleOutput, grid: &DomainGrid) -> Result<ComparisonReport> {
    let errors = out
        .targets
        .iter()
        .filter(|&&t| t != Target::Reference)
        .map(|&t| weak_errors(out, t, grid))
        .collect::<Result<Vec<_>>>()?;
    let find = |k: crate::models::ModelKind| errors.iter().find(|e| e.target == k.name());
    let holistic_within_fd = match (
        find(crate::models::ModelKind::Holistic),
        find(crate::models::ModelKind::ConventionalFd),
    ) {
        (Some(h), Some(f)) => Some(
            h.max_mean() <= f.max_mean() + h.max_mean_ci().hypot(f.max_mean_ci())
                && h.max_variance() <= f.max_variance() + h.max_variance_ci().hypot(f.max_variance_ci()),
        ),
        _ => None,
    };
    Ok(ComparisonReport {
        members: out.records.first().map_or(0, Vec::len),
        errors,
        holistic_within_fd,
    })
}

/// Error metrics along one sweep axis:
/// - `gamma`: mean-square trace gap between the coupled system and the
///   reference, fitted against `1 − γ`;
/// - `h`, `dt`: worst-point weak mean and variance errors of every
///   configured model against the reference.
pub fn convergence_study(cfg: &RunConfig, axis: SweepAxis, values: &[f64]) -> Result<StudyTable> {
    require_points(values)?;
    match axis {
        SweepAxis::Gamma => {
            let rows = values
                .iter()
                .map(|&gamma| {
                    let c = cfg.at_sweep_value(axis, gamma)?;
                    let ens = Ensemble::new(c, vec![Target::Reference, Target::Coupled])?;
                    let gap = pathwise_gap(&ens.run(None)?, Target::Coupled, Target::Reference)?;
                    Ok(StudyRow {
                        value: gamma,
                        abscissa: 1.0 - gamma,
                        metrics: vec![gap.mean(), gap.std_error()],
                    })
                })
                .collect::<Result<_>>()?;
            Ok(StudyTable::new(
                "gamma",
                vec!["pathwise_gap".into(), "pathwise_gap_se".into()],
                rows,
            ))
        }
        SweepAxis::H | SweepAxis::Dt => {
            let targets: Vec<Target> = cfg.model.kinds.iter().map(|&k| Target::Model(k)).collect();
            let columns = targets
                .iter()
                .flat_map(|t| [format!("{t}_mean_error"), format!("{t}_variance_error")])
                .collect();
            let rows = values
                .iter()
                .map(|&v| {
                    let c = cfg.at_sweep_value(axis, v)?;
                    let mut all = vec![Target::Reference];
                    all.extend(&targets);
                    let ens = Ensemble::new(c, all)?;
                    let out = ens.run(None)?;
                    let mut metrics = Vec::with_capacity(2 * targets.len());
                    for &t in &targets {
                        let w = weak_errors(&out, t, &ens.setup().grid)?;
                        metrics.push(w.max_mean());
                        metrics.push(w.max_variance());
                    }
                    Ok(StudyRow {
                        value: v,
                        abscissa: v,
                        metrics,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(StudyTable::new(axis.name(), columns, rows))
        }
    }
}
