use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::averaging::{AveragedCoeffs, FastModeStats, MartingaleDriver};
use crate::dynamics::{CoupledSolver, ModelTrajectory, ReferenceSolver, SpdeConfig};
use crate::error::{Error, Result};
use crate::grid::DomainGrid;
use crate::harness::config::RunConfig;
use crate::harness::stats::EnsembleStats;
use crate::models::{DiscreteModel, MemberPaths, ModelKind, ModelNoise, ModelOptions};
use crate::noise::{channel, stream_id, ElementNoiseProjection, QWienerSpec};
use crate::spectral::{expand_localized_modes, CoupledOperator, EigenSystem, ElementModes};

/// Highest insulated level whose statistics enter the averaged coefficients.
const FAST_LEVELS: usize = 7;

/// Trajectory stride that keeps only the initial and final states.
pub const END_ONLY: usize = usize::MAX;

/// Holistic-model ablations used by model comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    NoStencil,
    NoDeviation,
}

/// One solver driven by every member's paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Reference,
    Coupled,
    Model(ModelKind),
    Ablated(Ablation),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Reference => f.write_str("reference"),
            Target::Coupled => f.write_str("coupled"),
            Target::Model(k) => f.write_str(k.name()),
            Target::Ablated(Ablation::NoStencil) => f.write_str("holistic-no-stencil"),
            Target::Ablated(Ablation::NoDeviation) => f.write_str("holistic-no-deviation"),
        }
    }
}

/// End state of one member on one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberRecord {
    pub config_hash: String,
    pub target: Target,
    pub member: usize,
    pub seed: u64,
    pub time: f64,
    /// Right-half trace for the reference and coupled solvers, grid values
    /// for the discrete models.
    pub values: Vec<f64>,
}

impl MemberRecord {
    /// Values at `X_j`; trace point `j·N` sits on `X_j`.
    pub fn grid_values(&self, grid: &DomainGrid) -> Vec<f64> {
        match self.target {
            Target::Reference | Target::Coupled => {
                (0..grid.elements()).map(|j| self.values[j * grid.subgrid()]).collect()
            }
            _ => self.values.clone(),
        }
    }
}

/// Immutable tables shared by every member.
pub struct Setup {
    pub grid: DomainGrid,
    pub spec: QWienerSpec,
    pub spde: SpdeConfig,
    pub stats: FastModeStats,
    pub coeffs: AveragedCoeffs,
    pub noise: ModelNoise,
    pub reference: ReferenceSolver,
    coupled: Option<CoupledSolver>,
    models: Vec<(Target, DiscreteModel)>,
}

impl fmt::Debug for Setup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Setup")
            .field("grid", &self.grid)
            .field(
                "targets",
                &self.models.iter().map(|(t, _)| t.to_string()).collect::<Vec<_>>(),
            )
            .finish()
    }
}

impl Setup {
    /// Builds the solvers for `targets`; the coupled solver and the limit
    /// driver are assembled only when asked for.
    pub fn new(cfg: &RunConfig, targets: &[Target]) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.domain_grid()?;
        let spec = cfg.noise_spec()?;
        let spde = cfg.spde_config();
        let modes = ElementModes::insulated(&grid, FAST_LEVELS);
        let proj = ElementNoiseProjection::new(&spec, &modes, cfg.noise.normalization)?;
        let stats = FastModeStats::new(&spec, &proj, &modes, spde.sigma)?;
        let coeffs = AveragedCoeffs::compute(&stats, spde.alpha, cfg.model.reading);
        let options = cfg.model.options;
        // Limit terms vanish at full coupling, where no slow cluster separates.
        let wants_limit =
            targets.contains(&Target::Model(ModelKind::GammaReduced)) && !options.truncate && spde.gamma < 1.0;
        let limit = if wants_limit {
            let op = CoupledOperator::assemble(&grid, spde.gamma)?;
            let eig = EigenSystem::solve(&op, 2 * grid.elements())?;
            let expansions = expand_localized_modes(&eig)?;
            Some(MartingaleDriver::new(&stats, &expansions, cfg.model.limit_scaling)?)
        } else {
            None
        };
        let noise = ModelNoise::new(&spec, &grid, cfg.noise.normalization, limit)?;
        let reference = ReferenceSolver::new(&spec, cfg.reference_points(), &spde)?;
        let coupled = if targets.contains(&Target::Coupled) {
            Some(CoupledSolver::new(&grid, &spec, &spde)?)
        } else {
            None
        };
        let mut models = Vec::new();
        for &t in targets {
            let (kind, opts) = match t {
                Target::Model(k) => (k, options),
                Target::Ablated(Ablation::NoStencil) => (
                    ModelKind::Holistic,
                    ModelOptions {
                        stencil: false,
                        ..options
                    },
                ),
                Target::Ablated(Ablation::NoDeviation) => (
                    ModelKind::Holistic,
                    ModelOptions {
                        deviation: false,
                        ..options
                    },
                ),
                _ => continue,
            };
            models.push((t, DiscreteModel::new(kind, &grid, &spde, coeffs.clone(), opts)?));
        }
        Ok(Self {
            grid,
            spec,
            spde,
            stats,
            coeffs,
            noise,
            reference,
            coupled,
            models,
        })
    }

    pub fn paths(&self, seed: u64, member: usize) -> Result<MemberPaths> {
        MemberPaths::sample(&self.spec, &self.noise, &self.spde.times(), seed, member as u64)
    }

    /// Trajectory of one target: fine-grid states for the reference,
    /// right-half traces for the coupled system, grid values for models.
    pub fn trajectory(&self, target: Target, paths: &MemberPaths, stride: usize) -> Result<ModelTrajectory> {
        match target {
            Target::Reference => self.reference.run(&paths.global, stride),
            Target::Coupled => self
                .coupled
                .as_ref()
                .ok_or_else(|| Error::Config(vec!["coupled solver was not set up".into()]))?
                .run(&paths.global, stride),
            _ => {
                let model = self
                    .models
                    .iter()
                    .find(|(t, _)| *t == target)
                    .map(|(_, m)| m)
                    .ok_or_else(|| Error::Config(vec![format!("target {target} was not set up")]))?;
                model.run(&self.spde.initial.on_grid(&self.grid), &self.noise, paths, stride)
            }
        }
    }

    /// All targets of `member`, driven by one shared set of paths.
    fn run_member(&self, targets: &[Target], seed: u64, member: usize, hash: &str) -> Result<Vec<MemberRecord>> {
        let paths = self.paths(seed, member)?;
        targets
            .iter()
            .map(|&target| {
                let traj = self.trajectory(target, &paths, END_ONLY)?;
                let end = last(traj.states())?;
                let values = match target {
                    Target::Reference => self.reference.on_trace(end, &self.grid)?,
                    _ => end.clone(),
                };
                Ok(MemberRecord {
                    config_hash: hash.to_owned(),
                    target,
                    member,
                    seed,
                    time: *traj.times().last().unwrap_or(&0.0),
                    values,
                })
            })
            .collect()
    }
}

fn last(states: &[Vec<f64>]) -> Result<&Vec<f64>> {
    states.last().ok_or_else(|| Error::Format("empty trajectory".into()))
}

/// Member records of every target, in member order.
#[derive(Debug, Clone)]
pub struct EnsembleOutput {
    pub targets: Vec<Target>,
    pub records: Vec<Vec<MemberRecord>>,
}

impl EnsembleOutput {
    pub fn of(&self, target: Target) -> Option<&[MemberRecord]> {
        let i = self.targets.iter().position(|&t| t == target)?;
        Some(&self.records[i])
    }

    /// Grid-value moments of one target: observables `u_j` and `u_j^2`.
    pub fn grid_stats(&self, target: Target, grid: &DomainGrid) -> Result<EnsembleStats> {
        let records = self
            .of(target)
            .ok_or_else(|| Error::Format(format!("no records for {target}")))?;
        let m = grid.elements();
        let names: Vec<String> = (0..m)
            .map(|j| format!("u_{j}"))
            .chain((0..m).map(|j| format!("u_{j}^2")))
            .collect();
        let samples: Vec<Vec<f64>> = records
            .iter()
            .map(|r| {
                let u = r.grid_values(grid);
                let sq: Vec<f64> = u.iter().map(|v| v * v).collect();
                u.into_iter().chain(sq).collect()
            })
            .collect();
        EnsembleStats::from_samples(&names, &samples)
    }
}

/// Runs `R` members of a configuration, optionally resuming from and
/// flushing to per-member files.
#[derive(Debug)]
pub struct Ensemble {
    cfg: RunConfig,
    targets: Vec<Target>,
    setup: Setup,
    hash: String,
}

impl Ensemble {
    pub fn new(cfg: RunConfig, targets: Vec<Target>) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::Config(vec!["an ensemble needs at least one target".into()]));
        }
        let setup = Setup::new(&cfg, &targets)?;
        let hash = cfg.hash()?;
        Ok(Self {
            cfg,
            targets,
            setup,
            hash,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn setup(&self) -> &Setup {
        &self.setup
    }

    pub fn targets(&self) -> &[Target] {
        &self.targets
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    /// Replays one member; bitwise equal to its record in a full run.
    pub fn run_member(&self, member: usize) -> Result<Vec<MemberRecord>> {
        let seed = self.cfg.ensemble.seed;
        self.setup
            .run_member(&self.targets, seed, member, &self.hash)
            .map_err(|e| Error::Member {
                member,
                seed,
                stream: stream_id(member as u64, channel::GLOBAL),
                source: Box::new(e),
            })
    }

    /// All members on the current rayon pool. With `cache`, finished members
    /// are read back from `cache/members/{target}/{member}.json` when their
    /// config hash matches, and new ones are written there.
    pub fn run(&self, cache: Option<&Path>) -> Result<EnsembleOutput> {
        let r = self.cfg.ensemble.members;
        if let Some(dir) = cache {
            for t in &self.targets {
                std::fs::create_dir_all(member_dir(dir, *t))?;
            }
        }
        let per_member: Vec<Vec<MemberRecord>> = (0..r)
            .into_par_iter()
            .map(|member| {
                if let Some(done) = cache.and_then(|dir| self.load_member(dir, member)) {
                    return Ok(done);
                }
                let records = self.run_member(member)?;
                if let Some(dir) = cache {
                    for rec in &records {
                        write_atomic(
                            &member_path(dir, rec.target, member),
                            &serde_json::to_vec(rec).map_err(json)?,
                        )?;
                    }
                }
                Ok(records)
            })
            .collect::<Result<_>>()?;
        let mut records: Vec<Vec<MemberRecord>> = vec![Vec::with_capacity(r); self.targets.len()];
        for member in per_member {
            for (i, rec) in member.into_iter().enumerate() {
                records[i].push(rec);
            }
        }
        Ok(EnsembleOutput {
            targets: self.targets.clone(),
            records,
        })
    }

    fn load_member(&self, dir: &Path, member: usize) -> Option<Vec<MemberRecord>> {
        self.targets
            .iter()
            .map(|&t| {
                let bytes = std::fs::read(member_path(dir, t, member)).ok()?;
                let rec: MemberRecord = serde_json::from_slice(&bytes).ok()?;
                (rec.config_hash == self.hash && rec.target == t && rec.member == member).then_some(rec)
            })
            .collect()
    }
}

fn json(e: serde_json::Error) -> Error {
    Error::Format(e.to_string())
}

fn member_dir(dir: &Path, target: Target) -> PathBuf {
    dir.join("members").join(target.to_string())
}

fn member_path(dir: &Path, target: Target, member: usize) -> PathBuf {
    member_dir(dir, target).join(format!("{member:05}.json"))
}

/// Write-then-rename so an interrupted run never leaves a torn record.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.grid.subgrid = 8;
        cfg.noise.modes = 16;
        cfg.spde.dt = Some(1e-3);
        cfg.spde.horizon = 0.02;
        cfg.ensemble.members = 4;
        cfg.ensemble.reference_points = Some(64);
        cfg
    }

    #[test]
    fn single_member_matches_direct_stepping() {
        let mut cfg = small();
        cfg.ensemble.members = 1;
        let ens = Ensemble::new(cfg.clone(), vec![Target::Model(ModelKind::Holistic)]).unwrap();
        let out = ens.run(None).unwrap();
        let s = ens.setup();
        let model = DiscreteModel::new(
            ModelKind::Holistic,
            &s.grid,
            &s.spde,
            s.coeffs.clone(),
            ModelOptions::default(),
        )
        .unwrap();
        let paths = MemberPaths::sample(&s.spec, &s.noise, &s.spde.times(), cfg.ensemble.seed, 0).unwrap();
        let direct = model
            .run(&s.spde.initial.on_grid(&s.grid), &s.noise, &paths, 0)
            .unwrap();
        assert_eq!(&out.records[0][0].values, direct.last().unwrap());
    }

    #[test]
    fn runs_resume_from_flushed_members() {
        let dir = tempfile::tempdir().unwrap();
        let targets = vec![Target::Reference, Target::Model(ModelKind::ConventionalFd)];
        let ens = Ensemble::new(small(), targets).unwrap();
        let first = ens.run(Some(dir.path())).unwrap();
        let stale = member_path(dir.path(), Target::Reference, 2);
        let mut rec: MemberRecord = serde_json::from_slice(&std::fs::read(&stale).unwrap()).unwrap();
        rec.values[0] = 1e9;
        std::fs::write(&stale, serde_json::to_vec(&rec).unwrap()).unwrap();
        // A matching hash is trusted, a foreign one is recomputed.
        assert_eq!(ens.run(Some(dir.path())).unwrap().records[0][2].values[0], 1e9);
        rec.config_hash = "other".into();
        std::fs::write(&stale, serde_json::to_vec(&rec).unwrap()).unwrap();
        assert_eq!(ens.run(Some(dir.path())).unwrap().records, first.records);
        assert_eq!(
            ens.run_member(3).unwrap(),
            vec![first.records[0][3].clone(), first.records[1][3].clone()]
        );
    }
}
