//! Monte-Carlo ensembles, statistics, sweeps and model comparisons, plus the
//! run configuration and export layer behind the command-line tool.

pub mod config;
pub mod ensemble;
pub mod export;
pub mod stats;
pub mod study;

pub use config::{RunConfig, SweepAxis, SweepSection};
pub use ensemble::{Ablation, Ensemble, EnsembleOutput, MemberRecord, Setup, Target};
pub use export::{RunManifest, MANIFEST_NAME};
pub use stats::{fit_order, EnsembleStats, Moments, ObservableStats, OrderFit};
pub use study::{
    coefficient_sweep, coefficients_at, compare_models, convergence_study, eigen_sweep, expansion_sweep, pathwise_gap,
    weak_errors, ComparisonReport, DriveRegime, StudyRow, StudyTable, WeakErrors,
};
