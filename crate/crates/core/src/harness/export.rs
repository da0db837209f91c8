use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::harness::ensemble::write_atomic;
use crate::harness::stats::EnsembleStats;
use crate::harness::study::{ComparisonReport, StudyTable};

pub const MANIFEST_NAME: &str = "manifest.json";

/// Everything needed to regenerate a run's outputs; deliberately free of
/// timestamps and host details.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: RunConfig,
    pub files: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Result<Self> {
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            command: command.to_owned(),
            config_hash: cfg.hash()?,
            seed: cfg.ensemble.seed,
            config: cfg.clone(),
            files: Vec::new(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_vec_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        write_atomic(&dir.join(MANIFEST_NAME), &text)
    }
}

/// Header row then data rows. Numbers use `f64` `Display`: plain decimals
/// that parse back exactly.
pub fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = Vec::new();
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::Format(format!(
                "row has {} fields, header has {}",
                row.len(),
                header.len()
            )));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    write_atomic(path, &out)
}

fn num(x: f64) -> String {
    x.to_string()
}

/// `value,abscissa,<metrics>` rows to `path`; fits go to `order_path` as
/// `metric,order,intercept,points`.
pub fn write_study(table: &StudyTable, path: &Path, order_path: &Path) -> Result<()> {
    let mut header = vec![table.axis.clone(), "abscissa".to_owned()];
    header.extend(table.columns.iter().cloned());
    write_csv(
        path,
        &header,
        table.rows.iter().map(|r| {
            let mut row = vec![num(r.value), num(r.abscissa)];
            row.extend(r.metrics.iter().copied().map(num));
            row
        }),
    )?;
    write_csv(
        order_path,
        &["metric", "order", "intercept", "points"].map(String::from),
        table.columns.iter().zip(&table.fits).map(|(c, f)| match f {
            Some(f) => vec![c.clone(), num(f.order), num(f.intercept), f.points.to_string()],
            None => vec![c.clone(), "nan".into(), "nan".into(), "0".into()],
        }),
    )
}

pub fn write_stats(stats: &EnsembleStats, path: &Path) -> Result<()> {
    write_csv(
        path,
        &["observable", "mean", "variance", "std_error", "count"].map(String::from),
        stats.observables.iter().map(|o| {
            vec![
                o.name.clone(),
                num(o.mean),
                num(o.variance),
                num(o.std_error),
                o.count.to_string(),
            ]
        }),
    )
}

/// One row per (model, grid point).
pub fn write_comparison(report: &ComparisonReport, path: &Path) -> Result<()> {
    let levels = report
        .errors
        .first()
        .map_or_else(Vec::new, |e| e.quantile_levels.clone());
    let mut header: Vec<String> = [
        "model",
        "point",
        "mean_error",
        "mean_ci",
        "variance_error",
        "variance_ci",
    ]
    .map(String::from)
    .to_vec();
    header.extend(levels.iter().map(|p| format!("q{p}_error")));
    let rows = report.errors.iter().flat_map(|e| {
        (0..e.mean.len()).map(move |j| {
            let mut row = vec![
                e.target.clone(),
                j.to_string(),
                num(e.mean[j]),
                num(e.mean_ci[j]),
                num(e.variance[j]),
                num(e.variance_ci[j]),
            ];
            row.extend(e.quantiles[j].iter().copied().map(num));
            row
        })
    });
    write_csv(path, &header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_rejects_ragged_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let header = ["a", "b"].map(String::from);
        write_csv(&p, &header, vec![vec![num(0.1), num(-2.5e-7)]]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "a,b\n0.1,-0.00000025\n");
        assert!(write_csv(&p, &header, vec![vec!["1".into()]]).is_err());
    }

    #[test]
    fn manifest_is_stable_across_writes() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest::new("coeffs", &RunConfig::default()).unwrap();
        m.write(dir.path()).unwrap();
        let first = std::fs::read(dir.path().join(MANIFEST_NAME)).unwrap();
        m.write(dir.path()).unwrap();
        assert_eq!(first, std::fs::read(dir.path().join(MANIFEST_NAME)).unwrap());
        let back: RunManifest = serde_json::from_slice(&first).unwrap();
        assert_eq!(back, m);
    }
}
