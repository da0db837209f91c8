use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use overlap_sde::harness::export::{write_comparison, write_csv, write_stats, write_study};
use overlap_sde::harness::{
    coefficient_sweep, coefficients_at, compare_models, convergence_study, eigen_sweep, expansion_sweep, DriveRegime,
    Ensemble, RunConfig, RunManifest, StudyTable, SweepAxis, SweepSection, Target,
};
use overlap_sde::{Error, Result};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(version, about = "Overlapping-element SPDE discretization toolkit")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Sweep as AXIS=v1,v2,... with AXIS one of gamma, h, dt.
    #[arg(long, global = true)]
    sweep: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Regime {
    Projected,
    Scaled,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ground rate and first fast rate over a coupling sweep.
    EigSweep,
    /// Remainder of the second-order slow-mode expansion over a coupling sweep.
    ExpansionCheck,
    /// Averaged coefficients per element, or their scaling over an h sweep.
    Coeffs {
        #[arg(long, value_enum, default_value = "projected")]
        regime: Regime,
    },
    /// Ensemble of the reference and configured models; moments per target.
    Simulate,
    /// Weak errors of every configured model against the reference.
    Compare,
    /// Error metrics and fitted orders along the sweep axis.
    Converge,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::EigSweep => "eig-sweep",
            Command::ExpansionCheck => "expansion-check",
            Command::Coeffs { .. } => "coeffs",
            Command::Simulate => "simulate",
            Command::Compare => "compare",
            Command::Converge => "converge",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Sweep(_) => EXIT_CONFIG,
        e if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_FAILURE,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.ensemble.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    if let Some(spec) = &cli.sweep {
        cfg.sweep = Some(SweepSection::parse(spec)?);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(vec![format!("cannot start {n} threads: {e}")]))?;
    }
    let out = cfg.output.clone();
    std::fs::create_dir_all(&out)?;
    let mut manifest = RunManifest::new(cli.command.name(), &cfg)?;
    let files = match &cli.command {
        Command::EigSweep => {
            let gammas = sweep_values(&cfg, SweepAxis::Gamma, &[1e-3, 3e-3, 1e-2, 3e-2, 1e-1])?;
            table(eigen_sweep(&cfg.domain_grid()?, &gammas)?, &out, "eig_sweep")?
        }
        Command::ExpansionCheck => {
            let gammas = sweep_values(&cfg, SweepAxis::Gamma, &[0.2, 0.1, 0.05, 0.025])?;
            table(expansion_sweep(&cfg.domain_grid()?, &gammas)?, &out, "expansion_check")?
        }
        Command::Coeffs { regime } => {
            let regime = match regime {
                Regime::Projected => DriveRegime::Projected,
                Regime::Scaled => DriveRegime::Scaled,
            };
            match &cfg.sweep {
                Some(s) if s.axis == SweepAxis::H => {
                    table(coefficient_sweep(&cfg, &s.values, regime)?, &out, "coeffs_sweep")?
                }
                Some(s) => return Err(Error::Sweep(format!("coeffs sweeps h only, got {}", s.axis.name()))),
                None => coeffs(&cfg, regime, &out)?,
            }
        }
        Command::Simulate => simulate(&cfg, &out)?,
        Command::Compare => {
            let report = compare_models(&cfg, Some(&out))?;
            write_comparison(&report, &out.join("comparison.csv"))?;
            for e in &report.errors {
                println!(
                    "{}: max |mean error| {:.3e}, max |variance error| {:.3e}",
                    e.target,
                    e.max_mean(),
                    e.max_variance()
                );
            }
            if let Some(v) = report.holistic_within_fd {
                println!("holistic within finite-difference error (95% CI): {v}");
            }
            let json = serde_json::to_vec_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
            std::fs::write(out.join("comparison.json"), json)?;
            vec!["comparison.csv".into(), "comparison.json".into()]
        }
        Command::Converge => {
            let s = cfg
                .sweep
                .clone()
                .ok_or_else(|| Error::Sweep("converge needs --sweep or a [sweep] section".into()))?;
            table(convergence_study(&cfg, s.axis, &s.values)?, &out, "convergence")?
        }
    };
    manifest.files = files;
    manifest.write(&out)
}

fn sweep_values(cfg: &RunConfig, axis: SweepAxis, default: &[f64]) -> Result<Vec<f64>> {
    match &cfg.sweep {
        Some(s) if s.axis == axis => Ok(s.values.clone()),
        Some(s) => Err(Error::Sweep(format!(
            "expected a {} sweep, got {}",
            axis.name(),
            s.axis.name()
        ))),
        None => Ok(default.to_vec()),
    }
}

fn table(t: StudyTable, out: &Path, stem: &str) -> Result<Vec<String>> {
    let data = format!("{stem}.csv");
    let orders = format!("{stem}_orders.csv");
    write_study(&t, &out.join(&data), &out.join(&orders))?;
    for (c, f) in t.columns.iter().zip(&t.fits) {
        match f {
            Some(f) => println!("{c}: fitted order {:.3} over {} points", f.order, f.points),
            None => println!("{c}: no order fit (fewer than 3 positive points)"),
        }
    }
    Ok(vec![data, orders])
}

fn coeffs(cfg: &RunConfig, regime: DriveRegime, out: &Path) -> Result<Vec<String>> {
    let c = coefficients_at(cfg, cfg.spacing(), regime)?;
    let header = [
        "element",
        "hat_alpha",
        "deviation_q",
        "second_moment",
        "hat_alpha_bound",
        "deviation_bound",
    ]
    .map(String::from);
    let rows = (0..c.elements()).map(|j| {
        vec![
            j.to_string(),
            c.hat_alpha[j].to_string(),
            c.deviation[j].to_string(),
            c.second_moment[j].to_string(),
            c.hat_alpha_bound[j].to_string(),
            c.deviation_bound[j].to_string(),
        ]
    });
    write_csv(&out.join("coeffs.csv"), &header, rows)?;
    println!(
        "h = {}: max |hat_alpha - alpha| {:.3e}, max Q {:.3e}",
        c.h,
        max_abs_shift(&c.hat_alpha, c.alpha),
        max_abs_shift(&c.deviation, 0.0)
    );
    Ok(vec!["coeffs.csv".into()])
}

fn max_abs_shift(v: &[f64], by: f64) -> f64 {
    v.iter().fold(0.0, |m, x| m.max((x - by).abs()))
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let mut targets = vec![Target::Reference];
    targets.extend(cfg.model.kinds.iter().map(|&k| Target::Model(k)));
    let ens = Ensemble::new(cfg.clone(), targets.clone())?;
    let results = ens.run(Some(out))?;
    let grid = ens.setup().grid;
    let mut files = Vec::new();
    for &t in &targets {
        let name = format!("stats_{t}.csv");
        let stats = results.grid_stats(t, &grid)?;
        write_stats(&stats, &out.join(&name))?;
        files.push(name);
        if cfg.ensemble.stride > 0 {
            let paths = ens.setup().paths(cfg.ensemble.seed, 0)?;
            let traj = ens.setup().trajectory(t, &paths, cfg.ensemble.stride)?;
            let name = format!("trajectory_{t}.csv");
            traj.write_csv(BufWriter::new(File::create(out.join(&name))?))?;
            files.push(name);
        }
    }
    println!(
        "{} members x {} targets written to {}",
        cfg.ensemble.members,
        targets.len(),
        out.display()
    );
    Ok(files)
}
