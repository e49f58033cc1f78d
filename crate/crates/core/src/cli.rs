//! The `thinhom` command line: configuration-driven checks, tabulation and
//! experiments with fingerprinted, reproducible output files.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{snap_point, unit_normal, OutputFormat, RunConfig};
use crate::error::{Error, Result};
use crate::functional::{gamma_experiment, ScenarioSpec};
use crate::hypotheses::check_hypotheses;
use crate::integrand::IntegrandSpec;
use crate::jump::{check_theta_properties, theta, theta_grid, JumpResult};
use crate::manifold::ManifoldSpec;
use crate::provenance::config_hash;
use crate::table::{check_density_properties, tabulate_density, DensityTable, JumpTable};
use crate::vtk::write_structured;
use crate::{Vec2, Vec3};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_VIOLATION: i32 = 2;
pub const EXIT_NONCONVERGENT: i32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
    Both,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Json => OutputFormat::Json,
            FormatArg::Both => OutputFormat::Both,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "thinhom", version, about = "Effective densities of thin periodic films with manifold constraints")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML, or JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, env = "THINHOM_THREADS")]
    pub threads: Option<usize>,
    /// Seed, overriding the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Check the integrand hypotheses and the manifold.
    Check,
    /// Tabulate the bulk density and its recession function.
    Bulk,
    /// Compute jump densities, optionally with structural checks.
    Jump,
    /// Run a Γ-convergence experiment.
    Gamma,
    /// Print builtins, thread count and the configuration fingerprint.
    Info,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Bulk => "bulk",
            Command::Jump => "jump",
            Command::Gamma => "gamma",
            Command::Info => "info",
        }
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    config_hash: &'a str,
    config: &'a RunConfig,
    result: T,
}

struct Run {
    cfg: RunConfig,
    hash: String,
    manifold: ManifoldSpec,
    integrand: IntegrandSpec,
    out: PathBuf,
    format: OutputFormat,
}

impl Run {
    fn write_json<T: Serialize>(&self, command: Command, stem: &str, result: T) -> Result<()> {
        if !self.format.json() {
            return Ok(());
        }
        let env =
            Envelope { command: command.name(), version: env!("CARGO_PKG_VERSION"), config_hash: &self.hash, config: &self.cfg, result };
        let mut w = BufWriter::new(File::create(self.out.join(format!("{stem}.json")))?);
        serde_json::to_writer_pretty(&mut w, &env)?;
        std::io::Write::write_all(&mut w, b"\n")?;
        Ok(())
    }

    fn csv_file(&self, stem: &str) -> Result<Option<BufWriter<File>>> {
        if !self.format.csv() {
            return Ok(None);
        }
        Ok(Some(BufWriter::new(File::create(self.out.join(format!("{stem}.csv")))?)))
    }

    fn vtk_dir(&self) -> Result<Option<PathBuf>> {
        if !self.cfg.output.vtk {
            return Ok(None);
        }
        let dir = self.out.join("vtk");
        std::fs::create_dir_all(&dir)?;
        Ok(Some(dir))
    }
}

/// Parse arguments and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let _ = e.print();
            match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            }
        }
    }
}

pub fn run(cli: &Cli) -> i32 {
    let threads = cli.threads.unwrap_or(0);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {threads} worker threads: {e}");
            return EXIT_CONFIG;
        }
    };
    pool.install(|| match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::HypothesisViolation(_) | Error::PropertyViolation(_) | Error::GrowthViolation(_) => EXIT_VIOLATION,
                Error::NonConvergent { .. } => EXIT_NONCONVERGENT,
                // inputs the configuration should not have produced
                _ => EXIT_CONFIG,
            }
        }
    })
}

fn prepare(cli: &Cli) -> Result<Run> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(f) = cli.format {
        cfg.output.format = f.into();
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    let (manifold, integrand) = cfg.validate()?;
    let out = std::mem::take(&mut cfg.output.dir);
    let hash = config_hash(&cfg)?;
    let format = cfg.output.format;
    Ok(Run { cfg, hash, manifold, integrand, out, format })
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let run = prepare(cli)?;
    if cli.command == Command::Info {
        return info(&run);
    }
    std::fs::create_dir_all(&run.out)?;
    match cli.command {
        Command::Check => cmd_check(&run),
        Command::Bulk => cmd_bulk(&run),
        Command::Jump => cmd_jump(&run),
        Command::Gamma => cmd_gamma(&run),
        Command::Info => unreachable!(),
    }
}

fn info(run: &Run) -> Result<i32> {
    println!("thinhom {}", env!("CARGO_PKG_VERSION"));
    println!("manifolds: sphere, circle, torus(major, minor), implicit(ellipsoid | torus)");
    println!("integrands: norm, smooth-linear, two-phase(a1, a2), oscillatory(c0, c1), quadratic");
    println!("scenarios: constant, single-wall, affine-tangent");
    println!("threads: {}", rayon::current_num_threads());
    println!("manifold: {}", run.manifold.kind().name());
    println!("integrand: {}", run.integrand.tag());
    println!("config hash: {}", run.hash);
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct CheckResult<'a> {
    passed: bool,
    hypotheses: &'a crate::hypotheses::HypothesisReport,
    manifold: &'a crate::manifold::ManifoldValidation,
}

fn cmd_check(run: &Run) -> Result<i32> {
    let report = check_hypotheses(&run.integrand, Some(&run.manifold), &run.cfg.check)?;
    let validation = run.manifold.validate();
    let passed = report.passed() && validation.passed();
    run.write_json(Command::Check, "check", CheckResult { passed, hypotheses: &report, manifold: &validation })?;
    if let Some(f) = run.csv_file("check")? {
        let mut w = csv::Writer::from_writer(f);
        let err = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
        w.write_record(["quantity", "value", "provenance"]).map_err(err)?;
        let rows = [
            ("samples", report.samples.to_string()),
            ("periodicity_residual", report.periodicity_residual.to_string()),
            ("growth_violations", report.growth_violations.to_string()),
            ("alpha_empirical", report.alpha_empirical.to_string()),
            ("beta_empirical", report.beta_empirical.to_string()),
            ("lipschitz_quotient", report.lipschitz_quotient.to_string()),
            ("recession_gap_ratio", report.recession_gap_ratio.to_string()),
            ("homogeneity_residual", report.homogeneity_residual.to_string()),
            ("manifold_components", validation.components.to_string()),
            ("manifold_uniqueness_failures", validation.uniqueness_failures.to_string()),
            ("passed", passed.to_string()),
        ];
        for (k, v) in rows {
            w.write_record([k, v.as_str(), run.hash.as_str()]).map_err(err)?;
        }
        w.flush()?;
    }
    for v in report.violations.iter().chain(&validation.issues) {
        eprintln!("{v}");
    }
    Ok(if passed { EXIT_OK } else { EXIT_VIOLATION })
}

#[derive(Serialize)]
struct BulkResult<'a> {
    table: &'a DensityTable,
    properties: Option<&'a crate::table::DensityPropertyReport>,
}

fn cmd_bulk(run: &Run) -> Result<i32> {
    let g = &run.cfg.grids.bulk;
    let s_points = g.s_points.iter().map(|p| snap_point(&run.manifold, *p)).collect::<Result<Vec<Vec3>>>()?;
    let mut table = tabulate_density(&run.manifold, &run.integrand, &s_points, &g.xi, &run.cfg.cell, g.recession)?;
    table.provenance = Some(run.hash.clone());
    let properties = match &g.properties {
        Some(opts) => Some(check_density_properties(&run.manifold, &run.integrand, &table, &run.cfg.cell, opts)?),
        None => None,
    };
    run.write_json(Command::Bulk, "bulk", BulkResult { table: &table, properties: properties.as_ref() })?;
    if let Some(f) = run.csv_file("bulk")? {
        table.write_csv(f)?;
    }
    for e in table.entries.iter().filter(|e| !e.flags.is_empty()) {
        eprintln!("entry ({}, {}): {}", e.s_index, e.xi_index, e.flags.join(";"));
    }
    if let Some(p) = &properties {
        for v in &p.violations {
            eprintln!("{v}");
        }
    }
    Ok(if properties.as_ref().is_some_and(|p| !p.passed()) {
        EXIT_VIOLATION
    } else if table.entries.iter().any(|e| !e.ok() || !e.converged) {
        EXIT_NONCONVERGENT
    } else {
        EXIT_OK
    })
}

#[derive(Serialize)]
struct JumpOutput<'a> {
    table: &'a JumpTable,
    results: &'a [JumpResult],
    properties: Option<&'a crate::jump::ThetaPropertyReport>,
}

fn cmd_jump(run: &Run) -> Result<i32> {
    let g = &run.cfg.grids.jump;
    let m = &run.manifold;
    let pairs = g
        .pairs
        .iter()
        .map(|p| Ok((snap_point(m, p.a)?, snap_point(m, p.b)?, unit_normal(p.nu)?)))
        .collect::<Result<Vec<(Vec3, Vec3, Vec2)>>>()?;
    let mut results: Vec<JumpResult> =
        pairs.par_iter().map(|(a, b, nu)| theta(m, &run.integrand, a, b, nu, &run.cfg.jump)).collect::<Result<_>>()?;
    let mut properties = None;
    if !g.endpoints.is_empty() {
        let ends = g.endpoints.iter().map(|p| snap_point(m, *p)).collect::<Result<Vec<Vec3>>>()?;
        let normals = g.normals.iter().map(|n| unit_normal(*n)).collect::<Result<Vec<Vec2>>>()?;
        if g.properties {
            let report = check_theta_properties(m, &run.integrand, &ends, &normals, &run.cfg.jump)?;
            results.extend(report.entries.iter().cloned());
            properties = Some(report);
        } else {
            results.extend(theta_grid(m, &run.integrand, &ends, &normals, &run.cfg.jump)?);
        }
    }
    let mut table = JumpTable::from_results(m, &run.integrand, &run.cfg.jump, &results);
    table.provenance = Some(run.hash.clone());
    run.write_json(Command::Jump, "jump", JumpOutput { table: &table, results: &results, properties: properties.as_ref() })?;
    if let Some(f) = run.csv_file("jump")? {
        table.write_csv(f)?;
    }
    if let Some(dir) = run.vtk_dir()? {
        for (k, r) in results.iter().enumerate() {
            for s in r.form_a.per_size.iter().chain(r.form_b.iter().flat_map(|f| f.per_size.iter())) {
                if s.minimizer.is_empty() {
                    continue;
                }
                let form = format!("{:?}", s.form).to_lowercase();
                let path = dir.join(format!("jump_{k}_{form}_{}.vtk", s.size));
                let origin = [-0.5 * s.spacing[0] * (s.grid[0] - 1) as f64, -0.5 * s.spacing[1] * (s.grid[1] - 1) as f64, -0.5];
                write_structured(
                    BufWriter::new(File::create(path)?),
                    &format!("jump {k} {form} {}", s.size),
                    s.grid,
                    origin,
                    s.spacing,
                    &s.minimizer,
                )?;
            }
        }
    }
    for e in table.entries.iter().filter(|e| !e.flags.is_empty()) {
        eprintln!("jump {:?} -> {:?}: {}", e.b, e.a, e.flags.join(";"));
    }
    if let Some(p) = &properties {
        for v in &p.violations {
            eprintln!("{v}");
        }
    }
    Ok(if properties.as_ref().is_some_and(|p| !p.violations.is_empty()) {
        EXIT_VIOLATION
    } else if results.iter().any(|r| !r.converged) {
        EXIT_NONCONVERGENT
    } else {
        EXIT_OK
    })
}

fn load_result_field<T: serde::de::DeserializeOwned>(path: &Path, field: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let inner = v
        .get("result")
        .and_then(|r| r.get(field))
        .cloned()
        .ok_or_else(|| Error::Config(format!("{} has no result.{field}", path.display())))?;
    serde_json::from_value(inner).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn cmd_gamma(run: &Run) -> Result<i32> {
    let gcfg = run.cfg.gamma_config();
    let spec = ScenarioSpec::build(&run.manifold, &run.integrand, &gcfg).map_err(|e| match e {
        Error::NotOnManifold(_) => Error::Config(format!("scenario does not fit the manifold: {e}")),
        other => other,
    })?;
    let prior = match (&run.cfg.gamma.bulk_table, &run.cfg.gamma.jump_table) {
        (Some(b), Some(j)) => Some((load_result_field::<DensityTable>(b, "table")?, load_result_field::<JumpTable>(j, "table")?)),
        (None, None) => None,
        _ => return Err(Error::Config("gamma needs both bulk_table and jump_table, or neither".into())),
    };
    let mut report = gamma_experiment(&run.manifold, &run.integrand, &spec, &gcfg, prior.as_ref().map(|(b, j)| (b, j)))?;
    report.provenance = Some(run.hash.clone());
    run.write_json(Command::Gamma, "gamma", &report)?;
    if let Some(f) = run.csv_file("gamma")? {
        report.write_csv(f)?;
    }
    if let Some(dir) = run.vtk_dir()? {
        for l in &report.levels {
            if let Some(field) = &l.minimizer {
                let grid = field.grid()?;
                let path = dir.join(format!("gamma_h{}.vtk", l.h));
                let origin = [field.omega.origin[0], field.omega.origin[1], -0.5];
                write_structured(
                    BufWriter::new(File::create(path)?),
                    &format!("gamma h={}", l.h),
                    field.n,
                    origin,
                    grid.spacing,
                    &field.values,
                )?;
            }
        }
    }
    if !report.liminf_ok || !report.limsup_ok || !report.gap_monotone {
        eprintln!("soft checks: liminf {} limsup {} gap monotone {}", report.liminf_ok, report.limsup_ok, report.gap_monotone);
    }
    Ok(if report.converged { EXIT_OK } else { EXIT_NONCONVERGENT })
}
