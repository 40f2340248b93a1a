//! `outflow` command-line driver.
//!
//! Every subcommand reads an optional JSON config (a study spec plus a few
//! single-run fields) and writes its products into `--out`.
//! Exit codes: 0 success, 1 runtime error, 2 failed check.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use outflow::experiments::{run_convergence, run_invariant_suite, StudySpec};
use outflow::flow::transfer_exact_grid;
use outflow::generator::diagnostics;
use outflow::semigroup::{evolve_times, resolvent, resolvent_residual};
use outflow::ulam::estimate;
use outflow::{
    assemble, BoxCovering, DensityVector, Error, GeneratorMatrix, Result, SamplingSpec, SparseMatrix, StateSpace,
    TestFunction, UlamMode,
};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "outflow", version, about = "Discrete generators and transfer operators for outflow systems")]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for Monte Carlo sampling and random densities.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the covering and write covering.json.
    Covering,
    /// Assemble the generator and write it as Matrix Market and CSV.
    Generator,
    /// Evolve a density with the generated semigroup.
    Evolve {
        /// Use this matrix (.mtx or .csv) instead of assembling one.
        #[arg(long)]
        matrix: Option<PathBuf>,
    },
    /// Evaluate the exact outflow transfer operator on the covering.
    Reference,
    /// Estimate an Ulam matrix and write it with a metadata sidecar.
    Ulam,
    /// Run the convergence study over all levels.
    Converge {
        /// Exit with status 2 unless every error series strictly decreases.
        #[arg(long)]
        require_decrease: bool,
    },
    /// Run the invariant suite; exit with status 2 if any check fails.
    Check,
}

/// A study spec plus the fields used by single-level commands.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct Config {
    #[serde(flatten)]
    study: StudySpec,
    /// Boxes per axis for single-level commands; defaults to the finest level.
    boxes: Option<Vec<usize>>,
    /// Evolution/Ulam time; defaults to the first entry of `times`.
    t: Option<f64>,
    mode: Option<UlamMode>,
    sampling: Option<SamplingSpec>,
    /// Density to evolve (.csv or .bin); defaults to the first test function.
    input: Option<PathBuf>,
    /// Also solve the resolvent at this λ during `evolve`.
    lambda: Option<f64>,
}

impl Config {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Config::default()) };
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })
    }

    fn space(&self) -> Result<StateSpace> {
        StateSpace::from_spec(&self.study.space)
    }

    fn covering(&self) -> Result<BoxCovering> {
        let space = self.space()?;
        let boxes = match &self.boxes {
            Some(b) => b.clone(),
            None => vec![*self.study.levels.last().unwrap_or(&16); space.dim()],
        };
        BoxCovering::build(&space, &boxes)
    }

    fn times(&self) -> Vec<f64> {
        match self.t {
            Some(t) => vec![t],
            None if self.study.times.is_empty() => vec![0.0],
            None => self.study.times.clone(),
        }
    }

    fn function(&self) -> Result<TestFunction> {
        let spec = self.study.functions.first().cloned().ok_or_else(|| Error::Config("no test function configured".into()))?;
        TestFunction::from_spec(spec)
    }
}

enum Outcome {
    Done,
    CheckFailed,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn read_matrix(path: &Path, n: usize) -> Result<SparseMatrix> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => SparseMatrix::read_coordinate_csv(path, n, n),
        _ => SparseMatrix::read_matrix_market(path),
    }
}

fn read_density(path: &Path, covering: &BoxCovering) -> Result<DensityVector> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => DensityVector::read_binary(path, covering),
        _ => DensityVector::read_csv(path, covering),
    }
}

fn write_density(out: &Path, stem: &str, u: &DensityVector) -> Result<()> {
    u.write_csv(&out.join(format!("{stem}.csv")))?;
    u.write_binary(&out.join(format!("{stem}.bin")))
}

#[derive(Serialize)]
struct DensitySummary {
    t: f64,
    mass: f64,
    l1_norm: f64,
    min: f64,
    csv: String,
    bin: String,
}

fn summarize(t: f64, stem: &str, u: &DensityVector) -> DensitySummary {
    DensitySummary {
        t,
        mass: u.mass(),
        l1_norm: u.l1_norm(),
        min: u.min(),
        csv: format!("{stem}.csv"),
        bin: format!("{stem}.bin"),
    }
}

fn run(cli: &Cli) -> Result<Outcome> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.study.seed = seed;
        if let Some(SamplingSpec::MonteCarlo { seed: s, .. }) = cfg.sampling.as_mut() {
            *s = seed;
        }
    }
    cfg.study.field.validate()?;
    let out = &cli.out;
    fs::create_dir_all(out)?;

    match &cli.command {
        Command::Covering => {
            let c = cfg.covering()?;
            fs::write(out.join("covering.json"), c.description().to_json()?)?;
            println!("{} active boxes at level {}", c.len(), c.level());
        }
        Command::Generator => {
            let c = cfg.covering()?;
            let g = assemble(&cfg.study.field, &c, &cfg.study.face_quadrature)?;
            g.matrix().write_matrix_market(&out.join("generator.mtx"))?;
            g.matrix().write_coordinate_csv(&out.join("generator.csv"))?;
            write_json(&out.join("generator.json"), &diagnostics(&g, &c))?;
            println!("{} x {} generator with {} nonzeros", g.len(), g.len(), g.matrix().nnz());
        }
        Command::Evolve { matrix } => {
            let c = cfg.covering()?;
            let g = match matrix {
                Some(path) => GeneratorMatrix::new(&c, read_matrix(path, c.len())?)?,
                None => assemble(&cfg.study.field, &c, &cfg.study.face_quadrature)?,
            };
            let u = match &cfg.input {
                Some(path) => read_density(path, &c)?,
                None => {
                    let f = cfg.function()?;
                    c.project_with(|x| f.eval(x), f.projection_rule(cfg.study.reference_nodes))?
                }
            };
            let mut times = cfg.times();
            times.sort_by(f64::total_cmp);
            let states = evolve_times(&g, &u, &times, &cfg.study.evolution)?;
            let mut summary = vec![summarize(0.0, "initial", &u)];
            write_density(out, "initial", &u)?;
            for (k, (t, w)) in times.iter().zip(&states).enumerate() {
                let stem = format!("evolved_{k}");
                write_density(out, &stem, w)?;
                summary.push(summarize(*t, &stem, w));
            }
            let mut report = serde_json::json!({ "level": c.level(), "boxes": c.len(), "densities": summary });
            if let Some(lambda) = cfg.lambda {
                let w = resolvent(&g, &u, lambda)?;
                write_density(out, "resolvent", &w)?;
                report["resolvent"] = serde_json::json!({
                    "lambda": lambda,
                    "relative_residual": resolvent_residual(&g, &u, &w, lambda)?,
                });
            }
            write_json(&out.join("report.json"), &report)?;
            for s in &report["densities"].as_array().cloned().unwrap_or_default() {
                println!("t = {}: mass {}", s["t"], s["mass"]);
            }
        }
        Command::Reference => {
            let c = cfg.covering()?;
            let f = cfg.function()?;
            let t = cfg.times()[0];
            let r = transfer_exact_grid(&cfg.study.field, &f, &c, t, cfg.study.reference_nodes, &cfg.study.integrator)?;
            write_density(out, "reference", &r)?;
            write_json(&out.join("report.json"), &summarize(t, "reference", &r))?;
            println!("reference at t = {t}: mass {}", r.mass());
        }
        Command::Ulam => {
            let c = cfg.covering()?;
            let t = cfg.times()[0];
            let mode = cfg.mode.unwrap_or(UlamMode::FullFlow);
            let sampling = cfg.sampling.unwrap_or_default();
            let u = estimate(&cfg.study.field, &c, t, mode, &sampling, &cfg.study.integrator)?;
            u.export(out, "ulam")?;
            println!("{} x {} Ulam matrix with {} nonzeros", c.len(), c.len(), u.matrix().nnz());
        }
        Command::Converge { require_decrease } => {
            let report = run_convergence(&cfg.study)?;
            report.write(out)?;
            for f in &report.failures {
                eprintln!("level {} failed: {}", f.level, f.message);
            }
            print!("{}", report.errors_csv());
            if *require_decrease && !report.strictly_decreasing() {
                return Ok(Outcome::CheckFailed);
            }
        }
        Command::Check => {
            let report = run_invariant_suite(&cfg.study)?;
            write_json(&out.join("report.json"), &report)?;
            let mut csv = String::from("level,check,passed,margin\n");
            for c in &report.checks {
                csv.push_str(&format!("{},{},{},{:e}\n", c.level, c.check, c.passed, c.margin));
            }
            fs::write(out.join("checks.csv"), csv)?;
            for c in &report.checks {
                println!("{} level {} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.level, c.check, c.detail);
            }
            if !report.passed() {
                return Ok(Outcome::CheckFailed);
            }
        }
    }
    Ok(Outcome::Done)
}

#[cfg(feature = "parallel")]
fn configure_threads(threads: Option<usize>) -> Result<()> {
    if let Some(k) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot set up {k} threads: {e}")))?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(threads: Option<usize>) -> Result<()> {
    if threads.is_some_and(|k| k > 1) {
        eprintln!("warning: built without the `parallel` feature, running on one thread");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.threads == Some(0) {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(1);
    }
    if let Err(e) = configure_threads(cli.threads) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
