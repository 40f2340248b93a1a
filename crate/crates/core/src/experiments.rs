//! Convergence studies and invariant suites over a sequence of coverings.
//!
//! Levels run in parallel. A level that fails is recorded in the report and
//! the study carries on with the others.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::covering::{BoxCovering, DensityVector, SpaceSpec, StateSpace};
use crate::error::{Error, Result};
use crate::flow::{transfer_exact_grid_times, FieldSpec, FunctionSpec, IntegratorOptions, TestFunction, VectorField};
use crate::generator::{assemble, diagnostics, generator_consistency_error_with, FaceQuadratureSpec, GeneratorMatrix};
use crate::par;
use crate::semigroup::{evolve, evolve_times, resolvent, resolvent_residual, semigroup_defect, EvolutionSpec};
use crate::ulam::{self, SamplingSpec, UlamMode};

/// Parameters of the invariant suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteSpec {
    /// Number of random nonnegative densities per level.
    pub samples: usize,
    pub times: Vec<f64>,
    /// Allowed negative excursion, relative to `max u`.
    pub positivity_tolerance: f64,
    pub semigroup_pairs: Vec<(f64, f64)>,
    pub lambda: f64,
    pub resolvent_tolerance: f64,
    /// Quotient time as a multiple of `1 / max outflow rate`.
    pub quotient_cfl: f64,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        SuiteSpec {
            samples: 20,
            times: vec![0.1, 1.0, 10.0],
            positivity_tolerance: 1e-10,
            semigroup_pairs: vec![(0.1, 0.1), (0.1, 0.5), (0.5, 0.1), (0.5, 0.5)],
            lambda: 1.0,
            resolvent_tolerance: 1e-9,
            quotient_cfl: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudySpec {
    pub field: FieldSpec,
    pub space: SpaceSpec,
    /// Boxes per axis, strictly increasing.
    pub levels: Vec<usize>,
    pub times: Vec<f64>,
    pub functions: Vec<FunctionSpec>,
    pub evolution: EvolutionSpec,
    /// Gauss nodes per axis per box for the exact reference.
    pub reference_nodes: usize,
    pub integrator: IntegratorOptions,
    pub face_quadrature: FaceQuadratureSpec,
    /// Number of intervals in the mass-loss time grid over `[0, max t]`.
    pub mass_samples: usize,
    pub suite: SuiteSpec,
    pub seed: u64,
}

impl Default for StudySpec {
    fn default() -> Self {
        StudySpec {
            field: FieldSpec::ConstantDrift { velocity: vec![1.0] },
            space: SpaceSpec::Box { lo: vec![0.0], hi: vec![1.0] },
            levels: vec![16, 32, 64, 128],
            times: vec![0.25],
            functions: vec![FunctionSpec::Bump { center: vec![0.3], radii: vec![0.25] }],
            evolution: EvolutionSpec::default(),
            reference_nodes: 4,
            integrator: IntegratorOptions::default(),
            face_quadrature: FaceQuadratureSpec::default(),
            mass_samples: 20,
            suite: SuiteSpec::default(),
            seed: 0,
        }
    }
}

impl StudySpec {
    pub fn validate(&self) -> Result<()> {
        self.field.validate()?;
        if self.levels.is_empty() || self.levels[0] == 0 || self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("levels must be positive and strictly increasing, got {:?}", self.levels)));
        }
        if self.times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(Error::Config(format!("times must be finite and >= 0, got {:?}", self.times)));
        }
        if self.reference_nodes == 0 {
            return Err(Error::Config("reference_nodes must be at least 1".into()));
        }
        EvolutionSpec { t: 0.0, ..self.evolution }.validate()?;
        let space = StateSpace::from_spec(&self.space)?;
        if self.field.dim() != space.dim() {
            return Err(Error::Config(format!(
                "field is {}-dimensional but the space is {}-dimensional",
                self.field.dim(),
                space.dim()
            )));
        }
        for f in &self.functions {
            if f.dim().is_some_and(|d| d != space.dim()) {
                return Err(Error::Config(format!("test function {f:?} does not match the space dimension")));
            }
        }
        Ok(())
    }

    fn test_functions(&self) -> Result<Vec<TestFunction>> {
        self.functions.iter().cloned().map(TestFunction::from_spec).collect()
    }

    fn mass_grid(&self) -> Vec<f64> {
        let t_max = self.times.iter().copied().fold(0.0, f64::max);
        let k = self.mass_samples.max(1);
        (0..=k).map(|i| t_max * i as f64 / k as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub level: usize,
    pub t: f64,
    pub function: String,
    /// `‖evolve(G_n, π_n u, t) - π_n P̃ᵗ u‖₁` on X.
    pub e_l1: f64,
    /// `log(e_prev / e) / log(n / n_prev)` against the previous level.
    pub order_hat: Option<f64>,
    pub reference_norm: f64,
    pub evolved_norm: f64,
    /// `‖π_n u‖₁ - ‖evolve(G_n, π_n u, t)‖₁`.
    pub contraction_margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRecord {
    pub level: usize,
    pub function: String,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassRecord {
    pub t: f64,
    pub mass: f64,
    pub level: usize,
    pub function: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelFailure {
    pub level: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub spec: StudySpec,
    pub errors: Vec<ErrorRecord>,
    pub consistency: Vec<ConsistencyRecord>,
    pub mass_loss: Vec<MassRecord>,
    pub failures: Vec<LevelFailure>,
}

struct LevelResult {
    errors: Vec<ErrorRecord>,
    consistency: Vec<ConsistencyRecord>,
    mass_loss: Vec<MassRecord>,
}

impl ConvergenceReport {
    /// `(level, e_l1)` for one function and time, in level order.
    pub fn series(&self, function: &str, t: f64) -> Vec<(usize, f64)> {
        self.errors.iter().filter(|r| r.function == function && r.t == t).map(|r| (r.level, r.e_l1)).collect()
    }

    pub fn function_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for r in &self.errors {
            if !names.contains(&r.function) {
                names.push(r.function.clone());
            }
        }
        names
    }

    /// True when every (function, time) series strictly decreases and no
    /// level failed.
    pub fn strictly_decreasing(&self) -> bool {
        self.failures.is_empty()
            && self.function_names().iter().all(|f| {
                self.spec.times.iter().all(|&t| self.series(f, t).windows(2).all(|w| w[1].1 < w[0].1))
            })
    }

    pub fn errors_csv(&self) -> String {
        let mut s = String::from("level,t,function,e_l1,order_hat\n");
        for r in &self.errors {
            let order = r.order_hat.map(|p| format!("{p:e}")).unwrap_or_default();
            let _ = writeln!(s, "{},{:e},{},{:e},{}", r.level, r.t, csv_field(&r.function), r.e_l1, order);
        }
        s
    }

    pub fn massloss_csv(&self) -> String {
        let mut s = String::from("t,mass,level,function\n");
        for r in &self.mass_loss {
            let _ = writeln!(s, "{:e},{:e},{},{}", r.t, r.mass, r.level, csv_field(&r.function));
        }
        s
    }

    /// Writes `report.json`, `errors.csv` and `massloss.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        fs::write(dir.join("errors.csv"), self.errors_csv())?;
        fs::write(dir.join("massloss.csv"), self.massloss_csv())?;
        Ok(())
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Sorted distinct times and, for each input time, its slot in that list.
fn distinct_times(times: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let slots = times.iter().map(|t| sorted.iter().position(|s| s == t).unwrap_or(0)).collect();
    (sorted, slots)
}

pub fn run_convergence(spec: &StudySpec) -> Result<ConvergenceReport> {
    spec.validate()?;
    let space = StateSpace::from_spec(&spec.space)?;
    let functions = spec.test_functions()?;
    let results = par::map_slice(&spec.levels, |&n| run_level(spec, &space, &functions, n));

    let mut report = ConvergenceReport {
        spec: spec.clone(),
        errors: Vec::new(),
        consistency: Vec::new(),
        mass_loss: Vec::new(),
        failures: Vec::new(),
    };
    for (&level, result) in spec.levels.iter().zip(results) {
        match result {
            Ok(r) => {
                report.errors.extend(r.errors);
                report.consistency.extend(r.consistency);
                report.mass_loss.extend(r.mass_loss);
            }
            Err(e) => report.failures.push(LevelFailure { level, message: e.to_string() }),
        }
    }
    // orders against the previous successful level of the same series
    for i in 0..report.errors.len() {
        let (head, tail) = report.errors.split_at_mut(i);
        let r = &mut tail[0];
        if let Some(prev) = head.iter().rev().find(|p| p.function == r.function && p.t == r.t) {
            if prev.e_l1 > 0.0 && r.e_l1 > 0.0 {
                r.order_hat = Some((prev.e_l1 / r.e_l1).ln() / (r.level as f64 / prev.level as f64).ln());
            }
        }
    }
    Ok(report)
}

fn run_level(spec: &StudySpec, space: &StateSpace, functions: &[TestFunction], n: usize) -> Result<LevelResult> {
    let covering = BoxCovering::build_uniform(space, n)?;
    let g = assemble(&spec.field, &covering, &spec.face_quadrature)?;
    let (times, slots) = distinct_times(&spec.times);
    let mass_grid = spec.mass_grid();
    let mut out = LevelResult { errors: Vec::new(), consistency: Vec::new(), mass_loss: Vec::new() };
    for f in functions {
        let pu = covering.project_with(|x| f.eval(x), f.projection_rule(spec.reference_nodes))?;
        let evolved = evolve_times(&g, &pu, &times, &spec.evolution)?;
        let reference =
            transfer_exact_grid_times(&spec.field, f, &covering, &times, spec.reference_nodes, &spec.integrator)?;
        let norm = covering.l1_norm_on_x(&pu)?;
        for (&t, &slot) in spec.times.iter().zip(&slots) {
            let (w, r) = (&evolved[slot], &reference[slot]);
            let e = covering.l1_distance_on_x(w, r)?;
            let evolved_norm = covering.l1_norm_on_x(w)?;
            let e = crate::error::ensure_finite(e, "L1 error")?;
            out.errors.push(ErrorRecord {
                level: n,
                t,
                function: f.name().to_string(),
                e_l1: e,
                order_hat: None,
                reference_norm: covering.l1_norm_on_x(r)?,
                evolved_norm,
                contraction_margin: norm - evolved_norm,
            });
        }
        if f.gradient(&covering.box_center(0)).is_some() {
            let error = generator_consistency_error_with(&g, &spec.field, &covering, f)?;
            out.consistency.push(ConsistencyRecord { level: n, function: f.name().to_string(), error });
        }
        for (t, w) in mass_grid.iter().zip(evolve_times(&g, &pu, &mass_grid, &spec.evolution)?) {
            out.mass_loss.push(MassRecord { t: *t, mass: w.mass(), level: n, function: f.name().to_string() });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub level: usize,
    pub check: String,
    pub passed: bool,
    /// Distance to the threshold; negative when the check fails.
    pub margin: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub checks: Vec<CheckRecord>,
}

impl InvariantReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&CheckRecord> {
        self.checks.iter().find(|c| !c.passed)
    }

    pub fn check(&self, level: usize, name: &str) -> Option<&CheckRecord> {
        self.checks.iter().find(|c| c.level == level && c.check == name)
    }
}

fn record(level: usize, check: &str, margin: f64, detail: String) -> CheckRecord {
    CheckRecord { level, check: check.to_string(), passed: margin >= 0.0, margin, detail }
}

/// Seeded nonnegative densities with unit L¹ norm.
pub fn random_densities(covering: &BoxCovering, count: usize, seed: u64) -> Vec<DensityVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let p: f64 = rng.random_range(1.0..4.0);
            let values: Vec<f64> = (0..covering.len()).map(|_| rng.random::<f64>().powf(p)).collect();
            let u = covering.density(values).expect("length matches covering");
            let norm = u.l1_norm();
            if norm > 0.0 {
                u.scaled(1.0 / norm)
            } else {
                u
            }
        })
        .collect()
}

/// Runs every check on each level of `spec`. Failures are reported, not
/// returned as errors; a level that cannot be built yields a single failed
/// `setup` record.
pub fn run_invariant_suite(spec: &StudySpec) -> Result<InvariantReport> {
    spec.validate()?;
    let space = StateSpace::from_spec(&spec.space)?;
    let per_level = par::map_slice(&spec.levels, |&n| -> Vec<CheckRecord> {
        let built = BoxCovering::build_uniform(&space, n)
            .and_then(|c| assemble(&spec.field, &c, &spec.face_quadrature).map(|g| (c, g)));
        match built {
            Ok((c, g)) => check_generator(&spec.field, &c, &g, spec, spec.seed.wrapping_add(n as u64)),
            Err(e) => vec![record(n, "setup", -1.0, e.to_string())],
        }
    });
    Ok(InvariantReport { checks: per_level.into_iter().flatten().collect() })
}

/// The invariant checks for one (possibly hand-modified) generator.
pub fn check_generator<F: VectorField + ?Sized>(
    field: &F,
    covering: &BoxCovering,
    g: &GeneratorMatrix,
    spec: &StudySpec,
    seed: u64,
) -> Vec<CheckRecord> {
    let n = covering.level();
    let s = &spec.suite;
    let tol = spec.evolution.tolerance;
    let mut out = Vec::new();
    let fail = |name: &str, e: Error| record(n, name, -1.0, e.to_string());

    let diag = diagnostics(g, covering);
    out.push(record(
        n,
        "sign_pattern",
        diag.min_off_diagonal.min(-diag.max_diagonal),
        format!("min off-diagonal {:e}, max diagonal {:e}", diag.min_off_diagonal, diag.max_diagonal),
    ));
    let scale = g.max_outflow_rate().max(1.0);
    out.push(record(
        n,
        "column_sums",
        1e-12 * scale - diag.max_column_sum,
        format!("max column sum {:e}", diag.max_column_sum),
    ));

    let densities = random_densities(covering, s.samples, seed);
    let mut contraction = f64::INFINITY;
    let mut positivity = f64::INFINITY;
    let mut monotone = f64::INFINITY;
    let mut error = None;
    let mut times = s.times.clone();
    times.sort_by(f64::total_cmp);
    for u in &densities {
        match evolve_times(g, u, &times, &spec.evolution) {
            Ok(ws) => {
                let norm = u.l1_norm();
                let mut prev_mass = u.mass();
                let u_max = u.values().iter().copied().fold(0.0, f64::max);
                for w in &ws {
                    contraction = contraction.min(norm * (1.0 + tol) - w.l1_norm());
                    positivity = positivity.min(w.min() + s.positivity_tolerance * u_max);
                    monotone = monotone.min(prev_mass + tol * norm - w.mass());
                    prev_mass = w.mass();
                }
            }
            Err(e) => {
                error = Some(e);
                break;
            }
        }
    }
    match error {
        Some(e) => {
            out.push(fail("contraction", e));
        }
        None => {
            let k = densities.len();
            out.push(record(n, "contraction", contraction, format!("{k} densities, t in {times:?}")));
            out.push(record(n, "positivity", positivity, format!("{k} densities, t in {times:?}")));
            out.push(record(n, "mass_monotone", monotone, format!("{k} densities, t in {times:?}")));
        }
    }

    if let Some(u) = densities.first() {
        let mut worst = f64::INFINITY;
        let mut detail = String::new();
        for &(a, b) in &s.semigroup_pairs {
            match semigroup_defect(g, u, a, b, &spec.evolution) {
                Ok(d) => {
                    let m = 2.0 * tol * u.l1_norm() - d;
                    if m < worst {
                        worst = m;
                        detail = format!("defect {d:e} at (s, t) = ({a}, {b})");
                    }
                }
                Err(e) => {
                    worst = -1.0;
                    detail = e.to_string();
                    break;
                }
            }
        }
        out.push(record(n, "semigroup_law", worst, detail));

        out.push(match resolvent(g, u, s.lambda).and_then(|w| resolvent_residual(g, u, &w, s.lambda)) {
            Ok(r) => record(n, "resolvent_identity", s.resolvent_tolerance - r, format!("relative residual {r:e}")),
            Err(e) => fail("resolvent_identity", e),
        });
    }

    out.push(match quotient_check(field, covering, g, s.quotient_cfl) {
        Ok((err, bound, t)) => {
            record(n, "quotient_oracle", bound - err, format!("‖(U^t - I)/t - G‖₁ = {err:e} at t = {t:e}"))
        }
        Err(e) => fail("quotient_oracle", e),
    });
    out
}

/// Quotient error at `t = cfl / max outflow rate` and the first-order bound
/// `t ‖G‖₁²` it must respect.
fn quotient_check<F: VectorField + ?Sized>(
    field: &F,
    covering: &BoxCovering,
    g: &GeneratorMatrix,
    cfl: f64,
) -> Result<(f64, f64, f64)> {
    let rate = g.max_outflow_rate();
    if rate == 0.0 {
        return Ok((g.matrix().norm_l1(), 0.0, 0.0));
    }
    let t = cfl / rate;
    let sampling = SamplingSpec::best_for(covering.dim());
    let u = ulam::estimate(field, covering, t, UlamMode::FullFlow, &sampling, &Default::default())?;
    let q = ulam::quotient_matrix(&u)?;
    let err = q.linear_combination(1.0, g.matrix(), -1.0)?.norm_l1();
    let norm = g.matrix().norm_l1();
    Ok((err, t * norm * norm, t))
}

/// Catalog state space for a field dimension: `[0,1]` or `[-1,1]^d`.
pub fn catalog_space(dim: usize) -> SpaceSpec {
    if dim == 1 {
        SpaceSpec::Box { lo: vec![0.0], hi: vec![1.0] }
    } else {
        SpaceSpec::Box { lo: vec![-1.0; dim], hi: vec![1.0; dim] }
    }
}

/// One evolution of `π_n u` on a fresh covering, for callers that only need
/// a single density.
pub fn evolve_projected(spec: &StudySpec, n: usize, f: &TestFunction, t: f64) -> Result<DensityVector> {
    let space = StateSpace::from_spec(&spec.space)?;
    let covering = BoxCovering::build_uniform(&space, n)?;
    let g = assemble(&spec.field, &covering, &spec.face_quadrature)?;
    let pu = covering.project_with(|x| f.eval(x), f.projection_rule(spec.reference_nodes))?;
    evolve(&g, &pu, &EvolutionSpec { t, ..spec.evolution })
}
