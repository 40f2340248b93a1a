//! Action of `exp(tG)` on densities and the resolvent `(λ - G)^{-1}`.
//!
//! The default method is a substepped Taylor series applied to the shifted
//! matrix `B = G + αI` with `α = max(-diag G)`. For a generator with
//! nonnegative off-diagonals `B` is entrywise nonnegative, so every partial
//! sum maps nonnegative densities to nonnegative densities, and the
//! truncation error is bounded a priori.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covering::DensityVector;
use crate::error::{Error, Result};
use crate::generator::GeneratorMatrix;
use crate::sparse::SparseMatrix;

/// Largest matrix accepted by [`EvolutionMethod::DensePade`].
pub const DENSE_LIMIT: usize = 512;

const MAX_TAYLOR_TERMS: usize = 200;
const KRYLOV_DIM: usize = 30;
/// Rounding charged per unit of cancelled term mass.
const ROUNDING_FACTOR: f64 = 8.0 * f64::EPSILON;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvolutionMethod {
    #[default]
    ScaledTaylor,
    Krylov,
    DensePade,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolutionSpec {
    pub t: f64,
    pub method: EvolutionMethod,
    /// Target for `‖w - exp(tG)u‖₁ / ‖u‖₁`.
    pub tolerance: f64,
    pub max_substeps: usize,
}

impl Default for EvolutionSpec {
    fn default() -> Self {
        EvolutionSpec { t: 0.0, method: EvolutionMethod::ScaledTaylor, tolerance: 1e-8, max_substeps: 1_000_000 }
    }
}

impl EvolutionSpec {
    pub fn at(t: f64) -> Self {
        EvolutionSpec { t, ..Default::default() }
    }

    pub fn with_method(mut self, method: EvolutionMethod) -> Self {
        self.method = method;
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t >= 0.0) || !self.t.is_finite() {
            return Err(Error::Usage(format!("evolution time must be finite and >= 0, got {}", self.t)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!("tolerance must be > 0, got {}", self.tolerance)));
        }
        if self.max_substeps == 0 {
            return Err(Error::Config("max_substeps must be at least 1".into()));
        }
        Ok(())
    }
}

/// `exp(tG) u` to the accuracy requested in `spec`.
pub fn evolve(g: &GeneratorMatrix, u: &DensityVector, spec: &EvolutionSpec) -> Result<DensityVector> {
    spec.validate()?;
    g.check_compatible(u)?;
    if spec.t == 0.0 {
        return Ok(u.clone());
    }
    let values = match spec.method {
        EvolutionMethod::ScaledTaylor => taylor_action(g.matrix(), u.values(), spec)?,
        EvolutionMethod::Krylov => krylov_action(g.matrix(), u.values(), spec)?,
        EvolutionMethod::DensePade => {
            if g.len() > DENSE_LIMIT {
                return Err(Error::Config(format!(
                    "dense exponential limited to n <= {DENSE_LIMIT}, got n = {}",
                    g.len()
                )));
            }
            let e = dense_expm(g.matrix(), spec.t);
            (e * DVector::from_column_slice(u.values())).as_slice().to_vec()
        }
    };
    u.with_values(values)
}

/// Evolves to each of the increasing `times`, restarting from the previous
/// result each time.
pub fn evolve_times(
    g: &GeneratorMatrix,
    u: &DensityVector,
    times: &[f64],
    spec: &EvolutionSpec,
) -> Result<Vec<DensityVector>> {
    let mut out = Vec::with_capacity(times.len());
    let mut current = u.clone();
    let mut t_prev = 0.0;
    for &t in times {
        if t < t_prev {
            return Err(Error::Usage(format!("times must be increasing, got {t} after {t_prev}")));
        }
        current = evolve(g, &current, &EvolutionSpec { t: t - t_prev, ..*spec })?;
        out.push(current.clone());
        t_prev = t;
    }
    Ok(out)
}

/// `exp(tA)` by scaling and squaring with Padé approximants.
pub fn dense_expm(a: &SparseMatrix, t: f64) -> DMatrix<f64> {
    (a.to_dense() * t).exp()
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn taylor_action(g: &SparseMatrix, u: &[f64], spec: &EvolutionSpec) -> Result<Vec<f64>> {
    let n = u.len();
    let alpha = g.diagonal().iter().fold(0.0_f64, |a, &d| a.max(-d));
    let b = g.linear_combination(1.0, &SparseMatrix::identity(n), alpha)?;
    let beta = b.norm_l1();
    let u_norm = l1(u);
    if u_norm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let substeps = ((beta * spec.t).ceil() as usize).clamp(1, spec.max_substeps);
    let dt = spec.t / substeps as f64;
    let rho = beta * dt;
    let decay = (-alpha * dt).exp();
    let eps = spec.tolerance / substeps as f64;

    let mut v = u.to_vec();
    let mut term = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut sum = vec![0.0; n];
    for _ in 0..substeps {
        sum.copy_from_slice(&v);
        term.copy_from_slice(&v);
        let scale = l1(&v).max(f64::MIN_POSITIVE);
        let mut converged = false;
        let mut tail = f64::INFINITY;
        let mut term_mass = scale;
        for k in 1..=MAX_TAYLOR_TERMS {
            b.mul_vec_into(&term, &mut next);
            let c = dt / k as f64;
            for (t, x) in term.iter_mut().zip(&next) {
                *t = c * x;
            }
            for (s, t) in sum.iter_mut().zip(&term) {
                *s += t;
            }
            term_mass += l1(&term);
            // remaining terms are bounded by a geometric series in ρ/(k+2)
            let ratio = rho / (k + 2) as f64;
            tail = if ratio < 1.0 { l1(&term) * ratio / (1.0 - ratio) } else { f64::INFINITY };
            if decay * tail <= eps * scale {
                converged = true;
                break;
            }
        }
        // With ρ <= 1, or ‖B‖₁ <= α as for any generator, the decayed terms
        // sum to at most ‖v‖ and rounding stays at machine precision.
        let rounding = if rho > 1.0 { decay * (term_mass - l1(&sum)) * ROUNDING_FACTOR } else { 0.0 };
        let achieved = (decay * tail + rounding) / scale;
        if !converged || achieved > eps {
            let achieved = if achieved.is_finite() { achieved * substeps as f64 } else { f64::INFINITY };
            return Err(Error::Accuracy { achieved, requested: spec.tolerance });
        }
        for (x, s) in v.iter_mut().zip(&sum) {
            *x = decay * s;
        }
    }
    Ok(v)
}

fn krylov_action(g: &SparseMatrix, u: &[f64], spec: &EvolutionSpec) -> Result<Vec<f64>> {
    let n = u.len();
    let m = KRYLOV_DIM.min(n);
    let u_norm = l1(u);
    let mut v = u.to_vec();
    let mut remaining = spec.t;
    let mut tau = spec.t.min(1.0 / g.norm_l1().max(f64::MIN_POSITIVE) * m as f64);
    let mut steps = 0;
    while remaining > 0.0 {
        let beta = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if beta == 0.0 {
            break;
        }
        steps += 1;
        if steps > spec.max_substeps {
            return Err(Error::Accuracy { achieved: remaining / spec.t, requested: spec.tolerance });
        }
        let (basis, h, k, h_next) = arnoldi(g, &v, beta, m);
        let happy = h_next <= 1e-12 * beta;
        loop {
            let step = tau.min(remaining);
            let e = (h.view((0, 0), (k, k)) * step).exp();
            let err = beta * h_next * e[(k - 1, 0)].abs() * (n as f64).sqrt();
            if happy || err <= spec.tolerance * u_norm * step / spec.t || step < 1e-14 * spec.t {
                let y: Vec<f64> = (0..k).map(|i| beta * e[(i, 0)]).collect();
                v.iter_mut().for_each(|x| *x = 0.0);
                for (j, &c) in y.iter().enumerate() {
                    for (x, b) in v.iter_mut().zip(&basis[j]) {
                        *x += c * b;
                    }
                }
                remaining -= step;
                if remaining < 1e-15 * spec.t {
                    remaining = 0.0;
                }
                tau = step * 1.5;
                break;
            }
            tau = step * 0.5;
        }
    }
    Ok(v)
}

/// Arnoldi basis for `span{v, Av, ...}`; returns the basis, Hessenberg
/// matrix, its used size and `h_{k+1,k}`.
fn arnoldi(a: &SparseMatrix, v: &[f64], beta: f64, m: usize) -> (Vec<Vec<f64>>, DMatrix<f64>, usize, f64) {
    let mut basis = vec![v.iter().map(|x| x / beta).collect::<Vec<f64>>()];
    let mut h = DMatrix::<f64>::zeros(m, m);
    let mut w = vec![0.0; v.len()];
    for j in 0..m {
        a.mul_vec_into(&basis[j], &mut w);
        for (i, q) in basis.iter().enumerate() {
            let c: f64 = w.iter().zip(q).map(|(x, y)| x * y).sum();
            h[(i, j)] = c;
            w.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if j + 1 == m || norm <= 1e-12 * beta {
            return (basis, h, j + 1, norm);
        }
        h[(j + 1, j)] = norm;
        basis.push(w.iter().map(|x| x / norm).collect());
    }
    unreachable!("m >= 1")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Target for `‖u - (λ - G)w‖₁ / ‖u‖₁`.
    pub tolerance: f64,
    pub restart: usize,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tolerance: 1e-10, restart: 60, max_iterations: 20_000 }
    }
}

/// Solves `(λI - G) w = u` with restarted GMRES and a diagonal preconditioner.
pub fn resolvent(g: &GeneratorMatrix, u: &DensityVector, lambda: f64) -> Result<DensityVector> {
    resolvent_with(g, u, lambda, &SolverOptions::default())
}

pub fn resolvent_with(g: &GeneratorMatrix, u: &DensityVector, lambda: f64, opts: &SolverOptions) -> Result<DensityVector> {
    g.check_compatible(u)?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Usage(format!("resolvent needs a finite λ > 0, got {lambda}")));
    }
    let n = u.len();
    let a = g.matrix().linear_combination(-1.0, &SparseMatrix::identity(n), lambda)?;
    let w = gmres(&a, u.values(), opts)?;
    u.with_values(w)
}

/// `‖u - (λ - G)w‖₁ / ‖u‖₁`.
pub fn resolvent_residual(g: &GeneratorMatrix, u: &DensityVector, w: &DensityVector, lambda: f64) -> Result<f64> {
    g.check_compatible(u)?;
    u.same_covering(w)?;
    let gw = g.matrix().mul_vec(w.values());
    let r: f64 = u.values().iter().zip(w.values()).zip(&gw).map(|((b, x), y)| (b - lambda * x + y).abs()).sum();
    let norm = l1(u.values());
    Ok(if norm == 0.0 { r } else { r / norm })
}

fn gmres(a: &SparseMatrix, b: &[f64], opts: &SolverOptions) -> Result<Vec<f64>> {
    let n = b.len();
    let b_norm = l1(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(x);
    }
    let diag = a.diagonal();
    if diag.iter().any(|d| *d == 0.0 || !d.is_finite()) {
        return Err(Error::Solver("zero or non-finite diagonal in resolvent system".into()));
    }
    let m = opts.restart.clamp(1, n);
    let mut iterations = 0;
    let mut ax = vec![0.0; n];
    loop {
        a.mul_vec_into(&x, &mut ax);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(b, y)| b - y).collect();
        let res = l1(&r) / b_norm;
        if res <= opts.tolerance {
            return Ok(x);
        }
        if iterations >= opts.max_iterations {
            return Err(Error::Solver(format!("GMRES stalled at relative residual {res:e} after {iterations} iterations")));
        }
        let beta = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        // Inner target in the 2-norm, tight enough to imply the 1-norm target.
        let inner_target = opts.tolerance * b_norm / (n as f64).sqrt() * 0.1;
        let mut basis = vec![r.iter().map(|v| v / beta).collect::<Vec<f64>>()];
        let mut h = DMatrix::<f64>::zeros(m + 1, m);
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut s = vec![0.0; m + 1];
        s[0] = beta;
        let mut k = 0;
        let mut z = vec![0.0; n];
        let mut w = vec![0.0; n];
        while k < m && iterations < opts.max_iterations {
            iterations += 1;
            z.iter_mut().zip(&basis[k]).zip(&diag).for_each(|((z, q), d)| *z = q / d);
            a.mul_vec_into(&z, &mut w);
            for i in 0..=k {
                let c: f64 = w.iter().zip(&basis[i]).map(|(x, y)| x * y).sum();
                h[(i, k)] = c;
                w.iter_mut().zip(&basis[i]).for_each(|(x, y)| *x -= c * y);
            }
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            h[(k + 1, k)] = norm;
            for i in 0..k {
                let t = cs[i] * h[(i, k)] + sn[i] * h[(i + 1, k)];
                h[(i + 1, k)] = -sn[i] * h[(i, k)] + cs[i] * h[(i + 1, k)];
                h[(i, k)] = t;
            }
            let r = h[(k, k)].hypot(h[(k + 1, k)]);
            if r == 0.0 {
                return Err(Error::Solver("GMRES breakdown".into()));
            }
            cs[k] = h[(k, k)] / r;
            sn[k] = h[(k + 1, k)] / r;
            h[(k, k)] = r;
            h[(k + 1, k)] = 0.0;
            s[k + 1] = -sn[k] * s[k];
            s[k] *= cs[k];
            k += 1;
            if s[k].abs() <= inner_target || norm == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / norm).collect());
        }
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let acc: f64 = (i + 1..k).map(|j| h[(i, j)] * y[j]).sum();
            y[i] = (s[i] - acc) / h[(i, i)];
        }
        for (j, c) in y.iter().enumerate() {
            for ((x, q), d) in x.iter_mut().zip(&basis[j]).zip(&diag) {
                *x += c * q / d;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver("GMRES produced non-finite values".into()));
        }
    }
}

/// `‖evolve(u, s+t) - evolve(evolve(u, t), s)‖₁`, using the method and
/// tolerance of `spec` (its `t` is ignored).
pub fn semigroup_defect(g: &GeneratorMatrix, u: &DensityVector, s: f64, t: f64, spec: &EvolutionSpec) -> Result<f64> {
    if !(s >= 0.0 && t >= 0.0) {
        return Err(Error::Usage(format!("semigroup defect needs s, t >= 0, got s = {s}, t = {t}")));
    }
    let joint = evolve(g, u, &EvolutionSpec { t: s + t, ..*spec })?;
    let mid = evolve(g, u, &EvolutionSpec { t, ..*spec })?;
    let split = evolve(g, &mid, &EvolutionSpec { t: s, ..*spec })?;
    joint.l1_distance(&split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covering::{BoxCovering, StateSpace};
    use crate::flow::FieldSpec;
    use crate::generator::{assemble, FaceQuadratureSpec};
    use approx::assert_abs_diff_eq;

    fn drift(n: usize) -> (BoxCovering, GeneratorMatrix) {
        let c = BoxCovering::build(&StateSpace::unit_interval(), &[n]).unwrap();
        let g = assemble(&FieldSpec::ConstantDrift { velocity: vec![1.0] }, &c, &FaceQuadratureSpec::default()).unwrap();
        (c, g)
    }

    fn rotation(n: usize) -> (BoxCovering, GeneratorMatrix) {
        let space = StateSpace::boxed(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let c = BoxCovering::build(&space, &[n, n]).unwrap();
        let f = FieldSpec::Rotation { omega: 1.0, center: [0.0, 0.0] };
        let g = assemble(&f, &c, &FaceQuadratureSpec::default()).unwrap();
        (c, g)
    }

    const METHODS: [EvolutionMethod; 3] = [EvolutionMethod::ScaledTaylor, EvolutionMethod::Krylov, EvolutionMethod::DensePade];

    #[test]
    fn zero_time_returns_input() {
        let (c, g) = drift(8);
        let u = c.project(|x| x[0]).unwrap();
        for m in METHODS {
            assert_eq!(evolve(&g, &u, &EvolutionSpec::at(0.0).with_method(m)).unwrap(), u);
        }
    }

    #[test]
    fn single_box_is_scalar_exponential() {
        let (c, g) = drift(1);
        assert_eq!(g.get(0, 0), -1.0);
        let u = c.density(vec![1.0]).unwrap();
        for m in METHODS {
            for t in [0.1, 1.0, 7.5] {
                let w = evolve(&g, &u, &EvolutionSpec::at(t).with_method(m)).unwrap();
                assert!((w.values()[0] - (-t).exp()).abs() <= 1e-8 * (-t).exp().max(1e-3), "{m:?} {t}");
            }
        }
    }

    #[test]
    fn drift_gives_truncated_poisson() {
        let n = 8;
        let (c, g) = drift(n);
        let mut e0 = vec![0.0; n];
        e0[0] = 1.0;
        let u = c.density(e0).unwrap();
        let t = 0.3;
        let rate = t * n as f64;
        let mut poisson = vec![(-rate).exp()];
        for k in 1..n {
            poisson.push(poisson[k - 1] * rate / k as f64);
        }
        let pade = dense_expm(g.matrix(), t);
        for k in 0..n {
            assert_abs_diff_eq!(pade[(k, 0)], poisson[k], epsilon = 1e-13);
        }
        for m in METHODS {
            let w = evolve(&g, &u, &EvolutionSpec::at(t).with_method(m).with_tolerance(1e-12)).unwrap();
            let err: f64 = w.values().iter().zip(&poisson).map(|(a, b)| (a - b).abs()).sum();
            assert!(err < 1e-11, "{m:?}: {err}");
        }
    }

    #[test]
    fn methods_agree_on_rotation() {
        let (c, g) = rotation(12);
        let u = c.project(|x| (-4.0 * ((x[0] - 0.3).powi(2) + x[1] * x[1])).exp()).unwrap();
        let spec = EvolutionSpec::at(0.8).with_tolerance(1e-10);
        let reference = evolve(&g, &u, &spec.with_method(EvolutionMethod::DensePade)).unwrap();
        for m in [EvolutionMethod::ScaledTaylor, EvolutionMethod::Krylov] {
            let w = evolve(&g, &u, &spec.with_method(m)).unwrap();
            assert!(w.l1_distance(&reference).unwrap() <= 1e-10 * u.l1_norm(), "{m:?}");
        }
    }

    #[test]
    fn taylor_keeps_nonnegative_densities_nonnegative() {
        let (c, g) = rotation(16);
        let u = c.project(|x| if x[0] > 0.5 { 1.0 } else { 0.0 }).unwrap();
        let mut mass = u.mass();
        for t in [0.1, 1.0, 10.0] {
            let w = evolve(&g, &u, &EvolutionSpec::at(t)).unwrap();
            assert!(w.min() >= 0.0);
            assert!(w.mass() <= mass + 1e-12);
            mass = w.mass();
        }
    }

    #[test]
    fn substep_budget_is_enforced() {
        let (c, g) = drift(16);
        let u = c.project(|_| 1.0).unwrap();
        let spec = EvolutionSpec { t: 50.0, max_substeps: 2, ..Default::default() };
        assert!(matches!(evolve(&g, &u, &spec), Err(Error::Accuracy { .. })));
        let big = drift(DENSE_LIMIT + 1);
        let u = big.0.project(|_| 1.0).unwrap();
        assert!(evolve(&big.1, &u, &EvolutionSpec::at(1.0).with_method(EvolutionMethod::DensePade)).is_err());
        assert!(evolve(&big.1, &u, &EvolutionSpec::at(-1.0)).is_err());
    }

    #[test]
    fn clamped_substeps_stay_accurate_or_report() {
        // ‖B‖₁ <= α keeps the long series stable even for signed data
        let (c, g) = drift(64);
        let u = c.project(|x| (40.0 * x[0]).sin()).unwrap();
        let spec = EvolutionSpec { t: 0.5, max_substeps: 1, ..Default::default() };
        let w = evolve(&g, &u, &spec).unwrap();
        let reference = evolve(&g, &u, &EvolutionSpec::at(0.5).with_method(EvolutionMethod::DensePade)).unwrap();
        assert!(w.l1_distance(&reference).unwrap() < 1e-8 * u.l1_norm());
        // a series that cannot converge within the term budget is an error
        let (c, g) = rotation(64);
        let u = c.project(|x| x[0]).unwrap();
        let spec = EvolutionSpec { t: 10.0, max_substeps: 1, ..Default::default() };
        assert!(matches!(evolve(&g, &u, &spec), Err(Error::Accuracy { .. })));
    }

    #[test]
    fn evolve_times_matches_direct() {
        let (c, g) = drift(32);
        let u = c.project(|x| (x[0] * 6.0).sin().abs()).unwrap();
        let ws = evolve_times(&g, &u, &[0.1, 0.25, 0.25, 0.6], &EvolutionSpec::default()).unwrap();
        let direct = evolve(&g, &u, &EvolutionSpec::at(0.6)).unwrap();
        assert!(ws[3].l1_distance(&direct).unwrap() < 1e-8);
        assert_eq!(ws[1], ws[2]);
    }

    #[test]
    fn resolvent_simple_cases() {
        let (c, g0) = {
            let c = BoxCovering::build(&StateSpace::unit_interval(), &[5]).unwrap();
            let g = assemble(&FieldSpec::ConstantDrift { velocity: vec![0.0] }, &c, &FaceQuadratureSpec::default()).unwrap();
            (c, g)
        };
        let u = c.project(|x| 1.0 + x[0]).unwrap();
        let w = resolvent(&g0, &u, 4.0).unwrap();
        for (a, b) in w.values().iter().zip(u.values()) {
            assert_abs_diff_eq!(*a, b / 4.0, epsilon = 1e-14);
        }
        let (c1, g1) = drift(1);
        let w = resolvent(&g1, &c1.density(vec![1.0]).unwrap(), 1.0).unwrap();
        assert_abs_diff_eq!(w.values()[0], 0.5, epsilon = 1e-14);
        assert!(resolvent(&g1, &c1.density(vec![1.0]).unwrap(), 0.0).is_err());
    }

    #[test]
    fn resolvent_residual_and_positivity_on_rotation() {
        let (c, g) = rotation(20);
        let u = c.project(|x| if x[1] > 0.2 { 1.0 } else { 0.0 }).unwrap();
        for lambda in [0.1, 1.0, 5.0] {
            let w = resolvent(&g, &u, lambda).unwrap();
            assert!(resolvent_residual(&g, &u, &w, lambda).unwrap() <= 1e-10);
            assert!(w.min() >= -1e-10);
        }
    }

    #[test]
    fn semigroup_defect_is_small() {
        let (c, g) = drift(32);
        let u = c.project(|x| (-30.0 * (x[0] - 0.3).powi(2)).exp()).unwrap();
        let spec = EvolutionSpec::default();
        assert_eq!(semigroup_defect(&g, &u, 0.0, 0.0, &spec).unwrap(), 0.0);
        assert!(semigroup_defect(&g, &u, 0.0, 0.2, &spec).unwrap() <= 1e-12);
        assert!(semigroup_defect(&g, &u, 0.1, 0.1, &spec).unwrap() <= 2.0 * spec.tolerance * u.l1_norm());
        assert!(semigroup_defect(&g, &u, -0.1, 0.1, &spec).is_err());
    }

    #[test]
    fn spec_json_uses_kebab_case() {
        let s: EvolutionSpec = serde_json::from_str(r#"{"t": 1.5, "method": "dense-pade"}"#).unwrap();
        assert_eq!(s.method, EvolutionMethod::DensePade);
        assert_eq!(s.tolerance, 1e-8);
        assert!(serde_json::to_string(&EvolutionSpec::default()).unwrap().contains("scaled-taylor"));
    }
}
