//! Dormand–Prince 5(4) integration of `ẋ = v(x)` augmented with the Liouville
//! accumulator `ℓ̇ = div v(x)`, with first-exit detection from `int X`.
//!
//! The state integrated is `(x, ℓ)`; `exp(ℓ(t))` equals `det D_x φᵗ(x₀)`.
//! Time may be negative (backward flow). Exit detection probes the
//! continuous extension inside every accepted step and bisects to
//! `boundary_tol` in time.

use serde::{Deserialize, Serialize};

use crate::covering::StateSpace;
use crate::error::{Error, Result};
use crate::flow::field::VectorField;

/// Tolerances and budgets for [`integrate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorOptions {
    pub atol: f64,
    pub rtol: f64,
    /// Exit-time localization tolerance.
    pub boundary_tol: f64,
    /// Largest admissible |t|.
    pub t_max: f64,
    pub max_steps: usize,
    /// Largest step; unbounded when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_max: Option<f64>,
    /// Interior points of each step probed for boundary crossings.
    pub exit_probes: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            atol: 1e-10,
            rtol: 1e-8,
            boundary_tol: 1e-9,
            t_max: 1e6,
            max_steps: 1_000_000,
            h_max: None,
            exit_probes: 4,
        }
    }
}

impl IntegratorOptions {
    pub fn tight() -> Self {
        IntegratorOptions { atol: 1e-13, rtol: 1e-12, ..Self::default() }
    }
}

/// Outcome of integrating one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryResult {
    /// State at the requested time, or at the exit time if the path left `int X`.
    pub end_point: Vec<f64>,
    pub exited: bool,
    /// Elapsed time `|s*|` at which the path first left `int X`.
    pub exit_time: Option<f64>,
    /// `∫ div v` along the computed path (signed with the time direction).
    pub log_det: f64,
}

impl TrajectoryResult {
    /// `|det D_x φᵗ(x₀)|` by Liouville's formula.
    pub fn jacobian_det(&self) -> f64 {
        self.log_det.exp()
    }
}

// Dormand–Prince tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// continuous extension (Hairer, Nørsett & Wanner)
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

struct Rhs<'a, F: ?Sized> {
    field: &'a F,
    dim: usize,
    sign: f64,
}

impl<F: VectorField + ?Sized> Rhs<'_, F> {
    fn eval(&self, y: &[f64], out: &mut [f64]) {
        let d = self.dim;
        self.field.eval(&y[..d], &mut out[..d]);
        out[d] = self.field.divergence(&y[..d]);
        for v in out.iter_mut() {
            *v *= self.sign;
        }
    }
}

/// Coefficients of the quartic continuous extension over one step.
struct DenseStep {
    r: [Vec<f64>; 5],
}

impl DenseStep {
    fn eval(&self, theta: f64, out: &mut [f64]) {
        let t1 = 1.0 - theta;
        for i in 0..out.len() {
            out[i] = self.r[0][i]
                + theta * (self.r[1][i] + t1 * (self.r[2][i] + theta * (self.r[3][i] + t1 * self.r[4][i])));
        }
    }
}

fn error_norm(err: &[f64], y0: &[f64], y1: &[f64], opts: &IntegratorOptions) -> f64 {
    let n = err.len() as f64;
    (err.iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sc = opts.atol + opts.rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum::<f64>()
        / n)
        .sqrt()
}

/// Integrates the flow from `x0` for signed time `t`.
///
/// With `space = Some(X)`, the path is stopped at the first time it is no
/// longer in `int X`; a start point on `∂X` exits at time 0.
pub fn integrate<F: VectorField + ?Sized>(
    field: &F,
    x0: &[f64],
    t: f64,
    space: Option<&StateSpace>,
    opts: &IntegratorOptions,
) -> Result<TrajectoryResult> {
    let mut out = integrate_checkpoints(field, x0, &[t], space, opts)?;
    Ok(out.pop().expect("one checkpoint"))
}

/// Integrates once and reports the trajectory at each of `times`, which must
/// share a sign and be sorted by increasing magnitude. Checkpoints after an
/// exit all report that exit.
pub fn integrate_checkpoints<F: VectorField + ?Sized>(
    field: &F,
    x0: &[f64],
    times: &[f64],
    space: Option<&StateSpace>,
    opts: &IntegratorOptions,
) -> Result<Vec<TrajectoryResult>> {
    let d = field.dim();
    if x0.len() != d {
        return Err(Error::Usage(format!("initial point has dimension {}, field has {d}", x0.len())));
    }
    if let Some(s) = space {
        if s.dim() != d {
            return Err(Error::Usage(format!("state space has dimension {}, field has {d}", s.dim())));
        }
    }
    let sign = match times.iter().find(|t| **t != 0.0) {
        Some(t) if *t < 0.0 => -1.0,
        _ => 1.0,
    };
    let mut prev = 0.0;
    for &t in times {
        if !t.is_finite() || t.abs() > opts.t_max {
            return Err(Error::Config(format!("|t| = {} exceeds t_max = {}", t.abs(), opts.t_max)));
        }
        if (t != 0.0 && t.signum() != sign) || t.abs() < prev {
            return Err(Error::Usage("checkpoint times must share a sign and increase in magnitude".into()));
        }
        prev = t.abs();
    }

    let rhs = Rhs { field, dim: d, sign };
    let n = d + 1;
    let mut y = x0.to_vec();
    y.push(0.0);
    let mut results = Vec::with_capacity(times.len());

    let inside = |y: &[f64]| space.is_none_or(|s| s.contains_interior(&y[..d]));
    let exit_result = |y: &[f64], s: f64| TrajectoryResult {
        end_point: y[..d].to_vec(),
        exited: true,
        exit_time: Some(s),
        log_det: y[d],
    };

    if !inside(&y) {
        return Ok(times.iter().map(|_| exit_result(&y, 0.0)).collect());
    }

    let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; n]);
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut probe = vec![0.0; n];
    rhs.eval(&y, &mut k[0]);

    let mut s = 0.0;
    let h_max = opts.h_max.unwrap_or(f64::INFINITY);
    let mut h = h_max;
    let mut steps = 0usize;

    for &target in times {
        let target = target.abs();
        while s < target {
            let remaining = target - s;
            let clipped = h >= remaining;
            let step = if clipped { remaining } else { h };
            if step < 1e-14 * s.max(1.0) {
                return Err(Error::StiffIntegration { time: sign * s, step });
            }
            steps += 1;
            if steps > opts.max_steps {
                return Err(Error::StiffIntegration { time: sign * s, step });
            }

            for i in 0..n {
                ytmp[i] = y[i] + step * A21 * k[0][i];
            }
            rhs.eval(&ytmp, &mut k[1]);
            for i in 0..n {
                ytmp[i] = y[i] + step * (A31 * k[0][i] + A32 * k[1][i]);
            }
            rhs.eval(&ytmp, &mut k[2]);
            for i in 0..n {
                ytmp[i] = y[i] + step * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
            }
            rhs.eval(&ytmp, &mut k[3]);
            for i in 0..n {
                ytmp[i] = y[i] + step * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
            }
            rhs.eval(&ytmp, &mut k[4]);
            for i in 0..n {
                ytmp[i] = y[i]
                    + step * (A61 * k[0][i] + A62 * k[1][i] + A63 * k[2][i] + A64 * k[3][i] + A65 * k[4][i]);
            }
            rhs.eval(&ytmp, &mut k[5]);
            for i in 0..n {
                ynew[i] = y[i]
                    + step * (A71 * k[0][i] + A73 * k[2][i] + A74 * k[3][i] + A75 * k[4][i] + A76 * k[5][i]);
            }
            rhs.eval(&ynew, &mut k[6]);
            for i in 0..n {
                err[i] = step
                    * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
            }
            if ynew.iter().chain(&k[6]).any(|v| !v.is_finite()) {
                if step > 1e-3 * remaining.max(1e-300) && step > 1e-12 {
                    h = 0.1 * step;
                    continue;
                }
                return Err(Error::Numerical(format!("non-finite state at t = {}", sign * s)));
            }
            let e = error_norm(&err, &y, &ynew, opts);
            let fac = if e == 0.0 { 10.0 } else { (0.9 * e.powf(-0.2)).clamp(0.2, 10.0) };
            if e > 1.0 {
                h = step * fac.min(1.0);
                continue;
            }

            if let Some(space) = space {
                let dense = DenseStep {
                    r: [
                        y.clone(),
                        ynew.iter().zip(&y).map(|(a, b)| a - b).collect(),
                        (0..n).map(|i| step * k[0][i] - (ynew[i] - y[i])).collect(),
                        (0..n).map(|i| (ynew[i] - y[i]) - step * k[6][i] - (step * k[0][i] - (ynew[i] - y[i]))).collect(),
                        (0..n)
                            .map(|i| {
                                step * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i] + D7 * k[6][i])
                            })
                            .collect(),
                    ],
                };
                let probes = opts.exit_probes.max(1);
                let mut lo = 0.0;
                let mut crossing = None;
                for p in 1..=probes {
                    let theta = p as f64 / probes as f64;
                    if p == probes {
                        probe.copy_from_slice(&ynew);
                    } else {
                        dense.eval(theta, &mut probe);
                    }
                    if !space.contains_interior(&probe[..d]) {
                        crossing = Some((lo, theta));
                        break;
                    }
                    lo = theta;
                }
                if let Some((mut a, mut b)) = crossing {
                    while (b - a) * step > opts.boundary_tol {
                        let mid = 0.5 * (a + b);
                        dense.eval(mid, &mut probe);
                        if space.contains_interior(&probe[..d]) {
                            a = mid;
                        } else {
                            b = mid;
                        }
                    }
                    if b == 1.0 {
                        probe.copy_from_slice(&ynew);
                    } else {
                        dense.eval(b, &mut probe);
                    }
                    let exit = exit_result(&probe, s + b * step);
                    while results.len() < times.len() {
                        results.push(exit.clone());
                    }
                    return Ok(results);
                }
            }

            s = if clipped { target } else { s + step };
            std::mem::swap(&mut y, &mut ynew);
            k.swap(0, 6);
            let proposal = step * fac;
            h = if clipped { h.max(proposal) } else { proposal };
            h = h.min(h_max);
        }
        results.push(TrajectoryResult {
            end_point: y[..d].to_vec(),
            exited: false,
            exit_time: None,
            log_det: y[d],
        });
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::field::FieldSpec;
    use approx::assert_abs_diff_eq;

    fn unit() -> StateSpace {
        StateSpace::unit_interval()
    }

    #[test]
    fn constant_drift_translates() {
        let f = FieldSpec::ConstantDrift { velocity: vec![1.0] };
        let r = integrate(&f, &[0.2], 0.3, Some(&unit()), &Default::default()).unwrap();
        assert!(!r.exited);
        assert_abs_diff_eq!(r.end_point[0], 0.5, epsilon = 1e-14);
        assert_eq!(r.log_det, 0.0);
    }

    #[test]
    fn linear_field_backward() {
        let f = FieldSpec::Linear1d { a: 1.0, b: 0.0 };
        let t = -std::f64::consts::LN_2;
        let r = integrate(&f, &[0.5], t, Some(&unit()), &Default::default()).unwrap();
        assert!(!r.exited);
        assert_abs_diff_eq!(r.end_point[0], 0.25, epsilon = 1e-9);
        assert_abs_diff_eq!(r.log_det, t, epsilon = 1e-12);
        assert_abs_diff_eq!(r.jacobian_det(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn linear_crossing_detected() {
        let f = FieldSpec::ConstantDrift { velocity: vec![1.0] };
        let opts = IntegratorOptions::default();
        let r = integrate(&f, &[0.9], 0.3, Some(&unit()), &opts).unwrap();
        assert!(r.exited);
        let s = r.exit_time.unwrap();
        assert!((s - 0.1).abs() <= opts.boundary_tol, "exit at {s}");
        assert!((r.end_point[0] - 1.0).abs() <= 2.0 * opts.boundary_tol);
    }

    #[test]
    fn exit_inside_a_long_step_is_found() {
        // a single step spans the whole horizon; the crossing is found inside it
        let f = FieldSpec::Linear1d { a: 0.0, b: 1.0 };
        let space = StateSpace::boxed(vec![0.0], vec![0.5]).unwrap();
        let r = integrate(&f, &[0.1], 5.0, Some(&space), &Default::default()).unwrap();
        assert!(r.exited);
        assert_abs_diff_eq!(r.exit_time.unwrap(), 0.4, epsilon = 1e-9);
    }

    #[test]
    fn boundary_start_exits_immediately() {
        let f = FieldSpec::ConstantDrift { velocity: vec![1.0] };
        let r = integrate(&f, &[0.0], -0.1, Some(&unit()), &Default::default()).unwrap();
        assert!(r.exited);
        assert_eq!(r.exit_time, Some(0.0));
    }

    #[test]
    fn touching_boundary_at_final_time_counts_as_exit() {
        let f = FieldSpec::ConstantDrift { velocity: vec![1.0] };
        let r = integrate(&f, &[0.75], 0.25, Some(&unit()), &Default::default()).unwrap();
        assert!(r.exited);
    }

    #[test]
    fn rotation_period_and_dense_output() {
        let f = FieldSpec::Rotation { omega: 1.0, center: [0.0, 0.0] };
        let tau = 2.0 * std::f64::consts::PI;
        let r = integrate(&f, &[0.5, 0.0], tau, None, &IntegratorOptions::tight()).unwrap();
        assert_abs_diff_eq!(r.end_point[0], 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(r.end_point[1], 0.0, epsilon = 1e-10);
        // exit from a disk of radius 0.5 + tiny offset never happens; from the box [-0.4,0.6]^2 it does
        let space = StateSpace::boxed(vec![-0.6, -0.4], vec![0.6, 0.6]).unwrap();
        let r = integrate(&f, &[0.5, 0.0], tau, Some(&space), &Default::default()).unwrap();
        // first crossing of y = -0.4 along the circle of radius 0.5: angle = pi + asin(0.8)
        let expected = std::f64::consts::PI + (0.8f64).asin();
        assert!(r.exited);
        assert_abs_diff_eq!(r.exit_time.unwrap(), expected, epsilon = 1e-7);
    }

    #[test]
    fn checkpoints_agree_with_separate_runs() {
        let f = FieldSpec::GradientBump { center: [0.1, 0.0], width: 0.5, strength: 0.4 };
        let opts = IntegratorOptions::tight();
        let times = [-0.1, -0.4, -1.3];
        let multi = integrate_checkpoints(&f, &[0.3, 0.2], &times, None, &opts).unwrap();
        for (t, m) in times.iter().zip(&multi) {
            let single = integrate(&f, &[0.3, 0.2], *t, None, &opts).unwrap();
            assert_abs_diff_eq!(m.end_point[0], single.end_point[0], epsilon = 1e-10);
            assert_abs_diff_eq!(m.log_det, single.log_det, epsilon = 1e-10);
        }
        assert!(integrate_checkpoints(&f, &[0.3, 0.2], &[0.1, -0.2], None, &opts).is_err());
        assert!(integrate_checkpoints(&f, &[0.3, 0.2], &[0.3, 0.2], None, &opts).is_err());
    }

    #[test]
    fn too_long_horizon_rejected() {
        let f = FieldSpec::ConstantDrift { velocity: vec![1.0] };
        let opts = IntegratorOptions { t_max: 10.0, ..Default::default() };
        assert!(matches!(integrate(&f, &[0.5], 11.0, None, &opts), Err(Error::Config(_))));
    }

    #[test]
    fn blow_up_is_reported() {
        // x' = x^2 blows up at t = 1/x0
        let f = crate::flow::field::CustomField::new(1, |x, out| out[0] = x[0] * x[0]);
        let r = integrate(&f, &[1.0], 2.0, None, &Default::default());
        assert!(r.is_err());
    }
}
