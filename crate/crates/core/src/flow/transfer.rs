//! Pointwise evaluation of the outflow transfer operator and the analytic
//! generator on smooth test functions.

use crate::covering::{BoxCovering, DensityVector, ProjectionRule};
use crate::error::{ensure_finite, Error, Result};
use crate::flow::field::VectorField;
use crate::flow::integrate::{integrate_checkpoints, IntegratorOptions};
use crate::flow::testfn::TestFunction;
use crate::par;
use crate::quadrature::{Rule1d, TensorRule};

/// `P̃ᵗu(x)`: follows the flow backward from `x` for time `t`. If the backward
/// path stays in `int X` throughout `[0, t]` the value is
/// `u(φ⁻ᵗx) · |det D_x φ⁻ᵗ x|`; otherwise it is 0.
pub fn transfer_exact<F: VectorField + ?Sized>(
    field: &F,
    u: &TestFunction,
    x: &[f64],
    t: f64,
    space: &crate::covering::StateSpace,
    opts: &IntegratorOptions,
) -> Result<f64> {
    Ok(transfer_exact_at_times(field, u, x, &[t], space, opts)?[0])
}

/// [`transfer_exact`] at several nonnegative, increasing times from one
/// backward integration.
pub fn transfer_exact_at_times<F: VectorField + ?Sized>(
    field: &F,
    u: &TestFunction,
    x: &[f64],
    times: &[f64],
    space: &crate::covering::StateSpace,
    opts: &IntegratorOptions,
) -> Result<Vec<f64>> {
    if times.iter().any(|t| *t < 0.0) {
        return Err(Error::Usage("transfer operator is only defined for t >= 0".into()));
    }
    let back: Vec<f64> = times.iter().map(|t| -t).collect();
    let paths = integrate_checkpoints(field, x, &back, Some(space), opts)?;
    paths
        .iter()
        .map(|p| {
            if p.exited {
                Ok(0.0)
            } else {
                ensure_finite(u.eval(&p.end_point) * p.log_det.exp(), "transfer operator value")
            }
        })
        .collect()
}

/// Box averages of `P̃ᵗu` with `nodes_per_box` quadrature points per axis
/// (Gauss for smooth `u`, midpoint for indicators).
pub fn transfer_exact_grid<F: VectorField + ?Sized>(
    field: &F,
    u: &TestFunction,
    covering: &BoxCovering,
    t: f64,
    nodes_per_box: usize,
    opts: &IntegratorOptions,
) -> Result<DensityVector> {
    Ok(transfer_exact_grid_times(field, u, covering, &[t], nodes_per_box, opts)?.remove(0))
}

/// [`transfer_exact_grid`] at several times, reusing each backward trajectory.
pub fn transfer_exact_grid_times<F: VectorField + ?Sized>(
    field: &F,
    u: &TestFunction,
    covering: &BoxCovering,
    times: &[f64],
    nodes_per_box: usize,
    opts: &IntegratorOptions,
) -> Result<Vec<DensityVector>> {
    let d = covering.dim();
    if field.dim() != d {
        return Err(Error::Usage(format!("field dimension {} != covering dimension {d}", field.dim())));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| times[i]).collect();

    let rule = match u.projection_rule(nodes_per_box) {
        ProjectionRule::Gauss(q) => TensorRule::new(d, Rule1d::gauss_legendre(q)),
        ProjectionRule::Midpoint(k) => TensorRule::new(d, Rule1d::midpoint(k)),
    };
    let space = covering.space();
    let h = covering.box_size().to_vec();
    let per_box = par::try_map_indexed(covering.len(), |a| {
        let lo = covering.box_lo(a);
        let mut acc = vec![0.0; sorted.len()];
        let mut failure = None;
        rule.for_each(|xi, w| {
            if failure.is_some() {
                return;
            }
            let x: Vec<f64> = (0..d).map(|k| lo[k] + xi[k] * h[k]).collect();
            if !space.contains(&x) {
                return;
            }
            match transfer_exact_at_times(field, u, &x, &sorted, space, opts) {
                Ok(vals) => acc.iter_mut().zip(vals).for_each(|(s, v)| *s += w * v),
                Err(e) => failure = Some(e),
            }
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(acc),
        }
    })?;
    let mut out = vec![Vec::new(); times.len()];
    for (slot, &orig) in order.iter().enumerate() {
        out[orig] = per_box.iter().map(|v| v[slot]).collect();
    }
    out.into_iter().map(|vals| covering.density(vals)).collect()
}

/// `(Gu)(x) = -div(v u)(x) = -u(x) div v(x) - v(x)·∇u(x)`.
pub fn apply_generator_analytic<F: VectorField + ?Sized>(field: &F, u: &TestFunction, x: &[f64]) -> Result<f64> {
    let grad = u
        .gradient(x)
        .ok_or_else(|| Error::Usage(format!("test function '{}' has no analytic gradient", u.name())))?;
    let v = field.velocity(x);
    let transport: f64 = v.iter().zip(&grad).map(|(a, b)| a * b).sum();
    Ok(-u.eval(x) * field.divergence(x) - transport)
}
