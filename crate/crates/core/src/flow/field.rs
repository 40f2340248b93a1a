//! Autonomous vector fields and the built-in catalog.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An autonomous C² vector field on ℝᵈ.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    /// Writes `v(x)` into `out`.
    fn eval(&self, x: &[f64], out: &mut [f64]);

    /// `div v(x)`; defaults to central differences.
    fn divergence(&self, x: &[f64]) -> f64 {
        fd_divergence(self, x, self.fd_step())
    }

    /// Row-major `d × d` Jacobian `∂v_i/∂x_j`; defaults to central differences.
    fn jacobian(&self, x: &[f64]) -> Vec<f64> {
        fd_jacobian(self, x, self.fd_step())
    }

    /// Step used by the finite-difference defaults.
    fn fd_step(&self) -> f64 {
        1e-5
    }

    fn velocity(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval(x, &mut out);
        out
    }
}

pub fn fd_divergence<F: VectorField + ?Sized>(field: &F, x: &[f64], step: f64) -> f64 {
    let d = field.dim();
    let mut xp = x.to_vec();
    let mut vp = vec![0.0; d];
    let mut vm = vec![0.0; d];
    let mut div = 0.0;
    for k in 0..d {
        xp[k] = x[k] + step;
        field.eval(&xp, &mut vp);
        xp[k] = x[k] - step;
        field.eval(&xp, &mut vm);
        xp[k] = x[k];
        div += (vp[k] - vm[k]) / (2.0 * step);
    }
    div
}

pub fn fd_jacobian<F: VectorField + ?Sized>(field: &F, x: &[f64], step: f64) -> Vec<f64> {
    let d = field.dim();
    let mut jac = vec![0.0; d * d];
    let mut xp = x.to_vec();
    let mut vp = vec![0.0; d];
    let mut vm = vec![0.0; d];
    for j in 0..d {
        xp[j] = x[j] + step;
        field.eval(&xp, &mut vp);
        xp[j] = x[j] - step;
        field.eval(&xp, &mut vm);
        xp[j] = x[j];
        for i in 0..d {
            jac[i * d + j] = (vp[i] - vm[i]) / (2.0 * step);
        }
    }
    jac
}

fn default_omega() -> f64 {
    1.0
}

fn origin2() -> [f64; 2] {
    [0.0, 0.0]
}

/// Built-in vector fields, selectable by name. All carry analytic divergence
/// and Jacobian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum FieldSpec {
    /// `v(x) = c` in any dimension.
    ConstantDrift { velocity: Vec<f64> },
    /// `v(x) = a x + b` in 1D.
    Linear1d { a: f64, b: f64 },
    /// Rigid rotation `v = ω (-(y - y₀), x - x₀)`.
    Rotation {
        #[serde(default = "default_omega")]
        omega: f64,
        #[serde(default = "origin2")]
        center: [f64; 2],
    },
    /// `v(x) = A x + b` in 2D (saddles, shears, sinks, ...).
    Linear2d {
        matrix: [[f64; 2]; 2],
        #[serde(default = "origin2")]
        offset: [f64; 2],
    },
    /// `v = s ∇g` with the Gaussian `g(x) = exp(-|x - c|² / (2w²))`.
    GradientBump { center: [f64; 2], width: f64, strength: f64 },
}

impl FieldSpec {
    pub fn saddle(rate: f64) -> Self {
        FieldSpec::Linear2d { matrix: [[rate, 0.0], [0.0, -rate]], offset: [0.0, 0.0] }
    }

    pub fn shear(rate: f64) -> Self {
        FieldSpec::Linear2d { matrix: [[0.0, rate], [0.0, 0.0]], offset: [0.0, 0.0] }
    }

    /// Named catalog instances used by the invariant suites, with the state
    /// space each one is exercised on (1D fields on [0,1], 2D on [-1,1]²).
    pub fn catalog() -> Vec<(&'static str, FieldSpec)> {
        vec![
            ("drift_1d", FieldSpec::ConstantDrift { velocity: vec![1.0] }),
            ("linear_1d", FieldSpec::Linear1d { a: 1.0, b: -0.3 }),
            ("drift_2d", FieldSpec::ConstantDrift { velocity: vec![0.6, -0.8] }),
            ("rotation", FieldSpec::Rotation { omega: 1.0, center: [0.0, 0.0] }),
            ("saddle", FieldSpec::saddle(1.0)),
            ("shear", FieldSpec::shear(1.0)),
            ("gradient_bump", FieldSpec::GradientBump { center: [0.2, -0.1], width: 0.4, strength: 0.3 }),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            FieldSpec::ConstantDrift { velocity } => !velocity.is_empty() && velocity.iter().all(|v| v.is_finite()),
            FieldSpec::Linear1d { a, b } => a.is_finite() && b.is_finite(),
            FieldSpec::Rotation { omega, center } => omega.is_finite() && center.iter().all(|c| c.is_finite()),
            FieldSpec::Linear2d { matrix, offset } => {
                matrix.iter().flatten().chain(offset).all(|v| v.is_finite())
            }
            FieldSpec::GradientBump { center, width, strength } => {
                *width > 0.0 && strength.is_finite() && center.iter().all(|c| c.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid field parameters: {self:?}")))
        }
    }
}

impl VectorField for FieldSpec {
    fn dim(&self) -> usize {
        match self {
            FieldSpec::ConstantDrift { velocity } => velocity.len(),
            FieldSpec::Linear1d { .. } => 1,
            _ => 2,
        }
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self {
            FieldSpec::ConstantDrift { velocity } => out.copy_from_slice(velocity),
            FieldSpec::Linear1d { a, b } => out[0] = a * x[0] + b,
            FieldSpec::Rotation { omega, center } => {
                out[0] = -omega * (x[1] - center[1]);
                out[1] = omega * (x[0] - center[0]);
            }
            FieldSpec::Linear2d { matrix, offset } => {
                out[0] = matrix[0][0] * x[0] + matrix[0][1] * x[1] + offset[0];
                out[1] = matrix[1][0] * x[0] + matrix[1][1] * x[1] + offset[1];
            }
            FieldSpec::GradientBump { center, width, strength } => {
                let (dx, dy) = (x[0] - center[0], x[1] - center[1]);
                let w2 = width * width;
                let g = (-(dx * dx + dy * dy) / (2.0 * w2)).exp();
                out[0] = -strength * dx / w2 * g;
                out[1] = -strength * dy / w2 * g;
            }
        }
    }

    fn divergence(&self, x: &[f64]) -> f64 {
        match self {
            FieldSpec::ConstantDrift { .. } | FieldSpec::Rotation { .. } => 0.0,
            FieldSpec::Linear1d { a, .. } => *a,
            FieldSpec::Linear2d { matrix, .. } => matrix[0][0] + matrix[1][1],
            FieldSpec::GradientBump { center, width, strength } => {
                let r2 = (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2);
                let w2 = width * width;
                strength * (r2 / (w2 * w2) - 2.0 / w2) * (-r2 / (2.0 * w2)).exp()
            }
        }
    }

    fn jacobian(&self, x: &[f64]) -> Vec<f64> {
        match self {
            FieldSpec::ConstantDrift { velocity } => vec![0.0; velocity.len().pow(2)],
            FieldSpec::Linear1d { a, .. } => vec![*a],
            FieldSpec::Rotation { omega, .. } => vec![0.0, -omega, *omega, 0.0],
            FieldSpec::Linear2d { matrix, .. } => vec![matrix[0][0], matrix[0][1], matrix[1][0], matrix[1][1]],
            FieldSpec::GradientBump { center, width, strength } => {
                let (dx, dy) = (x[0] - center[0], x[1] - center[1]);
                let w2 = width * width;
                let g = (-(dx * dx + dy * dy) / (2.0 * w2)).exp();
                let s = strength * g / w2;
                vec![s * (dx * dx / w2 - 1.0), s * dx * dy / w2, s * dx * dy / w2, s * (dy * dy / w2 - 1.0)]
            }
        }
    }
}

type FieldFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A user-supplied field; divergence falls back to central differences.
#[derive(Clone)]
pub struct CustomField {
    dim: usize,
    eval: FieldFn,
    divergence: Option<ScalarFn>,
    fd_step: f64,
}

impl CustomField {
    pub fn new(dim: usize, eval: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        CustomField { dim, eval: Arc::new(eval), divergence: None, fd_step: 1e-5 }
    }

    pub fn with_divergence(mut self, div: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.divergence = Some(Arc::new(div));
        self
    }

    /// Sets the finite-difference step to `1e-5 · scale`.
    pub fn with_domain_scale(mut self, scale: f64) -> Self {
        self.fd_step = 1e-5 * scale;
        self
    }
}

impl VectorField for CustomField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.eval)(x, out)
    }

    fn divergence(&self, x: &[f64]) -> f64 {
        match &self.divergence {
            Some(f) => f(x),
            None => fd_divergence(self, x, self.fd_step),
        }
    }

    fn fd_step(&self) -> f64 {
        self.fd_step
    }
}
