//! Test densities with analytic gradients, tagged by function class.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::covering::{ProjectionRule, StateSpace};
use crate::error::{Error, Result};

/// Regularity/boundary class of a test function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionClass {
    /// C¹ and zero on the inflow boundary `{v·n < 0}`.
    C1V,
    /// C¹ with compact support in `int X`.
    C100,
    /// Merely integrable (indicators and the like).
    General,
}

/// Serializable catalog of test functions. Bumps are scaled to unit L¹ mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionSpec {
    /// `∏ max(0, 1 - ((x_k - c_k)/r_k)²)³`, normalized.
    Bump { center: Vec<f64>, radii: Vec<f64> },
    /// `max(0, 1 - |x - c|²/r²)³`, normalized.
    RadialBump { center: Vec<f64>, radius: f64 },
    /// Indicator of the box `[lo, hi]`.
    Indicator { lo: Vec<f64>, hi: Vec<f64> },
    Constant { value: f64 },
}

type EvalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
enum Kind {
    Spec(FunctionSpec),
    Custom { eval: EvalFn, gradient: Option<GradFn>, smooth: bool },
}

/// A pointwise-evaluable density `u`, optionally with an analytic gradient.
#[derive(Clone)]
pub struct TestFunction {
    name: String,
    kind: Kind,
    class: FunctionClass,
    scale: f64,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("TestFunction");
        s.field("name", &self.name).field("class", &self.class);
        if let Kind::Spec(spec) = &self.kind {
            s.field("spec", spec);
        }
        s.finish()
    }
}

/// ∫_{-1}^{1} (1 - s²)³ ds
const BUMP_1D_MASS: f64 = 32.0 / 35.0;

fn unit_ball_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * std::f64::consts::PI / d as f64 * unit_ball_volume(d - 2),
    }
}

/// ∫_{|y|<1} (1 - |y|²)³ dy = d V_d · ½ B(d/2, 4)
fn radial_bump_mass(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    d as f64 * unit_ball_volume(d) * 0.5 * 6.0 / (h * (h + 1.0) * (h + 2.0) * (h + 3.0))
}

impl FunctionSpec {
    pub fn dim(&self) -> Option<usize> {
        match self {
            FunctionSpec::Bump { center, .. } | FunctionSpec::RadialBump { center, .. } => Some(center.len()),
            FunctionSpec::Indicator { lo, .. } => Some(lo.len()),
            FunctionSpec::Constant { .. } => None,
        }
    }

    fn default_class(&self) -> FunctionClass {
        match self {
            FunctionSpec::Bump { .. } | FunctionSpec::RadialBump { .. } => FunctionClass::C100,
            _ => FunctionClass::General,
        }
    }

    fn default_name(&self) -> String {
        match self {
            FunctionSpec::Bump { center, .. } => format!("bump@{center:?}"),
            FunctionSpec::RadialBump { center, radius } => format!("radial_bump@{center:?}r{radius}"),
            FunctionSpec::Indicator { lo, hi } => format!("indicator{lo:?}-{hi:?}"),
            FunctionSpec::Constant { value } => format!("constant{value}"),
        }
    }
}

impl TestFunction {
    pub fn from_spec(spec: FunctionSpec) -> Result<Self> {
        let scale = match &spec {
            FunctionSpec::Bump { center, radii } => {
                if center.len() != radii.len() || radii.iter().any(|r| !(*r > 0.0)) {
                    return Err(Error::Config("bump needs positive radii matching the center".into()));
                }
                1.0 / radii.iter().map(|r| r * BUMP_1D_MASS).product::<f64>()
            }
            FunctionSpec::RadialBump { center, radius } => {
                if !(*radius > 0.0) || center.is_empty() {
                    return Err(Error::Config("radial bump needs a positive radius".into()));
                }
                1.0 / (radial_bump_mass(center.len()) * radius.powi(center.len() as i32))
            }
            FunctionSpec::Indicator { lo, hi } => {
                if lo.len() != hi.len() || lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
                    return Err(Error::Config("indicator needs lo < hi on every axis".into()));
                }
                1.0
            }
            FunctionSpec::Constant { .. } => 1.0,
        };
        Ok(TestFunction { name: spec.default_name(), class: spec.default_class(), kind: Kind::Spec(spec), scale })
    }

    /// User function; `gradient` enables the analytic generator.
    pub fn custom(
        name: impl Into<String>,
        class: FunctionClass,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: Option<Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>>,
    ) -> Self {
        let smooth = gradient.is_some();
        TestFunction {
            name: name.into(),
            kind: Kind::Custom { eval: Arc::new(eval), gradient, smooth },
            class,
            scale: 1.0,
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_class(mut self, class: FunctionClass) -> Self {
        self.class = class;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn class(&self) -> FunctionClass {
        self.class
    }

    pub fn spec(&self) -> Option<&FunctionSpec> {
        match &self.kind {
            Kind::Spec(s) => Some(s),
            Kind::Custom { .. } => None,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match &self.kind {
            Kind::Spec(FunctionSpec::Bump { center, radii }) => {
                let mut p = self.scale;
                for k in 0..center.len() {
                    let s = (x[k] - center[k]) / radii[k];
                    let b = 1.0 - s * s;
                    if b <= 0.0 {
                        return 0.0;
                    }
                    p *= b * b * b;
                }
                p
            }
            Kind::Spec(FunctionSpec::RadialBump { center, radius }) => {
                let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                let b = 1.0 - r2 / (radius * radius);
                if b <= 0.0 {
                    0.0
                } else {
                    self.scale * b * b * b
                }
            }
            Kind::Spec(FunctionSpec::Indicator { lo, hi }) => {
                let inside = x.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| *a <= *v && *v <= *b);
                if inside {
                    1.0
                } else {
                    0.0
                }
            }
            Kind::Spec(FunctionSpec::Constant { value }) => *value,
            Kind::Custom { eval, .. } => eval(x),
        }
    }

    /// Analytic gradient, or `None` for non-differentiable functions.
    pub fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        match &self.kind {
            Kind::Spec(FunctionSpec::Bump { center, radii }) => {
                let d = center.len();
                let mut factors = vec![0.0; d];
                let mut derivs = vec![0.0; d];
                for k in 0..d {
                    let s = (x[k] - center[k]) / radii[k];
                    let b = 1.0 - s * s;
                    if b <= 0.0 {
                        return Some(vec![0.0; d]);
                    }
                    factors[k] = b * b * b;
                    // d/dx (1 - s²)³ = 3 (1 - s²)² · (-2 s / r)
                    derivs[k] = -6.0 * b * b * s / radii[k];
                }
                Some(
                    (0..d)
                        .map(|k| {
                            self.scale
                                * derivs[k]
                                * factors.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, f)| f).product::<f64>()
                        })
                        .collect(),
                )
            }
            Kind::Spec(FunctionSpec::RadialBump { center, radius }) => {
                let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                let b = 1.0 - r2 / (radius * radius);
                if b <= 0.0 {
                    return Some(vec![0.0; center.len()]);
                }
                let c = -6.0 * self.scale * b * b / (radius * radius);
                Some(x.iter().zip(center).map(|(a, ce)| c * (a - ce)).collect())
            }
            Kind::Spec(FunctionSpec::Indicator { .. }) => None,
            Kind::Spec(FunctionSpec::Constant { .. }) => Some(vec![0.0; x.len()]),
            Kind::Custom { gradient, .. } => gradient.as_ref().map(|g| g(x)),
        }
    }

    /// Quadrature suited to this function: Gauss for smooth functions, a
    /// midpoint grid for indicator-like ones.
    pub fn projection_rule(&self, gauss_points: usize) -> ProjectionRule {
        let smooth = match &self.kind {
            Kind::Spec(FunctionSpec::Indicator { .. }) => false,
            Kind::Spec(_) => true,
            Kind::Custom { smooth, .. } => *smooth,
        };
        if smooth {
            ProjectionRule::Gauss(gauss_points)
        } else {
            match ProjectionRule::INDICATOR {
                ProjectionRule::Midpoint(k) => ProjectionRule::Midpoint(k.max(gauss_points)),
                other => other,
            }
        }
    }

    /// Checks that the support lies in `int X` by sampling its boundary.
    /// Only meaningful for compactly supported catalog functions.
    pub fn supported_inside(&self, space: &StateSpace) -> bool {
        match &self.kind {
            Kind::Spec(FunctionSpec::Bump { center, radii }) => {
                let lo: Vec<f64> = center.iter().zip(radii).map(|(c, r)| c - r).collect();
                let hi: Vec<f64> = center.iter().zip(radii).map(|(c, r)| c + r).collect();
                box_surface_samples(&lo, &hi, 9).iter().all(|p| space.contains_interior(p))
            }
            Kind::Spec(FunctionSpec::RadialBump { center, radius }) => {
                let d = center.len();
                let lo: Vec<f64> = center.iter().map(|c| c - radius).collect();
                let hi: Vec<f64> = center.iter().map(|c| c + radius).collect();
                // points on the sphere obtained by projecting box-surface samples
                box_surface_samples(&lo, &hi, 17).iter().all(|p| {
                    let r = p.iter().zip(center).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
                    let q: Vec<f64> = (0..d).map(|k| center[k] + (p[k] - center[k]) * radius / r).collect();
                    space.contains_interior(&q)
                })
            }
            _ => false,
        }
    }
}

fn box_surface_samples(lo: &[f64], hi: &[f64], per_axis: usize) -> Vec<Vec<f64>> {
    let d = lo.len();
    let total = per_axis.pow(d as u32);
    let mut out = Vec::new();
    for flat in 0..total {
        let mut f = flat;
        let mut idx = vec![0; d];
        for k in (0..d).rev() {
            idx[k] = f % per_axis;
            f /= per_axis;
        }
        if idx.iter().any(|&i| i == 0 || i == per_axis - 1) {
            out.push((0..d).map(|k| lo[k] + (hi[k] - lo[k]) * idx[k] as f64 / (per_axis - 1) as f64).collect());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covering::BoxCovering;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bumps_have_unit_mass() {
        let space = StateSpace::boxed(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let c = BoxCovering::build(&space, &[64, 64]).unwrap();
        for spec in [
            FunctionSpec::Bump { center: vec![0.1, -0.2], radii: vec![0.5, 0.3] },
            FunctionSpec::RadialBump { center: vec![0.0, 0.0], radius: 0.75 },
        ] {
            let u = TestFunction::from_spec(spec).unwrap();
            let p = c.project_with(|x| u.eval(x), ProjectionRule::Gauss(6)).unwrap();
            assert_abs_diff_eq!(p.mass(), 1.0, epsilon = 1e-6);
        }
        let u = TestFunction::from_spec(FunctionSpec::Bump { center: vec![0.3], radii: vec![0.2] }).unwrap();
        let c1 = BoxCovering::build(&StateSpace::unit_interval(), &[200]).unwrap();
        assert_abs_diff_eq!(c1.project_with(|x| u.eval(x), ProjectionRule::Gauss(6)).unwrap().mass(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn radial_mass_constant() {
        // d = 2: π/4, d = 1: 32/35
        assert_abs_diff_eq!(radial_bump_mass(2), std::f64::consts::PI / 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(radial_bump_mass(1), BUMP_1D_MASS, epsilon = 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let fns = [
            TestFunction::from_spec(FunctionSpec::Bump { center: vec![0.1, -0.2], radii: vec![0.5, 0.3] }).unwrap(),
            TestFunction::from_spec(FunctionSpec::RadialBump { center: vec![0.0, 0.1], radius: 0.6 }).unwrap(),
        ];
        let h = 1e-6;
        for u in &fns {
            for x in [[0.2, -0.1], [0.0, 0.0], [-0.25, -0.3]] {
                let g = u.gradient(&x).unwrap();
                for k in 0..2 {
                    let mut xp = x;
                    let mut xm = x;
                    xp[k] += h;
                    xm[k] -= h;
                    let fd = (u.eval(&xp) - u.eval(&xm)) / (2.0 * h);
                    assert!((fd - g[k]).abs() < 1e-5 * (1.0 + g[k].abs()), "{fd} vs {}", g[k]);
                }
            }
        }
    }

    #[test]
    fn classes_and_support() {
        let space = StateSpace::unit_interval();
        let inside = TestFunction::from_spec(FunctionSpec::Bump { center: vec![0.3], radii: vec![0.2] }).unwrap();
        assert_eq!(inside.class(), FunctionClass::C100);
        assert!(inside.supported_inside(&space));
        let touching = TestFunction::from_spec(FunctionSpec::Bump { center: vec![0.1], radii: vec![0.2] }).unwrap();
        assert!(!touching.supported_inside(&space));
        let ind = TestFunction::from_spec(FunctionSpec::Indicator { lo: vec![0.0], hi: vec![0.5] }).unwrap();
        assert_eq!(ind.class(), FunctionClass::General);
        assert!(ind.gradient(&[0.2]).is_none());
        assert_eq!(ind.projection_rule(4), ProjectionRule::Midpoint(10));
        assert!(TestFunction::from_spec(FunctionSpec::Bump { center: vec![0.3], radii: vec![-0.2] }).is_err());
    }

    #[test]
    fn spec_json_shape() {
        let spec: FunctionSpec = serde_json::from_str(r#"{"kind":"bump","center":[0.3],"radii":[0.2]}"#).unwrap();
        assert_eq!(spec.dim(), Some(1));
    }
}
