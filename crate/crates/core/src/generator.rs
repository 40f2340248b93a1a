//! Upwind face-flux realization of the discrete generator on a box covering.
//!
//! For face-adjacent active boxes `j → i` the off-diagonal rate is
//! `(1/m) ∫_F (v·n_{j→i})⁺`, and the diagonal collects the outflow through
//! all `2d` faces of `j`, including faces on the covering exterior. Mass
//! crossing an exterior face appears on the diagonal only, which is where
//! loss enters. Inside the covering there is no killing at `∂X`: the flux
//! matrix is built from the full flow, and the covering exterior is the only
//! sink.

use serde::{Deserialize, Serialize};

use crate::covering::{face_id, BoxCovering, DensityVector};
use crate::error::{ensure_finite, Error, Result};
use crate::flow::{apply_generator_analytic, TestFunction, VectorField};
use crate::par;
use crate::quadrature::Rule1d;
use crate::sparse::SparseMatrix;
use crate::ulam::{self, SamplingSpec, UlamMode};

/// Quadrature applied on each box face.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaceQuadratureSpec {
    /// Gauss–Legendre points per face axis.
    pub points: usize,
    /// Bisect every face axis once when `v·n` changes sign on the face.
    pub split_on_sign_change: bool,
}

impl Default for FaceQuadratureSpec {
    fn default() -> Self {
        FaceQuadratureSpec { points: 6, split_on_sign_change: true }
    }
}

/// Sparse matrix of `G̃_n` on a covering (columns are source boxes).
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorMatrix {
    level: usize,
    box_measure: f64,
    matrix: SparseMatrix,
}

/// Outflow through one face of one box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaceFlux {
    pub source: usize,
    /// `None` when the face lies on the covering exterior.
    pub target: Option<usize>,
    pub face: usize,
    /// `∫_F (v·n)⁺ dm_{d-1}`, with `n` pointing out of the source box.
    pub flux: f64,
}

impl GeneratorMatrix {
    pub fn new(covering: &BoxCovering, matrix: SparseMatrix) -> Result<Self> {
        if matrix.nrows() != covering.len() || matrix.ncols() != covering.len() {
            return Err(Error::Usage(format!(
                "matrix is {}x{}, covering has {} boxes",
                matrix.nrows(),
                matrix.ncols(),
                covering.len()
            )));
        }
        Ok(GeneratorMatrix { level: covering.level(), box_measure: covering.box_measure(), matrix })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn len(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.ncols() == 0
    }

    pub fn box_measure(&self) -> f64 {
        self.box_measure
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> SparseMatrix {
        self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }

    /// Largest outflow rate `max_j |G_jj|`.
    pub fn max_outflow_rate(&self) -> f64 {
        self.matrix.diagonal().iter().fold(0.0, |m, d| m.max(d.abs()))
    }

    pub fn check_compatible(&self, u: &DensityVector) -> Result<()> {
        if u.level() != self.level || u.len() != self.len() || u.box_measure() != self.box_measure {
            return Err(Error::Usage(format!(
                "density (level {}, {} values) does not match generator (level {}, {} boxes)",
                u.level(),
                u.len(),
                self.level,
                self.len()
            )));
        }
        Ok(())
    }

    /// `G u`.
    pub fn apply(&self, u: &DensityVector) -> Result<DensityVector> {
        self.check_compatible(u)?;
        u.with_values(self.matrix.mul_vec(u.values()))
    }
}

/// Integrates `(v·n)⁺` and `(v·n)⁻` over the face of box `a` on `axis`/`high`.
fn face_fluxes<F: VectorField + ?Sized>(
    field: &F,
    covering: &BoxCovering,
    a: usize,
    axis: usize,
    high: bool,
    spec: &FaceQuadratureSpec,
    rule: &Rule1d,
) -> (f64, f64) {
    let d = covering.dim();
    let h = covering.box_size();
    let lo = covering.box_lo(a);
    let sign = if high { 1.0 } else { -1.0 };
    let normal_pos = lo[axis] + if high { h[axis] } else { 0.0 };
    let tangential: Vec<usize> = (0..d).filter(|&k| k != axis).collect();
    let face_area: f64 = tangential.iter().map(|&k| h[k]).product();
    let mut v = vec![0.0; d];
    let mut x = vec![0.0; d];
    x[axis] = normal_pos;

    let normal_velocity = |t: &[f64], x: &mut Vec<f64>, v: &mut Vec<f64>| {
        for (slot, &k) in tangential.iter().enumerate() {
            x[k] = lo[k] + t[slot] * h[k];
        }
        field.eval(x, v);
        sign * v[axis]
    };

    if d == 1 {
        let vn = normal_velocity(&[], &mut x, &mut v);
        return (vn.max(0.0), (-vn).max(0.0));
    }

    // Detect a sign change over the face from the Gauss nodes and corners.
    let m = tangential.len();
    let mut split = false;
    if spec.split_on_sign_change {
        let mut seen_pos = false;
        let mut seen_neg = false;
        let mut probe_nodes = rule.nodes.clone();
        probe_nodes.extend([0.0, 1.0]);
        let total = probe_nodes.len().pow(m as u32);
        let mut t = vec![0.0; m];
        for flat in 0..total {
            let mut f = flat;
            for slot in (0..m).rev() {
                t[slot] = probe_nodes[f % probe_nodes.len()];
                f /= probe_nodes.len();
            }
            let vn = normal_velocity(&t, &mut x, &mut v);
            seen_pos |= vn > 0.0;
            seen_neg |= vn < 0.0;
        }
        split = seen_pos && seen_neg;
    }

    // Sub-cells per tangential axis (1 or 2), Gauss rule on each.
    let cells = if split { 2 } else { 1 };
    let q = rule.len();
    let per_axis = cells * q;
    let total = per_axis.pow(m as u32);
    let mut t = vec![0.0; m];
    let (mut pos, mut neg) = (0.0, 0.0);
    for flat in 0..total {
        let mut f = flat;
        let mut w = 1.0;
        for slot in (0..m).rev() {
            let node = f % per_axis;
            f /= per_axis;
            let (cell, i) = (node / q, node % q);
            t[slot] = (cell as f64 + rule.nodes[i]) / cells as f64;
            w *= rule.weights[i] / cells as f64;
        }
        let vn = normal_velocity(&t, &mut x, &mut v);
        pos += w * vn.max(0.0);
        neg += w * (-vn).max(0.0);
    }
    (pos * face_area, neg * face_area)
}

/// Outflows through every face of every active box.
pub fn face_flux_table<F: VectorField + ?Sized>(
    field: &F,
    covering: &BoxCovering,
    spec: &FaceQuadratureSpec,
) -> Result<Vec<FaceFlux>> {
    if field.dim() != covering.dim() {
        return Err(Error::Usage(format!(
            "field dimension {} != covering dimension {}",
            field.dim(),
            covering.dim()
        )));
    }
    let rule = Rule1d::gauss_legendre(spec.points.max(1));
    let d = covering.dim();
    let per_box = par::try_map_indexed(covering.len(), |a| {
        let mut out = Vec::with_capacity(2 * d);
        for axis in 0..d {
            for high in [false, true] {
                let (flux, _) = face_fluxes(field, covering, a, axis, high, spec, &rule);
                let face = face_id(axis, high);
                out.push(FaceFlux {
                    source: a,
                    target: covering.neighbor(a, face),
                    face,
                    flux: ensure_finite(flux, "face flux")?,
                });
            }
        }
        Ok(out)
    })?;
    Ok(per_box.into_iter().flatten().collect())
}

/// Assembles the upwind generator. Entries below `1e-14 / h_min` are dropped.
pub fn assemble<F: VectorField + ?Sized>(
    field: &F,
    covering: &BoxCovering,
    spec: &FaceQuadratureSpec,
) -> Result<GeneratorMatrix> {
    let fluxes = face_flux_table(field, covering, spec)?;
    let m = covering.box_measure();
    let h_min = covering.box_size().iter().copied().fold(f64::INFINITY, f64::min);
    let drop = 1e-14 / h_min;
    let faces = 2 * covering.dim();
    let columns: Vec<Vec<(usize, f64)>> = fluxes
        .chunks(faces)
        .enumerate()
        .map(|(j, col)| {
            let mut entries = Vec::with_capacity(faces + 1);
            let mut outflow = 0.0;
            for ff in col {
                let rate = ff.flux / m;
                if rate < drop {
                    continue;
                }
                outflow += rate;
                if let Some(i) = ff.target {
                    entries.push((i, rate));
                }
            }
            if outflow >= drop {
                entries.push((j, -outflow));
            }
            entries
        })
        .collect();
    GeneratorMatrix::new(covering, SparseMatrix::from_columns(covering.len(), columns)?)
}

/// `(π_n Pᵗ π_n u - π_n u) / t` with the full-flow Ulam matrix.
pub fn finite_time_quotient<F: VectorField + ?Sized>(
    field: &F,
    covering: &BoxCovering,
    u: &DensityVector,
    t: f64,
    sampling: &SamplingSpec,
) -> Result<DensityVector> {
    if !(t > 0.0) {
        return Err(Error::Usage(format!("finite-time quotient needs t > 0, got {t}")));
    }
    covering.check_compatible(u)?;
    let est = ulam::estimate(field, covering, t, UlamMode::FullFlow, sampling, &Default::default())?;
    let moved = est.matrix().mul_vec(u.values());
    u.with_values(moved.iter().zip(u.values()).map(|(a, b)| (a - b) / t).collect())
}

/// `‖G̃_n π_n u - π_n(G u)‖₁` for a test function with analytic gradient.
pub fn generator_consistency_error<F: VectorField + ?Sized>(
    field: &F,
    covering: &BoxCovering,
    u: &TestFunction,
    spec: &FaceQuadratureSpec,
) -> Result<f64> {
    let g = assemble(field, covering, spec)?;
    generator_consistency_error_with(&g, field, covering, u)
}

/// [`generator_consistency_error`] reusing an assembled matrix.
pub fn generator_consistency_error_with<F: VectorField + ?Sized>(
    g: &GeneratorMatrix,
    field: &F,
    covering: &BoxCovering,
    u: &TestFunction,
) -> Result<f64> {
    let pu = covering.project_with(|x| u.eval(x), u.projection_rule(4))?;
    let discrete = g.apply(&pu)?;
    if u.gradient(&covering.box_center(0)).is_none() {
        return Err(Error::Usage(format!("test function '{}' has no analytic gradient", u.name())));
    }
    let exact = covering.project(|x| apply_generator_analytic(field, u, x).unwrap_or(f64::NAN))?;
    discrete.l1_distance(&exact)
}

/// Sign pattern, column-sum and adjacency diagnostics of a generator.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneratorDiagnostics {
    /// Most negative off-diagonal entry (0 if none).
    pub min_off_diagonal: f64,
    /// Largest diagonal entry (0 if none).
    pub max_diagonal: f64,
    /// Largest column sum.
    pub max_column_sum: f64,
    /// Largest |column sum| over boxes with all neighbors active.
    pub max_interior_column_imbalance: f64,
    /// Off-diagonal entries between boxes that do not share a face.
    pub non_adjacent_entries: usize,
}

pub fn diagnostics(g: &GeneratorMatrix, covering: &BoxCovering) -> GeneratorDiagnostics {
    let m = g.matrix();
    let faces = 2 * covering.dim();
    let mut diag = GeneratorDiagnostics {
        min_off_diagonal: 0.0,
        max_diagonal: 0.0,
        max_column_sum: f64::NEG_INFINITY,
        max_interior_column_imbalance: 0.0,
        non_adjacent_entries: 0,
    };
    for j in 0..m.ncols() {
        let mut sum = 0.0;
        for (i, v) in m.column(j) {
            sum += v;
            if i == j {
                diag.max_diagonal = diag.max_diagonal.max(v);
            } else {
                diag.min_off_diagonal = diag.min_off_diagonal.min(v);
                if !(0..faces).any(|f| covering.neighbor(j, f) == Some(i)) {
                    diag.non_adjacent_entries += 1;
                }
            }
        }
        diag.max_column_sum = diag.max_column_sum.max(sum);
        if (0..faces).all(|f| covering.neighbor(j, f).is_some()) {
            diag.max_interior_column_imbalance = diag.max_interior_column_imbalance.max(sum.abs());
        }
    }
    diag
}
