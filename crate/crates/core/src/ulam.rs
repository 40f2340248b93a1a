//! Ulam transfer matrices: the fraction of each box's mass found in every
//! other box after flowing for time `t`.
//!
//! Full-flow mode follows the unrestricted flow and only loses mass that
//! lands outside the covering. Killed mode additionally drops mass whose
//! path leaves `int X` at any time in `[0, t]`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::covering::BoxCovering;
use crate::error::{Error, Result};
use crate::flow::{integrate, IntegratorOptions, VectorField};
use crate::par;
use crate::sparse::SparseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UlamMode {
    FullFlow,
    Killed,
}

/// How box mass is discretized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingSpec {
    /// `per_axis^d` points per box at odd multiples of `h / (2 per_axis)`.
    Grid { per_axis: usize },
    /// `samples` uniform points per box; box `j` draws from stream `j` of a
    /// ChaCha8 generator seeded with `seed`.
    MonteCarlo { samples: usize, seed: u64 },
    /// Exact overlap volumes `m(X_j ∩ φ^{-t} X_i) / m` (1D and 2D, full flow).
    /// In 2D each preimage boundary is traced with `edge_points` points per
    /// box edge and clipped against the source boxes.
    Exact { edge_points: usize },
}

impl Default for SamplingSpec {
    fn default() -> Self {
        SamplingSpec::Grid { per_axis: 8 }
    }
}

impl SamplingSpec {
    /// Exact overlaps where supported, otherwise the default grid.
    pub fn best_for(dim: usize) -> Self {
        if dim <= 2 {
            SamplingSpec::Exact { edge_points: 16 }
        } else {
            SamplingSpec::default()
        }
    }

    fn samples_per_box(&self, dim: usize) -> usize {
        match *self {
            SamplingSpec::Grid { per_axis } => per_axis.pow(dim as u32),
            SamplingSpec::MonteCarlo { samples, .. } => samples,
            SamplingSpec::Exact { .. } => 0,
        }
    }
}

/// Estimated `π_n Pᵗ π_n` (full flow) or `π_n P̃ᵗ π_n` (killed) on a covering.
#[derive(Clone, Debug, PartialEq)]
pub struct UlamMatrix {
    level: usize,
    dim: usize,
    t: f64,
    mode: UlamMode,
    sampling: SamplingSpec,
    matrix: SparseMatrix,
}

/// Sidecar JSON written next to exported Ulam matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UlamMetadata {
    pub level: usize,
    pub boxes: usize,
    pub t: f64,
    pub mode: UlamMode,
    pub sampling: SamplingSpec,
    pub samples_per_box: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl UlamMatrix {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn mode(&self) -> UlamMode {
        self.mode
    }

    pub fn sampling(&self) -> SamplingSpec {
        self.sampling
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn metadata(&self) -> UlamMetadata {
        UlamMetadata {
            level: self.level,
            boxes: self.matrix.ncols(),
            t: self.t,
            mode: self.mode,
            sampling: self.sampling,
            samples_per_box: self.sampling.samples_per_box(self.dim),
            seed: match self.sampling {
                SamplingSpec::MonteCarlo { seed, .. } => Some(seed),
                _ => None,
            },
        }
    }

    /// Writes `<stem>.mtx`, `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn export(&self, dir: &Path, stem: &str) -> Result<()> {
        self.matrix.write_matrix_market(&dir.join(format!("{stem}.mtx")))?;
        self.matrix.write_coordinate_csv(&dir.join(format!("{stem}.csv")))?;
        fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&self.metadata())?)?;
        Ok(())
    }
}

/// Estimates the Ulam matrix of the flow over time `t >= 0`.
pub fn estimate<F: VectorField + ?Sized>(
    field: &F,
    covering: &BoxCovering,
    t: f64,
    mode: UlamMode,
    sampling: &SamplingSpec,
    opts: &IntegratorOptions,
) -> Result<UlamMatrix> {
    let d = covering.dim();
    if field.dim() != d {
        return Err(Error::Usage(format!("field dimension {} != covering dimension {d}", field.dim())));
    }
    if !(t >= 0.0) {
        return Err(Error::Usage(format!("Ulam matrices need t >= 0, got {t}")));
    }
    let matrix = match *sampling {
        SamplingSpec::Grid { per_axis } => {
            if per_axis == 0 {
                return Err(Error::Config("grid sampling needs at least one point per axis".into()));
            }
            let offsets: Vec<f64> = (0..per_axis).map(|k| (2 * k + 1) as f64 / (2 * per_axis) as f64).collect();
            let total = per_axis.pow(d as u32);
            sampled_matrix(field, covering, t, mode, opts, total, |_, s, xi| {
                let mut f = s;
                for k in (0..d).rev() {
                    xi[k] = offsets[f % per_axis];
                    f /= per_axis;
                }
            })?
        }
        SamplingSpec::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(Error::Config("Monte Carlo sampling needs at least one sample per box".into()));
            }
            // Pre-draw per box so the result does not depend on scheduling.
            let draws: Vec<Vec<f64>> = par::map_indexed(covering.len(), |j| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(j as u64);
                (0..samples * d).map(|_| rng.random::<f64>()).collect()
            });
            sampled_matrix(field, covering, t, mode, opts, samples, |j, s, xi| {
                xi.copy_from_slice(&draws[j][s * d..(s + 1) * d]);
            })?
        }
        SamplingSpec::Exact { edge_points } => {
            if mode == UlamMode::Killed {
                return Err(Error::Config("exact overlaps are only available in full-flow mode".into()));
            }
            match d {
                1 => exact_matrix_1d(field, covering, t, opts)?,
                2 => exact_matrix_2d(field, covering, t, edge_points.max(1), opts)?,
                _ => return Err(Error::Config(format!("exact overlaps need d <= 2, got d = {d}"))),
            }
        }
    };
    Ok(UlamMatrix { level: covering.level(), dim: d, t, mode, sampling: *sampling, matrix })
}

fn sampled_matrix<F, S>(
    field: &F,
    covering: &BoxCovering,
    t: f64,
    mode: UlamMode,
    opts: &IntegratorOptions,
    samples: usize,
    sample: S,
) -> Result<SparseMatrix>
where
    F: VectorField + ?Sized,
    S: Fn(usize, usize, &mut [f64]) + Sync,
{
    let d = covering.dim();
    let h = covering.box_size();
    let space = covering.space();
    let columns = par::try_map_indexed(covering.len(), |j| {
        let lo = covering.box_lo(j);
        let mut xi = vec![0.0; d];
        let mut counts: Vec<(usize, f64)> = Vec::new();
        for s in 0..samples {
            sample(j, s, &mut xi);
            let x: Vec<f64> = (0..d).map(|k| lo[k] + xi[k] * h[k]).collect();
            let end = match mode {
                UlamMode::FullFlow => integrate(field, &x, t, None, opts)?.end_point,
                UlamMode::Killed => {
                    let r = integrate(field, &x, t, Some(space), opts)?;
                    if r.exited {
                        continue;
                    }
                    r.end_point
                }
            };
            if let Some(i) = covering.locate(&end) {
                counts.push((i, 1.0));
            }
        }
        // count first, then divide once, so fractions are exact ratios
        let mut col = SparseMatrix::from_columns(covering.len(), vec![counts])?.triplets();
        Ok(col.drain(..).map(|(i, _, c)| (i, c / samples as f64)).collect::<Vec<_>>())
    })?;
    SparseMatrix::from_columns(covering.len(), columns)
}

fn exact_matrix_1d<F: VectorField + ?Sized>(
    field: &F,
    covering: &BoxCovering,
    t: f64,
    opts: &IntegratorOptions,
) -> Result<SparseMatrix> {
    let n = covering.boxes_per_axis()[0];
    let h = covering.box_size()[0];
    let x0 = covering.origin()[0];
    // preimages of all grid edges; the 1D flow preserves order
    let pre = par::try_map_indexed(n + 1, |e| {
        let x = x0 + e as f64 * h;
        Ok(integrate(field, &[x], -t, None, opts)?.end_point[0])
    })?;
    let mut triplets = Vec::new();
    for i in 0..covering.len() {
        let gi = covering.multi_index(i)[0];
        let (a, b) = (pre[gi], pre[gi + 1]);
        let first = ((a - x0) / h).floor().max(0.0) as usize;
        let last = (((b - x0) / h).ceil().max(0.0) as usize).min(n);
        for gj in first..last {
            let (lo, hi) = (x0 + gj as f64 * h, x0 + (gj + 1) as f64 * h);
            let len = b.min(hi) - a.max(lo);
            if len > 0.0 {
                if let Some(j) = covering.active_at(&[gj]) {
                    triplets.push((i, j, len / h));
                }
            }
        }
    }
    SparseMatrix::from_triplets(covering.len(), covering.len(), &triplets)
}

fn exact_matrix_2d<F: VectorField + ?Sized>(
    field: &F,
    covering: &BoxCovering,
    t: f64,
    edge_points: usize,
    opts: &IntegratorOptions,
) -> Result<SparseMatrix> {
    let h = covering.box_size().to_vec();
    let origin = covering.origin().to_vec();
    let n = covering.boxes_per_axis().to_vec();
    let m = covering.box_measure();
    let rows = par::try_map_indexed(covering.len(), |i| {
        let lo = covering.box_lo(i);
        let corners = [
            [lo[0], lo[1]],
            [lo[0] + h[0], lo[1]],
            [lo[0] + h[0], lo[1] + h[1]],
            [lo[0], lo[1] + h[1]],
        ];
        let mut poly = Vec::with_capacity(4 * edge_points);
        for e in 0..4 {
            let (p, q) = (corners[e], corners[(e + 1) % 4]);
            for s in 0..edge_points {
                let w = s as f64 / edge_points as f64;
                let x = [p[0] + w * (q[0] - p[0]), p[1] + w * (q[1] - p[1])];
                let y = integrate(field, &x, -t, None, opts)?.end_point;
                poly.push([y[0], y[1]]);
            }
        }
        let (mut bmin, mut bmax) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &poly {
            for k in 0..2 {
                bmin[k] = bmin[k].min(p[k]);
                bmax[k] = bmax[k].max(p[k]);
            }
        }
        let range = |k: usize| {
            let a = ((bmin[k] - origin[k]) / h[k]).floor().max(0.0) as usize;
            let b = (((bmax[k] - origin[k]) / h[k]).ceil().max(0.0) as usize).min(n[k]);
            a..b
        };
        let mut row = Vec::new();
        for gx in range(0) {
            for gy in range(1) {
                let Some(j) = covering.active_at(&[gx, gy]) else { continue };
                let blo = [origin[0] + gx as f64 * h[0], origin[1] + gy as f64 * h[1]];
                let bhi = [blo[0] + h[0], blo[1] + h[1]];
                let area = clipped_area(&poly, blo, bhi);
                if area > 0.0 {
                    row.push((i, j, area / m));
                }
            }
        }
        Ok(row)
    })?;
    let triplets: Vec<_> = rows.into_iter().flatten().collect();
    SparseMatrix::from_triplets(covering.len(), covering.len(), &triplets)
}

/// Area of a simple polygon clipped to the rectangle `[lo, hi]`
/// (Sutherland–Hodgman against the four half-planes, then shoelace).
pub fn clipped_area(poly: &[[f64; 2]], lo: [f64; 2], hi: [f64; 2]) -> f64 {
    let mut current = poly.to_vec();
    // (axis, bound, keep >= bound)
    for (axis, bound, keep_above) in [(0, lo[0], true), (0, hi[0], false), (1, lo[1], true), (1, hi[1], false)] {
        if current.is_empty() {
            return 0.0;
        }
        let inside = |p: &[f64; 2]| if keep_above { p[axis] >= bound } else { p[axis] <= bound };
        let mut next = Vec::with_capacity(current.len() + 4);
        for k in 0..current.len() {
            let p = current[k];
            let q = current[(k + 1) % current.len()];
            let (pin, qin) = (inside(&p), inside(&q));
            if pin {
                next.push(p);
            }
            if pin != qin {
                let s = (bound - p[axis]) / (q[axis] - p[axis]);
                let mut x = [p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])];
                x[axis] = bound;
                next.push(x);
            }
        }
        current = next;
    }
    polygon_area(&current).max(0.0)
}

/// Signed shoelace area (positive for counter-clockwise vertices).
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    0.5 * (0..n)
        .map(|k| {
            let (p, q) = (poly[k], poly[(k + 1) % n]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum::<f64>()
}

/// `(U - I) / t`, the finite-time generator estimate.
pub fn quotient_matrix(u: &UlamMatrix) -> Result<SparseMatrix> {
    if !(u.t > 0.0) {
        return Err(Error::Usage(format!("quotient needs t > 0, got {}", u.t)));
    }
    let n = u.matrix.ncols();
    u.matrix.linear_combination(1.0 / u.t, &SparseMatrix::identity(n), -1.0 / u.t)
}
