//! State spaces, uniform box coverings, and piecewise-constant densities.
//!
//! A [`BoxCovering`] subdivides the bounding box of a [`StateSpace`] into
//! congruent boxes and keeps the ones that meet the set. Densities on a
//! covering are [`DensityVector`]s: one coefficient per active box, carrying
//! L¹ semantics through the common box measure.

use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::par;
use crate::quadrature::{Rule1d, TensorRule};

/// Serializable description of the built-in state-space shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpaceSpec {
    /// Axis-aligned box `[lo, hi]`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Closed Euclidean ball. The bounding box defaults to the tight one.
    Ball {
        center: Vec<f64>,
        radius: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lo: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hi: Option<Vec<f64>>,
    },
}

type Membership = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;
type NormalMap = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
enum Region {
    Box,
    Ball { center: Vec<f64>, radius: f64 },
    Custom { membership: Membership, normal: Option<NormalMap> },
}

/// A compact set `X` inside an axis-aligned bounding box.
#[derive(Clone)]
pub struct StateSpace {
    lo: Vec<f64>,
    hi: Vec<f64>,
    region: Region,
}

impl fmt::Debug for StateSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.region {
            Region::Box => "box".to_string(),
            Region::Ball { center, radius } => format!("ball(center={center:?}, radius={radius})"),
            Region::Custom { .. } => "custom".to_string(),
        };
        f.debug_struct("StateSpace")
            .field("lo", &self.lo)
            .field("hi", &self.hi)
            .field("region", &kind)
            .finish()
    }
}

fn check_bounds(lo: &[f64], hi: &[f64]) -> Result<()> {
    if lo.is_empty() || lo.len() != hi.len() {
        return Err(Error::Config(format!(
            "bounds must be non-empty with equal length (lo: {}, hi: {})",
            lo.len(),
            hi.len()
        )));
    }
    for (k, (&a, &b)) in lo.iter().zip(hi).enumerate() {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::Config(format!("axis {k}: need finite lo < hi, got [{a}, {b}]")));
        }
    }
    Ok(())
}

impl StateSpace {
    /// The closed box `[lo, hi]`; the bounding box is the set itself.
    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_bounds(&lo, &hi)?;
        Ok(StateSpace { lo, hi, region: Region::Box })
    }

    pub fn unit_interval() -> Self {
        Self::boxed(vec![0.0], vec![1.0]).expect("valid bounds")
    }

    /// Closed ball inside the bounding box `[lo, hi]`.
    pub fn ball(center: Vec<f64>, radius: f64, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_bounds(&lo, &hi)?;
        if center.len() != lo.len() || !(radius > 0.0) {
            return Err(Error::Config("ball needs a positive radius and a center of matching dimension".into()));
        }
        for k in 0..lo.len() {
            if center[k] - radius < lo[k] || center[k] + radius > hi[k] {
                return Err(Error::Config(format!("ball sticks out of the bounding box on axis {k}")));
            }
        }
        Ok(StateSpace { lo, hi, region: Region::Ball { center, radius } })
    }

    /// Arbitrary compact set given by a membership predicate. The predicate is
    /// used for both closed and interior membership. The bounding box is
    /// validated by sampling a margin around it.
    pub fn custom(
        lo: Vec<f64>,
        hi: Vec<f64>,
        membership: impl Fn(&[f64]) -> bool + Send + Sync + 'static,
    ) -> Result<Self> {
        check_bounds(&lo, &hi)?;
        let space = StateSpace {
            lo,
            hi,
            region: Region::Custom { membership: Arc::new(membership), normal: None },
        };
        space.check_bounding_box(9)?;
        Ok(space)
    }

    /// Attaches an outward unit normal map (diagnostics only) to a custom space.
    pub fn with_normal(mut self, normal: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        if let Region::Custom { normal: n, .. } = &mut self.region {
            *n = Some(Arc::new(normal));
        }
        self
    }

    pub fn from_spec(spec: &SpaceSpec) -> Result<Self> {
        match spec {
            SpaceSpec::Box { lo, hi } => Self::boxed(lo.clone(), hi.clone()),
            SpaceSpec::Ball { center, radius, lo, hi } => {
                let lo = lo.clone().unwrap_or_else(|| center.iter().map(|c| c - radius).collect());
                let hi = hi.clone().unwrap_or_else(|| center.iter().map(|c| c + radius).collect());
                Self::ball(center.clone(), *radius, lo, hi)
            }
        }
    }

    /// The serializable description, if this is a built-in shape.
    pub fn spec(&self) -> Option<SpaceSpec> {
        match &self.region {
            Region::Box => Some(SpaceSpec::Box { lo: self.lo.clone(), hi: self.hi.clone() }),
            Region::Ball { center, radius } => Some(SpaceSpec::Ball {
                center: center.clone(),
                radius: *radius,
                lo: Some(self.lo.clone()),
                hi: Some(self.hi.clone()),
            }),
            Region::Custom { .. } => None,
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    /// Largest side length of the bounding box.
    pub fn scale(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).fold(0.0, f64::max)
    }

    pub fn is_box(&self) -> bool {
        matches!(self.region, Region::Box)
    }

    /// Closed membership `x ∈ X`.
    pub fn contains(&self, x: &[f64]) -> bool {
        match &self.region {
            Region::Box => x.iter().zip(&self.lo).zip(&self.hi).all(|((v, a), b)| *a <= *v && *v <= *b),
            Region::Ball { center, radius } => dist2(x, center) <= radius * radius,
            Region::Custom { membership, .. } => membership(x),
        }
    }

    /// Interior membership `x ∈ int X`. Touching the boundary counts as outside.
    pub fn contains_interior(&self, x: &[f64]) -> bool {
        match &self.region {
            Region::Box => x.iter().zip(&self.lo).zip(&self.hi).all(|((v, a), b)| *a < *v && *v < *b),
            Region::Ball { center, radius } => dist2(x, center) < radius * radius,
            Region::Custom { membership, .. } => membership(x),
        }
    }

    /// Outward unit normal at a boundary point, when known.
    pub fn boundary_normal(&self, x: &[f64]) -> Option<Vec<f64>> {
        match &self.region {
            Region::Box => {
                // nearest face
                let (mut best, mut axis, mut sign) = (f64::INFINITY, 0, 1.0);
                for k in 0..self.dim() {
                    for (d, s) in [(x[k] - self.lo[k], -1.0), (self.hi[k] - x[k], 1.0)] {
                        if d.abs() < best {
                            best = d.abs();
                            axis = k;
                            sign = s;
                        }
                    }
                }
                let mut n = vec![0.0; self.dim()];
                n[axis] = sign;
                Some(n)
            }
            Region::Ball { center, .. } => {
                let r = dist2(x, center).sqrt();
                (r > 0.0).then(|| x.iter().zip(center).map(|(a, c)| (a - c) / r).collect())
            }
            Region::Custom { normal, .. } => normal.as_ref().map(|n| n(x)),
        }
    }

    /// Samples a grid over the bounding box enlarged by 25% on every side and
    /// fails if a member point lies outside the bounding box.
    pub fn check_bounding_box(&self, per_axis: usize) -> Result<()> {
        let d = self.dim();
        let ext: Vec<f64> = self.lo.iter().zip(&self.hi).map(|(a, b)| 0.25 * (b - a)).collect();
        let rule = TensorRule::new(d, Rule1d::midpoint(per_axis.max(2)));
        let mut offender = None;
        rule.for_each(|xi, _| {
            if offender.is_some() {
                return;
            }
            let x: Vec<f64> = (0..d).map(|k| self.lo[k] - ext[k] + xi[k] * (self.hi[k] - self.lo[k] + 2.0 * ext[k])).collect();
            let outside = (0..d).any(|k| x[k] < self.lo[k] || x[k] > self.hi[k]);
            if outside && self.contains(&x) {
                offender = Some(x);
            }
        });
        match offender {
            Some(x) => Err(Error::Config(format!("member point {x:?} lies outside the bounding box"))),
            None => Ok(()),
        }
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Quadrature used to average a function over each box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "points", rename_all = "snake_case")]
pub enum ProjectionRule {
    /// Tensor Gauss–Legendre with `q` points per axis, for smooth integrands.
    Gauss(usize),
    /// Tensor midpoint grid with `k` points per axis, for indicator-like integrands.
    Midpoint(usize),
}

impl Default for ProjectionRule {
    fn default() -> Self {
        ProjectionRule::Gauss(4)
    }
}

impl ProjectionRule {
    pub const INDICATOR: ProjectionRule = ProjectionRule::Midpoint(10);

    fn tensor(self, dim: usize) -> TensorRule {
        match self {
            ProjectionRule::Gauss(q) => TensorRule::new(dim, Rule1d::gauss_legendre(q.max(1))),
            ProjectionRule::Midpoint(k) => TensorRule::new(dim, Rule1d::midpoint(k.max(1))),
        }
    }
}

/// Faces are numbered `2 * axis + side`, side 0 the low face, side 1 the high face.
pub fn face_id(axis: usize, high: bool) -> usize {
    2 * axis + usize::from(high)
}

/// The face on the other side of a shared interface.
pub fn opposite_face(face: usize) -> usize {
    face ^ 1
}

/// Uniform covering of a state space by congruent axis-aligned boxes.
#[derive(Clone, Debug)]
pub struct BoxCovering {
    level: usize,
    boxes_per_axis: Vec<usize>,
    box_size: Vec<f64>,
    origin: Vec<f64>,
    active: Vec<usize>,
    grid_to_active: Vec<Option<usize>>,
    neighbors: Vec<Option<usize>>,
    inside_fraction: Vec<f64>,
    space: StateSpace,
}

impl BoxCovering {
    /// Subdivides the bounding box of `space` into `boxes_per_axis` boxes per
    /// axis (row-major, axis 0 slowest) and keeps those meeting `X`.
    ///
    /// A box is kept iff a point of the closed 5^d tensor grid on the box
    /// (which includes the center) belongs to `X`.
    pub fn build(space: &StateSpace, boxes_per_axis: &[usize]) -> Result<Self> {
        let d = space.dim();
        if boxes_per_axis.len() != d {
            return Err(Error::Config(format!(
                "boxes_per_axis has {} entries for a {d}-dimensional space",
                boxes_per_axis.len()
            )));
        }
        if boxes_per_axis.iter().any(|&n| n == 0) {
            return Err(Error::Config("boxes_per_axis entries must be >= 1".into()));
        }
        let box_size: Vec<f64> =
            (0..d).map(|k| (space.hi[k] - space.lo[k]) / boxes_per_axis[k] as f64).collect();
        let origin = space.lo.clone();
        let total: usize = boxes_per_axis.iter().product();

        let probe = TensorRule::new(d, Rule1d { nodes: vec![0.0, 0.25, 0.5, 0.75, 1.0], weights: vec![0.2; 5] });
        let is_active = par::map_indexed(total, |flat| {
            if space.is_box() {
                return true;
            }
            let lo = grid_box_lo(flat, boxes_per_axis, &origin, &box_size);
            let mut hit = false;
            probe.for_each(|xi, _| {
                if !hit {
                    let x: Vec<f64> = (0..d).map(|k| lo[k] + xi[k] * box_size[k]).collect();
                    hit = space.contains(&x);
                }
            });
            hit
        });
        let mut grid_to_active = vec![None; total];
        let mut active = Vec::new();
        for (flat, &hit) in is_active.iter().enumerate() {
            if hit {
                grid_to_active[flat] = Some(active.len());
                active.push(flat);
            }
        }
        if active.is_empty() {
            return Err(Error::Config("no box of the covering intersects the state space".into()));
        }

        let mut neighbors = vec![None; active.len() * 2 * d];
        let strides = strides(boxes_per_axis);
        for (a, &flat) in active.iter().enumerate() {
            let idx = unflatten(flat, boxes_per_axis);
            for k in 0..d {
                if idx[k] > 0 {
                    neighbors[a * 2 * d + face_id(k, false)] = grid_to_active[flat - strides[k]];
                }
                if idx[k] + 1 < boxes_per_axis[k] {
                    neighbors[a * 2 * d + face_id(k, true)] = grid_to_active[flat + strides[k]];
                }
            }
        }

        let fraction_rule = ProjectionRule::INDICATOR.tensor(d);
        let inside_fraction = par::map_slice(&active, |&flat| {
            if space.is_box() {
                return 1.0;
            }
            let lo = grid_box_lo(flat, boxes_per_axis, &origin, &box_size);
            let (mut hits, mut total) = (0usize, 0usize);
            fraction_rule.for_each(|xi, _| {
                let x: Vec<f64> = (0..d).map(|k| lo[k] + xi[k] * box_size[k]).collect();
                total += 1;
                hits += usize::from(space.contains(&x));
            });
            hits as f64 / total as f64
        });

        Ok(BoxCovering {
            level: boxes_per_axis.iter().copied().max().unwrap_or(1),
            boxes_per_axis: boxes_per_axis.to_vec(),
            box_size,
            origin,
            active,
            grid_to_active,
            neighbors,
            inside_fraction,
            space: space.clone(),
        })
    }

    /// Same number of boxes on every axis.
    pub fn build_uniform(space: &StateSpace, per_axis: usize) -> Result<Self> {
        Self::build(space, &vec![per_axis; space.dim()])
    }

    /// Refinement index: the largest boxes-per-axis count.
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.box_size.len()
    }

    /// Number of active boxes.
    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn boxes_per_axis(&self) -> &[usize] {
        &self.boxes_per_axis
    }

    pub fn box_size(&self) -> &[f64] {
        &self.box_size
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    /// Common Lebesgue measure of every box.
    pub fn box_measure(&self) -> f64 {
        self.box_size.iter().product()
    }

    /// Flat grid indices of the active boxes, increasing.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    /// Multi-index of active box `a`.
    pub fn multi_index(&self, a: usize) -> Vec<usize> {
        unflatten(self.active[a], &self.boxes_per_axis)
    }

    /// Active index of the box with the given multi-index, if active.
    pub fn active_at(&self, idx: &[usize]) -> Option<usize> {
        if idx.len() != self.dim() || idx.iter().zip(&self.boxes_per_axis).any(|(i, n)| i >= n) {
            return None;
        }
        let flat = idx.iter().zip(strides(&self.boxes_per_axis)).map(|(i, s)| i * s).sum::<usize>();
        self.grid_to_active[flat]
    }

    pub fn box_lo(&self, a: usize) -> Vec<f64> {
        grid_box_lo(self.active[a], &self.boxes_per_axis, &self.origin, &self.box_size)
    }

    pub fn box_hi(&self, a: usize) -> Vec<f64> {
        self.box_lo(a).iter().zip(&self.box_size).map(|(l, h)| l + h).collect()
    }

    pub fn box_center(&self, a: usize) -> Vec<f64> {
        self.box_lo(a).iter().zip(&self.box_size).map(|(l, h)| l + 0.5 * h).collect()
    }

    /// Neighbor of box `a` across `face`, or `None` for the covering exterior.
    pub fn neighbor(&self, a: usize, face: usize) -> Option<usize> {
        self.neighbors[a * 2 * self.dim() + face]
    }

    /// Active box containing `x` under the half-open `[lo, hi)` convention.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let mut flat = 0;
        for k in 0..self.dim() {
            let s = ((x[k] - self.origin[k]) / self.box_size[k]).floor();
            if !(s >= 0.0 && s < self.boxes_per_axis[k] as f64) {
                return None;
            }
            flat = flat * self.boxes_per_axis[k] + s as usize;
        }
        self.grid_to_active[flat]
    }

    /// Sampled volume fraction of box `a` lying in `X` (10^d midpoint grid).
    pub fn inside_fraction(&self, a: usize) -> f64 {
        self.inside_fraction[a]
    }

    /// Averages `f` (zero-extended outside `X`) over each active box.
    pub fn project_with<F>(&self, f: F, rule: ProjectionRule) -> Result<DensityVector>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let tensor = rule.tensor(self.dim());
        let values = par::try_map_indexed(self.len(), |a| {
            let lo = self.box_lo(a);
            let mut acc = 0.0;
            let mut x = vec![0.0; self.dim()];
            tensor.for_each(|xi, w| {
                for k in 0..x.len() {
                    x[k] = lo[k] + xi[k] * self.box_size[k];
                }
                if self.space.contains(&x) {
                    acc += w * f(&x);
                }
            });
            ensure_finite(acc, "box average")
        })?;
        Ok(DensityVector::from_parts(self, values))
    }

    /// [`project_with`](Self::project_with) using the default Gauss rule.
    pub fn project<F>(&self, f: F) -> Result<DensityVector>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        self.project_with(f, ProjectionRule::default())
    }

    pub fn zeros(&self) -> DensityVector {
        DensityVector::from_parts(self, vec![0.0; self.len()])
    }

    /// Wraps coefficient values as a density on this covering.
    pub fn density(&self, values: Vec<f64>) -> Result<DensityVector> {
        if values.len() != self.len() {
            return Err(Error::Usage(format!(
                "density has {} values, covering has {} active boxes",
                values.len(),
                self.len()
            )));
        }
        Ok(DensityVector::from_parts(self, values))
    }

    /// Evaluates the piecewise-constant interpolant of `u` at `x`.
    pub fn interpolant(&self, u: &DensityVector, x: &[f64]) -> f64 {
        self.locate(x).map_or(0.0, |a| u.values[a])
    }

    pub fn check_compatible(&self, u: &DensityVector) -> Result<()> {
        if u.level != self.level || u.values.len() != self.len() || u.box_measure != self.box_measure() {
            return Err(Error::Usage(format!(
                "density (level {}, {} values) does not belong to covering (level {}, {} boxes)",
                u.level,
                u.values.len(),
                self.level,
                self.len()
            )));
        }
        Ok(())
    }

    /// Restriction of a density to `X` for reporting. Every active box meets
    /// `X`, so the coefficients are unchanged.
    pub fn restrict_to_x(&self, u: &DensityVector) -> Result<DensityVector> {
        self.check_compatible(u)?;
        Ok(u.clone())
    }

    /// L¹ norm over `X` only: each box contributes its sampled inside fraction.
    pub fn l1_norm_on_x(&self, u: &DensityVector) -> Result<f64> {
        self.check_compatible(u)?;
        Ok(self.box_measure() * u.values.iter().zip(&self.inside_fraction).map(|(v, f)| v.abs() * f).sum::<f64>())
    }

    pub fn l1_distance_on_x(&self, u: &DensityVector, w: &DensityVector) -> Result<f64> {
        self.l1_norm_on_x(&u.sub(w)?)
    }

    pub fn description(&self) -> CoveringDescription {
        CoveringDescription {
            dim: self.dim(),
            level: self.level,
            bounds: self.space.lo.iter().zip(&self.space.hi).map(|(&a, &b)| [a, b]).collect(),
            boxes_per_axis: self.boxes_per_axis.clone(),
            box_size: self.box_size.clone(),
            active: self.active.clone(),
            space: self.space.spec(),
        }
    }
}

fn strides(n: &[usize]) -> Vec<usize> {
    let mut s = vec![1; n.len()];
    for k in (0..n.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * n[k + 1];
    }
    s
}

fn unflatten(mut flat: usize, n: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; n.len()];
    for k in (0..n.len()).rev() {
        idx[k] = flat % n[k];
        flat /= n[k];
    }
    idx
}

fn grid_box_lo(flat: usize, n: &[usize], origin: &[f64], h: &[f64]) -> Vec<f64> {
    unflatten(flat, n).iter().enumerate().map(|(k, &i)| origin[k] + i as f64 * h[k]).collect()
}

/// JSON document describing a covering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveringDescription {
    pub dim: usize,
    pub level: usize,
    pub bounds: Vec<[f64; 2]>,
    pub boxes_per_axis: Vec<usize>,
    pub box_size: Vec<f64>,
    pub active: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<SpaceSpec>,
}

impl CoveringDescription {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Piecewise-constant function on a covering: one coefficient per active box.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityVector {
    level: usize,
    values: Vec<f64>,
    box_measure: f64,
}

impl DensityVector {
    fn from_parts(covering: &BoxCovering, values: Vec<f64>) -> Self {
        DensityVector { level: covering.level, values, box_measure: covering.box_measure() }
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn box_measure(&self) -> f64 {
        self.box_measure
    }

    /// Same covering, new coefficients.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::Usage(format!("expected {} values, got {}", self.values.len(), values.len())));
        }
        Ok(DensityVector { level: self.level, values, box_measure: self.box_measure })
    }

    pub fn same_covering(&self, other: &DensityVector) -> Result<()> {
        if self.level != other.level || self.values.len() != other.values.len() || self.box_measure != other.box_measure {
            return Err(Error::Usage(format!(
                "densities live on different coverings (levels {} and {})",
                self.level, other.level
            )));
        }
        Ok(())
    }

    /// `m · Σ |u_i|`.
    pub fn l1_norm(&self) -> f64 {
        self.box_measure * self.values.iter().map(|v| v.abs()).sum::<f64>()
    }

    pub fn l1_distance(&self, other: &DensityVector) -> Result<f64> {
        Ok(self.sub(other)?.l1_norm())
    }

    /// Signed total mass `m · Σ u_i`.
    pub fn mass(&self) -> f64 {
        self.box_measure * self.values.iter().sum::<f64>()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sub(&self, other: &DensityVector) -> Result<Self> {
        self.same_covering(other)?;
        Ok(DensityVector {
            level: self.level,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
            box_measure: self.box_measure,
        })
    }

    pub fn add(&self, other: &DensityVector) -> Result<Self> {
        self.same_covering(other)?;
        Ok(DensityVector {
            level: self.level,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
            box_measure: self.box_measure,
        })
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        DensityVector {
            level: self.level,
            values: self.values.iter().map(|v| alpha * v).collect(),
            box_measure: self.box_measure,
        }
    }

    /// CSV with an `index,value` header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,value\n");
        for (i, v) in self.values.iter().enumerate() {
            s.push_str(&format!("{i},{v:e}\n"));
        }
        s
    }

    pub fn from_csv(text: &str, covering: &BoxCovering) -> Result<Self> {
        let err = |msg: String| Error::Parse { path: "<density csv>".into(), message: msg };
        let mut values = vec![f64::NAN; covering.len()];
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (n == 0 && line.starts_with("index")) {
                continue;
            }
            let (i, v) = line.split_once(',').ok_or_else(|| err(format!("line {}: expected index,value", n + 1)))?;
            let i: usize = i.trim().parse().map_err(|_| err(format!("line {}: bad index", n + 1)))?;
            let v: f64 = v.trim().parse().map_err(|_| err(format!("line {}: bad value", n + 1)))?;
            *values.get_mut(i).ok_or_else(|| err(format!("line {}: index {i} out of range", n + 1)))? = v;
        }
        if let Some(i) = values.iter().position(|v| v.is_nan()) {
            return Err(err(format!("missing value for box {i}")));
        }
        covering.density(values)
    }

    /// 8-byte little-endian length header followed by little-endian f64 values.
    pub fn to_binary(&self) -> Vec<u8> {
        encode_f64_column(&self.values)
    }

    pub fn from_binary(bytes: &[u8], covering: &BoxCovering) -> Result<Self> {
        covering.density(decode_f64_column(bytes)?)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: &Path, covering: &BoxCovering) -> Result<Self> {
        Self::from_csv(&fs::read_to_string(path)?, covering)
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_binary())?;
        Ok(())
    }

    pub fn read_binary(path: &Path, covering: &BoxCovering) -> Result<Self> {
        Self::from_binary(&fs::read(path)?, covering)
    }
}

pub fn encode_f64_column(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * values.len());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_f64_column(bytes: &[u8]) -> Result<Vec<f64>> {
    let err = |msg: String| Error::Parse { path: "<binary column>".into(), message: msg };
    if bytes.len() < 8 {
        return Err(err("missing length header".into()));
    }
    let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != n.checked_mul(8).ok_or_else(|| err("length overflow".into()))? {
        return Err(err(format!("header says {n} values, body has {} bytes", body.len())));
    }
    Ok(body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_disk() -> StateSpace {
        StateSpace::ball(vec![0.0, 0.0], 1.0, vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn unit_interval_four_boxes() {
        let c = BoxCovering::build(&StateSpace::unit_interval(), &[4]).unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!(c.box_size(), &[0.25]);
        let edges: Vec<f64> = (0..4).map(|a| c.box_lo(a)[0]).chain([c.box_hi(3)[0]]).collect();
        assert_eq!(edges, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(c.neighbor(0, face_id(0, false)), None);
        assert_eq!(c.neighbor(0, face_id(0, true)), Some(1));
        assert_eq!(c.neighbor(3, face_id(0, true)), None);
    }

    #[test]
    fn disk_two_by_two_all_active() {
        let c = BoxCovering::build(&unit_disk(), &[2, 2]).unwrap();
        assert_eq!(c.len(), 4);
    }

    #[test]
    fn disk_eight_by_eight_matches_dense_sampling() {
        let space = unit_disk();
        let c = BoxCovering::build(&space, &[8, 8]).unwrap();
        // oracle: 100x100 midpoint membership samples per box
        let h = 0.25;
        let mut expected = 0;
        for i in 0..8 {
            for j in 0..8 {
                let hit = (0..100).any(|a| {
                    (0..100).any(|b| {
                        let x = [-1.0 + (i as f64 + (a as f64 + 0.5) / 100.0) * h, -1.0 + (j as f64 + (b as f64 + 0.5) / 100.0) * h];
                        x[0] * x[0] + x[1] * x[1] <= 1.0
                    })
                });
                expected += usize::from(hit);
            }
        }
        assert_eq!(c.len(), expected);
        assert_eq!(c.len(), 60);
    }

    #[test]
    fn empty_active_set_is_config_error() {
        let space = StateSpace::custom(vec![0.0], vec![1.0], |_| false).unwrap();
        assert!(matches!(BoxCovering::build(&space, &[4]), Err(Error::Config(_))));
        assert!(matches!(BoxCovering::build(&StateSpace::unit_interval(), &[0]), Err(Error::Config(_))));
        assert!(matches!(BoxCovering::build(&StateSpace::unit_interval(), &[2, 2]), Err(Error::Config(_))));
    }

    #[test]
    fn custom_space_outside_bounds_rejected() {
        let r = StateSpace::custom(vec![0.0], vec![1.0], |x| x[0] > -0.2 && x[0] < 1.0);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn projection_of_linear_function() {
        let c = BoxCovering::build(&StateSpace::unit_interval(), &[4]).unwrap();
        let u = c.project(|x| x[0]).unwrap();
        for (v, e) in u.values().iter().zip([0.125, 0.375, 0.625, 0.875]) {
            assert_abs_diff_eq!(*v, e, epsilon = 1e-15);
        }
    }

    #[test]
    fn projection_preserves_constants() {
        let space = StateSpace::boxed(vec![-1.0, 0.0], vec![1.0, 3.0]).unwrap();
        let c = BoxCovering::build(&space, &[5, 7]).unwrap();
        let u = c.project(|_| 1.0).unwrap();
        assert!(u.values().iter().all(|&v| (v - 1.0).abs() < 1e-14));
        assert_abs_diff_eq!(u.l1_norm(), 6.0, epsilon = 1e-12);
    }

    #[test]
    fn norms_and_distances() {
        let c = BoxCovering::build(&StateSpace::unit_interval(), &[4]).unwrap();
        let u = c.density(vec![1.0; 4]).unwrap();
        assert_abs_diff_eq!(u.l1_norm(), 1.0, epsilon = 1e-15);
        assert_eq!(u.l1_distance(&u).unwrap(), 0.0);
        let c2 = BoxCovering::build(&StateSpace::unit_interval(), &[2]).unwrap();
        let w = c2.density(vec![2.0, -1.0]).unwrap();
        assert_abs_diff_eq!(w.l1_norm(), 1.5, epsilon = 1e-15);
        assert!(matches!(u.l1_distance(&w), Err(Error::Usage(_))));
    }

    #[test]
    fn restriction_on_box_space_is_identity() {
        let c = BoxCovering::build(&StateSpace::unit_interval(), &[8]).unwrap();
        let u = c.project(|x| x[0] * x[0]).unwrap();
        assert_eq!(c.restrict_to_x(&u).unwrap(), u);
        assert_eq!(c.l1_norm_on_x(&u).unwrap(), u.l1_norm());
    }

    #[test]
    fn restriction_of_interior_box_keeps_norm() {
        let c = BoxCovering::build(&unit_disk(), &[8, 8]).unwrap();
        let a = c.locate(&[0.1, 0.1]).unwrap();
        assert_eq!(c.inside_fraction(a), 1.0);
        let mut vals = vec![0.0; c.len()];
        vals[a] = 3.0;
        let u = c.density(vals).unwrap();
        assert_abs_diff_eq!(c.l1_norm_on_x(&u).unwrap(), u.l1_norm(), epsilon = 1e-15);
    }

    #[test]
    fn straddling_box_fraction_matches_dense_oracle() {
        let c = BoxCovering::build(&unit_disk(), &[8, 8]).unwrap();
        // box [0.75,1] x [0.5,0.75] straddles the circle
        let a = c.active_at(&[7, 6]).unwrap();
        let lo = c.box_lo(a);
        let n = 400;
        let mut inside = 0usize;
        for i in 0..n {
            for j in 0..n {
                let x = lo[0] + (i as f64 + 0.5) / n as f64 * 0.25;
                let y = lo[1] + (j as f64 + 0.5) / n as f64 * 0.25;
                inside += usize::from(x * x + y * y <= 1.0);
            }
        }
        let oracle = inside as f64 / (n * n) as f64;
        assert!(oracle > 0.05 && oracle < 0.95, "picked box does not straddle: {oracle}");
        let mut vals = vec![0.0; c.len()];
        vals[a] = 1.0;
        let u = c.density(vals).unwrap();
        let contribution = c.l1_norm_on_x(&u).unwrap();
        assert!((contribution - oracle * c.box_measure()).abs() < 0.02 * c.box_measure());
    }

    #[test]
    fn neighbor_table_is_symmetric_on_disk() {
        let c = BoxCovering::build(&unit_disk(), &[9, 7]).unwrap();
        for a in 0..c.len() {
            for f in 0..4 {
                if let Some(b) = c.neighbor(a, f) {
                    assert_eq!(c.neighbor(b, opposite_face(f)), Some(a));
                }
            }
        }
    }

    #[test]
    fn locate_uses_half_open_boxes() {
        let c = BoxCovering::build(&StateSpace::unit_interval(), &[4]).unwrap();
        assert_eq!(c.locate(&[0.25]), Some(1));
        assert_eq!(c.locate(&[0.0]), Some(0));
        assert_eq!(c.locate(&[1.0]), None);
        assert_eq!(c.locate(&[-1e-12]), None);
    }

    #[test]
    fn csv_and_binary_formats() {
        let c = BoxCovering::build(&StateSpace::unit_interval(), &[3]).unwrap();
        let u = c.density(vec![0.5, -1.25, 3.0e-20]).unwrap();
        assert_eq!(u.to_csv(), "index,value\n0,5e-1\n1,-1.25e0\n2,3e-20\n");
        let bytes = u.to_binary();
        assert_eq!(&bytes[..8], &3u64.to_le_bytes());
        assert_eq!(bytes.len(), 8 + 24);
        assert_eq!(DensityVector::from_binary(&bytes, &c).unwrap(), u);
        assert_eq!(DensityVector::from_csv(&u.to_csv(), &c).unwrap(), u);
        assert!(decode_f64_column(&bytes[..10]).is_err());
    }

    #[test]
    fn description_json() {
        let c = BoxCovering::build(&unit_disk(), &[4, 4]).unwrap();
        let json = c.description().to_json().unwrap();
        let back = CoveringDescription::from_json(&json).unwrap();
        assert_eq!(back, c.description());
        assert_eq!(back.active.len(), c.len());
        assert!(json.contains("\"boxes_per_axis\""));
    }
}
