//! Geometric primitives: rigid transforms, putative correspondences, the
//! length-preservation compatibility matrix and the registration metrics.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub type Point3 = Vector3<f64>;

const SO3_TOL: f64 = 1e-9;

/// Rotation followed by translation: `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    /// Builds a transform after checking that `rotation` lies in SO(3).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let t = Self {
            rotation,
            translation,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
        Self {
            rotation: *rot.matrix(),
            translation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rotation.iter().chain(self.translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("transform has non-finite entries".into()));
        }
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        if ortho > SO3_TOL {
            return Err(Error::InvalidInput(format!(
                "rotation is not orthonormal (max deviation {ortho:e})"
            )));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > SO3_TOL {
            return Err(Error::InvalidInput(format!("rotation determinant is {det}")));
        }
        Ok(())
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Row-major rotation followed by the translation, 12 values.
    pub fn to_array(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)],
            r[(1, 0)], r[(1, 1)], r[(1, 2)],
            r[(2, 0)], r[(2, 1)], r[(2, 2)],
            t[0], t[1], t[2],
        ]
    }
}

pub fn apply_transform(t: &RigidTransform, p: &Point3) -> Point3 {
    t.apply(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    pub source: Point3,
    pub target: Point3,
    pub descriptor: Option<Vec<f64>>,
}

impl Correspondence {
    pub fn new(source: Point3, target: Point3) -> Self {
        Self {
            source,
            target,
            descriptor: None,
        }
    }

    pub fn residual(&self, t: &RigidTransform) -> f64 {
        (t.apply(&self.source) - self.target).norm()
    }
}

/// Strict `‖R·x + t − y‖ < ε`.
pub fn is_inlier(c: &Correspondence, t: &RigidTransform, epsilon: f64) -> bool {
    c.residual(t) < epsilon
}

/// Putative matches plus the inlier threshold they are judged against.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub items: Vec<Correspondence>,
    pub labels: Option<Vec<bool>>,
    pub epsilon: f64,
}

impl CorrespondenceSet {
    pub fn new(items: Vec<Correspondence>, labels: Option<Vec<bool>>, epsilon: f64) -> Result<Self> {
        let set = Self {
            items,
            labels,
            epsilon,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "inlier threshold must be positive, got {}",
                self.epsilon
            )));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.items.len() {
                return Err(Error::InvalidInput(format!(
                    "{} labels for {} correspondences",
                    labels.len(),
                    self.items.len()
                )));
            }
        }
        let dim = self.descriptor_dim();
        for (i, c) in self.items.iter().enumerate() {
            let finite = c.source.iter().chain(c.target.iter()).all(|v| v.is_finite());
            if !finite {
                return Err(Error::InvalidInput(format!("correspondence {i} is not finite")));
            }
            let len = c.descriptor.as_ref().map_or(0, Vec::len);
            if len != dim {
                return Err(Error::InvalidInput(format!(
                    "correspondence {i} has descriptor length {len}, expected {dim}"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Descriptor width shared by the set (0 when descriptors are absent).
    pub fn descriptor_dim(&self) -> usize {
        self.items
            .first()
            .and_then(|c| c.descriptor.as_ref())
            .map_or(0, Vec::len)
    }

    pub fn labels_from_transform(&self, t: &RigidTransform) -> Vec<bool> {
        self.items.iter().map(|c| is_inlier(c, t, self.epsilon)).collect()
    }

    /// Applies `g` to every source point and `h` to every target point.
    pub fn transformed(&self, g: &RigidTransform, h: &RigidTransform) -> CorrespondenceSet {
        let items = self
            .items
            .iter()
            .map(|c| Correspondence {
                source: g.apply(&c.source),
                target: h.apply(&c.target),
                descriptor: c.descriptor.clone(),
            })
            .collect();
        CorrespondenceSet {
            items,
            labels: self.labels.clone(),
            epsilon: self.epsilon,
        }
    }

    pub fn subset(&self, indices: &[usize]) -> CorrespondenceSet {
        CorrespondenceSet {
            items: indices.iter().map(|&i| self.items[i].clone()).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            epsilon: self.epsilon,
        }
    }
}

/// Dense symmetric N×N matrix with entries in [0, 1] and unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatibilityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl CompatibilityMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> Self {
        let mut values = vec![0.0; n * n];
        values
            .par_chunks_mut(n.max(1))
            .enumerate()
            .for_each(|(i, row)| {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = f(i, j);
                }
            });
        Self { n, values }
    }

    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::shape(
                "CompatibilityMatrix::from_values",
                format!("{} values for {n}x{n}", values.len()),
            ));
        }
        Ok(Self { n, values })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Principal submatrix over `indices`, row-major.
    pub fn submatrix(&self, indices: &[usize]) -> Vec<f64> {
        let k = indices.len();
        let mut out = Vec::with_capacity(k * k);
        for &i in indices {
            for &j in indices {
                out.push(self.get(i, j));
            }
        }
        out
    }
}

/// `β_ij = max(0, 1 − d²_ij/ε²)` with `d_ij = | ‖x_i−x_j‖ − ‖y_i−y_j‖ |`.
pub fn geometric_compatibility(set: &CorrespondenceSet) -> CompatibilityMatrix {
    let items = &set.items;
    let eps2 = set.epsilon * set.epsilon;
    CompatibilityMatrix::from_fn(items.len(), |i, j| {
        if i == j {
            return 1.0;
        }
        let ds = (items[i].source - items[j].source).norm();
        let dt = (items[i].target - items[j].target).norm();
        let d = (ds - dt).abs();
        (1.0 - d * d / eps2).max(0.0)
    })
}

/// Geodesic angle between the two rotations, in radians.
pub fn rotation_error(est: &RigidTransform, gt: &RigidTransform) -> f64 {
    // atan2 of (sin, cos) equals the clamped arccos of the cosine, but keeps
    // full precision near zero where arccos loses about 8 digits
    let d = est.rotation.transpose() * gt.rotation;
    let cos = ((d.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let axis = Vector3::new(d[(2, 1)] - d[(1, 2)], d[(0, 2)] - d[(2, 0)], d[(1, 0)] - d[(0, 1)]);
    (axis.norm() / 2.0).atan2(cos)
}

pub fn translation_error(est: &RigidTransform, gt: &RigidTransform) -> f64 {
    (est.translation - gt.translation).norm()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecallSummary {
    pub recall: f64,
    /// Mean errors over successful pairs only; `None` when nothing succeeded.
    pub mean_re: Option<f64>,
    pub mean_te: Option<f64>,
}

pub fn registration_recall(errors: &[(f64, f64)], re_thresh: f64, te_thresh: f64) -> RecallSummary {
    let ok: Vec<_> = errors
        .iter()
        .filter(|(re, te)| *re < re_thresh && *te < te_thresh)
        .collect();
    if errors.is_empty() || ok.is_empty() {
        return RecallSummary {
            recall: 0.0,
            mean_re: None,
            mean_te: None,
        };
    }
    let k = ok.len() as f64;
    RecallSummary {
        recall: k / errors.len() as f64,
        mean_re: Some(ok.iter().map(|e| e.0).sum::<f64>() / k),
        mean_te: Some(ok.iter().map(|e| e.1).sum::<f64>() / k),
    }
}
