use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{Correspondence, CorrespondenceSet, Point3, RigidTransform};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub inlier_ratio: f64,
    /// Per-axis Gaussian noise on inlier targets.
    pub noise_std: f64,
    /// Source points are uniform in `[0, extent]³`; translations in `[−extent, extent]³`.
    pub extent: f64,
    pub seed: u64,
    pub epsilon: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            inlier_ratio: 0.3,
            noise_std: 0.01,
            extent: 1.0,
            seed: 0,
            epsilon: 0.05,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("scene needs at least one correspondence".into()));
        }
        if !(self.inlier_ratio > 0.0 && self.inlier_ratio <= 1.0) {
            return Err(Error::Config(format!("inlier ratio must be in (0, 1], got {}", self.inlier_ratio)));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise std must be non-negative, got {}", self.noise_std)));
        }
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return Err(Error::Config(format!("extent must be positive, got {}", self.extent)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// Labelled by the `ε` predicate against `ground_truth`.
    pub set: CorrespondenceSet,
    pub ground_truth: RigidTransform,
}

impl Scene {
    pub fn labels(&self) -> &[bool] {
        self.set.labels.as_deref().expect("synthetic scenes are labelled")
    }
}

/// Uniform rotation from a normalized Gaussian quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<f64> {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        if quat.norm() > 1e-12 {
            return UnitQuaternion::from_quaternion(quat);
        }
    }
}

/// `round(ratio·N)` inliers at shuffled positions; outlier targets are uniform
/// in the bounding box of the transformed source cloud.
pub fn generate_scene(cfg: &SynthConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rotation = random_rotation(&mut rng).to_rotation_matrix().into_inner();
    let translation = Vector3::from_fn(|_, _| rng.random_range(-cfg.extent..=cfg.extent));
    let gt = RigidTransform { rotation, translation };

    let sources: Vec<Point3> = (0..cfg.n)
        .map(|_| Point3::from_fn(|_, _| rng.random_range(0.0..=cfg.extent)))
        .collect();
    let moved: Vec<Point3> = sources.iter().map(|p| gt.apply(p)).collect();
    let (lo, hi) = moved.iter().fold(
        (Point3::repeat(f64::INFINITY), Point3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    );

    let inliers = ((cfg.inlier_ratio * cfg.n as f64).round() as usize).clamp(1, cfg.n);
    let mut is_inlier: Vec<bool> = (0..cfg.n).map(|i| i < inliers).collect();
    is_inlier.shuffle(&mut rng);

    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let items: Vec<Correspondence> = sources
        .iter()
        .zip(&moved)
        .zip(&is_inlier)
        .map(|((s, m), &inlier)| {
            let target = if inlier {
                m + Vector3::from_fn(|_, _| noise.sample(&mut rng))
            } else {
                Point3::from_fn(|k, _| if hi[k] > lo[k] { rng.random_range(lo[k]..=hi[k]) } else { lo[k] })
            };
            Correspondence::new(*s, target)
        })
        .collect();
    let mut set = CorrespondenceSet::new(items, None, cfg.epsilon)?;
    set.labels = Some(set.labels_from_transform(&gt));
    Ok(Scene { set, ground_truth: gt })
}
