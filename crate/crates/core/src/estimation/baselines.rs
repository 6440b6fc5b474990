use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::register::RegistrationReport;
use super::{hypothesis_score, procrustes, refine, spectral_weights, weighted_procrustes};
use crate::error::{Error, Result};
use crate::geometry::{CompatibilityMatrix, CorrespondenceSet, Point3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub iterations: usize,
    pub sample_size: usize,
    pub seed: u64,
    pub refine_rounds: usize,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            sample_size: 3,
            seed: 0,
            refine_rounds: 3,
        }
    }
}

/// `k` distinct indices from `0..n`, uniformly.
pub fn sample_without_replacement<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    index::sample(rng, n, k).into_vec()
}

/// RANSAC: uniform minimal samples, Procrustes per sample, best re-weighted
/// inlier count (earliest iteration on ties), then refinement.
pub fn ransac_register(set: &CorrespondenceSet, cfg: &RansacConfig) -> Result<RegistrationReport> {
    set.validate()?;
    if cfg.iterations == 0 {
        return Err(Error::InvalidInput("RANSAC needs at least one iteration".into()));
    }
    if cfg.sample_size < 3 {
        return Err(Error::InvalidInput(format!("sample size must be at least 3, got {}", cfg.sample_size)));
    }
    if cfg.sample_size > set.len() {
        return Err(Error::InvalidInput(format!(
            "sample size {} exceeds {} correspondences",
            cfg.sample_size,
            set.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples: Vec<Vec<usize>> = (0..cfg.iterations)
        .map(|_| sample_without_replacement(&mut rng, set.len(), cfg.sample_size))
        .collect();
    let eps = set.epsilon;
    let best = samples
        .par_iter()
        .enumerate()
        .filter_map(|(it, sample)| {
            let t = weighted_procrustes(set, sample, &vec![1.0; sample.len()]).ok()?;
            Some((it, hypothesis_score(set, &t, eps), t))
        })
        .reduce_with(|a, b| match a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)) {
            std::cmp::Ordering::Less => b,
            _ => a,
        });
    let Some((_, _, t)) = best else {
        return Err(Error::Degenerate("every RANSAC sample was degenerate".into()));
    };
    let refined = refine(&t, set, eps, cfg.refine_rounds);
    Ok(RegistrationReport::build(set, refined.transform, refined.degenerate, cfg.iterations, Vec::new()))
}

/// Spectral matching: leading eigenvector of the full `β`, Procrustes on the
/// `top_k` highest-weighted correspondences with those weights, then refinement.
pub fn spectral_matching_register(
    set: &CorrespondenceSet,
    beta: &CompatibilityMatrix,
    top_k: usize,
    refine_rounds: usize,
) -> Result<RegistrationReport> {
    set.validate()?;
    let n = set.len();
    if beta.size() != n {
        return Err(Error::shape("spectral_matching_register", format!("β is {0}x{0} for {n} correspondences", beta.size())));
    }
    let w = spectral_weights(beta.values(), n)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    order.truncate(top_k.clamp(3.min(n), n));
    let src: Vec<Point3> = order.iter().map(|&i| set.items[i].source).collect();
    let dst: Vec<Point3> = order.iter().map(|&i| set.items[i].target).collect();
    let ws: Vec<f64> = order.iter().map(|&i| w[i]).collect();
    let t = procrustes(&src, &dst, &ws)?;
    let refined = refine(&t, set, set.epsilon, refine_rounds);
    Ok(RegistrationReport::build(set, refined.transform, refined.degenerate, 1, Vec::new()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{geometric_compatibility, Correspondence, RigidTransform};
    use nalgebra::Vector3;

    fn scene(n: usize, inliers: usize, seed: u64) -> (CorrespondenceSet, RigidTransform) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = RigidTransform::from_axis_angle(Vector3::new(0.0, 1.0, 1.0).normalize(), 1.2, Vector3::new(0.5, 0.0, -0.1));
        let items = (0..n)
            .map(|i| {
                let s = Point3::from_fn(|_, _| rng.random_range(0.0..1.0));
                let t = if i < inliers { g.apply(&s) } else { Point3::from_fn(|_, _| rng.random_range(0.0..1.0)) };
                Correspondence::new(s, t)
            })
            .collect();
        (CorrespondenceSet::new(items, None, 0.05).unwrap(), g)
    }

    #[test]
    fn ransac_examples() {
        let (set, g) = scene(30, 30, 1);
        let one = RansacConfig {
            iterations: 1,
            ..RansacConfig::default()
        };
        let r = ransac_register(&set, &one).unwrap().with_ground_truth(&g);
        assert!(r.rotation_error.unwrap() < 1e-9 && r.translation_error.unwrap() < 1e-9);
        assert!(ransac_register(&set, &RansacConfig { iterations: 0, ..one }).is_err());
        assert!(ransac_register(&set, &RansacConfig { sample_size: 2, ..one }).is_err());

        let (noisy, g) = scene(200, 60, 2);
        let cfg = RansacConfig::default();
        let a = ransac_register(&noisy, &cfg).unwrap();
        assert_eq!(a, ransac_register(&noisy, &cfg).unwrap());
        assert!(a.with_ground_truth(&g).rotation_error.unwrap() < 1e-9);
    }

    #[test]
    fn all_inlier_sample_frequency_matches_hypergeometric() {
        // p_in = 0.5, pairs: P(both inliers) = C(50,2)/C(100,2)
        let (n, inliers, draws) = (100usize, 50usize, 100_000usize);
        let p = (inliers * (inliers - 1)) as f64 / (n * (n - 1)) as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let hits = (0..draws)
            .filter(|_| sample_without_replacement(&mut rng, n, 2).iter().all(|&i| i < inliers))
            .count();
        let freq = hits as f64 / draws as f64;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((freq - p).abs() < 3.0 * se, "{freq} vs {p}");
    }

    #[test]
    fn spectral_matching_examples() {
        let (set, g) = scene(50, 50, 3);
        let beta = geometric_compatibility(&set);
        let r = spectral_matching_register(&set, &beta, 40, 3).unwrap().with_ground_truth(&g);
        assert!(r.rotation_error.unwrap() < 1e-9);

        let (noisy, g) = scene(200, 60, 4);
        let beta = geometric_compatibility(&noisy);
        let a = spectral_matching_register(&noisy, &beta, 40, 3).unwrap();
        assert_eq!(a, spectral_matching_register(&noisy, &beta, 40, 3).unwrap());
        assert!(a.with_ground_truth(&g).rotation_error.unwrap() < 1e-6);
    }
}
