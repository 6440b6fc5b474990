//! Transformation estimation from hypothetical inlier groups.

pub mod baselines;
pub mod register;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CorrespondenceSet, Point3, RigidTransform};

pub use baselines::{ransac_register, spectral_matching_register, RansacConfig};
pub use register::{register, ConfidenceSource, PipelineConfig, RegistrationReport, StageTiming};

const POWER_ITERATIONS: usize = 200;
const POWER_TOL: f64 = 1e-10;
const EIGEN_GAP_TOL: f64 = 1e-12;

/// Leading eigenvector of a symmetric non-negative `k×k` matrix (row-major),
/// signed so that it sums positive, clamped at 0 and scaled to max 1.
///
/// Falls back to uniform weights for an all-zero matrix or when the two
/// leading eigenvalues are not separated.
pub fn spectral_weights(m: &[f64], k: usize) -> Result<Vec<f64>> {
    if m.len() != k * k {
        return Err(Error::shape("spectral_weights", format!("{} values for {k}x{k}", m.len())));
    }
    let uniform = vec![1.0; k];
    if k == 0 || m.iter().all(|&v| v == 0.0) {
        return Ok(uniform);
    }
    let start = vec![1.0 / (k as f64).sqrt(); k];
    let (v, lambda1) = power_iteration(m, k, start, None);
    let Some(v) = v else { return Ok(uniform) };

    // second eigenvalue by deflation, from a start vector orthogonal to v
    let mut probe: Vec<f64> = (0..k).map(|i| (i + 1) as f64).collect();
    orthogonalize(&mut probe, &v);
    if normalize(&mut probe) {
        let (_, lambda2) = power_iteration(m, k, probe, Some((&v, lambda1)));
        if lambda1.abs() - lambda2.abs() < EIGEN_GAP_TOL * lambda1.abs().max(1.0) {
            return Ok(uniform);
        }
    }

    let sign = if v.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    let w: Vec<f64> = v.iter().map(|x| (sign * x).max(0.0)).collect();
    let max = w.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Ok(uniform);
    }
    Ok(w.into_iter().map(|x| x / max).collect())
}

fn mat_vec(m: &[f64], k: usize, v: &[f64], deflate: Option<(&[f64], f64)>) -> Vec<f64> {
    let mut out: Vec<f64> = (0..k)
        .map(|i| m[i * k..(i + 1) * k].iter().zip(v).map(|(a, b)| a * b).sum())
        .collect();
    if let Some((u, lambda)) = deflate {
        let proj: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
        for (o, ui) in out.iter_mut().zip(u) {
            *o -= lambda * proj * ui;
        }
    }
    out
}

fn normalize(v: &mut [f64]) -> bool {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

fn orthogonalize(v: &mut [f64], u: &[f64]) {
    let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
    for (x, ui) in v.iter_mut().zip(u) {
        *x -= d * ui;
    }
}

/// Returns the converged unit vector (None if it collapsed to zero) and its
/// Rayleigh quotient.
fn power_iteration(m: &[f64], k: usize, mut v: Vec<f64>, deflate: Option<(&[f64], f64)>) -> (Option<Vec<f64>>, f64) {
    for _ in 0..POWER_ITERATIONS {
        let mut w = mat_vec(m, k, &v, deflate);
        if !normalize(&mut w) {
            return (None, 0.0);
        }
        let change = w.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        v = w;
        if change < POWER_TOL {
            break;
        }
    }
    let mv = mat_vec(m, k, &v, deflate);
    let lambda = mv.iter().zip(&v).map(|(a, b)| a * b).sum();
    (Some(v), lambda)
}

/// Weighted least-squares rigid fit `y ≈ R·x + t` (Kabsch with reflection fix).
pub fn procrustes(src: &[Point3], dst: &[Point3], weights: &[f64]) -> Result<RigidTransform> {
    if src.len() != dst.len() || src.len() != weights.len() {
        return Err(Error::shape(
            "procrustes",
            format!("{} sources, {} targets, {} weights", src.len(), dst.len(), weights.len()),
        ));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidInput("weights must be finite and non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if src.len() < 3 || !(total > 0.0) {
        return Err(Error::Degenerate(format!("{} points with total weight {total}", src.len())));
    }
    let mut cx = Vector3::zeros();
    let mut cy = Vector3::zeros();
    for ((x, y), w) in src.iter().zip(dst).zip(weights) {
        cx += x * *w;
        cy += y * *w;
    }
    cx /= total;
    cy /= total;
    let mut h = Matrix3::zeros();
    for ((x, y), w) in src.iter().zip(dst).zip(weights) {
        h += (x - cx) * (y - cy).transpose() * *w;
    }
    let svd = h.svd(true, true);
    let s = svd.singular_values;
    if !(s[0] > 0.0) || s[1] <= 1e-12 * s[0] {
        return Err(Error::Degenerate(format!("rank-deficient cross-covariance, singular values {s:?}")));
    }
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested Vᵀ");
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let translation = cy - rotation * cx;
    Ok(RigidTransform { rotation, translation })
}

/// [`procrustes`] over the members of a correspondence set.
pub fn weighted_procrustes(set: &CorrespondenceSet, members: &[usize], weights: &[f64]) -> Result<RigidTransform> {
    if members.len() != weights.len() {
        return Err(Error::shape(
            "weighted_procrustes",
            format!("{} members, {} weights", members.len(), weights.len()),
        ));
    }
    if let Some(&bad) = members.iter().find(|&&i| i >= set.len()) {
        return Err(Error::InvalidInput(format!("member {bad} out of range")));
    }
    let src: Vec<Point3> = members.iter().map(|&i| set.items[i].source).collect();
    let dst: Vec<Point3> = members.iter().map(|&i| set.items[i].target).collect();
    procrustes(&src, &dst, weights)
}

/// A candidate transform and the group it was fitted on.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub transform: RigidTransform,
    pub seed: usize,
    pub members: Vec<usize>,
}

/// Re-weighted inlier count `Σ_j (1 − r_j²/ε²)·1[r_j < ε]`.
pub fn hypothesis_score(set: &CorrespondenceSet, t: &RigidTransform, epsilon: f64) -> f64 {
    let e2 = epsilon * epsilon;
    set.items
        .iter()
        .map(|c| {
            let r = c.residual(t);
            if r < epsilon {
                1.0 - r * r / e2
            } else {
                0.0
            }
        })
        .sum()
}

/// Index of the best-scoring hypothesis and its score; ties go to the lower seed index.
pub fn select_hypothesis(hypotheses: &[Hypothesis], set: &CorrespondenceSet, epsilon: f64) -> Result<(usize, f64)> {
    if hypotheses.is_empty() {
        return Err(Error::InvalidInput("no hypotheses to select from".into()));
    }
    let scores: Vec<f64> = hypotheses
        .par_iter()
        .map(|h| hypothesis_score(set, &h.transform, epsilon))
        .collect();
    let best = (0..hypotheses.len())
        .max_by(|&a, &b| {
            scores[a]
                .total_cmp(&scores[b])
                .then(hypotheses[b].seed.cmp(&hypotheses[a].seed))
                .then(b.cmp(&a))
        })
        .expect("non-empty");
    Ok((best, scores[best]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    pub transform: RigidTransform,
    /// Set when too few inliers remained and the input was returned.
    pub degenerate: bool,
    pub rounds: usize,
}

pub fn inlier_mask(set: &CorrespondenceSet, t: &RigidTransform, epsilon: f64) -> Vec<bool> {
    set.items.iter().map(|c| c.residual(t) < epsilon).collect()
}

/// Re-fits on the current inlier mask for up to `rounds` rounds, stopping
/// early once the mask no longer changes.
pub fn refine(start: &RigidTransform, set: &CorrespondenceSet, epsilon: f64, rounds: usize) -> Refined {
    let mut current = *start;
    let mut mask = inlier_mask(set, &current, epsilon);
    for r in 0..rounds {
        let members: Vec<usize> = (0..set.len()).filter(|&i| mask[i]).collect();
        if members.len() < 3 {
            return Refined {
                transform: current,
                degenerate: r == 0,
                rounds: r,
            };
        }
        let Ok(next) = weighted_procrustes(set, &members, &vec![1.0; members.len()]) else {
            return Refined {
                transform: current,
                degenerate: r == 0,
                rounds: r,
            };
        };
        current = next;
        let new_mask = inlier_mask(set, &current, epsilon);
        if new_mask == mask {
            return Refined {
                transform: current,
                degenerate: false,
                rounds: r + 1,
            };
        }
        mask = new_mask;
    }
    Refined {
        transform: current,
        degenerate: false,
        rounds,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rotation_error, translation_error, Correspondence};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_transform(rng: &mut ChaCha8Rng) -> RigidTransform {
        let axis = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
        let t = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
        RigidTransform::from_axis_angle(axis, rng.random_range(0.0..3.1), t)
    }

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
        (0..n).map(|_| Point3::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect()
    }

    #[test]
    fn procrustes_recovers_known_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let g = random_transform(&mut rng);
            let src = cloud(&mut rng, 10);
            let dst: Vec<Point3> = src.iter().map(|p| g.apply(p)).collect();
            let w: Vec<f64> = (0..10).map(|_| rng.random_range(0.1..1.0)).collect();
            let est = procrustes(&src, &dst, &w).unwrap();
            assert!(rotation_error(&est, &g) < 1e-9);
            assert!(translation_error(&est, &g) < 1e-9);
            assert!(est.validate().is_ok());
            let doubled: Vec<f64> = w.iter().map(|x| 2.0 * x).collect();
            let est2 = procrustes(&src, &dst, &doubled).unwrap();
            assert!(rotation_error(&est, &est2) < 1e-12 && translation_error(&est, &est2) < 1e-12);
        }
        let src = cloud(&mut rng, 5);
        let id = procrustes(&src, &src, &[1.0; 5]).unwrap();
        assert!(rotation_error(&id, &RigidTransform::identity()) < 1e-12);
        assert!(id.translation.norm() < 1e-12);
    }

    #[test]
    fn procrustes_rejects_degenerate_input() {
        let line: Vec<Point3> = (0..5).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(procrustes(&line, &line, &[1.0; 5]), Err(Error::Degenerate(_))));
        let pts = vec![Point3::x(), Point3::y(), Point3::z()];
        assert!(procrustes(&pts, &pts, &[0.0; 3]).is_err());
        assert!(procrustes(&pts[..2], &pts[..2], &[1.0; 2]).is_err());
        assert!(procrustes(&pts, &pts, &[1.0, -1.0, 1.0]).is_err());
    }

    #[test]
    fn spectral_weight_examples() {
        assert_eq!(spectral_weights(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], 3).unwrap(), vec![1.0; 3]);
        assert_eq!(spectral_weights(&[0.0; 4], 2).unwrap(), vec![1.0; 2]);

        let v = [0.2, 0.9, 0.5, 0.1];
        let m: Vec<f64> = (0..16).map(|i| v[i / 4] * v[i % 4]).collect();
        let w = spectral_weights(&m, 4).unwrap();
        for i in 0..4 {
            assert!((w[i] - v[i] / 0.9).abs() < 1e-9, "{w:?}");
        }

        // dominant 3-block and weak 2-block
        let k = 5;
        let m: Vec<f64> = (0..k * k)
            .map(|p| {
                let (i, j) = (p / k, p % k);
                match (i < 3, j < 3) {
                    (true, true) => 1.0,
                    (false, false) => 0.4,
                    _ => 0.0,
                }
            })
            .collect();
        let w = spectral_weights(&m, k).unwrap();
        assert!(w[..3].iter().all(|&x| (x - 1.0).abs() < 1e-9));
        assert!(w[3..].iter().all(|&x| x < 1e-6), "{w:?}");
    }

    #[test]
    fn spectral_weights_match_dense_eigensolver() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let k = 6;
            let mut m = nalgebra::DMatrix::<f64>::zeros(k, k);
            for i in 0..k {
                for j in i..k {
                    let v = rng.random_range(0.0..1.0);
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            let eig = m.clone().symmetric_eigen();
            let top = eig.eigenvalues.iamax();
            let mut oracle: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
            if oracle.iter().sum::<f64>() < 0.0 {
                oracle.iter_mut().for_each(|x| *x = -*x);
            }
            let max = oracle.iter().cloned().fold(f64::MIN, f64::max);
            let flat: Vec<f64> = (0..k * k).map(|p| m[(p / k, p % k)]).collect();
            let w = spectral_weights(&flat, k).unwrap();
            for i in 0..k {
                assert!((w[i] - (oracle[i] / max).max(0.0)).abs() < 1e-7);
            }
        }
    }

    fn set_from(src: &[Point3], dst: &[Point3], eps: f64) -> CorrespondenceSet {
        let items = src.iter().zip(dst).map(|(s, t)| Correspondence::new(*s, *t)).collect();
        CorrespondenceSet::new(items, None, eps).unwrap()
    }

    #[test]
    fn hypothesis_scoring() {
        let src: Vec<Point3> = (0..15).map(|i| Point3::new(i as f64, (i * i % 7) as f64, (i % 3) as f64)).collect();
        let a = RigidTransform::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let b = RigidTransform::from_translation(Vector3::new(0.0, 5.0, 0.0));
        let dst: Vec<Point3> = src.iter().enumerate().map(|(i, p)| if i < 10 { a.apply(p) } else { b.apply(p) }).collect();
        let set = set_from(&src, &dst, 0.1);
        let hyps = vec![
            Hypothesis { transform: b, seed: 3, members: vec![] },
            Hypothesis { transform: a, seed: 7, members: vec![] },
        ];
        let (best, score) = select_hypothesis(&hyps, &set, 0.1).unwrap();
        assert_eq!((best, score), (1, 10.0));
        assert_eq!(hypothesis_score(&set, &b, 0.1), 5.0);
        // residual exactly ε contributes nothing
        let one = set_from(&[Point3::zeros()], &[Point3::new(0.5, 0.0, 0.0)], 0.5);
        assert_eq!(hypothesis_score(&one, &RigidTransform::identity(), 0.5), 0.0);
        // ties go to the lower seed
        let tie = vec![
            Hypothesis { transform: a, seed: 9, members: vec![] },
            Hypothesis { transform: a, seed: 2, members: vec![] },
        ];
        assert_eq!(select_hypothesis(&tie, &set, 0.1).unwrap().0, 1);
        assert!(select_hypothesis(&[], &set, 0.1).is_err());
    }

    #[test]
    fn refine_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = random_transform(&mut rng);
        let src = cloud(&mut rng, 40);
        let dst: Vec<Point3> = src
            .iter()
            .enumerate()
            .map(|(i, p)| if i % 2 == 0 { g.apply(p) } else { Point3::from_fn(|_, _| rng.random_range(-3.0..3.0)) })
            .collect();
        let set = set_from(&src, &dst, 0.2);
        let fixed = refine(&g, &set, 0.2, 3);
        assert!(rotation_error(&fixed.transform, &g) < 1e-9 && !fixed.degenerate);

        let nudge = RigidTransform::from_axis_angle(Vector3::z(), 0.01, Vector3::new(0.01, 0.0, 0.0));
        let refined = refine(&nudge.compose(&g), &set, 0.2, 3);
        assert!(rotation_error(&refined.transform, &g) < 1e-9);
        assert!(translation_error(&refined.transform, &g) < 1e-9);

        let far = RigidTransform::from_translation(Vector3::new(100.0, 0.0, 0.0));
        let r = refine(&far, &set, 0.2, 3);
        assert!(r.degenerate);
        assert_eq!(r.transform, far);
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};

        fn transform_from(seed: u64) -> RigidTransform {
            random_transform(&mut ChaCha8Rng::seed_from_u64(seed))
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn procrustes_output_is_a_rotation(seed in any::<u64>(), n in 3usize..30) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let src = cloud(&mut rng, n);
                let dst = cloud(&mut rng, n);
                let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
                if let Ok(t) = procrustes(&src, &dst, &w) {
                    prop_assert!((t.rotation.transpose() * t.rotation - Matrix3::identity()).abs().max() < 1e-9);
                    prop_assert!((t.rotation.determinant() - 1.0).abs() < 1e-9);
                }
            }

            #[test]
            fn moving_the_target_cloud_composes(seed in any::<u64>(), gs in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let src = cloud(&mut rng, 12);
                let dst = cloud(&mut rng, 12);
                let w: Vec<f64> = (0..12).map(|_| rng.random_range(0.1..1.0)).collect();
                let g = transform_from(gs);
                let t = procrustes(&src, &dst, &w).unwrap();
                let moved: Vec<Point3> = dst.iter().map(|p| g.apply(p)).collect();
                let tg = procrustes(&src, &moved, &w).unwrap();
                let expect = g.compose(&t);
                prop_assert!((tg.rotation - expect.rotation).abs().max() < 1e-6);
                prop_assert!((tg.translation - expect.translation).norm() < 1e-6);

                // moving both clouds conjugates the estimate
                let both: Vec<Point3> = src.iter().map(|p| g.apply(p)).collect();
                let tb = procrustes(&both, &moved, &w).unwrap();
                let conj = g.compose(&t).compose(&g.inverse());
                prop_assert!((tb.rotation - conj.rotation).abs().max() < 1e-6);
                prop_assert!((tb.translation - conj.translation).norm() < 1e-6);
            }

            #[test]
            fn selected_score_ignores_hypothesis_order(seed in any::<u64>(), k in 1usize..8) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let g = transform_from(seed ^ 1);
                let src = cloud(&mut rng, 30);
                let dst: Vec<Point3> = src.iter().enumerate()
                    .map(|(i, p)| if i < 15 { g.apply(p) } else { Point3::from_fn(|_, _| rng.random_range(-1.0..1.0)) })
                    .collect();
                let items = src.iter().zip(&dst).map(|(s, t)| Correspondence::new(*s, *t)).collect();
                let set = CorrespondenceSet::new(items, None, 0.3).unwrap();
                let mut hyps: Vec<Hypothesis> = (0..k)
                    .map(|i| Hypothesis { transform: transform_from(seed.wrapping_add(i as u64)), seed: i, members: vec![] })
                    .collect();
                hyps.push(Hypothesis { transform: g, seed: k, members: vec![] });
                let (_, a) = select_hypothesis(&hyps, &set, 0.3).unwrap();
                hyps.reverse();
                let (_, b) = select_hypothesis(&hyps, &set, 0.3).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}
