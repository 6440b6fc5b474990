use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::CompatibilityMatrix;
use crate::inlier_search::normalized_rows;
use crate::numerics::Matrix;

pub const SIMILARITY_BINS: usize = 50;

/// Fraction of (inlier, outlier) pairs with `β_ij > 0`; `None` without such pairs.
pub fn diag_ambiguity_ratio(labels: &[bool], beta: &CompatibilityMatrix) -> Result<Option<f64>> {
    if labels.len() != beta.size() {
        return Err(Error::shape("diag_ambiguity_ratio", format!("{} labels for β of size {}", labels.len(), beta.size())));
    }
    let inliers: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let outliers: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if inliers.is_empty() || outliers.is_empty() {
        return Ok(None);
    }
    let positive: usize = inliers
        .iter()
        .map(|&i| outliers.iter().filter(|&&j| beta.get(i, j) > 0.0).count())
        .sum();
    Ok(Some(positive as f64 / (inliers.len() * outliers.len()) as f64))
}

/// Histogram of pairwise inlier cosine similarities over `[−1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityHistogram {
    pub counts: Vec<usize>,
    pub mean: f64,
    pub pairs: usize,
}

impl SimilarityHistogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        let w = 2.0 / SIMILARITY_BINS as f64;
        for (b, c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{},{},{c}", -1.0 + b as f64 * w, -1.0 + (b + 1) as f64 * w);
        }
        out
    }
}

fn bin_of(c: f64) -> usize {
    (((c + 1.0) / 2.0 * SIMILARITY_BINS as f64).floor() as usize).min(SIMILARITY_BINS - 1)
}

/// Pairwise cosine similarities of inlier feature rows (zero rows count as 0).
/// `None` with fewer than two inliers.
pub fn diag_feature_similarity(features: &Matrix, labels: &[bool]) -> Result<Option<SimilarityHistogram>> {
    if labels.len() != features.rows() {
        return Err(Error::shape(
            "diag_feature_similarity",
            format!("{} labels for {} feature rows", labels.len(), features.rows()),
        ));
    }
    let unit = normalized_rows(features);
    let inliers: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    if inliers.len() < 2 {
        return Ok(None);
    }
    let mut counts = vec![0; SIMILARITY_BINS];
    let (mut sum, mut pairs) = (0.0, 0usize);
    for (a, &i) in inliers.iter().enumerate() {
        for &j in &inliers[a + 1..] {
            let c = match (&unit[i], &unit[j]) {
                (Some(u), Some(v)) => u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0),
                _ => 0.0,
            };
            counts[bin_of(c)] += 1;
            sum += c;
            pairs += 1;
        }
    }
    Ok(Some(SimilarityHistogram {
        counts,
        mean: sum / pairs as f64,
        pairs,
    }))
}
