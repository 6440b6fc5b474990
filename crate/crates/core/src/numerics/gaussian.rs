//! Diagonal Gaussians parameterized by mean and log standard deviation.

use std::f64::consts::PI;

use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        if mean.len() != log_std.len() {
            return Err(Error::shape(
                "DiagGaussian::new",
                format!("mean {} vs log_std {}", mean.len(), log_std.len()),
            ));
        }
        Ok(Self { mean, log_std })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            log_std: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }
}

/// Reparameterized draw `mean + exp(log_std) ⊙ noise`.
pub fn gaussian_sample(g: &DiagGaussian, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != g.dim() {
        return Err(Error::shape(
            "gaussian_sample",
            format!("noise {} for dimension {}", noise.len(), g.dim()),
        ));
    }
    Ok(g.mean
        .iter()
        .zip(&g.log_std)
        .zip(noise)
        .map(|((m, l), e)| m + l.exp() * e)
        .collect())
}

/// Closed-form `KL(q ‖ p)` summed over dimensions.
pub fn kl_diag_gaussians(q: &DiagGaussian, p: &DiagGaussian) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::shape(
            "kl_diag_gaussians",
            format!("{} vs {}", q.dim(), p.dim()),
        ));
    }
    let mut kl = 0.0;
    for k in 0..q.dim() {
        let (mq, lq, mp, lp) = (q.mean[k], q.log_std[k], p.mean[k], p.log_std[k]);
        // σ_q²/σ_p² as exp(2(lq − lp)) so that q = p gives exactly 0
        let ratio = (2.0 * (lq - lp)).exp();
        let quad = (mq - mp).powi(2) * (-2.0 * lp).exp();
        kl += 0.5 * (ratio + quad) - 0.5 - (lq - lp);
    }
    Ok(kl)
}

/// Log density of a unit-variance Gaussian centred at `mean`, evaluated at `b`.
pub fn gaussian_log_likelihood(b: f64, mean: f64) -> f64 {
    -0.5 * (b - mean).powi(2) - 0.5 * (2.0 * PI).ln()
}

/// Tape version of [`gaussian_sample`] over matrices of matching shape.
pub fn sample_on_tape(tape: &mut Tape, mean: Var, log_std: Var, noise: Var) -> Result<Var> {
    let std = tape.exp(log_std);
    let scaled = tape.mul(std, noise)?;
    tape.add(mean, scaled)
}

/// Tape version of [`kl_diag_gaussians`], summed over every entry.
pub fn kl_on_tape(tape: &mut Tape, mq: Var, lq: Var, mp: Var, lp: Var) -> Result<Var> {
    let dl = tape.sub(lq, lp)?;
    let two_dl = tape.scale(dl, 2.0);
    let ratio = tape.exp(two_dl);
    let diff = tape.sub(mq, mp)?;
    let diff2 = tape.square(diff);
    let neg_two_lp = tape.scale(lp, -2.0);
    let inv_var_p = tape.exp(neg_two_lp);
    let quad = tape.mul(diff2, inv_var_p)?;
    let inner = tape.add(ratio, quad)?;
    let half = tape.affine(inner, 0.5, -0.5);
    let per = tape.sub(half, dl)?;
    Ok(tape.sum(per))
}

/// `Σ_i log N(b_i; mean_i, 1)` for an `N×1` column of predicted means.
pub fn log_likelihood_on_tape(tape: &mut Tape, labels: Var, means: Var) -> Result<Var> {
    let diff = tape.sub(labels, means)?;
    let sq = tape.square(diff);
    let per = tape.affine(sq, -0.5, -0.5 * (2.0 * PI).ln());
    Ok(tape.sum(per))
}
