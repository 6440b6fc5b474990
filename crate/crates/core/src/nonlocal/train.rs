use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::vbnet::{LatentNoise, VBNet};
use crate::error::{Error, Result};
use crate::geometry::{geometric_compatibility, CompatibilityMatrix, CorrespondenceSet};
use crate::numerics::{ParamStore, Tape};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 1e-4,
            weight_decay: 1e-6,
            seed: 0,
        }
    }
}

/// Per-epoch averages; ELBO terms are per correspondence.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub elbo: f64,
    pub kl_total: f64,
    pub loglik: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamStore,
    pub curve: Vec<EpochStats>,
}

impl TrainOutcome {
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("epoch,elbo,kl_total,loglik,val_accuracy\n");
        for e in &self.curve {
            let _ = writeln!(out, "{},{},{},{},{}", e.epoch, e.elbo, e.kl_total, e.loglik, e.val_accuracy);
        }
        out
    }
}

struct Prepared<'a> {
    set: &'a CorrespondenceSet,
    labels: &'a [bool],
    beta: CompatibilityMatrix,
}

fn prepare(sets: &[CorrespondenceSet]) -> Result<Vec<Prepared<'_>>> {
    sets.iter()
        .enumerate()
        .map(|(i, set)| {
            set.validate()?;
            let labels = set
                .labels
                .as_deref()
                .ok_or_else(|| Error::InvalidInput(format!("training set {i} has no labels")))?;
            Ok(Prepared {
                set,
                labels,
                beta: geometric_compatibility(set),
            })
        })
        .collect()
}

/// Fraction of correspondences whose prior-path label mean falls on the
/// correct side of 0.5.
pub fn inlier_accuracy(net: &VBNet, params: &ParamStore, sets: &[CorrespondenceSet], seed: u64) -> Result<f64> {
    let prepared = prepare(sets)?;
    accuracy(net, params, &prepared, seed)
}

fn accuracy(net: &VBNet, params: &ParamStore, sets: &[Prepared], seed: u64) -> Result<f64> {
    let (mut correct, mut total) = (0usize, 0usize);
    for p in sets {
        let noise = LatentNoise::draw(seed, net.config(), p.set.len());
        let (state, _) = net.forward(params, p.set, &p.beta, None, &noise)?;
        for (m, &b) in state.label_means.iter().zip(p.labels) {
            correct += usize::from((*m > 0.5) == b);
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
}

/// Minimizes the per-correspondence negative ELBO with Adam, one scene per
/// step, visiting scenes in a seeded shuffled order each epoch. Accuracy is
/// measured on `validation`, or on the training scenes when it is empty.
pub fn train(
    net: &VBNet,
    dataset: &[CorrespondenceSet],
    validation: &[CorrespondenceSet],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("training needs at least one correspondence set".into()));
    }
    let scenes = prepare(dataset)?;
    let val = if validation.is_empty() { prepare(dataset)? } else { prepare(validation)? };

    let mut params = net.init_params(cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_7a1e);
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut elbo, mut kl, mut ll, mut count) = (0.0, 0.0, 0.0, 0usize);
        for &i in &order {
            let p = &scenes[i];
            let n = p.set.len();
            let noise = LatentNoise::draw(rng.random(), net.config(), n);
            let mut tape = Tape::new();
            let trace = net.trace(&mut tape, &params, p.set, &p.beta, Some(p.labels), &noise)?;
            let loss = trace.neg_elbo_per_correspondence(&mut tape, n)?;
            tape.validate()?;
            let grads = tape.backward(loss)?;

            let ll_i = tape.scalar(trace.log_likelihood.expect("labelled pass"));
            let kl_i: f64 = trace.kl_terms.iter().map(|&v| tape.scalar(v)).sum();
            elbo += ll_i - kl_i;
            kl += kl_i;
            ll += ll_i;
            count += n;

            params.zero_grads();
            params.accumulate_grads(tape.param_grads(&grads))?;
            params.adam_step(cfg.learning_rate, cfg.weight_decay)?;
        }
        let c = count.max(1) as f64;
        curve.push(EpochStats {
            epoch,
            elbo: elbo / c,
            kl_total: kl / c,
            loglik: ll / c,
            val_accuracy: accuracy(net, &params, &val, cfg.seed)?,
        });
    }
    Ok(TrainOutcome {
        params: params.params_only(),
        curve,
    })
}
