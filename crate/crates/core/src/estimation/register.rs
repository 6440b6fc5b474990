use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::{hypothesis_score, inlier_mask, refine, select_hypothesis, spectral_weights, weighted_procrustes, Hypothesis};
use crate::error::{Error, Result};
use crate::geometry::{geometric_compatibility, rotation_error, translation_error, CorrespondenceSet, RigidTransform};
use crate::inlier_search::{coarse_vote, fine_cluster, select_seeds, voter_compatibility, SearchConfig, VoterCompatibility};
use crate::nonlocal::{extract_voter_features, vb_forward_prior, VBNet};
use crate::numerics::ParamStore;

/// Where per-correspondence inlier confidences come from.
#[derive(Debug, Clone, Copy)]
pub enum ConfidenceSource<'a> {
    /// Prior pass of a trained network; its per-iteration features vote.
    Model {
        net: &'a VBNet,
        params: &'a ParamStore,
    },
    /// Externally computed confidences; `β` is the only voter.
    External(&'a [f64]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub search: SearchConfig,
    pub refine_rounds: usize,
    /// Seed for the latent noise of the prior pass.
    pub noise_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            search: SearchConfig::default(),
            refine_rounds: 3,
            noise_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: &'static str,
    pub millis: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationReport {
    pub transform: RigidTransform,
    pub inlier_mask: Vec<bool>,
    /// Re-weighted inlier count of `transform`.
    pub score: f64,
    pub rotation_error: Option<f64>,
    pub translation_error: Option<f64>,
    /// Refinement could not re-fit and kept the selected hypothesis.
    pub degenerate: bool,
    pub hypotheses: usize,
    pub timings: Vec<StageTiming>,
}

#[derive(Serialize)]
struct TransformJson {
    rotation: [f64; 9],
    translation: [f64; 3],
}

/// Alternating run lengths, the first counting outliers (possibly 0).
#[derive(Serialize)]
struct MaskJson {
    length: usize,
    runs: Vec<usize>,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    transform: TransformJson,
    score: f64,
    inliers: usize,
    mask: MaskJson,
    #[serde(skip_serializing_if = "Option::is_none")]
    rotation_error_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    translation_error: Option<f64>,
    degenerate: bool,
    hypotheses: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    timings_ms: Option<&'a [StageTiming]>,
}

pub fn run_lengths(mask: &[bool]) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut count = 0;
    for &m in mask {
        if m == current {
            count += 1;
        } else {
            runs.push(count);
            current = m;
            count = 1;
        }
    }
    if !mask.is_empty() {
        runs.push(count);
    }
    runs
}

impl RegistrationReport {
    pub(crate) fn build(
        set: &CorrespondenceSet,
        transform: RigidTransform,
        degenerate: bool,
        hypotheses: usize,
        timings: Vec<StageTiming>,
    ) -> Self {
        Self {
            transform,
            inlier_mask: inlier_mask(set, &transform, set.epsilon),
            score: hypothesis_score(set, &transform, set.epsilon),
            rotation_error: None,
            translation_error: None,
            degenerate,
            hypotheses,
            timings,
        }
    }

    /// Fills RE (radians) and TE against a known transform.
    pub fn with_ground_truth(mut self, gt: &RigidTransform) -> Self {
        self.rotation_error = Some(rotation_error(&self.transform, gt));
        self.translation_error = Some(translation_error(&self.transform, gt));
        self
    }

    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|&&b| b).count()
    }

    /// The report with timings dropped, for run-to-run comparison.
    pub fn without_timings(&self) -> Self {
        Self {
            timings: Vec::new(),
            ..self.clone()
        }
    }

    pub fn to_json(&self, include_timings: bool) -> String {
        let a = self.transform.to_array();
        let mut rotation = [0.0; 9];
        rotation.copy_from_slice(&a[..9]);
        let json = ReportJson {
            transform: TransformJson {
                rotation,
                translation: [a[9], a[10], a[11]],
            },
            score: self.score,
            inliers: self.inlier_count(),
            mask: MaskJson {
                length: self.inlier_mask.len(),
                runs: run_lengths(&self.inlier_mask),
            },
            rotation_error_deg: self.rotation_error.map(f64::to_degrees),
            translation_error: self.translation_error,
            degenerate: self.degenerate,
            hypotheses: self.hypotheses,
            timings_ms: include_timings.then_some(self.timings.as_slice()),
        };
        let mut s = serde_json::to_string_pretty(&json).expect("report serializes");
        s.push('\n');
        s
    }
}

struct Stopwatch {
    last: Instant,
    timings: Vec<StageTiming>,
}

impl Stopwatch {
    fn new() -> Self {
        Self {
            last: Instant::now(),
            timings: Vec::new(),
        }
    }

    fn lap(&mut self, stage: &'static str) {
        let now = Instant::now();
        self.timings.push(StageTiming {
            stage,
            millis: (now - self.last).as_secs_f64() * 1e3,
        });
        self.last = now;
    }
}

/// Full registration: confidences and voters, seed selection, voting,
/// per-seed weighted Procrustes, hypothesis selection and refinement.
pub fn register(set: &CorrespondenceSet, source: ConfidenceSource<'_>, cfg: &PipelineConfig) -> Result<RegistrationReport> {
    set.validate()?;
    cfg.search.validate()?;
    let n = set.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!("registration needs at least 3 correspondences, got {n}")));
    }
    let kappa = cfg.search.kappa.min(n);
    let mut clock = Stopwatch::new();

    let beta = geometric_compatibility(set);
    clock.lap("compatibility");

    let (confidences, compat) = match source {
        ConfidenceSource::Model { net, params } => {
            let state = vb_forward_prior(set, &beta, net, params, cfg.noise_seed)?;
            clock.lap("network");
            let voters = extract_voter_features(&state);
            (state.confidences(), voter_compatibility(&voters, &beta, cfg.search.sigma)?)
        }
        ConfidenceSource::External(conf) => {
            if conf.len() != n {
                return Err(Error::shape("register", format!("{} confidences for {n} correspondences", conf.len())));
            }
            (
                conf.to_vec(),
                VoterCompatibility {
                    voters: vec![beta.clone()],
                },
            )
        }
    };
    let seeds = select_seeds(set, &confidences, cfg.search.seed_ratio, cfg.search.min_seeds, cfg.search.nms_radius)?;
    clock.lap("seeds");

    let coarse = coarse_vote(&compat, &seeds.indices, kappa)?;
    let (_, fine) = fine_cluster(&coarse, kappa, cfg.search.z)?;
    clock.lap("voting");

    let last = compat.voters.last().expect("at least one voter");
    let hypotheses: Vec<Hypothesis> = fine
        .sets
        .par_iter()
        .enumerate()
        .filter_map(|(k, members)| {
            let sub = last.submatrix(members);
            let w = spectral_weights(&sub, members.len()).ok()?;
            let transform = weighted_procrustes(set, members, &w).ok()?;
            Some(Hypothesis {
                transform,
                seed: seeds.indices[k],
                members: members.clone(),
            })
        })
        .collect();
    clock.lap("estimation");
    if hypotheses.is_empty() {
        return Err(Error::Degenerate("every hypothetical inlier set was degenerate".into()));
    }

    let (best, _) = select_hypothesis(&hypotheses, set, set.epsilon)?;
    clock.lap("selection");

    let refined = refine(&hypotheses[best].transform, set, set.epsilon, cfg.refine_rounds);
    clock.lap("refine");

    Ok(RegistrationReport::build(
        set,
        refined.transform,
        refined.degenerate,
        hypotheses.len(),
        clock.timings,
    ))
}
