use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use super::config::RunConfig;
use super::synth::{generate_scene, Scene};
use crate::error::Result;
use crate::estimation::{ransac_register, register, spectral_matching_register, ConfidenceSource, RegistrationReport};
use crate::geometry::{geometric_compatibility, registration_recall, rotation_error, translation_error};
use crate::nonlocal::VBNet;
use crate::numerics::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Pipeline,
    Ransac,
    SpectralMatching,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Pipeline => "vbreg",
            Method::Ransac => "ransac",
            Method::SpectralMatching => "sm",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Model<'a> {
    pub net: &'a VBNet,
    pub params: &'a ParamStore,
}

/// Runs one method on one scene. Errors count as failed registrations.
pub fn run_method(method: Method, scene: &Scene, model: Option<Model<'_>>, cfg: &RunConfig) -> Option<RegistrationReport> {
    let set = &scene.set;
    let report = match method {
        Method::Pipeline => {
            let m = model?;
            register(set, ConfidenceSource::Model { net: m.net, params: m.params }, &cfg.pipeline())
        }
        Method::Ransac => ransac_register(set, &cfg.ransac()),
        Method::SpectralMatching => {
            spectral_matching_register(set, &geometric_compatibility(set), cfg.sm_top_k, cfg.refine_rounds)
        }
    };
    report.ok().map(|r| r.with_ground_truth(&scene.ground_truth))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub inlier_ratio: f64,
    pub method: &'static str,
    pub recall: f64,
    /// Over successful registrations, in degrees.
    pub mean_re_deg: Option<f64>,
    pub mean_te: Option<f64>,
    pub mean_seconds: f64,
    pub scenes: usize,
    /// Per-scene (RE rad, TE), infinite for failed runs.
    pub errors: Vec<(f64, f64)>,
}

/// Scenes for one inlier ratio: scene `i` uses seed `seed + i`.
pub fn bench_scenes(cfg: &RunConfig, inlier_ratio: f64) -> Result<Vec<Scene>> {
    (0..cfg.bench_scenes)
        .map(|i| {
            let mut synth = cfg.synth_config(cfg.seed.wrapping_add(i as u64));
            synth.inlier_ratio = inlier_ratio;
            generate_scene(&synth)
        })
        .collect()
}

/// Evaluates `methods` on each `(inlier_ratio, scenes)` group. Scenes run in
/// parallel; results are merged in input order.
pub fn bench(groups: &[(f64, Vec<Scene>)], methods: &[Method], model: Option<Model<'_>>, cfg: &RunConfig) -> Vec<BenchRow> {
    let re_thresh = cfg.re_threshold_deg.to_radians();
    let mut rows = Vec::new();
    for (ratio, scenes) in groups {
        for &method in methods {
            if method == Method::Pipeline && model.is_none() {
                continue;
            }
            let runs: Vec<((f64, f64), f64)> = scenes
                .par_iter()
                .map(|scene| {
                    let start = Instant::now();
                    let report = run_method(method, scene, model, cfg);
                    let secs = start.elapsed().as_secs_f64();
                    let err = report.map_or((f64::INFINITY, f64::INFINITY), |r| {
                        (rotation_error(&r.transform, &scene.ground_truth), translation_error(&r.transform, &scene.ground_truth))
                    });
                    (err, secs)
                })
                .collect();
            let errors: Vec<(f64, f64)> = runs.iter().map(|r| r.0).collect();
            let summary = registration_recall(&errors, re_thresh, cfg.te_threshold);
            rows.push(BenchRow {
                inlier_ratio: *ratio,
                method: method.name(),
                recall: summary.recall,
                mean_re_deg: summary.mean_re.map(f64::to_degrees),
                mean_te: summary.mean_te,
                mean_seconds: runs.iter().map(|r| r.1).sum::<f64>() / runs.len().max(1) as f64,
                scenes: scenes.len(),
                errors,
            });
        }
    }
    rows
}

/// CSV with one row per (ratio, method). Wall-clock seconds are included
/// only on request so that repeated runs are byte-identical.
pub fn bench_csv(rows: &[BenchRow], include_seconds: bool) -> String {
    let mut out = String::from("inlier_ratio,method,scenes,rr,mean_re_deg,mean_te");
    out.push_str(if include_seconds { ",mean_seconds\n" } else { "\n" });
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in rows {
        let _ = write!(
            out,
            "{},{},{},{},{},{}",
            r.inlier_ratio,
            r.method,
            r.scenes,
            r.recall,
            opt(r.mean_re_deg),
            opt(r.mean_te)
        );
        if include_seconds {
            let _ = write!(out, ",{}", r.mean_seconds);
        }
        out.push('\n');
    }
    out
}
