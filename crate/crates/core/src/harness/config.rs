use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::estimation::{PipelineConfig, RansacConfig};
use crate::inlier_search::SearchConfig;
use crate::nonlocal::{InputMode, TrainConfig, VBNetConfig};
use crate::theory::TheoremGrid;

use super::synth::SynthConfig;

/// Every tunable of the pipeline, loaded from a flat `key = value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub net: VBNetConfig,
    pub search: SearchConfig,
    pub train: TrainConfig,
    pub epsilon: Option<f64>,
    pub seed: u64,
    pub refine_rounds: usize,
    pub ransac_iterations: usize,
    pub ransac_sample_size: usize,
    pub sm_top_k: usize,
    pub re_threshold_deg: f64,
    pub te_threshold: f64,
    pub bench_scenes: usize,
    pub bench_inlier_ratios: Vec<f64>,
    pub synth: SynthConfig,
    pub theorem: TheoremGrid,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            net: VBNetConfig::default(),
            search: SearchConfig::default(),
            train: TrainConfig::default(),
            epsilon: None,
            seed: 0,
            refine_rounds: 3,
            ransac_iterations: 1000,
            ransac_sample_size: 3,
            sm_top_k: 40,
            re_threshold_deg: 15.0,
            te_threshold: 0.30,
            bench_scenes: 100,
            bench_inlier_ratios: vec![0.05, 0.1, 0.3],
            synth: SynthConfig::default(),
            theorem: TheoremGrid::default(),
        }
    }
}

fn value<T: FromStr>(key: &str, raw: &str, line: usize) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("line {line}: bad value `{raw}` for `{key}`")))
}

fn list<T: FromStr>(key: &str, raw: &str, line: usize) -> Result<Vec<T>> {
    raw.split(',').map(|v| value(key, v.trim(), line)).collect()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, v) = content
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line}: expected `key = value`")))?;
            let (key, v) = (key.trim(), v.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {line}: duplicate key `{key}`")));
            }
            cfg.set(key, v, line)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, v: &str, line: usize) -> Result<()> {
        match key {
            "seed" => self.seed = value(key, v, line)?,
            "epsilon" => self.epsilon = Some(value(key, v, line)?),
            "refine_rounds" => self.refine_rounds = value(key, v, line)?,

            "net.iterations" => self.net.iterations = value(key, v, line)?,
            "net.feature_dim" => self.net.feature_dim = value(key, v, line)?,
            "net.latent_dim" => self.net.latent_dim = value(key, v, line)?,
            "net.hidden_dim" => self.net.hidden_dim = value(key, v, line)?,
            "net.label_tile_k" => self.net.label_tile_k = value(key, v, line)?,
            "net.descriptor_dim" => {
                self.net.input_mode = match value::<usize>(key, v, line)? {
                    0 => InputMode::Coordinates,
                    d => InputMode::WithDescriptors(d),
                }
            }

            "search.kappa" => self.search.kappa = value(key, v, line)?,
            "search.seed_ratio" => self.search.seed_ratio = value(key, v, line)?,
            "search.min_seeds" => self.search.min_seeds = value(key, v, line)?,
            "search.sigma" => self.search.sigma = value(key, v, line)?,
            "search.z" => self.search.z = value(key, v, line)?,
            "search.nms_radius" => self.search.nms_radius = value(key, v, line)?,

            "train.epochs" => self.train.epochs = value(key, v, line)?,
            "train.learning_rate" => self.train.learning_rate = value(key, v, line)?,
            "train.weight_decay" => self.train.weight_decay = value(key, v, line)?,

            "ransac.iterations" => self.ransac_iterations = value(key, v, line)?,
            "ransac.sample_size" => self.ransac_sample_size = value(key, v, line)?,
            "sm.top_k" => self.sm_top_k = value(key, v, line)?,

            "bench.re_threshold_deg" => self.re_threshold_deg = value(key, v, line)?,
            "bench.te_threshold" => self.te_threshold = value(key, v, line)?,
            "bench.scenes" => self.bench_scenes = value(key, v, line)?,
            "bench.inlier_ratios" => self.bench_inlier_ratios = list(key, v, line)?,

            "synth.n" => self.synth.n = value(key, v, line)?,
            "synth.inlier_ratio" => self.synth.inlier_ratio = value(key, v, line)?,
            "synth.noise_std" => self.synth.noise_std = value(key, v, line)?,
            "synth.extent" => self.synth.extent = value(key, v, line)?,

            "theorem.p_in" => self.theorem.p_in = list(key, v, line)?,
            "theorem.kappa" => self.theorem.kappa = list(key, v, line)?,
            "theorem.iterations" => self.theorem.iterations = list(key, v, line)?,
            "theorem.seed_inliers" => self.theorem.seed_inliers = list(key, v, line)?,
            "theorem.alpha_factor" => self.theorem.alpha_factor = value(key, v, line)?,
            "theorem.n_total" => self.theorem.n_total = value(key, v, line)?,
            "theorem.trials" => self.theorem.trials = value(key, v, line)?,

            _ => return Err(Error::Config(format!("line {line}: unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Checks every module precondition that can be checked without data.
    pub fn validate(&self) -> Result<()> {
        self.net.validate().map_err(as_config)?;
        self.search.validate().map_err(as_config)?;
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::Config(format!("epsilon must be positive, got {e}")));
            }
        }
        self.synth_config(self.seed).validate()?;
        let t = &self.train;
        if !(t.learning_rate >= 0.0 && t.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be non-negative, got {}", t.learning_rate)));
        }
        if !(t.weight_decay >= 0.0 && t.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight decay must be non-negative, got {}", t.weight_decay)));
        }
        if self.ransac_iterations == 0 {
            return Err(Error::Config("ransac.iterations must be at least 1".into()));
        }
        if self.ransac_sample_size < 3 {
            return Err(Error::Config(format!("ransac.sample_size must be at least 3, got {}", self.ransac_sample_size)));
        }
        if self.sm_top_k < 3 {
            return Err(Error::Config(format!("sm.top_k must be at least 3, got {}", self.sm_top_k)));
        }
        if !(self.re_threshold_deg > 0.0 && self.te_threshold > 0.0) {
            return Err(Error::Config("recall thresholds must be positive".into()));
        }
        if self.bench_inlier_ratios.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
            return Err(Error::Config("bench inlier ratios must lie in (0, 1]".into()));
        }
        let g = &self.theorem;
        if g.p_in.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(Error::Config("theorem.p_in values must lie in (0, 1)".into()));
        }
        if g.kappa.contains(&0) || g.iterations.contains(&0) || g.seed_inliers.contains(&0) {
            return Err(Error::Config("theorem kappa, iterations and seed_inliers must be at least 1".into()));
        }
        if g.trials == 0 {
            return Err(Error::Config("theorem.trials must be at least 1".into()));
        }
        if !(g.alpha_factor >= 0.0 && g.alpha_factor.is_finite()) {
            return Err(Error::Config(format!("theorem.alpha_factor must be non-negative, got {}", g.alpha_factor)));
        }
        for &p in &g.p_in {
            for &k in &g.kappa {
                if ((p * g.n_total as f64).floor() as usize) < k {
                    return Err(Error::Config(format!("theorem grid needs ⌊p_in·N⌋ ≥ κ (p_in = {p}, κ = {k})")));
                }
            }
        }
        Ok(())
    }

    pub fn synth_config(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            seed,
            epsilon: self.epsilon.unwrap_or(self.synth.epsilon),
            ..self.synth
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            search: self.search,
            refine_rounds: self.refine_rounds,
            noise_seed: self.seed,
        }
    }

    pub fn ransac(&self) -> RansacConfig {
        RansacConfig {
            iterations: self.ransac_iterations,
            sample_size: self.ransac_sample_size,
            seed: self.seed,
            refine_rounds: self.refine_rounds,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train
        }
    }

    pub fn theorem_grid(&self) -> TheoremGrid {
        TheoremGrid {
            seed: self.seed,
            ..self.theorem.clone()
        }
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}
