//! Variational non-local network.
//!
//! Per branch `b ∈ {q, k, v}` and iteration `l = 1…L`:
//!
//! ```text
//! hˡ  = GRU_b(hˡ⁻¹, [zˡ⁻¹, F̃ˡ⁻¹])          h⁰ = 0
//! zˡ  ~ p(z | hˡ)  or  q(z | [hˡ, b×k])      reparameterized
//! Q̃ˡ, K̃ˡ, Ṽˡ = f_b([zˡ, hˡ])
//! F̃ˡ  = F̃ˡ⁻¹ + MLP_l(softmax_j(⟨Q̃_i, K̃_j⟩/√d · β_ij) · Ṽ)
//! ```
//!
//! `z⁰` is drawn from the prior on `h⁰` in both passes, so it carries no label
//! information and contributes no KL term. The label head maps `F̃ᴸ` to the
//! mean of a unit-variance Gaussian over the 0/1 inlier label.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{input_matrix, InputMode, VBNetConfig};
use crate::error::{Error, Result};
use crate::geometry::{CompatibilityMatrix, CorrespondenceSet};
use crate::numerics::gaussian::{kl_on_tape, log_likelihood_on_tape, sample_on_tape};
use crate::numerics::tape::sigmoid;
use crate::numerics::{DiagGaussian, GruCell, Linear, Matrix, Mlp, ParamStore, Tape, Var};

pub const BRANCHES: [&str; 3] = ["q", "k", "v"];

/// Two-layer network emitting a mean and a log standard deviation.
#[derive(Debug, Clone)]
struct Encoder {
    trunk: Linear,
    mean: Linear,
    log_std: Linear,
}

impl Encoder {
    fn new(prefix: &str, in_dim: usize, hidden: usize, out: usize) -> Self {
        Self {
            trunk: Linear::new(&format!("{prefix}.trunk"), in_dim, hidden, true),
            mean: Linear::new(&format!("{prefix}.mean"), hidden, out, true),
            log_std: Linear::new(&format!("{prefix}.log_std"), hidden, out, true),
        }
    }

    fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        self.trunk.init(store, rng);
        self.mean.init(store, rng);
        self.log_std.init(store, rng);
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<(Var, Var)> {
        let h = self.trunk.forward(tape, store, x)?;
        let h = tape.relu(h);
        Ok((self.mean.forward(tape, store, h)?, self.log_std.forward(tape, store, h)?))
    }
}

#[derive(Debug, Clone)]
struct Branch {
    gru: GruCell,
    prior: Encoder,
    posterior: Encoder,
    proj: Mlp,
}

/// Layer layout of the network. Parameter values live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct VBNet {
    cfg: VBNetConfig,
    init: Linear,
    branches: Vec<Branch>,
    agg: Vec<Mlp>,
    label: Mlp,
}

/// Per-correspondence diagonal Gaussians, one row per correspondence.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianField {
    pub mean: Matrix,
    pub log_std: Matrix,
}

impl GaussianField {
    pub fn at(&self, i: usize) -> DiagGaussian {
        DiagGaussian {
            mean: self.mean.row(i).to_vec(),
            log_std: self.log_std.row(i).to_vec(),
        }
    }
}

/// Everything computed by one forward pass. Per-iteration entries are
/// indexed `0 … L−1` for iterations `1 … L`; `features` also holds `F̃⁰`.
#[derive(Debug, Clone, PartialEq)]
pub struct VBNetState {
    pub hidden: Vec<[Matrix; 3]>,
    pub latents: Vec<[Matrix; 3]>,
    pub features: Vec<Matrix>,
    pub priors: Vec<[GaussianField; 3]>,
    pub posteriors: Option<Vec<[GaussianField; 3]>>,
    pub label_means: Vec<f64>,
}

impl VBNetState {
    /// Inlier confidence `logistic(label mean)` per correspondence.
    pub fn confidences(&self) -> Vec<f64> {
        self.label_means.iter().map(|&m| sigmoid(m)).collect()
    }

    pub fn final_features(&self) -> &Matrix {
        self.features.last().expect("features always hold F̃⁰")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElboBreakdown {
    pub log_likelihood_term: f64,
    /// One entry per iteration, summed over branches and correspondences.
    pub kl_terms: Vec<f64>,
    pub total: f64,
}

impl ElboBreakdown {
    fn new(log_likelihood_term: f64, kl_terms: Vec<f64>) -> Self {
        let total = log_likelihood_term - kl_terms.iter().sum::<f64>();
        Self {
            log_likelihood_term,
            kl_terms,
            total,
        }
    }

    pub fn kl_total(&self) -> f64 {
        self.kl_terms.iter().sum()
    }
}

/// Standard-normal draws for every latent: index 0 is `z⁰`, then one entry
/// per iteration, each holding the q, k and v matrices (N×d̃).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentNoise {
    pub draws: Vec<[Matrix; 3]>,
}

impl LatentNoise {
    pub fn draw(seed: u64, cfg: &VBNetConfig, n: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut one = || {
            Matrix::from_fn(n, cfg.latent_dim, |_, _| StandardNormal.sample(&mut rng))
        };
        let draws = (0..=cfg.iterations).map(|_| [one(), one(), one()]).collect();
        Self { draws }
    }

    pub fn zeros(cfg: &VBNetConfig, n: usize) -> Self {
        let z = || Matrix::zeros(n, cfg.latent_dim);
        Self {
            draws: (0..=cfg.iterations).map(|_| [z(), z(), z()]).collect(),
        }
    }

    /// Row `i` of the result is row `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let p = |m: &Matrix| Matrix::from_fn(perm.len(), m.cols(), |i, j| m.get(perm[i], j));
        Self {
            draws: self.draws.iter().map(|[a, b, c]| [p(a), p(b), p(c)]).collect(),
        }
    }
}

/// Tape handles of one forward pass.
pub(crate) struct Trace {
    pub features: Vec<Var>,
    pub hidden: Vec<[Var; 3]>,
    pub latents: Vec<[Var; 3]>,
    pub priors: Vec<[(Var, Var); 3]>,
    pub posteriors: Vec<[(Var, Var); 3]>,
    pub label_mean: Var,
    pub kl_terms: Vec<Var>,
    pub log_likelihood: Option<Var>,
}

impl Trace {
    /// `−ELBO / N` as a 1×1 node; requires a posterior pass.
    pub fn neg_elbo_per_correspondence(&self, tape: &mut Tape, n: usize) -> Result<Var> {
        let ll = self
            .log_likelihood
            .ok_or_else(|| Error::InvalidInput("the ELBO needs a labelled pass".into()))?;
        let mut loss = tape.scale(ll, -1.0);
        for &kl in &self.kl_terms {
            loss = tape.add(loss, kl)?;
        }
        Ok(tape.scale(loss, 1.0 / n.max(1) as f64))
    }

    fn breakdown(&self, tape: &Tape) -> Option<ElboBreakdown> {
        let ll = tape.scalar(self.log_likelihood?);
        let kl = self.kl_terms.iter().map(|&v| tape.scalar(v)).collect();
        Some(ElboBreakdown::new(ll, kl))
    }

    fn state(&self, tape: &Tape) -> VBNetState {
        let val = |v: Var| tape.value(v).clone();
        let triple = |t: &[Var; 3]| [val(t[0]), val(t[1]), val(t[2])];
        let field = |&(m, s): &(Var, Var)| GaussianField {
            mean: val(m),
            log_std: val(s),
        };
        let fields = |t: &[(Var, Var); 3]| [field(&t[0]), field(&t[1]), field(&t[2])];
        VBNetState {
            hidden: self.hidden.iter().map(triple).collect(),
            latents: self.latents.iter().map(triple).collect(),
            features: self.features.iter().map(|&v| val(v)).collect(),
            priors: self.priors.iter().map(fields).collect(),
            posteriors: (!self.posteriors.is_empty())
                .then(|| self.posteriors.iter().map(fields).collect()),
            label_means: tape.value(self.label_mean).data().to_vec(),
        }
    }
}

impl VBNet {
    pub fn new(cfg: VBNetConfig) -> Result<Self> {
        cfg.validate()?;
        let (d, dt, dp, k) = (cfg.feature_dim, cfg.latent_dim, cfg.hidden_dim, cfg.label_tile_k);
        let branches = BRANCHES
            .iter()
            .map(|b| Branch {
                gru: GruCell::new(&format!("gru.{b}"), dt + d, dp),
                prior: Encoder::new(&format!("prior.{b}"), dp, dp, dt),
                posterior: Encoder::new(&format!("post.{b}"), dp + k, dp, dt),
                proj: Mlp::new(&format!("proj.{b}"), &[dt + dp, d, d]),
            })
            .collect();
        Ok(Self {
            cfg,
            init: Linear::new("init", cfg.input_mode.input_dim(), d, false),
            branches,
            agg: (0..cfg.iterations)
                .map(|l| Mlp::new(&format!("agg.{l}"), &[d, d, d]))
                .collect(),
            label: Mlp::new("label", &[d, d, 1]),
        })
    }

    pub fn config(&self) -> &VBNetConfig {
        &self.cfg
    }

    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        self.init.init(&mut store, &mut rng);
        for b in &self.branches {
            b.gru.init(&mut store, &mut rng);
            b.prior.init(&mut store, &mut rng);
            b.posterior.init(&mut store, &mut rng);
            b.proj.init(&mut store, &mut rng);
        }
        for m in &self.agg {
            m.init(&mut store, &mut rng);
        }
        self.label.init(&mut store, &mut rng);
        store
    }

    /// Recovers the layout from parameter shapes, as stored in a checkpoint.
    pub fn from_params(store: &ParamStore) -> Result<Self> {
        let shape = |name: &str| {
            store
                .get(name)
                .map(Matrix::shape)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
        };
        let (input, d) = shape("init.w")?;
        let (dp, dt) = shape("prior.q.mean.w")?;
        let (post_in, _) = shape("post.q.trunk.w")?;
        let iterations = store
            .names()
            .filter(|n| n.starts_with("agg.") && n.ends_with(".0.w"))
            .count();
        if input < 6 || post_in <= dp {
            return Err(Error::Checkpoint("inconsistent parameter shapes".into()));
        }
        let cfg = VBNetConfig {
            iterations,
            feature_dim: d,
            latent_dim: dt,
            hidden_dim: dp,
            input_mode: if input == 6 {
                InputMode::Coordinates
            } else {
                InputMode::WithDescriptors(input - 6)
            },
            label_tile_k: post_in - dp,
        };
        let net = VBNet::new(cfg).map_err(|e| Error::Checkpoint(e.to_string()))?;
        net.check_params(store)?;
        Ok(net)
    }

    /// Every expected parameter is present with the expected shape.
    pub fn check_params(&self, store: &ParamStore) -> Result<()> {
        let reference = self.init_params(0);
        for (name, m) in reference.iter() {
            match store.get(name) {
                Some(p) if p.shape() == m.shape() => {}
                Some(p) => {
                    return Err(Error::Checkpoint(format!(
                        "`{name}` is {:?}, expected {:?}",
                        p.shape(),
                        m.shape()
                    )))
                }
                None => return Err(Error::Checkpoint(format!("missing parameter `{name}`"))),
            }
        }
        if store.len() != reference.len() {
            return Err(Error::Checkpoint(format!(
                "{} parameters, expected {}",
                store.len(),
                reference.len()
            )));
        }
        Ok(())
    }

    /// Records the labelled pass on `tape` and returns `−ELBO/N`.
    pub fn loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        set: &CorrespondenceSet,
        beta: &CompatibilityMatrix,
        labels: &[bool],
        noise: &LatentNoise,
    ) -> Result<Var> {
        let trace = self.trace(tape, store, set, beta, Some(labels), noise)?;
        trace.neg_elbo_per_correspondence(tape, set.len())
    }

    pub(crate) fn trace(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        set: &CorrespondenceSet,
        beta: &CompatibilityMatrix,
        labels: Option<&[bool]>,
        noise: &LatentNoise,
    ) -> Result<Trace> {
        let cfg = &self.cfg;
        let n = set.len();
        if beta.size() != n {
            return Err(Error::shape(
                "vbnet",
                format!("compatibility is {0}x{0} for {n} correspondences", beta.size()),
            ));
        }
        if let Some(l) = labels {
            if l.len() != n {
                return Err(Error::InvalidInput(format!("{} labels for {n} correspondences", l.len())));
            }
        }
        let noise_ok = noise.draws.len() == cfg.iterations + 1
            && noise
                .draws
                .iter()
                .flatten()
                .all(|m| m.shape() == (n, cfg.latent_dim));
        if !noise_ok {
            return Err(Error::shape("vbnet", "latent noise does not match the network"));
        }

        let x = tape.constant(input_matrix(set, cfg.input_mode)?);
        let gate = tape.constant(Matrix::from_vec(n, n, beta.values().to_vec())?);
        let tiled = labels.map(|l| {
            let k = cfg.label_tile_k;
            tape.constant(Matrix::from_fn(n, k, |i, _| if l[i] { 1.0 } else { 0.0 }))
        });
        let scale = 1.0 / (cfg.feature_dim as f64).sqrt();

        let mut f = self.init.forward(tape, store, x)?;
        let mut trace = Trace {
            features: vec![f],
            hidden: Vec::new(),
            latents: Vec::new(),
            priors: Vec::new(),
            posteriors: Vec::new(),
            label_mean: f,
            kl_terms: Vec::new(),
            log_likelihood: None,
        };

        let zero_h = tape.constant(Matrix::zeros(n, cfg.hidden_dim));
        let mut h = [zero_h; 3];
        let mut z = [zero_h; 3];
        for (b, br) in self.branches.iter().enumerate() {
            let (m, s) = br.prior.forward(tape, store, h[b])?;
            let eta = tape.constant(noise.draws[0][b].clone());
            z[b] = sample_on_tape(tape, m, s, eta)?;
        }

        for l in 1..=cfg.iterations {
            let mut proj = [f; 3];
            let mut priors = [(f, f); 3];
            let mut posts = [(f, f); 3];
            let mut kl_sum: Option<Var> = None;
            for (b, br) in self.branches.iter().enumerate() {
                let input = tape.concat_cols(&[z[b], f])?;
                h[b] = br.gru.forward(tape, store, h[b], input)?;
                let (pm, ps) = br.prior.forward(tape, store, h[b])?;
                priors[b] = (pm, ps);
                let eta = tape.constant(noise.draws[l][b].clone());
                z[b] = match tiled {
                    Some(t) => {
                        let hb = tape.concat_cols(&[h[b], t])?;
                        let (qm, qs) = br.posterior.forward(tape, store, hb)?;
                        posts[b] = (qm, qs);
                        let kl = kl_on_tape(tape, qm, qs, pm, ps)?;
                        kl_sum = Some(match kl_sum {
                            Some(acc) => tape.add(acc, kl)?,
                            None => kl,
                        });
                        sample_on_tape(tape, qm, qs, eta)?
                    }
                    None => sample_on_tape(tape, pm, ps, eta)?,
                };
                let zh = tape.concat_cols(&[z[b], h[b]])?;
                proj[b] = br.proj.forward(tape, store, zh)?;
            }
            let att = tape.gated_attention(proj[0], proj[1], gate, scale)?;
            let msg = tape.matmul(att, proj[2])?;
            let upd = self.agg[l - 1].forward(tape, store, msg)?;
            f = tape.add(f, upd)?;

            trace.features.push(f);
            trace.hidden.push(h);
            trace.latents.push(z);
            trace.priors.push(priors);
            if let Some(kl) = kl_sum {
                trace.posteriors.push(posts);
                trace.kl_terms.push(kl);
            }
        }

        trace.label_mean = self.label.forward(tape, store, f)?;
        if let Some(l) = labels {
            let b = tape.constant(Matrix::from_fn(n, 1, |i, _| if l[i] { 1.0 } else { 0.0 }));
            trace.log_likelihood = Some(log_likelihood_on_tape(tape, b, trace.label_mean)?);
        }
        Ok(trace)
    }

    /// Runs one pass with explicit noise. With `labels`, latents come from the
    /// posterior encoder and the ELBO is reported.
    pub fn forward(
        &self,
        store: &ParamStore,
        set: &CorrespondenceSet,
        beta: &CompatibilityMatrix,
        labels: Option<&[bool]>,
        noise: &LatentNoise,
    ) -> Result<(VBNetState, Option<ElboBreakdown>)> {
        let mut tape = Tape::new();
        let trace = self.trace(&mut tape, store, set, beta, labels, noise)?;
        tape.validate()?;
        let elbo = trace.breakdown(&tape);
        if let Some(e) = &elbo {
            debug_assert_eq!(e.total, e.log_likelihood_term - e.kl_terms.iter().sum::<f64>());
        }
        Ok((trace.state(&tape), elbo))
    }
}

/// Linear projection of the per-correspondence inputs to `d` features.
pub fn init_features(set: &CorrespondenceSet, net: &VBNet, store: &ParamStore) -> Result<Matrix> {
    let x = input_matrix(set, net.cfg.input_mode)?;
    let w = store
        .get(net.init.weight_name())
        .ok_or_else(|| Error::InvalidInput("missing parameter `init.w`".into()))?;
    x.matmul(w)
}

/// Inference pass through the prior path.
pub fn vb_forward_prior(
    set: &CorrespondenceSet,
    beta: &CompatibilityMatrix,
    net: &VBNet,
    store: &ParamStore,
    seed: u64,
) -> Result<VBNetState> {
    let noise = LatentNoise::draw(seed, &net.cfg, set.len());
    Ok(net.forward(store, set, beta, None, &noise)?.0)
}

/// Training pass through the label-dependent posterior path.
pub fn vb_forward_posterior(
    set: &CorrespondenceSet,
    labels: &[bool],
    beta: &CompatibilityMatrix,
    net: &VBNet,
    store: &ParamStore,
    seed: u64,
) -> Result<(VBNetState, ElboBreakdown)> {
    let noise = LatentNoise::draw(seed, &net.cfg, set.len());
    let (state, elbo) = net.forward(store, set, beta, Some(labels), &noise)?;
    Ok((state, elbo.expect("labelled pass reports the ELBO")))
}

/// Per-iteration features `F̃¹ … F̃ᴸ`, used as voters.
pub fn extract_voter_features(state: &VBNetState) -> Vec<Matrix> {
    state.features[1..].to_vec()
}
