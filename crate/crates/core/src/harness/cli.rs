use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::bench::{bench, bench_csv, bench_scenes, Method, Model};
use super::config::RunConfig;
use super::diag::{diag_ambiguity_ratio, diag_feature_similarity};
use super::io::{format_correspondences, format_transform, parse_transform, read_correspondences, CorrFile};
use super::synth::generate_scene;
use crate::error::{Error, Result};
use crate::estimation::{ransac_register, register, spectral_matching_register, ConfidenceSource};
use crate::geometry::{geometric_compatibility, CorrespondenceSet};
use crate::nonlocal::{train, vb_forward_prior, VBNet};
use crate::numerics::checkpoint;
use crate::theory::grid_csv;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "vbreg", version, about = "Robust rigid registration from putative 3D correspondences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path (stdout when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Inlier threshold ε.
    #[arg(long, global = true)]
    eps: Option<f64>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum MethodArg {
    Vbreg,
    Ransac,
    Sm,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic labelled scene; the ground truth goes to `<out>.gt`.
    Synth {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        inlier_ratio: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the network on a directory of labelled `.corr` files.
    Train {
        dataset: PathBuf,
        /// Directory of labelled validation scenes.
        #[arg(long)]
        val: Option<PathBuf>,
        /// Training-curve CSV (defaults to `<out>.curve.csv`).
        #[arg(long)]
        curve: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Register one correspondence file and print the report as JSON.
    Register {
        corr: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "vbreg")]
        method: MethodArg,
        /// Ground-truth transform file for RE/TE.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Include per-stage timings.
        #[arg(long)]
        timings: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Registration recall of every method on seeded synthetic scenes.
    Bench {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Include mean wall-clock seconds.
        #[arg(long)]
        timings: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Closed forms and simulation of the voting-versus-RANSAC bound.
    Theorem1 {
        #[arg(long)]
        trials: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Compatibility-ambiguity and feature-similarity diagnostics.
    Diag {
        corr: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Degenerate(_) | Error::NonFinite(_) | Error::MissingGradient(_) => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(e) = common.eps {
        cfg.epsilon = Some(e);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, content)?,
        None => std::io::stdout().write_all(content.as_bytes())?,
    }
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_model(path: &Path) -> Result<(VBNet, crate::numerics::ParamStore)> {
    let params = checkpoint::load(path)?;
    let net = VBNet::from_params(&params)?;
    Ok((net, params))
}

fn load_set(path: &Path, cfg: &RunConfig) -> Result<CorrespondenceSet> {
    read_correspondences(path)?.into_set(cfg.epsilon)
}

fn load_dir(dir: &Path, cfg: &RunConfig) -> Result<Vec<CorrespondenceSet>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "corr"));
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidInput(format!("no .corr files in {}", dir.display())));
    }
    files.iter().map(|p| load_set(p, cfg)).collect()
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth { n, inlier_ratio, common } => {
            let cfg = load_config(&common)?;
            let mut synth = cfg.synth_config(cfg.seed);
            if let Some(n) = n {
                synth.n = n;
            }
            if let Some(r) = inlier_ratio {
                synth.inlier_ratio = r;
            }
            let scene = generate_scene(&synth).map_err(|e| match e {
                Error::Config(_) => e,
                other => Error::Config(other.to_string()),
            })?;
            let set = &scene.set;
            let text = format_correspondences(&set.items, set.labels.as_deref(), Some(set.epsilon));
            emit(common.out.as_deref(), &text)?;
            if let Some(out) = &common.out {
                std::fs::write(with_suffix(out, ".gt"), format_transform(&scene.ground_truth))?;
            }
            Ok(())
        }
        Command::Train {
            dataset,
            val,
            curve,
            common,
        } => {
            let cfg = load_config(&common)?;
            let out = common
                .out
                .clone()
                .ok_or_else(|| Error::Config("train needs --out for the checkpoint".into()))?;
            let data = load_dir(&dataset, &cfg)?;
            let validation = match &val {
                Some(v) => load_dir(v, &cfg)?,
                None => Vec::new(),
            };
            let net = VBNet::new(cfg.net)?;
            let outcome = train(&net, &data, &validation, &cfg.train_config())?;
            checkpoint::save(&outcome.params, &out)?;
            let curve_path = curve.unwrap_or_else(|| with_suffix(&out, ".curve.csv"));
            std::fs::write(curve_path, outcome.curve_csv())?;
            Ok(())
        }
        Command::Register {
            corr,
            checkpoint: ckpt,
            method,
            gt,
            timings,
            common,
        } => {
            let cfg = load_config(&common)?;
            let set = load_set(&corr, &cfg)?;
            let report = match method {
                MethodArg::Vbreg => {
                    let path = ckpt.ok_or_else(|| Error::Config("--method vbreg needs --checkpoint".into()))?;
                    let (net, params) = load_model(&path)?;
                    register(&set, ConfidenceSource::Model { net: &net, params: &params }, &cfg.pipeline())?
                }
                MethodArg::Ransac => ransac_register(&set, &cfg.ransac())?,
                MethodArg::Sm => {
                    spectral_matching_register(&set, &geometric_compatibility(&set), cfg.sm_top_k, cfg.refine_rounds)?
                }
            };
            let report = match &gt {
                Some(p) => report.with_ground_truth(&parse_transform(&std::fs::read_to_string(p)?)?),
                None => report,
            };
            emit(common.out.as_deref(), &report.to_json(timings))
        }
        Command::Bench {
            checkpoint: ckpt,
            timings,
            common,
        } => {
            let cfg = load_config(&common)?;
            let loaded = ckpt.as_deref().map(load_model).transpose()?;
            let model = loaded.as_ref().map(|(net, params)| Model { net, params });
            let groups = cfg
                .bench_inlier_ratios
                .iter()
                .map(|&r| Ok((r, bench_scenes(&cfg, r)?)))
                .collect::<Result<Vec<_>>>()?;
            let rows = bench(&groups, &[Method::Pipeline, Method::Ransac, Method::SpectralMatching], model, &cfg);
            emit(common.out.as_deref(), &bench_csv(&rows, timings))
        }
        Command::Theorem1 { trials, common } => {
            let mut cfg = load_config(&common)?;
            if let Some(t) = trials {
                if t == 0 {
                    return Err(Error::Config("--trials must be at least 1".into()));
                }
                cfg.theorem.trials = t;
            }
            let cells = cfg.theorem_grid().run()?;
            emit(common.out.as_deref(), &grid_csv(&cells))
        }
        Command::Diag {
            corr,
            checkpoint: ckpt,
            common,
        } => {
            let cfg = load_config(&common)?;
            let CorrFile { items, labels, epsilon } = read_correspondences(&corr)?;
            let labels = labels.ok_or_else(|| Error::InvalidInput("diagnostics need a labelled file".into()))?;
            let set = CorrFile {
                items,
                labels: Some(labels.clone()),
                epsilon,
            }
            .into_set(cfg.epsilon)?;
            let beta = geometric_compatibility(&set);
            let ratio = diag_ambiguity_ratio(&labels, &beta)?;
            let ambiguity = format!("metric,value\nambiguity_ratio,{}\n", ratio.map_or(String::new(), |r| r.to_string()));
            let similarity = match &ckpt {
                Some(p) => {
                    let (net, params) = load_model(p)?;
                    let state = vb_forward_prior(&set, &beta, &net, &params, cfg.seed)?;
                    diag_feature_similarity(state.final_features(), &labels)?.map(|h| h.to_csv())
                }
                None => None,
            };
            match &common.out {
                Some(dir) => {
                    std::fs::create_dir_all(dir)?;
                    std::fs::write(dir.join("ambiguity.csv"), &ambiguity)?;
                    if let Some(s) = &similarity {
                        std::fs::write(dir.join("feature_similarity.csv"), s)?;
                    }
                    Ok(())
                }
                None => emit(None, &(ambiguity + similarity.as_deref().map_or("", |s| s))),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_USAGE);
        assert_eq!(exit_code(&Error::Parse { line: 2, msg: "x".into() }), EXIT_DATA);
        assert_eq!(exit_code(&Error::InvalidInput("x".into())), EXIT_DATA);
        assert_eq!(exit_code(&Error::Degenerate("x".into())), EXIT_NUMERICAL);
        assert_eq!(exit_code(&Error::NonFinite("x".into())), EXIT_NUMERICAL);
    }

    #[test]
    fn usage_errors() {
        assert_eq!(run(["vbreg"]), EXIT_USAGE);
        assert_eq!(run(["vbreg", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["vbreg", "synth", "--seed", "x"]), EXIT_USAGE);
        assert_eq!(run(["vbreg", "--help"]), EXIT_OK);
    }
}
