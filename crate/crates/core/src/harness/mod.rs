//! Synthetic scenes, file formats, configuration, diagnostics, benchmarking
//! and the command-line front end.

pub mod bench;
pub mod cli;
pub mod config;
pub mod diag;
pub mod io;
pub mod synth;

pub use bench::{bench, bench_csv, bench_scenes, run_method, BenchRow, Method, Model};
pub use config::RunConfig;
pub use diag::{diag_ambiguity_ratio, diag_feature_similarity, SimilarityHistogram, SIMILARITY_BINS};
pub use io::{
    format_correspondences, format_transform, parse_correspondences, parse_transform, read_correspondences,
    write_correspondences, CorrFile,
};
pub use synth::{generate_scene, random_rotation, Scene, SynthConfig};
