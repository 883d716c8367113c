//! Unsupervised camera re-localization and depth estimation engine.
//!
//! The crate implements the full differentiable pipeline: per-pixel camera
//! pose recovery from directed scene coordinates plus depth, loop-closed view
//! synthesis with photometric/smoothness/pose-coordinate losses, a
//! reverse-mode tape with Adam for fitting per-frame parameter grids directly,
//! an analytic planar-scene renderer for ground-truthed experiments, and the
//! Sim(3)-aligned trajectory / median-scaled depth evaluation stack.
//!
//! The `dscreloc` binary ties these together into `gen-scene`, `fit`,
//! `eval-pose`, `eval-depth`, and `grad-check` subcommands.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod fit;
pub mod geometry;
pub mod grad_suite;
pub mod losses;
pub mod scalar;
pub mod synthetic;
pub mod view_synthesis;
