//! Direct fitting of per-frame parameter grids (depth logits and directed
//! scene coordinates) against the loop-closed view-synthesis loss.
//!
//! Each frame owns a full-resolution depth-logit grid and a subsampled
//! 6-channel directed-scene-coordinate grid. Fitting samples a loop set per
//! step, evaluates the total loss over every ordered frame pair on the tape,
//! and applies one Adam update.

use std::cell::Cell;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{
    adam_step, evaluate_with_gradient_in, AdError, AdamConfig, AdamState, EvalError,
    LossFunction, ParamStore, Workspace,
};
use crate::geometry::{
    axis_angle_to_matrix, back_project, directed_coord_for_pose, log_rotation,
    matrix_to_axis_angle, mean_pose, pose_from_pixel, ray_rotation, relative_transform,
    AggregateMode, AxisAngle, GeometryError, Intrinsics, Pose, RotationMatrix, Vec3,
};
use crate::losses::{
    lcvs_pairs, photometric_loss, pose_coordinate_loss, smoothness_loss, total_loss,
    FramePair, LossError, LossWeights,
};
use crate::scalar::Real;
use crate::view_synthesis::{synthesize, DepthMap, ImageBuffer};

#[derive(Debug, Error)]
pub enum FitError {
    #[error("need at least {want} frames, dataset has {got}")]
    NotEnoughFrames { want: usize, got: usize },
    #[error("frame {index} has dimensions {got:?}, expected {want:?}")]
    MismatchedDims {
        index: usize,
        want: (usize, usize),
        got: (usize, usize),
    },
    #[error("nearby window {window} cannot supply {needed} distinct companions")]
    WindowTooSmall { window: usize, needed: usize },
    #[error("loop size must be at least 2, got {0}")]
    LoopTooSmall(usize),
    #[error(
        "non-finite loss at step {step} while synthesizing frame {target_frame} from frame {source_frame}"
    )]
    NonFiniteLoss {
        step: usize,
        target_frame: usize,
        source_frame: usize,
    },
    #[error("every pair of the sampled loop set was degenerate at step {step}")]
    AllPairsDegenerate { step: usize },
    #[error("pose prediction failed: {0}")]
    Predict(String),
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Monotone map from an unconstrained logit to a bounded depth:
/// D = 1/(a·σ(logit) + b) with a, b solved so σ = 1 gives `min_depth`
/// and σ = 0 gives `max_depth`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SigmoidDepthMapping {
    pub min_depth: f64,
    pub max_depth: f64,
    pub a: f64,
    pub b: f64,
}

impl Default for SigmoidDepthMapping {
    fn default() -> Self {
        Self::new(0.1, 100.0)
    }
}

impl SigmoidDepthMapping {
    pub fn new(min_depth: f64, max_depth: f64) -> Self {
        assert!(min_depth > 0.0 && max_depth > min_depth);
        let b = 1.0 / max_depth;
        let a = 1.0 / min_depth - b;
        SigmoidDepthMapping {
            min_depth,
            max_depth,
            a,
            b,
        }
    }

    pub fn depth<S: Real>(&self, logit: S) -> S {
        S::c(1.0) / logit.sigmoid().mul_add_c(self.a, self.b)
    }

    /// Logit whose mapped depth is `d` (clamped inside the open range).
    pub fn logit_for_depth(&self, d: f64) -> f64 {
        let d = d.clamp(self.min_depth * (1.0 + 1e-12), self.max_depth * (1.0 - 1e-12));
        let sigma = ((1.0 / d - self.b) / self.a).clamp(1e-15, 1.0 - 1e-15);
        (sigma / (1.0 - sigma)).ln()
    }
}

/// Shapes of the per-frame parameter grids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridLayout {
    pub n_frames: usize,
    pub width: usize,
    pub height: usize,
    pub grid_w: usize,
    pub grid_h: usize,
    pub pool_factor: usize,
}

impl GridLayout {
    pub fn new(n_frames: usize, width: usize, height: usize, pool_factor: usize) -> Self {
        assert!(pool_factor >= 1 && width > 0 && height > 0);
        GridLayout {
            n_frames,
            width,
            height,
            grid_w: width.div_ceil(pool_factor),
            grid_h: height.div_ceil(pool_factor),
            pool_factor,
        }
    }

    pub fn logits_len(&self) -> usize {
        self.width * self.height
    }

    pub fn dsc_len(&self) -> usize {
        self.grid_w * self.grid_h * 6
    }

    pub fn frame_len(&self) -> usize {
        self.logits_len() + self.dsc_len()
    }

    pub fn total_len(&self) -> usize {
        self.n_frames * self.frame_len()
    }

    pub fn logits_range(&self, frame: usize) -> std::ops::Range<usize> {
        let start = frame * self.frame_len();
        start..start + self.logits_len()
    }

    pub fn dsc_range(&self, frame: usize) -> std::ops::Range<usize> {
        let start = frame * self.frame_len() + self.logits_len();
        start..start + self.dsc_len()
    }

    /// Full-resolution pixel coordinate of a grid cell center.
    pub fn cell_center(&self, gx: usize, gy: usize) -> (f64, f64) {
        let half = (self.pool_factor - 1) as f64 / 2.0;
        (
            (gx * self.pool_factor) as f64 + half,
            (gy * self.pool_factor) as f64 + half,
        )
    }
}

/// Fitting hyperparameters. The documented defaults mirror the full-scale
/// training recipe; desk-scale runs usually override the learning rate,
/// epoch count, and pooling factor (see the acceptance configuration).
#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub learning_rate: f64,
    /// Learning rate reached at the final epoch through geometric decay;
    /// equal to `learning_rate` for a constant schedule. Direct grid fits
    /// need annealing to shrink the stochastic noise ball that network
    /// training absorbs in its parameter averaging.
    pub learning_rate_final: f64,
    /// One epoch is `n_frames` sampled loop sets.
    pub epochs: usize,
    /// Companions are sampled within this many frames of the target.
    pub nearby_window: usize,
    /// Probability of drawing a companion from the whole sequence once the
    /// activation epoch is reached.
    pub distant_fraction: f64,
    pub distant_activation_epoch: usize,
    /// Loop set size K; every step evaluates K(K−1) synthesis pairs.
    pub loop_size: usize,
    pub weights: LossWeights,
    pub pool_factor: usize,
    pub depth_range: (f64, f64),
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            learning_rate: 1e-4,
            learning_rate_final: 1e-4,
            epochs: 300,
            nearby_window: 20,
            distant_fraction: 0.5,
            distant_activation_epoch: 200,
            loop_size: 3,
            weights: LossWeights::default(),
            pool_factor: 32,
            depth_range: (0.1, 100.0),
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn mapping(&self) -> SigmoidDepthMapping {
        SigmoidDepthMapping::new(self.depth_range.0, self.depth_range.1)
    }

    /// Geometric interpolation between the initial and final learning rate.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 || self.learning_rate_final == self.learning_rate {
            return self.learning_rate;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.learning_rate * (self.learning_rate_final / self.learning_rate).powf(t)
    }

    pub fn validate(&self, n_frames: usize) -> Result<(), FitError> {
        if self.loop_size < 2 {
            return Err(FitError::LoopTooSmall(self.loop_size));
        }
        if n_frames < self.loop_size {
            return Err(FitError::NotEnoughFrames {
                want: self.loop_size,
                got: n_frames,
            });
        }
        if self.nearby_window < self.loop_size - 1 {
            return Err(FitError::WindowTooSmall {
                window: self.nearby_window,
                needed: self.loop_size - 1,
            });
        }
        Ok(())
    }
}

/// Map a frame's logit slice to its full-resolution depth map.
pub fn depth_from_logits<S: Real>(
    logits: &[S],
    width: usize,
    height: usize,
    mapping: &SigmoidDepthMapping,
) -> DepthMap<S> {
    assert_eq!(logits.len(), width * height);
    DepthMap::from_data(
        width,
        height,
        logits.iter().map(|&l| mapping.depth(l)).collect(),
    )
}

/// Non-overlapping block means of the depth map, aligned to the directed
/// scene coordinate grid. Blocks cut off by the image border average over
/// the pixels they actually cover.
pub fn pooled_depth<S: Real>(depth: &DepthMap<S>, factor: usize) -> Vec<S> {
    let gw = depth.width().div_ceil(factor);
    let gh = depth.height().div_ceil(factor);
    let mut out = Vec::with_capacity(gw * gh);
    let mut block: Vec<S> = Vec::with_capacity(factor * factor);
    for gy in 0..gh {
        for gx in 0..gw {
            block.clear();
            let x1 = ((gx + 1) * factor).min(depth.width());
            let y1 = ((gy + 1) * factor).min(depth.height());
            for y in gy * factor..y1 {
                for x in gx * factor..x1 {
                    block.push(depth.get(x, y));
                }
            }
            out.push(S::sum_slice(&block).mul_add_c(1.0 / block.len() as f64, 0.0));
        }
    }
    out
}

/// Per-cell camera poses recovered from one frame's parameter grids.
pub fn predict_pixel_poses<S: Real>(
    logits: &[S],
    dsc: &[S],
    layout: &GridLayout,
    mapping: &SigmoidDepthMapping,
    k: &Intrinsics,
) -> Result<Vec<Pose<S>>, EvalError> {
    let depth = depth_from_logits(logits, layout.width, layout.height, mapping);
    let pooled = pooled_depth(&depth, layout.pool_factor);
    let mut poses = Vec::with_capacity(layout.grid_w * layout.grid_h);
    for gy in 0..layout.grid_h {
        for gx in 0..layout.grid_w {
            let cell = gy * layout.grid_w + gx;
            let (u, v) = layout.cell_center(gx, gy);
            let q = back_project(S::c(u), S::c(v), pooled[cell], k)?;
            let base = cell * 6;
            let coord: [S; 6] = dsc[base..base + 6].try_into().expect("six channels");
            poses.push(pose_from_pixel(&coord, &q, S::c(u), S::c(v), k));
        }
    }
    Ok(poses)
}

/// Final pose of one frame: per-cell recovery aggregated by mean (training)
/// or median (testing).
pub fn predict_pose(
    params: &ParamStore,
    frame: usize,
    layout: &GridLayout,
    mapping: &SigmoidDepthMapping,
    k: &Intrinsics,
    mode: AggregateMode,
) -> Result<Pose<f64>, FitError> {
    let values = params.values();
    let poses = predict_pixel_poses(
        &values[layout.logits_range(frame)],
        &values[layout.dsc_range(frame)],
        layout,
        mapping,
        k,
    )
    .map_err(|e| FitError::Predict(e.to_string()))?;
    Ok(crate::geometry::aggregate_pose(&poses, mode)?)
}

/// Fitted parameters plus optimization statistics.
#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub params: ParamStore,
    pub layout: GridLayout,
    /// Total loss after each optimizer step.
    pub loss_history: Vec<f64>,
    /// Synthesis pairs evaluated (non-degenerate) over the whole run.
    pub pairs_evaluated: usize,
    /// Pairs skipped for an empty valid set.
    pub degenerate_pairs: usize,
}

/// Fresh parameter store for `layout`: depth logits at zero (mid-range
/// depth), gaze channels at each cell's pixel-ray rotation so every cell
/// initially reports the identity camera attitude, and small zero-mean noise
/// on the scene-position channels to break the gauge symmetry.
pub fn init_params(layout: &GridLayout, k: &Intrinsics, seed: u64) -> ParamStore {
    // Box-Muller on a dedicated stream keeps initialization bit-reproducible.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = move || -> f64 {
        let u1: f64 = rng.random_range(f64::EPSILON..1.0);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    let mut gaze_init = vec![0.0; layout.dsc_len()];
    for gy in 0..layout.grid_h {
        for gx in 0..layout.grid_w {
            let (u, v) = layout.cell_center(gx, gy);
            let aa = matrix_to_axis_angle(&ray_rotation(u, v, k));
            let base = (gy * layout.grid_w + gx) * 6;
            gaze_init[base..base + 3].copy_from_slice(&aa.0 .0);
        }
    }
    let mut store = ParamStore::new();
    for f in 0..layout.n_frames {
        store.push_slice(format!("frame{f:04}/depth_logits"), layout.logits_len(), |_| 0.0);
        store.push_slice(format!("frame{f:04}/dsc"), layout.dsc_len(), |i| {
            if i % 6 < 3 {
                gaze_init[i]
            } else {
                POSITION_INIT_NOISE * gauss()
            }
        });
    }
    store
}

/// Standard deviation of the scene-position initialization noise.
pub const POSITION_INIT_NOISE: f64 = 0.01;

/// Parameter store encoding the ground truth exactly: logits encode the true
/// depth, and each cell's directed coordinate is the inverse pose encoding at
/// the pooled depth the pipeline will reproduce.
pub fn init_params_from_ground_truth(
    layout: &GridLayout,
    depths: &[DepthMap<f64>],
    poses: &[Pose<f64>],
    mapping: &SigmoidDepthMapping,
    k: &Intrinsics,
) -> ParamStore {
    assert_eq!(depths.len(), layout.n_frames);
    assert_eq!(poses.len(), layout.n_frames);
    let mut store = ParamStore::new();
    for f in 0..layout.n_frames {
        let depth = &depths[f];
        store.push_slice(format!("frame{f:04}/depth_logits"), layout.logits_len(), |i| {
            mapping.logit_for_depth(depth.data()[i])
        });
        // Re-decode through the mapping so the encoded DSC matches the depth
        // the forward pass will actually pool.
        let logits: Vec<f64> = (0..layout.logits_len())
            .map(|i| mapping.logit_for_depth(depth.data()[i]))
            .collect();
        let decoded = depth_from_logits(&logits, layout.width, layout.height, mapping);
        let pooled = pooled_depth(&decoded, layout.pool_factor);
        let mut dsc = vec![0.0; layout.dsc_len()];
        for gy in 0..layout.grid_h {
            for gx in 0..layout.grid_w {
                let cell = gy * layout.grid_w + gx;
                let (u, v) = layout.cell_center(gx, gy);
                let dist = back_project(u, v, pooled[cell], k)
                    .expect("pooled depth is positive")
                    .distance();
                let coord = directed_coord_for_pose(&poses[f], dist, u, v, k);
                dsc[cell * 6..cell * 6 + 6].copy_from_slice(&coord);
            }
        }
        store.push_slice(format!("frame{f:04}/dsc"), layout.dsc_len(), |i| dsc[i]);
    }
    store
}

/// The per-step objective: total loss of one loop set over all ordered pairs.
pub struct LoopSetObjective<'a> {
    pub images: &'a [ImageBuffer<f64>],
    pub set: Vec<usize>,
    pub layout: GridLayout,
    pub mapping: SigmoidDepthMapping,
    pub weights: LossWeights,
    pub intrinsics: Intrinsics,
    degenerate: Cell<usize>,
    evaluated: Cell<usize>,
}

impl<'a> LoopSetObjective<'a> {
    pub fn new(
        images: &'a [ImageBuffer<f64>],
        set: Vec<usize>,
        layout: GridLayout,
        mapping: SigmoidDepthMapping,
        weights: LossWeights,
        intrinsics: Intrinsics,
    ) -> Self {
        LoopSetObjective {
            images,
            set,
            layout,
            mapping,
            weights,
            intrinsics,
            degenerate: Cell::new(0),
            evaluated: Cell::new(0),
        }
    }

    pub fn degenerate_pairs(&self) -> usize {
        self.degenerate.get()
    }

    pub fn evaluated_pairs(&self) -> usize {
        self.evaluated.get()
    }

    /// Identify the first pair producing a non-finite loss, via the plain
    /// scalar path.
    pub fn locate_non_finite(&self, params: &[f64]) -> Option<FramePair> {
        let pairs = lcvs_pairs(&self.set).ok()?;
        for pair in pairs {
            match self.pair_loss_f64(params, pair) {
                Ok(Some(v)) if !v.is_finite() => return Some(pair),
                Err(_) => return Some(pair),
                _ => {}
            }
        }
        None
    }

    fn pair_loss_f64(&self, params: &[f64], pair: FramePair) -> Result<Option<f64>, EvalError> {
        let per_frame = self.per_frame_terms::<f64>(params)?;
        let local: Vec<usize> = self.set.to_vec();
        let t_local = local.iter().position(|&f| f == pair.target).unwrap();
        let s_local = local.iter().position(|&f| f == pair.source).unwrap();
        self.pair_term(params, &per_frame, pair, t_local, s_local)
    }

    #[allow(clippy::type_complexity)]
    fn per_frame_terms<S: Real>(
        &self,
        params: &[S],
    ) -> Result<Vec<(DepthMap<S>, Pose<S>, S, S)>, EvalError> {
        let mut out = Vec::with_capacity(self.set.len());
        for &frame in &self.set {
            let logits = &params[self.layout.logits_range(frame)];
            let dsc = &params[self.layout.dsc_range(frame)];
            let depth =
                depth_from_logits(logits, self.layout.width, self.layout.height, &self.mapping);
            let pixel_poses =
                predict_pixel_poses(logits, dsc, &self.layout, &self.mapping, &self.intrinsics)?;
            let pose = mean_pose(&pixel_poses).map_err(box_err)?;
            let coord_loss = pose_coordinate_loss(&pixel_poses, &pose).map_err(box_err)?;
            let image = self.images[frame].lift::<S>();
            let smooth = smoothness_loss(&depth, &image).map_err(box_err)?;
            out.push((depth, pose, smooth, coord_loss));
        }
        Ok(out)
    }

    fn pair_term<S: Real>(
        &self,
        _params: &[S],
        per_frame: &[(DepthMap<S>, Pose<S>, S, S)],
        pair: FramePair,
        t_local: usize,
        s_local: usize,
    ) -> Result<Option<S>, EvalError> {
        let (ref depth_t, ref pose_t, smooth_t, coord_t) = per_frame[t_local];
        let (_, ref pose_s, _, _) = per_frame[s_local];
        let transform = relative_transform(pose_t, pose_s);
        let source = self.images[pair.source].lift::<S>();
        let (synth, mask) = synthesize(
            &source,
            depth_t,
            &transform,
            &self.intrinsics,
            &self.intrinsics,
        )
        .map_err(box_err)?;
        let target = self.images[pair.target].lift::<S>();
        let photometric = match photometric_loss(&target, &synth, &mask, self.weights.alpha) {
            Ok(l) => l,
            Err(LossError::EmptyValidSet) => return Ok(None),
            Err(e) => return Err(box_err(e)),
        };
        let term =
            total_loss(photometric, smooth_t, coord_t, &self.weights).map_err(box_err)?;
        Ok(Some(term))
    }
}

fn box_err(e: impl std::error::Error + Send + Sync + 'static) -> EvalError {
    Box::new(e)
}

impl LossFunction for LoopSetObjective<'_> {
    fn dim(&self) -> usize {
        self.layout.total_len()
    }

    fn eval<S: Real>(&self, params: &[S]) -> Result<S, EvalError> {
        self.degenerate.set(0);
        self.evaluated.set(0);
        let per_frame = self.per_frame_terms::<S>(params)?;
        let pairs = lcvs_pairs(&self.set).map_err(box_err)?;
        let mut terms: Vec<S> = Vec::with_capacity(pairs.len());
        for pair in pairs {
            let t_local = self.set.iter().position(|&f| f == pair.target).unwrap();
            let s_local = self.set.iter().position(|&f| f == pair.source).unwrap();
            match self.pair_term(params, &per_frame, pair, t_local, s_local)? {
                Some(term) => terms.push(term),
                None => self.degenerate.set(self.degenerate.get() + 1),
            }
        }
        if terms.is_empty() {
            return Err(box_err(LossError::EmptyValidSet));
        }
        self.evaluated.set(terms.len());
        Ok(S::sum_slice(&terms).mul_add_c(1.0 / terms.len() as f64, 0.0))
    }
}

/// Fit per-frame grids to an image sequence from the standard
/// initialization.
pub fn fit(
    images: &[ImageBuffer<f64>],
    k: &Intrinsics,
    config: &FitConfig,
) -> Result<FitOutcome, FitError> {
    fit_from(images, k, config, None)
}

/// Fit starting from caller-provided parameters (warm starts, resumed runs).
pub fn fit_from(
    images: &[ImageBuffer<f64>],
    k: &Intrinsics,
    config: &FitConfig,
    initial: Option<ParamStore>,
) -> Result<FitOutcome, FitError> {
    let n = images.len();
    config.validate(n)?;
    let (w, h) = (images[0].width(), images[0].height());
    for (index, img) in images.iter().enumerate() {
        if (img.width(), img.height()) != (w, h) {
            return Err(FitError::MismatchedDims {
                index,
                want: (w, h),
                got: (img.width(), img.height()),
            });
        }
    }
    let layout = GridLayout::new(n, w, h, config.pool_factor);
    let mapping = config.mapping();
    let mut params = match initial {
        Some(p) => {
            if p.len() != layout.total_len() {
                return Err(FitError::Ad(AdError::DimMismatch {
                    want: layout.total_len(),
                    got: p.len(),
                }));
            }
            p
        }
        None => init_params(&layout, k, config.seed),
    };
    let mut adam = AdamState::new(
        layout.total_len(),
        AdamConfig::with_learning_rate(config.learning_rate),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e3779b97f4a7c15));
    let mut ws = Workspace::default();
    let steps = config.epochs * n;
    let mut loss_history = Vec::with_capacity(steps);
    let mut pairs_evaluated = 0;
    let mut degenerate_pairs = 0;
    for step in 0..steps {
        let epoch = step / n;
        adam.config.learning_rate = config.learning_rate_at(epoch);
        let set = sample_loop_set(&mut rng, n, config, epoch);
        let objective = LoopSetObjective::new(
            images,
            set,
            layout,
            mapping,
            config.weights,
            *k,
        );
        let (loss, grad) = match evaluate_with_gradient_in(&mut ws, &objective, params.values()) {
            Ok(ok) => ok,
            Err(AdError::NonFinite { .. }) | Err(AdError::NonFiniteGradient { .. }) => {
                let pair = objective
                    .locate_non_finite(params.values())
                    .unwrap_or(FramePair {
                        target: objective.set[0],
                        source: objective.set[1 % objective.set.len()],
                    });
                return Err(FitError::NonFiniteLoss {
                    step,
                    target_frame: pair.target,
                    source_frame: pair.source,
                });
            }
            Err(AdError::Eval(e)) if e.to_string().contains("valid set is empty") => {
                return Err(FitError::AllPairsDegenerate { step });
            }
            Err(e) => return Err(e.into()),
        };
        pairs_evaluated += objective.evaluated_pairs();
        degenerate_pairs += objective.degenerate_pairs();
        adam_step(&mut adam, params.values_mut(), &grad)?;
        loss_history.push(loss);
    }
    Ok(FitOutcome {
        params,
        layout,
        loss_history,
        pairs_evaluated,
        degenerate_pairs,
    })
}

/// Sample a loop set: a uniform target plus distinct companions from the
/// nearby window, or from the whole sequence once distant sampling is active.
fn sample_loop_set(
    rng: &mut ChaCha8Rng,
    n: usize,
    config: &FitConfig,
    epoch: usize,
) -> Vec<usize> {
    let target = rng.random_range(0..n);
    let mut set = vec![target];
    while set.len() < config.loop_size {
        let distant = epoch >= config.distant_activation_epoch
            && rng.random::<f64>() < config.distant_fraction;
        let lo = if distant {
            0
        } else {
            target.saturating_sub(config.nearby_window)
        };
        let hi = if distant {
            n - 1
        } else {
            (target + config.nearby_window).min(n - 1)
        };
        let candidates: Vec<usize> = (lo..=hi).filter(|i| !set.contains(i)).collect();
        // The window is validated against the loop size, so this cannot be
        // empty for in-range targets.
        let pick = candidates[rng.random_range(0..candidates.len())];
        set.push(pick);
    }
    set
}

/// Re-encode every frame's grids under a global rigid transform of the scene
/// so each per-cell recovered pose moves by exactly (rotation, translation).
///
/// Relative transforms between frames — and therefore the total loss — are
/// unchanged whenever each frame's cells agree on their pose (the fitted
/// optimum up to noise; exact for ground-truth-consistent grids).
pub fn transform_params_rigid(
    params: &ParamStore,
    layout: &GridLayout,
    mapping: &SigmoidDepthMapping,
    k: &Intrinsics,
    rotation: &RotationMatrix<f64>,
    translation: Vec3<f64>,
) -> ParamStore {
    let mut out = params.clone();
    for f in 0..layout.n_frames {
        let logits = &params.values()[layout.logits_range(f)];
        let depth = depth_from_logits(logits, layout.width, layout.height, mapping);
        let pooled = pooled_depth(&depth, layout.pool_factor);
        let dsc_range = layout.dsc_range(f);
        for gy in 0..layout.grid_h {
            for gx in 0..layout.grid_w {
                let cell = gy * layout.grid_w + gx;
                let (u, v) = layout.cell_center(gx, gy);
                let base = dsc_range.start + cell * 6;
                let coord: [f64; 6] = params.values()[base..base + 6]
                    .try_into()
                    .expect("six channels");
                let gaze = AxisAngle(Vec3([coord[0], coord[1], coord[2]]));
                let tau = Vec3([coord[3], coord[4], coord[5]]);
                let r_gaze = axis_angle_to_matrix(&gaze);
                let r_pixel = ray_rotation(u, v, k);
                let dist = back_project(u, v, pooled[cell], k)
                    .expect("pooled depth is positive")
                    .distance();
                let cell_position = r_gaze.0.col(2).scale(dist) + tau;
                // Conjugated gaze rotation moves the recovered attitude by
                // exactly `rotation`.
                let r_gaze_new = r_pixel
                    .mul(rotation)
                    .mul(&r_pixel.transpose())
                    .mul(&r_gaze);
                let gaze_new = log_rotation(&r_gaze_new);
                let position_new = rotation.apply(cell_position) + translation;
                let tau_new = position_new - r_gaze_new.0.col(2).scale(dist);
                let values = out.values_mut();
                values[base] = gaze_new.0 .0[0];
                values[base + 1] = gaze_new.0 .0[1];
                values[base + 2] = gaze_new.0 .0[2];
                values[base + 3] = tau_new.0[0];
                values[base + 4] = tau_new.0[1];
                values[base + 5] = tau_new.0[2];
            }
        }
    }
    out
}

/// Convenience: per-frame depth maps decoded from a parameter store.
pub fn decoded_depths(
    params: &ParamStore,
    layout: &GridLayout,
    mapping: &SigmoidDepthMapping,
) -> Vec<DepthMap<f64>> {
    (0..layout.n_frames)
        .map(|f| {
            depth_from_logits(
                &params.values()[layout.logits_range(f)],
                layout.width,
                layout.height,
                mapping,
            )
        })
        .collect()
}
