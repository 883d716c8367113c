//! Training losses: photometric re-projection (SSIM + L1), edge-aware depth
//! smoothness, pose coordinate consistency, their weighted total, and the
//! loop-closed view-synthesis pair schedule.

use thiserror::Error;

use crate::geometry::Pose;
use crate::scalar::Real;
use crate::view_synthesis::{DepthMap, ImageBuffer, ValidMask};

/// SSIM stabilizers for unit-range images.
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("buffer dimensions {got:?} do not match expected {want:?}")]
    DimensionMismatch {
        want: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("the valid set is empty; the pair is degenerate")]
    EmptyValidSet,
    #[error("pose list is empty")]
    EmptyPoseList,
    #[error("loss component {name} is non-finite: {value}")]
    NonFinite { name: &'static str, value: f64 },
    #[error("loop-closed view synthesis needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("frame index {0} appears more than once in the loop set")]
    DuplicateFrame(usize),
}

/// Weights of the total training loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// SSIM share of the photometric term, in [0, 1].
    pub alpha: f64,
    /// Smoothness weight.
    pub smoothness: f64,
    /// Pose coordinate weight.
    pub pose_coordinate: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.85,
            smoothness: 0.001,
            pose_coordinate: 0.03,
        }
    }
}

/// One ordered view-synthesis pair: synthesize the target image from the
/// source image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FramePair {
    pub target: usize,
    pub source: usize,
}

/// Per-pixel scalar field (same grid as an image, single channel).
#[derive(Clone, Debug)]
pub struct ScalarMap<S = f64> {
    width: usize,
    height: usize,
    data: Vec<S>,
}

impl<S: Real> ScalarMap<S> {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> S {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }
}

/// Mirror an out-of-range index back into [0, n) without repeating the edge
/// sample (reflect-101).
#[inline]
fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let m = (n - 1) as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i > m {
        i = 2 * m - i;
    }
    i as usize
}

/// Per-pixel SSIM between two images of equal shape.
///
/// Local statistics use a 3×3 box window with reflective padding and the
/// standard stabilizers; multi-channel images are averaged over channels.
/// Values lie in [−1, 1], with 1 for identical images.
pub fn ssim_map<S: Real>(
    a: &ImageBuffer<S>,
    b: &ImageBuffer<S>,
) -> Result<ScalarMap<S>, LossError> {
    if a.dims() != b.dims() {
        return Err(LossError::DimensionMismatch {
            want: a.dims(),
            got: b.dims(),
        });
    }
    let (w, h, channels) = a.dims();
    let inv9 = 1.0 / 9.0;
    let inv_ch = 1.0 / channels as f64;
    let mut data = Vec::with_capacity(w * h);
    let mut win_a = [S::c(0.0); 9];
    let mut win_b = [S::c(0.0); 9];
    let mut win_aa = [S::c(0.0); 9];
    let mut win_bb = [S::c(0.0); 9];
    let mut win_ab = [S::c(0.0); 9];
    let mut per_channel = vec![S::c(0.0); channels];
    for y in 0..h {
        for x in 0..w {
            for (ch, slot) in per_channel.iter_mut().enumerate() {
                let mut k = 0;
                for dy in -1..=1isize {
                    for dx in -1..=1isize {
                        let sx = reflect101(x as isize + dx, w);
                        let sy = reflect101(y as isize + dy, h);
                        let va = a.get(sx, sy, ch);
                        let vb = b.get(sx, sy, ch);
                        win_a[k] = va;
                        win_b[k] = vb;
                        win_aa[k] = va * va;
                        win_bb[k] = vb * vb;
                        win_ab[k] = va * vb;
                        k += 1;
                    }
                }
                let mu_a = S::sum_slice(&win_a).mul_add_c(inv9, 0.0);
                let mu_b = S::sum_slice(&win_b).mul_add_c(inv9, 0.0);
                let var_a = S::sum_slice(&win_aa).mul_add_c(inv9, 0.0) - mu_a * mu_a;
                let var_b = S::sum_slice(&win_bb).mul_add_c(inv9, 0.0) - mu_b * mu_b;
                let cov = S::sum_slice(&win_ab).mul_add_c(inv9, 0.0) - mu_a * mu_b;
                let num = ((mu_a * mu_b).mul_add_c(2.0, SSIM_C1)) * (cov.mul_add_c(2.0, SSIM_C2));
                let den = (mu_a * mu_a + mu_b * mu_b + S::c(SSIM_C1))
                    * (var_a + var_b + S::c(SSIM_C2));
                *slot = num / den;
            }
            data.push(S::sum_slice(&per_channel).mul_add_c(inv_ch, 0.0));
        }
    }
    Ok(ScalarMap {
        width: w,
        height: h,
        data,
    })
}

/// Photometric re-projection loss over the valid set:
/// mean of α·(1−SSIM)/2 + (1−α)·Σ_ch |target − synthesized|.
///
/// Pixels outside the valid set carry no photometric evidence at all: before
/// the windowed SSIM statistics are taken they are filled with the target's
/// own value, so a masked hole next to a valid pixel does not masquerade as
/// structure.
pub fn photometric_loss<S: Real>(
    target: &ImageBuffer<S>,
    synthesized: &ImageBuffer<S>,
    valid: &ValidMask,
    alpha: f64,
) -> Result<S, LossError> {
    if target.dims() != synthesized.dims() {
        return Err(LossError::DimensionMismatch {
            want: target.dims(),
            got: synthesized.dims(),
        });
    }
    if (valid.width(), valid.height()) != (target.width(), target.height()) {
        return Err(LossError::DimensionMismatch {
            want: (target.width(), target.height(), 0),
            got: (valid.width(), valid.height(), 0),
        });
    }
    let n_valid = valid.count();
    if n_valid == 0 {
        return Err(LossError::EmptyValidSet);
    }
    let ssim = if n_valid == valid.width() * valid.height() {
        ssim_map(target, synthesized)?
    } else {
        let mut filled = synthesized.clone();
        for y in 0..target.height() {
            for x in 0..target.width() {
                if !valid.get(x, y) {
                    for ch in 0..target.channels() {
                        filled.set(x, y, ch, target.get(x, y, ch));
                    }
                }
            }
        }
        ssim_map(target, &filled)?
    };
    let (w, h, channels) = target.dims();
    let mut terms = Vec::with_capacity(n_valid);
    let mut diffs = vec![S::c(0.0); channels];
    for y in 0..h {
        for x in 0..w {
            if !valid.get(x, y) {
                continue;
            }
            let structural = ssim.get(x, y).mul_add_c(-0.5 * alpha, 0.5 * alpha);
            for (ch, slot) in diffs.iter_mut().enumerate() {
                *slot = (target.get(x, y, ch) - synthesized.get(x, y, ch)).abs();
            }
            let l1 = S::sum_slice(&diffs);
            terms.push(structural + l1.mul_add_c(1.0 - alpha, 0.0));
        }
    }
    Ok(S::sum_slice(&terms).mul_add_c(1.0 / n_valid as f64, 0.0))
}

/// Edge-aware depth smoothness: mean over all pixels of the squared
/// image-weighted forward differences, x and y terms summed.
///
/// The weight is e^(−g) with g the forward image difference magnitude
/// averaged over channels; differences without a forward neighbor are
/// skipped while the denominator stays the full pixel count.
pub fn smoothness_loss<S: Real>(
    depth: &DepthMap<S>,
    image: &ImageBuffer<S>,
) -> Result<S, LossError> {
    if (depth.width(), depth.height()) != (image.width(), image.height()) {
        return Err(LossError::DimensionMismatch {
            want: (depth.width(), depth.height(), 0),
            got: (image.width(), image.height(), image.channels()),
        });
    }
    let (w, h, channels) = image.dims();
    let inv_ch = 1.0 / channels as f64;
    let mut terms: Vec<S> = Vec::with_capacity(2 * w * h);
    let mut grads = vec![S::c(0.0); channels];
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                for (ch, slot) in grads.iter_mut().enumerate() {
                    *slot = (image.get(x + 1, y, ch) - image.get(x, y, ch)).abs();
                }
                let g = S::sum_slice(&grads).mul_add_c(inv_ch, 0.0);
                let weighted = (-g).exp() * (depth.get(x + 1, y) - depth.get(x, y));
                terms.push(weighted * weighted);
            }
            if y + 1 < h {
                for (ch, slot) in grads.iter_mut().enumerate() {
                    *slot = (image.get(x, y + 1, ch) - image.get(x, y, ch)).abs();
                }
                let g = S::sum_slice(&grads).mul_add_c(inv_ch, 0.0);
                let weighted = (-g).exp() * (depth.get(x, y + 1) - depth.get(x, y));
                terms.push(weighted * weighted);
            }
        }
    }
    Ok(S::sum_slice(&terms).mul_add_c(1.0 / (w * h) as f64, 0.0))
}

/// Euclidean norm of a 6-vector difference with a zero-branch so identical
/// poses contribute an exact zero (and a zero gradient) instead of a NaN
/// through sqrt at the origin.
fn pose_distance<S: Real>(a: &Pose<S>, b: &Pose<S>) -> S {
    let va = a.six_vector();
    let vb = b.six_vector();
    let mut sq = S::c(0.0);
    for k in 0..6 {
        let d = va[k] - vb[k];
        sq = sq + d * d;
    }
    if sq.value() > 0.0 {
        sq.sqrt()
    } else {
        S::c(0.0)
    }
}

/// Mean L2 deviation of the per-pixel poses from the aggregate pose.
pub fn pose_coordinate_loss<S: Real>(
    pixel_poses: &[Pose<S>],
    aggregate: &Pose<S>,
) -> Result<S, LossError> {
    if pixel_poses.is_empty() {
        return Err(LossError::EmptyPoseList);
    }
    let dists: Vec<S> = pixel_poses
        .iter()
        .map(|p| pose_distance(p, aggregate))
        .collect();
    Ok(S::sum_slice(&dists).mul_add_c(1.0 / dists.len() as f64, 0.0))
}

/// Weighted total of the three loss components.
pub fn total_loss<S: Real>(
    photometric: S,
    smoothness: S,
    pose_coordinate: S,
    weights: &LossWeights,
) -> Result<S, LossError> {
    for (name, v) in [
        ("photometric", photometric.value()),
        ("smoothness", smoothness.value()),
        ("pose_coordinate", pose_coordinate.value()),
    ] {
        if !v.is_finite() {
            return Err(LossError::NonFinite { name, value: v });
        }
    }
    Ok(photometric
        + smoothness.mul_add_c(weights.smoothness, 0.0)
        + pose_coordinate.mul_add_c(weights.pose_coordinate, 0.0))
}

/// All ordered pairs of a loop set: every frame is synthesized from every
/// other, giving n(n−1) photometric terms.
pub fn lcvs_pairs(frames: &[usize]) -> Result<Vec<FramePair>, LossError> {
    if frames.len() < 2 {
        return Err(LossError::TooFewFrames(frames.len()));
    }
    for (i, f) in frames.iter().enumerate() {
        if frames[i + 1..].contains(f) {
            return Err(LossError::DuplicateFrame(*f));
        }
    }
    let mut pairs = Vec::with_capacity(frames.len() * (frames.len() - 1));
    for &target in frames {
        for &source in frames {
            if target != source {
                pairs.push(FramePair { target, source });
            }
        }
    }
    Ok(pairs)
}
