//! Finite-difference validation suite covering every differentiable
//! operation in isolation plus the fully composed training loss.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{finite_difference_check, AdError, EvalError, FdReport, LossFunction};
use crate::fit::{init_params, GridLayout, LoopSetObjective, SigmoidDepthMapping};
use crate::geometry::{
    axis_angle_to_matrix, back_project, mean_pose, pose_from_pixel, ray_rotation, AxisAngle,
    Intrinsics, Pose, RelativeTransform, Vec3,
};
use crate::losses::{
    photometric_loss, pose_coordinate_loss, smoothness_loss, ssim_map, total_loss, LossWeights,
};
use crate::scalar::Real;
use crate::synthetic::{generate_trajectory, render_trajectory, TrajectoryPattern};
use crate::view_synthesis::{bilinear_sample, pixel_map, DepthMap, ImageBuffer, ValidMask};

/// Relative-error gate every suite entry must pass.
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
/// Central-difference step (relative).
pub const DEFAULT_STEP: f64 = 1e-5;

fn box_err(e: impl std::error::Error + Send + Sync + 'static) -> EvalError {
    Box::new(e)
}

fn probe_intrinsics() -> Intrinsics {
    Intrinsics::new(11.0, 10.0, 4.3, 3.1).unwrap()
}

/// Fixed mixing weights turning vector outputs into one scalar; chosen
/// irrational-ish so no component is accidentally ignored.
fn mix(i: usize) -> f64 {
    0.35 + 0.17 * ((i * 2654435761) % 97) as f64 / 97.0 - 0.08 * (i as f64).sin()
}

struct BackProjectProbe {
    k: Intrinsics,
}

impl LossFunction for BackProjectProbe {
    fn dim(&self) -> usize {
        3
    }

    fn eval<S: Real>(&self, p: &[S]) -> Result<S, EvalError> {
        let q = back_project(p[0], p[1], p[2], &self.k).map_err(box_err)?;
        let combined = S::dot_const(&q.0 .0, &[mix(0), mix(1), mix(2)]);
        Ok(combined + q.distance().mul_add_c(mix(3), 0.0))
    }
}

struct RayRotationProbe {
    k: Intrinsics,
}

impl LossFunction for RayRotationProbe {
    fn dim(&self) -> usize {
        2
    }

    fn eval<S: Real>(&self, p: &[S]) -> Result<S, EvalError> {
        let r = ray_rotation(p[0], p[1], &self.k);
        let mut flat = [S::c(0.0); 9];
        for i in 0..3 {
            for j in 0..3 {
                flat[3 * i + j] = r.0 .0[i][j];
            }
        }
        let ws: Vec<f64> = (0..9).map(mix).collect();
        Ok(S::dot_const(&flat, &ws))
    }
}

struct PoseFromPixelProbe {
    k: Intrinsics,
}

impl LossFunction for PoseFromPixelProbe {
    fn dim(&self) -> usize {
        9 // gaze(3) + position(3) + pixel(2) + depth(1)
    }

    fn eval<S: Real>(&self, p: &[S]) -> Result<S, EvalError> {
        let coord: [S; 6] = p[..6].try_into().unwrap();
        let (u, v, depth) = (p[6], p[7], p[8]);
        let q = back_project(u, v, depth, &self.k).map_err(box_err)?;
        let pose = pose_from_pixel(&coord, &q, u, v, &self.k);
        let six = pose.six_vector();
        let ws: Vec<f64> = (0..6).map(mix).collect();
        Ok(S::dot_const(&six, &ws))
    }
}

struct MeanPoseProbe {
    k: Intrinsics,
    cells: Vec<(f64, f64)>,
}

impl LossFunction for MeanPoseProbe {
    fn dim(&self) -> usize {
        self.cells.len() * 7
    }

    fn eval<S: Real>(&self, p: &[S]) -> Result<S, EvalError> {
        let mut poses = Vec::with_capacity(self.cells.len());
        for (i, (u, v)) in self.cells.iter().enumerate() {
            let base = i * 7;
            let coord: [S; 6] = p[base..base + 6].try_into().unwrap();
            let depth = p[base + 6];
            let q = back_project(S::c(*u), S::c(*v), depth, &self.k).map_err(box_err)?;
            poses.push(pose_from_pixel(&coord, &q, S::c(*u), S::c(*v), &self.k));
        }
        let mean = mean_pose(&poses).map_err(box_err)?;
        let ws: Vec<f64> = (0..6).map(mix).collect();
        Ok(S::dot_const(&mean.six_vector(), &ws))
    }
}

struct PixelMapProbe {
    k: Intrinsics,
    width: usize,
    height: usize,
}

impl LossFunction for PixelMapProbe {
    fn dim(&self) -> usize {
        self.width * self.height + 6
    }

    fn eval<S: Real>(&self, p: &[S]) -> Result<S, EvalError> {
        let n = self.width * self.height;
        let depth = DepthMap::from_data(self.width, self.height, p[..n].to_vec());
        let target = Pose {
            attitude: AxisAngle(Vec3([p[n], p[n + 1], p[n + 2]])),
            position: Vec3([p[n + 3], p[n + 4], p[n + 5]]),
        };
        let transform = crate::geometry::relative_transform(&target, &Pose::identity());
        let (map, mask) = pixel_map(&depth, &transform, &self.k, &self.k, (self.width, self.height));
        let mut terms = Vec::new();
        let mut ws = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if mask.get(x, y) {
                    let [u, v] = map.get(x, y);
                    terms.push(u);
                    ws.push(mix(2 * (y * self.width + x)));
                    terms.push(v);
                    ws.push(mix(2 * (y * self.width + x) + 1));
                }
            }
        }
        Ok(S::dot_const(&terms, &ws))
    }
}

struct BilinearProbe {
    image: ImageBuffer<f64>,
    n_points: usize,
}

impl LossFunction for BilinearProbe {
    fn dim(&self) -> usize {
        2 * self.n_points
    }

    fn eval<S: Real>(&self, p: &[S]) -> Result<S, EvalError> {
        let source = self.image.lift::<S>();
        // One-pixel maps per query point keep the probe independent of any
        // particular warp.
        let mut total = S::c(0.0);
        for i in 0..self.n_points {
            let coords = crate::view_synthesis::PixelMap::from_single(p[2 * i], p[2 * i + 1]);
            let mask = ValidMask::new_filled(1, 1, true);
            let out = bilinear_sample(&source, &coords, &mask).map_err(box_err)?;
            for ch in 0..out.channels() {
                total = total + out.get(0, 0, ch).mul_add_c(mix(i * 3 + ch), 0.0);
            }
        }
        Ok(total)
    }
}

struct SsimProbe {
    reference: ImageBuffer<f64>,
}

impl LossFunction for SsimProbe {
    fn dim(&self) -> usize {
        self.reference.width() * self.reference.height()
    }

    fn eval<S: Real>(&self, p: &[S]) -> Result<S, EvalError> {
        let a = self.reference.lift::<S>();
        let b = ImageBuffer::from_fn(a.width(), a.height(), 1, |x, y, _| {
            p[y * a.width() + x]
        })
        .map_err(box_err)?;
        let map = ssim_map(&a, &b).map_err(box_err)?;
        let ws: Vec<f64> = (0..map.data().len()).map(mix).collect();
        Ok(S::dot_const(map.data(), &ws))
    }
}

struct PhotometricProbe {
    target: ImageBuffer<f64>,
    mask: ValidMask,
    alpha: f64,
}

impl LossFunction for PhotometricProbe {
    fn dim(&self) -> usize {
        self.target.width() * self.target.height()
    }

    fn eval<S: Real>(&self, p: &[S]) -> Result<S, EvalError> {
        let target = self.target.lift::<S>();
        let synth = ImageBuffer::from_fn(target.width(), target.height(), 1, |x, y, _| {
            p[y * target.width() + x]
        })
        .map_err(box_err)?;
        photometric_loss(&target, &synth, &self.mask, self.alpha).map_err(box_err)
    }
}

struct SmoothnessProbe {
    image: ImageBuffer<f64>,
}

impl LossFunction for SmoothnessProbe {
    fn dim(&self) -> usize {
        self.image.width() * self.image.height()
    }

    fn eval<S: Real>(&self, p: &[S]) -> Result<S, EvalError> {
        let depth = DepthMap::from_data(self.image.width(), self.image.height(), p.to_vec());
        let image = self.image.lift::<S>();
        smoothness_loss(&depth, &image).map_err(box_err)
    }
}

struct PoseCoordinateProbe {
    n_poses: usize,
}

impl LossFunction for PoseCoordinateProbe {
    fn dim(&self) -> usize {
        6 * self.n_poses
    }

    fn eval<S: Real>(&self, p: &[S]) -> Result<S, EvalError> {
        let poses: Vec<Pose<S>> = (0..self.n_poses)
            .map(|i| {
                let v: [S; 6] = p[6 * i..6 * i + 6].try_into().unwrap();
                Pose::from_six_vector(v)
            })
            .collect();
        let mean = mean_pose(&poses).map_err(box_err)?;
        pose_coordinate_loss(&poses, &mean).map_err(box_err)
    }
}

struct TotalLossProbe;

impl LossFunction for TotalLossProbe {
    fn dim(&self) -> usize {
        3
    }

    fn eval<S: Real>(&self, p: &[S]) -> Result<S, EvalError> {
        total_loss(p[0] * p[0], p[1].exp(), p[2].abs(), &LossWeights::default())
            .map_err(box_err)
    }
}

struct SynthesisChainProbe {
    source: ImageBuffer<f64>,
    target: ImageBuffer<f64>,
    k: Intrinsics,
    width: usize,
    height: usize,
    alpha: f64,
}

impl LossFunction for SynthesisChainProbe {
    fn dim(&self) -> usize {
        self.width * self.height
    }

    fn eval<S: Real>(&self, p: &[S]) -> Result<S, EvalError> {
        // Photometric loss of a synthesis with a fixed small baseline,
        // differentiated with respect to the dense target depth.
        let depth = DepthMap::from_data(self.width, self.height, p.to_vec());
        let transform = RelativeTransform {
            rotation: axis_angle_to_matrix(&AxisAngle(Vec3([
                S::c(0.004),
                S::c(-0.006),
                S::c(0.002),
            ]))),
            translation: Vec3([S::c(0.012), S::c(-0.004), S::c(0.006)]),
        };
        let source = self.source.lift::<S>();
        let (synth, mask) =
            crate::view_synthesis::synthesize(&source, &depth, &transform, &self.k, &self.k)
                .map_err(box_err)?;
        let target = self.target.lift::<S>();
        photometric_loss(&target, &synth, &mask, self.alpha).map_err(box_err)
    }
}

fn smooth_image(w: usize, h: usize, channels: usize, seed: u64) -> ImageBuffer<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: Vec<(f64, f64, f64)> = (0..channels)
        .map(|_| {
            (
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.15..0.45),
                rng.random_range(0.1..0.4),
            )
        })
        .collect();
    ImageBuffer::from_fn(w, h, channels, |x, y, ch| {
        let (p, fu, fv) = phases[ch];
        0.5 + 0.4 * (fu * x as f64 + fv * y as f64 + p).sin()
    })
    .expect("static channel count")
}

/// One validated entry of the suite.
#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub report: FdReport,
}

impl SuiteEntry {
    pub fn passes(&self) -> bool {
        self.report.checked > 0 && self.report.max_rel_err < GRADIENT_TOLERANCE
    }
}

fn merge(into: &mut FdReport, other: FdReport) {
    into.checked += other.checked;
    into.rejected += other.rejected;
    if other.max_rel_err > into.max_rel_err {
        into.max_rel_err = other.max_rel_err;
        into.worst_index = other.worst_index;
    }
    into.median_rel_err = into.median_rel_err.max(other.median_rel_err);
}

fn check_over_bases<L: LossFunction>(
    name: &'static str,
    samples: usize,
    h: f64,
    seed: u64,
    make: impl Fn(u64) -> (L, Vec<f64>),
) -> Result<SuiteEntry, AdError> {
    let mut report = FdReport {
        checked: 0,
        rejected: 0,
        max_rel_err: 0.0,
        median_rel_err: 0.0,
        worst_index: None,
    };
    let mut base = 0u64;
    // Several random base points for low-dimensional operations, until the
    // requested number of coordinates has been checked.
    while report.checked < samples {
        let (loss, params) = make(seed.wrapping_add(base));
        let want = samples - (report.checked + report.rejected);
        let r = finite_difference_check(&loss, &params, want, h, seed.wrapping_add(base))?;
        merge(&mut report, r);
        base += 1;
        if base > 4 * samples as u64 {
            break;
        }
    }
    Ok(SuiteEntry { name, report })
}

/// Run the whole gradient suite: every primitive in isolation plus the
/// composed loop-set objective on a two-frame synthetic pair.
pub fn run_gradient_suite(
    samples: usize,
    h: f64,
    seed: u64,
) -> Result<Vec<SuiteEntry>, AdError> {
    let k = probe_intrinsics();
    let mut entries = Vec::new();

    entries.push(check_over_bases("back_project", samples, h, seed, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        (
            BackProjectProbe { k },
            vec![
                rng.random_range(0.0..8.0),
                rng.random_range(0.0..6.0),
                rng.random_range(0.3..3.0),
            ],
        )
    })?);

    entries.push(check_over_bases("ray_rotation", samples, h, seed, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        (
            RayRotationProbe { k },
            vec![rng.random_range(-2.0..10.0), rng.random_range(-2.0..8.0)],
        )
    })?);

    entries.push(check_over_bases("pose_from_pixel", samples, h, seed, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let mut p: Vec<f64> = (0..6).map(|_| rng.random_range(-0.6..0.6)).collect();
        p.push(rng.random_range(0.0..8.0));
        p.push(rng.random_range(0.0..6.0));
        p.push(rng.random_range(0.3..2.0));
        (PoseFromPixelProbe { k }, p)
    })?);

    entries.push(check_over_bases("mean_pose", samples, h, seed, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let cells = vec![(1.0, 1.0), (4.0, 2.0), (7.0, 5.0), (2.5, 4.5)];
        let n = cells.len();
        let mut p = Vec::with_capacity(7 * n);
        for _ in 0..n {
            for _ in 0..6 {
                p.push(rng.random_range(-0.5..0.5));
            }
            p.push(rng.random_range(0.4..2.0));
        }
        (MeanPoseProbe { k, cells }, p)
    })?);

    entries.push(check_over_bases("pixel_map", samples, h, seed, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let (w, hgt) = (8usize, 6usize);
        let mut p: Vec<f64> = (0..w * hgt).map(|_| rng.random_range(0.5..1.5)).collect();
        for _ in 0..3 {
            p.push(rng.random_range(-0.02..0.02));
        }
        for _ in 0..3 {
            p.push(rng.random_range(-0.02..0.02));
        }
        (
            PixelMapProbe {
                k,
                width: w,
                height: hgt,
            },
            p,
        )
    })?);

    entries.push(check_over_bases("bilinear_sample", samples, h, seed, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let image = smooth_image(7, 6, 3, s ^ 0xabc);
        let n_points = 6;
        let mut p = Vec::with_capacity(2 * n_points);
        for _ in 0..n_points {
            // Stay away from the bilinear cell edges so finite differences
            // see a smooth function.
            p.push(rng.random_range(0..6) as f64 + rng.random_range(0.2..0.8));
            p.push(rng.random_range(0..5) as f64 + rng.random_range(0.2..0.8));
        }
        (BilinearProbe { image, n_points }, p)
    })?);

    entries.push(check_over_bases("ssim_map", samples, h, seed, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let reference = smooth_image(8, 6, 1, s ^ 0x51);
        let p: Vec<f64> = (0..48).map(|_| rng.random_range(0.1..0.9)).collect();
        (SsimProbe { reference }, p)
    })?);

    entries.push(check_over_bases("photometric_loss", samples, h, seed, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let target = smooth_image(8, 6, 1, s ^ 0x52);
        let mut mask = ValidMask::new_filled(8, 6, true);
        mask.set(0, 0, false);
        mask.set(7, 5, false);
        let p: Vec<f64> = (0..48).map(|_| rng.random_range(0.1..0.9)).collect();
        (
            PhotometricProbe {
                target,
                mask,
                alpha: 0.85,
            },
            p,
        )
    })?);

    entries.push(check_over_bases("smoothness_loss", samples, h, seed, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let image = smooth_image(8, 6, 3, s ^ 0x53);
        let p: Vec<f64> = (0..48).map(|_| rng.random_range(0.4..2.0)).collect();
        (SmoothnessProbe { image }, p)
    })?);

    entries.push(check_over_bases("pose_coordinate_loss", samples, h, seed, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let n_poses = 5;
        let p: Vec<f64> = (0..6 * n_poses).map(|_| rng.random_range(-1.0..1.0)).collect();
        (PoseCoordinateProbe { n_poses }, p)
    })?);

    entries.push(check_over_bases("total_loss", samples, h, seed, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        (
            TotalLossProbe,
            vec![
                rng.random_range(0.2..1.5),
                rng.random_range(-1.0..0.5),
                rng.random_range(0.1..1.0),
            ],
        )
    })?);

    entries.push(check_over_bases("synthesis_chain", samples, h, seed, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let source = smooth_image(8, 6, 1, s ^ 0x61);
        let target = smooth_image(8, 6, 1, s ^ 0x62);
        let p: Vec<f64> = (0..48).map(|_| rng.random_range(0.8..1.6)).collect();
        (
            SynthesisChainProbe {
                source,
                target,
                k,
                width: 8,
                height: 6,
                alpha: 0.85,
            },
            p,
        )
    })?);

    entries.push(composed_objective_entry(samples, h, seed)?);

    Ok(entries)
}

/// The composed training objective on a rendered two-frame 8×6 pair.
fn composed_objective_entry(
    samples: usize,
    h: f64,
    seed: u64,
) -> Result<SuiteEntry, AdError> {
    let size = (8usize, 6usize);
    let k = crate::synthetic::desk_camera(size);
    let scene = crate::synthetic::desk_scene(77, &k);
    let trajectory = generate_trajectory(TrajectoryPattern::Arc, 3, 1.0)
        .expect("static frame count");
    let frames = render_trajectory(&scene, &trajectory, &k, size)
        .expect("closed scene renders everywhere");
    let images: Vec<ImageBuffer<f64>> = frames.iter().map(|(i, _)| i.clone()).collect();
    let layout = GridLayout::new(3, size.0, size.1, 2);
    let mapping = SigmoidDepthMapping::default();
    let objective = LoopSetObjective::new(
        &images,
        vec![0, 1],
        layout,
        mapping,
        LossWeights::default(),
        k,
    );
    // Random-but-plausible parameters: logits near mid-range, small grids.
    let mut params = init_params(&layout, &k, seed ^ 0x77).values().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x78);
    for v in params.iter_mut() {
        *v += rng.random_range(-0.01..0.01);
    }
    let report = finite_difference_check(&objective, &params, samples, h, seed)?;
    Ok(SuiteEntry {
        name: "loop_set_objective",
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_suite_passes_at_tolerance() {
        let entries = run_gradient_suite(100, DEFAULT_STEP, 12345).unwrap();
        assert_eq!(entries.len(), 13);
        for entry in &entries {
            assert!(
                entry.passes(),
                "{} failed: {:?}",
                entry.name,
                entry.report
            );
            assert!(
                entry.report.checked >= 100 || entry.report.rejected > 0,
                "{} checked too few coordinates: {:?}",
                entry.name,
                entry.report
            );
        }
    }
}
