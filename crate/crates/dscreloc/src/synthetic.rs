//! Analytic planar-scene renderer producing image/depth/pose triplets with
//! exact ground truth for desk-scale experiments.
//!
//! Scenes are closed boxes of textured planes; textures are sums of
//! band-limited sinusoids so bilinear interpolation stays accurate and the
//! photometric landscape is smooth. Rendering conventions: poses map camera
//! coordinates to world coordinates, depth is camera-frame z.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{
    axis_angle_to_matrix, relative_transform, AxisAngle, Intrinsics, Pose, Vec3,
};
use crate::view_synthesis::{pixel_map, DepthMap, ImageBuffer};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("ray through pixel ({x}, {y}) misses every plane; the scene is not closed")]
    RayMiss { x: usize, y: usize },
    #[error("trajectory needs at least 3 frames, got {0}")]
    TooFewFrames(usize),
    #[error("camera at frame {frame} lies on or behind a scene plane")]
    CameraOnPlane { frame: usize },
    #[error("consecutive frames {a} and {b} share only {fraction:.2} of pixels, need {min:.2}")]
    InsufficientOverlap {
        a: usize,
        b: usize,
        fraction: f64,
        min: f64,
    },
}

/// Smooth procedural texture: per-channel base plus band-limited sinusoids
/// over the plane's in-plane coordinates, with total amplitude kept inside
/// [0, 1] so no clamping (and no non-smoothness) is ever needed.
#[derive(Clone, Debug)]
pub struct ProceduralTexture {
    channels: usize,
    base: [f64; 3],
    waves: Vec<Wave>,
}

#[derive(Clone, Debug)]
struct Wave {
    channel: usize,
    amplitude: f64,
    freq_u: f64,
    freq_v: f64,
    phase: f64,
}

impl ProceduralTexture {
    /// Random texture with spatial wavelengths at or above `min_wavelength`
    /// (world units) and per-channel amplitude budget 0.45 around base 0.5.
    ///
    /// The spectrum is deliberately multi-scale: strong components several
    /// octaves above the band limit keep the photometric landscape informative
    /// under large initial flow errors, while the fine components sharpen the
    /// optimum.
    pub fn band_limited(seed: u64, channels: usize, min_wavelength: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // (amplitude, wavelength multiplier range) per wave.
        let bands: [(f64, f64, f64); 5] = [
            (0.12, 5.0, 7.0),
            (0.12, 2.5, 4.0),
            (0.08, 2.5, 4.0),
            (0.08, 1.0, 2.0),
            (0.05, 1.0, 2.0),
        ];
        let mut waves = Vec::new();
        for channel in 0..channels {
            for (w, (amplitude, lo, hi)) in bands.iter().enumerate() {
                let wavelength = min_wavelength * rng.random_range(*lo..*hi);
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let freq = std::f64::consts::TAU / wavelength;
                waves.push(Wave {
                    channel,
                    amplitude: *amplitude,
                    freq_u: freq * angle.cos(),
                    freq_v: freq * angle.sin(),
                    phase: rng.random_range(0.0..std::f64::consts::TAU)
                        + w as f64, // decorrelate equal-frequency draws
                });
            }
        }
        ProceduralTexture {
            channels,
            base: [0.5; 3],
            waves,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn sample(&self, u: f64, v: f64) -> [f64; 3] {
        let mut out = self.base;
        for w in &self.waves {
            out[w.channel] += w.amplitude * (w.freq_u * u + w.freq_v * v + w.phase).sin();
        }
        out
    }
}

/// One textured plane: a point, unit normal, and orthonormal in-plane axes
/// used as texture coordinates.
#[derive(Clone, Debug)]
pub struct TexturedPlane {
    pub point: Vec3<f64>,
    pub normal: Vec3<f64>,
    pub axis_u: Vec3<f64>,
    pub axis_v: Vec3<f64>,
    pub texture: ProceduralTexture,
}

impl TexturedPlane {
    pub fn new(
        point: Vec3<f64>,
        normal: Vec3<f64>,
        axis_u: Vec3<f64>,
        texture: ProceduralTexture,
    ) -> Self {
        let normal = normal.scale(1.0 / normal.norm());
        let axis_u = axis_u - normal.scale(normal.dot(axis_u));
        let axis_u = axis_u.scale(1.0 / axis_u.norm());
        let axis_v = normal.cross(axis_u);
        TexturedPlane {
            point,
            normal,
            axis_u,
            axis_v,
            texture,
        }
    }
}

/// A closed arrangement of textured planes.
#[derive(Clone, Debug)]
pub struct PlanarScene {
    pub planes: Vec<TexturedPlane>,
}

impl PlanarScene {
    /// Interior of an axis-aligned box: six inward-facing textured walls.
    ///
    /// `half_extents` are the box half sizes; `min_wavelength` bounds the
    /// texture frequencies in world units.
    pub fn room(half_extents: Vec3<f64>, seed: u64, min_wavelength: f64) -> Self {
        let [hx, hy, hz] = half_extents.0;
        let faces: [(Vec3<f64>, Vec3<f64>, Vec3<f64>); 6] = [
            // +z wall (front), normal looking back toward −z.
            (Vec3([0.0, 0.0, hz]), Vec3([0.0, 0.0, -1.0]), Vec3([1.0, 0.0, 0.0])),
            // −z wall (behind the camera).
            (Vec3([0.0, 0.0, -hz]), Vec3([0.0, 0.0, 1.0]), Vec3([1.0, 0.0, 0.0])),
            // ±x side walls.
            (Vec3([hx, 0.0, 0.0]), Vec3([-1.0, 0.0, 0.0]), Vec3([0.0, 0.0, 1.0])),
            (Vec3([-hx, 0.0, 0.0]), Vec3([1.0, 0.0, 0.0]), Vec3([0.0, 0.0, 1.0])),
            // ±y floor/ceiling.
            (Vec3([0.0, hy, 0.0]), Vec3([0.0, -1.0, 0.0]), Vec3([1.0, 0.0, 0.0])),
            (Vec3([0.0, -hy, 0.0]), Vec3([0.0, 1.0, 0.0]), Vec3([1.0, 0.0, 0.0])),
        ];
        let planes = faces
            .iter()
            .enumerate()
            .map(|(i, (point, normal, axis_u))| {
                TexturedPlane::new(
                    *point,
                    *normal,
                    *axis_u,
                    ProceduralTexture::band_limited(
                        seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
                        3,
                        min_wavelength,
                    ),
                )
            })
            .collect();
        PlanarScene { planes }
    }

    /// Nearest ray-plane intersection with travel parameter above `t_min`.
    /// Returns (t, plane index, world point).
    pub fn intersect(
        &self,
        origin: Vec3<f64>,
        dir: Vec3<f64>,
        t_min: f64,
    ) -> Option<(f64, usize, Vec3<f64>)> {
        let mut best: Option<(f64, usize, Vec3<f64>)> = None;
        for (i, plane) in self.planes.iter().enumerate() {
            let denom = plane.normal.dot(dir);
            if denom.abs() < 1e-12 {
                continue;
            }
            let t = plane.normal.dot(plane.point - origin) / denom;
            if t > t_min && best.map_or(true, |(bt, _, _)| t < bt) {
                let hit = origin + dir.scale(t);
                best = Some((t, i, hit));
            }
        }
        best
    }

    /// Signed distance from `point` to the nearest plane surface.
    pub fn distance_to_nearest_surface(&self, point: Vec3<f64>) -> f64 {
        self.planes
            .iter()
            .map(|p| p.normal.dot(point - p.point).abs())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Ordered camera poses with frame ids.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub frames: Vec<(usize, Pose<f64>)>,
}

impl Trajectory {
    pub fn poses(&self) -> Vec<Pose<f64>> {
        self.frames.iter().map(|(_, p)| *p).collect()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Largest pairwise camera-center distance.
    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for (_, a) in &self.frames {
            for (_, b) in &self.frames {
                d = d.max((a.position - b.position).norm());
            }
        }
        d
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectoryPattern {
    /// Sweep along a circular arc while yawing so the view stays on the
    /// scene; both rotation and translation are excited.
    Arc,
    /// Pure sideways translation with identity attitude.
    Lateral,
    /// Full circle around the pivot (an arc closing on itself).
    Orbit,
}

/// Base step sizes at `scale = 1`; the scale argument multiplies these.
///
/// The arc is rotation-dominant on purpose: with a short pivot distance the
/// yaw-induced image flow dwarfs the parallax, so the pose fit cannot trade
/// attitude against a fake lateral baseline on the dominant wall — the
/// classic plane ambiguity that traps translation-heavy trajectories.
pub const ARC_STEP_RAD: f64 = 0.1;
pub const ARC_PIVOT_DISTANCE: f64 = 0.18;
pub const ARC_BOB_AMPLITUDE: f64 = 0.02;
/// Forward advance per frame along the optical axis; the resulting looming
/// pins the translation/depth scale that lateral motion alone leaves weak.
pub const ARC_ADVANCE: f64 = 0.012;
pub const LATERAL_STEP: f64 = 0.02;

/// Desk-scale camera: ~59° horizontal field of view with the principal
/// point at the pixel-grid center.
pub fn desk_camera(size: (usize, usize)) -> Intrinsics {
    let fx = 0.875 * size.0 as f64;
    Intrinsics::new(
        fx,
        fx,
        (size.0 as f64 - 1.0) / 2.0,
        (size.1 as f64 - 1.0) / 2.0,
    )
    .expect("positive focal length")
}

/// Desk-scale room for the standard camera: proportioned so the side walls,
/// floor, and ceiling all enter the view next to the front wall. A view
/// dominated by a single plane leaves the depth/translation decomposition
/// ambiguous (any depth scale with a compensating baseline induces the same
/// plane homography), which direct fitting will happily exploit.
pub fn desk_scene(seed: u64, k: &Intrinsics) -> PlanarScene {
    // Texture wavelength of roughly 16 px at the nominal 0.75-unit depth.
    PlanarScene::room(Vec3([0.35, 0.28, 0.9]), seed, 16.0 * 0.75 / k.fx)
}

/// Generate a smooth pose sequence of the requested pattern.
///
/// Arc/orbit frames yaw about the y axis in equal steps of
/// `ARC_STEP_RAD·scale` (2π/n for orbit) around a pivot placed
/// `ARC_PIVOT_DISTANCE` in front of the central camera, so consecutive
/// attitudes differ by exactly the step angle. A small vertical bob keeps
/// the camera centers genuinely three-dimensional; a flat arc is close to
/// collinear, which leaves similarity alignment ill-conditioned.
pub fn generate_trajectory(
    pattern: TrajectoryPattern,
    n_frames: usize,
    scale: f64,
) -> Result<Trajectory, RenderError> {
    if n_frames < 3 {
        return Err(RenderError::TooFewFrames(n_frames));
    }
    let mut frames = Vec::with_capacity(n_frames);
    match pattern {
        TrajectoryPattern::Lateral => {
            let step = LATERAL_STEP * scale;
            for i in 0..n_frames {
                frames.push((
                    i,
                    Pose {
                        attitude: AxisAngle::zero(),
                        position: Vec3([i as f64 * step, 0.0, 0.0]),
                    },
                ));
            }
        }
        TrajectoryPattern::Arc | TrajectoryPattern::Orbit => {
            let step = match pattern {
                TrajectoryPattern::Arc => ARC_STEP_RAD * scale,
                _ => std::f64::consts::TAU / n_frames as f64,
            };
            let pivot = Vec3([0.0, 0.0, ARC_PIVOT_DISTANCE]);
            let mid = (n_frames - 1) as f64 / 2.0;
            let bob = ARC_BOB_AMPLITUDE * scale;
            let advance = ARC_ADVANCE * scale;
            for i in 0..n_frames {
                let yaw = (i as f64 - mid) * step;
                let attitude = AxisAngle(Vec3([0.0, yaw, 0.0]));
                let rot = axis_angle_to_matrix(&attitude);
                let phase = std::f64::consts::TAU * i as f64 / n_frames as f64;
                // Camera sits behind the pivot along its own optical axis, so
                // every frame looks at the pivot point, bobbing vertically
                // and advancing slowly toward it.
                let position = pivot - rot.apply(Vec3([0.0, 0.0, ARC_PIVOT_DISTANCE]))
                    + Vec3([0.0, bob * phase.sin(), (i as f64 - mid) * advance]);
                frames.push((i, Pose { attitude, position }));
            }
        }
    }
    Ok(Trajectory { frames })
}

/// Render one frame: per-pixel nearest ray-plane hit, camera-frame z as
/// depth, texture color at the hit point.
pub fn render_frame(
    scene: &PlanarScene,
    pose: &Pose<f64>,
    k: &Intrinsics,
    size: (usize, usize),
) -> Result<(ImageBuffer<f64>, DepthMap<f64>), RenderError> {
    let (w, h) = size;
    let rot = axis_angle_to_matrix(&pose.attitude);
    let mut image = ImageBuffer::new(w, h, 3).expect("static channel count");
    let mut depth = DepthMap::new(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let ray_cam = k.ray(x as f64, y as f64);
            let ray_world = rot.apply(ray_cam);
            let (t, idx, hit) = scene
                .intersect(pose.position, ray_world, 1e-9)
                .ok_or(RenderError::RayMiss { x, y })?;
            // ray_cam has unit z, so the travel parameter is the z-depth.
            depth.set(x, y, t);
            let plane = &scene.planes[idx];
            let rel = hit - plane.point;
            let color = plane
                .texture
                .sample(plane.axis_u.dot(rel), plane.axis_v.dot(rel));
            for ch in 0..3 {
                image.set(x, y, ch, color[ch]);
            }
        }
    }
    Ok((image, depth))
}

/// Fraction of target pixels that map into the source view, for each
/// consecutive frame pair.
pub fn covisibility_fractions(
    scene: &PlanarScene,
    trajectory: &Trajectory,
    k: &Intrinsics,
    size: (usize, usize),
) -> Result<Vec<f64>, RenderError> {
    let mut fractions = Vec::new();
    for pair in trajectory.frames.windows(2) {
        let (_, target) = pair[0];
        let (_, source) = pair[1];
        let (_, depth) = render_frame(scene, &target, k, size)?;
        let transform = relative_transform(&target, &source);
        let (_, mask) = pixel_map(&depth, &transform, k, k, size);
        fractions.push(mask.count() as f64 / (size.0 * size.1) as f64);
    }
    Ok(fractions)
}

/// Minimum co-visible fraction between consecutive frames for a trajectory
/// to be considered usable.
pub const MIN_COVISIBILITY: f64 = 0.3;

/// Render a trajectory and persist it in the standard dataset layout, so the
/// same readers serve synthetic and recorded data.
pub fn generate_dataset(
    scene: &PlanarScene,
    trajectory: &Trajectory,
    k: &Intrinsics,
    size: (usize, usize),
    out_dir: &std::path::Path,
) -> Result<(), GenerateError> {
    let rendered = render_trajectory(scene, trajectory, k, size)?;
    for ((id, pose), (image, depth)) in trajectory.frames.iter().zip(&rendered) {
        crate::dataset::save_frame(out_dir, *id, image, depth, pose)?;
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Write(#[from] crate::dataset::DatasetError),
}

/// Render and check a whole trajectory, erroring on cameras outside the
/// scene or on insufficient overlap between consecutive frames.
pub fn render_trajectory(
    scene: &PlanarScene,
    trajectory: &Trajectory,
    k: &Intrinsics,
    size: (usize, usize),
) -> Result<Vec<(ImageBuffer<f64>, DepthMap<f64>)>, RenderError> {
    for (frame, pose) in &trajectory.frames {
        if scene.distance_to_nearest_surface(pose.position) < 1e-6 {
            return Err(RenderError::CameraOnPlane { frame: *frame });
        }
    }
    let rendered: Result<Vec<_>, _> = trajectory
        .frames
        .iter()
        .map(|(_, pose)| render_frame(scene, pose, k, size))
        .collect();
    let rendered = rendered?;
    let fractions = covisibility_fractions(scene, trajectory, k, size)?;
    for (i, fraction) in fractions.iter().enumerate() {
        if *fraction < MIN_COVISIBILITY {
            return Err(RenderError::InsufficientOverlap {
                a: trajectory.frames[i].0,
                b: trajectory.frames[i + 1].0,
                fraction: *fraction,
                min: MIN_COVISIBILITY,
            });
        }
    }
    Ok(rendered)
}
