//! Differentiable view synthesis: depth-induced pixel mapping and bilinear
//! resampling of a source image into the target view.

use thiserror::Error;

use crate::geometry::{Intrinsics, RelativeTransform};
use crate::scalar::Real;

/// Transformed points with camera-frame z at or below this are behind the
/// camera for warping purposes.
pub const Z_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("buffer dimensions {got:?} do not match expected {want:?}")]
    DimensionMismatch {
        want: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("channel count {0} is not 1 (gray) or 3 (rgb)")]
    BadChannelCount(usize),
    #[error("image values must be finite and within [0, 1]; offender at ({x}, {y}) channel {ch}: {value}")]
    OutOfRange {
        x: usize,
        y: usize,
        ch: usize,
        value: f64,
    },
    #[error("sample coordinate at ({x}, {y}) lies outside the valid bilinear footprint")]
    InvalidCoordinate { x: usize, y: usize },
}

/// Row-major, channel-interleaved image with values nominally in [0, 1].
#[derive(Clone, Debug)]
pub struct ImageBuffer<S = f64> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<S>,
}

impl<S: Real> ImageBuffer<S> {
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self, SynthesisError> {
        if channels != 1 && channels != 3 {
            return Err(SynthesisError::BadChannelCount(channels));
        }
        Ok(ImageBuffer {
            width,
            height,
            channels,
            data: vec![S::c(0.0); width * height * channels],
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> S,
    ) -> Result<Self, SynthesisError> {
        let mut img = Self::new(width, height, channels)?;
        for y in 0..height {
            for x in 0..width {
                for ch in 0..channels {
                    let v = f(x, y, ch);
                    img.set(x, y, ch, v);
                }
            }
        }
        Ok(img)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, ch: usize) -> S {
        self.data[(y * self.width + x) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, ch: usize, v: S) {
        self.data[(y * self.width + x) * self.channels + ch] = v;
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }
}

impl ImageBuffer<f64> {
    /// Lift to another scalar type as constants.
    pub fn lift<S: Real>(&self) -> ImageBuffer<S> {
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| S::c(v)).collect(),
        }
    }

    /// Check the unit-range invariant.
    pub fn validate_unit_range(&self) -> Result<(), SynthesisError> {
        for y in 0..self.height {
            for x in 0..self.width {
                for ch in 0..self.channels {
                    let v = self.get(x, y, ch);
                    if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                        return Err(SynthesisError::OutOfRange { x, y, ch, value: v });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Dense per-pixel positive depth.
#[derive(Clone, Debug)]
pub struct DepthMap<S = f64> {
    width: usize,
    height: usize,
    data: Vec<S>,
}

impl<S: Real> DepthMap<S> {
    pub fn new(width: usize, height: usize, fill: S) -> Self {
        DepthMap {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        DepthMap {
            width,
            height,
            data,
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), width * height);
        DepthMap {
            width,
            height,
            data,
        }
    }

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

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: S) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }
}

impl DepthMap<f64> {
    pub fn lift<S: Real>(&self) -> DepthMap<S> {
        DepthMap {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| S::c(v)).collect(),
        }
    }
}

/// Continuous source coordinates for every target pixel.
#[derive(Clone, Debug)]
pub struct PixelMap<S = f64> {
    width: usize,
    height: usize,
    coords: Vec<[S; 2]>,
}

impl<S: Real> PixelMap<S> {
    pub fn from_coords(width: usize, height: usize, coords: Vec<[S; 2]>) -> Self {
        assert_eq!(coords.len(), width * height);
        PixelMap {
            width,
            height,
            coords,
        }
    }

    /// Single-query map, handy for probing the sampler directly.
    pub fn from_single(u: S, v: S) -> Self {
        Self::from_coords(1, 1, vec![[u, v]])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [S; 2] {
        self.coords[y * self.width + x]
    }
}

/// Per-pixel validity of the warp.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl ValidMask {
    pub fn new_filled(width: usize, height: usize, value: bool) -> Self {
        ValidMask {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    /// Number of valid pixels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Intersection with another mask of the same size.
    pub fn and(&self, other: &ValidMask) -> ValidMask {
        assert_eq!((self.width, self.height), (other.width, other.height));
        ValidMask {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }
}

/// Map every target pixel into the source image through the target depth and
/// the relative transform.
///
/// A pixel is valid iff its transformed point has z above [`Z_EPSILON`] and
/// the projected coordinate keeps a full 2×2 bilinear footprint inside the
/// source bounds. Invalid pixels get zero coordinates, never NaN.
pub fn pixel_map<S: Real>(
    depth: &DepthMap<S>,
    transform: &RelativeTransform<S>,
    k_target: &Intrinsics,
    k_source: &Intrinsics,
    source_size: (usize, usize),
) -> (PixelMap<S>, ValidMask) {
    let (w, h) = (depth.width(), depth.height());
    let (sw, sh) = source_size;
    let mut coords = Vec::with_capacity(w * h);
    let mut mask = ValidMask::new_filled(w, h, false);
    let u_max = (sw - 1) as f64;
    let v_max = (sh - 1) as f64;
    for y in 0..h {
        for x in 0..w {
            let ray = k_target.ray(S::c(x as f64), S::c(y as f64));
            let p_cam = ray.scale(depth.get(x, y));
            let p_src = transform.apply(p_cam);
            let z = p_src.z();
            if z.value() > Z_EPSILON {
                let inv_z = S::c(1.0) / z;
                let u = (p_src.x() * inv_z).mul_add_c(k_source.fx, k_source.cx);
                let v = (p_src.y() * inv_z).mul_add_c(k_source.fy, k_source.cy);
                let (uv, vv) = (u.value(), v.value());
                let inside = uv >= 0.0 && uv < u_max && vv >= 0.0 && vv < v_max;
                mask.set(x, y, inside);
                if inside {
                    coords.push([u, v]);
                } else {
                    coords.push([S::c(0.0), S::c(0.0)]);
                }
            } else {
                coords.push([S::c(0.0), S::c(0.0)]);
            }
        }
    }
    (
        PixelMap {
            width: w,
            height: h,
            coords,
        },
        mask,
    )
}

/// Bilinear interpolation of `source` at the mapped coordinates.
///
/// Masked-out pixels produce exact zeros and are meant to be excluded from
/// any loss through the mask. Differentiable in both the coordinates and the
/// source values.
pub fn bilinear_sample<S: Real>(
    source: &ImageBuffer<S>,
    coords: &PixelMap<S>,
    mask: &ValidMask,
) -> Result<ImageBuffer<S>, SynthesisError> {
    if (coords.width, coords.height) != (mask.width, mask.height) {
        return Err(SynthesisError::DimensionMismatch {
            want: (coords.width, coords.height, 0),
            got: (mask.width, mask.height, 0),
        });
    }
    let channels = source.channels();
    let mut out = ImageBuffer::new(coords.width, coords.height, channels)?;
    for y in 0..coords.height {
        for x in 0..coords.width {
            if !mask.get(x, y) {
                continue;
            }
            let [u, v] = coords.get(x, y);
            let (uv, vv) = (u.value(), v.value());
            let u0 = uv.floor();
            let v0 = vv.floor();
            let (i0, j0) = (u0 as isize, v0 as isize);
            let in_footprint = i0 >= 0
                && j0 >= 0
                && (i0 as usize) + 1 < source.width()
                && (j0 as usize) + 1 < source.height();
            if !uv.is_finite() || !vv.is_finite() || !in_footprint {
                return Err(SynthesisError::InvalidCoordinate { x, y });
            }
            let (i0, j0) = (i0 as usize, j0 as usize);
            let fu = u.mul_add_c(1.0, -u0);
            let fv = v.mul_add_c(1.0, -v0);
            let one = S::c(1.0);
            let w00 = (one - fu) * (one - fv);
            let w10 = fu * (one - fv);
            let w01 = (one - fu) * fv;
            let w11 = fu * fv;
            for ch in 0..channels {
                let taps = [
                    source.get(i0, j0, ch),
                    source.get(i0 + 1, j0, ch),
                    source.get(i0, j0 + 1, ch),
                    source.get(i0 + 1, j0 + 1, ch),
                ];
                out.set(x, y, ch, S::dot(&[w00, w10, w01, w11], &taps));
            }
        }
    }
    Ok(out)
}

/// Synthesize the target view from a source image: pixel mapping followed by
/// bilinear sampling.
pub fn synthesize<S: Real>(
    source: &ImageBuffer<S>,
    target_depth: &DepthMap<S>,
    transform: &RelativeTransform<S>,
    k_target: &Intrinsics,
    k_source: &Intrinsics,
) -> Result<(ImageBuffer<S>, ValidMask), SynthesisError> {
    let (map, mask) = pixel_map(
        target_depth,
        transform,
        k_target,
        k_source,
        (source.width(), source.height()),
    );
    let image = bilinear_sample(source, &map, &mask)?;
    Ok((image, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{
        axis_angle_to_matrix, AxisAngle, RotationMatrix, Vec3,
    };
    use approx::assert_relative_eq;

    fn k_unit() -> Intrinsics {
        Intrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap()
    }

    fn k_small() -> Intrinsics {
        Intrinsics::new(20.0, 20.0, 2.0, 2.0).unwrap()
    }

    #[test]
    fn identity_transform_gives_identity_map() {
        let k = k_small();
        let depth = DepthMap::new(5, 5, 1.7);
        let (map, mask) = pixel_map(&depth, &RelativeTransform::identity(), &k, &k, (5, 5));
        for y in 0..5 {
            for x in 0..5 {
                let interior = x < 4 && y < 4;
                assert_eq!(mask.get(x, y), interior, "pixel ({x},{y})");
                if interior {
                    let [u, v] = map.get(x, y);
                    assert_relative_eq!(u, x as f64, epsilon = 1e-12);
                    assert_relative_eq!(v, y as f64, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn fronto_parallel_plane_with_x_translation_shifts_uniformly() {
        // Per-pixel projection oracle on a 5×5 image: a plane at depth d seen
        // with a pure x baseline b maps each pixel left by fx·b/d.
        let k = k_small();
        let d = 2.0;
        let b = 0.3;
        let depth = DepthMap::new(5, 5, d);
        let transform = RelativeTransform {
            rotation: RotationMatrix::identity(),
            translation: Vec3([b, 0.0, 0.0]),
        };
        let (map, mask) = pixel_map(&depth, &transform, &k, &k, (5, 5));
        let shift = k.fx * b / d;
        for y in 0..5 {
            for x in 0..5 {
                // Oracle: project (d·(x−cx)/fx + b, d·(y−cy)/fy, d).
                let px = d * (x as f64 - k.cx) / k.fx + b;
                let py = d * (y as f64 - k.cy) / k.fy;
                let want_u = k.fx * px / d + k.cx;
                let want_v = k.fy * py / d + k.cy;
                let inside =
                    want_u >= 0.0 && want_u < 4.0 && want_v >= 0.0 && want_v < 4.0;
                assert_eq!(mask.get(x, y), inside);
                if inside {
                    let [u, v] = map.get(x, y);
                    assert_relative_eq!(u, want_u, epsilon = 1e-12);
                    assert_relative_eq!(u, x as f64 + shift, epsilon = 1e-12);
                    assert_relative_eq!(v, want_v, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn behind_camera_points_are_masked() {
        let k = k_unit();
        let depth = DepthMap::new(3, 3, 1.0);
        // Push everything behind the camera.
        let transform = RelativeTransform {
            rotation: RotationMatrix::identity(),
            translation: Vec3([0.0, 0.0, -2.0]),
        };
        let (_, mask) = pixel_map(&depth, &transform, &k, &k, (3, 3));
        assert_eq!(mask.count(), 0);
    }

    #[test]
    fn bilinear_exact_at_integer_coordinates_and_midpoints() {
        let img = ImageBuffer::from_fn(4, 3, 1, |x, y, _| (x + 4 * y) as f64 / 16.0).unwrap();
        let k = k_unit();
        let depth = DepthMap::new(4, 3, 1.0);
        let (map, mask) = pixel_map(&depth, &RelativeTransform::identity(), &k, &k, (4, 3));
        let out = bilinear_sample(&img, &map, &mask).unwrap();
        for y in 0..2 {
            for x in 0..3 {
                assert_relative_eq!(out.get(x, y, 0), img.get(x, y, 0), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn bilinear_midpoint_between_zero_and_one() {
        let mut img = ImageBuffer::new(2, 2, 1).unwrap();
        img.set(0, 0, 0, 0.0);
        img.set(1, 0, 0, 1.0);
        img.set(0, 1, 0, 0.0);
        img.set(1, 1, 0, 1.0);
        let coords = PixelMap {
            width: 1,
            height: 1,
            coords: vec![[0.5, 0.0]],
        };
        let mask = ValidMask::new_filled(1, 1, true);
        let out = bilinear_sample(&img, &coords, &mask).unwrap();
        assert_relative_eq!(out.get(0, 0, 0), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn bilinear_matches_hand_evaluated_four_tap_sum() {
        // 2×2 image, query at (0.25, 0.75).
        let mut img = ImageBuffer::new(2, 2, 1).unwrap();
        img.set(0, 0, 0, 0.1);
        img.set(1, 0, 0, 0.5);
        img.set(0, 1, 0, 0.9);
        img.set(1, 1, 0, 0.3);
        let coords = PixelMap {
            width: 1,
            height: 1,
            coords: vec![[0.25, 0.75]],
        };
        let mask = ValidMask::new_filled(1, 1, true);
        let out = bilinear_sample(&img, &coords, &mask).unwrap();
        let want = 0.75 * 0.25 * 0.1 + 0.25 * 0.25 * 0.5 + 0.75 * 0.75 * 0.9 + 0.25 * 0.75 * 0.3;
        assert_relative_eq!(out.get(0, 0, 0), want, epsilon = 1e-15);
    }

    #[test]
    fn identity_synthesis_reproduces_source_on_valid_mask() {
        let k = k_small();
        let img = ImageBuffer::from_fn(5, 4, 3, |x, y, ch| {
            ((x * 7 + y * 3 + ch * 5) % 11) as f64 / 11.0
        })
        .unwrap();
        let depth = DepthMap::new(5, 4, 0.8);
        let (out, mask) =
            synthesize(&img, &depth, &RelativeTransform::identity(), &k, &k).unwrap();
        assert!(mask.count() > 0);
        for y in 0..4 {
            for x in 0..5 {
                if mask.get(x, y) {
                    for ch in 0..3 {
                        assert_relative_eq!(
                            out.get(x, y, ch),
                            img.get(x, y, ch),
                            epsilon = 1e-12
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn extreme_transform_reports_empty_valid_set() {
        let k = k_unit();
        let img = ImageBuffer::from_fn(3, 3, 1, |x, _, _| x as f64 / 3.0).unwrap();
        let depth = DepthMap::new(3, 3, 1.0);
        let transform = RelativeTransform {
            rotation: axis_angle_to_matrix(&AxisAngle(Vec3([0.0, std::f64::consts::PI, 0.0]))),
            translation: Vec3([0.0, 0.0, 0.0]),
        };
        let (out, mask) = synthesize(&img, &depth, &transform, &k, &k).unwrap();
        assert_eq!(mask.count(), 0);
        for v in out.data() {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn mask_soundness_every_valid_pixel_has_full_footprint() {
        let k = k_small();
        let depth = DepthMap::from_fn(6, 5, |x, y| 0.5 + 0.1 * ((x + y) as f64));
        let transform = RelativeTransform {
            rotation: axis_angle_to_matrix(&AxisAngle(Vec3([0.02, -0.03, 0.01]))),
            translation: Vec3([0.05, -0.02, 0.03]),
        };
        let (map, mask) = pixel_map(&depth, &transform, &k, &k, (6, 5));
        for y in 0..5 {
            for x in 0..6 {
                if mask.get(x, y) {
                    let [u, v] = map.get(x, y);
                    let (i0, j0) = (u.floor() as usize, v.floor() as usize);
                    assert!(u >= 0.0 && v >= 0.0);
                    assert!(i0 + 1 <= 5 && j0 + 1 <= 4);
                }
            }
        }
    }
}
