//! Pose algebra and per-pixel camera-pose recovery from directed scene
//! coordinates and depth.
//!
//! Everything here is generic over [`Real`], so the same formulas serve the
//! plain forward path and the gradient tape. Rotations are parameterized as
//! axis-angle vectors (direction = axis, magnitude = angle in radians).

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("intrinsics must have positive finite focal lengths, got fx={fx} fy={fy}")]
    InvalidIntrinsics { fx: f64, fy: f64 },
    #[error("back-projection requires a strictly positive depth, got {0}")]
    NonPositiveDepth(f64),
    #[error("cannot aggregate an empty pose list")]
    EmptyPoseList,
    #[error("matrix is not a rotation (orthonormality residual {residual:.3e} exceeds {tol:.1e})")]
    NotARotation { residual: f64, tol: f64 },
}

// ---------------------------------------------------------------------------
// Small fixed-size linear algebra, generic over the scalar.
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec3<S = f64>(pub [S; 3]);

impl<S: Real> Vec3<S> {
    pub fn new(x: S, y: S, z: S) -> Self {
        Vec3([x, y, z])
    }

    pub fn zeros() -> Self {
        Vec3([S::c(0.0); 3])
    }

    pub fn x(self) -> S {
        self.0[0]
    }

    pub fn y(self) -> S {
        self.0[1]
    }

    pub fn z(self) -> S {
        self.0[2]
    }

    pub fn dot(self, o: Self) -> S {
        S::dot(&self.0, &o.0)
    }

    pub fn cross(self, o: Self) -> Self {
        let [a, b, c] = self.0;
        let [d, e, f] = o.0;
        Vec3([b * f - c * e, c * d - a * f, a * e - b * d])
    }

    pub fn squared_norm(self) -> S {
        self.dot(self)
    }

    pub fn norm(self) -> S {
        self.squared_norm().sqrt()
    }

    pub fn scale(self, k: S) -> Self {
        Vec3([self.0[0] * k, self.0[1] * k, self.0[2] * k])
    }

    pub fn values(self) -> Vec3<f64> {
        Vec3([self.0[0].value(), self.0[1].value(), self.0[2].value()])
    }

    pub fn lift(v: Vec3<f64>) -> Self {
        Vec3([S::c(v.0[0]), S::c(v.0[1]), S::c(v.0[2])])
    }
}

impl<S: Real> std::ops::Add for Vec3<S> {
    type Output = Vec3<S>;
    fn add(self, o: Self) -> Self {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl<S: Real> std::ops::Sub for Vec3<S> {
    type Output = Vec3<S>;
    fn sub(self, o: Self) -> Self {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl<S: Real> std::ops::Neg for Vec3<S> {
    type Output = Vec3<S>;
    fn neg(self) -> Self {
        Vec3([-self.0[0], -self.0[1], -self.0[2]])
    }
}

/// Row-major 3×3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3<S = f64>(pub [[S; 3]; 3]);

impl<S: Real> Mat3<S> {
    pub fn identity() -> Self {
        let o = S::c(1.0);
        let z = S::c(0.0);
        Mat3([[o, z, z], [z, o, z], [z, z, o]])
    }

    pub fn transpose(self) -> Self {
        let m = self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn mul_vec(&self, v: Vec3<S>) -> Vec3<S> {
        Vec3([
            S::dot(&self.0[0], &v.0),
            S::dot(&self.0[1], &v.0),
            S::dot(&self.0[2], &v.0),
        ])
    }

    pub fn mul_mat(&self, o: &Mat3<S>) -> Mat3<S> {
        let t = o.transpose();
        let mut out = [[S::c(0.0); 3]; 3];
        for (i, row) in self.0.iter().enumerate() {
            for (j, col) in t.0.iter().enumerate() {
                out[i][j] = S::dot(row, col);
            }
        }
        Mat3(out)
    }

    pub fn trace(&self) -> S {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn col(&self, j: usize) -> Vec3<S> {
        Vec3([self.0[0][j], self.0[1][j], self.0[2][j]])
    }

    pub fn values(&self) -> Mat3<f64> {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = self.0[i][j].value();
            }
        }
        Mat3(out)
    }

    pub fn lift(m: Mat3<f64>) -> Self {
        let mut out = [[S::c(0.0); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = S::c(m.0[i][j]);
            }
        }
        Mat3(out)
    }
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        let ok = fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()
            && cx.is_finite() && cy.is_finite();
        if !ok {
            return Err(GeometryError::InvalidIntrinsics { fx, fy });
        }
        Ok(Intrinsics { fx, fy, cx, cy })
    }

    /// Unprojected homogeneous ray K⁻¹·[u, v, 1]ᵀ (z component is 1).
    pub fn ray<S: Real>(&self, u: S, v: S) -> Vec3<S> {
        Vec3([
            u.mul_add_c(1.0 / self.fx, -self.cx / self.fx),
            v.mul_add_c(1.0 / self.fy, -self.cy / self.fy),
            S::c(1.0),
        ])
    }
}

/// Rotation as an axis-angle 3-vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisAngle<S = f64>(pub Vec3<S>);

impl<S: Real> AxisAngle<S> {
    pub fn zero() -> Self {
        AxisAngle(Vec3::zeros())
    }

    pub fn angle(&self) -> f64 {
        self.0.values().norm()
    }
}

impl AxisAngle<f64> {
    /// Reduce to the canonical representative with angle in [0, π].
    ///
    /// At an angle of exactly π the two representatives ±πk are equivalent;
    /// the one whose first nonzero axis component is positive is returned.
    pub fn canonical(self) -> Self {
        let theta = self.0.norm();
        if theta == 0.0 {
            return AxisAngle(Vec3::zeros());
        }
        let axis = self.0.scale(1.0 / theta);
        let mut angle = theta % (2.0 * std::f64::consts::PI);
        let mut axis = axis;
        if angle > std::f64::consts::PI {
            angle = 2.0 * std::f64::consts::PI - angle;
            axis = -axis;
        }
        if (angle - std::f64::consts::PI).abs() < 1e-15 {
            angle = std::f64::consts::PI;
            for k in 0..3 {
                if axis.0[k].abs() > 1e-12 {
                    if axis.0[k] < 0.0 {
                        axis = -axis;
                    }
                    break;
                }
            }
        }
        AxisAngle(axis.scale(angle))
    }
}

/// Orthonormal, right-handed 3×3 rotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationMatrix<S = f64>(pub Mat3<S>);

impl<S: Real> RotationMatrix<S> {
    pub fn identity() -> Self {
        RotationMatrix(Mat3::identity())
    }

    pub fn transpose(self) -> Self {
        RotationMatrix(self.0.transpose())
    }

    pub fn mul(&self, o: &RotationMatrix<S>) -> RotationMatrix<S> {
        RotationMatrix(self.0.mul_mat(&o.0))
    }

    pub fn apply(&self, v: Vec3<S>) -> Vec3<S> {
        self.0.mul_vec(v)
    }

    pub fn values(&self) -> RotationMatrix<f64> {
        RotationMatrix(self.0.values())
    }
}

impl RotationMatrix<f64> {
    /// Orthonormality residual max(|RᵀR − I|) and determinant check.
    pub fn orthonormality_residual(m: &Mat3<f64>) -> f64 {
        let gram = m.transpose().mul_mat(m);
        let mut res: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                res = res.max((gram.0[i][j] - want).abs());
            }
        }
        let det = det3(m);
        res.max((det - 1.0).abs())
    }

    /// Accept `m` as a rotation if it is orthonormal with det +1 within `tol`.
    pub fn from_matrix(m: Mat3<f64>, tol: f64) -> Result<Self, GeometryError> {
        let residual = Self::orthonormality_residual(&m);
        if residual > tol {
            return Err(GeometryError::NotARotation { residual, tol });
        }
        Ok(RotationMatrix(m))
    }

    /// Re-orthonormalize a nearly orthonormal matrix (Gram-Schmidt on rows).
    pub fn orthonormalized(m: Mat3<f64>, tol: f64) -> Result<Self, GeometryError> {
        let residual = Self::orthonormality_residual(&m);
        if residual > tol {
            return Err(GeometryError::NotARotation { residual, tol });
        }
        let r0 = Vec3(m.0[0]);
        let r0 = r0.scale(1.0 / r0.norm());
        let r1 = Vec3(m.0[1]);
        let r1 = r1 - r0.scale(r0.dot(r1));
        let r1 = r1.scale(1.0 / r1.norm());
        let r2 = r0.cross(r1);
        Ok(RotationMatrix(Mat3([r0.0, r1.0, r2.0])))
    }
}

fn det3(m: &Mat3<f64>) -> f64 {
    let a = m.0;
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// 6-DoF camera pose: axis-angle attitude plus position in scene units.
///
/// The homogeneous transform of a pose maps camera coordinates to world
/// coordinates; the position is the camera center in the world frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose<S = f64> {
    pub attitude: AxisAngle<S>,
    pub position: Vec3<S>,
}

impl<S: Real> Pose<S> {
    pub fn new(attitude: AxisAngle<S>, position: Vec3<S>) -> Self {
        Pose { attitude, position }
    }

    pub fn identity() -> Self {
        Pose {
            attitude: AxisAngle::zero(),
            position: Vec3::zeros(),
        }
    }

    /// The pose as the 6-vector [attitude; position].
    pub fn six_vector(&self) -> [S; 6] {
        let a = self.attitude.0 .0;
        let p = self.position.0;
        [a[0], a[1], a[2], p[0], p[1], p[2]]
    }

    pub fn from_six_vector(v: [S; 6]) -> Self {
        Pose {
            attitude: AxisAngle(Vec3([v[0], v[1], v[2]])),
            position: Vec3([v[3], v[4], v[5]]),
        }
    }

    pub fn values(&self) -> Pose<f64> {
        Pose {
            attitude: AxisAngle(self.attitude.0.values()),
            position: self.position.values(),
        }
    }
}

/// Camera-frame point obtained by back-projection, scene units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointRay<S = f64>(pub Vec3<S>);

impl<S: Real> PointRay<S> {
    pub fn distance(&self) -> S {
        self.0.norm()
    }
}

/// Rigid transform taking target-camera coordinates to source-camera
/// coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativeTransform<S = f64> {
    pub rotation: RotationMatrix<S>,
    pub translation: Vec3<S>,
}

impl<S: Real> RelativeTransform<S> {
    pub fn identity() -> Self {
        RelativeTransform {
            rotation: RotationMatrix::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: Vec3<S>) -> Vec3<S> {
        self.rotation.apply(p) + self.translation
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Rodrigues rotation of an axis-angle vector.
///
/// Uses R = I + A·[w]× + B·[w]×² with A = sinθ/θ and B = (1−cosθ)/θ²,
/// switching to their series near θ = 0 so the map stays smooth there.
pub fn axis_angle_to_matrix<S: Real>(aa: &AxisAngle<S>) -> RotationMatrix<S> {
    let w = aa.0;
    let t2 = w.squared_norm();
    let (a, b) = if t2.value() < 1e-8 {
        (
            S::c(1.0) - t2 * S::c(1.0 / 6.0) + t2 * t2 * S::c(1.0 / 120.0),
            S::c(0.5) - t2 * S::c(1.0 / 24.0) + t2 * t2 * S::c(1.0 / 720.0),
        )
    } else {
        let theta = t2.sqrt();
        (theta.sin() / theta, (S::c(1.0) - theta.cos()) / t2)
    };
    let [x, y, z] = w.0;
    let one = S::c(1.0);
    let xx = x * x;
    let yy = y * y;
    let zz = z * z;
    let xy = x * y;
    let xz = x * z;
    let yz = y * z;
    RotationMatrix(Mat3([
        [one - b * (yy + zz), b * xy - a * z, b * xz + a * y],
        [b * xy + a * z, one - b * (xx + zz), b * yz - a * x],
        [b * xz - a * y, b * yz + a * x, one - b * (xx + yy)],
    ]))
}

/// Axis-angle vector of a rotation, smooth for angles below π.
///
/// Near a half-turn the axis-angle chart itself is non-smooth; there the
/// value is still computed (from the matrix diagonal) but enters the tape as
/// a constant, cutting the gradient.
pub fn log_rotation<S: Real>(r: &RotationMatrix<S>) -> AxisAngle<S> {
    let m = &r.0 .0;
    let w = Vec3([
        (m[2][1] - m[1][2]) * S::c(0.5),
        (m[0][2] - m[2][0]) * S::c(0.5),
        (m[1][0] - m[0][1]) * S::c(0.5),
    ]);
    let s2 = w.squared_norm(); // sin²θ
    let c = (r.0.trace() - S::c(1.0)) * S::c(0.5); // cosθ
    if s2.value() < 1e-8 {
        if c.value() > 0.0 {
            // asin(s)/s = 1 + s²/6 + 3s⁴/40 near zero rotation.
            AxisAngle(w.scale(S::c(1.0) + s2 * S::c(1.0 / 6.0) + s2 * s2 * S::c(3.0 / 40.0)))
        } else {
            let exact = matrix_to_axis_angle(&r.values());
            AxisAngle(Vec3::lift(exact.0))
        }
    } else {
        let s = s2.sqrt();
        let theta = s.atan2(c);
        AxisAngle(w.scale(theta / s))
    }
}

/// Canonical axis-angle of a rotation matrix, exact on the full angle range.
pub fn matrix_to_axis_angle(r: &RotationMatrix<f64>) -> AxisAngle<f64> {
    let m = &r.0 .0;
    let w = Vec3([
        (m[2][1] - m[1][2]) * 0.5,
        (m[0][2] - m[2][0]) * 0.5,
        (m[1][0] - m[0][1]) * 0.5,
    ]);
    let s = w.norm().min(1.0);
    let c = ((r.0.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = s.atan2(c);
    if s > 1e-7 {
        AxisAngle(w.scale(theta / s)).canonical()
    } else if c > 0.0 {
        // Near identity: aa ≈ w with cubic correction.
        AxisAngle(w.scale(1.0 + s * s / 6.0))
    } else {
        // Near a half-turn: recover the axis from the symmetric part.
        // R = I + 2[k]×² ⇒ (R + I)/2 = kkᵀ for θ = π.
        let theta = std::f64::consts::PI - s.asin().min(std::f64::consts::PI);
        let kx = ((m[0][0] + 1.0) * 0.5).max(0.0).sqrt();
        let ky = ((m[1][1] + 1.0) * 0.5).max(0.0).sqrt();
        let kz = ((m[2][2] + 1.0) * 0.5).max(0.0).sqrt();
        // Fix relative signs from the off-diagonal sums.
        let (kx, ky, kz) = if kx >= ky && kx >= kz {
            let sy = if m[0][1] + m[1][0] < 0.0 { -1.0 } else { 1.0 };
            let sz = if m[0][2] + m[2][0] < 0.0 { -1.0 } else { 1.0 };
            (kx, sy * ky, sz * kz)
        } else if ky >= kx && ky >= kz {
            let sx = if m[0][1] + m[1][0] < 0.0 { -1.0 } else { 1.0 };
            let sz = if m[1][2] + m[2][1] < 0.0 { -1.0 } else { 1.0 };
            (sx * kx, ky, sz * kz)
        } else {
            let sx = if m[0][2] + m[2][0] < 0.0 { -1.0 } else { 1.0 };
            let sy = if m[1][2] + m[2][1] < 0.0 { -1.0 } else { 1.0 };
            (sx * kx, sy * ky, kz)
        };
        let axis = Vec3([kx, ky, kz]);
        let axis = axis.scale(1.0 / axis.norm());
        AxisAngle(axis.scale(theta)).canonical()
    }
}

/// Back-project pixel (u, v) at `depth` to a camera-frame point.
pub fn back_project<S: Real>(
    u: S,
    v: S,
    depth: S,
    k: &Intrinsics,
) -> Result<PointRay<S>, GeometryError> {
    if !(depth.value() > 0.0) {
        return Err(GeometryError::NonPositiveDepth(depth.value()));
    }
    Ok(PointRay(k.ray(u, v).scale(depth)))
}

/// Minimal (zero-roll) rotation taking the optical axis e_z onto the
/// normalized pixel ray.
///
/// Built from R = I + [v]× + [v]×²/(1+c) with v = e_z × d and c = e_z·d,
/// which is smooth everywhere the ray has positive z (always true for a
/// pinhole ray) and reduces to the identity at the principal point.
pub fn ray_rotation<S: Real>(u: S, v: S, k: &Intrinsics) -> RotationMatrix<S> {
    let ray = k.ray(u, v);
    let d = ray.scale(S::c(1.0) / ray.norm());
    let [dx, dy, dz] = d.0;
    // v = e_z × d = (−dy, dx, 0), c = dz.
    let a = -dy;
    let b = dx;
    let one = S::c(1.0);
    let inv = one / (one + dz);
    RotationMatrix(Mat3([
        [one - b * b * inv, a * b * inv, b],
        [a * b * inv, one - a * a * inv, -a],
        [-b, a, one - (a * a + b * b) * inv],
    ]))
}

/// Recover the camera pose seen from one pixel of the directed scene
/// coordinate grid.
///
/// `coord` is the 6-vector [gaze axis-angle; scene position], `q` the
/// back-projected camera-frame point for the pixel. The attitude comes from
/// un-rotating the gaze by the pixel ray rotation; the position translates
/// the scene coordinate along the gaze by the point distance.
pub fn pose_from_pixel<S: Real>(
    coord: &[S; 6],
    q: &PointRay<S>,
    u: S,
    v: S,
    k: &Intrinsics,
) -> Pose<S> {
    let gaze = AxisAngle(Vec3([coord[0], coord[1], coord[2]]));
    let tau = Vec3([coord[3], coord[4], coord[5]]);
    let r_gaze = axis_angle_to_matrix(&gaze);
    let r_pixel = ray_rotation(u, v, k);
    let r_pose = r_pixel.transpose().mul(&r_gaze);
    let attitude = log_rotation(&r_pose);
    let position = r_gaze.0.col(2).scale(q.distance()) + tau;
    Pose { attitude, position }
}

/// Exact inverse of [`pose_from_pixel`]: the directed scene coordinate that
/// reproduces `pose` at pixel (u, v) for a point at camera distance `dist`.
pub fn directed_coord_for_pose(
    pose: &Pose<f64>,
    dist: f64,
    u: f64,
    v: f64,
    k: &Intrinsics,
) -> [f64; 6] {
    let r_pose = axis_angle_to_matrix(&pose.attitude);
    let r_pixel = ray_rotation(u, v, k);
    let r_gaze = r_pixel.mul(&r_pose);
    let gaze = matrix_to_axis_angle(&r_gaze);
    let tau = pose.position - r_gaze.0.col(2).scale(dist);
    let g = gaze.0 .0;
    [g[0], g[1], g[2], tau.0[0], tau.0[1], tau.0[2]]
}

/// Component-wise mean of poses over their 6-vectors (training aggregate).
pub fn mean_pose<S: Real>(poses: &[Pose<S>]) -> Result<Pose<S>, GeometryError> {
    if poses.is_empty() {
        return Err(GeometryError::EmptyPoseList);
    }
    let inv_n = 1.0 / poses.len() as f64;
    let mut out = [S::c(0.0); 6];
    let mut column: Vec<S> = Vec::with_capacity(poses.len());
    for (k, slot) in out.iter_mut().enumerate() {
        column.clear();
        column.extend(poses.iter().map(|p| p.six_vector()[k]));
        *slot = S::sum_slice(&column).mul_add_c(inv_n, 0.0);
    }
    Ok(Pose::from_six_vector(out))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AggregateMode {
    /// Component-wise mean (training).
    Mean,
    /// Component-wise median (testing; robust to outlier pixels).
    Median,
}

/// Aggregate per-pixel poses into the final pose; the result attitude is
/// re-canonicalized.
pub fn aggregate_pose(
    poses: &[Pose<f64>],
    mode: AggregateMode,
) -> Result<Pose<f64>, GeometryError> {
    if poses.is_empty() {
        return Err(GeometryError::EmptyPoseList);
    }
    let six = match mode {
        AggregateMode::Mean => mean_pose(poses)?.six_vector(),
        AggregateMode::Median => {
            let mut out = [0.0; 6];
            let mut column: Vec<f64> = Vec::with_capacity(poses.len());
            for (k, slot) in out.iter_mut().enumerate() {
                column.clear();
                column.extend(poses.iter().map(|p| p.six_vector()[k]));
                column.sort_by(f64::total_cmp);
                let n = column.len();
                *slot = if n % 2 == 1 {
                    column[n / 2]
                } else {
                    0.5 * (column[n / 2 - 1] + column[n / 2])
                };
            }
            out
        }
    };
    let pose = Pose::from_six_vector(six);
    Ok(Pose {
        attitude: pose.attitude.canonical(),
        position: pose.position,
    })
}

/// Relative transform mapping target-camera coordinates to source-camera
/// coordinates, composed from the two absolute poses.
pub fn relative_transform<S: Real>(target: &Pose<S>, source: &Pose<S>) -> RelativeTransform<S> {
    let r_t = axis_angle_to_matrix(&target.attitude);
    let r_s_inv = axis_angle_to_matrix(&source.attitude).transpose();
    RelativeTransform {
        rotation: r_s_inv.mul(&r_t),
        translation: r_s_inv.apply(target.position - source.position),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rand_vec3(rng: &mut StdRng, scale: f64) -> Vec3<f64> {
        Vec3([
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
        ])
    }

    /// Independent Rodrigues oracle: normalized-axis form
    /// R = cosθ·I + sinθ·[k]× + (1−cosθ)·kkᵀ, evaluated term by term.
    fn rodrigues_oracle(aa: Vec3<f64>) -> Mat3<f64> {
        let theta = aa.norm();
        if theta == 0.0 {
            return Mat3::identity();
        }
        let k = aa.scale(1.0 / theta);
        let (s, c) = (theta.sin(), theta.cos());
        let mut m = [[0.0; 3]; 3];
        let kx = [
            [0.0, -k.0[2], k.0[1]],
            [k.0[2], 0.0, -k.0[0]],
            [-k.0[1], k.0[0], 0.0],
        ];
        for i in 0..3 {
            for j in 0..3 {
                let eye = if i == j { 1.0 } else { 0.0 };
                m[i][j] = c * eye + s * kx[i][j] + (1.0 - c) * k.0[i] * k.0[j];
            }
        }
        Mat3(m)
    }

    #[test]
    fn zero_rotation_is_identity() {
        let r = axis_angle_to_matrix(&AxisAngle::<f64>::zero());
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_eq!(r.0 .0[i][j], want);
            }
        }
    }

    #[test]
    fn half_turn_about_x() {
        let r = axis_angle_to_matrix(&AxisAngle(Vec3([std::f64::consts::PI, 0.0, 0.0])));
        let want = [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(r.0 .0[i][j], want[i][j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn rodrigues_matches_oracle_and_round_trips() {
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..1000 {
            let dir = rand_vec3(&mut rng, 1.0);
            let n = dir.norm();
            if n < 1e-6 {
                continue;
            }
            let angle = rng.random_range(1e-7..std::f64::consts::PI - 1e-6);
            let aa = dir.scale(angle / n);
            let r = axis_angle_to_matrix(&AxisAngle(aa));
            let oracle = rodrigues_oracle(aa);
            for i in 0..3 {
                for j in 0..3 {
                    assert_relative_eq!(r.0 .0[i][j], oracle.0[i][j], epsilon = 1e-12);
                }
            }
            let back = matrix_to_axis_angle(&r);
            for k in 0..3 {
                assert_relative_eq!(back.0 .0[k], aa.0[k], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn log_recovers_half_turns() {
        for axis in [
            Vec3([1.0, 0.0, 0.0]),
            Vec3([0.0, 1.0, 0.0]),
            Vec3([0.6, -0.8, 0.0]),
            Vec3([-0.36, 0.48, 0.8]),
        ] {
            let aa = AxisAngle(axis.scale(std::f64::consts::PI / axis.norm())).canonical();
            let r = axis_angle_to_matrix(&aa);
            let back = matrix_to_axis_angle(&r);
            for k in 0..3 {
                assert_relative_eq!(back.0 .0[k], aa.0 .0[k], epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn tiny_angles_round_trip() {
        let aa = AxisAngle(Vec3([1e-9, -2e-9, 5e-10]));
        let r = axis_angle_to_matrix(&aa);
        let back = matrix_to_axis_angle(&r);
        for k in 0..3 {
            assert_relative_eq!(back.0 .0[k], aa.0 .0[k], epsilon = 1e-15);
        }
    }

    #[test]
    fn back_project_identity_intrinsics() {
        let k = Intrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let q = back_project(0.0, 0.0, 2.0, &k).unwrap();
        assert_eq!(q.0 .0, [0.0, 0.0, 2.0]);
    }

    #[test]
    fn back_project_principal_point_and_offset() {
        let k = Intrinsics::new(100.0, 100.0, 320.0, 240.0).unwrap();
        let q = back_project(320.0, 240.0, 3.0, &k).unwrap();
        assert_relative_eq!(q.0 .0[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(q.0 .0[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(q.0 .0[2], 3.0, epsilon = 1e-12);
        // Explicit 3×3 inverse oracle for the off-center pixel.
        let (u, v, d) = (420.0, 240.0, 3.0);
        let inv = [
            [1.0 / 100.0, 0.0, -320.0 / 100.0],
            [0.0, 1.0 / 100.0, -240.0 / 100.0],
            [0.0, 0.0, 1.0],
        ];
        let h = [u, v, 1.0];
        let mut want = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                want[i] += inv[i][j] * h[j];
            }
            want[i] *= d;
        }
        assert_eq!(want, [3.0, 0.0, 3.0]);
        let q = back_project(u, v, d, &k).unwrap();
        for i in 0..3 {
            assert_relative_eq!(q.0 .0[i], want[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn back_project_rejects_non_positive_depth() {
        let k = Intrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        assert!(back_project(0.0, 0.0, 0.0, &k).is_err());
        assert!(back_project(0.0, 0.0, -1.0, &k).is_err());
    }

    #[test]
    fn ray_rotation_identity_at_principal_point() {
        let k = Intrinsics::new(55.0, 60.0, 12.0, 9.0).unwrap();
        let r = ray_rotation(12.0, 9.0, &k);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(r.0 .0[i][j], want, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn ray_rotation_maps_optical_axis_onto_ray() {
        let k = Intrinsics::new(73.0, 73.0, 39.5, 29.5).unwrap();
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..200 {
            let u = rng.random_range(-20.0..100.0);
            let v = rng.random_range(-20.0..80.0);
            let r = ray_rotation(u, v, &k);
            let d = k.ray(u, v);
            let d = d.scale(1.0 / d.norm());
            let got = r.apply(Vec3([0.0, 0.0, 1.0]));
            for i in 0..3 {
                assert_relative_eq!(got.0[i], d.0[i], epsilon = 1e-12);
            }
            // Orthonormal with unit determinant.
            assert!(RotationMatrix::orthonormality_residual(&r.0) < 1e-12);
        }
    }

    #[test]
    fn ray_rotation_45_degrees() {
        // Unit focal length, pixel one unit right of center: the ray is
        // (1,0,1)/√2 and the rotation angle is π/4 with the cross-product axis.
        let k = Intrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let r = ray_rotation(1.0, 0.0, &k);
        let aa = matrix_to_axis_angle(&r);
        assert_relative_eq!(aa.angle(), std::f64::consts::FRAC_PI_4, epsilon = 1e-12);
        let got = r.apply(Vec3([0.0, 0.0, 1.0]));
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_relative_eq!(got.0[0], s, epsilon = 1e-12);
        assert_relative_eq!(got.0[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(got.0[2], s, epsilon = 1e-12);
    }

    #[test]
    fn pose_from_pixel_trivial_cases() {
        let k = Intrinsics::new(100.0, 100.0, 320.0, 240.0).unwrap();
        // Zero gaze, zero position, principal point, distance d.
        let d = 2.5;
        let q = PointRay(Vec3([0.0, 0.0, d]));
        let pose = pose_from_pixel(&[0.0; 6], &q, 320.0, 240.0, &k);
        assert_relative_eq!(pose.attitude.angle(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(pose.position.0[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(pose.position.0[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(pose.position.0[2], d, epsilon = 1e-12);
        // Zero distance: position equals the stored scene coordinate.
        let q0 = PointRay(Vec3([0.0, 0.0, 0.0]));
        let pose = pose_from_pixel(&[0.0, 0.0, 0.0, 1.0, 2.0, 3.0], &q0, 320.0, 240.0, &k);
        assert_relative_eq!(pose.position.0[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(pose.position.0[1], 2.0, epsilon = 1e-12);
        assert_relative_eq!(pose.position.0[2], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn pose_from_pixel_matches_matrix_oracle() {
        // Independent route through nalgebra's rotation algebra.
        let k = Intrinsics::new(90.0, 85.0, 40.0, 30.0).unwrap();
        let mut rng = StdRng::seed_from_u64(99);
        for _ in 0..1000 {
            let gaze = rand_vec3(&mut rng, 1.2);
            let tau = rand_vec3(&mut rng, 3.0);
            let u = rng.random_range(0.0..80.0);
            let v = rng.random_range(0.0..60.0);
            let depth = rng.random_range(0.2..5.0);
            let q = back_project(u, v, depth, &k).unwrap();
            let coord = [gaze.0[0], gaze.0[1], gaze.0[2], tau.0[0], tau.0[1], tau.0[2]];
            let pose = pose_from_pixel(&coord, &q, u, v, &k);

            let na_gaze = nalgebra::Rotation3::from_scaled_axis(nalgebra::Vector3::new(
                gaze.0[0], gaze.0[1], gaze.0[2],
            ));
            let ray = k.ray(u, v);
            let nray = nalgebra::Vector3::new(ray.0[0], ray.0[1], ray.0[2]).normalize();
            let na_pixel = nalgebra::Rotation3::rotation_between(
                &nalgebra::Vector3::z(),
                &nray,
            )
            .unwrap();
            let na_pose = na_pixel.inverse() * na_gaze;
            let want_att = na_pose.scaled_axis();
            let got_att = pose.attitude.0;
            for i in 0..3 {
                assert_relative_eq!(got_att.0[i], want_att[i], epsilon = 1e-9);
            }
            let dist = (nalgebra::Vector3::new(ray.0[0], ray.0[1], ray.0[2]) * depth).norm();
            let want_pos = na_gaze * (nalgebra::Vector3::z() * dist)
                + nalgebra::Vector3::new(tau.0[0], tau.0[1], tau.0[2]);
            for i in 0..3 {
                assert_relative_eq!(pose.position.0[i], want_pos[i], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn pose_recovery_is_exact_for_consistent_coordinates() {
        // Build the directed coordinate from a known pose against every pixel
        // and check the pose comes back identically.
        let k = Intrinsics::new(70.0, 70.0, 39.5, 29.5).unwrap();
        let pose = Pose {
            attitude: AxisAngle(Vec3([0.2, -0.35, 0.12])),
            position: Vec3([0.4, -0.2, 1.1]),
        };
        for y in 0..6 {
            for x in 0..8 {
                let (u, v) = (x as f64 * 10.0, y as f64 * 10.0);
                let depth = 0.8 + 0.07 * (x + y) as f64;
                let q = back_project(u, v, depth, &k).unwrap();
                let coord = directed_coord_for_pose(&pose, q.distance(), u, v, &k);
                let got = pose_from_pixel(&coord, &q, u, v, &k);
                for i in 0..3 {
                    assert_relative_eq!(got.attitude.0 .0[i], pose.attitude.0 .0[i], epsilon = 1e-9);
                    assert_relative_eq!(got.position.0[i], pose.position.0[i], epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn aggregate_identical_and_mean_median_cases() {
        let pose = Pose {
            attitude: AxisAngle(Vec3([0.1, 0.2, -0.3])),
            position: Vec3([1.0, 2.0, 3.0]),
        };
        for mode in [AggregateMode::Mean, AggregateMode::Median] {
            let agg = aggregate_pose(&[pose; 5], mode).unwrap();
            for i in 0..3 {
                assert_relative_eq!(agg.attitude.0 .0[i], pose.attitude.0 .0[i], epsilon = 1e-12);
                assert_relative_eq!(agg.position.0[i], pose.position.0[i], epsilon = 1e-12);
            }
        }
        let a = Pose {
            attitude: AxisAngle::zero(),
            position: Vec3([1.0, 0.0, 0.0]),
        };
        let b = Pose {
            attitude: AxisAngle::zero(),
            position: Vec3([3.0, 0.0, 0.0]),
        };
        let mean = aggregate_pose(&[a, b], AggregateMode::Mean).unwrap();
        assert_eq!(mean.position.0, [2.0, 0.0, 0.0]);
        // Median is outlier-robust: {0,0,0,0,100} → 0.
        let mut poses = vec![Pose::<f64>::identity(); 4];
        poses.push(Pose {
            attitude: AxisAngle::zero(),
            position: Vec3([100.0, 0.0, 0.0]),
        });
        let med = aggregate_pose(&poses, AggregateMode::Median).unwrap();
        assert_eq!(med.position.0, [0.0, 0.0, 0.0]);
        assert!(aggregate_pose(&[], AggregateMode::Mean).is_err());
    }

    /// 4×4 homogeneous oracle for the relative transform.
    fn relative_oracle(target: &Pose<f64>, source: &Pose<f64>) -> (Mat3<f64>, Vec3<f64>) {
        let to_h = |p: &Pose<f64>| {
            let r = axis_angle_to_matrix(&p.attitude);
            let mut m = nalgebra::Matrix4::identity();
            for i in 0..3 {
                for j in 0..3 {
                    m[(i, j)] = r.0 .0[i][j];
                }
                m[(i, 3)] = p.position.0[i];
            }
            m
        };
        let rel = to_h(source).try_inverse().unwrap() * to_h(target);
        let mut rot = [[0.0; 3]; 3];
        let mut t = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                rot[i][j] = rel[(i, j)];
            }
            t[i] = rel[(i, 3)];
        }
        (Mat3(rot), Vec3(t))
    }

    #[test]
    fn relative_transform_matches_homogeneous_oracle() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..1000 {
            let t_pose = Pose {
                attitude: AxisAngle(rand_vec3(&mut rng, 1.4)),
                position: rand_vec3(&mut rng, 4.0),
            };
            let s_pose = Pose {
                attitude: AxisAngle(rand_vec3(&mut rng, 1.4)),
                position: rand_vec3(&mut rng, 4.0),
            };
            let rel = relative_transform(&t_pose, &s_pose);
            let (want_r, want_t) = relative_oracle(&t_pose, &s_pose);
            for i in 0..3 {
                for j in 0..3 {
                    assert_relative_eq!(rel.rotation.0 .0[i][j], want_r.0[i][j], epsilon = 1e-9);
                }
                assert_relative_eq!(rel.translation.0[i], want_t.0[i], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn relative_transform_identity_and_pure_translation() {
        let p = Pose {
            attitude: AxisAngle(Vec3([0.3, 0.1, -0.2])),
            position: Vec3([1.0, -2.0, 0.5]),
        };
        let rel = relative_transform(&p, &p);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(rel.rotation.0 .0[i][j], want, epsilon = 1e-12);
            }
            assert_relative_eq!(rel.translation.0[i], 0.0, epsilon = 1e-12);
        }
        let t = Pose {
            attitude: AxisAngle::zero(),
            position: Vec3([0.0, 0.0, 1.0]),
        };
        let s = Pose::identity();
        let rel = relative_transform(&t, &s);
        assert_relative_eq!(rel.translation.0[2], 1.0, epsilon = 1e-12);
    }
}
