//! Evaluation protocol: Sim(3) trajectory alignment, median pose errors, and
//! median-scaled depth metrics with scale-consistency statistics.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::geometry::{
    axis_angle_to_matrix, matrix_to_axis_angle, Mat3, Pose, RotationMatrix, Vec3,
};
use crate::view_synthesis::DepthMap;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("similarity alignment needs at least 3 correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("point sets have unequal lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("point configuration is degenerate ({0}); alignment is not unique")]
    Degenerate(&'static str),
    #[error("no frame had any pixel inside the evaluation depth range")]
    NoValidFrames,
    #[error("depth maps at frame {frame} have different shapes")]
    ShapeMismatch { frame: usize },
    #[error("failed writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Similarity transform p ↦ scale·R·p + t.
#[derive(Clone, Copy, Debug)]
pub struct Sim3 {
    pub scale: f64,
    pub rotation: RotationMatrix<f64>,
    pub translation: Vec3<f64>,
}

impl Sim3 {
    pub fn identity() -> Self {
        Sim3 {
            scale: 1.0,
            rotation: RotationMatrix::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: Vec3<f64>) -> Vec3<f64> {
        self.rotation.apply(p).scale(self.scale) + self.translation
    }

    /// Sum of squared residuals against a correspondence set.
    pub fn residual(&self, src: &[Vec3<f64>], dst: &[Vec3<f64>]) -> f64 {
        src.iter()
            .zip(dst)
            .map(|(s, d)| (self.apply(*s) - *d).squared_norm())
            .sum()
    }
}

/// Least-squares similarity aligning `src` onto `dst` (closed form via the
/// centered covariance SVD with reflection correction).
pub fn umeyama_sim3(src: &[Vec3<f64>], dst: &[Vec3<f64>]) -> Result<Sim3, EvalError> {
    if src.len() != dst.len() {
        return Err(EvalError::LengthMismatch(src.len(), dst.len()));
    }
    let n = src.len();
    if n < 3 {
        return Err(EvalError::TooFewPoints(n));
    }
    let inv_n = 1.0 / n as f64;
    let mut mu_s = Vec3::zeros();
    let mut mu_d = Vec3::zeros();
    for (s, d) in src.iter().zip(dst) {
        mu_s = mu_s + *s;
        mu_d = mu_d + *d;
    }
    mu_s = mu_s.scale(inv_n);
    mu_d = mu_d.scale(inv_n);

    let mut cov = [[0.0f64; 3]; 3];
    let mut var_src = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let sc = *s - mu_s;
        let dc = *d - mu_d;
        var_src += sc.squared_norm();
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += dc.0[i] * sc.0[j];
            }
        }
    }
    var_src *= inv_n;
    if var_src < 1e-24 {
        return Err(EvalError::Degenerate("coincident source points"));
    }
    let cov_na = nalgebra::Matrix3::from_fn(|i, j| cov[i][j] * inv_n);
    let svd = nalgebra::SVD::new(cov_na, true, true);
    let u = svd.u.ok_or(EvalError::Degenerate("SVD failed"))?;
    let v_t = svd.v_t.ok_or(EvalError::Degenerate("SVD failed"))?;
    let singular = svd.singular_values;
    if singular[1] < 1e-12 * singular[0].max(1e-300) {
        return Err(EvalError::Degenerate("collinear source points"));
    }
    let mut s_sign = nalgebra::Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        s_sign[(2, 2)] = -1.0;
    }
    let r_na = u * s_sign * v_t;
    let mut rot = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            rot[i][j] = r_na[(i, j)];
        }
    }
    let rotation = RotationMatrix::orthonormalized(Mat3(rot), 1e-6)
        .map_err(|_| EvalError::Degenerate("SVD produced a non-rotation"))?;
    let trace_ds = singular[0] + singular[1] + singular[2] * s_sign[(2, 2)];
    let scale = trace_ds / var_src;
    if !(scale > 0.0) {
        return Err(EvalError::Degenerate("non-positive scale"));
    }
    let translation = mu_d - rotation.apply(mu_s).scale(scale);
    Ok(Sim3 {
        scale,
        rotation,
        translation,
    })
}

/// Per-frame and median re-localization errors after alignment.
#[derive(Clone, Debug)]
pub struct PoseErrorReport {
    pub median_position: f64,
    pub median_attitude_deg: f64,
    /// (position error, attitude error in degrees) per frame.
    pub per_frame: Vec<(f64, f64)>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Position and attitude errors of aligned predictions against ground truth.
///
/// The alignment acts on full poses: positions map through the similarity,
/// attitudes are rotated by its rotation. Attitude error is the geodesic
/// angle between the aligned predicted rotation and the ground truth.
pub fn pose_errors(
    predicted: &[Pose<f64>],
    ground_truth: &[Pose<f64>],
    align: &Sim3,
) -> Result<PoseErrorReport, EvalError> {
    if predicted.len() != ground_truth.len() {
        return Err(EvalError::LengthMismatch(
            predicted.len(),
            ground_truth.len(),
        ));
    }
    let mut per_frame = Vec::with_capacity(predicted.len());
    for (p, g) in predicted.iter().zip(ground_truth) {
        let pos_err = (align.apply(p.position) - g.position).norm();
        let r_aligned = align.rotation.mul(&axis_angle_to_matrix(&p.attitude));
        let r_gt = axis_angle_to_matrix(&g.attitude);
        let r_err = r_aligned.transpose().mul(&r_gt);
        let att_err = matrix_to_axis_angle(&r_err).angle().to_degrees();
        per_frame.push((pos_err, att_err));
    }
    let mut pos: Vec<f64> = per_frame.iter().map(|e| e.0).collect();
    let mut att: Vec<f64> = per_frame.iter().map(|e| e.1).collect();
    Ok(PoseErrorReport {
        median_position: median(&mut pos),
        median_attitude_deg: median(&mut att),
        per_frame,
    })
}

/// Depth accuracy metrics after per-frame median scaling.
#[derive(Clone, Debug)]
pub struct DepthMetricReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    /// Standard deviation of per-frame scale factors over their median.
    pub scale_std_over_med: f64,
    pub scale_factors: Vec<f64>,
    /// Frames skipped for an empty evaluation mask.
    pub skipped_frames: Vec<usize>,
}

/// Evaluate predicted against ground-truth depth.
///
/// Per frame the ground truth is masked to [min_depth, max_depth] (invalid
/// pixels are stored as 0 and fall outside), the prediction is scaled so its
/// masked median matches the ground truth's, and the standard error/accuracy
/// metrics are accumulated, then averaged over frames.
pub fn depth_metrics(
    predicted: &[DepthMap<f64>],
    ground_truth: &[DepthMap<f64>],
    min_depth: f64,
    max_depth: f64,
) -> Result<DepthMetricReport, EvalError> {
    if predicted.len() != ground_truth.len() {
        return Err(EvalError::LengthMismatch(
            predicted.len(),
            ground_truth.len(),
        ));
    }
    let mut sums = [0.0f64; 7];
    let mut scale_factors = Vec::new();
    let mut skipped_frames = Vec::new();
    let mut n_frames = 0usize;
    for (frame, (pred, gt)) in predicted.iter().zip(ground_truth).enumerate() {
        if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
            return Err(EvalError::ShapeMismatch { frame });
        }
        let mask: Vec<usize> = (0..gt.data().len())
            .filter(|&i| {
                let d = gt.data()[i];
                d >= min_depth && d <= max_depth
            })
            .collect();
        if mask.is_empty() {
            skipped_frames.push(frame);
            continue;
        }
        let gt_vals: Vec<f64> = mask.iter().map(|&i| gt.data()[i]).collect();
        let mut pred_vals: Vec<f64> = mask.iter().map(|&i| pred.data()[i]).collect();
        let scale = median(&mut gt_vals.clone()) / median(&mut pred_vals.clone());
        scale_factors.push(scale);
        for p in pred_vals.iter_mut() {
            *p *= scale;
        }
        let n = mask.len() as f64;
        let mut acc = [0.0f64; 7];
        for (&d_hat, &d) in pred_vals.iter().zip(&gt_vals) {
            let diff = d_hat - d;
            acc[0] += diff.abs() / d;
            acc[1] += diff * diff / d;
            acc[2] += diff * diff;
            acc[3] += (d_hat.ln() - d.ln()).powi(2);
            let ratio = (d_hat / d).max(d / d_hat);
            acc[4] += f64::from(ratio < 1.25);
            acc[5] += f64::from(ratio < 1.25 * 1.25);
            acc[6] += f64::from(ratio < 1.25 * 1.25 * 1.25);
        }
        sums[0] += acc[0] / n;
        sums[1] += acc[1] / n;
        sums[2] += (acc[2] / n).sqrt();
        sums[3] += (acc[3] / n).sqrt();
        sums[4] += acc[4] / n;
        sums[5] += acc[5] / n;
        sums[6] += acc[6] / n;
        n_frames += 1;
    }
    if n_frames == 0 {
        return Err(EvalError::NoValidFrames);
    }
    let inv = 1.0 / n_frames as f64;
    let scale_std_over_med = {
        let mean = scale_factors.iter().sum::<f64>() / scale_factors.len() as f64;
        let var = scale_factors
            .iter()
            .map(|s| (s - mean) * (s - mean))
            .sum::<f64>()
            / scale_factors.len() as f64;
        let med = median(&mut scale_factors.clone());
        var.sqrt() / med
    };
    Ok(DepthMetricReport {
        abs_rel: sums[0] * inv,
        sq_rel: sums[1] * inv,
        rmse: sums[2] * inv,
        rmse_log: sums[3] * inv,
        delta1: sums[4] * inv,
        delta2: sums[5] * inv,
        delta3: sums[6] * inv,
        scale_std_over_med,
        scale_factors,
        skipped_frames,
    })
}

/// Write a top-down SVG of the aligned trajectory (ground-truth polyline,
/// predicted points, per-frame error segments) and a CSV table of per-frame
/// errors next to it.
pub fn trajectory_export(
    predicted: &[Pose<f64>],
    ground_truth: &[Pose<f64>],
    align: &Sim3,
    svg_path: &Path,
) -> Result<PoseErrorReport, EvalError> {
    let report = pose_errors(predicted, ground_truth, align)?;
    let aligned: Vec<Vec3<f64>> = predicted
        .iter()
        .map(|p| align.apply(p.position))
        .collect();
    let gt_pos: Vec<Vec3<f64>> = ground_truth.iter().map(|p| p.position).collect();

    // Top-down view: world x to the right, world z upward.
    let xs: Vec<f64> = aligned.iter().chain(&gt_pos).map(|p| p.0[0]).collect();
    let zs: Vec<f64> = aligned.iter().chain(&gt_pos).map(|p| p.0[2]).collect();
    let (min_x, max_x) = bounds(&xs);
    let (min_z, max_z) = bounds(&zs);
    let span = (max_x - min_x).max(max_z - min_z).max(1e-9);
    let margin = 0.08 * span;
    let view = 512.0;
    let to_px = |p: &Vec3<f64>| {
        let x = (p.0[0] - min_x + margin) / (span + 2.0 * margin) * view;
        let y = view - (p.0[2] - min_z + margin) / (span + 2.0 * margin) * view;
        (x, y)
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{view}\" height=\"{view}\" viewBox=\"0 0 {view} {view}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let polyline: Vec<String> = gt_pos
        .iter()
        .map(|p| {
            let (x, y) = to_px(p);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    svg.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"blue\" stroke-width=\"1.5\"/>\n",
        polyline.join(" ")
    ));
    for (a, g) in aligned.iter().zip(&gt_pos) {
        let (ax, ay) = to_px(a);
        let (gx, gy) = to_px(g);
        svg.push_str(&format!(
            "<line x1=\"{ax:.2}\" y1=\"{ay:.2}\" x2=\"{gx:.2}\" y2=\"{gy:.2}\" stroke=\"gray\" stroke-width=\"0.8\"/>\n"
        ));
    }
    for a in &aligned {
        let (x, y) = to_px(a);
        svg.push_str(&format!(
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2.5\" fill=\"red\"/>\n"
        ));
    }
    svg.push_str("</svg>\n");
    write_file(svg_path, svg.as_bytes())?;

    let csv_path = svg_path.with_extension("csv");
    let mut csv = String::from("frame,position_error,attitude_error_deg\n");
    for (i, (pos, att)) in report.per_frame.iter().enumerate() {
        csv.push_str(&format!("{i},{pos:.9},{att:.9}\n"));
    }
    write_file(&csv_path, csv.as_bytes())?;
    Ok(report)
}

fn bounds(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), EvalError> {
    let mut file = std::fs::File::create(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(bytes).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}
