//! Python bindings for the main dscreloc types and operations: pose algebra,
//! per-pixel pose recovery, synthetic dataset generation, direct fitting, and
//! the evaluation stack.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use dscreloc::checkpoint::{checkpoint_load, checkpoint_save};
use dscreloc::config::RunConfig;
use dscreloc::dataset::load_dataset;
use dscreloc::eval;
use dscreloc::fit;
use dscreloc::geometry;
use dscreloc::geometry::{AggregateMode, AxisAngle, Pose, Vec3};
use dscreloc::synthetic;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Pinhole camera intrinsics in pixels.
#[pyclass(name = "Intrinsics", module = "dscreloc_py", from_py_object)]
#[derive(Clone)]
struct PyIntrinsics {
    inner: geometry::Intrinsics,
}

#[pymethods]
impl PyIntrinsics {
    #[new]
    fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> PyResult<Self> {
        Ok(PyIntrinsics {
            inner: geometry::Intrinsics::new(fx, fy, cx, cy).map_err(value_err)?,
        })
    }

    #[getter]
    fn fx(&self) -> f64 {
        self.inner.fx
    }

    #[getter]
    fn fy(&self) -> f64 {
        self.inner.fy
    }

    #[getter]
    fn cx(&self) -> f64 {
        self.inner.cx
    }

    #[getter]
    fn cy(&self) -> f64 {
        self.inner.cy
    }

    fn __repr__(&self) -> String {
        format!(
            "Intrinsics(fx={}, fy={}, cx={}, cy={})",
            self.inner.fx, self.inner.fy, self.inner.cx, self.inner.cy
        )
    }
}

/// 6-DoF camera pose: axis-angle attitude plus position.
#[pyclass(name = "Pose", module = "dscreloc_py", from_py_object)]
#[derive(Clone)]
struct PyPose {
    inner: Pose<f64>,
}

#[pymethods]
impl PyPose {
    #[new]
    fn new(attitude: (f64, f64, f64), position: (f64, f64, f64)) -> Self {
        PyPose {
            inner: Pose {
                attitude: AxisAngle(Vec3([attitude.0, attitude.1, attitude.2])),
                position: Vec3([position.0, position.1, position.2]),
            },
        }
    }

    #[getter]
    fn attitude(&self) -> (f64, f64, f64) {
        let a = self.inner.attitude.0 .0;
        (a[0], a[1], a[2])
    }

    #[getter]
    fn position(&self) -> (f64, f64, f64) {
        let p = self.inner.position.0;
        (p[0], p[1], p[2])
    }

    /// The pose as the 6-vector [attitude, position].
    fn six_vector(&self) -> [f64; 6] {
        self.inner.six_vector()
    }

    fn __repr__(&self) -> String {
        let a = self.inner.attitude.0 .0;
        let p = self.inner.position.0;
        format!(
            "Pose(attitude=({:.6}, {:.6}, {:.6}), position=({:.6}, {:.6}, {:.6}))",
            a[0], a[1], a[2], p[0], p[1], p[2]
        )
    }
}

/// Rodrigues rotation matrix of an axis-angle vector, row-major.
#[pyfunction]
fn axis_angle_to_matrix(aa: (f64, f64, f64)) -> [[f64; 3]; 3] {
    geometry::axis_angle_to_matrix(&AxisAngle(Vec3([aa.0, aa.1, aa.2]))).0 .0
}

/// Canonical axis-angle vector of a rotation matrix.
#[pyfunction]
fn matrix_to_axis_angle(matrix: [[f64; 3]; 3]) -> PyResult<(f64, f64, f64)> {
    let rot = geometry::RotationMatrix::from_matrix(geometry::Mat3(matrix), 1e-6)
        .map_err(value_err)?;
    let aa = geometry::matrix_to_axis_angle(&rot).0 .0;
    Ok((aa[0], aa[1], aa[2]))
}

/// Back-project pixel (u, v) at `depth` into the camera frame.
#[pyfunction]
fn back_project(u: f64, v: f64, depth: f64, k: &PyIntrinsics) -> PyResult<(f64, f64, f64)> {
    let q = geometry::back_project(u, v, depth, &k.inner).map_err(value_err)?;
    Ok((q.0 .0[0], q.0 .0[1], q.0 .0[2]))
}

/// Camera pose recovered from one directed scene coordinate (6-vector), its
/// back-projected point distance, and the pixel it belongs to.
#[pyfunction]
fn pose_from_pixel(
    coord: [f64; 6],
    u: f64,
    v: f64,
    depth: f64,
    k: &PyIntrinsics,
) -> PyResult<PyPose> {
    let q = geometry::back_project(u, v, depth, &k.inner).map_err(value_err)?;
    Ok(PyPose {
        inner: geometry::pose_from_pixel(&coord, &q, u, v, &k.inner),
    })
}

/// Aggregate per-pixel poses with `mode` of "mean" or "median".
#[pyfunction]
fn aggregate_pose(poses: Vec<PyPose>, mode: &str) -> PyResult<PyPose> {
    let mode = match mode {
        "mean" => AggregateMode::Mean,
        "median" => AggregateMode::Median,
        other => return Err(value_err(format!("unknown mode `{other}`"))),
    };
    let inner: Vec<Pose<f64>> = poses.iter().map(|p| p.inner).collect();
    Ok(PyPose {
        inner: geometry::aggregate_pose(&inner, mode).map_err(value_err)?,
    })
}

/// Relative transform taking target-camera coordinates to source-camera
/// coordinates; returns (rotation 3×3, translation).
#[pyfunction]
fn relative_transform(
    target: &PyPose,
    source: &PyPose,
) -> ([[f64; 3]; 3], (f64, f64, f64)) {
    let rel = geometry::relative_transform(&target.inner, &source.inner);
    let t = rel.translation.0;
    (rel.rotation.0 .0, (t[0], t[1], t[2]))
}

/// Least-squares Sim(3) aligning `src` onto `dst`; returns
/// (scale, rotation 3×3, translation).
#[pyfunction]
fn umeyama_sim3(
    src: Vec<(f64, f64, f64)>,
    dst: Vec<(f64, f64, f64)>,
) -> PyResult<(f64, [[f64; 3]; 3], (f64, f64, f64))> {
    let to_vec = |pts: &[(f64, f64, f64)]| -> Vec<Vec3<f64>> {
        pts.iter().map(|p| Vec3([p.0, p.1, p.2])).collect()
    };
    let sim = eval::umeyama_sim3(&to_vec(&src), &to_vec(&dst)).map_err(value_err)?;
    let t = sim.translation.0;
    Ok((sim.scale, sim.rotation.0 .0, (t[0], t[1], t[2])))
}

/// Render a synthetic arc/lateral/orbit dataset into `out_dir` together with
/// a ready-to-use run configuration.
#[pyfunction]
#[pyo3(signature = (out_dir, pattern="arc", frames=9, width=80, height=60, seed=7, scale=1.0))]
#[allow(clippy::too_many_arguments)]
fn generate_dataset(
    out_dir: PathBuf,
    pattern: &str,
    frames: usize,
    width: usize,
    height: usize,
    seed: u64,
    scale: f64,
) -> PyResult<()> {
    let pattern = match pattern {
        "arc" => synthetic::TrajectoryPattern::Arc,
        "lateral" => synthetic::TrajectoryPattern::Lateral,
        "orbit" => synthetic::TrajectoryPattern::Orbit,
        other => return Err(value_err(format!("unknown pattern `{other}`"))),
    };
    let k = synthetic::desk_camera((width, height));
    let scene = synthetic::desk_scene(seed, &k);
    let trajectory = synthetic::generate_trajectory(pattern, frames, scale).map_err(value_err)?;
    synthetic::generate_dataset(&scene, &trajectory, &k, (width, height), &out_dir)
        .map_err(runtime_err)?;
    let config = RunConfig {
        image_size: (width, height),
        intrinsics: k,
        fit: fit::FitConfig {
            learning_rate: 0.004,
            learning_rate_final: 0.0002,
            epochs: 280,
            nearby_window: 2,
            distant_activation_epoch: 187,
            pool_factor: 8,
            seed,
            ..fit::FitConfig::default()
        },
        eval_depth_range: (0.1, 10.0),
        data_dir: None,
        output_dir: None,
    };
    config
        .save(&out_dir.join("run.config"))
        .map_err(runtime_err)?;
    Ok(())
}

/// Fit per-frame grids to a dataset and write a checkpoint. Returns the loss
/// history (one value per optimizer step).
#[pyfunction]
#[pyo3(signature = (data_dir, config_path, ckpt_out, epochs=None))]
fn fit_dataset(
    data_dir: PathBuf,
    config_path: PathBuf,
    ckpt_out: PathBuf,
    epochs: Option<usize>,
) -> PyResult<Vec<f64>> {
    let mut config = RunConfig::load(&config_path).map_err(value_err)?;
    if let Some(epochs) = epochs {
        config.fit.epochs = epochs;
    }
    let dataset = load_dataset(&data_dir, None).map_err(runtime_err)?;
    let outcome =
        fit::fit(&dataset.images, &config.intrinsics, &config.fit).map_err(runtime_err)?;
    checkpoint_save(&ckpt_out, &config, &outcome.layout, &outcome.params)
        .map_err(runtime_err)?;
    Ok(outcome.loss_history)
}

/// Median re-localization errors of a fitted checkpoint against the
/// dataset's reference poses, after Sim(3) alignment.
/// Returns (median_position, median_attitude_degrees).
#[pyfunction]
#[pyo3(signature = (ckpt, data_dir, mode="median"))]
fn eval_pose(ckpt: PathBuf, data_dir: PathBuf, mode: &str) -> PyResult<(f64, f64)> {
    let mode = match mode {
        "mean" => AggregateMode::Mean,
        "median" => AggregateMode::Median,
        other => return Err(value_err(format!("unknown mode `{other}`"))),
    };
    let (config, layout, params) = checkpoint_load(&ckpt).map_err(runtime_err)?;
    let dataset = load_dataset(&data_dir, None).map_err(runtime_err)?;
    let mapping = config.fit.mapping();
    let predicted: Vec<Pose<f64>> = (0..layout.n_frames)
        .map(|f| fit::predict_pose(&params, f, &layout, &mapping, &config.intrinsics, mode))
        .collect::<Result<_, _>>()
        .map_err(runtime_err)?;
    let src: Vec<Vec3<f64>> = predicted.iter().map(|p| p.position).collect();
    let dst: Vec<Vec3<f64>> = dataset.poses.iter().map(|p| p.position).collect();
    let align = eval::umeyama_sim3(&src, &dst).map_err(runtime_err)?;
    let report = eval::pose_errors(&predicted, &dataset.poses, &align).map_err(runtime_err)?;
    Ok((report.median_position, report.median_attitude_deg))
}

/// Median-scaled depth metrics of a fitted checkpoint against the dataset's
/// reference depth. Returns a dict with the standard metric names.
#[pyfunction]
#[pyo3(signature = (ckpt, data_dir, min_depth=0.1, max_depth=10.0))]
fn eval_depth(
    py: Python<'_>,
    ckpt: PathBuf,
    data_dir: PathBuf,
    min_depth: f64,
    max_depth: f64,
) -> PyResult<Py<pyo3::types::PyDict>> {
    let (config, layout, params) = checkpoint_load(&ckpt).map_err(runtime_err)?;
    let dataset = load_dataset(&data_dir, None).map_err(runtime_err)?;
    let mapping = config.fit.mapping();
    let predicted = fit::decoded_depths(&params, &layout, &mapping);
    let report = eval::depth_metrics(&predicted, &dataset.depths, min_depth, max_depth)
        .map_err(runtime_err)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("abs_rel", report.abs_rel)?;
    dict.set_item("sq_rel", report.sq_rel)?;
    dict.set_item("rmse", report.rmse)?;
    dict.set_item("rmse_log", report.rmse_log)?;
    dict.set_item("delta1", report.delta1)?;
    dict.set_item("delta2", report.delta2)?;
    dict.set_item("delta3", report.delta3)?;
    dict.set_item("scale_std_over_med", report.scale_std_over_med)?;
    Ok(dict.into())
}

#[pymodule]
fn dscreloc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyIntrinsics>()?;
    m.add_class::<PyPose>()?;
    m.add_function(wrap_pyfunction!(axis_angle_to_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(matrix_to_axis_angle, m)?)?;
    m.add_function(wrap_pyfunction!(back_project, m)?)?;
    m.add_function(wrap_pyfunction!(pose_from_pixel, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_pose, m)?)?;
    m.add_function(wrap_pyfunction!(relative_transform, m)?)?;
    m.add_function(wrap_pyfunction!(umeyama_sim3, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(fit_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(eval_pose, m)?)?;
    m.add_function(wrap_pyfunction!(eval_depth, m)?)?;
    Ok(())
}
