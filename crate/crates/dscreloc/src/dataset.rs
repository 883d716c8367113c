//! Dataset ingestion and persistence in the 7-scenes file layout:
//! `frame-%06d.color.png` (8-bit RGB), `frame-%06d.depth.png` (16-bit gray,
//! millimeters, 65535 = invalid), `frame-%06d.pose.txt` (4×4 camera-to-world
//! matrix, row per line).

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geometry::{
    axis_angle_to_matrix, matrix_to_axis_angle, Mat3, Pose, RotationMatrix, Vec3,
};
use crate::view_synthesis::{DepthMap, ImageBuffer};

/// Sentinel for invalid depth pixels in the 16-bit millimeter encoding.
pub const DEPTH_INVALID: u16 = u16::MAX;
/// Largest encodable depth in meters; deeper values saturate.
pub const DEPTH_SATURATION_M: f64 = (DEPTH_INVALID - 1) as f64 / 1000.0;
/// Orthonormality tolerance accepted from pose files before renormalizing.
pub const POSE_ORTHONORMALITY_TOL: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("no frames found under {0}")]
    EmptyDataset(PathBuf),
    #[error("frame ids are not strictly increasing at {0}")]
    NonMonotonicIds(PathBuf),
    #[error("{path}: expected an 8-bit RGB color image")]
    ColorFormat { path: PathBuf },
    #[error("{path}: expected a 16-bit grayscale depth image")]
    DepthFormat { path: PathBuf },
    #[error("{path}: image is {got:?}, expected {want:?}")]
    DimensionMismatch {
        path: PathBuf,
        want: (u32, u32),
        got: (u32, u32),
    },
    #[error("{path}: malformed pose matrix: {reason}")]
    PoseFormat { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Paths of one frame's triplet.
#[derive(Clone, Debug)]
pub struct FrameRecord {
    pub id: usize,
    pub color_path: PathBuf,
    pub depth_path: PathBuf,
    pub pose_path: PathBuf,
}

/// Ordered frame records for one directory (optionally a named split
/// subdirectory).
#[derive(Clone, Debug)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub split: Option<String>,
    pub frames: Vec<FrameRecord>,
}

/// Decoded dataset: unit-range images, metric depth with invalid pixels set
/// to zero, camera-to-world poses.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub index: DatasetIndex,
    pub images: Vec<ImageBuffer<f64>>,
    pub depths: Vec<DepthMap<f64>>,
    pub poses: Vec<Pose<f64>>,
    pub invalid_depth_counts: Vec<usize>,
}

impl LoadedDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.images[0].width(), self.images[0].height())
    }
}

fn frame_paths(dir: &Path, id: usize) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("frame-{id:06}.color.png")),
        dir.join(format!("frame-{id:06}.depth.png")),
        dir.join(format!("frame-{id:06}.pose.txt")),
    )
}

/// Scan a directory for frame triplets and verify all three files exist for
/// every discovered id.
pub fn index_dataset(root: &Path, split: Option<&str>) -> Result<DatasetIndex, DatasetError> {
    let dir = match split {
        Some(s) => root.join(s),
        None => root.to_path_buf(),
    };
    let entries = std::fs::read_dir(&dir).map_err(io_err(&dir))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(io_err(&dir))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(rest) = name.strip_prefix("frame-") {
            if let Some(id_str) = rest.strip_suffix(".color.png") {
                if let Ok(id) = id_str.parse::<usize>() {
                    ids.push(id);
                }
            }
        }
    }
    if ids.is_empty() {
        return Err(DatasetError::EmptyDataset(dir));
    }
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(DatasetError::NonMonotonicIds(dir));
    }
    let mut frames = Vec::with_capacity(ids.len());
    for id in ids {
        let (color_path, depth_path, pose_path) = frame_paths(&dir, id);
        for p in [&color_path, &depth_path, &pose_path] {
            if !p.exists() {
                return Err(DatasetError::MissingFile(p.clone()));
            }
        }
        frames.push(FrameRecord {
            id,
            color_path,
            depth_path,
            pose_path,
        });
    }
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        split: split.map(str::to_owned),
        frames,
    })
}

fn load_color(path: &Path) -> Result<ImageBuffer<f64>, DatasetError> {
    let decoded = image::open(path).map_err(|source| DatasetError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = match decoded {
        image::DynamicImage::ImageRgb8(rgb) => rgb,
        _ => {
            return Err(DatasetError::ColorFormat {
                path: path.to_path_buf(),
            })
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Ok(ImageBuffer::from_fn(w, h, 3, |x, y, ch| {
        rgb.get_pixel(x as u32, y as u32).0[ch] as f64 / 255.0
    })
    .expect("static channel count"))
}

fn load_depth(path: &Path) -> Result<(DepthMap<f64>, usize), DatasetError> {
    let decoded = image::open(path).map_err(|source| DatasetError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let gray = match decoded {
        image::DynamicImage::ImageLuma16(gray) => gray,
        _ => {
            return Err(DatasetError::DepthFormat {
                path: path.to_path_buf(),
            })
        }
    };
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let mut invalid = 0usize;
    let depth = DepthMap::from_fn(w, h, |x, y| {
        let raw = gray.get_pixel(x as u32, y as u32).0[0];
        if raw == DEPTH_INVALID {
            invalid += 1;
            0.0
        } else {
            raw as f64 / 1000.0
        }
    });
    Ok((depth, invalid))
}

fn load_pose(path: &Path) -> Result<Pose<f64>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let numbers: Vec<f64> = text
        .split_whitespace()
        .map(str::parse::<f64>)
        .collect::<Result<_, _>>()
        .map_err(|e| DatasetError::PoseFormat {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    if numbers.len() != 16 {
        return Err(DatasetError::PoseFormat {
            path: path.to_path_buf(),
            reason: format!("expected 16 numbers, found {}", numbers.len()),
        });
    }
    let bottom = &numbers[12..16];
    if (bottom[0].abs() > 1e-6)
        || (bottom[1].abs() > 1e-6)
        || (bottom[2].abs() > 1e-6)
        || ((bottom[3] - 1.0).abs() > 1e-6)
    {
        return Err(DatasetError::PoseFormat {
            path: path.to_path_buf(),
            reason: "last row is not [0 0 0 1]".into(),
        });
    }
    let mut rot = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            rot[i][j] = numbers[i * 4 + j];
        }
    }
    let rotation = RotationMatrix::orthonormalized(Mat3(rot), POSE_ORTHONORMALITY_TOL)
        .map_err(|e| DatasetError::PoseFormat {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    Ok(Pose {
        attitude: matrix_to_axis_angle(&rotation),
        position: Vec3([numbers[3], numbers[7], numbers[11]]),
    })
}

/// Load color/depth/pose triplets for every indexed frame.
pub fn load_dataset(root: &Path, split: Option<&str>) -> Result<LoadedDataset, DatasetError> {
    let index = index_dataset(root, split)?;
    let mut images = Vec::with_capacity(index.frames.len());
    let mut depths = Vec::with_capacity(index.frames.len());
    let mut poses = Vec::with_capacity(index.frames.len());
    let mut invalid_depth_counts = Vec::with_capacity(index.frames.len());
    let mut size: Option<(u32, u32)> = None;
    for record in &index.frames {
        let color = load_color(&record.color_path)?;
        let (depth, invalid) = load_depth(&record.depth_path)?;
        let this = (color.width() as u32, color.height() as u32);
        if let Some(want) = size {
            if this != want {
                return Err(DatasetError::DimensionMismatch {
                    path: record.color_path.clone(),
                    want,
                    got: this,
                });
            }
        } else {
            size = Some(this);
        }
        if (depth.width() as u32, depth.height() as u32) != this {
            return Err(DatasetError::DimensionMismatch {
                path: record.depth_path.clone(),
                want: this,
                got: (depth.width() as u32, depth.height() as u32),
            });
        }
        poses.push(load_pose(&record.pose_path)?);
        images.push(color);
        depths.push(depth);
        invalid_depth_counts.push(invalid);
    }
    Ok(LoadedDataset {
        index,
        images,
        depths,
        poses,
        invalid_depth_counts,
    })
}

/// Quantize and write one frame triplet.
pub fn save_frame(
    dir: &Path,
    id: usize,
    image: &ImageBuffer<f64>,
    depth: &DepthMap<f64>,
    pose: &Pose<f64>,
) -> Result<(), DatasetError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let (color_path, depth_path, pose_path) = frame_paths(dir, id);

    let (w, h) = (image.width() as u32, image.height() as u32);
    let mut rgb = image::RgbImage::new(w, h);
    for y in 0..image.height() {
        for x in 0..image.width() {
            let px = [0, 1, 2].map(|ch| {
                (image.get(x, y, ch).clamp(0.0, 1.0) * 255.0).round() as u8
            });
            rgb.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    rgb.save(&color_path).map_err(|source| DatasetError::Image {
        path: color_path.clone(),
        source,
    })?;

    let mut gray = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(
        depth.width() as u32,
        depth.height() as u32,
    );
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            let d = depth.get(x, y);
            let raw = if d <= 0.0 {
                DEPTH_INVALID
            } else {
                (d.min(DEPTH_SATURATION_M) * 1000.0).round() as u16
            };
            gray.put_pixel(x as u32, y as u32, image::Luma([raw]));
        }
    }
    gray.save(&depth_path).map_err(|source| DatasetError::Image {
        path: depth_path.clone(),
        source,
    })?;

    let rot = axis_angle_to_matrix(&pose.attitude);
    let mut text = String::new();
    for i in 0..3 {
        text.push_str(&format!(
            "{:.17e} {:.17e} {:.17e} {:.17e}\n",
            rot.0 .0[i][0],
            rot.0 .0[i][1],
            rot.0 .0[i][2],
            pose.position.0[i]
        ));
    }
    text.push_str("0 0 0 1\n");
    std::fs::write(&pose_path, text).map_err(io_err(&pose_path))?;
    Ok(())
}
