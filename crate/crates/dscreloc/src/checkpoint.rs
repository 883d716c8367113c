//! Versioned checkpoint container: the resolved run configuration, the grid
//! shapes, and the flat parameter vector, with bit-exact parameter round
//! trips and integrity checks.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::autodiff::ParamStore;
use crate::config::{fnv1a, ConfigError, RunConfig};
use crate::fit::GridLayout;

const MAGIC: &[u8; 8] = b"DSCRELOC";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: not a checkpoint file (bad magic)")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported checkpoint version {got}, expected {want}")]
    Version { path: PathBuf, got: u32, want: u32 },
    #[error("{path}: truncated or corrupt ({reason})")]
    Corrupt { path: PathBuf, reason: String },
    #[error("{path}: embedded config hash does not match its text")]
    HashMismatch { path: PathBuf },
    #[error(
        "{path}: stored grid shapes {got:?} disagree with the configuration-derived shapes {want:?}"
    )]
    ShapeMismatch {
        path: PathBuf,
        want: (u32, u32, u32, u32, u32, u32),
        got: (u32, u32, u32, u32, u32, u32),
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn shape_tuple(layout: &GridLayout) -> (u32, u32, u32, u32, u32, u32) {
    (
        layout.n_frames as u32,
        layout.width as u32,
        layout.height as u32,
        layout.grid_w as u32,
        layout.grid_h as u32,
        layout.pool_factor as u32,
    )
}

/// Write a checkpoint: header, config text, parameter bytes, trailing hash.
pub fn checkpoint_save(
    path: &Path,
    config: &RunConfig,
    layout: &GridLayout,
    params: &ParamStore,
) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut bytes: Vec<u8> = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    let config_text = config.to_text();
    bytes.extend_from_slice(&config.content_hash().to_le_bytes());
    bytes.extend_from_slice(&(config_text.len() as u32).to_le_bytes());
    bytes.extend_from_slice(config_text.as_bytes());
    let shapes = shape_tuple(layout);
    for v in [shapes.0, shapes.1, shapes.2, shapes.3, shapes.4, shapes.5] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes.extend_from_slice(&(params.len() as u64).to_le_bytes());
    let param_start = bytes.len();
    for v in params.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let param_hash = fnv1a(&bytes[param_start..]);
    bytes.extend_from_slice(&param_hash.to_le_bytes());
    let mut file = std::fs::File::create(path).map_err(io)?;
    file.write_all(&bytes).map_err(io)?;
    Ok(())
}

/// Read a checkpoint back. The embedded config is revalidated, its hash is
/// checked against the stored one, and the stored grid shapes must agree
/// with the shapes derived from that config before parameters are read.
pub fn checkpoint_load(
    path: &Path,
) -> Result<(RunConfig, GridLayout, ParamStore), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let corrupt = |reason: &str| CheckpointError::Corrupt {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut file = std::fs::File::open(path).map_err(io)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(io)?;
    let mut cursor = 0usize;
    let take = |bytes: &[u8], cursor: &mut usize, n: usize, what: &str| {
        if *cursor + n > bytes.len() {
            return Err(corrupt(&format!("unexpected end of file reading {what}")));
        }
        let out = bytes[*cursor..*cursor + n].to_vec();
        *cursor += n;
        Ok(out)
    };

    let magic = take(&bytes, &mut cursor, 8, "magic")?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let version = u32::from_le_bytes(take(&bytes, &mut cursor, 4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::Version {
            path: path.to_path_buf(),
            got: version,
            want: VERSION,
        });
    }
    let stored_hash =
        u64::from_le_bytes(take(&bytes, &mut cursor, 8, "config hash")?.try_into().unwrap());
    let config_len =
        u32::from_le_bytes(take(&bytes, &mut cursor, 4, "config length")?.try_into().unwrap())
            as usize;
    let config_text = String::from_utf8(take(&bytes, &mut cursor, config_len, "config text")?)
        .map_err(|_| corrupt("config text is not UTF-8"))?;
    if fnv1a(config_text.as_bytes()) != stored_hash {
        return Err(CheckpointError::HashMismatch {
            path: path.to_path_buf(),
        });
    }
    let config = RunConfig::parse(&config_text, &format!("{}(embedded)", path.display()))?;

    let mut shape = [0u32; 6];
    for slot in shape.iter_mut() {
        *slot =
            u32::from_le_bytes(take(&bytes, &mut cursor, 4, "grid shape")?.try_into().unwrap());
    }
    let got = (shape[0], shape[1], shape[2], shape[3], shape[4], shape[5]);
    let layout = GridLayout::new(
        shape[0] as usize,
        config.image_size.0,
        config.image_size.1,
        config.fit.pool_factor,
    );
    let want = shape_tuple(&layout);
    if want != got {
        return Err(CheckpointError::ShapeMismatch {
            path: path.to_path_buf(),
            want,
            got,
        });
    }
    let param_len =
        u64::from_le_bytes(take(&bytes, &mut cursor, 8, "parameter count")?.try_into().unwrap())
            as usize;
    if param_len != layout.total_len() {
        return Err(corrupt(&format!(
            "parameter count {param_len} does not match layout {}",
            layout.total_len()
        )));
    }
    let param_start = cursor;
    let raw = take(&bytes, &mut cursor, param_len * 8, "parameters")?;
    let stored_param_hash =
        u64::from_le_bytes(take(&bytes, &mut cursor, 8, "parameter hash")?.try_into().unwrap());
    if fnv1a(&bytes[param_start..param_start + param_len * 8]) != stored_param_hash {
        return Err(corrupt("parameter hash mismatch"));
    }
    let mut store = ParamStore::new();
    for f in 0..layout.n_frames {
        let logits_base = layout.logits_range(f).start;
        store.push_slice(format!("frame{f:04}/depth_logits"), layout.logits_len(), |i| {
            read_f64(&raw, logits_base + i)
        });
        let dsc_base = layout.dsc_range(f).start;
        store.push_slice(format!("frame{f:04}/dsc"), layout.dsc_len(), |i| {
            read_f64(&raw, dsc_base + i)
        });
    }
    Ok((config, layout, store))
}

fn read_f64(raw: &[u8], index: usize) -> f64 {
    let start = index * 8;
    f64::from_le_bytes(raw[start..start + 8].try_into().unwrap())
}
