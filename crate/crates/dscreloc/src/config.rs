//! Run configuration: a flat key-value text format with explicit units in
//! the key names, validated before any computation and serialized next to
//! every output for reproducibility.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::fit::FitConfig;
use crate::geometry::{GeometryError, Intrinsics};
use crate::losses::LossWeights;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}: cannot parse `{text}`")]
    Parse {
        path: String,
        line: usize,
        text: String,
    },
    #[error("{path}:{line}: unknown key `{key}`")]
    UnknownKey {
        path: String,
        line: usize,
        key: String,
    },
    #[error("missing required key `{0}` (intrinsics are never guessed)")]
    MissingKey(&'static str),
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: &'static str, reason: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Everything a run needs: fit hyperparameters, image geometry, evaluation
/// options, and optional dataset/output paths.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub image_size: (usize, usize),
    pub intrinsics: Intrinsics,
    pub fit: FitConfig,
    pub eval_depth_range: (f64, f64),
    pub data_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Canonical text form; parsing it back yields an equal config, and its
    /// bytes feed the checkpoint hash.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let kv = |s: &mut String, k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv(&mut s, "image_width_px", self.image_size.0.to_string());
        kv(&mut s, "image_height_px", self.image_size.1.to_string());
        kv(&mut s, "intrinsics_fx_px", fmt_f64(self.intrinsics.fx));
        kv(&mut s, "intrinsics_fy_px", fmt_f64(self.intrinsics.fy));
        kv(&mut s, "intrinsics_cx_px", fmt_f64(self.intrinsics.cx));
        kv(&mut s, "intrinsics_cy_px", fmt_f64(self.intrinsics.cy));
        kv(&mut s, "pooling_factor", self.fit.pool_factor.to_string());
        kv(&mut s, "learning_rate", fmt_f64(self.fit.learning_rate));
        kv(
            &mut s,
            "learning_rate_final",
            fmt_f64(self.fit.learning_rate_final),
        );
        kv(&mut s, "epochs", self.fit.epochs.to_string());
        kv(
            &mut s,
            "nearby_window_frames",
            self.fit.nearby_window.to_string(),
        );
        kv(
            &mut s,
            "distant_fraction",
            fmt_f64(self.fit.distant_fraction),
        );
        kv(
            &mut s,
            "distant_activation_epoch",
            self.fit.distant_activation_epoch.to_string(),
        );
        kv(&mut s, "loop_size_frames", self.fit.loop_size.to_string());
        kv(&mut s, "alpha_ssim", fmt_f64(self.fit.weights.alpha));
        kv(
            &mut s,
            "smoothness_weight",
            fmt_f64(self.fit.weights.smoothness),
        );
        kv(
            &mut s,
            "pose_coordinate_weight",
            fmt_f64(self.fit.weights.pose_coordinate),
        );
        kv(
            &mut s,
            "min_depth_units",
            fmt_f64(self.fit.depth_range.0),
        );
        kv(
            &mut s,
            "max_depth_units",
            fmt_f64(self.fit.depth_range.1),
        );
        kv(
            &mut s,
            "eval_min_depth_units",
            fmt_f64(self.eval_depth_range.0),
        );
        kv(
            &mut s,
            "eval_max_depth_units",
            fmt_f64(self.eval_depth_range.1),
        );
        kv(&mut s, "seed", self.fit.seed.to_string());
        if let Some(d) = &self.data_dir {
            kv(&mut s, "data_dir", d.display().to_string());
        }
        if let Some(d) = &self.output_dir {
            kv(&mut s, "output_dir", d.display().to_string());
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, self.to_text()).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parse the key-value text. Unknown keys are rejected; intrinsics and
    /// image size are required, everything else falls back to defaults.
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let mut width = None;
        let mut height = None;
        let mut fx = None;
        let mut fy = None;
        let mut cx = None;
        let mut cy = None;
        let mut fit = FitConfig::default();
        let mut weights = LossWeights::default();
        let mut eval_range = (0.1, 10.0);
        let mut data_dir = None;
        let mut output_dir = None;
        let mut saw_final_lr = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                path: origin.to_string(),
                line: lineno + 1,
                text: raw.to_string(),
            })?;
            let key = key.trim();
            let value = value.trim();
            let parse_err = || ConfigError::Parse {
                path: origin.to_string(),
                line: lineno + 1,
                text: raw.to_string(),
            };
            match key {
                "image_width_px" => width = Some(value.parse().map_err(|_| parse_err())?),
                "image_height_px" => height = Some(value.parse().map_err(|_| parse_err())?),
                "intrinsics_fx_px" => fx = Some(value.parse().map_err(|_| parse_err())?),
                "intrinsics_fy_px" => fy = Some(value.parse().map_err(|_| parse_err())?),
                "intrinsics_cx_px" => cx = Some(value.parse().map_err(|_| parse_err())?),
                "intrinsics_cy_px" => cy = Some(value.parse().map_err(|_| parse_err())?),
                "pooling_factor" => fit.pool_factor = value.parse().map_err(|_| parse_err())?,
                "learning_rate" => fit.learning_rate = value.parse().map_err(|_| parse_err())?,
                "learning_rate_final" => {
                    fit.learning_rate_final = value.parse().map_err(|_| parse_err())?;
                    saw_final_lr = true;
                }
                "epochs" => fit.epochs = value.parse().map_err(|_| parse_err())?,
                "nearby_window_frames" => {
                    fit.nearby_window = value.parse().map_err(|_| parse_err())?
                }
                "distant_fraction" => {
                    fit.distant_fraction = value.parse().map_err(|_| parse_err())?
                }
                "distant_activation_epoch" => {
                    fit.distant_activation_epoch = value.parse().map_err(|_| parse_err())?
                }
                "loop_size_frames" => fit.loop_size = value.parse().map_err(|_| parse_err())?,
                "alpha_ssim" => weights.alpha = value.parse().map_err(|_| parse_err())?,
                "smoothness_weight" => {
                    weights.smoothness = value.parse().map_err(|_| parse_err())?
                }
                "pose_coordinate_weight" => {
                    weights.pose_coordinate = value.parse().map_err(|_| parse_err())?
                }
                "min_depth_units" => {
                    fit.depth_range.0 = value.parse().map_err(|_| parse_err())?
                }
                "max_depth_units" => {
                    fit.depth_range.1 = value.parse().map_err(|_| parse_err())?
                }
                "eval_min_depth_units" => {
                    eval_range.0 = value.parse().map_err(|_| parse_err())?
                }
                "eval_max_depth_units" => {
                    eval_range.1 = value.parse().map_err(|_| parse_err())?
                }
                "seed" => fit.seed = value.parse().map_err(|_| parse_err())?,
                "data_dir" => data_dir = Some(PathBuf::from(value)),
                "output_dir" => output_dir = Some(PathBuf::from(value)),
                _ => {
                    return Err(ConfigError::UnknownKey {
                        path: origin.to_string(),
                        line: lineno + 1,
                        key: key.to_string(),
                    })
                }
            }
        }
        fit.weights = weights;
        if !saw_final_lr {
            // Constant schedule unless explicitly configured.
            fit.learning_rate_final = fit.learning_rate;
        }
        let config = RunConfig {
            image_size: (
                width.ok_or(ConfigError::MissingKey("image_width_px"))?,
                height.ok_or(ConfigError::MissingKey("image_height_px"))?,
            ),
            intrinsics: Intrinsics::new(
                fx.ok_or(ConfigError::MissingKey("intrinsics_fx_px"))?,
                fy.ok_or(ConfigError::MissingKey("intrinsics_fy_px"))?,
                cx.ok_or(ConfigError::MissingKey("intrinsics_cx_px"))?,
                cy.ok_or(ConfigError::MissingKey("intrinsics_cy_px"))?,
            )?,
            fit,
            eval_depth_range: eval_range,
            data_dir,
            output_dir,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let f = &self.fit;
        let check = |ok: bool, key: &'static str, reason: String| {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::InvalidValue { key, reason })
            }
        };
        check(
            self.image_size.0 > 0 && self.image_size.1 > 0,
            "image_width_px",
            "image dimensions must be positive".into(),
        )?;
        check(
            (0.0..=1.0).contains(&f.weights.alpha),
            "alpha_ssim",
            format!("{} outside [0, 1]", f.weights.alpha),
        )?;
        check(
            f.weights.smoothness >= 0.0 && f.weights.pose_coordinate >= 0.0,
            "smoothness_weight",
            "loss weights must be non-negative".into(),
        )?;
        check(
            (0.0..=1.0).contains(&f.distant_fraction),
            "distant_fraction",
            format!("{} outside [0, 1]", f.distant_fraction),
        )?;
        check(
            f.nearby_window >= 1,
            "nearby_window_frames",
            "window radius must be at least 1".into(),
        )?;
        check(
            f.loop_size >= 2,
            "loop_size_frames",
            "loop set needs at least 2 frames".into(),
        )?;
        check(
            f.pool_factor >= 1,
            "pooling_factor",
            "pooling factor must be at least 1".into(),
        )?;
        check(
            f.learning_rate > 0.0,
            "learning_rate",
            "learning rate must be positive".into(),
        )?;
        check(
            f.learning_rate_final > 0.0 && f.learning_rate_final <= f.learning_rate,
            "learning_rate_final",
            "final learning rate must be in (0, learning_rate]".into(),
        )?;
        check(
            f.depth_range.0 > 0.0 && f.depth_range.1 > f.depth_range.0,
            "min_depth_units",
            "need 0 < min depth < max depth".into(),
        )?;
        check(
            self.eval_depth_range.0 > 0.0 && self.eval_depth_range.1 > self.eval_depth_range.0,
            "eval_min_depth_units",
            "need 0 < min eval depth < max eval depth".into(),
        )?;
        Ok(())
    }

    /// FNV-1a hash of the canonical text, stored in checkpoints.
    pub fn content_hash(&self) -> u64 {
        fnv1a(self.to_text().as_bytes())
    }
}

fn fmt_f64(v: f64) -> String {
    // Shortest representation that round-trips exactly.
    let s = format!("{v}");
    debug_assert_eq!(s.parse::<f64>().unwrap(), v);
    s
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunConfig {
        RunConfig {
            image_size: (80, 60),
            intrinsics: Intrinsics::new(70.0, 70.0, 39.5, 29.5).unwrap(),
            fit: FitConfig {
                learning_rate: 0.01,
                epochs: 250,
                pool_factor: 8,
                seed: 7,
                ..FitConfig::default()
            },
            eval_depth_range: (0.1, 10.0),
            data_dir: None,
            output_dir: None,
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let config = sample();
        let text = config.to_text();
        let parsed = RunConfig::parse(&text, "inline").unwrap();
        assert_eq!(parsed, config);
        assert_eq!(parsed.content_hash(), config.content_hash());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let mut text = String::from("# a comment\n\n");
        text.push_str(&sample().to_text());
        assert!(RunConfig::parse(&text, "inline").is_ok());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut text = sample().to_text();
        text.push_str("mystery_knob = 3\n");
        assert!(matches!(
            RunConfig::parse(&text, "inline"),
            Err(ConfigError::UnknownKey { key, .. }) if key == "mystery_knob"
        ));
        let bad = sample().to_text().replace("epochs = 250", "epochs = many");
        assert!(matches!(
            RunConfig::parse(&bad, "inline"),
            Err(ConfigError::Parse { .. })
        ));
    }

    #[test]
    fn intrinsics_are_required() {
        let text = "image_width_px = 80\nimage_height_px = 60\n";
        assert!(matches!(
            RunConfig::parse(text, "inline"),
            Err(ConfigError::MissingKey("intrinsics_fx_px"))
        ));
    }

    #[test]
    fn semantic_validation_fires() {
        let mut config = sample();
        config.fit.weights.alpha = 1.5;
        assert!(matches!(
            config.validate(),
            Err(ConfigError::InvalidValue { key: "alpha_ssim", .. })
        ));
    }
}
