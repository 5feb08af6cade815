//! Synthetic static-camera sequences: a fixed textured background, square
//! sprites moving at constant velocity, and optional per-frame noise.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{FrameTensor, LabelMap, TensorDims};

/// Background texture is drawn from `[BACKGROUND_LOW, BACKGROUND_HIGH)`.
pub const BACKGROUND_LOW: f32 = 0.1;
pub const BACKGROUND_HIGH: f32 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Sprite {
    /// Edge length of the square, in pixels.
    pub size: usize,
    /// Rows and columns moved per frame.
    pub velocity: (i64, i64),
    pub intensity: f32,
    /// Top-left corner in frame 0; drawn from the seed when absent.
    #[serde(default)]
    pub start: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub frames: usize,
    #[serde(default)]
    pub sprites: Vec<Sprite>,
    /// Each pixel of each frame gets uniform noise in `[-a, a]`.
    #[serde(default)]
    pub noise_amplitude: f32,
    pub seed: u64,
}

impl SynthConfig {
    pub fn dims(&self) -> TensorDims {
        TensorDims::new(self.channels, self.height, self.width)
    }

    fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 || self.frames == 0 {
            return Err(Error::Argument(
                "synthetic sequence needs non-zero dims and frames".into(),
            ));
        }
        for s in &self.sprites {
            if s.size == 0 || s.size > self.height || s.size > self.width {
                return Err(Error::Argument(format!(
                    "sprite of size {} does not fit a {}x{} frame",
                    s.size, self.height, self.width
                )));
            }
        }
        if self.noise_amplitude.is_nan() || self.noise_amplitude < 0.0 {
            return Err(Error::Argument("noise amplitude must be >= 0".into()));
        }
        Ok(())
    }
}

/// A frame sequence held in memory, with optional per-frame ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub dims: TensorDims,
    pub frames: Vec<FrameTensor>,
    pub ground_truth: Option<Vec<LabelMap>>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// On-disk description of a sequence directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Manifest {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    #[serde(default)]
    pub ground_truth: bool,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:04}.f32le")
}

pub fn label_file_name(index: usize) -> String {
    format!("labels_{index:04}.u32le")
}

/// Top-left corner of sprite `s` in frame `t`, clamped so the box stays in frame.
pub fn sprite_position(
    s: &Sprite,
    start: (usize, usize),
    t: usize,
    height: usize,
    width: usize,
) -> (usize, usize) {
    let clamp = |p0: usize, v: i64, limit: usize| -> usize {
        let p = p0 as i64 + v * t as i64;
        p.clamp(0, (limit - s.size) as i64) as usize
    };
    (
        clamp(start.0, s.velocity.0, height),
        clamp(start.1, s.velocity.1, width),
    )
}

/// Renders the whole sequence deterministically from `cfg.seed`.
pub fn generate(cfg: &SynthConfig) -> Result<Sequence> {
    cfg.validate()?;
    let dims = cfg.dims();
    let plane = dims.plane_len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let background: Vec<f32> = (0..dims.len())
        .map(|_| rng.random_range(BACKGROUND_LOW..BACKGROUND_HIGH))
        .collect();
    let starts: Vec<(usize, usize)> = cfg
        .sprites
        .iter()
        .map(|s| {
            s.start.unwrap_or_else(|| {
                (
                    rng.random_range(0..=cfg.height - s.size),
                    rng.random_range(0..=cfg.width - s.size),
                )
            })
        })
        .collect();

    let mut frames = Vec::with_capacity(cfg.frames);
    let mut truth = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        let mut data = background.clone();
        let mut labels = vec![0u32; plane];
        for (s, &start) in cfg.sprites.iter().zip(&starts) {
            let (y0, x0) = sprite_position(s, start, t, cfg.height, cfg.width);
            for y in y0..y0 + s.size {
                for x in x0..x0 + s.size {
                    let p = y * cfg.width + x;
                    labels[p] = 1;
                    for c in 0..cfg.channels {
                        data[c * plane + p] = s.intensity;
                    }
                }
            }
        }
        if cfg.noise_amplitude > 0.0 {
            let a = cfg.noise_amplitude;
            for v in &mut data {
                *v += rng.random_range(-a..=a);
            }
        }
        frames.push(FrameTensor::from_vec(dims, data)?);
        truth.push(LabelMap::new(cfg.height, cfg.width, labels)?);
    }
    Ok(Sequence {
        dims,
        frames,
        ground_truth: Some(truth),
    })
}

/// Writes frames, ground truth and the manifest into `dir`.
pub fn write_sequence(seq: &Sequence, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (t, f) in seq.frames.iter().enumerate() {
        f.write_f32le(dir.join(frame_file_name(t)))?;
    }
    if let Some(gt) = &seq.ground_truth {
        for (t, l) in gt.iter().enumerate() {
            l.write_u32le(dir.join(label_file_name(t)))?;
        }
    }
    let manifest = Manifest {
        channels: seq.dims.channels,
        height: seq.dims.height,
        width: seq.dims.width,
        frames: seq.frames.len(),
        ground_truth: seq.ground_truth.is_some(),
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Generates a sequence and writes it to `out_dir`.
pub fn synth_generate(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    write_sequence(&generate(cfg)?, out_dir)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path: PathBuf = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path, source })
}

/// Loads a sequence directory written by [`write_sequence`] (or by hand:
/// only the manifest and the frame files are required).
pub fn load_sequence(dir: impl AsRef<Path>) -> Result<Sequence> {
    let dir = dir.as_ref();
    let m = read_manifest(dir)?;
    let dims = TensorDims::new(m.channels, m.height, m.width);
    let frames = (0..m.frames)
        .map(|t| FrameTensor::read_f32le(dir.join(frame_file_name(t)), dims))
        .collect::<Result<Vec<_>>>()?;
    let ground_truth = if m.ground_truth {
        Some(
            (0..m.frames)
                .map(|t| LabelMap::read_u32le(dir.join(label_file_name(t)), m.height, m.width))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    Ok(Sequence {
        dims,
        frames,
        ground_truth,
    })
}
