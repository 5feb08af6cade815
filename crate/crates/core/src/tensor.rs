//! Planar activation tensors and per-pixel label maps.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel/height/width extents of a planar tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorDims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl TensorDims {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    /// Pixels per channel plane.
    pub const fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for TensorDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Flat offset of element `(c, j, i)`: `c·h·w + j·w + i`.
pub fn linear_index(c: usize, j: usize, i: usize, dims: TensorDims) -> Result<usize> {
    if c >= dims.channels || j >= dims.height || i >= dims.width {
        return Err(Error::Bounds(format!(
            "coordinate ({c}, {j}, {i}) outside {dims}"
        )));
    }
    Ok((c * dims.height + j) * dims.width + i)
}

/// A channels × height × width tensor of `f32`, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTensor {
    dims: TensorDims,
    data: Vec<f32>,
}

impl FrameTensor {
    pub fn zeros(dims: TensorDims) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.len()],
        }
    }

    pub fn filled(dims: TensorDims, value: f32) -> Self {
        Self {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn from_vec(dims: TensorDims, data: Vec<f32>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::shape(format!(
                "{} values supplied for a {dims} tensor",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> TensorDims {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.dims.channels
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.dims.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, j: usize, i: usize) -> Result<f32> {
        Ok(self.data[linear_index(c, j, i, self.dims)?])
    }

    pub fn set(&mut self, c: usize, j: usize, i: usize, value: f32) -> Result<()> {
        let idx = linear_index(c, j, i, self.dims)?;
        self.data[idx] = value;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reads a raw little-endian `f32` file whose dimensions are known out of band.
    pub fn read_f32le(path: impl AsRef<Path>, dims: TensorDims) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let data = decode_f32le(&bytes, dims.len()).map_err(|reason| Error::Format {
            path: path.to_path_buf(),
            reason,
        })?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: "non-finite value in frame".into(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn write_f32le(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, encode_f32le(&self.data)).map_err(|e| Error::io(path, e))
    }

    /// Reads a binary (P6, 8-bit) PPM image as three planes scaled to `[0, 1]`.
    pub fn read_ppm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        parse_ppm(&bytes).map_err(|reason| Error::Format {
            path: path.to_path_buf(),
            reason,
        })
    }
}

/// Largest element-wise absolute difference between two equally shaped tensors.
pub fn max_abs_diff(a: &FrameTensor, b: &FrameTensor) -> Result<f32> {
    if a.dims != b.dims {
        return Err(Error::shape(format!("{} vs {}", a.dims, b.dims)));
    }
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max))
}

pub(crate) fn decode_f32le(bytes: &[u8], expected: usize) -> Result<Vec<f32>, String> {
    if bytes.len() != expected * 4 {
        return Err(format!(
            "expected {} bytes ({expected} values), found {}",
            expected * 4,
            bytes.len()
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

pub(crate) fn encode_f32le(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn parse_ppm(bytes: &[u8]) -> Result<FrameTensor, String> {
    // Header: magic, width, height, maxval, separated by whitespace, with
    // optional '#' comments; a single whitespace byte precedes the raster.
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PPM header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P6" {
        return Err(format!("unsupported PPM magic {:?}", fields[0]));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| format!("bad PPM field {s:?}"));
    let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(format!("only 8-bit PPM is supported (maxval {maxval})"));
    }
    let raster = bytes.get(pos..).unwrap_or_default();
    let n = width * height;
    if raster.len() < 3 * n {
        return Err(format!("PPM raster holds {} of {} bytes", raster.len(), 3 * n));
    }
    let dims = TensorDims::new(3, height, width);
    let mut data = vec![0.0; dims.len()];
    for (p, rgb) in raster[..3 * n].chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * n + p] = f32::from(rgb[c]) / 255.0;
        }
    }
    Ok(FrameTensor { dims, data })
}

/// Per-pixel class indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::shape(format!(
                "{} labels for a {height}x{width} map",
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, label: u32) -> Self {
        Self {
            height,
            width,
            labels: vec![label; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, j: usize, i: usize) -> u32 {
        self.labels[j * self.width + i]
    }

    /// Raw little-endian `u32` labels, row-major.
    pub fn write_u32le(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes: Vec<u8> = self.labels.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read_u32le(path: impl AsRef<Path>, height: usize, width: usize) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() != height * width * 4 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("expected {} bytes of labels", height * width * 4),
            });
        }
        let labels = bytes
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Self::new(height, width, labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn linear_index_examples() {
        let d = TensorDims::new(3, 4, 5);
        assert_eq!(linear_index(0, 0, 0, d).unwrap(), 0);
        assert_eq!(linear_index(1, 0, 0, d).unwrap(), 20);
        assert_eq!(linear_index(2, 3, 1, d).unwrap(), 56);
        assert!(matches!(linear_index(3, 0, 0, d), Err(Error::Bounds(_))));
        assert!(matches!(linear_index(0, 4, 0, d), Err(Error::Bounds(_))));
        assert!(matches!(linear_index(0, 0, 5, d), Err(Error::Bounds(_))));
    }

    #[test]
    fn max_abs_diff_examples() {
        let d = TensorDims::new(2, 3, 3);
        let a = FrameTensor::filled(d, 1.0);
        assert_eq!(max_abs_diff(&a, &a).unwrap(), 0.0);
        let b = FrameTensor::filled(d, 1.5);
        assert_eq!(max_abs_diff(&a, &b).unwrap(), 0.5);
        let c = FrameTensor::zeros(TensorDims::new(1, 3, 3));
        assert!(matches!(max_abs_diff(&a, &c), Err(Error::Shape(_))));
    }

    #[test]
    fn max_abs_diff_matches_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let d = TensorDims::new(3, 7, 9);
        let a =
            FrameTensor::from_vec(d, (0..d.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let b =
            FrameTensor::from_vec(d, (0..d.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let mut expected = 0.0f32;
        for c in 0..3 {
            for j in 0..7 {
                for i in 0..9 {
                    let diff = (a.get(c, j, i).unwrap() - b.get(c, j, i).unwrap()).abs();
                    if diff > expected {
                        expected = diff;
                    }
                }
            }
        }
        assert_eq!(max_abs_diff(&a, &b).unwrap(), expected);
    }

    #[test]
    fn ppm_roundtrip() {
        let mut bytes = b"P6\n# comment\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 51, 0, 255, 102]);
        let t = parse_ppm(&bytes).unwrap();
        assert_eq!(t.dims(), TensorDims::new(3, 1, 2));
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 1.0, 0.2, 0.4]);
        assert!(parse_ppm(b"P5\n1 1\n255\n\0").is_err());
        assert!(parse_ppm(b"P6\n2 2\n255\n\0\0\0").is_err());
    }

    #[test]
    fn raw_file_length_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.f32le");
        let t = FrameTensor::filled(TensorDims::new(1, 2, 2), 0.25);
        t.write_f32le(&p).unwrap();
        assert_eq!(FrameTensor::read_f32le(&p, t.dims()).unwrap(), t);
        assert!(FrameTensor::read_f32le(&p, TensorDims::new(1, 2, 3)).is_err());
    }

    proptest! {
        #[test]
        fn write_then_read(c in 1usize..4, h in 1usize..9, w in 1usize..9, v in -10.0f32..10.0) {
            let d = TensorDims::new(c, h, w);
            let mut t = FrameTensor::zeros(d);
            for cc in 0..c {
                for j in 0..h {
                    for i in 0..w {
                        let val = v + (cc * 100 + j * 10 + i) as f32;
                        t.set(cc, j, i, val).unwrap();
                        prop_assert_eq!(t.get(cc, j, i).unwrap(), val);
                    }
                }
            }
        }

        #[test]
        fn linear_index_is_injective(c in 1usize..4, h in 1usize..7, w in 1usize..7) {
            let d = TensorDims::new(c, h, w);
            let mut seen = vec![false; d.len()];
            for cc in 0..c {
                for j in 0..h {
                    for i in 0..w {
                        let k = linear_index(cc, j, i, d).unwrap();
                        prop_assert!(!seen[k]);
                        seen[k] = true;
                    }
                }
            }
            prop_assert!(seen.into_iter().all(|s| s));
        }
    }
}
