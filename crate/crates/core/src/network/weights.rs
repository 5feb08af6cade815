//! Per-layer weight files and synthetic weight generation.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::ConvGeometry;
use crate::matrix::FilterMatrix;
use crate::tensor::{decode_f32le, encode_f32le};

use super::spec::{LayerSpec, NetworkSpec};

/// Kernel `k(o, c, j, i)` (o outermost) followed by one bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub kernel: Vec<f32>,
    pub bias: Vec<f32>,
}

impl LayerWeights {
    pub fn to_filter(&self, geom: &ConvGeometry) -> Result<FilterMatrix> {
        FilterMatrix::new(geom, self.kernel.clone(), self.bias.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = encode_f32le(&self.kernel);
        bytes.extend(encode_f32le(&self.bias));
        bytes
    }

    /// Reads the weight file of conv layer `layer`, requiring the exact
    /// byte length implied by `geom`.
    pub fn read(path: impl AsRef<Path>, geom: &ConvGeometry, layer: usize) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::Load {
            layer,
            reason: format!("{}: {e}", path.display()),
        })?;
        let kernel_len = geom.out_channels * geom.patch_rows();
        let values = decode_f32le(&bytes, kernel_len + geom.out_channels).map_err(|reason| Error::Load {
            layer,
            reason: format!("{}: {reason}", path.display()),
        })?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Load {
                layer,
                reason: format!("{}: non-finite weight", path.display()),
            });
        }
        let (kernel, bias) = values.split_at(kernel_len);
        Ok(Self {
            kernel: kernel.to_vec(),
            bias: bias.to_vec(),
        })
    }
}

/// How to fill a network with weights when no trained parameters exist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightInit {
    /// Zero-mean uniform weights with variance `1/fan_in` and small biases.
    Random { seed: u64 },
    /// Positive smoothing filters feeding a classifier that labels pixels
    /// whose local mean intensity exceeds `split` as class 1 and the rest as
    /// class 0. Gives label maps with wide decision margins away from
    /// object boundaries, like a trained labeler on a static scene.
    Labeler { seed: u64, split: f32 },
}

/// Weights for every conv-kind layer of `spec`, in layer order.
pub fn synthesize(spec: &NetworkSpec, init: WeightInit) -> Result<Vec<LayerWeights>> {
    spec.shape_chain()?;
    let convs: Vec<&ConvGeometry> = spec.layers.iter().filter_map(LayerSpec::geometry).collect();
    let last = convs.len().saturating_sub(1);
    let seed = match init {
        WeightInit::Random { seed } | WeightInit::Labeler { seed, .. } => seed,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(convs
        .iter()
        .enumerate()
        .map(|(n, geom)| match init {
            WeightInit::Random { .. } => random_layer(&mut rng, geom),
            WeightInit::Labeler { split, .. } if n == last => classifier_layer(geom, split),
            WeightInit::Labeler { .. } => smoothing_layer(&mut rng, geom),
        })
        .collect())
}

fn random_layer(rng: &mut ChaCha8Rng, geom: &ConvGeometry) -> LayerWeights {
    let fan_in = geom.patch_rows() as f32;
    let bound = (3.0 / fan_in).sqrt();
    LayerWeights {
        kernel: (0..geom.out_channels * geom.patch_rows())
            .map(|_| rng.random_range(-bound..bound))
            .collect(),
        bias: (0..geom.out_channels)
            .map(|_| rng.random_range(-0.05..0.05))
            .collect(),
    }
}

fn smoothing_layer(rng: &mut ChaCha8Rng, geom: &ConvGeometry) -> LayerWeights {
    let fan_in = geom.patch_rows();
    let mut kernel = Vec::with_capacity(geom.out_channels * fan_in);
    for _ in 0..geom.out_channels {
        let row: Vec<f32> = (0..fan_in).map(|_| rng.random_range(0.5..1.5)).collect();
        let sum: f32 = row.iter().sum();
        kernel.extend(row.into_iter().map(|v| v / sum));
    }
    LayerWeights {
        kernel,
        bias: vec![0.0; geom.out_channels],
    }
}

fn classifier_layer(geom: &ConvGeometry, split: f32) -> LayerWeights {
    const GAIN: f32 = 8.0;
    let fan_in = geom.patch_rows();
    let w = GAIN / fan_in as f32;
    let mut kernel = vec![0.0; geom.out_channels * fan_in];
    let mut bias = vec![-GAIN; geom.out_channels];
    kernel[..fan_in].fill(-w);
    bias[0] = GAIN * split;
    if geom.out_channels > 1 {
        kernel[fan_in..2 * fan_in].fill(w);
        bias[1] = -GAIN * split;
    }
    LayerWeights { kernel, bias }
}

/// Writes one file per conv layer into `dir`, under each layer's weight file name.
pub fn write_weights(dir: impl AsRef<Path>, spec: &NetworkSpec, weights: &[LayerWeights]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut it = weights.iter();
    for (n, layer) in spec.layers.iter().enumerate() {
        if let Some(name) = layer.weights_file_name(n) {
            let w = it
                .next()
                .ok_or_else(|| Error::Argument("fewer weight sets than conv layers".into()))?;
            let path = dir.join(name);
            fs::write(&path, w.to_bytes()).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::TensorDims;

    fn spec() -> NetworkSpec {
        NetworkSpec::scene_labeling(TensorDims::new(1, 16, 16), [2, 3, 4, 3], 2, [0.0; 3])
    }

    #[test]
    fn synthesized_shapes() {
        let s = spec();
        for init in [
            WeightInit::Random { seed: 1 },
            WeightInit::Labeler { seed: 1, split: 0.5 },
        ] {
            let w = synthesize(&s, init).unwrap();
            let geoms: Vec<_> = s.layers.iter().filter_map(LayerSpec::geometry).collect();
            assert_eq!(w.len(), geoms.len());
            for (lw, g) in w.iter().zip(geoms) {
                lw.to_filter(g).unwrap();
            }
        }
        assert_eq!(
            synthesize(&s, WeightInit::Random { seed: 9 }).unwrap(),
            synthesize(&s, WeightInit::Random { seed: 9 }).unwrap()
        );
    }

    #[test]
    fn smoothing_rows_sum_to_one() {
        let g = ConvGeometry::same(3, 2, 2);
        let w = smoothing_layer(&mut ChaCha8Rng::seed_from_u64(0), &g);
        for row in w.kernel.chunks(g.patch_rows()) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn file_roundtrip_and_length_errors() {
        let dir = tempfile::tempdir().unwrap();
        let g = ConvGeometry::same(3, 2, 2);
        let w = random_layer(&mut ChaCha8Rng::seed_from_u64(4), &g);
        let p = dir.path().join("layer0.weights.f32le");
        fs::write(&p, w.to_bytes()).unwrap();
        assert_eq!(LayerWeights::read(&p, &g, 0).unwrap(), w);

        let mut short = w.to_bytes();
        short.truncate(short.len() - 4);
        fs::write(&p, &short).unwrap();
        assert!(matches!(
            LayerWeights::read(&p, &g, 3),
            Err(Error::Load { layer: 3, .. })
        ));

        let mut long = w.to_bytes();
        long.extend([0u8; 4]);
        fs::write(&p, &long).unwrap();
        assert!(LayerWeights::read(&p, &g, 0).is_err());

        assert!(matches!(
            LayerWeights::read(dir.path().join("missing"), &g, 5),
            Err(Error::Load { layer: 5, .. })
        ));
    }
}
