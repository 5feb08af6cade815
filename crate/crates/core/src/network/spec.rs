use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baseline::maxpool_dims;
use crate::error::{Error, Result};
use crate::geometry::ConvGeometry;
use crate::tensor::TensorDims;

/// One stage of the layer graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "UPPERCASE", rename_all_fields = "camelCase")]
pub enum LayerSpec {
    /// Change-based convolution with its own detection threshold.
    Cbconv {
        geom: ConvGeometry,
        #[serde(default)]
        threshold: f32,
        #[serde(default = "default_true")]
        fuse_relu: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights_file: Option<String>,
    },
    /// Ordinary full-frame convolution.
    Conv {
        geom: ConvGeometry,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights_file: Option<String>,
    },
    Relu,
    Maxpool {
        window: usize,
        stride: usize,
    },
    /// Per-pixel argmax over channels.
    Classify,
}

fn default_true() -> bool {
    true
}

impl LayerSpec {
    pub fn cbconv(geom: ConvGeometry, threshold: f32) -> Self {
        LayerSpec::Cbconv {
            geom,
            threshold,
            fuse_relu: true,
            weights_file: None,
        }
    }

    pub fn conv(geom: ConvGeometry) -> Self {
        LayerSpec::Conv {
            geom,
            weights_file: None,
        }
    }

    pub fn maxpool(window: usize, stride: usize) -> Self {
        LayerSpec::Maxpool { window, stride }
    }

    pub fn geometry(&self) -> Option<&ConvGeometry> {
        match self {
            LayerSpec::Cbconv { geom, .. } | LayerSpec::Conv { geom, .. } => Some(geom),
            _ => None,
        }
    }

    pub fn is_cbconv(&self) -> bool {
        matches!(self, LayerSpec::Cbconv { .. })
    }

    /// Weight file for layer `index`, defaulting to `layer<index>.weights.f32le`.
    pub fn weights_file_name(&self, index: usize) -> Option<String> {
        match self {
            LayerSpec::Cbconv { weights_file, .. } | LayerSpec::Conv { weights_file, .. } => Some(
                weights_file
                    .clone()
                    .unwrap_or_else(|| default_weights_file(index)),
            ),
            _ => None,
        }
    }

    /// Output dims of this layer for the given input dims.
    pub fn output_dims(&self, input: TensorDims) -> Result<TensorDims> {
        match self {
            LayerSpec::Cbconv { geom, .. } | LayerSpec::Conv { geom, .. } => geom.output_dims(input),
            LayerSpec::Relu => Ok(input),
            LayerSpec::Maxpool { window, stride } => maxpool_dims(input, *window, *stride),
            LayerSpec::Classify => Ok(TensorDims::new(1, input.height, input.width)),
        }
    }
}

pub fn default_weights_file(index: usize) -> String {
    format!("layer{index}.weights.f32le")
}

/// Input geometry, ordered layers and class count of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NetworkSpec {
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
}

impl NetworkSpec {
    pub fn input_dims(&self) -> TensorDims {
        TensorDims::new(self.input_channels, self.input_height, self.input_width)
    }

    /// Tensor dims entering each layer followed by the final output dims
    /// (`layers.len() + 1` entries). Checks that the chain is consistent.
    pub fn shape_chain(&self) -> Result<Vec<TensorDims>> {
        if self.layers.is_empty() {
            return Err(Error::Argument("network has no layers".into()));
        }
        let mut dims = vec![self.input_dims()];
        for (n, layer) in self.layers.iter().enumerate() {
            let next = layer
                .output_dims(dims[n])
                .map_err(|e| Error::geometry(format!("layer {n}: {e}")))?;
            if matches!(layer, LayerSpec::Classify) {
                if n + 1 != self.layers.len() {
                    return Err(Error::geometry(format!(
                        "layer {n}: CLASSIFY must be the last layer"
                    )));
                }
                if dims[n].channels != self.num_classes {
                    return Err(Error::geometry(format!(
                        "classifier sees {} channels but the network has {} classes",
                        dims[n].channels, self.num_classes
                    )));
                }
            }
            dims.push(next);
        }
        Ok(dims)
    }

    pub fn cbconv_count(&self) -> usize {
        self.layers.iter().filter(|l| l.is_cbconv()).count()
    }

    /// Thresholds of the CBCONV layers in order.
    pub fn thresholds(&self) -> Vec<f32> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Cbconv { threshold, .. } => Some(*threshold),
                _ => None,
            })
            .collect()
    }

    pub fn set_thresholds(&mut self, thresholds: &[f32]) -> Result<()> {
        if thresholds.len() != self.cbconv_count() {
            return Err(Error::Argument(format!(
                "{} thresholds given for {} change-based layers",
                thresholds.len(),
                self.cbconv_count()
            )));
        }
        let mut it = thresholds.iter();
        for layer in &mut self.layers {
            if let LayerSpec::Cbconv { threshold, .. } = layer {
                *threshold = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn write_json_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("spec serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Scene-labeling layout: three 7×7 change-based convolutions with 2×2
    /// max-pooling after the first two, then a 1×1 convolution head.
    pub fn scene_labeling(
        input: TensorDims,
        widths: [usize; 4],
        num_classes: usize,
        thresholds: [f32; 3],
    ) -> Self {
        let [c1, c2, c3, c4] = widths;
        NetworkSpec {
            input_channels: input.channels,
            input_height: input.height,
            input_width: input.width,
            layers: vec![
                LayerSpec::cbconv(ConvGeometry::same(7, input.channels, c1), thresholds[0]),
                LayerSpec::maxpool(2, 2),
                LayerSpec::cbconv(ConvGeometry::same(7, c1, c2), thresholds[1]),
                LayerSpec::maxpool(2, 2),
                LayerSpec::cbconv(ConvGeometry::same(7, c2, c3), thresholds[2]),
                LayerSpec::conv(ConvGeometry::same(1, c3, c4)),
                LayerSpec::Relu,
                LayerSpec::conv(ConvGeometry::same(1, c4, num_classes)),
                LayerSpec::Classify,
            ],
            num_classes,
        }
    }

    /// Full-size network at 736×832 input, used for memory accounting. Layer
    /// widths were chosen so buffer totals land near a known deployment.
    pub fn full_scale() -> Self {
        Self::scene_labeling(
            TensorDims::new(3, 736, 832),
            [8, 32, 488, 64],
            8,
            [0.04, 0.3, 1.0],
        )
    }
}
