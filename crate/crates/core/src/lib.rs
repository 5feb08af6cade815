//! Change-based convolutional network inference for static-camera video.
//!
//! Convolution layers remember their previous input and output; each new
//! frame only recomputes the output pixels whose receptive field saw an
//! input change above a per-layer threshold. A full-frame im2col/GEMM path
//! serves as both the performance baseline and the exactness reference.

pub mod baseline;
pub mod calibrate;
pub mod cbconv;
pub mod error;
pub mod geometry;
pub mod matrix;
pub mod network;
pub mod synth;
pub mod tensor;

pub use baseline::{argmax_classify, conv_full, conv_gemm, im2col_full, maxpool, relu};
pub use calibrate::{
    calibrate_thresholds, pixel_disagreement, pixel_error, sweep_threshold_factor, Reference,
    ThresholdVector, TradeoffPoint,
};
pub use cbconv::{
    cbconv_forward, detect_changes, dilate_changes, extract_indexes, gen_x_reduced, update_output,
    worst_case_propagation, CbConvState, ChangeIndexList, ChangeMap, LayerStats, StepTimings,
};
pub use error::{Error, Result};
pub use geometry::ConvGeometry;
pub use matrix::{gemm, FilterMatrix, PatchMatrix, ResultMatrix};
pub use network::{
    load_network, memory_footprint, Engine, LayerSpec, MemoryMode, MemoryReport, Network, NetworkSpec,
};
pub use synth::{load_sequence, synth_generate, Sequence, Sprite, SynthConfig};
pub use tensor::{linear_index, max_abs_diff, FrameTensor, LabelMap, TensorDims};
