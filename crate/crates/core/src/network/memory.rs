//! Buffer-size accounting for the three memory layouts: one buffer per
//! layer, shared ping-pong buffers, and shared buffers plus change-based state.
//!
//! All counts are in stored values (one per `f32`, label, mask bit or index).

use crate::error::Result;

use super::spec::{LayerSpec, NetworkSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MemoryMode {
    /// Private output buffer per layer (ReLU in place) and a private patch
    /// matrix per convolution.
    BaselineNaive,
    /// Two alternating activation buffers and one patch matrix sized for the
    /// largest convolution.
    BaselineShared,
    /// `BaselineShared` plus each change-based layer's previous input and
    /// output, and a shared change map, index list and result matrix.
    CbInfer,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MemoryReport {
    pub intermediate_values: u64,
    pub patch_matrix_values: u64,
    pub parameter_values: u64,
    /// Stored previous inputs and outputs of all CBCONV layers.
    pub cb_state_values: u64,
    pub change_map_values: u64,
    pub index_list_values: u64,
    pub result_matrix_values: u64,
    /// `cb_state_values` plus the three shared scratch buffers.
    pub cb_extra_values: u64,
    pub total_values: u64,
}

/// Values that `spec` needs resident for one frame under `mode`.
pub fn memory_footprint(spec: &NetworkSpec, mode: MemoryMode) -> Result<MemoryReport> {
    let dims = spec.shape_chain()?;
    let mut r = MemoryReport::default();

    let mut naive_outputs = 0u64;
    let mut largest_pair = 0u64;
    let mut patch_sum = 0u64;
    let mut patch_max = 0u64;
    for (n, layer) in spec.layers.iter().enumerate() {
        let (input, output) = (dims[n], dims[n + 1]);
        if !matches!(layer, LayerSpec::Relu) {
            naive_outputs += output.len() as u64;
            largest_pair = largest_pair.max((input.len() + output.len()) as u64);
        }
        if let Some(geom) = layer.geometry() {
            let patch = (geom.patch_rows() * output.plane_len()) as u64;
            patch_sum += patch;
            patch_max = patch_max.max(patch);
            r.parameter_values += geom.param_count() as u64;
        }
        if matches!(mode, MemoryMode::CbInfer) && layer.is_cbconv() {
            r.cb_state_values += (input.len() + output.len()) as u64;
            let pixels = input.plane_len().max(output.plane_len()) as u64;
            r.change_map_values = r.change_map_values.max(pixels);
            r.index_list_values = r.index_list_values.max(output.plane_len() as u64);
            r.result_matrix_values = r.result_matrix_values.max(output.len() as u64);
        }
    }

    match mode {
        MemoryMode::BaselineNaive => {
            r.intermediate_values = naive_outputs;
            r.patch_matrix_values = patch_sum;
        }
        MemoryMode::BaselineShared | MemoryMode::CbInfer => {
            r.intermediate_values = largest_pair;
            r.patch_matrix_values = patch_max;
        }
    }
    r.cb_extra_values =
        r.cb_state_values + r.change_map_values + r.index_list_values + r.result_matrix_values;
    r.total_values = r.intermediate_values + r.patch_matrix_values + r.parameter_values + r.cb_extra_values;
    Ok(r)
}
