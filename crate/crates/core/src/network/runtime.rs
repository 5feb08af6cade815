use std::path::Path;

use crate::baseline::{argmax_classify, conv_gemm, maxpool, relu_in_place};
use crate::cbconv::{dilate_changes, pool_changes, CbConvState, ChangeMap, LayerStats};
use crate::error::{Error, Result};
use crate::geometry::ConvGeometry;
use crate::matrix::FilterMatrix;
use crate::tensor::{FrameTensor, LabelMap, TensorDims};

use super::spec::{LayerSpec, NetworkSpec};
use super::weights::LayerWeights;

/// Which code path evaluates CBCONV layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Engine {
    /// Every frame through full-frame im2col + GEMM.
    Baseline,
    /// Change-based evaluation with per-layer state.
    CbInfer,
}

impl std::str::FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Engine::Baseline),
            "cbinfer" => Ok(Engine::CbInfer),
            other => Err(Error::Argument(format!("unknown engine {other:?}"))),
        }
    }
}

impl std::fmt::Display for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Engine::Baseline => "baseline",
            Engine::CbInfer => "cbinfer",
        })
    }
}

#[derive(Debug, Clone)]
enum Layer {
    CbConv(CbConvState),
    Conv {
        geom: ConvGeometry,
        filter: FilterMatrix,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    Classify,
}

/// One CBCONV layer's comparison between what its own change detection
/// marked and what worst-case propagation from upstream would have marked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PropagationSample {
    /// Position among the CBCONV layers (0-based).
    pub cb_index: usize,
    pub output_pixels: usize,
    pub detected: usize,
    pub worst_case: usize,
    /// Whether the detected set lies inside the worst-case set.
    pub contained: bool,
}

/// A loaded network with per-layer change-detection state.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    dims: Vec<TensorDims>,
    layers: Vec<Layer>,
    engine: Engine,
}

/// Loads weights for every conv layer from `weights_dir`.
pub fn load_network(spec: &NetworkSpec, weights_dir: impl AsRef<Path>, engine: Engine) -> Result<Network> {
    let dir = weights_dir.as_ref();
    spec.shape_chain()?;
    let mut weights = Vec::new();
    for (n, layer) in spec.layers.iter().enumerate() {
        if let (Some(geom), Some(name)) = (layer.geometry(), layer.weights_file_name(n)) {
            weights.push(LayerWeights::read(dir.join(name), geom, n)?);
        }
    }
    Network::from_weights(spec.clone(), &weights, engine)
}

impl Network {
    /// Builds a network from in-memory weights, one entry per conv layer.
    pub fn from_weights(spec: NetworkSpec, weights: &[LayerWeights], engine: Engine) -> Result<Self> {
        let dims = spec.shape_chain()?;
        let mut it = weights.iter();
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (n, layer) in spec.layers.iter().enumerate() {
            let built = match layer {
                LayerSpec::Cbconv {
                    geom,
                    threshold,
                    fuse_relu,
                    ..
                } => {
                    let w = next_weights(&mut it, n)?;
                    let filter = w.to_filter(geom).map_err(|e| load_error(n, e))?;
                    Layer::CbConv(
                        CbConvState::new(*geom, filter, *threshold, *fuse_relu)
                            .map_err(|e| load_error(n, e))?,
                    )
                }
                LayerSpec::Conv { geom, .. } => {
                    let w = next_weights(&mut it, n)?;
                    Layer::Conv {
                        geom: *geom,
                        filter: w.to_filter(geom).map_err(|e| load_error(n, e))?,
                    }
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::Maxpool { window, stride } => Layer::MaxPool {
                    window: *window,
                    stride: *stride,
                },
                LayerSpec::Classify => Layer::Classify,
            };
            layers.push(built);
        }
        if it.next().is_some() {
            return Err(Error::Argument("more weight sets than conv layers".into()));
        }
        Ok(Self {
            spec,
            dims,
            layers,
            engine,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn engine(&self) -> Engine {
        self.engine
    }

    pub fn set_engine(&mut self, engine: Engine) {
        self.engine = engine;
        self.reset_state();
    }

    /// Dims entering each layer, then the final output dims.
    pub fn shape_chain(&self) -> &[TensorDims] {
        &self.dims
    }

    pub fn cb_states(&self) -> impl Iterator<Item = &CbConvState> {
        self.layers.iter().filter_map(|l| match l {
            Layer::CbConv(s) => Some(s),
            _ => None,
        })
    }

    fn cb_states_mut(&mut self) -> impl Iterator<Item = &mut CbConvState> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::CbConv(s) => Some(s),
            _ => None,
        })
    }

    pub fn cbconv_count(&self) -> usize {
        self.cb_states().count()
    }

    pub fn thresholds(&self) -> Vec<f32> {
        self.cb_states().map(CbConvState::threshold).collect()
    }

    pub fn set_thresholds(&mut self, thresholds: &[f32]) -> Result<()> {
        self.spec.set_thresholds(thresholds)?;
        for (state, &t) in self.cb_states_mut().zip(thresholds) {
            state.set_threshold(t)?;
        }
        Ok(())
    }

    pub fn set_instrumentation(&mut self, enabled: bool) {
        for s in self.cb_states_mut() {
            s.set_instrumentation(enabled);
        }
    }

    /// Clears every layer's stored frame; the next frame is evaluated in full.
    pub fn reset_state(&mut self) {
        for s in self.cb_states_mut() {
            s.reset();
        }
    }

    /// MACs of one full-frame evaluation of the CBCONV layers.
    pub fn full_frame_cb_macs(&self) -> u64 {
        self.spec
            .layers
            .iter()
            .zip(&self.dims)
            .filter(|(l, _)| l.is_cbconv())
            .map(|(l, d)| {
                let g = l.geometry().expect("conv layer");
                let (h, w) = g.output_hw(d.height, d.width).expect("chain validated");
                (g.macs_per_pixel() * h * w) as u64
            })
            .sum()
    }

    /// Runs one frame through every layer and returns the per-pixel labels
    /// together with the counters of each CBCONV layer.
    pub fn forward_frame(&mut self, frame: &FrameTensor) -> Result<(LabelMap, Vec<LayerStats>)> {
        let (activation, stats) = self.forward_tensor(frame, false)?;
        let labels = match self.layers.last() {
            Some(Layer::Classify) => activation.into_labels()?,
            _ => argmax_classify(&activation.into_tensor()?)?,
        };
        Ok((labels, stats))
    }

    /// Like [`Network::forward_frame`] but returns the tensor that would
    /// enter CLASSIFY (or the last layer's output if there is none).
    pub fn forward_features(&mut self, frame: &FrameTensor) -> Result<(FrameTensor, Vec<LayerStats>)> {
        let (activation, stats) = self.forward_tensor(frame, true)?;
        Ok((activation.into_tensor()?, stats))
    }

    fn forward_tensor(
        &mut self,
        frame: &FrameTensor,
        stop_before_classify: bool,
    ) -> Result<(Activation<'static>, Vec<LayerStats>)> {
        if frame.dims() != self.dims[0] {
            return Err(Error::shape(format!(
                "frame is {}, network expects {}",
                frame.dims(),
                self.dims[0]
            )));
        }
        let engine = self.engine;
        let mut stats = Vec::new();
        let mut current = Activation::Borrowed(frame);
        for (n, layer) in self.layers.iter_mut().enumerate() {
            let input = current.tensor()?;
            let next = match layer {
                Layer::CbConv(state) => match engine {
                    Engine::CbInfer => {
                        let (out, s) = state.forward(input)?;
                        stats.push(s);
                        out
                    }
                    Engine::Baseline => {
                        let mut out = conv_gemm(input, state.filter(), state.geometry())?;
                        if state.fuse_relu() {
                            relu_in_place(&mut out);
                        }
                        let pixels = out.dims().plane_len();
                        stats.push(LayerStats {
                            changed_input_pixels: input.dims().plane_len(),
                            changed_output_pixels: pixels,
                            output_pixels: pixels,
                            gemm_macs: (state.geometry().macs_per_pixel() * pixels) as u64,
                            ..LayerStats::default()
                        });
                        out
                    }
                },
                Layer::Conv { geom, filter } => conv_gemm(input, filter, geom)?,
                Layer::Relu => {
                    let mut out = current.into_owned();
                    relu_in_place(&mut out);
                    current = Activation::Owned(out);
                    continue;
                }
                Layer::MaxPool { window, stride } => maxpool(input, *window, *stride)?,
                Layer::Classify if stop_before_classify => break,
                Layer::Classify => {
                    current = Activation::Labels(argmax_classify(input)?);
                    continue;
                }
            };
            debug_assert_eq!(next.dims(), self.dims[n + 1]);
            current = Activation::Owned(next);
        }
        Ok((current.into_static()?, stats))
    }

    /// For every CBCONV layer after the first, compares the output pixels it
    /// updated on the last frame with the set worst-case propagation from
    /// the previous CBCONV layer's updates would have forced.
    pub fn propagation_analysis(&self) -> Result<Vec<PropagationSample>> {
        let mut samples = Vec::new();
        let mut carried: Option<ChangeMap> = None;
        let mut cb_index = 0;
        for (n, layer) in self.layers.iter().enumerate() {
            let d = self.dims[n];
            carried = match layer {
                Layer::CbConv(state) => {
                    let (oh, ow) = state.geometry().output_hw(d.height, d.width)?;
                    let updated = ChangeMap::from_indices(oh, ow, state.last_updated())?;
                    if let Some(upstream) = &carried {
                        if state.has_history() {
                            let worst = dilate_changes(upstream, state.geometry())?;
                            samples.push(PropagationSample {
                                cb_index,
                                output_pixels: oh * ow,
                                detected: updated.count(),
                                worst_case: worst.count(),
                                contained: updated.is_subset_of(&worst),
                            });
                        }
                    }
                    cb_index += 1;
                    Some(updated)
                }
                Layer::Conv { geom, .. } => carried.map(|m| dilate_changes(&m, geom)).transpose()?,
                Layer::Relu => carried,
                Layer::MaxPool { window, stride } => {
                    carried.map(|m| pool_changes(&m, *window, *stride)).transpose()?
                }
                Layer::Classify => carried,
            };
        }
        Ok(samples)
    }
}

fn next_weights<'a>(it: &mut std::slice::Iter<'a, LayerWeights>, layer: usize) -> Result<&'a LayerWeights> {
    it.next().ok_or_else(|| Error::Load {
        layer,
        reason: "no weights supplied".into(),
    })
}

fn load_error(layer: usize, e: Error) -> Error {
    Error::Load {
        layer,
        reason: e.to_string(),
    }
}

enum Activation<'a> {
    Borrowed(&'a FrameTensor),
    Owned(FrameTensor),
    Labels(LabelMap),
}

impl Activation<'_> {
    fn tensor(&self) -> Result<&FrameTensor> {
        match self {
            Activation::Borrowed(t) => Ok(t),
            Activation::Owned(t) => Ok(t),
            Activation::Labels(_) => Err(Error::geometry("layer after CLASSIFY")),
        }
    }

    fn into_owned(self) -> FrameTensor {
        match self {
            Activation::Borrowed(t) => t.clone(),
            Activation::Owned(t) => t,
            Activation::Labels(_) => unreachable!("chain validation keeps CLASSIFY last"),
        }
    }

    fn into_static(self) -> Result<Activation<'static>> {
        Ok(match self {
            Activation::Borrowed(t) => Activation::Owned(t.clone()),
            Activation::Owned(t) => Activation::Owned(t),
            Activation::Labels(l) => Activation::Labels(l),
        })
    }

    fn into_labels(self) -> Result<LabelMap> {
        match self {
            Activation::Labels(l) => Ok(l),
            _ => Err(Error::geometry("network did not classify")),
        }
    }

    fn into_tensor(self) -> Result<FrameTensor> {
        match self {
            Activation::Labels(_) => Err(Error::geometry("labels are not a tensor")),
            other => Ok(other.into_owned()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::{conv_full, relu};
    use crate::network::weights::{synthesize, write_weights, WeightInit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_spec(tau: [f32; 3]) -> NetworkSpec {
        NetworkSpec::scene_labeling(TensorDims::new(2, 24, 24), [4, 6, 6, 5], 3, tau)
    }

    fn random_frame(rng: &mut ChaCha8Rng, dims: TensorDims) -> FrameTensor {
        FrameTensor::from_vec(
            dims,
            (0..dims.len()).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn load_from_directory() {
        let spec = small_spec([0.1; 3]);
        let w = synthesize(&spec, WeightInit::Random { seed: 1 }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_weights(dir.path(), &spec, &w).unwrap();
        let net = load_network(&spec, dir.path(), Engine::CbInfer).unwrap();
        assert_eq!(net.cbconv_count(), 3);
        assert_eq!(net.shape_chain().last().unwrap(), &TensorDims::new(1, 6, 6));
        assert!(net.cb_states().all(|s| !s.has_history()));

        // Drop one value from the third conv layer's file.
        let path = dir.path().join("layer4.weights.f32le");
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_network(&spec, dir.path(), Engine::CbInfer),
            Err(Error::Load { layer: 4, .. })
        ));

        std::fs::remove_file(&path).unwrap();
        assert!(matches!(
            load_network(&spec, dir.path(), Engine::CbInfer),
            Err(Error::Load { layer: 4, .. })
        ));
    }

    #[test]
    fn empty_network_rejected() {
        let spec = NetworkSpec {
            input_channels: 1,
            input_height: 4,
            input_width: 4,
            layers: vec![],
            num_classes: 1,
        };
        assert!(Network::from_weights(spec.clone(), &[], Engine::CbInfer).is_err());
        assert!(load_network(&spec, ".", Engine::CbInfer).is_err());
    }

    #[test]
    fn static_scene_costs_nothing_after_first_frame() {
        let spec = small_spec([0.05; 3]);
        let w = synthesize(&spec, WeightInit::Random { seed: 2 }).unwrap();
        let mut net = Network::from_weights(spec, &w, Engine::CbInfer).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frame = random_frame(&mut rng, net.shape_chain()[0]);
        let (l0, s0) = net.forward_frame(&frame).unwrap();
        assert_eq!(
            s0.iter().map(|s| s.gemm_macs).sum::<u64>(),
            net.full_frame_cb_macs()
        );
        let (l1, s1) = net.forward_frame(&frame).unwrap();
        assert_eq!(l0, l1);
        assert!(s1.iter().all(|s| s.gemm_macs == 0));
    }

    #[test]
    fn zero_thresholds_match_baseline_labels() {
        let spec = small_spec([0.0; 3]);
        let w = synthesize(&spec, WeightInit::Random { seed: 4 }).unwrap();
        let mut cb = Network::from_weights(spec.clone(), &w, Engine::CbInfer).unwrap();
        let mut base = Network::from_weights(spec, &w, Engine::Baseline).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut frame = random_frame(&mut rng, cb.shape_chain()[0]);
        for _ in 0..4 {
            assert_eq!(
                cb.forward_frame(&frame).unwrap().0,
                base.forward_frame(&frame).unwrap().0
            );
            for v in frame.data_mut().iter_mut().take(60) {
                *v = rng.random_range(0.0..1.0);
            }
        }
    }

    #[test]
    fn direct_convolution_chain_agrees_with_network() {
        // Two stacked CBCONV layers against conv_full + relu, bit for bit.
        let spec = NetworkSpec {
            input_channels: 2,
            input_height: 10,
            input_width: 10,
            layers: vec![
                LayerSpec::cbconv(ConvGeometry::same(3, 2, 3), 0.0),
                LayerSpec::cbconv(ConvGeometry::same(3, 3, 2), 0.0),
            ],
            num_classes: 2,
        };
        let w = synthesize(&spec, WeightInit::Random { seed: 6 }).unwrap();
        let mut net = Network::from_weights(spec.clone(), &w, Engine::CbInfer).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let frame = random_frame(&mut rng, net.shape_chain()[0]);
        let (labels, _) = net.forward_frame(&frame).unwrap();
        let g0 = ConvGeometry::same(3, 2, 3);
        let g1 = ConvGeometry::same(3, 3, 2);
        let h = relu(&conv_full(&frame, &w[0].to_filter(&g0).unwrap(), &g0).unwrap());
        let out = relu(&conv_full(&h, &w[1].to_filter(&g1).unwrap(), &g1).unwrap());
        assert_eq!(labels, argmax_classify(&out).unwrap());
    }

    #[test]
    fn reset_gives_repeatable_stats() {
        let spec = small_spec([0.1; 3]);
        let w = synthesize(&spec, WeightInit::Random { seed: 8 }).unwrap();
        let mut net = Network::from_weights(spec, &w, Engine::CbInfer).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = random_frame(&mut rng, net.shape_chain()[0]);
        let first = net.forward_frame(&f).unwrap();
        net.reset_state();
        let again = net.forward_frame(&f).unwrap();
        assert_eq!(first.0, again.0);
        let counts = |s: &[LayerStats]| {
            s.iter()
                .map(|x| (x.changed_input_pixels, x.changed_output_pixels, x.gemm_macs))
                .collect::<Vec<_>>()
        };
        assert_eq!(counts(&first.1), counts(&again.1));
        assert_eq!(
            net.forward_frame(&f)
                .unwrap()
                .1
                .iter()
                .map(|s| s.gemm_macs)
                .sum::<u64>(),
            0
        );
    }

    #[test]
    fn wrong_frame_dims() {
        let spec = small_spec([0.1; 3]);
        let w = synthesize(&spec, WeightInit::Random { seed: 10 }).unwrap();
        let mut net = Network::from_weights(spec, &w, Engine::CbInfer).unwrap();
        assert!(net
            .forward_frame(&FrameTensor::zeros(TensorDims::new(2, 24, 25)))
            .is_err());
        assert!(Network::from_weights(small_spec([0.0; 3]), &w[..2], Engine::Baseline).is_err());
    }

    #[test]
    fn propagation_detected_within_worst_case() {
        let spec = small_spec([0.02, 0.02, 0.02]);
        let w = synthesize(&spec, WeightInit::Random { seed: 11 }).unwrap();
        let mut net = Network::from_weights(spec, &w, Engine::CbInfer).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut frame = random_frame(&mut rng, net.shape_chain()[0]);
        net.forward_frame(&frame).unwrap();
        assert_eq!(net.propagation_analysis().unwrap().len(), 2);
        for _ in 0..5 {
            for _ in 0..3 {
                let p = rng.random_range(0..frame.data().len());
                frame.data_mut()[p] = rng.random_range(0.0..1.0);
            }
            net.forward_frame(&frame).unwrap();
            for s in net.propagation_analysis().unwrap() {
                assert!(s.contained);
                assert!(s.detected <= s.worst_case);
            }
        }
    }
}
