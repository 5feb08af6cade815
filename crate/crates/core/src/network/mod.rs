//! Layer graphs: specification, weights, execution and memory accounting.

mod memory;
mod runtime;
mod spec;
mod weights;

pub use memory::{memory_footprint, MemoryMode, MemoryReport};
pub use runtime::{load_network, Engine, Network, PropagationSample};
pub use spec::{default_weights_file, LayerSpec, NetworkSpec};
pub use weights::{synthesize, write_weights, LayerWeights, WeightInit};
