//! Declarative network construction: layer specs, shape inference, the
//! trainable model, presets and checkpoints.

mod checkpoint;
mod encoded;
mod model;
pub mod presets;
mod spec;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use encoded::{encode, EncodedBatch};
pub use model::{build_model, HiddenExtractor, TrainableModel};
pub(crate) use model::as_rows;
pub use presets::PresetFile;
pub use spec::{layer, ArchitectureSpec, LayerKind, LayerSpec, NamedPadding, Padding};
