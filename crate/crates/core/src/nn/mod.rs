//! Network definition, kernels, optimizer and checkpoint format.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod net;
pub(crate) mod ops;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, Checkpoint, TrainState};
pub use config::{ModelConfig, PitConfig, SelectorConfig, TrunkConfig};
pub use net::{Model, ParamSpec};
pub use ops::frame_count;
