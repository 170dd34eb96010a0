mod adrmx;
pub mod checkpoint;
mod config;
mod mlp;

pub use adrmx::{disentangle, remix, remix_pairing, AdrmxParams, ForwardArtifacts, ParamGroup, Trainable};
pub use checkpoint::Checkpoint;
pub use config::{AdrmxConfig, CeWeights, ContrastiveOn, ModelOptions, PredictFrom};
pub use mlp::{Linear, Mlp};
