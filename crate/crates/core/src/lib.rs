//! Attention-synchronized lip-reading network on top of the
//! `infosync-tensor` autodiff engine: model, training strategies,
//! synthetic data and file formats.

pub mod attention;
pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod datagen;
pub mod dataset;
pub mod dctcn;
pub mod error;
pub mod frontend;
pub mod heatmap;
pub mod io;
pub mod loss;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod train;
pub mod verify;
pub mod video;

pub use attention::{key_frame_scores, AttentionConfig, AttentionStack, AttentionTrace};
pub use checkpoint::Checkpoint;
pub use config::{DataConfig, RunConfig, TrainConfig};
pub use datagen::{gen_dataset, render_sequence, SynthSpec};
pub use dataset::Dataset;
pub use dctcn::{Dctcn, DctcnConfig};
pub use error::{Error, Result};
pub use frontend::{Frontend, FrontendConfig};
pub use model::{InfoSyncNet, ModelConfig, ModelOutput, WidthChain};
pub use nn::Ctx;
pub use params::ModelParams;
pub use video::Video;
