//! Denoising diffusion on a small reverse-mode autodiff engine.

pub mod ddim;
pub mod data;
pub mod ddpm;
pub mod diffusion;
pub mod error;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod schedule;
pub mod tensor;
pub mod trainer;
pub mod unet;

pub use data::{Checkpoint, Dataset, DatasetKind};
pub use ddim::DdimPlan;
pub use ddpm::{PosteriorMoments, SampleShape, Trajectory};
pub use diffusion::Diffusion;
pub use error::{Error, Result};
pub use optim::{Adam, AdamState};
pub use rng::{rand_uniform, randn, Rng, RngState};
pub use scalar::{DType, Scalar};
pub use schedule::{ScheduleKind, ScheduleTable};
pub use tensor::{is_grad_enabled, no_grad, Tensor};
pub use trainer::{EpochStats, StepInfo, TrainConfig, Trainer};
pub use unet::{Conditioning, GuidanceConfig, NoisePredictor, UNet, UNetConfig};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type UNet32 = UNet<f32>;
pub type UNet64 = UNet<f64>;
