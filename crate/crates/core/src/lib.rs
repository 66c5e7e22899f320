pub mod data;
pub mod error;
pub mod layers;
pub mod losses;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod selfcheck;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tensor::{l2_normalize, softmax_stable, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type ModelBundle32 = model::ModelBundle<f32>;
pub type ModelBundle64 = model::ModelBundle<f64>;

/// Letters A-Z.
pub const NUM_CLASSES: usize = 26;

/// Version string embedded in checkpoints and reports.
pub const VERSION: &str = concat!("sclair ", env!("CARGO_PKG_VERSION"));
