pub mod autodiff;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod losses;
pub mod modality;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use autodiff::{BatchNormStats, Graph, Mode, ReduceKind, Var};
pub use encoder::{Network, PoolingKind, TwoStreamConfig};
pub use error::{Error, Result};
pub use modality::Modality;
pub use tensor::{Real, Tensor};
