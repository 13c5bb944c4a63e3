//! Spatial-frequency enhanced selective-scan image fusion, implemented from
//! scratch on a small 64-bit tensor engine with reverse-mode differentiation.

pub mod autodiff;
pub mod blocks;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod params;
pub mod ssm;
pub mod tensor;
pub mod trainer;

pub use autodiff::{Gradients, Graph, Var};
pub use error::{Error, Result};
pub use tensor::{ComplexTensor, Tensor};
