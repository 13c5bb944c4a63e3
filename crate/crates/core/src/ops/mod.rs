//! Differentiable primitives. Each submodule exposes plain tensor functions
//! and the matching [`Graph`](crate::autodiff::Graph) methods.

pub mod channels;
pub mod conv;
pub mod elementwise;
pub(crate) mod gemm;
pub mod norm;
pub mod pool;
pub mod sobel;
pub mod spectral;
