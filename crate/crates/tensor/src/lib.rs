//! Dense tensors with a tape-based reverse-mode autodiff engine.
//!
//! The engine covers exactly the layers the reconstruction networks need:
//! same-size and strided 2-D convolution, 2×2 max pooling, 2×2 transpose
//! convolution, exact 2-D FFT/IFFT, channel concatenation and a handful of
//! elementwise maps and reductions. Values are row-major; 4-D tensors are
//! laid out batch × channel × height × width.

mod container;
mod element;
mod error;
mod fft;
pub mod gradcheck;
mod graph;
mod ops;
mod tensor;

pub use container::{
    decode as decode_patn, encode as encode_patn, read_patn, read_patn_any, write_patn, AnyTensor, PATN_MAGIC, PATN_VERSION,
};
pub use element::{DType, Element};
pub use error::{Result, TensorError};
pub use fft::{fft2_planes, fftshift_planes, is_power_of_two};
pub use graph::{ComplexPair, Graph, Var};
pub use ops::conv::{conv2d_forward, conv2d_output_extent};
pub use tensor::Tensor;
