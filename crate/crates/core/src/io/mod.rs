//! On-disk formats.

pub mod png;
pub mod tensor;

pub use tensor::FlatTensor;
