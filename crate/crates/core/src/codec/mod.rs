//! Lossless two-stage coder: lines under fitted reduced models, then
//! strips conditioned on the lines around them.

pub mod arith;
pub mod block;
pub mod stream;

pub use arith::{ac_decode, ac_encode, quantize_pmf, QuantizedPmf};
pub use block::{decode_line, decode_strip, encode_line, encode_strip, BlockModel, EncodedBlock};
pub use stream::{decode_image, encode_image, DecodedImage, EncodedImage, StreamHeader};
