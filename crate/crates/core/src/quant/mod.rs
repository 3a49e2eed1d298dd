//! int8 quantization: fake quantization with learned thresholds for
//! training, and an integer-only inference path.

pub mod fake;
pub mod integer;
pub mod qat;

pub use fake::{fake_quant, ClipBounds, QuantSpec, Rounding};
pub use integer::{int8_forward, integerize, integerize_with, Head, QuantizedBackbone, QuantizedModel, Requant};
pub use qat::{attach_quantizers, calibrate_input, init_clip_bounds, qat_train, QatConfig, QatReport};
