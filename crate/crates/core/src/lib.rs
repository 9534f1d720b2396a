//! Two-stage 4-bit quantization: affine INT8 quantization followed by
//! group-wise leading-zero suppression into sign-magnitude nibbles, an
//! integer GEMM over the packed format, and the distortion/entropy analyses
//! used to check the scheme on synthetic data.

pub mod affine;
pub mod analysis;
pub mod error;
pub mod lzs;
pub mod qgemm;
pub mod rng;
pub mod tensor;

pub use affine::{
    compute_params_int4, compute_params_int8, compute_params_int8_per_row, dequantize_int4_naive, dequantize_int8,
    quantize_int4_naive, quantize_int8, quantize_int8_per_row, Granularity, Int4Tensor, Int8Tensor, QuantParams,
};
pub use analysis::{
    code_entropy, entropy_comparison, flag_region_histogram, group_size_sweep, measure_distortion, verify_bound,
    AnalysisOptions, AnalysisReport, EntropyMode, Method,
};
pub use error::{QuartzError, Result};
pub use lzs::{
    clz32, expected_lzs_error, flag_for_group, lzs_compress, lzs_compress_with, lzs_decompress,
    lzs_truncation_error_bound, magnitude_bitlength, read_packed, write_packed, Flag, PackedTensor, ShiftRounding,
};
pub use qgemm::{quantize_weights, quartz_gemm, reference_gemm, GemmOutput, QuantizedWeights};
pub use tensor::{read_tensor, sample_distribution, tensor_from_values, write_tensor, Distribution, Tensor};
