//! Stage-1 affine INT8 quantization and the naive INT4 min-max baseline.
//!
//! Codes are signed. The zero point is recentered by half the code range so
//! that a symmetric input maps onto `[-127, 127]` with zero near code 0:
//!
//! ```text
//! s  = (x_max - x_min) / 255
//! z  = round(-x_min / s) - 128          (clamped to [-128, 127])
//! q  = clamp(round(x / s) + z, -127, 127)
//! x' = (q - z) * s
//! ```
//!
//! All rounding is round-half-to-even. The INT4 baseline uses the same
//! construction with 15 steps, `z = round(-x_min / s) - 8` and codes clamped
//! to `[-7, 7]`.

use serde::{Deserialize, Serialize};

use crate::error::{validation, QuartzError, Result};
use crate::tensor::Tensor;

pub const INT8_CODE_MAX: i32 = 127;
pub const INT4_CODE_MAX: i32 = 7;

/// Scale and zero point for one quantization granule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f32,
    pub zero_point: i32,
}

impl QuantParams {
    pub fn new(scale: f32, zero_point: i32) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(validation(format!("scale must be positive and finite, got {scale}")));
        }
        if !(-128..=127).contains(&zero_point) {
            return Err(validation(format!("zero point {zero_point} outside [-128, 127]")));
        }
        Ok(Self { scale, zero_point })
    }

    pub fn quantize_value(&self, x: f32, code_max: i32) -> i32 {
        let q = (f64::from(x) / f64::from(self.scale)).round_ties_even();
        // Saturate before the integer cast so huge ratios cannot wrap.
        let q = q.clamp(-1.0e6, 1.0e6) as i32;
        (q + self.zero_point).clamp(-code_max, code_max)
    }

    pub fn dequantize_value(&self, code: i32) -> f32 {
        (f64::from(code - self.zero_point) * f64::from(self.scale)) as f32
    }
}

/// Whether one parameter set covers the whole tensor or each row has its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    PerTensor,
    PerRow,
}

fn min_max(values: &[f32]) -> Result<(f32, f32)> {
    if values.is_empty() {
        return Err(validation("cannot fit quantization parameters to an empty tensor"));
    }
    Ok(values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v))))
}

/// Min-max affine fit with `levels` steps and a zero point recentered by `offset`.
fn fit(values: &[f32], levels: u32, offset: i32, z_min: i32, z_max: i32) -> Result<QuantParams> {
    let (lo, hi) = min_max(values)?;
    if hi == lo {
        let z = -(f64::from(lo).round_ties_even().clamp(-1.0e6, 1.0e6) as i32);
        return Ok(QuantParams { scale: 1.0, zero_point: z.clamp(z_min, z_max) });
    }
    let (lo, hi) = (f64::from(lo), f64::from(hi));
    let range = hi - lo;
    let scale = (range / f64::from(levels)) as f32;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(validation(format!("degenerate range [{lo}, {hi}] for {levels} levels")));
    }
    // -x_min / s evaluated from the exact range, not the rounded f32 scale,
    // so that symmetric ranges land exactly on the half-way point.
    let z = (-lo * f64::from(levels) / range).round_ties_even() as i32 - offset;
    Ok(QuantParams { scale, zero_point: z.clamp(z_min, z_max) })
}

pub fn compute_params_int8(x: &Tensor) -> Result<QuantParams> {
    fit(x.data(), 255, 128, -128, 127)
}

pub fn compute_params_int8_per_row(x: &Tensor) -> Result<Vec<QuantParams>> {
    if x.is_empty() {
        return Err(validation("cannot fit quantization parameters to an empty tensor"));
    }
    (0..x.rows()).map(|r| fit(x.row(r), 255, 128, -128, 127)).collect()
}

/// Signed INT8 codes in `[-127, 127]` with either one parameter set or one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Int8Tensor {
    rows: usize,
    cols: usize,
    codes: Vec<i8>,
    params: Vec<QuantParams>,
}

impl Int8Tensor {
    /// `params` holds one entry (per-tensor) or `rows` entries (per-row).
    pub fn new(rows: usize, cols: usize, codes: Vec<i8>, params: Vec<QuantParams>) -> Result<Self> {
        if codes.len() != rows * cols {
            return Err(QuartzError::Dimension(format!(
                "{} codes for a {rows}x{cols} tensor",
                codes.len()
            )));
        }
        if params.len() != 1 && params.len() != rows {
            return Err(QuartzError::Dimension(format!(
                "{} parameter sets for {rows} rows",
                params.len()
            )));
        }
        if codes.contains(&i8::MIN) {
            return Err(validation("code -128 is outside the signed INT8 range"));
        }
        for p in &params {
            QuantParams::new(p.scale, p.zero_point)?;
        }
        Ok(Self { rows, cols, codes, params })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn codes(&self) -> &[i8] {
        &self.codes
    }

    pub fn row_codes(&self, r: usize) -> &[i8] {
        &self.codes[r * self.cols..(r + 1) * self.cols]
    }

    pub fn params(&self) -> &[QuantParams] {
        &self.params
    }

    pub fn params_for_row(&self, r: usize) -> QuantParams {
        if self.params.len() == 1 {
            self.params[0]
        } else {
            self.params[r]
        }
    }

    pub fn granularity(&self) -> Granularity {
        if self.params.len() == 1 {
            Granularity::PerTensor
        } else {
            Granularity::PerRow
        }
    }

    /// Fit parameters to `x` at the requested granularity and quantize.
    pub fn quantize(x: &Tensor, granularity: Granularity) -> Result<Self> {
        match granularity {
            Granularity::PerTensor => Ok(quantize_int8(x, &compute_params_int8(x)?)),
            Granularity::PerRow => quantize_int8_per_row(x, &compute_params_int8_per_row(x)?),
        }
    }
}

pub fn quantize_int8(x: &Tensor, p: &QuantParams) -> Int8Tensor {
    let codes = x
        .data()
        .iter()
        .map(|&v| p.quantize_value(v, INT8_CODE_MAX) as i8)
        .collect();
    Int8Tensor { rows: x.rows(), cols: x.cols(), codes, params: vec![*p] }
}

pub fn quantize_int8_per_row(x: &Tensor, params: &[QuantParams]) -> Result<Int8Tensor> {
    if params.len() != x.rows() {
        return Err(QuartzError::Dimension(format!(
            "{} parameter sets for {} rows",
            params.len(),
            x.rows()
        )));
    }
    let mut codes = Vec::with_capacity(x.len());
    for (r, p) in params.iter().enumerate() {
        codes.extend(x.row(r).iter().map(|&v| p.quantize_value(v, INT8_CODE_MAX) as i8));
    }
    Ok(Int8Tensor { rows: x.rows(), cols: x.cols(), codes, params: params.to_vec() })
}

pub fn dequantize_int8(q: &Int8Tensor) -> Tensor {
    let mut data = Vec::with_capacity(q.codes.len());
    for r in 0..q.rows {
        let p = q.params_for_row(r);
        data.extend(q.row_codes(r).iter().map(|&c| p.dequantize_value(i32::from(c))));
    }
    Tensor::from_values(q.rows, q.cols, data).expect("dequantized values are finite")
}

/// Naive signed 4-bit min-max quantization, codes in `[-7, 7]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Int4Tensor {
    pub rows: usize,
    pub cols: usize,
    pub codes: Vec<i8>,
    pub params: QuantParams,
}

pub fn compute_params_int4(x: &Tensor) -> Result<QuantParams> {
    fit(x.data(), 15, 8, -8, 7)
}

pub fn quantize_int4_naive(x: &Tensor) -> Result<Int4Tensor> {
    let params = compute_params_int4(x)?;
    let codes = x
        .data()
        .iter()
        .map(|&v| params.quantize_value(v, INT4_CODE_MAX) as i8)
        .collect();
    Ok(Int4Tensor { rows: x.rows(), cols: x.cols(), codes, params })
}

pub fn dequantize_int4_naive(q: &Int4Tensor) -> Tensor {
    let data = q
        .codes
        .iter()
        .map(|&c| q.params.dequantize_value(i32::from(c)))
        .collect();
    Tensor::from_values(q.rows, q.cols, data).expect("dequantized values are finite")
}
