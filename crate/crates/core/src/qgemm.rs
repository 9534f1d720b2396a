//! Integer GEMM over LZS-packed activations and symmetric 4-bit weights.
//!
//! For output cell `(m, n)` and weight group `g` the kernel accumulates in
//! `i32`:
//!
//! ```text
//! acc[m][n][g] = Σ_{a ⊂ g} (Σ_{k ∈ a} sm4[m][k] · w4[k][n]) << FLAG[m][a]
//!                - z[m] · colsum[g][n]
//! ```
//!
//! where `a` runs over the activation groups inside weight group `g` and
//! `sm4 = sign · mag4` is the stored 4-bit activation. Because every member
//! of an activation group shares one shift, the shifted partial sum equals
//! `Σ restored[m][k] · w4[k][n]`, and subtracting the zero-point term gives
//! `Σ (restored - z) · w4` exactly. The epilogue is
//!
//! ```text
//! out[m][n] = scale_a[m] · Σ_g scale_w[g][n] · acc[m][n][g]
//! ```
//!
//! accumulated in f64 in group order and rounded to f32 once.
//!
//! Bounds: `|Σ sm4·w4| ≤ 256·49`, shifted `≤ 200_704`, and the zero-point
//! term `≤ 128·7·256`, so `i32` never overflows.

use crate::affine::{dequantize_int8, INT4_CODE_MAX};
use crate::error::{validation, QuartzError, Result};
use crate::lzs::{lzs_decompress, PackedTensor, MAX_GROUP_SIZE};
use crate::tensor::Tensor;

pub type GemmOutput = Tensor;

/// Symmetric group-wise 4-bit weights, `K × N`, grouped along `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedWeights {
    k: usize,
    n: usize,
    group_size: usize,
    codes: Vec<i8>,
    scales: Vec<f32>,
    col_code_sums: Vec<i32>,
}

impl QuantizedWeights {
    pub fn rows(&self) -> usize {
        self.k
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn groups(&self) -> usize {
        self.k.div_ceil(self.group_size)
    }

    pub fn code(&self, k: usize, n: usize) -> i8 {
        self.codes[k * self.n + n]
    }

    pub fn codes(&self) -> &[i8] {
        &self.codes
    }

    pub fn scale(&self, group: usize, n: usize) -> f32 {
        self.scales[group * self.n + n]
    }

    pub fn col_code_sum(&self, group: usize, n: usize) -> i32 {
        self.col_code_sums[group * self.n + n]
    }

    /// Dequantized weights `scale · code` as a `K × N` tensor.
    pub fn dequantize(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.codes.len());
        for k in 0..self.k {
            let g = k / self.group_size;
            data.extend((0..self.n).map(|n| (f64::from(self.scale(g, n)) * f64::from(self.code(k, n))) as f32));
        }
        Tensor::from_values(self.k, self.n, data).expect("finite weights")
    }
}

pub fn quantize_weights(w: &Tensor, group_size: usize) -> Result<QuantizedWeights> {
    if w.is_empty() {
        return Err(validation("cannot quantize an empty weight tensor"));
    }
    if !(1..=MAX_GROUP_SIZE).contains(&group_size) {
        return Err(validation(format!("weight group size {group_size} outside 1..=256")));
    }
    let (k_dim, n_dim) = (w.rows(), w.cols());
    let groups = k_dim.div_ceil(group_size);
    let mut codes = vec![0i8; k_dim * n_dim];
    let mut scales = vec![1.0f32; groups * n_dim];
    let mut sums = vec![0i32; groups * n_dim];
    for g in 0..groups {
        let ks = g * group_size..((g + 1) * group_size).min(k_dim);
        for n in 0..n_dim {
            let amax = ks.clone().fold(0.0f32, |m, k| m.max(w.get(k, n).abs()));
            let scale = if amax == 0.0 {
                1.0
            } else {
                let s = (f64::from(amax) / f64::from(INT4_CODE_MAX)) as f32;
                // Subnormal maxima can underflow the division.
                if s > 0.0 { s } else { f32::MIN_POSITIVE }
            };
            scales[g * n_dim + n] = scale;
            let mut sum = 0i32;
            for k in ks.clone() {
                let q = (f64::from(w.get(k, n)) / f64::from(scale)).round_ties_even();
                let q = q.clamp(-f64::from(INT4_CODE_MAX), f64::from(INT4_CODE_MAX)) as i8;
                codes[k * n_dim + n] = q;
                sum += i32::from(q);
            }
            sums[g * n_dim + n] = sum;
        }
    }
    Ok(QuantizedWeights { k: k_dim, n: n_dim, group_size, codes, scales, col_code_sums: sums })
}

/// Per-(row, column, weight group) integer accumulators, row-major `M × N × G`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupAccumulators {
    pub rows: usize,
    pub cols: usize,
    pub groups: usize,
    pub values: Vec<i32>,
}

impl GroupAccumulators {
    pub fn get(&self, m: usize, n: usize, g: usize) -> i32 {
        self.values[(m * self.cols + n) * self.groups + g]
    }
}

fn check_shapes(a: &PackedTensor, w: &QuantizedWeights) -> Result<()> {
    if a.cols() != w.rows() {
        return Err(QuartzError::Dimension(format!(
            "activation K = {} but weight K = {}",
            a.cols(),
            w.rows()
        )));
    }
    if !w.group_size().is_multiple_of(a.group_size()) {
        return Err(validation(format!(
            "weight group size {} is not a multiple of activation group size {}",
            w.group_size(),
            a.group_size()
        )));
    }
    Ok(())
}

/// Shift-and-correct integer accumulation on the packed activation codes.
pub fn quartz_accumulate(a: &PackedTensor, w: &QuantizedWeights) -> Result<GroupAccumulators> {
    check_shapes(a, w)?;
    let (m_dim, n_dim, k_dim) = (a.rows(), w.cols(), a.cols());
    let w_groups = w.groups();
    let per_w_group = w.group_size() / a.group_size();
    let mut values = vec![0i32; m_dim * n_dim * w_groups];
    let mut sm4 = vec![0i32; k_dim];
    for m in 0..m_dim {
        for (k, v) in sm4.iter_mut().enumerate() {
            *v = a.signed_mag4(m, k);
        }
        let z = a.params_for_row(m).zero_point;
        for n in 0..n_dim {
            for g in 0..w_groups {
                let mut acc = 0i32;
                let a_groups = g * per_w_group..((g + 1) * per_w_group).min(a.groups_per_row());
                for ag in a_groups {
                    let partial: i32 = a
                        .group_cols(ag)
                        .map(|k| sm4[k] * i32::from(w.code(k, n)))
                        .sum();
                    acc += partial << a.flag(m, ag);
                }
                values[(m * n_dim + n) * w_groups + g] = acc - z * w.col_code_sum(g, n);
            }
        }
    }
    Ok(GroupAccumulators { rows: m_dim, cols: n_dim, groups: w_groups, values })
}

/// Apply activation and weight scales to integer accumulators.
pub fn gemm_epilogue(acc: &GroupAccumulators, a: &PackedTensor, w: &QuantizedWeights) -> GemmOutput {
    let mut out = Vec::with_capacity(acc.rows * acc.cols);
    for m in 0..acc.rows {
        let a_scale = f64::from(a.params_for_row(m).scale);
        for n in 0..acc.cols {
            let sum: f64 = (0..acc.groups)
                .map(|g| f64::from(w.scale(g, n)) * f64::from(acc.get(m, n, g)))
                .sum();
            out.push((a_scale * sum) as f32);
        }
    }
    Tensor::from_values(acc.rows, acc.cols, out).expect("finite GEMM output")
}

pub fn quartz_gemm(a: &PackedTensor, w: &QuantizedWeights) -> Result<GemmOutput> {
    let acc = quartz_accumulate(a, w)?;
    Ok(gemm_epilogue(&acc, a, w))
}

/// Integer-exact oracle: decompress the activations to full INT8 codes and
/// sum `(code - z) · w4` directly, without the shift identity.
pub fn reference_accumulate(a: &PackedTensor, w: &QuantizedWeights) -> Result<GroupAccumulators> {
    check_shapes(a, w)?;
    let restored = lzs_decompress(a);
    let (m_dim, n_dim) = (a.rows(), w.cols());
    let groups = w.groups();
    let mut values = vec![0i64; m_dim * n_dim * groups];
    for m in 0..m_dim {
        let z = i64::from(restored.params_for_row(m).zero_point);
        let row = restored.row_codes(m);
        for n in 0..n_dim {
            for (k, &code) in row.iter().enumerate() {
                let g = k / w.group_size();
                values[(m * n_dim + n) * groups + g] += (i64::from(code) - z) * i64::from(w.code(k, n));
            }
        }
    }
    let values = values
        .into_iter()
        .map(|v| i32::try_from(v).expect("accumulator within i32"))
        .collect();
    Ok(GroupAccumulators { rows: m_dim, cols: n_dim, groups, values })
}

/// Slow float oracle: decompress, dequantize both operands and multiply in f64.
pub fn reference_gemm(a: &PackedTensor, w: &QuantizedWeights) -> Result<GemmOutput> {
    check_shapes(a, w)?;
    let x = dequantize_int8(&lzs_decompress(a));
    let wd = w.dequantize();
    float_matmul(&x, &wd)
}

/// Plain `M × K` by `K × N` product accumulated in f64.
pub fn float_matmul(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    if x.cols() != w.rows() {
        return Err(QuartzError::Dimension(format!("{}x{} @ {}x{}", x.rows(), x.cols(), w.rows(), w.cols())));
    }
    let mut out = Vec::with_capacity(x.rows() * w.cols());
    for m in 0..x.rows() {
        for n in 0..w.cols() {
            let s: f64 = (0..x.cols()).map(|k| f64::from(x.get(m, k)) * f64::from(w.get(k, n))).sum();
            out.push(s as f32);
        }
    }
    Tensor::from_values(x.rows(), w.cols(), out)
}
