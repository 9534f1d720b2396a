//! Dense row-major 2-D tensors, seeded synthetic samplers and the QTNSR file
//! format.
//!
//! QTNSR layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       5     magic "QTNSR"
//! 5       1     version (1)
//! 6       4     rows (u32)
//! 10      4     cols (u32)
//! 14      4*n   payload, n = rows*cols IEEE-754 binary32 values, row-major
//! ```

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{format_err, validation, QuartzError, Result};
use crate::rng::Xoshiro256StarStar;

pub const TENSOR_MAGIC: &[u8; 5] = b"QTNSR";
pub const TENSOR_VERSION: u8 = 1;
pub const TENSOR_HEADER_LEN: usize = 14;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Tensor {
    pub fn from_values(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        let expected = rows
            .checked_mul(cols)
            .ok_or_else(|| QuartzError::Dimension(format!("{rows}x{cols} overflows")))?;
        if values.len() != expected {
            return Err(QuartzError::Dimension(format!(
                "{} values supplied for a {rows}x{cols} tensor",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(validation(format!("non-finite value {} at index {i}", values[i])));
        }
        Ok(Self { rows, cols, data: values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Serialize to QTNSR bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let rows = u32::try_from(self.rows).map_err(|_| validation("rows exceed u32"))?;
        let cols = u32::try_from(self.cols).map_err(|_| validation("cols exceed u32"))?;
        let mut out = Vec::with_capacity(TENSOR_HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(TENSOR_MAGIC);
        out.push(TENSOR_VERSION);
        out.extend_from_slice(&rows.to_le_bytes());
        out.extend_from_slice(&cols.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    /// Parse QTNSR bytes. Trailing bytes after the payload are rejected.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < TENSOR_HEADER_LEN {
            return Err(format_err(format!("QTNSR header truncated ({} bytes)", bytes.len())));
        }
        if &bytes[0..5] != TENSOR_MAGIC {
            return Err(format_err(format!("bad magic {:?}", String::from_utf8_lossy(&bytes[0..5]))));
        }
        if bytes[5] != TENSOR_VERSION {
            return Err(format_err(format!("unsupported QTNSR version {}", bytes[5])));
        }
        let rows = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| format_err("QTNSR shape overflows"))?;
        let payload = &bytes[TENSOR_HEADER_LEN..];
        if payload.len() < n {
            return Err(format_err(format!(
                "QTNSR payload truncated: {} of {n} bytes",
                payload.len()
            )));
        }
        if payload.len() > n {
            return Err(format_err(format!("{} trailing bytes after QTNSR payload", payload.len() - n)));
        }
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::from_values(rows, cols, data).map_err(|e| match e {
            QuartzError::Validation(m) => format_err(m),
            other => other,
        })
    }
}

pub fn tensor_from_values(rows: usize, cols: usize, values: &[f32]) -> Result<Tensor> {
    Tensor::from_values(rows, cols, values.to_vec())
}

pub fn write_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, t.to_bytes()?)?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    Tensor::from_bytes(&fs::read(path)?)
}

/// Zero-centred synthetic distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    /// Normal with standard deviation `param`.
    Gaussian,
    /// Laplace with scale `param`.
    Laplacian,
    /// Uniform on `[-param, param]`.
    Uniform,
}

impl Distribution {
    pub fn name(self) -> &'static str {
        match self {
            Distribution::Gaussian => "gaussian",
            Distribution::Laplacian => "laplacian",
            Distribution::Uniform => "uniform",
        }
    }
}

impl FromStr for Distribution {
    type Err = QuartzError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Distribution::Gaussian),
            "laplacian" => Ok(Distribution::Laplacian),
            "uniform" => Ok(Distribution::Uniform),
            other => Err(validation(format!("unknown distribution {other:?}"))),
        }
    }
}

/// Draw `n` samples into a 1×n tensor.
///
/// Transforms on top of the [`Xoshiro256StarStar`] uniform stream `u ∈ [0,1)`:
///
/// * gaussian: Box–Muller on consecutive pairs `(u1, u2)`, with
///   `r = σ·sqrt(-2 ln(1 - u1))`, emitting `r·cos(2π u2)` then `r·sin(2π u2)`;
///   an odd `n` discards the final sine.
/// * laplacian: one draw per sample, `v = u - 0.5`,
///   `x = -b·sign(v)·ln(1 - 2|v|)` (sign(0) = +1).
/// * uniform: one draw per sample, `x = a·(2u - 1)`.
///
/// All arithmetic is in f64; each sample is rounded to f32 once at the end.
pub fn sample_distribution(kind: Distribution, param: f64, n: usize, seed: u64) -> Result<Tensor> {
    if !(param > 0.0 && param.is_finite()) {
        return Err(validation(format!("distribution parameter must be > 0, got {param}")));
    }
    if n == 0 {
        return Err(validation("sample count must be > 0"));
    }
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n);
    match kind {
        Distribution::Gaussian => {
            while data.len() < n {
                let u1 = rng.next_f64();
                let u2 = rng.next_f64();
                let r = param * (-2.0 * (1.0 - u1).ln()).sqrt();
                let theta = 2.0 * PI * u2;
                data.push((r * theta.cos()) as f32);
                if data.len() < n {
                    data.push((r * theta.sin()) as f32);
                }
            }
        }
        Distribution::Laplacian => {
            for _ in 0..n {
                let v = rng.next_f64() - 0.5;
                let sign = if v < 0.0 { -1.0 } else { 1.0 };
                // 1 - 2|v| ∈ (0, 1], so the log is finite.
                data.push((-param * sign * (1.0 - 2.0 * v.abs()).ln()) as f32);
            }
        }
        Distribution::Uniform => {
            for _ in 0..n {
                data.push((param * (2.0 * rng.next_f64() - 1.0)) as f32);
            }
        }
    }
    Tensor::from_values(1, n, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_values_cases() {
        let t = tensor_from_values(1, 1, &[0.0]).unwrap();
        assert_eq!(t.data(), &[0.0]);
        let t = tensor_from_values(2, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.row(0), &[1.0, 2.0]);
        assert_eq!(t.get(1, 0), 3.0);
        assert!(matches!(
            tensor_from_values(1, 2, &[1.0, 2.0, 3.0]),
            Err(QuartzError::Dimension(_))
        ));
        assert!(matches!(
            tensor_from_values(1, 2, &[1.0, f32::NAN]),
            Err(QuartzError::Validation(_))
        ));
        assert!(matches!(
            tensor_from_values(1, 1, &[f32::INFINITY]),
            Err(QuartzError::Validation(_))
        ));
    }

    #[test]
    fn sampler_rejects_bad_param() {
        for p in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                sample_distribution(Distribution::Gaussian, p, 10, 1),
                Err(QuartzError::Validation(_))
            ));
        }
        assert!(sample_distribution(Distribution::Uniform, 1.0, 0, 1).is_err());
    }

    #[test]
    fn uniform_support() {
        let t = sample_distribution(Distribution::Uniform, 1.0, 1_000_000, 7).unwrap();
        assert_eq!((t.rows(), t.cols()), (1, 1_000_000));
        assert!(t.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn same_seed_same_stream() {
        for kind in [Distribution::Gaussian, Distribution::Laplacian, Distribution::Uniform] {
            let a = sample_distribution(kind, 0.5, 1001, 3).unwrap();
            let b = sample_distribution(kind, 0.5, 1001, 3).unwrap();
            assert_eq!(a, b);
            let c = sample_distribution(kind, 0.5, 1001, 4).unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn odd_gaussian_length_is_prefix_of_even() {
        let a = sample_distribution(Distribution::Gaussian, 1.0, 7, 11).unwrap();
        let b = sample_distribution(Distribution::Gaussian, 1.0, 8, 11).unwrap();
        assert_eq!(a.data(), &b.data()[..7]);
    }

    #[test]
    fn rejects_bad_headers() {
        let t = tensor_from_values(1, 2, &[1.0, 2.0]).unwrap();
        let mut bytes = t.to_bytes().unwrap();
        bytes[5] = 9;
        assert!(matches!(Tensor::from_bytes(&bytes), Err(QuartzError::Format(_))));
        assert!(matches!(Tensor::from_bytes(b"QTN"), Err(QuartzError::Format(_))));
        let mut bytes = t.to_bytes().unwrap();
        bytes.push(0);
        assert!(matches!(Tensor::from_bytes(&bytes), Err(QuartzError::Format(_))));
        // NaN payloads are a malformed file, not a caller mistake.
        let mut bytes = t.to_bytes().unwrap();
        bytes[14..18].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(Tensor::from_bytes(&bytes), Err(QuartzError::Format(_))));
    }
}
