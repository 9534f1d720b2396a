//! Stage-2 leading-zero suppression (LZS).
//!
//! Each INT8 code is split into a sign and a 7-bit magnitude. Codes are
//! grouped along the column (reduction) axis in runs of `group_size`; the
//! last group of a row may be shorter. Every group gets one shared shift
//!
//! ```text
//! FLAG = max(29 - clz32(m_0 | m_1 | ... | m_{G-1}), 0)     ∈ {0..4}
//! ```
//!
//! which keeps the three most significant active magnitude bits. Magnitudes
//! are right-shifted by FLAG (truncation toward zero by default) and stored as
//! a 4-bit nibble: bit 3 = sign (1 = negative), bits 2..0 = shifted magnitude.
//! Restoration is `sign * (mag4 << FLAG)`.
//!
//! QPACK layout (all integers little-endian):
//!
//! ```text
//! offset  size               field
//! 0       5                  magic "QPACK"
//! 5       1                  version (1)
//! 6       4                  rows (u32)
//! 10      4                  cols (u32)
//! 14      4                  group size (u32)
//! 18      4                  scale (f32)
//! 22      2                  zero point (i16)
//! 24      rows*ceil(cols/G)  flag bytes, row-major by (row, group)
//! ..      ceil(rows*cols/2)  codes; element i is nibble i of one contiguous
//!                            stream, low nibble first; a final odd nibble
//!                            leaves the high half of the last byte zero
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::affine::{Int8Tensor, QuantParams};
use crate::error::{format_err, validation, QuartzError, Result};

pub const PACK_MAGIC: &[u8; 5] = b"QPACK";
pub const PACK_VERSION: u8 = 1;
pub const PACK_HEADER_LEN: usize = 24;
pub const MAX_GROUP_SIZE: usize = 256;
pub const MAX_FLAG: u8 = 4;

const SIGN_BIT: u8 = 0b1000;
const MAG_MASK: u8 = 0b0111;

/// Count of leading zero bits in a 32-bit word; `clz32(0) == 32`.
pub fn clz32(m: u32) -> u32 {
    m.leading_zeros()
}

/// Magnitude bit-length: 0 for 0, otherwise `floor(log2 m) + 1`.
pub fn magnitude_bitlength(m: u32) -> Result<u32> {
    if m > 127 {
        return Err(validation(format!("magnitude {m} exceeds 7 bits")));
    }
    Ok(u32::BITS - m.leading_zeros())
}

/// Shared right-shift amount of one group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Flag(u8);

impl Flag {
    pub fn new(value: u8) -> Result<Self> {
        if value > MAX_FLAG {
            return Err(validation(format!("FLAG {value} outside 0..=4")));
        }
        Ok(Flag(value))
    }

    pub fn value(self) -> u8 {
        self.0
    }

    fn from_or(or: u32) -> Flag {
        Flag(29u32.saturating_sub(clz32(or)) as u8)
    }
}

pub fn flag_for_group(mags: &[u8]) -> Result<Flag> {
    if mags.is_empty() {
        return Err(validation("FLAG of an empty group"));
    }
    let mut or = 0u32;
    for &m in mags {
        if m > 127 {
            return Err(validation(format!("magnitude {m} exceeds 7 bits")));
        }
        or |= u32::from(m);
    }
    Ok(Flag::from_or(or))
}

/// Worst-case truncation of magnitude `m`, in units of the INT8 step.
pub fn lzs_truncation_error_bound(m: u32) -> Result<u32> {
    let h = magnitude_bitlength(m)?;
    Ok(if h <= 3 { 0 } else { (1 << (h - 3)) - 1 })
}

/// Expected truncation error `s8 * Σ_{k=4}^{7} P_k (2^{k-3} - 1)` for a
/// histogram `P_k = P(H = k)` over bit-lengths 0..=7.
pub fn expected_lzs_error(bitlength_probs: &[f64; 8], s8: f64) -> Result<f64> {
    if bitlength_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(validation("bit-length probabilities must lie in [0, 1]"));
    }
    let total: f64 = bitlength_probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(validation(format!("bit-length histogram sums to {total}, not 1")));
    }
    let weighted: f64 = (4..8)
        .map(|k| bitlength_probs[k] * f64::from((1u32 << (k - 3)) - 1))
        .sum();
    Ok(s8 * weighted)
}

/// How shifted-out magnitude bits are disposed of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftRounding {
    /// Drop the low bits (truncation toward zero).
    #[default]
    Trunc,
    /// Round half up on the magnitude, saturating at 7.
    Nearest,
}

fn shift_magnitude(mag: u8, flag: u8, rounding: ShiftRounding) -> u8 {
    match rounding {
        ShiftRounding::Trunc => mag >> flag,
        ShiftRounding::Nearest if flag == 0 => mag,
        ShiftRounding::Nearest => ((u16::from(mag) + (1 << (flag - 1))) >> flag).min(7) as u8,
    }
}

fn encode_nibble(code: i8, flag: u8, rounding: ShiftRounding) -> u8 {
    let mag4 = shift_magnitude(code.unsigned_abs(), flag, rounding);
    if code < 0 && mag4 != 0 {
        SIGN_BIT | mag4
    } else {
        mag4
    }
}

fn decode_nibble(nibble: u8, flag: u8) -> i8 {
    let mag = ((nibble & MAG_MASK) << flag) as i8;
    if nibble & SIGN_BIT != 0 {
        -mag
    } else {
        mag
    }
}

/// LZS-compressed activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedTensor {
    rows: usize,
    cols: usize,
    group_size: usize,
    flags: Vec<u8>,
    codes: Vec<u8>,
    params: Vec<QuantParams>,
}

pub fn groups_per_row(cols: usize, group_size: usize) -> usize {
    cols.div_ceil(group_size)
}

fn check_group_size(group_size: usize) -> Result<()> {
    if !(1..=MAX_GROUP_SIZE).contains(&group_size) {
        return Err(validation(format!("group size {group_size} outside 1..=256")));
    }
    Ok(())
}

impl PackedTensor {
    /// Assemble from raw parts, enforcing every layout invariant.
    pub fn from_parts(
        rows: usize,
        cols: usize,
        group_size: usize,
        flags: Vec<u8>,
        codes: Vec<u8>,
        params: Vec<QuantParams>,
    ) -> Result<Self> {
        check_group_size(group_size)?;
        let n = rows * cols;
        if flags.len() != rows * groups_per_row(cols, group_size) {
            return Err(QuartzError::Dimension(format!(
                "{} flag bytes for {rows} rows of {} groups",
                flags.len(),
                groups_per_row(cols, group_size)
            )));
        }
        if codes.len() != n.div_ceil(2) {
            return Err(QuartzError::Dimension(format!("{} code bytes for {n} elements", codes.len())));
        }
        if params.len() != 1 && params.len() != rows {
            return Err(QuartzError::Dimension(format!("{} parameter sets for {rows} rows", params.len())));
        }
        for p in &params {
            QuantParams::new(p.scale, p.zero_point)?;
        }
        if let Some(f) = flags.iter().find(|&&f| f > MAX_FLAG) {
            return Err(validation(format!("flag byte {f} outside 0..=4")));
        }
        if n % 2 == 1 && codes[n / 2] >> 4 != 0 {
            return Err(validation("non-zero padding nibble"));
        }
        let packed = Self { rows, cols, group_size, flags, codes, params };
        if (0..n).any(|i| packed.nibble(i) == SIGN_BIT) {
            return Err(validation("non-canonical negative zero nibble"));
        }
        Ok(packed)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn groups_per_row(&self) -> usize {
        groups_per_row(self.cols, self.group_size)
    }

    pub fn flags(&self) -> &[u8] {
        &self.flags
    }

    pub fn flag(&self, row: usize, group: usize) -> u8 {
        self.flags[row * self.groups_per_row() + group]
    }

    /// Raw nibble-packed code bytes.
    pub fn code_bytes(&self) -> &[u8] {
        &self.codes
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

    /// 4-bit symbol of element `i` (row-major).
    pub fn nibble(&self, i: usize) -> u8 {
        let byte = self.codes[i / 2];
        if i.is_multiple_of(2) {
            byte & 0x0f
        } else {
            byte >> 4
        }
    }

    /// Signed 4-bit value `sign * mag4` of element `(row, col)`.
    pub fn signed_mag4(&self, row: usize, col: usize) -> i32 {
        i32::from(decode_nibble(self.nibble(row * self.cols + col), 0))
    }

    /// Column range covered by group `g` of any row.
    pub fn group_cols(&self, g: usize) -> std::ops::Range<usize> {
        g * self.group_size..((g + 1) * self.group_size).min(self.cols)
    }

    /// Size of the QPACK encoding in bytes.
    pub fn storage_bytes(&self) -> usize {
        PACK_HEADER_LEN + self.flags.len() + self.codes.len()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.params.len() != 1 {
            return Err(format_err("QPACK v1 stores a single (scale, zero point); per-row params unsupported"));
        }
        let p = self.params[0];
        let dim = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| format_err(format!("{what} {v} exceeds u32")))
        };
        let mut out = Vec::with_capacity(self.storage_bytes());
        out.extend_from_slice(PACK_MAGIC);
        out.push(PACK_VERSION);
        out.extend_from_slice(&dim(self.rows, "rows")?.to_le_bytes());
        out.extend_from_slice(&dim(self.cols, "cols")?.to_le_bytes());
        out.extend_from_slice(&dim(self.group_size, "group size")?.to_le_bytes());
        out.extend_from_slice(&p.scale.to_le_bytes());
        out.extend_from_slice(&(p.zero_point as i16).to_le_bytes());
        out.extend_from_slice(&self.flags);
        out.extend_from_slice(&self.codes);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PACK_HEADER_LEN {
            return Err(format_err(format!("QPACK header truncated ({} bytes)", bytes.len())));
        }
        if &bytes[0..5] != PACK_MAGIC {
            return Err(format_err(format!("bad magic {:?}", String::from_utf8_lossy(&bytes[0..5]))));
        }
        if bytes[5] != PACK_VERSION {
            return Err(format_err(format!("unsupported QPACK version {}", bytes[5])));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let rows = u32_at(6);
        let cols = u32_at(10);
        let group_size = u32_at(14);
        let scale = f32::from_le_bytes(bytes[18..22].try_into().unwrap());
        let zero_point = i32::from(i16::from_le_bytes(bytes[22..24].try_into().unwrap()));
        let as_format = |e: QuartzError| match e {
            QuartzError::Validation(m) | QuartzError::Dimension(m) => format_err(m),
            other => other,
        };
        check_group_size(group_size).map_err(as_format)?;
        let n_flags = rows
            .checked_mul(groups_per_row(cols, group_size))
            .ok_or_else(|| format_err("QPACK shape overflows"))?;
        let n_codes = rows
            .checked_mul(cols)
            .ok_or_else(|| format_err("QPACK shape overflows"))?
            .div_ceil(2);
        let body = &bytes[PACK_HEADER_LEN..];
        if body.len() != n_flags + n_codes {
            return Err(format_err(format!(
                "QPACK body is {} bytes, expected {}",
                body.len(),
                n_flags + n_codes
            )));
        }
        let params = QuantParams::new(scale, zero_point).map_err(as_format)?;
        Self::from_parts(
            rows,
            cols,
            group_size,
            body[..n_flags].to_vec(),
            body[n_flags..].to_vec(),
            vec![params],
        )
        .map_err(as_format)
    }
}

pub fn lzs_compress(q: &Int8Tensor, group_size: usize) -> Result<PackedTensor> {
    lzs_compress_with(q, group_size, ShiftRounding::Trunc)
}

pub fn lzs_compress_with(q: &Int8Tensor, group_size: usize, rounding: ShiftRounding) -> Result<PackedTensor> {
    check_group_size(group_size)?;
    let (rows, cols) = (q.rows(), q.cols());
    let gpr = groups_per_row(cols, group_size);
    let mut flags = Vec::with_capacity(rows * gpr);
    let mut codes = vec![0u8; (rows * cols).div_ceil(2)];
    for r in 0..rows {
        let row = q.row_codes(r);
        for (g, chunk) in row.chunks(group_size).enumerate() {
            let or = chunk.iter().fold(0u32, |acc, &c| acc | u32::from(c.unsigned_abs()));
            let flag = Flag::from_or(or).value();
            flags.push(flag);
            let base = r * cols + g * group_size;
            for (j, &c) in chunk.iter().enumerate() {
                let i = base + j;
                codes[i / 2] |= encode_nibble(c, flag, rounding) << (4 * (i % 2));
            }
        }
    }
    Ok(PackedTensor { rows, cols, group_size, flags, codes, params: q.params().to_vec() })
}

pub fn lzs_decompress(p: &PackedTensor) -> Int8Tensor {
    let mut codes = Vec::with_capacity(p.rows * p.cols);
    for r in 0..p.rows {
        for g in 0..p.groups_per_row() {
            let flag = p.flag(r, g);
            codes.extend(p.group_cols(g).map(|c| decode_nibble(p.nibble(r * p.cols + c), flag)));
        }
    }
    Int8Tensor::new(p.rows, p.cols, codes, p.params.clone()).expect("restored codes fit in [-127, 127]")
}

pub fn write_packed(p: &PackedTensor, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, p.to_bytes()?)?;
    Ok(())
}

pub fn read_packed(path: impl AsRef<Path>) -> Result<PackedTensor> {
    PackedTensor::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn int8(codes: &[i8]) -> Int8Tensor {
        let p = QuantParams { scale: 1.0, zero_point: 0 };
        Int8Tensor::new(1, codes.len(), codes.to_vec(), vec![p]).unwrap()
    }

    #[test]
    fn clz_examples() {
        assert_eq!(clz32(0), 32);
        assert_eq!(clz32(1), 31);
        assert_eq!(clz32(127), 25);
    }

    #[test]
    fn flag_examples() {
        assert_eq!(flag_for_group(&[3, 5, 7]).unwrap().value(), 0);
        assert_eq!(flag_for_group(&[8]).unwrap().value(), 1);
        assert_eq!(flag_for_group(&[120, 3]).unwrap().value(), 4);
        assert_eq!(flag_for_group(&[0; 16]).unwrap().value(), 0);
        assert!(flag_for_group(&[128]).is_err());
        assert!(flag_for_group(&[]).is_err());
    }

    #[test]
    fn bitlength_examples() {
        assert_eq!(magnitude_bitlength(0).unwrap(), 0);
        assert_eq!(magnitude_bitlength(1).unwrap(), 1);
        assert_eq!(magnitude_bitlength(127).unwrap(), 7);
        assert!(magnitude_bitlength(128).is_err());
    }

    #[test]
    fn truncation_bound_examples() {
        assert_eq!(lzs_truncation_error_bound(7).unwrap(), 0);
        assert_eq!(lzs_truncation_error_bound(8).unwrap(), 1);
        assert_eq!(lzs_truncation_error_bound(127).unwrap(), 15);
        assert!(lzs_truncation_error_bound(200).is_err());
    }

    #[test]
    fn expected_error_examples() {
        let mut p = [0.0; 8];
        p[7] = 1.0;
        assert_eq!(expected_lzs_error(&p, 1.0).unwrap(), 15.0);
        let p = [0.25, 0.25, 0.25, 0.25, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(expected_lzs_error(&p, 3.0).unwrap(), 0.0);
        let p = [0.9, 0.0, 0.0, 0.0, 0.1, 0.0, 0.0, 0.0];
        assert!((expected_lzs_error(&p, 1.0).unwrap() - 0.1).abs() < 1e-15);
        assert!(expected_lzs_error(&[0.5; 8], 1.0).is_err());
    }

    #[test]
    fn compress_examples() {
        let p = lzs_compress(&int8(&[-100]), 1).unwrap();
        assert_eq!(p.flags(), &[4]);
        assert_eq!(p.nibble(0), SIGN_BIT | 6);
        assert_eq!(lzs_decompress(&p).codes(), &[-96]);

        let p = lzs_compress(&int8(&[7, -3]), 2).unwrap();
        assert_eq!(p.flags(), &[0]);
        assert_eq!(p.code_bytes(), &[0x07 | ((SIGN_BIT | 3) << 4)]);
        assert_eq!(lzs_decompress(&p).codes(), &[7, -3]);

        let p = lzs_compress(&int8(&[0, 0, 0]), 2).unwrap();
        assert_eq!(p.flags(), &[0, 0]);
        assert_eq!(p.code_bytes(), &[0, 0]);
    }

    #[test]
    fn negative_zero_is_canonicalised() {
        let p = lzs_compress(&int8(&[-3, 64]), 2).unwrap();
        assert_eq!(p.flags(), &[4]);
        assert_eq!(p.nibble(0), 0);
        assert_eq!(lzs_decompress(&p).codes(), &[0, 64]);
    }

    #[test]
    fn tail_group_flag_ignores_missing_members() {
        let p = lzs_compress(&int8(&[100, 1, 2, 3, 5]), 4).unwrap();
        assert_eq!(p.flags(), &[4, 0]);
        assert_eq!(lzs_decompress(&p).codes()[4], 5);
    }

    #[test]
    fn invalid_group_sizes() {
        assert!(lzs_compress(&int8(&[1]), 0).is_err());
        assert!(lzs_compress(&int8(&[1]), 257).is_err());
        assert!(lzs_compress(&int8(&[1]), 256).is_ok());
    }

    #[test]
    fn nearest_rounding_saturates() {
        let p = lzs_compress_with(&int8(&[127, -104, 9]), 1, ShiftRounding::Nearest).unwrap();
        // 127: (127 + 8) >> 4 = 8, saturates to 7. 104: (104 + 8) >> 4 = 7. 9: FLAG 1, (9 + 1) >> 1 = 5.
        assert_eq!(lzs_decompress(&p).codes(), &[112, -112, 10]);
    }

    #[test]
    fn from_parts_checks() {
        let good = lzs_compress(&int8(&[1, -2, 3]), 2).unwrap();
        let p = good.params().to_vec();
        assert!(PackedTensor::from_parts(1, 3, 2, vec![5, 0], good.code_bytes().to_vec(), p.clone()).is_err());
        assert!(PackedTensor::from_parts(1, 3, 2, vec![0], good.code_bytes().to_vec(), p.clone()).is_err());
        assert!(PackedTensor::from_parts(1, 3, 2, vec![0, 0], vec![0x08, 0x00], p.clone()).is_err());
        assert!(PackedTensor::from_parts(1, 3, 2, vec![0, 0], vec![0x00, 0x10], p.clone()).is_err());
        assert!(PackedTensor::from_parts(1, 3, 2, good.flags().to_vec(), good.code_bytes().to_vec(), p).is_ok());
    }

    #[test]
    fn bad_files() {
        let good = lzs_compress(&int8(&[1, -2, 3]), 2).unwrap();
        let bytes = good.to_bytes().unwrap();
        assert_eq!(bytes.len(), good.storage_bytes());
        let mut bad = bytes.clone();
        bad[..5].copy_from_slice(b"XXXXX");
        assert!(matches!(PackedTensor::from_bytes(&bad), Err(QuartzError::Format(_))));
        let mut bad = bytes.clone();
        bad[5] = 2;
        assert!(matches!(PackedTensor::from_bytes(&bad), Err(QuartzError::Format(_))));
        assert!(matches!(
            PackedTensor::from_bytes(&bytes[..bytes.len() - 1]),
            Err(QuartzError::Format(_))
        ));
        let mut bad = bytes.clone();
        bad[24] = 7;
        assert!(matches!(PackedTensor::from_bytes(&bad), Err(QuartzError::Format(_))));
        assert_eq!(PackedTensor::from_bytes(&bytes).unwrap(), good);
    }

    #[test]
    fn per_row_params_cannot_be_written() {
        let p = QuantParams { scale: 1.0, zero_point: 0 };
        let q = Int8Tensor::new(2, 1, vec![1, 2], vec![p, p]).unwrap();
        let packed = lzs_compress(&q, 1).unwrap();
        assert!(matches!(packed.to_bytes(), Err(QuartzError::Format(_))));
    }
}
