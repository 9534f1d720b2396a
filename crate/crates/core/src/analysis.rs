//! Distortion, entropy and error-bound measurements on synthetic data.
//!
//! Every figure here is computed from the same input samples for both the
//! LZS path (INT8 then group-wise suppression) and the naive INT4 min-max
//! baseline, so comparisons are paired. Reductions run sequentially in index
//! order; reports are bit-stable for a given input.

use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::affine::{
    compute_params_int8, dequantize_int4_naive, dequantize_int8, quantize_int4_naive, quantize_int8, Int4Tensor,
    Int8Tensor,
};
use crate::error::{validation, QuartzError, Result};
use crate::lzs::{lzs_compress_with, lzs_decompress, lzs_truncation_error_bound, PackedTensor, ShiftRounding};
use crate::tensor::{Distribution, Tensor};

/// Group sizes swept by default: powers of two from 1 to 256.
pub const DEFAULT_SWEEP_SIZES: [usize; 9] = [1, 2, 4, 8, 16, 32, 64, 128, 256];

/// `E[E_LZS] < (s4 - s8) / 2` with `s4 = 16 s8`.
pub const SUFFICIENT_LZS_LSB: f64 = 7.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyMode {
    /// Shannon entropy over the 16-symbol nibble alphabet.
    #[default]
    Symbol,
    /// Sum of the four per-bit binary entropies.
    Perbit,
}

impl FromStr for EntropyMode {
    type Err = QuartzError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symbol" => Ok(EntropyMode::Symbol),
            "perbit" => Ok(EntropyMode::Perbit),
            other => Err(validation(format!("unknown entropy mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Quartz,
    NaiveInt4,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Quartz => "quartz",
            Method::NaiveInt4 => "naive_int4",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distortion {
    pub mean_abs_error: f64,
    pub mse: f64,
}

pub fn measure_distortion(x: &Tensor, x_hat: &Tensor) -> Result<Distortion> {
    if (x.rows(), x.cols()) != (x_hat.rows(), x_hat.cols()) {
        return Err(QuartzError::Dimension(format!(
            "{}x{} vs {}x{}",
            x.rows(),
            x.cols(),
            x_hat.rows(),
            x_hat.cols()
        )));
    }
    if x.is_empty() {
        return Ok(Distortion { mean_abs_error: 0.0, mse: 0.0 });
    }
    let (mut abs, mut sq) = (0.0f64, 0.0f64);
    for (&a, &b) in x.data().iter().zip(x_hat.data()) {
        let d = f64::from(a) - f64::from(b);
        abs += d.abs();
        sq += d * d;
    }
    let n = x.len() as f64;
    Ok(Distortion { mean_abs_error: abs / n, mse: sq / n })
}

fn symbol_counts(symbols: &[u8]) -> Result<[u64; 16]> {
    if symbols.is_empty() {
        return Err(validation("entropy of an empty symbol stream"));
    }
    let mut counts = [0u64; 16];
    for &s in symbols {
        if s > 0x0f {
            return Err(validation(format!("symbol {s} is wider than 4 bits")));
        }
        counts[s as usize] += 1;
    }
    Ok(counts)
}

fn shannon(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let total = total as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            p * p.log2()
        })
        .sum::<f64>()
}

/// Shannon entropy in bits of a stream of 4-bit symbols, in `[0, 4]`.
pub fn code_entropy(symbols: &[u8]) -> Result<f64> {
    // Clamp away the -0.0 a single-symbol stream produces.
    Ok(shannon(&symbol_counts(symbols)?).max(0.0))
}

/// Binary entropy of each bit position, LSB first.
pub fn perbit_entropy(symbols: &[u8]) -> Result<[f64; 4]> {
    let counts = symbol_counts(symbols)?;
    let total: u64 = counts.iter().sum();
    let mut out = [0.0; 4];
    for (bit, h) in out.iter_mut().enumerate() {
        let ones: u64 = (0..16).filter(|s| s >> bit & 1 == 1).map(|s| counts[s]).sum();
        *h = shannon(&[ones, total - ones]).max(0.0);
    }
    Ok(out)
}

pub fn entropy(symbols: &[u8], mode: EntropyMode) -> Result<f64> {
    match mode {
        EntropyMode::Symbol => code_entropy(symbols),
        EntropyMode::Perbit => Ok(perbit_entropy(symbols)?.iter().sum()),
    }
}

/// Stored sign|magnitude nibbles of a packed tensor.
pub fn quartz_symbols(p: &PackedTensor) -> Vec<u8> {
    (0..p.rows() * p.cols()).map(|i| p.nibble(i)).collect()
}

/// Naive INT4 codes as 4-bit two's-complement nibbles.
pub fn naive_symbols(q: &Int4Tensor) -> Vec<u8> {
    q.codes.iter().map(|&c| (c as u8) & 0x0f).collect()
}

/// Elements per FLAG region F0..F4.
pub fn flag_region_histogram(p: &PackedTensor) -> [u64; 5] {
    let mut hist = [0u64; 5];
    for r in 0..p.rows() {
        for g in 0..p.groups_per_row() {
            hist[p.flag(r, g) as usize] += p.group_cols(g).len() as u64;
        }
    }
    hist
}

/// Empirical `P(H(|code|) = k)` for k in 0..=7.
pub fn bitlength_histogram(q: &Int8Tensor) -> [f64; 8] {
    let mut counts = [0u64; 8];
    for &c in q.codes() {
        counts[(u8::BITS - c.unsigned_abs().leading_zeros()) as usize] += 1;
    }
    let n = q.codes().len().max(1) as f64;
    counts.map(|c| c as f64 / n)
}

/// Intermediate products of the two-stage path on one input.
#[derive(Debug, Clone)]
pub struct QuartzRoundtrip {
    pub int8: Int8Tensor,
    pub packed: PackedTensor,
    pub restored: Int8Tensor,
    pub output: Tensor,
}

pub fn quartz_roundtrip(x: &Tensor, group_size: usize, rounding: ShiftRounding) -> Result<QuartzRoundtrip> {
    let int8 = quantize_int8(x, &compute_params_int8(x)?);
    let packed = lzs_compress_with(&int8, group_size, rounding)?;
    let restored = lzs_decompress(&packed);
    let output = dequantize_int8(&restored);
    Ok(QuartzRoundtrip { int8, packed, restored, output })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub shift_rounding: ShiftRounding,
    pub entropy_mode: EntropyMode,
}

/// Where the analysed samples came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSource {
    pub distribution: String,
    pub param: Option<f64>,
    pub seed: Option<u64>,
}

impl SampleSource {
    pub fn synthetic(kind: Distribution, param: f64, seed: u64) -> Self {
        Self { distribution: kind.name().to_string(), param: Some(param), seed: Some(seed) }
    }

    pub fn external(name: &str) -> Self {
        Self { distribution: name.to_string(), param: None, seed: None }
    }
}

impl Default for SampleSource {
    fn default() -> Self {
        Self::external("tensor")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub method: Method,
    pub source: SampleSource,
    pub n: u64,
    pub group_size: u64,
    pub shift_rounding: ShiftRounding,
    pub entropy_mode: EntropyMode,
    /// Mean |x - x'| of this report's method.
    pub mean_abs_error: f64,
    pub mse: f64,
    /// Entropy of this method's 4-bit stream under `entropy_mode`.
    pub entropy_bits: f64,
    /// Entropy of the other method's stream, same mode.
    pub other_entropy_bits: f64,
    pub perbit_entropy: [f64; 4],
    /// Empirical `P(|code| >= 8)` over INT8 codes.
    pub mass_high_bins: f64,
    pub bound_condition_met: bool,
    /// Mean error of the full INT8 + LZS path.
    pub e_total: f64,
    /// Mean error of naive INT4 min-max.
    pub e_q4: f64,
    /// Mean error of INT8 alone.
    pub e_q8: f64,
    /// Standard error of the mean paired difference `|e_q4| - |e_total|`.
    pub diff_std_err: f64,
    /// `e_q4 - e_total > 3 * diff_std_err`.
    pub total_beats_int4: bool,
    pub s8: f64,
    pub s4: f64,
    /// `s8 * Σ_{k>=4} P_k (2^{k-3} - 1)`.
    pub expected_lzs_error: f64,
    /// `15 s8 P(|code| >= 8)`.
    pub worst_case_lzs_error: f64,
    pub lzs_sufficient_condition: bool,
    /// Mean and max of `| |code| - |restored| |` in INT8 steps.
    pub mean_stage2_error_lsb: f64,
    pub max_stage2_error_lsb: u32,
    pub flag_region_counts: [u64; 5],
    pub h_histogram: [f64; 8],
}

struct PairedErrors {
    e_total: f64,
    e_q4: f64,
    std_err: f64,
}

fn paired_errors(x: &Tensor, quartz: &Tensor, naive: &Tensor) -> PairedErrors {
    let n = x.len() as f64;
    let (mut st, mut s4, mut sd, mut sdd) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for ((&v, &q), &q4) in x.data().iter().zip(quartz.data()).zip(naive.data()) {
        let et = (f64::from(v) - f64::from(q)).abs();
        let e4 = (f64::from(v) - f64::from(q4)).abs();
        st += et;
        s4 += e4;
        sd += e4 - et;
        sdd += (e4 - et) * (e4 - et);
    }
    let mean_d = sd / n;
    let var = if x.len() > 1 { ((sdd - n * mean_d * mean_d) / (n - 1.0)).max(0.0) } else { 0.0 };
    PairedErrors { e_total: st / n, e_q4: s4 / n, std_err: (var / n).sqrt() }
}

/// Run both paths on `x` and collect every bound-related measurement.
///
/// Returns the `quartz` report; `e_q4` and the naive entropy ride along for
/// the paired comparison.
pub fn verify_bound(x: &Tensor, group_size: usize) -> Result<AnalysisReport> {
    verify_bound_with(x, group_size, AnalysisOptions::default())
}

pub fn verify_bound_with(x: &Tensor, group_size: usize, opts: AnalysisOptions) -> Result<AnalysisReport> {
    let rt = quartz_roundtrip(x, group_size, opts.shift_rounding)?;
    let q4 = quantize_int4_naive(x)?;
    let naive = dequantize_int4_naive(&q4);
    let paired = paired_errors(x, &rt.output, &naive);
    let e_q8 = measure_distortion(x, &dequantize_int8(&rt.int8))?.mean_abs_error;
    let quartz_dist = measure_distortion(x, &rt.output)?;

    let n = x.len() as u64;
    let high = rt.int8.codes().iter().filter(|c| c.unsigned_abs() >= 8).count();
    let mass_high_bins = high as f64 / n as f64;
    let s8 = f64::from(rt.int8.params()[0].scale);
    let h_histogram = bitlength_histogram(&rt.int8);
    let weighted: f64 = (4..8).map(|k| h_histogram[k] * f64::from((1u32 << (k - 3)) - 1)).sum();
    let expected_lzs_error = s8 * weighted;

    let (mut stage2_sum, mut stage2_max) = (0u64, 0u32);
    for (&a, &b) in rt.int8.codes().iter().zip(rt.restored.codes()) {
        let e = (i32::from(a) - i32::from(b)).unsigned_abs();
        stage2_sum += u64::from(e);
        stage2_max = stage2_max.max(e);
    }

    let q_symbols = quartz_symbols(&rt.packed);
    let n_symbols = naive_symbols(&q4);
    Ok(AnalysisReport {
        method: Method::Quartz,
        source: SampleSource::default(),
        n,
        group_size: group_size as u64,
        shift_rounding: opts.shift_rounding,
        entropy_mode: opts.entropy_mode,
        mean_abs_error: quartz_dist.mean_abs_error,
        mse: quartz_dist.mse,
        entropy_bits: entropy(&q_symbols, opts.entropy_mode)?,
        other_entropy_bits: entropy(&n_symbols, opts.entropy_mode)?,
        perbit_entropy: perbit_entropy(&q_symbols)?,
        mass_high_bins,
        bound_condition_met: mass_high_bins < 0.5,
        e_total: paired.e_total,
        e_q4: paired.e_q4,
        e_q8,
        diff_std_err: paired.std_err,
        total_beats_int4: paired.e_q4 - paired.e_total > 3.0 * paired.std_err,
        s8,
        s4: f64::from(q4.params.scale),
        expected_lzs_error,
        worst_case_lzs_error: 15.0 * s8 * mass_high_bins,
        lzs_sufficient_condition: weighted < SUFFICIENT_LZS_LSB,
        mean_stage2_error_lsb: stage2_sum as f64 / n as f64,
        max_stage2_error_lsb: stage2_max,
        flag_region_counts: flag_region_histogram(&rt.packed),
        h_histogram,
    })
}

/// The same measurements viewed from the naive INT4 side.
pub fn naive_report(quartz: &AnalysisReport, x: &Tensor) -> Result<AnalysisReport> {
    let q4 = quantize_int4_naive(x)?;
    let naive = dequantize_int4_naive(&q4);
    let dist = measure_distortion(x, &naive)?;
    let symbols = naive_symbols(&q4);
    Ok(AnalysisReport {
        method: Method::NaiveInt4,
        mean_abs_error: dist.mean_abs_error,
        mse: dist.mse,
        entropy_bits: quartz.other_entropy_bits,
        other_entropy_bits: quartz.entropy_bits,
        perbit_entropy: perbit_entropy(&symbols)?,
        ..quartz.clone()
    })
}

pub fn group_size_sweep(x: &Tensor, sizes: &[usize]) -> Result<Vec<AnalysisReport>> {
    group_size_sweep_with(x, sizes, AnalysisOptions::default())
}

pub fn group_size_sweep_with(x: &Tensor, sizes: &[usize], opts: AnalysisOptions) -> Result<Vec<AnalysisReport>> {
    if sizes.is_empty() {
        return Err(validation("group-size sweep needs at least one size"));
    }
    sizes.iter().map(|&g| verify_bound_with(x, g, opts)).collect()
}

/// Symbol entropy of the LZS nibble stream and of the naive INT4 stream.
pub fn entropy_comparison(x: &Tensor, group_size: usize) -> Result<(f64, f64)> {
    entropy_comparison_with(x, group_size, EntropyMode::Symbol)
}

pub fn entropy_comparison_with(x: &Tensor, group_size: usize, mode: EntropyMode) -> Result<(f64, f64)> {
    let rt = quartz_roundtrip(x, group_size, ShiftRounding::Trunc)?;
    let q4 = quantize_int4_naive(x)?;
    Ok((entropy(&quartz_symbols(&rt.packed), mode)?, entropy(&naive_symbols(&q4), mode)?))
}

/// Worst-case truncation over every representable INT8 code, in steps.
pub fn worst_case_stage2_lsb() -> u32 {
    (0..=127u32)
        .map(|m| lzs_truncation_error_bound(m).expect("in range"))
        .max()
        .unwrap_or(0)
}

pub const CSV_COLUMNS: [&str; 41] = [
    "method",
    "distribution",
    "param",
    "seed",
    "n",
    "group_size",
    "shift_rounding",
    "entropy_mode",
    "mean_abs_error",
    "mse",
    "entropy_bits",
    "other_entropy_bits",
    "perbit_entropy_b0",
    "perbit_entropy_b1",
    "perbit_entropy_b2",
    "perbit_entropy_b3",
    "mass_high_bins",
    "bound_condition_met",
    "e_total",
    "e_q4",
    "e_q8",
    "diff_std_err",
    "total_beats_int4",
    "s8",
    "s4",
    "expected_lzs_error",
    "worst_case_lzs_error",
    "lzs_sufficient_condition",
    "mean_stage2_error_lsb",
    "max_stage2_error_lsb",
    "flag_f0",
    "flag_f1",
    "flag_f2",
    "flag_f3",
    "flag_f4",
    "h0_h1",
    "h2_h3",
    "h4",
    "h5",
    "h6",
    "h7",
];

impl AnalysisReport {
    fn csv_record(&self) -> Vec<String> {
        let f = |v: f64| format!("{v:e}");
        let h = &self.h_histogram;
        let mut rec = vec![
            self.method.name().to_string(),
            self.source.distribution.clone(),
            self.source.param.map(f).unwrap_or_default(),
            self.source.seed.map(|s| s.to_string()).unwrap_or_default(),
            self.n.to_string(),
            self.group_size.to_string(),
            match self.shift_rounding {
                ShiftRounding::Trunc => "trunc".into(),
                ShiftRounding::Nearest => "nearest".into(),
            },
            match self.entropy_mode {
                EntropyMode::Symbol => "symbol".into(),
                EntropyMode::Perbit => "perbit".into(),
            },
            f(self.mean_abs_error),
            f(self.mse),
            f(self.entropy_bits),
            f(self.other_entropy_bits),
        ];
        rec.extend(self.perbit_entropy.iter().map(|&v| f(v)));
        rec.extend([
            f(self.mass_high_bins),
            self.bound_condition_met.to_string(),
            f(self.e_total),
            f(self.e_q4),
            f(self.e_q8),
            f(self.diff_std_err),
            self.total_beats_int4.to_string(),
            f(self.s8),
            f(self.s4),
            f(self.expected_lzs_error),
            f(self.worst_case_lzs_error),
            self.lzs_sufficient_condition.to_string(),
            f(self.mean_stage2_error_lsb),
            self.max_stage2_error_lsb.to_string(),
        ]);
        rec.extend(self.flag_region_counts.iter().map(|c| c.to_string()));
        rec.push(f(h[0] + h[1]));
        rec.push(f(h[2] + h[3]));
        rec.extend(h[4..].iter().map(|&v| f(v)));
        rec
    }
}

/// Write reports as CSV with a header row in [`CSV_COLUMNS`] order.
pub fn write_reports_csv<W: Write>(reports: &[AnalysisReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| QuartzError::Io(std::io::Error::other(e));
    w.write_record(CSV_COLUMNS).map_err(io)?;
    for r in reports {
        w.write_record(r.csv_record()).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_reports_json<W: Write>(reports: &[AnalysisReport], mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, reports).map_err(|e| QuartzError::Io(std::io::Error::other(e)))?;
    out.write_all(b"\n")?;
    Ok(())
}
