//! `quartz` command-line front end.
//!
//! Exit codes: 0 success, 1 validation error, 2 I/O or format error.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use quartz_core::analysis::{
    entropy_comparison_with, group_size_sweep_with, naive_report, verify_bound_with, write_reports_csv,
    write_reports_json, AnalysisOptions, AnalysisReport, EntropyMode, SampleSource, DEFAULT_SWEEP_SIZES,
};
use quartz_core::lzs::{flag_for_group, magnitude_bitlength};
use quartz_core::{
    clz32, dequantize_int8, lzs_compress, lzs_compress_with, lzs_decompress, lzs_truncation_error_bound,
    quantize_weights, quartz_gemm, read_packed, read_tensor, sample_distribution, write_packed, write_tensor,
    Distribution, Granularity, Int8Tensor, QuantParams, QuartzError, ShiftRounding, Tensor,
};

#[derive(Debug, Parser)]
#[command(name = "quartz", version, about = "Two-stage INT8 + leading-zero-suppression 4-bit quantization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw seeded synthetic samples into a QTNSR file.
    Sample(SampleArgs),
    /// Quantize a QTNSR tensor to INT8 and pack it to QPACK.
    Quantize(QuantizeArgs),
    /// Unpack a QPACK file and dequantize it back to QTNSR.
    Dequantize(DequantizeArgs),
    /// Multiply packed activations by 4-bit quantized weights.
    Matmul(MatmulArgs),
    /// Distortion, bound and entropy report for one group size.
    Analyze(AnalyzeArgs),
    /// One report per group size.
    Sweep(SweepArgs),
    /// Compare 4-bit code entropy against naive INT4.
    Entropy(EntropyArgs),
    /// Exhaustive codec and FLAG-equivalence checks.
    Selftest,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DistArg {
    Gaussian,
    Laplacian,
    Uniform,
}

impl From<DistArg> for Distribution {
    fn from(d: DistArg) -> Self {
        match d {
            DistArg::Gaussian => Distribution::Gaussian,
            DistArg::Laplacian => Distribution::Laplacian,
            DistArg::Uniform => Distribution::Uniform,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ShiftRoundArg {
    Trunc,
    Nearest,
}

impl From<ShiftRoundArg> for ShiftRounding {
    fn from(s: ShiftRoundArg) -> Self {
        match s {
            ShiftRoundArg::Trunc => ShiftRounding::Trunc,
            ShiftRoundArg::Nearest => ShiftRounding::Nearest,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EntropyModeArg {
    Symbol,
    Perbit,
}

impl From<EntropyModeArg> for EntropyMode {
    fn from(m: EntropyModeArg) -> Self {
        match m {
            EntropyModeArg::Symbol => EntropyMode::Symbol,
            EntropyModeArg::Perbit => EntropyMode::Perbit,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long, value_enum)]
    dist: DistArg,
    #[arg(long)]
    param: f64,
    #[arg(long)]
    n: u64,
    #[arg(long)]
    seed: u64,
    /// Reshape the n samples into this many rows.
    #[arg(long, default_value_t = 1)]
    rows: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct QuantizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    group_size: u32,
    #[arg(long, value_enum, default_value = "trunc")]
    shift_round: ShiftRoundArg,
}

#[derive(Debug, Args)]
struct DequantizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MatmulArgs {
    /// Packed activations (M x K).
    #[arg(long)]
    a: PathBuf,
    /// Float weights (K x N), quantized to 4 bits on load.
    #[arg(long)]
    w: PathBuf,
    /// Weight group size along K; defaults to the activation group size.
    #[arg(long)]
    wgroup: Option<u32>,
    #[arg(long)]
    out: PathBuf,
}

/// Where analysis samples come from: a tensor file or a seeded sampler.
#[derive(Debug, Args)]
struct SourceArgs {
    #[arg(long = "in", conflicts_with_all = ["dist", "param", "n", "seed"])]
    input: Option<PathBuf>,
    #[arg(long, value_enum, requires_all = ["param", "n", "seed"])]
    dist: Option<DistArg>,
    #[arg(long)]
    param: Option<f64>,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long, value_enum, default_value = "trunc")]
    shift_round: ShiftRoundArg,
    #[arg(long, value_enum, default_value = "symbol")]
    entropy_mode: EntropyModeArg,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Report destination; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, default_value_t = 16)]
    group_size: u32,
    #[command(flatten)]
    report: ReportArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Comma-separated group sizes.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SWEEP_SIZES.map(|g| g as u32))]
    sizes: Vec<u32>,
    #[command(flatten)]
    report: ReportArgs,
}

#[derive(Debug, Args)]
struct EntropyArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, default_value_t = 16)]
    group_size: u32,
    #[arg(long, value_enum, default_value = "symbol")]
    entropy_mode: EntropyModeArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn validation(msg: impl Into<String>) -> QuartzError {
    QuartzError::Validation(msg.into())
}

fn load_source(src: &SourceArgs) -> Result<(Tensor, SampleSource), QuartzError> {
    if let Some(path) = &src.input {
        return Ok((read_tensor(path)?, SampleSource::external(&path.display().to_string())));
    }
    let (Some(dist), Some(param), Some(n), Some(seed)) = (src.dist, src.param, src.n, src.seed) else {
        return Err(validation("either --in or all of --dist/--param/--n/--seed are required"));
    };
    let n = usize::try_from(n).map_err(|_| validation("--n too large"))?;
    let kind = Distribution::from(dist);
    Ok((sample_distribution(kind, param, n, seed)?, SampleSource::synthetic(kind, param, seed)))
}

fn source_flags(src: &SourceArgs) -> String {
    match &src.input {
        Some(p) => format!("--in {}", p.display()),
        None => format!(
            "--dist {} --param {} --n {} --seed {}",
            src.dist.map(|d| Distribution::from(d).name()).unwrap_or("?"),
            src.param.unwrap_or(f64::NAN),
            src.n.unwrap_or(0),
            src.seed.unwrap_or(0)
        ),
    }
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>, QuartzError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit_reports(reports: &[AnalysisReport], args: &ReportArgs) -> Result<(), QuartzError> {
    let mut out = open_out(args.out.as_deref())?;
    match args.format {
        FormatArg::Csv => write_reports_csv(reports, &mut out)?,
        FormatArg::Json => write_reports_json(reports, &mut out)?,
    }
    out.flush()?;
    Ok(())
}

fn options(r: &ReportArgs) -> AnalysisOptions {
    AnalysisOptions { shift_rounding: r.shift_round.into(), entropy_mode: r.entropy_mode.into() }
}

fn report_flags(r: &ReportArgs) -> String {
    let mut s = format!(
        "--shift-round {} --entropy-mode {} --format {}",
        r.shift_round.to_possible_value().unwrap().get_name(),
        r.entropy_mode.to_possible_value().unwrap().get_name(),
        r.format.to_possible_value().unwrap().get_name()
    );
    if let Some(p) = &r.out {
        s.push_str(&format!(" --out {}", p.display()));
    }
    s
}

/// Canonical invocation with every default spelled out.
fn invocation(cmd: &Command) -> String {
    match cmd {
        Command::Sample(a) => format!(
            "sample --dist {} --param {} --n {} --seed {} --rows {} --out {}",
            Distribution::from(a.dist).name(),
            a.param,
            a.n,
            a.seed,
            a.rows,
            a.out.display()
        ),
        Command::Quantize(a) => format!(
            "quantize --in {} --out {} --group-size {} --shift-round {}",
            a.input.display(),
            a.out.display(),
            a.group_size,
            a.shift_round.to_possible_value().unwrap().get_name()
        ),
        Command::Dequantize(a) => format!("dequantize --in {} --out {}", a.input.display(), a.out.display()),
        Command::Matmul(a) => format!(
            "matmul --a {} --w {}{} --out {}",
            a.a.display(),
            a.w.display(),
            a.wgroup.map(|g| format!(" --wgroup {g}")).unwrap_or_default(),
            a.out.display()
        ),
        Command::Analyze(a) => format!(
            "analyze {} --group-size {} {}",
            source_flags(&a.source),
            a.group_size,
            report_flags(&a.report)
        ),
        Command::Sweep(a) => format!(
            "sweep {} --sizes {} {}",
            source_flags(&a.source),
            a.sizes.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(","),
            report_flags(&a.report)
        ),
        Command::Entropy(a) => format!(
            "entropy {} --group-size {} --entropy-mode {}{}",
            source_flags(&a.source),
            a.group_size,
            a.entropy_mode.to_possible_value().unwrap().get_name(),
            a.out.as_ref().map(|p| format!(" --out {}", p.display())).unwrap_or_default()
        ),
        Command::Selftest => "selftest".to_string(),
    }
}

fn run_sample(a: &SampleArgs) -> Result<(), QuartzError> {
    let n = usize::try_from(a.n).map_err(|_| validation("--n too large"))?;
    let rows = usize::try_from(a.rows).map_err(|_| validation("--rows too large"))?;
    if rows == 0 || n % rows != 0 {
        return Err(validation(format!("--n {n} is not divisible into {rows} rows")));
    }
    let t = sample_distribution(a.dist.into(), a.param, n, a.seed)?;
    write_tensor(&Tensor::from_values(rows, n / rows, t.into_data())?, &a.out)
}

fn run_quantize(a: &QuantizeArgs) -> Result<(), QuartzError> {
    let x = read_tensor(&a.input)?;
    let q = Int8Tensor::quantize(&x, Granularity::PerTensor)?;
    let packed = lzs_compress_with(&q, a.group_size as usize, a.shift_round.into())?;
    write_packed(&packed, &a.out)
}

fn run_dequantize(a: &DequantizeArgs) -> Result<(), QuartzError> {
    let packed = read_packed(&a.input)?;
    write_tensor(&dequantize_int8(&lzs_decompress(&packed)), &a.out)
}

fn run_matmul(a: &MatmulArgs) -> Result<(), QuartzError> {
    let act = read_packed(&a.a)?;
    let w = read_tensor(&a.w)?;
    let wgroup = a.wgroup.map_or(act.group_size(), |g| g as usize);
    let wq = quantize_weights(&w, wgroup)?;
    write_tensor(&quartz_gemm(&act, &wq)?, &a.out)
}

fn run_analyze(a: &AnalyzeArgs) -> Result<(), QuartzError> {
    let (x, source) = load_source(&a.source)?;
    let mut quartz = verify_bound_with(&x, a.group_size as usize, options(&a.report))?;
    quartz.source = source;
    let naive = naive_report(&quartz, &x)?;
    emit_reports(&[quartz, naive], &a.report)
}

fn run_sweep(a: &SweepArgs) -> Result<(), QuartzError> {
    let (x, source) = load_source(&a.source)?;
    let sizes: Vec<usize> = a.sizes.iter().map(|&g| g as usize).collect();
    let mut reports = group_size_sweep_with(&x, &sizes, options(&a.report))?;
    for r in &mut reports {
        r.source = source.clone();
    }
    emit_reports(&reports, &a.report)
}

fn run_entropy(a: &EntropyArgs) -> Result<(), QuartzError> {
    let (x, _) = load_source(&a.source)?;
    let (quartz, naive) = entropy_comparison_with(&x, a.group_size as usize, a.entropy_mode.into())?;
    let mut out = open_out(a.out.as_deref())?;
    writeln!(out, "method,entropy_bits")?;
    writeln!(out, "quartz,{quartz:e}")?;
    writeln!(out, "naive_int4,{naive:e}")?;
    out.flush()?;
    Ok(())
}

fn run_selftest() -> Result<(), QuartzError> {
    let fail = |msg: String| Err(validation(format!("selftest failed: {msg}")));
    for m in 0..=127u32 {
        let eq2 = 29u32.saturating_sub(clz32(m));
        let h = magnitude_bitlength(m)?;
        if eq2 != h.saturating_sub(3) || u32::from(flag_for_group(&[m as u8])?.value()) != eq2 {
            return fail(format!("FLAG mismatch at magnitude {m}"));
        }
    }
    let codes: Vec<i8> = (-127..=127).collect();
    let q = Int8Tensor::new(1, codes.len(), codes.clone(), vec![QuantParams::new(1.0, 0)?])?;
    let restored = lzs_decompress(&lzs_compress(&q, 1)?);
    for (&c, &r) in codes.iter().zip(restored.codes()) {
        let m = u32::from(c.unsigned_abs());
        let flag = magnitude_bitlength(m)?.saturating_sub(3);
        let err = (i32::from(c) - i32::from(r)).unsigned_abs();
        if err != m % (1 << flag) || err > lzs_truncation_error_bound(m)? || (r != 0 && r.signum() != c.signum()) {
            return fail(format!("codec mismatch at code {c}"));
        }
    }
    println!("selftest: 128 FLAG checks and 255 codec checks passed");
    Ok(())
}

fn run(cmd: &Command) -> Result<(), QuartzError> {
    match cmd {
        Command::Sample(a) => run_sample(a),
        Command::Quantize(a) => run_quantize(a),
        Command::Dequantize(a) => run_dequantize(a),
        Command::Matmul(a) => run_matmul(a),
        Command::Analyze(a) => run_analyze(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Entropy(a) => run_entropy(a),
        Command::Selftest => run_selftest(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    eprintln!("# quartz {}", invocation(&cli.command));
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io_or_format() { 2 } else { 1 })
        }
    }
}
