//! Sampler statistics checked against an independent reference sampler.

use rand::SeedableRng;
use rand_distr::{Distribution as _, Normal};

use quartz_core::tensor::{read_tensor, sample_distribution, write_tensor, Distribution, Tensor};

fn mean_var(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[test]
fn gaussian_moments_match_reference_sampler() {
    let n = 1_000_000;
    let ours = sample_distribution(Distribution::Gaussian, 1.0, n, 42).unwrap();
    let (m, v) = mean_var(ours.data().iter().map(|&x| f64::from(x)));

    let mut rng = rand::rngs::StdRng::seed_from_u64(42);
    let normal = Normal::new(0.0f64, 1.0).unwrap();
    let reference: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    let (rm, rv) = mean_var(reference.iter().copied());

    assert!(m.abs() < 0.01, "mean {m}");
    assert!((v - 1.0).abs() < 0.02, "variance {v}");
    assert!(rm.abs() < 0.01 && (rv - 1.0).abs() < 0.02);
    // Both estimate the same moments; differences are sampling noise.
    assert!((m - rm).abs() < 0.01 && (v - rv).abs() < 0.02);
}

#[test]
fn laplacian_and_uniform_moments() {
    let n = 1_000_000;
    let lap = sample_distribution(Distribution::Laplacian, 0.5, n, 3).unwrap();
    let (m, v) = mean_var(lap.data().iter().map(|&x| f64::from(x)));
    assert!(m.abs() < 0.01);
    // Var = 2b^2.
    assert!((v / 0.5 - 1.0).abs() < 0.02, "{v}");
    let uni = sample_distribution(Distribution::Uniform, 2.0, n, 3).unwrap();
    let (m, v) = mean_var(uni.data().iter().map(|&x| f64::from(x)));
    assert!(m.abs() < 0.01);
    // Var = a^2 / 3.
    assert!((v / (4.0 / 3.0) - 1.0).abs() < 0.02, "{v}");
}

#[test]
fn gaussian_variance_scales_with_sigma() {
    let t = sample_distribution(Distribution::Gaussian, 3.0, 1_000_000, 9).unwrap();
    let (_, v) = mean_var(t.data().iter().map(|&x| f64::from(x)));
    assert!((v / 9.0 - 1.0).abs() < 0.02, "{v}");
}

#[test]
fn file_roundtrip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let t = Tensor::from_values(3, 3, sample_distribution(Distribution::Gaussian, 1.0, 9, 5).unwrap().into_data())
        .unwrap();
    let path = dir.path().join("t.qtnsr");
    write_tensor(&t, &path).unwrap();
    assert_eq!(read_tensor(&path).unwrap(), t);

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[..5].copy_from_slice(b"XXXXX");
    std::fs::write(&path, &bytes).unwrap();
    assert!(read_tensor(&path).unwrap_err().is_io_or_format());

    let good = t.to_bytes().unwrap();
    std::fs::write(&path, &good[..good.len() - 4]).unwrap();
    assert!(matches!(read_tensor(&path), Err(quartz_core::QuartzError::Format(_))));
    assert!(matches!(read_tensor(dir.path().join("missing")), Err(quartz_core::QuartzError::Io(_))));
}
