use poisonbench::data::{generate_synthetic, SyntheticSpec};
use poisonbench::regress::{self, Family, SolverOpts};

#[test]
fn noiseless_line_recovers_slope_in_original_units() {
    let spec = SyntheticSpec {
        n: 40,
        true_weights: vec![1.0],
        true_bias: 0.0,
        noise_std: 0.0,
        seed: 11,
    };
    let (ds, norm) = generate_synthetic(&spec).unwrap();
    let fit = regress::fit(&ds, Family::Ols, 0.0, &SolverOpts::default()).unwrap();
    let (w, b) = norm.denormalize_model(&fit.model.weights, fit.model.bias);
    assert!((w[0] - 1.0).abs() < 1e-10, "slope {}", w[0]);
    assert!(b.abs() < 1e-10, "bias {b}");
}

#[test]
fn noiseless_data_has_zero_training_mse() {
    for seed in 0..5 {
        let spec = SyntheticSpec::random(5, 60, 0.0, seed);
        let (ds, _) = generate_synthetic(&spec).unwrap();
        let fit = regress::fit(&ds, Family::Ols, 0.0, &SolverOpts::default()).unwrap();
        assert!(fit.train_mse <= 1e-18, "seed {seed}: {}", fit.train_mse);
    }
}

#[test]
fn residual_variance_matches_noise_level() {
    // Unbiased residual variance divided by the noise variance expressed in
    // normalized response units; the mean over seeds should be 1.
    let (d, n, sigma) = (5usize, 300usize, 0.1);
    let ratios: Vec<f64> = (0..20)
        .map(|seed| {
            let (ds, norm) = generate_synthetic(&SyntheticSpec::random(d, n, sigma, 1000 + seed)).unwrap();
            let fit = regress::fit(&ds, Family::Ols, 0.0, &SolverOpts::default()).unwrap();
            let rss = fit.train_mse * n as f64;
            let s2 = rss / (n - d - 1) as f64;
            let sigma_norm = sigma / (norm.response.max - norm.response.min);
            s2 / (sigma_norm * sigma_norm)
        })
        .collect();
    let k = ratios.len() as f64;
    let mean = ratios.iter().sum::<f64>() / k;
    let sd = (ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    let se = sd / k.sqrt();
    assert!((mean - 1.0).abs() <= 3.0 * se, "mean ratio {mean}, se {se}");
}
