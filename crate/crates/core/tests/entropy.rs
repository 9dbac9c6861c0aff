use djcm_core::entropy::{gu_likelihood, sample_convolved, sequence_rate_bits, EntropyParams};
use djcm_core::quad::integrate_pieces;
use djcm_core::rng::RngState;

fn gaussian_pdf(t: f64, mean: f64, scale: f64) -> f64 {
    let z = (t - mean) / scale;
    (-0.5 * z * z).exp() / (scale * (2.0 * std::f64::consts::PI).sqrt())
}

/// Composite Simpson over the unit box around `y`.
fn box_convolution(y: f64, mean: f64, scale: f64) -> f64 {
    let n = 4000;
    let (a, b) = (y - 0.5, y + 0.5);
    let h = (b - a) / n as f64;
    let mut acc = gaussian_pdf(a, mean, scale) + gaussian_pdf(b, mean, scale);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * gaussian_pdf(a + i as f64 * h, mean, scale);
    }
    acc * h / 3.0
}

#[test]
fn likelihood_matches_numerical_box_convolution() {
    for &scale in &[0.2, 0.7, 1.5, 4.0] {
        for &mean in &[-1.3, 0.0, 0.45, 2.0] {
            for i in 0..12 {
                let y = -6.0 + i as f64;
                let got = gu_likelihood(y, mean, scale);
                let want = box_convolution(y, mean, scale);
                assert!((got - want).abs() < 1e-9, "y={y} mean={mean} scale={scale}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn sampled_rate_matches_differential_entropy() {
    let (mean, scale) = (0.3, 1.7);
    let n = 200_000;
    let mut rng = RngState::named(11, "entropy-mc").rng();
    let y: Vec<f64> = (0..n).map(|_| sample_convolved(&mut rng, mean, scale)).collect();
    let params = EntropyParams::new(vec![mean; n], vec![scale; n]).unwrap();
    let mc_bits = sequence_rate_bits(&y, &params).unwrap() / n as f64;
    let lo = mean - 12.0 * scale;
    let hi = mean + 12.0 * scale;
    let entropy_bits = integrate_pieces(
        |t| {
            let p = gu_likelihood(t, mean, scale);
            -p * p.log2()
        },
        lo,
        hi,
        &[mean - 0.5, mean + 0.5],
        1e-12,
    );
    let rel = (mc_bits - entropy_bits).abs() / entropy_bits;
    assert!(rel < 0.01, "mc {mc_bits} vs quadrature {entropy_bits}");
}

#[test]
fn rate_is_additive_over_elements() {
    let y = [0.0, 1.0, -2.0];
    let params = EntropyParams::new(vec![0.1, 0.5, -1.0], vec![1.0, 0.3, 2.0]).unwrap();
    let total = sequence_rate_bits(&y, &params).unwrap();
    let parts: f64 = y
        .iter()
        .zip([(0.1, 1.0), (0.5, 0.3), (-1.0, 2.0)])
        .map(|(&v, (m, s))| -gu_likelihood(v, m, s).log2())
        .sum();
    assert!((total - parts).abs() < 1e-12);
}
