use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::rng::RngState;

/// Source dimension.
pub const SOURCE_DIM: usize = 64;
/// Lag-1 correlation of the Gauss-Markov process.
pub const CORRELATION: f64 = 0.9;

/// Unit-variance Gauss-Markov rows of length [`SOURCE_DIM`].
pub fn gauss_markov(n: usize, rng: RngState) -> Array2<f64> {
    let mut r = rng.rng();
    let innov = (1.0 - CORRELATION * CORRELATION).sqrt();
    let mut out = Array2::zeros((n, SOURCE_DIM));
    for mut row in out.rows_mut() {
        let mut g: f64 = r.sample(StandardNormal);
        row[0] = g;
        for v in row.iter_mut().skip(1) {
            let w: f64 = r.sample(StandardNormal);
            g = CORRELATION * g + innov * w;
            *v = g;
        }
    }
    out
}

/// Maps a unit-variance sample into `[0, 1]`.
pub fn squash(g: f64) -> f64 {
    (0.5 + g / 8.0).clamp(0.0, 1.0)
}

/// A batch of `n` squashed Gauss-Markov vectors.
pub fn make_source_batch(n: usize, rng: RngState) -> Array2<f64> {
    gauss_markov(n, rng).mapv(squash)
}
