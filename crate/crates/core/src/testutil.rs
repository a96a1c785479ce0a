//! Shared helpers for unit tests.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::wavefield::{fft, ComplexField};
use crate::C64;

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn random_array(n: usize, rng: &mut ChaCha8Rng) -> Array2<C64> {
    Array2::from_shape_simple_fn((n, n), || {
        C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    })
}

pub(crate) fn random_real(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, n), || rng.sample::<f64, _>(StandardNormal))
}

pub(crate) fn random_field(n: usize, pixel: f64, wavelength: f64, rng: &mut ChaCha8Rng) -> ComplexField {
    ComplexField::new(random_array(n, rng), pixel, wavelength).unwrap()
}

/// White noise low-passed by a Gaussian of `sigma` pixels (periodic).
pub(crate) fn smooth_array(n: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Array2<C64> {
    let mut a = random_array(n, rng);
    fft::fft2_inplace(&mut a);
    let f = fft::fftfreq(n, 1.0);
    let c = 2.0 * std::f64::consts::PI.powi(2) * sigma * sigma;
    for ((i, j), v) in a.indexed_iter_mut() {
        *v *= (-c * (f[i] * f[i] + f[j] * f[j])).exp();
    }
    fft::ifft2_inplace(&mut a);
    let scale = (a.iter().map(|v| v.norm_sqr()).sum::<f64>() / (n * n) as f64).sqrt();
    a / C64::new(scale, 0.0)
}

pub(crate) fn rel_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}
