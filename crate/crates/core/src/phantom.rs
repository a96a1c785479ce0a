//! Synthetic ground truth: the layered hollow cube, its transmittances, a
//! KB-mirror-like structured probe and the low-count Poisson protocol.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::forward::Frame;
use crate::tomo::RadonOperator;
use crate::wavefield::ComplexField;
use crate::{HoloError, Result, C64};

/// Refractive-index decrement and absorption on an `n³` grid `[z, y, x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub delta: Array3<f64>,
    pub beta: Array3<f64>,
    pub voxel_size: f64,
}

impl Volume {
    pub fn new(delta: Array3<f64>, beta: Array3<f64>, voxel_size: f64) -> Result<Self> {
        let (a, b, c) = delta.dim();
        if a != b || b != c || a == 0 {
            return Err(HoloError::invalid("volume must be a non-empty cube"));
        }
        if beta.dim() != delta.dim() {
            return Err(HoloError::ShapeMismatch {
                expected: delta.shape().to_vec(),
                found: beta.shape().to_vec(),
            });
        }
        if delta.iter().chain(beta.iter()).any(|v| !v.is_finite()) {
            return Err(HoloError::NonFinite("volume".into()));
        }
        if beta.iter().any(|&v| v < 0.0) {
            return Err(HoloError::invalid("absorption must be non-negative"));
        }
        if !(voxel_size > 0.0) {
            return Err(HoloError::invalid("voxel size must be positive"));
        }
        Ok(Self {
            delta,
            beta,
            voxel_size,
        })
    }

    pub fn zeros(n: usize, voxel_size: f64) -> Result<Self> {
        Self::new(Array3::zeros((n, n, n)), Array3::zeros((n, n, n)), voxel_size)
    }

    pub fn n(&self) -> usize {
        self.delta.len_of(Axis(0))
    }
}

/// Poisson noise protocol: counts are divided by `scale`, drawn, and
/// multiplied back.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub enabled: bool,
    pub scale: f64,
    pub seed: u64,
    /// Photon counts per object-plane pixel for unit intensity. Frames in
    /// intensity units are converted to counts with this gain before the
    /// draw and back afterwards.
    pub photons: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            enabled: false,
            scale: 20.0,
            seed: 0,
            photons: 1.0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(HoloError::invalid("noise scale must be positive"));
        }
        if !(self.photons > 0.0 && self.photons.is_finite()) {
            return Err(HoloError::invalid("photon gain must be positive"));
        }
        Ok(())
    }
}

/// Hollow cube of side `n/2` centred in the grid whose walls are nested
/// layers, outermost first. `β = δ/100`.
pub fn layered_cube(n: usize, voxel_size: f64, layer_deltas: &[f64], layer_thicknesses: &[usize]) -> Result<Volume> {
    if n < 32 {
        return Err(HoloError::invalid("phantom grid must be at least 32"));
    }
    if layer_deltas.len() != layer_thicknesses.len() {
        return Err(HoloError::invalid("one thickness per layer is required"));
    }
    let side = n / 2;
    let total: usize = layer_thicknesses.iter().sum();
    if 2 * total > side {
        return Err(HoloError::invalid(format!(
            "layers of total thickness {total} do not fit a cube of side {side}"
        )));
    }
    let lo = (n - side) / 2;
    let hi = lo + side;
    let mut bounds = Vec::with_capacity(layer_deltas.len());
    let mut depth = 0;
    for (&d, &t) in layer_deltas.iter().zip(layer_thicknesses) {
        bounds.push((depth + t, d));
        depth += t;
    }
    let depth_of = |i: usize| -> Option<usize> { (lo..hi).contains(&i).then(|| (i - lo).min(hi - 1 - i)) };
    let delta = Array3::from_shape_fn((n, n, n), |(z, y, x)| {
        match (depth_of(z), depth_of(y), depth_of(x)) {
            (Some(a), Some(b), Some(c)) => {
                let d = a.min(b).min(c);
                bounds.iter().find(|(end, _)| d < *end).map_or(0.0, |(_, v)| *v)
            }
            _ => 0.0,
        }
    });
    let beta = delta.mapv(|d| d / 100.0);
    Volume::new(delta, beta, voxel_size)
}

/// `exp((2πi/ν)·(-p_δ + i p_β))` from projected δ and β (meters).
pub fn transmittance_from_projections(
    p_delta: &Array2<f64>,
    p_beta: &Array2<f64>,
    pixel_size: f64,
    wavelength: f64,
) -> Result<ComplexField> {
    let k = 2.0 * PI / wavelength;
    let mut data = Array2::zeros(p_delta.dim());
    ndarray::Zip::from(&mut data)
        .and(p_delta)
        .and(p_beta)
        .for_each(|o, &d, &b| *o = C64::from_polar((-k * b).exp(), -k * d));
    ComplexField::new(data, pixel_size, wavelength)
}

/// Transmittance of the volume at angle `theta`.
///
/// The wave picks up phase `-2πδℓ/ν` and amplitude `exp(-2πβℓ/ν)` along a
/// path of length `ℓ`, i.e. the refractive index is `1 - δ + iβ`.
pub fn transmittance(u: &Volume, theta: f64, wavelength: f64) -> Result<ComplexField> {
    Ok(transmittances(u, &[theta], wavelength)?.remove(0))
}

/// Transmittances for several angles sharing one Radon operator.
pub fn transmittances(u: &Volume, angles: &[f64], wavelength: f64) -> Result<Vec<ComplexField>> {
    let op = RadonOperator::new(u.n(), u.voxel_size, angles)?;
    let pd = op.forward(&u.delta)?;
    let pb = op.forward(&u.beta)?;
    pd.outer_iter()
        .zip(pb.outer_iter())
        .map(|(d, b)| transmittance_from_projections(&d.to_owned(), &b.to_owned(), u.voxel_size, wavelength))
        .collect()
}

/// Parameters of [`synth_probe`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeSpec {
    /// Stripe periods across the field on each axis.
    pub stripe_count: usize,
    pub amplitude_contrast: f64,
    /// Peak stripe phase in radians.
    pub phase_amplitude: f64,
    pub seed: u64,
}

/// Near-unity probe with horizontal and vertical quasi-periodic stripes in
/// amplitude and phase on a smooth low-order background.
///
/// All components are periodic on the grid, so the stripe frequency falls
/// exactly on DFT bin `stripe_count` of both axes.
pub fn synth_probe(n: usize, pixel_size: f64, wavelength: f64, spec: &ProbeSpec) -> Result<ComplexField> {
    if !(0.0..1.0).contains(&spec.amplitude_contrast) {
        return Err(HoloError::invalid("amplitude contrast must lie in [0, 1)"));
    }
    if !spec.phase_amplitude.is_finite() {
        return Err(HoloError::invalid("phase amplitude must be finite"));
    }
    if spec.stripe_count == 0 || 2 * spec.stripe_count >= n {
        return Err(HoloError::invalid("stripe count must lie in [1, n/2)"));
    }
    crate::wavefield::check_grid(n, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut profile = || -> Vec<f64> {
        let phase0 = rng.random_range(0.0..2.0 * PI);
        let jitter = rng.random_range(0.2..0.6);
        let jphase = rng.random_range(0.0..2.0 * PI);
        let harm = rng.random_range(0.2..0.4);
        let hphase = rng.random_range(0.0..2.0 * PI);
        let k = spec.stripe_count as f64;
        (0..n)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / n as f64;
                let a = k * t + phase0 + jitter * (t + jphase).sin();
                (a.cos() + harm * (2.0 * a + hphase).cos()) / (1.0 + harm)
            })
            .collect()
    };
    let (ax, ay, px, py) = (profile(), profile(), profile(), profile());
    let mut low = || -> Vec<(f64, f64, f64)> {
        (0..4)
            .map(|_| {
                (
                    rng.random_range(-1.0..1.0),
                    rng.random_range(1..3) as f64,
                    rng.random_range(0.0..2.0 * PI),
                )
            })
            .collect()
    };
    let (bg_a, bg_p) = (low(), low());
    let background = |modes: &[(f64, f64, f64)], i: usize, j: usize| -> f64 {
        let (tx, ty) = (2.0 * PI * j as f64 / n as f64, 2.0 * PI * i as f64 / n as f64);
        modes
            .iter()
            .enumerate()
            .map(|(m, &(c, f, p))| c * if m % 2 == 0 { (f * tx + p).cos() } else { (f * ty + p).cos() })
            .sum::<f64>()
            / modes.len() as f64
    };
    let c = spec.amplitude_contrast;
    let ph = spec.phase_amplitude;
    let amp = Array2::from_shape_fn((n, n), |(i, j)| {
        1.0 + c * (0.4 * ax[j] + 0.4 * ay[i] + 0.2 * background(&bg_a, i, j))
    });
    let mean = amp.mean().unwrap();
    let data = Array2::from_shape_fn((n, n), |(i, j)| {
        let phase = ph * (0.5 * px[j] + 0.5 * py[i] + 0.5 * background(&bg_p, i, j));
        C64::from_polar(amp[[i, j]] / mean, phase)
    });
    ComplexField::new(data, pixel_size, wavelength)
}

/// `scale·Poisson(d/scale)` per pixel; frame `i` uses RNG stream `i`.
pub fn apply_poisson(frames: &[Frame], spec: &NoiseSpec) -> Result<Vec<Frame>> {
    spec.validate()?;
    frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| poisson_frame(f, spec, i as u64, 1.0))
        .collect()
}

/// Noise one frame whose counts are `gain·d`, returning intensities in the
/// units of `d`.
pub(crate) fn poisson_frame(d: &Frame, spec: &NoiseSpec, stream: u64, gain: f64) -> Result<Frame> {
    if d.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(HoloError::invalid("noise input must be finite and non-negative"));
    }
    if !spec.enabled {
        return Ok(d.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let mut out = d.clone();
    for v in out.iter_mut() {
        let mean = gain * *v / spec.scale;
        *v = if mean > 0.0 {
            let k: f64 = Poisson::new(mean)
                .map_err(|e| HoloError::invalid(format!("poisson mean {mean}: {e}")))?
                .sample(&mut rng);
            spec.scale * k / gain
        } else {
            0.0
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavefield::fft;

    const LAMBDA: f64 = 7.27183e-11;

    #[test]
    fn single_layer_shell_count() {
        for &(n, t) in &[(32usize, 1usize), (32, 3), (48, 2), (64, 5)] {
            let v = layered_cube(n, 1e-7, &[1.0], &[t]).unwrap();
            let count = v.delta.iter().filter(|&&d| d == 1.0).count();
            let side = n / 2;
            assert_eq!(count, side.pow(3) - (side - 2 * t).pow(3));
            assert_eq!(v.delta.iter().filter(|&&d| d != 0.0 && d != 1.0).count(), 0);
        }
    }

    #[test]
    fn layers_are_nested_outermost_first() {
        let v = layered_cube(32, 1e-7, &[3.0, 2.0], &[1, 2]).unwrap();
        let c = 16;
        assert_eq!(v.delta[[c, c, 8]], 3.0);
        assert_eq!(v.delta[[c, c, 9]], 2.0);
        assert_eq!(v.delta[[c, c, 10]], 2.0);
        assert_eq!(v.delta[[c, c, 11]], 0.0);
        assert_eq!(v.delta[[c, c, 7]], 0.0);
        assert_eq!(v.delta[[c, c, 23]], 3.0);
        assert!(v.beta.iter().zip(v.delta.iter()).all(|(b, d)| *b == d / 100.0));
    }

    #[test]
    fn empty_and_invalid_layers() {
        let v = layered_cube(32, 1e-7, &[], &[]).unwrap();
        assert!(v.delta.iter().all(|&d| d == 0.0));
        assert!(layered_cube(32, 1e-7, &[1.0, 1.0], &[4, 5]).is_err());
        assert!(layered_cube(16, 1e-7, &[1.0], &[1]).is_err());
        assert!(layered_cube(32, 1e-7, &[1.0], &[1, 2]).is_err());
    }

    #[test]
    fn empty_volume_is_transparent() {
        let v = Volume::zeros(32, 1e-7).unwrap();
        let psi = transmittance(&v, 0.3, LAMBDA).unwrap();
        assert!(psi.data().iter().all(|p| (p - C64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn pure_absorber_attenuation() {
        let (b, l) = (1e-7, 3e-6);
        let pd = Array2::zeros((8, 8));
        let pb = Array2::from_elem((8, 8), b * l);
        let psi = transmittance_from_projections(&pd, &pb, 1e-7, LAMBDA).unwrap();
        let expect = (-2.0 * PI * b * l / LAMBDA).exp();
        assert!(psi.data().iter().all(|p| (p.norm() - expect).abs() < 1e-14 && p.arg() == 0.0));

        let n = 32;
        let voxel = 1e-7;
        let vol = Volume::new(Array3::zeros((n, n, n)), Array3::from_elem((n, n, n), b), voxel).unwrap();
        let psi = transmittance(&vol, 0.0, LAMBDA).unwrap();
        let centre = psi.data()[[n / 2, n / 2]].norm();
        let bound = |len: f64| (-2.0 * PI * b * len * voxel / LAMBDA).exp();
        assert!(centre <= bound(n as f64 - 1.0) && centre >= bound(n as f64 + 1.0));
        assert!(psi.data().iter().all(|p| p.norm() <= 1.0));
    }

    #[test]
    fn beamline_scale_phase_range() {
        let v = layered_cube(256, 80e-9, &[2.2e-6, 1.5e-6, 2.2e-6, 1.5e-6], &[2, 2, 2, 2]).unwrap();
        let psi = transmittance(&v, 0.0, LAMBDA).unwrap();
        let phases: Vec<f64> = psi.data().iter().map(|p| p.arg()).collect();
        let lo = phases.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = phases.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi.abs() < 1e-12);
        assert!(lo > -2.2 && lo < -1.8, "min phase {lo}");
        assert!(psi.data().iter().all(|p| p.norm() <= 1.0));
    }

    #[test]
    fn cube_projection_quarter_turn_symmetry() {
        let v = layered_cube(64, 80e-9, &[4.4e-6, 3.0e-6, 4.4e-6, 3.0e-6], &[2, 2, 2, 2]).unwrap();
        let op = RadonOperator::new(64, 80e-9, &[0.0, PI / 2.0]).unwrap();
        let p = op.forward(&v.delta).unwrap();
        let a = p.index_axis(Axis(0), 0);
        let b = p.index_axis(Axis(0), 1);
        let rel = (&a - &b).mapv(|x| x * x).sum().sqrt() / a.mapv(|x| x * x).sum().sqrt();
        assert!(rel < 0.05, "{rel}");
    }

    fn spec(c: f64, p: f64) -> ProbeSpec {
        ProbeSpec {
            stripe_count: 8,
            amplitude_contrast: c,
            phase_amplitude: p,
            seed: 3,
        }
    }

    #[test]
    fn flat_probe_when_contrast_is_zero() {
        let q = synth_probe(32, 1e-7, LAMBDA, &spec(0.0, 0.0)).unwrap();
        assert!(q.data().iter().all(|v| (v - C64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn probe_reproducible_and_normalised() {
        let a = synth_probe(64, 1e-7, LAMBDA, &spec(0.3, 1.0)).unwrap();
        let b = synth_probe(64, 1e-7, LAMBDA, &spec(0.3, 1.0)).unwrap();
        assert_eq!(a, b);
        let c = synth_probe(64, 1e-7, LAMBDA, &ProbeSpec { seed: 4, ..spec(0.3, 1.0) }).unwrap();
        assert_ne!(a, c);
        let mean = a.data().iter().map(|v| v.norm()).sum::<f64>() / (64.0 * 64.0);
        assert!((mean - 1.0).abs() < 1e-12);
        assert!(synth_probe(64, 1e-7, LAMBDA, &spec(1.0, 0.0)).is_err());
        assert!(synth_probe(64, 1e-7, LAMBDA, &ProbeSpec { stripe_count: 32, ..spec(0.3, 1.0) }).is_err());
    }

    /// Power at (0, k) and (k, 0) relative to the median non-DC power.
    fn stripe_peaks(q: &ComplexField, k: usize) -> (f64, f64, f64) {
        let mut s = q.data().clone();
        fft::fft2_inplace(&mut s);
        let mut p: Vec<f64> = s.iter().map(|v| v.norm_sqr()).collect();
        p[0] = 0.0;
        let total: f64 = p.iter().sum::<f64>().max(1e-300);
        let mut sorted = p.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2].max(1e-30 * total);
        (s[[0, k]].norm_sqr() / median, s[[k, 0]].norm_sqr() / median, total)
    }

    #[test]
    fn probe_spectrum_has_stripe_peaks() {
        let q = synth_probe(64, 1e-7, LAMBDA, &spec(0.3, 1.0)).unwrap();
        let (px, py, _) = stripe_peaks(&q, 8);
        assert!(px > 1e3 && py > 1e3, "{px} {py}");
        let flat = synth_probe(64, 1e-7, LAMBDA, &spec(0.0, 0.0)).unwrap();
        let (_, _, total) = stripe_peaks(&flat, 8);
        assert!(total < 1e-20);
    }

    #[test]
    fn poisson_disabled_is_identity() {
        let d = Array2::from_shape_fn((8, 8), |(i, j)| (i * j) as f64);
        let out = apply_poisson(&[d.clone()], &NoiseSpec::default()).unwrap();
        assert_eq!(out[0], d);
        let neg = d.mapv(|v| -v - 1.0);
        assert!(apply_poisson(&[neg], &NoiseSpec::default()).is_err());
    }

    #[test]
    fn poisson_mean_and_variance() {
        let spec = NoiseSpec {
            enabled: true,
            scale: 20.0,
            seed: 11,
            photons: 1.0,
        };
        let d = Array2::from_elem((250, 400), 100.0);
        let out = apply_poisson(&[d], &spec).unwrap().remove(0);
        let n = out.len() as f64;
        let mean = out.sum() / n;
        let var = out.mapv(|v| (v - mean).powi(2)).sum() / (n - 1.0);
        let sigma_mean = (20.0 * 100.0 / n).sqrt();
        assert!((mean - 100.0).abs() < 3.0 * sigma_mean, "mean {mean}");
        assert!((var / 2000.0 - 1.0).abs() < 0.05, "variance {var}");
        assert!(out.iter().all(|&v| v >= 0.0 && (v / 20.0).fract() == 0.0));
    }

    #[test]
    fn poisson_streams_are_independent_and_seeded() {
        let spec = NoiseSpec {
            enabled: true,
            scale: 2.0,
            seed: 5,
            photons: 1.0,
        };
        let d = Array2::from_elem((16, 16), 10.0);
        let a = apply_poisson(&[d.clone(), d.clone()], &spec).unwrap();
        let b = apply_poisson(&[d.clone(), d], &spec).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
    }
}
