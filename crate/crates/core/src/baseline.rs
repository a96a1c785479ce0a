//! Conventional pipeline: division by the reference image, multi-distance
//! Paganin retrieval and CG refinement of the probe-free model
//! `|P_{ζ_j} ψ|² = M_{1/m_j} d_j / d^r`.

use std::f64::consts::PI;

use ndarray::{Array2, Zip};

use crate::forward::{ConicGeometry, Frame, HoloModel, ProjectionDataset, ScanShifts};
use crate::solver::{run_cg, Mode, Problem, SolverConfig, SolverState};
use crate::wavefield::{fft, ComplexField, Resampler};
use crate::{HoloError, Result, C64};

/// Reference pixels below this fraction of the maximum are clamped.
const REFERENCE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PaganinConfig {
    /// `δ/β` of the assumed single material.
    pub delta_beta: f64,
    pub alpha: f64,
}

impl Default for PaganinConfig {
    fn default() -> Self {
        Self {
            delta_beta: 100.0,
            alpha: 1e-3,
        }
    }
}

/// Flat-field corrected frames of one dataset on the common object grid,
/// and the number of clamped reference pixels.
#[derive(Clone, Debug)]
pub struct FlatField {
    /// `[k][j]`.
    pub frames: Vec<Vec<Frame>>,
    pub clamped: usize,
}

/// `M_{1/m_j}(d_j / d^r)` brought onto the plane-0 object grid.
///
/// Plane `j` is magnified `m_j` times on the detector, so the ratio frame is
/// resampled by `m_j/m0 = 1/mt_j` about the grid centre; plane 0 is a pure
/// division.
pub fn flat_field(ds: &ProjectionDataset) -> Result<FlatField> {
    ds.validate()?;
    let (reference, clamped) = guarded_reference(&ds.reference);
    let n = ds.n();
    let resamplers: Vec<Option<Resampler>> = ds
        .geometry
        .mt()
        .iter()
        .map(|&mt| (mt != 1.0).then(|| Resampler::with_ratio(n, n, 1.0 / mt)))
        .collect();
    let frames = ds
        .frames
        .iter()
        .map(|row| {
            row.iter()
                .zip(&resamplers)
                .map(|(d, r)| {
                    let ratio = d / &reference;
                    match r {
                        Some(r) => r.apply(&ratio),
                        None => ratio,
                    }
                })
                .collect()
        })
        .collect();
    Ok(FlatField { frames, clamped })
}

fn guarded_reference(d_ref: &Frame) -> (Frame, usize) {
    let peak = d_ref.iter().copied().fold(0.0, f64::max);
    let floor = (REFERENCE_FLOOR * peak).max(f64::MIN_POSITIVE);
    let mut clamped = 0;
    let r = d_ref.mapv(|v| {
        if v < floor {
            clamped += 1;
            floor
        } else {
            v
        }
    });
    (r, clamped)
}

/// Single-material multi-distance TIE retrieval.
///
/// `φ = (δβ/2)·ln A` with
/// `A = F⁻¹[ Σ_j F(I_j)·((N_z + α)/N_z) / (N_z + πλ·δβ·Σ_j ζ_j·|f|² + α) ]`,
/// and `ψ = exp((i + 1/δβ)·φ)`, so `|ψ| ≤ 1` where the projected
/// thickness is positive. The filter has unit gain at `f = 0`.
pub fn multipaganin(frames: &[Frame], g: &ConicGeometry, pixel_size: f64, cfg: &PaganinConfig) -> Result<ComplexField> {
    if !(cfg.alpha > 0.0 && cfg.alpha.is_finite()) {
        return Err(HoloError::invalid("Paganin regularisation α must be positive"));
    }
    if !(cfg.delta_beta > 0.0 && cfg.delta_beta.is_finite()) {
        return Err(HoloError::invalid("δ/β must be positive"));
    }
    if frames.len() != g.n_planes() {
        return Err(HoloError::invalid("one frame per plane is required"));
    }
    let n = frames[0].nrows();
    crate::wavefield::check_grid(n, frames[0].ncols())?;
    let nz = frames.len() as f64;
    let mut sum = Array2::<C64>::zeros((n, n));
    for f in frames {
        if f.dim() != (n, n) {
            return Err(HoloError::ShapeMismatch {
                expected: vec![n, n],
                found: f.shape().to_vec(),
            });
        }
        Zip::from(&mut sum).and(f).for_each(|s, &v| s.re += v);
    }
    fft::fft2_inplace(&mut sum);
    let freq = fft::fftfreq(n, pixel_size);
    let zsum: f64 = g.zeta().iter().sum();
    let c = PI * g.wavelength() * cfg.delta_beta * zsum;
    let gain = (nz + cfg.alpha) / nz;
    for ((i, j), v) in sum.indexed_iter_mut() {
        let f2 = freq[i] * freq[i] + freq[j] * freq[j];
        *v *= gain / (nz + c * f2 + cfg.alpha);
    }
    fft::ifft2_inplace(&mut sum);
    let k = C64::new(1.0 / cfg.delta_beta, 1.0);
    let data = sum.mapv(|v| {
        let a = v.re.max(1e-12);
        (k * (0.5 * cfg.delta_beta * a.ln())).exp()
    });
    ComplexField::new(data, pixel_size, g.wavelength())
}

/// CG refinement of `|P_{ζ_j} ψ_k|² = I_{k,j}` with the probe fixed to one
/// and no reference term, starting from `init`.
pub fn conventional_refine(
    frames: &[Vec<Frame>],
    init: &[ComplexField],
    g: &ConicGeometry,
    shifts: Option<&ScanShifts>,
    iterations: usize,
    mode: Mode,
) -> Result<SolverState> {
    let first = init.first().ok_or_else(|| HoloError::invalid("no projections to refine"))?;
    let n = first.n();
    let model = HoloModel::conventional(g, n, first.pixel_size())?;
    let zero = ScanShifts::zeros(frames.len(), g.n_planes());
    let mut shifts = shifts.cloned().unwrap_or(zero);
    for row in shifts.probe.iter_mut() {
        row.iter_mut().for_each(|s| *s = crate::wavefield::ShiftVector::ZERO);
    }
    shifts.reference = None;
    let problem = Problem::with_model(model, frames, None, &shifts, mode)?;
    let q = ComplexField::constant(n, C64::new(1.0, 0.0), first.pixel_size(), first.wavelength())?;
    let state = SolverState::new(init.to_vec(), q)?;
    let config = SolverConfig {
        mode,
        update_probe: false,
        ..SolverConfig::default()
    };
    run_cg(&problem, state, &config, iterations, &mut |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{derive_geometry, simulate_dataset};
    use crate::phantom::{synth_probe, NoiseSpec, ProbeSpec};
    use crate::testutil::{rng, smooth_array};
    use crate::wavefield::propagate;

    const LAMBDA: f64 = 7.27183e-11;
    const PIXEL: f64 = 80e-9;

    fn table1() -> ConicGeometry {
        derive_geometry(1.208, &[4.026e-3, 4.199e-3, 4.890e-3, 6.325e-3], LAMBDA).unwrap()
    }

    fn field(a: Array2<C64>) -> ComplexField {
        ComplexField::new(a, PIXEL, LAMBDA).unwrap()
    }

    fn ones(n: usize) -> ComplexField {
        ComplexField::constant(n, C64::new(1.0, 0.0), PIXEL, LAMBDA).unwrap()
    }

    /// Single-material object with `φ = amp·s` (negative) and `|ψ| = exp(φ/100)`.
    fn material(n: usize, sigma: f64, amp: f64, seed: u64) -> (ComplexField, Array2<f64>) {
        let s = smooth_array(n, sigma, &mut rng(seed));
        let phi = s.mapv(|v| -amp * (v.re + 2.0).max(0.0) / 3.0);
        let psi = phi.mapv(|p| (C64::new(0.01, 1.0) * p).exp());
        (field(psi), phi)
    }

    /// Compact Gaussian phase bump surrounded by air.
    fn blob(n: usize, sigma: f64, amp: f64) -> ComplexField {
        let c = (n / 2) as f64;
        field(Array2::from_shape_fn((n, n), |(i, j)| {
            let r2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            let phi = -amp * (-r2 / (2.0 * sigma * sigma)).exp();
            (C64::new(0.01, 1.0) * phi).exp()
        }))
    }

    fn scan(psi: &[ComplexField], q: &ComplexField, g: &ConicGeometry) -> ProjectionDataset {
        let angles: Vec<f64> = (0..psi.len()).map(|k| k as f64).collect();
        let shifts = ScanShifts::zeros(psi.len(), g.n_planes());
        simulate_dataset(psi, q, g, &angles, &shifts, &NoiseSpec::default()).unwrap()
    }

    fn stripe_probe(n: usize) -> ComplexField {
        let spec = ProbeSpec {
            stripe_count: 8,
            amplitude_contrast: 0.3,
            phase_amplitude: 1.0,
            seed: 3,
        };
        synth_probe(n, PIXEL, LAMBDA, &spec).unwrap()
    }

    #[test]
    fn equal_frames_give_ones() {
        let g = table1();
        let mut ds = scan(&[ones(32)], &stripe_probe(32), &g);
        let r = ds.reference.clone();
        ds.frames[0].iter_mut().for_each(|f| f.assign(&r));
        let ff = flat_field(&ds).unwrap();
        assert_eq!(ff.clamped, 0);
        for f in &ff.frames[0] {
            assert!(f.iter().all(|v| (v - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn flat_field_inverts_flat_probe_simulation() {
        let g = table1();
        let (psi, _) = material(64, 3.0, 1.0, 1);
        let ds = scan(&[psi.clone()], &ones(64), &g);
        let ff = flat_field(&ds).unwrap();
        let expect = propagate(&psi, g.zeta()[0]).intensity();
        let err = (&ff.frames[0][0] - &expect).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn plane_magnification_is_undone() {
        let g = table1();
        let n = 64;
        let c = (n / 2) as f64;
        let mut ds = scan(&[ones(n)], &ones(n), &g);
        let base = ds.reference.clone();
        for f in ds.frames[0].iter_mut() {
            *f = Array2::from_shape_fn((n, n), |(i, j)| {
                let (y, x) = (i as f64 - c, j as f64 - c - 10.0);
                base[[i, j]] * (1.0 + (-(x * x + y * y) / 8.0).exp())
            });
        }
        let ff = flat_field(&ds).unwrap();
        let centroid = |f: &Frame| {
            let (mut w, mut s) = (0.0, 0.0);
            for ((_, j), v) in f.indexed_iter() {
                w += v - 1.0;
                s += (v - 1.0) * (j as f64 - c);
            }
            s / w
        };
        assert!((centroid(&ff.frames[0][0]) - 10.0).abs() < 0.05);
        let expect = 10.0 * g.m0() / g.m()[3];
        assert!((g.m0() / g.m()[3] - 300.0 / 191.0).abs() < 2e-3);
        let got = centroid(&ff.frames[0][3]);
        assert!((got - expect).abs() < 0.2, "{got} vs {expect}");
    }

    #[test]
    fn stripes_survive_division() {
        let g = table1();
        let n = 64;
        let (psi, _) = material(n, 3.0, 1.0, 5);
        let ff = flat_field(&scan(&[psi.clone()], &stripe_probe(n), &g)).unwrap();
        let flat = flat_field(&scan(&[psi.clone()], &ones(n), &g)).unwrap();
        let model = propagate(&psi, g.zeta()[0]).intensity();
        let power = |f: &Frame| {
            let mut s = (f - &model).mapv(|v| C64::new(v, 0.0));
            fft::fft2_inplace(&mut s);
            (7..=9).map(|k| s[[0, k]].norm_sqr() + s[[k, 0]].norm_sqr()).sum::<f64>()
        };
        let structured = power(&ff.frames[0][0]);
        let clean = power(&flat.frames[0][0]);
        assert!(structured > 100.0 * clean, "{structured} {clean}");
    }

    #[test]
    fn near_zero_reference_is_clamped() {
        let g = table1();
        let mut ds = scan(&[ones(32)], &ones(32), &g);
        ds.reference[[3, 4]] = 0.0;
        let peak = ds.reference.iter().copied().fold(0.0, f64::max);
        ds.reference[[5, 5]] = 1e-7 * peak;
        let ff = flat_field(&ds).unwrap();
        assert_eq!(ff.clamped, 2);
        assert!(ff.frames[0][0].iter().all(|v| v.is_finite()));
    }

    #[test]
    fn paganin_of_unit_frames_is_unity() {
        let g = table1();
        let frames = vec![Array2::from_elem((32, 32), 1.0); 4];
        let psi = multipaganin(&frames, &g, PIXEL, &PaganinConfig::default()).unwrap();
        assert!(psi.data().iter().all(|v| (v - C64::new(1.0, 0.0)).norm() < 1e-12));
        let bad = PaganinConfig { alpha: 0.0, ..PaganinConfig::default() };
        assert!(multipaganin(&frames, &g, PIXEL, &bad).is_err());
        let bad = PaganinConfig { delta_beta: -1.0, ..PaganinConfig::default() };
        assert!(multipaganin(&frames, &g, PIXEL, &bad).is_err());
        assert!(multipaganin(&frames[..2], &g, PIXEL, &PaganinConfig::default()).is_err());
    }

    fn lowpass(a: &Array2<f64>, sigma: f64) -> Array2<f64> {
        let n = a.nrows();
        let mut s = a.mapv(|v| C64::new(v, 0.0));
        fft::fft2_inplace(&mut s);
        let f = fft::fftfreq(n, 1.0);
        for ((i, j), v) in s.indexed_iter_mut() {
            *v *= (-2.0 * PI * PI * sigma * sigma * (f[i] * f[i] + f[j] * f[j])).exp();
        }
        fft::ifft2_inplace(&mut s);
        s.mapv(|v| v.re)
    }

    #[test]
    fn paganin_recovers_weak_single_material_phase() {
        let g = derive_geometry(1.208, &[4.026e-3], LAMBDA).unwrap();
        let (psi, phi) = material(64, 4.0, 0.3, 7);
        let ff = flat_field(&scan(&[psi], &ones(64), &g)).unwrap();
        let est = multipaganin(&ff.frames[0], &g, PIXEL, &PaganinConfig::default()).unwrap();
        let got = est.data().mapv(|v| v.arg());
        let (a, b) = (lowpass(&got, 2.0), lowpass(&phi, 2.0));
        let (ma, mb) = (a.mean().unwrap(), b.mean().unwrap());
        let num = (&a - ma - (&b - mb)).mapv(|v| v * v).sum().sqrt();
        let den = (&b - mb).mapv(|v| v * v).sum().sqrt();
        assert!(num / den < 0.1, "{}", num / den);
        assert!(est.data().iter().all(|v| v.norm() <= 1.0 + 1e-12));
    }

    #[test]
    fn paganin_scaling_only_shifts_phase() {
        let g = table1();
        let (psi, _) = material(32, 3.0, 1.0, 2);
        let ff = flat_field(&scan(&[psi], &ones(32), &g)).unwrap();
        let cfg = PaganinConfig::default();
        let a = multipaganin(&ff.frames[0], &g, PIXEL, &cfg).unwrap();
        let scaled: Vec<Frame> = ff.frames[0].iter().map(|f| f * 1.05).collect();
        let b = multipaganin(&scaled, &g, PIXEL, &cfg).unwrap();
        let d = Zip::from(b.data()).and(a.data()).map_collect(|x, y| (x / y).arg());
        let m = d.mean().unwrap();
        assert!((m - 50.0 * 1.05f64.ln()).abs() < 1e-9);
        assert!(d.iter().all(|v| (v - m).abs() < 1e-9));
    }

    #[test]
    fn paganin_start_lowers_objective() {
        let g = table1();
        let (psi, _) = material(32, 2.0, 1.0, 3);
        let ff = flat_field(&scan(&[psi], &ones(32), &g)).unwrap();
        let model = HoloModel::conventional(&g, 32, PIXEL).unwrap();
        let shifts = ScanShifts::zeros(1, 4);
        let problem = Problem::with_model(model, &ff.frames, None, &shifts, Mode::Amplitude).unwrap();
        let q = Array2::from_elem((32, 32), C64::new(1.0, 0.0));
        let est = multipaganin(&ff.frames[0], &g, PIXEL, &PaganinConfig::default()).unwrap();
        let f_pag = problem.objective(&[est.data().clone()], &q).unwrap();
        let f_one = problem.objective(&[q.clone()], &q).unwrap();
        assert!(2.0 * f_pag <= f_one, "{f_pag} vs {f_one}");
    }

    #[test]
    fn refinement_approaches_truth_on_flat_probe_data() {
        let g = table1();
        let psi = blob(64, 6.0, 1.0);
        let ff = flat_field(&scan(&[psi.clone()], &ones(64), &g)).unwrap();
        let init = vec![multipaganin(&ff.frames[0], &g, PIXEL, &PaganinConfig::default()).unwrap()];
        let same = conventional_refine(&ff.frames, &init, &g, None, 0, Mode::Amplitude).unwrap();
        assert_eq!(same.psi[0], init[0]);
        let out = conventional_refine(&ff.frames, &init, &g, None, 100, Mode::Amplitude).unwrap();
        assert!(out.history.is_monotone());
        let err = |x: &ComplexField| {
            let c = crate::wavefield::inner(&psi, x).unwrap();
            let aligned = x.data() * (c / c.norm());
            crate::metrics::rel_error(&aligned, psi.data()).unwrap()
        };
        assert!(err(&out.psi[0]) < 0.6 * err(&init[0]) && err(&out.psi[0]) < 1e-2, "{} {}", err(&out.psi[0]), err(&init[0]));
        assert!(out.q.data().iter().all(|v| *v == C64::new(1.0, 0.0)));
    }
}
