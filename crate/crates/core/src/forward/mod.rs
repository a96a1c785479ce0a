//! Conic-beam acquisition geometry and the probe-aware forward model.
//!
//! Detector frames are modelled as `|L ψ|²/m0²` sampled at the detector
//! pixel `m0·p` where `p` is the object-plane pixel. [`rescale_data`] undoes
//! the `1/m0²` factor so that reconstruction works entirely on the object
//! grid and the probe is never interpolated.

mod dataset;
mod geometry;
mod model;
mod oracle;
mod simulate;

pub use dataset::{Frame, ObjectData, ProjectionDataset, ScanShifts};
pub use geometry::{derive_geometry, ConicGeometry};
pub use model::{HoloModel, PlaneSpec};
pub use oracle::{oracle_conic_intensity, OracleGrid};
pub use simulate::{simulate_dataset, simulate_frames};

use crate::wavefield::{ComplexField, Resampler, ShiftVector};
use crate::{HoloError, Result};

/// `m0²·M_{1/m0} d` on the object grid of pixel `detector_pixel/m0`.
///
/// With that pixel relabelling the dilation is the identity on sample
/// indices, so only the intensity factor remains.
pub fn rescale_data(d: &Frame, m0: f64) -> Frame {
    d * (m0 * m0)
}

/// `m0²·M_{1/m0} d` resampled bilinearly onto an arbitrary `out_n` grid of
/// pixel size `out_pixel`.
pub fn rescale_data_to(d: &Frame, m0: f64, detector_pixel: f64, out_n: usize, out_pixel: f64) -> Result<Frame> {
    crate::wavefield::check_grid(d.nrows(), d.ncols())?;
    if !(m0 > 0.0 && detector_pixel > 0.0 && out_pixel > 0.0) {
        return Err(HoloError::invalid("magnification and pixel sizes must be positive"));
    }
    if d.iter().any(|v| *v < 0.0) {
        return Err(HoloError::invalid("intensities must be non-negative"));
    }
    let r = Resampler::with_ratio(d.nrows(), out_n, out_pixel * m0 / detector_pixel);
    Ok(r.apply(d) * (m0 * m0))
}

fn model_for(psi: &ComplexField, q: &ComplexField, g: &ConicGeometry, j: usize) -> Result<HoloModel> {
    if j >= g.n_planes() {
        return Err(HoloError::invalid(format!("plane {j} out of range")));
    }
    let model = HoloModel::new(g, q.n(), q.pixel_size())?;
    model.check_field(psi, "psi")?;
    Ok(model)
}

/// `L_{k,j} ψ` for one frame.
pub fn forward_l(
    psi: &ComplexField,
    q: &ComplexField,
    g: &ConicGeometry,
    j: usize,
    s_s: ShiftVector,
    s_p: ShiftVector,
) -> Result<ComplexField> {
    let model = model_for(psi, q, g, j)?;
    psi.with_data(model.forward(psi.data(), q.data(), j, s_s, s_p))
}

/// `L*_{k,j} d`.
pub fn adjoint_l(
    d: &ComplexField,
    q: &ComplexField,
    g: &ConicGeometry,
    j: usize,
    s_s: ShiftVector,
    s_p: ShiftVector,
) -> Result<ComplexField> {
    let model = model_for(d, q, g, j)?;
    d.with_data(model.adjoint_psi(d.data(), q.data(), j, s_s, s_p))
}

/// `Q_{k,j} q`: the forward model read as linear in the probe.
pub fn forward_q(
    q: &ComplexField,
    psi: &ComplexField,
    g: &ConicGeometry,
    j: usize,
    s_s: ShiftVector,
    s_p: ShiftVector,
) -> Result<ComplexField> {
    forward_l(psi, q, g, j, s_s, s_p)
}

/// `Q*_{k,j} d`.
pub fn adjoint_q(
    d: &ComplexField,
    psi: &ComplexField,
    g: &ConicGeometry,
    j: usize,
    s_s: ShiftVector,
    s_p: ShiftVector,
) -> Result<ComplexField> {
    let model = model_for(psi, d, g, j)?;
    d.with_data(model.adjoint_q(d.data(), psi.data(), j, s_s, s_p))
}

/// Reference arm `P_{ζ0} S_{s_r} q`.
pub fn forward_q_ref(q: &ComplexField, g: &ConicGeometry, s_r: ShiftVector) -> Result<ComplexField> {
    s_r.check_for(q.n())?;
    let model = HoloModel::new(g, q.n(), q.pixel_size())?;
    q.with_data(model.reference_forward(q.data(), s_r))
}

pub fn adjoint_q_ref(d: &ComplexField, g: &ConicGeometry, s_r: ShiftVector) -> Result<ComplexField> {
    s_r.check_for(d.n())?;
    let model = HoloModel::new(g, d.n(), d.pixel_size())?;
    d.with_data(model.reference_adjoint(d.data(), s_r))
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::NoiseSpec;
    use crate::testutil::{random_field, rel_diff, rng, smooth_array};
    use crate::wavefield::{inner, magnify, propagate, propagate_adjoint, shift};
    use crate::C64;
    use ndarray::Array2;

    const LAMBDA: f64 = 7.27183e-11;
    const PIXEL: f64 = 80e-9;

    fn table1() -> ConicGeometry {
        derive_geometry(1.208, &[4.026e-3, 4.199e-3, 4.890e-3, 6.325e-3], LAMBDA).unwrap()
    }

    fn ones(n: usize) -> ComplexField {
        ComplexField::constant(n, C64::new(1.0, 0.0), PIXEL, LAMBDA).unwrap()
    }

    fn gap(ax: &ComplexField, y: &ComplexField, x: &ComplexField, aty: &ComplexField) -> f64 {
        (inner(ax, y).unwrap() - inner(x, aty).unwrap()).norm() / (ax.norm() * y.norm())
    }

    fn shift_for(t: usize) -> (ShiftVector, ShiftVector) {
        let a = ShiftVector::new(0.3 * t as f64 - 2.0, 1.1 - 0.17 * t as f64).unwrap();
        let b = ShiftVector::new(-0.6 + 0.05 * t as f64, 0.25 * (t % 4) as f64).unwrap();
        (a, b)
    }

    #[test]
    fn l_and_q_adjoint_identities() {
        let g = table1();
        let mut r = rng(20);
        for &n in &[32, 64] {
            for t in 0..20 {
                let j = t % 4;
                let (ss, sp) = shift_for(t);
                let psi = random_field(n, PIXEL, LAMBDA, &mut r);
                let q = random_field(n, PIXEL, LAMBDA, &mut r);
                let y = random_field(n, PIXEL, LAMBDA, &mut r);
                let lx = forward_l(&psi, &q, &g, j, ss, sp).unwrap();
                let lty = adjoint_l(&y, &q, &g, j, ss, sp).unwrap();
                assert!(gap(&lx, &y, &psi, &lty) < 1e-8, "L n={n} t={t}");
                let qx = forward_q(&q, &psi, &g, j, ss, sp).unwrap();
                let qty = adjoint_q(&y, &psi, &g, j, ss, sp).unwrap();
                assert!(gap(&qx, &y, &q, &qty) < 1e-8, "Q n={n} t={t}");
                let rx = forward_q_ref(&q, &g, sp).unwrap();
                let rty = adjoint_q_ref(&y, &g, sp).unwrap();
                assert!(gap(&rx, &y, &q, &rty) < 1e-8, "Qref n={n} t={t}");
            }
        }
    }

    #[test]
    fn unit_object_gives_reference_arm() {
        let g = table1();
        let mut r = rng(21);
        let q = random_field(32, PIXEL, LAMBDA, &mut r);
        let z = ShiftVector::ZERO;
        let l = forward_l(&ones(32), &q, &g, 0, z, z).unwrap();
        let p = propagate(&q, g.zeta()[0]);
        assert!(rel_diff(l.data(), p.data()) < 1e-12);
        let reference = forward_q_ref(&q, &g, z).unwrap();
        assert!(rel_diff(l.data(), reference.data()) < 1e-12);
    }

    #[test]
    fn unit_probe_gives_scaled_parallel_model() {
        let g = table1();
        let mut r = rng(22);
        let psi = random_field(32, PIXEL, LAMBDA, &mut r);
        let z = ShiftVector::ZERO;
        for j in 0..4 {
            let mt = g.mt()[j];
            let l = forward_l(&psi, &ones(32), &g, j, z, z).unwrap();
            let expect = propagate(&magnify(&psi, 1.0 / mt, 32).unwrap(), g.zeta()[j] / (mt * mt));
            assert!(rel_diff(l.data(), expect.data()) < 1e-10, "plane {j}");
        }
        let y = random_field(32, PIXEL, LAMBDA, &mut r);
        let back = adjoint_l(&y, &ones(32), &g, 0, z, z).unwrap();
        assert!(rel_diff(back.data(), propagate_adjoint(&y, g.zeta()[0]).data()) < 1e-12);
    }

    #[test]
    fn q_and_l_are_the_same_map() {
        let g = table1();
        let mut r = rng(23);
        let psi = random_field(32, PIXEL, LAMBDA, &mut r);
        let q = random_field(32, PIXEL, LAMBDA, &mut r);
        let (ss, sp) = shift_for(3);
        for j in 0..4 {
            let a = forward_l(&psi, &q, &g, j, ss, sp).unwrap();
            let b = forward_q(&q, &psi, &g, j, ss, sp).unwrap();
            assert_eq!(a, b);
        }
        let sp = ShiftVector::new(1.5, -0.5).unwrap();
        let a = forward_q(&q, &ones(32), &g, 0, ShiftVector::ZERO, sp).unwrap();
        let b = propagate(&shift(&q, sp).unwrap(), g.zeta()[0]);
        assert!(rel_diff(a.data(), b.data()) < 1e-12);
    }

    #[test]
    fn adjoint_l_matches_explicit_matrix() {
        let n = 8;
        let g = derive_geometry(1.0, &[0.01, 0.013], 1e-10).unwrap();
        let pixel = 2e-7;
        let mut qd = Array2::<C64>::zeros((n, n));
        qd[[4, 4]] = C64::new(1.0, 0.0);
        qd[[4, 5]] = C64::new(0.5, 0.5);
        qd[[3, 4]] = C64::new(0.2, -0.3);
        let q = ComplexField::new(qd, pixel, 1e-10).unwrap();
        let (ss, sp) = (ShiftVector::new(0.4, -0.2).unwrap(), ShiftVector::new(-0.3, 0.1).unwrap());
        for j in 0..2 {
            let mut cols = Vec::with_capacity(n * n);
            for c in 0..n * n {
                let mut e = Array2::<C64>::zeros((n, n));
                e[[c / n, c % n]] = C64::new(1.0, 0.0);
                let f = ComplexField::new(e, pixel, 1e-10).unwrap();
                cols.push(forward_l(&f, &q, &g, j, ss, sp).unwrap().into_data());
            }
            let unit = ComplexField::constant(n, C64::new(1.0, 0.0), pixel, 1e-10).unwrap();
            let adj = adjoint_l(&unit, &q, &g, j, ss, sp).unwrap();
            for (c, col) in cols.iter().enumerate() {
                let expect: C64 = col.iter().map(|v| v.conj()).sum();
                assert!((adj.data()[[c / n, c % n]] - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn rescale_examples() {
        let mut r = rng(24);
        let d = smooth_array(16, 2.0, &mut r).mapv(|v| v.norm());
        assert_eq!(rescale_data(&d, 1.0), d);
        let c = Array2::from_elem((16, 16), 0.25);
        assert!(rescale_data(&c, 3.0).iter().all(|&v| (v - 2.25).abs() < 1e-15));
        let to = rescale_data_to(&c, 3.0, 1.0, 16, 1.0 / 3.0).unwrap();
        assert!(to.iter().all(|&v| (v - 2.25).abs() < 1e-14));
        assert!(rescale_data_to(&c.mapv(|v| -v), 3.0, 1.0, 16, 0.3).is_err());
    }

    #[test]
    fn rescale_preserves_integrated_intensity() {
        let n = 64;
        let sigma = 6.0;
        let c = (n / 2) as f64;
        let d = Array2::from_shape_fn((n, n), |(i, j)| {
            let r2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            (-r2 / (2.0 * sigma * sigma)).exp()
        });
        let (m0, det) = (2.0, 1.0);
        let out_pixel = det / m0;
        let out = rescale_data_to(&d, m0, det, 2 * n, out_pixel).unwrap();
        let before = d.sum() * det * det;
        let after = out.sum() * out_pixel * out_pixel;
        assert!((after - before).abs() / before < 1e-2, "{before} vs {after}");
    }

    #[test]
    fn flat_scan_gives_flat_frames() {
        let g = table1();
        let psi = vec![ones(32), ones(32)];
        let shifts = ScanShifts::zeros(2, 4);
        let ds = simulate_dataset(&psi, &ones(32), &g, &[0.0, 1.0], &shifts, &NoiseSpec::default()).unwrap();
        let m0 = g.m0();
        for f in ds.frames.iter().flatten().chain(std::iter::once(&ds.reference)) {
            assert!(rescale_data(f, m0).iter().all(|&v| (v - 1.0).abs() < 1e-12));
        }
        assert!((ds.detector_pixel - PIXEL * m0).abs() < 1e-20);
    }

    #[test]
    fn simulated_frames_round_trip() {
        let g = table1();
        let mut r = rng(25);
        let n = 32;
        let psi: Vec<_> = (0..2)
            .map(|_| {
                let a = smooth_array(n, 2.0, &mut r).mapv(|v| C64::from_polar(1.0, 0.3 * v.re));
                ComplexField::new(a, PIXEL, LAMBDA).unwrap()
            })
            .collect();
        let q = ComplexField::new(smooth_array(n, 1.5, &mut r).mapv(|v| 1.0 + 0.2 * v), PIXEL, LAMBDA).unwrap();
        let mut shifts = ScanShifts::zeros(2, 4);
        shifts.sample[1][2] = ShiftVector::new(1.25, -0.5).unwrap();
        shifts.probe[0][3] = ShiftVector::new(-0.75, 2.0).unwrap();
        let ds = simulate_dataset(&psi, &q, &g, &[0.0, 0.5], &shifts, &NoiseSpec::default()).unwrap();
        for k in 0..2 {
            for j in 0..4 {
                let l = forward_l(&psi[k], &q, &g, j, shifts.sample[k][j], shifts.probe[k][j]).unwrap();
                let d = rescale_data(&ds.frames[k][j], g.m0());
                let expect = l.intensity();
                let err = (&d - &expect).mapv(|v| v * v).sum().sqrt() / expect.mapv(|v| v * v).sum().sqrt();
                assert!(err < 1e-10);
            }
        }
    }

    #[test]
    fn fringe_contrast_differs_between_planes() {
        let g = table1();
        let n = 64;
        let c = (n / 2) as f64;
        let psi = Array2::from_shape_fn((n, n), |(i, j)| {
            let inside = (i as f64 - c).abs() < 12.0 && (j as f64 - c).abs() < 12.0;
            C64::from_polar(if inside { 0.99 } else { 1.0 }, if inside { -0.8 } else { 0.0 })
        });
        let psi = ComplexField::new(psi, PIXEL, LAMBDA).unwrap();
        let ds = simulate_dataset(&[psi], &ones(n), &g, &[0.0], &ScanShifts::zeros(1, 4), &NoiseSpec::default()).unwrap();
        let var = |f: &Frame| f.var(0.0);
        let (v0, v3) = (var(&ds.frames[0][0]), var(&ds.frames[0][3]));
        assert!(v0 > 0.0 && v3 > 0.0);
        assert!((v0 - v3).abs() / v0.max(v3) > 0.05, "{v0} {v3}");
    }

    #[test]
    fn plane_index_and_grid_checked() {
        let g = table1();
        let z = ShiftVector::ZERO;
        assert!(forward_l(&ones(32), &ones(32), &g, 4, z, z).is_err());
        assert!(forward_l(&ones(16), &ones(32), &g, 0, z, z).is_err());
        let other = ComplexField::constant(32, C64::new(1.0, 0.0), 2.0 * PIXEL, LAMBDA).unwrap();
        assert!(forward_l(&other, &ones(32), &g, 0, z, z).is_err());
    }
}
