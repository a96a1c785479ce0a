//! Brute-force evaluation of the conic-beam experiment in physical space.
//!
//! The wave leaving the focal spot is written explicitly as the spherical
//! factor `exp(iπ|x|²/λz1₀)` times the probe `q` at plane `z1₀`. It is
//! propagated to the sample plane `z1_j`, multiplied by `ψ` and propagated to
//! the detector, each propagation being a direct quadrature of the spatial
//! Fresnel kernel on a fine grid. Nothing is rescaled, so the result is an
//! independent check of the scaled operators in [`super::HoloModel`].

use std::f64::consts::PI;

use ndarray::{Array1, Array2, Axis};

use super::{ConicGeometry, Frame};
use crate::{HoloError, Result, C64};

/// Sampling of the oracle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleGrid {
    /// Object-grid size; detector samples sit at `m0·(o - n/2)·pixel_size`.
    pub n: usize,
    /// Object-plane pixel size.
    pub pixel_size: f64,
    /// Quadrature step of the fine grid.
    pub step: f64,
    /// The fine grid covers `[-half_width, half_width]` on both axes.
    pub half_width: f64,
}

const SUPPORT_TOL: f64 = 1e-12;
const EDGE_TOL: f64 = 1e-6;

/// Detector intensity of plane `j` for a sample `psi(x, y)` (coordinates in
/// meters in the sample plane) under probe `q(x, y)` defined at plane
/// `z1₀`.
///
/// Refuses with [`HoloError::Undersampled`] when a quadrature integrand
/// (spherical factor or kernel chirp) exceeds the fine-grid Nyquist rate,
/// or when the field spills over the fine-grid window.
pub fn oracle_conic_intensity(
    psi: &dyn Fn(f64, f64) -> C64,
    q: &dyn Fn(f64, f64) -> C64,
    geometry: &ConicGeometry,
    j: usize,
    grid: &OracleGrid,
) -> Result<Frame> {
    if j >= geometry.n_planes() {
        return Err(HoloError::invalid(format!("plane {j} out of range")));
    }
    if !(grid.step > 0.0 && grid.half_width > grid.step && grid.pixel_size > 0.0 && grid.n > 0) {
        return Err(HoloError::invalid("oracle grid parameters must be positive"));
    }
    let lam = geometry.wavelength();
    let z10 = geometry.z1()[0];
    let z1 = geometry.z1()[j];
    let z2 = geometry.z2()[j];
    let h = grid.step;
    let nyquist = 0.5 / h;
    let half = (grid.half_width / h).round() as usize;
    let xs: Array1<f64> = (0..2 * half + 1).map(|l| (l as f64 - half as f64) * h).collect();
    let w = xs[xs.len() - 1];

    let u0 = Array2::from_shape_fn((xs.len(), xs.len()), |(r, c)| {
        let (x, y) = (xs[c], xs[r]);
        C64::from_polar(1.0, PI * (x * x + y * y) / (lam * z10)) * q(x, y)
    });
    check_edges(&u0, "probe at the first plane")?;
    let (s0, s1) = support(&u0, &xs)?;
    let reach = s0.abs().max(s1.abs());
    check_rate(reach / (lam * z10), nyquist, "spherical illumination factor")?;

    let u1 = if z1 > z10 {
        let a = z1 - z10;
        let rate = [s0, s1]
            .iter()
            .flat_map(|&x| [-w, w].map(|xp| (x / z10 + (x - xp) / a).abs() / lam))
            .fold(0.0, f64::max);
        check_rate(rate, nyquist, "probe propagation kernel")?;
        let k = kernel(&xs, &xs, a, lam, h);
        let u1 = k.dot(&u0).dot(&k.t());
        check_edges(&u1, "probe at the sample plane")?;
        u1
    } else {
        u0
    };

    let mut u2 = u1;
    for ((r, c), v) in u2.indexed_iter_mut() {
        *v *= psi(xs[c], xs[r]);
    }
    let (t0, t1) = support(&u2, &xs)?;
    let m0 = geometry.m0();
    let c = (grid.n / 2) as f64;
    let det: Array1<f64> = (0..grid.n).map(|o| m0 * (o as f64 - c) * grid.pixel_size).collect();
    let (x_lo, x_hi) = (det[0], det[grid.n - 1]);
    let rate = [t0, t1]
        .iter()
        .flat_map(|&x| [x_lo, x_hi].map(|xd| (x / z1 + (x - xd) / z2).abs() / lam))
        .fold(0.0, f64::max);
    check_rate(rate, nyquist, "detector propagation kernel")?;
    let k2 = kernel(&det, &xs, z2, lam, h);
    let out = k2.dot(&u2).dot(&k2.t());
    Ok(out.mapv(|v| v.norm_sqr()))
}

/// One-dimensional Fresnel quadrature matrix `K[i,l] = (iλz)^{-1/2} e^{iπ(x_i - s_l)²/λz} h`.
fn kernel(out: &Array1<f64>, src: &Array1<f64>, z: f64, lam: f64, h: f64) -> Array2<C64> {
    let amp = C64::from_polar((1.0 / (lam * z)).sqrt() * h, -PI / 4.0);
    Array2::from_shape_fn((out.len(), src.len()), |(i, l)| {
        let d = out[i] - src[l];
        amp * C64::from_polar(1.0, PI * d * d / (lam * z))
    })
}

/// Extent along either axis of the samples above the support threshold.
fn support(u: &Array2<C64>, xs: &Array1<f64>) -> Result<(f64, f64)> {
    let peak = u.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(HoloError::invalid("oracle field is identically zero"));
    }
    let tol = SUPPORT_TOL * peak;
    let rows = u.map_axis(Axis(1), |r| r.iter().any(|v| v.norm() > tol));
    let cols = u.map_axis(Axis(0), |c| c.iter().any(|v| v.norm() > tol));
    let first = |m: &Array1<bool>| m.iter().position(|&b| b).unwrap();
    let last = |m: &Array1<bool>| m.len() - 1 - m.iter().rev().position(|&b| b).unwrap();
    let lo = xs[first(&rows).min(first(&cols))];
    let hi = xs[last(&rows).max(last(&cols))];
    Ok((lo, hi))
}

fn check_edges(u: &Array2<C64>, what: &str) -> Result<()> {
    let peak = u.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let n = u.nrows() - 1;
    let edge = (0..=n)
        .flat_map(|i| [u[[0, i]], u[[n, i]], u[[i, 0]], u[[i, n]]])
        .map(|v| v.norm())
        .fold(0.0, f64::max);
    if edge > EDGE_TOL * peak {
        return Err(HoloError::Undersampled(format!(
            "{what} reaches the oracle window edge ({:.2e} of peak); enlarge half_width",
            edge / peak
        )));
    }
    Ok(())
}

fn check_rate(rate: f64, nyquist: f64, what: &str) -> Result<()> {
    if rate > nyquist {
        return Err(HoloError::Undersampled(format!(
            "{what} oscillates at {rate:.4e} cycles/m, above the oracle Nyquist rate {nyquist:.4e}"
        )));
    }
    Ok(())
}
