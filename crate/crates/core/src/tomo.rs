//! Parallel-beam tomography about the vertical axis.
//!
//! Volumes are indexed `[z, y, x]` with `z` vertical. For angle `θ` the
//! detector column `u` sees the ray through `t = u - c` along
//! `(x, y) = t·(cos θ, sin θ) + s·(-sin θ, cos θ)` with `c = (n-1)/2`,
//! sampled at unit steps in `s` with bilinear weights (zero outside the grid).
//! Line integrals are in meters. The adjoint is the exact transpose of that
//! sparse matrix.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, Axis, Zip};
use rayon::prelude::*;

use crate::wavefield::ComplexField;
use crate::{HoloError, Result, C64};

/// Stack of projections `[angle, row, column]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    pub data: Array3<f64>,
    pub angles: Vec<f64>,
    pub pixel_size: f64,
}

impl Sinogram {
    pub fn new(data: Array3<f64>, angles: Vec<f64>, pixel_size: f64) -> Result<Self> {
        check_angles(&angles)?;
        if data.len_of(Axis(0)) != angles.len() {
            return Err(HoloError::ShapeMismatch {
                expected: vec![angles.len(), data.len_of(Axis(1)), data.len_of(Axis(2))],
                found: data.shape().to_vec(),
            });
        }
        if !(pixel_size > 0.0) {
            return Err(HoloError::invalid("pixel size must be positive"));
        }
        Ok(Self {
            data,
            angles,
            pixel_size,
        })
    }
}

fn check_angles(angles: &[f64]) -> Result<()> {
    if angles.is_empty() {
        return Err(HoloError::invalid("at least one angle is required"));
    }
    if angles.iter().any(|a| !(0.0..PI).contains(a)) || angles.windows(2).any(|w| w[1] <= w[0]) {
        return Err(HoloError::invalid("angles must be strictly increasing in [0, π)"));
    }
    Ok(())
}

/// `n` angles uniformly covering `[0, π)`.
pub fn uniform_angles(n: usize) -> Vec<f64> {
    (0..n).map(|k| PI * k as f64 / n as f64).collect()
}

/// Column-compressed ray weights for one angle.
#[derive(Clone, Debug)]
struct AngleMatrix {
    ptr: Vec<usize>,
    idx: Vec<u32>,
    w: Vec<f64>,
}

/// Precomputed discrete Radon transform for an `n³` volume.
#[derive(Clone, Debug)]
pub struct RadonOperator {
    n: usize,
    voxel_size: f64,
    angles: Vec<f64>,
    mats: Vec<AngleMatrix>,
}

impl RadonOperator {
    pub fn new(n: usize, voxel_size: f64, angles: &[f64]) -> Result<Self> {
        if n == 0 {
            return Err(HoloError::invalid("empty volume"));
        }
        if !(voxel_size > 0.0) {
            return Err(HoloError::invalid("voxel size must be positive"));
        }
        check_angles(angles)?;
        let mats = angles.par_iter().map(|&a| angle_matrix(n, a, voxel_size)).collect();
        Ok(Self {
            n,
            voxel_size,
            angles: angles.to_vec(),
            mats,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn angles(&self) -> &[f64] {
        &self.angles
    }
    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    /// `R u` for a `[z, y, x]` volume.
    pub fn forward(&self, u: &Array3<f64>) -> Result<Array3<f64>> {
        self.check_volume(u)?;
        let n = self.n;
        let u = u.as_standard_layout();
        let flat = u.as_slice().unwrap();
        let views: Vec<Array2<f64>> = self
            .mats
            .par_iter()
            .map(|m| {
                let mut out = Array2::zeros((n, n));
                for z in 0..n {
                    let slice = &flat[z * n * n..(z + 1) * n * n];
                    for col in 0..n {
                        let mut acc = 0.0;
                        for e in m.ptr[col]..m.ptr[col + 1] {
                            acc += m.w[e] * slice[m.idx[e] as usize];
                        }
                        out[[z, col]] = acc;
                    }
                }
                out
            })
            .collect();
        let mut out = Array3::zeros((self.angles.len(), n, n));
        for (mut dst, v) in out.outer_iter_mut().zip(views) {
            dst.assign(&v);
        }
        Ok(out)
    }

    /// `Rᵀ p` for a `[angle, row, column]` stack.
    pub fn adjoint(&self, p: &Array3<f64>) -> Result<Array3<f64>> {
        let n = self.n;
        if p.dim() != (self.angles.len(), n, n) {
            return Err(HoloError::ShapeMismatch {
                expected: vec![self.angles.len(), n, n],
                found: p.shape().to_vec(),
            });
        }
        let mut out = Array3::<f64>::zeros((n, n, n));
        out.outer_iter_mut().into_par_iter().enumerate().for_each(|(z, mut slice)| {
            let dst = slice.as_slice_mut().unwrap();
            for (a, m) in self.mats.iter().enumerate() {
                for col in 0..n {
                    let v = p[[a, z, col]];
                    if v == 0.0 {
                        continue;
                    }
                    for e in m.ptr[col]..m.ptr[col + 1] {
                        dst[m.idx[e] as usize] += m.w[e] * v;
                    }
                }
            }
        });
        Ok(out)
    }

    fn check_volume(&self, u: &Array3<f64>) -> Result<()> {
        let n = self.n;
        if u.dim() != (n, n, n) {
            return Err(HoloError::ShapeMismatch {
                expected: vec![n, n, n],
                found: u.shape().to_vec(),
            });
        }
        Ok(())
    }
}

fn angle_matrix(n: usize, theta: f64, voxel: f64) -> AngleMatrix {
    let c = (n as f64 - 1.0) / 2.0;
    let (sin, cos) = theta.sin_cos();
    let ns = ((n as f64) * std::f64::consts::SQRT_2).ceil() as usize + 1;
    let s0 = (ns as f64 - 1.0) / 2.0;
    let last = (n - 1) as f64;
    let mut ptr = Vec::with_capacity(n + 1);
    let mut idx = Vec::new();
    let mut w = Vec::new();
    ptr.push(0);
    let mut acc: Vec<(u32, f64)> = Vec::new();
    for col in 0..n {
        acc.clear();
        let t = col as f64 - c;
        for k in 0..ns {
            let s = k as f64 - s0;
            let x = t * cos - s * sin + c;
            let y = t * sin + s * cos + c;
            if !(x > -1.0 && x < last + 1.0 && y > -1.0 && y < last + 1.0) {
                continue;
            }
            let (x0, y0) = (x.floor(), y.floor());
            let (fx, fy) = (x - x0, y - y0);
            for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                    let (xi, yi) = (x0 + dx, y0 + dy);
                    let wt = wx * wy;
                    if wt == 0.0 || xi < 0.0 || yi < 0.0 || xi > last || yi > last {
                        continue;
                    }
                    acc.push(((yi as usize * n + xi as usize) as u32, wt * voxel));
                }
            }
        }
        acc.sort_by_key(|e| e.0);
        let mut i = 0;
        while i < acc.len() {
            let (id, mut v) = acc[i];
            i += 1;
            while i < acc.len() && acc[i].0 == id {
                v += acc[i].1;
                i += 1;
            }
            idx.push(id);
            w.push(v);
        }
        ptr.push(idx.len());
    }
    AngleMatrix { ptr, idx, w }
}

/// Line integrals of a `[z, y, x]` volume with the given voxel size.
pub fn radon_forward(u: &Array3<f64>, voxel_size: f64, angles: &[f64]) -> Result<Sinogram> {
    let op = RadonOperator::new(u.len_of(Axis(0)), voxel_size, angles)?;
    Sinogram::new(op.forward(u)?, angles.to_vec(), voxel_size)
}

/// Exact transpose of [`radon_forward`].
pub fn radon_adjoint(s: &Sinogram) -> Result<Array3<f64>> {
    let op = RadonOperator::new(s.data.len_of(Axis(1)), s.pixel_size, &s.angles)?;
    op.adjoint(&s.data)
}

/// `(ν/2πi)·log ψ`, with `|ψ|` floored at `1e-12·max|ψ|`.
///
/// With transmittances `exp((2πi/ν)·(-δ_p + iβ_p))` the result is
/// `-δ_p + iβ_p`. Phases are wrapped to `(-π, π]`. The second value counts
/// floored pixels.
pub fn log_projection(psi: &ComplexField, wavelength: f64) -> (Array2<C64>, usize) {
    let peak = psi.data().iter().map(|v| v.norm()).fold(0.0, f64::max);
    let floor = (1e-12 * peak).max(f64::MIN_POSITIVE);
    let mut floored = 0;
    let k = wavelength / (2.0 * PI);
    let out = psi.data().mapv(|v| {
        let mut r = v.norm();
        if r < floor {
            r = floor;
            floored += 1;
        }
        C64::new(k * v.arg(), -k * r.ln())
    });
    (out, floored)
}

/// Result of [`cg_tomo`].
#[derive(Clone, Debug)]
pub struct TomoResult {
    pub volume: Array3<f64>,
    /// `‖R u − p‖` before the first and after every iteration.
    pub residuals: Vec<f64>,
}

/// Least-squares inversion `min Σ_k ‖R_k u − p_k‖²` by Dai–Yuan conjugate
/// gradients with the exact step of the quadratic.
pub fn cg_tomo(op: &RadonOperator, sino: &Array3<f64>, iterations: usize, init: Option<Array3<f64>>) -> Result<TomoResult> {
    let n = op.n();
    let mut u = init.unwrap_or_else(|| Array3::zeros((n, n, n)));
    let mut r = op.forward(&u)? - sino;
    let mut residuals = vec![norm(&r)];
    let mut g_old: Option<Array3<f64>> = None;
    let mut eta = Array3::zeros((n, n, n));
    for _ in 0..iterations {
        let g = op.adjoint(&r)? * 2.0;
        let gg = dot(&g, &g);
        if gg == 0.0 {
            residuals.push(norm(&r));
            continue;
        }
        eta = match &g_old {
            None => -&g,
            Some(go) => {
                let den = dot(&g, &eta) - dot(go, &eta);
                match crate::solver::dai_yuan_beta(gg, den) {
                    Some(beta) => &eta * beta - &g,
                    None => -&g,
                }
            }
        };
        if dot(&g, &eta) >= 0.0 {
            eta = -&g;
        }
        let reta = op.forward(&eta)?;
        let rr = dot(&reta, &reta);
        if rr > 0.0 {
            let gamma = -dot(&r, &reta) / rr;
            u.scaled_add(gamma, &eta);
            r.scaled_add(gamma, &reta);
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(HoloError::NonFinite("tomography volume".into()));
        }
        residuals.push(norm(&r));
        g_old = Some(g);
    }
    Ok(TomoResult { volume: u, residuals })
}

fn dot(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    let mut acc = 0.0;
    Zip::from(a).and(b).for_each(|x, y| acc += x * y);
    acc
}

fn norm(a: &Array3<f64>) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::rng;
    use rand::Rng;

    fn random_volume(n: usize, seed: u64) -> Array3<f64> {
        let mut r = rng(seed);
        Array3::from_shape_simple_fn((n, n, n), || r.random::<f64>() - 0.5)
    }

    fn ball(n: usize, radius: f64) -> Array3<f64> {
        let c = (n as f64 - 1.0) / 2.0;
        Array3::from_shape_fn((n, n, n), |(z, y, x)| {
            let r2 = (x as f64 - c).powi(2) + (y as f64 - c).powi(2) + (z as f64 - c).powi(2);
            if r2 <= radius * radius {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Dense matrix of one slice, rows `[angle][col]`, built by direct ray
    /// sampling.
    fn dense_slice_matrix(n: usize, angles: &[f64]) -> Array2<f64> {
        let mut a = Array2::zeros((angles.len() * n, n * n));
        let c = (n as f64 - 1.0) / 2.0;
        let ns = ((n as f64) * 2f64.sqrt()).ceil() as usize + 1;
        for (k, th) in angles.iter().enumerate() {
            for col in 0..n {
                let t = col as f64 - c;
                for i in 0..ns {
                    let s = i as f64 - (ns as f64 - 1.0) / 2.0;
                    let x = t * th.cos() - s * th.sin() + c;
                    let y = t * th.sin() + s * th.cos() + c;
                    for yi in 0..n {
                        for xi in 0..n {
                            let wx = (1.0 - (x - xi as f64).abs()).max(0.0);
                            let wy = (1.0 - (y - yi as f64).abs()).max(0.0);
                            a[[k * n + col, yi * n + xi]] += wx * wy;
                        }
                    }
                }
            }
        }
        a
    }

    #[test]
    fn zero_volume_projects_to_zero() {
        let op = RadonOperator::new(16, 1.0, &uniform_angles(5)).unwrap();
        assert!(op.forward(&Array3::zeros((16, 16, 16))).unwrap().iter().all(|&v| v == 0.0));
        let out = cg_tomo(&op, &Array3::zeros((5, 16, 16)), 5, None).unwrap();
        assert!(out.volume.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ball_central_chord() {
        let n = 32;
        let voxel = 2e-7;
        let r = 10.0;
        let angles = [0.0, 0.4, PI / 2.0, 2.5];
        let s = radon_forward(&ball(n, r), voxel, &angles).unwrap();
        for k in 0..angles.len() {
            let centre = 0.5 * (s.data[[k, 15, 15]] + s.data[[k, 16, 16]]);
            let mid = s.data[[k, 15, 15]].max(s.data[[k, 16, 16]]);
            assert!((centre - 2.0 * r * voxel).abs() <= voxel, "{k}: {centre}");
            assert!(mid <= (2.0 * r + 2.0) * voxel);
        }
    }

    #[test]
    fn adjoint_dot_product() {
        for &(n, na) in &[(8usize, 3usize), (17, 7), (64, 4)] {
            let angles = uniform_angles(na);
            let op = RadonOperator::new(n, 1e-7, &angles).unwrap();
            let u = random_volume(n, n as u64);
            let mut r = rng(99);
            let p = Array3::from_shape_simple_fn((na, n, n), || r.random::<f64>() - 0.5);
            let ru = op.forward(&u).unwrap();
            let rtp = op.adjoint(&p).unwrap();
            let lhs = (&ru * &p).sum();
            let rhs = (&u * &rtp).sum();
            assert!((lhs - rhs).abs() < 1e-8 * lhs.abs().max(rhs.abs()), "{n}: {lhs} {rhs}");
        }
        let s = radon_forward(&random_volume(8, 1), 1.0, &[0.1, 1.0]).unwrap();
        let back = radon_adjoint(&s).unwrap();
        assert_eq!(back.dim(), (8, 8, 8));
    }

    #[test]
    fn matches_explicit_matrix() {
        let n = 8;
        let angles = [0.0, 0.3, 1.1, PI / 2.0, 2.9];
        let op = RadonOperator::new(n, 1.0, &angles).unwrap();
        let dense = dense_slice_matrix(n, &angles);
        let mut cols = Array2::zeros((angles.len() * n, n * n));
        for v in 0..n * n {
            let mut e = Array3::zeros((n, n, n));
            e[[3, v / n, v % n]] = 1.0;
            let p = op.forward(&e).unwrap();
            for k in 0..angles.len() {
                for col in 0..n {
                    cols[[k * n + col, v]] = p[[k, 3, col]];
                }
            }
        }
        let err = (&cols - &dense).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-12, "{err}");
        let back = op.adjoint(&Array3::ones((angles.len(), n, n))).unwrap();
        let weights = dense.sum_axis(Axis(0));
        for z in 0..n {
            for v in 0..n * n {
                assert!((back[[z, v / n, v % n]] - weights[v]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn delta_sinogram_back_projects_to_a_line() {
        let n = 16;
        let op = RadonOperator::new(n, 1.0, &[0.0]).unwrap();
        let mut p = Array3::zeros((1, n, n));
        p[[0, 5, 9]] = 1.0;
        let back = op.adjoint(&p).unwrap();
        for ((z, y, x), &v) in back.indexed_iter() {
            if v != 0.0 {
                assert!(z == 5 && x == 9, "({z}, {y}, {x})");
            }
        }
        assert!((back.sum() - n as f64).abs() < 1e-12);
    }

    #[test]
    fn log_projection_inverts_transmittance() {
        let lambda = 7.27183e-11;
        let one = ComplexField::constant(8, C64::new(1.0, 0.0), 1e-7, lambda).unwrap();
        let (p, floored) = log_projection(&one, lambda);
        assert_eq!(floored, 0);
        assert!(p.iter().all(|v| v.norm() == 0.0));

        let k = 2.0 * PI / lambda;
        let truth = Array2::from_shape_fn((8, 8), |(i, j)| {
            C64::new(-(i as f64) * 0.25 / k, (j as f64) * 0.01 / k)
        });
        let psi = ComplexField::new(truth.mapv(|v| (C64::new(0.0, k) * v).exp()), 1e-7, lambda).unwrap();
        let (p, _) = log_projection(&psi, lambda);
        let err = (&p - &truth).iter().fold(0.0f64, |m, v| m.max(v.norm()));
        assert!(err < 1e-14 * lambda, "{err}");

        let mut zero = psi.data().clone();
        zero[[2, 2]] = C64::new(0.0, 0.0);
        let (p, floored) = log_projection(&psi.with_data(zero).unwrap(), lambda);
        assert_eq!(floored, 1);
        assert!(p.iter().all(|v| v.re.is_finite() && v.im.is_finite()));
    }

    #[test]
    fn phase_beyond_pi_wraps() {
        let lambda = 1.0;
        let psi = ComplexField::constant(4, C64::from_polar(1.0, -3.5), 1.0, lambda).unwrap();
        let (p, _) = log_projection(&psi, lambda);
        let phase = p[[0, 0]].re * 2.0 * PI;
        assert!((phase - (2.0 * PI - 3.5)).abs() < 1e-12);
    }

    #[test]
    fn cg_matches_linear_cg_on_small_instance() {
        let n = 8;
        let angles = uniform_angles(6);
        let op = RadonOperator::new(n, 1.0, &angles).unwrap();
        let truth = random_volume(n, 4);
        let sino = op.forward(&truth).unwrap() + random_volume(n, 5).slice(ndarray::s![..6, .., ..]).to_owned() * 0.1;

        let b = op.adjoint(&sino).unwrap();
        let apply = |x: &Array3<f64>| op.adjoint(&op.forward(x).unwrap()).unwrap();
        let mut x = Array3::<f64>::zeros((n, n, n));
        let mut r = b.clone();
        let mut d = r.clone();
        let mut rr = (&r * &r).sum();
        for it in 1..=6 {
            let ad = apply(&d);
            let alpha = rr / (&d * &ad).sum();
            x.scaled_add(alpha, &d);
            r.scaled_add(-alpha, &ad);
            let rr_new = (&r * &r).sum();
            d = &r + &(&d * (rr_new / rr));
            rr = rr_new;
            let ours = cg_tomo(&op, &sino, it, None).unwrap().volume;
            let err = (&ours - &x).mapv(|v| v * v).sum().sqrt() / (&x * &x).sum().sqrt();
            assert!(err < 1e-8, "iteration {it}: {err}");
        }
    }

    #[test]
    fn residual_is_non_increasing() {
        let n = 16;
        let op = RadonOperator::new(n, 1e-7, &uniform_angles(9)).unwrap();
        let sino = op.forward(&ball(n, 5.0)).unwrap();
        let out = cg_tomo(&op, &sino, 30, None).unwrap();
        assert_eq!(out.residuals.len(), 31);
        assert!(out.residuals.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        assert!(out.residuals[30] < 0.05 * out.residuals[0]);
    }

    #[test]
    fn angles_are_validated() {
        assert!(RadonOperator::new(8, 1.0, &[]).is_err());
        assert!(RadonOperator::new(8, 1.0, &[0.5, 0.2]).is_err());
        assert!(RadonOperator::new(8, 1.0, &[PI]).is_err());
        assert!(Sinogram::new(Array3::zeros((2, 4, 4)), vec![0.0], 1.0).is_err());
        let a = uniform_angles(4);
        assert_eq!(a.len(), 4);
        assert!((a[1] - PI / 4.0).abs() < 1e-15);
    }
}
