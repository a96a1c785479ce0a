//! Separable bilinear resampling about the grid centre and its exact transpose.

use std::ops::{AddAssign, Mul};

use ndarray::Array2;

use crate::{HoloError, Result, C64};

/// Element types the resampler and binning can move around.
pub trait Sample: Copy + Default + AddAssign + Mul<f64, Output = Self> + Send + Sync {}
impl Sample for f64 {}
impl Sample for C64 {}

#[derive(Clone, Debug)]
struct Tap {
    i0: usize,
    i1: usize,
    w0: f64,
    w1: f64,
}

/// Bilinear map from an `n_in²` grid to an `n_out²` grid where output pixel
/// `x` (centred coordinates, in pixels) reads input coordinate `x/m`.
/// Out-of-domain reads are clamped to the nearest edge sample.
#[derive(Clone, Debug)]
pub(crate) struct Resampler {
    n_in: usize,
    n_out: usize,
    taps: Vec<Tap>,
}

impl Resampler {
    pub(crate) fn new(n_in: usize, n_out: usize, m: f64) -> Result<Self> {
        if !(m.is_finite() && m > 0.0) {
            return Err(HoloError::invalid(format!("magnification must be positive, got {m}")));
        }
        if n_in == 0 || n_out == 0 {
            return Err(HoloError::invalid("empty grid"));
        }
        Ok(Self::with_ratio(n_in, n_out, 1.0 / m))
    }

    /// Output pixel `o` reads input coordinate `(o - n_out/2)·ratio + n_in/2`.
    pub(crate) fn with_ratio(n_in: usize, n_out: usize, ratio: f64) -> Self {
        let c_in = (n_in / 2) as f64;
        let c_out = (n_out / 2) as f64;
        let last = (n_in - 1) as f64;
        let exact = (ratio - 1.0).abs() < 1e-13;
        let taps = (0..n_out)
            .map(|o| {
                let x = if exact {
                    o as f64 - c_out + c_in
                } else {
                    (o as f64 - c_out) * ratio + c_in
                };
                let x = x.clamp(0.0, last);
                let i0 = x.floor() as usize;
                let t = x - i0 as f64;
                let i1 = (i0 + 1).min(n_in - 1);
                Tap {
                    i0,
                    i1,
                    w0: 1.0 - t,
                    w1: t,
                }
            })
            .collect();
        Self { n_in, n_out, taps }
    }

    pub(crate) fn apply<T: Sample>(&self, a: &Array2<T>) -> Array2<T> {
        assert_eq!(a.dim(), (self.n_in, self.n_in));
        let mut tmp = Array2::<T>::default((self.n_out, self.n_in));
        for (o, tap) in self.taps.iter().enumerate() {
            let r0 = a.row(tap.i0);
            let r1 = a.row(tap.i1);
            let mut dst = tmp.row_mut(o);
            for c in 0..self.n_in {
                let mut v = r0[c] * tap.w0;
                v += r1[c] * tap.w1;
                dst[c] = v;
            }
        }
        let mut out = Array2::<T>::default((self.n_out, self.n_out));
        for r in 0..self.n_out {
            let src = tmp.row(r);
            let mut dst = out.row_mut(r);
            for (o, tap) in self.taps.iter().enumerate() {
                let mut v = src[tap.i0] * tap.w0;
                v += src[tap.i1] * tap.w1;
                dst[o] = v;
            }
        }
        out
    }

    pub(crate) fn adjoint<T: Sample>(&self, b: &Array2<T>) -> Array2<T> {
        assert_eq!(b.dim(), (self.n_out, self.n_out));
        let mut tmp = Array2::<T>::default((self.n_out, self.n_in));
        for r in 0..self.n_out {
            let src = b.row(r);
            let mut dst = tmp.row_mut(r);
            for (o, tap) in self.taps.iter().enumerate() {
                dst[tap.i0] += src[o] * tap.w0;
                dst[tap.i1] += src[o] * tap.w1;
            }
        }
        let mut out = Array2::<T>::default((self.n_in, self.n_in));
        for (o, tap) in self.taps.iter().enumerate() {
            let src = tmp.row(o).to_owned();
            for c in 0..self.n_in {
                out[[tap.i0, c]] += src[c] * tap.w0;
                out[[tap.i1, c]] += src[c] * tap.w1;
            }
        }
        out
    }
}
