//! Reconstruction quality measures.

use std::ops::Sub;

use ndarray::{Array, ArrayD, Axis, Dimension, IxDyn, Zip};

use crate::solver::History;
use crate::wavefield::ComplexField;
use crate::{HoloError, Result, C64};

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - c;
        *v = (-x * x / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable Gaussian filter keeping only fully covered positions.
fn filter_valid(a: &ArrayD<f64>, w: &[f64; WINDOW]) -> ArrayD<f64> {
    let mut cur = a.clone();
    for ax in 0..a.ndim() {
        let len = cur.len_of(Axis(ax)) - WINDOW + 1;
        let mut shape = cur.shape().to_vec();
        shape[ax] = len;
        let mut out = ArrayD::<f64>::zeros(IxDyn(&shape));
        for (t, &wt) in w.iter().enumerate() {
            let src = cur.slice_axis(Axis(ax), (t..t + len).into());
            out.scaled_add(wt, &src);
        }
        cur = out;
    }
    cur
}

/// Mean structural similarity with an 11-tap Gaussian window (σ = 1.5),
/// `K1 = 0.01`, `K2 = 0.03`, evaluated where the window fits entirely.
/// Works for arrays of any dimension; every axis needs at least 11 samples.
pub fn ssim<D: Dimension>(a: &Array<f64, D>, b: &Array<f64, D>, dynamic_range: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(HoloError::ShapeMismatch {
            expected: a.shape().to_vec(),
            found: b.shape().to_vec(),
        });
    }
    if a.shape().iter().any(|&s| s < WINDOW) {
        return Err(HoloError::invalid(format!("SSIM needs at least {WINDOW} samples per axis")));
    }
    if !(dynamic_range > 0.0 && dynamic_range.is_finite()) {
        return Err(HoloError::invalid("SSIM dynamic range must be positive"));
    }
    let w = gaussian_window();
    let a = a.view().into_dyn().to_owned();
    let b = b.view().into_dyn().to_owned();
    let mu_a = filter_valid(&a, &w);
    let mu_b = filter_valid(&b, &w);
    let aa = filter_valid(&(&a * &a), &w);
    let bb = filter_valid(&(&b * &b), &w);
    let ab = filter_valid(&(&a * &b), &w);
    let c1 = (K1 * dynamic_range).powi(2);
    let c2 = (K2 * dynamic_range).powi(2);
    let mut total = 0.0;
    Zip::from(&mu_a)
        .and(&mu_b)
        .and(&aa)
        .and(&bb)
        .and(&ab)
        .for_each(|&ma, &mb, &saa, &sbb, &sab| {
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        });
    Ok(total / mu_a.len() as f64)
}

/// `max − min` of the reference, the dynamic range used against ground truth.
pub fn dynamic_range<D: Dimension>(gt: &Array<f64, D>) -> f64 {
    let (lo, hi) = gt
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    hi - lo
}

/// Samples with a squared magnitude.
pub trait Magnitude: Copy + Sub<Output = Self> {
    fn abs_sqr(self) -> f64;
}
impl Magnitude for f64 {
    fn abs_sqr(self) -> f64 {
        self * self
    }
}
impl Magnitude for C64 {
    fn abs_sqr(self) -> f64 {
        self.norm_sqr()
    }
}

/// `‖x − ref‖₂ / ‖ref‖₂`.
pub fn rel_error<T: Magnitude, D: Dimension>(x: &Array<T, D>, reference: &Array<T, D>) -> Result<f64> {
    if x.shape() != reference.shape() {
        return Err(HoloError::ShapeMismatch {
            expected: reference.shape().to_vec(),
            found: x.shape().to_vec(),
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    Zip::from(x).and(reference).for_each(|&a, &r| {
        num += (a - r).abs_sqr();
        den += r.abs_sqr();
    });
    if den == 0.0 {
        return Err(HoloError::invalid("reference has zero norm"));
    }
    Ok((num / den).sqrt())
}

/// Relative error of a transmittance stack, treated as one vector.
pub fn rel_error_stack(x: &[ComplexField], reference: &[ComplexField]) -> Result<f64> {
    if x.len() != reference.len() {
        return Err(HoloError::invalid("stacks differ in length"));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, r) in x.iter().zip(reference) {
        let e = rel_error(a.data(), r.data())?;
        let rn = r.norm_sqr();
        num += e * e * rn;
        den += rn;
    }
    if den == 0.0 {
        return Err(HoloError::invalid("reference has zero norm"));
    }
    Ok((num / den).sqrt())
}

/// Relative change between consecutive iterates, per variable.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterDiff {
    pub psi: Vec<f64>,
    pub q: Vec<f64>,
}

/// Series `‖x^{(m+1)} − x^{(m)}‖/‖x^{(m)}‖` for the object stack and the
/// probe, one entry per recorded step. Zeros are kept exactly, so iterations
/// that left a variable untouched show up as gaps.
pub fn iter_diff(history: &History) -> IterDiff {
    let steps = history.records.iter().skip(1);
    IterDiff {
        psi: steps.clone().map(|r| r.d_psi_norm).collect(),
        q: steps.map(|r| r.d_q_norm).collect(),
    }
}
