//! Complex 2D fields and the primitive linear operators acting on them:
//! Fresnel propagation, magnification and sub-pixel shifts, each paired with
//! its adjoint, plus the sesquilinear inner product.
//!
//! Grids are square with a power-of-two side. Propagation and shifts are
//! Fourier multipliers on the periodic grid, so both are exactly unitary and
//! their adjoints are the same operator with the parameter negated.
//! Magnification is bilinear resampling about the grid centre `n/2`, and its
//! adjoint is the exact transpose of the interpolation matrix.

pub mod fft;
mod resample;

use std::f64::consts::PI;

use ndarray::{Array2, Zip};

use crate::{HoloError, Result, C64};

pub(crate) use resample::Resampler;
pub use resample::Sample;

/// A square complex field sampled on a regular grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField {
    data: Array2<C64>,
    pixel_size: f64,
    wavelength: f64,
}

impl ComplexField {
    pub fn new(data: Array2<C64>, pixel_size: f64, wavelength: f64) -> Result<Self> {
        check_grid(data.nrows(), data.ncols())?;
        check_positive("pixel_size", pixel_size)?;
        check_positive("wavelength", wavelength)?;
        let data = if data.is_standard_layout() {
            data
        } else {
            data.as_standard_layout().to_owned()
        };
        Ok(Self {
            data,
            pixel_size,
            wavelength,
        })
    }

    pub fn constant(n: usize, value: C64, pixel_size: f64, wavelength: f64) -> Result<Self> {
        Self::new(Array2::from_elem((n, n), value), pixel_size, wavelength)
    }

    /// Same grid parameters, new samples.
    pub fn with_data(&self, data: Array2<C64>) -> Result<Self> {
        if data.dim() != self.data.dim() {
            return Err(HoloError::ShapeMismatch {
                expected: vec![self.n(), self.n()],
                found: data.shape().to_vec(),
            });
        }
        Self::new(data, self.pixel_size, self.wavelength)
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn data(&self) -> &Array2<C64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array2<C64> {
        &mut self.data
    }

    pub fn into_data(self) -> Array2<C64> {
        self.data
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn intensity(&self) -> Array2<f64> {
        self.data.mapv(|v| v.norm_sqr())
    }
}

/// Sub-pixel displacement in pixels; `sx` moves along columns, `sy` along rows.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ShiftVector {
    pub sx: f64,
    pub sy: f64,
}

impl ShiftVector {
    pub const ZERO: ShiftVector = ShiftVector { sx: 0.0, sy: 0.0 };

    pub fn new(sx: f64, sy: f64) -> Result<Self> {
        if !sx.is_finite() || !sy.is_finite() {
            return Err(HoloError::invalid("shift components must be finite"));
        }
        Ok(Self { sx, sy })
    }

    pub fn is_zero(&self) -> bool {
        self.sx == 0.0 && self.sy == 0.0
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            sx: self.sx * factor,
            sy: self.sy * factor,
        }
    }

    pub(crate) fn check_for(&self, n: usize) -> Result<()> {
        let half = n as f64 / 2.0;
        if !self.sx.is_finite() || !self.sy.is_finite() || self.sx.abs() >= half || self.sy.abs() >= half {
            return Err(HoloError::invalid(format!(
                "shift ({}, {}) outside (-{half}, {half})",
                self.sx, self.sy
            )));
        }
        Ok(())
    }
}

impl std::ops::Neg for ShiftVector {
    type Output = ShiftVector;
    fn neg(self) -> ShiftVector {
        ShiftVector {
            sx: -self.sx,
            sy: -self.sy,
        }
    }
}

pub(crate) fn check_grid(rows: usize, cols: usize) -> Result<()> {
    if rows != cols {
        return Err(HoloError::ShapeMismatch {
            expected: vec![rows, rows],
            found: vec![rows, cols],
        });
    }
    if rows == 0 || !rows.is_power_of_two() {
        return Err(HoloError::invalid(format!("grid size {rows} is not a positive power of two")));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(HoloError::invalid(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

/// Fourier multiplier `exp(-iπλz|f|²)` in FFT order.
pub(crate) fn transfer_array(n: usize, pixel_size: f64, distance: f64, wavelength: f64) -> Array2<C64> {
    let f = fft::fftfreq(n, pixel_size);
    let c = -PI * wavelength * distance;
    Array2::from_shape_fn((n, n), |(i, j)| C64::from_polar(1.0, c * (f[i] * f[i] + f[j] * f[j])))
}

/// Fourier multiplier `exp(-2πi(f_x s_x + f_y s_y))` (frequencies in cycles per pixel).
pub(crate) fn shift_ramp(n: usize, s: ShiftVector) -> Array2<C64> {
    let f = fft::fftfreq(n, 1.0);
    Array2::from_shape_fn((n, n), |(i, j)| C64::from_polar(1.0, -2.0 * PI * (f[j] * s.sx + f[i] * s.sy)))
}

/// Fresnel transfer function for free-space propagation over `distance`.
///
/// The returned array is indexed by DFT frequency in FFT order, so index
/// `n/2` along an axis is the frequency `-1/(2·pixel_size)`. The constant
/// unimodular factor of the Fresnel kernel is dropped.
pub fn fresnel_transfer(n: usize, pixel_size: f64, distance: f64, wavelength: f64) -> Result<ComplexField> {
    check_positive("pixel_size", pixel_size)?;
    check_positive("wavelength", wavelength)?;
    if !distance.is_finite() {
        return Err(HoloError::invalid("distance must be finite"));
    }
    ComplexField::new(transfer_array(n, pixel_size, distance, wavelength), pixel_size, wavelength)
}

/// Fresnel propagation over `distance` (negative values back-propagate).
pub fn propagate(field: &ComplexField, distance: f64) -> ComplexField {
    let mut data = field.data.clone();
    if distance != 0.0 {
        let h = transfer_array(field.n(), field.pixel_size, distance, field.wavelength);
        fft::apply_multiplier(&mut data, &h);
    }
    ComplexField {
        data,
        pixel_size: field.pixel_size,
        wavelength: field.wavelength,
    }
}

/// Adjoint of [`propagate`]: propagation over `-distance`.
pub fn propagate_adjoint(field: &ComplexField, distance: f64) -> ComplexField {
    propagate(field, -distance)
}

/// Dilation `M_m ψ(x) = ψ(x/m)` resampled onto an `out_n` grid.
pub fn magnify(field: &ComplexField, m: f64, out_n: usize) -> Result<ComplexField> {
    let r = Resampler::new(field.n(), out_n, m)?;
    ComplexField::new(r.apply(&field.data), field.pixel_size, field.wavelength)
}

/// Adjoint of `magnify(·, m, field.n())` acting on an `in_n` grid: maps a
/// field on the magnified grid back to an `in_n × in_n` grid.
pub fn magnify_adjoint(field: &ComplexField, m: f64, in_n: usize) -> Result<ComplexField> {
    let r = Resampler::new(in_n, field.n(), m)?;
    ComplexField::new(r.adjoint(&field.data), field.pixel_size, field.wavelength)
}

/// Periodic sub-pixel shift by a Fourier phase ramp.
pub fn shift(field: &ComplexField, s: ShiftVector) -> Result<ComplexField> {
    s.check_for(field.n())?;
    let mut data = field.data.clone();
    if !s.is_zero() {
        fft::apply_multiplier(&mut data, &shift_ramp(field.n(), s));
    }
    Ok(ComplexField {
        data,
        pixel_size: field.pixel_size,
        wavelength: field.wavelength,
    })
}

/// Adjoint of [`shift`]: shift by `-s`.
pub fn shift_adjoint(field: &ComplexField, s: ShiftVector) -> Result<ComplexField> {
    shift(field, -s)
}

/// `⟨x, y⟩ = Σ x·conj(y)`.
pub fn inner(x: &ComplexField, y: &ComplexField) -> Result<C64> {
    if x.data.dim() != y.data.dim() {
        return Err(HoloError::ShapeMismatch {
            expected: x.data.shape().to_vec(),
            found: y.data.shape().to_vec(),
        });
    }
    Ok(inner_arrays(&x.data, &y.data))
}

pub(crate) fn inner_arrays(x: &Array2<C64>, y: &Array2<C64>) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    Zip::from(x).and(y).for_each(|a, b| acc += a * b.conj());
    acc
}
