//! Composite operators of the probe-aware conic model on the object-plane grid.
//!
//! For plane `j` with sample shift `ss` and probe shift `sp`:
//!
//! ```text
//! L(ψ) = P_{ζ/mt²}( (P_ω S_sp q) · M_{1/mt} S_ss ψ )
//! L*(d) = S_{-ss} M*_{1/mt}( conj(P_ω S_sp q) · P_{-ζ/mt²} d )
//! ```
//!
//! `Q(q)` is the same bilinear map read as linear in `q`, and the reference
//! arm is `P_{ζ0} S_sr q`.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, Zip};

use super::ConicGeometry;
use crate::wavefield::{fft, transfer_array, ComplexField, Resampler, ShiftVector};
use crate::{HoloError, Result, C64};

/// Per-plane operator parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneSpec {
    /// Outer propagation distance (`ζ_j/mt_j²` in the probe-aware model).
    pub distance: f64,
    /// Relative magnification `mt_j`; the sample is resampled by `M_{1/mt}`.
    pub mt: f64,
    /// Probe propagation distance `ω_j`.
    pub probe_distance: f64,
}

#[derive(Clone, Debug)]
struct PlaneOp {
    spec: PlaneSpec,
    transfer: Array2<C64>,
    probe_transfer: Option<Array2<C64>>,
    resampler: Option<Resampler>,
}

/// Cached operator set for one grid and geometry.
#[derive(Clone, Debug)]
pub struct HoloModel {
    n: usize,
    pixel_size: f64,
    wavelength: f64,
    planes: Vec<PlaneOp>,
    reference_distance: f64,
    reference_transfer: Array2<C64>,
}

impl HoloModel {
    /// Probe-aware model of the conic geometry on an `n²` grid of the given
    /// object-plane pixel size.
    pub fn new(geometry: &ConicGeometry, n: usize, pixel_size: f64) -> Result<Self> {
        let planes = (0..geometry.n_planes())
            .map(|j| PlaneSpec {
                distance: geometry.scaled_distance(j),
                mt: geometry.mt()[j],
                probe_distance: geometry.omega()[j],
            })
            .collect();
        Self::from_planes(n, pixel_size, geometry.wavelength(), planes, geometry.zeta()[0])
    }

    /// Conventional no-probe model `|P_{ζ_j} ψ|²` on data already brought to
    /// the common object grid.
    pub fn conventional(geometry: &ConicGeometry, n: usize, pixel_size: f64) -> Result<Self> {
        let planes = geometry
            .zeta()
            .iter()
            .map(|&z| PlaneSpec {
                distance: z,
                mt: 1.0,
                probe_distance: 0.0,
            })
            .collect();
        Self::from_planes(n, pixel_size, geometry.wavelength(), planes, geometry.zeta()[0])
    }

    pub fn from_planes(
        n: usize,
        pixel_size: f64,
        wavelength: f64,
        planes: Vec<PlaneSpec>,
        reference_distance: f64,
    ) -> Result<Self> {
        crate::wavefield::check_grid(n, n)?;
        if !(pixel_size > 0.0 && wavelength > 0.0) {
            return Err(HoloError::invalid("pixel size and wavelength must be positive"));
        }
        let planes = planes
            .into_iter()
            .map(|spec| {
                if !(spec.mt > 0.0) {
                    return Err(HoloError::invalid(format!("relative magnification {} must be positive", spec.mt)));
                }
                Ok(PlaneOp {
                    transfer: transfer_array(n, pixel_size, spec.distance, wavelength),
                    probe_transfer: (spec.probe_distance != 0.0)
                        .then(|| transfer_array(n, pixel_size, spec.probe_distance, wavelength)),
                    resampler: (spec.mt != 1.0).then(|| Resampler::with_ratio(n, n, spec.mt)),
                    spec,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n,
            pixel_size,
            wavelength,
            planes,
            reference_distance,
            reference_transfer: transfer_array(n, pixel_size, reference_distance, wavelength),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }
    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }
    pub fn n_planes(&self) -> usize {
        self.planes.len()
    }
    pub fn plane(&self, j: usize) -> PlaneSpec {
        self.planes[j].spec
    }
    pub fn reference_distance(&self) -> f64 {
        self.reference_distance
    }

    /// `P_ω S_sp q`.
    pub fn probe_wave(&self, q: &Array2<C64>, j: usize, sp: ShiftVector) -> Array2<C64> {
        let p = &self.planes[j];
        spectral(q, p.probe_transfer.as_ref(), sp, false)
    }

    /// Adjoint of [`probe_wave`](Self::probe_wave).
    pub fn probe_wave_adjoint(&self, v: &Array2<C64>, j: usize, sp: ShiftVector) -> Array2<C64> {
        let p = &self.planes[j];
        spectral(v, p.probe_transfer.as_ref(), sp, true)
    }

    /// `M_{1/mt} S_ss ψ`.
    pub fn object_wave(&self, psi: &Array2<C64>, j: usize, ss: ShiftVector) -> Array2<C64> {
        let shifted = spectral(psi, None, ss, false);
        match &self.planes[j].resampler {
            Some(r) => r.apply(&shifted),
            None => shifted,
        }
    }

    /// Adjoint of [`object_wave`](Self::object_wave).
    pub fn object_wave_adjoint(&self, v: &Array2<C64>, j: usize, ss: ShiftVector) -> Array2<C64> {
        let back = match &self.planes[j].resampler {
            Some(r) => r.adjoint(v),
            None => v.clone(),
        };
        spectral(&back, None, ss, true)
    }

    /// Outer propagation `P_{ζ/mt²}` of plane `j`, in place.
    pub fn propagate_plane(&self, a: &mut Array2<C64>, j: usize) {
        multiply_spectrum(a, &self.planes[j].transfer, false);
    }

    pub fn propagate_plane_adjoint(&self, a: &mut Array2<C64>, j: usize) {
        multiply_spectrum(a, &self.planes[j].transfer, true);
    }

    /// `L(ψ)`, equivalently `Q(q)`.
    pub fn forward(&self, psi: &Array2<C64>, q: &Array2<C64>, j: usize, ss: ShiftVector, sp: ShiftVector) -> Array2<C64> {
        let a = self.probe_wave(q, j, sp);
        let b = self.object_wave(psi, j, ss);
        self.exit_to_detector(&a, &b, j)
    }

    /// `P(a·b)` for precomputed probe and object waves.
    pub fn exit_to_detector(&self, a: &Array2<C64>, b: &Array2<C64>, j: usize) -> Array2<C64> {
        let mut u = a * b;
        self.propagate_plane(&mut u, j);
        u
    }

    /// `L*(d)` for fixed probe `q`.
    pub fn adjoint_psi(&self, d: &Array2<C64>, q: &Array2<C64>, j: usize, ss: ShiftVector, sp: ShiftVector) -> Array2<C64> {
        let a = self.probe_wave(q, j, sp);
        let mut v = d.clone();
        self.propagate_plane_adjoint(&mut v, j);
        Zip::from(&mut v).and(&a).for_each(|x, &p| *x *= p.conj());
        self.object_wave_adjoint(&v, j, ss)
    }

    /// `Q*(d)` for fixed object `ψ`.
    pub fn adjoint_q(&self, d: &Array2<C64>, psi: &Array2<C64>, j: usize, ss: ShiftVector, sp: ShiftVector) -> Array2<C64> {
        let b = self.object_wave(psi, j, ss);
        let mut v = d.clone();
        self.propagate_plane_adjoint(&mut v, j);
        Zip::from(&mut v).and(&b).for_each(|x, &o| *x *= o.conj());
        self.probe_wave_adjoint(&v, j, sp)
    }

    /// Reference arm `P_{ζ0} S_sr q`.
    pub fn reference_forward(&self, q: &Array2<C64>, sr: ShiftVector) -> Array2<C64> {
        spectral(q, Some(&self.reference_transfer), sr, false)
    }

    pub fn reference_adjoint(&self, d: &Array2<C64>, sr: ShiftVector) -> Array2<C64> {
        spectral(d, Some(&self.reference_transfer), sr, true)
    }

    pub(crate) fn check_field(&self, f: &ComplexField, what: &str) -> Result<()> {
        if f.n() != self.n {
            return Err(HoloError::ShapeMismatch {
                expected: vec![self.n, self.n],
                found: vec![f.n(), f.n()],
            });
        }
        if ((f.pixel_size() - self.pixel_size) / self.pixel_size).abs() > 1e-9 {
            return Err(HoloError::invalid(format!(
                "{what} pixel size {} does not match model grid {}",
                f.pixel_size(),
                self.pixel_size
            )));
        }
        Ok(())
    }
}

fn shift_factors(n: usize, s: f64) -> Array1<C64> {
    let f = fft::fftfreq(n, 1.0);
    f.iter().map(|&fx| C64::from_polar(1.0, -2.0 * PI * fx * s)).collect()
}

fn multiply_spectrum(a: &mut Array2<C64>, h: &Array2<C64>, conj: bool) {
    fft::fft2_inplace(a);
    if conj {
        Zip::from(&mut *a).and(h).for_each(|x, &m| *x *= m.conj());
    } else {
        Zip::from(&mut *a).and(h).for_each(|x, &m| *x *= m);
    }
    fft::ifft2_inplace(a);
}

/// Fourier multiplier made of an optional transfer function and a shift ramp.
fn spectral(a: &Array2<C64>, transfer: Option<&Array2<C64>>, s: ShiftVector, conj: bool) -> Array2<C64> {
    let mut out = a.as_standard_layout().to_owned();
    if transfer.is_none() && s.is_zero() {
        return out;
    }
    let n = out.nrows();
    fft::fft2_inplace(&mut out);
    if !s.is_zero() {
        let rx = shift_factors(n, s.sx);
        let ry = shift_factors(n, s.sy);
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let r = ry[i] * rx[j];
                *v *= if conj { r.conj() } else { r };
            }
        }
    }
    if let Some(h) = transfer {
        if conj {
            Zip::from(&mut out).and(h).for_each(|x, &m| *x *= m.conj());
        } else {
            Zip::from(&mut out).and(h).for_each(|x, &m| *x *= m);
        }
    }
    fft::ifft2_inplace(&mut out);
    out
}
