use ndarray::Array2;

use super::{rescale_data, ConicGeometry};
use crate::wavefield::ShiftVector;
use crate::{HoloError, Result};

/// Real intensity frame.
pub type Frame = Array2<f64>;

/// Per-frame alignment shifts of a scan.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanShifts {
    /// `[k][j]` sample shifts.
    pub sample: Vec<Vec<ShiftVector>>,
    /// `[k][j]` probe shifts.
    pub probe: Vec<Vec<ShiftVector>>,
    /// Optional per-plane reference shifts; when present the reference arm
    /// contributes one term per plane.
    pub reference: Option<Vec<ShiftVector>>,
}

impl ScanShifts {
    pub fn zeros(n_angles: usize, n_planes: usize) -> Self {
        Self {
            sample: vec![vec![ShiftVector::ZERO; n_planes]; n_angles],
            probe: vec![vec![ShiftVector::ZERO; n_planes]; n_angles],
            reference: None,
        }
    }

    pub fn select(&self, angles: &[usize]) -> Self {
        Self {
            sample: angles.iter().map(|&k| self.sample[k].clone()).collect(),
            probe: angles.iter().map(|&k| self.probe[k].clone()).collect(),
            reference: self.reference.clone(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let scale = |v: &Vec<Vec<ShiftVector>>| v.iter().map(|r| r.iter().map(|s| s.scaled(factor)).collect()).collect();
        Self {
            sample: scale(&self.sample),
            probe: scale(&self.probe),
            reference: self.reference.as_ref().map(|r| r.iter().map(|s| s.scaled(factor)).collect()),
        }
    }

    pub(crate) fn validate(&self, n_angles: usize, n_planes: usize, n: usize) -> Result<()> {
        for (name, v) in [("sample", &self.sample), ("probe", &self.probe)] {
            if v.len() != n_angles || v.iter().any(|r| r.len() != n_planes) {
                return Err(HoloError::invalid(format!("{name} shifts must be {n_angles}×{n_planes}")));
            }
            for s in v.iter().flatten() {
                s.check_for(n)?;
            }
        }
        if let Some(r) = &self.reference {
            if r.len() != n_planes {
                return Err(HoloError::invalid(format!("reference shifts must have {n_planes} entries")));
            }
            for s in r {
                s.check_for(n)?;
            }
        }
        Ok(())
    }
}

/// Measured (or simulated) holotomography scan in the detector frame.
///
/// Detector frames follow the conic model with the `1/m0` magnification
/// factor applied, so `m0²·M_{1/m0}` (see [`rescale_data`]) brings them back
/// to object-plane intensity units.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionDataset {
    /// `[k][j]` detector intensities.
    pub frames: Vec<Vec<Frame>>,
    /// Reference (flat-field) intensity without the sample.
    pub reference: Frame,
    /// Rotation angles in radians.
    pub angles: Vec<f64>,
    pub shifts: ScanShifts,
    pub geometry: ConicGeometry,
    /// Detector pixel size in meters.
    pub detector_pixel: f64,
}

impl ProjectionDataset {
    pub fn n(&self) -> usize {
        self.reference.nrows()
    }
    pub fn n_angles(&self) -> usize {
        self.frames.len()
    }
    pub fn n_planes(&self) -> usize {
        self.geometry.n_planes()
    }
    /// Pixel size of the object-plane grid, `detector_pixel / m0`.
    pub fn object_pixel(&self) -> f64 {
        self.detector_pixel / self.geometry.m0()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        crate::wavefield::check_grid(self.reference.nrows(), self.reference.ncols())?;
        if self.angles.len() != self.frames.len() {
            return Err(HoloError::invalid("one angle per projection is required"));
        }
        for row in &self.frames {
            if row.len() != self.n_planes() {
                return Err(HoloError::invalid("every projection needs one frame per plane"));
            }
            for f in row {
                if f.dim() != (n, n) {
                    return Err(HoloError::ShapeMismatch {
                        expected: vec![n, n],
                        found: f.shape().to_vec(),
                    });
                }
                if f.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return Err(HoloError::invalid("intensities must be finite and non-negative"));
                }
            }
        }
        if self.reference.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(HoloError::invalid("reference intensities must be finite and non-negative"));
        }
        if !(self.detector_pixel > 0.0) {
            return Err(HoloError::invalid("detector pixel must be positive"));
        }
        self.shifts.validate(self.n_angles(), self.n_planes(), n)
    }

    /// Apply `m0²·M_{1/m0}` to every frame, onto the object grid of pixel
    /// size `detector_pixel/m0`.
    pub fn to_object_frame(&self) -> Result<ObjectData> {
        self.validate()?;
        let m0 = self.geometry.m0();
        Ok(ObjectData {
            frames: self
                .frames
                .iter()
                .map(|row| row.iter().map(|f| rescale_data(f, m0)).collect())
                .collect(),
            reference: rescale_data(&self.reference, m0),
            angles: self.angles.clone(),
            shifts: self.shifts.clone(),
            geometry: self.geometry.clone(),
            pixel_size: self.object_pixel(),
        })
    }
}

/// Scan rescaled onto the object-plane grid (`d̃` and `d̃^r`).
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectData {
    pub frames: Vec<Vec<Frame>>,
    pub reference: Frame,
    pub angles: Vec<f64>,
    pub shifts: ScanShifts,
    pub geometry: ConicGeometry,
    pub pixel_size: f64,
}

impl ObjectData {
    pub fn n(&self) -> usize {
        self.reference.nrows()
    }
    pub fn n_angles(&self) -> usize {
        self.frames.len()
    }
    pub fn n_planes(&self) -> usize {
        self.geometry.n_planes()
    }

    /// Keep only the listed projections (angular chunking).
    pub fn select_angles(&self, angles: &[usize]) -> ObjectData {
        ObjectData {
            frames: angles.iter().map(|&k| self.frames[k].clone()).collect(),
            reference: self.reference.clone(),
            angles: angles.iter().map(|&k| self.angles[k]).collect(),
            shifts: self.shifts.select(angles),
            geometry: self.geometry.clone(),
            pixel_size: self.pixel_size,
        }
    }

    /// Block-average every intensity frame by `factor`; pixel size and
    /// shifts scale accordingly.
    pub fn binned(&self, factor: usize) -> Result<ObjectData> {
        if factor == 1 {
            return Ok(self.clone());
        }
        let bin = |f: &Frame| crate::solver::bin(f, factor);
        Ok(ObjectData {
            frames: self
                .frames
                .iter()
                .map(|row| row.iter().map(bin).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?,
            reference: bin(&self.reference)?,
            angles: self.angles.clone(),
            shifts: self.shifts.scaled(1.0 / factor as f64),
            geometry: self.geometry.clone(),
            pixel_size: self.pixel_size * factor as f64,
        })
    }
}
