use crate::{HoloError, Result};

/// Conic-beam acquisition geometry: the focal spot sits at the origin, the
/// detector at `z_total`, and the sample is placed at `z1[j]` for each plane.
///
/// Derived per plane:
/// `z2 = Z - z1`, `m = Z/z1`, `zeta = z1·z2/Z`, `mt = z1/z1[0]`,
/// `omega = (z1 - z1[0])/mt`, and the common `m0 = Z/z1[0]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConicGeometry {
    z_total: f64,
    z1: Vec<f64>,
    wavelength: f64,
    z2: Vec<f64>,
    m: Vec<f64>,
    zeta: Vec<f64>,
    mt: Vec<f64>,
    omega: Vec<f64>,
    m0: f64,
}

impl ConicGeometry {
    pub fn z_total(&self) -> f64 {
        self.z_total
    }
    pub fn z1(&self) -> &[f64] {
        &self.z1
    }
    pub fn z2(&self) -> &[f64] {
        &self.z2
    }
    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }
    /// Geometric magnification of each plane.
    pub fn m(&self) -> &[f64] {
        &self.m
    }
    /// Effective (Fresnel-scaled) propagation distances.
    pub fn zeta(&self) -> &[f64] {
        &self.zeta
    }
    /// Magnification relative to plane 0.
    pub fn mt(&self) -> &[f64] {
        &self.mt
    }
    /// Probe propagation distance from plane 0 in plane-0 scaled units.
    pub fn omega(&self) -> &[f64] {
        &self.omega
    }
    pub fn m0(&self) -> f64 {
        self.m0
    }
    pub fn n_planes(&self) -> usize {
        self.z1.len()
    }

    /// Distance used by the outer propagator of plane `j`: `zeta_j / mt_j²`.
    pub fn scaled_distance(&self, j: usize) -> f64 {
        self.zeta[j] / (self.mt[j] * self.mt[j])
    }
}

/// Build a [`ConicGeometry`] from the focal-spot-to-detector distance, the
/// ascending focal-spot-to-sample distances and the wavelength.
pub fn derive_geometry(z_total: f64, z1: &[f64], wavelength: f64) -> Result<ConicGeometry> {
    if z1.is_empty() {
        return Err(HoloError::invalid("at least one sample plane is required"));
    }
    if !(wavelength.is_finite() && wavelength > 0.0) {
        return Err(HoloError::invalid(format!("wavelength must be positive, got {wavelength}")));
    }
    if !(z1[0].is_finite() && z1[0] > 0.0) {
        return Err(HoloError::invalid(format!("z1[0] must be positive, got {}", z1[0])));
    }
    for w in z1.windows(2) {
        if !(w[1] > w[0]) {
            return Err(HoloError::invalid(format!(
                "sample distances must be strictly ascending ({} then {})",
                w[0], w[1]
            )));
        }
    }
    let last = *z1.last().unwrap();
    if !(z_total.is_finite() && z_total > last) {
        return Err(HoloError::invalid(format!(
            "detector distance {z_total} must exceed every sample distance (max {last})"
        )));
    }
    let z10 = z1[0];
    let z2: Vec<f64> = z1.iter().map(|&a| z_total - a).collect();
    let m: Vec<f64> = z1.iter().map(|&a| z_total / a).collect();
    let zeta: Vec<f64> = z1.iter().zip(&z2).map(|(&a, &b)| a * b / z_total).collect();
    let mt: Vec<f64> = z1.iter().enumerate().map(|(j, &a)| if j == 0 { 1.0 } else { a / z10 }).collect();
    let omega: Vec<f64> = z1
        .iter()
        .zip(&mt)
        .enumerate()
        .map(|(j, (&a, &t))| if j == 0 { 0.0 } else { (a - z10) / t })
        .collect();
    Ok(ConicGeometry {
        z_total,
        z1: z1.to_vec(),
        wavelength,
        z2,
        m,
        zeta,
        mt,
        omega,
        m0: z_total / z10,
    })
}
