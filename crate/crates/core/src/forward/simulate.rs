use rayon::prelude::*;

use super::{ConicGeometry, Frame, HoloModel, ProjectionDataset, ScanShifts};
use crate::phantom::{poisson_frame, NoiseSpec};
use crate::wavefield::{ComplexField, ShiftVector};
use crate::{HoloError, Result};

/// Noise-free object-frame intensities `|L_{k,j} ψ_k|²` and the reference
/// `|P_{ζ0} S_{s_r} q|²`.
pub fn simulate_frames(
    model: &HoloModel,
    psi: &[ComplexField],
    q: &ComplexField,
    shifts: &ScanShifts,
) -> Result<(Vec<Vec<Frame>>, Frame)> {
    model.check_field(q, "probe")?;
    for p in psi {
        model.check_field(p, "psi")?;
    }
    shifts.validate(psi.len(), model.n_planes(), model.n())?;
    let frames = psi
        .par_iter()
        .enumerate()
        .map(|(k, p)| {
            (0..model.n_planes())
                .map(|j| {
                    let u = model.forward(p.data(), q.data(), j, shifts.sample[k][j], shifts.probe[k][j]);
                    u.mapv(|v| v.norm_sqr())
                })
                .collect()
        })
        .collect();
    let sr = shifts.reference.as_ref().map_or(ShiftVector::ZERO, |r| r[0]);
    let reference = model.reference_forward(q.data(), sr).mapv(|v| v.norm_sqr());
    Ok((frames, reference))
}

/// Simulate a detector-frame scan of the transmittance stack `psi` (one
/// field per angle) illuminated by the probe `q`.
///
/// `q` and `psi` live on the object-plane grid; the detector pixel is
/// `m0` times larger and frames carry the `1/m0²` intensity factor. Frame
/// `(k, j)` draws its noise from RNG stream `k·N_z + j`, the reference from
/// stream `N_θ·N_z`, so results do not depend on the thread count.
pub fn simulate_dataset(
    psi: &[ComplexField],
    q: &ComplexField,
    geometry: &ConicGeometry,
    angles: &[f64],
    shifts: &ScanShifts,
    noise: &NoiseSpec,
) -> Result<ProjectionDataset> {
    if psi.len() != angles.len() {
        return Err(HoloError::invalid(format!(
            "{} transmittances for {} angles",
            psi.len(),
            angles.len()
        )));
    }
    noise.validate()?;
    let model = HoloModel::new(geometry, q.n(), q.pixel_size())?;
    let (clean, reference) = simulate_frames(&model, psi, q, shifts)?;
    let m0 = geometry.m0();
    let inv = 1.0 / (m0 * m0);
    let nz = geometry.n_planes();
    let to_detector = |f: Frame, stream: u64| -> Result<Frame> {
        let d = f * inv;
        if noise.enabled {
            poisson_frame(&d, noise, stream, noise.photons * m0 * m0)
        } else {
            Ok(d)
        }
    };
    let frames = clean
        .into_par_iter()
        .enumerate()
        .map(|(k, row)| {
            row.into_iter()
                .enumerate()
                .map(|(j, f)| to_detector(f, (k * nz + j) as u64))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let reference = to_detector(reference, (angles.len() * nz) as u64)?;
    let ds = ProjectionDataset {
        frames,
        reference,
        angles: angles.to_vec(),
        shifts: shifts.clone(),
        geometry: geometry.clone(),
        detector_pixel: q.pixel_size() * m0,
    };
    ds.validate()?;
    Ok(ds)
}
