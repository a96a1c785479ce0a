//! End-to-end stages shared by the command-line tool and the acceptance
//! tests: simulation, the probe-retrieval and conventional phase-retrieval
//! pipelines, and tomography of their output.

use ndarray::{s, Array3};

use crate::baseline::{conventional_refine, flat_field, multipaganin, PaganinConfig};
use crate::forward::{derive_geometry, simulate_dataset, ProjectionDataset, ScanShifts};
use crate::phantom::{layered_cube, synth_probe, transmittances, NoiseSpec, ProbeSpec, Volume};
use crate::solver::{init_probe, multiscale_solve, History, Mode, SolverConfig, SolverState};
use crate::tomo::{cg_tomo, log_projection, uniform_angles, RadonOperator};
use crate::wavefield::ComplexField;
use crate::{HoloError, Result, C64};

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomParams {
    pub n: usize,
    pub voxel_size: f64,
    pub layer_deltas: Vec<f64>,
    pub layer_thicknesses: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanParams {
    pub z_total: f64,
    pub z1: Vec<f64>,
    pub wavelength: f64,
    pub n_angles: usize,
    /// `None` illuminates with a flat probe `q ≡ 1`.
    pub probe: Option<ProbeSpec>,
    pub noise: NoiseSpec,
}

/// Ground truth and simulated measurements.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub volume: Volume,
    pub probe: ComplexField,
    pub psi: Vec<ComplexField>,
    pub dataset: ProjectionDataset,
}

/// Layered cube scanned over `n_angles` uniform angles in `[0, π)`. The
/// object-plane pixel equals the voxel size.
pub fn simulate(ph: &PhantomParams, scan: &ScanParams) -> Result<Simulation> {
    let volume = layered_cube(ph.n, ph.voxel_size, &ph.layer_deltas, &ph.layer_thicknesses)?;
    let geometry = derive_geometry(scan.z_total, &scan.z1, scan.wavelength)?;
    if scan.n_angles == 0 {
        return Err(HoloError::invalid("at least one angle is required"));
    }
    let angles = uniform_angles(scan.n_angles);
    let psi = transmittances(&volume, &angles, scan.wavelength)?;
    let probe = match &scan.probe {
        Some(p) => synth_probe(ph.n, ph.voxel_size, scan.wavelength, p)?,
        None => ComplexField::constant(ph.n, C64::new(1.0, 0.0), ph.voxel_size, scan.wavelength)?,
    };
    let shifts = ScanShifts::zeros(scan.n_angles, geometry.n_planes());
    let dataset = simulate_dataset(&psi, &probe, &geometry, &angles, &shifts, &scan.noise)?;
    Ok(Simulation {
        volume,
        probe,
        psi,
        dataset,
    })
}

/// Phase-retrieval output: one transmittance per angle, the recovered
/// probe of every angular chunk and the convergence record of every chunk.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub psi: Vec<ComplexField>,
    pub probes: Vec<ComplexField>,
    pub histories: Vec<History>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProposedParams {
    pub solver: SolverConfig,
    pub paganin: PaganinConfig,
    /// Angles per independently reconstructed chunk; `None` is one chunk.
    pub chunk_size: Option<usize>,
    /// Pixels of the border ring whose mean fixes the global phase.
    pub air_border: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConventionalParams {
    pub paganin: PaganinConfig,
    pub iterations: usize,
    pub mode: Mode,
    pub air_border: usize,
}

/// MultiPaganin estimate of every projection from flat-field corrected data.
pub fn paganin_stack(ds: &ProjectionDataset, cfg: &PaganinConfig) -> Result<Vec<ComplexField>> {
    let ff = flat_field(ds)?;
    ff.frames
        .iter()
        .map(|row| multipaganin(row, &ds.geometry, ds.object_pixel(), cfg))
        .collect()
}

/// Probe-retrieval pipeline: MultiPaganin start, reference back-propagated
/// as the initial probe, joint multiscale CG per angular chunk.
pub fn reconstruct_proposed(ds: &ProjectionDataset, p: &ProposedParams) -> Result<Reconstruction> {
    p.solver.validate()?;
    let data = ds.to_object_frame()?;
    let init_psi = paganin_stack(ds, &p.paganin)?;
    let q0 = init_probe(&data)?;
    let na = data.n_angles();
    let chunk = p.chunk_size.unwrap_or(na).max(1);
    let mut psi = Vec::with_capacity(na);
    let mut probes = Vec::new();
    let mut histories = Vec::new();
    for start in (0..na).step_by(chunk) {
        let idx: Vec<usize> = (start..(start + chunk).min(na)).collect();
        let sub = data.select_angles(&idx);
        let init = SolverState::new(idx.iter().map(|&k| init_psi[k].clone()).collect(), q0.clone())?;
        let state = multiscale_solve(&sub, init, &p.solver, &mut |_| {})?;
        psi.extend(state.psi);
        probes.push(state.q);
        histories.push(state.history);
    }
    normalize_air(&mut psi, p.air_border)?;
    Ok(Reconstruction {
        psi,
        probes,
        histories,
    })
}

/// Conventional pipeline: flat-field division, MultiPaganin, then CG on the
/// probe-free model.
pub fn reconstruct_conventional(ds: &ProjectionDataset, p: &ConventionalParams) -> Result<Reconstruction> {
    let ff = flat_field(ds)?;
    let init = ff
        .frames
        .iter()
        .map(|row| multipaganin(row, &ds.geometry, ds.object_pixel(), &p.paganin))
        .collect::<Result<Vec<_>>>()?;
    let state = conventional_refine(&ff.frames, &init, &ds.geometry, Some(&ds.shifts), p.iterations, p.mode)?;
    let mut psi = state.psi;
    normalize_air(&mut psi, p.air_border)?;
    Ok(Reconstruction {
        psi,
        probes: vec![state.q],
        histories: vec![state.history],
    })
}

/// Divide every transmittance by its mean over a border ring of the given
/// width, which is assumed to be empty (air). This removes the global phase
/// the intensity data cannot determine. Width 0 leaves the stack untouched.
pub fn normalize_air(psi: &mut [ComplexField], border: usize) -> Result<()> {
    if border == 0 {
        return Ok(());
    }
    for f in psi.iter_mut() {
        let n = f.n();
        if 2 * border >= n {
            return Err(HoloError::invalid("air border is wider than the grid"));
        }
        let d = f.data();
        let inner = d.slice(s![border..n - border, border..n - border]).sum();
        let count = (n * n - (n - 2 * border) * (n - 2 * border)) as f64;
        let mean = (d.sum() - inner) / count;
        if mean.norm() == 0.0 {
            continue;
        }
        let data = d / mean;
        *f = f.with_data(data)?;
    }
    Ok(())
}

/// δ volume from transmittances: `δ`-projections `-Re((ν/2πi) log ψ)`
/// inverted by CG tomography.
pub fn delta_volume(psi: &[ComplexField], angles: &[f64], wavelength: f64, iterations: usize) -> Result<Array3<f64>> {
    let first = psi.first().ok_or_else(|| HoloError::invalid("no projections"))?;
    let n = first.n();
    let mut sino = Array3::<f64>::zeros((psi.len(), n, n));
    for (mut dst, f) in sino.outer_iter_mut().zip(psi) {
        let (p, _) = log_projection(f, wavelength);
        dst.assign(&p.mapv(|v| -v.re));
    }
    let op = RadonOperator::new(n, first.pixel_size(), angles)?;
    Ok(cg_tomo(&op, &sino, iterations, None)?.volume)
}
