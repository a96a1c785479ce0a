use std::f64::consts::PI;

use ndarray::Array2;

use super::{run_cg, History, IterRecord, Problem, SolverConfig, SolverState};
use crate::forward::{HoloModel, ObjectData};
use crate::wavefield::{fft, ComplexField, Sample, ShiftVector};
use crate::{HoloError, Result, C64};

/// `factor × factor` block mean.
pub fn bin<T: Sample>(a: &Array2<T>, factor: usize) -> Result<Array2<T>> {
    let (r, c) = a.dim();
    if factor == 0 || r % factor != 0 || c % factor != 0 {
        return Err(HoloError::invalid(format!("cannot bin a {r}×{c} grid by {factor}")));
    }
    if factor == 1 {
        return Ok(a.clone());
    }
    let w = 1.0 / (factor * factor) as f64;
    let mut out = Array2::<T>::default((r / factor, c / factor));
    for ((i, j), v) in a.indexed_iter() {
        out[[i / factor, j / factor]] += *v * w;
    }
    Ok(out)
}

pub fn bin_field(f: &ComplexField, factor: usize) -> Result<ComplexField> {
    ComplexField::new(bin(f.data(), factor)?, f.pixel_size() * factor as f64, f.wavelength())
}

/// Fourier interpolation onto a grid twice as dense.
///
/// The spectrum is zero-padded and divided by the response of the 2×2 block
/// mean, so `bin(upsample2(x), 2) == x` up to rounding for every `x`.
pub fn upsample2(a: &Array2<C64>) -> Result<Array2<C64>> {
    let n = a.nrows();
    crate::wavefield::check_grid(n, a.ncols())?;
    let mut spec = a.clone();
    fft::fft2_inplace(&mut spec);
    let m = 2 * n;
    let freq = |i: usize| -> (i64, usize) {
        let k = if i < n / 2 { i as i64 } else { i as i64 - n as i64 };
        let fine = if k >= 0 { k as usize } else { (m as i64 + k) as usize };
        (k, fine)
    };
    let gain = |k: i64| -> C64 { C64::new(2.0, 0.0) / (C64::new(1.0, 0.0) + C64::from_polar(1.0, PI * k as f64 / n as f64)) };
    let mut big = Array2::<C64>::zeros((m, m));
    for i in 0..n {
        let (ki, fi) = freq(i);
        for j in 0..n {
            let (kj, fj) = freq(j);
            big[[fi, fj]] = spec[[i, j]] * 4.0 * gain(ki) * gain(kj);
        }
    }
    fft::ifft2_inplace(&mut big);
    Ok(big)
}

pub fn upsample2_field(f: &ComplexField) -> Result<ComplexField> {
    ComplexField::new(upsample2(f.data())?, f.pixel_size() / 2.0, f.wavelength())
}

/// Probe estimate `S_{-s_r} P_{-ζ0} √d̃^r`: the reference amplitude with zero
/// phase, propagated back to the first sample plane.
pub fn init_probe(data: &ObjectData) -> Result<ComplexField> {
    let model = HoloModel::new(&data.geometry, data.n(), data.pixel_size)?;
    let sr = data.shifts.reference.as_ref().map_or(ShiftVector::ZERO, |r| r[0]);
    let amp = data.reference.mapv(|v| C64::new(v.max(0.0).sqrt(), 0.0));
    ComplexField::new(model.reference_adjoint(&amp, sr), data.pixel_size, data.geometry.wavelength())
}

/// Coarse-to-fine joint solve.
///
/// For each `(bin, iterations)` level the data are block-averaged by `bin`,
/// the current object and probe are brought to that grid (block mean for
/// the first level, [`upsample2`] between levels) and [`run_cg`] runs for the
/// given iterations. Every level's history starts with a record at the
/// level's initial point; `History::level_starts` marks them.
pub fn multiscale_solve(
    data: &ObjectData,
    init: SolverState,
    config: &SolverConfig,
    observer: &mut dyn FnMut(&IterRecord),
) -> Result<SolverState> {
    config.validate()?;
    let n = data.n();
    let first = config.schedule[0].0;
    if n % first != 0 || n / first < 2 {
        return Err(HoloError::invalid(format!("grid {n} cannot be binned by {first}")));
    }
    let mut psi: Vec<ComplexField> = init.psi.iter().map(|p| bin_field(p, first)).collect::<Result<_>>()?;
    let mut q = bin_field(&init.q, first)?;
    let mut history = History::default();
    let mut iter = init.iter;
    let mut prev = first;
    let mut state = None;
    for &(factor, iterations) in &config.schedule {
        while prev > factor {
            psi = psi.iter().map(upsample2_field).collect::<Result<_>>()?;
            q = upsample2_field(&q)?;
            prev /= 2;
        }
        let level = data.binned(factor)?;
        let mut problem = Problem::new(&level, config.mode)?;
        problem.set_probe_subset(config.probe_subset)?;
        let mut s = SolverState::new(psi, q)?;
        s.iter = iter;
        let s = run_cg(&problem, s, config, iterations, observer)?;
        history.level_starts.push(history.records.len());
        history.records.extend(s.history.records.iter().copied());
        iter = s.iter;
        psi = s.psi.clone();
        q = s.q.clone();
        state = Some(s);
    }
    let mut state = state.expect("schedule is not empty");
    state.history = history;
    Ok(state)
}
