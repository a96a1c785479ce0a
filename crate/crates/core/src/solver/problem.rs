//! Objective and gradients of the joint object/probe problem.

use std::sync::Arc;

use ndarray::{Array2, Zip};
use rayon::prelude::*;

use super::Mode;
use crate::forward::{Frame, HoloModel, ObjectData, ScanShifts};
use crate::wavefield::ShiftVector;
use crate::{HoloError, Result, C64};

/// Relative floor of `|u|` in gradient denominators.
const MODULUS_GUARD: f64 = 1e-12;

/// Data, model and penalty of one reconstruction.
///
/// The objective is `Σ_{k,j} ‖|L_{k,j}ψ_k|^τ − d̃_{k,j}^{τ/2}‖²` plus the
/// reference-arm term `Σ_r ‖|P_{ζ0}S_{s_r}q|^τ − (d̃^r)^{τ/2}‖²`.
#[derive(Clone, Debug)]
pub struct Problem {
    model: HoloModel,
    targets: Vec<Vec<Frame>>,
    reference: Option<Frame>,
    reference_shifts: Vec<ShiftVector>,
    shifts: ScanShifts,
    mode: Mode,
    probe_angles: Vec<usize>,
    probe_weight: f64,
}

/// Cached forward evaluation at one point.
pub(crate) struct Eval {
    probe: Vec<Vec<Arc<Array2<C64>>>>,
    object: Vec<Vec<Array2<C64>>>,
    u: Vec<Vec<Array2<C64>>>,
    refs: Vec<Array2<C64>>,
    pub(crate) objective: f64,
}

/// `u(γ) = u0 + γ u1 + γ² u2` for every frame along a search direction.
pub(crate) struct Expansion {
    u1: Vec<Vec<Array2<C64>>>,
    u2: Vec<Vec<Option<Array2<C64>>>>,
    refs: Vec<Array2<C64>>,
}

impl Problem {
    /// Probe-aware problem on the object-plane grid of `data`.
    pub fn new(data: &ObjectData, mode: Mode) -> Result<Self> {
        let model = HoloModel::new(&data.geometry, data.n(), data.pixel_size)?;
        Self::with_model(model, &data.frames, Some(&data.reference), &data.shifts, mode)
    }

    /// Arbitrary model; `reference = None` drops the reference-arm term.
    pub fn with_model(
        model: HoloModel,
        frames: &[Vec<Frame>],
        reference: Option<&Frame>,
        shifts: &ScanShifts,
        mode: Mode,
    ) -> Result<Self> {
        let n = model.n();
        shifts.validate(frames.len(), model.n_planes(), n)?;
        let target = |f: &Frame| -> Result<Frame> {
            if f.dim() != (n, n) {
                return Err(HoloError::ShapeMismatch {
                    expected: vec![n, n],
                    found: f.shape().to_vec(),
                });
            }
            if f.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(HoloError::invalid("intensities must be finite and non-negative"));
            }
            Ok(match mode {
                Mode::Amplitude => f.mapv(f64::sqrt),
                Mode::Intensity => f.clone(),
            })
        };
        let targets = frames
            .iter()
            .map(|row| {
                if row.len() != model.n_planes() {
                    return Err(HoloError::invalid("every projection needs one frame per plane"));
                }
                row.iter().map(target).collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let reference = reference.map(target).transpose()?;
        let reference_shifts = shifts.reference.clone().unwrap_or_else(|| vec![ShiftVector::ZERO]);
        let n_angles = targets.len();
        Ok(Self {
            model,
            targets,
            reference,
            reference_shifts,
            shifts: shifts.clone(),
            mode,
            probe_angles: (0..n_angles).collect(),
            probe_weight: 1.0,
        })
    }

    pub fn model(&self) -> &HoloModel {
        &self.model
    }
    pub fn mode(&self) -> Mode {
        self.mode
    }
    pub fn n_angles(&self) -> usize {
        self.targets.len()
    }

    /// Restrict probe-gradient sums to `count` evenly spaced angles, weighted
    /// by `N_θ/count`. `None` uses every angle.
    pub fn set_probe_subset(&mut self, count: Option<usize>) -> Result<()> {
        let n = self.n_angles();
        let count = count.unwrap_or(n);
        if count == 0 || count > n {
            return Err(HoloError::invalid(format!("probe subset {count} not in 1..={n}")));
        }
        self.set_probe_angles((0..count).map(|i| i * n / count).collect())
    }

    /// Explicit list of angles contributing to the probe gradient.
    pub fn set_probe_angles(&mut self, angles: Vec<usize>) -> Result<()> {
        let n = self.n_angles();
        if angles.is_empty() || angles.iter().any(|&k| k >= n) {
            return Err(HoloError::invalid("probe angles out of range"));
        }
        self.probe_weight = n as f64 / angles.len() as f64;
        self.probe_angles = angles;
        Ok(())
    }

    fn check_point(&self, psi: &[Array2<C64>], q: &Array2<C64>) -> Result<()> {
        let n = self.model.n();
        if psi.len() != self.n_angles() {
            return Err(HoloError::invalid(format!(
                "{} transmittances for {} projections",
                psi.len(),
                self.n_angles()
            )));
        }
        for a in psi.iter().chain(std::iter::once(q)) {
            if a.dim() != (n, n) {
                return Err(HoloError::ShapeMismatch {
                    expected: vec![n, n],
                    found: a.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    fn probe_waves(&self, q: &Array2<C64>) -> Vec<Vec<Arc<Array2<C64>>>> {
        let nz = self.model.n_planes();
        let shared: Vec<Option<Arc<Array2<C64>>>> = (0..nz)
            .map(|j| {
                self.shifts
                    .probe
                    .iter()
                    .any(|r| r[j].is_zero())
                    .then(|| Arc::new(self.model.probe_wave(q, j, ShiftVector::ZERO)))
            })
            .collect();
        self.shifts
            .probe
            .par_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(j, &sp)| match (&shared[j], sp.is_zero()) {
                        (Some(a), true) => a.clone(),
                        _ => Arc::new(self.model.probe_wave(q, j, sp)),
                    })
                    .collect()
            })
            .collect()
    }

    pub(crate) fn evaluate(&self, psi: &[Array2<C64>], q: &Array2<C64>) -> Result<Eval> {
        self.check_point(psi, q)?;
        let probe = self.probe_waves(q);
        let per_k: Vec<(Vec<Array2<C64>>, Vec<Array2<C64>>, f64)> = (0..self.n_angles())
            .into_par_iter()
            .map(|k| {
                let mut objs = Vec::new();
                let mut us = Vec::new();
                let mut cost = 0.0;
                for (j, a) in probe[k].iter().enumerate() {
                    let b = self.model.object_wave(&psi[k], j, self.shifts.sample[k][j]);
                    let u = self.model.exit_to_detector(a, &b, j);
                    cost += frame_cost(self.mode, &u, &self.targets[k][j]);
                    objs.push(b);
                    us.push(u);
                }
                (objs, us, cost)
            })
            .collect();
        let mut objective = 0.0;
        let mut object = Vec::with_capacity(per_k.len());
        let mut u = Vec::with_capacity(per_k.len());
        for (o, us, c) in per_k {
            objective += c;
            object.push(o);
            u.push(us);
        }
        let mut refs = Vec::new();
        if let Some(target) = &self.reference {
            for &sr in &self.reference_shifts {
                let r = self.model.reference_forward(q, sr);
                objective += frame_cost(self.mode, &r, target);
                refs.push(r);
            }
        }
        if !objective.is_finite() {
            return Err(HoloError::NonFinite("objective".into()));
        }
        Ok(Eval {
            probe,
            object,
            u,
            refs,
            objective,
        })
    }

    /// Gradients `(∇_{ψ_k} F for all k, ∇_q F)`; a block that is not
    /// requested comes back as zeros.
    pub(crate) fn gradients(&self, ev: &Eval, want_psi: bool, want_q: bool) -> (Vec<Array2<C64>>, Array2<C64>) {
        let n = self.model.n();
        let in_subset = {
            let mut m = vec![false; self.n_angles()];
            for &k in &self.probe_angles {
                m[k] = true;
            }
            m
        };
        let per_k: Vec<(Array2<C64>, Option<Array2<C64>>)> = (0..self.n_angles())
            .into_par_iter()
            .map(|k| {
                let mut gp = Array2::zeros((n, n));
                let want_qk = want_q && in_subset[k];
                let mut gq = want_qk.then(|| Array2::zeros((n, n)));
                if !want_psi && !want_qk {
                    return (gp, gq);
                }
                for j in 0..self.model.n_planes() {
                    let mut v = residual(self.mode, &ev.u[k][j], &self.targets[k][j]);
                    self.model.propagate_plane_adjoint(&mut v, j);
                    if want_psi {
                        let mut t = v.clone();
                        Zip::from(&mut t).and(&*ev.probe[k][j]).for_each(|x, &a| *x *= a.conj());
                        gp += &self.model.object_wave_adjoint(&t, j, self.shifts.sample[k][j]);
                    }
                    if let Some(gq) = gq.as_mut() {
                        Zip::from(&mut v).and(&ev.object[k][j]).for_each(|x, &b| *x *= b.conj());
                        *gq += &self.model.probe_wave_adjoint(&v, j, self.shifts.probe[k][j]);
                    }
                }
                gp.mapv_inplace(|x| x * 2.0);
                (gp, gq)
            })
            .collect();
        let mut gq = Array2::<C64>::zeros((n, n));
        let mut gpsi = Vec::with_capacity(per_k.len());
        for (gp, q) in per_k {
            if let Some(q) = q {
                gq += &q;
            }
            gpsi.push(gp);
        }
        if want_q {
            gq.mapv_inplace(|x| x * (2.0 * self.probe_weight));
            if let Some(target) = &self.reference {
                for (r, &sr) in ev.refs.iter().zip(&self.reference_shifts) {
                    let w = residual(self.mode, r, target);
                    gq.scaled_add(C64::new(2.0, 0.0), &self.model.reference_adjoint(&w, sr));
                }
            }
        }
        (gpsi, gq)
    }

    pub(crate) fn expand(&self, ev: &Eval, eta_psi: &[Array2<C64>], eta_q: Option<&Array2<C64>>) -> Expansion {
        let dprobe = eta_q.map(|e| self.probe_waves(e));
        let per_k: Vec<(Vec<Array2<C64>>, Vec<Option<Array2<C64>>>)> = (0..self.n_angles())
            .into_par_iter()
            .map(|k| {
                let mut u1s = Vec::new();
                let mut u2s = Vec::new();
                for j in 0..self.model.n_planes() {
                    let db = self.model.object_wave(&eta_psi[k], j, self.shifts.sample[k][j]);
                    let a = &*ev.probe[k][j];
                    let mut s = a * &db;
                    let mut u2 = None;
                    if let Some(dp) = &dprobe {
                        let da = &*dp[k][j];
                        Zip::from(&mut s).and(da).and(&ev.object[k][j]).for_each(|x, &p, &b| *x += p * b);
                        let mut t = da * &db;
                        self.model.propagate_plane(&mut t, j);
                        u2 = Some(t);
                    }
                    self.model.propagate_plane(&mut s, j);
                    u1s.push(s);
                    u2s.push(u2);
                }
                (u1s, u2s)
            })
            .collect();
        let (u1, u2) = per_k.into_iter().unzip();
        let refs = match (eta_q, &self.reference) {
            (Some(e), Some(_)) => self
                .reference_shifts
                .iter()
                .map(|&sr| self.model.reference_forward(e, sr))
                .collect(),
            _ => Vec::new(),
        };
        Expansion { u1, u2, refs }
    }

    /// Objective at `x + γη` from a precomputed expansion.
    pub(crate) fn objective_along(&self, ev: &Eval, ex: &Expansion, gamma: f64) -> f64 {
        let per_k: Vec<f64> = (0..self.n_angles())
            .into_par_iter()
            .map(|k| {
                let mut cost = 0.0;
                for j in 0..self.model.n_planes() {
                    let t = &self.targets[k][j];
                    let u0 = &ev.u[k][j];
                    let u1 = &ex.u1[k][j];
                    cost += match &ex.u2[k][j] {
                        Some(u2) => {
                            let mut c = 0.0;
                            Zip::from(u0).and(u1).and(u2).and(t).for_each(|&a, &b, &d, &t| {
                                c += pixel_cost(self.mode, a + (b + d * gamma) * gamma, t)
                            });
                            c
                        }
                        None => {
                            let mut c = 0.0;
                            Zip::from(u0)
                                .and(u1)
                                .and(t)
                                .for_each(|&a, &b, &t| c += pixel_cost(self.mode, a + b * gamma, t));
                            c
                        }
                    };
                }
                cost
            })
            .collect();
        let mut total: f64 = per_k.iter().sum();
        if let Some(target) = &self.reference {
            for (i, r0) in ev.refs.iter().enumerate() {
                let mut c = 0.0;
                match ex.refs.get(i) {
                    Some(r1) => Zip::from(r0)
                        .and(r1)
                        .and(target)
                        .for_each(|&a, &b, &t| c += pixel_cost(self.mode, a + b * gamma, t)),
                    None => Zip::from(r0).and(target).for_each(|&a, &t| c += pixel_cost(self.mode, a, t)),
                }
                total += c;
            }
        }
        total
    }

    pub fn objective(&self, psi: &[Array2<C64>], q: &Array2<C64>) -> Result<f64> {
        Ok(self.evaluate(psi, q)?.objective)
    }

    /// `∇_{ψ_k} F` (twice the conjugate Wirtinger derivative).
    pub fn grad_psi(&self, psi: &[Array2<C64>], q: &Array2<C64>, k: usize) -> Result<Array2<C64>> {
        if k >= self.n_angles() {
            return Err(HoloError::invalid(format!("angle {k} out of range")));
        }
        let ev = self.evaluate(psi, q)?;
        Ok(self.gradients(&ev, true, false).0.swap_remove(k))
    }

    /// `∇_q F` over the probe subset plus the reference arm.
    pub fn grad_q(&self, psi: &[Array2<C64>], q: &Array2<C64>) -> Result<Array2<C64>> {
        let ev = self.evaluate(psi, q)?;
        Ok(self.gradients(&ev, false, true).1)
    }
}

#[inline]
fn pixel_cost(mode: Mode, u: C64, t: f64) -> f64 {
    match mode {
        Mode::Amplitude => {
            let r = u.norm() - t;
            r * r
        }
        Mode::Intensity => {
            let r = u.norm_sqr() - t;
            r * r
        }
    }
}

fn frame_cost(mode: Mode, u: &Array2<C64>, t: &Frame) -> f64 {
    let mut c = 0.0;
    Zip::from(u).and(t).for_each(|&u, &t| c += pixel_cost(mode, u, t));
    c
}

/// `h'(|u|²)·u`: `u − √d·u/|u|` for amplitudes, `2(|u|² − d)·u` for
/// intensities.
fn residual(mode: Mode, u: &Array2<C64>, t: &Frame) -> Array2<C64> {
    let mut out = u.clone();
    match mode {
        Mode::Amplitude => {
            let peak = u.iter().map(|v| v.norm()).fold(0.0, f64::max);
            let floor = (MODULUS_GUARD * peak).max(f64::MIN_POSITIVE);
            Zip::from(&mut out).and(t).for_each(|x, &a| {
                let m = x.norm().max(floor);
                *x *= 1.0 - a / m;
            });
        }
        Mode::Intensity => {
            Zip::from(&mut out).and(t).for_each(|x, &d| {
                *x *= 2.0 * (x.norm_sqr() - d);
            });
        }
    }
    out
}
