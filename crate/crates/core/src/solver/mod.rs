//! Joint reconstruction of object transmittances and the probe.
//!
//! [`Problem`] holds data and model and evaluates the objective and its
//! gradients. [`cg_solve`] runs Dai–Yuan conjugate gradients over the product
//! space `(ψ_0, …, ψ_{N_θ−1}, q)` with one search direction per block and a
//! single shared step, and [`multiscale_solve`] wraps it in a coarse-to-fine
//! schedule.

mod cg;
mod history;
mod multiscale;
mod problem;

use ndarray::Array2;

pub use cg::{backtrack, cg_solve, cg_solve_observed, dai_yuan_beta, dai_yuan_direction, run_cg, SearchSpace};
pub use history::{History, IterRecord};
pub use multiscale::{bin, bin_field, init_probe, multiscale_solve, upsample2, upsample2_field};
pub use problem::Problem;

use crate::forward::ObjectData;
use crate::wavefield::ComplexField;
use crate::{HoloError, Result, C64};

/// Penalty exponent `τ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    /// `τ = 1`: fit amplitudes `|Lψ|` to `√d`.
    #[default]
    Amplitude,
    /// `τ = 2`: fit intensities `|Lψ|²` to `d`.
    Intensity,
}

/// Backtracking parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineSearch {
    /// Step tried on the first iteration; later iterations start from twice
    /// the previous accepted step.
    pub initial_gamma: f64,
    pub shrink: f64,
    pub max_halvings: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self {
            initial_gamma: 1.0,
            shrink: 0.5,
            max_halvings: 12,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub mode: Mode,
    /// Iterations of a single-level [`cg_solve`].
    pub max_iter: usize,
    /// `(bin factor, iterations)` per level for [`multiscale_solve`].
    pub schedule: Vec<(usize, usize)>,
    /// Number of evenly spaced angles feeding the probe gradient.
    pub probe_subset: Option<usize>,
    /// Stop when the objective drops by less than this fraction over ten
    /// iterations; `0` runs the full count.
    pub tolerance: f64,
    pub line_search: LineSearch,
    pub update_psi: bool,
    pub update_probe: bool,
    /// Update the probe only every this many iterations.
    pub probe_interval: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Amplitude,
            max_iter: 100,
            schedule: vec![(1, 100)],
            probe_subset: None,
            tolerance: 0.0,
            line_search: LineSearch::default(),
            update_psi: true,
            update_probe: true,
            probe_interval: 1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schedule.is_empty() {
            return Err(HoloError::invalid("schedule must not be empty"));
        }
        let mut prev = usize::MAX;
        for &(f, _) in &self.schedule {
            if f == 0 || !f.is_power_of_two() || f >= prev {
                return Err(HoloError::invalid("schedule bin factors must be strictly descending powers of two"));
            }
            prev = f;
        }
        if prev != 1 {
            return Err(HoloError::invalid("schedule must end at bin factor 1"));
        }
        let ls = &self.line_search;
        if !(ls.initial_gamma > 0.0 && ls.shrink > 0.0 && ls.shrink < 1.0) {
            return Err(HoloError::invalid("line search needs γ > 0 and shrink in (0, 1)"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(HoloError::invalid("tolerance must be non-negative"));
        }
        if self.probe_interval == 0 {
            return Err(HoloError::invalid("probe interval must be at least 1"));
        }
        Ok(())
    }
}

/// Iterate of the joint solver.
#[derive(Clone, Debug)]
pub struct SolverState {
    pub psi: Vec<ComplexField>,
    pub q: ComplexField,
    /// Last search directions.
    pub eta_psi: Vec<Array2<C64>>,
    pub eta_q: Array2<C64>,
    pub iter: usize,
    pub history: History,
    /// Set when the line search found no decrease along steepest descent.
    pub stagnated: bool,
}

impl SolverState {
    pub fn new(psi: Vec<ComplexField>, q: ComplexField) -> Result<Self> {
        let n = q.n();
        for p in &psi {
            if p.n() != n || (p.pixel_size() - q.pixel_size()).abs() > 1e-9 * q.pixel_size() {
                return Err(HoloError::invalid("object and probe grids differ"));
            }
        }
        let zero = Array2::zeros((n, n));
        Ok(Self {
            eta_psi: vec![zero.clone(); psi.len()],
            eta_q: zero,
            psi,
            q,
            iter: 0,
            history: History::default(),
            stagnated: false,
        })
    }

    /// `ψ ≡ 1` for every angle of `data` and the back-propagated reference
    /// as probe.
    pub fn initial(data: &ObjectData) -> Result<Self> {
        let q = init_probe(data)?;
        let one = ComplexField::constant(data.n(), C64::new(1.0, 0.0), data.pixel_size, q.wavelength())?;
        Self::new(vec![one; data.n_angles()], q)
    }

    pub fn psi_arrays(&self) -> Vec<Array2<C64>> {
        self.psi.iter().map(|p| p.data().clone()).collect()
    }
}

/// `F` at the state for the probe-aware model of `data`.
pub fn objective(state: &SolverState, data: &ObjectData, mode: Mode) -> Result<f64> {
    Problem::new(data, mode)?.objective(&state.psi_arrays(), state.q.data())
}

/// `∇_{ψ_k} F` at the state.
pub fn grad_psi(state: &SolverState, data: &ObjectData, mode: Mode, k: usize) -> Result<ComplexField> {
    let g = Problem::new(data, mode)?.grad_psi(&state.psi_arrays(), state.q.data(), k)?;
    state.q.with_data(g)
}

/// `∇_q F` at the state.
pub fn grad_q(state: &SolverState, data: &ObjectData, mode: Mode) -> Result<ComplexField> {
    let g = Problem::new(data, mode)?.grad_q(&state.psi_arrays(), state.q.data())?;
    state.q.with_data(g)
}
