use std::time::Instant;

use ndarray::{Array1, Array2, Array3, Zip};

use super::{History, IterRecord, LineSearch, Problem, SolverConfig, SolverState};
use crate::forward::ObjectData;
use crate::{Result, C64};

/// Real Hilbert space used by the direction update: `Re⟨x, y⟩`.
pub trait SearchSpace: Clone {
    fn re_dot(&self, other: &Self) -> f64;
    /// `self ← self + a·other`.
    fn axpy(&mut self, a: f64, other: &Self);
    fn scale(&mut self, a: f64);
}

impl SearchSpace for Array2<C64> {
    fn re_dot(&self, other: &Self) -> f64 {
        let mut acc = 0.0;
        Zip::from(self).and(other).for_each(|a, b| acc += a.re * b.re + a.im * b.im);
        acc
    }
    fn axpy(&mut self, a: f64, other: &Self) {
        Zip::from(self).and(other).for_each(|x, &y| *x += y * a);
    }
    fn scale(&mut self, a: f64) {
        self.mapv_inplace(|x| x * a);
    }
}

macro_rules! real_space {
    ($t:ty) => {
        impl SearchSpace for $t {
            fn re_dot(&self, other: &Self) -> f64 {
                let mut acc = 0.0;
                Zip::from(self).and(other).for_each(|a, b| acc += a * b);
                acc
            }
            fn axpy(&mut self, a: f64, other: &Self) {
                self.scaled_add(a, other);
            }
            fn scale(&mut self, a: f64) {
                self.mapv_inplace(|x| x * a);
            }
        }
    };
}
real_space!(Array1<f64>);
real_space!(Array2<f64>);
real_space!(Array3<f64>);

/// `β = ‖g‖² / den`, or `None` when `|den| < 1e-30·‖g‖²` (or `β` would not
/// be finite) and the caller should fall back to steepest descent.
pub fn dai_yuan_beta(g_norm_sqr: f64, den: f64) -> Option<f64> {
    if !(den.abs() >= 1e-30 * g_norm_sqr) || den == 0.0 {
        return None;
    }
    let beta = g_norm_sqr / den;
    beta.is_finite().then_some(beta)
}

/// `η_new = −g_new + β·η_old` with
/// `β = ‖g_new‖² / Re⟨g_new − g_old, η_old⟩`; `−g_new` on the first
/// iteration or when the denominator vanishes.
pub fn dai_yuan_direction<V: SearchSpace>(g_new: &V, g_old: Option<&V>, eta_old: Option<&V>) -> V {
    let mut out = g_new.clone();
    out.scale(-1.0);
    if let (Some(go), Some(eta)) = (g_old, eta_old) {
        let gg = g_new.re_dot(g_new);
        let den = g_new.re_dot(eta) - go.re_dot(eta);
        if let Some(beta) = dai_yuan_beta(gg, den) {
            out.axpy(beta, eta);
        }
    }
    out
}

/// Largest step `γ_init·shrink^i`, `i ≤ max_halvings`, with `f(γ) < f0`;
/// `0` when there is none.
pub fn backtrack(mut f: impl FnMut(f64) -> f64, f0: f64, gamma_init: f64, ls: &LineSearch) -> f64 {
    let mut gamma = gamma_init;
    for _ in 0..=ls.max_halvings {
        if f(gamma) < f0 {
            return gamma;
        }
        gamma *= ls.shrink;
    }
    0.0
}

/// Single-level joint solve of `data` from `init`.
pub fn cg_solve(data: &ObjectData, init: SolverState, config: &SolverConfig) -> Result<SolverState> {
    cg_solve_observed(data, init, config, &mut |_| {})
}

/// [`cg_solve`] reporting every history record as it is produced.
pub fn cg_solve_observed(
    data: &ObjectData,
    init: SolverState,
    config: &SolverConfig,
    observer: &mut dyn FnMut(&IterRecord),
) -> Result<SolverState> {
    let mut problem = Problem::new(data, config.mode)?;
    problem.set_probe_subset(config.probe_subset)?;
    run_cg(&problem, init, config, config.max_iter, observer)
}

/// Dai–Yuan iterations on an assembled problem.
///
/// Every iteration computes one direction per block (each `ψ_k` and `q`),
/// resets a block to steepest descent when it is not a descent direction,
/// and takes one shared step found by backtracking on the exact objective
/// along the line. Along `x + γη` each frame is
/// `u0 + γ·u1 + γ²·u2`, so trial steps cost no propagations. A step is kept
/// only if the recomputed objective does not exceed the previous one, which
/// makes the recorded history non-increasing. Two failed steps in a row end
/// the run.
pub fn run_cg(
    problem: &Problem,
    mut state: SolverState,
    config: &SolverConfig,
    iterations: usize,
    observer: &mut dyn FnMut(&IterRecord),
) -> Result<SolverState> {
    config.validate()?;
    let mut psi = state.psi_arrays();
    let mut q = state.q.data().clone();
    let mut ev = problem.evaluate(&psi, &q)?;
    if state.history.records.is_empty() {
        let r = IterRecord {
            iter: state.iter,
            objective: ev.objective,
            gamma: 0.0,
            d_psi_norm: 0.0,
            d_q_norm: 0.0,
            wall_ms: 0.0,
        };
        observer(&r);
        state.history.push(r);
    }
    let n = q.nrows();
    let zero = Array2::<C64>::zeros((n, n));
    let mut eta_psi = vec![zero.clone(); psi.len()];
    let mut eta_q = zero.clone();
    let mut g_old_psi: Option<Vec<Array2<C64>>> = None;
    let mut g_old_q: Option<Array2<C64>> = None;
    let mut gamma_prev: Option<f64> = None;
    let mut failures = 0;
    state.stagnated = false;

    for _ in 0..iterations {
        let start = Instant::now();
        let want_psi = config.update_psi;
        let want_q = config.update_probe && state.iter % config.probe_interval == 0;
        if !want_psi && !want_q {
            break;
        }
        let (gpsi, gq) = problem.gradients(&ev, want_psi, want_q);
        let mut slope = 0.0;
        if want_psi {
            for (k, g) in gpsi.iter().enumerate() {
                let old = g_old_psi.as_ref().map(|v| &v[k]);
                let mut eta = dai_yuan_direction(g, old, old.map(|_| &eta_psi[k]));
                let mut s = g.re_dot(&eta);
                if s >= 0.0 {
                    eta = g.clone();
                    eta.scale(-1.0);
                    s = -g.re_dot(g);
                }
                slope += s;
                eta_psi[k] = eta;
            }
            g_old_psi = Some(gpsi);
        } else {
            eta_psi.iter_mut().for_each(|e| e.fill(C64::new(0.0, 0.0)));
            g_old_psi = None;
        }
        if want_q {
            let mut eta = dai_yuan_direction(&gq, g_old_q.as_ref(), g_old_q.as_ref().map(|_| &eta_q));
            let mut s = gq.re_dot(&eta);
            if s >= 0.0 {
                eta = gq.clone();
                eta.scale(-1.0);
                s = -gq.re_dot(&gq);
            }
            slope += s;
            eta_q = eta;
            g_old_q = Some(gq);
        } else {
            eta_q.fill(C64::new(0.0, 0.0));
            g_old_q = None;
        }

        let mut gamma = 0.0;
        let (mut d_psi, mut d_q) = (0.0, 0.0);
        if slope < 0.0 {
            let ex = problem.expand(&ev, &eta_psi, want_q.then_some(&eta_q));
            let init = gamma_prev.map_or(config.line_search.initial_gamma, |g| 2.0 * g);
            gamma = backtrack(|g| problem.objective_along(&ev, &ex, g), ev.objective, init, &config.line_search);
        }
        if gamma > 0.0 {
            let mut new_psi = psi.clone();
            for (p, e) in new_psi.iter_mut().zip(&eta_psi) {
                p.axpy(gamma, e);
            }
            let mut new_q = q.clone();
            new_q.axpy(gamma, &eta_q);
            let new_ev = problem.evaluate(&new_psi, &new_q)?;
            if new_ev.objective <= ev.objective {
                let psi_norm: f64 = psi.iter().map(|p| p.re_dot(p)).sum::<f64>().sqrt();
                let step_psi: f64 = eta_psi.iter().map(|e| e.re_dot(e)).sum::<f64>().sqrt() * gamma;
                d_psi = if psi_norm > 0.0 { step_psi / psi_norm } else { step_psi };
                let q_norm = q.re_dot(&q).sqrt();
                let step_q = eta_q.re_dot(&eta_q).sqrt() * gamma;
                d_q = if q_norm > 0.0 { step_q / q_norm } else { step_q };
                psi = new_psi;
                q = new_q;
                ev = new_ev;
            } else {
                gamma = 0.0;
            }
        }
        if gamma > 0.0 {
            gamma_prev = Some(gamma);
            failures = 0;
        } else {
            failures += 1;
            g_old_psi = None;
            g_old_q = None;
            gamma_prev = None;
        }
        state.iter += 1;
        let r = IterRecord {
            iter: state.iter,
            objective: ev.objective,
            gamma,
            d_psi_norm: d_psi,
            d_q_norm: d_q,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        observer(&r);
        state.history.push(r);
        if failures >= 2 {
            state.stagnated = true;
            break;
        }
        if config.tolerance > 0.0 && converged(&state.history, config.tolerance) {
            break;
        }
    }

    for (f, p) in state.psi.iter_mut().zip(psi) {
        *f = f.with_data(p)?;
    }
    state.q = state.q.with_data(q)?;
    state.eta_psi = eta_psi;
    state.eta_q = eta_q;
    Ok(state)
}

fn converged(h: &History, tol: f64) -> bool {
    let r = &h.records;
    if r.len() <= 10 {
        return false;
    }
    let then = r[r.len() - 11].objective;
    let now = r[r.len() - 1].objective;
    then <= 0.0 || (then - now) <= tol * then
}
