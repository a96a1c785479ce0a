//! Square 2D FFTs on top of `rustfft` with a process-wide plan cache.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use ndarray::Array2;
use rustfft::{Fft, FftPlanner};

use crate::C64;

struct Plan {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

fn plan(n: usize) -> Arc<Plan> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Plan>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Arc::new(Plan {
                fwd: planner.plan_fft_forward(n),
                inv: planner.plan_fft_inverse(n),
            })
        })
        .clone()
}

fn transpose_square(a: &mut [C64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            a.swap(i * n + j, j * n + i);
        }
    }
}

fn run(a: &mut Array2<C64>, inverse: bool) {
    let (rows, cols) = a.dim();
    assert_eq!(rows, cols, "2D FFT expects a square grid");
    let n = rows;
    let p = plan(n);
    let f = if inverse { &p.inv } else { &p.fwd };
    let buf = a
        .as_slice_mut()
        .expect("2D FFT expects a standard-layout array");
    let mut scratch = vec![C64::new(0.0, 0.0); f.get_inplace_scratch_len()];
    f.process_with_scratch(buf, &mut scratch);
    transpose_square(buf, n);
    f.process_with_scratch(buf, &mut scratch);
    transpose_square(buf, n);
}

/// Unnormalised forward 2D DFT, in place.
pub fn fft2_inplace(a: &mut Array2<C64>) {
    run(a, false);
}

/// Inverse 2D DFT normalised by `1/n²`, in place.
pub fn ifft2_inplace(a: &mut Array2<C64>) {
    run(a, true);
    let scale = 1.0 / (a.len() as f64);
    a.mapv_inplace(|v| v * scale);
}

/// Sample frequencies of a length-`n` DFT with spacing `d`, in FFT order.
/// Index `n/2` carries the negative Nyquist frequency `-1/(2d)`.
pub fn fftfreq(n: usize, d: f64) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let k = if k < n / 2 { k as isize } else { k as isize - n as isize };
            k as f64 / (n as f64 * d)
        })
        .collect()
}

/// Apply a Fourier-domain multiplier: `IFFT(FFT(a) · h)`.
pub fn apply_multiplier(a: &mut Array2<C64>, h: &Array2<C64>) {
    fft2_inplace(a);
    ndarray::Zip::from(&mut *a).and(h).for_each(|x, &m| *x *= m);
    ifft2_inplace(a);
}
