//! Fast Dirichlet Poisson solves on a rectangular block via DST-I.
//!
//! A DST-I of length m is read off a complex FFT of length 2(m+1) applied to
//! the odd extension of the data; two real lines are packed into one complex
//! transform (real part and imaginary part).

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

const PAIRS_PER_BATCH: usize = 32;

pub struct BoxPoisson {
    dims: [usize; 3],
    plans: [Arc<dyn Fft<f64>>; 3],
    /// Eigenvalues of the 1-D operator −d²/dx² with Dirichlet ends, per axis.
    eig: [Vec<f64>; 3],
}

impl std::fmt::Debug for BoxPoisson {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BoxPoisson").field("dims", &self.dims).finish()
    }
}

impl BoxPoisson {
    /// Solver for −Δ_h x = r on a dims[0]×dims[1]×dims[2] block with zero
    /// Dirichlet values just outside it.
    pub fn new(dims: [usize; 3], h: f64) -> Self {
        let mut planner = FftPlanner::<f64>::new();
        let plans = std::array::from_fn(|a| planner.plan_fft_forward(2 * (dims[a] + 1)));
        let eig = std::array::from_fn(|a| {
            let m = dims[a];
            (1..=m)
                .map(|k| {
                    let s = (std::f64::consts::PI * k as f64 / (2.0 * (m + 1) as f64)).sin();
                    4.0 * s * s / (h * h)
                })
                .collect()
        });
        BoxPoisson { dims, plans, eig }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// In-place solve; `data` is x-fastest with shape `dims`.
    pub fn solve(&self, data: &mut [f64]) {
        assert_eq!(data.len(), self.len());
        for a in 0..3 {
            self.transform(data, a, 1.0);
        }
        let [m0, m1, _] = self.dims;
        for (idx, x) in data.iter_mut().enumerate() {
            let i = idx % m0;
            let r = idx / m0;
            let (j, k) = (r % m1, r / m1);
            *x /= self.eig[0][i] + self.eig[1][j] + self.eig[2][k];
        }
        for a in 0..3 {
            let scale = 2.0 / (self.dims[a] + 1) as f64;
            self.transform(data, a, scale);
        }
    }

    /// Applies −Δ_h (used by tests).
    pub fn apply(&self, x: &[f64], h: f64) -> Vec<f64> {
        let [m0, m1, m2] = self.dims;
        let at = |i: isize, j: isize, k: isize| -> f64 {
            if i < 0 || j < 0 || k < 0 || i >= m0 as isize || j >= m1 as isize || k >= m2 as isize {
                0.0
            } else {
                x[i as usize + m0 * (j as usize + m1 * k as usize)]
            }
        };
        let mut y = vec![0.0; x.len()];
        for k in 0..m2 as isize {
            for j in 0..m1 as isize {
                for i in 0..m0 as isize {
                    let c = at(i, j, k);
                    let s = at(i + 1, j, k) + at(i - 1, j, k) + at(i, j + 1, k) + at(i, j - 1, k)
                        + at(i, j, k + 1)
                        + at(i, j, k - 1);
                    y[i as usize + m0 * (j as usize + m1 * k as usize)] = (6.0 * c - s) / (h * h);
                }
            }
        }
        y
    }

    /// Unnormalised DST-I along `axis`, multiplied by `scale`.
    fn transform(&self, data: &mut [f64], axis: usize, scale: f64) {
        let [m0, m1, m2] = self.dims;
        let m = self.dims[axis];
        let strides = [1, m0, m0 * m1];
        let stride = strides[axis];
        // line starts, ordered so that consecutive lines are adjacent in memory
        // whenever the transform axis is not the contiguous one
        let bases: Vec<usize> = match axis {
            0 => (0..m1 * m2).map(|l| l * m0).collect(),
            1 => (0..m2).flat_map(|k| (0..m0).map(move |i| i + m0 * m1 * k)).collect(),
            _ => (0..m1).flat_map(|j| (0..m0).map(move |i| i + m0 * j)).collect(),
        };
        let nfft = 2 * (m + 1);
        let plan = &self.plans[axis];
        let mut buf = vec![Complex64::new(0.0, 0.0); PAIRS_PER_BATCH * nfft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        let half = 0.5 * scale;
        for chunk in bases.chunks(2 * PAIRS_PER_BATCH) {
            let pairs = chunk.len().div_ceil(2);
            for q in 0..pairs {
                let seg = &mut buf[q * nfft..(q + 1) * nfft];
                let b0 = chunk[2 * q];
                let b1 = chunk.get(2 * q + 1).copied();
                seg[0] = Complex64::new(0.0, 0.0);
                seg[m + 1] = Complex64::new(0.0, 0.0);
                for j in 0..m {
                    let a = data[b0 + j * stride];
                    let b = b1.map_or(0.0, |b1| data[b1 + j * stride]);
                    seg[1 + j] = Complex64::new(a, b);
                    seg[nfft - 1 - j] = Complex64::new(-a, -b);
                }
            }
            plan.process_with_scratch(&mut buf[..pairs * nfft], &mut scratch);
            for q in 0..pairs {
                let seg = &buf[q * nfft..(q + 1) * nfft];
                let b0 = chunk[2 * q];
                for k in 0..m {
                    data[b0 + k * stride] = -seg[1 + k].im * half;
                }
                if let Some(&b1) = chunk.get(2 * q + 1) {
                    for k in 0..m {
                        data[b1 + k * stride] = seg[1 + k].re * half;
                    }
                }
            }
        }
    }
}
