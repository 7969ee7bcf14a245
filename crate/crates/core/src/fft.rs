//! Square 2-D FFTs on row-major `ndarray` buffers.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Planned forward and inverse transforms for `n x n` arrays.
///
/// The inverse is normalized by `1 / n^2`, so `inverse(forward(x)) == x` up to
/// rounding.
#[derive(Clone)]
pub struct Fft2 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("n", &self.n).finish()
    }
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn forward(&self, data: &mut Array2<Complex64>) {
        self.transform(data, &self.forward);
    }

    pub fn inverse(&self, data: &mut Array2<Complex64>) {
        self.transform(data, &self.inverse);
        let scale = 1.0 / (self.n * self.n) as f64;
        data.mapv_inplace(|v| v * scale);
    }

    fn transform(&self, data: &mut Array2<Complex64>, fft: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        assert_eq!(data.dim(), (n, n), "Fft2 planned for {n}x{n}");
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        let buf = data
            .as_slice_mut()
            .expect("Fft2 requires a contiguous row-major array");
        fft.process_with_scratch(buf, &mut scratch);
        transpose_in_place(buf, n);
        fft.process_with_scratch(buf, &mut scratch);
        transpose_in_place(buf, n);
    }
}

fn transpose_in_place<T>(buf: &mut [T], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

/// Moves the zero-frequency sample from index 0 to index `n / 2` along both axes.
pub fn fftshift<T: Clone>(a: &Array2<T>) -> Array2<T> {
    let (rows, cols) = a.dim();
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        a[((i + rows - rows / 2) % rows, (j + cols - cols / 2) % cols)].clone()
    })
}

/// Inverse of [`fftshift`].
pub fn ifftshift<T: Clone>(a: &Array2<T>) -> Array2<T> {
    let (rows, cols) = a.dim();
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        a[((i + rows / 2) % rows, (j + cols / 2) % cols)].clone()
    })
}
