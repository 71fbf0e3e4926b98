//! 2D complex transforms over row-major grids, built from 1D `rustfft` passes.

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::sync::Arc;

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    FftPlanner::new().plan_fft(len, direction)
}

/// In-place 2D transform: rows first, then columns. Unnormalised both ways.
pub(crate) fn fft2_in_place(
    height: usize,
    width: usize,
    data: &mut [Complex64],
    direction: FftDirection,
) {
    debug_assert_eq!(data.len(), height * width);
    let row = plan(width, direction);
    for chunk in data.chunks_exact_mut(width) {
        row.process(chunk);
    }
    let col = plan(height, direction);
    let mut column = vec![Complex64::default(); height];
    for w in 0..width {
        for (h, c) in column.iter_mut().enumerate() {
            *c = data[h * width + w];
        }
        col.process(&mut column);
        for (h, c) in column.iter().enumerate() {
            data[h * width + w] = *c;
        }
    }
}

pub(crate) fn forward_real(height: usize, width: usize, values: &[f64]) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_in_place(height, width, &mut data, FftDirection::Forward);
    data
}
