//! Shared fixtures for the benchmarks.

use nsstat::ensemble::{sample_initial, Ensemble, MeasureSpec};
use nsstat::Grid;

pub fn grid(dim: usize, n: usize) -> Grid {
    Grid::new(dim, n).expect("benchmark grid")
}

/// Band-limited random ensemble with spectrum slope 3 up to the dealiasing cutoff.
pub fn ensemble(dim: usize, n: usize, members: usize) -> Ensemble {
    let g = grid(dim, n);
    let k_max = g.dealias_cutoff() as u32;
    let spec = MeasureSpec::random_fourier(3.0, 1, k_max, 2.0, 100.0, 1);
    sample_initial(&spec, members, &g).expect("benchmark ensemble")
}
