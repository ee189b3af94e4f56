//! Work-size-gated parallel driving.
//!
//! Results are bitwise identical on either path: every x-cell writes its own
//! output slice and map results are collected in index order, so the worker
//! count never changes the arithmetic. The gate only decides whether the
//! thread pool is worth its dispatch latency.

use rayon::prelude::*;

/// Below this many phase-space values per operator pass, the pool costs more
/// than it saves (desk-scale 1-D runs); above it (2-D grids) it pays off.
pub const PARALLEL_THRESHOLD: usize = 100_000;

/// Apply `body` to each (x-index, output-row) pair.
pub fn for_each_row(
    out: &mut [f64],
    row: usize,
    parallel: bool,
    body: impl Fn(usize, &mut [f64]) + Sync,
) {
    if parallel {
        out.par_chunks_mut(row)
            .enumerate()
            .with_min_len(8)
            .for_each(|(ix, chunk)| body(ix, chunk));
    } else {
        for (ix, chunk) in out.chunks_mut(row).enumerate() {
            body(ix, chunk);
        }
    }
}

/// Map over x-indices, collecting in index order.
pub fn map_x<T: Send>(nx: usize, parallel: bool, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    if parallel {
        (0..nx).into_par_iter().with_min_len(8).map(f).collect()
    } else {
        (0..nx).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_paths_identical() {
        let nx = 10;
        let row = 4;
        let mut a = vec![0.0; nx * row];
        let mut b = vec![0.0; nx * row];
        let body = |ix: usize, chunk: &mut [f64]| {
            for (j, v) in chunk.iter_mut().enumerate() {
                *v = (ix * 31 + j) as f64 * 0.1;
            }
        };
        for_each_row(&mut a, row, false, body);
        for_each_row(&mut b, row, true, body);
        assert_eq!(a, b);
        let ma = map_x(nx, false, |i| i * i);
        let mb = map_x(nx, true, |i| i * i);
        assert_eq!(ma, mb);
    }
}
