//! Seeded Gaussian random projection.
//!
//! The projection matrix `R` is `d x target_dim` with entries drawn i.i.d. from
//! `N(0, 1/target_dim)`, filled row-major from a ChaCha8 stream seeded with
//! `seed`. ChaCha is a counter-based generator, so the stream is identical on
//! every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::GradientMatrix;

/// Draws the `dim x target_dim` projection matrix, row-major.
pub fn projection_matrix(dim: usize, target_dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (target_dim as f64).sqrt();
    (0..dim * target_dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        })
        .collect()
}

/// Projects every row of `m` to `target_dim` dimensions. The result is not normalized.
pub fn random_project(m: &GradientMatrix, target_dim: usize, seed: u64) -> Result<GradientMatrix> {
    if target_dim == 0 {
        return Err(Error::InvalidConfig("target_dim must be positive".into()));
    }
    let dim = m.dim();
    let r = projection_matrix(dim, target_dim, seed);
    let mut out = vec![0.0; m.rows() * target_dim];
    out.par_chunks_exact_mut(target_dim)
        .zip(m.data().par_chunks_exact(dim))
        .for_each(|(dst, src)| {
            for (j, &x) in src.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let r_row = &r[j * target_dim..(j + 1) * target_dim];
                dst.iter_mut().zip(r_row).for_each(|(d, w)| *d += x * w);
            }
        });
    Ok(GradientMatrix::from_parts_unchecked(
        m.ids().to_vec(),
        target_dim,
        out,
        false,
    ))
}
