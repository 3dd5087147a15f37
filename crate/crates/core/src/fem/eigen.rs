//! Smallest eigenpairs of the symmetric pencil `K x = μ M x`.
//!
//! Shift-invert block subspace iteration: each sweep solves
//! `(K + σM) Y = M X` with a band Cholesky factor, then performs a
//! Rayleigh–Ritz projection onto `span(Y)`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sparse::{BandCholesky, CsrMatrix};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone)]
pub struct EigenOptions {
    pub shift: f64,
    pub guard_vectors: usize,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            shift: 1.0,
            guard_vectors: 8,
            tol: 1e-12,
            max_sweeps: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    /// `M`-orthonormal eigenvectors, one per value.
    pub vectors: Vec<Vec<f64>>,
}

pub fn smallest_eigenpairs(
    k: &CsrMatrix,
    m: &CsrMatrix,
    count: usize,
    opts: &EigenOptions,
) -> Result<EigenPairs> {
    let n = k.dim();
    if m.dim() != n {
        return invalid("stiffness and mass dimensions differ");
    }
    let p = (count + opts.guard_vectors).min(n);
    if count == 0 || count > n {
        return invalid(format!("cannot compute {count} eigenpairs of a {n}-dim pencil"));
    }
    let (kmax, mmax) = (k.max_abs(), m.max_abs());
    let shifted = BandCholesky::factor(&k.add_scaled(opts.shift, m)?)?;

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut x: Vec<Vec<f64>> = (0..p)
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut values = vec![f64::INFINITY; p];

    for _ in 0..opts.max_sweeps {
        let y: Vec<Vec<f64>> = x.iter().map(|v| shifted.solve(&m.mul_vec(v))).collect();
        let ky: Vec<Vec<f64>> = y.iter().map(|v| k.mul_vec(v)).collect();
        let my: Vec<Vec<f64>> = y.iter().map(|v| m.mul_vec(v)).collect();
        let kr = DMatrix::from_fn(p, p, |i, j| dot(&y[i], &ky[j]));
        let mr = DMatrix::from_fn(p, p, |i, j| dot(&y[i], &my[j]));
        let kr = (&kr + kr.transpose()) * 0.5;
        let mr = (&mr + mr.transpose()) * 0.5;
        let (ritz, coeffs) = small_pencil(&kr, &mr)?;

        x = (0..p)
            .map(|c| {
                let mut v = vec![0.0; n];
                for (r, yr) in y.iter().enumerate() {
                    let w = coeffs[(r, c)];
                    v.iter_mut().zip(yr).for_each(|(vi, yi)| *vi += w * yi);
                }
                v
            })
            .collect();
        values = ritz;

        let converged = (0..count).all(|c| {
            let kx = k.mul_vec(&x[c]);
            let mx = m.mul_vec(&x[c]);
            let res: f64 = kx
                .iter()
                .zip(&mx)
                .map(|(a, b)| (a - values[c] * b).powi(2))
                .sum::<f64>()
                .sqrt();
            let scale = (kmax + values[c].abs() * mmax) * norm(&x[c]);
            res <= opts.tol * scale
        });
        if converged {
            x.truncate(count);
            values.truncate(count);
            return Ok(EigenPairs { values, vectors: x });
        }
    }
    Err(Error::Numerical(format!(
        "subspace iteration did not converge in {} sweeps",
        opts.max_sweeps
    )))
}

/// Dense generalized symmetric eigensolve; returns ascending values and
/// `Mr`-orthonormal coefficient columns.
fn small_pencil(kr: &DMatrix<f64>, mr: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let chol = mr
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("Ritz basis lost rank".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular Ritz Gram factor".into()))?;
    let c = &linv * kr * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let dim = c.nrows();
    let eig = c.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(dim, dim, |r, j| eig.eigenvectors[(r, order[j])]);
    Ok((vals, linv.transpose() * vecs))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
