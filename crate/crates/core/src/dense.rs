//! Small dense Galerkin matrices for spectral experiments on coarse grids.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{MagrayError, Result};
use crate::spectral::Grid;

/// Largest basis size accepted for dense assembly.
pub const DENSE_LIMIT: usize = 4096;

/// Euclidean-orthonormal real trigonometric basis of the grid functions
/// without Nyquist content; `(nx - 1)(ny - 1)` columns.
pub fn trig_basis(grid: &Grid) -> DMatrix<f64> {
    let (nx, ny) = (grid.nx as i64, grid.ny as i64);
    let (hx, hy) = (nx / 2, ny / 2);
    let len = grid.len();
    let norm = 1.0 / (len as f64).sqrt();
    let mut cols: Vec<Vec<f64>> = vec![vec![norm; len]];
    for kx in 0..hx {
        for ky in (1 - hy)..hy {
            if kx == 0 && ky <= 0 {
                continue;
            }
            let mut c = vec![0.0; len];
            let mut s = vec![0.0; len];
            for ix in 0..grid.nx {
                for iy in 0..grid.ny {
                    let arg = 2.0
                        * std::f64::consts::PI
                        * (kx as f64 * ix as f64 / nx as f64 + ky as f64 * iy as f64 / ny as f64);
                    let n = grid.idx(ix, iy);
                    c[n] = std::f64::consts::SQRT_2 * norm * arg.cos();
                    s[n] = std::f64::consts::SQRT_2 * norm * arg.sin();
                }
            }
            cols.push(c);
            cols.push(s);
        }
    }
    DMatrix::from_fn(len, cols.len(), |i, j| cols[j][i])
}

/// Block-diagonal basis for `components` stacked grid functions.
pub fn block_basis(grid: &Grid, components: usize) -> Result<DMatrix<f64>> {
    let b = trig_basis(grid);
    let (rows, cols) = b.shape();
    let dim = cols * components;
    if dim > DENSE_LIMIT {
        return Err(MagrayError::TooLarge { dim, limit: DENSE_LIMIT });
    }
    let mut out = DMatrix::zeros(rows * components, dim);
    for c in 0..components {
        out.view_mut((c * rows, c * cols), (rows, cols)).copy_from(&b);
    }
    Ok(out)
}

/// Galerkin matrices `A = B^T W Op B` and `G = B^T W B` for a pointwise weight `W`.
pub fn galerkin<F>(basis: &DMatrix<f64>, weights: &[f64], op: F) -> Result<(DMatrix<f64>, DMatrix<f64>)>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let dim = basis.ncols();
    let images: Vec<Vec<f64>> =
        (0..dim).into_par_iter().map(|j| op(basis.column(j).as_slice())).collect::<Result<_>>()?;
    let wb = DMatrix::from_fn(basis.nrows(), dim, |i, j| weights[i] * basis[(i, j)]);
    let image = DMatrix::from_fn(basis.nrows(), dim, |i, j| images[j][i]);
    let a = wb.transpose() * image;
    let g = wb.transpose() * basis;
    Ok((a, g))
}

/// `G^{-1/2}` for a symmetric positive definite Gram matrix.
pub fn inverse_sqrt(g: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(g.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Matrix of the operator in `W`-orthonormal coordinates.
pub fn whiten(a: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let s = inverse_sqrt(g);
    &s * a * &s
}

/// Singular values in ascending order.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = a.clone().singular_values().iter().copied().collect();
    sv.sort_by(f64::total_cmp);
    sv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trig_basis_is_orthonormal_and_nyquist_free() {
        let g = Grid::new(8, 8, 1.0, 2.0).unwrap();
        let b = trig_basis(&g);
        assert_eq!(b.ncols(), 49);
        let gram = b.transpose() * &b;
        assert!((gram - DMatrix::identity(49, 49)).amax() < 1e-13);
        for j in 0..b.ncols() {
            let col: Vec<f64> = b.column(j).iter().copied().collect();
            let filtered = g.nyquist_free(&col);
            assert!(col.iter().zip(&filtered).all(|(a, b)| (a - b).abs() < 1e-13));
        }
    }
}
