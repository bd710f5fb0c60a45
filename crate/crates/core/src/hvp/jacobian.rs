//! Jacobian probing and the volume factor `√det(AᵀA)`.

use nalgebra::DMatrix;

use super::HierarchySpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAX_PROBE_DIM: usize = 4096;

/// Dense Jacobian `A` of shape `dim(Z) × dim(X)`; column `j` is `h(e_j)` with
/// rows ordered `z^(1)…z^(S)`, each flattened row-major.
pub fn jacobian_matrix(spec: &HierarchySpec) -> Result<Tensor> {
    spec.validate()?;
    let n = spec.image_dim();
    if n > MAX_PROBE_DIM {
        return Err(Error::InvalidArgument(format!("image dimension {n} exceeds probe limit {MAX_PROBE_DIM}")));
    }
    let m = spec.latent_dim();
    let mut a = vec![0.0; m * n];
    let mut basis = vec![0.0; n];
    for j in 0..n {
        basis[j] = 1.0;
        let col = spec.forward(&Tensor::from_parts(spec.image_shape(), basis.clone()))?.flatten();
        basis[j] = 0.0;
        for (i, v) in col.into_iter().enumerate() {
            a[i * n + j] = v;
        }
    }
    Ok(Tensor::from_parts(vec![m, n], a))
}

/// `AᵀA` for a 2-D Jacobian tensor.
pub fn gram_matrix(a: &Tensor) -> Result<Tensor> {
    let (m, n) = match a.shape() {
        [m, n] => (*m, *n),
        s => return Err(Error::Shape(format!("expected a matrix, got {s:?}"))),
    };
    let mat = DMatrix::from_row_slice(m, n, a.data());
    let g = mat.transpose() * &mat;
    Ok(Tensor::from_parts(vec![n, n], g.transpose().as_slice().to_vec()))
}

/// `√det(AᵀA)` via the Cholesky log-determinant; exactly 1 for volume-preserving maps.
pub fn volume_factor(spec: &HierarchySpec) -> Result<f64> {
    let g = gram_matrix(&jacobian_matrix(spec)?)?;
    let n = g.shape()[0];
    let chol = DMatrix::from_row_slice(n, n, g.data())
        .cholesky()
        .ok_or_else(|| Error::Singular("AᵀA is not positive definite".into()))?;
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    Ok((0.5 * log_det).exp())
}
