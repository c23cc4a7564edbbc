//! Principal component analysis on row-sample feature matrices.
//!
//! When there are no more samples than dimensions the eigenvectors are found
//! from the n x n Gram matrix and mapped back to feature space (the
//! eigenfaces construction); otherwise the d x d covariance is decomposed
//! directly.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-dimension standard deviation floor.
pub const SCALE_EPS: f64 = 1e-12;
/// Eigenvalues below this fraction of the largest count as rank deficiency.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PcaRoute {
    /// Gram route when `n <= d`, covariance route otherwise.
    #[default]
    Auto,
    Gram,
    Covariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PcaOptions {
    pub n_components: usize,
    pub standardize: bool,
    /// Leading components to discard before keeping `n_components`.
    pub skip_leading: usize,
    pub route: PcaRoute,
}

impl PcaOptions {
    pub fn new(n_components: usize) -> Self {
        Self {
            n_components,
            standardize: true,
            skip_leading: 0,
            route: PcaRoute::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    mean: DVector<f64>,
    /// Population std per dimension (all ones when not standardizing).
    scale: DVector<f64>,
    /// d x N, orthonormal columns.
    basis: DMatrix<f64>,
    /// Descending, non-negative.
    eigenvalues: DVector<f64>,
    standardized: bool,
    /// Trace of the (standardized) covariance.
    total_variance: f64,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.basis.ncols()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn scale(&self) -> &DVector<f64> {
        &self.scale
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    /// Keeps only the first `n` components.
    pub fn truncated(&self, n: usize) -> PcaModel {
        let n = n.min(self.n_components());
        PcaModel {
            mean: self.mean.clone(),
            scale: self.scale.clone(),
            basis: self.basis.columns(0, n).into_owned(),
            eigenvalues: self.eigenvalues.rows(0, n).into_owned(),
            standardized: self.standardized,
            total_variance: self.total_variance,
        }
    }

    fn inv_scale(&self, j: usize) -> f64 {
        let s = self.scale[j];
        if s < SCALE_EPS {
            0.0
        } else {
            1.0 / s
        }
    }

    /// Centres (and scales) `x` the way the fitting data was.
    pub fn whiten_input(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(DVector::from_iterator(
            x.len(),
            x.iter()
                .enumerate()
                .map(|(j, &v)| (v - self.mean[j]) * self.inv_scale(j)),
        ))
    }

    pub fn project(&self, x: &[f64]) -> Result<DVector<f64>> {
        let z = self.whiten_input(x)?;
        Ok(self.basis.tr_mul(&z))
    }

    /// Projects every row of `data`, giving an `n x N` matrix.
    pub fn project_rows(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if data.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: data.ncols(),
            });
        }
        Ok(self.standardize_rows(data) * &self.basis)
    }

    fn standardize_rows(&self, data: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = data.clone();
        for j in 0..z.ncols() {
            let (m, inv) = (self.mean[j], self.inv_scale(j));
            for v in z.column_mut(j).iter_mut() {
                *v = (*v - m) * inv;
            }
        }
        z
    }

    /// Maps component coordinates back to the standardized feature space.
    pub fn reconstruct(&self, coords: &DVector<f64>) -> DVector<f64> {
        &self.basis * coords
    }
}

pub fn fit_pca(data: &DMatrix<f64>, n_components: usize, standardize: bool) -> Result<PcaModel> {
    fit_pca_with(
        data,
        PcaOptions {
            standardize,
            ..PcaOptions::new(n_components)
        },
    )
}

pub fn fit_pca_with(data: &DMatrix<f64>, opts: PcaOptions) -> Result<PcaModel> {
    let (n, d) = data.shape();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("PCA needs at least 2 samples, got {n}")));
    }
    if opts.n_components < 1 {
        return Err(Error::InvalidArgument("n_components must be >= 1".into()));
    }
    if d == 0 {
        return Err(Error::InvalidArgument("feature dimension is zero".into()));
    }

    let nf = n as f64;
    let mut mean = DVector::zeros(d);
    let mut scale = DVector::from_element(d, 1.0);
    let mut z = data.clone();
    for j in 0..d {
        let col = data.column(j);
        let m = col.sum() / nf;
        mean[j] = m;
        if opts.standardize {
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / nf;
            scale[j] = var.sqrt();
        }
        let inv = if scale[j] < SCALE_EPS { 0.0 } else { 1.0 / scale[j] };
        for v in z.column_mut(j).iter_mut() {
            *v = (*v - m) * inv;
        }
    }
    let total_variance = z.iter().map(|v| v * v).sum::<f64>() / nf;

    let use_gram = match opts.route {
        PcaRoute::Auto => n <= d,
        PcaRoute::Gram => true,
        PcaRoute::Covariance => false,
    };
    let (values, vectors) = if use_gram {
        let gram = (&z * z.transpose()) / nf;
        let (values, u) = sorted_eigen(gram);
        // map n-space eigenvectors to feature space; normalised below
        (values, z.tr_mul(&u))
    } else {
        let cov = z.tr_mul(&z) / nf;
        sorted_eigen(cov)
    };

    let lambda_max = values.first().copied().unwrap_or(0.0).max(0.0);
    let rank = values
        .iter()
        .filter(|&&l| lambda_max > 0.0 && l > RANK_TOL * lambda_max)
        .count();
    let available = rank.max(1);
    if opts.skip_leading >= available {
        return Err(Error::InvalidArgument(format!(
            "skip_leading={} leaves no components (rank {rank})",
            opts.skip_leading
        )));
    }
    let end = (opts.skip_leading + opts.n_components).min(available);
    let keep: Vec<usize> = (opts.skip_leading..end).collect();

    let mut basis = DMatrix::zeros(d, keep.len());
    let mut eigenvalues = DVector::zeros(keep.len());
    for (k, &i) in keep.iter().enumerate() {
        let col = vectors.column(i);
        let norm = col.norm();
        if i < rank && norm > 0.0 {
            basis.set_column(k, &(col / norm));
            eigenvalues[k] = values[i].max(0.0);
        }
    }
    orthonormalize(&mut basis);
    for k in 0..basis.ncols() {
        fix_sign(&mut basis, k);
    }

    Ok(PcaModel {
        mean,
        scale,
        basis,
        eigenvalues,
        standardized: opts.standardize,
        total_variance,
    })
}

/// Eigen-decomposition with eigenpairs sorted by descending eigenvalue.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let SymmetricEigen {
        eigenvalues,
        eigenvectors,
    } = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eigenvalues[i]).collect();
    let vectors = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    (values, vectors)
}

/// Modified Gram-Schmidt over the columns in order. Columns that vanish
/// (zero-variance directions) are replaced by standard basis vectors
/// orthogonalized against the earlier columns.
fn orthonormalize(basis: &mut DMatrix<f64>) {
    let d = basis.nrows();
    for k in 0..basis.ncols() {
        let mut v = basis.column(k).into_owned();
        let original = v.norm();
        for j in 0..k {
            let c = basis.column(j);
            let dot = c.dot(&v);
            v -= c * dot;
        }
        let norm = v.norm();
        if original > 0.0 && norm > 1e-6 * original {
            basis.set_column(k, &(v / norm));
            continue;
        }
        for e in 0..d {
            let mut v = DVector::zeros(d);
            v[e] = 1.0;
            for j in 0..k {
                let c = basis.column(j);
                let dot = c.dot(&v);
                v -= c * dot;
            }
            let norm = v.norm();
            if norm > 1e-6 {
                basis.set_column(k, &(v / norm));
                break;
            }
        }
    }
}

/// Makes the largest-magnitude entry of column `k` positive.
fn fix_sign(basis: &mut DMatrix<f64>, k: usize) {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for &v in basis.column(k).iter() {
        if v.abs() > best {
            best = v.abs();
            sign = v.signum();
        }
    }
    if sign < 0.0 {
        basis.column_mut(k).neg_mut();
    }
}
