//! Fisher information over the full random-parameter vector and CRB
//! extraction.
//!
//! The observation depends on the DOAs and on nuisance parameters: the free
//! source powers and the noise power. The parameter vector is
//! `alpha = [theta_1..theta_K, sigma_1^2, sigma_{L+1}^2..sigma_K^2, sigma_n^2]`.
//! Two algebraically identical routes compute the information matrix: a
//! trace form `T Tr{dR_i R^-1 dR_j R^-1}` and a vec form
//! `T vec(dR_i)^H (R^T kron R)^-1 vec(dR_j)`, the latter evaluated by solving
//! `R X R = dR_j` rather than materializing the Kronecker inverse. Keeping
//! both routes gives a cross-check; the vec form is the conventional route
//! for underdetermined (K >= M) coarray scenarios.
//!
//! The K x K DOA block of the inverse information matrix is what the bounds
//! consume: its trace over K is the CRB.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::array::ArrayGeometry;
use crate::error::{Error, Result};
use crate::signal::{covariance_derivative, observation_covariance, SourceEnsemble};

/// Condition-number guard for the full-parameter information matrix,
/// applied after Jacobi equilibration.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Which quadratic form assembles the information matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FimMethod {
    TraceForm,
    VecForm,
}

impl FimMethod {
    /// Default route: the vec form for underdetermined scenes (K >= M),
    /// the trace form otherwise.
    pub fn preferred(num_sources: usize, num_sensors: usize) -> Self {
        if num_sources >= num_sensors {
            FimMethod::VecForm
        } else {
            FimMethod::TraceForm
        }
    }
}

/// DOA block of the inverted full-parameter Fisher information.
///
/// `theta_block` is the matrix whose trace over K is the CRB; it already
/// accounts for the unknown source and noise powers.
#[derive(Debug, Clone)]
pub struct FisherMatrix {
    theta_block: DMatrix<f64>,
    method: FimMethod,
}

impl FisherMatrix {
    pub fn theta_block(&self) -> &DMatrix<f64> {
        &self.theta_block
    }

    pub fn method(&self) -> FimMethod {
        self.method
    }

    pub fn num_sources(&self) -> usize {
        self.theta_block.nrows()
    }

    /// CRB on the per-source MSE: `Tr{theta_block} / K`.
    pub fn crb(&self) -> f64 {
        self.theta_block.trace() / self.num_sources() as f64
    }

    /// `1^T theta_block 1`, the equal-weight quadratic form.
    pub fn ones_quadratic(&self) -> f64 {
        self.theta_block.iter().sum()
    }

    /// `theta_block * 1`, the direction that maximizes the small-offset
    /// error probability on the equal-weight constraint plane.
    pub fn block_times_ones(&self) -> DVector<f64> {
        let k = self.num_sources();
        &self.theta_block * DVector::from_element(k, 1.0)
    }

    /// `delta^T J delta` where `J = theta_block^-1` is the effective DOA
    /// information after nuisance inversion.
    pub fn info_quadratic(&self, delta: &[f64]) -> Result<f64> {
        let k = self.num_sources();
        assert_eq!(delta.len(), k, "offset dimension must match source count");
        let d = DVector::from_column_slice(delta);
        let chol = self
            .theta_block
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite)?;
        Ok(d.dot(&chol.solve(&d)))
    }
}

/// Derivatives of the observation covariance with respect to every entry of
/// alpha, in parameter order.
fn parameter_derivatives(
    geometry: &ArrayGeometry,
    ensemble: &SourceEnsemble,
    thetas: &[f64],
) -> Result<Vec<DMatrix<Complex64>>> {
    let m = geometry.num_sensors();
    let k = ensemble.num_sources();
    let l = ensemble.coherent_count();
    let mut derivs = Vec::with_capacity(2 * k - l + 2);
    for i in 0..k {
        derivs.push(covariance_derivative(geometry, ensemble, thetas, i)?);
    }
    // d/d sigma_1^2: the coherent block contributes A_co beta beta^H A_co^H.
    let a = geometry.steering_matrix(thetas)?;
    let mut v = DVector::<Complex64>::zeros(m);
    for (col, beta) in ensemble.beta().iter().enumerate() {
        v += a.column(col) * *beta;
    }
    let mut d_sigma1 = DMatrix::zeros(m, m);
    for r in 0..m {
        for c in 0..m {
            d_sigma1[(r, c)] = v[r] * v[c].conj();
        }
    }
    derivs.push(d_sigma1);
    // d/d sigma_k^2 = a_k a_k^H for the incoherent sources.
    for src in l..k {
        let ak = a.column(src);
        let mut d = DMatrix::zeros(m, m);
        for r in 0..m {
            for c in 0..m {
                d[(r, c)] = ak[r] * ak[c].conj();
            }
        }
        derivs.push(d);
    }
    // d/d sigma_n^2 = I.
    derivs.push(DMatrix::identity(m, m));
    Ok(derivs)
}

/// Full-parameter information matrix via the trace form
/// `J_ij = T Tr{dR_i R^-1 dR_j R^-1}`.
pub fn fim_trace_form(
    geometry: &ArrayGeometry,
    ensemble: &SourceEnsemble,
    thetas: &[f64],
    snapshots: usize,
) -> Result<DMatrix<f64>> {
    let r = observation_covariance(geometry, ensemble, thetas)?;
    let chol = r.cholesky().ok_or(Error::NotPositiveDefinite)?;
    let derivs = parameter_derivatives(geometry, ensemble, thetas)?;
    // W_i = R^-1 dR_i; J_ij = T Re Tr{W_i W_j}.
    let w: Vec<DMatrix<Complex64>> = derivs.iter().map(|d| chol.solve(d)).collect();
    let n = w.len();
    let m = geometry.num_sensors();
    let t = snapshots as f64;
    let mut j = DMatrix::zeros(n, n);
    for i in 0..n {
        for jdx in i..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for row in 0..m {
                for col in 0..m {
                    acc += w[i][(row, col)] * w[jdx][(col, row)];
                }
            }
            let v = t * acc.re;
            j[(i, jdx)] = v;
            j[(jdx, i)] = v;
        }
    }
    Ok(j)
}

/// Full-parameter information matrix via the vec form, solving
/// `R X R = dR_j` and contracting with `vec(dR_i)`.
pub fn fim_vec_form(
    geometry: &ArrayGeometry,
    ensemble: &SourceEnsemble,
    thetas: &[f64],
    snapshots: usize,
) -> Result<DMatrix<f64>> {
    let r = observation_covariance(geometry, ensemble, thetas)?;
    let chol = r.cholesky().ok_or(Error::NotPositiveDefinite)?;
    let derivs = parameter_derivatives(geometry, ensemble, thetas)?;
    // X_j = R^-1 dR_j R^-1.
    let x: Vec<DMatrix<Complex64>> = derivs
        .iter()
        .map(|d| {
            let y = chol.solve(d);
            chol.solve(&y.adjoint()).adjoint()
        })
        .collect();
    let n = derivs.len();
    let t = snapshots as f64;
    let mut j = DMatrix::zeros(n, n);
    for i in 0..n {
        for jdx in i..n {
            // vec(dR_i)^H vec(X_j) = sum conj(dR_i) .* X_j.
            let acc: Complex64 = derivs[i]
                .iter()
                .zip(x[jdx].iter())
                .map(|(a, b)| a.conj() * b)
                .sum();
            let v = t * acc.re;
            j[(i, jdx)] = v;
            j[(jdx, i)] = v;
        }
    }
    Ok(j)
}

/// Inverts the full-parameter information matrix and extracts the K x K DOA
/// block.
///
/// The inversion runs on the Jacobi-equilibrated matrix so the
/// condition-number guard measures intrinsic identifiability rather than the
/// (units-driven) spread between angle and power rows. Rejects singular or
/// ill-conditioned information with [`Error::DegenerateGeometry`].
pub fn crb_matrix(
    geometry: &ArrayGeometry,
    ensemble: &SourceEnsemble,
    thetas: &[f64],
    snapshots: usize,
    method: FimMethod,
) -> Result<FisherMatrix> {
    let j = match method {
        FimMethod::TraceForm => fim_trace_form(geometry, ensemble, thetas, snapshots)?,
        FimMethod::VecForm => fim_vec_form(geometry, ensemble, thetas, snapshots)?,
    };
    let theta_block = invert_and_extract(j, ensemble.num_sources())?;
    Ok(FisherMatrix {
        theta_block,
        method,
    })
}

fn invert_and_extract(j: DMatrix<f64>, num_sources: usize) -> Result<DMatrix<f64>> {
    let n = j.nrows();
    let j = (j.transpose() + &j).scale(0.5);
    // Jacobi equilibration: D^-1 J D^-1 with D = sqrt(diag).
    let mut scale = DVector::zeros(n);
    for i in 0..n {
        let d = j[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::DegenerateGeometry {
                condition: f64::INFINITY,
            });
        }
        scale[i] = d.sqrt();
    }
    let mut eq = j;
    for r in 0..n {
        for c in 0..n {
            eq[(r, c)] /= scale[r] * scale[c];
        }
    }
    let eig = eq.symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) || max / min > CONDITION_LIMIT {
        return Err(Error::DegenerateGeometry {
            condition: if min > 0.0 { max / min } else { f64::INFINITY },
        });
    }
    // Inverse of the equilibrated matrix, undone through the same scaling.
    let v = &eig.eigenvectors;
    let inv_l = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
    let inv_eq = v * inv_l * v.transpose();
    let mut block = DMatrix::zeros(num_sources, num_sources);
    for r in 0..num_sources {
        for c in 0..num_sources {
            block[(r, c)] = inv_eq[(r, c)] / (scale[r] * scale[c]);
        }
    }
    Ok((block.transpose() + &block).scale(0.5))
}
