//! Geometric harmonics: a spectrally truncated Gaussian-kernel eigenbasis on
//! reduced coordinates, extended to new points by the Nystrom formula.
//!
//! Fitting eigendecomposes the kernel matrix `C` on the training coordinates
//! and keeps the eigenpairs with `sigma > delta * sigma_1`; a vector-valued
//! function is projected once onto that basis. Extension evaluates
//! `psi_new = sigma^-1 C(b_new, .) psi` per kept mode and recombines, so
//! the inverse eigenvalues stay bounded by `(delta * sigma_1)^-1`.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::linalg::sym_eig_desc;
use crate::manifold::{epsilon_from_rule, gaussian_affinity, EpsilonRule};

/// Fitted geometric-harmonics extension of an n x N function table.
#[derive(Debug, Clone, PartialEq)]
pub struct GhModel {
    /// n x d training coordinates.
    pub coords: Array2<f64>,
    /// n x N function values the model was fitted on.
    pub targets: Array2<f64>,
    /// Kernel scale.
    pub epsilon_prime: f64,
    /// n x s retained orthonormal eigenvectors.
    pub eigvecs: Array2<f64>,
    /// Retained eigenvalues, descending, all above `delta * sigma_1`.
    pub eigvals: Array1<f64>,
    pub delta: f64,
    /// s x N projection coefficients `psi^T F`.
    pub projected_coeffs: Array2<f64>,
}

/// Result of a Nystrom extension query.
#[derive(Debug, Clone, PartialEq)]
pub struct Extension {
    pub value: Array1<f64>,
    /// Set when the query sits farther than `3 sqrt(epsilon')` from every
    /// training coordinate.
    pub extrapolated: bool,
}

/// Fits the kernel eigenbasis on `coords` and projects `targets` onto the
/// significant modes.
pub fn fit_gh(
    coords: &Array2<f64>,
    targets: &Array2<f64>,
    delta: f64,
    epsilon_rule: EpsilonRule,
) -> Result<GhModel> {
    let (n, d) = coords.dim();
    if targets.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: targets.nrows(),
            context: "fit_gh target rows",
        });
    }
    if n <= d + 1 {
        return Err(Error::InsufficientData { needed: d + 1, got: n });
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("delta must lie in (0,1), got {delta}")));
    }

    let epsilon_prime = epsilon_from_rule(epsilon_rule, &coords.view())?;
    let affinity = gaussian_affinity(&coords.view(), epsilon_prime);
    let (sigmas, psis) = sym_eig_desc(&affinity)?;
    let sigma1 = sigmas[0];
    if !(sigma1 > 0.0) {
        return Err(Error::DegenerateMatrix);
    }

    let kept = sigmas.iter().take_while(|&&s| s > delta * sigma1).count();
    if kept <= d {
        return Err(Error::ThresholdTooStrict { kept, min: d });
    }
    if kept == n {
        log::warn!(
            "geometric harmonics kept all {n} modes; delta = {delta} may be too loose"
        );
    }

    let eigvals = sigmas.slice(ndarray::s![..kept]).to_owned();
    let eigvecs = psis.slice(ndarray::s![.., ..kept]).to_owned();
    let projected_coeffs = eigvecs.t().dot(targets);
    Ok(GhModel {
        coords: coords.clone(),
        targets: targets.clone(),
        epsilon_prime,
        eigvecs,
        eigvals,
        delta,
        projected_coeffs,
    })
}

impl GhModel {
    pub fn n_kept(&self) -> usize {
        self.eigvals.len()
    }

    pub fn output_dim(&self) -> usize {
        self.projected_coeffs.ncols()
    }
}

/// Nystrom extension of the fitted function to a new coordinate.
pub fn extend(model: &GhModel, query: &ArrayView1<f64>) -> Result<Extension> {
    let (n, d) = model.coords.dim();
    if query.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: query.len(),
            context: "extend query dimension",
        });
    }
    let mut kernel_row = Array1::zeros(n);
    let mut min_sq = f64::INFINITY;
    for i in 0..n {
        let mut sq = 0.0;
        for c in 0..d {
            let diff = query[c] - model.coords[[i, c]];
            sq += diff * diff;
        }
        min_sq = min_sq.min(sq);
        kernel_row[i] = (-sq / (2.0 * model.epsilon_prime)).exp();
    }
    // psi_new_alpha = sigma_alpha^-1 <C(b_new, .), psi_alpha>
    let mut psi_new = model.eigvecs.t().dot(&kernel_row);
    for (alpha, v) in psi_new.iter_mut().enumerate() {
        *v /= model.eigvals[alpha];
    }
    let value = model.projected_coeffs.t().dot(&psi_new);
    let extrapolated = min_sq.sqrt() > 3.0 * model.epsilon_prime.sqrt();
    Ok(Extension { value, extrapolated })
}
