//! Principal component analysis with a zero-padded inverse, used by the
//! PCA+MLP starting-map backend to compress reservoir states.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use ndarray_linalg::SVD;

use crate::error::{Error, Result};

/// Mean and the K leading principal directions of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// N x K orthonormal columns.
    pub components: Array2<f64>,
    /// Nonincreasing, length K.
    pub explained_variance: Array1<f64>,
}

/// Fits PCA by SVD of the mean-centered data (rows are samples).
///
/// Component signs follow a fixed convention: the entry of largest magnitude
/// in each column is made positive, so results agree across eigensolvers.
pub fn fit_pca(data: &Array2<f64>, k: usize) -> Result<PcaModel> {
    let (n, dim) = data.dim();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    if k == 0 || k > n.min(dim) {
        return Err(Error::ComponentCountOutOfRange { k, n, dim });
    }
    let mean = data.mean_axis(Axis(0)).expect("n >= 2");
    let centered = data - &mean.clone().insert_axis(Axis(0));
    let (_, s, vt) = centered.svd(false, true)?;
    let vt = vt.expect("requested V^T");

    let mut components = Array2::zeros((dim, k));
    for j in 0..k {
        components.column_mut(j).assign(&vt.row(j));
    }
    for mut col in components.columns_mut() {
        let mut best = 0.0f64;
        let mut best_abs = -1.0f64;
        for &v in col.iter() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = v;
            }
        }
        if best < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
    let explained_variance =
        Array1::from_iter(s.iter().take(k).map(|sv| sv * sv / (n as f64 - 1.0)));
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
    })
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.ncols()
    }

    /// `components^T (x - mean)`.
    pub fn project(&self, x: &ArrayView1<f64>) -> Array1<f64> {
        let centered = x.to_owned() - &self.mean;
        self.components.t().dot(&centered)
    }

    /// `mean + components y`: pad the trailing coefficients with zeros and
    /// invert the orthonormal transform.
    pub fn inverse_zero_pad(&self, y: &ArrayView1<f64>) -> Array1<f64> {
        self.components.dot(y) + &self.mean
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::Rng;

    use crate::linalg::sym_eig_desc;
    use crate::rng::substream;

    #[test]
    fn rank_one_data_concentrates_variance() {
        let mut rng = substream(1, 0);
        let dir = array![0.6, -0.8, 0.0];
        let mut data = Array2::zeros((20, 3));
        for i in 0..20 {
            let t: f64 = rng.gen::<f64>() * 4.0 - 2.0;
            for c in 0..3 {
                data[[i, c]] = 1.0 + t * dir[c];
            }
        }
        let model = fit_pca(&data, 3).unwrap();
        let total: f64 = model.explained_variance.sum();
        assert_relative_eq!(model.explained_variance[0], total, max_relative = 1e-10);
    }

    #[test]
    fn svd_matches_covariance_eigensolve_oracle() {
        let mut rng = substream(2, 0);
        let data = Array2::from_shape_simple_fn((5, 3), || rng.gen::<f64>() * 2.0 - 0.5);
        let model = fit_pca(&data, 3).unwrap();

        // Oracle: eigendecomposition of the covariance matrix.
        let mean = data.mean_axis(Axis(0)).unwrap();
        let centered = &data - &mean.clone().insert_axis(Axis(0));
        let cov = centered.t().dot(&centered) / 4.0;
        let (vals, vecs) = sym_eig_desc(&cov).unwrap();
        for j in 0..3 {
            assert_relative_eq!(model.explained_variance[j], vals[j], epsilon = 1e-10);
            // Same sign convention as fit_pca before comparing.
            let col = vecs.column(j);
            let mut best = 0.0f64;
            let mut best_abs = -1.0;
            for &v in col.iter() {
                if v.abs() > best_abs {
                    best_abs = v.abs();
                    best = v;
                }
            }
            let flip = if best < 0.0 { -1.0 } else { 1.0 };
            for i in 0..3 {
                assert_relative_eq!(model.components[[i, j]], flip * col[i], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn components_are_orthonormal() {
        let mut rng = substream(3, 0);
        let data = Array2::from_shape_simple_fn((40, 10), || rng.gen::<f64>());
        let model = fit_pca(&data, 6).unwrap();
        let gram = model.components.t().dot(&model.components);
        for i in 0..6 {
            for j in 0..6 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(gram[[i, j]], expected, epsilon = 1e-10);
            }
        }
        for w in model.explained_variance.windows(2) {
            assert!(w[0] >= w[1] - 1e-12);
        }
    }

    #[test]
    fn project_basics() {
        let mut rng = substream(4, 0);
        let data = Array2::from_shape_simple_fn((30, 6), || rng.gen::<f64>());
        let model = fit_pca(&data, 3).unwrap();

        let y = model.project(&model.mean.view());
        assert!(y.iter().all(|v| v.abs() < 1e-12));

        let x = &model.mean + &model.components.column(0);
        let y = model.project(&x.view());
        assert_relative_eq!(y[0], 1.0, epsilon = 1e-10);
        assert!(y[1].abs() < 1e-10 && y[2].abs() < 1e-10);
    }

    #[test]
    fn round_trip_error_is_residual_outside_subspace() {
        let mut rng = substream(5, 0);
        let data = Array2::from_shape_simple_fn((25, 8), || rng.gen::<f64>());
        let model = fit_pca(&data, 3).unwrap();
        let x = Array1::from_shape_simple_fn(8, || rng.gen::<f64>() * 2.0);
        let y = model.project(&x.view());
        let back = model.inverse_zero_pad(&y.view());
        let err2: f64 = (&x - &back).iter().map(|v| v * v).sum();
        // Pythagoras: ||x - mean||^2 = ||proj||^2 + ||residual||^2.
        let centered = &x - &model.mean;
        let expected = centered.dot(&centered) - y.dot(&y);
        assert_relative_eq!(err2, expected, max_relative = 1e-9, epsilon = 1e-12);
    }

    #[test]
    fn zero_pads_and_complete_basis_round_trip() {
        let mut rng = substream(6, 0);
        let data = Array2::from_shape_simple_fn((12, 5), || rng.gen::<f64>());
        let model = fit_pca(&data, 5).unwrap();
        let back = model.inverse_zero_pad(&Array1::zeros(5).view());
        for i in 0..5 {
            assert_relative_eq!(back[i], model.mean[i], epsilon = 1e-14);
        }
        let x = Array1::from_shape_simple_fn(5, || rng.gen::<f64>());
        let roundtrip = model.inverse_zero_pad(&model.project(&x.view()).view());
        for i in 0..5 {
            assert_relative_eq!(roundtrip[i], x[i], epsilon = 1e-10);
        }
        // project ∘ inverse_zero_pad is the identity on coefficient space.
        let y = Array1::from_shape_simple_fn(5, || rng.gen::<f64>() - 0.5);
        let again = model.project(&model.inverse_zero_pad(&y.view()).view());
        for i in 0..5 {
            assert_relative_eq!(again[i], y[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn reconstruction_beats_random_frames() {
        let mut rng = substream(7, 0);
        let data = Array2::from_shape_simple_fn((40, 10), |(i, j)| {
            // Anisotropic data so PCA has something to find.
            let base = (i as f64 * 0.3).sin() * (1.0 + j as f64);
            base * 0.2 + rng.gen::<f64>()
        });
        let k = 3;
        let model = fit_pca(&data, k).unwrap();
        let mean = data.mean_axis(Axis(0)).unwrap();

        let mse_under = |frame: &Array2<f64>| {
            let mut total = 0.0;
            for row in data.rows() {
                let centered = &row.to_owned() - &mean;
                let coeffs = frame.t().dot(&centered);
                let recon = frame.dot(&coeffs);
                let resid = &centered - &recon;
                total += resid.dot(&resid);
            }
            total / data.nrows() as f64
        };
        let pca_mse = mse_under(&model.components);

        for trial in 0..20u64 {
            let mut rng = substream(8, trial);
            // Random orthonormal frame via Gram-Schmidt.
            let mut frame = Array2::zeros((10, k));
            for j in 0..k {
                let mut v = Array1::from_shape_simple_fn(10, || rng.gen::<f64>() - 0.5);
                for prev in 0..j {
                    let p = frame.column(prev);
                    let proj = v.dot(&p);
                    v = v - &p.to_owned() * proj;
                }
                let norm = v.dot(&v).sqrt();
                frame.column_mut(j).assign(&(v / norm));
            }
            assert!(pca_mse <= mse_under(&frame) + 1e-12, "trial {trial}");
        }
    }

    #[test]
    fn k_out_of_range_rejected() {
        let data = Array2::zeros((4, 3));
        assert!(fit_pca(&data, 0).is_err());
        assert!(fit_pca(&data, 4).is_err());
    }
}
