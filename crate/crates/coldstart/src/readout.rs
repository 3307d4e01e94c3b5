//! Linear readout fitted by closed-form ridge regression on demeaned states
//! and demeaned one-step-ahead targets.
//!
//! The solve is `(X X^T + lambda I) W^T = X U^T` on the centered matrices,
//! via Cholesky on the N x N Gram matrix. Means are pooled over the
//! post-washout training columns of all trajectories and stored in the
//! readout, so predictions come back in observation units.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use ndarray_linalg::cholesky::{FactorizeC, SolveC, UPLO};
use serde::{Deserialize, Serialize};

use crate::dynamics::ObservationSeries;
use crate::error::{Error, Result};
use crate::reservoir::StateSeries;

/// Anything that maps a reservoir state to a (here scalar) observation.
pub trait Readout: Send + Sync {
    fn predict(&self, state: &ArrayView1<f64>) -> Array1<f64>;
    fn output_dim(&self) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeConfig {
    pub lambda: f64,
}

impl RidgeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!(
                "ridge penalty must be positive, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// `y = W (x - state_mean) + target_mean`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearReadout {
    /// d x N weights.
    pub weights: Array2<f64>,
    pub state_mean: Array1<f64>,
    pub target_mean: Array1<f64>,
}

impl Readout for LinearReadout {
    fn predict(&self, state: &ArrayView1<f64>) -> Array1<f64> {
        let centered = state.to_owned() - &self.state_mean;
        self.weights.dot(&centered) + &self.target_mean
    }

    fn output_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// Solves `(G + lambda I) W^T = B` for W (d x N) given the SPD Gram part.
fn solve_spd(mut gram: Array2<f64>, cross: &Array2<f64>, lambda: f64) -> Result<Array2<f64>> {
    let n = gram.nrows();
    for i in 0..n {
        gram[[i, i]] += lambda;
    }
    let factor = gram.factorizec(UPLO::Lower).map_err(|e| {
        Error::Linalg(format!(
            "Cholesky failed ({e}); lambda may be too small for the conditioning"
        ))
    })?;
    let d = cross.ncols();
    let mut wt = Array2::zeros((n, d));
    for j in 0..d {
        let col = factor.solvec(&cross.column(j).to_owned())?;
        wt.column_mut(j).assign(&col);
    }
    Ok(wt.t().to_owned())
}

/// Raw closed-form ridge solve on already-centered matrices.
///
/// `x` is N x T (states as columns), `u` is d x T. No demeaning happens here;
/// [`fit_ridge`] centers first and stores the means.
pub fn ridge_solve(x: &ArrayView2<f64>, u: &ArrayView2<f64>, lambda: f64) -> Result<Array2<f64>> {
    if x.ncols() != u.ncols() {
        return Err(Error::DimensionMismatch {
            expected: x.ncols(),
            got: u.ncols(),
            context: "ridge_solve sample counts",
        });
    }
    let gram = x.dot(&x.t());
    let cross = x.dot(&u.t());
    solve_spd(gram, &cross, lambda)
}

/// Streaming assembly of the ridge normal equations.
///
/// Columns can arrive in any grouping (whole trajectories or one time step
/// of a batched drive); only the accumulation order matters for bitwise
/// reproducibility, and callers keep that fixed.
pub struct RidgeAccumulator {
    state_dim: usize,
    target_dim: usize,
    gram: Array2<f64>,
    cross: Array2<f64>,
    sum_x: Array1<f64>,
    sum_u: Array1<f64>,
    count: usize,
}

impl RidgeAccumulator {
    pub fn new(state_dim: usize, target_dim: usize) -> Self {
        Self {
            state_dim,
            target_dim,
            gram: Array2::zeros((state_dim, state_dim)),
            cross: Array2::zeros((state_dim, target_dim)),
            sum_x: Array1::zeros(state_dim),
            sum_u: Array1::zeros(target_dim),
            count: 0,
        }
    }

    /// Adds a block of samples: `states` N x B, `targets` d x B.
    pub fn push_cols(&mut self, states: &ArrayView2<f64>, targets: &ArrayView2<f64>) {
        debug_assert_eq!(states.nrows(), self.state_dim);
        debug_assert_eq!(targets.nrows(), self.target_dim);
        debug_assert_eq!(states.ncols(), targets.ncols());
        self.gram += &states.dot(&states.t());
        self.cross += &states.dot(&targets.t());
        self.sum_x += &states.sum_axis(Axis(1));
        self.sum_u += &targets.sum_axis(Axis(1));
        self.count += states.ncols();
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Centers the accumulated moments and solves the ridge system.
    pub fn finish(self, cfg: &RidgeConfig) -> Result<LinearReadout> {
        cfg.validate()?;
        if self.count == 0 {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        let n = self.count as f64;
        let mean_x = &self.sum_x / n;
        let mean_u = &self.sum_u / n;
        // sum (x-mx)(x-mx)^T = sum x x^T - n mx mx^T, same for the cross term.
        let mut gram = self.gram;
        let mut cross = self.cross;
        for i in 0..self.state_dim {
            for j in 0..self.state_dim {
                gram[[i, j]] -= n * mean_x[i] * mean_x[j];
            }
        }
        for i in 0..self.state_dim {
            for j in 0..self.target_dim {
                cross[[i, j]] -= n * mean_x[i] * mean_u[j];
            }
        }
        let weights = solve_spd(gram, &cross, cfg.lambda)?;
        Ok(LinearReadout {
            weights,
            state_mean: mean_x,
            target_mean: mean_u,
        })
    }
}

/// Fits the ridge readout from per-trajectory aligned state/target pairs.
///
/// `states[k].state(t)` must already be aligned with its one-step-ahead
/// target `targets[k].values[t]`; the experiment layer builds that pairing.
pub fn fit_ridge(
    states: &[StateSeries],
    targets: &[ObservationSeries],
    cfg: &RidgeConfig,
) -> Result<LinearReadout> {
    cfg.validate()?;
    if states.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: states.len(),
            got: targets.len(),
            context: "fit_ridge trajectory counts",
        });
    }
    let state_dim = states
        .first()
        .map(|s| s.states.ncols())
        .ok_or(Error::InsufficientData { needed: 1, got: 0 })?;
    let mut acc = RidgeAccumulator::new(state_dim, 1);
    for (s, t) in states.iter().zip(targets) {
        if s.len() != t.len() {
            return Err(Error::LengthMismatch {
                left: s.len(),
                right: t.len(),
            });
        }
        let x = s.states.t();
        let u = Array2::from_shape_vec((1, t.len()), t.values.clone())
            .map_err(|e| Error::Config(e.to_string()))?;
        acc.push_cols(&x, &u.view());
    }
    acc.finish(cfg)
}

pub fn save_linear_readout(readout: &LinearReadout, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    crate::matio::write_matrix(&dir.join("readout_w.mat"), &readout.weights)?;
    let n = readout.state_mean.len();
    let sm = readout.state_mean.clone().into_shape((n, 1)).unwrap();
    crate::matio::write_matrix(&dir.join("readout_state_mean.mat"), &sm)?;
    let d = readout.target_mean.len();
    let tm = readout.target_mean.clone().into_shape((d, 1)).unwrap();
    crate::matio::write_matrix(&dir.join("readout_target_mean.mat"), &tm)?;
    Ok(())
}

pub fn load_linear_readout(dir: &Path) -> Result<LinearReadout> {
    let weights = crate::matio::read_matrix(&dir.join("readout_w.mat"))?;
    let sm = crate::matio::read_matrix(&dir.join("readout_state_mean.mat"))?;
    let tm = crate::matio::read_matrix(&dir.join("readout_target_mean.mat"))?;
    Ok(LinearReadout {
        weights,
        state_mean: sm.column(0).to_owned(),
        target_mean: tm.column(0).to_owned(),
    })
}
