//! Leaky echo state network: random generation with spectral-radius control,
//! the driven recursion, listening with washout, autonomous path continuation
//! and contraction diagnostics.
//!
//! The state update is `x <- (1-a) x + a tanh(A x + C z)` with leak rate `a`.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::ObservationSeries;
use crate::error::{Error, Result};
use crate::linalg::matvec;
use crate::readout::Readout;
use crate::rng::substream;

/// Entry distribution for the random matrices, before rescaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixDist {
    /// Uniform on [0, 1].
    Uniform01,
    /// Uniform on [-1, 1].
    UniformSym,
}

impl MatrixDist {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            MatrixDist::Uniform01 => rng.gen::<f64>(),
            MatrixDist::UniformSym => 2.0 * rng.gen::<f64>() - 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsnParams {
    pub n_states: usize,
    pub leak_rate: f64,
    pub spectral_radius: f64,
    pub input_dim: usize,
    pub matrix_dist: MatrixDist,
    pub seed: u64,
}

impl EsnParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.input_dim == 0 {
            return Err(Error::Config("n_states and input_dim must be positive".into()));
        }
        if !(self.leak_rate > 0.0 && self.leak_rate <= 1.0) {
            return Err(Error::Config(format!(
                "leak rate must lie in (0, 1], got {}",
                self.leak_rate
            )));
        }
        if !(self.spectral_radius > 0.0) {
            return Err(Error::Config("spectral radius target must be positive".into()));
        }
        Ok(())
    }
}

/// A generated reservoir; immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct EsnModel {
    /// N x N connectivity, rescaled so its spectral radius hits the target.
    pub a_matrix: Array2<f64>,
    /// N x d input matrix, not rescaled.
    pub c_matrix: Array2<f64>,
    pub params: EsnParams,
}

/// Reservoir states over time; `states.row(t)` is the state after input t.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSeries {
    pub states: Array2<f64>,
}

impl StateSeries {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    pub fn state(&self, t: usize) -> ArrayView1<'_, f64> {
        self.states.row(t)
    }
}

/// Spectral radius estimate by power iteration.
///
/// Runs until the estimate's relative change drops below 1e-12, up to
/// `max_iter` sweeps. Nonnegative matrices (the `Uniform01` default) have a
/// real dominant Perron eigenvalue, so this converges quickly; matrices with
/// a complex dominant pair make the estimate oscillate, which is reported as
/// stagnation and handled by the dense fallback in [`generate`].
pub fn spectral_radius_power(a: &Array2<f64>, max_iter: usize) -> Result<f64> {
    let n = a.nrows();
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut rho_prev = f64::NAN;
    let mut change = f64::INFINITY;
    for _ in 0..max_iter {
        let w = matvec(&a.view(), &v.view());
        let norm = w.dot(&w).sqrt();
        if norm < 1e-300 {
            return Err(Error::DegenerateMatrix);
        }
        let rho = norm;
        v = w / norm;
        change = ((rho - rho_prev) / rho).abs();
        rho_prev = rho;
        if change < 1e-12 {
            return Ok(rho);
        }
    }
    Err(Error::PowerIterationStagnated {
        iters: max_iter,
        change,
    })
}

/// Largest singular value, via power iteration on A^T A.
pub fn operator_norm(a: &Array2<f64>) -> Result<f64> {
    let n = a.ncols();
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut sigma_prev = f64::NAN;
    for _ in 0..10_000 {
        let w = matvec(&a.view(), &v.view());
        let u = matvec(&a.t(), &w.view());
        let norm = u.dot(&u).sqrt();
        if norm < 1e-300 {
            return Ok(0.0);
        }
        let sigma = norm.sqrt();
        v = u / norm;
        if ((sigma - sigma_prev) / sigma).abs() < 1e-13 {
            return Ok(sigma);
        }
        sigma_prev = sigma;
    }
    // A^T A is symmetric positive semidefinite, so the estimate is monotone;
    // whatever we have after the cap is accurate enough for a diagnostic.
    Ok(sigma_prev)
}

/// Generates the random reservoir and rescales A to the target spectral
/// radius.
///
/// A draws from ChaCha substream 0 of `params.seed`, C from substream 1,
/// entries in row-major order; bit-reproducible for a fixed seed.
pub fn generate(params: &EsnParams) -> Result<EsnModel> {
    params.validate()?;
    let n = params.n_states;
    let d = params.input_dim;

    let mut rng_a = substream(params.seed, 0);
    let a_raw = Array2::from_shape_simple_fn((n, n), || params.matrix_dist.sample(&mut rng_a));
    let mut rng_c = substream(params.seed, 1);
    let c_matrix = Array2::from_shape_simple_fn((n, d), || params.matrix_dist.sample(&mut rng_c));

    let rho = match spectral_radius_power(&a_raw, 5000) {
        Ok(r) => r,
        Err(Error::PowerIterationStagnated { .. }) if n <= 512 => {
            // Complex dominant pair; fall back to a dense eigensolve.
            use ndarray_linalg::Eig;
            let (vals, _) = a_raw.eig()?;
            vals.iter().map(|z| z.norm()).fold(0.0f64, f64::max)
        }
        Err(e) => return Err(e),
    };
    if rho < 1e-12 {
        return Err(Error::DegenerateMatrix);
    }
    let a_matrix = a_raw * (params.spectral_radius / rho);
    Ok(EsnModel {
        a_matrix,
        c_matrix,
        params: params.clone(),
    })
}

/// One update `x <- (1-a) x + a tanh(A x + C z)`.
///
/// Row-by-row matvec keeps the arithmetic independent of BLAS threading, so
/// the recursion is bitwise reproducible across schedules.
pub fn step(model: &EsnModel, state: &ArrayView1<f64>, input: &ArrayView1<f64>) -> Array1<f64> {
    debug_assert_eq!(state.len(), model.params.n_states);
    debug_assert_eq!(input.len(), model.params.input_dim);
    let alpha = model.params.leak_rate;
    let mut pre = matvec(&model.a_matrix.view(), state);
    pre += &matvec(&model.c_matrix.view(), input);
    pre.mapv_inplace(f64::tanh);
    state.to_owned() * (1.0 - alpha) + pre * alpha
}

/// Drives the reservoir over `inputs` from `x0` and returns the states after
/// discarding the first `washout` of them.
pub fn listen(
    model: &EsnModel,
    inputs: &ObservationSeries,
    x0: &ArrayView1<f64>,
    washout: usize,
) -> Result<StateSeries> {
    if model.params.input_dim != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: model.params.input_dim,
            context: "listen takes scalar observations",
        });
    }
    let t_total = inputs.len();
    if washout >= t_total {
        return Err(Error::InsufficientData {
            needed: washout,
            got: t_total,
        });
    }
    let n = model.params.n_states;
    let kept = t_total - washout;
    let mut states = Array2::zeros((kept, n));
    let mut x = x0.to_owned();
    for (t, &u) in inputs.values.iter().enumerate() {
        let z = Array1::from_elem(1, u);
        x = step(model, &x.view(), &z.view());
        if t >= washout {
            states.row_mut(t - washout).assign(&x);
        }
    }
    Ok(StateSeries { states })
}

/// Batched scalar-input drive from the zero state, streaming states to a
/// callback.
///
/// `inputs` is T x B: column b holds trajectory b's observations. After
/// consuming input row t the callback receives `(t, states)` with states as
/// an N x B matrix (column b = state of trajectory b). Uses GEMM, so across
/// a *fixed* batch shape results are reproducible, and each column depends
/// only on its own trajectory.
pub fn drive_fold<F>(model: &EsnModel, inputs: &Array2<f64>, mut visit: F) -> Result<()>
where
    F: FnMut(usize, &Array2<f64>),
{
    if model.params.input_dim != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: model.params.input_dim,
            context: "drive_fold takes scalar observations",
        });
    }
    let (t_total, batch) = inputs.dim();
    let n = model.params.n_states;
    let alpha = model.params.leak_rate;
    let mut x = Array2::zeros((n, batch));
    for t in 0..t_total {
        let z = inputs.row(t).insert_axis(Axis(0)); // 1 x B
        let mut pre = model.a_matrix.dot(&x);
        pre += &model.c_matrix.dot(&z);
        pre.mapv_inplace(f64::tanh);
        x = x * (1.0 - alpha) + pre * alpha;
        visit(t, &x);
    }
    Ok(())
}

/// Closed-loop run: feed the readout's prediction back as the next input.
///
/// Starting from `x_init` (a state consistent with the last observed step),
/// repeats `y = h(x); x = F(x, y)` for `horizon` steps and returns the
/// visited states and predicted observations.
pub fn autonomous_run(
    model: &EsnModel,
    readout: &dyn Readout,
    x_init: &ArrayView1<f64>,
    horizon: usize,
) -> Result<(StateSeries, ObservationSeries)> {
    if horizon == 0 {
        return Err(Error::Config("autonomous horizon must be at least 1".into()));
    }
    if model.params.input_dim != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: model.params.input_dim,
            context: "autonomous_run emits scalar observations",
        });
    }
    let n = model.params.n_states;
    let mut states = Array2::zeros((horizon, n));
    let mut values = Vec::with_capacity(horizon);
    let mut x = x_init.to_owned();
    for h in 0..horizon {
        let y = readout.predict(&x.view());
        values.push(y[0]);
        x = step(model, &x.view(), &y.view());
        states.row_mut(h).assign(&x);
    }
    Ok((StateSeries { states }, ObservationSeries { values }))
}

/// Analytic bound (1-a) + a*||A||_2 on the state-contraction constant of the
/// leaky tanh reservoir (tanh' <= 1).
pub fn contraction_bound(model: &EsnModel) -> Result<f64> {
    let alpha = model.params.leak_rate;
    Ok((1.0 - alpha) + alpha * operator_norm(&model.a_matrix)?)
}

/// Lipschitz constant bound `l / (1 - l)` for the synchronization map.
pub fn gs_lipschitz_bound(l_fx: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&l_fx) {
        return Err(Error::BoundInapplicable { l_fx });
    }
    Ok(l_fx / (1.0 - l_fx))
}

/// Persists A, C and the params sidecar under `dir` (esn_a.mat, esn_c.mat,
/// esn_params.json).
pub fn save_model(model: &EsnModel, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    crate::matio::write_matrix(&dir.join("esn_a.mat"), &model.a_matrix)?;
    crate::matio::write_matrix(&dir.join("esn_c.mat"), &model.c_matrix)?;
    let json = serde_json::to_string_pretty(&model.params)
        .map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(dir.join("esn_params.json"), json)?;
    Ok(())
}

pub fn load_model(dir: &Path) -> Result<EsnModel> {
    let a_matrix = crate::matio::read_matrix(&dir.join("esn_a.mat"))?;
    let c_matrix = crate::matio::read_matrix(&dir.join("esn_c.mat"))?;
    let params: EsnParams =
        serde_json::from_str(&std::fs::read_to_string(dir.join("esn_params.json"))?)
            .map_err(|e| Error::Config(e.to_string()))?;
    if a_matrix.nrows() != params.n_states || c_matrix.ncols() != params.input_dim {
        return Err(Error::Config("model dump inconsistent with params sidecar".into()));
    }
    Ok(EsnModel {
        a_matrix,
        c_matrix,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use ndarray_linalg::Eig;

    fn small_params(n: usize, seed: u64) -> EsnParams {
        EsnParams {
            n_states: n,
            leak_rate: 0.51,
            spectral_radius: 0.98,
            input_dim: 1,
            matrix_dist: MatrixDist::Uniform01,
            seed,
        }
    }

    #[test]
    fn generate_is_deterministic() {
        let p = small_params(32, 9);
        let m1 = generate(&p).unwrap();
        let m2 = generate(&p).unwrap();
        assert_eq!(m1.a_matrix, m2.a_matrix);
        assert_eq!(m1.c_matrix, m2.c_matrix);
    }

    #[test]
    fn rescaled_radius_matches_dense_eig_oracle() {
        // 3x3 and a larger case, both checked against a dense eigensolve.
        for (n, seed) in [(3usize, 4u64), (64, 5)] {
            let model = generate(&small_params(n, seed)).unwrap();
            let (vals, _) = model.a_matrix.eig().unwrap();
            let rho = vals.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
            assert_relative_eq!(rho, 0.98, max_relative = 1e-8);
        }
    }

    #[test]
    fn uniform_sym_generation_hits_target_radius() {
        let p = EsnParams {
            matrix_dist: MatrixDist::UniformSym,
            ..small_params(48, 3)
        };
        let model = generate(&p).unwrap();
        let (vals, _) = model.a_matrix.eig().unwrap();
        let rho = vals.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
        assert_relative_eq!(rho, 0.98, max_relative = 1e-6);
    }

    #[test]
    fn step_zero_matrices_gives_zero() {
        let model = EsnModel {
            a_matrix: Array2::zeros((4, 4)),
            c_matrix: Array2::zeros((4, 1)),
            params: EsnParams {
                leak_rate: 1.0,
                ..small_params(4, 0)
            },
        };
        let x = array![0.3, -0.2, 0.9, 0.0];
        let out = step(&model, &x.view(), &array![0.7].view());
        assert_eq!(out, Array1::zeros(4));
    }

    #[test]
    fn vanishing_leak_rate_freezes_state() {
        let mut model = generate(&small_params(8, 1)).unwrap();
        model.params.leak_rate = 1e-12;
        let x = Array1::linspace(-0.5, 0.5, 8);
        let out = step(&model, &x.view(), &array![0.4].view());
        for i in 0..8 {
            assert!((out[i] - x[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn step_matches_hand_evaluation() {
        let model = EsnModel {
            a_matrix: array![[0.5, 0.0], [0.0, 0.5]],
            c_matrix: array![[1.0], [1.0]],
            params: EsnParams {
                leak_rate: 1.0,
                ..small_params(2, 0)
            },
        };
        let out = step(&model, &array![0.0, 0.0].view(), &array![0.3].view());
        let expected = 0.3f64.tanh(); // 0.29131261245159090
        assert_relative_eq!(out[0], expected, epsilon = 1e-15);
        assert_relative_eq!(out[1], expected, epsilon = 1e-15);
        assert_relative_eq!(out[0], 0.29131261245159090, epsilon = 1e-12);
    }

    fn series(values: Vec<f64>) -> ObservationSeries {
        ObservationSeries { values }
    }

    #[test]
    fn listen_counts_and_errors() {
        let model = generate(&small_params(16, 2)).unwrap();
        let inputs = series((0..150).map(|i| (i as f64 * 0.1).sin()).collect());
        let x0 = Array1::zeros(16);
        let out = listen(&model, &inputs, &x0.view(), 1).unwrap();
        assert_eq!(out.len(), 149);

        let short = series(vec![0.5]);
        assert!(listen(&model, &short, &x0.view(), 1).is_err());

        let single = listen(&model, &short, &x0.view(), 0).unwrap();
        assert_eq!(single.len(), 1);
        let direct = step(&model, &x0.view(), &array![0.5].view());
        assert_eq!(single.state(0).to_owned(), direct);
    }

    #[test]
    fn drive_fold_matches_single_steps() {
        let model = generate(&small_params(24, 11)).unwrap();
        let t_total = 40;
        let batch = 3;
        let inputs = Array2::from_shape_fn((t_total, batch), |(t, b)| {
            ((t as f64) * 0.07 + b as f64).sin()
        });
        let mut collected: Vec<Array2<f64>> = Vec::new();
        drive_fold(&model, &inputs, |_, x| collected.push(x.clone())).unwrap();
        assert_eq!(collected.len(), t_total);

        for b in 0..batch {
            let obs = series(inputs.column(b).to_vec());
            let states = listen(&model, &obs, &Array1::zeros(24).view(), 0).unwrap();
            for t in 0..t_total {
                for i in 0..24 {
                    assert_relative_eq!(
                        collected[t][[i, b]],
                        states.states[[t, i]],
                        epsilon = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn states_stay_in_tanh_hull() {
        let model = generate(&EsnParams {
            leak_rate: 1.0,
            ..small_params(32, 6)
        }).unwrap();
        let x0 = Array1::from_elem(32, 3.0);
        let out = step(&model, &x0.view(), &array![0.2].view());
        assert!(out.iter().all(|v| v.abs() < 1.0));

        let model_leaky = generate(&small_params(32, 6)).unwrap(); // alpha = 0.51
        let out = step(&model_leaky, &x0.view(), &array![0.2].view());
        // Convex combination of 3.0 and tanh image.
        assert!(out.iter().all(|v| *v <= 3.0 && *v > -1.0));
        let mut x = x0.clone();
        for _ in 0..100 {
            x = step(&model_leaky, &x.view(), &array![0.2].view());
        }
        assert!(x.iter().all(|v| v.abs() <= 1.0 + 1e-12));
    }

    #[test]
    fn contraction_bound_formula_and_svd_oracle() {
        // alpha = 1, ||A|| = 0.9 -> 0.9; alpha = 0.5, ||A|| = 0.8 -> 0.9.
        let model = EsnModel {
            a_matrix: Array2::eye(3) * 0.9,
            c_matrix: Array2::zeros((3, 1)),
            params: EsnParams {
                leak_rate: 1.0,
                ..small_params(3, 0)
            },
        };
        assert_relative_eq!(contraction_bound(&model).unwrap(), 0.9, epsilon = 1e-10);
        let model = EsnModel {
            a_matrix: Array2::eye(3) * 0.8,
            c_matrix: Array2::zeros((3, 1)),
            params: EsnParams {
                leak_rate: 0.5,
                ..small_params(3, 0)
            },
        };
        assert_relative_eq!(contraction_bound(&model).unwrap(), 0.9, epsilon = 1e-10);

        // Downscaled random model against the dense SVD oracle.
        use ndarray_linalg::SVD;
        let model = generate(&small_params(64, 12)).unwrap();
        let bound = contraction_bound(&model).unwrap();
        let (_, s, _) = model.a_matrix.svd(false, false).unwrap();
        let sigma_max = s.iter().cloned().fold(0.0f64, f64::max);
        let oracle = (1.0 - 0.51) + 0.51 * sigma_max;
        assert_relative_eq!(bound, oracle, max_relative = 1e-8);
    }

    #[test]
    fn gs_lipschitz_bound_cases() {
        assert_relative_eq!(gs_lipschitz_bound(0.5).unwrap(), 1.0);
        assert_relative_eq!(gs_lipschitz_bound(0.0).unwrap(), 0.0);
        assert_relative_eq!(gs_lipschitz_bound(0.9).unwrap(), 9.0, max_relative = 1e-12);
        assert!(gs_lipschitz_bound(1.0).is_err());
        assert!(gs_lipschitz_bound(-0.1).is_err());
    }

    #[test]
    fn fading_memory_contracts_state_differences() {
        use rand::Rng;
        // Random models rescaled to ||A||_2 = 0.9, driven by a shared input.
        for (seed, alpha) in [(1u64, 0.3f64), (2, 0.7), (3, 1.0)] {
            let mut model = generate(&EsnParams {
                leak_rate: alpha,
                ..small_params(48, seed)
            })
            .unwrap();
            let sigma = operator_norm(&model.a_matrix).unwrap();
            model.a_matrix *= 0.9 / sigma;
            let l = contraction_bound(&model).unwrap();
            assert!(l < 1.0);

            let mut rng = substream(seed, 77);
            let mut x: Array1<f64> = Array1::from_shape_simple_fn(48, || rng.gen::<f64>() - 0.5);
            let mut y: Array1<f64> = Array1::from_shape_simple_fn(48, || rng.gen::<f64>() - 0.5);
            let d0 = {
                let d = &x - &y;
                d.dot(&d).sqrt()
            };
            for n in 1..=200 {
                let u = array![(n as f64 * 0.13).sin()];
                x = step(&model, &x.view(), &u.view());
                y = step(&model, &y.view(), &u.view());
                let d = &x - &y;
                let dist = d.dot(&d).sqrt();
                assert!(
                    dist <= l.powi(n) * d0 * (1.0 + 1e-9),
                    "step {n}: {dist} > {}",
                    l.powi(n) * d0
                );
            }
        }
    }

    #[test]
    fn model_save_load_round_trip() {
        let model = generate(&small_params(16, 21)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_model(&model, dir.path()).unwrap();
        let back = load_model(dir.path()).unwrap();
        assert_eq!(model, back);
    }
}
