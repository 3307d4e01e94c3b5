//! Brusselator and Lorenz systems, fixed-step RK4 integration and ensemble
//! sampling.
//!
//! Trajectories are sampled on a uniform grid `t_start + i*dt`. When
//! `t_start > 0` the integration burns in from time zero with the same step
//! before recording starts, so the recorded segment sits on the attractor.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::map_indexed;
use crate::rng::substream;

/// The two systems under study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OdeSystem {
    /// du = a + u^2 v - (b+1) u,  dv = b u - u^2 v.
    Brusselator { a: f64, b: f64 },
    /// du = a (v-u),  dv = b u - u w - v,  dw = u v - c w.
    Lorenz { a: f64, b: f64, c: f64 },
}

impl OdeSystem {
    pub fn brusselator(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::Config("Brusselator parameters must be finite".into()));
        }
        Ok(OdeSystem::Brusselator { a, b })
    }

    pub fn lorenz(a: f64, b: f64, c: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && c.is_finite()) {
            return Err(Error::Config("Lorenz parameters must be finite".into()));
        }
        Ok(OdeSystem::Lorenz { a, b, c })
    }

    pub fn dim(&self) -> usize {
        match self {
            OdeSystem::Brusselator { .. } => 2,
            OdeSystem::Lorenz { .. } => 3,
        }
    }

    /// Vector field at `state`, written into `out`.
    pub fn rhs(&self, state: &ArrayView1<f64>, out: &mut Array1<f64>) {
        match *self {
            OdeSystem::Brusselator { a, b } => {
                let (u, v) = (state[0], state[1]);
                out[0] = a + u * u * v - (b + 1.0) * u;
                out[1] = b * u - u * u * v;
            }
            OdeSystem::Lorenz { a, b, c } => {
                let (u, v, w) = (state[0], state[1], state[2]);
                out[0] = a * (v - u);
                out[1] = b * u - u * w - v;
                out[2] = u * v - c * w;
            }
        }
    }
}

/// Per-coordinate initial-condition distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitDist {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
}

impl InitDist {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            InitDist::Uniform { lo, hi } => lo + (hi - lo) * rng.gen::<f64>(),
            InitDist::Normal { mean, sd } => {
                Normal::new(mean, sd).expect("valid normal").sample(rng)
            }
        }
    }
}

/// How to sample an ensemble of trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub dt: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub init_dist: Vec<InitDist>,
    pub n_trajectories: usize,
    pub seed: u64,
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= self.t_start) {
            return Err(Error::Config(format!(
                "t_end ({}) must not precede t_start ({})",
                self.t_end, self.t_start
            )));
        }
        if self.n_trajectories == 0 {
            return Err(Error::Config("n_trajectories must be at least 1".into()));
        }
        Ok(())
    }
}

/// A sampled orbit: `states.row(i)` is the state at `times[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Array2<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.ncols()
    }
}

/// Scalar observations of a trajectory (its first coordinate).
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    pub values: Vec<f64>,
}

impl ObservationSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One classical fourth-order Runge-Kutta step.
pub fn rk4_step(system: &OdeSystem, state: &ArrayView1<f64>, dt: f64) -> Result<Array1<f64>> {
    debug_assert_eq!(state.len(), system.dim());
    let n = state.len();
    let mut k1 = Array1::zeros(n);
    let mut k2 = Array1::zeros(n);
    let mut k3 = Array1::zeros(n);
    let mut k4 = Array1::zeros(n);

    system.rhs(state, &mut k1);
    let s2 = state.to_owned() + &(&k1 * (dt / 2.0));
    system.rhs(&s2.view(), &mut k2);
    let s3 = state.to_owned() + &(&k2 * (dt / 2.0));
    system.rhs(&s3.view(), &mut k3);
    let s4 = state.to_owned() + &(&k3 * dt);
    system.rhs(&s4.view(), &mut k4);

    let out = state.to_owned() + &((k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0));
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::IntegrationDiverged { t: dt });
    }
    Ok(out)
}

/// Number of recorded samples for a `[t_start, t_end]` window at step `dt`.
///
/// `floor((t_end - t_start)/dt) + 1`, with a small tolerance so that exact
/// multiples (30/0.2 = 150) are not lost to rounding.
pub fn sample_count(t_start: f64, t_end: f64, dt: f64) -> usize {
    ((t_end - t_start) / dt + 1e-9).floor() as usize + 1
}

/// Integrates from `init`, recording `sample_count` states from `t_start` on.
pub fn integrate(
    system: &OdeSystem,
    init: &ArrayView1<f64>,
    cfg: &SamplingConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    if init.len() != system.dim() {
        return Err(Error::DimensionMismatch {
            expected: system.dim(),
            got: init.len(),
            context: "integrate initial state",
        });
    }

    let mut state = init.to_owned();
    if cfg.t_start > 0.0 {
        let n_burn = (cfg.t_start / cfg.dt + 0.5).floor() as usize;
        for i in 0..n_burn {
            state = rk4_step(system, &state.view(), cfg.dt)
                .map_err(|_| Error::IntegrationDiverged { t: (i + 1) as f64 * cfg.dt })?;
        }
    }

    let n = sample_count(cfg.t_start, cfg.t_end, cfg.dt);
    let mut times = Vec::with_capacity(n);
    let mut states = Array2::zeros((n, system.dim()));
    states.row_mut(0).assign(&state);
    times.push(cfg.t_start);
    for i in 1..n {
        let t = cfg.t_start + i as f64 * cfg.dt;
        state = rk4_step(system, &state.view(), cfg.dt)
            .map_err(|_| Error::IntegrationDiverged { t })?;
        states.row_mut(i).assign(&state);
        times.push(t);
    }
    Ok(Trajectory { times, states })
}

/// Samples `cfg.n_trajectories` orbits with i.i.d. initial conditions.
///
/// Trajectory `i` draws from ChaCha substream `i` of `cfg.seed`, so the
/// ensemble is identical no matter how the work is scheduled.
pub fn sample_ensemble(system: &OdeSystem, cfg: &SamplingConfig) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    if cfg.init_dist.len() != system.dim() {
        return Err(Error::DimensionMismatch {
            expected: system.dim(),
            got: cfg.init_dist.len(),
            context: "init_dist length",
        });
    }
    let results = map_indexed(cfg.n_trajectories, |i| {
        let mut rng = substream(cfg.seed, i as u64);
        let init = Array1::from_iter(cfg.init_dist.iter().map(|d| d.sample(&mut rng)));
        integrate(system, &init.view(), cfg)
    });
    results.into_iter().collect()
}

/// First-coordinate observations of a trajectory.
pub fn observe(traj: &Trajectory) -> Result<ObservationSeries> {
    if traj.is_empty() {
        return Err(Error::InsufficientData { needed: 0, got: 0 });
    }
    Ok(ObservationSeries {
        values: traj.states.column(0).to_vec(),
    })
}

/// Formats a float with 17 significant digits, the round-trip-exact width.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `t,x0[,x1[,x2]]` rows, 17-significant-digit floats.
pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut out = String::new();
    let dim = traj.dim();
    out.push('t');
    for d in 0..dim {
        let _ = write!(out, ",x{d}");
    }
    out.push('\n');
    for (i, &t) in traj.times.iter().enumerate() {
        out.push_str(&fmt_f64(t));
        for d in 0..dim {
            out.push(',');
            out.push_str(&fmt_f64(traj.states[[i, d]]));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a trajectory written by [`write_trajectory_csv`].
pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config(format!("{}: empty trajectory file", path.display())))?;
    let dim = header.split(',').count() - 1;
    let mut times = Vec::new();
    let mut flat = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let t: f64 = fields
            .next()
            .unwrap()
            .parse()
            .map_err(|e| Error::Config(format!("line {}: bad time: {e}", lineno + 2)))?;
        times.push(t);
        for f in fields {
            let x: f64 = f
                .parse()
                .map_err(|e| Error::Config(format!("line {}: bad value: {e}", lineno + 2)))?;
            flat.push(x);
        }
        if flat.len() != times.len() * dim {
            return Err(Error::Config(format!(
                "line {}: expected {dim} coordinates",
                lineno + 2
            )));
        }
    }
    let states = Array2::from_shape_vec((times.len(), dim), flat)
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(Trajectory { times, states })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    /// Adaptive Runge-Kutta-Fehlberg 4(5) reference integrator, used only as
    /// a test oracle. Independent of the fixed-step code above.
    fn rkf45_flow(system: &OdeSystem, init: &[f64], t_end: f64, tol: f64) -> Vec<f64> {
        const A: [[f64; 5]; 5] = [
            [1.0 / 4.0, 0.0, 0.0, 0.0, 0.0],
            [3.0 / 32.0, 9.0 / 32.0, 0.0, 0.0, 0.0],
            [1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0, 0.0, 0.0],
            [439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0, 0.0],
            [-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0],
        ];
        const B5: [f64; 6] = [
            16.0 / 135.0,
            0.0,
            6656.0 / 12825.0,
            28561.0 / 56430.0,
            -9.0 / 50.0,
            2.0 / 55.0,
        ];
        const B4: [f64; 6] = [
            25.0 / 216.0,
            0.0,
            1408.0 / 2565.0,
            2197.0 / 4104.0,
            -1.0 / 5.0,
            0.0,
        ];

        let n = init.len();
        let deriv = |s: &[f64]| -> Vec<f64> {
            let arr = Array1::from_vec(s.to_vec());
            let mut out = Array1::zeros(n);
            system.rhs(&arr.view(), &mut out);
            out.to_vec()
        };

        let mut t = 0.0;
        let mut y = init.to_vec();
        let mut h = 1e-3;
        while t < t_end {
            if t + h > t_end {
                h = t_end - t;
            }
            let mut k: Vec<Vec<f64>> = Vec::with_capacity(6);
            k.push(deriv(&y));
            for stage in 0..5 {
                let mut ys = y.clone();
                for (j, kj) in k.iter().enumerate() {
                    let c = A[stage][j];
                    if c != 0.0 {
                        for d in 0..n {
                            ys[d] += h * c * kj[d];
                        }
                    }
                }
                k.push(deriv(&ys));
            }
            let mut y5 = y.clone();
            let mut y4 = y.clone();
            for (j, kj) in k.iter().enumerate() {
                for d in 0..n {
                    y5[d] += h * B5[j] * kj[d];
                    y4[d] += h * B4[j] * kj[d];
                }
            }
            let err: f64 = y5
                .iter()
                .zip(&y4)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if err <= tol * h.max(1e-12) || h < 1e-12 {
                t += h;
                y = y5;
            }
            let scale = if err > 0.0 {
                0.9 * (tol * h / err).powf(0.2)
            } else {
                2.0
            };
            h *= scale.clamp(0.2, 4.0);
        }
        y
    }

    fn lorenz_paper() -> OdeSystem {
        OdeSystem::lorenz(10.0, 28.0, 8.0 / 3.0).unwrap()
    }

    // Reference endpoints computed with an independent adaptive integrator
    // (tolerance 1e-13) before the implementation was written.
    const LORENZ_FLOW_002: [f64; 3] = [
        1.04882145582120367,
        1.52400084887269816,
        0.973114338993277928,
    ];
    const LORENZ_FLOW_1: [f64; 3] = [
        -9.37857001092536890,
        -8.35703378842700140,
        29.3623253373637425,
    ];

    #[test]
    fn oracle_matches_frozen_reference() {
        let y = rkf45_flow(&lorenz_paper(), &[1.0, 1.0, 1.0], 0.02, 1e-10);
        for d in 0..3 {
            assert_relative_eq!(y[d], LORENZ_FLOW_002[d], max_relative = 1e-8);
        }
        let y = rkf45_flow(&lorenz_paper(), &[1.0, 1.0, 1.0], 1.0, 1e-10);
        for d in 0..3 {
            assert_relative_eq!(y[d], LORENZ_FLOW_1[d], max_relative = 1e-6);
        }
    }

    #[test]
    fn brusselator_fixed_point_is_stationary() {
        let sys = OdeSystem::brusselator(1.0, 2.1).unwrap();
        let state = array![1.0, 2.1];
        let next = rk4_step(&sys, &state.view(), 0.2).unwrap();
        assert_relative_eq!(next[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(next[1], 2.1, epsilon = 1e-14);
    }

    #[test]
    fn lorenz_origin_is_equilibrium() {
        let next = rk4_step(&lorenz_paper(), &array![0.0, 0.0, 0.0].view(), 0.02).unwrap();
        assert_eq!(next, array![0.0, 0.0, 0.0]);
    }

    #[test]
    fn rk4_single_step_near_true_flow() {
        // One-step truncation error at dt=0.02 is ~7e-5 for this orbit.
        let next = rk4_step(&lorenz_paper(), &array![1.0, 1.0, 1.0].view(), 0.02).unwrap();
        for d in 0..3 {
            assert!(
                (next[d] - LORENZ_FLOW_002[d]).abs() < 2e-4,
                "coordinate {d}: {} vs {}",
                next[d],
                LORENZ_FLOW_002[d]
            );
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        let sys = lorenz_paper();
        let reference = rkf45_flow(&sys, &[1.0, 1.0, 1.0], 1.0, 1e-10);
        let run = |dt: f64| {
            let steps = (1.0 / dt).round() as usize;
            let mut s = array![1.0, 1.0, 1.0];
            for _ in 0..steps {
                s = rk4_step(&sys, &s.view(), dt).unwrap();
            }
            s
        };
        let err = |s: Array1<f64>| {
            s.iter()
                .zip(&reference)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        let e_coarse = err(run(0.02));
        let e_fine = err(run(0.01));
        assert!(
            e_coarse / e_fine >= 12.0,
            "order ratio {} (coarse {e_coarse:.3e}, fine {e_fine:.3e})",
            e_coarse / e_fine
        );
    }

    #[test]
    fn sample_counts_match_expected() {
        assert_eq!(sample_count(0.0, 30.0, 0.2), 151);
        assert_eq!(sample_count(20.0, 22.0, 0.02), 101);
        assert_eq!(sample_count(5.0, 5.0, 0.1), 1);
    }

    #[test]
    fn integrate_brusselator_produces_151_samples() {
        let sys = OdeSystem::brusselator(1.0, 2.1).unwrap();
        let cfg = SamplingConfig {
            dt: 0.2,
            t_start: 0.0,
            t_end: 30.0,
            init_dist: vec![],
            n_trajectories: 1,
            seed: 0,
        };
        let traj = integrate(&sys, &array![0.5, 0.5].view(), &cfg).unwrap();
        assert_eq!(traj.len(), 151);
        assert_relative_eq!(traj.times[150], 30.0, epsilon = 1e-9);
        for w in traj.times.windows(2) {
            assert_relative_eq!(w[1] - w[0], 0.2, max_relative = 1e-12);
        }
    }

    #[test]
    fn integrate_lorenz_burnin_window() {
        let cfg = SamplingConfig {
            dt: 0.02,
            t_start: 20.0,
            t_end: 22.0,
            init_dist: vec![],
            n_trajectories: 1,
            seed: 0,
        };
        let traj = integrate(&lorenz_paper(), &array![10.0, 1.0, 0.0].view(), &cfg).unwrap();
        assert_eq!(traj.len(), 101);
        assert_relative_eq!(traj.times[0], 20.0);
        // After 20 units of burn-in the state sits on the attractor, far from
        // the initial condition.
        let s0 = traj.states.row(0);
        assert!((s0[0] - 10.0).abs() > 1e-3);
        assert!(s0.iter().all(|x| x.abs() < 60.0));
    }

    #[test]
    fn degenerate_interval_returns_initial_state() {
        let sys = OdeSystem::brusselator(1.0, 2.1).unwrap();
        let cfg = SamplingConfig {
            dt: 0.2,
            t_start: 0.0,
            t_end: 0.0,
            init_dist: vec![],
            n_trajectories: 1,
            seed: 0,
        };
        let traj = integrate(&sys, &array![0.3, 0.7].view(), &cfg).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.states.row(0).to_vec(), vec![0.3, 0.7]);
    }

    fn brusselator_cfg(n: usize, seed: u64) -> SamplingConfig {
        SamplingConfig {
            dt: 0.2,
            t_start: 0.0,
            t_end: 40.0,
            init_dist: vec![
                InitDist::Uniform { lo: 0.0, hi: 2.0 },
                InitDist::Uniform { lo: 0.0, hi: 3.0 },
            ],
            n_trajectories: n,
            seed,
        }
    }

    #[test]
    fn ensemble_deterministic_across_schedules() {
        let sys = OdeSystem::brusselator(1.0, 2.1).unwrap();
        let cfg = brusselator_cfg(12, 99);
        let a = sample_ensemble(&sys, &cfg).unwrap();
        let b = sample_ensemble(&sys, &cfg).unwrap();
        assert_eq!(a, b);

        #[cfg(feature = "parallel")]
        {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(1)
                .build()
                .unwrap();
            let c = pool.install(|| sample_ensemble(&sys, &cfg).unwrap());
            assert_eq!(a, c);
        }
    }

    #[test]
    fn brusselator_settles_into_bounded_set() {
        let sys = OdeSystem::brusselator(1.0, 2.1).unwrap();
        let trajs = sample_ensemble(&sys, &brusselator_cfg(20, 7)).unwrap();
        for traj in &trajs {
            for (i, &t) in traj.times.iter().enumerate() {
                if t >= 20.0 {
                    let row = traj.states.row(i);
                    assert!(
                        row[0].abs() <= 5.0 && row[1].abs() <= 5.0,
                        "unbounded at t={t}: {:?}",
                        row
                    );
                }
            }
        }
    }

    #[test]
    fn lorenz_ensemble_uses_normal_inits() {
        let cfg = SamplingConfig {
            dt: 0.02,
            t_start: 0.0,
            t_end: 0.0,
            init_dist: vec![
                InitDist::Normal { mean: 10.0, sd: 1.0 },
                InitDist::Normal { mean: 1.0, sd: 1.0 },
                InitDist::Normal { mean: 0.0, sd: 1.0 },
            ],
            n_trajectories: 400,
            seed: 5,
        };
        let trajs = sample_ensemble(&lorenz_paper(), &cfg).unwrap();
        let mean_u: f64 = trajs.iter().map(|t| t.states[[0, 0]]).sum::<f64>() / trajs.len() as f64;
        assert!((mean_u - 10.0).abs() < 0.3, "mean u0 was {mean_u}");
    }

    #[test]
    fn observe_projects_first_coordinate() {
        let traj = Trajectory {
            times: vec![0.0, 1.0],
            states: array![[1.0, 2.0], [3.0, 4.0]],
        };
        let obs = observe(&traj).unwrap();
        assert_eq!(obs.values, vec![1.0, 3.0]);

        let empty = Trajectory {
            times: vec![],
            states: Array2::zeros((0, 2)),
        };
        assert!(observe(&empty).is_err());
    }

    #[test]
    fn trajectory_csv_round_trips_exactly() {
        let sys = OdeSystem::brusselator(1.0, 2.1).unwrap();
        let cfg = SamplingConfig {
            dt: 0.2,
            t_start: 0.0,
            t_end: 2.0,
            init_dist: vec![],
            n_trajectories: 1,
            seed: 0,
        };
        let traj = integrate(&sys, &array![0.4, 1.9].view(), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        write_trajectory_csv(&traj, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,x0,x1\n"));
        let back = read_trajectory_csv(&path).unwrap();
        assert_eq!(back, traj);
    }
}
