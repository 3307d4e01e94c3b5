//! The starting map: from a short observation window to a warmed-up
//! reservoir state.
//!
//! Training pairs come from driving the reservoir from the zero state over
//! each training trajectory and pairing every eligible window (entirely past
//! the washout) with the state at the window's last step, oldest-first
//! within the window.
//!
//! Two backends fit the map itself:
//!
//! * geometric harmonics: diffusion maps on the windows give reduced
//!   coordinates; one GH model extends the diffusion coordinates themselves
//!   to new windows (Nystrom restriction, fitted with the manifold kernel),
//!   a second GH model extends coordinates to reservoir states;
//! * PCA + MLP: states are compressed to their K leading principal
//!   components and a feedforward net regresses window -> coefficients,
//!   inverted at query time by zero-padded PCA inversion.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::dynamics::ObservationSeries;
use crate::error::{Error, Result};
use crate::harmonics::{extend, fit_gh, GhModel};
use crate::linalg::evenly_spaced_indices;
use crate::manifold::{eigendecompose, DmapsConfig, DmapsEmbedding, EpsilonRule};
use crate::mlp::{forward, train, MlpConfig, MlpModel};
use crate::pca::{fit_pca, PcaModel};
use crate::reservoir::{drive_fold, EsnModel};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window_len: usize,
    pub stride: usize,
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.stride == 0 {
            return Err(Error::Config("window_len and stride must be positive".into()));
        }
        Ok(())
    }
}

/// Window/state training pairs plus their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPairs {
    /// n x L windows, oldest value first.
    pub windows: Array2<f64>,
    /// n x N reservoir states at each window's last step.
    pub states: Array2<f64>,
    /// `(trajectory index, 0-based input index of the window end)` per row.
    pub provenance: Vec<(usize, usize)>,
    /// Trajectories skipped for being shorter than washout + window_len + 1.
    pub skipped: usize,
}

/// Drives the reservoir over every trajectory and extracts window/state
/// pairs.
///
/// A window ending at input index `t` (0-based) is eligible when
/// `t >= washout + window_len`, so the whole window sits past the washout;
/// `stride` thins the eligible positions. Too-short trajectories are skipped
/// and counted.
pub fn build_training_pairs(
    model: &EsnModel,
    trajectories: &[ObservationSeries],
    spec: &WindowSpec,
    washout: usize,
) -> Result<TrainingPairs> {
    spec.validate()?;
    let l = spec.window_len;
    let n_states = model.params.n_states;

    // Eligible window-end positions per trajectory.
    let positions: Vec<Vec<usize>> = trajectories
        .iter()
        .map(|tr| {
            let t_len = tr.len();
            if t_len < washout + l + 1 {
                Vec::new()
            } else {
                (washout + l..t_len).step_by(spec.stride).collect()
            }
        })
        .collect();
    let skipped = positions.iter().filter(|p| p.is_empty()).count();
    if skipped > 0 {
        log::warn!("build_training_pairs: skipped {skipped} too-short trajectories");
    }
    let total: usize = positions.iter().map(|p| p.len()).sum();
    if total == 0 {
        return Err(Error::InsufficientData {
            needed: washout + l + 1,
            got: trajectories.iter().map(|t| t.len()).max().unwrap_or(0),
        });
    }

    let mut windows = Array2::zeros((total, l));
    let mut states = Array2::zeros((total, n_states));
    let mut provenance = vec![(0usize, 0usize); total];

    // Row offsets in trajectory-major order.
    let mut offsets = Vec::with_capacity(trajectories.len());
    let mut acc = 0usize;
    for p in &positions {
        offsets.push(acc);
        acc += p.len();
    }

    // Batch trajectories of equal length so the drive is a GEMM recursion.
    let mut by_len: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, tr) in trajectories.iter().enumerate() {
        if !positions[i].is_empty() {
            by_len.entry(tr.len()).or_default().push(i);
        }
    }
    for (t_len, group) in by_len {
        let mut inputs = Array2::zeros((t_len, group.len()));
        for (col, &traj) in group.iter().enumerate() {
            for (t, &v) in trajectories[traj].values.iter().enumerate() {
                inputs[[t, col]] = v;
            }
        }
        // Next eligible-position cursor per group member.
        let mut cursors = vec![0usize; group.len()];
        drive_fold(model, &inputs, |t, x| {
            for (col, &traj) in group.iter().enumerate() {
                let pos = &positions[traj];
                if cursors[col] < pos.len() && pos[cursors[col]] == t {
                    let row = offsets[traj] + cursors[col];
                    states.row_mut(row).assign(&x.column(col));
                    for (w, src_t) in (t + 1 - l..=t).enumerate() {
                        windows[[row, w]] = trajectories[traj].values[src_t];
                    }
                    provenance[row] = (traj, t);
                    cursors[col] += 1;
                }
            }
        })?;
    }

    Ok(TrainingPairs {
        windows,
        states,
        provenance,
        skipped,
    })
}

/// Hyperparameters for the geometric-harmonics backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GhHyper {
    pub dmaps: DmapsConfig,
    /// Spectral truncation for the coordinates -> states extension.
    pub delta: f64,
    /// Spectral truncation for the windows -> coordinates restriction.
    pub embed_delta: f64,
    /// Kernel scale rule for the state map (median of squared pairwise
    /// distances of the diffusion coordinates by default).
    pub state_epsilon_rule: EpsilonRule,
    /// Kernel scale for the coordinate restriction; `None` reuses the
    /// diffusion-maps epsilon (the manifold kernel).
    pub embed_epsilon: Option<f64>,
    /// Uniform-thinning cap before the dense eigensolves.
    pub max_training_points: usize,
}

/// Hyperparameters for the PCA + MLP backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaMlpHyper {
    pub n_components: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub plateau_patience: usize,
    pub lr_halving: bool,
    pub validation_fraction: f64,
    pub seed: u64,
    pub max_training_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendChoice {
    GeometricHarmonics(GhHyper),
    PcaMlp(PcaMlpHyper),
}

#[derive(Debug, Clone, PartialEq)]
pub enum StartingBackend {
    GeometricHarmonics {
        embedding: DmapsEmbedding,
        /// Windows -> diffusion coordinates (Nystrom restriction).
        coord_map: GhModel,
        /// Diffusion coordinates -> reservoir states.
        state_map: GhModel,
    },
    PcaMlp { pca: PcaModel, net: MlpModel },
}

/// Diagnostics recorded in run manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapDiagnostics {
    pub n_training_pairs: usize,
    pub n_fitted_points: usize,
    /// Largest ||sigma(w) - sigma(w')|| / ||w - w'|| over sampled training
    /// window pairs; diagnostic only.
    pub empirical_lipschitz: f64,
    pub dmaps_epsilon: Option<f64>,
    pub embed_epsilon: Option<f64>,
    pub state_epsilon: Option<f64>,
    pub embed_kept_modes: Option<usize>,
    pub state_kept_modes: Option<usize>,
}

/// A fitted starting map.
#[derive(Debug, Clone, PartialEq)]
pub struct StartingMap {
    pub backend: StartingBackend,
    pub window_spec: WindowSpec,
    pub state_dim: usize,
    pub diagnostics: MapDiagnostics,
}

/// A cold-start query result.
#[derive(Debug, Clone, PartialEq)]
pub struct ColdStartState {
    pub state: Array1<f64>,
    /// Set when the query window (or its coordinates) sits far outside the
    /// training data; the state is still returned.
    pub extrapolated: bool,
}

fn thin_rows(m: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), m.ncols()));
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).assign(&m.row(i));
    }
    out
}

/// Fits the starting map with the chosen backend.
pub fn fit(choice: &BackendChoice, pairs: &TrainingPairs, spec: &WindowSpec) -> Result<StartingMap> {
    spec.validate()?;
    if pairs.windows.nrows() == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if pairs.windows.ncols() != spec.window_len {
        return Err(Error::DimensionMismatch {
            expected: spec.window_len,
            got: pairs.windows.ncols(),
            context: "training window length",
        });
    }
    let state_dim = pairs.states.ncols();

    let mut map = match choice {
        BackendChoice::GeometricHarmonics(hyper) => {
            let keep = evenly_spaced_indices(pairs.windows.nrows(), hyper.max_training_points);
            let windows = thin_rows(&pairs.windows, &keep);
            let states = thin_rows(&pairs.states, &keep);

            let embedding = eigendecompose(&hyper.dmaps, &windows)?;
            let coords = embedding.selected_coords();
            let embed_eps = hyper.embed_epsilon.unwrap_or(embedding.epsilon_used);
            let coord_map = fit_gh(
                &windows,
                &coords,
                hyper.embed_delta,
                EpsilonRule::Fixed(embed_eps),
            )?;
            let state_map = fit_gh(&coords, &states, hyper.delta, hyper.state_epsilon_rule)?;

            let diagnostics = MapDiagnostics {
                n_training_pairs: pairs.windows.nrows(),
                n_fitted_points: windows.nrows(),
                empirical_lipschitz: 0.0,
                dmaps_epsilon: Some(embedding.epsilon_used),
                embed_epsilon: Some(coord_map.epsilon_prime),
                state_epsilon: Some(state_map.epsilon_prime),
                embed_kept_modes: Some(coord_map.n_kept()),
                state_kept_modes: Some(state_map.n_kept()),
            };
            StartingMap {
                backend: StartingBackend::GeometricHarmonics {
                    embedding,
                    coord_map,
                    state_map,
                },
                window_spec: *spec,
                state_dim,
                diagnostics,
            }
        }
        BackendChoice::PcaMlp(hyper) => {
            let keep = evenly_spaced_indices(pairs.windows.nrows(), hyper.max_training_points);
            let windows = thin_rows(&pairs.windows, &keep);
            let states = thin_rows(&pairs.states, &keep);

            let pca = fit_pca(&states, hyper.n_components)?;
            let mut coeffs = Array2::zeros((states.nrows(), hyper.n_components));
            for (i, row) in states.rows().into_iter().enumerate() {
                coeffs.row_mut(i).assign(&pca.project(&row));
            }
            let mut layer_dims = vec![spec.window_len];
            layer_dims.extend_from_slice(&hyper.hidden);
            layer_dims.push(hyper.n_components);
            let cfg = MlpConfig {
                layer_dims,
                epochs: hyper.epochs,
                batch_size: hyper.batch_size,
                lr_init: hyper.lr_init,
                plateau_patience: hyper.plateau_patience,
                lr_halving: hyper.lr_halving,
                validation_fraction: hyper.validation_fraction,
                seed: hyper.seed,
            };
            let net = train(&cfg, &windows, &coeffs)?;

            let diagnostics = MapDiagnostics {
                n_training_pairs: pairs.windows.nrows(),
                n_fitted_points: windows.nrows(),
                empirical_lipschitz: 0.0,
                dmaps_epsilon: None,
                embed_epsilon: None,
                state_epsilon: None,
                embed_kept_modes: None,
                state_kept_modes: None,
            };
            StartingMap {
                backend: StartingBackend::PcaMlp { pca, net },
                window_spec: *spec,
                state_dim,
                diagnostics,
            }
        }
    };

    map.diagnostics.empirical_lipschitz = empirical_lipschitz(&map, pairs, 1000);
    log::info!(
        "starting map fitted: {} pairs ({} used), empirical Lipschitz {:.3e}",
        map.diagnostics.n_training_pairs,
        map.diagnostics.n_fitted_points,
        map.diagnostics.empirical_lipschitz
    );
    Ok(map)
}

/// Largest observed ||sigma(w) - sigma(w')|| / ||w - w'|| over `n_pairs`
/// seeded random pairs of training windows.
fn empirical_lipschitz(map: &StartingMap, pairs: &TrainingPairs, n_pairs: usize) -> f64 {
    use rand::Rng;
    let n = pairs.windows.nrows();
    if n < 2 {
        return 0.0;
    }
    let mut rng = substream(0x4c69_7073, 0);
    let mut picks: Vec<(usize, usize)> = Vec::with_capacity(n_pairs);
    let mut uniq: std::collections::BTreeSet<usize> = Default::default();
    for _ in 0..n_pairs {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        if i != j {
            picks.push((i, j));
            uniq.insert(i);
            uniq.insert(j);
        }
    }
    let mut images: std::collections::BTreeMap<usize, Array1<f64>> = Default::default();
    for &i in &uniq {
        if let Ok(cs) = cold_start(map, &pairs.windows.row(i)) {
            images.insert(i, cs.state);
        }
    }
    let mut worst = 0.0f64;
    for (i, j) in picks {
        let (Some(si), Some(sj)) = (images.get(&i), images.get(&j)) else {
            continue;
        };
        let dw = {
            let d = &pairs.windows.row(i).to_owned() - &pairs.windows.row(j);
            d.dot(&d).sqrt()
        };
        if dw < 1e-12 {
            continue;
        }
        let ds = {
            let d = si - sj;
            d.dot(&d).sqrt()
        };
        worst = worst.max(ds / dw);
    }
    worst
}

/// Maps a fresh observation window to a reservoir state.
pub fn cold_start(map: &StartingMap, window: &ArrayView1<f64>) -> Result<ColdStartState> {
    if window.len() != map.window_spec.window_len {
        return Err(Error::DimensionMismatch {
            expected: map.window_spec.window_len,
            got: window.len(),
            context: "cold_start window length",
        });
    }
    if window.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("cold_start window has non-finite values".into()));
    }
    match &map.backend {
        StartingBackend::GeometricHarmonics {
            coord_map,
            state_map,
            ..
        } => {
            let coords = extend(coord_map, window)?;
            let state = extend(state_map, &coords.value.view())?;
            Ok(ColdStartState {
                state: state.value,
                extrapolated: coords.extrapolated || state.extrapolated,
            })
        }
        StartingBackend::PcaMlp { pca, net } => {
            let coeffs = forward(net, window);
            Ok(ColdStartState {
                state: pca.inverse_zero_pad(&coeffs.view()),
                extrapolated: false,
            })
        }
    }
}

fn col(v: &Array1<f64>) -> Array2<f64> {
    v.clone().into_shape((v.len(), 1)).unwrap()
}

fn save_gh(model: &GhModel, dir: &Path, stem: &str) -> Result<()> {
    crate::matio::write_matrix(&dir.join(format!("{stem}_coords.mat")), &model.coords)?;
    crate::matio::write_matrix(&dir.join(format!("{stem}_targets.mat")), &model.targets)?;
    crate::matio::write_matrix(&dir.join(format!("{stem}_eigvecs.mat")), &model.eigvecs)?;
    crate::matio::write_matrix(&dir.join(format!("{stem}_eigvals.mat")), &col(&model.eigvals))?;
    crate::matio::write_matrix(
        &dir.join(format!("{stem}_coeffs.mat")),
        &model.projected_coeffs,
    )?;
    let meta = serde_json::json!({ "epsilon_prime": model.epsilon_prime, "delta": model.delta });
    std::fs::write(dir.join(format!("{stem}_meta.json")), meta.to_string())?;
    Ok(())
}

fn load_gh(dir: &Path, stem: &str) -> Result<GhModel> {
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}_meta.json")))?)
            .map_err(|e| Error::Config(e.to_string()))?;
    Ok(GhModel {
        coords: crate::matio::read_matrix(&dir.join(format!("{stem}_coords.mat")))?,
        targets: crate::matio::read_matrix(&dir.join(format!("{stem}_targets.mat")))?,
        eigvecs: crate::matio::read_matrix(&dir.join(format!("{stem}_eigvecs.mat")))?,
        eigvals: crate::matio::read_matrix(&dir.join(format!("{stem}_eigvals.mat")))?
            .column(0)
            .to_owned(),
        projected_coeffs: crate::matio::read_matrix(&dir.join(format!("{stem}_coeffs.mat")))?,
        epsilon_prime: meta["epsilon_prime"].as_f64().unwrap_or(0.0),
        delta: meta["delta"].as_f64().unwrap_or(0.0),
    })
}

/// Persists the fitted map: a backend tag plus component dumps.
pub fn save_starting_map(map: &StartingMap, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let tag = match &map.backend {
        StartingBackend::GeometricHarmonics { .. } => "gh",
        StartingBackend::PcaMlp { .. } => "pca_mlp",
    };
    let meta = serde_json::json!({
        "backend": tag,
        "window_len": map.window_spec.window_len,
        "stride": map.window_spec.stride,
        "state_dim": map.state_dim,
        "diagnostics": map.diagnostics,
    });
    std::fs::write(
        dir.join("startmap.json"),
        serde_json::to_string_pretty(&meta).map_err(|e| Error::Config(e.to_string()))?,
    )?;
    match &map.backend {
        StartingBackend::GeometricHarmonics {
            embedding,
            coord_map,
            state_map,
        } => {
            crate::matio::write_matrix(&dir.join("dm_modes.mat"), &embedding.modes)?;
            crate::matio::write_matrix(&dir.join("dm_eigvals.mat"), &col(&embedding.eigenvalues))?;
            crate::matio::write_matrix(&dir.join("dm_dataset.mat"), &embedding.dataset)?;
            let emb_meta = serde_json::json!({
                "selected_indices": embedding.selected_indices,
                "epsilon_used": embedding.epsilon_used,
                "kappa": embedding.kappa,
            });
            std::fs::write(dir.join("dm_meta.json"), emb_meta.to_string())?;
            save_gh(coord_map, dir, "coordgh")?;
            save_gh(state_map, dir, "stategh")?;
        }
        StartingBackend::PcaMlp { pca, net } => {
            crate::matio::write_matrix(&dir.join("pca_mean.mat"), &col(&pca.mean))?;
            crate::matio::write_matrix(&dir.join("pca_components.mat"), &pca.components)?;
            crate::matio::write_matrix(
                &dir.join("pca_variance.mat"),
                &col(&pca.explained_variance),
            )?;
            crate::mlp::save_mlp(net, dir, "startnet")?;
        }
    }
    Ok(())
}

/// Loads a map written by [`save_starting_map`].
pub fn load_starting_map(dir: &Path) -> Result<StartingMap> {
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("startmap.json"))?)
            .map_err(|e| Error::Config(e.to_string()))?;
    let window_spec = WindowSpec {
        window_len: meta["window_len"].as_u64().unwrap_or(0) as usize,
        stride: meta["stride"].as_u64().unwrap_or(1) as usize,
    };
    let state_dim = meta["state_dim"].as_u64().unwrap_or(0) as usize;
    let diagnostics: MapDiagnostics = serde_json::from_value(meta["diagnostics"].clone())
        .map_err(|e| Error::Config(e.to_string()))?;
    let backend = match meta["backend"].as_str() {
        Some("gh") => {
            let emb_meta: serde_json::Value =
                serde_json::from_str(&std::fs::read_to_string(dir.join("dm_meta.json"))?)
                    .map_err(|e| Error::Config(e.to_string()))?;
            let embedding = DmapsEmbedding {
                modes: crate::matio::read_matrix(&dir.join("dm_modes.mat"))?,
                eigenvalues: crate::matio::read_matrix(&dir.join("dm_eigvals.mat"))?
                    .column(0)
                    .to_owned(),
                dataset: crate::matio::read_matrix(&dir.join("dm_dataset.mat"))?,
                selected_indices: emb_meta["selected_indices"]
                    .as_array()
                    .map(|a| a.iter().map(|v| v.as_u64().unwrap_or(0) as usize).collect())
                    .unwrap_or_default(),
                epsilon_used: emb_meta["epsilon_used"].as_f64().unwrap_or(0.0),
                kappa: emb_meta["kappa"].as_f64().unwrap_or(0.0),
            };
            StartingBackend::GeometricHarmonics {
                embedding,
                coord_map: load_gh(dir, "coordgh")?,
                state_map: load_gh(dir, "stategh")?,
            }
        }
        Some("pca_mlp") => StartingBackend::PcaMlp {
            pca: PcaModel {
                mean: crate::matio::read_matrix(&dir.join("pca_mean.mat"))?
                    .column(0)
                    .to_owned(),
                components: crate::matio::read_matrix(&dir.join("pca_components.mat"))?,
                explained_variance: crate::matio::read_matrix(&dir.join("pca_variance.mat"))?
                    .column(0)
                    .to_owned(),
            },
            net: crate::mlp::load_mlp(dir, "startnet")?,
        },
        other => {
            return Err(Error::Config(format!("unknown starting-map backend tag {other:?}")))
        }
    };
    Ok(StartingMap {
        backend,
        window_spec,
        state_dim,
        diagnostics,
    })
}
