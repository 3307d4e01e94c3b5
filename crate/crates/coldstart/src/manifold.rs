//! Diffusion maps on datasets of short time-series windows.
//!
//! Pipeline: Gaussian affinity K, density normalization
//! `Ktilde = D^-kappa K D^-kappa`, row normalization to a Markov matrix S,
//! then eigendecomposition of S through the symmetric conjugate
//! `Q^-1/2 Ktilde Q^-1/2` (same spectrum, with Q the row sums of Ktilde).
//! Independent, non-harmonic modes are picked either by position or by the
//! leave-one-out local-linear-regression residual test.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{solve_small, sym_eig_desc};
use crate::par::map_indexed;

/// Kernel-scale rule.
///
/// The "median" convention is ambiguous in the literature, so both readings
/// are available: the default takes the median of the *squared* pairwise
/// distances and uses it verbatim as epsilon in `exp(-dist^2 / (2 eps))`;
/// `MedianPairwise` takes the median of plain L2 distances instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonRule {
    MedianSquaredPairwise,
    MedianPairwise,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSelection {
    /// The first k nontrivial modes in eigenvalue order.
    FirstK,
    /// Explicit column indices into the retained nontrivial modes.
    ManualIndices(Vec<usize>),
    /// Greedy residual test: keep a mode when its leave-one-out local-linear
    /// fit against the already-kept modes leaves more than this fraction of
    /// its energy unexplained.
    ResidualTest(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmapsConfig {
    pub epsilon_rule: EpsilonRule,
    /// Density-normalization exponent in [0, 1].
    pub kappa: f64,
    /// Number of nontrivial modes to retain.
    pub n_modes_keep: usize,
    pub mode_selection: ModeSelection,
}

impl DmapsConfig {
    pub fn validate(&self) -> Result<()> {
        if let EpsilonRule::Fixed(e) = self.epsilon_rule {
            if !(e > 0.0) {
                return Err(Error::Config("fixed epsilon must be positive".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(Error::Config(format!("kappa must lie in [0,1], got {}", self.kappa)));
        }
        if self.n_modes_keep == 0 {
            return Err(Error::Config("n_modes_keep must be positive".into()));
        }
        Ok(())
    }
}

/// Fitted diffusion-map coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DmapsEmbedding {
    /// Descending eigenvalues of S, trivial mode included.
    pub eigenvalues: Array1<f64>,
    /// n x (n_modes_keep + 1) unit-norm eigenvector columns, same order.
    pub modes: Array2<f64>,
    /// Columns of `modes` picked as independent coordinates (trivial mode
    /// excluded).
    pub selected_indices: Vec<usize>,
    pub epsilon_used: f64,
    pub kappa: f64,
    /// The window matrix the embedding was fitted on.
    pub dataset: Array2<f64>,
}

impl DmapsEmbedding {
    /// The selected coordinate matrix, n x d.
    pub fn selected_coords(&self) -> Array2<f64> {
        let n = self.modes.nrows();
        let mut out = Array2::zeros((n, self.selected_indices.len()));
        for (j, &idx) in self.selected_indices.iter().enumerate() {
            out.column_mut(j).assign(&self.modes.column(idx));
        }
        out
    }
}

fn sq_dist(a: &ArrayView1<f64>, b: &ArrayView1<f64>) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        s += d * d;
    }
    s
}

/// `K_ij = exp(-||x_i - x_j||^2 / (2 epsilon))`; symmetric with unit diagonal.
pub fn gaussian_affinity(data: &ArrayView2<f64>, epsilon: f64) -> Array2<f64> {
    let n = data.nrows();
    let rows = map_indexed(n, |i| {
        let xi = data.row(i);
        let mut row = vec![0.0f64; n];
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = (-sq_dist(&xi, &data.row(j)) / (2.0 * epsilon)).exp();
        }
        row
    });
    let mut k = Array2::zeros((n, n));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            k[[i, j]] = v;
        }
    }
    k
}

/// Median of the n(n-1)/2 pairwise distances (squared or plain).
///
/// Ties are resolved the usual way: odd counts take the middle value, even
/// counts average the two middle values.
pub fn median_pairwise(data: &ArrayView2<f64>, squared: bool) -> Result<f64> {
    let n = data.nrows();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in 0..i {
            let d2 = sq_dist(&data.row(i), &data.row(j));
            dists.push(if squared { d2 } else { d2.sqrt() });
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = dists.len();
    let median = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    if median <= 0.0 {
        return Err(Error::ZeroEpsilon);
    }
    Ok(median)
}

/// Resolves the kernel scale for a dataset.
pub fn epsilon_from_rule(rule: EpsilonRule, data: &ArrayView2<f64>) -> Result<f64> {
    match rule {
        EpsilonRule::MedianSquaredPairwise => median_pairwise(data, true),
        EpsilonRule::MedianPairwise => median_pairwise(data, false),
        EpsilonRule::Fixed(e) => {
            if e > 0.0 {
                Ok(e)
            } else {
                Err(Error::Config("fixed epsilon must be positive".into()))
            }
        }
    }
}

/// Density normalization followed by row normalization: returns the Markov
/// matrix `S = P^-1 D^-kappa K D^-kappa` with P the row sums of the middle
/// factor.
pub fn normalize(affinity: &ArrayView2<f64>, kappa: f64) -> Result<Array2<f64>> {
    let n = affinity.nrows();
    let mut d = Array1::zeros(n);
    for i in 0..n {
        let s: f64 = affinity.row(i).sum();
        if s <= 0.0 {
            return Err(Error::ZeroRowSum { row: i });
        }
        d[i] = s.powf(-kappa);
    }
    let mut ktilde = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            ktilde[[i, j]] = d[i] * affinity[[i, j]] * d[j];
        }
    }
    for i in 0..n {
        let s: f64 = ktilde.row(i).sum();
        if s <= 0.0 {
            return Err(Error::ZeroRowSum { row: i });
        }
        let mut row = ktilde.row_mut(i);
        row /= s;
    }
    Ok(ktilde)
}

/// Flips each column so its largest-magnitude entry is positive.
fn fix_signs(modes: &mut Array2<f64>) {
    for mut col in modes.columns_mut() {
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
}

/// Coefficient of variation used to spot the constant trivial mode.
fn coefficient_of_variation(v: &ArrayView1<f64>) -> f64 {
    let n = v.len() as f64;
    let mean = v.sum() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if mean.abs() < 1e-300 {
        f64::INFINITY
    } else {
        var.sqrt() / mean.abs()
    }
}

/// Runs the full diffusion-maps computation on `data` (rows are points).
///
/// Retains the `n_modes_keep + 1` leading eigenpairs (including the trivial
/// constant mode) and applies the configured mode selection to the
/// nontrivial ones.
pub fn eigendecompose(config: &DmapsConfig, data: &Array2<f64>) -> Result<DmapsEmbedding> {
    config.validate()?;
    let n = data.nrows();
    if n < 3 {
        return Err(Error::InsufficientData { needed: 3, got: n });
    }
    let epsilon = epsilon_from_rule(config.epsilon_rule, &data.view())?;
    let k = gaussian_affinity(&data.view(), epsilon);

    // Density normalization (without row normalization).
    let mut dpow = Array1::zeros(n);
    for i in 0..n {
        let s: f64 = k.row(i).sum();
        if s <= 0.0 {
            return Err(Error::ZeroRowSum { row: i });
        }
        dpow[i] = s.powf(-config.kappa);
    }
    let mut ktilde = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            ktilde[[i, j]] = dpow[i] * k[[i, j]] * dpow[j];
        }
    }

    // Symmetric conjugate of the Markov matrix: same spectrum, real
    // eigenvectors, and back-transform by Q^{-1/2}.
    let mut qinv_sqrt = Array1::zeros(n);
    for i in 0..n {
        let s: f64 = ktilde.row(i).sum();
        if s <= 0.0 {
            return Err(Error::ZeroRowSum { row: i });
        }
        qinv_sqrt[i] = 1.0 / s.sqrt();
    }
    let mut msym = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            msym[[i, j]] = qinv_sqrt[i] * ktilde[[i, j]] * qinv_sqrt[j];
        }
    }

    let (vals, vecs) = sym_eig_desc(&msym)?;
    let keep = (config.n_modes_keep + 1).min(n);
    let mut eigenvalues = Array1::zeros(keep);
    let mut modes = Array2::zeros((n, keep));
    for c in 0..keep {
        eigenvalues[c] = vals[c];
        let mut col = modes.column_mut(c);
        for i in 0..n {
            col[i] = vecs[[i, c]] * qinv_sqrt[i];
        }
        let norm = col.dot(&col).sqrt();
        col /= norm;
    }
    fix_signs(&mut modes);

    let mut embedding = DmapsEmbedding {
        eigenvalues,
        modes,
        selected_indices: Vec::new(),
        epsilon_used: epsilon,
        kappa: config.kappa,
        dataset: data.clone(),
    };
    embedding.selected_indices = select_modes(&embedding, &config.mode_selection)?;
    Ok(embedding)
}

/// Columns of `embedding.modes` that are not the constant trivial mode, in
/// eigenvalue order. Detection is by coefficient of variation, not position,
/// so numerical ties do not confuse it.
fn nontrivial_columns(embedding: &DmapsEmbedding) -> Vec<usize> {
    (0..embedding.modes.ncols())
        .filter(|&c| coefficient_of_variation(&embedding.modes.column(c)) >= 1e-6)
        .collect()
}

/// Applies a mode-selection rule to a fitted embedding, returning column
/// indices into `embedding.modes`.
pub fn select_modes(embedding: &DmapsEmbedding, rule: &ModeSelection) -> Result<Vec<usize>> {
    let nontrivial = nontrivial_columns(embedding);
    match rule {
        ModeSelection::FirstK => {
            let k = embedding.modes.ncols() - 1;
            Ok(nontrivial.into_iter().take(k).collect())
        }
        ModeSelection::ManualIndices(indices) => {
            for &i in indices {
                if i >= embedding.modes.ncols() {
                    return Err(Error::ModeIndexOutOfRange {
                        index: i,
                        available: embedding.modes.ncols(),
                    });
                }
            }
            Ok(indices.clone())
        }
        ModeSelection::ResidualTest(threshold) => {
            let mut kept: Vec<usize> = Vec::new();
            for &c in &nontrivial {
                if kept.is_empty() {
                    kept.push(c);
                    continue;
                }
                let n = embedding.modes.nrows();
                let mut coords = Array2::zeros((n, kept.len()));
                for (j, &kc) in kept.iter().enumerate() {
                    coords.column_mut(j).assign(&embedding.modes.column(kc));
                }
                let target = embedding.modes.column(c).to_owned();
                let r = loo_local_linear_residual(&coords, &target)?;
                if r > *threshold {
                    kept.push(c);
                }
            }
            Ok(kept)
        }
    }
}

/// Normalized leave-one-out residual of a kernel-weighted local linear fit
/// of `target` on `coords`.
///
/// Returns ~1 when the target is a genuinely new direction and ~0 when it is
/// a (harmonic) function of the given coordinates. The locality scale is a
/// third of the median squared pairwise distance of `coords`.
pub fn loo_local_linear_residual(coords: &Array2<f64>, target: &Array1<f64>) -> Result<f64> {
    let n = coords.nrows();
    let d = coords.ncols();
    let eps_loc = median_pairwise(&coords.view(), true)? / 3.0;

    let predictions = map_indexed(n, |i| {
        let bi = coords.row(i);
        // Weighted least squares for v ~ a + b^T (B_j - B_i), excluding i.
        let mut ata = Array2::<f64>::zeros((d + 1, d + 1));
        let mut atb = Array1::<f64>::zeros(d + 1);
        for j in 0..n {
            if j == i {
                continue;
            }
            let w = (-sq_dist(&bi, &coords.row(j)) / eps_loc).exp();
            if w < 1e-300 {
                continue;
            }
            let mut feat = Array1::<f64>::zeros(d + 1);
            feat[0] = 1.0;
            for c in 0..d {
                feat[c + 1] = coords[[j, c]] - bi[c];
            }
            for a in 0..=d {
                for b in 0..=d {
                    ata[[a, b]] += w * feat[a] * feat[b];
                }
                atb[a] += w * feat[a] * target[j];
            }
        }
        match solve_small(&ata, &atb) {
            Ok(sol) => sol[0],
            Err(_) => {
                // Degenerate neighbourhood: fall back to the weighted mean.
                if ata[[0, 0]] > 0.0 {
                    atb[0] / ata[[0, 0]]
                } else {
                    0.0
                }
            }
        }
    });

    let num: f64 = predictions
        .iter()
        .zip(target.iter())
        .map(|(p, t)| (t - p) * (t - p))
        .sum();
    let den: f64 = target.iter().map(|t| t * t).sum();
    Ok((num / den).sqrt())
}

/// CSV dump: a header `index,v1,..,vk`, one `lambda` row with the selected
/// modes' eigenvalues, then one row per dataset point.
pub fn write_embedding_csv(embedding: &DmapsEmbedding, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("index");
    for j in 1..=embedding.selected_indices.len() {
        let _ = write!(out, ",v{j}");
    }
    out.push('\n');
    out.push_str("lambda");
    for &c in &embedding.selected_indices {
        out.push(',');
        out.push_str(&crate::dynamics::fmt_f64(embedding.eigenvalues[c]));
    }
    out.push('\n');
    for i in 0..embedding.modes.nrows() {
        let _ = write!(out, "{i}");
        for &c in &embedding.selected_indices {
            out.push(',');
            out.push_str(&crate::dynamics::fmt_f64(embedding.modes[[i, c]]));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
