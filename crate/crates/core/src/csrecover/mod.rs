//! Compressed-sensing baseline: SOMP support detection on the frequency
//! snapshots, least-squares recovery and classical receivers.

mod receiver;

use nalgebra::DMatrix;

use crate::sampling::{coset_snapshots, folding_matrix, slot_rate_signal, CosetMatrix};
use crate::scene::SamplingGrid;
use crate::{Complex64, Error, Result};

pub use receiver::{
    ber_qpsk_theory, classical_demod, matched_filter_snr, nyquist_band, q_function,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SompConfig {
    /// Upper bound on the support size.
    pub max_iters: usize,
    /// Stop once the residual energy is at most this fraction of `‖Y‖²`.
    pub residual_threshold: f64,
}

impl SompConfig {
    pub fn new(max_iters: usize, residual_threshold: f64, grid: &SamplingGrid) -> Result<Self> {
        let cfg = SompConfig {
            max_iters,
            residual_threshold,
        };
        cfg.validate(grid)?;
        Ok(cfg)
    }

    pub fn validate(&self, grid: &SamplingGrid) -> Result<()> {
        if self.max_iters == 0 || self.max_iters > grid.n_band {
            return Err(Error::Config(format!(
                "max_iters {} outside 1..={}",
                self.max_iters, grid.n_band
            )));
        }
        if !(0.0..1.0).contains(&self.residual_threshold) {
            return Err(Error::Config(format!(
                "residual threshold {} outside [0, 1)",
                self.residual_threshold
            )));
        }
        Ok(())
    }
}

/// Output of one SOMP run.
#[derive(Debug, Clone, PartialEq)]
pub struct SompResult {
    /// Selected bands in selection order.
    pub support: Vec<usize>,
    /// `n_band x N` recovered spectra; rows outside the support are zero.
    pub z_hat: DMatrix<Complex64>,
    /// `‖R‖²/‖Y‖²` before the first and after each iteration.
    pub residuals: Vec<f64>,
}

impl SompResult {
    pub fn occupancy(&self, n_band: usize) -> Vec<bool> {
        let mut s = vec![false; n_band];
        for &k in &self.support {
            s[k] = true;
        }
        s
    }
}

/// Greedy selection order and residual energies of SOMP run without a
/// residual threshold. Every thresholded run is a prefix of this path.
#[derive(Debug, Clone, PartialEq)]
pub struct SompPath {
    pub order: Vec<usize>,
    /// `residuals[i]` is the relative residual energy after `i` selections.
    pub residuals: Vec<f64>,
    pub max_iters: usize,
}

impl SompPath {
    /// The support `somp_sense` would return with threshold `threshold`.
    pub fn support_at(&self, threshold: f64) -> &[usize] {
        let mut i = 0;
        while i < self.max_iters && i < self.order.len() && self.residuals[i] > threshold {
            i += 1;
        }
        &self.order[..i]
    }

    pub fn occupancy_at(&self, threshold: f64, n_band: usize) -> Vec<bool> {
        let mut s = vec![false; n_band];
        for &k in self.support_at(threshold) {
            s[k] = true;
        }
        s
    }
}

fn energy(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|v| v.norm_sqr()).sum()
}

fn columns(a: &DMatrix<Complex64>, idx: &[usize]) -> DMatrix<Complex64> {
    DMatrix::from_fn(a.nrows(), idx.len(), |j, s| a[(j, idx[s])])
}

/// Solves `min ‖A Z - Y‖_F` by thin QR; falls back to the minimum-norm SVD
/// solution when `A` is rank deficient.
pub fn least_squares(a: &DMatrix<Complex64>, y: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let (rows, cols) = a.shape();
    if cols == 0 {
        return DMatrix::zeros(0, y.ncols());
    }
    if rows >= cols {
        let qr = a.clone().qr();
        let r = qr.r();
        let dmax = (0..cols).map(|i| r[(i, i)].norm()).fold(0.0, f64::max);
        let well_posed = (0..cols).all(|i| r[(i, i)].norm() > 1e-10 * dmax.max(f64::MIN_POSITIVE));
        if well_posed {
            let rhs = qr.q().adjoint() * y;
            if let Some(z) = r.solve_upper_triangular(&rhs) {
                return z;
            }
        }
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    svd.solve(y, 1e-10 * smax.max(f64::MIN_POSITIVE))
        .expect("SVD was computed with both factors")
}

fn run_somp(
    y: &DMatrix<Complex64>,
    a: &DMatrix<Complex64>,
    max_iters: usize,
    threshold: Option<f64>,
) -> (Vec<usize>, Vec<f64>, DMatrix<Complex64>) {
    let n_band = a.ncols();
    let ey = energy(y);
    let col_norm: Vec<f64> = (0..n_band).map(|k| a.column(k).norm()).collect();
    let mut support = Vec::new();
    let mut residual = y.clone();
    let mut z_s = DMatrix::zeros(0, y.ncols());
    let rel = |r: &DMatrix<Complex64>| if ey > 0.0 { energy(r) / ey } else { 0.0 };
    let mut residuals = vec![rel(&residual)];
    loop {
        let cur = *residuals.last().unwrap();
        let stop = match threshold {
            Some(t) => cur <= t,
            None => cur == 0.0,
        };
        if stop || support.len() >= max_iters {
            break;
        }
        let corr = a.adjoint() * &residual;
        let mut best = None;
        let mut best_v = f64::NEG_INFINITY;
        for k in 0..n_band {
            if support.contains(&k) || col_norm[k] == 0.0 {
                continue;
            }
            let v = corr.row(k).norm_squared() / (col_norm[k] * col_norm[k]);
            if v > best_v {
                best_v = v;
                best = Some(k);
            }
        }
        let Some(k) = best else { break };
        support.push(k);
        let a_s = columns(a, &support);
        z_s = least_squares(&a_s, y);
        residual = y - &a_s * &z_s;
        residuals.push(rel(&residual));
    }
    (support, residuals, z_s)
}

fn monitored_dictionary(grid: &SamplingGrid) -> DMatrix<Complex64> {
    folding_matrix(grid).columns(0, grid.n_band).into_owned()
}

/// SOMP on the frequency snapshots of `x`.
pub fn somp_sense(x: &CosetMatrix, cfg: &SompConfig) -> Result<SompResult> {
    cfg.validate(&x.grid)?;
    let y = coset_snapshots(x);
    let a = monitored_dictionary(&x.grid);
    let (support, residuals, z_s) = run_somp(&y, &a, cfg.max_iters, Some(cfg.residual_threshold));
    let mut z_hat = DMatrix::zeros(x.grid.n_band, y.ncols());
    for (s, &k) in support.iter().enumerate() {
        z_hat.set_row(k, &z_s.row(s));
    }
    Ok(SompResult {
        support,
        z_hat,
        residuals,
    })
}

/// Runs SOMP to `max_iters` (or a zero residual) so that every threshold can
/// be evaluated afterwards.
pub fn somp_path(x: &CosetMatrix, max_iters: usize) -> SompPath {
    let y = coset_snapshots(x);
    let a = monitored_dictionary(&x.grid);
    let max_iters = max_iters.min(x.grid.n_band);
    let (order, residuals, _) = run_somp(&y, &a, max_iters, None);
    SompPath {
        order,
        residuals,
        max_iters,
    }
}

/// Log-spaced residual thresholds swept to find the SOMP optimum.
pub fn threshold_grid() -> Vec<f64> {
    let n = 60;
    let (lo, hi) = (1e-4f64.ln(), 0.95f64.ln());
    (0..n)
        .map(|i| (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Picks the threshold maximizing exact-match accuracy over `paths` against
/// `truth`. Returns `(threshold, accuracy)`; ties go to the smaller threshold.
pub fn somp_optimum(paths: &[SompPath], truth: &[Vec<bool>], thresholds: &[f64]) -> (f64, f64) {
    let mut best = (thresholds.first().copied().unwrap_or(0.0), f64::NEG_INFINITY);
    if paths.is_empty() {
        return (best.0, 0.0);
    }
    for &t in thresholds {
        let hits = paths
            .iter()
            .zip(truth)
            .filter(|(p, s)| p.occupancy_at(t, s.len()) == **s)
            .count();
        let acc = hits as f64 / paths.len() as f64;
        if acc > best.1 {
            best = (t, acc);
        }
    }
    best
}

/// Least-squares recovery of one sub-band.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredBand {
    pub band_index: usize,
    /// The band's `N` spectrum coefficients (a row of `Z`).
    pub spectrum: Vec<Complex64>,
    /// Baseband content of the sub-band at the slot rate `1/(L T)`.
    pub slot_rate_signal: Vec<Complex64>,
}

impl RecoveredBand {
    pub fn from_spectrum(band_index: usize, spectrum: Vec<Complex64>) -> Self {
        let slot_rate_signal = slot_rate_signal(&spectrum);
        RecoveredBand {
            band_index,
            spectrum,
            slot_rate_signal,
        }
    }
}

/// One least-squares solve on a known support.
pub fn ls_recover_oracle(x: &CosetMatrix, true_support: &[usize]) -> Result<Vec<RecoveredBand>> {
    if true_support.len() > x.p() {
        return Err(Error::Unidentifiable {
            support: true_support.len(),
            cosets: x.p(),
        });
    }
    for &k in true_support {
        x.grid.check_band(k)?;
    }
    let y = coset_snapshots(x);
    let a_s = columns(&folding_matrix(&x.grid), true_support);
    let z = least_squares(&a_s, &y);
    Ok(true_support
        .iter()
        .enumerate()
        .map(|(s, &k)| RecoveredBand::from_spectrum(k, z.row(s).iter().copied().collect()))
        .collect())
}
