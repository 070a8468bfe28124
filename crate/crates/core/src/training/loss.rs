//! Focal sensing loss, classification and demodulation cross entropies.
//!
//! The per-element kernels here are shared by the dense loss functions and
//! by the training path, which evaluates them frame by frame.

use ndarray::{Array2, Array3, Array4};

use crate::scene::SceneSpec;
use crate::sigformer::ModelConfig;
use crate::{Error, Result};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before logarithms.
pub const PROB_EPS: f64 = 1e-7;

/// Which log term multiplies the occupancy label in the focal loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FocalPairing {
    /// `-S ln ŝ - (1 - S) ln(1 - ŝ)`.
    #[default]
    Standard,
    /// `-S ln(1 - ŝ) - (1 - S) ln ŝ`, kept for comparison only.
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Focal exponent.
    pub theta: f64,
    pub pairing: FocalPairing,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.1,
            beta: 0.1,
            gamma: 1.0,
            theta: 2.0,
            pairing: FocalPairing::Standard,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("theta", self.theta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be non-negative")));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Self {
        LossWeights {
            alpha: self.alpha * k,
            beta: self.beta * k,
            gamma: self.gamma * k,
            ..*self
        }
    }
}

/// Component losses and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub ss: f64,
    pub mc: f64,
    pub demod: f64,
    pub total: f64,
}

pub fn loss_total(ss: f64, mc: f64, demod: f64, w: &LossWeights) -> f64 {
    w.alpha * ss + w.beta * mc + w.gamma * demod
}

impl LossBreakdown {
    pub fn new(ss: f64, mc: f64, demod: f64, w: &LossWeights) -> Self {
        LossBreakdown {
            ss,
            mc,
            demod,
            total: loss_total(ss, mc, demod, w),
        }
    }
}

/// Focal term `w^θ · bce` for one sub-band, with `w = S(1-ŝ) + (1-S)ŝ`.
/// Returns the loss and its derivative with respect to `ŝ`.
pub fn focal_term(s: f64, s_hat: f64, theta: f64, pairing: FocalPairing) -> (f64, f64) {
    let c = s_hat.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let live = c == s_hat;
    let (a, b) = match pairing {
        FocalPairing::Standard => (s, 1.0 - s),
        FocalPairing::Printed => (1.0 - s, s),
    };
    // bce = -a ln ŝ - b ln(1 - ŝ)
    let bce = -a * c.ln() - b * (1.0 - c).ln();
    let dbce = if live { -a / c + b / (1.0 - c) } else { 0.0 };
    let w = s * (1.0 - s_hat) + (1.0 - s) * s_hat;
    let dw = 1.0 - 2.0 * s;
    if theta == 0.0 {
        return (bce, dbce);
    }
    let wt = w.powf(theta);
    let dwt = if w > 0.0 { theta * w.powf(theta - 1.0) * dw } else { 0.0 };
    (wt * bce, dwt * bce + wt * dbce)
}

/// `-ln p` of the labelled class, with clamping. The second value tells
/// whether the clamp was inactive (the softmax gradient `p - onehot` applies).
pub fn ce_term(p_true: f64) -> (f64, bool) {
    let c = p_true.max(PROB_EPS);
    (-c.ln(), c == p_true)
}

fn same_shape(a: &[usize], b: &[usize], what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

/// Focal sensing loss summed over sub-bands, averaged over frames.
pub fn loss_ss(
    s: &Array2<f64>,
    s_hat: &Array2<f64>,
    theta: f64,
    pairing: FocalPairing,
) -> Result<f64> {
    same_shape(s.shape(), s_hat.shape(), "occupancy")?;
    if s_hat.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Shape("ŝ outside [0, 1]".into()));
    }
    if s.nrows() == 0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (&l, &p) in s.iter().zip(s_hat.iter()) {
        sum += focal_term(l, p, theta, pairing).0;
    }
    Ok(sum / s.nrows() as f64)
}

/// Cross entropy over occupied bands, divided by `ΣS`.
/// `m` and `m_hat` are `batch x n_band x n_mod`.
pub fn loss_mc(s: &Array2<f64>, m: &Array3<f64>, m_hat: &Array3<f64>) -> Result<f64> {
    same_shape(m.shape(), m_hat.shape(), "modulation")?;
    same_shape(s.shape(), &m.shape()[..2], "occupancy")?;
    let den: f64 = s.sum();
    if den == 0.0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for ((f, k), &occ) in s.indexed_iter() {
        if occ == 0.0 {
            continue;
        }
        for c in 0..m.shape()[2] {
            let t = m[(f, k, c)];
            if t != 0.0 {
                sum += occ * t * ce_term(m_hat[(f, k, c)]).0;
            }
        }
    }
    Ok(sum / den)
}

/// Cross entropy over the first `n_symb + 1` positions (symbols, then
/// `[EOS]`) of occupied bands, divided by `Σ S (n_symb + 1)`.
/// `y` and `y_hat` are `batch x n_band x positions x classes`.
pub fn loss_demod(
    s: &Array2<f64>,
    y: &Array4<f64>,
    y_hat: &Array4<f64>,
    n_symb: &Array2<usize>,
) -> Result<f64> {
    same_shape(y.shape(), y_hat.shape(), "symbols")?;
    same_shape(s.shape(), &y.shape()[..2], "occupancy")?;
    same_shape(s.shape(), n_symb.shape(), "lengths")?;
    let positions = y.shape()[2];
    let mut den = 0.0;
    let mut sum = 0.0;
    for ((f, k), &occ) in s.indexed_iter() {
        if occ == 0.0 {
            continue;
        }
        let n = n_symb[(f, k)];
        if n + 1 > positions {
            return Err(Error::Shape(format!("{n} symbols do not fit {positions} positions")));
        }
        den += occ * (n + 1) as f64;
        for pos in 0..=n {
            for c in 0..y.shape()[3] {
                let t = y[(f, k, pos, c)];
                if t != 0.0 {
                    sum += occ * t * ce_term(y_hat[(f, k, pos, c)]).0;
                }
            }
        }
    }
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(sum / den)
}

/// Ground truth of one occupied sub-band.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandLabel {
    pub band: usize,
    pub modulation: usize,
    pub symbols: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameLabels {
    pub n_band: usize,
    /// Occupied bands in increasing band order.
    pub bands: Vec<BandLabel>,
}

impl FrameLabels {
    pub fn from_scene(scene: &SceneSpec) -> Self {
        let mut bands: Vec<BandLabel> = scene
            .bands
            .iter()
            .map(|b| BandLabel {
                band: b.band_index,
                modulation: b.modulation.index(),
                symbols: b.symbols.clone(),
            })
            .collect();
        bands.sort_by_key(|b| b.band);
        FrameLabels {
            n_band: scene.grid.n_band,
            bands,
        }
    }

    pub fn occupancy(&self) -> Vec<bool> {
        let mut s = vec![false; self.n_band];
        for b in &self.bands {
            s[b.band] = true;
        }
        s
    }

    /// Demodulator class at output position `pos`: a symbol, `[EOS]`
    /// (`M_mod`) right after the last symbol, `None` for padding.
    pub fn target(band: &BandLabel, pos: usize, order: usize) -> Option<usize> {
        match pos.cmp(&band.symbols.len()) {
            std::cmp::Ordering::Less => Some(band.symbols[pos]),
            std::cmp::Ordering::Equal => Some(order),
            std::cmp::Ordering::Greater => None,
        }
    }
}

/// Dense one-hot label tensors of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLabels {
    pub s: Array2<f64>,
    pub m: Array3<f64>,
    pub y: Array4<f64>,
    pub n_symb: Array2<usize>,
}

impl BatchLabels {
    pub fn from_frames(frames: &[FrameLabels], cfg: &ModelConfig) -> Result<Self> {
        let b = frames.len();
        let positions = cfg.slots + 1;
        let mut s = Array2::zeros((b, cfg.n_band));
        let mut m = Array3::zeros((b, cfg.n_band, cfg.n_mod()));
        let mut y = Array4::zeros((b, cfg.n_band, positions, cfg.demod_classes()));
        let mut n_symb = Array2::zeros((b, cfg.n_band));
        for (f, fr) in frames.iter().enumerate() {
            for band in &fr.bands {
                if band.band >= cfg.n_band || band.modulation >= cfg.n_mod() {
                    return Err(Error::Shape(format!(
                        "label band {} / class {} outside the model",
                        band.band, band.modulation
                    )));
                }
                let order = cfg.mod_orders[band.modulation];
                if band.symbols.len() + 1 > positions {
                    return Err(Error::Shape(format!(
                        "{} symbols do not fit {positions} positions",
                        band.symbols.len()
                    )));
                }
                s[(f, band.band)] = 1.0;
                m[(f, band.band, band.modulation)] = 1.0;
                n_symb[(f, band.band)] = band.symbols.len();
                for pos in 0..positions {
                    if let Some(c) = FrameLabels::target(band, pos, order) {
                        if c > order {
                            return Err(Error::SymbolOutOfRange { index: c, order });
                        }
                        y[(f, band.band, pos, c)] = 1.0;
                    }
                }
            }
        }
        Ok(BatchLabels { s, m, y, n_symb })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Axis};

    #[test]
    fn confident_correct_predictions_cost_nothing() {
        let s = array![[1.0, 0.0, 1.0]];
        let p = array![[1.0 - 1e-9, 1e-9, 1.0 - 1e-9]];
        assert!(loss_ss(&s, &p, 2.0, FocalPairing::Standard).unwrap() < 1e-12);
        assert!(loss_ss(&s, &p, 0.0, FocalPairing::Standard).unwrap() < 1e-6);
    }

    #[test]
    fn theta_zero_is_plain_bce() {
        let s = array![[1.0, 0.0], [0.0, 1.0]];
        let p = array![[0.8, 0.3], [0.1, 0.6]];
        let direct = (-(0.8f64.ln()) - 0.7f64.ln() - 0.9f64.ln() - 0.6f64.ln()) / 2.0;
        let l = loss_ss(&s, &p, 0.0, FocalPairing::Standard).unwrap();
        assert!((l - direct).abs() < 1e-14);
    }

    #[test]
    fn printed_pairing_penalizes_correct_predictions() {
        let s = array![[1.0]];
        let p = array![[0.9]];
        let std = loss_ss(&s, &p, 0.0, FocalPairing::Standard).unwrap();
        let printed = loss_ss(&s, &p, 0.0, FocalPairing::Printed).unwrap();
        assert!(printed > std);
    }

    #[test]
    fn focal_damping_on_easy_bands() {
        for &(s, p) in &[(1.0, 0.7), (0.0, 0.2), (1.0, 0.99)] {
            let (focal, _) = focal_term(s, p, 2.0, FocalPairing::Standard);
            let (plain, _) = focal_term(s, p, 0.0, FocalPairing::Standard);
            assert!(focal < plain);
        }
    }

    #[test]
    fn focal_derivative_by_differences() {
        for pairing in [FocalPairing::Standard, FocalPairing::Printed] {
            for &(s, p, th) in &[(1.0, 0.3, 2.0), (0.0, 0.6, 2.0), (1.0, 0.8, 0.5), (0.0, 0.1, 0.0)] {
                let h = 1e-7;
                let fd = (focal_term(s, p + h, th, pairing).0 - focal_term(s, p - h, th, pairing).0)
                    / (2.0 * h);
                let an = focal_term(s, p, th, pairing).1;
                assert!((fd - an).abs() < 1e-6 * (1.0 + an.abs()), "{fd} vs {an}");
            }
        }
    }

    #[test]
    fn mc_closed_forms() {
        let s = array![[0.0, 0.0]];
        let m = Array3::zeros((1, 2, 4));
        assert_eq!(loss_mc(&s, &m, &Array3::from_elem((1, 2, 4), 0.25)).unwrap(), 0.0);
        let s = array![[1.0, 0.0]];
        let mut m = Array3::zeros((1, 2, 4));
        m[(0, 0, 2)] = 1.0;
        let uniform = Array3::from_elem((1, 2, 4), 0.25);
        assert!((loss_mc(&s, &m, &uniform).unwrap() - 4f64.ln()).abs() < 1e-14);
        assert!(loss_mc(&s, &m, &m).unwrap().abs() < 1e-15);
    }

    fn one_band_labels(symbols: Vec<usize>, modulation: usize) -> (FrameLabels, ModelConfig) {
        let cfg = ModelConfig::tiny();
        let fl = FrameLabels {
            n_band: cfg.n_band,
            bands: vec![BandLabel {
                band: 1,
                modulation,
                symbols,
            }],
        };
        (fl, cfg)
    }

    #[test]
    fn demod_closed_forms() {
        let (fl, cfg) = one_band_labels(vec![3, 0, 1], 0);
        let bl = BatchLabels::from_frames(&[fl], &cfg).unwrap();
        assert_eq!(bl.y[(0, 1, 3, 4)], 1.0, "EOS right after the symbols");
        assert_eq!(bl.y.index_axis(Axis(2), 4).sum(), 0.0, "padding");
        // perfect
        assert!(loss_demod(&bl.s, &bl.y, &bl.y, &bl.n_symb).unwrap().abs() < 1e-15);
        // uniform over the 5 native classes of QPSK
        let mut u = Array4::zeros(bl.y.dim());
        u.slice_mut(ndarray::s![.., .., .., ..5]).fill(0.2);
        let l = loss_demod(&bl.s, &bl.y, &u, &bl.n_symb).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn eos_is_scored() {
        let (fl, cfg) = one_band_labels(vec![2], 0);
        let bl = BatchLabels::from_frames(&[fl], &cfg).unwrap();
        let mut p = bl.y.clone();
        p[(0, 1, 1, 4)] = 0.5;
        p[(0, 1, 1, 0)] = 0.5;
        let l = loss_demod(&bl.s, &bl.y, &p, &bl.n_symb).unwrap();
        assert!((l - 2f64.ln() / 2.0).abs() < 1e-14);
    }

    #[test]
    fn weights_combine_linearly() {
        let w = LossWeights::default();
        let a = loss_total(0.3, 0.7, 1.1, &w);
        assert!((loss_total(0.3, 0.7, 1.1, &w.scaled(2.0)) - 2.0 * a).abs() < 1e-15);
        let demod_only = LossWeights {
            alpha: 0.0,
            beta: 0.0,
            ..w
        };
        assert_eq!(loss_total(0.3, 0.7, 1.1, &demod_only), 1.1);
        assert!(LossWeights { alpha: -1.0, ..w }.validate().is_err());
    }
}
