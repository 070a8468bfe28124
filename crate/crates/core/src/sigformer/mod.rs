//! Multi-task transformer: spectrum sensing on a `[CLS]` token, then one
//! replica of the backbone features per sub-band of interest for modulation
//! classification and symbol demodulation.
//!
//! Stage 1 embeds the unfolded `N x 2P` sample matrix, prepends `cls_ss`,
//! adds positions and runs `n_layers_ss` encoders; `ŝ = σ(head_ss(row 0))`.
//! Stage 2 replaces row 0 with `cls_mod`, appends the band's identification
//! token (without a position) and runs `n_layers_demod` encoders;
//! `m̂ = softmax(head_mod(row 0))` and every remaining row goes through the
//! demodulator of the selected modulation.
//!
//! Demodulator outputs use `M_mod + 1` native classes (constellation indices,
//! then `[EOS]` at index `M_mod`), padded to `M_max + 1` with probability-zero
//! entries.

mod config;
mod layers;
mod params;

use ndarray::{s, Array1, Array2};

use crate::sampling::CosetMatrix;
use crate::{Error, Result};

pub use config::ModelConfig;
pub use layers::{attention, gelu, gelu_grad, sigmoid, softmax, LN_EPS};
pub use params::{EncoderParams, LayerNorm, Linear, ModelParams, TensorMut, TensorRef};

pub(crate) use layers::EncoderCache;
use layers::{encoder_backward, encoder_forward, linear_backward, linear_backward_row};

/// `X'[n, 2j] = Re X[n, j]`, `X'[n, 2j + 1] = Im X[n, j]`.
pub fn unfold_samples(x: &CosetMatrix) -> Array2<f64> {
    let (n, p) = (x.slots(), x.p());
    Array2::from_shape_fn((n, 2 * p), |(i, c)| {
        let v = x.x[(i, c / 2)];
        if c % 2 == 0 {
            v.re
        } else {
            v.im
        }
    })
}

fn check_input(xin: &Array2<f64>, params: &ModelParams) -> Result<()> {
    let cfg = &params.config;
    if xin.ncols() != 2 * cfg.cosets || xin.nrows() == 0 || xin.nrows() > cfg.slots {
        return Err(Error::Shape(format!(
            "input is {}x{}, model takes up to {} rows of {} features",
            xin.nrows(),
            xin.ncols(),
            cfg.slots,
            2 * cfg.cosets
        )));
    }
    Ok(())
}

fn embed_unfolded(xin: &Array2<f64>, params: &ModelParams) -> Result<Array2<f64>> {
    check_input(xin, params)?;
    let n = xin.nrows();
    let mut tokens = Array2::zeros((n + 1, params.config.d_model));
    tokens.row_mut(0).assign(&params.cls_ss);
    tokens.slice_mut(s![1.., ..]).assign(&params.embed.forward(xin));
    tokens += &params.pos.slice(s![..n + 1, ..]);
    Ok(tokens)
}

/// Token matrix `(N + 1) x d_model` entering the first encoder.
pub fn embed_samples(x: &CosetMatrix, params: &ModelParams) -> Result<Array2<f64>> {
    embed_unfolded(&unfold_samples(x), params)
}

fn run_stack(
    mut x: Array2<f64>,
    layers: &[EncoderParams],
    heads: usize,
) -> (Array2<f64>, Vec<EncoderCache>) {
    let alpha = ModelConfig::deepnorm_alpha(layers.len());
    let mut caches = Vec::with_capacity(layers.len());
    for p in layers {
        let (y, c) = encoder_forward(&x, p, heads, alpha);
        caches.push(c);
        x = y;
    }
    (x, caches)
}

/// Occupancy probabilities `ŝ`, one per sub-band.
pub fn sense_spectrum(x: &CosetMatrix, params: &ModelParams) -> Result<Vec<f64>> {
    let (s_hat, _, _) = stage1(&unfold_samples(x), params)?;
    Ok(s_hat)
}

fn stage1(
    xin: &Array2<f64>,
    params: &ModelParams,
) -> Result<(Vec<f64>, Array2<f64>, Vec<EncoderCache>)> {
    let tokens = embed_unfolded(xin, params)?;
    let (features, caches) = run_stack(tokens, &params.encoders_ss, params.config.heads);
    let logit = params.head_ss.forward_row(&features.row(0).to_owned());
    let s_hat = logit.iter().map(|&z| layers::sigmoid(z)).collect();
    Ok((s_hat, features, caches))
}

/// How stage 2 picks the demodulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModSelector {
    /// Argmax of the band's own `m̂`.
    Predicted,
    /// A known modulation class.
    Given(usize),
}

/// Stage-2 output for one sub-band.
#[derive(Debug, Clone, PartialEq)]
pub struct BandOutput {
    pub band: usize,
    pub m_hat: Vec<f64>,
    /// Modulation class whose demodulator produced `y_hat`.
    pub modulation: usize,
    /// `(N + 1) x (M_max + 1)` symbol probabilities.
    pub y_hat: Array2<f64>,
    /// `[EOS]` column of the selected demodulator (`M_mod`).
    pub eos: usize,
}

impl BandOutput {
    pub fn predicted_modulation(&self) -> usize {
        argmax(&self.m_hat)
    }

    /// Arg-max symbols up to (excluding) the first `[EOS]`.
    pub fn symbols(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for row in self.y_hat.rows() {
            let k = argmax(row.as_slice().expect("standard layout"));
            if k == self.eos {
                break;
            }
            out.push(k);
        }
        out
    }

    /// Exactly `n` symbols, ignoring `[EOS]`, for receivers told the length.
    pub fn symbols_with_length(&self, n: usize) -> Vec<usize> {
        self.y_hat
            .rows()
            .into_iter()
            .take(n)
            .map(|row| argmax(&row.as_slice().expect("standard layout")[..self.eos]))
            .collect()
    }
}

pub(crate) fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

pub(crate) struct ReplicaCache {
    pub band: usize,
    pub modulation: usize,
    enc: Vec<EncoderCache>,
    out: Array2<f64>,
}

fn stage2(
    features: &Array2<f64>,
    band: usize,
    params: &ModelParams,
    selector: ModSelector,
) -> Result<(BandOutput, ReplicaCache)> {
    let cfg = &params.config;
    if band >= cfg.n_band {
        return Err(Error::BandOutOfRange {
            band,
            n_band: cfg.n_band,
        });
    }
    let n1 = features.nrows();
    let mut tokens = Array2::zeros((n1 + 1, cfg.d_model));
    tokens.row_mut(0).assign(&params.cls_mod);
    tokens.slice_mut(s![1..n1, ..]).assign(&features.slice(s![1.., ..]));
    tokens.row_mut(n1).assign(&params.id_tokens.row(band));
    let (out, enc) = run_stack(tokens, &params.encoders_demod, cfg.heads);
    let m_logit = params.head_mod.forward_row(&out.row(0).to_owned());
    let m_hat = softmax(m_logit.as_slice().expect("standard layout"));
    let modulation = match selector {
        ModSelector::Predicted => argmax(&m_hat),
        ModSelector::Given(m) if m < cfg.n_mod() => m,
        ModSelector::Given(m) => {
            return Err(Error::Config(format!("modulation class {m} out of range")))
        }
    };
    let order = cfg.mod_orders[modulation];
    let logits = params.head_demod[modulation].forward(&out.slice(s![1.., ..]).to_owned());
    let mut y_hat = Array2::zeros((n1, cfg.demod_classes()));
    for (mut row, lrow) in y_hat.rows_mut().into_iter().zip(logits.rows()) {
        let p = softmax(lrow.as_slice().expect("standard layout"));
        row.slice_mut(s![..order + 1]).assign(&Array1::from(p));
    }
    let output = BandOutput {
        band,
        m_hat,
        modulation,
        y_hat,
        eos: order,
    };
    Ok((
        output,
        ReplicaCache {
            band,
            modulation,
            enc,
            out,
        },
    ))
}

/// Stage 2 on precomputed stage-1 features (`(N + 1) x d_model`).
pub fn analyze_band(
    features: &Array2<f64>,
    band: usize,
    params: &ModelParams,
    selector: ModSelector,
) -> Result<BandOutput> {
    if features.ncols() != params.config.d_model || features.nrows() < 2 {
        return Err(Error::Shape(format!(
            "features are {}x{}",
            features.nrows(),
            features.ncols()
        )));
    }
    Ok(stage2(features, band, params, selector)?.0)
}

/// Stage-1 output features, the input of [`analyze_band`].
pub fn backbone_features(x: &CosetMatrix, params: &ModelParams) -> Result<Array2<f64>> {
    Ok(stage1(&unfold_samples(x), params)?.1)
}

/// Which replicas to build and which demodulators to use. `None` means
/// "use the network's own prediction".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Guide {
    pub bands: Option<Vec<usize>>,
    /// Aligned with `bands` when both are given.
    pub modulations: Option<Vec<usize>>,
}

impl Guide {
    pub fn inference() -> Self {
        Guide::default()
    }

    pub fn occupancy(bands: Vec<usize>) -> Self {
        Guide {
            bands: Some(bands),
            modulations: None,
        }
    }

    pub fn teacher(bands: Vec<usize>, modulations: Vec<usize>) -> Self {
        Guide {
            bands: Some(bands),
            modulations: Some(modulations),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub s_hat: Vec<f64>,
    pub bands: Vec<BandOutput>,
}

impl ForwardTrace {
    pub fn occupancy(&self) -> Vec<bool> {
        self.s_hat.iter().map(|&p| p > 0.5).collect()
    }

    pub fn band(&self, index: usize) -> Option<&BandOutput> {
        self.bands.iter().find(|b| b.band == index)
    }
}

pub(crate) struct FrameCache {
    xin: Array2<f64>,
    stage1: Vec<EncoderCache>,
    features: Array2<f64>,
    pub replicas: Vec<ReplicaCache>,
}

pub(crate) fn forward_cached(
    xin: &Array2<f64>,
    params: &ModelParams,
    guide: &Guide,
) -> Result<(ForwardTrace, FrameCache)> {
    let (s_hat, features, stage1_cache) = stage1(xin, params)?;
    let bands: Vec<usize> = match &guide.bands {
        Some(b) => b.clone(),
        None => (0..s_hat.len()).filter(|&k| s_hat[k] > 0.5).collect(),
    };
    if let Some(m) = &guide.modulations {
        if m.len() != bands.len() {
            return Err(Error::Shape(format!(
                "{} modulations for {} bands",
                m.len(),
                bands.len()
            )));
        }
    }
    let mut outputs = Vec::with_capacity(bands.len());
    let mut replicas = Vec::with_capacity(bands.len());
    for (i, &band) in bands.iter().enumerate() {
        let selector = match &guide.modulations {
            Some(m) => ModSelector::Given(m[i]),
            None => ModSelector::Predicted,
        };
        let (o, c) = stage2(&features, band, params, selector)?;
        outputs.push(o);
        replicas.push(c);
    }
    Ok((
        ForwardTrace {
            s_hat,
            bands: outputs,
        },
        FrameCache {
            xin: xin.clone(),
            stage1: stage1_cache,
            features,
            replicas,
        },
    ))
}

/// Full forward pass: sensing, then one replica per guided or predicted band.
pub fn forward_full(x: &CosetMatrix, params: &ModelParams, guide: &Guide) -> Result<ForwardTrace> {
    Ok(forward_cached(&unfold_samples(x), params, guide)?.0)
}

/// Loss gradients with respect to the network outputs of one frame.
pub(crate) struct OutputGrads {
    /// `∂L/∂(head_ss logits)`.
    pub s_logit: Array1<f64>,
    /// Per replica, in cache order: `∂L/∂(head_mod logits)` and
    /// `∂L/∂(demodulator logits)` (`(N + 1) x (M_mod + 1)`).
    pub replicas: Vec<(Array1<f64>, Array2<f64>)>,
}

/// Accumulates the parameter gradient of one frame into `grads`.
pub(crate) fn backward(
    params: &ModelParams,
    cache: &FrameCache,
    dout: &OutputGrads,
    grads: &mut ModelParams,
) {
    let heads = params.config.heads;
    let n1 = cache.features.nrows();
    let mut dfeat = Array2::<f64>::zeros(cache.features.dim());
    let row0 = cache.features.row(0).to_owned();
    let d0 = linear_backward_row(&row0, &dout.s_logit, &params.head_ss, &mut grads.head_ss);
    dfeat.row_mut(0).assign(&d0);

    let alpha2 = ModelConfig::deepnorm_alpha(params.encoders_demod.len());
    for (rep, (dm, dy)) in cache.replicas.iter().zip(&dout.replicas) {
        let mut dtok = Array2::<f64>::zeros(rep.out.dim());
        let r0 = rep.out.row(0).to_owned();
        let d0 = linear_backward_row(&r0, dm, &params.head_mod, &mut grads.head_mod);
        dtok.row_mut(0).assign(&d0);
        let body = rep.out.slice(s![1.., ..]).to_owned();
        let db = linear_backward(
            &body,
            dy,
            &params.head_demod[rep.modulation],
            &mut grads.head_demod[rep.modulation],
        );
        dtok.slice_mut(s![1.., ..]).assign(&db);
        for ((c, p), g) in rep
            .enc
            .iter()
            .zip(&params.encoders_demod)
            .zip(grads.encoders_demod.iter_mut())
            .rev()
        {
            dtok = encoder_backward(&dtok, c, p, heads, alpha2, g);
        }
        grads.cls_mod += &dtok.row(0);
        let mut feat_rows = dfeat.slice_mut(s![1.., ..]);
        feat_rows += &dtok.slice(s![1..n1, ..]);
        let mut id = grads.id_tokens.row_mut(rep.band);
        id += &dtok.row(n1);
    }

    let alpha1 = ModelConfig::deepnorm_alpha(params.encoders_ss.len());
    let mut dtok = dfeat;
    for ((c, p), g) in cache
        .stage1
        .iter()
        .zip(&params.encoders_ss)
        .zip(grads.encoders_ss.iter_mut())
        .rev()
    {
        dtok = encoder_backward(&dtok, c, p, heads, alpha1, g);
    }
    let mut pos = grads.pos.slice_mut(s![..n1, ..]);
    pos += &dtok;
    grads.cls_ss += &dtok.row(0);
    let de = dtok.slice(s![1.., ..]).to_owned();
    linear_backward(&cache.xin, &de, &params.embed, &mut grads.embed);
}
