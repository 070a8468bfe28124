//! Losses, exact gradients, Adam and the training loop.
//!
//! Training uses teacher forcing: replicas are built for the labelled bands
//! and each one is demodulated by the head of its true modulation. All loss
//! denominators depend on labels only, so a batch is processed one frame at
//! a time and gradients are accumulated in frame order.

mod loss;

use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::sampling::CosetMatrix;
use crate::sigformer::{
    backward, forward_cached, unfold_samples, Guide, ModelConfig, ModelParams, OutputGrads,
};
use crate::{Error, Result};

pub use loss::{
    ce_term, focal_term, loss_demod, loss_mc, loss_ss, loss_total, BandLabel, BatchLabels,
    FocalPairing, FrameLabels, LossBreakdown, LossWeights, PROB_EPS,
};

/// One training example: unfolded samples and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainFrame {
    /// `N x 2P` real input.
    pub input: Array2<f64>,
    pub labels: FrameLabels,
}

impl TrainFrame {
    pub fn new(x: &CosetMatrix, labels: FrameLabels) -> Self {
        TrainFrame {
            input: unfold_samples(x),
            labels,
        }
    }
}

struct Denominators {
    frames: f64,
    bands: f64,
    positions: f64,
}

fn denominators(batch: &[TrainFrame]) -> Denominators {
    let mut d = Denominators {
        frames: batch.len() as f64,
        bands: 0.0,
        positions: 0.0,
    };
    for f in batch {
        for b in &f.labels.bands {
            d.bands += 1.0;
            d.positions += (b.symbols.len() + 1) as f64;
        }
    }
    d
}

fn needs_stage2(w: &LossWeights) -> bool {
    w.beta > 0.0 || w.gamma > 0.0
}

/// Loss of a batch and, when `grads` is given, its gradient accumulated
/// into it. With `beta = gamma = 0` stage 2 is skipped and its component
/// losses are reported as 0.
fn evaluate(
    params: &ModelParams,
    batch: &[TrainFrame],
    w: &LossWeights,
    mut grads: Option<&mut ModelParams>,
) -> Result<LossBreakdown> {
    w.validate()?;
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let cfg = &params.config;
    let den = denominators(batch);
    let stage2 = needs_stage2(w);
    let (mut ss, mut mc, mut demod) = (0.0, 0.0, 0.0);
    for frame in batch {
        let labels = &frame.labels;
        if labels.n_band != cfg.n_band {
            return Err(Error::Shape(format!(
                "labels for {} bands, model has {}",
                labels.n_band, cfg.n_band
            )));
        }
        let guide = if stage2 {
            Guide::teacher(
                labels.bands.iter().map(|b| b.band).collect(),
                labels.bands.iter().map(|b| b.modulation).collect(),
            )
        } else {
            Guide::occupancy(vec![])
        };
        let (trace, cache) = forward_cached(&frame.input, params, &guide)?;

        let occ = labels.occupancy();
        let mut d_s = Array1::zeros(cfg.n_band);
        for (k, &p) in trace.s_hat.iter().enumerate() {
            let s = if occ[k] { 1.0 } else { 0.0 };
            let (l, dl) = focal_term(s, p, w.theta, w.pairing);
            ss += l;
            d_s[k] = w.alpha / den.frames * dl * p * (1.0 - p);
        }

        let mut replica_grads = Vec::with_capacity(trace.bands.len());
        for (out, label) in trace.bands.iter().zip(&labels.bands) {
            let (l, live) = ce_term(out.m_hat[label.modulation]);
            mc += l;
            let mut dm = Array1::zeros(cfg.n_mod());
            if live {
                for (c, &p) in out.m_hat.iter().enumerate() {
                    let t = if c == label.modulation { 1.0 } else { 0.0 };
                    dm[c] = w.beta / den.bands * (p - t);
                }
            }
            let order = out.eos;
            let rows = out.y_hat.nrows();
            if label.symbols.len() + 1 > rows {
                return Err(Error::Shape(format!(
                    "{} symbols do not fit {rows} positions",
                    label.symbols.len()
                )));
            }
            let mut dy = Array2::zeros((rows, order + 1));
            for pos in 0..rows {
                let Some(t) = FrameLabels::target(label, pos, order) else {
                    break;
                };
                if t > order {
                    return Err(Error::SymbolOutOfRange { index: t, order });
                }
                let (l, live) = ce_term(out.y_hat[(pos, t)]);
                demod += l;
                if live {
                    for c in 0..=order {
                        let onehot = if c == t { 1.0 } else { 0.0 };
                        dy[(pos, c)] = w.gamma / den.positions * (out.y_hat[(pos, c)] - onehot);
                    }
                }
            }
            replica_grads.push((dm, dy));
        }

        if let Some(g) = grads.as_deref_mut() {
            let dout = OutputGrads {
                s_logit: d_s,
                replicas: replica_grads,
            };
            backward(params, &cache, &dout, g);
        }
    }
    let ss = ss / den.frames;
    let mc = if den.bands > 0.0 { mc / den.bands } else { 0.0 };
    let demod = if den.positions > 0.0 {
        demod / den.positions
    } else {
        0.0
    };
    Ok(LossBreakdown::new(ss, mc, demod, w))
}

/// Batch loss without gradients.
pub fn batch_loss(params: &ModelParams, batch: &[TrainFrame], w: &LossWeights) -> Result<LossBreakdown> {
    evaluate(params, batch, w, None)
}

/// Loss and exact gradient of the total loss with respect to every parameter.
pub fn gradients(
    params: &ModelParams,
    batch: &[TrainFrame],
    w: &LossWeights,
) -> Result<(LossBreakdown, ModelParams)> {
    let mut g = ModelParams::zeros(&params.config);
    let loss = evaluate(params, batch, w, Some(&mut g))?;
    if let Some(name) = g.first_non_finite() {
        return Err(Error::NonFiniteGradient(name));
    }
    Ok((loss, g))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam without weight decay or schedule.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: ModelParams,
    v: ModelParams,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, model: &ModelConfig) -> Self {
        Adam {
            cfg,
            m: ModelParams::zeros(model),
            v: ModelParams::zeros(model),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. Non-finite gradients are rejected before anything changes.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<()> {
        if let Some(name) = grads.first_non_finite() {
            return Err(Error::NonFiniteGradient(name));
        }
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let ps = params.tensors_mut();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        let gs = grads.tensors();
        if ps.len() != gs.len() {
            return Err(Error::Shape("gradient layout differs from parameters".into()));
        }
        for (((p, m), v), g) in ps.into_iter().zip(ms).zip(vs).zip(gs) {
            if p.shape != g.shape {
                return Err(Error::Shape(format!("gradient for {} has wrong shape", p.name)));
            }
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = c.beta1 * m.data[i] + (1.0 - c.beta1) * gi;
                v.data[i] = c.beta2 * v.data[i] + (1.0 - c.beta2) * gi * gi;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                p.data[i] -= c.lr * mh / (vh.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
    pub adam: AdamConfig,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            steps: 1000,
            seed: 0,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
        }
    }
}

/// Progress record emitted after every optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub loss: LossBreakdown,
    pub elapsed: Duration,
}

impl StepLog {
    pub const TSV_HEADER: &'static str = "step\tloss_ss\tloss_mc\tloss_demod\ttotal\tseconds";

    pub fn tsv(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.3}",
            self.step,
            self.loss.ss,
            self.loss.mc,
            self.loss.demod,
            self.loss.total,
            self.elapsed.as_secs_f64()
        )
    }
}

/// Runs `cfg.steps` Adam steps over shuffled mini-batches. On a non-finite
/// loss or gradient the parameters keep their last good values and
/// [`Error::Diverged`] is returned.
pub fn train(
    params: &mut ModelParams,
    dataset: &[TrainFrame],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepLog),
) -> Result<Vec<LossBreakdown>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut adam = Adam::new(cfg.adam, &params.config);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut cursor = dataset.len();
    let mut curve = Vec::with_capacity(cfg.steps);
    let start = Instant::now();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for step in 0..cfg.steps {
        batch.clear();
        while batch.len() < cfg.batch_size.min(dataset.len()) {
            if cursor == dataset.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(dataset[order[cursor]].clone());
            cursor += 1;
        }
        let (loss, g) = match gradients(params, &batch, &cfg.weights) {
            Ok(v) => v,
            Err(Error::NonFiniteGradient(_)) => {
                return Err(Error::Diverged { step, loss: f64::NAN })
            }
            Err(e) => return Err(e),
        };
        if !loss.total.is_finite() {
            return Err(Error::Diverged {
                step,
                loss: loss.total,
            });
        }
        adam.step(params, &g)?;
        curve.push(loss);
        on_step(&StepLog {
            step,
            loss,
            elapsed: start.elapsed(),
        });
    }
    Ok(curve)
}

pub const GRADCHECK_FLOOR: f64 = 1e-6;

/// Finite-difference comparison for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCheck {
    pub name: String,
    pub analytic_norm: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub blocks: Vec<BlockCheck>,
    pub max_rel_err: f64,
}

/// Compares analytic gradients with central differences of step `h`,
/// tensor by tensor: `‖g_a - g_fd‖ / max(‖g_a‖, ‖g_fd‖, GRADCHECK_FLOOR)`.
/// The floor keeps blocks whose gradient is identically zero (key biases
/// under softmax shift invariance) from reporting roundoff as error.
pub fn gradcheck(
    params: &ModelParams,
    batch: &[TrainFrame],
    w: &LossWeights,
    h: f64,
) -> Result<GradcheckReport> {
    let (_, analytic) = gradients(params, batch, w)?;
    let mut probe = params.clone();
    let names: Vec<(String, usize)> = params
        .tensors()
        .into_iter()
        .map(|t| (t.name, t.data.len()))
        .collect();
    let mut blocks = Vec::with_capacity(names.len());
    for (bi, (name, len)) in names.iter().enumerate() {
        let ga = analytic.tensors()[bi].data.to_vec();
        let mut diff = 0.0;
        let mut na = 0.0;
        let mut nf = 0.0;
        for i in 0..*len {
            let orig = probe.tensors()[bi].data[i];
            probe.tensors_mut()[bi].data[i] = orig + h;
            let up = batch_loss(&probe, batch, w)?.total;
            probe.tensors_mut()[bi].data[i] = orig - h;
            let down = batch_loss(&probe, batch, w)?.total;
            probe.tensors_mut()[bi].data[i] = orig;
            let fd = (up - down) / (2.0 * h);
            diff += (ga[i] - fd).powi(2);
            na += ga[i] * ga[i];
            nf += fd * fd;
        }
        let scale = na.sqrt().max(nf.sqrt());
        let rel_err = diff.sqrt() / scale.max(GRADCHECK_FLOOR);
        blocks.push(BlockCheck {
            name: name.clone(),
            analytic_norm: na.sqrt(),
            rel_err,
        });
    }
    let max_rel_err = blocks.iter().map(|b| b.rel_err).fold(0.0, f64::max);
    Ok(GradcheckReport {
        blocks,
        max_rel_err,
    })
}

/// Random inputs and labels for gradient checks: every modulation class
/// appears, symbol counts vary, one or two bands per frame.
pub fn synthetic_batch(cfg: &ModelConfig, frames: usize, seed: u64) -> Vec<TrainFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next_mod = 0;
    (0..frames)
        .map(|f| {
            let input = Array2::from_shape_fn((cfg.slots, 2 * cfg.cosets), |_| {
                rng.random_range(-1.5..1.5)
            });
            let count = 1 + (f % 2).min(cfg.n_band - 1);
            let picked = rand::seq::index::sample(&mut rng, cfg.n_band, count).into_vec();
            let mut bands: Vec<BandLabel> = picked
                .into_iter()
                .map(|band| {
                    let modulation = next_mod % cfg.n_mod();
                    next_mod += 1;
                    let order = cfg.mod_orders[modulation];
                    let n = rng.random_range(1..=cfg.slots);
                    BandLabel {
                        band,
                        modulation,
                        symbols: (0..n).map(|_| rng.random_range(0..order)).collect(),
                    }
                })
                .collect();
            bands.sort_by_key(|b| b.band);
            TrainFrame {
                input,
                labels: FrameLabels {
                    n_band: cfg.n_band,
                    bands,
                },
            }
        })
        .collect()
}
