//! Encoder building blocks and their adjoints.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use ndarray::{s, Array1, Array2, Axis, Zip};

use super::params::{EncoderParams, LayerNorm, Linear};

pub const LN_EPS: f64 = 1e-5;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax; `-inf` entries get probability exactly 0.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

pub(crate) fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Accumulates the gradient of `y = x W + b` into `grad` and returns `dx`.
pub(crate) fn linear_backward(
    x: &Array2<f64>,
    dy: &Array2<f64>,
    p: &Linear,
    grad: &mut Linear,
) -> Array2<f64> {
    grad.w += &x.t().dot(dy);
    grad.b += &dy.sum_axis(Axis(0));
    dy.dot(&p.w.t())
}

/// Row version of [`linear_backward`].
pub(crate) fn linear_backward_row(
    x: &Array1<f64>,
    dy: &Array1<f64>,
    p: &Linear,
    grad: &mut Linear,
) -> Array1<f64> {
    Zip::from(&mut grad.w)
        .and_broadcast(&x.view().insert_axis(Axis(1)))
        .and_broadcast(&dy.view().insert_axis(Axis(0)))
        .for_each(|g, &a, &b| *g += a * b);
    grad.b += dy;
    p.w.dot(dy)
}

pub(crate) struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

pub(crate) fn layer_norm(x: &Array2<f64>, p: &LayerNorm) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        row *= *r;
    }
    let y = &xhat * &p.gamma + &p.beta;
    (y, LnCache { xhat, rstd })
}

/// `dx = rstd (dx̂ - mean(dx̂) - x̂ mean(dx̂ ⊙ x̂))` with `dx̂ = dy ⊙ γ`.
pub(crate) fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    p: &LayerNorm,
    grad: &mut LayerNorm,
) -> Array2<f64> {
    grad.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
    grad.beta += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let mut dx = dy * &p.gamma;
    for ((mut row, xh), &r) in dx
        .rows_mut()
        .into_iter()
        .zip(cache.xhat.rows())
        .zip(cache.rstd.iter())
    {
        let m1 = row.sum() / d;
        let m2 = row.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
        Zip::from(&mut row).and(&xh).for_each(|v, &h| *v = r * (*v - m1 - h * m2));
    }
    dx
}

/// Multi-head scaled dot-product attention on already projected `q`, `k`,
/// `v` (`T x d`), scale `1/sqrt(d/h)`. Returns the concatenated head outputs
/// and the per-head attention matrices.
pub fn attention(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    heads: usize,
) -> (Array2<f64>, Vec<Array2<f64>>) {
    let (t, d) = q.dim();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Array2::zeros((t, d));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut p = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        softmax_rows(&mut p);
        out.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
        probs.push(p);
    }
    (out, probs)
}

pub(crate) struct EncoderCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    o: Array2<f64>,
    ln1: LnCache,
    x1: Array2<f64>,
    u: Array2<f64>,
    f: Array2<f64>,
    ln2: LnCache,
}

/// Post-norm encoder with DeepNorm residuals:
/// `x1 = LN(α x + MHA(x))`, `out = LN(α x1 + FF(x1))`.
pub(crate) fn encoder_forward(
    x: &Array2<f64>,
    p: &EncoderParams,
    heads: usize,
    alpha: f64,
) -> (Array2<f64>, EncoderCache) {
    let q = p.wq.forward(x);
    let k = p.wk.forward(x);
    let v = p.wv.forward(x);
    let (o, probs) = attention(&q, &k, &v, heads);
    let a = p.wo.forward(&o);
    let r1 = x * alpha + &a;
    let (x1, ln1) = layer_norm(&r1, &p.ln1);
    let u = p.ff1.forward(&x1);
    let f = u.mapv(gelu);
    let g = p.ff2.forward(&f);
    let r2 = &x1 * alpha + &g;
    let (out, ln2) = layer_norm(&r2, &p.ln2);
    let cache = EncoderCache {
        x: x.clone(),
        q,
        k,
        v,
        probs,
        o,
        ln1,
        x1,
        u,
        f,
        ln2,
    };
    (out, cache)
}

pub(crate) fn encoder_backward(
    dout: &Array2<f64>,
    c: &EncoderCache,
    p: &EncoderParams,
    heads: usize,
    alpha: f64,
    grad: &mut EncoderParams,
) -> Array2<f64> {
    let dr2 = layer_norm_backward(dout, &c.ln2, &p.ln2, &mut grad.ln2);
    let df = linear_backward(&c.f, &dr2, &p.ff2, &mut grad.ff2);
    let mut du = df;
    Zip::from(&mut du).and(&c.u).for_each(|g, &u| *g *= gelu_grad(u));
    let mut dx1 = linear_backward(&c.x1, &du, &p.ff1, &mut grad.ff1);
    dx1.scaled_add(alpha, &dr2);
    let dr1 = layer_norm_backward(&dx1, &c.ln1, &p.ln1, &mut grad.ln1);
    let d_o = linear_backward(&c.o, &dr1, &p.wo, &mut grad.wo);

    let (t, d) = c.q.dim();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::zeros((t, d));
    let mut dk = Array2::zeros((t, d));
    let mut dv = Array2::zeros((t, d));
    for (h, prob) in c.probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let doh = d_o.slice(cols);
        let dp = doh.dot(&c.v.slice(cols).t());
        dv.slice_mut(cols).assign(&prob.t().dot(&doh));
        let mut ds = dp;
        for (mut drow, prow) in ds.rows_mut().into_iter().zip(prob.rows()) {
            let dot: f64 = drow.iter().zip(prow.iter()).map(|(a, b)| a * b).sum();
            Zip::from(&mut drow).and(&prow).for_each(|g, &pp| *g = pp * (*g - dot) * scale);
        }
        dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
    }
    let mut dx = linear_backward(&c.x, &dq, &p.wq, &mut grad.wq);
    dx += &linear_backward(&c.x, &dk, &p.wk, &mut grad.wk);
    dx += &linear_backward(&c.x, &dv, &p.wv, &mut grad.wv);
    dx.scaled_add(alpha, &dr1);
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn attention_matches_pairwise_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (t, d, h) = (5, 8, 2);
        let q = random(t, d, &mut rng);
        let k = random(t, d, &mut rng);
        let v = random(t, d, &mut rng);
        let (out, _) = attention(&q, &k, &v, h);
        let dh = d / h;
        for head in 0..h {
            for i in 0..t {
                let mut w = vec![0.0; t];
                for (j, wj) in w.iter_mut().enumerate() {
                    let mut dot = 0.0;
                    for c in 0..dh {
                        dot += q[(i, head * dh + c)] * k[(j, head * dh + c)];
                    }
                    *wj = (dot / (dh as f64).sqrt()).exp();
                }
                let z: f64 = w.iter().sum();
                for c in 0..dh {
                    let mut acc = 0.0;
                    for j in 0..t {
                        acc += w[j] / z * v[(j, head * dh + c)];
                    }
                    assert!((acc - out[(i, head * dh + c)]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_token_attention_returns_v() {
        let v = Array2::from_shape_vec((1, 4), vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let q = Array2::from_shape_vec((1, 4), vec![9.0, 1.0, -4.0, 2.0]).unwrap();
        let (out, probs) = attention(&q, &q, &v, 2);
        assert_eq!(out, v);
        assert!(probs.iter().all(|p| p[(0, 0)] == 1.0));
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(3, 16, &mut rng) * 5.0 + 2.0;
        let (y, _) = layer_norm(&x, &LayerNorm::identity(16));
        for row in y.rows() {
            let mean = row.sum() / 16.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn gelu_derivative_by_differences() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
        assert!((gelu(1.0) - 0.841_344_746_068_543).abs() < 1e-12);
    }

    #[test]
    fn softmax_masks_neg_infinity() {
        let p = softmax(&[1.0, f64::NEG_INFINITY, 0.0]);
        assert_eq!(p[1], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn encoder_backward_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (t, d, h, dff) = (4, 6, 2, 8);
        let rnd_lin = |i: usize, o: usize, rng: &mut ChaCha8Rng| Linear {
            w: random(i, o, rng) * 0.5,
            b: Array1::from_shape_fn(o, |_| rng.random_range(-0.2..0.2)),
        };
        let p = EncoderParams {
            wq: rnd_lin(d, d, &mut rng),
            wk: rnd_lin(d, d, &mut rng),
            wv: rnd_lin(d, d, &mut rng),
            wo: rnd_lin(d, d, &mut rng),
            ln1: LayerNorm {
                gamma: Array1::from_shape_fn(d, |_| rng.random_range(0.5..1.5)),
                beta: Array1::from_shape_fn(d, |_| rng.random_range(-0.2..0.2)),
            },
            ff1: rnd_lin(d, dff, &mut rng),
            ff2: rnd_lin(dff, d, &mut rng),
            ln2: LayerNorm::identity(d),
        };
        let x = random(t, d, &mut rng);
        let w = random(t, d, &mut rng);
        let alpha = 2f64.sqrt();
        let loss = |x: &Array2<f64>| (encoder_forward(x, &p, h, alpha).0 * &w).sum();
        let (_, cache) = encoder_forward(&x, &p, h, alpha);
        let mut grad = p.clone();
        for l in [&mut grad.wq, &mut grad.wk, &mut grad.wv, &mut grad.wo, &mut grad.ff1, &mut grad.ff2] {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
        for l in [&mut grad.ln1, &mut grad.ln2] {
            l.gamma.fill(0.0);
            l.beta.fill(0.0);
        }
        let dx = encoder_backward(&w, &cache, &p, h, alpha, &mut grad);
        let eps = 1e-5;
        for i in 0..t {
            for j in 0..d {
                let mut xp = x.clone();
                xp[(i, j)] += eps;
                let mut xm = x.clone();
                xm[(i, j)] -= eps;
                let fd = (loss(&xp) - loss(&xm)) / (2.0 * eps);
                assert!((fd - dx[(i, j)]).abs() < 1e-6 * (1.0 + fd.abs()), "{i},{j}: {fd} vs {}", dx[(i, j)]);
            }
        }
    }
}
