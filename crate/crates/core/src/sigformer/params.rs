use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::ModelConfig;
use crate::{Error, Result};

/// Affine map `y = x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            w: Array2::zeros((inputs, outputs)),
            b: Array1::zeros(outputs),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    pub fn forward_row(&self, x: &Array1<f64>) -> Array1<f64> {
        x.dot(&self.w) + &self.b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

impl LayerNorm {
    pub fn identity(d: usize) -> Self {
        LayerNorm {
            gamma: Array1::ones(d),
            beta: Array1::zeros(d),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ln1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln2: LayerNorm,
}

impl EncoderParams {
    fn zeros(d: usize, d_ff: usize) -> Self {
        EncoderParams {
            wq: Linear::zeros(d, d),
            wk: Linear::zeros(d, d),
            wv: Linear::zeros(d, d),
            wo: Linear::zeros(d, d),
            ln1: LayerNorm::identity(d),
            ff1: Linear::zeros(d, d_ff),
            ff2: Linear::zeros(d_ff, d),
            ln2: LayerNorm::identity(d),
        }
    }
}

/// Every learnable tensor of the network. The same layout doubles as the
/// gradient container and the optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// `2P -> d_model`.
    pub embed: Linear,
    /// `(N + 1) x d_model` positions for `[CLS]` and the slots.
    pub pos: Array2<f64>,
    pub cls_ss: Array1<f64>,
    pub cls_mod: Array1<f64>,
    /// One identification token per sub-band.
    pub id_tokens: Array2<f64>,
    pub encoders_ss: Vec<EncoderParams>,
    pub encoders_demod: Vec<EncoderParams>,
    pub head_ss: Linear,
    pub head_mod: Linear,
    /// `d_model -> M_mod + 1` per modulation class.
    pub head_demod: Vec<Linear>,
}

/// Borrowed view of one named tensor.
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub struct TensorMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

fn push_ref<'a>(out: &mut Vec<TensorRef<'a>>, name: String, shape: &[usize], data: &'a [f64]) {
    out.push(TensorRef {
        name,
        shape: shape.to_vec(),
        data,
    });
}

fn push_mut<'a>(out: &mut Vec<TensorMut<'a>>, name: String, shape: &[usize], data: &'a mut [f64]) {
    out.push(TensorMut {
        name,
        shape: shape.to_vec(),
        data,
    });
}

fn linear_refs<'a>(out: &mut Vec<TensorRef<'a>>, name: &str, l: &'a Linear) {
    push_ref(out, format!("{name}.w"), l.w.shape(), l.w.as_slice().expect("standard layout"));
    push_ref(out, format!("{name}.b"), l.b.shape(), l.b.as_slice().expect("standard layout"));
}

fn linear_muts<'a>(out: &mut Vec<TensorMut<'a>>, name: &str, l: &'a mut Linear) {
    let ws = l.w.shape().to_vec();
    let bs = l.b.shape().to_vec();
    push_mut(out, format!("{name}.w"), &ws, l.w.as_slice_mut().expect("standard layout"));
    push_mut(out, format!("{name}.b"), &bs, l.b.as_slice_mut().expect("standard layout"));
}

fn ln_refs<'a>(out: &mut Vec<TensorRef<'a>>, name: &str, l: &'a LayerNorm) {
    push_ref(out, format!("{name}.gamma"), l.gamma.shape(), l.gamma.as_slice().expect("standard layout"));
    push_ref(out, format!("{name}.beta"), l.beta.shape(), l.beta.as_slice().expect("standard layout"));
}

fn ln_muts<'a>(out: &mut Vec<TensorMut<'a>>, name: &str, l: &'a mut LayerNorm) {
    let s = l.gamma.shape().to_vec();
    push_mut(out, format!("{name}.gamma"), &s, l.gamma.as_slice_mut().expect("standard layout"));
    push_mut(out, format!("{name}.beta"), &s, l.beta.as_slice_mut().expect("standard layout"));
}

fn encoder_refs<'a>(out: &mut Vec<TensorRef<'a>>, name: &str, e: &'a EncoderParams) {
    linear_refs(out, &format!("{name}.wq"), &e.wq);
    linear_refs(out, &format!("{name}.wk"), &e.wk);
    linear_refs(out, &format!("{name}.wv"), &e.wv);
    linear_refs(out, &format!("{name}.wo"), &e.wo);
    ln_refs(out, &format!("{name}.ln1"), &e.ln1);
    linear_refs(out, &format!("{name}.ff1"), &e.ff1);
    linear_refs(out, &format!("{name}.ff2"), &e.ff2);
    ln_refs(out, &format!("{name}.ln2"), &e.ln2);
}

fn encoder_muts<'a>(out: &mut Vec<TensorMut<'a>>, name: &str, e: &'a mut EncoderParams) {
    linear_muts(out, &format!("{name}.wq"), &mut e.wq);
    linear_muts(out, &format!("{name}.wk"), &mut e.wk);
    linear_muts(out, &format!("{name}.wv"), &mut e.wv);
    linear_muts(out, &format!("{name}.wo"), &mut e.wo);
    ln_muts(out, &format!("{name}.ln1"), &mut e.ln1);
    linear_muts(out, &format!("{name}.ff1"), &mut e.ff1);
    linear_muts(out, &format!("{name}.ff2"), &mut e.ff2);
    ln_muts(out, &format!("{name}.ln2"), &mut e.ln2);
}

fn trunc_normal<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z * sigma;
        }
    }
}

impl ModelParams {
    /// All-zero tensors (layer-norm gains too), the neutral gradient.
    pub fn zeros(config: &ModelConfig) -> Self {
        let mut p = Self::layout(config);
        p.fill(0.0);
        p
    }

    fn layout(config: &ModelConfig) -> Self {
        let d = config.d_model;
        ModelParams {
            config: config.clone(),
            embed: Linear::zeros(2 * config.cosets, d),
            pos: Array2::zeros((config.slots + 1, d)),
            cls_ss: Array1::zeros(d),
            cls_mod: Array1::zeros(d),
            id_tokens: Array2::zeros((config.n_band, d)),
            encoders_ss: (0..config.n_layers_ss)
                .map(|_| EncoderParams::zeros(d, config.d_ff))
                .collect(),
            encoders_demod: (0..config.n_layers_demod)
                .map(|_| EncoderParams::zeros(d, config.d_ff))
                .collect(),
            head_ss: Linear::zeros(d, config.n_band),
            head_mod: Linear::zeros(d, config.n_mod()),
            head_demod: config.mod_orders.iter().map(|&m| Linear::zeros(d, m + 1)).collect(),
        }
    }

    /// Truncated-normal (`±2σ`) weights, tokens and positions; zero biases;
    /// unit layer-norm gains.
    pub fn init(config: &ModelConfig, seed: u64, sigma: f64) -> Result<Self> {
        config.validate()?;
        let mut p = Self::layout(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in p.tensors_mut() {
            let leaf = t.name.rsplit('.').next().unwrap_or("");
            match leaf {
                "b" | "beta" => t.data.fill(0.0),
                "gamma" => t.data.fill(1.0),
                _ => t.data.iter_mut().for_each(|v| *v = trunc_normal(&mut rng, sigma)),
            }
        }
        Ok(p)
    }

    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        linear_refs(&mut out, "embed", &self.embed);
        push_ref(&mut out, "pos".into(), self.pos.shape(), self.pos.as_slice().expect("standard layout"));
        push_ref(&mut out, "cls_ss".into(), self.cls_ss.shape(), self.cls_ss.as_slice().expect("standard layout"));
        push_ref(&mut out, "cls_mod".into(), self.cls_mod.shape(), self.cls_mod.as_slice().expect("standard layout"));
        push_ref(
            &mut out,
            "id_tokens".into(),
            self.id_tokens.shape(),
            self.id_tokens.as_slice().expect("standard layout"),
        );
        for (i, e) in self.encoders_ss.iter().enumerate() {
            encoder_refs(&mut out, &format!("encoders_ss.{i}"), e);
        }
        for (i, e) in self.encoders_demod.iter().enumerate() {
            encoder_refs(&mut out, &format!("encoders_demod.{i}"), e);
        }
        linear_refs(&mut out, "head_ss", &self.head_ss);
        linear_refs(&mut out, "head_mod", &self.head_mod);
        for (i, h) in self.head_demod.iter().enumerate() {
            linear_refs(&mut out, &format!("head_demod.{i}"), h);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out = Vec::new();
        linear_muts(&mut out, "embed", &mut self.embed);
        let s = self.pos.shape().to_vec();
        push_mut(&mut out, "pos".into(), &s, self.pos.as_slice_mut().expect("standard layout"));
        let s = self.cls_ss.shape().to_vec();
        push_mut(&mut out, "cls_ss".into(), &s, self.cls_ss.as_slice_mut().expect("standard layout"));
        push_mut(&mut out, "cls_mod".into(), &s, self.cls_mod.as_slice_mut().expect("standard layout"));
        let s = self.id_tokens.shape().to_vec();
        push_mut(&mut out, "id_tokens".into(), &s, self.id_tokens.as_slice_mut().expect("standard layout"));
        for (i, e) in self.encoders_ss.iter_mut().enumerate() {
            encoder_muts(&mut out, &format!("encoders_ss.{i}"), e);
        }
        for (i, e) in self.encoders_demod.iter_mut().enumerate() {
            encoder_muts(&mut out, &format!("encoders_demod.{i}"), e);
        }
        linear_muts(&mut out, "head_ss", &mut self.head_ss);
        linear_muts(&mut out, "head_mod", &mut self.head_mod);
        for (i, h) in self.head_demod.iter_mut().enumerate() {
            linear_muts(&mut out, &format!("head_demod.{i}"), h);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.data.fill(value);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// First tensor holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|t| t.data.iter().any(|v| !v.is_finite()))
            .map(|t| t.name)
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) -> Result<()> {
        let src = other.tensors();
        let dst = self.tensors_mut();
        if src.len() != dst.len() {
            return Err(Error::Shape("parameter sets differ".into()));
        }
        for (d, s) in dst.into_iter().zip(src) {
            if d.shape != s.shape {
                return Err(Error::Shape(format!("{}: {:?} vs {:?}", d.name, d.shape, s.shape)));
            }
            for (a, b) in d.data.iter_mut().zip(s.data) {
                *a += scale * b;
            }
        }
        Ok(())
    }

    /// Copies tensor values from named records; every tensor must be present
    /// with a matching shape.
    pub fn load_tensors(&mut self, records: &[(String, Vec<usize>, Vec<f64>)]) -> Result<()> {
        for t in self.tensors_mut() {
            let (_, shape, data) = records
                .iter()
                .find(|(n, _, _)| *n == t.name)
                .ok_or_else(|| Error::Format(format!("missing tensor {}", t.name)))?;
            if *shape != t.shape || data.len() != t.data.len() {
                return Err(Error::Format(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    t.name, shape, t.shape
                )));
            }
            t.data.copy_from_slice(data);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumerated_count_matches_formula() {
        let tiny = ModelConfig::tiny();
        assert_eq!(ModelParams::zeros(&tiny).param_count(), tiny.param_count());
        let standard = ModelConfig::standard(8).unwrap();
        assert_eq!(ModelParams::zeros(&standard).param_count(), standard.param_count());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let c = ModelConfig::tiny();
        let a = ModelParams::init(&c, 1, 0.02).unwrap();
        assert_eq!(a, ModelParams::init(&c, 1, 0.02).unwrap());
        assert_ne!(a, ModelParams::init(&c, 2, 0.02).unwrap());
        for t in a.tensors().into_iter().filter(|t| !t.name.ends_with("gamma")) {
            assert!(t.data.iter().all(|v| v.abs() <= 0.04 + 1e-15), "{}", t.name);
        }
        assert!(a.encoders_ss[0].ln1.gamma.iter().all(|&g| g == 1.0));
        assert!(a.head_ss.b.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn names_are_unique() {
        let p = ModelParams::zeros(&ModelConfig::tiny());
        let mut names: Vec<String> = p.tensors().into_iter().map(|t| t.name).collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
    }

    #[test]
    fn add_scaled_and_load() {
        let c = ModelConfig::tiny();
        let a = ModelParams::init(&c, 3, 0.02).unwrap();
        let mut b = ModelParams::zeros(&c);
        b.add_scaled(&a, 2.0).unwrap();
        assert_eq!(b.embed.w[(0, 0)], 2.0 * a.embed.w[(0, 0)]);
        let records: Vec<_> = a
            .tensors()
            .into_iter()
            .map(|t| (t.name, t.shape, t.data.to_vec()))
            .collect();
        let mut c2 = ModelParams::zeros(&c);
        c2.load_tensors(&records).unwrap();
        assert_eq!(c2, a);
    }
}
