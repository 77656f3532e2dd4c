//! One-hidden-layer tanh classifier with analytic gradients and
//! parameter-efficient trainable masks.
//!
//! ```text
//! u = W1_eff · x + b1          W1_eff = W1 (+ lora_B · lora_A)
//! z = tanh(u)
//! y = z (+ adapter_up · tanh(adapter_down · z + adapter_down_bias))
//! logits = Wc · y + bc
//! ```
//!
//! `Wc` is the classifier weight layer used for all indicator computations.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::tensorlab::{Matrix, ParamSet, SeededRng};

pub const HIDDEN_WEIGHT: &str = "W1";
pub const HIDDEN_BIAS: &str = "b1";
pub const CLASSIFIER_WEIGHT: &str = "Wc";
pub const CLASSIFIER_BIAS: &str = "bc";
pub const LORA_A: &str = "lora_A";
pub const LORA_B: &str = "lora_B";
pub const ADAPTER_DOWN: &str = "adapter_down";
pub const ADAPTER_DOWN_BIAS: &str = "adapter_down_bias";
pub const ADAPTER_UP: &str = "adapter_up";

const STREAM_INIT: u64 = 0x1417;

/// Which parameters fine-tuning may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PeftMask {
    /// Every base tensor.
    Full,
    /// `b1` and `bc` only.
    BiasOnly,
    /// Rank-`r` factors `lora_B · lora_A` added to the frozen `W1`, plus the head.
    LowRank(usize),
    /// Residual `h → h_b → h` block after the hidden layer, plus the head.
    Bottleneck(usize),
}

impl PeftMask {
    fn trainable_names(&self) -> &'static [&'static str] {
        match self {
            PeftMask::Full => &[HIDDEN_WEIGHT, HIDDEN_BIAS, CLASSIFIER_WEIGHT, CLASSIFIER_BIAS],
            PeftMask::BiasOnly => &[HIDDEN_BIAS, CLASSIFIER_BIAS],
            PeftMask::LowRank(_) => &[LORA_A, LORA_B, CLASSIFIER_WEIGHT, CLASSIFIER_BIAS],
            PeftMask::Bottleneck(_) => &[
                ADAPTER_DOWN,
                ADAPTER_DOWN_BIAS,
                ADAPTER_UP,
                CLASSIFIER_WEIGHT,
                CLASSIFIER_BIAS,
            ],
        }
    }
}

impl fmt::Display for PeftMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PeftMask::Full => f.write_str("full"),
            PeftMask::BiasOnly => f.write_str("bias_only"),
            PeftMask::LowRank(r) => write!(f, "low_rank:{r}"),
            PeftMask::Bottleneck(h) => write!(f, "bottleneck:{h}"),
        }
    }
}

impl FromStr for PeftMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let size = |v: &str| -> Result<usize> {
            match v.parse::<usize>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(Error::InvalidConfig(format!("invalid size in mask `{s}`"))),
            }
        };
        match s.split_once(':') {
            None if s == "full" => Ok(PeftMask::Full),
            None if s == "bias_only" => Ok(PeftMask::BiasOnly),
            Some(("low_rank", r)) => Ok(PeftMask::LowRank(size(r)?)),
            Some(("bottleneck", h)) => Ok(PeftMask::Bottleneck(size(h)?)),
            _ => Err(Error::InvalidConfig(format!(
                "unknown mask `{s}` (expected full, bias_only, low_rank:R or bottleneck:H)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamReport {
    pub trainable: usize,
    pub total: usize,
}

impl ParamReport {
    pub fn ratio(&self) -> f64 {
        self.trainable as f64 / self.total as f64
    }
}

/// One labeled example borrowed from a dataset.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub x: &'a [f64],
    pub label: usize,
}

impl<'a> Sample<'a> {
    pub fn batch(ds: &'a Dataset, indices: &[usize]) -> Vec<Sample<'a>> {
        indices
            .iter()
            .map(|&i| Sample {
                x: ds.features(i),
                label: ds.label(i),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpClassifier {
    dims: ModelDims,
    mask: PeftMask,
    params: ParamSet,
}

fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut SeededRng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

impl MlpClassifier {
    /// Scaled-uniform initialization (bound `1/√fan_in`). The base tensors
    /// depend only on `seed` and the dimensions, so models with different
    /// masks share the same frozen backbone. The low-rank `lora_B` and the
    /// adapter up-projection start at zero: the initial function equals the
    /// base model under every mask.
    pub fn init(seed: u64, dims: ModelDims, mask: PeftMask) -> Result<Self> {
        let ModelDims {
            input: d,
            hidden: h,
            classes: c,
        } = dims;
        if d == 0 || h == 0 || c == 0 {
            return Err(Error::InvalidConfig("model dimensions must be >= 1".into()));
        }
        let mut rng = SeededRng::derive(seed, STREAM_INIT, &[0]);
        let in_bound = 1.0 / libm::sqrt(d as f64);
        let hid_bound = 1.0 / libm::sqrt(h as f64);
        let mut params = ParamSet::new();
        params.insert(HIDDEN_WEIGHT, uniform(h, d, in_bound, &mut rng), false);
        params.insert(HIDDEN_BIAS, uniform(h, 1, in_bound, &mut rng), false);
        params.insert(CLASSIFIER_WEIGHT, uniform(c, h, hid_bound, &mut rng), false);
        params.insert(CLASSIFIER_BIAS, uniform(c, 1, hid_bound, &mut rng), false);

        let mut rng = SeededRng::derive(seed, STREAM_INIT, &[1]);
        match mask {
            PeftMask::LowRank(r) => {
                params.insert(LORA_A, uniform(r, d, in_bound, &mut rng), false);
                params.insert(LORA_B, Matrix::zeros(h, r), false);
            }
            PeftMask::Bottleneck(hb) => {
                params.insert(ADAPTER_DOWN, uniform(hb, h, hid_bound, &mut rng), false);
                params.insert(ADAPTER_DOWN_BIAS, uniform(hb, 1, hid_bound, &mut rng), false);
                params.insert(ADAPTER_UP, Matrix::zeros(h, hb), false);
            }
            PeftMask::Full | PeftMask::BiasOnly => {}
        }
        Self::from_params(dims, mask, params)
    }

    /// Builds a model from explicit tensors; trainable flags are reset from
    /// `mask`.
    pub fn from_params(dims: ModelDims, mask: PeftMask, params: ParamSet) -> Result<Self> {
        let ModelDims {
            input: d,
            hidden: h,
            classes: c,
        } = dims;
        let mut expected: Vec<(&str, (usize, usize))> = vec![
            (HIDDEN_WEIGHT, (h, d)),
            (HIDDEN_BIAS, (h, 1)),
            (CLASSIFIER_WEIGHT, (c, h)),
            (CLASSIFIER_BIAS, (c, 1)),
        ];
        match mask {
            PeftMask::LowRank(r) => {
                expected.push((LORA_A, (r, d)));
                expected.push((LORA_B, (h, r)));
            }
            PeftMask::Bottleneck(hb) => {
                expected.push((ADAPTER_DOWN, (hb, h)));
                expected.push((ADAPTER_DOWN_BIAS, (hb, 1)));
                expected.push((ADAPTER_UP, (h, hb)));
            }
            PeftMask::Full | PeftMask::BiasOnly => {}
        }
        if params.len() != expected.len() {
            return Err(Error::ShapeMismatch(format!(
                "mask {mask} expects {} tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        let mut out = ParamSet::new();
        for (name, shape) in expected {
            let t = params
                .get(name)
                .ok_or_else(|| Error::ShapeMismatch(format!("missing tensor `{name}`")))?;
            if t.shape() != shape {
                return Err(Error::ShapeMismatch(format!(
                    "tensor `{name}` is {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::NonFinite("model parameters"));
            }
            out.insert(name, t.clone(), mask.trainable_names().contains(&name));
        }
        Ok(Self {
            dims,
            mask,
            params: out,
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn mask(&self) -> PeftMask {
        self.mask
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn classifier(&self) -> &Matrix {
        self.tensor(CLASSIFIER_WEIGHT)
    }

    pub fn trainable_params(&self) -> ParamSet {
        self.params.trainable_subset()
    }

    /// Replaces the trainable tensors; `update` must carry exactly those.
    pub fn with_trainable(&self, update: &ParamSet) -> Result<Self> {
        self.trainable_params().ensure_compatible(update)?;
        if !update.is_finite() {
            return Err(Error::NonFinite("trainable update"));
        }
        let mut out = self.clone();
        out.params.overwrite_from(update)?;
        Ok(out)
    }

    pub fn param_report(&self) -> ParamReport {
        ParamReport {
            trainable: self.params.num_trainable_values(),
            total: self.params.num_values(),
        }
    }

    fn tensor(&self, name: &str) -> &Matrix {
        self.params.get(name).expect("tensor presence checked at construction")
    }

    /// `W1 + lora_B · lora_A` under the low-rank mask, else `W1`.
    pub fn effective_hidden_weight(&self) -> Matrix {
        let w1 = self.tensor(HIDDEN_WEIGHT);
        match self.mask {
            PeftMask::LowRank(_) => {
                let delta = self
                    .tensor(LORA_B)
                    .matmul(self.tensor(LORA_A))
                    .expect("factor shapes checked at construction");
                let data = w1
                    .as_slice()
                    .iter()
                    .zip(delta.as_slice())
                    .map(|(a, b)| a + b)
                    .collect();
                Matrix::new(w1.rows(), w1.cols(), data).expect("finite sum of finite tensors")
            }
            _ => w1.clone(),
        }
    }

    fn trace(&self, w1: &Matrix, x: &[f64]) -> Result<Trace> {
        let mut u = w1.matvec(x)?;
        for (ui, b) in u.iter_mut().zip(self.tensor(HIDDEN_BIAS).as_slice()) {
            *ui += b;
        }
        let z: Vec<f64> = u.iter().map(|v| libm::tanh(*v)).collect();
        let (adapter, y) = match self.mask {
            PeftMask::Bottleneck(_) => {
                let mut v = self.tensor(ADAPTER_DOWN).matvec(&z)?;
                for (vi, b) in v.iter_mut().zip(self.tensor(ADAPTER_DOWN_BIAS).as_slice()) {
                    *vi += b;
                }
                let a: Vec<f64> = v.iter().map(|t| libm::tanh(*t)).collect();
                let up = self.tensor(ADAPTER_UP).matvec(&a)?;
                let y = z.iter().zip(&up).map(|(p, q)| p + q).collect();
                (Some(a), y)
            }
            _ => (None, z.clone()),
        };
        let mut logits = self.tensor(CLASSIFIER_WEIGHT).matvec(&y)?;
        for (l, b) in logits.iter_mut().zip(self.tensor(CLASSIFIER_BIAS).as_slice()) {
            *l += b;
        }
        Ok(Trace {
            z,
            adapter,
            y,
            logits,
        })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dims.input {
            return Err(Error::DimensionMismatch {
                expected: self.dims.input,
                got: x.len(),
            });
        }
        Ok(self.trace(&self.effective_hidden_weight(), x)?.logits)
    }

    /// Mean softmax cross-entropy over `batch` and its gradient with respect
    /// to the trainable tensors only.
    pub fn loss_and_grad(&self, batch: &[Sample<'_>]) -> Result<(f64, ParamSet)> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let ModelDims {
            input: d,
            hidden: h,
            classes: c,
        } = self.dims;
        let w1 = self.effective_hidden_weight();
        let wc = self.tensor(CLASSIFIER_WEIGHT);
        let scale = 1.0 / batch.len() as f64;

        let mut g_w1 = Matrix::zeros(h, d);
        let mut g_b1 = vec![0.0; h];
        let mut g_wc = Matrix::zeros(c, h);
        let mut g_bc = vec![0.0; c];
        let hb = match self.mask {
            PeftMask::Bottleneck(hb) => hb,
            _ => 0,
        };
        let mut g_down = Matrix::zeros(hb, h);
        let mut g_down_b = vec![0.0; hb];
        let mut g_up = Matrix::zeros(h, hb);

        let mut loss = 0.0;
        for s in batch {
            if s.x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: s.x.len(),
                });
            }
            if s.label >= c {
                return Err(Error::InvalidConfig(format!("label {} >= {c}", s.label)));
            }
            let t = self.trace(&w1, s.x)?;
            let (lse, probs) = softmax(&t.logits);
            loss += lse - t.logits[s.label];

            // d loss / d logits
            let mut dl = probs;
            dl[s.label] -= 1.0;
            dl.iter_mut().for_each(|v| *v *= scale);

            for k in 0..c {
                g_bc[k] += dl[k];
                let row = &mut g_wc.as_mut_slice()[k * h..(k + 1) * h];
                for (g, yj) in row.iter_mut().zip(&t.y) {
                    *g += dl[k] * yj;
                }
            }
            let dy = wc.tmatvec(&dl)?;

            let mut dz = dy.clone();
            if let Some(a) = &t.adapter {
                let up = self.tensor(ADAPTER_UP);
                let down = self.tensor(ADAPTER_DOWN);
                for i in 0..h {
                    let row = &mut g_up.as_mut_slice()[i * hb..(i + 1) * hb];
                    for (g, aj) in row.iter_mut().zip(a) {
                        *g += dy[i] * aj;
                    }
                }
                let da = up.tmatvec(&dy)?;
                let dv: Vec<f64> = da.iter().zip(a).map(|(g, a)| g * (1.0 - a * a)).collect();
                for k in 0..hb {
                    g_down_b[k] += dv[k];
                    let row = &mut g_down.as_mut_slice()[k * h..(k + 1) * h];
                    for (g, zj) in row.iter_mut().zip(&t.z) {
                        *g += dv[k] * zj;
                    }
                }
                for (dzi, back) in dz.iter_mut().zip(down.tmatvec(&dv)?) {
                    *dzi += back;
                }
            }

            for i in 0..h {
                let du = dz[i] * (1.0 - t.z[i] * t.z[i]);
                g_b1[i] += du;
                let row = &mut g_w1.as_mut_slice()[i * d..(i + 1) * d];
                for (g, xj) in row.iter_mut().zip(s.x) {
                    *g += du * xj;
                }
            }
        }
        loss *= scale;

        let mut grads = ParamSet::new();
        for &name in self.mask.trainable_names() {
            let g = match name {
                HIDDEN_WEIGHT => g_w1.clone(),
                HIDDEN_BIAS => Matrix::column(&g_b1),
                CLASSIFIER_WEIGHT => g_wc.clone(),
                CLASSIFIER_BIAS => Matrix::column(&g_bc),
                // d/dA (B·A) = Bᵀ G ; d/dB (B·A) = G Aᵀ
                LORA_A => self.tensor(LORA_B).transpose().matmul(&g_w1)?,
                LORA_B => g_w1.matmul(&self.tensor(LORA_A).transpose())?,
                ADAPTER_DOWN => g_down.clone(),
                ADAPTER_DOWN_BIAS => Matrix::column(&g_down_b),
                ADAPTER_UP => g_up.clone(),
                other => unreachable!("no gradient rule for `{other}`"),
            };
            grads.insert(name, g, true);
        }
        Ok((loss, grads))
    }

    pub fn loss(&self, batch: &[Sample<'_>]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let w1 = self.effective_hidden_weight();
        let mut total = 0.0;
        for s in batch {
            let t = self.trace(&w1, s.x)?;
            total += softmax(&t.logits).0 - t.logits[s.label];
        }
        Ok(total / batch.len() as f64)
    }

    /// Plain gradient step on the trainable tensors; frozen tensors are
    /// carried over untouched.
    pub fn sgd_step(&self, grads: &ParamSet, eta: f64) -> Result<Self> {
        let mut out = self.clone();
        for (name, g) in grads.iter() {
            if !self.params.is_trainable(name) {
                return Err(Error::ShapeMismatch(format!(
                    "gradient for frozen or unknown tensor `{name}`"
                )));
            }
            let slot = out.params.get_mut(name).expect("trainable tensors exist");
            if slot.shape() != g.shape() {
                return Err(Error::ShapeMismatch(format!("gradient for `{name}`")));
            }
            for (w, gv) in slot.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *w -= eta * gv;
            }
            if !slot.is_finite() {
                return Err(Error::NonFinite("parameters after SGD step"));
            }
        }
        Ok(out)
    }

    /// Argmax class; ties go to the lowest class id.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    pub fn accuracy(&self, ds: &Dataset) -> Result<f64> {
        if ds.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if ds.dim() != self.dims.input {
            return Err(Error::DimensionMismatch {
                expected: self.dims.input,
                got: ds.dim(),
            });
        }
        let w1 = self.effective_hidden_weight();
        let mut correct = 0usize;
        for i in 0..ds.len() {
            let t = self.trace(&w1, ds.features(i))?;
            if argmax(&t.logits) == ds.label(i) {
                correct += 1;
            }
        }
        Ok(correct as f64 / ds.len() as f64)
    }

    pub fn describe(&self) -> String {
        let r = self.param_report();
        format!(
            "{} d={} h={} C={} trainable {}/{} ({:.4})",
            self.mask.to_string(),
            self.dims.input,
            self.dims.hidden,
            self.dims.classes,
            r.trainable,
            r.total,
            r.ratio()
        )
    }
}

struct Trace {
    z: Vec<f64>,
    adapter: Option<Vec<f64>>,
    y: Vec<f64>,
    logits: Vec<f64>,
}

/// Returns `(log-sum-exp, probabilities)`.
fn softmax(logits: &[f64]) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| libm::exp(l - max)).collect();
    let sum: f64 = exps.iter().sum();
    (max + libm::log(sum), exps.into_iter().map(|e| e / sum).collect())
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
