//! Layers of the fixed forecaster graph. Each layer reads its weights from a
//! [`ParamSet`] by name and accumulates weight gradients into [`Gradients`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{matmul, matmul_at, matmul_bt};
use super::{shape_err, Gradients, NumericsError, ParamSet, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// Batch statistics in batch norm; dropout masks drawn from `seed`.
    Train { dropout: f64, seed: u64 },
    /// Running statistics; no dropout.
    Eval,
}

impl Mode {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

pub trait Layer {
    type Cache;

    fn forward(&self, params: &ParamSet, x: &Tensor, mode: Mode) -> Result<(Tensor, Self::Cache)>;

    /// Returns the gradient with respect to the layer input.
    fn backward(&self, params: &ParamSet, cache: &Self::Cache, dy: &Tensor, grads: &mut Gradients) -> Result<Tensor>;
}

fn accumulate(grads: &mut Gradients, name: &str, delta: &[f64]) -> Result<()> {
    let g = grads
        .get_mut(name)
        .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))?;
    for (a, b) in g.data_mut().iter_mut().zip(delta) {
        *a += b;
    }
    Ok(())
}

/// `y = x W (+ b)` with `W` stored as `[input, output]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: String,
    pub bias: Option<String>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(prefix: &str, input: usize, output: usize, bias: bool) -> Self {
        Self {
            weight: format!("{prefix}.w"),
            bias: bias.then(|| format!("{prefix}.b")),
            input,
            output,
        }
    }

    /// Registers Xavier-initialized weights and a zero bias.
    pub fn init<R: Rng>(&self, params: &mut ParamSet, rng: &mut R) {
        params.insert(
            self.weight.clone(),
            Tensor::xavier(&[self.input, self.output], self.input, self.output, rng),
        );
        if let Some(b) = &self.bias {
            params.insert(b.clone(), Tensor::zeros(&[self.output]));
        }
    }
}

impl Layer for Linear {
    type Cache = Tensor;

    fn forward(&self, params: &ParamSet, x: &Tensor, _mode: Mode) -> Result<(Tensor, Tensor)> {
        if x.cols() != self.input {
            return shape_err(format!("{}: input width {} != {}", self.weight, x.cols(), self.input));
        }
        let w = params.get(&self.weight)?;
        let rows = x.rows();
        let mut y = matmul(x.data(), w.data(), rows, self.input, self.output);
        if let Some(b) = &self.bias {
            let b = params.get(b)?.data();
            for row in y.chunks_mut(self.output) {
                for (v, bv) in row.iter_mut().zip(b) {
                    *v += bv;
                }
            }
        }
        let y = Tensor::matrix(rows, self.output, y);
        y.debug_check_finite(&self.weight);
        Ok((y, x.clone()))
    }

    fn backward(&self, params: &ParamSet, x: &Tensor, dy: &Tensor, grads: &mut Gradients) -> Result<Tensor> {
        let rows = x.rows();
        if dy.rows() != rows || dy.cols() != self.output {
            return shape_err(format!("{}: upstream {:?}", self.weight, dy.shape()));
        }
        let w = params.get(&self.weight)?;
        let dw = matmul_at(x.data(), dy.data(), rows, self.input, self.output);
        accumulate(grads, &self.weight, &dw)?;
        if let Some(b) = &self.bias {
            let mut db = vec![0.0; self.output];
            for row in dy.data().chunks(self.output) {
                for (a, v) in db.iter_mut().zip(row) {
                    *a += v;
                }
            }
            accumulate(grads, b, &db)?;
        }
        let dx = matmul_bt(dy.data(), w.data(), rows, self.output, self.input);
        Ok(Tensor::matrix(rows, self.input, dx))
    }
}

/// Running per-feature statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnStats {
    pub fn identity(features: usize) -> Self {
        Self {
            mean: vec![0.0; features],
            var: vec![1.0; features],
        }
    }

    /// Exponential moving average with the unbiased batch variance.
    pub fn update(&mut self, cache: &BatchNormCache, momentum: f64) {
        let n = cache.rows as f64;
        let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        for (r, b) in self.mean.iter_mut().zip(&cache.batch_mean) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        for (r, b) in self.var.iter_mut().zip(&cache.batch_var) {
            *r = (1.0 - momentum) * *r + momentum * b * unbias;
        }
    }
}

/// Per-feature normalization over all rows of the batch, then `gamma * x̂ + beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub name: String,
    pub features: usize,
    pub eps: f64,
    pub running: Option<BnStats>,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    pub rows: usize,
    pub train: bool,
}

impl BatchNorm {
    pub const MOMENTUM: f64 = 0.1;

    pub fn new(name: &str, features: usize, running: Option<BnStats>) -> Self {
        Self {
            name: name.to_string(),
            features,
            eps: 1e-5,
            running,
        }
    }

    pub fn gamma(&self) -> String {
        format!("{}.gamma", self.name)
    }

    pub fn beta(&self) -> String {
        format!("{}.beta", self.name)
    }

    pub fn init(&self, params: &mut ParamSet) {
        let mut g = Tensor::zeros(&[self.features]);
        g.fill(1.0);
        params.insert(self.gamma(), g);
        params.insert(self.beta(), Tensor::zeros(&[self.features]));
    }
}

impl Layer for BatchNorm {
    type Cache = BatchNormCache;

    fn forward(&self, params: &ParamSet, x: &Tensor, mode: Mode) -> Result<(Tensor, BatchNormCache)> {
        let f = self.features;
        if x.cols() != f {
            return shape_err(format!("{}: width {} != {f}", self.name, x.cols()));
        }
        let rows = x.rows();
        let gamma = params.get(&self.gamma())?.data();
        let beta = params.get(&self.beta())?.data();
        let (mean, var) = if mode.is_train() {
            let mut mean = vec![0.0; f];
            for row in x.data().chunks(f) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= rows as f64);
            let mut var = vec![0.0; f];
            for row in x.data().chunks(f) {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= rows as f64);
            (mean, var)
        } else {
            let r = self
                .running
                .as_ref()
                .ok_or_else(|| NumericsError::EvalBeforeAnyTraining(self.name.clone()))?;
            (r.mean.clone(), r.var.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = x.data().to_vec();
        let mut y = vec![0.0; xhat.len()];
        for (xr, yr) in xhat.chunks_mut(f).zip(y.chunks_mut(f)) {
            for c in 0..f {
                xr[c] = (xr[c] - mean[c]) * inv_std[c];
                yr[c] = gamma[c] * xr[c] + beta[c];
            }
        }
        Ok((
            Tensor::matrix(rows, f, y),
            BatchNormCache {
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
                rows,
                train: mode.is_train(),
            },
        ))
    }

    fn backward(&self, params: &ParamSet, cache: &BatchNormCache, dy: &Tensor, grads: &mut Gradients) -> Result<Tensor> {
        let f = self.features;
        let rows = cache.rows;
        if dy.rows() != rows || dy.cols() != f {
            return shape_err(format!("{}: upstream {:?}", self.name, dy.shape()));
        }
        let gamma = params.get(&self.gamma())?.data();
        let mut dgamma = vec![0.0; f];
        let mut dbeta = vec![0.0; f];
        for (dr, xr) in dy.data().chunks(f).zip(cache.xhat.chunks(f)) {
            for c in 0..f {
                dgamma[c] += dr[c] * xr[c];
                dbeta[c] += dr[c];
            }
        }
        accumulate(grads, &self.gamma(), &dgamma)?;
        accumulate(grads, &self.beta(), &dbeta)?;

        let mut dx = vec![0.0; rows * f];
        if cache.train {
            // dx = (gamma * inv_std / N) * (N dy - sum(dy) - x̂ * sum(dy x̂))
            let n = rows as f64;
            for ((dxr, dr), xr) in dx.chunks_mut(f).zip(dy.data().chunks(f)).zip(cache.xhat.chunks(f)) {
                for c in 0..f {
                    dxr[c] = gamma[c] * cache.inv_std[c] / n * (n * dr[c] - dbeta[c] - xr[c] * dgamma[c]);
                }
            }
        } else {
            for (dxr, dr) in dx.chunks_mut(f).zip(dy.data().chunks(f)) {
                for c in 0..f {
                    dxr[c] = dr[c] * gamma[c] * cache.inv_std[c];
                }
            }
        }
        Ok(Tensor::matrix(rows, f, dx))
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

/// GELU, tanh form.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// Two linear maps with a GELU in between.
#[derive(Debug, Clone, PartialEq)]
pub struct GeluFfn {
    pub inner: Linear,
    pub outer: Linear,
}

#[derive(Debug, Clone)]
pub struct GeluFfnCache {
    x: Tensor,
    pre: Tensor,
    act: Tensor,
}

impl GeluFfn {
    pub fn new(prefix: &str, width: usize, hidden: usize, outer_bias: bool) -> Self {
        Self {
            inner: Linear::new(&format!("{prefix}.inner"), width, hidden, true),
            outer: Linear::new(&format!("{prefix}.outer"), hidden, width, outer_bias),
        }
    }

    pub fn init<R: Rng>(&self, params: &mut ParamSet, rng: &mut R) {
        self.inner.init(params, rng);
        self.outer.init(params, rng);
    }
}

impl Layer for GeluFfn {
    type Cache = GeluFfnCache;

    fn forward(&self, params: &ParamSet, x: &Tensor, mode: Mode) -> Result<(Tensor, GeluFfnCache)> {
        let (pre, _) = self.inner.forward(params, x, mode)?;
        let act = Tensor::matrix(pre.rows(), pre.cols(), pre.data().iter().map(|&v| gelu(v)).collect());
        let (y, _) = self.outer.forward(params, &act, mode)?;
        Ok((
            y,
            GeluFfnCache {
                x: x.clone(),
                pre,
                act,
            },
        ))
    }

    fn backward(&self, params: &ParamSet, cache: &GeluFfnCache, dy: &Tensor, grads: &mut Gradients) -> Result<Tensor> {
        let dact = self.outer.backward(params, &cache.act, dy, grads)?;
        let dpre: Vec<f64> = dact
            .data()
            .iter()
            .zip(cache.pre.data())
            .map(|(d, &p)| d * gelu_grad(p))
            .collect();
        let dpre = Tensor::matrix(dact.rows(), dact.cols(), dpre);
        self.inner.backward(params, &cache.x, &dpre, grads)
    }
}

/// Normalizes every row to zero mean and unit standard deviation; rows with
/// a standard deviation below `eps` are divided by `eps` instead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceNorm {
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct InstanceNormCache {
    xhat: Vec<f64>,
    scale: Vec<f64>,
    guarded: Vec<bool>,
    cols: usize,
}

impl Default for InstanceNorm {
    fn default() -> Self {
        Self {
            eps: crate::market_data::NORM_EPS,
        }
    }
}

impl Layer for InstanceNorm {
    type Cache = InstanceNormCache;

    fn forward(&self, _params: &ParamSet, x: &Tensor, _mode: Mode) -> Result<(Tensor, InstanceNormCache)> {
        let cols = x.cols();
        if cols == 0 {
            return shape_err("instance norm over empty rows");
        }
        let mut xhat = Vec::with_capacity(x.len());
        let mut scale = Vec::with_capacity(x.rows());
        let mut guarded = Vec::with_capacity(x.rows());
        for row in x.data().chunks(cols) {
            let stats = crate::market_data::NormStats::of(row);
            let s = stats.std.max(self.eps);
            guarded.push(stats.std < self.eps);
            scale.push(s);
            xhat.extend(row.iter().map(|v| (v - stats.mean) / s));
        }
        Ok((
            Tensor::matrix(x.rows(), cols, xhat.clone()),
            InstanceNormCache {
                xhat,
                scale,
                guarded,
                cols,
            },
        ))
    }

    fn backward(&self, _params: &ParamSet, cache: &InstanceNormCache, dy: &Tensor, _grads: &mut Gradients) -> Result<Tensor> {
        let cols = cache.cols;
        if dy.cols() != cols || dy.rows() != cache.scale.len() {
            return shape_err("instance norm upstream shape");
        }
        let n = cols as f64;
        let mut dx = vec![0.0; dy.len()];
        for (r, ((dxr, dr), xr)) in dx
            .chunks_mut(cols)
            .zip(dy.data().chunks(cols))
            .zip(cache.xhat.chunks(cols))
            .enumerate()
        {
            let mean_dy = dr.iter().sum::<f64>() / n;
            let mean_dyx = if cache.guarded[r] {
                0.0
            } else {
                dr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / n
            };
            for c in 0..cols {
                dxr[c] = (dr[c] - mean_dy - xr[c] * mean_dyx) / cache.scale[r];
            }
        }
        Ok(Tensor::matrix(dy.rows(), cols, dx))
    }
}

/// Concatenates the `tokens` consecutive rows of each sample into one row
/// and applies a linear map to the flattened vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FlattenHead {
    pub tokens: usize,
    pub width: usize,
    pub linear: Linear,
}

impl FlattenHead {
    pub fn new(prefix: &str, tokens: usize, width: usize, output: usize) -> Self {
        Self {
            tokens,
            width,
            linear: Linear::new(prefix, tokens * width, output, true),
        }
    }
}

impl Layer for FlattenHead {
    type Cache = Tensor;

    fn forward(&self, params: &ParamSet, x: &Tensor, mode: Mode) -> Result<(Tensor, Tensor)> {
        if x.cols() != self.width || !x.rows().is_multiple_of(self.tokens) {
            return shape_err(format!("flatten head: input {:?}, {} tokens of width {}", x.shape(), self.tokens, self.width));
        }
        let flat = Tensor::matrix(x.rows() / self.tokens, self.tokens * self.width, x.data().to_vec());
        self.linear.forward(params, &flat, mode)
    }

    fn backward(&self, params: &ParamSet, flat: &Tensor, dy: &Tensor, grads: &mut Gradients) -> Result<Tensor> {
        let dflat = self.linear.backward(params, flat, dy, grads)?;
        Ok(Tensor::matrix(flat.rows() * self.tokens, self.width, dflat.into_data()))
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `p`, otherwise
/// `1 / (1 - p)`. Deterministic in `(seed, salt)`.
pub fn dropout_mask(len: usize, p: f64, seed: u64, salt: u64) -> Vec<f64> {
    if p <= 0.0 {
        return vec![1.0; len];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(salt);
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}
