//! Channel-independent patch transformer.
//!
//! Every channel of every sample is a separate token sequence. All sequences
//! of a batch are stacked into one token matrix with `batch * channels *
//! patches` rows, so the linear maps, batch norms and the feed-forward block
//! each run as a single matrix product; only attention is done per sequence.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{TrainStep, Trainable};
use super::{check_sample, patch_count, patchify, ForecastError, Forecaster, Result};
use crate::market_data::{Transform, WindowSample};
use crate::numerics::{
    dropout_mask, sdpa_backward, sdpa_forward, BatchNorm, BatchNormCache, BnStats, Checkpoint, FlattenHead, GeluFfn,
    GeluFfnCache, Gradients, InstanceNorm, Layer, Linear, Mode, ParamSet, Tensor,
};

/// Batch-norm caches from a training pass, keyed by layer name.
type BatchNormUpdates = Vec<(String, BatchNormCache)>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerHyper {
    pub lookback: usize,
    pub horizon: usize,
    pub channels: usize,
    pub patch_len: usize,
    pub stride: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_dim: usize,
    /// Dropout rate after attention and after the feed-forward block.
    pub dropout: f64,
}

impl Default for TransformerHyper {
    fn default() -> Self {
        Self {
            lookback: 336,
            horizon: 24,
            channels: 3,
            patch_len: 16,
            stride: 8,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            ffn_dim: 128,
            dropout: 0.1,
        }
    }
}

impl TransformerHyper {
    /// Checks the geometry and returns the patch count.
    pub fn validate(&self) -> Result<usize> {
        let n = patch_count(self.lookback, self.patch_len, self.stride)?;
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ForecastError::GeometryMismatch(format!(
                "{} heads do not divide d_model {}",
                self.n_heads, self.d_model
            )));
        }
        if self.channels == 0 || self.horizon == 0 || self.ffn_dim == 0 {
            return Err(ForecastError::GeometryMismatch("empty dimension".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ForecastError::GeometryMismatch(format!("dropout {}", self.dropout)));
        }
        Ok(n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchTransformer {
    pub hyper: TransformerHyper,
    pub transform: Transform,
    pub params: ParamSet,
    /// Running statistics per batch-norm layer.
    pub bn_stats: BTreeMap<String, BnStats>,
    pub seed: u64,
    patches: usize,
}

/// Names of one encoder layer's pieces.
struct EncoderLayer {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    bn1: String,
    ffn: GeluFfn,
    bn2: String,
}

impl EncoderLayer {
    fn new(l: usize, h: &TransformerHyper) -> Self {
        let d = h.d_model;
        let p = |s: &str| format!("enc{l}.{s}");
        // K, V and the output projection carry no bias: a K bias shifts
        // every score of a query equally and cancels in the softmax, and the
        // V and output biases add a constant row that the following batch
        // norm removes. Their gradients would be identically zero.
        Self {
            q: Linear::new(&p("q"), d, d, true),
            k: Linear::new(&p("k"), d, d, false),
            v: Linear::new(&p("v"), d, d, false),
            o: Linear::new(&p("o"), d, d, false),
            bn1: p("bn1"),
            ffn: GeluFfn::new(&p("ffn"), d, h.ffn_dim, false),
            bn2: p("bn2"),
        }
    }
}

struct LayerCache {
    x: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    probs: Vec<Vec<f64>>,
    concat: Tensor,
    mask1: Option<Vec<f64>>,
    bn1: BatchNormCache,
    ffn: GeluFfnCache,
    mask2: Option<Vec<f64>>,
    bn2: BatchNormCache,
}

struct ForwardPass {
    patches: Tensor,
    layers: Vec<LayerCache>,
    tokens: Tensor,
    head_input: Tensor,
    out: Tensor,
}

fn apply_mask(t: &mut Tensor, mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        for (v, k) in t.data_mut().iter_mut().zip(m) {
            *v *= k;
        }
    }
}

impl PatchTransformer {
    pub fn new(hyper: TransformerHyper, transform: Transform, seed: u64) -> Result<Self> {
        let patches = hyper.validate()?;
        let mut model = Self {
            hyper,
            transform,
            params: ParamSet::new(),
            bn_stats: BTreeMap::new(),
            seed,
            patches,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = hyper.d_model;
        model.embed().init(&mut model.params, &mut rng);
        model.params.insert("pos", Tensor::xavier(&[patches, d], patches, d, &mut rng));
        for l in 0..hyper.n_layers {
            let layer = EncoderLayer::new(l, &hyper);
            for lin in [&layer.q, &layer.k, &layer.v, &layer.o] {
                lin.init(&mut model.params, &mut rng);
            }
            layer.ffn.init(&mut model.params, &mut rng);
            for bn in [&layer.bn1, &layer.bn2] {
                BatchNorm::new(bn, d, None).init(&mut model.params);
                model.bn_stats.insert(bn.clone(), BnStats::identity(d));
            }
        }
        model.head().linear.init(&mut model.params, &mut rng);
        Ok(model)
    }

    pub fn patches(&self) -> usize {
        self.patches
    }

    fn embed(&self) -> Linear {
        Linear::new("embed", self.hyper.patch_len, self.hyper.d_model, true)
    }

    fn head(&self) -> FlattenHead {
        FlattenHead::new("head", self.hyper.channels * self.patches, self.hyper.d_model, self.hyper.horizon)
    }

    fn batch_norm(&self, name: &str, mode: Mode) -> BatchNorm {
        let running = match mode {
            Mode::Eval => self.bn_stats.get(name).cloned(),
            Mode::Train { .. } => None,
        };
        BatchNorm::new(name, self.hyper.d_model, running)
    }

    fn dropout(&self, mode: Mode, len: usize, salt: u64) -> Option<Vec<f64>> {
        match mode {
            Mode::Train { dropout, seed } if dropout > 0.0 => Some(dropout_mask(len, dropout, seed, salt)),
            _ => None,
        }
    }

    /// Copies the `(seq, head)` slice of a token matrix into a contiguous
    /// `patches × head_dim` block.
    fn gather(&self, t: &Tensor, seq: usize, head: usize) -> Vec<f64> {
        let (n, d) = (self.patches, self.hyper.d_model);
        let dk = d / self.hyper.n_heads;
        let mut out = Vec::with_capacity(n * dk);
        for r in seq * n..(seq + 1) * n {
            out.extend_from_slice(&t.data()[r * d + head * dk..r * d + (head + 1) * dk]);
        }
        out
    }

    fn scatter(&self, t: &mut Tensor, seq: usize, head: usize, block: &[f64]) {
        let (n, d) = (self.patches, self.hyper.d_model);
        let dk = d / self.hyper.n_heads;
        for (i, r) in (seq * n..(seq + 1) * n).enumerate() {
            t.data_mut()[r * d + head * dk..r * d + (head + 1) * dk].copy_from_slice(&block[i * dk..(i + 1) * dk]);
        }
    }

    fn forward(&self, batch: &[&WindowSample], mode: Mode) -> Result<ForwardPass> {
        let h = &self.hyper;
        for s in batch {
            check_sample(s, h.channels, h.lookback, h.horizon, self.transform)?;
        }
        let (n, d, heads) = (self.patches, h.d_model, h.n_heads);
        let dk = d / heads;
        let seqs = batch.len() * h.channels;
        let rows = seqs * n;

        let raw: Vec<f64> = batch.iter().flat_map(|s| s.input.iter().copied()).collect();
        let (normed, _) = InstanceNorm::default().forward(&self.params, &Tensor::matrix(seqs, h.lookback, raw), mode)?;
        let mut patch_data = Vec::with_capacity(rows * h.patch_len);
        for s in 0..seqs {
            patch_data.extend(patchify(normed.row(s), h.patch_len, h.stride)?.into_data());
        }
        let patches = Tensor::matrix(rows, h.patch_len, patch_data);

        let (mut x, _) = self.embed().forward(&self.params, &patches, mode)?;
        let pos = self.params.get("pos")?.data();
        for chunk in x.data_mut().chunks_mut(n * d) {
            for (v, p) in chunk.iter_mut().zip(pos) {
                *v += p;
            }
        }

        let mut layers = Vec::with_capacity(h.n_layers);
        for l in 0..h.n_layers {
            let layer = EncoderLayer::new(l, h);
            let (q, _) = layer.q.forward(&self.params, &x, mode)?;
            let (k, _) = layer.k.forward(&self.params, &x, mode)?;
            let (v, _) = layer.v.forward(&self.params, &x, mode)?;
            let blocks = crate::par::map_range(seqs * heads, |i| {
                let (s, hd) = (i / heads, i % heads);
                sdpa_forward(
                    &self.gather(&q, s, hd),
                    &self.gather(&k, s, hd),
                    &self.gather(&v, s, hd),
                    n,
                    n,
                    dk,
                    dk,
                )
            });
            let mut concat = Tensor::zeros(&[rows, d]);
            let mut probs = Vec::with_capacity(blocks.len());
            for (i, (out, p)) in blocks.into_iter().enumerate() {
                self.scatter(&mut concat, i / heads, i % heads, &out);
                probs.push(p);
            }
            let (mut attn, _) = layer.o.forward(&self.params, &concat, mode)?;
            let mask1 = self.dropout(mode, rows * d, 2 * l as u64);
            apply_mask(&mut attn, &mask1);
            attn.add_assign(&x);
            let (y1, bn1) = self.batch_norm(&layer.bn1, mode).forward(&self.params, &attn, mode)?;

            let (mut f, ffn) = layer.ffn.forward(&self.params, &y1, mode)?;
            let mask2 = self.dropout(mode, rows * d, 2 * l as u64 + 1);
            apply_mask(&mut f, &mask2);
            f.add_assign(&y1);
            let (y2, bn2) = self.batch_norm(&layer.bn2, mode).forward(&self.params, &f, mode)?;

            layers.push(LayerCache {
                x: std::mem::replace(&mut x, y2),
                q,
                k,
                v,
                probs,
                concat,
                mask1,
                bn1,
                ffn,
                mask2,
                bn2,
            });
        }
        let (out, head_input) = self.head().forward(&self.params, &x, mode)?;
        Ok(ForwardPass {
            patches,
            layers,
            tokens: x,
            head_input,
            out,
        })
    }

    fn backward(&self, fp: &ForwardPass, dout: &Tensor, mode: Mode) -> Result<Gradients> {
        let h = &self.hyper;
        let (n, d, heads) = (self.patches, h.d_model, h.n_heads);
        let dk = d / heads;
        let mut grads = self.params.zero_gradients();
        let mut dx = self.head().backward(&self.params, &fp.head_input, dout, &mut grads)?;
        let rows = dx.rows();
        let seqs = rows / n;

        for (l, c) in fp.layers.iter().enumerate().rev() {
            let layer = EncoderLayer::new(l, h);
            let d_f = self.batch_norm(&layer.bn2, mode).backward(&self.params, &c.bn2, &dx, &mut grads)?;
            let mut d_ffn_out = d_f.clone();
            apply_mask(&mut d_ffn_out, &c.mask2);
            let mut dy1 = layer.ffn.backward(&self.params, &c.ffn, &d_ffn_out, &mut grads)?;
            dy1.add_assign(&d_f);

            let d_attn_sum = self.batch_norm(&layer.bn1, mode).backward(&self.params, &c.bn1, &dy1, &mut grads)?;
            let mut d_attn = d_attn_sum.clone();
            apply_mask(&mut d_attn, &c.mask1);
            let dconcat = layer.o.backward(&self.params, &c.concat, &d_attn, &mut grads)?;

            let blocks = crate::par::map_range(seqs * heads, |i| {
                let (s, hd) = (i / heads, i % heads);
                sdpa_backward(
                    &self.gather(&c.q, s, hd),
                    &self.gather(&c.k, s, hd),
                    &self.gather(&c.v, s, hd),
                    &c.probs[i],
                    &self.gather(&dconcat, s, hd),
                    n,
                    n,
                    dk,
                    dk,
                )
            });
            let mut dq = Tensor::zeros(&[rows, d]);
            let mut dkt = Tensor::zeros(&[rows, d]);
            let mut dv = Tensor::zeros(&[rows, d]);
            for (i, (a, b, v)) in blocks.iter().enumerate() {
                self.scatter(&mut dq, i / heads, i % heads, a);
                self.scatter(&mut dkt, i / heads, i % heads, b);
                self.scatter(&mut dv, i / heads, i % heads, v);
            }
            let mut dxl = d_attn_sum;
            dxl.add_assign(&layer.q.backward(&self.params, &c.x, &dq, &mut grads)?);
            dxl.add_assign(&layer.k.backward(&self.params, &c.x, &dkt, &mut grads)?);
            dxl.add_assign(&layer.v.backward(&self.params, &c.x, &dv, &mut grads)?);
            dx = dxl;
        }

        let mut dpos = vec![0.0; n * d];
        for chunk in dx.data().chunks(n * d) {
            for (a, v) in dpos.iter_mut().zip(chunk) {
                *a += v;
            }
        }
        for (a, v) in grads.get_mut("pos").expect("pos registered").data_mut().iter_mut().zip(&dpos) {
            *a += v;
        }
        self.embed().backward(&self.params, &fp.patches, &dx, &mut grads)?;
        Ok(grads)
    }

    /// MSE loss and gradient for `batch` under an explicit `mode`.
    pub fn loss_and_grad(&self, batch: &[&WindowSample], mode: Mode) -> Result<(f64, Gradients, BatchNormUpdates)> {
        let fp = self.forward(batch, mode)?;
        let t = self.hyper.horizon;
        let denom = (batch.len() * t) as f64;
        let mut loss = 0.0;
        let mut dout = Vec::with_capacity(batch.len() * t);
        for (s, pred) in batch.iter().zip(fp.out.data().chunks(t)) {
            for (p, y) in pred.iter().zip(s.normalized_target()) {
                loss += (p - y) * (p - y) / denom;
                dout.push(2.0 * (p - y) / denom);
            }
        }
        let grads = self.backward(&fp, &Tensor::matrix(batch.len(), t, dout), mode)?;
        let stats = fp
            .layers
            .into_iter()
            .enumerate()
            .flat_map(|(l, c)| [(format!("enc{l}.bn1"), c.bn1), (format!("enc{l}.bn2"), c.bn2)])
            .collect();
        Ok((loss, grads, stats))
    }

    /// MSE loss on `batch` without the backward pass.
    pub fn loss(&self, batch: &[&WindowSample], mode: Mode) -> Result<f64> {
        let fp = self.forward(batch, mode)?;
        let t = self.hyper.horizon;
        let denom = (batch.len() * t) as f64;
        let mut loss = 0.0;
        for (s, pred) in batch.iter().zip(fp.out.data().chunks(t)) {
            for (p, y) in pred.iter().zip(s.normalized_target()) {
                loss += (p - y) * (p - y) / denom;
            }
        }
        Ok(loss)
    }

    /// Final eval-mode token representations of one sample,
    /// `channels * patches` rows of width `d_model`, channel-major.
    pub fn encode(&self, sample: &WindowSample) -> Result<Tensor> {
        Ok(self.forward(&[sample], Mode::Eval)?.tokens)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            serde_json::json!({
                "kind": "transformer",
                "hyper": self.hyper,
                "transform": self.transform,
            }),
            &self.params,
            self.bn_stats.clone(),
            self.seed,
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let hp = &ck.hyperparameters;
        if hp.get("kind").and_then(|k| k.as_str()) != Some("transformer") {
            return Err(ForecastError::WrongModelKind("transformer".into()));
        }
        let bad = |e: serde_json::Error| ForecastError::Numerics(crate::numerics::NumericsError::Checkpoint(e.to_string()));
        let hyper: TransformerHyper = serde_json::from_value(hp["hyper"].clone()).map_err(bad)?;
        let transform: Transform = serde_json::from_value(hp["transform"].clone()).map_err(bad)?;
        let mut model = Self::new(hyper, transform, ck.rng_seed)?;
        let params = ck.params()?;
        for (name, p) in model.params.iter() {
            let loaded = params.get(name)?;
            if loaded.shape() != p.value.shape() {
                return Err(ForecastError::ShapeMismatch(format!("checkpoint parameter `{name}`")));
            }
        }
        if params.len() != model.params.len() {
            return Err(ForecastError::ShapeMismatch("checkpoint has extra parameters".into()));
        }
        model.params = params;
        for (name, stats) in model.bn_stats.iter_mut() {
            let loaded = ck
                .batch_norm
                .get(name)
                .ok_or_else(|| ForecastError::ShapeMismatch(format!("missing batch-norm stats `{name}`")))?;
            if loaded.mean.len() != hyper.d_model || loaded.var.len() != hyper.d_model {
                return Err(ForecastError::ShapeMismatch(format!("batch-norm stats `{name}`")));
            }
            *stats = loaded.clone();
        }
        Ok(model)
    }
}

impl Forecaster for PatchTransformer {
    fn predict_batch(&self, batch: &[&WindowSample]) -> Result<Vec<Vec<f64>>> {
        let fp = self.forward(batch, Mode::Eval)?;
        Ok(fp.out.data().chunks(self.hyper.horizon).map(<[f64]>::to_vec).collect())
    }
}

impl Trainable for PatchTransformer {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn train_step(&self, batch: &[&WindowSample], seed: u64) -> Result<TrainStep> {
        let mode = Mode::Train {
            dropout: self.hyper.dropout,
            seed,
        };
        let (loss, grads, batch_norm) = self.loss_and_grad(batch, mode)?;
        Ok(TrainStep { loss, grads, batch_norm })
    }

    fn absorb(&mut self, step: &TrainStep) {
        for (name, cache) in &step.batch_norm {
            if let Some(s) = self.bn_stats.get_mut(name) {
                s.update(cache, BatchNorm::MOMENTUM);
            }
        }
    }
}
