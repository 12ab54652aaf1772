//! Masklet classification from pooled encoder features.
//!
//! A masklet is summarized by the mean feature vector over the cells it
//! covers, classified by a one-hidden-layer perceptron, and the predicted
//! classes are painted back into a label map.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::FeatureMap;
use crate::mask::{BinaryMask, LabelMap, Masklet};
use crate::refine::{paint_order, predominant_class, OverlapOrder};

pub const MODEL_MAGIC: &[u8; 4] = b"MMLP";

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite feature value".into()));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Mean feature over the mask, after nearest-neighbor downsampling of the
/// mask to the feature grid (each cell samples the mask at its center
/// pixel). If no cell survives the downsampling, the cell holding the mask
/// centroid is used.
pub fn pool_features(m: &BinaryMask, f: &FeatureMap) -> Result<FeatureVector> {
    let (w, h) = m.dims();
    let (fw, fh) = (f.width(), f.height());
    if fw == 0 || fh == 0 || w % fw != 0 || h % fh != 0 {
        return Err(Error::Config(format!(
            "mask {w}x{h} is not an integer multiple of feature grid {fw}x{fh}"
        )));
    }
    let (sx, sy) = (w / fw, h / fh);
    let (cx, cy) = (sx / 2, sy / 2);
    let mut sum = vec![0f64; f.dim()];
    let mut n = 0u64;
    for i in m.fg_indices() {
        let (x, y) = (i % w, i / w);
        if x % sx == cx && y % sy == cy {
            for (s, &v) in sum.iter_mut().zip(f.at(x / sx, y / sy)) {
                *s += v as f64;
            }
            n += 1;
        }
    }
    if n == 0 {
        let (mx, my) = m
            .centroid()
            .ok_or_else(|| Error::Validation("cannot pool features of an empty mask".into()))?;
        let fx = ((mx.floor() as usize) / sx).min(fw - 1);
        let fy = ((my.floor() as usize) / sy).min(fh - 1);
        return FeatureVector::new(f.at(fx, fy).iter().map(|&v| v as f64).collect());
    }
    FeatureVector::new(sum.into_iter().map(|s| s / n as f64).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub d_hidden: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 256,
            seed: 0,
            d_hidden: 256,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.batch_size == 0 || self.d_hidden == 0 {
            return Err(Error::Config(
                "learning_rate, epochs, batch_size and d_hidden must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::Config(
                "optimizer moments must lie in [0, 1) with epsilon > 0".into(),
            ));
        }
        Ok(())
    }
}

/// `softmax(W2 · relu(W1 · v + b1) + b2)`.
///
/// Parameters live in one flat vector laid out as `[W1, b1, W2, b2]` with
/// row-major weight matrices (`W1` is `d_hidden x d_in`).
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    d_in: usize,
    d_hidden: usize,
    num_classes: usize,
    params: Vec<f64>,
    /// Mean training loss of the last epoch, when produced by training.
    pub final_loss: Option<f64>,
}

impl MlpModel {
    pub fn zeros(d_in: usize, d_hidden: usize, num_classes: usize) -> Self {
        let n = d_hidden * d_in + d_hidden + num_classes * d_hidden + num_classes;
        Self {
            d_in,
            d_hidden,
            num_classes,
            params: vec![0.0; n],
            final_loss: None,
        }
    }

    /// Uniform `±sqrt(6 / (fan_in + fan_out))` weights, zero biases.
    pub fn init(d_in: usize, d_hidden: usize, num_classes: usize, rng: &mut impl Rng) -> Self {
        let mut m = Self::zeros(d_in, d_hidden, num_classes);
        let l1 = (6.0 / (d_in + d_hidden) as f64).sqrt();
        let l2 = (6.0 / (d_hidden + num_classes) as f64).sqrt();
        let (o_b1, o_w2, o_b2) = m.offsets();
        for p in &mut m.params[..o_b1] {
            *p = rng.random_range(-l1..=l1);
        }
        for p in &mut m.params[o_w2..o_b2] {
            *p = rng.random_range(-l2..=l2);
        }
        m
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.d_in, self.d_hidden, self.num_classes)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Offsets of `b1`, `W2` and `b2` in the flat parameter vector.
    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.d_hidden * self.d_in;
        let w2 = b1 + self.d_hidden;
        let b2 = w2 + self.num_classes * self.d_hidden;
        (b1, w2, b2)
    }

    fn hidden(&self, x: &[f64], out: &mut [f64]) {
        let (o_b1, _, _) = self.offsets();
        let w1 = &self.params[..o_b1];
        let b1 = &self.params[o_b1..o_b1 + self.d_hidden];
        for (j, o) in out.iter_mut().enumerate() {
            let row = &w1[j * self.d_in..(j + 1) * self.d_in];
            let z: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b1[j];
            *o = z.max(0.0);
        }
    }

    fn logits(&self, h: &[f64], out: &mut [f64]) {
        let (_, o_w2, o_b2) = self.offsets();
        let w2 = &self.params[o_w2..o_b2];
        let b2 = &self.params[o_b2..];
        for (k, o) in out.iter_mut().enumerate() {
            let row = &w2[k * self.d_hidden..(k + 1) * self.d_hidden];
            *o = row.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() + b2[k];
        }
    }

    fn forward_raw(&self, x: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; self.d_hidden];
        self.hidden(x, &mut h);
        let mut z = vec![0.0; self.num_classes];
        self.logits(&h, &mut z);
        softmax_in_place(&mut z);
        z
    }

    /// Mean cross-entropy over the batch and its gradient w.r.t. `params`.
    pub fn loss_and_grad(&self, batch: &[(&[f64], usize)]) -> (f64, Vec<f64>) {
        let (o_b1, o_w2, o_b2) = self.offsets();
        let mut grad = vec![0.0; self.params.len()];
        let mut h = vec![0.0; self.d_hidden];
        let mut z = vec![0.0; self.num_classes];
        let mut dh = vec![0.0; self.d_hidden];
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for &(x, y) in batch {
            self.hidden(x, &mut h);
            self.logits(&h, &mut z);
            softmax_in_place(&mut z);
            loss -= z[y].max(f64::MIN_POSITIVE).ln();
            z[y] -= 1.0;
            dh.iter_mut().for_each(|d| *d = 0.0);
            for k in 0..self.num_classes {
                let dz = z[k] * scale;
                let row = o_w2 + k * self.d_hidden;
                for j in 0..self.d_hidden {
                    grad[row + j] += dz * h[j];
                    dh[j] += self.params[row + j] * dz;
                }
                grad[o_b2 + k] += dz;
            }
            for j in 0..self.d_hidden {
                if h[j] <= 0.0 {
                    continue;
                }
                let row = j * self.d_in;
                for (g, &xi) in grad[row..row + self.d_in].iter_mut().zip(x) {
                    *g += dh[j] * xi;
                }
                grad[o_b1 + j] += dh[j];
            }
        }
        (loss * scale, grad)
    }

    pub fn predict(&self, v: &FeatureVector) -> Result<usize> {
        let p = mlp_forward(self, v)?;
        let mut best = 0;
        for k in 1..p.len() {
            if p[k] > p[best] {
                best = k;
            }
        }
        Ok(best)
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

pub fn mlp_forward(model: &MlpModel, v: &FeatureVector) -> Result<Vec<f64>> {
    if v.dim() != model.d_in {
        return Err(Error::Dimension {
            expected: (model.d_in, 1),
            actual: (v.dim(), 1),
        });
    }
    Ok(model.forward_raw(&v.values))
}

/// Per-epoch mean training losses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrace {
    pub epoch_losses: Vec<f64>,
}

pub fn mlp_train(dataset: &[(FeatureVector, usize)], num_classes: usize, cfg: &TrainConfig) -> Result<MlpModel> {
    mlp_train_traced(dataset, num_classes, cfg).map(|(m, _)| m)
}

/// Mini-batch Adam on mean cross-entropy. Exact duplicate samples are
/// dropped first, so a dataset and its self-concatenation train identically.
pub fn mlp_train_traced(
    dataset: &[(FeatureVector, usize)],
    num_classes: usize,
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainTrace)> {
    cfg.validate()?;
    let first = dataset
        .first()
        .ok_or_else(|| Error::Validation("empty training set".into()))?;
    let d_in = first.0.dim();
    for (v, y) in dataset {
        if v.dim() != d_in {
            return Err(Error::Dimension {
                expected: (d_in, 1),
                actual: (v.dim(), 1),
            });
        }
        if *y >= num_classes {
            return Err(Error::Validation(format!("label {y} outside {num_classes} classes")));
        }
    }
    let mut seen = std::collections::HashSet::new();
    let samples: Vec<(&[f64], usize)> = dataset
        .iter()
        .filter(|(v, y)| seen.insert((v.values.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), *y)))
        .map(|(v, y)| (v.values.as_slice(), *y))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = MlpModel::init(d_in, cfg.d_hidden, num_classes, &mut rng);
    let n_params = model.params.len();
    let mut m1 = vec![0.0; n_params];
    let mut m2 = vec![0.0; n_params];
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut trace = TrainTrace::default();
    let mut batch = Vec::with_capacity(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| samples[i]));
            let (loss, grad) = model.loss_and_grad(&batch);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            epoch_loss += loss * chunk.len() as f64;
            step += 1;
            let bc1 = 1.0 - cfg.beta1.powi(step);
            let bc2 = 1.0 - cfg.beta2.powi(step);
            for i in 0..n_params {
                let g = grad[i];
                m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * g;
                m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * g * g;
                let mhat = m1[i] / bc1;
                let vhat = m2[i] / bc2;
                model.params[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
            }
            if model.params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Divergence { epoch, loss: f64::NAN });
            }
        }
        let mean = epoch_loss / samples.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence { epoch, loss: mean });
        }
        trace.epoch_losses.push(mean);
    }
    model.final_loss = trace.epoch_losses.last().copied();
    Ok((model, trace))
}

/// Write `MMLP` header (magic, `d_in`, `d_hidden`, `num_classes` as u32 LE)
/// followed by the parameters as f32 LE in `[W1, b1, W2, b2]` order.
pub fn write_model(model: &MlpModel, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode_model(model, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn encode_model(model: &MlpModel, mut w: impl Write) -> std::io::Result<()> {
    w.write_all(MODEL_MAGIC)?;
    for d in [model.d_in, model.d_hidden, model.num_classes] {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &p in &model.params {
        w.write_all(&(p as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_model(path: &Path) -> Result<MlpModel> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    decode_model(BufReader::new(file)).map_err(|e| e.at(path))
}

pub fn decode_model(mut r: impl Read) -> Result<MlpModel> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|_| Error::Format("truncated MMLP header".into()))?;
    if &header[..4] != MODEL_MAGIC {
        return Err(Error::Format("bad magic, expected \"MMLP\"".into()));
    }
    let field = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
    let mut model = MlpModel::zeros(field(4), field(8), field(12));
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::Format(e.to_string()))?;
    if bytes.len() != model.params.len() * 4 {
        return Err(Error::Format(format!(
            "MMLP payload holds {} bytes, expected {}",
            bytes.len(),
            model.params.len() * 4
        )));
    }
    for (p, c) in model.params.iter_mut().zip(bytes.chunks_exact(4)) {
        let v = f32::from_le_bytes(c.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::Data("non-finite model parameter".into()));
        }
        *p = v as f64;
    }
    Ok(model)
}

/// Paint classified masklets over `base` (or over an all-ignore map).
pub fn compose_segmentation(
    masklets: &[(&Masklet, u8)],
    base: Option<&LabelMap>,
    dims: (usize, usize),
    ignore_label: u8,
    order: OverlapOrder,
) -> Result<LabelMap> {
    let mut out = match base {
        Some(b) => {
            b.check_same_dims(dims)?;
            b.clone()
        }
        None => LabelMap::filled(dims.0, dims.1, ignore_label, ignore_label),
    };
    let ms: Vec<&Masklet> = masklets.iter().map(|m| m.0).collect();
    for i in paint_order(&ms, order) {
        let (m, class) = masklets[i];
        out.check_same_dims(m.mask().dims())?;
        let labels = out.labels_mut();
        for run in m.mask().fg_runs() {
            labels[run].fill(class);
        }
    }
    Ok(out)
}

/// Pooled vectors of masklets labeled with their ground-truth majority class.
/// Masklets covering only ignore pixels are skipped.
pub fn labeled_vectors(
    masklets: &[&Masklet],
    gt: &LabelMap,
    features: &FeatureMap,
) -> Result<Vec<(FeatureVector, usize)>> {
    let mut out = Vec::new();
    for m in masklets {
        let vote = predominant_class(m.mask(), gt)?;
        if vote.fraction == 0.0 {
            continue;
        }
        out.push((pool_features(m.mask(), features)?, vote.class as usize));
    }
    Ok(out)
}
