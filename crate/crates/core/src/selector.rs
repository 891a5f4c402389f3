//! Two-layer K-way classifier trained for a fixed, small epoch budget on
//! core-set pseudo-labels, then frozen and used for max-probability scoring.
//!
//! Architecture: `logits = W2 · relu(W1 · x + b1) + b2`. All parameters live
//! in one flat buffer in the order `w1, b1, w2, b2` (row-major), which is
//! also the on-disk block order of a checkpoint.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::FeatureStore;
use crate::core_set::CoreSet;
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

/// Floor applied to probabilities inside the log of the loss.
pub const LOG_CLAMP: f64 = 1e-12;

/// Rows per partial gradient. Fixed so the reduction order does not depend
/// on the thread count.
const GRAD_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct SelectorParams {
    pub input_dim: usize,
    pub hidden: usize,
    pub k: usize,
    data: Vec<f64>,
}

impl SelectorParams {
    pub fn zeros(input_dim: usize, hidden: usize, k: usize) -> Self {
        SelectorParams {
            input_dim,
            hidden,
            k,
            data: vec![0.0; Self::count(input_dim, hidden, k)],
        }
    }

    fn count(input_dim: usize, hidden: usize, k: usize) -> usize {
        hidden * input_dim + hidden + k * hidden + k
    }

    pub fn from_flat(input_dim: usize, hidden: usize, k: usize, data: Vec<f64>) -> Result<Self> {
        let want = Self::count(input_dim, hidden, k);
        if data.len() != want {
            return Err(Error::DimensionMismatch {
                expected: want,
                got: data.len(),
            });
        }
        Ok(SelectorParams {
            input_dim,
            hidden,
            k,
            data,
        })
    }

    fn offsets(&self) -> [usize; 4] {
        let w1 = self.hidden * self.input_dim;
        let b1 = w1 + self.hidden;
        let w2 = b1 + self.k * self.hidden;
        [w1, b1, w2, w2 + self.k]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `hidden × input_dim`, row-major.
    pub fn w1(&self) -> &[f64] {
        &self.data[..self.offsets()[0]]
    }

    pub fn b1(&self) -> &[f64] {
        let o = self.offsets();
        &self.data[o[0]..o[1]]
    }

    /// `k × hidden`, row-major.
    pub fn w2(&self) -> &[f64] {
        let o = self.offsets();
        &self.data[o[1]..o[2]]
    }

    pub fn b2(&self) -> &[f64] {
        let o = self.offsets();
        &self.data[o[2]..o[3]]
    }

    #[allow(clippy::type_complexity)]
    fn split_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64], &mut [f64]) {
        let o = self.offsets();
        let (w1, rest) = self.data.split_at_mut(o[0]);
        let (b1, rest) = rest.split_at_mut(o[1] - o[0]);
        let (w2, b2) = rest.split_at_mut(o[2] - o[1]);
        (w1, b1, w2, b2)
    }

    pub fn same_shape(&self, other: &SelectorParams) -> bool {
        self.input_dim == other.input_dim && self.hidden == other.hidden && self.k == other.k
    }

    /// Rounds every parameter to the nearest `f32`, the precision a
    /// checkpoint is stored in.
    pub fn round_to_f32(&mut self) {
        for x in &mut self.data {
            *x = *x as f32 as f64;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Fan-in scaled uniform weights, zero biases. Weights are drawn as `f32` so
/// an untrained selector is exactly representable in a checkpoint.
pub fn init_selector(input_dim: usize, hidden: usize, k: usize, seed: u64) -> SelectorParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = SelectorParams::zeros(input_dim, hidden, k);
    let a1 = (1.0 / input_dim.max(1) as f64).sqrt() as f32;
    let a2 = (1.0 / hidden.max(1) as f64).sqrt() as f32;
    let (w1, _, w2, _) = p.split_mut();
    for w in w1.iter_mut() {
        *w = rng.random_range(-a1..=a1) as f64;
    }
    for w in w2.iter_mut() {
        *w = rng.random_range(-a2..=a2) as f64;
    }
    p
}

fn check_width(params: &SelectorParams, width: usize) -> Result<()> {
    if width != params.input_dim {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim,
            got: width,
        });
    }
    Ok(())
}

/// Hidden activations and logits for one input row.
fn forward_row(params: &SelectorParams, x: &[f64], hidden: &mut [f64], logits: &mut [f64]) {
    let (w1, b1, w2, b2) = (params.w1(), params.b1(), params.w2(), params.b2());
    let n_in = params.input_dim;
    for (j, h) in hidden.iter_mut().enumerate() {
        let z = dot(&w1[j * n_in..(j + 1) * n_in], x) + b1[j];
        *h = z.max(0.0);
    }
    let nh = params.hidden;
    for (c, l) in logits.iter_mut().enumerate() {
        *l = dot(&w2[c * nh..(c + 1) * nh], hidden) + b2[c];
    }
}

pub fn forward(params: &SelectorParams, features: &Matrix) -> Result<Matrix> {
    check_width(params, features.cols())?;
    let k = params.k;
    let mut out = Matrix::zeros(features.rows(), k);
    out.as_mut_slice()
        .par_chunks_mut(k.max(1))
        .enumerate()
        .for_each_init(
            || vec![0.0; params.hidden],
            |hidden, (i, logits)| forward_row(params, features.row(i), hidden, logits),
        );
    Ok(out)
}

/// Max-subtracted softmax.
pub fn softmax_probs(logits: &[f64]) -> Result<Vec<f64>> {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p)?;
    Ok(p)
}

fn softmax_in_place(v: &mut [f64]) -> Result<f64> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteLogit);
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
    Ok(sum)
}

/// Maximum class probability. Equal to `1 / Σ exp(l_c − l_max)`, which keeps
/// the result inside `[1/K, 1]` under rounding.
pub fn max_probability(logits: &[f64]) -> Result<f64> {
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteLogit);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    Ok(1.0 / sum)
}

fn check_labels(labels: &[usize], k: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= k) {
        Some(&label) => Err(Error::LabelOutOfRange { label, k }),
        None => Ok(()),
    }
}

/// Mean negative log-likelihood of the labels.
pub fn cross_entropy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if probs.rows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: probs.rows(),
            got: labels.len(),
        });
    }
    check_labels(labels, probs.cols())?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs.get(i, y).max(LOG_CLAMP).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Mean cross-entropy loss and its analytic gradient over a batch.
pub fn loss_and_grad(
    params: &SelectorParams,
    features: &Matrix,
    labels: &[usize],
) -> Result<(f64, SelectorParams)> {
    check_width(params, features.cols())?;
    if features.rows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: features.rows(),
            got: labels.len(),
        });
    }
    check_labels(labels, params.k)?;
    let n = labels.len();
    let mut total = SelectorParams::zeros(params.input_dim, params.hidden, params.k);
    if n == 0 {
        return Ok((0.0, total));
    }
    let scale = 1.0 / n as f64;

    let partials: Vec<Result<(f64, SelectorParams)>> = (0..n)
        .collect::<Vec<_>>()
        .par_chunks(GRAD_CHUNK)
        .map(|rows| {
            let mut g = SelectorParams::zeros(params.input_dim, params.hidden, params.k);
            let mut hidden = vec![0.0; params.hidden];
            let mut dz2 = vec![0.0; params.k];
            let mut dh = vec![0.0; params.hidden];
            let mut loss = 0.0;
            let (n_in, nh) = (params.input_dim, params.hidden);
            for &i in rows {
                let x = features.row(i);
                forward_row(params, x, &mut hidden, &mut dz2);
                softmax_in_place(&mut dz2)?;
                let y = labels[i];
                loss -= dz2[y].max(LOG_CLAMP).ln();
                dz2[y] -= 1.0;
                dz2.iter_mut().for_each(|d| *d *= scale);

                let (gw1, gb1, gw2, gb2) = g.split_mut();
                let w2 = params.w2();
                dh.iter_mut().for_each(|d| *d = 0.0);
                for (c, &dc) in dz2.iter().enumerate() {
                    gb2[c] += dc;
                    let row = &mut gw2[c * nh..(c + 1) * nh];
                    for ((gw, &h), (dhj, &w)) in row
                        .iter_mut()
                        .zip(&hidden)
                        .zip(dh.iter_mut().zip(&w2[c * nh..(c + 1) * nh]))
                    {
                        *gw += dc * h;
                        *dhj += dc * w;
                    }
                }
                for j in 0..nh {
                    // relu'(z) = 1 iff the activation is positive
                    if hidden[j] <= 0.0 {
                        continue;
                    }
                    let dz1 = dh[j];
                    gb1[j] += dz1;
                    for (gw, &xv) in gw1[j * n_in..(j + 1) * n_in].iter_mut().zip(x) {
                        *gw += dz1 * xv;
                    }
                }
            }
            Ok((loss, g))
        })
        .collect();

    let mut loss = 0.0;
    for part in partials {
        let (l, g) = part?;
        loss += l;
        for (t, x) in total.data.iter_mut().zip(&g.data) {
            *t += x;
        }
    }
    Ok((loss * scale, total))
}

pub fn grad(
    params: &SelectorParams,
    features: &Matrix,
    labels: &[usize],
) -> Result<SelectorParams> {
    Ok(loss_and_grad(params, features, labels)?.1)
}

/// Mean loss without the gradient, for finite-difference checks and logging.
pub fn loss(params: &SelectorParams, features: &Matrix, labels: &[usize]) -> Result<f64> {
    let logits = forward(params, features)?;
    let mut probs = logits;
    for i in 0..probs.rows() {
        softmax_in_place(probs.row_mut(i))?;
    }
    cross_entropy(&probs, labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], gradient: &[f64], state: &mut AdamState) {
    assert_eq!(params.len(), gradient.len(), "gradient shape");
    assert_eq!(params.len(), state.m.len(), "optimizer state shape");
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2) = (state.beta1, state.beta2);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(gradient)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
    /// Plain gradient descent, for ablations.
    Sgd,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Optimizer::Adam),
            "sgd" => Ok(Optimizer::Sgd),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    #[serde(default)]
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 512,
            epochs: 3,
            lr: 1e-5,
            batch: 32,
            seed: 0,
            optimizer: Optimizer::Adam,
        }
    }
}

/// Training settings recorded in a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub q: f64,
    pub k: usize,
    pub d: usize,
    pub batch: usize,
    pub hidden: usize,
    pub optimizer: Optimizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_cache_digest: String,
}

/// A frozen selector plus what is needed to score any later cache.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorCheckpoint {
    pub params: SelectorParams,
    pub train_config: CheckpointConfig,
    pub provenance: Provenance,
    /// Mean training loss of each epoch, measured before each step.
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    input_dim: usize,
    hidden: usize,
    k: usize,
    train_config: CheckpointConfig,
    provenance: Provenance,
    epoch_losses: Vec<f64>,
}

const CHECKPOINT_FORMAT: &str = "lowconf-selector";

impl SelectorCheckpoint {
    pub fn input_dim(&self) -> usize {
        self.params.input_dim
    }

    pub fn k(&self) -> usize {
        self.params.k
    }

    /// JSON header line followed by `w1, b1, w2, b2` as little-endian f32.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.into(),
            version: 1,
            input_dim: self.params.input_dim,
            hidden: self.params.hidden,
            k: self.params.k,
            train_config: self.train_config.clone(),
            provenance: self.provenance.clone(),
            epoch_losses: self.epoch_losses.clone(),
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        out.reserve(self.params.len() * 4);
        for &x in self.params.as_slice() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let malformed = |reason: String| Error::Malformed {
            what: "selector checkpoint",
            reason,
        };
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| malformed("missing header line".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl])?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(malformed(format!("unknown format {:?}", header.format)));
        }
        if header.version != 1 {
            return Err(Error::UnsupportedVersion(header.version));
        }
        let count = SelectorParams::count(header.input_dim, header.hidden, header.k);
        let body = &bytes[nl + 1..];
        if body.len() != count * 4 {
            return Err(Error::TruncatedFile {
                expected: (nl + 1 + count * 4) as u64,
                found: bytes.len() as u64,
            });
        }
        let data: Vec<f64> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let params = SelectorParams::from_flat(header.input_dim, header.hidden, header.k, data)?;
        if !params.is_finite() {
            return Err(malformed("non-finite parameter".into()));
        }
        Ok(SelectorCheckpoint {
            params,
            train_config: header.train_config,
            provenance: header.provenance,
            epoch_losses: header.epoch_losses,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<String> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(sha256_hex(&bytes))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_bytes()?))
    }

    pub fn confidence(&self, feature: &[f64]) -> Result<f64> {
        confidence(&self.params, feature)
    }
}

/// Max-probability confidence of one feature row, in `[1/K, 1]`.
pub fn confidence(params: &SelectorParams, feature: &[f64]) -> Result<f64> {
    check_width(params, feature.len())?;
    let mut hidden = vec![0.0; params.hidden];
    let mut logits = vec![0.0; params.k];
    forward_row(params, feature, &mut hidden, &mut logits);
    max_probability(&logits)
}

/// Confidence of every row, in row order.
pub fn confidences(params: &SelectorParams, features: &Matrix) -> Result<Vec<f64>> {
    check_width(params, features.cols())?;
    (0..features.rows())
        .into_par_iter()
        .map_init(
            || (vec![0.0; params.hidden], vec![0.0; params.k]),
            |(hidden, logits), i| {
                forward_row(params, features.row(i), hidden, logits);
                max_probability(logits)
            },
        )
        .collect()
}

/// Trains a fresh selector for exactly `cfg.epochs` shuffled passes over the
/// core set and freezes it.
pub fn train(
    core: &CoreSet,
    store: &FeatureStore,
    cfg: &TrainConfig,
) -> Result<SelectorCheckpoint> {
    if core.is_empty() {
        return Err(Error::EmptyCoreSet);
    }
    if cfg.batch == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if cfg.hidden == 0 {
        return Err(Error::Config("hidden width must be at least 1".into()));
    }
    if !(cfg.lr.is_finite() && cfg.lr >= 0.0) {
        return Err(Error::Config(format!("invalid learning rate {}", cfg.lr)));
    }
    let per_class = core.admitted_per_cluster();
    if let Some(missing) = per_class.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass(missing));
    }
    if let Some(&i) = core.indices.iter().find(|&&i| i >= store.len()) {
        return Err(Error::DimensionMismatch {
            expected: store.len(),
            got: i + 1,
        });
    }

    let input_dim = store.features().cols();
    let mut params = init_selector(input_dim, cfg.hidden, core.k, cfg.seed);
    let mut adam = AdamState::new(params.len(), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut order: Vec<usize> = (0..core.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch) {
            let rows: Vec<usize> = batch.iter().map(|&b| core.indices[b]).collect();
            let labels: Vec<usize> = batch.iter().map(|&b| core.labels[b]).collect();
            let x = store.features().select_rows(&rows);
            let (l, g) = loss_and_grad(&params, &x, &labels)?;
            epoch_loss += l * batch.len() as f64;
            match cfg.optimizer {
                Optimizer::Adam => adam_step(params.as_mut_slice(), g.as_slice(), &mut adam),
                Optimizer::Sgd => {
                    for (p, gi) in params.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *p -= cfg.lr * gi;
                    }
                }
            }
        }
        if !params.is_finite() {
            return Err(Error::NonFiniteLogit);
        }
        let mean = epoch_loss / core.len() as f64;
        tracing::debug!(epoch = epoch + 1, loss = mean, "selector epoch");
        epoch_losses.push(mean);
    }
    params.round_to_f32();

    Ok(SelectorCheckpoint {
        params,
        train_config: CheckpointConfig {
            epochs: cfg.epochs,
            lr: cfg.lr,
            seed: cfg.seed,
            q: core.q,
            k: core.k,
            d: store.d(),
            batch: cfg.batch,
            hidden: cfg.hidden,
            optimizer: cfg.optimizer,
        },
        provenance: Provenance {
            source_cache_digest: store.digest().to_owned(),
        },
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_shapes_and_zero_biases() {
        let p = init_selector(1024, 512, 20, 1);
        assert_eq!(p.w1().len(), 512 * 1024);
        assert_eq!(p.b1().len(), 512);
        assert_eq!(p.w2().len(), 20 * 512);
        assert_eq!(p.b2().len(), 20);
        assert!(p.b1().iter().chain(p.b2()).all(|&b| b == 0.0));
        let bound = 1.0 / 32.0 + 1e-7;
        assert!(p.w1().iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(init_selector(8, 4, 3, 5), init_selector(8, 4, 3, 5));
        assert_ne!(init_selector(8, 4, 3, 5), init_selector(8, 4, 3, 6));
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let p = SelectorParams::zeros(3, 2, 4);
        let x = Matrix::from_rows(&[[1.0, -2.0, 0.5]]).unwrap();
        assert!(forward(&p, &x)
            .unwrap()
            .as_slice()
            .iter()
            .all(|&l| l == 0.0));
    }

    #[test]
    fn forward_width_checked() {
        let p = SelectorParams::zeros(3, 2, 4);
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert!(matches!(
            forward(&p, &x),
            Err(Error::DimensionMismatch {
                expected: 3,
                got: 2
            })
        ));
    }

    #[test]
    fn softmax_closed_forms() {
        let p = softmax_probs(&[0.0; 20]).unwrap();
        assert!(p.iter().all(|&x| (x - 0.05).abs() < 1e-15));
        let p = softmax_probs(&[std::f64::consts::LN_2, 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
        let shifted = softmax_probs(&[1000.0 + std::f64::consts::LN_2, 1000.0]).unwrap();
        assert!((shifted[0] - p[0]).abs() < 1e-9);
        assert!(matches!(
            softmax_probs(&[f64::NAN, 0.0]),
            Err(Error::NonFiniteLogit)
        ));
    }

    #[test]
    fn cross_entropy_cases() {
        let onehot = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(cross_entropy(&onehot, &[0, 1]).unwrap(), 0.0);
        let uniform = Matrix::from_rows(&[[0.05; 20]]).unwrap();
        assert!((cross_entropy(&uniform, &[7]).unwrap() - 20f64.ln()).abs() < 1e-12);
        assert!((20f64.ln() - 2.9957).abs() < 1e-4);

        let p = Matrix::from_rows(&[[0.25, 0.75], [0.6, 0.4]]).unwrap();
        let a = -(0.25f64).ln();
        let b = -(0.4f64).ln();
        assert!((cross_entropy(&p, &[0, 1]).unwrap() - (a + b) / 2.0).abs() < 1e-15);
        assert!(matches!(
            cross_entropy(&p, &[0, 2]),
            Err(Error::LabelOutOfRange { label: 2, k: 2 })
        ));
        // clamp keeps a zero probability finite
        let z = Matrix::from_rows(&[[0.0, 1.0]]).unwrap();
        assert!((cross_entropy(&z, &[0]).unwrap() + LOG_CLAMP.ln()).abs() < 1e-9);
    }

    #[test]
    fn confident_optimum_has_tiny_gradient() {
        // b2 drives class 0 to near certainty for every input
        let mut p = SelectorParams::zeros(2, 2, 2);
        let o = p.offsets();
        p.as_mut_slice()[o[2]] = 40.0;
        let x = Matrix::from_rows(&[[0.3, 0.1], [0.0, 1.0]]).unwrap();
        let g = grad(&p, &x, &[0, 0]).unwrap();
        let n: f64 = g.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(n < 1e-6, "{n}");
    }

    #[test]
    fn duplicated_batch_same_gradient() {
        let p = init_selector(4, 3, 2, 11);
        let x = Matrix::from_rows(&[[0.1, 0.2, -0.3, 0.4], [0.5, -0.1, 0.0, 0.2]]).unwrap();
        let xx = x.select_rows(&[0, 0, 1, 1]);
        let g1 = grad(&p, &x, &[0, 1]).unwrap();
        let g2 = grad(&p, &xx, &[0, 0, 1, 1]).unwrap();
        for (a, b) in g1.as_slice().iter().zip(g2.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_zero_gradient_only_decays_moments() {
        let mut x = vec![1.0, -2.0];
        let mut fresh = AdamState::new(2, 0.1);
        adam_step(&mut x, &[0.0, 0.0], &mut fresh);
        assert_eq!(x, vec![1.0, -2.0]);
        assert_eq!(fresh.t, 1);

        let mut s = AdamState::new(2, 0.1);
        s.m = vec![0.5, 0.5];
        s.v = vec![0.25, 0.25];
        s.t = 3;
        let mut y = vec![0.0, 0.0];
        adam_step(&mut y, &[0.0, 0.0], &mut s);
        assert_eq!(s.m, vec![0.45, 0.45]);
        assert!((s.v[0] - 0.24975).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut x = vec![0.0, 0.0, 0.0];
        let mut s = AdamState::new(3, 0.01);
        adam_step(&mut x, &[3.0, -0.002, 250.0], &mut s);
        assert!((x[0] + 0.01).abs() < 1e-9);
        assert!((x[1] - 0.01).abs() < 1e-7);
        assert!((x[2] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut x = vec![1.0];
        let mut s = AdamState::new(1, 0.1);
        for _ in 0..200 {
            let g = [2.0 * x[0]];
            adam_step(&mut x, &g, &mut s);
        }
        assert!(x[0].abs() < 1e-2, "{}", x[0]);
    }

    #[test]
    fn uniform_selector_confidence() {
        let p = SelectorParams::zeros(6, 4, 20);
        let c = confidence(&p, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(c, 0.05);
    }

    #[test]
    fn two_class_confidence_closed_form() {
        let mut p = SelectorParams::zeros(1, 1, 2);
        let o = p.offsets();
        p.as_mut_slice()[o[2]] = std::f64::consts::LN_2;
        assert!((confidence(&p, &[0.0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_bytes_round_trip() {
        let mut params = init_selector(6, 4, 3, 2);
        params.round_to_f32();
        let ck = SelectorCheckpoint {
            params,
            train_config: CheckpointConfig {
                epochs: 3,
                lr: 1e-5,
                seed: 2,
                q: 0.5,
                k: 3,
                d: 3,
                batch: 16,
                hidden: 4,
                optimizer: Optimizer::Adam,
            },
            provenance: Provenance {
                source_cache_digest: "00".into(),
            },
            epoch_losses: vec![1.1, 1.0, 0.9],
        };
        let bytes = ck.to_bytes().unwrap();
        let back = SelectorCheckpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert!(matches!(
            SelectorCheckpoint::from_bytes(&bytes[..bytes.len() - 2]),
            Err(Error::TruncatedFile { .. })
        ));
    }
}
