//! Technology classification head over frozen entity-abstract embeddings.
//!
//! Two blocks of `sigmoid(BatchNorm(W x + b))` with dropout between them, then
//! a single linear output unit squashed to a probability. Trained with
//! minibatch SGD on binary cross-entropy; every gradient is hand-derived.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{EmbeddingTable, TechLabelSet};
use crate::error::{Error, Result};
use crate::nn::{dropout, sigmoid, Linear, LinearGrad, Matrix, TensorFile, TensorWriter};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the loss.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub h1: usize,
    pub h2: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            h1: 256,
            h2: 64,
            dropout_rate: 0.2,
            learning_rate: 0.01,
            epochs: 50,
            batch_size: 32,
            seed: 42,
            bn_epsilon: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.h1 > 0
            && self.h2 > 0
            && self.batch_size > 0
            && self.learning_rate > 0.0
            && self.bn_epsilon > 0.0
            && self.bn_momentum > 0.0
            && self.bn_momentum <= 1.0;
        if !positive {
            return Err(Error::Invalid(
                "classifier sizes, learning rate, bn epsilon and momentum must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Invalid(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// `sigmoid(BatchNorm(W x + b))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub linear: Linear,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Matrix,
    xhat: Matrix,
    inv_std: Vec<f64>,
    output: Matrix,
}

/// Batch mean and unbiased variance observed in a train-mode pass.
#[derive(Debug, Clone)]
struct BatchStats {
    mean: Vec<f64>,
    var_unbiased: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrad {
    pub linear: LinearGrad,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Block {
    pub fn new(linear: Linear, epsilon: f64, momentum: f64) -> Self {
        let h = linear.output_dim();
        Block {
            linear,
            gamma: vec![1.0; h],
            beta: vec![0.0; h],
            running_mean: vec![0.0; h],
            running_var: vec![1.0; h],
            epsilon,
            momentum,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.linear.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.linear.output_dim()
    }

    /// Forward pass; in train mode the running statistics are updated.
    pub fn forward(&mut self, batch: &Matrix, mode: Mode) -> Result<Matrix> {
        let (cache, stats) = self.forward_cached(batch, mode)?;
        if let Some(stats) = stats {
            self.update_running(&stats);
        }
        Ok(cache.output)
    }

    fn forward_cached(&self, batch: &Matrix, mode: Mode) -> Result<(BlockCache, Option<BatchStats>)> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Dimension {
                id: "block input".into(),
                expected: self.input_dim(),
                found: batch.cols(),
            });
        }
        let n = batch.rows();
        let h = self.output_dim();
        let z = self.linear.forward_batch(batch);
        let (mean, var, stats) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(Error::Invalid("train-mode batch norm needs at least 2 rows".into()));
                }
                let mut mean = vec![0.0; h];
                for r in 0..n {
                    for (m, v) in mean.iter_mut().zip(z.row(r)) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; h];
                for r in 0..n {
                    for j in 0..h {
                        let d = z[(r, j)] - mean[j];
                        var[j] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= n as f64);
                let var_unbiased = var.iter().map(|v| v * n as f64 / (n - 1) as f64).collect();
                let stats = BatchStats {
                    mean: mean.clone(),
                    var_unbiased,
                };
                (mean, var, Some(stats))
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone(), None),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
        let mut xhat = Matrix::zeros(n, h);
        let mut output = Matrix::zeros(n, h);
        for r in 0..n {
            for j in 0..h {
                let xh = (z[(r, j)] - mean[j]) * inv_std[j];
                xhat[(r, j)] = xh;
                output[(r, j)] = sigmoid(self.gamma[j] * xh + self.beta[j]);
            }
        }
        Ok((
            BlockCache {
                input: batch.clone(),
                xhat,
                inv_std,
                output,
            },
            stats,
        ))
    }

    fn update_running(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        for j in 0..self.output_dim() {
            self.running_mean[j] = (1.0 - m) * self.running_mean[j] + m * stats.mean[j];
            self.running_var[j] = (1.0 - m) * self.running_var[j] + m * stats.var_unbiased[j];
        }
    }

    fn backward(&self, cache: &BlockCache, grad_out: &Matrix, mode: Mode) -> (BlockGrad, Matrix) {
        let n = cache.xhat.rows();
        let h = self.output_dim();
        let mut grad = BlockGrad {
            linear: LinearGrad::zeros_like(&self.linear),
            gamma: vec![0.0; h],
            beta: vec![0.0; h],
        };
        // through the sigmoid and the affine batch-norm output
        let mut dxhat = Matrix::zeros(n, h);
        for r in 0..n {
            for j in 0..h {
                let a = cache.output[(r, j)];
                let dy = grad_out[(r, j)] * a * (1.0 - a);
                grad.gamma[j] += dy * cache.xhat[(r, j)];
                grad.beta[j] += dy;
                dxhat[(r, j)] = dy * self.gamma[j];
            }
        }
        let mut dz = Matrix::zeros(n, h);
        match mode {
            Mode::Train => {
                let nf = n as f64;
                for j in 0..h {
                    let mut sum = 0.0;
                    let mut sum_x = 0.0;
                    for r in 0..n {
                        sum += dxhat[(r, j)];
                        sum_x += dxhat[(r, j)] * cache.xhat[(r, j)];
                    }
                    for r in 0..n {
                        dz[(r, j)] = cache.inv_std[j] / nf * (nf * dxhat[(r, j)] - sum - cache.xhat[(r, j)] * sum_x);
                    }
                }
            }
            Mode::Eval => {
                for r in 0..n {
                    for j in 0..h {
                        dz[(r, j)] = dxhat[(r, j)] * cache.inv_std[j];
                    }
                }
            }
        }
        let grad_in = self.linear.backward_batch(&cache.input, &dz, &mut grad.linear);
        (grad, grad_in)
    }

    fn step(&mut self, grad: &BlockGrad, lr: f64) {
        self.linear.step(&grad.linear, lr);
        for j in 0..self.output_dim() {
            self.gamma[j] -= lr * grad.gamma[j];
            self.beta[j] -= lr * grad.beta[j];
        }
    }

    fn push_params(&self, out: &mut Vec<f64>) {
        self.linear.push_params(out);
        out.extend_from_slice(&self.gamma);
        out.extend_from_slice(&self.beta);
    }

    fn pull_params<'a>(&mut self, src: &'a [f64]) -> &'a [f64] {
        let rest = self.linear.pull_params(src);
        let h = self.output_dim();
        self.gamma.copy_from_slice(&rest[..h]);
        self.beta.copy_from_slice(&rest[h..2 * h]);
        &rest[2 * h..]
    }

    fn is_finite(&self) -> bool {
        self.linear.is_finite()
            && [&self.gamma, &self.beta, &self.running_mean, &self.running_var]
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

impl BlockGrad {
    fn push_params(&self, out: &mut Vec<f64>) {
        self.linear.push_params(out);
        out.extend_from_slice(&self.gamma);
        out.extend_from_slice(&self.beta);
    }
}

/// Gradients of the mean BCE with respect to every trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrad {
    pub block1: BlockGrad,
    pub block2: BlockGrad,
    pub out: LinearGrad,
}

impl HeadGrad {
    /// Flattened in the same order as [`ClassifierHead::params`].
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.block1.push_params(&mut out);
        self.block2.push_params(&mut out);
        self.out.push_params(&mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub block1: Block,
    pub block2: Block,
    pub out: Linear,
    pub dropout_rate: f64,
}

struct HeadCache {
    c1: BlockCache,
    mask: Option<Vec<f64>>,
    c2: BlockCache,
    probs: Vec<f64>,
}

impl ClassifierHead {
    pub fn init(input_dim: usize, config: &ClassifierConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::Invalid("classifier input dim must be positive".into()));
        }
        let l1 = Linear::glorot(input_dim, config.h1, rng);
        let l2 = Linear::glorot(config.h1, config.h2, rng);
        let out = Linear::glorot(config.h2, 1, rng);
        Ok(ClassifierHead {
            block1: Block::new(l1, config.bn_epsilon, config.bn_momentum),
            block2: Block::new(l2, config.bn_epsilon, config.bn_momentum),
            out,
            dropout_rate: config.dropout_rate,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.block1.input_dim()
    }

    /// Forward pass to probabilities. Train mode applies dropout drawn from
    /// `rng` and updates batch-norm running statistics.
    pub fn forward(&mut self, batch: &Matrix, mode: Mode, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let (cache, stats) = self.forward_cached(batch, mode, rng)?;
        if let [Some(s1), Some(s2)] = stats {
            self.block1.update_running(&s1);
            self.block2.update_running(&s2);
        }
        Ok(cache.probs)
    }

    /// Eval-mode probabilities; never touches running statistics.
    pub fn predict(&self, batch: &Matrix) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward_cached(batch, Mode::Eval, &mut rng)?.0.probs)
    }

    fn forward_cached(
        &self,
        batch: &Matrix,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<(HeadCache, [Option<BatchStats>; 2])> {
        let (c1, s1) = self.block1.forward_cached(batch, mode)?;
        let mut hidden = c1.output.clone();
        let mask = (mode == Mode::Train && self.dropout_rate > 0.0)
            .then(|| dropout(hidden.data_mut(), self.dropout_rate, rng));
        let (c2, s2) = self.block2.forward_cached(&hidden, mode)?;
        let probs = (0..c2.output.rows())
            .map(|r| sigmoid(self.out.forward(c2.output.row(r))[0]))
            .collect();
        Ok((HeadCache { c1, mask, c2, probs }, [s1, s2]))
    }

    /// Mean BCE and its gradient for one batch. Does not modify the head.
    pub fn loss_and_grad(
        &self,
        batch: &Matrix,
        labels: &[f64],
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<(f64, HeadGrad)> {
        let (cache, _) = self.forward_cached(batch, mode, rng)?;
        let grad = self.backward(&cache, labels, mode)?;
        Ok((bce_loss(&cache.probs, labels)?, grad))
    }

    fn backward(&self, cache: &HeadCache, labels: &[f64], mode: Mode) -> Result<HeadGrad> {
        let n = cache.probs.len();
        if labels.len() != n {
            return Err(Error::Invalid(format!("{} labels for {n} predictions", labels.len())));
        }
        let mut out_grad = LinearGrad::zeros_like(&self.out);
        let mut d_hidden2 = Matrix::zeros(n, self.block2.output_dim());
        for (r, (&p, &y)) in cache.probs.iter().zip(labels).enumerate() {
            // the clamp flattens the loss outside its range
            let dlogit = if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
                (p - y) / n as f64
            } else {
                0.0
            };
            let g = self.out.backward(cache.c2.output.row(r), &[dlogit], &mut out_grad);
            d_hidden2.row_mut(r).copy_from_slice(&g);
        }
        let (g2, mut d_hidden1) = self.block2.backward(&cache.c2, &d_hidden2, mode);
        if let Some(mask) = &cache.mask {
            for (d, m) in d_hidden1.data_mut().iter_mut().zip(mask) {
                *d *= m;
            }
        }
        let (g1, _) = self.block1.backward(&cache.c1, &d_hidden1, mode);
        Ok(HeadGrad {
            block1: g1,
            block2: g2,
            out: out_grad,
        })
    }

    /// One SGD step on a batch; returns the batch loss.
    pub fn train_step(&mut self, batch: &Matrix, labels: &[f64], lr: f64, rng: &mut impl Rng) -> Result<f64> {
        let (cache, stats) = self.forward_cached(batch, Mode::Train, rng)?;
        let grad = self.backward(&cache, labels, Mode::Train)?;
        let loss = bce_loss(&cache.probs, labels)?;
        if let [Some(s1), Some(s2)] = stats {
            self.block1.update_running(&s1);
            self.block2.update_running(&s2);
        }
        self.block1.step(&grad.block1, lr);
        self.block2.step(&grad.block2, lr);
        self.out.step(&grad.out, lr);
        Ok(loss)
    }

    /// Trainable parameters flattened: block1 (W, b, gamma, beta), block2, out.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.block1.push_params(&mut out);
        self.block2.push_params(&mut out);
        self.out.push_params(&mut out);
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let expected = self.params().len();
        if params.len() != expected {
            return Err(Error::Invalid(format!(
                "expected {expected} parameters, got {}",
                params.len()
            )));
        }
        let rest = self.block1.pull_params(params);
        let rest = self.block2.pull_params(rest);
        self.out.pull_params(rest);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.block1.is_finite() && self.block2.is_finite() && self.out.is_finite()
    }

    pub fn to_text(&self) -> String {
        let header = format!(
            "classifier version=1 input={} h1={} h2={} dropout={} eps={} momentum={}",
            self.input_dim(),
            self.block1.output_dim(),
            self.block2.output_dim(),
            self.dropout_rate,
            self.block1.epsilon,
            self.block1.momentum
        );
        let mut w = TensorWriter::new(&header);
        for (name, b) in [("block1", &self.block1), ("block2", &self.block2)] {
            w.linear(name, &b.linear)
                .vector(&format!("{name}.bn_gamma"), &b.gamma)
                .vector(&format!("{name}.bn_beta"), &b.beta)
                .vector(&format!("{name}.bn_running_mean"), &b.running_mean)
                .vector(&format!("{name}.bn_running_var"), &b.running_var);
        }
        w.linear("out", &self.out);
        w.finish()
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut f = TensorFile::parse(text)?;
        let fields = f.header_fields();
        if !f.header.starts_with("classifier ") {
            return Err(Error::Format("not a classifier file".into()));
        }
        if fields.get("version") != Some(&"1") {
            return Err(Error::Format("unsupported classifier version".into()));
        }
        let num = |k: &str| -> Result<f64> {
            fields
                .get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("missing or bad header field '{k}'")))
        };
        let (input, h1, h2) = (num("input")? as usize, num("h1")? as usize, num("h2")? as usize);
        let (dropout, eps, momentum) = (num("dropout")?, num("eps")?, num("momentum")?);
        let mut block = |name: &str, i: usize, o: usize| -> Result<Block> {
            let linear = f.take_linear(name, i, o)?;
            let mut b = Block::new(linear, eps, momentum);
            b.gamma = f.take_vector(&format!("{name}.bn_gamma"), o)?;
            b.beta = f.take_vector(&format!("{name}.bn_beta"), o)?;
            b.running_mean = f.take_vector(&format!("{name}.bn_running_mean"), o)?;
            b.running_var = f.take_vector(&format!("{name}.bn_running_var"), o)?;
            if b.running_var.iter().any(|&v| v <= 0.0) {
                return Err(Error::Format(format!("{name} running variance must be positive")));
            }
            Ok(b)
        };
        let block1 = block("block1", input, h1)?;
        let block2 = block("block2", h1, h2)?;
        let out = f.take_linear("out", h2, 1)?;
        f.finish()?;
        let head = ClassifierHead {
            block1,
            block2,
            out,
            dropout_rate: dropout,
        };
        if !head.is_finite() {
            return Err(Error::Format("non-finite parameter".into()));
        }
        Ok(head)
    }
}

/// Mean binary cross-entropy with probabilities clamped away from 0 and 1.
pub fn bce_loss(probs: &[f64], labels: &[f64]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "{} probabilities for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / probs.len() as f64)
}

/// Minibatch boundaries over `n` shuffled rows; a trailing single row is
/// folded into the previous batch since batch norm cannot train on it.
fn batch_ranges(n: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    let mut ranges: Vec<_> = (0..n).step_by(batch_size).map(|s| s..(s + batch_size).min(n)).collect();
    if ranges.len() >= 2 && ranges.last().is_some_and(|r| r.len() == 1) {
        let last = ranges.pop().unwrap();
        ranges.last_mut().unwrap().end = last.end;
    }
    ranges
}

/// Trains a head on a design matrix with 0/1 labels.
pub fn train_on(x: &Matrix, labels: &[f64], config: &ClassifierConfig) -> Result<ClassifierHead> {
    train_on_with_progress(x, labels, config, |_, _| {})
}

/// As [`train_on`]; `on_epoch` receives each epoch's mean training loss.
pub fn train_on_with_progress(
    x: &Matrix,
    labels: &[f64],
    config: &ClassifierConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<ClassifierHead> {
    config.validate()?;
    if labels.len() != x.rows() {
        return Err(Error::Invalid(format!("{} labels for {} rows", labels.len(), x.rows())));
    }
    let positives = labels.iter().filter(|&&y| y == 1.0).count();
    let negatives = labels.iter().filter(|&&y| y == 0.0).count();
    if positives + negatives != labels.len() {
        return Err(Error::Invalid("labels must be 0 or 1".into()));
    }
    if positives < 2 || negatives < 2 {
        return Err(Error::Invalid(format!(
            "need at least 2 examples of each class, got {positives} positive and {negatives} negative"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut head = ClassifierHead::init(x.cols(), config, &mut rng)?;
    let mut order: Vec<usize> = (0..x.rows()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss = 0.0;
        for range in batch_ranges(order.len(), config.batch_size) {
            let idx = &order[range];
            let batch = x.select_rows(idx);
            let ys: Vec<f64> = idx.iter().map(|&i| labels[i]).collect();
            loss += head.train_step(&batch, &ys, config.learning_rate, &mut rng)? * idx.len() as f64;
        }
        if !head.is_finite() {
            return Err(Error::NonFinite(format!("classifier head at epoch {epoch}")));
        }
        let mean = loss / x.rows() as f64;
        log::debug!("classifier epoch {epoch} loss {mean}");
        on_epoch(epoch, mean);
    }
    Ok(head)
}

/// Builds the (embedding, label) design matrix for every labeled entity.
pub fn labeled_examples(embeddings: &EmbeddingTable, labels: &TechLabelSet) -> Result<(Vec<String>, Matrix, Vec<f64>)> {
    let missing: Vec<String> = labels
        .labels
        .keys()
        .filter(|id| !embeddings.contains(id))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::Missing {
            what: "embeddings",
            ids: missing,
        });
    }
    let ids: Vec<String> = labels.labels.keys().cloned().collect();
    let mut data = Vec::with_capacity(ids.len() * embeddings.dim());
    for id in &ids {
        data.extend_from_slice(embeddings.get(id).expect("checked above"));
    }
    let ys = labels.labels.values().map(|&t| if t { 1.0 } else { 0.0 }).collect();
    Ok((ids.clone(), Matrix::from_vec(ids.len(), embeddings.dim(), data)?, ys))
}

pub fn train_classifier(
    embeddings: &EmbeddingTable,
    labels: &TechLabelSet,
    config: &ClassifierConfig,
) -> Result<ClassifierHead> {
    let (_, x, ys) = labeled_examples(embeddings, labels)?;
    train_on(&x, &ys, config)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded k-fold partition of `0..n`; the first `n % k` folds get one extra item.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Invalid(format!("k must be at least 2, got {k}")));
    }
    if n < k {
        return Err(Error::Invalid(format!("cannot split {n} items into {k} folds")));
    }
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let test = ids[start..start + len].to_vec();
        let train = ids[..start].iter().chain(&ids[start + len..]).copied().collect();
        folds.push(Fold { train, test });
        start += len;
    }
    Ok(folds)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub f1: f64,
    /// `None` when only one class is present.
    pub auc: Option<f64>,
}

/// Accuracy and positive-class F1 at `threshold`, plus ROC AUC with ties
/// counted as one half.
pub fn metrics(probs: &[f64], labels: &[f64], threshold: f64) -> Result<EvalReport> {
    if probs.is_empty() {
        return Err(Error::Invalid("no predictions to evaluate".into()));
    }
    if probs.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "{} predictions for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let (mut tp, mut fp, mut tn, mut fneg) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= threshold, y == 1.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fneg += 1,
        }
    }
    let accuracy = (tp + tn) as f64 / probs.len() as f64;
    let f1 = if 2 * tp + fp + fneg == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    };
    Ok(EvalReport {
        accuracy,
        f1,
        auc: auc(probs, labels),
    })
}

/// Mann-Whitney AUC using average ranks for tied scores.
pub fn auc(scores: &[f64], labels: &[f64]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&y| y == 1.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their average
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1.0 {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let p = n_pos as f64;
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossValReport {
    pub folds: Vec<EvalReport>,
    pub mean: EvalReport,
}

pub fn cross_validate(x: &Matrix, labels: &[f64], k: usize, config: &ClassifierConfig) -> Result<CrossValReport> {
    let folds = kfold_split(x.rows(), k, config.seed)?;
    let mut reports = Vec::with_capacity(k);
    for fold in &folds {
        let train_y: Vec<f64> = fold.train.iter().map(|&i| labels[i]).collect();
        let head = train_on(&x.select_rows(&fold.train), &train_y, config)?;
        let probs = head.predict(&x.select_rows(&fold.test))?;
        let test_y: Vec<f64> = fold.test.iter().map(|&i| labels[i]).collect();
        reports.push(metrics(&probs, &test_y, 0.5)?);
    }
    let n = reports.len() as f64;
    let aucs: Vec<f64> = reports.iter().filter_map(|r| r.auc).collect();
    let mean = EvalReport {
        accuracy: reports.iter().map(|r| r.accuracy).sum::<f64>() / n,
        f1: reports.iter().map(|r| r.f1).sum::<f64>() / n,
        auc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
    };
    Ok(CrossValReport { folds: reports, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn identity_block(dim: usize) -> Block {
        Block::new(Linear::new(Matrix::identity(dim), vec![0.0; dim]).unwrap(), 1e-5, 0.1)
    }

    #[test]
    fn block_normalizes_then_squashes() {
        let mut b = identity_block(1);
        let x = Matrix::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
        let y = b.forward(&x, Mode::Train).unwrap();
        let s = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y[(0, 0)] - sigmoid(-s)).abs() < 1e-12);
        assert!((y[(1, 0)] - sigmoid(s)).abs() < 1e-12);
        assert!((y[(0, 0)] - 0.2689).abs() < 1e-4);
        assert!((y[(1, 0)] - 0.7311).abs() < 1e-4);
        // momentum 0.1 toward mean 2, unbiased variance 2
        assert!((b.running_mean[0] - 0.2).abs() < 1e-12);
        assert!((b.running_var[0] - (0.9 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn zero_gamma_gives_constant() {
        let mut b = identity_block(2);
        b.gamma = vec![0.0, 0.0];
        b.beta = vec![0.3, -1.0];
        let x = Matrix::from_rows(&[vec![1.0, 5.0], vec![-2.0, 0.5], vec![9.0, 1.0]]).unwrap();
        let y = b.forward(&x, Mode::Train).unwrap();
        for r in 0..3 {
            assert_eq!(y[(r, 0)], sigmoid(0.3));
            assert_eq!(y[(r, 1)], sigmoid(-1.0));
        }
    }

    #[test]
    fn eval_mode_with_unit_stats_is_sigmoid() {
        let mut b = identity_block(2);
        b.epsilon = 0.0;
        let x = Matrix::from_rows(&[vec![0.7, -3.0]]).unwrap();
        let y = b.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.row(0), &[sigmoid(0.7), sigmoid(-3.0)]);
    }

    #[test]
    fn train_mode_rejects_single_row() {
        let mut b = identity_block(1);
        let x = Matrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(b.forward(&x, Mode::Train).is_err());
        assert!(b.forward(&x, Mode::Eval).is_ok());
    }

    fn small_config(dropout: f64) -> ClassifierConfig {
        ClassifierConfig {
            h1: 5,
            h2: 3,
            dropout_rate: dropout,
            ..ClassifierConfig::default()
        }
    }

    #[test]
    fn zero_dropout_train_matches_eval_with_batch_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut head = ClassifierHead::init(4, &small_config(0.0), &mut rng).unwrap();
        let x = Matrix::uniform(6, 4, 1.0, &mut rng);
        let train = head.forward(&x, Mode::Train, &mut rng).unwrap();
        // momentum 1 makes the running statistics exactly the batch statistics
        let mut eval_head = head.clone();
        for b in [&mut eval_head.block1, &mut eval_head.block2] {
            b.momentum = 1.0;
        }
        let mut probe = eval_head.clone();
        probe.forward(&x, Mode::Train, &mut rng).unwrap();
        for (b, p) in [
            (&mut eval_head.block1, &probe.block1),
            (&mut eval_head.block2, &probe.block2),
        ] {
            b.running_mean = p.running_mean.clone();
            // running stats store the unbiased variance; undo the n/(n-1)
            b.running_var = p.running_var.iter().map(|v| v * 5.0 / 6.0).collect();
        }
        let eval = eval_head.predict(&x).unwrap();
        for (a, b) in train.iter().zip(&eval) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn dropout_replays_under_fixed_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let head = ClassifierHead::init(4, &small_config(0.5), &mut rng).unwrap();
        let x = Matrix::uniform(5, 4, 1.0, &mut rng);
        let run = || {
            let mut h = head.clone();
            h.forward(&x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(77)).unwrap()
        };
        assert_eq!(run(), run());
        let other = head
            .clone()
            .forward(&x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(78))
            .unwrap();
        assert_ne!(run(), other);
    }

    #[test]
    fn zero_weights_give_one_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut head = ClassifierHead::init(3, &small_config(0.2), &mut rng).unwrap();
        let zeros = vec![0.0; head.params().len()];
        head.set_params(&zeros).unwrap();
        let x = Matrix::zeros(4, 3);
        for p in head.forward(&x, Mode::Train, &mut rng).unwrap() {
            assert_eq!(p, 0.5);
        }
        for p in head.predict(&x).unwrap() {
            assert_eq!(p, 0.5);
        }
    }

    #[test]
    fn bce_values() {
        assert!((bce_loss(&[0.5], &[1.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap() < 1e-6);
        let v = bce_loss(&[0.9, 0.1], &[1.0, 0.0]).unwrap();
        assert!((v - 0.105360515657826).abs() < 1e-12);
        assert!(bce_loss(&[0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn kfold_examples() {
        let folds = kfold_split(10, 5, 3).unwrap();
        assert!(folds.iter().all(|f| f.test.len() == 2 && f.train.len() == 8));
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());

        let sizes: Vec<usize> = kfold_split(11, 5, 3).unwrap().iter().map(|f| f.test.len()).collect();
        assert_eq!(sizes, vec![3, 2, 2, 2, 2]);

        assert!(kfold_split(10, 1, 0).is_err());
        assert!(kfold_split(3, 5, 0).is_err());
    }

    #[test]
    fn metric_examples() {
        let r = metrics(&[0.9, 0.8, 0.1], &[1.0, 1.0, 0.0], 0.5).unwrap();
        assert_eq!(r.auc, Some(1.0));
        assert_eq!(r.accuracy, 1.0);
        let r = metrics(&[0.9, 0.8, 0.1], &[0.0, 0.0, 1.0], 0.5).unwrap();
        assert_eq!(r.auc, Some(0.0));
        // TP=2, FP=1, FN=1
        let r = metrics(&[0.9, 0.8, 0.7, 0.2], &[1.0, 1.0, 0.0, 1.0], 0.5).unwrap();
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);
        let r = metrics(&[0.9, 0.1], &[1.0, 1.0], 0.5).unwrap();
        assert_eq!(r.auc, None);
        assert!(metrics(&[], &[], 0.5).is_err());
        // all negative predictions, no positives labeled: P+R undefined → 0
        let r = metrics(&[0.1, 0.2], &[0.0, 0.0], 0.5).unwrap();
        assert_eq!(r.f1, 0.0);
    }

    #[test]
    fn auc_ties_count_half() {
        assert_eq!(auc(&[0.5, 0.5], &[1.0, 0.0]), Some(0.5));
        assert_eq!(auc(&[0.5, 0.5, 0.9], &[1.0, 0.0, 1.0]), Some(0.75));
    }

    #[test]
    fn zero_epochs_return_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Matrix::uniform(8, 3, 1.0, &mut rng);
        let ys = vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let cfg = ClassifierConfig {
            epochs: 0,
            ..small_config(0.2)
        };
        let trained = train_on(&x, &ys, &cfg).unwrap();
        let init = ClassifierHead::init(3, &cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed)).unwrap();
        assert_eq!(trained, init);
    }

    fn blobs(n: usize, dim: usize, seed: u64) -> (Matrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let y = (i % 2) as f64;
            let center = if y == 1.0 { 1.5 } else { -1.5 };
            rows.push((0..dim).map(|_| center + noise.sample(&mut rng)).collect());
            ys.push(y);
        }
        (Matrix::from_rows(&rows).unwrap(), ys)
    }

    #[test]
    fn separable_blobs_train_to_high_accuracy() {
        let (x, ys) = blobs(200, 16, 11);
        let cfg = ClassifierConfig {
            h1: 32,
            h2: 16,
            epochs: 200,
            ..ClassifierConfig::default()
        };
        let head = train_on(&x, &ys, &cfg).unwrap();
        let r = metrics(&head.predict(&x).unwrap(), &ys, 0.5).unwrap();
        assert!(r.accuracy >= 0.95, "{r:?}");
        let again = train_on(&x, &ys, &cfg).unwrap();
        assert_eq!(head.params(), again.params());
    }

    #[test]
    fn missing_embedding_is_listed() {
        let mut emb = EmbeddingTable::new(2).unwrap();
        emb.insert("a", vec![0.0, 1.0]).unwrap();
        let labels = crate::corpus::parse_labels_str("a,1\nb,0\nc,0\n", "l").unwrap();
        let err = train_classifier(&emb, &labels, &ClassifierConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Missing { ref ids, .. } if ids == &["b", "c"]));
    }

    #[test]
    fn text_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut head = ClassifierHead::init(3, &small_config(0.25), &mut rng).unwrap();
        let x = Matrix::uniform(4, 3, 1.0, &mut rng);
        head.forward(&x, Mode::Train, &mut rng).unwrap();
        let back = ClassifierHead::parse_text(&head.to_text()).unwrap();
        assert_eq!(back, head);
        let text = head.to_text();
        let truncated = &text[..text.len() / 2];
        assert!(ClassifierHead::parse_text(truncated).is_err());
    }

    #[test]
    fn batches_never_end_with_a_singleton() {
        assert_eq!(batch_ranges(65, 32), vec![0..32, 32..65]);
        assert_eq!(batch_ranges(64, 32), vec![0..32, 32..64]);
        assert_eq!(batch_ranges(5, 32), vec![0..5]);
    }
}
