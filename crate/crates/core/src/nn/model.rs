use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::layers::{self, BnBatch, Window, BN_MOMENTUM};
use super::spec::{LayerSpec, ModelSpec};
use crate::error::{Error, Result};
use crate::seed;

/// Trainable tensors of one layer. Conv weights are `filters x channels x kh x kw`,
/// fully connected weights `units x inputs`; batch norm keeps scale in `weight`
/// and shift in `bias`. Parameterless layers hold empty vectors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerParams {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerGrads {
    pub fn zeros_like(p: &LayerParams) -> Self {
        Self {
            weight: vec![0.0; p.weight.len()],
            bias: vec![0.0; p.bias.len()],
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.weight.iter().chain(&self.bias).fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub params: Vec<LayerParams>,
    /// Per layer: parameters and batch-norm statistics are held fixed.
    pub frozen: Vec<bool>,
    pub history: Vec<EpochRecord>,
    version: u64,
}

enum Aux {
    None,
    Bn(BnBatch),
    Pool(Vec<u32>),
    Dropout(Vec<f64>),
}

/// Activations recorded by a train-mode forward pass.
pub struct Cache {
    version: u64,
    start: usize,
    n: usize,
    inputs: Vec<Vec<f64>>,
    aux: Vec<Aux>,
    pub output: Vec<f64>,
}

impl Cache {
    pub fn batch_len(&self) -> usize {
        self.n
    }
}

fn window(l: &LayerSpec) -> Window {
    match *l {
        LayerSpec::Conv2D { kh, kw, sh, sw, .. } | LayerSpec::MaxPool { ph: kh, pw: kw, sh, sw } => Window { kh, kw, sh, sw },
        _ => unreachable!("window of a layer without one"),
    }
}

impl TrainedModel {
    /// Glorot-uniform weights, zero biases, unit batch-norm scale.
    pub fn init(spec: ModelSpec, seed_value: u64) -> Self {
        let mut params = Vec::with_capacity(spec.layers.len());
        for (i, l) in spec.layers.iter().enumerate() {
            let mut rng = seed::rng(seed::derive_indexed(seed_value, "init", &[i as u64]));
            let p = match *l {
                LayerSpec::Conv2D { kh, kw, filters, .. } => {
                    let c = spec.in_shape(i).c;
                    let limit = (6.0 / ((c + filters) * kh * kw) as f64).sqrt();
                    LayerParams {
                        weight: (0..filters * c * kh * kw).map(|_| rng.gen_range(-limit..limit)).collect(),
                        bias: vec![0.0; filters],
                        ..Default::default()
                    }
                }
                LayerSpec::FullyConnected { units } => {
                    let fan_in = spec.in_shape(i).len();
                    let limit = (6.0 / (fan_in + units) as f64).sqrt();
                    LayerParams {
                        weight: (0..units * fan_in).map(|_| rng.gen_range(-limit..limit)).collect(),
                        bias: vec![0.0; units],
                        ..Default::default()
                    }
                }
                LayerSpec::BatchNorm => {
                    let c = spec.in_shape(i).c;
                    LayerParams {
                        weight: vec![1.0; c],
                        bias: vec![0.0; c],
                        running_mean: vec![0.0; c],
                        running_var: vec![1.0; c],
                    }
                }
                _ => LayerParams::default(),
            };
            params.push(p);
        }
        let n = spec.layers.len();
        Self {
            spec,
            params,
            frozen: vec![false; n],
            history: Vec::new(),
            version: 0,
        }
    }

    /// Rebuilds a model from stored parts, checking every tensor length.
    pub fn from_parts(spec: ModelSpec, params: Vec<LayerParams>, frozen: Vec<bool>) -> Result<Self> {
        let template = Self::init(spec.clone(), 0);
        if params.len() != template.params.len() || frozen.len() != template.params.len() {
            return Err(Error::shape("parameter list does not match the layer list"));
        }
        for (i, (p, t)) in params.iter().zip(&template.params).enumerate() {
            let lens = |q: &LayerParams| (q.weight.len(), q.bias.len(), q.running_mean.len(), q.running_var.len());
            if lens(p) != lens(t) {
                return Err(Error::shape(format!("layer {} parameter shapes do not match its spec", i + 1)));
            }
            if p.weight.iter().chain(&p.bias).chain(&p.running_mean).chain(&p.running_var).any(|v| !v.is_finite()) {
                return Err(Error::domain(format!("layer {} has non-finite parameters", i + 1)));
            }
        }
        Ok(Self {
            spec,
            params,
            frozen,
            history: Vec::new(),
            version: 0,
        })
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(|p| p.weight.len() + p.bias.len()).sum()
    }

    pub fn input_len(&self) -> usize {
        self.spec.input_shape().len()
    }

    /// Marks parameter changes so older caches are rejected.
    pub(crate) fn touch(&mut self) {
        self.version += 1;
    }

    /// Freezes every layer up to and including the last Dropout.
    pub fn freeze_feature_extractor(&mut self) -> Result<usize> {
        let last = self
            .spec
            .last_dropout()
            .ok_or_else(|| Error::shape("model has no Dropout separating features from the head"))?;
        for f in self.frozen.iter_mut().take(last + 1) {
            *f = true;
        }
        Ok(last)
    }

    fn check_batch(&self, start: usize, x: &[f64], n: usize) -> Result<usize> {
        let len = if start == 0 { self.input_len() } else { self.spec.shapes[start - 1].len() };
        if n == 0 || x.len() != n * len {
            return Err(Error::shape(format!(
                "batch of {} values does not hold {n} inputs of {len}",
                x.len()
            )));
        }
        Ok(len)
    }

    /// Runs layers `start..` on `x` (the input of layer `start`). Train mode
    /// uses batch statistics and dropout except in frozen layers; the running
    /// statistics are not touched here.
    pub fn forward_from(&self, start: usize, x: &[f64], n: usize, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Cache> {
        self.run(start, self.spec.layers.len(), x, n, mode, rng)
    }

    /// Eval-mode activations after layer `through` (inclusive).
    pub fn features(&self, x: &[f64], n: usize, through: usize) -> Result<Vec<f64>> {
        if through >= self.spec.layers.len() {
            return Err(Error::shape(format!("model has no layer {}", through + 1)));
        }
        let len = self.check_batch(1, x, n)?;
        let mut rng = seed::rng(0);
        let mut out = Vec::with_capacity(n * self.spec.shapes[through].len());
        for block in x.chunks(25 * len) {
            out.extend(self.run(1, through + 1, block, block.len() / len, Mode::Eval, &mut rng)?.output);
        }
        Ok(out)
    }

    fn run(&self, start: usize, end: usize, x: &[f64], n: usize, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Cache> {
        let start = start.max(1);
        self.check_batch(start, x, n)?;
        let layers = &self.spec.layers[..end];
        let mut inputs = Vec::with_capacity(layers.len() - start);
        let mut aux = Vec::with_capacity(layers.len() - start);
        let mut cur = x.to_vec();
        for i in start..layers.len() {
            let (ins, outs) = (self.spec.in_shape(i), self.spec.shapes[i]);
            let p = &self.params[i];
            let train = mode == Mode::Train && !self.frozen[i];
            let (next, a) = match layers[i] {
                LayerSpec::Conv2D { .. } => (layers::conv_forward(&cur, n, ins, outs, window(&layers[i]), &p.weight, &p.bias), Aux::None),
                LayerSpec::BatchNorm if train => {
                    let (y, bn) = layers::bn_forward_train(&cur, n, ins, &p.weight, &p.bias);
                    (y, Aux::Bn(bn))
                }
                LayerSpec::BatchNorm => (
                    layers::bn_forward_eval(&cur, n, ins, &p.weight, &p.bias, &p.running_mean, &p.running_var),
                    Aux::None,
                ),
                LayerSpec::ReLU => (cur.iter().map(|v| v.max(0.0)).collect(), Aux::None),
                LayerSpec::Sigmoid => (cur.iter().map(|&v| layers::sigmoid(v)).collect(), Aux::None),
                LayerSpec::MaxPool { .. } => {
                    let (y, arg) = layers::pool_forward(&cur, n, ins, outs, window(&layers[i]));
                    (y, Aux::Pool(arg))
                }
                LayerSpec::Dropout { rate } if train && rate > 0.0 => {
                    let keep = 1.0 / (1.0 - rate);
                    let mask: Vec<f64> = (0..cur.len())
                        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
                        .collect();
                    (cur.iter().zip(&mask).map(|(v, m)| v * m).collect(), Aux::Dropout(mask))
                }
                LayerSpec::FullyConnected { units } => {
                    (layers::fc_forward(&cur, n, ins.len(), units, &p.weight, &p.bias), Aux::None)
                }
                _ => (cur.clone(), Aux::None),
            };
            if mode == Mode::Train {
                inputs.push(std::mem::replace(&mut cur, next));
            } else {
                cur = next;
            }
            aux.push(a);
        }
        Ok(Cache {
            version: self.version,
            start,
            n,
            inputs,
            aux,
            output: cur,
        })
    }

    /// Full forward pass; in train mode the batch-norm running statistics are updated.
    pub fn forward(&mut self, x: &[f64], n: usize, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Cache> {
        let cache = self.forward_from(1, x, n, mode, rng)?;
        self.update_running_stats(&cache);
        Ok(cache)
    }

    pub(crate) fn update_running_stats(&mut self, cache: &Cache) {
        for (k, a) in cache.aux.iter().enumerate() {
            if let Aux::Bn(bn) = a {
                let p = &mut self.params[cache.start + k];
                for c in 0..bn.mean.len() {
                    p.running_mean[c] = (1.0 - BN_MOMENTUM) * p.running_mean[c] + BN_MOMENTUM * bn.mean[c];
                    p.running_var[c] = (1.0 - BN_MOMENTUM) * p.running_var[c] + BN_MOMENTUM * bn.var_unbiased[c];
                }
            }
        }
    }

    /// Eval-mode outputs, in chunks of `chunk` inputs.
    pub fn predict_from(&self, start: usize, x: &[f64], n: usize, chunk: usize) -> Result<Vec<f64>> {
        let len = self.check_batch(start.max(1), x, n)?;
        let mut rng = seed::rng(0);
        let mut out = Vec::with_capacity(n * self.spec.shapes.last().map_or(1, |s| s.len()));
        for block in x.chunks(chunk.max(1) * len) {
            out.extend(self.forward_from(start, block, block.len() / len, Mode::Eval, &mut rng)?.output);
        }
        Ok(out)
    }

    pub fn predict(&self, x: &[f64], n: usize) -> Result<Vec<f64>> {
        self.predict_from(1, x, n, 25)
    }

    /// Mean squared error of the cached outputs and its parameter gradients.
    /// Frozen and parameterless layers get zero-filled placeholders.
    pub fn backward(&self, cache: &Cache, targets: &[f64]) -> Result<(f64, Vec<LayerGrads>)> {
        if cache.version != self.version {
            return Err(Error::domain("stale forward cache: parameters changed since the forward pass"));
        }
        if cache.inputs.is_empty() {
            return Err(Error::domain("backward needs a train-mode forward cache"));
        }
        let n = cache.n;
        if targets.len() != n || cache.output.len() != n {
            return Err(Error::shape(format!("{} targets for a batch of {n}", targets.len())));
        }
        let loss = cache.output.iter().zip(targets).map(|(y, t)| (y - t).powi(2)).sum::<f64>() / n as f64;
        let mut grads: Vec<LayerGrads> = self.params.iter().map(LayerGrads::zeros_like).collect();
        let mut dy: Vec<f64> = cache.output.iter().zip(targets).map(|(y, t)| 2.0 * (y - t) / n as f64).collect();
        let layers = &self.spec.layers;
        for i in (cache.start..layers.len()).rev() {
            let k = i - cache.start;
            let x = &cache.inputs[k];
            let (ins, outs) = (self.spec.in_shape(i), self.spec.shapes[i]);
            let p = &self.params[i];
            // the first layer of the pass never needs an input gradient
            let need_dx = i > cache.start;
            let trainable = !self.frozen[i];
            let dx = match (&layers[i], &cache.aux[k]) {
                (LayerSpec::Conv2D { .. }, _) => {
                    let (dw, db, dx) = layers::conv_backward(x, &dy, n, ins, outs, window(&layers[i]), &p.weight, need_dx);
                    if trainable {
                        grads[i] = LayerGrads { weight: dw, bias: db };
                    }
                    dx
                }
                (LayerSpec::BatchNorm, Aux::Bn(bn)) => {
                    let (dg, db, dx) = layers::bn_backward_train(&dy, n, ins, &p.weight, bn);
                    if trainable {
                        grads[i] = LayerGrads { weight: dg, bias: db };
                    }
                    Some(dx)
                }
                (LayerSpec::BatchNorm, _) => {
                    let (dg, db, dx) =
                        layers::bn_backward_eval(x, &dy, n, ins, &p.weight, &p.running_mean, &p.running_var);
                    if trainable {
                        grads[i] = LayerGrads { weight: dg, bias: db };
                    }
                    Some(dx)
                }
                (LayerSpec::ReLU, _) => Some(dy.iter().zip(x).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }).collect()),
                (LayerSpec::Sigmoid, _) => Some(
                    dy.iter()
                        .zip(x)
                        .map(|(g, &v)| {
                            let s = layers::sigmoid(v);
                            g * s * (1.0 - s)
                        })
                        .collect(),
                ),
                (LayerSpec::MaxPool { .. }, Aux::Pool(arg)) => Some(layers::pool_backward(&dy, arg, n, ins, outs)),
                (LayerSpec::Dropout { .. }, Aux::Dropout(mask)) => Some(dy.iter().zip(mask).map(|(g, m)| g * m).collect()),
                (LayerSpec::FullyConnected { units }, _) => {
                    let (dw, db, dx) = layers::fc_backward(x, &dy, n, ins.len(), *units, &p.weight, need_dx);
                    if trainable {
                        grads[i] = LayerGrads { weight: dw, bias: db };
                    }
                    dx
                }
                _ => Some(dy),
            };
            match dx {
                Some(d) => dy = d,
                None => break,
            }
        }
        Ok((loss, grads))
    }
}
