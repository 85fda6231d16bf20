use rand::seq::SliceRandom;

use super::model::{EpochRecord, LayerGrads, LayerParams, Mode, TrainedModel};
use super::spec::{LayerSpec, ModelSpec};
use crate::error::{Error, Result};
use crate::seed;
use crate::signal::synth::PLATE_DIMS;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter vector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// One bias-corrected Adam update of `p` at step `t` (1-based).
pub fn adam_update(p: &mut [f64], g: &[f64], st: &mut Moments, t: u64, lr: f64, cfg: &AdamConfig) -> Result<()> {
    if p.len() != g.len() {
        return Err(Error::shape(format!("{} parameters but {} gradients", p.len(), g.len())));
    }
    if st.m.len() != p.len() {
        st.m = vec![0.0; p.len()];
        st.v = vec![0.0; p.len()];
    }
    let c1 = 1.0 - cfg.beta1.powf(t as f64);
    let c2 = 1.0 - cfg.beta2.powf(t as f64);
    for k in 0..p.len() {
        st.m[k] = cfg.beta1 * st.m[k] + (1.0 - cfg.beta1) * g[k];
        st.v[k] = cfg.beta2 * st.v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
        let m_hat = st.m[k] / c1;
        let v_hat = st.v[k] / c2;
        p[k] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub t: u64,
    pub weight: Vec<Moments>,
    pub bias: Vec<Moments>,
}

/// Adam over every non-frozen layer.
pub fn adam_step(
    params: &mut [LayerParams],
    grads: &[LayerGrads],
    frozen: &[bool],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || frozen.len() != params.len() {
        return Err(Error::shape("gradient list does not match the parameter list"));
    }
    if state.weight.len() != params.len() {
        state.weight = vec![Moments::default(); params.len()];
        state.bias = vec![Moments::default(); params.len()];
    }
    state.t += 1;
    for i in 0..params.len() {
        if frozen[i] || params[i].weight.is_empty() {
            continue;
        }
        adam_update(&mut params[i].weight, &grads[i].weight, &mut state.weight[i], state.t, lr, cfg)?;
        adam_update(&mut params[i].bias, &grads[i].bias, &mut state.bias[i], state.t, lr, cfg)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub lr_drop_factor: f64,
    pub lr_drop_period: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 25,
            lr_drop_factor: 0.1,
            lr_drop_period: 15,
            max_epochs: 50,
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        if !(a.lr > 0.0 && a.eps > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return Err(Error::config("lr", "Adam needs lr > 0, eps > 0 and betas in [0, 1)"));
        }
        if self.batch_size == 0 || self.lr_drop_period == 0 || self.patience == 0 {
            return Err(Error::config("batch_size", "batch size, drop period and patience must be >= 1"));
        }
        if !(self.lr_drop_factor > 0.0 && self.lr_drop_factor <= 1.0) {
            return Err(Error::config("lr_drop_factor", "must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Learning rate during 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = (epoch.max(1) - 1) / self.lr_drop_period;
        self.adam.lr * self.lr_drop_factor.powi(drops as i32)
    }
}

/// Flat inputs with one scalar target each.
#[derive(Clone, Copy, Debug)]
pub struct Samples<'a> {
    pub inputs: &'a [f64],
    pub targets: &'a [f64],
}

impl<'a> Samples<'a> {
    pub fn new(inputs: &'a [f64], targets: &'a [f64]) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::domain("empty sample set"));
        }
        if inputs.len() % targets.len() != 0 {
            return Err(Error::shape("inputs do not split evenly over targets"));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.inputs.len() / self.targets.len()
    }
}

fn mse(pred: &[f64], targets: &[f64]) -> f64 {
    pred.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / targets.len() as f64
}

/// Trains a freshly initialised model. The final layer starts as the constant
/// mean-target predictor so the first epochs are not spent removing a random offset.
pub fn train(spec: ModelSpec, train_set: Samples, val_set: Samples, cfg: &TrainConfig) -> Result<TrainedModel> {
    let mut model = TrainedModel::init(spec, seed::derive(cfg.seed, "init"));
    if let Some(last) = model.spec.layers.iter().rposition(|l| matches!(l, LayerSpec::FullyConnected { .. })) {
        let mean = train_set.targets.iter().sum::<f64>() / train_set.len() as f64;
        model.params[last].weight.iter_mut().for_each(|w| *w = 0.0);
        model.params[last].bias.iter_mut().for_each(|b| *b = mean);
    }
    fit(model, 1, train_set, val_set, cfg)
}

/// Retrains the layers after the last Dropout; everything before it, batch-norm
/// statistics included, stays fixed. Frozen layers behave as at inference, so
/// their outputs are computed once and reused every epoch.
pub fn finetune(model: &TrainedModel, train_set: Samples, val_set: Samples, cfg: &TrainConfig) -> Result<TrainedModel> {
    let mut m = model.clone();
    let last = m.freeze_feature_extractor()?;
    m.history.clear();
    if cfg.max_epochs == 0 {
        return Ok(m);
    }
    for s in [&train_set, &val_set] {
        if s.sample_len() != m.input_len() {
            return Err(Error::shape(format!(
                "model expects inputs of {} values, data has {}",
                m.input_len(),
                s.sample_len()
            )));
        }
    }
    let ft = m.features(train_set.inputs, train_set.len(), last)?;
    let fv = m.features(val_set.inputs, val_set.len(), last)?;
    fit(m, last + 1, Samples::new(&ft, train_set.targets)?, Samples::new(&fv, val_set.targets)?, cfg)
}

fn fit(mut model: TrainedModel, start: usize, train_set: Samples, val_set: Samples, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::domain("training and validation sets must be nonempty"));
    }
    let len = train_set.sample_len();
    if val_set.sample_len() != len {
        return Err(Error::shape("training and validation inputs differ in size"));
    }
    let mut state = AdamState::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(f64, Vec<LayerParams>)> = None;
    let mut stale = 0;
    let mut batch = Vec::with_capacity(cfg.batch_size * len);
    let mut targets = Vec::with_capacity(cfg.batch_size);

    for epoch in 1..=cfg.max_epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut seed::rng(seed::derive_indexed(cfg.seed, "shuffle", &[epoch as u64])));
        let mut rng = seed::rng(seed::derive_indexed(cfg.seed, "dropout", &[epoch as u64]));
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            batch.clear();
            targets.clear();
            for &k in idx {
                batch.extend_from_slice(&train_set.inputs[k * len..(k + 1) * len]);
                targets.push(train_set.targets[k]);
            }
            let cache = model.forward_from(start, &batch, idx.len(), Mode::Train, &mut rng)?;
            let (loss, grads) = model.backward(&cache, &targets)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("non-finite training loss at epoch {epoch}")));
            }
            model.update_running_stats(&cache);
            let frozen = model.frozen.clone();
            adam_step(&mut model.params, &grads, &frozen, &mut state, lr, &cfg.adam)?;
            model.touch();
            total += loss * idx.len() as f64;
        }
        let train_loss = total / train_set.len() as f64;
        let val_loss = mse(&model.predict_from(start, val_set.inputs, val_set.len(), cfg.batch_size)?, val_set.targets);
        if !val_loss.is_finite() || model.params.iter().flat_map(|p| &p.weight).any(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!("non-finite validation loss at epoch {epoch}")));
        }
        model.history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
        });
        if best.as_ref().map_or(true, |(b, _)| val_loss < *b) {
            best = Some((val_loss, model.params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
        model.touch();
    }
    Ok(model)
}

pub const ROUNDOFF_FLOOR: f64 = 1e-10;

/// Outcome of a finite-difference comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientReport {
    /// Largest relative difference; differences under [`ROUNDOFF_FLOOR`] count as zero.
    pub max_relative: f64,
    pub max_abs_diff: f64,
    pub max_abs_grad: f64,
    pub compared: usize,
}

/// Max relative difference between analytic and central-difference gradients
/// over every trainable parameter. Dropout is disabled; batch norm uses the
/// statistics of the given batch.
pub fn gradient_check(model: &TrainedModel, inputs: &[f64], targets: &[f64], epsilon: f64) -> Result<f64> {
    Ok(gradient_report(model, inputs, targets, epsilon)?.max_relative)
}

pub fn gradient_report(model: &TrainedModel, inputs: &[f64], targets: &[f64], epsilon: f64) -> Result<GradientReport> {
    let spec = model.spec.with_dropout_rate(0.0)?;
    let mut m = TrainedModel::from_parts(spec, model.params.clone(), model.frozen.clone())?;
    let n = targets.len();
    let mut rng = seed::rng(0);
    let cache = m.forward_from(1, inputs, n, Mode::Train, &mut rng)?;
    let (_, grads) = m.backward(&cache, targets)?;
    let loss = |m: &TrainedModel| -> Result<f64> {
        let mut rng = seed::rng(0);
        Ok(mse(&m.forward_from(1, inputs, n, Mode::Train, &mut rng)?.output, targets))
    };
    let mut r = GradientReport {
        max_relative: 0.0,
        max_abs_diff: 0.0,
        max_abs_grad: 0.0,
        compared: 0,
    };
    for i in 0..m.params.len() {
        if m.frozen[i] {
            continue;
        }
        for which in 0..2 {
            let count = if which == 0 { m.params[i].weight.len() } else { m.params[i].bias.len() };
            for k in 0..count {
                let orig = *slot(&mut m, i, which, k);
                *slot(&mut m, i, which, k) = orig + epsilon;
                let up = loss(&m)?;
                *slot(&mut m, i, which, k) = orig - epsilon;
                let down = loss(&m)?;
                *slot(&mut m, i, which, k) = orig;
                let numeric = (up - down) / (2.0 * epsilon);
                let analytic = if which == 0 { grads[i].weight[k] } else { grads[i].bias[k] };
                let diff = (analytic - numeric).abs();
                // below this the difference quotient is pure rounding noise
                // (e.g. conv biases feeding batch norm have an exactly zero gradient)
                let rel = if diff < ROUNDOFF_FLOOR {
                    0.0
                } else {
                    diff / analytic.abs().max(numeric.abs()).max(1e-8)
                };
                r.max_relative = r.max_relative.max(rel);
                r.max_abs_diff = r.max_abs_diff.max(diff);
                r.max_abs_grad = r.max_abs_grad.max(analytic.abs());
                r.compared += 1;
            }
        }
    }
    Ok(r)
}

fn slot(m: &mut TrainedModel, layer: usize, which: usize, k: usize) -> &mut f64 {
    if which == 0 {
        &mut m.params[layer].weight[k]
    } else {
        &mut m.params[layer].bias[k]
    }
}

/// Plate position in mm from the x and y networks.
pub fn predict_position(model_x: &TrainedModel, model_y: &TrainedModel, image: &[f64]) -> Result<(f64, f64)> {
    if model_x.spec.input_shape() != model_y.spec.input_shape() {
        return Err(Error::shape("x and y models expect different inputs"));
    }
    let x = model_x.predict(image, 1)?[0];
    let y = model_y.predict(image, 1)?[0];
    Ok((x * PLATE_DIMS.0, y * PLATE_DIMS.1))
}

#[cfg(test)]
mod tests {
    use super::super::spec::{build_type, LayerSpec};
    use super::*;
    use rand::Rng;

    fn random(n: usize, seed_value: u64) -> Vec<f64> {
        let mut rng = seed::rng(seed_value);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn targets(n: usize, seed_value: u64) -> Vec<f64> {
        let mut rng = seed::rng(seed_value);
        (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()
    }

    #[test]
    fn adam_hand_step() {
        let mut w = [1.0];
        let mut st = Moments::default();
        adam_update(&mut w, &[2.0], &mut st, 1, 1e-3, &AdamConfig::default()).unwrap();
        assert!((w[0] - 0.999).abs() < 1e-9);
        assert!(adam_update(&mut w, &[1.0, 2.0], &mut st, 2, 1e-3, &AdamConfig::default()).is_err());
    }

    #[test]
    fn adam_zero_gradient_decays_moments_only() {
        let mut w = [0.5, -0.25];
        let mut st = Moments {
            m: vec![0.2, 0.1],
            v: vec![0.0, 0.0],
        };
        let cfg = AdamConfig::default();
        // with v = 0 the update is m_hat / eps; start from zero moments instead
        st.m = vec![0.0; 2];
        adam_update(&mut w, &[0.0, 0.0], &mut st, 1, 1e-3, &cfg).unwrap();
        assert_eq!(w, [0.5, -0.25]);
        let mut st = Moments {
            m: vec![0.2, 0.1],
            v: vec![0.04, 0.01],
        };
        let before = st.clone();
        let mut w2 = [0.5, -0.25];
        adam_update(&mut w2, &[0.0, 0.0], &mut st, 3, 1e-3, &cfg).unwrap();
        for k in 0..2 {
            assert!((st.m[k] - 0.9 * before.m[k]).abs() < 1e-15);
            assert!((st.v[k] - 0.999 * before.v[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(1), 1e-3);
        assert_eq!(cfg.lr_at(15), 1e-3);
        assert!((cfg.lr_at(16) - 1e-4).abs() < 1e-18);
        assert!((cfg.lr_at(30) - 1e-4).abs() < 1e-18);
        assert!((cfg.lr_at(31) - 1e-5).abs() < 1e-19);
    }

    #[test]
    fn gradient_check_linear_model() {
        let spec = ModelSpec::new(vec![
            LayerSpec::Input { h: 1, w: 1, c: 1 },
            LayerSpec::fc(1),
            LayerSpec::RegressionOutput,
        ])
        .unwrap();
        let mut m = TrainedModel::init(spec, 1);
        m.params[1].weight = vec![0.7];
        let err = gradient_check(&m, &[0.5, -1.0, 2.0], &[1.0, 0.0, 3.0], 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn gradient_check_every_layer_type() {
        let spec = ModelSpec::new(vec![
            LayerSpec::Input { h: 2, w: 12, c: 1 },
            LayerSpec::conv(2, 3, 3, 1, 2),
            LayerSpec::BatchNorm,
            LayerSpec::ReLU,
            LayerSpec::pool(1, 2, 1, 1),
            LayerSpec::Dropout { rate: 0.2 },
            LayerSpec::fc(4),
            LayerSpec::Sigmoid,
            LayerSpec::fc(1),
            LayerSpec::RegressionOutput,
        ])
        .unwrap();
        let m = TrainedModel::init(spec, 3);
        let err = gradient_check(&m, &random(4 * 24, 4), &targets(4, 5), 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn gradient_check_sigmoid_stack() {
        let spec = ModelSpec::new(vec![
            LayerSpec::Input { h: 1, w: 6, c: 1 },
            LayerSpec::fc(5),
            LayerSpec::Sigmoid,
            LayerSpec::fc(3),
            LayerSpec::Sigmoid,
            LayerSpec::fc(1),
            LayerSpec::RegressionOutput,
        ])
        .unwrap();
        let m = TrainedModel::init(spec, 8);
        let err = gradient_check(&m, &random(3 * 6, 9), &targets(3, 10), 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn gradient_check_type_micro_models() {
        for (kind, dims, n) in [(3u8, (3, 20), 4), (2, (4, 60), 3), (1, (1, 261), 3)] {
            let m = TrainedModel::init(build_type(kind, dims).unwrap(), 21);
            let len = dims.0 * dims.1;
            let err = gradient_check(&m, &random(n * len, 22), &targets(n, 23), 1e-5).unwrap();
            assert!(err < 1e-4, "type {kind}: {err}");
        }
    }

    fn toy_problem(n: usize, seed_value: u64) -> (Vec<f64>, Vec<f64>) {
        // the target is the position of a bump along the row
        let mut rng = seed::rng(seed_value);
        let mut x = Vec::with_capacity(n * 40);
        let mut t = Vec::with_capacity(n);
        for _ in 0..n {
            let pos: f64 = rng.gen_range(0.1..0.9);
            for j in 0..40 {
                let d = j as f64 / 39.0 - pos;
                x.push((-d * d * 200.0).exp() + 0.05 * rng.gen_range(-1.0..1.0));
            }
            t.push(pos);
        }
        (x, t)
    }

    #[test]
    fn constant_targets_are_learned() {
        let (x, _) = toy_problem(60, 1);
        let t = vec![0.3; 60];
        let spec = build_type(3, (1, 40)).unwrap();
        let cfg = TrainConfig {
            seed: 4,
            ..Default::default()
        };
        let m = train(spec, Samples::new(&x[..50 * 40], &t[..50]).unwrap(), Samples::new(&x[50 * 40..], &t[50..]).unwrap(), &cfg)
            .unwrap();
        let fitted = mse(&m.predict(&x[..50 * 40], 50).unwrap(), &t[..50]);
        assert!(fitted < 1e-4, "{fitted} {:?}", m.history);
    }

    #[test]
    fn early_stopping_restores_best() {
        // labels of the validation half are unrelated to its inputs
        let (x, t) = toy_problem(40, 2);
        let vt: Vec<f64> = t[20..].iter().map(|v| 1.0 - v).collect();
        let spec = build_type(3, (1, 40)).unwrap();
        let cfg = TrainConfig {
            seed: 1,
            batch_size: 5,
            adam: AdamConfig {
                lr: 1e-2,
                ..Default::default()
            },
            ..Default::default()
        };
        let m = train(spec, Samples::new(&x[..800], &t[..20]).unwrap(), Samples::new(&x[800..], &vt).unwrap(), &cfg).unwrap();
        assert!(m.history.len() < 50, "{}", m.history.len());
        let best = m.history.iter().map(|h| h.val_loss).fold(f64::INFINITY, f64::min);
        let pred = m.predict(&x[800..], 20).unwrap();
        assert!((mse(&pred, &vt) - best).abs() < 1e-12);
    }

    #[test]
    fn training_is_reproducible_and_validated() {
        let (x, t) = toy_problem(30, 3);
        let spec = build_type(3, (1, 40)).unwrap();
        let cfg = TrainConfig {
            seed: 9,
            max_epochs: 4,
            ..Default::default()
        };
        let tr = Samples::new(&x[..800], &t[..20]).unwrap();
        let va = Samples::new(&x[800..], &t[20..]).unwrap();
        let a = train(spec.clone(), tr, va, &cfg).unwrap();
        let b = train(spec.clone(), tr, va, &cfg).unwrap();
        assert_eq!(a, b);
        let bad = TrainConfig {
            lr_drop_factor: 1.5,
            ..cfg
        };
        assert!(train(spec.clone(), tr, va, &bad).is_err());
        assert!(Samples::new(&[], &[]).is_err());
    }

    #[test]
    fn diverging_training_is_reported() {
        let (x, t) = toy_problem(20, 3);
        let big: Vec<f64> = t.iter().map(|v| v * 1e300).collect();
        let spec = build_type(3, (1, 40)).unwrap();
        let e = train(spec, Samples::new(&x[..400], &big[..10]).unwrap(), Samples::new(&x[400..], &big[10..]).unwrap(), &TrainConfig::default())
            .unwrap_err();
        assert_eq!(e.exit_code(), 4);
    }

    #[test]
    fn finetune_freezes_features_and_adapts() {
        let (x, t) = toy_problem(80, 5);
        let spec = build_type(3, (1, 40)).unwrap();
        let cfg = TrainConfig {
            seed: 2,
            ..Default::default()
        };
        let src = train(spec, Samples::new(&x[..40 * 40], &t[..40]).unwrap(), Samples::new(&x[40 * 40..50 * 40], &t[40..50]).unwrap(), &cfg)
            .unwrap();
        // target domain: same inputs, labels mirrored
        let tt: Vec<f64> = t.iter().map(|v| 1.0 - v).collect();
        let ttr = Samples::new(&x[50 * 40..70 * 40], &tt[50..70]).unwrap();
        let tva = Samples::new(&x[70 * 40..], &tt[70..]).unwrap();

        let same = finetune(&src, ttr, tva, &TrainConfig { max_epochs: 0, ..cfg }).unwrap();
        assert_eq!(same.params, src.params);

        let ft = finetune(&src, ttr, tva, &cfg).unwrap();
        let last = src.spec.last_dropout().unwrap();
        for i in 0..=last {
            assert_eq!(ft.params[i], src.params[i], "layer {}", i + 1);
            assert!(ft.frozen[i]);
        }
        let before = mse(&src.predict(tva.inputs, 10).unwrap(), tva.targets);
        let after = mse(&ft.predict(tva.inputs, 10).unwrap(), tva.targets);
        assert!(after < before, "{after} vs {before}");

        let wrong = vec![0.0; 20 * 39];
        assert!(finetune(&src, Samples::new(&wrong, &tt[50..70]).unwrap(), tva, &cfg).is_err());
    }

    #[test]
    fn position_from_constant_models() {
        let spec = build_type(3, (1, 40)).unwrap();
        let mut m = TrainedModel::init(spec, 0);
        let out = m.spec.layers.len() - 2;
        for p in &mut m.params {
            p.weight.iter_mut().for_each(|w| *w = 0.0);
        }
        m.params[out].bias = vec![0.5];
        let (x, _) = toy_problem(1, 0);
        assert_eq!(predict_position(&m, &m, &x).unwrap(), (100.0, 150.0));
        let other = TrainedModel::init(build_type(3, (1, 41)).unwrap(), 0);
        assert!(predict_position(&m, &other, &x).is_err());
    }
}
