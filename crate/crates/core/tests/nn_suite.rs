use proptest::prelude::*;
use rand::Rng;
use tda_core::nn::{
    adam_update, build_type, finetune, gradient_check, train, AdamConfig, LayerSpec, ModelSpec, Moments, Samples,
    TrainConfig, TrainedModel,
};
use tda_core::seed;

fn uniform(n: usize, lo: f64, hi: f64, s: u64) -> Vec<f64> {
    let mut rng = seed::rng(s);
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn micro(layers: Vec<LayerSpec>) -> ModelSpec {
    ModelSpec::new(layers).unwrap()
}

#[test]
fn gradients_match_finite_differences() {
    let input = |h, w| LayerSpec::Input { h, w, c: 1 };
    let cases: Vec<(&str, ModelSpec, usize)> = vec![
        ("fc", micro(vec![input(1, 5), LayerSpec::fc(3), LayerSpec::fc(1), LayerSpec::RegressionOutput]), 5),
        (
            "conv",
            micro(vec![input(2, 9), LayerSpec::conv(2, 3, 2, 1, 2), LayerSpec::fc(1), LayerSpec::RegressionOutput]),
            18,
        ),
        (
            "batchnorm",
            micro(vec![input(1, 6), LayerSpec::conv(1, 2, 2, 1, 1), LayerSpec::BatchNorm, LayerSpec::fc(1), LayerSpec::RegressionOutput]),
            6,
        ),
        (
            "relu",
            micro(vec![input(1, 6), LayerSpec::fc(4), LayerSpec::ReLU, LayerSpec::fc(1), LayerSpec::RegressionOutput]),
            6,
        ),
        (
            "maxpool",
            micro(vec![input(2, 8), LayerSpec::conv(1, 2, 2, 1, 1), LayerSpec::pool(2, 2, 1, 2), LayerSpec::fc(1), LayerSpec::RegressionOutput]),
            16,
        ),
        (
            "dropout",
            micro(vec![input(1, 6), LayerSpec::fc(4), LayerSpec::Dropout { rate: 0.3 }, LayerSpec::fc(1), LayerSpec::RegressionOutput]),
            6,
        ),
        (
            "sigmoid",
            micro(vec![input(1, 6), LayerSpec::fc(4), LayerSpec::Sigmoid, LayerSpec::fc(1), LayerSpec::RegressionOutput]),
            6,
        ),
        ("type-3", build_type(3, (3, 24)).unwrap(), 72),
    ];
    for (k, (name, spec, len)) in cases.into_iter().enumerate() {
        let m = TrainedModel::init(spec, 40 + k as u64);
        let n = 4;
        let err = gradient_check(&m, &uniform(n * len, -1.0, 1.0, k as u64), &uniform(n, 0.0, 1.0, 99), 1e-5).unwrap();
        assert!(err < 1e-4, "{name}: {err}");
    }
}

#[test]
fn adam_first_step_on_square() {
    // f(w) = w^2 at w = 1 has gradient 2
    let mut w = [1.0];
    let mut st = Moments::default();
    let g = [2.0 * w[0]];
    adam_update(&mut w, &g, &mut st, 1, 1e-3, &AdamConfig::default()).unwrap();
    assert!((w[0] - 0.999).abs() < 1e-9, "{}", w[0]);
}

#[test]
fn type1_shape_audit() {
    let s = build_type(1, (7, 10_568)).unwrap();
    assert_eq!(s.shapes[1].w, 3521);
    assert_eq!(s.shapes[1].h, 7);
    let e = build_type(1, (7, 40)).unwrap_err();
    assert_eq!(e.exit_code(), 3);
    assert!(e.to_string().contains("layer"), "{e}");
    let e = build_type(2, (7, 56)).unwrap_err();
    assert_eq!(e.exit_code(), 3);
    assert!(build_type(2, (7, 57)).is_ok());
}

fn ramp_problem(n: usize, s: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = seed::rng(s);
    let mut x = Vec::new();
    let mut t = Vec::new();
    for _ in 0..n {
        let v: f64 = rng.gen_range(0.1..0.9);
        x.extend((0..30).map(|j| v * (j as f64 / 29.0) + rng.gen_range(-0.02..0.02)));
        t.push(v);
    }
    (x, t)
}

#[test]
fn finetune_freezes_features_and_follows_schedule() {
    let (x, t) = ramp_problem(40, 1);
    let spec = build_type(3, (1, 30)).unwrap();
    let cfg = TrainConfig {
        seed: 3,
        max_epochs: 4,
        ..Default::default()
    };
    let src = train(spec, Samples::new(&x[..600], &t[..20]).unwrap(), Samples::new(&x[600..900], &t[20..30]).unwrap(), &cfg)
        .unwrap();
    let long = TrainConfig {
        max_epochs: 32,
        patience: 1000,
        ..cfg
    };
    let tt: Vec<f64> = t.iter().map(|v| 0.5 * v + 0.2).collect();
    let ft = finetune(&src, Samples::new(&x[..600], &tt[..20]).unwrap(), Samples::new(&x[900..], &tt[30..]).unwrap(), &long)
        .unwrap();
    let mut frozen = 0;
    for (i, layer) in src.spec.layers.iter().enumerate() {
        if matches!(layer, LayerSpec::Conv2D { .. } | LayerSpec::BatchNorm) {
            assert!(ft.frozen[i], "layer {} not frozen", i + 1);
            let bits = |p: &[f64]| p.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&ft.params[i].weight), bits(&src.params[i].weight));
            assert_eq!(bits(&ft.params[i].bias), bits(&src.params[i].bias));
            assert_eq!(bits(&ft.params[i].running_mean), bits(&src.params[i].running_mean));
            assert_eq!(bits(&ft.params[i].running_var), bits(&src.params[i].running_var));
            frozen += 1;
        }
    }
    assert!(frozen >= 2);
    assert_ne!(ft.params, src.params);
    assert_eq!(ft.history.len(), 32);
    let lr = |e: usize| ft.history.iter().find(|h| h.epoch == e).unwrap().lr;
    assert_eq!(lr(15), 1e-3);
    assert!((lr(16) - 1e-4).abs() <= 1e-18);
    assert!((lr(31) - 1e-5).abs() <= 1e-19);
}

#[test]
fn seeded_training_is_bit_reproducible() {
    let (x, t) = ramp_problem(30, 2);
    let spec = build_type(3, (1, 30)).unwrap();
    let cfg = TrainConfig {
        seed: 17,
        max_epochs: 3,
        ..Default::default()
    };
    let run = || train(spec.clone(), Samples::new(&x[..600], &t[..20]).unwrap(), Samples::new(&x[600..], &t[20..]).unwrap(), &cfg).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    let other = train(
        spec.clone(),
        Samples::new(&x[..600], &t[..20]).unwrap(),
        Samples::new(&x[600..], &t[20..]).unwrap(),
        &TrainConfig { seed: 18, ..cfg },
    )
    .unwrap();
    assert_ne!(a.params, other.params);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn shape_chain_follows_floor_rule(kind in 2u8..=3, h in 1usize..8, w in 20usize..400) {
        if let Ok(s) = build_type(kind, (h, w)) {
            for (i, layer) in s.layers.iter().enumerate().skip(1) {
                let (ins, out) = (s.shapes[i - 1], s.shapes[i]);
                match *layer {
                    LayerSpec::Conv2D { kh, kw, sh, sw, filters } => {
                        prop_assert_eq!(out.h, (ins.h - kh) / sh + 1);
                        prop_assert_eq!(out.w, (ins.w - kw) / sw + 1);
                        prop_assert_eq!(out.c, filters);
                    }
                    LayerSpec::MaxPool { ph, pw, sh, sw } => {
                        prop_assert_eq!(out.h, (ins.h - ph) / sh + 1);
                        prop_assert_eq!(out.w, (ins.w - pw) / sw + 1);
                    }
                    _ => {}
                }
            }
        }
    }

    #[test]
    fn eval_forward_is_pure(s in any::<u64>()) {
        let m = TrainedModel::init(build_type(3, (2, 25)).unwrap(), s);
        let x = uniform(3 * 50, -1.0, 1.0, s ^ 1);
        let a = m.predict(&x, 3).unwrap();
        let b = m.predict(&x, 3).unwrap();
        prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
