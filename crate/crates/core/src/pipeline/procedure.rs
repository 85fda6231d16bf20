//! The eight-step adaptation procedure from source domain A to target domain B.
//!
//! Stage seeds are `seed::derive(cfg.seed, <stage name>)`, so adding a stage
//! never perturbs the others.

use std::time::Instant;

use super::dataset::{DomainDataset, Stage};
use super::report::{ExperimentReport, ModelKind, PredictionRow, RmseRow, StageRecord};
use super::split::{halve_target, rmse, split, Partition, SplitSpec};
use crate::error::{Error, Result};
use crate::metrics::{compute_all, DEFAULT_BINS};
use crate::mpca::{fit_joint, project};
use crate::nn::{build_type, finetune, train, Samples, TrainConfig, TrainedModel};
use crate::signal::synth::PLATE_DIMS;
use crate::signal::Network;
use crate::seed;
use crate::tensor::Tensor3;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub case_id: String,
    pub q_percent: f64,
    /// Augmentation factor the domains were built with; recorded only.
    pub copies: usize,
    pub seed: u64,
    /// Used for S-CNN, T-CNN and the model trained on projected source data.
    pub train: TrainConfig,
    /// Used for both fine-tuning stages.
    pub finetune: TrainConfig,
    /// Split individual images instead of damage-site groups.
    pub paper_split: bool,
    pub n_bins: usize,
}

impl ExperimentConfig {
    pub fn new(case_id: impl Into<String>, seed_value: u64) -> Self {
        Self {
            case_id: case_id.into(),
            q_percent: 99.0,
            copies: 10,
            seed: seed_value,
            train: TrainConfig::default(),
            finetune: TrainConfig::default(),
            paper_split: false,
            n_bins: DEFAULT_BINS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q_percent > 0.0 && self.q_percent <= 100.0) {
            return Err(Error::config("q", format!("must lie in (0, 100], got {}", self.q_percent)));
        }
        if self.copies == 0 {
            return Err(Error::config("copies", "must be >= 1"));
        }
        if self.n_bins == 0 {
            return Err(Error::config("n_bins", "must be >= 1"));
        }
        if self.case_id.contains(',') || self.case_id.contains('\n') {
            return Err(Error::config("case_id", "must not contain commas or newlines"));
        }
        self.train.validate()?;
        self.finetune.validate()
    }
}

/// Positions scaled to [0, 1] by the plate size, one vector per axis.
fn targets(ds: &DomainDataset, idx: &[usize]) -> [Vec<f64>; 2] {
    let (w, h) = (PLATE_DIMS.0 as f64, PLATE_DIMS.1 as f64);
    [
        idx.iter().map(|&k| ds.labels[k].0 / w).collect(),
        idx.iter().map(|&k| ds.labels[k].1 / h).collect(),
    ]
}

fn inputs(ds: &DomainDataset, idx: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(idx.len() * ds.images.dims().0 * ds.images.dims().1);
    for &k in idx {
        out.extend_from_slice(ds.images.slice_values(k));
    }
    out
}

/// Inputs and per-axis targets of one partition.
struct Part {
    x: Vec<f64>,
    t: [Vec<f64>; 2],
}

impl Part {
    fn new(ds: &DomainDataset, idx: &[usize]) -> Self {
        Self {
            x: inputs(ds, idx),
            t: targets(ds, idx),
        }
    }

    fn samples(&self, axis: usize) -> Result<Samples<'_>> {
        Samples::new(&self.x, &self.t[axis])
    }
}

/// A pair of single-output regressors, one per axis.
type Pair = [TrainedModel; 2];

fn train_pair(spec_kind: u8, ds: &DomainDataset, p: &Partition, cfg: &TrainConfig, stage: &str) -> Result<Pair> {
    let spec = build_type(spec_kind, ds.image_dims())?;
    let (tr, va) = (Part::new(ds, &p.train), Part::new(ds, &p.val));
    let fit = |axis: usize, label: &str| {
        let c = TrainConfig {
            seed: seed::derive(cfg.seed, &format!("{stage}-{label}")),
            ..*cfg
        };
        train(spec.clone(), tr.samples(axis)?, va.samples(axis)?, &c)
    };
    Ok([fit(0, "x")?, fit(1, "y")?])
}

fn finetune_pair(models: &Pair, ds: &DomainDataset, p: &Partition, cfg: &TrainConfig, stage: &str) -> Result<Pair> {
    let (tr, va) = (Part::new(ds, &p.train), Part::new(ds, &p.val));
    let fit = |axis: usize, label: &str| {
        let c = TrainConfig {
            seed: seed::derive(cfg.seed, &format!("{stage}-{label}")),
            ..*cfg
        };
        finetune(&models[axis], tr.samples(axis)?, va.samples(axis)?, &c)
    };
    Ok([fit(0, "x")?, fit(1, "y")?])
}

/// Predicted positions in mm for every image of `ds`.
fn predict_pair(models: &Pair, ds: &DomainDataset) -> Result<Vec<(f64, f64)>> {
    let x = ds.images.as_slice();
    let n = ds.len();
    let px = models[0].predict(x, n)?;
    let py = models[1].predict(x, n)?;
    Ok(px
        .into_iter()
        .zip(py)
        .map(|(a, b)| (a * PLATE_DIMS.0 as f64, b * PLATE_DIMS.1 as f64))
        .collect())
}

fn rescaled_values(a: &Tensor3, b: &Tensor3) -> (Vec<f64>, Vec<f64>) {
    let m = a.max_abs().max(b.max_abs());
    let s = if m > 0.0 { 1.0 / m } else { 1.0 };
    (
        a.as_slice().iter().map(|v| v * s).collect(),
        b.as_slice().iter().map(|v| v * s).collect(),
    )
}

struct StageLog {
    records: Vec<StageRecord>,
    master: u64,
}

impl StageLog {
    /// Runs one stage with its derived seed, tagging any error with the stage name.
    fn run<T>(&mut self, step: u8, name: &'static str, f: impl FnOnce(u64) -> Result<(T, String)>) -> Result<T> {
        let s = seed::derive(self.master, name);
        let t0 = Instant::now();
        let (out, note) = f(s).map_err(|e| e.in_stage(name))?;
        self.records.push(StageRecord {
            step,
            name: name.to_string(),
            seed: s,
            seconds: t0.elapsed().as_secs_f64(),
            note,
        });
        Ok(out)
    }
}

/// Runs steps 1 to 8 and assembles the report. Final RMSE is measured on all of
/// `target`, with a second column restricted to damage sites left out of C.
pub fn run_procedure(source: &DomainDataset, target: &DomainDataset, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    if source.image_dims() != target.image_dims() {
        return Err(Error::shape(format!(
            "source images are {:?}, target images are {:?}",
            source.image_dims(),
            target.image_dims()
        )));
    }
    if source.stage != Stage::Raw || target.stage != Stage::Raw {
        return Err(Error::domain("run_procedure expects raw grayscale domains"));
    }
    let mut log = StageLog {
        records: Vec::new(),
        master: cfg.seed,
    };
    let a = source;
    let b = target;

    // 1. halve B into C and compare pixel distributions
    let (c, metrics_before) = log.run(1, "metrics-before", |s| {
        let c = halve_target(b, s)?;
        let m = compute_all(a.images.as_slice(), c.images.as_slice(), cfg.n_bins)?;
        let note = format!("C keeps {} of {} groups", c.group_ids().len(), b.group_ids().len());
        Ok(((c, m), note))
    })?;

    // 2. joint MPCA on A and C
    let fit = log.run(2, "mpca", |_| {
        let f = fit_joint(&a.images, &c.images, cfg.q_percent)?;
        let note = format!("i2 {} -> p2 {}", a.image_dims().1, f.p2);
        Ok((f, note))
    })?;
    let a_hat = a.with_images(fit.projected_source.clone(), Stage::Projected)?;
    let c_hat = c.with_images(fit.projected_target.clone(), Stage::Projected)?;

    // 3. compare projected distributions on a shared scale
    let metrics_after = log.run(3, "metrics-after", |_| {
        let (sa, sc) = rescaled_values(&fit.projected_source, &fit.projected_target);
        Ok((compute_all(&sa, &sc, cfg.n_bins)?, String::new()))
    })?;

    let spec_for = |frac: SplitSpec| SplitSpec {
        ungrouped: cfg.paper_split,
        ..frac
    };
    let stage_train = |name: &str| TrainConfig {
        seed: seed::derive(cfg.seed, name),
        ..cfg.train
    };
    let stage_finetune = |name: &str| TrainConfig {
        seed: seed::derive(cfg.seed, name),
        ..cfg.finetune
    };

    // 4. S-CNN on A
    let part_a = split(a, &spec_for(SplitSpec::training(seed::derive(cfg.seed, "split-source"))))
        .map_err(|e| e.in_stage("s-cnn"))?;
    let s_cnn = log.run(4, "s-cnn", |_| {
        let m = train_pair(1, a, &part_a, &stage_train("s-cnn"), "s-cnn")?;
        let note = format!("{} train / {} val images", part_a.train.len(), part_a.val.len());
        Ok((m, note))
    })?;

    // 5. T-CNN on C
    let t_cnn = log.run(5, "t-cnn", |s| {
        let p = split(&c, &spec_for(SplitSpec::training(s)))?;
        let m = train_pair(1, &c, &p, &stage_train("t-cnn"), "t-cnn")?;
        Ok((m, format!("{} train / {} val images", p.train.len(), p.val.len())))
    })?;

    // 6. fine-tune S-CNN on C
    let part_c_ft = split(&c, &spec_for(SplitSpec::finetuning(seed::derive(cfg.seed, "split-finetune"))))
        .map_err(|e| e.in_stage("ft"))?;
    let ft = log.run(6, "ft", |_| {
        let m = finetune_pair(&s_cnn, &c, &part_c_ft, &stage_finetune("ft"), "ft")?;
        Ok((m, format!("{} train / {} val images", part_c_ft.train.len(), part_c_ft.val.len())))
    })?;

    // 7. fresh network on Â, fine-tuned on Ĉ
    let preferred: u8 = match b.network {
        Network::Circular => 2,
        Network::Rectangular => 3,
    };
    let (mpca_kind, fallback) = match build_type(preferred, a_hat.image_dims()) {
        Ok(_) => (preferred, false),
        Err(Error::Shape(_)) if preferred == 2 => (3, true),
        Err(e) => return Err(e.in_stage("mpca-ft")),
    };
    let mpca_ft = log.run(7, "mpca-ft", |_| {
        let base = train_pair(mpca_kind, &a_hat, &part_a, &stage_train("mpca-train"), "mpca-train")?;
        let m = finetune_pair(&base, &c_hat, &part_c_ft, &stage_finetune("mpca-ft"), "mpca-ft")?;
        let note = format!("Type-{mpca_kind}{}", if fallback { " (fallback)" } else { "" });
        Ok((m, note))
    })?;

    // 8. evaluate on the full B, projecting through the basis fitted in step 2
    let fingerprint = fit.basis.fingerprint();
    let c_groups = c.group_ids();
    let held_out: Vec<usize> = (0..b.len()).filter(|&k| !c_groups.contains(&b.groups[k])).collect();
    let (rows, predictions) = log.run(8, "evaluate", |_| {
        let b_hat = b.with_images(project(&b.images, &fit.basis)?, Stage::Projected)?;
        if fit.basis.fingerprint() != fingerprint {
            return Err(Error::domain("basis changed between fit and evaluation"));
        }
        let mut rows = Vec::new();
        let mut predictions = Vec::new();
        for (kind, models, data) in [
            (ModelKind::SCnn, &s_cnn, b),
            (ModelKind::TCnn, &t_cnn, b),
            (ModelKind::Ft, &ft, b),
            (ModelKind::MpcaFt, &mpca_ft, &b_hat),
        ] {
            let pred = predict_pair(models, data)?;
            let full = rmse(&pred, &b.labels)?;
            let held = if held_out.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                let p: Vec<_> = held_out.iter().map(|&k| pred[k]).collect();
                let t: Vec<_> = held_out.iter().map(|&k| b.labels[k]).collect();
                rmse(&p, &t)?
            };
            rows.push(RmseRow {
                model: kind,
                full,
                held_out: held,
            });
            for (k, p) in pred.into_iter().enumerate() {
                predictions.push(PredictionRow {
                    model: kind,
                    index: k,
                    group: b.groups[k],
                    truth: b.labels[k],
                    pred: p,
                });
            }
        }
        let note = format!("{} images, {} held out", b.len(), held_out.len());
        Ok(((rows, predictions), note))
    })?;

    Ok(ExperimentReport {
        case_id: cfg.case_id.clone(),
        q_percent: cfg.q_percent,
        seed: cfg.seed,
        metrics_before,
        metrics_after,
        i2: a.image_dims().1,
        p2: fit.p2,
        mpca_cnn_type: mpca_kind,
        mpca_cnn_fallback: fallback,
        basis_fingerprint: fingerprint,
        evaluation_count: b.len(),
        held_out_count: held_out.len(),
        rmse: rows,
        stages: log.records,
        predictions,
    })
}
