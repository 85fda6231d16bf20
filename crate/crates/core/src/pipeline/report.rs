use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::io::{fmt_real, parse_real};
use crate::metrics::{MetricsReport, DEFAULT_BINS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    SCnn,
    TCnn,
    Ft,
    MpcaFt,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::SCnn, ModelKind::TCnn, ModelKind::Ft, ModelKind::MpcaFt];

    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::SCnn => "S-CNN",
            ModelKind::TCnn => "T-CNN",
            ModelKind::Ft => "FT",
            ModelKind::MpcaFt => "MPCA-FT",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| Error::Format(format!("unknown model label `{s}`")))
    }
}

/// Per-axis RMSE (mm) of one model pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmseRow {
    pub model: ModelKind,
    /// Over the full target domain.
    pub full: (f64, f64),
    /// Over target images whose damage sites were never used for training or fine-tuning.
    pub held_out: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageRecord {
    pub step: u8,
    pub name: String,
    pub seed: u64,
    pub seconds: f64,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRow {
    pub model: ModelKind,
    pub index: usize,
    pub group: u32,
    pub truth: (f64, f64),
    pub pred: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub case_id: String,
    pub q_percent: f64,
    pub seed: u64,
    pub metrics_before: MetricsReport,
    pub metrics_after: MetricsReport,
    pub i2: usize,
    pub p2: usize,
    /// Architecture trained on projected data (2 or 3).
    pub mpca_cnn_type: u8,
    /// True when the Type-2 chain did not fit the projected width.
    pub mpca_cnn_fallback: bool,
    pub basis_fingerprint: u64,
    pub evaluation_count: usize,
    pub held_out_count: usize,
    pub rmse: Vec<RmseRow>,
    /// Timings are informational and excluded from the CSV and text reports.
    pub stages: Vec<StageRecord>,
    pub predictions: Vec<PredictionRow>,
}

impl ExperimentReport {
    pub fn rmse_of(&self, model: ModelKind) -> Option<&RmseRow> {
        self.rmse.iter().find(|r| r.model == model)
    }

    /// Flat `section,name,field,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,name,field,value\n");
        let mut row = |section: &str, name: &str, field: &str, value: String| {
            let _ = writeln!(out, "{section},{name},{field},{value}");
        };
        row("case", "", "id", self.case_id.clone());
        row("case", "", "q_percent", fmt_real(self.q_percent));
        row("case", "", "seed", self.seed.to_string());
        row("dims", "", "i2", self.i2.to_string());
        row("dims", "", "p2", self.p2.to_string());
        row("dims", "", "evaluation_count", self.evaluation_count.to_string());
        row("dims", "", "held_out_count", self.held_out_count.to_string());
        row("mpca", "", "cnn_type", self.mpca_cnn_type.to_string());
        row("mpca", "", "cnn_fallback", u8::from(self.mpca_cnn_fallback).to_string());
        row("mpca", "", "basis_fingerprint", format!("{:016x}", self.basis_fingerprint));
        for (section, m) in [("metrics_before", &self.metrics_before), ("metrics_after", &self.metrics_after)] {
            for (f, v) in MetricsReport::FIELDS.iter().zip(m.values()) {
                row(section, "", f, fmt_real(v));
            }
        }
        for r in &self.rmse {
            row("rmse_full", r.model.label(), "x", fmt_real(r.full.0));
            row("rmse_full", r.model.label(), "y", fmt_real(r.full.1));
            row("rmse_held_out", r.model.label(), "x", fmt_real(r.held_out.0));
            row("rmse_held_out", r.model.label(), "y", fmt_real(r.held_out.1));
        }
        out
    }

    /// Parses `to_csv` output; stages and predictions come back empty.
    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |line: &str| Error::Format(format!("bad report row `{line}`"));
        let mut lines = text.lines();
        if lines.next() != Some("section,name,field,value") {
            return Err(Error::Format("report CSV header missing".into()));
        }
        let mut r = ExperimentReport {
            case_id: String::new(),
            q_percent: f64::NAN,
            seed: 0,
            metrics_before: MetricsReport::from_values(&[0.0; 7])?,
            metrics_after: MetricsReport::from_values(&[0.0; 7])?,
            i2: 0,
            p2: 0,
            mpca_cnn_type: 0,
            mpca_cnn_fallback: false,
            basis_fingerprint: 0,
            evaluation_count: 0,
            held_out_count: 0,
            rmse: Vec::new(),
            stages: Vec::new(),
            predictions: Vec::new(),
        };
        let mut before = [f64::NAN; 7];
        let mut after = [f64::NAN; 7];
        for line in lines.filter(|l| !l.is_empty()) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(bad(line));
            }
            let (section, name, field, value) = (cols[0], cols[1], cols[2], cols[3]);
            let real = || parse_real(value).ok_or_else(|| bad(line));
            let int = || value.parse::<usize>().map_err(|_| bad(line));
            match (section, field) {
                ("case", "id") => r.case_id = value.to_string(),
                ("case", "q_percent") => r.q_percent = real()?,
                ("case", "seed") => r.seed = value.parse().map_err(|_| bad(line))?,
                ("dims", "i2") => r.i2 = int()?,
                ("dims", "p2") => r.p2 = int()?,
                ("dims", "evaluation_count") => r.evaluation_count = int()?,
                ("dims", "held_out_count") => r.held_out_count = int()?,
                ("mpca", "cnn_type") => r.mpca_cnn_type = value.parse().map_err(|_| bad(line))?,
                ("mpca", "cnn_fallback") => r.mpca_cnn_fallback = value == "1",
                ("mpca", "basis_fingerprint") => {
                    r.basis_fingerprint = u64::from_str_radix(value, 16).map_err(|_| bad(line))?
                }
                ("metrics_before" | "metrics_after", f) => {
                    let k = MetricsReport::FIELDS.iter().position(|x| *x == f).ok_or_else(|| bad(line))?;
                    let target = if section == "metrics_before" { &mut before } else { &mut after };
                    target[k] = real()?;
                }
                ("rmse_full" | "rmse_held_out", axis @ ("x" | "y")) => {
                    let model = ModelKind::parse(name)?;
                    let v = real()?;
                    let pos = match r.rmse.iter().position(|row| row.model == model) {
                        Some(p) => p,
                        None => {
                            r.rmse.push(RmseRow {
                                model,
                                full: (f64::NAN, f64::NAN),
                                held_out: (f64::NAN, f64::NAN),
                            });
                            r.rmse.len() - 1
                        }
                    };
                    let slot = if section == "rmse_full" { &mut r.rmse[pos].full } else { &mut r.rmse[pos].held_out };
                    if axis == "x" {
                        slot.0 = v;
                    } else {
                        slot.1 = v;
                    }
                }
                _ => return Err(bad(line)),
            }
        }
        r.metrics_before = MetricsReport::from_values(&before)?;
        r.metrics_after = MetricsReport::from_values(&after)?;
        Ok(r)
    }

    /// Metric and RMSE tables for reading.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "case: {}  (Q = {}%, seed = {})", self.case_id, self.q_percent, self.seed);
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "Statistical metrics between source A and reduced target C ({DEFAULT_BINS} bins over [-1, 1])"
        );
        let _ = writeln!(out, "{:<8} {:>24} {:>24}", "metric", "before MPCA", "after MPCA");
        for ((name, b), (_, a)) in self.metrics_before.table_values().iter().zip(self.metrics_after.table_values()) {
            let _ = writeln!(out, "{:<8} {:>24} {:>24}", name, fmt_real(*b), fmt_real(a));
        }
        let _ = writeln!(
            out,
            "{:<8} {:>24} {:>24}",
            "KL(S|T)",
            fmt_real(self.metrics_before.kl_s_t),
            fmt_real(self.metrics_after.kl_s_t)
        );
        let _ = writeln!(out, "KL is D(H_T || H_S); EMD is in bins (bin width 0.01).");
        let _ = writeln!(
            out,
            "Before MPCA the histograms are over pixel values; after MPCA over projected values divided by their joint max-abs."
        );
        let _ = writeln!(out);
        let _ = writeln!(out, "Columns: {} -> {} after MPCA", self.i2, self.p2);
        let _ = writeln!(
            out,
            "Network on projected data: Type-{}{}",
            self.mpca_cnn_type,
            if self.mpca_cnn_fallback { " (Type-2 chain underflowed, fell back)" } else { "" }
        );
        let _ = writeln!(out, "Basis fingerprint: {:016x}", self.basis_fingerprint);
        for (title, count, held) in [
            ("full target domain B", self.evaluation_count, false),
            ("target images of damage sites not in C", self.held_out_count, true),
        ] {
            let _ = writeln!(out);
            let _ = writeln!(out, "RMSE (mm) on the {title} (n = {count})");
            let _ = writeln!(out, "{:<8} {:>24} {:>24}", "model", "x", "y");
            for r in &self.rmse {
                let v = if held { r.held_out } else { r.full };
                let _ = writeln!(out, "{:<8} {:>24} {:>24}", r.model.label(), fmt_real(v.0), fmt_real(v.1));
            }
        }
        out
    }

    pub fn predictions_csv(&self) -> String {
        let mut out = String::from("model,index,group,true_x,true_y,pred_x,pred_y\n");
        for p in &self.predictions {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                p.model.label(),
                p.index,
                p.group,
                fmt_real(p.truth.0),
                fmt_real(p.truth.1),
                fmt_real(p.pred.0),
                fmt_real(p.pred.1)
            );
        }
        out
    }

    pub fn stage_log(&self) -> String {
        let mut out = String::from("step,stage,seed,seconds,note\n");
        for s in &self.stages {
            let _ = writeln!(out, "{},{},{:016x},{:.3},{}", s.step, s.name, s.seed, s.seconds, s.note);
        }
        out
    }
}
