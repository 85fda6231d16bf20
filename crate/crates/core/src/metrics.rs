//! Histograms over the normalised value domain and the distances used to audit
//! how close two domains are: directed and symmetric Kullback-Leibler,
//! Jensen-Shannon, chi-squared, Bhattacharyya and the 1-D earth mover's
//! distance. Logarithms are natural; EMD is expressed in bins.

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 200;
pub const DEFAULT_RANGE: (f64, f64) = (-1.0, 1.0);
pub const DEFAULT_EPSILON: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub range: (f64, f64),
    pub probs: Vec<f64>,
    pub smoothing_epsilon: f64,
}

impl Histogram {
    pub fn n_bins(&self) -> usize {
        self.probs.len()
    }

    pub fn bin_width(&self) -> f64 {
        (self.range.1 - self.range.0) / self.n_bins() as f64
    }

    /// Histogram from explicit probabilities (must be nonnegative and sum to 1).
    pub fn from_probs(probs: Vec<f64>, range: (f64, f64)) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::domain("histogram needs at least one bin"));
        }
        if probs.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::domain("histogram probabilities must be finite and nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("histogram probabilities sum to {total}, not 1")));
        }
        Ok(Self {
            range,
            probs,
            smoothing_epsilon: DEFAULT_EPSILON,
        })
    }

    /// Probabilities with `epsilon` added to every bin, renormalised.
    fn smoothed(&self) -> Vec<f64> {
        let eps = self.smoothing_epsilon;
        let total = 1.0 + eps * self.n_bins() as f64;
        self.probs.iter().map(|p| (p + eps) / total).collect()
    }
}

/// Uniform-bin histogram; values outside `range` land in the boundary bins.
pub fn build_histogram(values: &[f64], n_bins: usize, range: (f64, f64)) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::domain("cannot build a histogram of zero values"));
    }
    if n_bins == 0 {
        return Err(Error::domain("n_bins must be >= 1"));
    }
    let (lo, hi) = range;
    if !(lo < hi) {
        return Err(Error::domain(format!("histogram range must have lo < hi, got ({lo}, {hi})")));
    }
    let mut counts = vec![0u64; n_bins];
    let scale = n_bins as f64 / (hi - lo);
    for &x in values {
        if x.is_nan() {
            return Err(Error::domain("NaN in histogram input"));
        }
        let pos = ((x - lo) * scale).floor();
        let bin = if pos < 0.0 {
            0
        } else {
            (pos as usize).min(n_bins - 1)
        };
        counts[bin] += 1;
    }
    let n = values.len() as f64;
    Ok(Histogram {
        range,
        probs: counts.iter().map(|&c| c as f64 / n).collect(),
        smoothing_epsilon: DEFAULT_EPSILON,
    })
}

fn check_binning(a: &Histogram, b: &Histogram) -> Result<()> {
    if a.n_bins() != b.n_bins() || a.range != b.range {
        return Err(Error::shape(format!(
            "histogram binning mismatch: {} bins over {:?} vs {} bins over {:?}",
            a.n_bins(),
            a.range,
            b.n_bins(),
            b.range
        )));
    }
    Ok(())
}

/// `D_KL(ht || hs)` on epsilon-smoothed probabilities.
pub fn kl(ht: &Histogram, hs: &Histogram) -> Result<f64> {
    check_binning(ht, hs)?;
    let t = ht.smoothed();
    let s = hs.smoothed();
    Ok(t.iter()
        .zip(&s)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &q)| p * (p / q).ln())
        .sum())
}

pub fn kl_sym(ht: &Histogram, hs: &Histogram) -> Result<f64> {
    Ok(0.5 * (kl(ht, hs)? + kl(hs, ht)?))
}

/// Jensen-Shannon divergence on raw probabilities.
pub fn jsd(ht: &Histogram, hs: &Histogram) -> Result<f64> {
    check_binning(ht, hs)?;
    let half_kl = |p: f64, m: f64| if p > 0.0 { 0.5 * p * (p / m).ln() } else { 0.0 };
    Ok(ht
        .probs
        .iter()
        .zip(&hs.probs)
        .map(|(&p, &q)| {
            let m = 0.5 * (p + q);
            half_kl(p, m) + half_kl(q, m)
        })
        .sum())
}

pub fn chi2(ht: &Histogram, hs: &Histogram) -> Result<f64> {
    check_binning(ht, hs)?;
    Ok(ht
        .probs
        .iter()
        .zip(&hs.probs)
        .filter(|(&p, &q)| p + q > 0.0)
        .map(|(&p, &q)| (p - q).powi(2) / (p + q))
        .sum())
}

/// `-ln sum sqrt(p q)`; `f64::INFINITY` when the supports are disjoint.
pub fn bhattacharyya(ht: &Histogram, hs: &Histogram) -> Result<f64> {
    check_binning(ht, hs)?;
    let bc: f64 = ht
        .probs
        .iter()
        .zip(&hs.probs)
        .map(|(&p, &q)| (p * q).sqrt())
        .sum();
    if bc == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((-bc.ln()).max(0.0))
}

/// Sum of absolute CDF differences, in bins.
pub fn emd(ht: &Histogram, hs: &Histogram) -> Result<f64> {
    check_binning(ht, hs)?;
    let mut cum = 0.0;
    let mut total = 0.0;
    for (&p, &q) in ht.probs.iter().zip(&hs.probs) {
        cum += p - q;
        total += cum.abs();
    }
    Ok(total)
}

/// The six distances between a source and a target sample. KL is reported in
/// the target-given-source direction `D_KL(H_T || H_S)`, with the reverse kept
/// for asymmetry audits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub kl_t_s: f64,
    pub kl_s_t: f64,
    pub kl_sym: f64,
    pub jsd: f64,
    pub chi2: f64,
    pub bhattacharyya: f64,
    pub emd: f64,
}

impl MetricsReport {
    pub const FIELDS: [&'static str; 7] = ["kl_t_s", "kl_s_t", "kl_sym", "jsd", "chi2", "bhattacharyya", "emd"];

    pub fn from_histograms(ht: &Histogram, hs: &Histogram) -> Result<Self> {
        let kl_t_s = kl(ht, hs)?;
        let kl_s_t = kl(hs, ht)?;
        Ok(Self {
            kl_t_s,
            kl_s_t,
            kl_sym: 0.5 * (kl_t_s + kl_s_t),
            jsd: jsd(ht, hs)?,
            chi2: chi2(ht, hs)?,
            bhattacharyya: bhattacharyya(ht, hs)?,
            emd: emd(ht, hs)?,
        })
    }

    pub fn values(&self) -> [f64; 7] {
        [
            self.kl_t_s,
            self.kl_s_t,
            self.kl_sym,
            self.jsd,
            self.chi2,
            self.bhattacharyya,
            self.emd,
        ]
    }

    /// The six paper-table metrics (directed KL, symmetric KL, JSD, chi2, B, EMD).
    pub fn table_values(&self) -> [(&'static str, f64); 6] {
        [
            ("KL", self.kl_t_s),
            ("KL_sym", self.kl_sym),
            ("JSD", self.jsd),
            ("Chi2", self.chi2),
            ("B", self.bhattacharyya),
            ("EMD", self.emd),
        ]
    }

    pub fn from_values(v: &[f64]) -> Result<Self> {
        if v.len() != 7 {
            return Err(Error::Format(format!("metrics row needs 7 values, got {}", v.len())));
        }
        Ok(Self {
            kl_t_s: v[0],
            kl_s_t: v[1],
            kl_sym: v[2],
            jsd: v[3],
            chi2: v[4],
            bhattacharyya: v[5],
            emd: v[6],
        })
    }

    pub fn csv_header() -> String {
        Self::FIELDS.join(",")
    }

    pub fn csv_row(&self) -> String {
        self.values().iter().map(|&v| crate::io::fmt_real(v)).collect::<Vec<_>>().join(",")
    }

    pub fn kv_block(&self) -> String {
        let mut out = String::new();
        for (k, v) in Self::FIELDS.iter().zip(self.values()) {
            out.push_str(&format!("{k} = {}\n", crate::io::fmt_real(v)));
        }
        out
    }
}

/// Histogram both samples over `[-1, 1]` and compute every distance.
pub fn compute_all(source_values: &[f64], target_values: &[f64], n_bins: usize) -> Result<MetricsReport> {
    let hs = build_histogram(source_values, n_bins, DEFAULT_RANGE)?;
    let ht = build_histogram(target_values, n_bins, DEFAULT_RANGE)?;
    MetricsReport::from_histograms(&ht, &hs)
}
