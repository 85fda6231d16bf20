//! Browser bindings for three small pieces of the pipeline: the excitation and
//! its band-pass filter, component selection by cumulative variance, and the
//! histogram distances between two sampled distributions.
//!
//! Each operation has a plain Rust function (used by the tests) and a
//! `#[wasm_bindgen]` wrapper that hands flat `Float64Array`s to the page.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use tda_core::metrics::{build_histogram, compute_all, DEFAULT_RANGE};
use tda_core::mpca::fit_basis;
use tda_core::seed;
use tda_core::signal::{tone_burst, BandPass, ToneBurstConfig};
use tda_core::tensor::Tensor3;
use wasm_bindgen::prelude::*;

const FS: f64 = 4e6;

/// Burst, its zero-phase filtered copy and the filter magnitude response.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterView {
    pub burst: Vec<f64>,
    pub filtered: Vec<f64>,
    /// `(frequency in kHz, |H|)` pairs from 0 to 500 kHz.
    pub response: Vec<(f64, f64)>,
}

pub fn filter_view(f0_khz: f64, cycles: u32, lo_khz: f64, hi_khz: f64, order: usize) -> Result<FilterView, String> {
    let cfg = ToneBurstConfig {
        f0: f0_khz * 1e3,
        cycles,
        fs: FS,
        n_samples: 400,
        amplitude: 1.0,
    };
    let burst = tone_burst(&cfg).map_err(|e| e.to_string())?;
    let bp = BandPass::butterworth(order, lo_khz * 1e3, hi_khz * 1e3, FS).map_err(|e| e.to_string())?;
    let filtered = bp.filtfilt(&burst);
    let response = (0..=200)
        .map(|k| {
            let f = 2.5e3 * k as f64;
            (f / 1e3, bp.response(2.0 * PI * f / FS).norm())
        })
        .collect();
    Ok(FilterView { burst, filtered, response })
}

/// Spectrum of a seeded low-rank-plus-noise tensor and the components kept at `q`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumView {
    pub spectrum: Vec<f64>,
    pub p2: usize,
    pub retained: f64,
}

pub fn spectrum_view(rank: usize, noise: f64, q: f64, seed_value: u64) -> Result<SpectrumView, String> {
    let (i1, i2, i3) = (4, 48, 12);
    if rank == 0 || rank > i2 {
        return Err(format!("rank must lie in 1..={i2}"));
    }
    let mut rng = seed::rng(seed_value);
    let patterns: Vec<Vec<f64>> = (0..rank).map(|_| (0..i2).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let mut data = Vec::with_capacity(i1 * i2 * i3);
    for _ in 0..i1 * i3 {
        let weights: Vec<f64> = (0..rank).map(|r| rng.gen_range(-1.0..1.0) / (1.0 + r as f64)).collect();
        for c in 0..i2 {
            let clean: f64 = weights.iter().zip(&patterns).map(|(w, p)| w * p[c]).sum();
            data.push(clean + noise * rng.gen_range(-1.0..1.0));
        }
    }
    let t = Tensor3::from_vec((i1, i2, i3), data).map_err(|e| e.to_string())?;
    let b = fit_basis(&t, q, true).map_err(|e| e.to_string())?;
    Ok(SpectrumView {
        p2: b.p2(),
        retained: b.retained_fraction,
        spectrum: b.spectrum,
    })
}

/// Histograms of two seeded normal samples and the distances between them.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsView {
    pub source: Vec<f64>,
    pub target: Vec<f64>,
    /// `kl_t_s, kl_s_t, kl_sym, jsd, chi2, bhattacharyya, emd`.
    pub values: [f64; 7],
}

pub fn metrics_view(shift: f64, spread: f64, bins: usize, seed_value: u64) -> Result<MetricsView, String> {
    let mut rng = seed::rng(seed_value);
    let base = Normal::new(0.0, 0.2).map_err(|e| e.to_string())?;
    let moved = Normal::new(shift, 0.2 * spread).map_err(|e| e.to_string())?;
    let a: Vec<f64> = (0..5000).map(|_| base.sample(&mut rng)).collect();
    let b: Vec<f64> = (0..5000).map(|_| moved.sample(&mut rng)).collect();
    let r = compute_all(&a, &b, bins).map_err(|e| e.to_string())?;
    let h = |v: &[f64]| build_histogram(v, bins, DEFAULT_RANGE).map(|h| h.probs).map_err(|e| e.to_string());
    Ok(MetricsView {
        source: h(&a)?,
        target: h(&b)?,
        values: r.values(),
    })
}

fn js(e: String) -> JsValue {
    JsValue::from_str(&e)
}

/// `[n, burst.., filtered.., f_khz.., |H|..]` with `n` burst samples and 201 response points.
#[wasm_bindgen(js_name = filterView)]
pub fn filter_view_js(f0_khz: f64, cycles: u32, lo_khz: f64, hi_khz: f64, order: usize) -> Result<Vec<f64>, JsValue> {
    let v = filter_view(f0_khz, cycles, lo_khz, hi_khz, order).map_err(js)?;
    let mut out = vec![v.burst.len() as f64];
    out.extend(&v.burst);
    out.extend(&v.filtered);
    out.extend(v.response.iter().map(|p| p.0));
    out.extend(v.response.iter().map(|p| p.1));
    Ok(out)
}

/// `[p2, retained, spectrum..]`.
#[wasm_bindgen(js_name = spectrumView)]
pub fn spectrum_view_js(rank: usize, noise: f64, q: f64, seed_value: u32) -> Result<Vec<f64>, JsValue> {
    let v = spectrum_view(rank, noise, q, u64::from(seed_value)).map_err(js)?;
    let mut out = vec![v.p2 as f64, v.retained];
    out.extend(v.spectrum);
    Ok(out)
}

/// `[7 metric values.., source histogram.., target histogram..]`.
#[wasm_bindgen(js_name = metricsView)]
pub fn metrics_view_js(shift: f64, spread: f64, bins: usize, seed_value: u32) -> Result<Vec<f64>, JsValue> {
    let v = metrics_view(shift, spread, bins, u64::from(seed_value)).map_err(js)?;
    let mut out = v.values.to_vec();
    out.extend(v.source);
    out.extend(v.target);
    Ok(out)
}
