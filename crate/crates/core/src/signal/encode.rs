//! Grayscale encoding of pitch-catch signal sets and noise augmentation.

use rand::Rng;
use rand_distr::StandardNormal;

use super::synth::{acquire, Network, PlateScenario, SignalSet};
use crate::error::{Error, Result};
use crate::pipeline::{DomainDataset, Stage};
use crate::tensor::{Matrix, Tensor3};
use crate::{par, seed};

pub const SNR_MIN_DB: f64 = 20.0;
pub const SNR_MAX_DB: f64 = 40.0;

/// `n_sens x (n_act * n_samples)` image; row `j` is sensor slot `j`, column
/// block `i` is actuator `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayscaleImage {
    pub values: Matrix,
    pub n_samples: usize,
    /// Damage position in mm.
    pub label: (f64, f64),
}

impl GrayscaleImage {
    pub fn n_act(&self) -> usize {
        self.values.cols() / self.n_samples
    }

    /// Series of actuator `act` at sensor slot `sens`, as stored.
    pub fn block(&self, act: usize, sens: usize) -> &[f64] {
        let start = act * self.n_samples;
        &self.values.row(sens)[start..start + self.n_samples]
    }

    pub fn power(&self) -> f64 {
        let v = self.values.as_slice();
        v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64
    }
}

pub fn encode_grayscale(sigset: &SignalSet, normalizer: f64, label: (f64, f64)) -> Result<GrayscaleImage> {
    if !(normalizer > 0.0 && normalizer.is_finite()) {
        return Err(Error::domain(format!("normalizer must be positive, got {normalizer}")));
    }
    let n = sigset.n_samples;
    let cols = sigset.n_act * n;
    let mut data = vec![0.0; sigset.n_sens * cols];
    for act in 0..sigset.n_act {
        for sens in 0..sigset.n_sens {
            let dst = &mut data[sens * cols + act * n..sens * cols + (act + 1) * n];
            for (d, &s) in dst.iter_mut().zip(sigset.series(act, sens)) {
                *d = (s / normalizer).clamp(-1.0, 1.0);
            }
        }
    }
    Ok(GrayscaleImage {
        values: Matrix::from_vec(sigset.n_sens, cols, data)?,
        n_samples: n,
        label,
    })
}

/// `copies` noisy versions of `img`. Copy `c` draws its SNR uniformly from
/// `[snr_min_db, snr_max_db]` and its noise from stream `(seed, c)`.
pub fn augment(
    img: &GrayscaleImage,
    copies: usize,
    snr_min_db: f64,
    snr_max_db: f64,
    seed: u64,
) -> Result<Vec<GrayscaleImage>> {
    if copies == 0 {
        return Err(Error::domain("copies must be >= 1"));
    }
    if !(snr_min_db.is_finite() && snr_max_db.is_finite() && snr_min_db <= snr_max_db) {
        return Err(Error::domain(format!("invalid SNR bounds [{snr_min_db}, {snr_max_db}]")));
    }
    let p_signal = img.power();
    if p_signal == 0.0 {
        return Err(Error::domain("SNR is undefined for a zero-signal image"));
    }
    par::map_range(copies, |c| {
        let mut rng = seed::rng(seed::derive_indexed(seed, "copy", &[c as u64]));
        let snr = if snr_max_db > snr_min_db {
            rng.gen_range(snr_min_db..=snr_max_db)
        } else {
            snr_min_db
        };
        let sigma = (p_signal / 10f64.powf(snr / 10.0)).sqrt();
        let data: Vec<f64> = img
            .values
            .as_slice()
            .iter()
            .map(|&v| {
                let e: f64 = rng.sample(StandardNormal);
                (v + sigma * e).clamp(-1.0, 1.0)
            })
            .collect();
        Ok(GrayscaleImage {
            values: Matrix::from_vec(img.values.rows(), img.values.cols(), data)?,
            n_samples: img.n_samples,
            label: img.label,
        })
    })
    .into_iter()
    .collect()
}

/// One augmented image set per damage site of `network`. Images are scaled by
/// the max-abs over all clean acquisitions of the domain.
pub fn build_domain(scenario: &PlateScenario, network: Network, copies: usize) -> Result<DomainDataset> {
    if copies == 0 {
        return Err(Error::domain("copies must be >= 1"));
    }
    let sites = network.damage_ids();
    let sets = par::map(&sites, |&id| acquire(scenario, network, Some(id)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let normalizer = sets.iter().fold(0.0f64, |m, s| m.max(s.max_abs()));
    if normalizer == 0.0 {
        return Err(Error::domain("all acquisitions are zero"));
    }

    let (rows, cols) = (sets[0].n_sens, sets[0].n_act * sets[0].n_samples);
    let mut data = Vec::with_capacity(sites.len() * copies * rows * cols);
    let mut labels = Vec::with_capacity(sites.len() * copies);
    let mut groups = Vec::with_capacity(sites.len() * copies);
    for (&id, set) in sites.iter().zip(&sets) {
        let d = scenario.damage(id)?;
        let img = encode_grayscale(set, normalizer, (d.x, d.y))?;
        let stream = seed::derive_indexed(scenario.rng_seed, "augment", &[u64::from(id)]);
        for copy in augment(&img, copies, SNR_MIN_DB, SNR_MAX_DB, stream)? {
            data.extend_from_slice(copy.values.as_slice());
            labels.push(copy.label);
            groups.push(id);
        }
    }
    DomainDataset::new(
        Tensor3::from_vec((rows, cols, labels.len()), data)?,
        labels,
        groups,
        &scenario.material,
        network,
        Stage::Raw,
    )
}
