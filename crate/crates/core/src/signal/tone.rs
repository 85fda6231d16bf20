use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Hann-windowed tone burst excitation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToneBurstConfig {
    /// Carrier frequency in Hz.
    pub f0: f64,
    pub cycles: u32,
    /// Sampling frequency in Hz.
    pub fs: f64,
    pub n_samples: usize,
    pub amplitude: f64,
}

impl Default for ToneBurstConfig {
    fn default() -> Self {
        Self {
            f0: 150e3,
            cycles: 5,
            fs: 4e6,
            n_samples: 1321,
            amplitude: 1.0,
        }
    }
}

impl ToneBurstConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.f0 > 0.0 && self.fs > 0.0 && self.cycles >= 1 && self.amplitude.is_finite()) {
            return Err(Error::domain("tone burst needs positive f0, fs and cycles"));
        }
        if self.f0 >= self.fs / 2.0 {
            return Err(Error::domain(format!(
                "carrier {} Hz is not below Nyquist {} Hz",
                self.f0,
                self.fs / 2.0
            )));
        }
        if f64::from(self.cycles) * self.fs / self.f0 > self.n_samples as f64 {
            return Err(Error::domain(format!(
                "burst of {} cycles does not fit in {} samples",
                self.cycles, self.n_samples
            )));
        }
        Ok(())
    }

    /// Burst length in seconds.
    pub fn duration(&self) -> f64 {
        f64::from(self.cycles) / self.f0
    }

    /// Continuous-time burst value at `t` seconds after onset; zero outside the burst.
    #[inline]
    pub fn value_at(&self, t: f64) -> f64 {
        if t <= 0.0 || t >= self.duration() {
            return 0.0;
        }
        let window = 0.5 * (1.0 - (2.0 * PI * self.f0 * t / f64::from(self.cycles)).cos());
        self.amplitude * window * (2.0 * PI * self.f0 * t).sin()
    }
}

/// `n_samples` of the burst starting at sample 0.
pub fn tone_burst(cfg: &ToneBurstConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    Ok((0..cfg.n_samples)
        .map(|n| cfg.value_at(n as f64 / cfg.fs))
        .collect())
}
