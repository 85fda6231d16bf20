//! Digital Butterworth band-pass design (bilinear transform with pre-warping)
//! as a cascade of second-order sections, applied forward and backward.

use std::f64::consts::PI;

use nalgebra::Complex;

use crate::error::{Error, Result};

/// Direct-form II transposed biquad, `a0` normalised to 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Steady-state delay line for a unit step input.
    fn step_state(&self) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let y = (b0 + b1 + b2) / (1.0 + a1 + a2);
        let z2 = b2 - a2 * y;
        let z1 = b1 - a1 * y + z2;
        [z1, z2]
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    fn response(&self, omega: f64) -> Complex<f64> {
        let z1 = Complex::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        let num = self.b[0] + z1 * self.b[1] + z2 * self.b[2];
        let den = Complex::new(1.0, 0.0) + z1 * self.a[0] + z2 * self.a[1];
        num / den
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BandPass {
    pub sections: Vec<Biquad>,
}

impl BandPass {
    /// Order-`order` analog prototype mapped to a band-pass (`2 * order` poles).
    pub fn butterworth(order: usize, lo: f64, hi: f64, fs: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::domain("filter order must be >= 1"));
        }
        if !(0.0 < lo && lo < hi && hi < fs / 2.0) {
            return Err(Error::domain(format!(
                "invalid band: need 0 < {lo} < {hi} < {}",
                fs / 2.0
            )));
        }
        let w1 = 2.0 * fs * (PI * lo / fs).tan();
        let w2 = 2.0 * fs * (PI * hi / fs).tan();
        let bw = w2 - w1;
        let w0 = (w1 * w2).sqrt();
        let k = 2.0 * fs;

        let mut sections = Vec::with_capacity(order);
        for i in 0..order {
            let theta = PI / 2.0 + PI * (2 * i + 1) as f64 / (2 * order) as f64;
            let p = Complex::from_polar(1.0, theta);
            let half = p * (bw / 2.0);
            let disc = (half * half - w0 * w0).sqrt();
            // each prototype pole yields two band-pass poles; the upper-half-plane
            // one of each conjugate pair defines a section
            for s in [half + disc, half - disc] {
                if s.im <= 0.0 {
                    continue;
                }
                let z = (k + s) / (k - s);
                sections.push(Biquad {
                    b: [1.0, 0.0, -1.0],
                    a: [-2.0 * z.re, z.norm_sqr()],
                });
            }
        }
        if sections.len() != order {
            return Err(Error::domain("band too wide for a complex-pole band-pass design"));
        }
        let mut filter = BandPass { sections };
        let centre = 2.0 * (w0 / k).atan();
        let g = filter.response(centre).norm();
        for b in filter.sections[0].b.iter_mut() {
            *b /= g;
        }
        Ok(filter)
    }

    /// Complex frequency response at `omega` radians per sample.
    pub fn response(&self, omega: f64) -> Complex<f64> {
        self.sections
            .iter()
            .fold(Complex::new(1.0, 0.0), |acc, s| acc * s.response(omega))
    }

    fn run(&self, x: &mut [f64], x0: f64) {
        let mut gain = 1.0;
        for s in &self.sections {
            let [z1i, z2i] = s.step_state();
            let (mut z1, mut z2) = (z1i * x0 * gain, z2i * x0 * gain);
            gain *= s.dc_gain();
            for v in x.iter_mut() {
                let input = *v;
                let y = s.b[0] * input + z1;
                z1 = s.b[1] * input - s.a[0] * y + z2;
                z2 = s.b[2] * input - s.a[1] * y;
                *v = y;
            }
        }
    }

    /// Zero-phase forward-backward filtering with odd-extension padding and
    /// steady-state initial conditions.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=pad {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        let x0 = ext[0];
        self.run(&mut ext, x0);
        ext.reverse();
        let y0 = ext[0];
        self.run(&mut ext, y0);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Zero-phase Butterworth band-pass.
pub fn butterworth_bandpass(x: &[f64], lo: f64, hi: f64, order: usize, fs: f64) -> Result<Vec<f64>> {
    Ok(BandPass::butterworth(order, lo, hi, fs)?.filtfilt(x))
}
