//! Plate geometry and the synthetic pitch-catch acquisition model.
//!
//! Each actuator-to-sensor path carries a direct arrival, one first-order edge
//! reflection and, when damage is present, a scattered arrival through the
//! damage site. Every arrival is the tone burst delayed by `path / velocity`
//! and scaled by `exp(-alpha * path) / sqrt(max(path, 1))`.

use rand_distr::{Distribution, Normal};

use super::filter::BandPass;
use super::tone::ToneBurstConfig;
use crate::error::{Error, Result};
use crate::seed;

pub const PLATE_DIMS: (f64, f64) = (200.0, 300.0);

/// Transducer coordinates (mm): PZT1..PZT14.
pub const TRANSDUCERS: [(u32, f64, f64); 14] = [
    (1, 100.0, 230.0),
    (2, 43.0, 207.0),
    (3, 20.0, 150.0),
    (4, 43.0, 94.0),
    (5, 100.0, 70.0),
    (6, 157.0, 94.0),
    (7, 180.0, 150.0),
    (8, 157.0, 207.0),
    (9, 20.0, 30.0),
    (10, 20.0, 270.0),
    (11, 100.0, 270.0),
    (12, 180.0, 270.0),
    (13, 180.0, 30.0),
    (14, 100.0, 30.0),
];

/// Pseudo-damage coordinates (mm): D1..D32.
pub const DAMAGE_SITES: [(u32, f64, f64); 32] = [
    (1, 35.0, 255.0),
    (2, 65.0, 255.0),
    (3, 125.0, 255.0),
    (4, 155.0, 255.0),
    (5, 35.0, 225.0),
    (6, 65.0, 225.0),
    (7, 125.0, 225.0),
    (8, 155.0, 225.0),
    (9, 65.0, 195.0),
    (10, 95.0, 195.0),
    (11, 125.0, 195.0),
    (12, 35.0, 165.0),
    (13, 65.0, 165.0),
    (14, 95.0, 165.0),
    (15, 125.0, 165.0),
    (16, 155.0, 165.0),
    (17, 35.0, 135.0),
    (18, 65.0, 135.0),
    (19, 95.0, 135.0),
    (20, 125.0, 135.0),
    (21, 155.0, 135.0),
    (22, 65.0, 105.0),
    (23, 95.0, 105.0),
    (24, 125.0, 105.0),
    (25, 35.0, 75.0),
    (26, 65.0, 75.0),
    (27, 125.0, 75.0),
    (28, 155.0, 75.0),
    (29, 35.0, 45.0),
    (30, 65.0, 45.0),
    (31, 125.0, 45.0),
    (32, 155.0, 45.0),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Network {
    Circular,
    Rectangular,
}

impl Network {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "circular" => Ok(Network::Circular),
            "rectangular" => Ok(Network::Rectangular),
            other => Err(Error::config("network", format!("unknown network tag `{other}` (expected circular|rectangular)"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Network::Circular => "circular",
            Network::Rectangular => "rectangular",
        }
    }

    /// Transducer ids in acquisition order.
    pub fn transducer_ids(&self) -> Vec<u32> {
        match self {
            Network::Circular => (1..=8).collect(),
            Network::Rectangular => vec![3, 7, 9, 10, 11, 12, 13, 14],
        }
    }

    /// Damage-site ids inspected with this network.
    pub fn damage_ids(&self) -> Vec<u32> {
        match self {
            Network::Circular => (9..=24).collect(),
            Network::Rectangular => (1..=32).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub id: u32,
    pub x: f64,
    pub y: f64,
}

impl Point {
    fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A plate made of one synthetic "material" with its transducers and damage sites.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateScenario {
    pub material: String,
    pub plate_dims: (f64, f64),
    pub sensors: Vec<Point>,
    pub damage_sites: Vec<Point>,
    /// mm per microsecond.
    pub group_velocity: f64,
    /// Amplitude attenuation per mm.
    pub attenuation: f64,
    pub scatter_amplitude: f64,
    pub boundary_reflection: f64,
    /// Standard deviation of the per-repeat measurement noise.
    pub acquisition_noise: f64,
    /// Acquisitions per path, median-stacked.
    pub repeats: usize,
    pub tone: ToneBurstConfig,
    pub filter_band: (f64, f64),
    pub filter_order: usize,
    pub rng_seed: u64,
}

impl PlateScenario {
    /// Plate with the full transducer and damage tables and the given wave speed (mm/us) and attenuation (1/mm).
    pub fn new(material: &str, group_velocity: f64, attenuation: f64, rng_seed: u64) -> Self {
        let pt = |&(id, x, y): &(u32, f64, f64)| Point { id, x, y };
        Self {
            material: material.to_string(),
            plate_dims: PLATE_DIMS,
            sensors: TRANSDUCERS.iter().map(pt).collect(),
            damage_sites: DAMAGE_SITES.iter().map(pt).collect(),
            group_velocity,
            attenuation,
            scatter_amplitude: 0.5,
            boundary_reflection: 0.4,
            acquisition_noise: 0.002,
            repeats: 20,
            tone: ToneBurstConfig::default(),
            filter_band: (50e3, 250e3),
            filter_order: 4,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tone.validate()?;
        let (w, h) = self.plate_dims;
        for p in self.sensors.iter().chain(&self.damage_sites) {
            if !(0.0..=w).contains(&p.x) || !(0.0..=h).contains(&p.y) {
                return Err(Error::domain(format!("point {} at ({}, {}) lies outside the plate", p.id, p.x, p.y)));
            }
        }
        if !(self.group_velocity > 0.0) {
            return Err(Error::domain("group_velocity must be positive"));
        }
        if !(self.attenuation >= 0.0) {
            return Err(Error::domain("attenuation must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.scatter_amplitude) {
            return Err(Error::domain("scatter_amplitude must lie in [0, 1]"));
        }
        if !(self.acquisition_noise >= 0.0) || self.repeats == 0 {
            return Err(Error::domain("acquisition noise must be >= 0 and repeats >= 1"));
        }
        Ok(())
    }

    pub fn sensor(&self, id: u32) -> Result<Point> {
        self.sensors
            .iter()
            .find(|p| p.id == id)
            .copied()
            .ok_or_else(|| Error::domain(format!("unknown transducer id {id}")))
    }

    pub fn damage(&self, id: u32) -> Result<Point> {
        self.damage_sites
            .iter()
            .find(|p| p.id == id)
            .copied()
            .ok_or_else(|| Error::domain(format!("unknown damage id {id}")))
    }

    fn samples_per_mm(&self) -> f64 {
        // mm / (mm/us) = us
        self.tone.fs * 1e-6 / self.group_velocity
    }

    fn add_arrival(&self, out: &mut [f64], path: f64, scale: f64) {
        let gain = scale * (-self.attenuation * path).exp() / path.max(1.0).sqrt();
        if gain == 0.0 {
            return;
        }
        let delay = path * self.samples_per_mm();
        let width = self.tone.duration() * self.tone.fs;
        let first = delay.floor().max(0.0) as usize;
        let last = ((delay + width).ceil() as usize).min(out.len());
        for (n, o) in out.iter_mut().enumerate().take(last).skip(first) {
            *o += gain * self.tone.value_at((n as f64 - delay) / self.tone.fs);
        }
    }

    /// Shortest actuator -> edge -> sensor path (mirror-image construction).
    fn edge_path(&self, a: &Point, s: &Point) -> f64 {
        let (w, h) = self.plate_dims;
        [
            (a.x + s.x).hypot(a.y - s.y),
            (2.0 * w - a.x - s.x).hypot(a.y - s.y),
            (a.x - s.x).hypot(a.y + s.y),
            (a.x - s.x).hypot(2.0 * h - a.y - s.y),
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min)
    }
}

/// Noise-free received series at every other transducer of `network` for one
/// actuator, in transducer order. `damage_id = None` is the healthy plate.
pub fn synth_acquisition(
    scenario: &PlateScenario,
    network: Network,
    damage_id: Option<u32>,
    actuator_id: u32,
) -> Result<Vec<(u32, Vec<f64>)>> {
    let ids = network.transducer_ids();
    if !ids.contains(&actuator_id) {
        return Err(Error::domain(format!(
            "transducer {actuator_id} is not part of the {} network",
            network.as_str()
        )));
    }
    let act = scenario.sensor(actuator_id)?;
    let damage = damage_id.map(|id| scenario.damage(id)).transpose()?;
    let n = scenario.tone.n_samples;
    let mut out = Vec::with_capacity(ids.len() - 1);
    for &sid in ids.iter().filter(|&&id| id != actuator_id) {
        let sens = scenario.sensor(sid)?;
        let mut series = vec![0.0; n];
        scenario.add_arrival(&mut series, act.dist(&sens), 1.0);
        scenario.add_arrival(&mut series, scenario.edge_path(&act, &sens), scenario.boundary_reflection);
        if let Some(d) = damage {
            let path = act.dist(&d) + d.dist(&sens);
            scenario.add_arrival(&mut series, path, scenario.scatter_amplitude);
        }
        out.push((sid, series));
    }
    Ok(out)
}

/// Elementwise median (mean of the middle two for an even count).
pub fn median_stack(repeats: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = repeats
        .first()
        .ok_or_else(|| Error::domain("median of zero series"))?;
    let n = first.len();
    if repeats.iter().any(|r| r.len() != n) {
        return Err(Error::shape("median_stack: series lengths differ"));
    }
    let m = repeats.len();
    let mut column = vec![0.0; m];
    Ok((0..n)
        .map(|i| {
            for (c, r) in column.iter_mut().zip(repeats) {
                *c = r[i];
            }
            column.sort_by(f64::total_cmp);
            if m % 2 == 1 {
                column[m / 2]
            } else {
                0.5 * (column[m / 2 - 1] + column[m / 2])
            }
        })
        .collect())
}

/// All pitch-catch series of one acquisition, indexed `(actuator, sensor slot)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalSet {
    pub n_act: usize,
    pub n_sens: usize,
    pub n_samples: usize,
    series: Vec<Vec<f64>>,
}

impl SignalSet {
    pub fn new(n_act: usize, n_sens: usize, series: Vec<Vec<f64>>) -> Result<Self> {
        if series.len() != n_act * n_sens || series.is_empty() {
            return Err(Error::shape(format!(
                "signal set needs {} series, got {}",
                n_act * n_sens,
                series.len()
            )));
        }
        let n_samples = series[0].len();
        if series.iter().any(|s| s.len() != n_samples) {
            return Err(Error::shape("signal set series lengths differ"));
        }
        if series.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite sample in signal set"));
        }
        Ok(Self {
            n_act,
            n_sens,
            n_samples,
            series,
        })
    }

    pub fn series(&self, act: usize, sens: usize) -> &[f64] {
        &self.series[act * self.n_sens + sens]
    }

    pub fn max_abs(&self) -> f64 {
        self.series.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn energy(&self) -> f64 {
        self.series.iter().flatten().map(|v| v * v).sum()
    }
}

/// One complete acquisition: every actuator of `network`, `repeats` noisy copies
/// per path median-stacked, then band-pass filtered.
pub fn acquire(scenario: &PlateScenario, network: Network, damage_id: Option<u32>) -> Result<SignalSet> {
    scenario.validate()?;
    let filter = BandPass::butterworth(
        scenario.filter_order,
        scenario.filter_band.0,
        scenario.filter_band.1,
        scenario.tone.fs,
    )?;
    let ids = network.transducer_ids();
    let noise = Normal::new(0.0, scenario.acquisition_noise).map_err(|e| Error::domain(e.to_string()))?;
    let mut all = Vec::with_capacity(ids.len() * (ids.len() - 1));
    for &act in &ids {
        for (sid, clean) in synth_acquisition(scenario, network, damage_id, act)? {
            let stacked = if scenario.acquisition_noise > 0.0 {
                let stream = seed::derive_indexed(
                    scenario.rng_seed,
                    "acquisition",
                    &[u64::from(damage_id.unwrap_or(0)), u64::from(act), u64::from(sid)],
                );
                let mut rng = seed::rng(stream);
                let repeats: Vec<Vec<f64>> = (0..scenario.repeats)
                    .map(|_| clean.iter().map(|v| v + noise.sample(&mut rng)).collect())
                    .collect();
                median_stack(&repeats)?
            } else {
                clean
            };
            all.push(filter.filtfilt(&stacked));
        }
    }
    SignalSet::new(ids.len(), ids.len() - 1, all)
}
