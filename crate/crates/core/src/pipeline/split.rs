//! Grouped partitioning. Augmented copies of one acquisition share a damage-site
//! group and always land in the same partition, unless the ungrouped mode is
//! requested explicitly.

use rand::seq::SliceRandom;

use super::dataset::DomainDataset;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
    /// Split individual images instead of damage-site groups.
    pub ungrouped: bool,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Result<Self> {
        let s = Self {
            train,
            val,
            test,
            seed,
            ungrouped: false,
        };
        s.validate()?;
        Ok(s)
    }

    /// 70 / 15 / 15, used for training from scratch.
    pub fn training(seed: u64) -> Self {
        Self {
            train: 0.7,
            val: 0.15,
            test: 0.15,
            seed,
            ungrouped: false,
        }
    }

    /// 90 / 5 / 5, used for fine-tuning.
    pub fn finetuning(seed: u64) -> Self {
        Self {
            train: 0.9,
            val: 0.05,
            test: 0.05,
            seed,
            ungrouped: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.val, self.test];
        if f.iter().any(|v| !(*v >= 0.0)) || ((f[0] + f[1]) + f[2] - 1.0).abs() > 1e-12 {
            return Err(Error::config(
                "split",
                format!("fractions must be >= 0 and sum to 1, got {f:?}"),
            ));
        }
        Ok(())
    }

    /// Unit counts: train gets the floor of its share, then each remaining
    /// unit goes to whichever of val/test is furthest below its share (ties to val).
    pub fn counts(&self, units: usize) -> (usize, usize, usize) {
        let u = units as f64;
        let train = ((u * self.train) + 1e-9).floor() as usize;
        let (mut val, mut test) = (0usize, 0usize);
        for _ in train..units {
            let dv = u * self.val - val as f64;
            let dt = u * self.test - test as f64;
            if dv >= dt {
                val += 1;
            } else {
                test += 1;
            }
        }
        (train, val, test)
    }
}

/// Image indices of each partition, each in ascending order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split(ds: &DomainDataset, spec: &SplitSpec) -> Result<Partition> {
    spec.validate()?;
    if ds.len() < 3 && spec.train < 1.0 {
        return Err(Error::domain("need at least 3 images to split"));
    }
    // units are group ids, or image indices in ungrouped mode
    let mut units: Vec<u32> = if spec.ungrouped {
        (0..ds.len() as u32).collect()
    } else {
        let mut g = ds.group_ids();
        g.sort_unstable();
        g
    };
    units.shuffle(&mut seed::rng(seed::derive(spec.seed, "split")));
    let (nt, nv, _) = spec.counts(units.len());
    // an empty test partition is tolerated: small fine-tuning sets round it away
    for (name, frac, n) in [("train", spec.train, nt), ("val", spec.val, nv)] {
        if frac > 0.0 && n == 0 {
            return Err(Error::domain(format!(
                "{} {} too few for a nonempty {name} partition",
                units.len(),
                if spec.ungrouped { "images are" } else { "groups are" }
            )));
        }
    }
    let pick = |chosen: &[u32]| -> Vec<usize> {
        let mut idx: Vec<usize> = if spec.ungrouped {
            chosen.iter().map(|&u| u as usize).collect()
        } else {
            ds.indices_of_groups(chosen)
        };
        idx.sort_unstable();
        idx
    };
    Ok(Partition {
        train: pick(&units[..nt]),
        val: pick(&units[nt..nt + nv]),
        test: pick(&units[nt + nv..]),
    })
}

/// Keeps a seeded random half (rounded up) of the damage-site groups.
pub fn halve_target(ds: &DomainDataset, seed_value: u64) -> Result<DomainDataset> {
    let mut groups = ds.group_ids();
    if groups.len() < 2 {
        return Err(Error::domain("halving needs at least 2 damage-site groups"));
    }
    groups.sort_unstable();
    groups.shuffle(&mut seed::rng(seed::derive(seed_value, "halve")));
    groups.truncate(groups.len().div_ceil(2));
    ds.subset(&ds.indices_of_groups(&groups))
}

/// Per-axis root mean square error in mm.
pub fn rmse(predictions: &[(f64, f64)], truth: &[(f64, f64)]) -> Result<(f64, f64)> {
    if predictions.len() != truth.len() || truth.is_empty() {
        return Err(Error::shape(format!(
            "rmse needs equal nonempty lists, got {} and {}",
            predictions.len(),
            truth.len()
        )));
    }
    let n = truth.len() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for (p, t) in predictions.iter().zip(truth) {
        sx += (p.0 - t.0).powi(2);
        sy += (p.1 - t.1).powi(2);
    }
    Ok(((sx / n).sqrt(), (sy / n).sqrt()))
}
