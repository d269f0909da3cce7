//! Per-channel min-max scaling fitted on training cycles only.

use serde::{Deserialize, Serialize};

use super::CycleRecord;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub channels: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Fits min and max of each selected channel over `train`.
pub fn fit_scaler(train: &[&CycleRecord], channels: &[String]) -> Result<FeatureScaler> {
    if train.is_empty() {
        return Err(Error::invalid("cannot fit a scaler on zero cycles"));
    }
    let mut min = vec![f64::INFINITY; channels.len()];
    let mut max = vec![f64::NEG_INFINITY; channels.len()];
    for cycle in train {
        for (k, name) in channels.iter().enumerate() {
            for &v in cycle.channel(name)? {
                min[k] = min[k].min(v);
                max[k] = max[k].max(v);
            }
        }
    }
    Ok(FeatureScaler {
        channels: channels.to_vec(),
        min,
        max,
    })
}

impl FeatureScaler {
    pub fn scale_value(&self, channel: usize, v: f64) -> f64 {
        let span = self.max[channel] - self.min[channel];
        if span > 0.0 {
            (v - self.min[channel]) / span
        } else {
            0.0
        }
    }

    /// Copy of `cycle` with the scaler's channels mapped by `(v - min) / (max - min)`;
    /// constant channels map to 0.
    pub fn apply(&self, cycle: &CycleRecord) -> Result<CycleRecord> {
        let mut out = cycle.clone();
        for (k, name) in self.channels.iter().enumerate() {
            let series = out.channels.get_mut(name).ok_or_else(|| {
                Error::Data(format!("cycle {} has no channel `{name}`", cycle.cycle_index))
            })?;
            for v in series.iter_mut() {
                *v = self.scale_value(k, *v);
            }
        }
        Ok(out)
    }

    pub fn apply_all(&self, cycles: &[CycleRecord]) -> Result<Vec<CycleRecord>> {
        cycles.iter().map(|c| self.apply(c)).collect()
    }
}
