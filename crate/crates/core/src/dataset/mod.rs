//! Cycle data: canonical CSV ingestion, capacity labeling, scaling, padding,
//! experiment splits and a synthetic degradation generator.

mod batch;
mod canonical;
mod labeling;
mod scaler;
mod split;
mod synth;

use indexmap::IndexMap;

pub use batch::{PaddedBatch, Sequence};
pub use canonical::{apply_labels_file, load_canonical, load_many, save_canonical, write_canonical};
pub use labeling::{
    compute_soh, coulomb_count, label_by_coulomb_counting, reference_block_capacity,
    remove_capacity_outliers, Segment, HAMPEL_WINDOW,
};
pub use scaler::{fit_scaler, FeatureScaler};
pub use split::{split_leave_one_battery_out, Splits};
pub use synth::{benchmark_splits, faded_capacity, synth_benchmark, synth_degradation, SynthConfig, NUISANCE_CHANNEL};

use crate::error::{Error, Result};

/// One charge/discharge cycle: timestamps in seconds and named channels of
/// equal length, plus the capacity label (Ah) once known.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleRecord {
    pub cycle_index: usize,
    pub timestamps: Vec<f64>,
    pub channels: IndexMap<String, Vec<f64>>,
    pub capacity_label: Option<f64>,
    /// Fraction of nominal capacity.
    pub soh: Option<f64>,
}

impl CycleRecord {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn channel(&self, name: &str) -> Result<&[f64]> {
        self.channels
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| {
                Error::Data(format!(
                    "cycle {} has no channel `{name}`",
                    self.cycle_index
                ))
            })
    }

    pub fn validate(&self) -> Result<()> {
        if self.len() < 2 {
            return Err(Error::Data(format!(
                "cycle {} has {} samples, need at least 2",
                self.cycle_index,
                self.len()
            )));
        }
        if let Some(k) = self.timestamps.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Data(format!(
                "cycle {}: time does not increase at sample {}",
                self.cycle_index,
                k + 1
            )));
        }
        for (name, values) in &self.channels {
            if values.len() != self.len() {
                return Err(Error::Data(format!(
                    "cycle {}: channel `{name}` has {} samples, timestamps have {}",
                    self.cycle_index,
                    values.len(),
                    self.len()
                )));
            }
        }
        if let Some(c) = self.capacity_label {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Data(format!(
                    "cycle {}: capacity label must be positive, got {c}",
                    self.cycle_index
                )));
            }
        }
        Ok(())
    }
}

/// All cycles of one cell, ordered by cycle index.
#[derive(Clone, Debug, PartialEq)]
pub struct BatteryDataset {
    pub battery_id: String,
    /// Ah.
    pub nominal_capacity: f64,
    pub cycles: Vec<CycleRecord>,
}

impl BatteryDataset {
    pub fn validate(&self) -> Result<()> {
        if !(self.nominal_capacity > 0.0 && self.nominal_capacity.is_finite()) {
            return Err(Error::Data(format!(
                "battery {}: nominal capacity must be positive, got {}",
                self.battery_id, self.nominal_capacity
            )));
        }
        if self.cycles.is_empty() {
            return Err(Error::Data(format!("battery {}: no cycles", self.battery_id)));
        }
        for w in self.cycles.windows(2) {
            if w[1].cycle_index <= w[0].cycle_index {
                return Err(Error::Data(format!(
                    "battery {}: cycle index {} follows {}",
                    self.battery_id, w[1].cycle_index, w[0].cycle_index
                )));
            }
        }
        self.cycles.iter().try_for_each(CycleRecord::validate)
    }

    /// Sets per-cycle capacity labels (Ah) and derives SOH from them.
    pub fn set_labels(&mut self, capacities: &[f64]) -> Result<()> {
        if capacities.len() != self.cycles.len() {
            return Err(Error::shape(format!(
                "{} labels for {} cycles",
                capacities.len(),
                self.cycles.len()
            )));
        }
        for (cycle, &c) in self.cycles.iter_mut().zip(capacities) {
            cycle.capacity_label = Some(c);
            cycle.soh = Some(compute_soh(c, self.nominal_capacity)? / 100.0);
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<Option<f64>> {
        self.cycles.iter().map(|c| c.capacity_label).collect()
    }

    pub fn channel_names(&self) -> Vec<String> {
        self.cycles
            .first()
            .map(|c| c.channels.keys().cloned().collect())
            .unwrap_or_default()
    }
}

/// Subsamples every `stride`-th step of the selected channels into a
/// time-major sequence. The cycle must carry a capacity label.
pub fn to_sequence(cycle: &CycleRecord, channels: &[String], stride: usize) -> Result<Sequence> {
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    if channels.is_empty() {
        return Err(Error::invalid("no input channels selected"));
    }
    let label = cycle.capacity_label.ok_or_else(|| {
        Error::Data(format!("cycle {} has no capacity label", cycle.cycle_index))
    })?;
    let series: Vec<&[f64]> = channels
        .iter()
        .map(|name| cycle.channel(name))
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(cycle.len().div_ceil(stride) * channels.len());
    for t in (0..cycle.len()).step_by(stride) {
        values.extend(series.iter().map(|s| s[t]));
    }
    Ok(Sequence {
        cycle_index: cycle.cycle_index,
        dim: channels.len(),
        values,
        label,
    })
}

/// Subsamples, zero-pads to the longest sequence and records the mask.
pub fn pad_and_mask(cycles: &[&CycleRecord], channels: &[String], stride: usize) -> Result<PaddedBatch> {
    let seqs = cycles
        .iter()
        .map(|c| to_sequence(c, channels, stride))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Sequence> = seqs.iter().collect();
    PaddedBatch::from_sequences(&refs)
}
