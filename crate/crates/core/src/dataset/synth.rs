//! Synthetic constant-current discharge cycles with exponential capacity fade.
//!
//! Cycle `k` has true capacity `C_k = C_0 exp(-lambda k) (1 + eps_k)`. Its
//! length scales with `C_k`, the current is set so the discharge delivers
//! `C_k`, and voltage sag and heating grow as the cell ages. A pure-noise
//! channel carries nothing about the label.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{split_leave_one_battery_out, BatteryDataset, CycleRecord, Splits};
use crate::error::{Error, Result};
use crate::numerics::Rng;

pub const NUISANCE_CHANNEL: &str = "nuisance";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub battery_id: String,
    pub cycles: usize,
    /// Ah.
    pub nominal_capacity: f64,
    /// Ah, capacity of the fresh cell.
    pub initial_capacity: f64,
    /// Per-cycle exponential fade rate.
    pub fade_rate: f64,
    /// Standard deviation of the multiplicative capacity noise.
    pub capacity_noise: f64,
    /// Samples in a cycle at the initial capacity.
    pub base_length: usize,
    /// Uniform +/- jitter on the sample count.
    pub length_jitter: usize,
    /// Seconds between samples.
    pub sample_period: f64,
    /// Measurement noise level (V for voltage; scaled for other channels).
    pub channel_noise: f64,
    /// Standard deviation of the nuisance channel.
    pub nuisance_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            battery_id: "SYN1".into(),
            cycles: 150,
            nominal_capacity: 1.1,
            initial_capacity: 1.1,
            fade_rate: 0.002,
            capacity_noise: 0.002,
            base_length: 40,
            length_jitter: 2,
            sample_period: 90.0,
            channel_noise: 0.002,
            nuisance_scale: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cycles == 0 {
            return Err(Error::invalid("synthetic battery needs at least one cycle"));
        }
        if self.base_length < 2 {
            return Err(Error::invalid("base length must be at least 2 samples"));
        }
        for (name, v) in [
            ("nominal capacity", self.nominal_capacity),
            ("initial capacity", self.initial_capacity),
            ("sample period", self.sample_period),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("fade rate", self.fade_rate),
            ("capacity noise", self.capacity_noise),
            ("channel noise", self.channel_noise),
            ("nuisance scale", self.nuisance_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Capacity before noise: `C_0 exp(-lambda k)`.
pub fn faded_capacity(cfg: &SynthConfig, cycle_index: usize) -> f64 {
    cfg.initial_capacity * (-cfg.fade_rate * cycle_index as f64).exp()
}

pub fn synth_degradation(cfg: &SynthConfig, seed: u64) -> Result<BatteryDataset> {
    cfg.validate()?;
    let mut rng = Rng::new(seed);
    let mut cycles = Vec::with_capacity(cfg.cycles);
    for k in 1..=cfg.cycles {
        let capacity = faded_capacity(cfg, k) * (1.0 + cfg.capacity_noise * rng.normal());
        let ratio = capacity / cfg.initial_capacity;
        let jitter = if cfg.length_jitter > 0 {
            rng.below(2 * cfg.length_jitter + 1) as i64 - cfg.length_jitter as i64
        } else {
            0
        };
        let len = ((cfg.base_length as f64 * ratio).round() as i64 + jitter).max(2) as usize;
        let duration = (len - 1) as f64 * cfg.sample_period;
        let current = capacity * 3600.0 / duration;
        let resistance = 0.08 * (1.0 + 3.0 * (1.0 - ratio).max(0.0));

        let mut timestamps = Vec::with_capacity(len);
        let mut voltage = Vec::with_capacity(len);
        let mut amps = Vec::with_capacity(len);
        let mut temperature = Vec::with_capacity(len);
        let mut nuisance = Vec::with_capacity(len);
        for i in 0..len {
            let s = i as f64 / (len - 1) as f64;
            timestamps.push(i as f64 * cfg.sample_period);
            let drawn = current * (1.0 + 0.5 * cfg.channel_noise * rng.normal());
            amps.push(-drawn);
            voltage.push(
                4.2 - 0.7 * s - 0.35 * s.powi(6) - resistance * drawn + cfg.channel_noise * rng.normal(),
            );
            temperature.push(
                24.0 + 8.0 * resistance * drawn * drawn * s.powf(0.8) + 10.0 * cfg.channel_noise * rng.normal(),
            );
            nuisance.push(cfg.nuisance_scale * rng.normal());
        }
        let mut channels = IndexMap::new();
        channels.insert("voltage".to_string(), voltage);
        channels.insert("current".to_string(), amps);
        channels.insert("temperature".to_string(), temperature);
        channels.insert(NUISANCE_CHANNEL.to_string(), nuisance);
        cycles.push(CycleRecord {
            cycle_index: k,
            timestamps,
            channels,
            capacity_label: Some(capacity),
            soh: Some(capacity / cfg.nominal_capacity),
        });
    }
    let ds = BatteryDataset {
        battery_id: cfg.battery_id.clone(),
        nominal_capacity: cfg.nominal_capacity,
        cycles,
    };
    ds.validate()?;
    Ok(ds)
}

/// `count` batteries `SYN1..` sharing `base` but with per-cell initial
/// capacity (+/-3 %) and fade rate (0.0015..0.0025) drawn from `seed`.
pub fn synth_benchmark(base: &SynthConfig, count: usize, seed: u64) -> Result<Vec<BatteryDataset>> {
    if count == 0 {
        return Err(Error::invalid("benchmark needs at least one battery"));
    }
    let mut rng = Rng::new(seed);
    (1..=count)
        .map(|b| {
            let mut cell_rng = rng.fork();
            let cfg = SynthConfig {
                battery_id: format!("SYN{b}"),
                initial_capacity: base.initial_capacity * (1.0 + 0.03 * cell_rng.uniform(-1.0, 1.0)),
                fade_rate: cell_rng.uniform(0.0015, 0.0025),
                ..base.clone()
            };
            synth_degradation(&cfg, cell_rng.next_u64())
        })
        .collect()
}

/// Five-battery benchmark split three/one/one: `SYN4` validates, `SYN5` tests.
pub fn benchmark_splits(base: &SynthConfig, seed: u64) -> Result<Splits> {
    let all = synth_benchmark(base, 5, seed)?;
    split_leave_one_battery_out(&all, "SYN5", "SYN4")
}
