//! Ground-truth capacity labels: coulomb counting, outlier handling, SOH.

use super::BatteryDataset;
use crate::error::{Error, Result};

/// Which part of a cycle to integrate, selected by current sign
/// (discharge current is negative).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Segment {
    Discharge,
    Charge,
}

impl Segment {
    /// Magnitude of the current that belongs to this segment, zero otherwise.
    fn magnitude(self, current: f64) -> f64 {
        match self {
            Segment::Discharge => (-current).max(0.0),
            Segment::Charge => current.max(0.0),
        }
    }
}

/// Transferred charge in Ah: trapezoidal integral of the segment's current
/// magnitude over time (seconds), divided by 3600.
pub fn coulomb_count(current: &[f64], timestamps: &[f64], segment: Segment) -> Result<f64> {
    if current.len() != timestamps.len() {
        return Err(Error::shape(format!(
            "{} current samples for {} timestamps",
            current.len(),
            timestamps.len()
        )));
    }
    let selected: Vec<f64> = current.iter().map(|&i| segment.magnitude(i)).collect();
    if selected.iter().all(|&v| v == 0.0) {
        return Err(Error::Data(format!("no {segment:?} samples to integrate").to_lowercase()));
    }
    let mut area = 0.0;
    for k in 1..timestamps.len() {
        let dt = timestamps[k] - timestamps[k - 1];
        if !(dt > 0.0) {
            return Err(Error::Data(format!("time does not increase at sample {k}")));
        }
        area += 0.5 * dt * (selected[k] + selected[k - 1]);
    }
    Ok(area / 3600.0)
}

pub const HAMPEL_WINDOW: usize = 11;
const HAMPEL_SIGMAS: f64 = 3.0;
const MAD_SCALE: f64 = 1.4826;
const MAX_PASSES: usize = 64;

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

fn hampel_pass(caps: &[f64]) -> Vec<f64> {
    let half = HAMPEL_WINDOW / 2;
    let mut out = caps.to_vec();
    let mut window = Vec::with_capacity(HAMPEL_WINDOW);
    for i in 0..caps.len() {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(caps.len());
        window.clear();
        window.extend_from_slice(&caps[lo..hi]);
        let med = median(&mut window);
        for v in window.iter_mut() {
            *v = (*v - med).abs();
        }
        let mad = median(&mut window);
        if (caps[i] - med).abs() > HAMPEL_SIGMAS * MAD_SCALE * mad {
            out[i] = med;
        }
    }
    out
}

/// Hampel filter over a centered window of 11 (truncated at the ends):
/// values further than `3 * 1.4826 * MAD` from the window median are
/// replaced by that median. Passes repeat until nothing changes, so the
/// result is a fixed point of the filter.
pub fn remove_capacity_outliers(caps: &[f64]) -> Vec<f64> {
    let mut current = caps.to_vec();
    for _ in 0..MAX_PASSES {
        let next = hampel_pass(&current);
        if next == current {
            return current;
        }
        current = next;
    }
    log::warn!("outlier filter did not settle after {MAX_PASSES} passes");
    current
}

/// State of health in percent.
pub fn compute_soh(c_max: f64, c_nom: f64) -> Result<f64> {
    if !(c_nom > 0.0 && c_nom.is_finite()) {
        return Err(Error::invalid(format!(
            "nominal capacity must be positive, got {c_nom}"
        )));
    }
    Ok(100.0 * c_max / c_nom)
}

/// Labels every cycle by coulomb counting `current_channel` over `segment`,
/// then removes outliers across the cycle series.
pub fn label_by_coulomb_counting(
    ds: &mut BatteryDataset,
    current_channel: &str,
    segment: Segment,
) -> Result<()> {
    let raw = ds
        .cycles
        .iter()
        .map(|c| {
            coulomb_count(c.channel(current_channel)?, &c.timestamps, segment).map_err(|e| {
                Error::Data(format!(
                    "battery {} cycle {}: {e}",
                    ds.battery_id, c.cycle_index
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ds.set_labels(&remove_capacity_outliers(&raw))
}

/// Capacity of a reference block: the second reference discharge, each
/// given as `(current, timestamps)`.
pub fn reference_block_capacity(discharges: &[(&[f64], &[f64])]) -> Result<f64> {
    let (current, t) = discharges.get(1).ok_or_else(|| {
        Error::Data(format!(
            "reference block has {} discharges, need at least 2",
            discharges.len()
        ))
    })?;
    coulomb_count(current, t, Segment::Discharge)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn grid(n: usize, end: f64) -> Vec<f64> {
        (0..n).map(|k| end * k as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn constant_discharge_one_hour() {
        let t = grid(61, 3600.0);
        let i = vec![-1.0; 61];
        assert!((coulomb_count(&i, &t, Segment::Discharge).unwrap() - 1.0).abs() < 1e-12);
        assert!(coulomb_count(&i, &t, Segment::Charge).is_err());
    }

    #[test]
    fn linear_ramp_is_exact() {
        let t = grid(37, 3600.0);
        let i: Vec<f64> = t.iter().map(|s| -2.0 * s / 3600.0).collect();
        assert!((coulomb_count(&i, &t, Segment::Discharge).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sine_current_matches_fine_quadrature() {
        let period = 3600.0;
        let f = |s: f64| -(1.0 + 0.5 * (2.0 * std::f64::consts::PI * s / period).sin());
        let t = grid(500, 2.0 * period);
        let i: Vec<f64> = t.iter().map(|&s| f(s)).collect();
        let got = coulomb_count(&i, &t, Segment::Discharge).unwrap();
        // composite Simpson on 200k intervals
        let n = 200_000;
        let h = 2.0 * period / n as f64;
        let mut acc = f(0.0).abs() + f(2.0 * period).abs();
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(k as f64 * h).abs();
        }
        let reference = acc * h / 3.0 / 3600.0;
        assert!(((got - reference) / reference).abs() < 1e-3);
    }

    #[test]
    fn mixed_cycle_selects_by_sign() {
        let t = vec![0.0, 1800.0, 3600.0, 5400.0, 7200.0];
        let i = vec![1.0, 1.0, 0.0, -2.0, -2.0];
        let charge = coulomb_count(&i, &t, Segment::Charge).unwrap();
        let discharge = coulomb_count(&i, &t, Segment::Discharge).unwrap();
        assert!((charge - 0.75).abs() < 1e-12);
        assert!((discharge - 1.5).abs() < 1e-12);
    }

    #[test]
    fn hampel_leaves_smooth_series() {
        let caps: Vec<f64> = (0..40).map(|k| 1.1 - 0.002 * k as f64).collect();
        assert_eq!(remove_capacity_outliers(&caps), caps);
        let flat = vec![1.05; 20];
        assert_eq!(remove_capacity_outliers(&flat), flat);
    }

    #[test]
    fn hampel_replaces_spike_with_window_median() {
        let mut caps = vec![1.0; 21];
        caps[10] = 10.0;
        let out = remove_capacity_outliers(&caps);
        assert_eq!(out, vec![1.0; 21]);

        // non-flat neighbourhood: median of indices 3..=13 excluding nothing
        let mut caps: Vec<f64> = (0..20).map(|k| 1.0 + 0.01 * (k % 3) as f64).collect();
        caps[8] = 9.0;
        let mut window: Vec<f64> = caps[3..14].to_vec();
        window.sort_by(f64::total_cmp);
        let expect = window[5];
        let out = remove_capacity_outliers(&caps);
        assert_eq!(out[8], expect);
    }

    #[test]
    fn soh_cases() {
        assert_eq!(compute_soh(1.1, 1.1).unwrap(), 100.0);
        assert!((compute_soh(0.88, 1.1).unwrap() - 80.0).abs() < 1e-12);
        assert!((compute_soh(1.1, 1.1).unwrap() - compute_soh(1.35, 1.35).unwrap()).abs() < 1e-12);
        assert!(compute_soh(1.0, 0.0).is_err());
        assert!(compute_soh(1.0, -1.0).is_err());
    }

    #[test]
    fn reference_block_uses_second_discharge() {
        let t = grid(3, 3600.0);
        let first = vec![-1.0; 3];
        let second = vec![-0.5; 3];
        let cap = reference_block_capacity(&[(&first, &t), (&second, &t)]).unwrap();
        assert!((cap - 0.5).abs() < 1e-12);
        assert!(reference_block_capacity(&[(&first, &t)]).is_err());
    }

    proptest! {
        #[test]
        fn outlier_filter_is_idempotent(seed in any::<u64>(), n in 1usize..60, spikes in 0usize..6) {
            let mut rng = Rng::new(seed);
            let mut caps: Vec<f64> = (0..n).map(|k| 1.1 * (-0.003 * k as f64).exp() + 0.005 * rng.normal()).collect();
            for _ in 0..spikes {
                let k = rng.below(n);
                caps[k] *= rng.uniform(0.2, 3.0);
            }
            let once = remove_capacity_outliers(&caps);
            let twice = remove_capacity_outliers(&once);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn coulomb_count_translation_and_refinement(seed in any::<u64>(), n in 2usize..30, shift in -1e5f64..1e5) {
            let mut rng = Rng::new(seed);
            let mut t = vec![0.0];
            for _ in 1..n {
                let last = *t.last().unwrap();
                t.push(last + rng.uniform(1.0, 100.0));
            }
            let i: Vec<f64> = (0..n).map(|_| -rng.uniform(0.1, 3.0)).collect();
            let base = coulomb_count(&i, &t, Segment::Discharge).unwrap();
            let moved: Vec<f64> = t.iter().map(|s| s + shift).collect();
            let shifted = coulomb_count(&i, &moved, Segment::Discharge).unwrap();
            prop_assert!((base - shifted).abs() <= 1e-9 * base.max(1.0));
            // insert midpoints of the piecewise-linear current
            let mut tr = Vec::new();
            let mut ir = Vec::new();
            for k in 0..n {
                if k > 0 {
                    tr.push(0.5 * (t[k - 1] + t[k]));
                    ir.push(0.5 * (i[k - 1] + i[k]));
                }
                tr.push(t[k]);
                ir.push(i[k]);
            }
            let refined = coulomb_count(&ir, &tr, Segment::Discharge).unwrap();
            prop_assert!((base - refined).abs() <= 1e-12 * base.max(1.0));
        }
    }
}
