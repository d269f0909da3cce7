//! The composite objective `MSE + beta * sum_l HSIC(X, H_l)`, the training
//! loop with best-validation snapshotting, information-plane traces and
//! evaluation.

mod optim;
mod preset;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use optim::{clip_global_norm, Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use preset::{builtin_preset, load_preset, parse_preset, Preset, PRESET_NAMES};

use crate::dataset::{
    fit_scaler, to_sequence, BatteryDataset, CycleRecord, FeatureScaler, PaddedBatch, Sequence,
    Splits,
};
use crate::error::{Error, Result};
use crate::hsic::{BandwidthPolicy, CenteredGram, SampleSet};
use crate::metrics::{eval_metrics, EvalReport};
use crate::numerics::Rng;
use crate::recurrent::{CellKind, Network};

/// Fewest samples the HSIC estimator is evaluated on.
pub const MIN_HSIC_SAMPLES: usize = 4;
/// Window of the trailing moving average used for the turning point.
pub const SMOOTHING_WINDOW: usize = 21;
/// Relative difference below which two smoothed values count as tied.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub cell: CellKind,
    pub hidden_size: usize,
    pub layers: usize,
    pub seed: u64,
    pub learning_rate: f64,
    /// `None` trains the plain network; `Some(beta)` adds the HSIC term.
    pub beta: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub stride: usize,
    pub optimizer: OptimizerKind,
    pub bandwidth: BandwidthPolicy,
    pub clip_norm: Option<f64>,
    /// Input channels in order. Empty selects every channel of the first
    /// training battery.
    pub channels: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            cell: CellKind::Gru,
            hidden_size: 2,
            layers: 3,
            seed: 13,
            learning_rate: 0.005,
            beta: None,
            epochs: 900,
            batch_size: 64,
            stride: 1,
            optimizer: OptimizerKind::Adam,
            bandwidth: BandwidthPolicy::MedianHeuristic,
            clip_norm: None,
            channels: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden_size", self.hidden_size),
            ("layers", self.layers),
            ("batch_size", self.batch_size),
            ("stride", self.stride),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let Some(b) = self.beta {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::invalid(format!("beta must be >= 0, got {b}")));
            }
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::invalid(format!("clip_norm must be positive, got {c}")));
            }
        }
        self.bandwidth.validate()
    }

    /// SHA-256 over the JSON form of the configuration.
    pub fn config_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// One epoch of training, measured after the epoch's last update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Over the whole training set.
    pub train_mse: f64,
    /// `sum_l HSIC(X, H_l)` over the whole training set.
    pub hsic_xh: f64,
    pub val: EvalReport,
}

pub struct LossOutput {
    pub loss: f64,
    pub mse: f64,
    /// Per-layer `HSIC(X, H_l)`; empty when the term is off or skipped.
    pub hsic: Vec<f64>,
    pub predictions: Vec<f64>,
    pub grads: Network,
}

/// Loss and parameter gradients on one batch. With `beta = Some(b)` and at
/// least four sequences the loss is `MSE + b * sum_l HSIC(x_repr, H_l)`.
pub fn composite_loss(
    net: &Network,
    batch: &PaddedBatch,
    beta: Option<f64>,
    bandwidth: BandwidthPolicy,
) -> Result<LossOutput> {
    let fwd = net.masked_forward(batch)?;
    let n = batch.n();
    let nf = n as f64;
    let mut mse = 0.0;
    let mut d_pred = Vec::with_capacity(n);
    for (p, y) in fwd.predictions.iter().zip(batch.labels()) {
        let e = p - y;
        mse += e * e;
        d_pred.push(2.0 * e / nf);
    }
    mse /= nf;

    let mut loss = mse;
    let mut hsic = Vec::new();
    let mut d_hidden = Vec::new();
    if let Some(b) = beta {
        if n < MIN_HSIC_SAMPLES {
            log::warn!("HSIC term skipped on a batch of {n} sequences (needs {MIN_HSIC_SAMPLES})");
        } else {
            let gram = CenteredGram::with_policy(batch.x_repr(), bandwidth)?;
            for h in &fwd.final_hidden {
                let (value, _, mut grad) = gram.hsic_and_grad_with_policy(h, bandwidth)?;
                grad.scale(b);
                hsic.push(value);
                d_hidden.push(grad);
            }
            loss += b * hsic.iter().sum::<f64>();
        }
    }
    let grads = net.bptt(&fwd.cache, &d_pred, &d_hidden)?;
    Ok(LossOutput {
        loss,
        mse,
        hsic,
        predictions: fwd.predictions,
        grads,
    })
}

/// A trained network plus what is needed to feed it raw cycles.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub network: Network,
    pub scaler: FeatureScaler,
    pub stride: usize,
    pub config: TrainConfig,
}

impl TrainedModel {
    pub fn channels(&self) -> &[String] {
        &self.scaler.channels
    }

    /// Scaled, subsampled sequences of every cycle of `ds`.
    pub fn sequences(&self, ds: &BatteryDataset) -> Result<Vec<Sequence>> {
        build_sequences(ds, &self.scaler, self.stride)
    }

    pub fn batch(&self, ds: &BatteryDataset) -> Result<PaddedBatch> {
        let seqs = self.sequences(ds)?;
        let refs: Vec<&Sequence> = seqs.iter().collect();
        PaddedBatch::from_sequences(&refs)
    }
}

fn build_sequences(ds: &BatteryDataset, scaler: &FeatureScaler, stride: usize) -> Result<Vec<Sequence>> {
    ds.cycles
        .iter()
        .map(|c| {
            to_sequence(&scaler.apply(c)?, &scaler.channels, stride)
                .map_err(|e| Error::Data(format!("battery {}: {e}", ds.battery_id)))
        })
        .collect()
}

pub struct TrainOutcome {
    /// Snapshot with the lowest validation MAE (the initial network when
    /// `epochs = 0`).
    pub model: TrainedModel,
    pub logs: Vec<EpochLog>,
    /// Epoch of the snapshot, `None` for the initial network.
    pub best_epoch: Option<usize>,
}

/// Contiguous batch ranges over `n` shuffled items. A trailing remainder
/// too small for the HSIC estimator is folded into the previous batch.
pub fn batch_ranges(n: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<std::ops::Range<usize>> = (0..n)
        .step_by(batch_size.max(1))
        .map(|s| s..(s + batch_size).min(n))
        .collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() < MIN_HSIC_SAMPLES) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().end = last.end;
    }
    out
}

/// Sum over layers of `HSIC(X, H_l)` under `policy`, with `gram` the
/// centered input Gram matrix.
fn hsic_sum(gram: &CenteredGram, hidden: &[SampleSet], policy: BandwidthPolicy) -> Result<f64> {
    let mut total = 0.0;
    for h in hidden {
        total += gram.hsic_with_policy(h, policy)?.0;
    }
    Ok(total)
}

pub fn train(cfg: &TrainConfig, splits: &Splits) -> Result<TrainOutcome> {
    train_with(cfg, splits, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    cfg: &TrainConfig,
    splits: &Splits,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = splits
        .train
        .first()
        .ok_or_else(|| Error::invalid("no training batteries"))?;
    let channels = if cfg.channels.is_empty() {
        first.channel_names()
    } else {
        cfg.channels.clone()
    };
    let train_cycles: Vec<&CycleRecord> = splits.train.iter().flat_map(|d| &d.cycles).collect();
    let scaler = fit_scaler(&train_cycles, &channels)?;

    let mut train_seqs = Vec::new();
    for ds in &splits.train {
        train_seqs.extend(build_sequences(ds, &scaler, cfg.stride)?);
    }
    let val_seqs = build_sequences(&splits.val, &scaler, cfg.stride)?;
    let refs: Vec<&Sequence> = train_seqs.iter().collect();
    let full_train = PaddedBatch::from_sequences(&refs)?;
    let refs: Vec<&Sequence> = val_seqs.iter().collect();
    let val_batch = PaddedBatch::from_sequences(&refs)?;
    let train_gram = if full_train.n() >= MIN_HSIC_SAMPLES {
        Some(CenteredGram::with_policy(full_train.x_repr(), cfg.bandwidth)?)
    } else {
        None
    };

    let mut rng = Rng::new(cfg.seed);
    let mut net = Network::init(cfg.cell, channels.len(), cfg.hidden_size, cfg.layers, &mut rng)?;
    net.readout.b_out = full_train.labels().iter().sum::<f64>() / full_train.n() as f64;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, net.param_count())?;

    let mut best = net.clone();
    let mut best_mae = f64::INFINITY;
    let mut best_epoch = None;
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_seqs.len()).collect();
    let ranges = batch_ranges(order.len(), cfg.batch_size);

    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        for (b, range) in ranges.iter().enumerate() {
            let non_finite = |detail: String| Error::NonFinite {
                epoch,
                batch: b + 1,
                detail,
            };
            let refs: Vec<&Sequence> = order[range.clone()].iter().map(|&i| &train_seqs[i]).collect();
            let batch = PaddedBatch::from_sequences(&refs)?;
            let out = composite_loss(&net, &batch, cfg.beta, cfg.bandwidth).map_err(|e| match e {
                Error::Data(msg) => non_finite(msg),
                other => other,
            })?;
            if !out.loss.is_finite() {
                return Err(non_finite(format!("loss is {}", out.loss)));
            }
            let mut grads = out.grads.flat_params();
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(non_finite("gradient is not finite".into()));
            }
            if let Some(c) = cfg.clip_norm {
                clip_global_norm(&mut grads, c);
            }
            let mut params = net.flat_params();
            opt.step(&mut params, &grads)?;
            net.set_flat_params(&params)?;
            if !net.is_finite() {
                return Err(non_finite("parameters are not finite".into()));
            }
        }

        let measure_err = |e: Error| match e {
            Error::Data(msg) => Error::NonFinite {
                epoch,
                batch: ranges.len(),
                detail: msg,
            },
            other => other,
        };
        let fwd = net.masked_forward(&full_train).map_err(measure_err)?;
        let train_mse = fwd
            .predictions
            .iter()
            .zip(full_train.labels())
            .map(|(p, y)| (p - y) * (p - y))
            .sum::<f64>()
            / full_train.n() as f64;
        let hsic_xh = match &train_gram {
            Some(g) => hsic_sum(g, &fwd.final_hidden, cfg.bandwidth)?,
            None => 0.0,
        };
        let val_pred = net.predict(&val_batch).map_err(measure_err)?;
        let val = eval_metrics(val_batch.labels(), &val_pred)?;
        if val.mae < best_mae {
            best_mae = val.mae;
            best = net.clone();
            best_epoch = Some(epoch);
        }
        let log = EpochLog {
            epoch,
            train_mse,
            hsic_xh,
            val,
        };
        on_epoch(&log);
        logs.push(log);
    }

    Ok(TrainOutcome {
        model: TrainedModel {
            network: best,
            scaler,
            stride: cfg.stride,
            config: TrainConfig {
                channels,
                ..cfg.clone()
            },
        },
        logs,
        best_epoch,
    })
}

/// Per-cycle evaluation output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub battery_id: String,
    pub cycle_index: usize,
    pub truth: f64,
    pub prediction: f64,
    pub relative_error: f64,
}

/// Predicts every cycle of `datasets` and scores the predictions.
pub fn evaluate(model: &TrainedModel, datasets: &[BatteryDataset]) -> Result<(EvalReport, Vec<PredictionRow>)> {
    let mut rows = Vec::new();
    for ds in datasets {
        let batch = model.batch(ds)?;
        let pred = model.network.predict(&batch)?;
        for ((&y, p), &k) in batch.labels().iter().zip(pred).zip(batch.cycle_indices()) {
            rows.push(PredictionRow {
                battery_id: ds.battery_id.clone(),
                cycle_index: k,
                truth: y,
                prediction: p,
                relative_error: (y - p).abs(),
            });
        }
    }
    let truth: Vec<f64> = rows.iter().map(|r| r.truth).collect();
    let pred: Vec<f64> = rows.iter().map(|r| r.prediction).collect();
    Ok((eval_metrics(&truth, &pred)?, rows))
}

pub fn write_predictions_csv<W: Write>(writer: W, rows: &[PredictionRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(|e| Error::io("<predictions csv>", e))?;
    Ok(())
}

pub fn read_predictions_csv<R: Read>(reader: R) -> Result<Vec<PredictionRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// One row per epoch: `epoch,train_mse,hsic_xh,val_mae,val_mse,val_rmse,val_mape,val_smape`.
pub fn write_epoch_log_csv<W: Write>(writer: W, logs: &[EpochLog]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "epoch", "train_mse", "hsic_xh", "val_mae", "val_mse", "val_rmse", "val_mape", "val_smape",
    ])?;
    for l in logs {
        let v = &l.val;
        wtr.write_record([
            l.epoch.to_string(),
            l.train_mse.to_string(),
            l.hsic_xh.to_string(),
            v.mae.to_string(),
            v.mse.to_string(),
            v.rmse.to_string(),
            v.mape.to_string(),
            v.smape.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<epoch log csv>", e))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoPlaneRow {
    pub epoch: usize,
    pub hsic_xh: f64,
    pub train_mse: f64,
    pub hsic_smoothed: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InfoPlaneTrace {
    pub rows: Vec<InfoPlaneRow>,
    /// Epoch where the smoothed HSIC trace peaks (earliest on ties).
    pub turning_point: usize,
}

/// Trailing moving average; the first `window - 1` entries average over
/// what is available.
pub fn trailing_moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..values.len())
        .map(|i| {
            let start = (i + 1).saturating_sub(window);
            values[start..=i].iter().sum::<f64>() / (i + 1 - start) as f64
        })
        .collect()
}

pub fn info_plane_trace(logs: &[EpochLog]) -> Result<InfoPlaneTrace> {
    if logs.is_empty() {
        return Err(Error::invalid("information-plane trace needs at least one epoch"));
    }
    let hsic: Vec<f64> = logs.iter().map(|l| l.hsic_xh).collect();
    let smoothed = trailing_moving_average(&hsic, SMOOTHING_WINDOW);
    let mut peak = 0;
    for (i, &v) in smoothed.iter().enumerate() {
        if v - smoothed[peak] > TIE_TOLERANCE * smoothed[peak].abs() {
            peak = i;
        }
    }
    let rows = logs
        .iter()
        .zip(&smoothed)
        .map(|(l, &s)| InfoPlaneRow {
            epoch: l.epoch,
            hsic_xh: l.hsic_xh,
            train_mse: l.train_mse,
            hsic_smoothed: s,
        })
        .collect();
    Ok(InfoPlaneTrace {
        rows,
        turning_point: logs[peak].epoch,
    })
}

impl InfoPlaneTrace {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for r in &self.rows {
            wtr.serialize(r)?;
        }
        wtr.flush().map_err(|e| Error::io("<info plane csv>", e))?;
        Ok(())
    }
}

pub fn read_info_plane_csv<R: Read>(reader: R) -> Result<Vec<InfoPlaneRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Gradient of `f` at `x` by central differences, for tests and diagnostics.
pub fn central_differences(x: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let plus = f(&probe);
            probe[i] = x[i] - eps;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}
