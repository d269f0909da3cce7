//! One function per subcommand.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use hsicgru::checkpoint::{load_checkpoint, save_checkpoint};
use hsicgru::dataset::{
    apply_labels_file, label_by_coulomb_counting, load_many, save_canonical, split_leave_one_battery_out,
    synth_benchmark, BatteryDataset, Segment, Splits, SynthConfig,
};
use hsicgru::metrics::METRICS_HEADER;
use hsicgru::training::{
    builtin_preset, evaluate, info_plane_trace, load_preset, read_info_plane_csv, read_predictions_csv, train_with,
    write_epoch_log_csv, write_predictions_csv, Preset, TrainConfig, TrainOutcome,
};
use rayon::prelude::*;
use serde_json::json;

use crate::args::{
    Beta, DataArgs, EvalArgs, ModelArgs, PlotArgs, PlotKind, SplitArgs, SweepArgs, SynthArgs, TrainArgs,
};
use crate::manifest::RunManifest;
use crate::plot;
use crate::UsageError;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn prepare_out(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> anyhow::Result<()> {
    w.flush().with_context(|| format!("cannot write {}", path.display()))
}

pub fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let base = SynthConfig {
        cycles: a.cycles,
        base_length: a.base_length,
        ..SynthConfig::default()
    };
    let all = synth_benchmark(&base, a.batteries, a.seed)?;
    prepare_out(&a.out.out)?;
    let path = a.out.out.join(&a.name);
    save_canonical(&path, &all)?;

    let mut manifest = RunManifest::new("synth");
    manifest.seed = Some(a.seed);
    manifest.config = json!({ "batteries": a.batteries, "generator": base });
    manifest.output(&path)?;
    manifest.write(&a.out.out)?;
    log::info!("wrote {} batteries of {} cycles to {}", all.len(), a.cycles, path.display());
    Ok(())
}

/// Loads every `--data` file and attaches labels from `--labels` or coulomb counting.
fn load_data(d: &DataArgs) -> anyhow::Result<Vec<BatteryDataset>> {
    let mut all = load_many(&d.data)?;
    if let Some(labels) = &d.labels {
        apply_labels_file(&mut all, labels)?;
    }
    if let Some(channel) = &d.coulomb {
        for ds in &mut all {
            label_by_coulomb_counting(ds, channel, Segment::Discharge)?;
        }
    }
    Ok(all)
}

fn data_inputs(d: &DataArgs) -> Vec<PathBuf> {
    d.data.iter().cloned().chain(d.labels.clone()).collect()
}

fn data_settings(d: &DataArgs) -> serde_json::Value {
    json!({ "labels": d.labels.as_ref().map(|_| "file"), "coulomb_channel": d.coulomb })
}

/// The preset named by `--preset` or `--config`, if any.
fn preset(m: &ModelArgs) -> anyhow::Result<Option<Preset>> {
    Ok(match (&m.preset, &m.config) {
        (Some(name), _) => Some(builtin_preset(name)?),
        (None, Some(path)) => Some(load_preset(path)?),
        (None, None) => None,
    })
}

/// Preset model (or defaults) with command-line overrides applied.
fn resolve_config(m: &ModelArgs, preset: Option<&Preset>) -> anyhow::Result<TrainConfig> {
    let mut cfg = match preset {
        Some(p) => {
            let model = match (&m.model, m.cell) {
                (Some(name), _) => name.clone(),
                (None, Some(cell)) => cell.as_str().to_string(),
                (None, None) => "gru".to_string(),
            };
            p.model(&model)?.clone()
        }
        None => {
            if m.model.is_some() {
                return Err(usage("--model needs --preset or --config"));
            }
            TrainConfig::default()
        }
    };
    if let Some(cell) = m.cell {
        cfg.cell = cell;
    }
    if let Some(Beta(b)) = m.beta {
        cfg.beta = b;
    }
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => { $(if let Some(v) = m.$flag { cfg.$field = v; })* };
    }
    set!(lr => learning_rate, seed => seed, epochs => epochs, batch_size => batch_size, stride => stride,
         hidden_size => hidden_size, layers => layers, optimizer => optimizer);
    if let Some(c) = m.clip_norm {
        cfg.clip_norm = Some(c);
    }
    if let Some(ch) = &m.channels {
        cfg.channels = if ch.trim().eq_ignore_ascii_case("all") {
            Vec::new()
        } else {
            ch.split(',').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect()
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_splits(all: &[BatteryDataset], s: &SplitArgs, preset: Option<&Preset>) -> anyhow::Result<Splits> {
    let pick = |flag: &Option<String>, from_preset: Option<&String>, name: &str| {
        flag.clone()
            .or_else(|| from_preset.cloned())
            .ok_or_else(|| usage(format!("--{name} is required without a preset that names one")))
    };
    let test = pick(&s.test_battery, preset.and_then(|p| p.test_battery.as_ref()), "test-battery")?;
    let val = pick(&s.val_battery, preset.and_then(|p| p.val_battery.as_ref()), "val-battery")?;
    Ok(split_leave_one_battery_out(all, &test, &val)?)
}

fn run_training(cfg: &TrainConfig, splits: &Splits, verbose: bool) -> anyhow::Result<TrainOutcome> {
    let every = (cfg.epochs / 10).max(1);
    let outcome = train_with(cfg, splits, |log| {
        if verbose && (log.epoch % every == 0 || log.epoch == cfg.epochs) {
            log::info!(
                "epoch {:>5}  train mse {:.6e}  hsic {:.6}  val mae {:.6}",
                log.epoch,
                log.train_mse,
                log.hsic_xh,
                log.val.mae
            );
        }
    })?;
    Ok(outcome)
}

pub fn train(a: TrainArgs) -> anyhow::Result<()> {
    let preset = preset(&a.model)?;
    let cfg = resolve_config(&a.model, preset.as_ref())?;
    let all = load_data(&a.data)?;
    let splits = resolve_splits(&all, &a.split, preset.as_ref())?;
    log::info!(
        "training {} (hidden {}, layers {}, beta {:?}) on {} with val {} and test {}",
        cfg.cell,
        cfg.hidden_size,
        cfg.layers,
        cfg.beta,
        splits.train_ids().join(", "),
        splits.val.battery_id,
        splits.test.battery_id
    );
    let outcome = run_training(&cfg, &splits, true)?;

    prepare_out(&a.out.out)?;
    let out = &a.out.out;
    let mut manifest = RunManifest::new("train").inputs(&data_inputs(&a.data))?;
    manifest.seed = Some(cfg.seed);
    manifest.config_hash = Some(cfg.config_hash());
    manifest.config = json!({
        "model": cfg,
        "preset": preset.as_ref().map(|p| &p.name),
        "train_batteries": splits.train_ids(),
        "val_battery": splits.val.battery_id,
        "test_battery": splits.test.battery_id,
        "data": data_settings(&a.data),
    });

    let ckpt = out.join("checkpoint.json");
    save_checkpoint(&ckpt, &outcome.model)?;
    manifest.output(&ckpt)?;

    let log_path = out.join("epoch_log.csv");
    let mut w = create(&log_path)?;
    write_epoch_log_csv(&mut w, &outcome.logs)?;
    finish(w, &log_path)?;
    manifest.output(&log_path)?;

    if !outcome.logs.is_empty() {
        let trace = info_plane_trace(&outcome.logs)?;
        let path = out.join("info_plane.csv");
        let mut w = create(&path)?;
        trace.write_csv(&mut w)?;
        finish(w, &path)?;
        manifest.output(&path)?;
        log::info!("smoothed HSIC(X;H) peaks at epoch {}", trace.turning_point);
    }
    manifest.write(out)?;

    let (report, _) = evaluate(&outcome.model, std::slice::from_ref(&splits.test))?;
    match outcome.best_epoch {
        Some(e) => log::info!("kept epoch {e} (lowest validation MAE)"),
        None => log::info!("no epochs run; kept the initial network"),
    }
    println!("test {}: {}", splits.test.battery_id, report.to_text());
    Ok(())
}

pub fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    if let Some(cell) = a.cell {
        if cell != model.config.cell {
            return Err(usage(format!(
                "checkpoint holds a {} network, --cell asked for {}",
                model.config.cell, cell
            )));
        }
    }
    let all = load_data(&a.data)?;
    let selected: Vec<BatteryDataset> = if a.batteries.is_empty() {
        all
    } else {
        a.batteries
            .iter()
            .map(|id| {
                all.iter().find(|d| &d.battery_id == id).cloned().ok_or_else(|| {
                    let known: Vec<&str> = all.iter().map(|d| d.battery_id.as_str()).collect();
                    usage(format!("unknown battery `{id}` (available: {})", known.join(", ")))
                })
            })
            .collect::<anyhow::Result<_>>()?
    };
    for ds in &selected {
        let have = ds.channel_names();
        if let Some(missing) = model.channels().iter().find(|c| !have.contains(c)) {
            return Err(usage(format!(
                "checkpoint expects channel `{missing}`, battery {} has {}",
                ds.battery_id,
                have.join(", ")
            )));
        }
    }
    let (report, rows) = evaluate(&model, &selected)?;

    prepare_out(&a.out.out)?;
    let out = &a.out.out;
    let mut inputs = vec![a.checkpoint.clone()];
    inputs.extend(data_inputs(&a.data));
    let mut manifest = RunManifest::new("eval").inputs(&inputs)?;
    manifest.seed = Some(model.config.seed);
    manifest.config_hash = Some(model.config.config_hash());
    manifest.config = json!({
        "model": model.config,
        "batteries": selected.iter().map(|d| &d.battery_id).collect::<Vec<_>>(),
        "data": data_settings(&a.data),
    });

    let metrics_path = out.join("metrics.csv");
    let mut w = create(&metrics_path)?;
    report.write_csv(&mut w)?;
    finish(w, &metrics_path)?;
    manifest.output(&metrics_path)?;

    let pred_path = out.join("predictions.csv");
    let mut w = create(&pred_path)?;
    write_predictions_csv(&mut w, &rows)?;
    finish(w, &pred_path)?;
    manifest.output(&pred_path)?;
    manifest.write(out)?;

    println!("{}", report.to_text());
    Ok(())
}

fn beta_label(b: Option<f64>) -> String {
    b.map_or_else(|| "none".to_string(), |v| v.to_string())
}

pub const SWEEP_HEADER: [&str; 11] = [
    "learning_rate",
    "beta",
    "status",
    "best_epoch",
    "val_mae",
    "final_hsic_xh",
    "test_mae",
    "test_mse",
    "test_rmse",
    "test_mape",
    "test_smape",
];

pub fn sweep(a: SweepArgs) -> anyhow::Result<()> {
    if a.lrs.is_empty() || a.betas.is_empty() {
        return Err(usage("empty grid: give at least one --lrs value and one --betas value"));
    }
    let preset = preset(&a.model)?;
    let base = resolve_config(&a.model, preset.as_ref())?;
    let all = load_data(&a.data)?;
    let splits = resolve_splits(&all, &a.split, preset.as_ref())?;
    let grid: Vec<TrainConfig> = a
        .lrs
        .iter()
        .flat_map(|&lr| {
            a.betas.iter().map({
                let base = &base;
                move |&Beta(beta)| TrainConfig {
                    learning_rate: lr,
                    beta,
                    ..base.clone()
                }
            })
        })
        .collect();
    for cfg in &grid {
        cfg.validate()?;
    }
    log::info!("sweeping {} grid cells", grid.len());

    let results: Vec<anyhow::Result<Vec<String>>> = grid
        .par_iter()
        .map(|cfg| {
            let mut row = vec![cfg.learning_rate.to_string(), beta_label(cfg.beta)];
            match run_training(cfg, &splits, false) {
                Ok(outcome) => {
                    let (report, _) = evaluate(&outcome.model, std::slice::from_ref(&splits.test))?;
                    let val_mae = match outcome.best_epoch {
                        Some(e) => outcome.logs[e - 1].val.mae,
                        None => evaluate(&outcome.model, std::slice::from_ref(&splits.val))?.0.mae,
                    };
                    let final_hsic = outcome.logs.last().map_or(f64::NAN, |l| l.hsic_xh);
                    row.push("ok".into());
                    row.push(outcome.best_epoch.map_or_else(String::new, |e| e.to_string()));
                    for v in [val_mae, final_hsic, report.mae, report.mse, report.rmse, report.mape, report.smape] {
                        row.push(v.to_string());
                    }
                    log::info!("lr {} beta {}: test mse {:.6e}", row[0], row[1], report.mse);
                }
                Err(e) if matches!(e.downcast_ref(), Some(hsicgru::Error::NonFinite { .. })) => {
                    log::warn!("lr {} beta {}: {e:#}", row[0], row[1]);
                    row.push("diverged".into());
                    row.push(String::new());
                    row.extend(std::iter::repeat_n("NaN".to_string(), SWEEP_HEADER.len() - 4));
                }
                Err(e) => return Err(e),
            }
            Ok(row)
        })
        .collect();

    prepare_out(&a.out.out)?;
    let out = &a.out.out;
    let path = out.join("sweep.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(SWEEP_HEADER)?;
    for r in results {
        w.write_record(r?)?;
    }
    w.flush().with_context(|| format!("cannot write {}", path.display()))?;
    drop(w);

    let mut manifest = RunManifest::new("sweep").inputs(&data_inputs(&a.data))?;
    manifest.seed = Some(base.seed);
    manifest.config_hash = Some(base.config_hash());
    manifest.config = json!({
        "base": base,
        "preset": preset.as_ref().map(|p| &p.name),
        "learning_rates": a.lrs,
        "betas": a.betas.iter().map(|b| beta_label(b.0)).collect::<Vec<_>>(),
        "train_batteries": splits.train_ids(),
        "val_battery": splits.val.battery_id,
        "test_battery": splits.test.battery_id,
        "data": data_settings(&a.data),
    });
    manifest.output(&path)?;
    manifest.write(out)?;
    Ok(())
}

fn reader(path: &Path) -> anyhow::Result<csv::Reader<File>> {
    let file = File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(csv::Reader::from_reader(file))
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> anyhow::Result<usize> {
    headers.iter().position(|h| h == name).ok_or_else(|| {
        usage(format!(
            "{} has no column `{name}` (columns: {})",
            path.display(),
            headers.iter().collect::<Vec<_>>().join(", ")
        ))
    })
}

fn parse_f64(s: &str, path: &Path, line: u64) -> anyhow::Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| anyhow::anyhow!(hsicgru::Error::Data(format!("{}:{line}: `{s}` is not a number", path.display()))))
}

fn heatmap_cells(path: &Path, metric: &str) -> anyhow::Result<Vec<plot::HeatCell>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    let (lr, beta, value) = (
        column(&headers, "learning_rate", path)?,
        column(&headers, "beta", path)?,
        column(&headers, metric, path)?,
    );
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            Ok(plot::HeatCell {
                row: rec[lr].to_string(),
                col: rec[beta].to_string(),
                value: parse_f64(&rec[value], path, line)?,
            })
        })
        .collect()
}

fn epoch_rows(path: &Path) -> anyhow::Result<Vec<plot::EpochRow>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    let cols = ["epoch", "train_mse", "val_mse", "hsic_xh"]
        .map(|c| column(&headers, c, path))
        .into_iter()
        .collect::<anyhow::Result<Vec<_>>>()?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let v = |k: usize| parse_f64(&rec[cols[k]], path, line);
            Ok(plot::EpochRow {
                epoch: v(0)?,
                train_mse: v(1)?,
                val_mse: v(2)?,
                hsic_xh: v(3)?,
            })
        })
        .collect()
}

fn metric_values(path: &Path) -> anyhow::Result<Vec<(String, f64)>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    let cols = METRICS_HEADER
        .map(|c| column(&headers, c, path))
        .into_iter()
        .collect::<anyhow::Result<Vec<_>>>()?;
    let rec = rdr
        .records()
        .next()
        .ok_or_else(|| hsicgru::Error::Data(format!("{} has no value row", path.display())))??;
    METRICS_HEADER
        .iter()
        .zip(cols)
        .map(|(name, k)| Ok((name.to_string(), parse_f64(&rec[k], path, 2)?)))
        .collect()
}

pub fn plot(a: PlotArgs) -> anyhow::Result<()> {
    let path = &a.input;
    let svg = match a.kind {
        PlotKind::Capacity => {
            let rows = read_predictions_csv(File::open(path).with_context(|| format!("cannot read {}", path.display()))?)?;
            plot::capacity(&rows)
        }
        PlotKind::Heatmap => plot::heatmap(&heatmap_cells(path, &a.metric)?, "learning rate", "beta", &a.metric),
        PlotKind::InfoPlane => {
            let rows = read_info_plane_csv(File::open(path).with_context(|| format!("cannot read {}", path.display()))?)?;
            plot::info_plane(&rows)
        }
        PlotKind::Training => plot::training(&epoch_rows(path)?),
        PlotKind::Metrics => plot::metrics(&metric_values(path)?),
    };
    prepare_out(&a.out.out)?;
    let name = match &a.name {
        Some(n) => n.clone(),
        None => {
            let stem = path.file_stem().map_or("plot".into(), |s| s.to_string_lossy().into_owned());
            format!("{stem}.svg")
        }
    };
    let out_path = a.out.out.join(name);
    std::fs::write(&out_path, svg).with_context(|| format!("cannot write {}", out_path.display()))?;

    let mut manifest = RunManifest::new("plot").inputs(&[path])?;
    manifest.config = json!({ "kind": format!("{:?}", a.kind).to_lowercase(), "metric": a.metric });
    manifest.output(&out_path)?;
    manifest.write(&a.out.out)?;
    log::info!("wrote {}", out_path.display());
    Ok(())
}
