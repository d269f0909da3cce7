//! Canonical cycle CSV.
//!
//! Header: `battery_id,nominal_capacity_ah,cycle_index,t_s,<channel...>` with
//! an optional trailing `capacity_ah` label column. One row per sample, rows
//! grouped by battery then cycle, time strictly increasing within a cycle.
//! Discharge current is negative.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use super::{BatteryDataset, CycleRecord};
use crate::error::{Error, Result};

const FIXED: [&str; 4] = ["battery_id", "nominal_capacity_ah", "cycle_index", "t_s"];
const LABEL: &str = "capacity_ah";

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads every battery in a canonical CSV file, in order of appearance.
pub fn load_canonical(path: impl AsRef<Path>) -> Result<Vec<BatteryDataset>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_canonical(file, path)
}

/// Loads several files; battery ids must be unique across them.
pub fn load_many<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<BatteryDataset>> {
    let mut all: Vec<BatteryDataset> = Vec::new();
    for p in paths {
        for ds in load_canonical(p)? {
            if all.iter().any(|d| d.battery_id == ds.battery_id) {
                return Err(Error::Data(format!(
                    "battery {} appears in more than one input",
                    ds.battery_id
                )));
            }
            all.push(ds);
        }
    }
    Ok(all)
}

pub(crate) fn read_canonical<R: Read>(reader: R, path: &Path) -> Result<Vec<BatteryDataset>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    for (k, want) in FIXED.iter().enumerate() {
        match header.get(k) {
            Some(h) if h == *want => {}
            Some(h) => return Err(parse_err(path, 1, format!("column {} must be `{want}`, found `{h}`", k + 1))),
            None => return Err(parse_err(path, 1, format!("missing column `{want}`"))),
        }
    }
    let mut channel_names: Vec<String> = header.iter().skip(FIXED.len()).map(str::to_string).collect();
    let has_label = channel_names.last().map(String::as_str) == Some(LABEL);
    if has_label {
        channel_names.pop();
    }
    if channel_names.is_empty() {
        return Err(parse_err(path, 1, "no channel columns"));
    }
    if let Some(dup) = channel_names
        .iter()
        .enumerate()
        .find(|(i, n)| channel_names[..*i].contains(n) || FIXED.contains(&n.as_str()) || n.as_str() == LABEL)
    {
        return Err(parse_err(path, 1, format!("duplicate or reserved column `{}`", dup.1)));
    }

    let mut out: Vec<BatteryDataset> = Vec::new();
    let mut cycle_start_line = 0u64;
    let mut record = csv::StringRecord::new();
    loop {
        let more = rdr.read_record(&mut record).map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let num = |k: usize| -> Result<f64> {
            let field = &record[k];
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(path, line, format!("`{}` is not a number: `{field}`", &header[k])))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("`{}` is not finite", &header[k])));
            }
            Ok(v)
        };
        let battery_id = record[0].to_string();
        if battery_id.is_empty() {
            return Err(parse_err(path, line, "empty battery_id"));
        }
        let nominal = num(1)?;
        let cycle_index: usize = record[2]
            .parse()
            .map_err(|_| parse_err(path, line, format!("cycle_index must be a non-negative integer, found `{}`", &record[2])))?;
        let t = num(3)?;
        let values: Vec<f64> = (0..channel_names.len())
            .map(|k| num(FIXED.len() + k))
            .collect::<Result<_>>()?;
        let label = if has_label {
            let field = &record[header.len() - 1];
            if field.is_empty() {
                None
            } else {
                Some(num(header.len() - 1)?)
            }
        } else {
            None
        };

        let new_battery = out.last().map_or(true, |b| b.battery_id != battery_id);
        if new_battery {
            if out.iter().any(|b| b.battery_id == battery_id) {
                return Err(parse_err(path, line, format!("rows of battery {battery_id} are not contiguous")));
            }
            out.push(BatteryDataset {
                battery_id: battery_id.clone(),
                nominal_capacity: nominal,
                cycles: Vec::new(),
            });
        }
        let battery = out.last_mut().expect("pushed above");
        if battery.nominal_capacity != nominal {
            return Err(parse_err(path, line, format!("nominal capacity changes within battery {battery_id}")));
        }
        let new_cycle = battery.cycles.last().map_or(true, |c| c.cycle_index != cycle_index);
        if new_cycle {
            if let Some(prev) = battery.cycles.last() {
                if cycle_index < prev.cycle_index {
                    return Err(parse_err(
                        path,
                        line,
                        format!("cycle {cycle_index} follows cycle {} (cycles must be grouped and increasing)", prev.cycle_index),
                    ));
                }
                if prev.len() < 2 {
                    return Err(parse_err(path, cycle_start_line, format!("cycle {} has fewer than 2 samples", prev.cycle_index)));
                }
            }
            cycle_start_line = line;
            battery.cycles.push(CycleRecord {
                cycle_index,
                timestamps: Vec::new(),
                channels: channel_names.iter().map(|n| (n.clone(), Vec::new())).collect::<IndexMap<_, _>>(),
                capacity_label: label,
                soh: None,
            });
        }
        let cycle = battery.cycles.last_mut().expect("pushed above");
        if let Some(&prev_t) = cycle.timestamps.last() {
            if !(t > prev_t) {
                return Err(parse_err(
                    path,
                    line,
                    format!("time does not increase within cycle {cycle_index} ({t} after {prev_t})"),
                ));
            }
        }
        if cycle.capacity_label != label {
            return Err(parse_err(path, line, format!("capacity label changes within cycle {cycle_index}")));
        }
        cycle.timestamps.push(t);
        for (series, v) in cycle.channels.values_mut().zip(values) {
            series.push(v);
        }
    }

    if out.is_empty() {
        return Err(parse_err(path, 1, "no cycles"));
    }
    for battery in &mut out {
        if let Some(last) = battery.cycles.last() {
            if last.len() < 2 {
                return Err(parse_err(path, cycle_start_line, format!("cycle {} has fewer than 2 samples", last.cycle_index)));
            }
        }
        for cycle in &mut battery.cycles {
            cycle.soh = cycle.capacity_label.map(|c| c / battery.nominal_capacity);
        }
        battery.validate()?;
    }
    Ok(out)
}

/// Writes batteries sharing one channel set. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_canonical<W: Write>(writer: W, datasets: &[BatteryDataset]) -> Result<()> {
    let first = datasets
        .first()
        .ok_or_else(|| Error::Data("no cycles".into()))?;
    let channels = first.channel_names();
    let labeled = datasets
        .iter()
        .flat_map(|d| &d.cycles)
        .any(|c| c.capacity_label.is_some());
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = FIXED.to_vec();
    header.extend(channels.iter().map(String::as_str));
    if labeled {
        header.push(LABEL);
    }
    wtr.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for ds in datasets {
        ds.validate()?;
        if ds.channel_names() != channels {
            return Err(Error::Data(format!(
                "battery {} has channels {:?}, file uses {:?}",
                ds.battery_id,
                ds.channel_names(),
                channels
            )));
        }
        for cycle in &ds.cycles {
            if cycle.channels.keys().ne(channels.iter()) {
                return Err(Error::Data(format!(
                    "battery {} cycle {} has a different channel set",
                    ds.battery_id, cycle.cycle_index
                )));
            }
            for t in 0..cycle.len() {
                row.clear();
                row.push(ds.battery_id.clone());
                row.push(ds.nominal_capacity.to_string());
                row.push(cycle.cycle_index.to_string());
                row.push(cycle.timestamps[t].to_string());
                for series in cycle.channels.values() {
                    row.push(series[t].to_string());
                }
                if labeled {
                    row.push(cycle.capacity_label.map(|c| c.to_string()).unwrap_or_default());
                }
                wtr.write_record(&row)?;
            }
        }
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_canonical(path: impl AsRef<Path>, datasets: &[BatteryDataset]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_canonical(std::io::BufWriter::new(file), datasets)
}

/// Applies a `battery_id,cycle_index,capacity_ah` labels file. Every cycle of
/// every listed battery must be covered.
pub fn apply_labels_file(datasets: &mut [BatteryDataset], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["battery_id", "cycle_index", LABEL] {
        return Err(parse_err(path, 1, "labels header must be `battery_id,cycle_index,capacity_ah`"));
    }
    let mut labels: IndexMap<(String, usize), f64> = IndexMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let idx: usize = rec[1]
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad cycle_index `{}`", &rec[1])))?;
        let cap: f64 = rec[2]
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad capacity `{}`", &rec[2])))?;
        labels.insert((rec[0].to_string(), idx), cap);
    }
    for ds in datasets.iter_mut() {
        if !labels.keys().any(|(b, _)| *b == ds.battery_id) {
            continue;
        }
        let caps = ds
            .cycles
            .iter()
            .map(|c| {
                labels
                    .get(&(ds.battery_id.clone(), c.cycle_index))
                    .copied()
                    .ok_or_else(|| Error::Data(format!("no label for battery {} cycle {}", ds.battery_id, c.cycle_index)))
            })
            .collect::<Result<Vec<_>>>()?;
        ds.set_labels(&caps)?;
    }
    Ok(())
}
