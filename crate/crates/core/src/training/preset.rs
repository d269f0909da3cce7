//! Key-value model presets.
//!
//! A preset is a `[common]` section followed by one section per model.
//! Model sections override common keys; `beta = /` means no HSIC term.

use std::path::Path;

use indexmap::IndexMap;

use super::{OptimizerKind, TrainConfig};
use crate::error::{Error, Result};
use crate::hsic::BandwidthPolicy;
use crate::recurrent::CellKind;

pub const PRESET_NAMES: [&str; 3] = ["cs", "cx2", "nasa_rw"];

const CS: &str = include_str!("../../presets/cs.cfg");
const CX2: &str = include_str!("../../presets/cx2.cfg");
const NASA_RW: &str = include_str!("../../presets/nasa_rw.cfg");

#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub name: String,
    pub test_battery: Option<String>,
    pub val_battery: Option<String>,
    /// Model sections in file order.
    pub models: IndexMap<String, TrainConfig>,
}

impl Preset {
    pub fn model(&self, name: &str) -> Result<&TrainConfig> {
        self.models.get(name).ok_or_else(|| {
            let known: Vec<&str> = self.models.keys().map(String::as_str).collect();
            Error::invalid(format!(
                "preset `{}` has no model `{name}` (available: {})",
                self.name,
                known.join(", ")
            ))
        })
    }
}

pub fn builtin_preset(name: &str) -> Result<Preset> {
    let text = match name {
        "cs" => CS,
        "cx2" => CX2,
        "nasa_rw" => NASA_RW,
        other => {
            return Err(Error::invalid(format!(
                "unknown preset `{other}` (available: {})",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    parse_preset(name, text, Path::new(&format!("<preset {name}>")))
}

/// Reads a preset from a file; the preset is named after the file stem.
pub fn load_preset(path: impl AsRef<Path>) -> Result<Preset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_preset(&name, &text, path)
}

pub fn parse_preset(name: &str, text: &str, origin: &Path) -> Result<Preset> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line: line as u64,
        message,
    };
    let mut sections: IndexMap<String, Vec<(usize, String, String)>> = IndexMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let section = rest
                .strip_suffix(']')
                .ok_or_else(|| err(line_no, format!("unterminated section header `{line}`")))?
                .trim()
                .to_ascii_lowercase();
            if sections.contains_key(&section) {
                return Err(err(line_no, format!("section [{section}] appears twice")));
            }
            sections.insert(section.clone(), Vec::new());
            current = Some(section);
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(line_no, format!("expected `key = value`, got `{line}`")))?;
        let section = current
            .as_ref()
            .ok_or_else(|| err(line_no, "key outside of any section".into()))?;
        sections[section].push((line_no, key.trim().to_ascii_lowercase(), value.trim().to_string()));
    }

    let common = sections.shift_remove("common").unwrap_or_default();
    let mut base = TrainConfig::default();
    let mut test_battery = None;
    let mut val_battery = None;
    for (line, key, value) in &common {
        match key.as_str() {
            "test_battery" => test_battery = Some(value.clone()),
            "val_battery" => val_battery = Some(value.clone()),
            _ => apply_key(&mut base, key, value).map_err(|m| err(*line, m))?,
        }
    }
    if sections.is_empty() {
        return Err(err(text.lines().count().max(1), "preset defines no model sections".into()));
    }
    let mut models = IndexMap::new();
    for (section, entries) in sections {
        let mut cfg = base.clone();
        if let Ok(cell) = section.parse::<CellKind>() {
            cfg.cell = cell;
        }
        for (line, key, value) in &entries {
            apply_key(&mut cfg, key, value).map_err(|m| err(*line, format!("[{section}] {m}")))?;
        }
        cfg.validate()
            .map_err(|e| err(entries.first().map_or(1, |e| e.0), format!("[{section}] {e}")))?;
        models.insert(section, cfg);
    }
    Ok(Preset {
        name: name.to_string(),
        test_battery,
        val_battery,
        models,
    })
}

fn apply_key(cfg: &mut TrainConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
        value
            .parse()
            .map_err(|_| format!("`{key}` expects a number, got `{value}`"))
    }
    let none = |v: &str| v == "/" || v.eq_ignore_ascii_case("none");
    match key {
        "cell" => cfg.cell = value.parse().map_err(|e: Error| e.to_string())?,
        "hidden_size" => cfg.hidden_size = num(key, value)?,
        "layers" => cfg.layers = num(key, value)?,
        "seed" => cfg.seed = num(key, value)?,
        "learning_rate" => cfg.learning_rate = num(key, value)?,
        "beta" => cfg.beta = if none(value) { None } else { Some(num(key, value)?) },
        "epochs" => cfg.epochs = num(key, value)?,
        "batch_size" => cfg.batch_size = num(key, value)?,
        "stride" => cfg.stride = num(key, value)?,
        "optimizer" => cfg.optimizer = value.parse::<OptimizerKind>().map_err(|e| e.to_string())?,
        "bandwidth" => {
            cfg.bandwidth = if value.eq_ignore_ascii_case("median") {
                BandwidthPolicy::MedianHeuristic
            } else {
                BandwidthPolicy::Fixed(num(key, value)?)
            }
        }
        "clip_norm" => cfg.clip_norm = if none(value) { None } else { Some(num(key, value)?) },
        "channels" => {
            cfg.channels = value
                .split(',')
                .map(|c| c.trim().to_string())
                .filter(|c| !c.is_empty())
                .collect()
        }
        other => return Err(format!("unknown key `{other}`")),
    }
    Ok(())
}
