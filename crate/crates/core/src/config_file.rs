//! Plain-text run configuration: one `key=value` per line, `#` starts a
//! comment. Unknown keys are rejected.
//!
//! ```text
//! preset=paper_analog      # or `toy`; applied before every other key
//! channels=32
//! p_map=0.6
//! epochs=50
//! seeds=0,1,2,3,4
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{MafError, Result};
use crate::model::MafConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: MafConfig,
    pub train: TrainConfig,
    /// Seeds swept by the ablation.
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: MafConfig::paper_analog(),
            train: TrainConfig::desk(),
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

impl RunConfig {
    pub fn toy() -> Self {
        RunConfig {
            model: MafConfig::toy(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(MafError::Config("seeds must list at least one seed".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| MafError::io(path, e))?;
        parse_run_config(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = render_model_config(&self.model);
        let t = &self.train;
        let _ = writeln!(s, "epochs={}", t.epochs);
        let _ = writeln!(s, "batch_size={}", t.batch_size);
        let _ = writeln!(s, "lr={}", t.lr);
        let _ = writeln!(s, "momentum={}", t.momentum);
        let _ = writeln!(s, "weight_decay={}", t.weight_decay);
        let _ = writeln!(s, "lr_period={}", t.lr_period);
        let _ = writeln!(s, "seed={}", t.seed);
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "seeds={}", seeds.join(","));
        s
    }
}

/// Splits `text` into `(line number, key, value)` triples.
pub(crate) fn key_values(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(MafError::Config(format!("line {}: expected key=value, got `{line}`", i + 1)));
        };
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| MafError::Config(format!("line {line}: cannot parse {key}=`{value}`")))
}

/// Applies one model key. Returns `Ok(false)` when `key` is not a model key.
pub(crate) fn apply_model_key(m: &mut MafConfig, line: usize, key: &str, value: &str) -> Result<bool> {
    match key {
        "image_height" => m.image_size.0 = parse(line, key, value)?,
        "image_width" => m.image_size.1 = parse(line, key, value)?,
        "channels" => m.channels = parse(line, key, value)?,
        "num_lanets" => m.num_lanets = parse(line, key, value)?,
        "reduction" => m.reduction = parse(line, key, value)?,
        "p_map" => m.p_map = parse(line, key, value)?,
        "p_head" => m.p_head = parse(line, key, value)?,
        "heads" => m.heads = parse(line, key, value)?,
        "units" => m.units = parse(line, key, value)?,
        "num_classes" => m.num_classes = parse(line, key, value)?,
        "use_mlfe" => m.use_mlfe = parse(line, key, value)?,
        "use_llfe" => m.use_llfe = parse(line, key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn apply_train_key(t: &mut TrainConfig, line: usize, key: &str, value: &str) -> Result<bool> {
    match key {
        "epochs" => t.epochs = parse(line, key, value)?,
        "batch_size" => t.batch_size = parse(line, key, value)?,
        "lr" => t.lr = parse(line, key, value)?,
        "momentum" => t.momentum = parse(line, key, value)?,
        "weight_decay" => t.weight_decay = parse(line, key, value)?,
        "lr_period" => t.lr_period = parse(line, key, value)?,
        "seed" => t.seed = parse(line, key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let kvs = key_values(text)?;
    let mut cfg = RunConfig::default();
    let mut preset_seen = false;
    for (line, k, v) in &kvs {
        if k == "preset" {
            if preset_seen {
                return Err(MafError::Config(format!("line {line}: preset given twice")));
            }
            preset_seen = true;
            cfg = match v.as_str() {
                "paper_analog" => RunConfig {
                    train: TrainConfig::paper_analog(),
                    ..RunConfig::default()
                },
                "desk" => RunConfig::default(),
                "toy" => RunConfig::toy(),
                other => {
                    return Err(MafError::Config(format!(
                        "line {line}: unknown preset `{other}` (expected desk, paper_analog or toy)"
                    )))
                }
            };
        }
    }
    for (line, k, v) in &kvs {
        let (line, k, v) = (*line, k.as_str(), v.as_str());
        if k == "preset"
            || apply_model_key(&mut cfg.model, line, k, v)?
            || apply_train_key(&mut cfg.train, line, k, v)?
        {
            continue;
        }
        if k == "seeds" {
            cfg.seeds = v
                .split(',')
                .map(|s| parse(line, k, s.trim()))
                .collect::<Result<_>>()?;
            continue;
        }
        return Err(MafError::Config(format!("line {line}: unknown key `{k}`")));
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Model keys in a fixed order; floats use the shortest exact decimal form.
pub fn render_model_config(m: &MafConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "image_height={}", m.image_size.0);
    let _ = writeln!(s, "image_width={}", m.image_size.1);
    let _ = writeln!(s, "channels={}", m.channels);
    let _ = writeln!(s, "num_lanets={}", m.num_lanets);
    let _ = writeln!(s, "reduction={}", m.reduction);
    let _ = writeln!(s, "p_map={}", m.p_map);
    let _ = writeln!(s, "p_head={}", m.p_head);
    let _ = writeln!(s, "heads={}", m.heads);
    let _ = writeln!(s, "units={}", m.units);
    let _ = writeln!(s, "num_classes={}", m.num_classes);
    let _ = writeln!(s, "use_mlfe={}", m.use_mlfe);
    let _ = writeln!(s, "use_llfe={}", m.use_llfe);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_text() {
        let mut cfg = RunConfig::toy();
        cfg.model.p_map = 0.3;
        cfg.train.lr = 0.012_345;
        cfg.seeds = vec![7, 9];
        assert_eq!(parse_run_config(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn comments_and_preset_order() {
        let cfg = parse_run_config("channels=16 # narrower\n\n# full line\npreset=toy\n").unwrap();
        assert_eq!(cfg.model.channels, 16);
        assert_eq!(cfg.model.image_size, (12, 12));
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = parse_run_config("chanels=16\n").unwrap_err();
        assert!(err.to_string().contains("unknown key `chanels`"), "{err}");
    }

    #[test]
    fn invariant_violation_names_the_invariant() {
        let err = parse_run_config("heads=3\n").unwrap_err();
        assert!(err.to_string().contains("heads (3) must divide channels (32)"), "{err}");
    }
}
