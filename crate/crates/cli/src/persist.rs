//! On-disk artifacts: weight files, channel snapshots and CSV tables.

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context};
use hbnn_core::{CMat, ChannelMatrix, NetConfig, NetworkWeights, TrainHistory};
use serde::{Deserialize, Serialize};

pub const WEIGHT_FORMAT_VERSION: u32 = 1;

/// Trained weights plus the network shape and the hash of the generating
/// config. Matrices are stored as `(re, im)` pairs in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightFile {
    pub format_version: u32,
    pub net: NetConfig,
    pub w1: CMat,
    pub w2: CMat,
    pub config_hash: String,
}

impl WeightFile {
    pub fn new(net: NetConfig, weights: &NetworkWeights, config_hash: String) -> Self {
        WeightFile {
            format_version: WEIGHT_FORMAT_VERSION,
            net,
            w1: weights.w1.clone(),
            w2: weights.w2.clone(),
            config_hash,
        }
    }

    pub fn weights(&self) -> NetworkWeights {
        NetworkWeights {
            w1: self.w1.clone(),
            w2: self.w2.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let wf: WeightFile = read_json(path)?;
        if wf.format_version != WEIGHT_FORMAT_VERSION {
            bail!(
                "{}: unsupported weight format version {}",
                path.display(),
                wf.format_version
            );
        }
        wf.net.validate()?;
        wf.weights()
            .check_shapes(&wf.net)
            .with_context(|| format!("weight shapes in {}", path.display()))?;
        Ok(wf)
    }
}

/// Loads a channel snapshot and checks that its paths rebuild the stored
/// matrix exactly.
pub fn load_channel(path: &Path) -> anyhow::Result<ChannelMatrix> {
    let stored: ChannelMatrix = read_json(path)?;
    let rebuilt = ChannelMatrix::from_paths(
        stored.config(),
        stored.betas().to_vec(),
        stored.paths().to_vec(),
    )
    .with_context(|| format!("rebuilding channel from {}", path.display()))?;
    ensure!(
        rebuilt.matrix() == stored.matrix(),
        "{}: stored matrix does not match its path components",
        path.display()
    );
    Ok(rebuilt)
}

pub fn save_channel(path: &Path, ch: &ChannelMatrix) -> anyhow::Result<()> {
    write_json(path, ch)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Full-precision float formatting shared by every CSV column. Seventeen
/// significant digits round-trip any finite double.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_history_csv(path: &Path, history: &TrainHistory) -> anyhow::Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["epoch", "train_cost", "test_cost"])?;
    for rec in &history.epochs {
        w.write_record([
            rec.epoch.to_string(),
            fmt_f64(rec.train_cost),
            fmt_f64(rec.test_cost),
        ])?;
    }
    w.flush()?;
    Ok(())
}
