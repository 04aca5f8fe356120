//! Experiment configuration, persisted as a single JSON document.
//!
//! Units: distances and wavelengths in meters, angles in radians, powers
//! linear, SNRs in dB. SNR is transmit power over noise, `p_max / noise`,
//! with `p_max = K * power_per_user`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context};
use hbnn_core::{ChannelConfig, Error, NetConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Full-digital zero-forcing.
    Zf,
    /// Phased-ZF hybrid baseline.
    Pzf,
    /// Trained network, probed with the identity.
    Nn,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Zf, Method::Pzf, Method::Nn];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Zf => "zf",
            Method::Pzf => "pzf",
            Method::Nn => "nn",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zf" => Ok(Method::Zf),
            "pzf" => Ok(Method::Pzf),
            "nn" => Ok(Method::Nn),
            other => bail!("unknown method {other:?} (expected zf, pzf or nn)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 128 antennas (8 x 16 UPA), 16 RF chains, 80 rays.
    Paper,
    /// 32 antennas (4 x 8 UPA), 8 RF chains, 20 rays. Fast enough for CI.
    Desk,
}

impl FromStr for Profile {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => bail!("unknown profile {other:?} (expected paper or desk)"),
        }
    }
}

/// Training hyperparameters. Per-run seeds are derived from the top-level
/// seed, so none is stored here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub max_epochs: usize,
    pub error_threshold: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub alpha: f64,
    pub mu: f64,
    pub shuffle: bool,
}

impl TrainSettings {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            max_epochs: self.max_epochs,
            error_threshold: self.error_threshold,
            n_train: self.n_train,
            n_test: self.n_test,
            alpha: self.alpha,
            mu: self.mu,
            seed,
            shuffle: self.shuffle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    /// Operating point of spectral-efficiency and single-point BER results.
    pub snr_db: f64,
    /// BER-versus-SNR sweep points.
    pub snr_db_list: Vec<f64>,
    /// User counts of the user sweep.
    pub k_values: Vec<usize>,
    /// User count of the SNR sweep.
    pub snr_sweep_users: usize,
    /// QPSK symbols per user, per channel trial and BER point.
    pub n_symbols: usize,
    pub n_channel_trials: usize,
    pub methods: Vec<Method>,
    /// Scale the probed network precoder onto the power budget when it
    /// exceeds it.
    pub nn_power_projection: bool,
    /// Push every symbol vector through the nonlinear network for BER
    /// instead of using the probed linear precoder.
    pub nn_nonlinear_ber: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    /// Root of every random stream; stream seeds are derived from it by label.
    pub seed: u64,
    /// `n_users` is the user count of `train` and `eval`.
    pub channel: ChannelConfig,
    pub n_rf: usize,
    pub power_per_user: f64,
    pub train: TrainSettings,
    pub eval: EvalSettings,
}

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => ExperimentConfig {
                profile,
                seed: 1,
                channel: ChannelConfig::new(8, 16, 4, 80),
                n_rf: 16,
                power_per_user: 1.0,
                train: TrainSettings {
                    max_epochs: 200,
                    error_threshold: 1e-8,
                    n_train: 100,
                    n_test: 100,
                    alpha: 0.9,
                    mu: 0.005,
                    shuffle: false,
                },
                eval: EvalSettings {
                    snr_db: 0.0,
                    snr_db_list: (0..=10).map(|i| -20.0 + 2.0 * i as f64).collect(),
                    k_values: vec![2, 4, 6, 8],
                    snr_sweep_users: 3,
                    n_symbols: 1_000_000,
                    n_channel_trials: 20,
                    methods: Method::ALL.to_vec(),
                    nn_power_projection: true,
                    nn_nonlinear_ber: false,
                },
            },
            Profile::Desk => ExperimentConfig {
                profile,
                seed: 1,
                channel: ChannelConfig::new(4, 8, 4, 20),
                n_rf: 8,
                power_per_user: 1.0,
                train: TrainSettings {
                    max_epochs: 200,
                    error_threshold: 1e-8,
                    n_train: 100,
                    n_test: 100,
                    alpha: 0.9,
                    mu: 0.01,
                    shuffle: false,
                },
                eval: EvalSettings {
                    snr_db: 0.0,
                    snr_db_list: (0..=5).map(|i| -15.0 + 3.0 * i as f64).collect(),
                    k_values: vec![2, 4, 6, 8],
                    snr_sweep_users: 3,
                    n_symbols: 10_000,
                    n_channel_trials: 5,
                    methods: Method::ALL.to_vec(),
                    nn_power_projection: true,
                    nn_nonlinear_ber: false,
                },
            },
        }
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let compact = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(compact.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn p_max(&self, n_users: usize) -> f64 {
        self.power_per_user * n_users as f64
    }

    pub fn net_config(&self, n_users: usize) -> Result<NetConfig, Error> {
        NetConfig::new(n_users, self.n_rf, self.channel.n_tx, self.p_max(n_users))
    }

    /// Checks every sub-configuration, including the network shape for every
    /// user count the experiments will use.
    pub fn validate(&self) -> Result<(), Error> {
        let invalid = |field: &str, reason: String| Error::InvalidConfig {
            field: field.to_string(),
            reason,
        };
        self.channel.validate()?;
        if !(self.power_per_user > 0.0 && self.power_per_user.is_finite()) {
            return Err(invalid("power_per_user", "must be positive".into()));
        }
        self.train.to_train_config(0).validate()?;
        let mut users = vec![self.channel.n_users, self.eval.snr_sweep_users];
        users.extend(&self.eval.k_values);
        for &k in &users {
            self.net_config(k).map_err(|e| match e {
                Error::InvalidConfig { field, reason } => {
                    invalid(&field, format!("{reason} (at K = {k})"))
                }
                other => other,
            })?;
        }
        if self.eval.k_values.is_empty() {
            return Err(invalid("eval.k_values", "must not be empty".into()));
        }
        if self.eval.snr_db_list.is_empty() {
            return Err(invalid("eval.snr_db_list", "must not be empty".into()));
        }
        if self.eval.snr_db_list.iter().any(|s| !s.is_finite()) || !self.eval.snr_db.is_finite() {
            return Err(invalid("eval.snr_db", "must be finite".into()));
        }
        if self.eval.methods.is_empty() {
            return Err(invalid(
                "eval.methods",
                "must name at least one method".into(),
            ));
        }
        if self.eval.n_symbols < hbnn_core::eval::MIN_REPORTED_SYMBOLS {
            return Err(invalid(
                "eval.n_symbols",
                format!(
                    "must be at least {} for reported BER points",
                    hbnn_core::eval::MIN_REPORTED_SYMBOLS
                ),
            ));
        }
        if self.eval.n_channel_trials == 0 {
            return Err(invalid(
                "eval.n_channel_trials",
                "must be at least 1".into(),
            ));
        }
        Ok(())
    }
}
