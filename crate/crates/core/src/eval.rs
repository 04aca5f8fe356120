//! Link-level evaluation: per-user SINR, sum spectral efficiency and
//! Monte-Carlo QPSK bit error rate.
//!
//! Users are single-antenna receivers that cannot cooperate, so detection is
//! per-user scalar ML against the effective gain `g_k = h_k^H f_k` with
//! residual inter-user interference treated as noise.

use std::f64::consts::FRAC_1_SQRT_2;

use serde::{Deserialize, Serialize};

use crate::cxnet::{self, NetConfig, NetworkWeights};
use crate::error::{Error, Result};
use crate::numerics::{CMat, SeededRng, C64};

/// Gray-mapped QPSK, indexed by `2 * b0 + b1`.
pub const QPSK: [C64; 4] = [
    C64::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2),
    C64::new(FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
    C64::new(-FRAC_1_SQRT_2, FRAC_1_SQRT_2),
    C64::new(-FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
];

/// Smallest symbol count accepted for a reported BER point.
pub const MIN_REPORTED_SYMBOLS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Linear noise power.
    pub noise_power: f64,
    pub snr_db_list: Vec<f64>,
    /// QPSK symbols per user and BER point.
    pub n_symbols: usize,
    pub n_channel_trials: usize,
    pub seed: u64,
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_power > 0.0 && self.noise_power.is_finite()) {
            return Err(Error::config("noise_power", "must be positive and finite"));
        }
        if self.n_symbols < MIN_REPORTED_SYMBOLS {
            return Err(Error::config(
                "n_symbols",
                format!("must be at least {MIN_REPORTED_SYMBOLS}"),
            ));
        }
        if self.n_channel_trials == 0 {
            return Err(Error::config("n_channel_trials", "must be at least 1"));
        }
        Ok(())
    }
}

/// Counted bit errors for one user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BerCounts {
    pub bit_errors: u64,
    pub bits: u64,
}

impl BerCounts {
    pub fn ber(&self) -> f64 {
        if self.bits == 0 {
            0.0
        } else {
            self.bit_errors as f64 / self.bits as f64
        }
    }

    pub fn merge(&mut self, other: BerCounts) {
        self.bit_errors += other.bit_errors;
        self.bits += other.bits;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub noise_power: f64,
    pub sinr: Vec<f64>,
    pub spectral_efficiency: f64,
    pub ber_per_user: Vec<BerCounts>,
    pub n_symbols: usize,
}

impl EvalResult {
    pub fn total_counts(&self) -> BerCounts {
        let mut t = BerCounts::default();
        for c in &self.ber_per_user {
            t.merge(*c);
        }
        t
    }

    pub fn ber_avg(&self) -> f64 {
        self.total_counts().ber()
    }
}

/// Recovers the effective linear precoder of a trained network by feeding
/// the columns of the identity: column `j` is the output for input `e_j`.
pub fn probe_effective_precoder(w: &NetworkWeights, cfg: &NetConfig) -> CMat {
    let mut y = CMat::zeros(cfg.n_t, cfg.n_s);
    for j in 0..cfg.n_s {
        let mut e = CMat::zeros(cfg.n_s, 1);
        e[(j, 0)] = C64::new(1.0, 0.0);
        let out = cxnet::forward(w, &e, cfg).a3;
        y.set_col(j, out.as_slice());
    }
    y
}

/// Scales `f` down onto the budget `||f||_F^2 <= p_max`; feasible precoders
/// are returned unchanged.
pub fn project_power(f: &CMat, p_max: f64) -> CMat {
    let power = f.fro_norm_sq();
    if power > p_max {
        f.scale_real((p_max / power).sqrt())
    } else {
        f.clone()
    }
}

/// `|h_k^H f_k|^2 / (noise + sum_{i != k} |h_k^H f_i|^2)` for every user.
pub fn sinr_per_user(h: &CMat, f: &CMat, noise_power: f64) -> Vec<f64> {
    assert_eq!(h.shape(), f.shape(), "channel and precoder shapes differ");
    assert!(noise_power > 0.0, "noise power must be positive");
    let g = h.adjoint_mul(f);
    (0..g.rows())
        .map(|k| {
            let signal = g[(k, k)].norm_sqr();
            let interference: f64 = (0..g.cols())
                .filter(|&i| i != k)
                .map(|i| g[(k, i)].norm_sqr())
                .sum();
            signal / (noise_power + interference)
        })
        .collect()
}

/// Sum rate `sum_k log2(1 + SINR_k)` in bits/s/Hz.
pub fn spectral_efficiency(sinrs: &[f64]) -> f64 {
    sinrs.iter().map(|s| (1.0 + s).log2()).sum()
}

pub fn qpsk_map(b0: bool, b1: bool) -> C64 {
    QPSK[qpsk_index(b0, b1)]
}

fn qpsk_index(b0: bool, b1: bool) -> usize {
    2 * usize::from(b0) + usize::from(b1)
}

/// ML decision `argmin_s |y - gain * s|^2`. Ties go to the lowest
/// constellation index.
pub fn qpsk_demap_ml(y: C64, gain: C64) -> Result<(bool, bool)> {
    if gain.norm_sqr() == 0.0 {
        return Err(Error::ZeroGain);
    }
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (i, s) in QPSK.iter().enumerate() {
        let d = (y - gain * s).norm_sqr();
        if d < best_dist {
            best = i;
            best_dist = d;
        }
    }
    Ok((best >= 2, best % 2 == 1))
}

fn count_errors(sent: (bool, bool), got: (bool, bool)) -> u64 {
    u64::from(sent.0 != got.0) + u64::from(sent.1 != got.1)
}

/// How transmit vectors are produced from the symbol vector `s`.
enum Transmit<'a> {
    Linear,
    Network(&'a NetworkWeights, &'a NetConfig),
}

/// Monte-Carlo QPSK BER with linear precoding `x = F s`.
///
/// Per symbol period the stream draws both bits of every user, then every
/// user's noise sample.
pub fn ber_sim(
    h: &CMat,
    f: &CMat,
    noise_power: f64,
    n_symbols: usize,
    rng: &mut SeededRng,
) -> Result<Vec<BerCounts>> {
    run_ber(h, f, Transmit::Linear, noise_power, n_symbols, rng)
}

/// Like [`ber_sim`], but every symbol vector is pushed through the
/// nonlinear network. The receivers still detect against the gains of the
/// probed precoder `f`.
pub fn ber_sim_network(
    h: &CMat,
    w: &NetworkWeights,
    cfg: &NetConfig,
    noise_power: f64,
    n_symbols: usize,
    rng: &mut SeededRng,
) -> Result<Vec<BerCounts>> {
    let f = probe_effective_precoder(w, cfg);
    run_ber(
        h,
        &f,
        Transmit::Network(w, cfg),
        noise_power,
        n_symbols,
        rng,
    )
}

fn run_ber(
    h: &CMat,
    f: &CMat,
    tx: Transmit<'_>,
    noise_power: f64,
    n_symbols: usize,
    rng: &mut SeededRng,
) -> Result<Vec<BerCounts>> {
    if h.shape() != f.shape() {
        return Err(Error::ShapeMismatch(format!(
            "channel {:?} vs precoder {:?}",
            h.shape(),
            f.shape()
        )));
    }
    let k = h.cols();
    let g = h.adjoint_mul(f);
    let gains: Vec<C64> = (0..k).map(|i| g[(i, i)]).collect();
    if gains.iter().any(|v| v.norm_sqr() == 0.0) {
        return Err(Error::ZeroGain);
    }
    let mut counts = vec![BerCounts::default(); k];
    let mut bits = vec![(false, false); k];
    let mut s = CMat::zeros(k, 1);
    for _ in 0..n_symbols {
        for (u, b) in bits.iter_mut().enumerate() {
            *b = (rng.bit(), rng.bit());
            s[(u, 0)] = qpsk_map(b.0, b.1);
        }
        let rx_clean = match tx {
            Transmit::Linear => g.matmul(&s),
            Transmit::Network(w, cfg) => h.adjoint_mul(&cxnet::forward(w, &s, cfg).a3),
        };
        for u in 0..k {
            let y = rx_clean[(u, 0)] + rng.complex_normal(noise_power);
            let got = qpsk_demap_ml(y, gains[u])?;
            counts[u].bit_errors += count_errors(bits[u], got);
            counts[u].bits += 2;
        }
    }
    Ok(counts)
}

/// SINR, spectral efficiency and BER of one linear precoder.
pub fn evaluate(
    h: &CMat,
    f: &CMat,
    noise_power: f64,
    n_symbols: usize,
    rng: &mut SeededRng,
) -> Result<EvalResult> {
    let sinr = sinr_per_user(h, f, noise_power);
    let spectral_efficiency = spectral_efficiency(&sinr);
    let ber_per_user = ber_sim(h, f, noise_power, n_symbols, rng)?;
    Ok(EvalResult {
        noise_power,
        sinr,
        spectral_efficiency,
        ber_per_user,
        n_symbols,
    })
}

/// Noise power for a transmit-SNR in dB, `snr = p_max / noise`.
pub fn noise_power_for_snr(p_max: f64, snr_db: f64) -> f64 {
    p_max / 10f64.powf(snr_db / 10.0)
}
