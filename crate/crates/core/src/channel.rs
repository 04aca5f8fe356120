//! Geometric multipath mmWave downlink channel with a uniform planar array.
//!
//! Each user column is a scaled sum of `n_ray` planar-array responses:
//!
//! ```text
//! h_k = sqrt(N_T * beta_k / N_ray) * sum_i rho_{k,i} * u(psi_{k,i}, theta_{k,i})
//! ```
//!
//! with large-scale fading `beta_k = zeta / l_k^gamma` and log-normal
//! shadowing `zeta`. Angle, distance and gain distributions are not fixed by
//! the model; the defaults here are uniform angles, uniform distances on
//! `[20, 100]` m, `gamma = 3` and unit ray variance.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{CMat, SeededRng, C64};

/// Carrier wavelength at 28 GHz, in meters.
pub const WAVELENGTH_28GHZ: f64 = 299_792_458.0 / 28.0e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Transmit antennas, `upa_rows * upa_cols`.
    pub n_tx: usize,
    pub upa_rows: usize,
    pub upa_cols: usize,
    pub n_users: usize,
    /// Multipath components per user.
    pub n_ray: usize,
    /// Meters.
    pub wavelength: f64,
    /// Inter-element spacing in meters, half a wavelength by default.
    pub spacing: f64,
    /// Path loss exponent.
    pub pathloss_exp: f64,
    /// User distance range in meters, sampled uniformly.
    pub dist_range: (f64, f64),
    /// Variance of the dB-domain shadowing Gaussian, dB^2.
    pub shadow_var_db: f64,
    /// Per-ray complex gain variance.
    pub ray_gain_var: f64,
    /// Azimuth range in radians, sampled uniformly.
    pub azimuth_range: (f64, f64),
    /// Elevation range in radians, sampled uniformly.
    pub elevation_range: (f64, f64),
    /// Forces `beta_k = 1` (no path loss or shadowing draws).
    pub normalized: bool,
}

impl ChannelConfig {
    /// Planar array of `upa_rows x upa_cols` elements with the default
    /// propagation parameters.
    pub fn new(upa_rows: usize, upa_cols: usize, n_users: usize, n_ray: usize) -> Self {
        ChannelConfig {
            n_tx: upa_rows * upa_cols,
            upa_rows,
            upa_cols,
            n_users,
            n_ray,
            wavelength: WAVELENGTH_28GHZ,
            spacing: WAVELENGTH_28GHZ / 2.0,
            pathloss_exp: 3.0,
            dist_range: (20.0, 100.0),
            shadow_var_db: 9.2,
            ray_gain_var: 1.0,
            azimuth_range: (0.0, 2.0 * PI),
            elevation_range: (0.0, PI),
            normalized: true,
        }
    }

    pub fn with_users(&self, n_users: usize) -> Self {
        ChannelConfig {
            n_users,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.upa_rows == 0 || self.upa_cols == 0 {
            return Err(Error::config("upa_rows/upa_cols", "must be at least 1"));
        }
        if self.n_tx != self.upa_rows * self.upa_cols {
            return Err(Error::config(
                "n_tx",
                format!(
                    "must equal upa_rows * upa_cols = {}, got {}",
                    self.upa_rows * self.upa_cols,
                    self.n_tx
                ),
            ));
        }
        if self.n_users == 0 {
            return Err(Error::config("n_users", "must be at least 1"));
        }
        if self.n_ray == 0 {
            return Err(Error::config("n_ray", "must be at least 1"));
        }
        if !(self.wavelength > 0.0) || !(self.spacing > 0.0) {
            return Err(Error::config("wavelength/spacing", "must be positive"));
        }
        if !(self.dist_range.0 > 0.0) || self.dist_range.1 < self.dist_range.0 {
            return Err(Error::config("dist_range", "needs 0 < min <= max"));
        }
        if !(self.shadow_var_db >= 0.0) {
            return Err(Error::config("shadow_var_db", "must be non-negative"));
        }
        if !(self.ray_gain_var >= 0.0) {
            return Err(Error::config("ray_gain_var", "must be non-negative"));
        }
        if !self.pathloss_exp.is_finite() {
            return Err(Error::config("pathloss_exp", "must be finite"));
        }
        Ok(())
    }
}

/// One propagation path of a user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathComponent {
    pub gain: C64,
    pub azimuth: f64,
    pub elevation: f64,
}

/// Channel realization `H` (N_T x K) together with everything used to build it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMatrix {
    h: CMat,
    config: ChannelConfig,
    betas: Vec<f64>,
    paths: Vec<Vec<PathComponent>>,
}

impl ChannelMatrix {
    /// Builds the channel from explicit large-scale coefficients and paths.
    pub fn from_paths(
        config: &ChannelConfig,
        betas: Vec<f64>,
        paths: Vec<Vec<PathComponent>>,
    ) -> Result<Self> {
        config.validate()?;
        if betas.len() != config.n_users || paths.len() != config.n_users {
            return Err(Error::ShapeMismatch(format!(
                "expected {} users, got {} betas and {} path lists",
                config.n_users,
                betas.len(),
                paths.len()
            )));
        }
        if paths.iter().any(|p| p.is_empty()) {
            return Err(Error::ShapeMismatch(
                "every user needs at least one path".into(),
            ));
        }
        let columns: Vec<Vec<C64>> = betas
            .iter()
            .zip(&paths)
            .map(|(&beta, p)| user_column(config, beta, p))
            .collect();
        Ok(ChannelMatrix {
            h: CMat::from_columns(&columns)?,
            config: config.clone(),
            betas,
            paths,
        })
    }

    /// Wraps a raw matrix with no stored path geometry, e.g. for tests
    /// against hand-written channels.
    pub fn from_matrix(h: CMat) -> Self {
        let (n_tx, k) = h.shape();
        let mut config = ChannelConfig::new(n_tx, 1, k, 1);
        config.normalized = true;
        ChannelMatrix {
            h,
            config,
            betas: vec![1.0; k],
            paths: vec![Vec::new(); k],
        }
    }

    pub fn matrix(&self) -> &CMat {
        &self.h
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn paths(&self) -> &[Vec<PathComponent>] {
        &self.paths
    }

    pub fn n_tx(&self) -> usize {
        self.h.rows()
    }

    pub fn n_users(&self) -> usize {
        self.h.cols()
    }

    /// Recomputes column `k` from its stored paths.
    pub fn reconstruct_column(&self, k: usize) -> Vec<C64> {
        user_column(&self.config, self.betas[k], &self.paths[k])
    }
}

fn user_column(cfg: &ChannelConfig, beta: f64, paths: &[PathComponent]) -> Vec<C64> {
    let scale = (cfg.n_tx as f64 * beta / paths.len() as f64).sqrt();
    let mut col = vec![C64::new(0.0, 0.0); cfg.n_tx];
    for p in paths {
        let u = upa_response(p.azimuth, p.elevation, cfg);
        for (c, v) in col.iter_mut().zip(u) {
            *c += p.gain * v;
        }
    }
    for c in &mut col {
        *c *= scale;
    }
    col
}

/// Planar array response, flattened row-major (`n = l * upa_cols + r`):
///
/// ```text
/// u_n = exp(j * 2pi/lambda * d * (l sin(psi) sin(theta) + r cos(theta))) / sqrt(N_T)
/// ```
pub fn upa_response(azimuth: f64, elevation: f64, cfg: &ChannelConfig) -> Vec<C64> {
    let k = 2.0 * PI / cfg.wavelength * cfg.spacing;
    let row_step = azimuth.sin() * elevation.sin();
    let col_step = elevation.cos();
    let amp = 1.0 / (cfg.n_tx as f64).sqrt();
    let mut out = Vec::with_capacity(cfg.upa_rows * cfg.upa_cols);
    for l in 0..cfg.upa_rows {
        for r in 0..cfg.upa_cols {
            let phase = k * (l as f64 * row_step + r as f64 * col_step);
            out.push(C64::from_polar(amp, phase));
        }
    }
    out
}

/// `beta = zeta / dist^gamma`, with `10 log10(zeta) ~ N(0, shadow_var_db)`.
pub fn large_scale_fading(dist: f64, cfg: &ChannelConfig, rng: &mut SeededRng) -> f64 {
    assert!(dist > 0.0, "distance must be positive");
    let zeta_db = rng.standard_normal() * cfg.shadow_var_db.sqrt();
    10f64.powf(zeta_db / 10.0) / dist.powf(cfg.pathloss_exp)
}

/// Draws one channel realization.
///
/// Per user, in order: distance and shadowing (skipped when `normalized`),
/// then for each ray its gain, azimuth and elevation.
pub fn sample_channel(cfg: &ChannelConfig, rng: &mut SeededRng) -> Result<ChannelMatrix> {
    cfg.validate()?;
    let mut betas = Vec::with_capacity(cfg.n_users);
    let mut paths = Vec::with_capacity(cfg.n_users);
    for _ in 0..cfg.n_users {
        let beta = if cfg.normalized {
            1.0
        } else {
            let dist = rng.uniform(cfg.dist_range.0, cfg.dist_range.1);
            large_scale_fading(dist, cfg, rng)
        };
        let user_paths = (0..cfg.n_ray)
            .map(|_| {
                let gain = rng.complex_normal(cfg.ray_gain_var);
                let azimuth = rng.uniform(cfg.azimuth_range.0, cfg.azimuth_range.1);
                let elevation = rng.uniform(cfg.elevation_range.0, cfg.elevation_range.1);
                PathComponent {
                    gain,
                    azimuth,
                    elevation,
                }
            })
            .collect();
        betas.push(beta);
        paths.push(user_paths);
    }
    ChannelMatrix::from_paths(cfg, betas, paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Stream;

    fn desk(n_users: usize, n_ray: usize) -> ChannelConfig {
        ChannelConfig::new(4, 8, n_users, n_ray)
    }

    fn close(a: C64, b: C64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn broadside_response_is_flat() {
        let cfg = ChannelConfig::new(2, 2, 1, 1);
        let u = upa_response(0.0, PI / 2.0, &cfg);
        for v in u {
            assert!(close(v, C64::new(0.5, 0.0), 1e-15));
        }
    }

    #[test]
    fn half_wavelength_row_phase_flips_sign() {
        let cfg = ChannelConfig::new(2, 1, 1, 1);
        let u = upa_response(PI / 2.0, PI / 2.0, &cfg);
        let a = 1.0 / 2f64.sqrt();
        assert!(close(u[0], C64::new(a, 0.0), 1e-15));
        assert!(close(u[1], C64::new(-a, 0.0), 1e-15));
    }

    #[test]
    fn response_has_unit_norm_and_constant_modulus() {
        let cfg = desk(1, 1);
        let mut rng = SeededRng::new(5, 0);
        for _ in 0..200 {
            let u = upa_response(rng.uniform(0.0, 2.0 * PI), rng.uniform(0.0, PI), &cfg);
            let norm_sq: f64 = u.iter().map(|v| v.norm_sqr()).sum();
            assert!((norm_sq.sqrt() - 1.0).abs() <= 1e-12);
            let m = 1.0 / (cfg.n_tx as f64).sqrt();
            assert!(u.iter().all(|v| (v.norm() - m).abs() <= 1e-15));
        }
    }

    #[test]
    fn fading_without_shadowing_is_pure_pathloss() {
        let mut cfg = desk(1, 1);
        cfg.shadow_var_db = 0.0;
        cfg.pathloss_exp = 2.0;
        let mut rng = SeededRng::new(1, 0);
        assert!((large_scale_fading(10.0, &cfg, &mut rng) - 0.01).abs() < 1e-15);
        cfg.pathloss_exp = 0.0;
        assert_eq!(large_scale_fading(37.0, &cfg, &mut rng), 1.0);
    }

    #[test]
    fn shadowing_median_is_unity() {
        let cfg = desk(1, 1);
        let mut rng = SeededRng::for_stream(8, Stream::Channel);
        let mut draws: Vec<f64> = (0..10_000)
            .map(|_| large_scale_fading(1.0, &cfg, &mut rng))
            .collect();
        draws.sort_by(f64::total_cmp);
        let median = 0.5 * (draws[4999] + draws[5000]);
        assert!((median - 1.0).abs() <= 0.1, "median {median}");
    }

    #[test]
    fn single_unit_path_gives_full_array_gain() {
        let cfg = desk(1, 1);
        let path = PathComponent {
            gain: C64::new(1.0, 0.0),
            azimuth: 0.7,
            elevation: 1.1,
        };
        let ch = ChannelMatrix::from_paths(&cfg, vec![1.0], vec![vec![path]]).unwrap();
        let u = upa_response(0.7, 1.1, &cfg);
        let scale = (cfg.n_tx as f64).sqrt();
        for (h, u) in ch.matrix().col(0).iter().zip(u) {
            assert!(close(*h, u * scale, 1e-14));
        }
        assert!((ch.matrix().fro_norm() - scale).abs() < 1e-12);
    }

    #[test]
    fn mean_column_power_is_array_size() {
        let cfg = desk(1, 20);
        let mut rng = SeededRng::for_stream(12, Stream::Channel);
        let trials = 1000;
        let total: f64 = (0..trials)
            .map(|_| {
                sample_channel(&cfg, &mut rng)
                    .unwrap()
                    .matrix()
                    .fro_norm_sq()
            })
            .sum();
        let mean = total / trials as f64;
        let n_t = cfg.n_tx as f64;
        assert!((mean - n_t).abs() <= 0.1 * n_t, "mean {mean}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let mut cfg = desk(3, 5);
        cfg.normalized = false;
        let a = sample_channel(&cfg, &mut SeededRng::new(9, 0)).unwrap();
        let b = sample_channel(&cfg, &mut SeededRng::new(9, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stored_paths_reproduce_columns() {
        let mut cfg = desk(4, 7);
        cfg.normalized = false;
        let ch = sample_channel(&cfg, &mut SeededRng::new(21, 0)).unwrap();
        for k in 0..4 {
            let rebuilt = ch.reconstruct_column(k);
            for (a, b) in ch.matrix().col(k).iter().zip(&rebuilt) {
                assert!((a - b).norm() <= 1e-12);
            }
        }
        assert!(ch.betas().iter().all(|&b| b > 0.0));
    }

    #[test]
    fn doubling_beta_scales_column_by_sqrt2() {
        let cfg = desk(1, 6);
        let ch = sample_channel(&cfg, &mut SeededRng::new(4, 0)).unwrap();
        let doubled = ChannelMatrix::from_paths(&cfg, vec![2.0], ch.paths().to_vec()).unwrap();
        let ratio = doubled.matrix().fro_norm() / ch.matrix().fro_norm();
        assert!((ratio - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn angles_stay_in_range() {
        let cfg = desk(2, 50);
        let ch = sample_channel(&cfg, &mut SeededRng::new(6, 0)).unwrap();
        for p in ch.paths().iter().flatten() {
            assert!((0.0..2.0 * PI).contains(&p.azimuth));
            assert!((0.0..PI).contains(&p.elevation));
        }
    }

    #[test]
    fn validation_rejects_bad_geometry() {
        let mut cfg = desk(2, 3);
        cfg.n_tx = 31;
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig { .. })));
        let mut cfg = desk(2, 3);
        cfg.n_ray = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = desk(2, 3);
        cfg.dist_range = (0.0, 10.0);
        assert!(cfg.validate().is_err());
    }
}
