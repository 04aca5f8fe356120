//! Baseline precoders: full-digital zero-forcing and phased-ZF.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{solve_gram, CMat, C64};

/// Explicit linear precoder `F` (N_T x K) under a Frobenius power budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Precoder {
    pub f: CMat,
    pub p_max: f64,
}

impl Precoder {
    pub fn power(&self) -> f64 {
        self.f.fro_norm_sq()
    }
}

/// Analog/digital factorization `F = A D` with a constant-modulus RF stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridPrecoder {
    /// N_T x N_RF, every entry of modulus `1/sqrt(N_T)`.
    pub a_rf: CMat,
    /// N_RF x K.
    pub d_bb: CMat,
    pub p_max: f64,
}

impl HybridPrecoder {
    pub fn effective(&self) -> CMat {
        self.a_rf.matmul(&self.d_bb)
    }

    pub fn to_precoder(&self) -> Precoder {
        Precoder {
            f: self.effective(),
            p_max: self.p_max,
        }
    }
}

fn check_power(p_max: f64) -> Result<()> {
    if !(p_max > 0.0 && p_max.is_finite()) {
        return Err(Error::config("p_max", "must be positive and finite"));
    }
    Ok(())
}

/// `F = c H (H^H H)^{-1}` with `c > 0` chosen so that `||F||_F^2 = p_max`.
pub fn zf_precoder(h: &CMat, p_max: f64) -> Result<Precoder> {
    check_power(p_max)?;
    let pinv = solve_gram(h)?;
    let c = (p_max / pinv.fro_norm_sq()).sqrt();
    Ok(Precoder {
        f: pinv.scale_real(c),
        p_max,
    })
}

/// Phased-ZF: the RF stage co-phases each user's channel, the baseband
/// stage zero-forces the `K x K` effective channel `H^H A`. RF chains past
/// the K-th stay unused (zero baseband rows).
pub fn pzf_precoder(h: &CMat, p_max: f64, n_rf: usize) -> Result<HybridPrecoder> {
    check_power(p_max)?;
    let (n_tx, k) = h.shape();
    if n_rf < k {
        return Err(Error::config(
            "n_rf",
            format!("phased-ZF needs at least K = {k} RF chains, got {n_rf}"),
        ));
    }
    let amp = 1.0 / (n_tx as f64).sqrt();
    let a_rf = CMat::from_fn(n_tx, n_rf, |n, j| {
        if j < k {
            C64::from_polar(amp, h[(n, j)].arg())
        } else {
            C64::new(amp, 0.0)
        }
    });
    let a_used = CMat::from_fn(n_tx, k, |n, j| a_rf[(n, j)]);
    let h_eff = h.adjoint_mul(&a_used);
    // solve_gram(M) = M (M^H M)^{-1}; with M = H_eff^H this is H_eff^{-1}.
    let d_used = solve_gram(&h_eff.adjoint())?;
    let c = (p_max / a_used.matmul(&d_used).fro_norm_sq()).sqrt();
    let d_bb = CMat::from_fn(n_rf, k, |i, j| {
        if i < k {
            d_used[(i, j)] * c
        } else {
            C64::new(0.0, 0.0)
        }
    });
    Ok(HybridPrecoder { a_rf, d_bb, p_max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::sinr_per_user;
    use crate::numerics::{sample_cn, SeededRng};

    fn off_diagonal_max(m: &CMat) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                if i != j {
                    worst = worst.max(m[(i, j)].norm());
                }
            }
        }
        worst
    }

    #[test]
    fn zf_on_identity_channel() {
        let p = zf_precoder(&CMat::identity(2), 2.0).unwrap();
        assert!(p.f.sub(&CMat::identity(2)).fro_norm() < 1e-15);
    }

    #[test]
    fn zf_single_user_is_matched_filter() {
        let mut rng = SeededRng::new(1, 0);
        let h = sample_cn(&mut rng, 6, 1);
        let p = zf_precoder(&h, 1.0).unwrap();
        let expected = h.scale_real(1.0 / h.fro_norm());
        assert!(p.f.sub(&expected).fro_norm() < 1e-14);
    }

    #[test]
    fn zf_nulls_interference() {
        let h = sample_cn(&mut SeededRng::new(3, 0), 8, 3);
        let p = zf_precoder(&h, 3.0).unwrap();
        let g = h.adjoint_mul(&p.f);
        assert!(off_diagonal_max(&g) <= 1e-10);
        assert!((p.power() - 3.0).abs() <= 1e-12 * 3.0);
        // H^H F = c I with the same real c on the diagonal.
        let c = g[(0, 0)];
        assert!(c.re > 0.0 && c.im.abs() < 1e-12);
        for k in 1..3 {
            assert!((g[(k, k)] - c).norm() < 1e-10);
        }
    }

    #[test]
    fn zf_rejects_bad_power() {
        assert!(zf_precoder(&CMat::identity(2), 0.0).is_err());
    }

    #[test]
    fn pzf_real_positive_channel_has_flat_rf_stage() {
        let h = CMat::from_fn(4, 1, |i, _| C64::new(1.0 + i as f64, 0.0));
        let p = pzf_precoder(&h, 2.0, 2).unwrap();
        for v in p.a_rf.as_slice() {
            assert!((v - C64::new(0.5, 0.0)).norm() < 1e-15);
        }
        // H_eff = H^H A is the column sum scaled by 1/sqrt(N_T).
        let h_eff = h.adjoint_mul(&CMat::from_fn(4, 1, |_, _| C64::new(0.5, 0.0)));
        assert!((h_eff[(0, 0)] - C64::new(5.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn pzf_collapses_when_users_share_phases() {
        // Two real positive users co-phase to the same RF beam.
        let h = CMat::from_fn(4, 2, |i, j| C64::new(1.0 + i as f64 + 3.0 * j as f64, 0.0));
        assert!(matches!(
            pzf_precoder(&h, 2.0, 2),
            Err(Error::SingularGram { .. })
        ));
    }

    #[test]
    fn pzf_diagonalizes_effective_channel() {
        let h = sample_cn(&mut SeededRng::new(5, 0), 32, 4);
        let p = pzf_precoder(&h, 4.0, 8).unwrap();
        let g = h.adjoint_mul(&p.effective());
        assert!(off_diagonal_max(&g) <= 1e-10);
        assert!((p.effective().fro_norm_sq() - 4.0).abs() <= 4e-12);
        let amp = 1.0 / 32f64.sqrt();
        assert!(p
            .a_rf
            .as_slice()
            .iter()
            .all(|v| (v.norm() - amp).abs() < 1e-15));
        for i in 4..8 {
            assert!(p.d_bb.row(i).iter().all(|v| v.norm() == 0.0));
        }
    }

    #[test]
    fn pzf_single_user_matches_cophasing() {
        let h = sample_cn(&mut SeededRng::new(2, 0), 16, 1);
        let p = pzf_precoder(&h, 1.0, 4).unwrap();
        let f = p.effective();
        // Unit-power co-phasing beam.
        let cophase = CMat::from_fn(16, 1, |n, _| C64::from_polar(0.25, h[(n, 0)].arg()));
        let noise = 0.3;
        let s_pzf = sinr_per_user(&h, &f, noise)[0];
        let s_ref = sinr_per_user(&h, &cophase, noise)[0];
        assert!((s_pzf - s_ref).abs() <= 1e-10 * s_ref);
    }

    #[test]
    fn pzf_needs_enough_rf_chains() {
        let h = sample_cn(&mut SeededRng::new(2, 0), 16, 4);
        assert!(matches!(
            pzf_precoder(&h, 4.0, 3),
            Err(Error::InvalidConfig { .. })
        ));
    }

    #[test]
    fn pzf_is_phase_covariant() {
        let h = sample_cn(&mut SeededRng::new(8, 0), 16, 3);
        let theta = 0.9;
        let rot = C64::from_polar(1.0, theta);
        let mut h_rot = h.clone();
        let col: Vec<C64> = h.col(1).iter().map(|v| v * rot).collect();
        h_rot.set_col(1, &col);
        let a = pzf_precoder(&h, 3.0, 4).unwrap();
        let b = pzf_precoder(&h_rot, 3.0, 4).unwrap();
        for n in 0..16 {
            assert!((b.a_rf[(n, 1)] - a.a_rf[(n, 1)] * rot).norm() < 1e-12);
        }
        let sa = sinr_per_user(&h, &a.effective(), 0.5);
        let sb = sinr_per_user(&h_rot, &b.effective(), 0.5);
        for (x, y) in sa.iter().zip(&sb) {
            assert!((x - y).abs() <= 1e-10 * x.max(1.0));
        }
    }

    #[test]
    fn zf_yields_interference_free_sinr() {
        let h = sample_cn(&mut SeededRng::new(13, 0), 16, 4);
        let p = zf_precoder(&h, 4.0).unwrap();
        let g = h.adjoint_mul(&p.f);
        let noise = 0.25;
        let sinr = sinr_per_user(&h, &p.f, noise);
        for (k, s) in sinr.iter().enumerate() {
            let clean = g[(k, k)].norm_sqr() / noise;
            assert!((s - clean).abs() <= 1e-12 * clean);
        }
    }
}
