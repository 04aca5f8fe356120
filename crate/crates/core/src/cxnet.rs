//! Split-complex two-layer BP network.
//!
//! The network maps `N_S` input streams through `N_RF` hidden neurons to
//! `N_T` antenna outputs:
//!
//! ```text
//! z1 = W1 x,   a2 = f(z1),   z2 = W2 a2,   a3 = f(z2)
//! f(z) = r * (isgm(Re z) + j isgm(Im z)),   r = sqrt(p_max / 2)
//! ```
//!
//! There are no bias terms. The cost `e^2 = |a3 - y|^2 / 2` is real and not
//! analytic in the weights, so the gradient of a weight `w = w_R + j w_I` is
//! taken component-wise as `de^2/dw_R + j de^2/dw_I`. With that convention and
//! split activations, backpropagation reduces to
//!
//! ```text
//! delta2 = r * (Re(a3 - y) isgm'(Re z2) + j Im(a3 - y) isgm'(Im z2))
//! grad W2 = delta2 * a2^H
//! back    = W2^H delta2
//! delta1 = r * (Re(back) isgm'(Re z1) + j Im(back) isgm'(Im z1))
//! grad W1 = delta1 * x^H
//! ```
//!
//! Expanding the real and imaginary parts term by term yields the familiar
//! four-term chain-rule sums for each weight component.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sample_cn, CMat, SeededRng, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Input width, one neuron per data stream.
    pub n_s: usize,
    /// Hidden width, one neuron per RF chain.
    pub n_rf: usize,
    /// Output width, one neuron per transmit antenna.
    pub n_t: usize,
    /// Transmit power budget.
    pub p_max: f64,
}

impl NetConfig {
    pub fn new(n_s: usize, n_rf: usize, n_t: usize, p_max: f64) -> Result<Self> {
        let cfg = NetConfig {
            n_s,
            n_rf,
            n_t,
            p_max,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Power limitation factor of the split activation.
    pub fn r(&self) -> f64 {
        (self.p_max / 2.0).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_s == 0 {
            return Err(Error::config("n_s", "must be at least 1"));
        }
        if self.n_s > self.n_rf {
            return Err(Error::config(
                "n_rf",
                format!(
                    "needs n_s <= n_rf, got n_s = {} and n_rf = {}",
                    self.n_s, self.n_rf
                ),
            ));
        }
        if self.n_rf >= self.n_t {
            return Err(Error::config(
                "n_rf",
                format!(
                    "needs n_rf < n_t, got n_rf = {} and n_t = {}",
                    self.n_rf, self.n_t
                ),
            ));
        }
        if !(self.p_max > 0.0 && self.p_max.is_finite()) {
            return Err(Error::config("p_max", "must be positive and finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkWeights {
    /// N_RF x N_S.
    pub w1: CMat,
    /// N_T x N_RF.
    pub w2: CMat,
}

impl NetworkWeights {
    pub fn zeros(cfg: &NetConfig) -> Self {
        NetworkWeights {
            w1: CMat::zeros(cfg.n_rf, cfg.n_s),
            w2: CMat::zeros(cfg.n_t, cfg.n_rf),
        }
    }

    /// Both weight matrices drawn i.i.d. `CN(0, 1)`.
    pub fn random(cfg: &NetConfig, rng: &mut SeededRng) -> Self {
        let w1 = sample_cn(rng, cfg.n_rf, cfg.n_s);
        let w2 = sample_cn(rng, cfg.n_t, cfg.n_rf);
        NetworkWeights { w1, w2 }
    }

    pub fn check_shapes(&self, cfg: &NetConfig) -> Result<()> {
        if self.w1.shape() != (cfg.n_rf, cfg.n_s) || self.w2.shape() != (cfg.n_t, cfg.n_rf) {
            return Err(Error::ShapeMismatch(format!(
                "weights {:?}/{:?} do not match network {}x{}x{}",
                self.w1.shape(),
                self.w2.shape(),
                cfg.n_s,
                cfg.n_rf,
                cfg.n_t
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite() && self.w2.is_finite()
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub z1: CMat,
    pub a2: CMat,
    pub z2: CMat,
    pub a3: CMat,
}

impl ForwardTrace {
    pub fn output_power(&self) -> f64 {
        self.a3.fro_norm_sq()
    }
}

/// Cost gradients in the `d/dw_R + j d/dw_I` convention.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub g1: CMat,
    pub g2: CMat,
}

/// Momentum accumulators, the previous weight increments.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity {
    pub v1: CMat,
    pub v2: CMat,
}

impl Velocity {
    pub fn zeros(cfg: &NetConfig) -> Self {
        Velocity {
            v1: CMat::zeros(cfg.n_rf, cfg.n_s),
            v2: CMat::zeros(cfg.n_t, cfg.n_rf),
        }
    }
}

/// `2 / (1 + e^-x) - 1`, evaluated as `(1 - e^-|x|) / (1 + e^-|x|)` with the
/// sign restored so that neither tail overflows.
pub fn isgm(x: f64) -> f64 {
    let e = (-x.abs()).exp();
    let mag = -(-x.abs()).exp_m1() / (1.0 + e);
    mag.copysign(x)
}

/// `(1 + isgm(x)) (1 - isgm(x)) / 2`. Both factors are formed directly from
/// `e^-|x|` so the saturated tails keep full relative precision.
pub fn isgm_prime(x: f64) -> f64 {
    let e = (-x.abs()).exp();
    let one_plus = 2.0 / (1.0 + e);
    let one_minus = 2.0 * e / (1.0 + e);
    one_plus * one_minus / 2.0
}

/// `r * (isgm(Re z) + j isgm(Im z))`.
pub fn split_activation(z: C64, r: f64) -> C64 {
    C64::new(r * isgm(z.re), r * isgm(z.im))
}

fn activate(z: &CMat, r: f64) -> CMat {
    z.map(|v| split_activation(v, r))
}

pub fn forward(w: &NetworkWeights, x: &CMat, cfg: &NetConfig) -> ForwardTrace {
    assert_eq!(x.shape(), (cfg.n_s, 1), "input must be an n_s x 1 column");
    let r = cfg.r();
    let z1 = w.w1.matmul(x);
    let a2 = activate(&z1, r);
    let z2 = w.w2.matmul(&a2);
    let a3 = activate(&z2, r);
    // Saturated components round to exactly +-r, hence the non-strict bound.
    // NaN means diverged weights and is left to the caller to report.
    debug_assert!(
        !(a3.fro_norm_sq() > cfg.n_t as f64 * cfg.p_max),
        "split activation bound violated"
    );
    ForwardTrace { z1, a2, z2, a3 }
}

/// `|a3 - y|_F^2 / 2`.
pub fn cost(a3: &CMat, y: &CMat) -> f64 {
    0.5 * a3.sub(y).fro_norm_sq()
}

/// Local error of a split-activated layer: the incoming error `e`, scaled
/// per component by the activation slope at pre-activation `z`.
fn split_delta(e: C64, z: C64, r: f64) -> C64 {
    C64::new(r * e.re * isgm_prime(z.re), r * e.im * isgm_prime(z.im))
}

pub fn backward(
    w: &NetworkWeights,
    trace: &ForwardTrace,
    x: &CMat,
    y: &CMat,
    cfg: &NetConfig,
) -> Result<Gradients> {
    w.check_shapes(cfg)?;
    if x.shape() != (cfg.n_s, 1)
        || y.shape() != (cfg.n_t, 1)
        || trace.z1.shape() != (cfg.n_rf, 1)
        || trace.a2.shape() != (cfg.n_rf, 1)
        || trace.z2.shape() != (cfg.n_t, 1)
        || trace.a3.shape() != (cfg.n_t, 1)
    {
        return Err(Error::ShapeMismatch(format!(
            "backward got x {:?}, y {:?}, a2 {:?}, a3 {:?} for network {}x{}x{}",
            x.shape(),
            y.shape(),
            trace.a2.shape(),
            trace.a3.shape(),
            cfg.n_s,
            cfg.n_rf,
            cfg.n_t
        )));
    }
    let r = cfg.r();
    let a2 = trace.a2.as_slice();
    let xs = x.as_slice();

    let delta2: Vec<C64> = trace
        .a3
        .as_slice()
        .iter()
        .zip(y.as_slice())
        .zip(trace.z2.as_slice())
        .map(|((&a, &t), &z)| split_delta(a - t, z, r))
        .collect();

    let mut g2 = CMat::zeros(cfg.n_t, cfg.n_rf);
    for (i, d) in delta2.iter().enumerate() {
        for (m, a) in a2.iter().enumerate() {
            g2[(i, m)] = d * a.conj();
        }
    }

    let mut back = vec![C64::new(0.0, 0.0); cfg.n_rf];
    for (i, d) in delta2.iter().enumerate() {
        for (b, wv) in back.iter_mut().zip(w.w2.row(i)) {
            *b += wv.conj() * d;
        }
    }

    let mut g1 = CMat::zeros(cfg.n_rf, cfg.n_s);
    for (n, (&b, &z)) in back.iter().zip(trace.z1.as_slice()).enumerate() {
        let d = split_delta(b, z, r);
        for (m, xv) in xs.iter().enumerate() {
            g1[(n, m)] = d * xv.conj();
        }
    }

    Ok(Gradients { g1, g2 })
}

fn momentum_update(w: &mut CMat, g: &CMat, v: &mut CMat, alpha: f64, mu: f64) {
    for ((wv, gv), vv) in w
        .as_mut_slice()
        .iter_mut()
        .zip(g.as_slice())
        .zip(v.as_mut_slice())
    {
        *vv = *vv * alpha + *gv * mu;
        *wv -= *vv;
    }
}

/// In-place momentum SGD step:
/// `dw(k) = alpha dw(k-1) + mu grad`, `w(k+1) = w(k) - dw(k)`.
pub fn apply_momentum(
    w: &mut NetworkWeights,
    g: &Gradients,
    v: &mut Velocity,
    alpha: f64,
    mu: f64,
) {
    momentum_update(&mut w.w1, &g.g1, &mut v.v1, alpha, mu);
    momentum_update(&mut w.w2, &g.g2, &mut v.v2, alpha, mu);
}

pub fn momentum_step(
    w: &NetworkWeights,
    g: &Gradients,
    v: &Velocity,
    alpha: f64,
    mu: f64,
) -> (NetworkWeights, Velocity) {
    let mut w = w.clone();
    let mut v = v.clone();
    apply_momentum(&mut w, g, &mut v, alpha, mu);
    (w, v)
}
