//! Training loop: ZF target, synthetic datasets and per-sample momentum SGD
//! with test-set early stopping.

use serde::{Deserialize, Serialize};

use crate::cxnet::{self, NetConfig, NetworkWeights, Velocity};
use crate::error::{Error, Result};
use crate::numerics::{sample_cn, CMat, SeededRng, Stream};
use crate::precoders::{zf_precoder, Precoder};

/// Test error growth over its initial value treated as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: CMat,
    pub y: CMat,
}

/// Input/target pairs `y = B x` for a fixed generating precoder `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub target: Precoder,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Training stops once the mean test cost drops below this.
    pub error_threshold: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Momentum factor.
    pub alpha: f64,
    /// Learning rate.
    pub mu: f64,
    pub seed: u64,
    /// Reshuffle the training set every epoch (from the data stream).
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 200,
            error_threshold: 1e-8,
            n_train: 100,
            n_test: 100,
            alpha: 0.9,
            mu: 0.01,
            seed: 1,
            shuffle: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs", "must be at least 1"));
        }
        if !(self.error_threshold > 0.0) {
            return Err(Error::config("error_threshold", "must be positive"));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::config("n_train/n_test", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::config("alpha", "must lie in [0, 1)"));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::config("mu", "must be positive and finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ThresholdReached,
    MaxEpochs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample cost seen during the epoch, before each update.
    pub train_cost: f64,
    /// Mean test cost after the epoch.
    pub test_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean test cost of the initial weights.
    pub initial_test_cost: f64,
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    pub fn final_test_cost(&self) -> f64 {
        self.epochs
            .last()
            .map_or(self.initial_test_cost, |e| e.test_cost)
    }
}

/// Everything a training run produced.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: NetworkWeights,
    pub history: TrainHistory,
    pub target: Precoder,
    pub train_set: Dataset,
    pub test_set: Dataset,
}

/// `n` samples with `x ~ CN(0, I)` and `y = B x`.
pub fn generate_dataset(target: &Precoder, n: usize, rng: &mut SeededRng) -> Dataset {
    let n_s = target.f.cols();
    let samples = (0..n)
        .map(|_| {
            let x = sample_cn(rng, n_s, 1);
            let y = target.f.matmul(&x);
            Sample { x, y }
        })
        .collect();
    Dataset {
        samples,
        target: target.clone(),
    }
}

/// Mean per-sample cost over the dataset.
pub fn test_error(w: &NetworkWeights, ds: &Dataset, cfg: &NetConfig) -> f64 {
    if ds.is_empty() {
        return 0.0;
    }
    let total: f64 = ds
        .samples
        .iter()
        .map(|s| cxnet::cost(&cxnet::forward(w, &s.x, cfg).a3, &s.y))
        .sum();
    total / ds.len() as f64
}

/// Trains a fresh network against the zero-forcing precoder of `h`.
///
/// Weights come from the `Weights` stream of `tcfg.seed`, the training then
/// test sets (and the shuffle order) from its `Data` stream.
pub fn train(cfg: &NetConfig, tcfg: &TrainConfig, h: &CMat) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut rng = SeededRng::for_stream(tcfg.seed, Stream::Weights);
    let weights = NetworkWeights::random(cfg, &mut rng);
    train_from(cfg, tcfg, h, weights)
}

/// Continues training from existing weights, e.g. after the channel changed.
pub fn train_from(
    cfg: &NetConfig,
    tcfg: &TrainConfig,
    h: &CMat,
    mut weights: NetworkWeights,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    tcfg.validate()?;
    weights.check_shapes(cfg)?;
    if h.shape() != (cfg.n_t, cfg.n_s) {
        return Err(Error::ShapeMismatch(format!(
            "channel is {:?}, network expects {}x{}",
            h.shape(),
            cfg.n_t,
            cfg.n_s
        )));
    }

    let target = zf_precoder(h, cfg.p_max)?;
    let mut data_rng = SeededRng::for_stream(tcfg.seed, Stream::Data);
    let train_set = generate_dataset(&target, tcfg.n_train, &mut data_rng);
    let test_set = generate_dataset(&target, tcfg.n_test, &mut data_rng);

    let mut velocity = Velocity::zeros(cfg);
    let initial = test_error(&weights, &test_set, cfg);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(tcfg.max_epochs);
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=tcfg.max_epochs {
        if tcfg.shuffle {
            shuffle(&mut order, &mut data_rng);
        }
        let mut train_total = 0.0;
        for &idx in &order {
            let s = &train_set.samples[idx];
            let trace = cxnet::forward(&weights, &s.x, cfg);
            train_total += cxnet::cost(&trace.a3, &s.y);
            let grads = cxnet::backward(&weights, &trace, &s.x, &s.y, cfg)?;
            cxnet::apply_momentum(&mut weights, &grads, &mut velocity, tcfg.alpha, tcfg.mu);
        }
        let test_cost = test_error(&weights, &test_set, cfg);
        if !test_cost.is_finite() || test_cost > DIVERGENCE_FACTOR * initial {
            return Err(Error::DivergenceDetected {
                epoch,
                test_error: test_cost,
                initial,
            });
        }
        epochs.push(EpochRecord {
            epoch,
            train_cost: train_total / train_set.len() as f64,
            test_cost,
        });
        if test_cost < tcfg.error_threshold {
            stop_reason = StopReason::ThresholdReached;
            break;
        }
    }

    Ok(TrainOutcome {
        weights,
        history: TrainHistory {
            initial_test_cost: initial,
            epochs,
            stop_reason,
        },
        target,
        train_set,
        test_set,
    })
}

/// Fisher-Yates driven by the seeded stream.
fn shuffle(order: &mut [usize], rng: &mut SeededRng) {
    for i in (1..order.len()).rev() {
        let j = (rng.uniform(0.0, (i + 1) as f64) as usize).min(i);
        order.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::C64;

    fn setup() -> (NetConfig, CMat) {
        let cfg = NetConfig::new(2, 4, 8, 2.0).unwrap();
        let h = sample_cn(&mut SeededRng::new(3, 0), 8, 2);
        (cfg, h)
    }

    #[test]
    fn zero_target_gives_zero_outputs() {
        let p = Precoder {
            f: CMat::zeros(8, 2),
            p_max: 1.0,
        };
        let ds = generate_dataset(&p, 10, &mut SeededRng::new(1, 2));
        assert!(ds.samples.iter().all(|s| s.y.fro_norm() == 0.0));
    }

    #[test]
    fn datasets_are_deterministic_and_consistent() {
        let (cfg, h) = setup();
        let p = zf_precoder(&h, cfg.p_max).unwrap();
        let a = generate_dataset(&p, 20, &mut SeededRng::new(4, 2));
        let b = generate_dataset(&p, 20, &mut SeededRng::new(4, 2));
        assert_eq!(a, b);
        for s in &a.samples {
            assert!(p.f.matmul(&s.x).sub(&s.y).fro_norm() <= 1e-12);
        }
    }

    #[test]
    fn input_power_matches_stream_count() {
        let p = Precoder {
            f: CMat::zeros(8, 4),
            p_max: 1.0,
        };
        let ds = generate_dataset(&p, 10_000, &mut SeededRng::new(5, 2));
        let mean: f64 = ds.samples.iter().map(|s| s.x.fro_norm_sq()).sum::<f64>() / 1e4;
        assert!((mean - 4.0).abs() <= 0.2, "mean {mean}");
    }

    #[test]
    fn test_error_closed_forms() {
        let (cfg, h) = setup();
        let p = zf_precoder(&h, cfg.p_max).unwrap();
        let ds = generate_dataset(&p, 15, &mut SeededRng::new(6, 2));
        let zero = NetworkWeights::zeros(&cfg);
        let expected: f64 =
            ds.samples.iter().map(|s| s.y.fro_norm_sq()).sum::<f64>() / (2.0 * 15.0);
        assert!((test_error(&zero, &ds, &cfg) - expected).abs() <= 1e-14 * expected);

        let mut reversed = ds.clone();
        reversed.samples.reverse();
        let w = NetworkWeights::random(&cfg, &mut SeededRng::new(1, 1));
        let a = test_error(&w, &ds, &cfg);
        let b = test_error(&w, &reversed, &cfg);
        assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn exact_network_has_zero_test_error() {
        let (cfg, _) = setup();
        let w = NetworkWeights::random(&cfg, &mut SeededRng::new(2, 1));
        // Targets produced by the network itself.
        let mut rng = SeededRng::new(3, 2);
        let samples = (0..5)
            .map(|_| {
                let x = sample_cn(&mut rng, 2, 1);
                let y = cxnet::forward(&w, &x, &cfg).a3;
                Sample { x, y }
            })
            .collect();
        let ds = Dataset {
            samples,
            target: Precoder {
                f: CMat::zeros(8, 2),
                p_max: 2.0,
            },
        };
        assert_eq!(test_error(&w, &ds, &cfg), 0.0);
    }

    #[test]
    fn loose_threshold_stops_after_one_epoch() {
        let (cfg, h) = setup();
        let tcfg = TrainConfig {
            error_threshold: 1e9,
            n_train: 10,
            n_test: 10,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &tcfg, &h).unwrap();
        assert_eq!(out.history.epochs.len(), 1);
        assert_eq!(out.history.stop_reason, StopReason::ThresholdReached);
    }

    #[test]
    fn training_is_deterministic() {
        let (cfg, h) = setup();
        let tcfg = TrainConfig {
            max_epochs: 5,
            n_train: 20,
            n_test: 20,
            ..TrainConfig::default()
        };
        let a = train(&cfg, &tcfg, &h).unwrap();
        let b = train(&cfg, &tcfg, &h).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.weights, b.weights);

        let shuffled = TrainConfig {
            shuffle: true,
            ..tcfg
        };
        let c = train(&cfg, &shuffled, &h).unwrap();
        let d = train(&cfg, &shuffled, &h).unwrap();
        assert_eq!(c.history, d.history);
        assert_ne!(c.history, a.history);
    }

    #[test]
    fn huge_learning_rate_is_reported_or_finite() {
        let (cfg, h) = setup();
        let tcfg = TrainConfig {
            max_epochs: 3,
            n_train: 20,
            n_test: 20,
            mu: 1e6,
            ..TrainConfig::default()
        };
        // The bounded activation keeps the cost finite, so a blown-up learning
        // rate either saturates or trips the divergence check; it never panics.
        match train(&cfg, &tcfg, &h) {
            Ok(out) => assert!(out.history.epochs.iter().all(|e| e.test_cost.is_finite())),
            Err(e) => assert!(matches!(e, Error::DivergenceDetected { .. })),
        }
    }

    #[test]
    fn rejects_singular_channel() {
        let cfg = NetConfig::new(2, 4, 8, 2.0).unwrap();
        let col: Vec<C64> = (0..8).map(|i| C64::new(i as f64, 1.0)).collect();
        let h = CMat::from_columns(&[col.clone(), col]).unwrap();
        let err = train(&cfg, &TrainConfig::default(), &h).unwrap_err();
        assert!(matches!(err, Error::SingularGram { .. }));
    }

    #[test]
    fn rejects_bad_train_config() {
        let (cfg, h) = setup();
        let tcfg = TrainConfig {
            alpha: 1.0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&cfg, &tcfg, &h),
            Err(Error::InvalidConfig { .. })
        ));
    }

    #[test]
    fn threshold_stop_is_first_crossing() {
        let (cfg, h) = setup();
        let tcfg = TrainConfig {
            max_epochs: 50,
            n_train: 20,
            n_test: 20,
            ..TrainConfig::default()
        };
        let full = train(&cfg, &tcfg, &h).unwrap();
        let mid = full.history.epochs[full.history.epochs.len() / 2].test_cost;
        let stopped = train(
            &cfg,
            &TrainConfig {
                error_threshold: mid * 1.0000001,
                ..tcfg
            },
            &h,
        )
        .unwrap();
        let hist = &stopped.history;
        assert_eq!(hist.stop_reason, StopReason::ThresholdReached);
        let (last, earlier) = hist.epochs.split_last().unwrap();
        assert!(last.test_cost < mid * 1.0000001);
        assert!(earlier.iter().all(|e| e.test_cost >= mid * 1.0000001));
    }
}
