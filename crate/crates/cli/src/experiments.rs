//! Experiment drivers behind the CLI subcommands.
//!
//! Every random stream is seeded through `derive_seed(config.seed, label)`
//! with labels such as `sweep-users/k4/t7/channel`. Within a trial all
//! methods share one noise seed per SNR point, so method comparisons use
//! common random numbers.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use hbnn_core::channel::sample_channel;
use hbnn_core::eval::{
    ber_sim, ber_sim_network, noise_power_for_snr, probe_effective_precoder, project_power,
    sinr_per_user, spectral_efficiency,
};
use hbnn_core::numerics::derive_seed;
use hbnn_core::precoders::{pzf_precoder, zf_precoder};
use hbnn_core::trainer::{train, TrainOutcome};
use hbnn_core::{BerCounts, CMat, ChannelMatrix, NetConfig, NetworkWeights, SeededRng, Stream};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, Method};
use crate::persist::{self, fmt_f64, WeightFile};

/// Creates the output directory and writes the materialized config into it.
fn prepare_out(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.json"), cfg.to_json() + "\n")
        .with_context(|| format!("writing config into {}", out.display()))
}

fn pool(threads: Option<usize>) -> anyhow::Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    Ok(builder.build()?)
}

fn rng_for(cfg: &ExperimentConfig, label: &str, stream: Stream) -> SeededRng {
    SeededRng::for_stream(derive_seed(cfg.seed, label), stream)
}

/// Channel for `k` users drawn from the stream named `{label}/channel`.
pub fn channel_for(
    cfg: &ExperimentConfig,
    k: usize,
    label: &str,
) -> hbnn_core::Result<ChannelMatrix> {
    let mut rng = rng_for(cfg, &format!("{label}/channel"), Stream::Channel);
    sample_channel(&cfg.channel.with_users(k), &mut rng)
}

/// Trains the network for `h`, seeding weights and data from `{label}/net`.
pub fn train_for(
    cfg: &ExperimentConfig,
    h: &CMat,
    label: &str,
) -> hbnn_core::Result<(NetConfig, TrainOutcome)> {
    let net = cfg.net_config(h.cols())?;
    let tcfg = cfg
        .train
        .to_train_config(derive_seed(cfg.seed, &format!("{label}/net")));
    let outcome = train(&net, &tcfg, h)?;
    Ok((net, outcome))
}

/// Linear precoder the network is evaluated with: the identity probe,
/// projected onto the power budget when the config asks for it.
pub fn nn_precoder(cfg: &ExperimentConfig, w: &NetworkWeights, net: &NetConfig) -> CMat {
    let probed = probe_effective_precoder(w, net);
    if cfg.eval.nn_power_projection {
        project_power(&probed, net.p_max)
    } else {
        probed
    }
}

/// Result of one method at one SNR point of one trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodPoint {
    pub k: usize,
    pub trial: usize,
    pub method: Method,
    pub snr_db: f64,
    pub noise_power: f64,
    pub outcome: Result<PointMetrics, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointMetrics {
    pub sinr: Vec<f64>,
    pub se: f64,
    pub counts: BerCounts,
    /// `||F||_F^2` of the precoder used.
    pub power: f64,
}

/// Training diagnostics for one trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingRecord {
    pub k: usize,
    pub trial: usize,
    pub outcome: Result<TrainingMetrics, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingMetrics {
    pub epochs: usize,
    pub stop_reason: String,
    pub initial_test_cost: f64,
    pub final_test_cost: f64,
    /// Power of the raw identity probe, before any projection.
    pub raw_power: f64,
}

enum Prepared {
    Linear(CMat),
    Network(NetworkWeights, NetConfig, CMat),
}

struct TrialOutput {
    points: Vec<MethodPoint>,
    training: Option<TrainingRecord>,
}

/// Runs one channel trial: draws the channel, builds every requested
/// precoder and evaluates each at each SNR point.
fn run_trial(
    cfg: &ExperimentConfig,
    k: usize,
    trial: usize,
    label: &str,
    snrs: &[f64],
) -> TrialOutput {
    let p_max = cfg.p_max(k);
    let channel = channel_for(cfg, k, label).map_err(|e| format!("channel: {e}"));

    let mut training = None;
    let mut prepared: Vec<(Method, Result<Prepared, String>)> = Vec::new();
    for &method in &cfg.eval.methods {
        let prep = match &channel {
            Err(e) => Err(e.clone()),
            Ok(ch) => {
                let h = ch.matrix();
                match method {
                    Method::Zf => zf_precoder(h, p_max)
                        .map(|p| Prepared::Linear(p.f))
                        .map_err(|e| format!("zf: {e}")),
                    Method::Pzf => pzf_precoder(h, p_max, cfg.n_rf)
                        .map(|p| Prepared::Linear(p.effective()))
                        .map_err(|e| format!("pzf: {e}")),
                    Method::Nn => {
                        let res = train_for(cfg, h, label).map_err(|e| format!("nn: {e}"));
                        training = Some(TrainingRecord {
                            k,
                            trial,
                            outcome: res.as_ref().map_err(Clone::clone).map(|(net, o)| {
                                TrainingMetrics {
                                    epochs: o.history.epochs.len(),
                                    stop_reason: format!("{:?}", o.history.stop_reason),
                                    initial_test_cost: o.history.initial_test_cost,
                                    final_test_cost: o.history.final_test_cost(),
                                    raw_power: probe_effective_precoder(&o.weights, net)
                                        .fro_norm_sq(),
                                }
                            }),
                        });
                        res.map(|(net, o)| {
                            let f = nn_precoder(cfg, &o.weights, &net);
                            Prepared::Network(o.weights, net, f)
                        })
                    }
                }
            }
        };
        prepared.push((method, prep));
    }

    let mut points = Vec::new();
    for (idx, &snr_db) in snrs.iter().enumerate() {
        let noise_power = noise_power_for_snr(p_max, snr_db);
        let noise_seed = derive_seed(cfg.seed, &format!("{label}/snr{idx}/noise"));
        for (method, prep) in &prepared {
            let outcome = match (prep, &channel) {
                (Err(e), _) | (_, Err(e)) => Err(e.clone()),
                (Ok(prep), Ok(ch)) => {
                    let h = ch.matrix();
                    let mut rng = SeededRng::for_stream(noise_seed, Stream::Noise);
                    let f = match prep {
                        Prepared::Linear(f) | Prepared::Network(_, _, f) => f,
                    };
                    let sinr = sinr_per_user(h, f, noise_power);
                    let ber = match prep {
                        Prepared::Network(w, net, _) if cfg.eval.nn_nonlinear_ber => {
                            ber_sim_network(h, w, net, noise_power, cfg.eval.n_symbols, &mut rng)
                        }
                        _ => ber_sim(h, f, noise_power, cfg.eval.n_symbols, &mut rng),
                    };
                    ber.map_err(|e| format!("{method}: {e}")).map(|per_user| {
                        let mut counts = BerCounts::default();
                        for c in per_user {
                            counts.merge(c);
                        }
                        PointMetrics {
                            se: spectral_efficiency(&sinr),
                            sinr,
                            counts,
                            power: f.fro_norm_sq(),
                        }
                    })
                }
            };
            points.push(MethodPoint {
                k,
                trial,
                method: *method,
                snr_db,
                noise_power,
                outcome,
            });
        }
    }
    TrialOutput { points, training }
}

/// Aggregate over trials for one `(K, SNR, method)` cell. Failed trials
/// count in `failed` and are excluded from the means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub k: usize,
    pub snr_db: f64,
    pub method: Method,
    pub se_mean: f64,
    pub ber_mean: f64,
    pub bit_errors: u64,
    pub n_bits: u64,
    /// Symbols per user summed over the successful trials.
    pub n_symbols: u64,
    pub trials: usize,
    pub failed: usize,
}

fn summarize(points: &[MethodPoint], methods: &[Method]) -> Vec<SummaryRow> {
    let order = |m: Method| methods.iter().position(|&x| x == m).unwrap_or(usize::MAX);
    let mut cells: BTreeMap<(usize, usize, u64), Vec<&MethodPoint>> = BTreeMap::new();
    for p in points {
        cells
            .entry((p.k, order(p.method), p.snr_db.to_bits()))
            .or_default()
            .push(p);
    }
    let mut rows: Vec<SummaryRow> = cells
        .into_values()
        .map(|group| {
            let first = group[0];
            let ok: Vec<&PointMetrics> = group
                .iter()
                .filter_map(|p| p.outcome.as_ref().ok())
                .collect();
            let n = ok.len();
            let mean = |f: fn(&PointMetrics) -> f64| {
                if n == 0 {
                    f64::NAN
                } else {
                    ok.iter().map(|m| f(m)).sum::<f64>() / n as f64
                }
            };
            SummaryRow {
                k: first.k,
                snr_db: first.snr_db,
                method: first.method,
                se_mean: mean(|m| m.se),
                ber_mean: mean(|m| m.counts.ber()),
                bit_errors: ok.iter().map(|m| m.counts.bit_errors).sum(),
                n_bits: ok.iter().map(|m| m.counts.bits).sum(),
                n_symbols: ok
                    .iter()
                    .map(|m| m.counts.bits / (2 * first.k as u64))
                    .sum(),
                trials: n,
                failed: group.len() - n,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        (a.k, order(a.method))
            .cmp(&(b.k, order(b.method)))
            .then(a.snr_db.total_cmp(&b.snr_db))
    });
    rows
}

fn status(outcome: &Result<impl Sized, String>) -> String {
    match outcome {
        Ok(_) => "ok".into(),
        Err(e) => e.clone(),
    }
}

fn write_points_csv(path: &Path, points: &[MethodPoint]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "k",
        "trial",
        "method",
        "snr_db",
        "noise_power",
        "se",
        "ber",
        "bit_errors",
        "n_bits",
        "power",
        "status",
    ])?;
    for p in points {
        let (se, ber, errs, bits, power) = match &p.outcome {
            Ok(m) => (
                fmt_f64(m.se),
                fmt_f64(m.counts.ber()),
                m.counts.bit_errors.to_string(),
                m.counts.bits.to_string(),
                fmt_f64(m.power),
            ),
            Err(_) => Default::default(),
        };
        w.write_record([
            p.k.to_string(),
            p.trial.to_string(),
            p.method.to_string(),
            fmt_f64(p.snr_db),
            fmt_f64(p.noise_power),
            se,
            ber,
            errs,
            bits,
            power,
            status(&p.outcome),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_training_csv(path: &Path, records: &[TrainingRecord]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "k",
        "trial",
        "epochs",
        "stop_reason",
        "initial_test_cost",
        "final_test_cost",
        "raw_power",
        "status",
    ])?;
    for r in records {
        let cols: [String; 5] = match &r.outcome {
            Ok(m) => [
                m.epochs.to_string(),
                m.stop_reason.clone(),
                fmt_f64(m.initial_test_cost),
                fmt_f64(m.final_test_cost),
                fmt_f64(m.raw_power),
            ],
            Err(_) => Default::default(),
        };
        let mut rec = vec![r.k.to_string(), r.trial.to_string()];
        rec.extend(cols);
        rec.push(status(&r.outcome));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub points: Vec<MethodPoint>,
    pub training: Vec<TrainingRecord>,
    pub summary: Vec<SummaryRow>,
    pub files: Vec<PathBuf>,
}

fn run_jobs(
    cfg: &ExperimentConfig,
    jobs: Vec<(usize, usize, String)>,
    snrs: &[f64],
    threads: Option<usize>,
) -> anyhow::Result<(Vec<MethodPoint>, Vec<TrainingRecord>)> {
    let outputs: Vec<TrialOutput> = pool(threads)?.install(|| {
        jobs.par_iter()
            .map(|(k, t, label)| run_trial(cfg, *k, *t, label, snrs))
            .collect()
    });
    let mut points = Vec::new();
    let mut training = Vec::new();
    for o in outputs {
        points.extend(o.points);
        training.extend(o.training);
    }
    Ok((points, training))
}

/// Spectral efficiency and BER versus the number of users at `eval.snr_db`.
///
/// Writes `sweep_users.csv` (columns `k,method,snr_db,se_mean,ber_mean,
/// bit_errors,n_bits,trials,failed`), the per-trial rows behind it in
/// `sweep_users_trials.csv`, and training diagnostics in
/// `sweep_users_training.csv`.
pub fn run_sweep_users(
    cfg: &ExperimentConfig,
    out: &Path,
    threads: Option<usize>,
) -> anyhow::Result<SweepReport> {
    cfg.validate()?;
    prepare_out(cfg, out)?;
    let jobs: Vec<_> = cfg
        .eval
        .k_values
        .iter()
        .flat_map(|&k| {
            (0..cfg.eval.n_channel_trials).map(move |t| (k, t, format!("sweep-users/k{k}/t{t}")))
        })
        .collect();
    let (points, training) = run_jobs(cfg, jobs, &[cfg.eval.snr_db], threads)?;
    let summary = summarize(&points, &cfg.eval.methods);

    let summary_path = out.join("sweep_users.csv");
    let mut w = csv::Writer::from_path(&summary_path)?;
    w.write_record([
        "k",
        "method",
        "snr_db",
        "se_mean",
        "ber_mean",
        "bit_errors",
        "n_bits",
        "trials",
        "failed",
    ])?;
    for r in &summary {
        w.write_record([
            r.k.to_string(),
            r.method.to_string(),
            fmt_f64(r.snr_db),
            fmt_f64(r.se_mean),
            fmt_f64(r.ber_mean),
            r.bit_errors.to_string(),
            r.n_bits.to_string(),
            r.trials.to_string(),
            r.failed.to_string(),
        ])?;
    }
    w.flush()?;
    let trials_path = out.join("sweep_users_trials.csv");
    write_points_csv(&trials_path, &points)?;
    let training_path = out.join("sweep_users_training.csv");
    write_training_csv(&training_path, &training)?;
    Ok(SweepReport {
        points,
        training,
        summary,
        files: vec![summary_path, trials_path, training_path],
    })
}

/// BER versus SNR at `eval.snr_sweep_users` users.
///
/// Writes `sweep_snr.csv` (columns `snr_db,method,ber,n_symbols,bit_errors,
/// n_bits,trials,failed`; `ber` pools the bit errors of all trials), the
/// per-trial rows in `sweep_snr_trials.csv` and training diagnostics in
/// `sweep_snr_training.csv`.
pub fn run_sweep_snr(
    cfg: &ExperimentConfig,
    out: &Path,
    threads: Option<usize>,
) -> anyhow::Result<SweepReport> {
    cfg.validate()?;
    prepare_out(cfg, out)?;
    let k = cfg.eval.snr_sweep_users;
    let jobs: Vec<_> = (0..cfg.eval.n_channel_trials)
        .map(|t| (k, t, format!("sweep-snr/k{k}/t{t}")))
        .collect();
    let (points, training) = run_jobs(cfg, jobs, &cfg.eval.snr_db_list, threads)?;
    let mut summary = summarize(&points, &cfg.eval.methods);
    let order = |m: Method| cfg.eval.methods.iter().position(|&x| x == m);
    summary.sort_by(|a, b| {
        a.snr_db
            .total_cmp(&b.snr_db)
            .then(order(a.method).cmp(&order(b.method)))
    });

    let summary_path = out.join("sweep_snr.csv");
    let mut w = csv::Writer::from_path(&summary_path)?;
    w.write_record([
        "snr_db",
        "method",
        "ber",
        "n_symbols",
        "bit_errors",
        "n_bits",
        "trials",
        "failed",
    ])?;
    for r in &summary {
        let pooled = BerCounts {
            bit_errors: r.bit_errors,
            bits: r.n_bits,
        };
        w.write_record([
            fmt_f64(r.snr_db),
            r.method.to_string(),
            fmt_f64(if r.trials == 0 {
                f64::NAN
            } else {
                pooled.ber()
            }),
            r.n_symbols.to_string(),
            r.bit_errors.to_string(),
            r.n_bits.to_string(),
            r.trials.to_string(),
            r.failed.to_string(),
        ])?;
    }
    w.flush()?;
    let trials_path = out.join("sweep_snr_trials.csv");
    write_points_csv(&trials_path, &points)?;
    let training_path = out.join("sweep_snr_training.csv");
    write_training_csv(&training_path, &training)?;
    Ok(SweepReport {
        points,
        training,
        summary,
        files: vec![summary_path, trials_path, training_path],
    })
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub channel: ChannelMatrix,
    pub net: NetConfig,
    pub outcome: TrainOutcome,
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    n_users: usize,
    epochs: usize,
    stop_reason: &'a hbnn_core::StopReason,
    initial_test_cost: f64,
    final_test_cost: f64,
    config_hash: String,
}

/// Trains on one channel with `channel.n_users` users. Writes
/// `config.json`, `channel.json`, `weights.json`, `history.csv` (columns
/// `epoch,train_cost,test_cost`) and `train_summary.json`.
pub fn run_train(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<TrainReport> {
    cfg.validate()?;
    prepare_out(cfg, out)?;
    let k = cfg.channel.n_users;
    let channel = channel_for(cfg, k, "train")?;
    let (net, outcome) = train_for(cfg, channel.matrix(), "train")?;

    let channel_path = out.join("channel.json");
    persist::save_channel(&channel_path, &channel)?;
    let weights_path = out.join("weights.json");
    WeightFile::new(net, &outcome.weights, cfg.hash()).save(&weights_path)?;
    let history_path = out.join("history.csv");
    persist::write_history_csv(&history_path, &outcome.history)?;
    let summary_path = out.join("train_summary.json");
    persist::write_json(
        &summary_path,
        &TrainSummary {
            n_users: k,
            epochs: outcome.history.epochs.len(),
            stop_reason: &outcome.history.stop_reason,
            initial_test_cost: outcome.history.initial_test_cost,
            final_test_cost: outcome.history.final_test_cost(),
            config_hash: cfg.hash(),
        },
    )?;
    Ok(TrainReport {
        channel,
        net,
        outcome,
        files: vec![
            out.join("config.json"),
            channel_path,
            weights_path,
            history_path,
            summary_path,
        ],
    })
}

/// One row of `eval.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub method: Method,
    pub snr_db: f64,
    pub noise_power: f64,
    pub user: usize,
    pub sinr: f64,
    pub se: f64,
    pub counts: BerCounts,
}

/// Evaluates a saved network against the baselines on a saved channel at
/// `eval.snr_db`. Writes `eval.csv` with one row per method and user
/// (columns `method,snr_db,noise_power,user,sinr,se,ber,bit_errors,n_bits`;
/// `se` is the sum over users).
pub fn run_eval(
    cfg: &ExperimentConfig,
    weights: &WeightFile,
    channel: &ChannelMatrix,
    out: &Path,
) -> anyhow::Result<Vec<EvalRow>> {
    cfg.validate()?;
    let h = channel.matrix();
    let k = h.cols();
    anyhow::ensure!(
        weights.net.n_s == k && weights.net.n_t == h.rows(),
        "weights are for {}x{} but the channel is {}x{}",
        weights.net.n_t,
        weights.net.n_s,
        h.rows(),
        k
    );
    prepare_out(cfg, out)?;
    let p_max = weights.net.p_max;
    let noise_power = noise_power_for_snr(p_max, cfg.eval.snr_db);
    let noise_seed = derive_seed(cfg.seed, "eval/noise");
    let w = weights.weights();

    let mut rows = Vec::new();
    for &method in &cfg.eval.methods {
        let f = match method {
            Method::Zf => zf_precoder(h, p_max)?.f,
            Method::Pzf => pzf_precoder(h, p_max, cfg.n_rf)?.effective(),
            Method::Nn => nn_precoder(cfg, &w, &weights.net),
        };
        let mut rng = SeededRng::for_stream(noise_seed, Stream::Noise);
        let counts = if method == Method::Nn && cfg.eval.nn_nonlinear_ber {
            ber_sim_network(
                h,
                &w,
                &weights.net,
                noise_power,
                cfg.eval.n_symbols,
                &mut rng,
            )?
        } else {
            ber_sim(h, &f, noise_power, cfg.eval.n_symbols, &mut rng)?
        };
        let sinr = sinr_per_user(h, &f, noise_power);
        let se = spectral_efficiency(&sinr);
        for (user, (s, c)) in sinr.iter().zip(counts).enumerate() {
            rows.push(EvalRow {
                method,
                snr_db: cfg.eval.snr_db,
                noise_power,
                user,
                sinr: *s,
                se,
                counts: c,
            });
        }
    }

    let mut wr = csv::Writer::from_path(out.join("eval.csv"))?;
    wr.write_record([
        "method",
        "snr_db",
        "noise_power",
        "user",
        "sinr",
        "se",
        "ber",
        "bit_errors",
        "n_bits",
    ])?;
    for r in &rows {
        wr.write_record([
            r.method.to_string(),
            fmt_f64(r.snr_db),
            fmt_f64(r.noise_power),
            r.user.to_string(),
            fmt_f64(r.sinr),
            fmt_f64(r.se),
            fmt_f64(r.counts.ber()),
            r.counts.bit_errors.to_string(),
            r.counts.bits.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(rows)
}

/// Human-readable summary of a weight file.
#[derive(Debug, Clone, Serialize)]
pub struct WeightInfo {
    pub format_version: u32,
    pub net: NetConfig,
    pub config_hash: String,
    pub w1_shape: (usize, usize),
    pub w2_shape: (usize, usize),
    pub w1_fro_norm: f64,
    pub w2_fro_norm: f64,
    pub w1_max_abs: f64,
    pub w2_max_abs: f64,
    /// `||F||_F^2` of the identity probe.
    pub probed_power: f64,
    pub finite: bool,
}

pub fn inspect_weights(wf: &WeightFile) -> WeightInfo {
    let w = wf.weights();
    WeightInfo {
        format_version: wf.format_version,
        net: wf.net,
        config_hash: wf.config_hash.clone(),
        w1_shape: wf.w1.shape(),
        w2_shape: wf.w2.shape(),
        w1_fro_norm: wf.w1.fro_norm(),
        w2_fro_norm: wf.w2.fro_norm(),
        w1_max_abs: wf.w1.max_abs(),
        w2_max_abs: wf.w2.max_abs(),
        probed_power: probe_effective_precoder(&w, &wf.net).fro_norm_sq(),
        finite: w.is_finite(),
    }
}
