use std::collections::BTreeMap;
use std::process::Command;

use hbnn_cli::experiments::{nn_precoder, run_eval, run_sweep_snr, run_sweep_users, run_train};
use hbnn_cli::persist::load_channel;
use hbnn_cli::{ExperimentConfig, Method, Profile, WeightFile};
use hbnn_core::Error;

fn small_desk() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::profile(Profile::Desk);
    cfg.eval.k_values = vec![2, 4];
    cfg.eval.n_channel_trials = 2;
    cfg
}

#[test]
fn too_few_rf_chains_is_rejected_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_desk();
    cfg.n_rf = 3;
    let out = dir.path().join("run");
    let err = run_train(&cfg, &out).unwrap_err();
    let core = err.downcast_ref::<Error>().expect("config error");
    assert!(matches!(core, Error::InvalidConfig { field, .. } if field == "n_rf"));
    assert!(!out.exists());

    let path = dir.path().join("bad.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_hbnn"))
        .args([
            "train",
            "--config",
            path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("n_rf"));
    assert!(!out.exists());
}

#[test]
fn empty_method_list_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_desk();
    cfg.eval.methods.clear();
    assert!(run_sweep_snr(&cfg, dir.path(), Some(1)).is_err());
}

#[test]
fn train_artifacts_reload_and_reproduce() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_desk();
    let a = run_train(&cfg, &dir.path().join("a")).unwrap();

    let wf = WeightFile::load(&dir.path().join("a/weights.json")).unwrap();
    assert_eq!(wf.weights(), a.outcome.weights);
    assert_eq!(wf.config_hash, cfg.hash());
    let ch = load_channel(&dir.path().join("a/channel.json")).unwrap();
    assert_eq!(ch.matrix(), a.channel.matrix());

    // Rerun from the persisted config only.
    let persisted = ExperimentConfig::load(&dir.path().join("a/config.json")).unwrap();
    assert_eq!(persisted, cfg);
    run_train(&persisted, &dir.path().join("b")).unwrap();
    for name in ["weights.json", "history.csv", "channel.json"] {
        let x = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
}

#[test]
fn trained_probe_is_close_to_zf_target() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::profile(Profile::Desk);
    cfg.eval.nn_power_projection = false;
    let r = run_train(&cfg, dir.path()).unwrap();
    let y = nn_precoder(&cfg, &r.outcome.weights, &r.net);
    let b = &r.outcome.target.f;
    let rel = y.sub(b).fro_norm() / b.fro_norm();
    assert!(rel <= 0.2, "relative probe error {rel}");
    // Regression pin from the first measurement.
    assert!((rel - 0.040744973285427866).abs() <= 1e-6 * rel, "{rel}");
}

#[test]
fn eval_rows_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_desk();
    let r = run_train(&cfg, &dir.path().join("t")).unwrap();
    let wf = WeightFile::load(&dir.path().join("t/weights.json")).unwrap();
    let rows = run_eval(&cfg, &wf, &r.channel, &dir.path().join("e")).unwrap();
    let k = cfg.channel.n_users;
    assert_eq!(rows.len(), k * cfg.eval.methods.len());
    for m in &cfg.eval.methods {
        let mine: Vec<_> = rows.iter().filter(|r| r.method == *m).collect();
        let se: f64 = mine.iter().map(|r| (1.0 + r.sinr).log2()).sum();
        assert!((se - mine[0].se).abs() <= 1e-12 * se);
        for r in &mine {
            assert_eq!(r.counts.bits, 2 * cfg.eval.n_symbols as u64);
            assert!(r.sinr >= 0.0);
        }
    }
}

fn read_csv(path: &std::path::Path) -> Vec<BTreeMap<String, String>> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let headers = rdr.headers().unwrap().clone();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            headers
                .iter()
                .map(String::from)
                .zip(r.iter().map(String::from))
                .collect()
        })
        .collect()
}

#[test]
fn user_sweep_summary_recomputes_from_trials() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_desk();
    run_sweep_users(&cfg, dir.path(), Some(2)).unwrap();
    let summary = read_csv(&dir.path().join("sweep_users.csv"));
    let trials = read_csv(&dir.path().join("sweep_users_trials.csv"));
    assert_eq!(summary.len(), cfg.eval.k_values.len() * 3);
    assert_eq!(
        trials.len(),
        cfg.eval.k_values.len() * 3 * cfg.eval.n_channel_trials
    );
    for row in &summary {
        let cell: Vec<_> = trials
            .iter()
            .filter(|t| t["k"] == row["k"] && t["method"] == row["method"] && t["status"] == "ok")
            .collect();
        assert_eq!(cell.len().to_string(), row["trials"]);
        let mean = |col: &str| {
            cell.iter()
                .map(|t| t[col].parse::<f64>().unwrap())
                .sum::<f64>()
                / cell.len() as f64
        };
        let se: f64 = row["se_mean"].parse().unwrap();
        let ber: f64 = row["ber_mean"].parse().unwrap();
        assert_eq!(mean("se").to_bits(), se.to_bits());
        assert_eq!(mean("ber").to_bits(), ber.to_bits());
        assert_eq!(row["failed"], "0");
    }
}

#[test]
fn zf_ber_is_monotone_in_snr() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_desk();
    cfg.eval.methods = vec![Method::Zf];
    cfg.eval.n_channel_trials = 3;
    cfg.eval.snr_db_list = (0..8).map(|i| -24.0 + 3.0 * i as f64).collect();
    let report = run_sweep_snr(&cfg, dir.path(), Some(1)).unwrap();
    let bers: Vec<(f64, u64)> = report
        .summary
        .iter()
        .map(|r| (r.bit_errors as f64 / r.n_bits as f64, r.n_bits))
        .collect();
    for w in bers.windows(2) {
        let ((p0, n0), (p1, n1)) = (w[0], w[1]);
        let sigma = (p0 * (1.0 - p0) / n0 as f64 + p1 * (1.0 - p1) / n1 as f64).sqrt();
        assert!(p1 <= p0 + 3.0 * sigma, "{bers:?}");
    }
    assert!(bers[0].0 > bers[bers.len() - 1].0);
}

#[test]
fn nonlinear_ber_path_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_desk();
    cfg.eval.n_channel_trials = 1;
    cfg.eval.nn_nonlinear_ber = true;
    cfg.eval.snr_db_list = vec![-6.0];
    let report = run_sweep_snr(&cfg, dir.path(), Some(1)).unwrap();
    let nn = report
        .summary
        .iter()
        .find(|r| r.method == Method::Nn)
        .unwrap();
    let zf = report
        .summary
        .iter()
        .find(|r| r.method == Method::Zf)
        .unwrap();
    assert_eq!(nn.failed, 0);
    let (b_nn, b_zf) = (
        nn.bit_errors as f64 / nn.n_bits as f64,
        zf.bit_errors as f64 / zf.n_bits as f64,
    );
    assert!(
        b_nn < 0.5 && b_nn < 5.0 * b_zf.max(1e-3),
        "nn {b_nn} zf {b_zf}"
    );
}
