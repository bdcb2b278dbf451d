//! End-to-end CLI tests on a miniature configuration.

use std::path::{Path, PathBuf};

use cqifb::cli;

fn tiny_config() -> &'static str {
    r#"{
        "sim": {"n_tx": 4, "n_rx": 2, "n_subcarriers": 48, "n_subbands": 4, "pmi_bits": 2, "seed": 7},
        "train": {"epochs": 3, "batch_size": 8, "seed": 9},
        "arch": {"d1": 32, "d2": 16, "d3": 5},
        "sr": {"n_cg": 6, "kind": "snr"},
        "dataset_count": 40
    }"#
}

struct Workspace {
    dir: PathBuf,
}

impl Workspace {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("cqifb_cli_{}_{tag}", std::process::id()));
        std::fs::remove_dir_all(&dir).ok();
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("config.json"), tiny_config()).unwrap();
        Workspace { dir }
    }

    fn config(&self) -> String {
        self.dir.join("config.json").to_string_lossy().into_owned()
    }

    fn out(&self) -> String {
        self.dir.join("out").to_string_lossy().into_owned()
    }

    fn run(&self, args: &[&str]) -> i32 {
        let mut full: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        full.extend(["--config".to_string(), self.config(), "--out".to_string(), self.out()]);
        cli::run(&full)
    }

    fn out_file(&self, name: &str) -> PathBuf {
        Path::new(&self.out()).join(name)
    }

    fn read_metric(&self, name: &str, column: &str) -> f64 {
        let text = std::fs::read_to_string(self.out_file(name)).unwrap();
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let idx = header.iter().position(|&h| h == column).unwrap();
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        row[idx].parse().unwrap()
    }
}

impl Drop for Workspace {
    fn drop(&mut self) {
        std::fs::remove_dir_all(&self.dir).ok();
    }
}

#[test]
fn bad_invocations_use_documented_exit_codes() {
    let ws = Workspace::new("codes");
    // Unknown verb and unknown scheme are usage errors.
    assert_eq!(ws.run(&["frobnicate"]), 1);
    assert_eq!(cli::run(&["eval".into()]), 1); // missing --config
    // Missing config file.
    assert_eq!(
        cli::run(&[
            "gen-data".into(),
            "--config".into(),
            "/definitely/not/here.json".into()
        ]),
        2
    );
    // Eval before gen-data: the dataset file is missing.
    assert_eq!(ws.run(&["eval", "--scheme", "subcarrier"]), 2);
    // Unknown scheme.
    assert_eq!(ws.run(&["gen-data"]), 0);
    assert_eq!(ws.run(&["eval", "--scheme", "nope"]), 1);
}

#[test]
fn gen_data_is_idempotent() {
    let ws = Workspace::new("idem");
    assert_eq!(ws.run(&["gen-data"]), 0);
    let first = std::fs::read(ws.out_file("dataset.cqds")).unwrap();
    assert_eq!(ws.run(&["gen-data"]), 0);
    let second = std::fs::read(ws.out_file("dataset.cqds")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn classical_scheme_rates_are_ordered() {
    let ws = Workspace::new("order");
    assert_eq!(ws.run(&["gen-data"]), 0);
    for scheme in ["subcarrier", "subband-raw", "subband-offset", "subband-vos"] {
        assert_eq!(ws.run(&["eval", "--scheme", scheme]), 0, "{scheme}");
    }
    let sc = ws.read_metric("metrics_subcarrier.csv", "eff_rate_bps");
    let raw = ws.read_metric("metrics_subband-raw.csv", "eff_rate_bps");
    let off = ws.read_metric("metrics_subband-offset.csv", "eff_rate_bps");
    assert!(sc >= raw, "subcarrier {sc} < subband-raw {raw}");
    assert!(sc >= off, "subcarrier {sc} < subband-offset {off}");
    // Subcarrier CQI is the ground truth, so its error is zero.
    assert_eq!(ws.read_metric("metrics_subcarrier.csv", "error_sum"), 0.0);
    // Overheads are the frozen constants.
    assert_eq!(ws.read_metric("metrics_subband-raw.csv", "overhead_bits"), 16.0);
    assert_eq!(ws.read_metric("metrics_subband-offset.csv", "overhead_bits"), 12.0);
}

#[test]
fn training_and_learned_eval_produce_artifacts() {
    let ws = Workspace::new("train");
    assert_eq!(ws.run(&["gen-data"]), 0);
    assert_eq!(ws.run(&["train-cqinet"]), 0);
    assert!(ws.out_file("cqinet_d35.encoder.cqnn").exists());
    assert!(ws.out_file("cqinet_d35.decoder.cqnn").exists());
    assert!(ws.out_file("cqinet_d35.json").exists());
    assert!(ws.out_file("train_log_cqinet_d35.csv").exists());
    assert_eq!(ws.run(&["eval", "--scheme", "cqinet"]), 0);
    assert_eq!(ws.read_metric("metrics_cqinet.csv", "overhead_bits"), 10.0);

    assert_eq!(ws.run(&["train-srcqinet", "--ncg", "6", "--kind", "snr"]), 0);
    assert_eq!(ws.run(&["eval", "--scheme", "srcqinet"]), 0);
    assert_eq!(ws.read_metric("metrics_srcqinet.csv", "n_cg"), 6.0);

    assert_eq!(ws.run(&["train-srcqinet", "--ncg", "6", "--kind", "cqi", "--interp-ae"]), 0);
    assert_eq!(ws.run(&["eval", "--scheme", "interp"]), 0);
    let interp_err = ws.read_metric("metrics_interp.csv", "error_sum");
    assert!(interp_err >= 0.0 && interp_err <= 1.0);

    assert_eq!(ws.run(&["report"]), 0);
    let report = std::fs::read_to_string(ws.out_file("report.csv")).unwrap();
    // One merged row per metrics file plus the header.
    let metrics_files = 3;
    assert_eq!(report.lines().count(), 1 + metrics_files);
    let trace = std::fs::read_to_string(ws.out_file("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 48);
    assert!(trace.lines().next().unwrap().starts_with("subcarrier,snr_db,truth_cqi"));
    assert!(ws.out_file("split_audit.json").exists());
}

#[test]
fn pipeline_reruns_are_byte_identical() {
    let run_once = |tag: &str| -> (Vec<u8>, Vec<u8>, Vec<u8>) {
        let ws = Workspace::new(tag);
        assert_eq!(ws.run(&["gen-data"]), 0);
        assert_eq!(ws.run(&["train-cqinet"]), 0);
        assert_eq!(ws.run(&["eval", "--scheme", "cqinet"]), 0);
        (
            std::fs::read(ws.out_file("dataset.cqds")).unwrap(),
            std::fs::read(ws.out_file("cqinet_d35.encoder.cqnn")).unwrap(),
            std::fs::read(ws.out_file("metrics_cqinet.csv")).unwrap(),
        )
    };
    let a = run_once("det_a");
    let b = run_once("det_b");
    assert_eq!(a.0, b.0, "dataset bytes differ");
    assert_eq!(a.1, b.1, "model bytes differ");
    assert_eq!(a.2, b.2, "metrics bytes differ");
}

#[test]
fn sweep_produces_monotone_overhead_table() {
    let ws = Workspace::new("sweep");
    assert_eq!(ws.run(&["gen-data"]), 0);
    assert_eq!(ws.run(&["sweep", "--axis", "d3"]), 0);
    let text = std::fs::read_to_string(ws.out_file("sweep_d3.csv")).unwrap();
    let mut overheads = Vec::new();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        overheads.push(cols[1].parse::<f64>().unwrap());
    }
    assert_eq!(overheads.len(), 8);
    assert!(overheads.windows(2).all(|w| w[0] < w[1]), "{overheads:?}");
    assert_eq!(ws.run(&["sweep", "--axis", "bogus"]), 1);
}
