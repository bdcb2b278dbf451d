//! Acceptance suite: runs every shipped claim end-to-end at the matched
//! settings (624 subcarriers, 13 subbands, BLER target 0.1, 5 dB average
//! SNR, 10,000 samples, 30-bit feedback where applicable) and prints one
//! PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p cqifb --test acceptance -- --nocapture` to watch
//! the lines appear; the whole suite trains several networks and takes
//! roughly an hour on two cores.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cqifb::channel::{SimConfig, TdlProfile};
use cqifb::cli::{self, evaluate_scheme, EvalDeps, Scheme};
use cqifb::config::GlobalConfig;
use cqifb::cqinet::{self, normalize, CqinetArch};
use cqifb::dataio::{self, BundleMeta, Dataset, ModelBundle, Split};
use cqifb::link::{
    decode_offsets, encode_offsets, select_cqi_for_snr, BlerModel, CqiGranularity, CqiTable, CqiVector, EesmBeta,
    SchemeMetrics,
};
use cqifb::nn::{gradient_check, quantize_value, Layer, Matrix, NetworkModel, TrainConfig};
use cqifb::sr::{self, CoarseKind, CsirsPattern};

const SEED: u64 = 42;

struct Criteria {
    results: Vec<(usize, &'static str, bool, String)>,
}

impl Criteria {
    fn record(&mut self, number: usize, name: &'static str, pass: bool, detail: String) {
        println!("{} criterion {number}: {name} — {detail}", if pass { "PASS" } else { "FAIL" });
        self.results.push((number, name, pass, detail));
    }
}

struct Env {
    ds: Dataset,
    split: Split,
    table: CqiTable,
    bler: BlerModel,
    resolved: cqifb::config::Resolved,
}

fn build_env() -> Env {
    let cfg = SimConfig {
        seed: SEED,
        ..SimConfig::default()
    };
    let profile = TdlProfile::tdl_c();
    let table = CqiTable::default();
    let bler = BlerModel::from_table(&table);
    let beta = EesmBeta::from_table(&table);
    let t = Instant::now();
    let ds = dataio::generate_dataset(&cfg, &profile, &bler, &beta, 0.1, 10_000).expect("dataset generates");
    println!(
        "dataset: 10,000 samples at N_c=624, J=13 in {:.0}s (noise_var {:.4})",
        t.elapsed().as_secs_f64(),
        ds.sim.noise_var.unwrap()
    );
    let split = dataio::split(ds.samples.len(), SEED);
    let mut resolved = GlobalConfig::default().resolve(Path::new(".")).expect("default config resolves");
    resolved.sim = ds.sim.clone();
    resolved.train.seed = SEED;
    Env {
        ds,
        split,
        table,
        bler,
        resolved,
    }
}

fn baseline(env: &Env, scheme: Scheme) -> SchemeMetrics {
    let deps = EvalDeps {
        resolved: &env.resolved,
        cqinet: None,
        srcqinet: None,
        interp: None,
    };
    evaluate_scheme(&env.ds, &env.split.test, scheme, &deps).expect("baseline evaluates")
}

fn train_cqinet(env: &Env, d3: usize, epochs: usize, patience: usize) -> ModelBundle {
    let arch = CqinetArch {
        d3,
        ..CqinetArch::default()
    };
    let tcfg = TrainConfig {
        epochs,
        seed: SEED,
        plateau_patience: Some(patience),
        ..TrainConfig::default()
    };
    let samples = env.ds.subcarrier_cqi_samples();
    let out = cqinet::train(&samples, &arch, &tcfg, &env.split.train, &env.split.val).expect("training runs");
    println!(
        "  trained cqinet d3={d3}: {} epochs, best val {:.4} at {}",
        out.log.len(),
        out.best_val_loss,
        out.best_epoch
    );
    ModelBundle {
        encoder: out.encoder,
        decoder: out.decoder,
        meta: BundleMeta {
            role: "cqinet".into(),
            arch,
            seed: SEED,
            n_cg: None,
            kind: None,
            positions: None,
        },
    }
}

fn eval_cqinet(env: &Env, bundle: &ModelBundle) -> SchemeMetrics {
    let deps = EvalDeps {
        resolved: &env.resolved,
        cqinet: Some(bundle),
        srcqinet: None,
        interp: None,
    };
    evaluate_scheme(&env.ds, &env.split.test, Scheme::Cqinet, &deps).expect("cqinet evaluates")
}

fn train_sr(env: &Env, n_cg: usize, kind: CoarseKind, epochs: usize, patience: usize) -> ModelBundle {
    let arch = CqinetArch::default();
    let pattern = CsirsPattern::uniform(624, n_cg).expect("pattern");
    let tcfg = TrainConfig {
        epochs,
        seed: SEED,
        plateau_patience: Some(patience),
        ..TrainConfig::default()
    };
    let out = sr::train_sr(
        &env.ds.snr_samples(),
        &env.ds.subcarrier_cqi_samples(),
        &arch,
        &pattern,
        kind,
        &tcfg,
        &env.split.train,
        &env.split.val,
        false,
    )
    .expect("sr training runs");
    println!(
        "  trained sr-cqinet ncg={n_cg} kind={}: {} epochs, best val {:.4} at {}",
        kind.as_str(),
        out.log.len(),
        out.best_val_loss,
        out.best_epoch
    );
    ModelBundle {
        encoder: out.encoder,
        decoder: out.decoder,
        meta: BundleMeta {
            role: "sr".into(),
            arch,
            seed: SEED,
            n_cg: Some(pattern.n_cg()),
            kind: Some(kind.as_str().into()),
            positions: Some(pattern.positions().to_vec()),
        },
    }
}

fn eval_sr(env: &Env, bundle: &ModelBundle) -> SchemeMetrics {
    let deps = EvalDeps {
        resolved: &env.resolved,
        cqinet: None,
        srcqinet: Some(bundle),
        interp: None,
    };
    evaluate_scheme(&env.ds, &env.split.test, Scheme::SrCqinet, &deps).expect("sr evaluates")
}

#[test]
fn acceptance_criteria() {
    let mut c = Criteria { results: Vec::new() };
    let env = build_env();

    criterion_1(&mut c, &env);
    let offset = baseline(&env, Scheme::SubbandOffset);
    let raw = baseline(&env, Scheme::SubbandRaw);
    let subcarrier = baseline(&env, Scheme::Subcarrier);
    criterion_2(&mut c, &env, &subcarrier, &offset, &raw);
    criterion_3(&mut c, &offset, &raw);
    criterion_4(&mut c, &env, &offset);
    criterion_5(&mut c, &env);
    criterion_6(&mut c, &env);
    criterion_7(&mut c, &env);
    criterion_8(&mut c, &env);
    criterion_9(&mut c);
    criterion_10(&mut c);
    criterion_11(&mut c);

    let failures: Vec<String> = c
        .results
        .iter()
        .filter(|r| !r.2)
        .map(|r| format!("criterion {} ({}): {}", r.0, r.1, r.3))
        .collect();
    println!(
        "acceptance: {}/{} criteria passed",
        c.results.len() - failures.len(),
        c.results.len()
    );
    assert!(failures.is_empty(), "failed criteria:\n{}", failures.join("\n"));
}

fn criterion_1(c: &mut Criteria, env: &Env) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let gamma: f64 = rng.gen_range(-30.0..35.0);
        // Independent oracle: scan every index, keep the largest that passes.
        let mut oracle = 0u8;
        for k in 1..=15u8 {
            if env.bler.bler(gamma, k) <= 0.1 {
                oracle = k;
            }
        }
        if select_cqi_for_snr(gamma, &env.bler, 0.1) != oracle {
            mismatches += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    c.record(
        1,
        "CQI-selection oracle equivalence",
        mismatches == 0 && secs < 1.0,
        format!("{mismatches} mismatches over 1000 draws in {secs:.3}s"),
    );
}

fn criterion_2(c: &mut Criteria, env: &Env, subcarrier: &SchemeMetrics, offset: &SchemeMetrics, raw: &SchemeMetrics) {
    let t = Instant::now();
    // The three scheme evaluations above cover the whole test split; re-time
    // one of them to bound the per-scheme cost.
    let _ = baseline(env, Scheme::SubbandOffset);
    let secs = t.elapsed().as_secs_f64();
    let vs_offset = subcarrier.effective_rate_bps / offset.effective_rate_bps;
    let vs_raw = subcarrier.effective_rate_bps / raw.effective_rate_bps;
    c.record(
        2,
        "effective-rate ordering",
        vs_offset >= 1.05 && vs_raw >= 1.03 && secs < 120.0,
        format!(
            "subcarrier {:.4e} bps = {:.2}% over offset, {:.2}% over raw (eval {secs:.1}s)",
            subcarrier.effective_rate_bps,
            (vs_offset - 1.0) * 100.0,
            (vs_raw - 1.0) * 100.0
        ),
    );
}

fn criterion_3(c: &mut Criteria, offset: &SchemeMetrics, raw: &SchemeMetrics) {
    let pass = offset.error_sum > raw.error_sum
        && raw.error_sum > 0.15
        && offset.error_high > 0.25 * offset.error_sum;
    c.record(
        3,
        "subband error structure",
        pass,
        format!(
            "offset err {:.4} > raw err {:.4} > 0.15; error-high fraction {:.2}",
            offset.error_sum,
            raw.error_sum,
            offset.error_high / offset.error_sum
        ),
    );
}

fn criterion_4(c: &mut Criteria, env: &Env, offset: &SchemeMetrics) {
    let t = Instant::now();
    let bundle = train_cqinet(env, 15, 300, 30);
    let train_secs = t.elapsed().as_secs_f64();
    let m = eval_cqinet(env, &bundle);
    let err_ratio = m.error_sum / offset.error_sum;
    let rate_ratio = m.effective_rate_bps / offset.effective_rate_bps;
    c.record(
        4,
        "CQInet vs subband at 30 bits",
        err_ratio <= 0.95 && rate_ratio >= 1.02 && train_secs < 1800.0,
        format!(
            "err {:.4} ({:.1}% below subband), rate {:.4e} ({:+.2}%), trained in {train_secs:.0}s",
            m.error_sum,
            (1.0 - err_ratio) * 100.0,
            m.effective_rate_bps,
            (rate_ratio - 1.0) * 100.0
        ),
    );
}

fn criterion_5(c: &mut Criteria, env: &Env) {
    let mut rates = Vec::new();
    for d3 in [5usize, 10, 15, 20, 25, 30, 35, 40] {
        let bundle = train_cqinet(env, d3, 120, 15);
        let m = eval_cqinet(env, &bundle);
        rates.push((d3 * 2, m.effective_rate_bps));
    }
    let mut ok = true;
    for w in rates.windows(2) {
        if w[1].1 < w[0].1 * 0.99 {
            ok = false;
        }
    }
    let listed: Vec<String> = rates.iter().map(|(s, r)| format!("S={s}:{:.3e}", r)).collect();
    c.record(
        5,
        "rate vs overhead monotonicity",
        ok,
        format!("within 1% per step: [{}]", listed.join(", ")),
    );
}

fn criterion_6(c: &mut Criteria, env: &Env) {
    let bundle = train_sr(env, 13, CoarseKind::Snr, 150, 20);
    let m = eval_sr(env, &bundle);
    let p0 = m.deviation_histogram.get(&0).copied().unwrap_or(0.0);
    let beyond: f64 = m
        .deviation_histogram
        .iter()
        .filter(|(d, _)| d.abs() > 1)
        .map(|(_, p)| p)
        .sum();
    c.record(
        6,
        "SR-CQInet deviation structure at 13 pilots",
        p0 >= 0.6 && beyond <= 0.05,
        format!("P(dev=0) = {p0:.3}, P(|dev|>1) = {beyond:.4}"),
    );
}

fn criterion_7(c: &mut Criteria, env: &Env) {
    let sr_bundle = train_sr(env, 8, CoarseKind::Snr, 150, 20);
    let sr_m = eval_sr(env, &sr_bundle);

    let arch = CqinetArch::default();
    let pattern = CsirsPattern::uniform(624, 8).expect("pattern");
    let tcfg = TrainConfig {
        epochs: 150,
        seed: SEED,
        plateau_patience: Some(20),
        ..TrainConfig::default()
    };
    let out = sr::train_interp_ae(
        &env.ds.subcarrier_cqi_samples(),
        &arch,
        &pattern,
        &tcfg,
        &env.split.train,
        &env.split.val,
    )
    .expect("interp ae trains");
    let interp_bundle = ModelBundle {
        encoder: out.encoder,
        decoder: out.decoder,
        meta: BundleMeta {
            role: "interp-ae".into(),
            arch: CqinetArch {
                d6: 8,
                d7: 8,
                ..arch
            },
            seed: SEED,
            n_cg: Some(8),
            kind: Some("cqi".into()),
            positions: Some(pattern.positions().to_vec()),
        },
    };
    let deps = EvalDeps {
        resolved: &env.resolved,
        cqinet: None,
        srcqinet: None,
        interp: Some(&interp_bundle),
    };
    let interp_m = evaluate_scheme(&env.ds, &env.split.test, Scheme::Interp, &deps).expect("interp evaluates");
    c.record(
        7,
        "SR beats interpolation at 8 pilots",
        sr_m.error_sum < interp_m.error_sum,
        format!("SR err {:.4} vs interpolation err {:.4}", sr_m.error_sum, interp_m.error_sum),
    );
}

fn criterion_8(c: &mut Criteria, env: &Env) {
    let arch = CqinetArch::default();
    let tcfg = TrainConfig {
        epochs: 4,
        seed: SEED,
        ..TrainConfig::default()
    };
    let samples = env.ds.subcarrier_cqi_samples();
    let base = cqinet::train(&samples, &arch, &tcfg, &env.split.train, &env.split.val).expect("cqinet trains");
    let pattern = CsirsPattern::uniform(624, 624).expect("full pattern");
    let sr_out = sr::train_sr(
        &env.ds.snr_samples(),
        &samples,
        &arch,
        &pattern,
        CoarseKind::Cqi,
        &tcfg,
        &env.split.train,
        &env.split.val,
        false,
    )
    .expect("sr trains");
    let logs_equal = base.log == sr_out.log;
    let models_equal = base.encoder == sr_out.encoder && base.decoder == sr_out.decoder;
    c.record(
        8,
        "full-pilot SR collapses to CQInet",
        logs_equal && models_equal,
        format!(
            "{} epochs compared; logs {}, weights {}",
            base.log.len(),
            if logs_equal { "identical" } else { "differ" },
            if models_equal { "identical" } else { "differ" }
        ),
    );
}

fn criterion_9(c: &mut Criteria) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let quantize_free = NetworkModel::new(
        vec![
            Layer::dense_init(12, 24, &mut rng),
            Layer::batch_norm(24),
            Layer::LeakyRelu { slope: 0.01 },
            Layer::dense_init(24, 16, &mut rng),
            Layer::Sigmoid,
            Layer::dense_init(16, 6, &mut rng),
        ],
        None,
        12,
    )
    .expect("model builds");
    let mut input = Matrix::zeros(8, 12);
    let mut target = Matrix::zeros(8, 6);
    let mut s = 99u64;
    for v in input.data_mut().iter_mut().chain(target.data_mut()) {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        *v = (((s >> 33) as f32 / (1u64 << 31) as f32) - 0.5) * 3.0;
    }
    let report = gradient_check(&quantize_free, &input, &target, 0.05, 80, 3);

    // Straight-through estimator: gradients cross the quantizer unchanged.
    let mut q = NetworkModel::new(vec![Layer::Quantize { bits: 2 }], None, 5).expect("model builds");
    let x = Matrix::from_rows(&[vec![0.1, 0.3, 0.5, 0.7, 0.9]]);
    let cache = q.forward_train(&x, &mut rng);
    let dy = Matrix::from_rows(&[vec![1.5, -0.25, 3.0, 0.0, -2.0]]);
    let (_, dx) = q.backward(&cache, &dy);
    let ste_ok = dx.data() == dy.data();
    let secs = t.elapsed().as_secs_f64();
    c.record(
        9,
        "gradient correctness",
        report.max_rel_error < 1e-4 && report.n_checked > 0 && ste_ok && secs < 60.0,
        format!(
            "finite differences over {} probes: max rel {:.2e}; STE passthrough {}; {secs:.2}s",
            report.n_checked,
            report.max_rel_error,
            if ste_ok { "exact" } else { "broken" }
        ),
    );
}

fn criterion_10(c: &mut Criteria) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut in_range = 0usize;
    let mut violations = 0usize;
    for _ in 0..10_000 {
        let values: Vec<u8> = (0..13).map(|_| rng.gen_range(0..=15u8)).collect();
        let v = CqiVector::new(values, CqiGranularity::PerSubband, 15);
        let report = encode_offsets(&v, 4, 2);
        let decoded = decode_offsets(&report, 15);
        let wb = report.wideband_cqi as i32;
        if v.values().iter().all(|&x| (-1..=2).contains(&(x as i32 - wb))) {
            in_range += 1;
            if decoded != v {
                violations += 1;
            }
        }
    }
    // Quantizer outputs stay on the 2^B1 grid.
    let mut grid_ok = true;
    for i in 0..=10_000 {
        let x = i as f32 / 10_000.0;
        let y = quantize_value(x, 2);
        if ![0.125f32, 0.375, 0.625, 0.875].contains(&y) {
            grid_ok = false;
        }
    }
    // Normalization round trip over the whole CQI range.
    let mut norm_ok = true;
    for k in 0..=15u8 {
        if cqinet::denormalize(&normalize(&[k], 4), 4, 4) != vec![k] {
            norm_ok = false;
        }
    }
    c.record(
        10,
        "codec properties",
        violations == 0 && in_range > 1000 && grid_ok && norm_ok,
        format!(
            "{in_range} in-range vectors of 10,000 all round-tripped ({violations} violations); quantizer grid {}; norm/denorm {}",
            if grid_ok { "confined" } else { "broken" },
            if norm_ok { "identity" } else { "broken" }
        ),
    );
}

fn criterion_11(c: &mut Criteria) {
    // Tiny end-to-end configuration keeps the double pipeline affordable;
    // determinism is size-independent.
    let config = r#"{
        "sim": {"n_tx": 4, "n_rx": 2, "n_subcarriers": 48, "n_subbands": 4, "pmi_bits": 2, "seed": 7},
        "train": {"epochs": 4, "batch_size": 10, "seed": 9},
        "arch": {"d1": 32, "d2": 16, "d3": 5},
        "sr": {"n_cg": 6, "kind": "snr"},
        "dataset_count": 50
    }"#;
    let run_pipeline = |tag: &str| -> (Vec<u8>, Vec<u8>, Vec<u8>) {
        let dir = std::env::temp_dir().join(format!("cqifb_accept_{}_{tag}", std::process::id()));
        std::fs::remove_dir_all(&dir).ok();
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("config.json"), config).unwrap();
        let cfg = dir.join("config.json").to_string_lossy().into_owned();
        let out = dir.join("out").to_string_lossy().into_owned();
        for args in [
            vec!["gen-data"],
            vec!["train-cqinet"],
            vec!["eval", "--scheme", "cqinet"],
            vec!["eval", "--scheme", "subband-offset"],
        ] {
            let mut full: Vec<String> = args.iter().map(|s| s.to_string()).collect();
            full.extend(["--config".into(), cfg.clone(), "--out".into(), out.clone()]);
            assert_eq!(cli::run(&full), 0, "pipeline step failed: {args:?}");
        }
        let out = Path::new(&out);
        let r = (
            std::fs::read(out.join("dataset.cqds")).unwrap(),
            std::fs::read(out.join("metrics_cqinet.csv")).unwrap(),
            std::fs::read(out.join("metrics_subband-offset.csv")).unwrap(),
        );
        std::fs::remove_dir_all(&dir).ok();
        r
    };
    let a = run_pipeline("a");
    let b = run_pipeline("b");
    let pass = a == b;
    c.record(
        11,
        "pipeline determinism",
        pass,
        if pass {
            "gen-data, training, and both eval reports byte-identical across reruns".into()
        } else {
            "rerun produced different bytes".into()
        },
    );
}
