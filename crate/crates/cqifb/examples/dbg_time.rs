use std::time::Instant;
use cqifb::channel::{SimConfig, TdlProfile};
use cqifb::config::GlobalConfig;
use cqifb::cli::{evaluate_scheme, EvalDeps, Scheme};
use cqifb::cqinet::{train, CqinetArch};
use cqifb::dataio::{generate_dataset, split, BundleMeta, ModelBundle};
use cqifb::link::{BlerModel, CqiTable, EesmBeta};
use cqifb::nn::TrainConfig;
use cqifb::sr::{self, CoarseKind, CsirsPattern};
use std::path::Path;

fn main() {
    let cfg = SimConfig { seed: 42, pmi_bits: 2, ..SimConfig::default() };
    let table = CqiTable::default();
    let model = BlerModel::from_table(&table);
    let beta = EesmBeta::from_table(&table);
    let count = 10_000;
    let t0 = Instant::now();
    let ds = generate_dataset(&cfg, &TdlProfile::tdl_c(), &model, &beta, 0.1, count).unwrap();
    println!("gen: {:.0}s", t0.elapsed().as_secs_f64());
    let gc = GlobalConfig::default();
    let mut resolved = gc.resolve(Path::new(".")).unwrap();
    resolved.sim = ds.sim.clone();
    resolved.train.seed = 42;
    let sp = split(count, 42);
    let deps0 = EvalDeps { resolved: &resolved, cqinet: None, srcqinet: None, interp: None };
    let off = evaluate_scheme(&ds, &sp.test, Scheme::SubbandOffset, &deps0).unwrap();
    let raw = evaluate_scheme(&ds, &sp.test, Scheme::SubbandRaw, &deps0).unwrap();
    let sc = evaluate_scheme(&ds, &sp.test, Scheme::Subcarrier, &deps0).unwrap();
    println!("off err {:.4} rate {:.4e} | raw err {:.4} | sc +{:.2}% vs off, +{:.2}% vs raw",
        off.error_sum, off.effective_rate_bps, raw.error_sum,
        (sc.effective_rate_bps / off.effective_rate_bps - 1.0) * 100.0,
        (sc.effective_rate_bps / raw.effective_rate_bps - 1.0) * 100.0);

    let samples = ds.subcarrier_cqi_samples();
    let arch = CqinetArch::default();
    let tcfg = TrainConfig { epochs: 300, seed: 42, plateau_patience: Some(30), ..TrainConfig::default() };
    let t1 = Instant::now();
    let out = train(&samples, &arch, &tcfg, &sp.train, &sp.val).unwrap();
    println!("cqinet train {:.0}s {} epochs best {:.4} @ {}", t1.elapsed().as_secs_f64(), out.log.len(), out.best_val_loss, out.best_epoch);
    let bundle = ModelBundle { encoder: out.encoder, decoder: out.decoder, meta: BundleMeta {
        role: "cqinet".into(), arch: arch.clone(), seed: 42, n_cg: None, kind: None, positions: None } };
    let deps = EvalDeps { resolved: &resolved, cqinet: Some(&bundle), srcqinet: None, interp: None };
    let m = evaluate_scheme(&ds, &sp.test, Scheme::Cqinet, &deps).unwrap();
    println!("CRIT4: err {:.4} (hi {:.4}) ratio {:.4} | rate {:.4e} ratio {:.4}",
        m.error_sum, m.error_high, m.error_sum / off.error_sum, m.effective_rate_bps, m.effective_rate_bps / off.effective_rate_bps);

    // criterion 6 probe
    let pattern = CsirsPattern::uniform(624, 13).unwrap();
    let tcfg_sr = TrainConfig { epochs: 150, seed: 42, plateau_patience: Some(20), ..TrainConfig::default() };
    let t2 = Instant::now();
    let sr_out = sr::train_sr(&ds.snr_samples(), &samples, &arch, &pattern, CoarseKind::Snr, &tcfg_sr, &sp.train, &sp.val, false).unwrap();
    println!("sr train {:.0}s {} epochs best {:.4}", t2.elapsed().as_secs_f64(), sr_out.log.len(), sr_out.best_val_loss);
    let sr_bundle = ModelBundle { encoder: sr_out.encoder, decoder: sr_out.decoder, meta: BundleMeta {
        role: "sr".into(), arch: arch.clone(), seed: 42, n_cg: Some(13), kind: Some("snr".into()), positions: Some(pattern.positions().to_vec()) } };
    let deps = EvalDeps { resolved: &resolved, cqinet: None, srcqinet: Some(&sr_bundle), interp: None };
    let sm = evaluate_scheme(&ds, &sp.test, Scheme::SrCqinet, &deps).unwrap();
    let p0 = sm.deviation_histogram.get(&0).copied().unwrap_or(0.0);
    let beyond: f64 = sm.deviation_histogram.iter().filter(|(d, _)| d.abs() > 1).map(|(_, p)| p).sum();
    println!("CRIT6: P(dev=0)={:.3} P(|dev|>1)={:.4} err {:.4} rate {:.4e}", p0, beyond, sm.error_sum, sm.effective_rate_bps);
}
