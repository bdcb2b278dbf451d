use std::time::Instant;
use cqifb::channel::{SimConfig, TdlProfile};
use cqifb::config::GlobalConfig;
use cqifb::cli::{evaluate_scheme, EvalDeps, Scheme};
use cqifb::cqinet::{train_autoencoder_with_shortcut_probe, normalize, CqinetArch};
use cqifb::dataio::{generate_dataset, split, BundleMeta, ModelBundle};
use cqifb::link::{BlerModel, CqiTable, EesmBeta};
use cqifb::nn::{Matrix, TrainConfig};
use std::path::Path;

fn main() {
    let cfg = SimConfig { seed: 42, ..SimConfig::default() };
    let table = CqiTable::default();
    let model = BlerModel::from_table(&table);
    let beta = EesmBeta::from_table(&table);
    let count = 10_000;
    let ds = generate_dataset(&cfg, &TdlProfile::tdl_c(), &model, &beta, 0.1, count).unwrap();
    let gc = GlobalConfig::default();
    let mut resolved = gc.resolve(Path::new(".")).unwrap();
    resolved.sim = ds.sim.clone();
    resolved.train.seed = 42;
    let sp = split(count, 42);
    let deps0 = EvalDeps { resolved: &resolved, cqinet: None, srcqinet: None, interp: None };
    let off = evaluate_scheme(&ds, &sp.test, Scheme::SubbandOffset, &deps0).unwrap();
    println!("off err {:.4} rate {:.4e}", off.error_sum, off.effective_rate_bps);

    let samples = ds.subcarrier_cqi_samples();
    let rows: Vec<Vec<f32>> = samples.iter().map(|s| normalize(s, 4)).collect();
    let inputs = Matrix::from_rows(&rows);
    let trows: Vec<Vec<f32>> = samples.iter().map(|s| s.iter().map(|&k| k as f32).collect()).collect();
    let targets = Matrix::from_rows(&trows);
    let arch = CqinetArch::default();
    let tcfg = TrainConfig { epochs: 200, seed: 42, plateau_patience: Some(25), ..TrainConfig::default() };

    for (name, shortcut) in [("input-side (8,12)", (8usize, 12usize)), ("residual (11,13)", (11, 13))] {
        let t1 = Instant::now();
        let out = train_autoencoder_with_shortcut_probe(&inputs, &targets, &sp.train, &sp.val, &arch, &tcfg, shortcut).unwrap();
        let bundle = ModelBundle { encoder: out.encoder, decoder: out.decoder, meta: BundleMeta {
            role: "cqinet".into(), arch: arch.clone(), seed: 42, n_cg: None, kind: None, positions: None } };
        let deps = EvalDeps { resolved: &resolved, cqinet: Some(&bundle), srcqinet: None, interp: None };
        let m = evaluate_scheme(&ds, &sp.test, Scheme::Cqinet, &deps).unwrap();
        println!("{name}: {:.0}s {} epochs best {:.4} @ {} | err {:.4} (hi {:.4}) ratio {:.4} | rate {:.4e} ratio {:.4}",
            t1.elapsed().as_secs_f64(), out.log.len(), out.best_val_loss, out.best_epoch,
            m.error_sum, m.error_high, m.error_sum / off.error_sum,
            m.effective_rate_bps, m.effective_rate_bps / off.effective_rate_bps);
    }
}
