//! Command-line front end: dataset generation, training, evaluation, sweeps,
//! and report emission.
//!
//! Exit codes: 0 success, 1 usage/config errors, 2 missing files, 3 internal
//! failures. Errors go to stderr with an `ERROR <code>:` prefix.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use crate::config::{GlobalConfig, Resolved};
use crate::cqinet::{self, CqinetArch};
use crate::dataio::{self, BundleMeta, Dataset, ModelBundle, Split};
use crate::error::{Error, Result};
use crate::link::{
    decode_offsets, effective_rate, encode_offsets, encode_vos, linear_to_db, CqiVector, DeviationAccumulator,
    SchemeMetrics,
};
use crate::nn::Matrix;
use crate::sr::{self, CoarseKind, CsirsPattern};
use crate::util::fnv1a64;

pub const METRICS_HEADER: &str = "scheme,overhead_bits,error_high,error_low,error_sum,eff_rate_bps,n_cg,kind,d3,seed";

const D3_SWEEP: [usize; 8] = [5, 10, 15, 20, 25, 30, 35, 40];
const NCG_SWEEP: [usize; 6] = [4, 8, 13, 22, 52, 624];

/// Evaluated feedback schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    SubbandOffset,
    SubbandRaw,
    SubbandVos,
    Subcarrier,
    Cqinet,
    SrCqinet,
    Interp,
}

impl Scheme {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "subband-offset" => Scheme::SubbandOffset,
            "subband-raw" => Scheme::SubbandRaw,
            "subband-vos" => Scheme::SubbandVos,
            "subcarrier" => Scheme::Subcarrier,
            "cqinet" => Scheme::Cqinet,
            "srcqinet" => Scheme::SrCqinet,
            "interp" => Scheme::Interp,
            other => return Err(Error::invalid(format!("unknown scheme {other:?}"))),
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::SubbandOffset => "subband-offset",
            Scheme::SubbandRaw => "subband-raw",
            Scheme::SubbandVos => "subband-vos",
            Scheme::Subcarrier => "subcarrier",
            Scheme::Cqinet => "cqinet",
            Scheme::SrCqinet => "srcqinet",
            Scheme::Interp => "interp",
        }
    }
}

/// External pieces a scheme evaluation may need.
pub struct EvalDeps<'a> {
    pub resolved: &'a Resolved,
    pub cqinet: Option<&'a ModelBundle>,
    pub srcqinet: Option<&'a ModelBundle>,
    pub interp: Option<&'a ModelBundle>,
}

/// Scores one scheme over the given dataset rows: classification errors and
/// deviation histogram against the per-subcarrier truth, mean effective rate,
/// and mean feedback overhead.
pub fn evaluate_scheme(ds: &Dataset, idx: &[usize], scheme: Scheme, deps: &EvalDeps) -> Result<SchemeMetrics> {
    if idx.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let r = deps.resolved;
    let max_cqi = r.table.max_index();
    let c1 = r.table.c1_bits();
    let n_c = ds.n_subcarriers();
    let mut acc = DeviationAccumulator::new();
    let mut rate_sum = 0.0f64;
    let mut overhead_sum = 0.0f64;

    // Learned schemes reconstruct the whole evaluation set in batches first.
    let learned: Option<Vec<Vec<u8>>> = match scheme {
        Scheme::Cqinet => {
            let bundle = deps.cqinet.ok_or_else(|| Error::invalid("cqinet evaluation needs a model bundle"))?;
            let rows: Vec<Vec<f32>> = idx
                .iter()
                .map(|&i| cqinet::normalize(&ds.samples[i].subcarrier_cqi, c1))
                .collect();
            Some(cqinet::reconstruct_batch(
                &Matrix::from_rows(&rows),
                &bundle.encoder,
                &bundle.decoder,
                &bundle.meta.arch,
                r.train.batch_size,
            ))
        }
        Scheme::SrCqinet => {
            let bundle = deps
                .srcqinet
                .ok_or_else(|| Error::invalid("srcqinet evaluation needs a model bundle"))?;
            let pattern = bundle_pattern(bundle, n_c)?;
            let kind = CoarseKind::parse(bundle.meta.kind.as_deref().unwrap_or("snr"))?;
            let rows: Vec<Vec<f32>> = idx
                .iter()
                .map(|&i| match kind {
                    CoarseKind::Cqi => Ok(cqinet::normalize(&pattern.gather(&ds.samples[i].subcarrier_cqi), c1)),
                    CoarseKind::Snr => {
                        let pilots = pattern.gather(ds.samples[i].snr.as_slice());
                        if r.snr_input_db {
                            sr::normalize_snr_db(&pilots)
                        } else {
                            sr::normalize_snr_linear(&pilots)
                        }
                    }
                })
                .collect::<Result<_>>()?;
            Some(cqinet::reconstruct_batch(
                &Matrix::from_rows(&rows),
                &bundle.encoder,
                &bundle.decoder,
                &bundle.meta.arch,
                r.train.batch_size,
            ))
        }
        Scheme::Interp => {
            let bundle = deps
                .interp
                .ok_or_else(|| Error::invalid("interp evaluation needs a coarse autoencoder bundle"))?;
            let pattern = bundle_pattern(bundle, n_c)?;
            let rows: Vec<Vec<f32>> = idx
                .iter()
                .map(|&i| cqinet::normalize(&pattern.gather(&ds.samples[i].subcarrier_cqi), c1))
                .collect();
            let coarse = cqinet::reconstruct_batch(
                &Matrix::from_rows(&rows),
                &bundle.encoder,
                &bundle.decoder,
                &bundle.meta.arch,
                r.train.batch_size,
            );
            Some(
                coarse
                    .iter()
                    .map(|c| {
                        let vals: Vec<f64> = c.iter().map(|&k| k as f64).collect();
                        sr::interp_baseline(&vals, &pattern, max_cqi)
                    })
                    .collect(),
            )
        }
        _ => None,
    };

    for (pos, &i) in idx.iter().enumerate() {
        let sample = &ds.samples[i];
        let truth = CqiVector::per_subcarrier(sample.subcarrier_cqi.clone(), max_cqi);
        let snr = ds.snr_vector(i);
        let (pred, overhead): (CqiVector, f64) = match scheme {
            Scheme::SubbandRaw => (
                CqiVector::per_subband(sample.subband_cqi.clone(), max_cqi),
                (c1 as usize * ds.sim.n_subbands) as f64,
            ),
            Scheme::SubbandOffset => {
                let report = encode_offsets(&CqiVector::per_subband(sample.subband_cqi.clone(), max_cqi), c1, 2);
                let oh = report.overhead_bits() as f64;
                (decode_offsets(&report, max_cqi), oh)
            }
            Scheme::SubbandVos => {
                let report = encode_vos(&CqiVector::per_subband(sample.subband_cqi.clone(), max_cqi), c1);
                let oh = report.overhead_bits() as f64;
                (decode_offsets(&report, max_cqi), oh)
            }
            Scheme::Subcarrier => (truth.clone(), (c1 as usize * n_c) as f64),
            Scheme::Cqinet | Scheme::SrCqinet | Scheme::Interp => {
                let rec = &learned.as_ref().expect("reconstructed above")[pos];
                let bundle = match scheme {
                    Scheme::Cqinet => deps.cqinet.unwrap(),
                    Scheme::SrCqinet => deps.srcqinet.unwrap(),
                    _ => deps.interp.unwrap(),
                };
                (
                    CqiVector::per_subcarrier(rec.clone(), max_cqi),
                    bundle.meta.arch.codeword_bits() as f64,
                )
            }
        };
        acc.record(truth.values(), &pred.expand_to_subcarriers(n_c));
        rate_sum += effective_rate(&pred, &snr, &r.table, &r.bler);
        overhead_sum += overhead;
    }

    let mut metrics = acc.metrics();
    metrics.effective_rate_bps = rate_sum / idx.len() as f64;
    metrics.overhead_bits = overhead_sum / idx.len() as f64;
    Ok(metrics)
}

fn bundle_pattern(bundle: &ModelBundle, n_c: usize) -> Result<CsirsPattern> {
    match &bundle.meta.positions {
        Some(p) => CsirsPattern::new(p.clone(), n_c),
        None => Err(Error::format("bundle sidecar lacks pilot positions")),
    }
}

/// One frozen-schema metrics row.
pub fn metrics_row(
    scheme: Scheme,
    m: &SchemeMetrics,
    n_cg: Option<usize>,
    kind: Option<&str>,
    d3: Option<usize>,
    seed: u64,
) -> String {
    let opt_usize = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        scheme.as_str(),
        m.overhead_bits,
        m.error_high,
        m.error_low,
        m.error_sum,
        m.effective_rate_bps,
        opt_usize(n_cg),
        kind.unwrap_or(""),
        opt_usize(d3),
        seed
    )
}

fn histogram_csv(hist: &BTreeMap<i32, f64>) -> String {
    let mut out = String::from("deviation,probability\n");
    for (d, p) in hist {
        let _ = writeln!(out, "{d},{p}");
    }
    out
}

fn train_log_csv(log: &[cqinet::EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for e in log {
        let _ = writeln!(out, "{},{},{}", e.epoch, e.train_loss, e.val_loss);
    }
    out
}

struct ParsedArgs {
    verb: String,
    flags: BTreeMap<String, String>,
}

fn parse_args(args: &[String]) -> Result<ParsedArgs> {
    if args.is_empty() {
        return Err(Error::invalid("missing command"));
    }
    let verb = args[0].clone();
    let mut flags = BTreeMap::new();
    let mut i = 1;
    while i < args.len() {
        let a = &args[i];
        let Some(name) = a.strip_prefix("--") else {
            return Err(Error::invalid(format!("unexpected argument {a:?}")));
        };
        // Bare flags take no value.
        if name == "interp-ae" {
            flags.insert(name.to_string(), "true".to_string());
            i += 1;
            continue;
        }
        let Some(value) = args.get(i + 1) else {
            return Err(Error::invalid(format!("flag --{name} needs a value")));
        };
        flags.insert(name.to_string(), value.clone());
        i += 2;
    }
    Ok(ParsedArgs { verb, flags })
}

fn usage() -> String {
    "usage: cqifb <command> --config <path> [--out <dir>] [--seed <n>] [options]\n\
     commands:\n\
     \x20 gen-data        [--count <n>]                          generate the dataset\n\
     \x20 train-cqinet    [--d3 <w>] [--epochs <n>]              train the CQI autoencoder\n\
     \x20 train-srcqinet  --ncg <n> --kind <cqi|snr> [--interp-ae] [--d3 <w>] [--epochs <n>]\n\
     \x20 eval            --scheme <subband-offset|subband-raw|subband-vos|subcarrier|cqinet|srcqinet|interp>\n\
     \x20                 [--model <prefix>]                     score a scheme on the test split\n\
     \x20 sweep           --axis <d3|ncg> [--epochs <n>]         rate/error vs overhead tables\n\
     \x20 report          [--sample <i>]                         merge metrics, emit trace + audit\n"
        .to_string()
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Io(io) if io.kind() == ErrorKind::NotFound => 2,
        Error::Io(_) => 3,
        Error::InvalidInput(_) | Error::Parse(_) | Error::Format(_) => 1,
    }
}

/// Runs the CLI; returns the process exit code.
pub fn run(args: &[String]) -> i32 {
    match run_inner(args) {
        Ok(()) => 0,
        Err(e) => {
            let code = exit_code_for(&e);
            eprintln!("ERROR {code}: {e}");
            if code == 1 {
                eprint!("{}", usage());
            }
            code
        }
    }
}

struct Env {
    resolved: Resolved,
    out_dir: PathBuf,
    seed: u64,
}

impl Env {
    fn dataset_path(&self) -> PathBuf {
        self.out_dir.join("dataset.cqds")
    }

    fn load_dataset(&self) -> Result<Dataset> {
        let path = self.dataset_path();
        if !path.exists() {
            return Err(Error::Io(std::io::Error::new(
                ErrorKind::NotFound,
                format!("{} not found; run gen-data first", path.display()),
            )));
        }
        let ds = dataio::load_dataset(&path)?;
        if ds.n_subcarriers() != self.resolved.sim.n_subcarriers || ds.sim.n_subbands != self.resolved.sim.n_subbands {
            return Err(Error::invalid("dataset dimensions do not match the config"));
        }
        Ok(ds)
    }

    fn split_for(&self, ds: &Dataset) -> Split {
        dataio::split(ds.samples.len(), self.seed)
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir)?;
        std::fs::write(self.out_dir.join(name), contents)?;
        Ok(())
    }
}

fn setup(flags: &BTreeMap<String, String>) -> Result<Env> {
    let config_path = flags
        .get("config")
        .ok_or_else(|| Error::invalid("--config <path> is required"))?;
    let config_path = Path::new(config_path);
    let cfg = GlobalConfig::load(config_path)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let mut resolved = cfg.resolve(base)?;
    if let Some(seed) = flags.get("seed") {
        let seed: u64 = seed
            .parse()
            .map_err(|_| Error::invalid(format!("bad --seed value {seed:?}")))?;
        resolved.sim.seed = seed;
        resolved.train.seed = seed;
    }
    if let Some(epochs) = flags.get("epochs") {
        resolved.train.epochs = epochs
            .parse()
            .map_err(|_| Error::invalid(format!("bad --epochs value {epochs:?}")))?;
        resolved.train.validate()?;
    }
    if let Some(d3) = flags.get("d3") {
        resolved.arch.d3 = d3
            .parse()
            .map_err(|_| Error::invalid(format!("bad --d3 value {d3:?}")))?;
        resolved.arch.validate()?;
    }
    let out_dir = PathBuf::from(flags.get("out").map(String::as_str).unwrap_or("out"));
    let seed = resolved.train.seed;
    Ok(Env {
        resolved,
        out_dir,
        seed,
    })
}

fn run_inner(args: &[String]) -> Result<()> {
    let parsed = parse_args(args)?;
    match parsed.verb.as_str() {
        "gen-data" => cmd_gen_data(&parsed.flags),
        "train-cqinet" => cmd_train_cqinet(&parsed.flags),
        "train-srcqinet" => cmd_train_srcqinet(&parsed.flags),
        "eval" => cmd_eval(&parsed.flags),
        "sweep" => cmd_sweep(&parsed.flags),
        "report" => cmd_report(&parsed.flags),
        other => Err(Error::invalid(format!("unknown command {other:?}"))),
    }
}

fn cmd_gen_data(flags: &BTreeMap<String, String>) -> Result<()> {
    let env = setup(flags)?;
    let r = &env.resolved;
    let count = match flags.get("count") {
        Some(c) => c
            .parse()
            .map_err(|_| Error::invalid(format!("bad --count value {c:?}")))?,
        None => r.dataset_count,
    };
    let mut sim = r.sim.clone();
    sim.seed = env.seed;
    let ds = dataio::generate_dataset(&sim, &r.profile, &r.bler, &r.beta, r.eps_th, count)?;
    std::fs::create_dir_all(&env.out_dir)?;
    dataio::save_dataset(&ds, &env.dataset_path())?;
    println!(
        "wrote {} samples (N_c={}, J={}, noise_var={}) to {}",
        count,
        sim.n_subcarriers,
        sim.n_subbands,
        ds.sim.noise_var.unwrap_or(f64::NAN),
        env.dataset_path().display()
    );
    Ok(())
}

fn cqinet_prefix(out_dir: &Path, d3: usize) -> PathBuf {
    out_dir.join(format!("cqinet_d3{d3}"))
}

fn srcqinet_prefix(out_dir: &Path, n_cg: usize, kind: CoarseKind) -> PathBuf {
    out_dir.join(format!("srcqinet_ncg{n_cg}_{}", kind.as_str()))
}

fn interp_prefix(out_dir: &Path, n_cg: usize) -> PathBuf {
    out_dir.join(format!("interp_ae_ncg{n_cg}"))
}

fn cmd_train_cqinet(flags: &BTreeMap<String, String>) -> Result<()> {
    let env = setup(flags)?;
    let r = &env.resolved;
    let ds = env.load_dataset()?;
    let split = env.split_for(&ds);
    let samples = ds.subcarrier_cqi_samples();
    let outcome = cqinet::train(&samples, &r.arch, &r.train, &split.train, &split.val)?;
    let bundle = ModelBundle {
        encoder: outcome.encoder.clone(),
        decoder: outcome.decoder.clone(),
        meta: BundleMeta {
            role: "cqinet".into(),
            arch: r.arch.clone(),
            seed: r.train.seed,
            n_cg: None,
            kind: None,
            positions: None,
        },
    };
    std::fs::create_dir_all(&env.out_dir)?;
    let prefix = cqinet_prefix(&env.out_dir, r.arch.d3);
    dataio::save_bundle(&bundle, &prefix)?;
    env.write(
        &format!("train_log_cqinet_d3{}.csv", r.arch.d3),
        &train_log_csv(&outcome.log),
    )?;
    println!(
        "trained cqinet d3={} (S={} bits): best val loss {} at epoch {} ({} epochs run); bundle at {}",
        r.arch.d3,
        r.arch.codeword_bits(),
        outcome.best_val_loss,
        outcome.best_epoch,
        outcome.log.len(),
        prefix.display()
    );
    Ok(())
}

fn cmd_train_srcqinet(flags: &BTreeMap<String, String>) -> Result<()> {
    let env = setup(flags)?;
    let r = &env.resolved;
    let ds = env.load_dataset()?;
    let split = env.split_for(&ds);
    let n_cg: usize = match flags.get("ncg") {
        Some(n) => n
            .parse()
            .map_err(|_| Error::invalid(format!("bad --ncg value {n:?}")))?,
        None => r.pattern.n_cg(),
    };
    let kind = match flags.get("kind") {
        Some(k) => CoarseKind::parse(k)?,
        None => r.sr_kind,
    };
    let pattern = if n_cg == r.pattern.n_cg() {
        r.pattern.clone()
    } else {
        CsirsPattern::uniform(r.sim.n_subcarriers, n_cg)?
    };
    let cqi_samples = ds.subcarrier_cqi_samples();
    std::fs::create_dir_all(&env.out_dir)?;
    if flags.contains_key("interp-ae") {
        let outcome = sr::train_interp_ae(&cqi_samples, &r.arch, &pattern, &r.train, &split.train, &split.val)?;
        let coarse_arch = CqinetArch {
            d6: pattern.n_cg(),
            d7: pattern.n_cg(),
            ..r.arch.clone()
        };
        let bundle = ModelBundle {
            encoder: outcome.encoder.clone(),
            decoder: outcome.decoder.clone(),
            meta: BundleMeta {
                role: "interp-ae".into(),
                arch: coarse_arch,
                seed: r.train.seed,
                n_cg: Some(pattern.n_cg()),
                kind: Some("cqi".into()),
                positions: Some(pattern.positions().to_vec()),
            },
        };
        let prefix = interp_prefix(&env.out_dir, pattern.n_cg());
        dataio::save_bundle(&bundle, &prefix)?;
        env.write(
            &format!("train_log_interp_ae_ncg{}.csv", pattern.n_cg()),
            &train_log_csv(&outcome.log),
        )?;
        println!(
            "trained interp baseline autoencoder ncg={}: best val loss {} at epoch {}; bundle at {}",
            pattern.n_cg(),
            outcome.best_val_loss,
            outcome.best_epoch,
            prefix.display()
        );
        return Ok(());
    }
    let snr_samples = ds.snr_samples();
    let outcome = sr::train_sr(
        &snr_samples,
        &cqi_samples,
        &r.arch,
        &pattern,
        kind,
        &r.train,
        &split.train,
        &split.val,
        r.snr_input_db,
    )?;
    let bundle = ModelBundle {
        encoder: outcome.encoder.clone(),
        decoder: outcome.decoder.clone(),
        meta: BundleMeta {
            role: "sr".into(),
            arch: r.arch.clone(),
            seed: r.train.seed,
            n_cg: Some(pattern.n_cg()),
            kind: Some(kind.as_str().into()),
            positions: Some(pattern.positions().to_vec()),
        },
    };
    let prefix = srcqinet_prefix(&env.out_dir, pattern.n_cg(), kind);
    dataio::save_bundle(&bundle, &prefix)?;
    env.write(
        &format!("train_log_srcqinet_ncg{}_{}.csv", pattern.n_cg(), kind.as_str()),
        &train_log_csv(&outcome.log),
    )?;
    println!(
        "trained sr-cqinet ncg={} kind={} (S={} bits): best val loss {} at epoch {}; bundle at {}",
        pattern.n_cg(),
        kind.as_str(),
        r.arch.codeword_bits(),
        outcome.best_val_loss,
        outcome.best_epoch,
        prefix.display()
    );
    Ok(())
}

fn load_bundle_for(env: &Env, flags: &BTreeMap<String, String>, scheme: Scheme) -> Result<Option<ModelBundle>> {
    let prefix = match flags.get("model") {
        Some(p) => PathBuf::from(p),
        None => match scheme {
            Scheme::Cqinet => cqinet_prefix(&env.out_dir, env.resolved.arch.d3),
            Scheme::SrCqinet => srcqinet_prefix(&env.out_dir, env.resolved.pattern.n_cg(), env.resolved.sr_kind),
            Scheme::Interp => interp_prefix(&env.out_dir, env.resolved.pattern.n_cg()),
            _ => return Ok(None),
        },
    };
    Ok(Some(dataio::load_bundle(&prefix)?))
}

fn cmd_eval(flags: &BTreeMap<String, String>) -> Result<()> {
    let env = setup(flags)?;
    let scheme = Scheme::parse(
        flags
            .get("scheme")
            .ok_or_else(|| Error::invalid("--scheme is required"))?,
    )?;
    let ds = env.load_dataset()?;
    let split = env.split_for(&ds);
    let bundle = load_bundle_for(&env, flags, scheme)?;
    let deps = EvalDeps {
        resolved: &env.resolved,
        cqinet: bundle.as_ref().filter(|_| scheme == Scheme::Cqinet),
        srcqinet: bundle.as_ref().filter(|_| scheme == Scheme::SrCqinet),
        interp: bundle.as_ref().filter(|_| scheme == Scheme::Interp),
    };
    let metrics = evaluate_scheme(&ds, &split.test, scheme, &deps)?;
    let (n_cg, kind, d3) = match (&bundle, scheme) {
        (Some(b), Scheme::SrCqinet | Scheme::Interp) => (
            b.meta.n_cg,
            b.meta.kind.clone(),
            Some(b.meta.arch.d3),
        ),
        (Some(b), Scheme::Cqinet) => (None, None, Some(b.meta.arch.d3)),
        _ => (None, None, None),
    };
    let row = metrics_row(scheme, &metrics, n_cg, kind.as_deref(), d3, env.seed);
    let csv = format!("{METRICS_HEADER}\n{row}\n");
    env.write(&format!("metrics_{}.csv", scheme.as_str()), &csv)?;
    env.write(
        &format!("hist_{}.csv", scheme.as_str()),
        &histogram_csv(&metrics.deviation_histogram),
    )?;
    println!("{METRICS_HEADER}");
    println!("{row}");
    Ok(())
}

fn cmd_sweep(flags: &BTreeMap<String, String>) -> Result<()> {
    let env = setup(flags)?;
    let r = &env.resolved;
    let axis = flags
        .get("axis")
        .ok_or_else(|| Error::invalid("--axis <d3|ncg> is required"))?;
    let ds = env.load_dataset()?;
    let split = env.split_for(&ds);
    let cqi_samples = ds.subcarrier_cqi_samples();
    let mut rows = Vec::new();
    match axis.as_str() {
        "d3" => {
            for &d3 in &D3_SWEEP {
                let arch = CqinetArch {
                    d3,
                    ..r.arch.clone()
                };
                let outcome = cqinet::train(&cqi_samples, &arch, &r.train, &split.train, &split.val)?;
                let bundle = ModelBundle {
                    encoder: outcome.encoder,
                    decoder: outcome.decoder,
                    meta: BundleMeta {
                        role: "cqinet".into(),
                        arch: arch.clone(),
                        seed: r.train.seed,
                        n_cg: None,
                        kind: None,
                        positions: None,
                    },
                };
                dataio::save_bundle(&bundle, &cqinet_prefix(&env.out_dir, d3))?;
                let deps = EvalDeps {
                    resolved: r,
                    cqinet: Some(&bundle),
                    srcqinet: None,
                    interp: None,
                };
                let m = evaluate_scheme(&ds, &split.test, Scheme::Cqinet, &deps)?;
                println!(
                    "d3={d3}: S={} bits, error_sum={}, rate={}",
                    arch.codeword_bits(),
                    m.error_sum,
                    m.effective_rate_bps
                );
                rows.push(metrics_row(Scheme::Cqinet, &m, None, None, Some(d3), env.seed));
            }
            let csv = format!("{METRICS_HEADER}\n{}\n", rows.join("\n"));
            env.write("sweep_d3.csv", &csv)?;
        }
        "ncg" => {
            let snr_samples = ds.snr_samples();
            for &n_cg in &NCG_SWEEP {
                if n_cg > r.sim.n_subcarriers {
                    continue;
                }
                let pattern = CsirsPattern::uniform(r.sim.n_subcarriers, n_cg)?;
                let outcome = sr::train_sr(
                    &snr_samples,
                    &cqi_samples,
                    &r.arch,
                    &pattern,
                    r.sr_kind,
                    &r.train,
                    &split.train,
                    &split.val,
                    r.snr_input_db,
                )?;
                let bundle = ModelBundle {
                    encoder: outcome.encoder,
                    decoder: outcome.decoder,
                    meta: BundleMeta {
                        role: "sr".into(),
                        arch: r.arch.clone(),
                        seed: r.train.seed,
                        n_cg: Some(pattern.n_cg()),
                        kind: Some(r.sr_kind.as_str().into()),
                        positions: Some(pattern.positions().to_vec()),
                    },
                };
                dataio::save_bundle(&bundle, &srcqinet_prefix(&env.out_dir, pattern.n_cg(), r.sr_kind))?;
                let deps = EvalDeps {
                    resolved: r,
                    cqinet: None,
                    srcqinet: Some(&bundle),
                    interp: None,
                };
                let m = evaluate_scheme(&ds, &split.test, Scheme::SrCqinet, &deps)?;
                println!(
                    "ncg={n_cg}: error_sum={}, rate={}",
                    m.error_sum, m.effective_rate_bps
                );
                rows.push(metrics_row(
                    Scheme::SrCqinet,
                    &m,
                    Some(pattern.n_cg()),
                    Some(r.sr_kind.as_str()),
                    Some(r.arch.d3),
                    env.seed,
                ));
            }
            let csv = format!("{METRICS_HEADER}\n{}\n", rows.join("\n"));
            env.write("sweep_ncg.csv", &csv)?;
        }
        other => return Err(Error::invalid(format!("unknown sweep axis {other:?}"))),
    }
    Ok(())
}

fn cmd_report(flags: &BTreeMap<String, String>) -> Result<()> {
    let env = setup(flags)?;
    let r = &env.resolved;
    let ds = env.load_dataset()?;
    let split = env.split_for(&ds);

    // Merge every metrics CSV in the output directory, in name order.
    let mut names: Vec<String> = std::fs::read_dir(&env.out_dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.starts_with("metrics_") && n.ends_with(".csv"))
        .collect();
    names.sort();
    let mut merged = format!("{METRICS_HEADER}\n");
    for name in &names {
        let text = std::fs::read_to_string(env.out_dir.join(name))?;
        for line in text.lines().skip(1) {
            if !line.is_empty() {
                merged.push_str(line);
                merged.push('\n');
            }
        }
    }
    env.write("report.csv", &merged)?;

    // Split audit: evaluation must only ever touch the test rows.
    let hash_of = |v: &[usize]| {
        let bytes: Vec<u8> = v.iter().flat_map(|&i| (i as u64).to_le_bytes()).collect();
        fnv1a64(&bytes)
    };
    let audit = format!(
        "{{\n  \"split_seed\": {},\n  \"n_train\": {},\n  \"n_val\": {},\n  \"n_test\": {},\n  \"train_hash\": {},\n  \"val_hash\": {},\n  \"test_hash\": {}\n}}\n",
        env.seed,
        split.train.len(),
        split.val.len(),
        split.test.len(),
        hash_of(&split.train),
        hash_of(&split.val),
        hash_of(&split.test),
    );
    env.write("split_audit.json", &audit)?;

    // Per-subcarrier trace of one test sample across schemes.
    let which: usize = match flags.get("sample") {
        Some(s) => s
            .parse()
            .map_err(|_| Error::invalid(format!("bad --sample value {s:?}")))?,
        None => 0,
    };
    if which >= split.test.len() {
        return Err(Error::invalid(format!(
            "--sample {which} out of range (test split has {} samples)",
            split.test.len()
        )));
    }
    let i = split.test[which];
    let sample = &ds.samples[i];
    let max_cqi = r.table.max_index();
    let c1 = r.table.c1_bits();
    let raw = CqiVector::per_subband(sample.subband_cqi.clone(), max_cqi).expand_to_subcarriers(ds.n_subcarriers());
    let offset_report = encode_offsets(&CqiVector::per_subband(sample.subband_cqi.clone(), max_cqi), c1, 2);
    let offs = decode_offsets(&offset_report, max_cqi).expand_to_subcarriers(ds.n_subcarriers());

    let learned = |scheme: Scheme| -> Option<Vec<u8>> {
        let prefix = match scheme {
            Scheme::Cqinet => cqinet_prefix(&env.out_dir, r.arch.d3),
            Scheme::SrCqinet => srcqinet_prefix(&env.out_dir, r.pattern.n_cg(), r.sr_kind),
            Scheme::Interp => interp_prefix(&env.out_dir, r.pattern.n_cg()),
            _ => return None,
        };
        let bundle = dataio::load_bundle(&prefix).ok()?;
        let deps = EvalDeps {
            resolved: r,
            cqinet: (scheme == Scheme::Cqinet).then_some(&bundle),
            srcqinet: (scheme == Scheme::SrCqinet).then_some(&bundle),
            interp: (scheme == Scheme::Interp).then_some(&bundle),
        };
        reconstruct_one(&ds, &[i], scheme, &deps).ok()
    };
    let cqinet_rec = learned(Scheme::Cqinet);
    let sr_rec = learned(Scheme::SrCqinet);
    let interp_rec = learned(Scheme::Interp);

    let mut trace = String::from("subcarrier,snr_db,truth_cqi,subband_raw,subband_offset,cqinet,srcqinet,interp\n");
    for n in 0..ds.n_subcarriers() {
        let opt = |v: &Option<Vec<u8>>| v.as_ref().map(|x| x[n].to_string()).unwrap_or_default();
        let _ = writeln!(
            trace,
            "{},{},{},{},{},{},{},{}",
            n + 1,
            linear_to_db(sample.snr[n].max(f64::MIN_POSITIVE)),
            sample.subcarrier_cqi[n],
            raw[n],
            offs[n],
            opt(&cqinet_rec),
            opt(&sr_rec),
            opt(&interp_rec),
        );
    }
    env.write("trace.csv", &trace)?;
    println!(
        "report.csv merged {} metrics files; trace.csv for dataset sample {i}; split audit written",
        names.len()
    );
    Ok(())
}

/// Reconstructs the per-subcarrier CQI one scheme assigns to given rows.
fn reconstruct_one(ds: &Dataset, idx: &[usize], scheme: Scheme, deps: &EvalDeps) -> Result<Vec<u8>> {
    let r = deps.resolved;
    let c1 = r.table.c1_bits();
    let n_c = ds.n_subcarriers();
    let max_cqi = r.table.max_index();
    let i = idx[0];
    match scheme {
        Scheme::Cqinet => {
            let bundle = deps.cqinet.ok_or_else(|| Error::invalid("missing bundle"))?;
            let rows = vec![cqinet::normalize(&ds.samples[i].subcarrier_cqi, c1)];
            Ok(cqinet::reconstruct_batch(
                &Matrix::from_rows(&rows),
                &bundle.encoder,
                &bundle.decoder,
                &bundle.meta.arch,
                1,
            )
            .remove(0))
        }
        Scheme::SrCqinet => {
            let bundle = deps.srcqinet.ok_or_else(|| Error::invalid("missing bundle"))?;
            let pattern = bundle_pattern(bundle, n_c)?;
            let kind = CoarseKind::parse(bundle.meta.kind.as_deref().unwrap_or("snr"))?;
            let row = match kind {
                CoarseKind::Cqi => cqinet::normalize(&pattern.gather(&ds.samples[i].subcarrier_cqi), c1),
                CoarseKind::Snr => {
                    let pilots = pattern.gather(ds.samples[i].snr.as_slice());
                    if r.snr_input_db {
                        sr::normalize_snr_db(&pilots)?
                    } else {
                        sr::normalize_snr_linear(&pilots)?
                    }
                }
            };
            Ok(cqinet::reconstruct_batch(
                &Matrix::from_rows(&[row]),
                &bundle.encoder,
                &bundle.decoder,
                &bundle.meta.arch,
                1,
            )
            .remove(0))
        }
        Scheme::Interp => {
            let bundle = deps.interp.ok_or_else(|| Error::invalid("missing bundle"))?;
            let pattern = bundle_pattern(bundle, n_c)?;
            let rows = vec![cqinet::normalize(&pattern.gather(&ds.samples[i].subcarrier_cqi), c1)];
            let coarse = cqinet::reconstruct_batch(
                &Matrix::from_rows(&rows),
                &bundle.encoder,
                &bundle.decoder,
                &bundle.meta.arch,
                1,
            )
            .remove(0);
            let vals: Vec<f64> = coarse.iter().map(|&k| k as f64).collect();
            Ok(sr::interp_baseline(&vals, &pattern, max_cqi))
        }
        _ => Err(Error::invalid("reconstruct_one only handles learned schemes")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scheme_names_round_trip() {
        for s in [
            Scheme::SubbandOffset,
            Scheme::SubbandRaw,
            Scheme::SubbandVos,
            Scheme::Subcarrier,
            Scheme::Cqinet,
            Scheme::SrCqinet,
            Scheme::Interp,
        ] {
            assert_eq!(Scheme::parse(s.as_str()).unwrap(), s);
        }
        assert!(Scheme::parse("bogus").is_err());
    }

    #[test]
    fn arg_parser_handles_flags() {
        let args: Vec<String> = ["eval", "--config", "c.json", "--scheme", "subcarrier"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let p = parse_args(&args).unwrap();
        assert_eq!(p.verb, "eval");
        assert_eq!(p.flags.get("scheme").unwrap(), "subcarrier");
        assert!(parse_args(&["eval".into(), "loose".into()]).is_err());
        assert!(parse_args(&["eval".into(), "--config".into()]).is_err());
        assert!(parse_args(&[]).is_err());
    }

    #[test]
    fn unknown_command_exits_one() {
        let code = run(&["frobnicate".into(), "--config".into(), "x.json".into()]);
        assert_eq!(code, 1);
    }

    #[test]
    fn missing_config_file_exits_two() {
        let code = run(&[
            "gen-data".into(),
            "--config".into(),
            "/nonexistent/cfg.json".into(),
        ]);
        assert_eq!(code, 2);
    }
}
