//! Dataset generation, deterministic splitting, and persistence of datasets
//! and trained model bundles.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    compute_snr, generate_channel, resolve_noise_var, select_precoders, Codebook, SimConfig, SnrVector, TdlProfile,
};
use crate::cqinet::CqinetArch;
use crate::error::{Error, Result};
use crate::link::{select_subband_cqi, select_subcarrier_cqi, BlerModel, EesmBeta};
use crate::nn::{load_model, save_model, NetworkModel};
use crate::util::{fnv1a64, par_map};

const DATASET_MAGIC: &[u8; 4] = b"CQDS";
const DATASET_VERSION: u16 = 1;

/// One generated slot: per-subcarrier SNR with the CQI decisions derived
/// from it. SNR values are quantized to f32 at generation time so the stored
/// form reproduces the CQI fields exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub snr: Vec<f64>,
    pub subcarrier_cqi: Vec<u8>,
    pub subband_cqi: Vec<u8>,
}

/// Generated dataset plus the resolved configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Simulation config with the calibrated noise variance filled in.
    pub sim: SimConfig,
    pub eps_th: f64,
    pub samples: Vec<Sample>,
}

/// Sidecar metadata: enough to detect a mismatched or stale dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub config_hash: u64,
    pub seed: u64,
    pub count: usize,
}

impl Dataset {
    /// Fingerprint of everything that determines the dataset contents.
    pub fn config_hash(&self) -> u64 {
        let mut bytes = serde_json::to_vec(&self.sim).expect("config serializes");
        bytes.extend_from_slice(&self.eps_th.to_le_bytes());
        fnv1a64(&bytes)
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            config_hash: self.config_hash(),
            seed: self.sim.seed,
            count: self.samples.len(),
        }
    }

    pub fn n_subcarriers(&self) -> usize {
        self.sim.n_subcarriers
    }

    pub fn snr_vector(&self, i: usize) -> SnrVector {
        SnrVector::new(self.samples[i].snr.clone()).expect("stored SNR is valid")
    }

    pub fn subcarrier_cqi_samples(&self) -> Vec<Vec<u8>> {
        self.samples.iter().map(|s| s.subcarrier_cqi.clone()).collect()
    }

    pub fn snr_samples(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.snr.clone()).collect()
    }
}

/// Draws `count` independent slots and records SNR plus both CQI decisions.
///
/// Deterministic: sample `i` uses `sample_seed = i + 1` under `cfg.seed`, and
/// the noise variance is calibrated once (when not pinned in the config).
pub fn generate_dataset(
    cfg: &SimConfig,
    profile: &TdlProfile,
    model: &BlerModel,
    beta: &EesmBeta,
    eps_th: f64,
    count: usize,
) -> Result<Dataset> {
    cfg.validate()?;
    if count == 0 {
        return Err(Error::invalid("dataset needs at least one sample"));
    }
    if !(eps_th > 0.0 && eps_th < 1.0) {
        return Err(Error::invalid("eps_th must be in (0, 1)"));
    }
    let cb = Codebook::dft(cfg.n_tx, cfg.pmi_bits);
    let noise_var = resolve_noise_var(cfg, profile, &cb)?;
    let mut resolved = cfg.clone();
    resolved.noise_var = Some(noise_var);

    let samples: Vec<Sample> = par_map(count, |i| {
        let ch = generate_channel(&resolved, profile, (i + 1) as u64).expect("validated config");
        let picks = select_precoders(&ch, &cb, &resolved).expect("validated inputs");
        let snr_raw = compute_snr(&ch, &cb, &picks, noise_var, &resolved).expect("validated inputs");
        // Quantize to f32 so the file round trip preserves the CQI inputs.
        let snr: Vec<f64> = snr_raw.values().iter().map(|&v| v as f32 as f64).collect();
        let snr_vec = SnrVector::new(snr.clone()).expect("finite SNR");
        let subcarrier_cqi = select_subcarrier_cqi(&snr_vec, model, eps_th).values().to_vec();
        let subband_cqi = select_subband_cqi(&snr_vec, resolved.n_subbands, model, beta, eps_th)
            .values()
            .to_vec();
        Sample {
            snr,
            subcarrier_cqi,
            subband_cqi,
        }
    });
    Ok(Dataset {
        sim: resolved,
        eps_th,
        samples,
    })
}

/// Train/validation/test index partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle followed by a 60/20/20 partition; the training split takes
/// any rounding remainder.
pub fn split(count: usize, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x53504c49);
    idx.shuffle(&mut rng);
    let n_val = count / 5;
    let n_test = count / 5;
    let n_train = count - n_val - n_test;
    let train = idx[..n_train].to_vec();
    let val = idx[n_train..n_train + n_val].to_vec();
    let test = idx[n_train + n_val..].to_vec();
    Split { train, val, test }
}

fn push_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Serializes a dataset to its binary form.
pub fn dataset_to_bytes(ds: &Dataset) -> Vec<u8> {
    let n_c = ds.sim.n_subcarriers;
    let j = ds.sim.n_subbands;
    let mut out = Vec::with_capacity(32 + ds.samples.len() * (5 * n_c + j));
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&ds.config_hash().to_le_bytes());
    out.extend_from_slice(&ds.sim.seed.to_le_bytes());
    push_u32(&mut out, ds.samples.len() as u32);
    push_u32(&mut out, n_c as u32);
    push_u32(&mut out, j as u32);
    push_u32(&mut out, ds.sim.n_tx as u32);
    push_u32(&mut out, ds.sim.n_rx as u32);
    push_u32(&mut out, ds.sim.pmi_bits);
    push_f64(&mut out, ds.sim.subcarrier_spacing_hz);
    push_f64(&mut out, ds.sim.delay_spread_s);
    push_f64(&mut out, ds.sim.avg_snr_db);
    push_f64(&mut out, ds.sim.noise_var.unwrap_or(f64::NAN));
    push_f64(&mut out, ds.eps_th);
    for s in &ds.samples {
        for &v in &s.snr {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.extend_from_slice(&s.subcarrier_cqi);
        out.extend_from_slice(&s.subband_cqi);
    }
    out
}

/// Parses a dataset from its binary form, validating sizes before allocating.
pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Dataset> {
    const HEADER: usize = 4 + 2 + 8 + 8 + 4 * 6 + 8 * 5;
    if bytes.len() < HEADER {
        return Err(Error::format("dataset file too short"));
    }
    if &bytes[0..4] != DATASET_MAGIC {
        return Err(Error::format("bad magic: not a dataset file"));
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != DATASET_VERSION {
        return Err(Error::format(format!("unsupported dataset version {version}")));
    }
    let config_hash = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
    let seed = u64::from_le_bytes(bytes[14..22].try_into().unwrap());
    let mut at = 22usize;
    let mut read_u32 = |bytes: &[u8]| {
        let v = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        at += 4;
        v
    };
    let count = read_u32(bytes) as usize;
    let n_c = read_u32(bytes) as usize;
    let j = read_u32(bytes) as usize;
    let n_tx = read_u32(bytes) as usize;
    let n_rx = read_u32(bytes) as usize;
    let pmi_bits = read_u32(bytes);
    let mut read_f64 = |bytes: &[u8]| {
        let v = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        at += 8;
        v
    };
    let spacing = read_f64(bytes);
    let delay = read_f64(bytes);
    let avg_snr_db = read_f64(bytes);
    let noise_var = read_f64(bytes);
    let eps_th = read_f64(bytes);

    if count == 0 || n_c == 0 || j == 0 || n_c % j != 0 {
        return Err(Error::format("implausible dataset dimensions"));
    }
    let per_sample = n_c
        .checked_mul(5)
        .and_then(|v| v.checked_add(j))
        .ok_or_else(|| Error::format("dataset size overflow"))?;
    let expected = per_sample
        .checked_mul(count)
        .and_then(|v| v.checked_add(HEADER))
        .ok_or_else(|| Error::format("dataset size overflow"))?;
    if bytes.len() != expected {
        return Err(Error::format(format!(
            "dataset size mismatch: expected {expected} bytes, found {}",
            bytes.len()
        )));
    }

    let sim = SimConfig {
        n_tx,
        n_rx,
        n_subcarriers: n_c,
        n_subbands: j,
        subcarrier_spacing_hz: spacing,
        delay_spread_s: delay,
        avg_snr_db,
        noise_var: if noise_var.is_finite() { Some(noise_var) } else { None },
        pmi_bits,
        seed,
    };
    sim.validate().map_err(|e| Error::format(e.to_string()))?;
    if !(eps_th > 0.0 && eps_th < 1.0) {
        return Err(Error::format("eps_th out of range"));
    }

    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let mut snr = Vec::with_capacity(n_c);
        for _ in 0..n_c {
            let v = f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
            if !v.is_finite() || v < 0.0 {
                return Err(Error::format("invalid SNR value in dataset"));
            }
            snr.push(v as f64);
            at += 4;
        }
        let subcarrier_cqi = bytes[at..at + n_c].to_vec();
        at += n_c;
        let subband_cqi = bytes[at..at + j].to_vec();
        at += j;
        if subcarrier_cqi.iter().chain(&subband_cqi).any(|&k| k > 15) {
            return Err(Error::format("CQI value out of range in dataset"));
        }
        samples.push(Sample {
            snr,
            subcarrier_cqi,
            subband_cqi,
        });
    }
    let ds = Dataset {
        sim,
        eps_th,
        samples,
    };
    if ds.config_hash() != config_hash {
        return Err(Error::format("dataset config hash mismatch"));
    }
    Ok(ds)
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

/// Writes the dataset and its JSON sidecar.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, dataset_to_bytes(ds))?;
    let meta = serde_json::to_string_pretty(&ds.meta()).expect("meta serializes");
    std::fs::write(sidecar_path(path), meta)?;
    Ok(())
}

/// Loads a dataset, cross-checking the sidecar when present.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let ds = dataset_from_bytes(&std::fs::read(path)?)?;
    let sidecar = sidecar_path(path);
    if sidecar.exists() {
        let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(&sidecar)?)
            .map_err(|e| Error::format(format!("bad dataset sidecar: {e}")))?;
        if meta != ds.meta() {
            return Err(Error::format("dataset does not match its sidecar"));
        }
    }
    Ok(ds)
}

/// Sidecar describing a trained model bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleMeta {
    /// "cqinet", "sr", or "interp-ae".
    pub role: String,
    pub arch: CqinetArch,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_cg: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<usize>>,
}

/// Encoder, decoder, and the metadata needed to run them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub encoder: NetworkModel,
    pub decoder: NetworkModel,
    pub meta: BundleMeta,
}

fn bundle_paths(prefix: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let base = prefix.as_os_str().to_owned();
    let mut enc = base.clone();
    enc.push(".encoder.cqnn");
    let mut dec = base.clone();
    dec.push(".decoder.cqnn");
    let mut meta = base;
    meta.push(".json");
    (PathBuf::from(enc), PathBuf::from(dec), PathBuf::from(meta))
}

/// Writes `<prefix>.encoder.cqnn`, `<prefix>.decoder.cqnn`, `<prefix>.json`.
pub fn save_bundle(bundle: &ModelBundle, prefix: &Path) -> Result<()> {
    let (enc, dec, meta) = bundle_paths(prefix);
    save_model(&bundle.encoder, &enc)?;
    save_model(&bundle.decoder, &dec)?;
    let text = serde_json::to_string_pretty(&bundle.meta).expect("meta serializes");
    std::fs::write(meta, text)?;
    Ok(())
}

pub fn load_bundle(prefix: &Path) -> Result<ModelBundle> {
    let (enc, dec, meta) = bundle_paths(prefix);
    let encoder = load_model(&enc)?;
    let decoder = load_model(&dec)?;
    let meta: BundleMeta = serde_json::from_str(&std::fs::read_to_string(meta)?)
        .map_err(|e| Error::format(format!("bad bundle sidecar: {e}")))?;
    meta.arch.validate().map_err(|e| Error::format(e.to_string()))?;
    if encoder.out_dim() != meta.arch.d3 || decoder.out_dim() != meta.arch.d7 {
        return Err(Error::format("bundle models do not match the declared architecture"));
    }
    Ok(ModelBundle {
        encoder,
        decoder,
        meta,
    })
}
