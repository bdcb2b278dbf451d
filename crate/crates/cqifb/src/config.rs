//! Global JSON configuration: one document with `sim`, `train`, `arch`, and
//! `sr` sections plus optional override-file paths.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{SimConfig, TdlProfile};
use crate::cqinet::CqinetArch;
use crate::error::{Error, Result};
use crate::link::{BlerModel, CqiTable, EesmBeta};
use crate::nn::TrainConfig;
use crate::sr::{CoarseKind, CsirsPattern};

/// Autoencoder widths; `d6`/`d7` come from the simulation's subcarrier count.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub d1: usize,
    pub d2: usize,
    pub d3: usize,
    pub d4: usize,
    pub d5: usize,
    pub b1: u32,
    pub b2: u32,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            d1: 300,
            d2: 100,
            d3: 15,
            d4: 100,
            d5: 300,
            b1: 2,
            b2: 4,
        }
    }
}

/// Super-resolution settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SrConfig {
    pub n_cg: usize,
    /// "cqi" or "snr".
    pub kind: String,
    pub pattern_path: Option<String>,
    /// Normalize pilot SNR in dB instead of the linear rule.
    pub snr_input_db: bool,
}

impl Default for SrConfig {
    fn default() -> Self {
        SrConfig {
            n_cg: 13,
            kind: "snr".into(),
            pattern_path: None,
            snr_input_db: false,
        }
    }
}

/// Top-level configuration document.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalConfig {
    pub sim: SimConfig,
    pub train: TrainConfig,
    pub arch: ArchConfig,
    pub sr: SrConfig,
    pub bler_model_path: Option<String>,
    pub tdl_profile_path: Option<String>,
    pub cqi_table_path: Option<String>,
    pub eps_th: Option<f64>,
    pub dataset_count: Option<usize>,
}

/// Everything the pipeline needs, with files loaded and defaults applied.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub sim: SimConfig,
    pub train: TrainConfig,
    pub arch: CqinetArch,
    pub profile: TdlProfile,
    pub table: CqiTable,
    pub bler: BlerModel,
    pub beta: EesmBeta,
    pub pattern: CsirsPattern,
    pub sr_kind: CoarseKind,
    pub snr_input_db: bool,
    pub eps_th: f64,
    pub dataset_count: usize,
}

impl GlobalConfig {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::parse(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read(path)?)
    }

    /// Loads referenced files (relative to `base_dir`) and validates the
    /// combined settings.
    pub fn resolve(&self, base_dir: &Path) -> Result<Resolved> {
        self.sim.validate()?;
        self.train.validate()?;
        let locate = |p: &str| -> PathBuf {
            let path = Path::new(p);
            if path.is_absolute() {
                path.to_path_buf()
            } else {
                base_dir.join(path)
            }
        };
        let profile = match &self.tdl_profile_path {
            Some(p) => TdlProfile::load(&locate(p))?,
            None => TdlProfile::tdl_c(),
        };
        let table = match &self.cqi_table_path {
            Some(p) => CqiTable::load(&locate(p))?,
            None => CqiTable::default(),
        };
        let bler = match &self.bler_model_path {
            Some(p) => BlerModel::load(&locate(p))?,
            None => BlerModel::from_table(&table),
        };
        if bler.max_cqi() != table.max_index() {
            return Err(Error::invalid(format!(
                "BLER model covers CQI 1..={} but the table has 1..={}",
                bler.max_cqi(),
                table.max_index()
            )));
        }
        let beta = EesmBeta::from_table(&table);
        let arch = CqinetArch {
            d1: self.arch.d1,
            d2: self.arch.d2,
            d3: self.arch.d3,
            d4: self.arch.d4,
            d5: self.arch.d5,
            d6: self.sim.n_subcarriers,
            d7: self.sim.n_subcarriers,
            b1: self.arch.b1,
            b2: self.arch.b2,
            c1: table.c1_bits(),
        };
        arch.validate()?;
        let pattern = match &self.sr.pattern_path {
            Some(p) => CsirsPattern::load(&locate(p), self.sim.n_subcarriers)?,
            None => CsirsPattern::uniform(self.sim.n_subcarriers, self.sr.n_cg)?,
        };
        let sr_kind = CoarseKind::parse(&self.sr.kind)?;
        let eps_th = self.eps_th.unwrap_or(0.1);
        if !(eps_th > 0.0 && eps_th < 1.0) {
            return Err(Error::invalid("eps_th must be in (0, 1)"));
        }
        let dataset_count = self.dataset_count.unwrap_or(10_000);
        if dataset_count == 0 {
            return Err(Error::invalid("dataset_count must be positive"));
        }
        Ok(Resolved {
            sim: self.sim.clone(),
            train: self.train.clone(),
            arch,
            profile,
            table,
            bler,
            beta,
            pattern,
            sr_kind,
            snr_input_db: self.sr.snr_input_db,
            eps_th,
            dataset_count,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_resolves_with_defaults() {
        let cfg = GlobalConfig::parse(b"{}").unwrap();
        let r = cfg.resolve(Path::new(".")).unwrap();
        assert_eq!(r.sim.n_subcarriers, 624);
        assert_eq!(r.arch.d6, 624);
        assert_eq!(r.arch.c1, 4);
        assert_eq!(r.arch.codeword_bits(), 30);
        assert_eq!(r.eps_th, 0.1);
        assert_eq!(r.dataset_count, 10_000);
        assert_eq!(r.pattern.n_cg(), 13);
        assert_eq!(r.sr_kind, CoarseKind::Snr);
    }

    #[test]
    fn sections_override_defaults() {
        let text = br#"{
            "sim": {"n_subcarriers": 48, "n_subbands": 4, "n_tx": 8, "n_rx": 2, "pmi_bits": 3, "seed": 9},
            "train": {"epochs": 5, "batch_size": 4, "seed": 10},
            "arch": {"d3": 6},
            "sr": {"n_cg": 4, "kind": "cqi"},
            "eps_th": 0.2,
            "dataset_count": 40
        }"#;
        let cfg = GlobalConfig::parse(text).unwrap();
        let r = cfg.resolve(Path::new(".")).unwrap();
        assert_eq!(r.sim.n_subcarriers, 48);
        assert_eq!(r.arch.d6, 48);
        assert_eq!(r.arch.d3, 6);
        assert_eq!(r.train.epochs, 5);
        assert_eq!(r.sr_kind, CoarseKind::Cqi);
        assert_eq!(r.pattern.n_cg(), 4);
        assert_eq!(r.eps_th, 0.2);
        assert_eq!(r.dataset_count, 40);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(GlobalConfig::parse(b"{\"simm\": {}}").is_err());
        assert!(GlobalConfig::parse(b"{\"sim\": {\"bogus\": 1}}").is_err());
        assert!(GlobalConfig::parse(b"not json").is_err());
    }

    #[test]
    fn invalid_combinations_are_rejected() {
        // Subcarriers not divisible by subbands.
        let cfg = GlobalConfig::parse(br#"{"sim": {"n_subcarriers": 10, "n_subbands": 3}}"#).unwrap();
        assert!(cfg.resolve(Path::new(".")).is_err());
        // eps_th out of range.
        let cfg = GlobalConfig::parse(br#"{"eps_th": 1.5}"#).unwrap();
        assert!(cfg.resolve(Path::new(".")).is_err());
        // Unknown SR kind.
        let cfg = GlobalConfig::parse(br#"{"sr": {"kind": "other"}}"#).unwrap();
        assert!(cfg.resolve(Path::new(".")).is_err());
    }

    #[test]
    fn referenced_files_are_loaded_relative_to_base() {
        let dir = std::env::temp_dir().join(format!("cqifb_cfg_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("taps.txt"), "0.0 0.0\n1.0 -3.0\n").unwrap();
        let cfg = GlobalConfig::parse(br#"{"tdl_profile_path": "taps.txt"}"#).unwrap();
        let r = cfg.resolve(&dir).unwrap();
        assert_eq!(r.profile.num_taps(), 2);
        let missing = GlobalConfig::parse(br#"{"tdl_profile_path": "nope.txt"}"#).unwrap();
        assert!(missing.resolve(&dir).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
