//! Link adaptation: CQI/MCS table, BLER curves, effective-SNR mapping, CQI
//! selection at subband and subcarrier granularity, offset feedback codecs,
//! effective rate, and classification metrics.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// OFDM symbols per feedback slot.
pub const SYMBOLS_PER_SLOT: f64 = 14.0;
/// Slots per second at 15 kHz numerology (1 ms slots).
pub const SLOTS_PER_SECOND: f64 = 1000.0;

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn db_to_linear(x: f64) -> f64 {
    10f64.powf(x / 10.0)
}

/// One CQI table row: modulation order and LDPC code rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CqiEntry {
    pub cqi_index: u8,
    /// Bits per modulation symbol; 0 marks the out-of-range entry.
    pub modulation_bits: u8,
    /// Code rate scaled by 1024.
    pub code_rate_x1024: u16,
}

impl CqiEntry {
    /// Information bits per symbol: modulation bits times code rate.
    pub fn spectral_efficiency(&self) -> f64 {
        self.modulation_bits as f64 * self.code_rate_x1024 as f64 / 1024.0
    }
}

/// 4-bit CQI table: entry 0 is out-of-range, 1..=15 are increasing-rate MCSs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CqiTable {
    entries: Vec<CqiEntry>,
}

const NR_TABLE_1: [(u8, u16); 16] = [
    (0, 0),
    (2, 78),
    (2, 120),
    (2, 193),
    (2, 308),
    (2, 449),
    (2, 602),
    (4, 378),
    (4, 490),
    (4, 616),
    (6, 466),
    (6, 567),
    (6, 666),
    (6, 772),
    (6, 873),
    (6, 948),
];

impl Default for CqiTable {
    fn default() -> Self {
        let entries = NR_TABLE_1
            .iter()
            .enumerate()
            .map(|(i, &(m, r))| CqiEntry {
                cqi_index: i as u8,
                modulation_bits: m,
                code_rate_x1024: r,
            })
            .collect();
        CqiTable { entries }
    }
}

impl CqiTable {
    pub fn new(entries: Vec<CqiEntry>) -> Result<Self> {
        if entries.len() < 2 || !entries.len().is_power_of_two() {
            return Err(Error::invalid("CQI table length must be a power of two >= 2"));
        }
        let first = &entries[0];
        if first.modulation_bits != 0 || first.code_rate_x1024 != 0 {
            return Err(Error::invalid("CQI entry 0 must be out-of-range (0 bits, 0 rate)"));
        }
        let mut last_eff = 0.0;
        for (i, e) in entries.iter().enumerate() {
            if e.cqi_index as usize != i {
                return Err(Error::invalid(format!("CQI entry {i} has index {}", e.cqi_index)));
            }
            if i >= 1 {
                if !matches!(e.modulation_bits, 2 | 4 | 6) {
                    return Err(Error::invalid(format!("CQI {i}: modulation bits must be 2, 4, or 6")));
                }
                let eff = e.spectral_efficiency();
                if eff <= last_eff {
                    return Err(Error::invalid(format!(
                        "CQI table spectral efficiency must be strictly increasing at index {i}"
                    )));
                }
                last_eff = eff;
            }
        }
        Ok(CqiTable { entries })
    }

    /// Parses the override format: one line per entry,
    /// `index modulation_bits code_rate_x1024`, `#` comments allowed.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::parse(format!(
                    "CQI table line {}: expected 3 fields",
                    lineno + 1
                )));
            }
            let parse_u = |s: &str, what: &str| -> Result<u64> {
                s.parse()
                    .map_err(|_| Error::parse(format!("CQI table line {}: bad {what} {s:?}", lineno + 1)))
            };
            let idx = parse_u(fields[0], "index")?;
            let bits = parse_u(fields[1], "modulation bits")?;
            let rate = parse_u(fields[2], "code rate")?;
            if idx > u8::MAX as u64 || bits > u8::MAX as u64 || rate > u16::MAX as u64 {
                return Err(Error::parse(format!("CQI table line {}: value out of range", lineno + 1)));
            }
            entries.push(CqiEntry {
                cqi_index: idx as u8,
                modulation_bits: bits as u8,
                code_rate_x1024: rate as u16,
            });
        }
        CqiTable::new(entries).map_err(|e| Error::parse(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        CqiTable::parse(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Feedback bits per full CQI index.
    pub fn c1_bits(&self) -> u8 {
        self.entries.len().trailing_zeros() as u8
    }

    pub fn max_index(&self) -> u8 {
        (self.entries.len() - 1) as u8
    }

    pub fn entry(&self, k: u8) -> &CqiEntry {
        &self.entries[k as usize]
    }
}

/// Logistic BLER curve for one CQI index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlerCurve {
    pub threshold_db: f64,
    pub slope_per_db: f64,
}

/// Parametric SNR-to-BLER model, one curve per CQI index 1..=max.
///
/// `bler(gamma, k) = 1 / (1 + exp(slope_k * (gamma - threshold_k)))`;
/// index 0 carries no data and has BLER 0 by convention.
#[derive(Debug, Clone, PartialEq)]
pub struct BlerModel {
    curves: Vec<BlerCurve>,
}

impl BlerModel {
    pub fn new(curves: Vec<BlerCurve>) -> Result<Self> {
        if curves.is_empty() {
            return Err(Error::invalid("BLER model needs at least one curve"));
        }
        let mut last = f64::NEG_INFINITY;
        for (i, c) in curves.iter().enumerate() {
            if !c.threshold_db.is_finite() || !(c.slope_per_db > 0.0) {
                return Err(Error::invalid(format!(
                    "BLER curve {}: threshold must be finite and slope positive",
                    i + 1
                )));
            }
            if c.threshold_db <= last {
                return Err(Error::invalid(format!(
                    "BLER thresholds must be strictly increasing at CQI {}",
                    i + 1
                )));
            }
            last = c.threshold_db;
        }
        Ok(BlerModel { curves })
    }

    /// Default curves derived from the CQI table: Shannon-inverse thresholds
    /// `10*log10(2^eff - 1)` plus a 2 dB implementation margin. The slope of
    /// 5/dB gives the sharp waterfall of long LDPC blocks, where one CQI
    /// level of overestimation already drives the BLER toward 1.
    pub fn from_table(table: &CqiTable) -> Self {
        Self::from_table_with(table, 2.0, 5.0)
    }

    pub fn from_table_with(table: &CqiTable, margin_db: f64, slope_per_db: f64) -> Self {
        let curves = (1..=table.max_index())
            .map(|k| {
                let eff = table.entry(k).spectral_efficiency();
                BlerCurve {
                    threshold_db: linear_to_db(2f64.powf(eff) - 1.0) + margin_db,
                    slope_per_db,
                }
            })
            .collect();
        BlerModel::new(curves).expect("table efficiencies are strictly increasing")
    }

    /// Parses the override format: one line per CQI index starting at 1,
    /// `k threshold_db slope_per_db`, `#` comments allowed.
    pub fn parse(text: &str) -> Result<Self> {
        let mut curves = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::parse(format!(
                    "BLER model line {}: expected 3 fields",
                    lineno + 1
                )));
            }
            let k: usize = fields[0]
                .parse()
                .map_err(|_| Error::parse(format!("BLER model line {}: bad index", lineno + 1)))?;
            if k != curves.len() + 1 {
                return Err(Error::parse(format!(
                    "BLER model line {}: expected CQI {} next, got {k}",
                    lineno + 1,
                    curves.len() + 1
                )));
            }
            let t: f64 = fields[1]
                .parse()
                .map_err(|_| Error::parse(format!("BLER model line {}: bad threshold", lineno + 1)))?;
            let a: f64 = fields[2]
                .parse()
                .map_err(|_| Error::parse(format!("BLER model line {}: bad slope", lineno + 1)))?;
            curves.push(BlerCurve {
                threshold_db: t,
                slope_per_db: a,
            });
        }
        BlerModel::new(curves).map_err(|e| Error::parse(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        BlerModel::parse(&std::fs::read_to_string(path)?)
    }

    pub fn max_cqi(&self) -> u8 {
        self.curves.len() as u8
    }

    pub fn curve(&self, k: u8) -> &BlerCurve {
        assert!(k >= 1 && k <= self.max_cqi(), "CQI {k} has no BLER curve");
        &self.curves[k as usize - 1]
    }

    /// Block error probability at `gamma_db` under CQI `k`.
    ///
    /// # Panics
    /// Panics when `k` exceeds the modeled range.
    pub fn bler(&self, gamma_db: f64, k: u8) -> f64 {
        if k == 0 {
            return 0.0;
        }
        let c = self.curve(k);
        1.0 / (1.0 + (c.slope_per_db * (gamma_db - c.threshold_db)).exp())
    }
}

/// Exponential effective SNR: `-beta * ln(mean(exp(-snr / beta)))`.
///
/// # Panics
/// Panics on an empty input or non-positive `beta`.
pub fn eesm(snrs: &[f64], beta: f64) -> f64 {
    assert!(!snrs.is_empty(), "eesm needs at least one SNR");
    assert!(beta > 0.0, "eesm beta must be positive");
    let mean: f64 = snrs.iter().map(|&s| (-s / beta).exp()).sum::<f64>() / snrs.len() as f64;
    -beta * mean.ln()
}

/// EESM beta policy: one shared value or one per CQI index.
#[derive(Debug, Clone)]
pub enum EesmBeta {
    Fixed(f64),
    /// `values[k-1]` is the beta for CQI `k`.
    PerCqi(Vec<f64>),
}

impl EesmBeta {
    /// Shannon-matched betas: `2^efficiency - 1` per CQI index.
    pub fn from_table(table: &CqiTable) -> Self {
        EesmBeta::PerCqi(
            (1..=table.max_index())
                .map(|k| 2f64.powf(table.entry(k).spectral_efficiency()) - 1.0)
                .collect(),
        )
    }

    pub fn for_cqi(&self, k: u8) -> f64 {
        match self {
            EesmBeta::Fixed(b) => *b,
            EesmBeta::PerCqi(v) => v[k as usize - 1],
        }
    }
}

/// CQI vector granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CqiGranularity {
    PerSubcarrier,
    PerSubband,
}

/// Integer CQI indices at one of the two granularities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CqiVector {
    values: Vec<u8>,
    granularity: CqiGranularity,
}

impl CqiVector {
    pub fn new(values: Vec<u8>, granularity: CqiGranularity, max_cqi: u8) -> Self {
        assert!(
            values.iter().all(|&v| v <= max_cqi),
            "CQI values must be within 0..={max_cqi}"
        );
        CqiVector { values, granularity }
    }

    pub fn per_subcarrier(values: Vec<u8>, max_cqi: u8) -> Self {
        Self::new(values, CqiGranularity::PerSubcarrier, max_cqi)
    }

    pub fn per_subband(values: Vec<u8>, max_cqi: u8) -> Self {
        Self::new(values, CqiGranularity::PerSubband, max_cqi)
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn granularity(&self) -> CqiGranularity {
        self.granularity
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Per-subcarrier view: subband vectors repeat each value over its
    /// `n_subcarriers / J` subcarriers.
    pub fn expand_to_subcarriers(&self, n_subcarriers: usize) -> Vec<u8> {
        match self.granularity {
            CqiGranularity::PerSubcarrier => {
                assert_eq!(self.values.len(), n_subcarriers, "length mismatch");
                self.values.clone()
            }
            CqiGranularity::PerSubband => {
                assert!(
                    !self.values.is_empty() && n_subcarriers % self.values.len() == 0,
                    "subband count must divide n_subcarriers"
                );
                let per = n_subcarriers / self.values.len();
                self.values.iter().flat_map(|&v| std::iter::repeat(v).take(per)).collect()
            }
        }
    }
}

/// Largest CQI index whose BLER at `gamma_db` stays within `eps_th`;
/// 0 when none qualifies.
pub fn select_cqi_for_snr(gamma_db: f64, model: &BlerModel, eps_th: f64) -> u8 {
    assert!(eps_th > 0.0 && eps_th < 1.0, "eps_th must be in (0, 1)");
    (1..=model.max_cqi())
        .filter(|&k| model.bler(gamma_db, k) <= eps_th)
        .max()
        .unwrap_or(0)
}

/// Per-subcarrier CQI selection straight from each tone's SNR.
pub fn select_subcarrier_cqi(snrs: &crate::channel::SnrVector, model: &BlerModel, eps_th: f64) -> CqiVector {
    let values = snrs
        .values()
        .iter()
        .map(|&rho| select_cqi_for_snr(linear_to_db(rho), model, eps_th))
        .collect();
    CqiVector::per_subcarrier(values, model.max_cqi())
}

/// Subband CQI via the candidate scan: for each CQI from the top down,
/// compute the subband eSNR under that candidate's beta and return the first
/// index whose BLER meets the threshold.
pub fn select_subband_cqi(
    snrs: &crate::channel::SnrVector,
    n_subbands: usize,
    model: &BlerModel,
    beta: &EesmBeta,
    eps_th: f64,
) -> CqiVector {
    assert!(eps_th > 0.0 && eps_th < 1.0, "eps_th must be in (0, 1)");
    assert!(
        n_subbands > 0 && snrs.len() % n_subbands == 0,
        "subband count must divide the subcarrier count"
    );
    let per = snrs.len() / n_subbands;
    let values = snrs
        .values()
        .chunks(per)
        .map(|sub| {
            for k in (1..=model.max_cqi()).rev() {
                let esnr = eesm(sub, beta.for_cqi(k));
                if esnr <= 0.0 {
                    continue;
                }
                if model.bler(linear_to_db(esnr), k) <= eps_th {
                    return k;
                }
            }
            0
        })
        .collect();
    CqiVector::per_subband(values, model.max_cqi())
}

/// Wideband CQI plus clamped per-subband offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OffsetReport {
    pub wideband_cqi: u8,
    pub offsets: Vec<i8>,
    pub c1_bits: u8,
    pub c2_bits: u8,
    /// Variable-width reports carry a 2-bit width field on the wire.
    pub variable_width: bool,
}

impl OffsetReport {
    pub fn overhead_bits(&self) -> usize {
        self.c1_bits as usize
            + self.c2_bits as usize * self.offsets.len()
            + if self.variable_width { 2 } else { 0 }
    }

    fn offset_range(c2_bits: u8) -> (i32, i32) {
        (-(1i32 << (c2_bits - 1)) + 1, 1i32 << (c2_bits - 1))
    }
}

/// Nearest integer to the mean with ties rounded down.
fn wideband_from(values: &[u8]) -> u8 {
    let sum: i64 = values.iter().map(|&v| v as i64).sum();
    let j = values.len() as i64;
    // ceil((2*sum - j) / (2*j)) rounds halves toward the lower integer.
    let numer = 2 * sum - j;
    let denom = 2 * j;
    let wb = numer.div_euclid(denom) + if numer.rem_euclid(denom) != 0 { 1 } else { 0 };
    wb.max(0) as u8
}

/// Encodes a subband CQI vector as wideband value plus fixed-width offsets.
pub fn encode_offsets(subband: &CqiVector, c1_bits: u8, c2_bits: u8) -> OffsetReport {
    assert_eq!(subband.granularity(), CqiGranularity::PerSubband, "offset coding is per-subband");
    assert!(c1_bits >= 1 && c1_bits <= 8 && c2_bits >= 1 && c2_bits <= 8);
    let wb = wideband_from(subband.values());
    let (lo, hi) = OffsetReport::offset_range(c2_bits);
    let offsets = subband
        .values()
        .iter()
        .map(|&v| (v as i32 - wb as i32).clamp(lo, hi) as i8)
        .collect();
    OffsetReport {
        wideband_cqi: wb,
        offsets,
        c1_bits,
        c2_bits,
        variable_width: false,
    }
}

/// Variable-offset-size encoding: the smallest uniform width in 1..=4 whose
/// range covers every raw offset, falling back to 4 bits with clamping.
pub fn encode_vos(subband: &CqiVector, c1_bits: u8) -> OffsetReport {
    assert_eq!(subband.granularity(), CqiGranularity::PerSubband, "offset coding is per-subband");
    let wb = wideband_from(subband.values());
    let fits = |b: u8| {
        let (lo, hi) = OffsetReport::offset_range(b);
        subband.values().iter().all(|&v| {
            let d = v as i32 - wb as i32;
            d >= lo && d <= hi
        })
    };
    let c2_bits = (1u8..=4).find(|&b| fits(b)).unwrap_or(4);
    let (lo, hi) = OffsetReport::offset_range(c2_bits);
    let offsets = subband
        .values()
        .iter()
        .map(|&v| (v as i32 - wb as i32).clamp(lo, hi) as i8)
        .collect();
    OffsetReport {
        wideband_cqi: wb,
        offsets,
        c1_bits,
        c2_bits,
        variable_width: true,
    }
}

/// Reconstructs per-subband CQI from an offset report.
pub fn decode_offsets(report: &OffsetReport, max_cqi: u8) -> CqiVector {
    let values = report
        .offsets
        .iter()
        .map(|&o| (report.wideband_cqi as i32 + o as i32).clamp(0, max_cqi as i32) as u8)
        .collect();
    CqiVector::per_subband(values, max_cqi)
}

/// Expected successfully delivered bits per second for a CQI assignment,
/// with the BLER of every subcarrier evaluated at its true SNR.
pub fn effective_rate(cqi: &CqiVector, snrs: &crate::channel::SnrVector, table: &CqiTable, model: &BlerModel) -> f64 {
    let per_sc = cqi.expand_to_subcarriers(snrs.len());
    let bits_per_symbol: f64 = per_sc
        .iter()
        .zip(snrs.values())
        .map(|(&k, &rho)| {
            if k == 0 {
                return 0.0;
            }
            let e = table.entry(k);
            let eps = model.bler(linear_to_db(rho), k);
            e.spectral_efficiency() * (1.0 - eps)
        })
        .sum();
    bits_per_symbol * SYMBOLS_PER_SLOT * SLOTS_PER_SECOND
}

/// Classification quality of a predicted CQI assignment against the
/// per-subcarrier truth.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SchemeMetrics {
    pub error_high: f64,
    pub error_low: f64,
    pub error_sum: f64,
    pub effective_rate_bps: f64,
    /// Probability of each `predicted - truth` deviation.
    pub deviation_histogram: BTreeMap<i32, f64>,
    /// Feedback bits per report (mean for variable-width schemes).
    pub overhead_bits: f64,
}

/// Streaming accumulator for deviation statistics across many samples.
#[derive(Debug, Clone, Default)]
pub struct DeviationAccumulator {
    histogram: BTreeMap<i32, u64>,
    total: u64,
}

impl DeviationAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, truth: &[u8], predicted: &[u8]) {
        assert_eq!(truth.len(), predicted.len(), "length mismatch");
        for (&t, &p) in truth.iter().zip(predicted) {
            *self.histogram.entry(p as i32 - t as i32).or_insert(0) += 1;
        }
        self.total += truth.len() as u64;
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn metrics(&self) -> SchemeMetrics {
        let total = self.total.max(1) as f64;
        let mut high = 0u64;
        let mut low = 0u64;
        let mut hist = BTreeMap::new();
        for (&d, &c) in &self.histogram {
            if d > 0 {
                high += c;
            } else if d < 0 {
                low += c;
            }
            hist.insert(d, c as f64 / total);
        }
        SchemeMetrics {
            error_high: high as f64 / total,
            error_low: low as f64 / total,
            error_sum: (high + low) as f64 / total,
            effective_rate_bps: 0.0,
            deviation_histogram: hist,
            overhead_bits: 0.0,
        }
    }
}

/// Compares predicted CQI (either granularity) against per-subcarrier truth.
pub fn classification_metrics(truth: &CqiVector, predicted: &CqiVector) -> SchemeMetrics {
    assert_eq!(
        truth.granularity(),
        CqiGranularity::PerSubcarrier,
        "truth must be per-subcarrier"
    );
    let pred = predicted.expand_to_subcarriers(truth.len());
    let mut acc = DeviationAccumulator::new();
    acc.record(truth.values(), &pred);
    acc.metrics()
}
