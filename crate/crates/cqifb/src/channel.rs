//! Frequency-selective MIMO channel generation and per-subcarrier SNR.
//!
//! A channel realization is built from a tapped-delay-line profile: each tap
//! carries an i.i.d. complex Gaussian MIMO matrix, and the frequency response
//! at subcarrier `n` is the phase-rotated sum over taps. Subband precoders are
//! picked from a DFT codebook by received-power maximization, and the SNR of
//! every subcarrier follows from the precoded channel norm and the noise
//! variance.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::par_map;

/// Default TDL-C tap table, shipped with the crate and loadable from a file.
pub const DEFAULT_TDL_C: &str = include_str!("../data/tdl_c.txt");

/// Seed domain tags keep independent random streams from colliding.
const DOMAIN_CHANNEL: u64 = 0x4348_414e;
const DOMAIN_CALIBRATION: u64 = 0x4341_4c49;

/// Simulation-wide dimensions and operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_subcarriers: usize,
    pub n_subbands: usize,
    pub subcarrier_spacing_hz: f64,
    pub delay_spread_s: f64,
    pub avg_snr_db: f64,
    /// Linear noise power. `None` means "derive by calibration".
    pub noise_var: Option<f64>,
    pub pmi_bits: u32,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_tx: 32,
            n_rx: 4,
            n_subcarriers: 624,
            n_subbands: 13,
            subcarrier_spacing_hz: 15e3,
            delay_spread_s: 300e-9,
            avg_snr_db: 5.0,
            noise_var: None,
            pmi_bits: 4,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tx == 0 || self.n_rx == 0 {
            return Err(Error::invalid("antenna counts must be at least 1"));
        }
        if self.n_subcarriers == 0 || self.n_subbands == 0 {
            return Err(Error::invalid("subcarrier and subband counts must be at least 1"));
        }
        if self.n_subcarriers % self.n_subbands != 0 {
            return Err(Error::invalid(format!(
                "n_subcarriers ({}) must be divisible by n_subbands ({})",
                self.n_subcarriers, self.n_subbands
            )));
        }
        if !(self.delay_spread_s > 0.0) {
            return Err(Error::invalid("delay_spread_s must be positive"));
        }
        if !(self.subcarrier_spacing_hz > 0.0) {
            return Err(Error::invalid("subcarrier_spacing_hz must be positive"));
        }
        if let Some(nv) = self.noise_var {
            if !(nv > 0.0) {
                return Err(Error::invalid("noise_var must be positive"));
            }
        }
        if self.pmi_bits == 0 || self.pmi_bits > 16 {
            return Err(Error::invalid("pmi_bits must be in 1..=16"));
        }
        Ok(())
    }

    /// Subcarriers per subband.
    pub fn subband_size(&self) -> usize {
        self.n_subcarriers / self.n_subbands
    }
}

/// Tapped-delay-line profile: normalized delays plus per-tap powers.
///
/// Construction sorts taps by delay and renormalizes the linear powers to
/// sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TdlProfile {
    delays_normalized: Vec<f64>,
    powers_linear: Vec<f64>,
}

impl TdlProfile {
    pub fn new(delays_normalized: Vec<f64>, powers_db: Vec<f64>) -> Result<Self> {
        if delays_normalized.is_empty() {
            return Err(Error::invalid("profile must have at least one tap"));
        }
        if delays_normalized.len() != powers_db.len() {
            return Err(Error::invalid("delay and power lists must have equal length"));
        }
        for &d in &delays_normalized {
            if !d.is_finite() || d < 0.0 {
                return Err(Error::invalid(format!("tap delay {d} must be finite and non-negative")));
            }
        }
        for &p in &powers_db {
            if !p.is_finite() {
                return Err(Error::invalid("tap powers must be finite"));
            }
        }
        let mut taps: Vec<(f64, f64)> = delays_normalized
            .into_iter()
            .zip(powers_db.into_iter().map(|p| 10f64.powf(p / 10.0)))
            .collect();
        taps.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite delays"));
        let total: f64 = taps.iter().map(|t| t.1).sum();
        if !(total > 0.0) {
            return Err(Error::invalid("total tap power must be positive"));
        }
        Ok(TdlProfile {
            delays_normalized: taps.iter().map(|t| t.0).collect(),
            powers_linear: taps.iter().map(|t| t.1 / total).collect(),
        })
    }

    /// Parses the plain-text profile format: one tap per line,
    /// `normalized_delay power_db`, with `#` comments.
    pub fn parse(text: &str) -> Result<Self> {
        let mut delays = Vec::new();
        let mut powers = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let (Some(d), Some(p), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(Error::parse(format!(
                    "profile line {}: expected two fields, got {line:?}",
                    lineno + 1
                )));
            };
            let d: f64 = d
                .parse()
                .map_err(|_| Error::parse(format!("profile line {}: bad delay {d:?}", lineno + 1)))?;
            let p: f64 = p
                .parse()
                .map_err(|_| Error::parse(format!("profile line {}: bad power {p:?}", lineno + 1)))?;
            delays.push(d);
            powers.push(p);
        }
        TdlProfile::new(delays, powers).map_err(|e| Error::parse(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        TdlProfile::parse(&std::fs::read_to_string(path)?)
    }

    /// The shipped TDL-C table.
    pub fn tdl_c() -> Self {
        TdlProfile::parse(DEFAULT_TDL_C).expect("embedded TDL-C profile is valid")
    }

    pub fn num_taps(&self) -> usize {
        self.delays_normalized.len()
    }

    pub fn delays_normalized(&self) -> &[f64] {
        &self.delays_normalized
    }

    pub fn powers_linear(&self) -> &[f64] {
        &self.powers_linear
    }

    /// Returns a copy with every tap power scaled by `c` (linear).
    pub fn scaled(&self, c: f64) -> Self {
        // Renormalization is skipped on purpose; used by scaling tests.
        TdlProfile {
            delays_normalized: self.delays_normalized.clone(),
            powers_linear: self.powers_linear.iter().map(|p| p * c).collect(),
        }
    }
}

/// One slot's frequency response: `n_subcarriers` matrices of `n_rx x n_tx`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    n_rx: usize,
    n_tx: usize,
    /// Row-major per subcarrier: `data[n][r * n_tx + t]`.
    data: Vec<Vec<Complex64>>,
}

impl ChannelRealization {
    pub fn n_subcarriers(&self) -> usize {
        self.data.len()
    }

    pub fn n_rx(&self) -> usize {
        self.n_rx
    }

    pub fn n_tx(&self) -> usize {
        self.n_tx
    }

    /// Row-major matrix for subcarrier `n` (0-based).
    pub fn matrix(&self, n: usize) -> &[Complex64] {
        &self.data[n]
    }

    /// `H_n w` for the given unit-norm precoder.
    pub fn apply_precoder(&self, n: usize, w: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(w.len(), self.n_tx, "precoder length must equal n_tx");
        let m = &self.data[n];
        (0..self.n_rx)
            .map(|r| {
                let row = &m[r * self.n_tx..(r + 1) * self.n_tx];
                row.iter().zip(w).map(|(h, w)| h * w).sum()
            })
            .collect()
    }

    /// `||H_n w||^2`.
    pub fn precoded_power(&self, n: usize, w: &[Complex64]) -> f64 {
        self.apply_precoder(n, w).iter().map(|y| y.norm_sqr()).sum()
    }
}

/// Unit-norm precoding candidates shared by transmitter and receiver.
#[derive(Debug, Clone)]
pub struct Codebook {
    vectors: Vec<Vec<Complex64>>,
    pmi_bits: u32,
}

impl Codebook {
    /// DFT beam grid: `2^pmi_bits` phase-ramp beams over `n_tx` antennas.
    pub fn dft(n_tx: usize, pmi_bits: u32) -> Self {
        let count = 1usize << pmi_bits;
        let scale = 1.0 / (n_tx as f64).sqrt();
        let vectors = (0..count)
            .map(|m| {
                (0..n_tx)
                    .map(|a| {
                        let phase = 2.0 * PI * (a as f64) * (m as f64) / (count as f64);
                        Complex64::from_polar(scale, phase)
                    })
                    .collect()
            })
            .collect();
        Codebook { vectors, pmi_bits }
    }

    pub fn from_vectors(vectors: Vec<Vec<Complex64>>) -> Result<Self> {
        if vectors.is_empty() || !vectors.len().is_power_of_two() {
            return Err(Error::invalid("codebook size must be a nonzero power of two"));
        }
        for v in &vectors {
            let norm: f64 = v.iter().map(|x| x.norm_sqr()).sum();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::invalid("codebook vectors must have unit norm"));
            }
        }
        let pmi_bits = vectors.len().trailing_zeros();
        Ok(Codebook { vectors, pmi_bits })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn pmi_bits(&self) -> u32 {
        self.pmi_bits
    }

    pub fn vector(&self, m: usize) -> &[Complex64] {
        &self.vectors[m]
    }
}

/// Per-subcarrier linear SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrVector {
    values: Vec<f64>,
}

impl SnrVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for &v in &values {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("SNR value {v} must be finite and non-negative")));
            }
        }
        Ok(SnrVector { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// 1-based subband index for 1-based subcarrier `n`: equal partitions of
/// `N_c / J` subcarriers.
///
/// # Panics
/// Panics when `n` is outside `1..=n_subcarriers`.
pub fn subband_index(n: usize, cfg: &SimConfig) -> usize {
    assert!(
        n >= 1 && n <= cfg.n_subcarriers,
        "subcarrier index {n} out of range 1..={}",
        cfg.n_subcarriers
    );
    (n - 1) * cfg.n_subbands / cfg.n_subcarriers + 1
}

fn sample_rng(cfg_seed: u64, sample_seed: u64, domain: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&cfg_seed.to_le_bytes());
    key[8..16].copy_from_slice(&sample_seed.to_le_bytes());
    key[16..24].copy_from_slice(&domain.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// One complex Gaussian CN(0, var) sample via Box-Muller.
fn complex_gaussian(rng: &mut ChaCha8Rng, var: f64) -> Complex64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt() * (var / 2.0).sqrt();
    let theta = 2.0 * PI * u2;
    Complex64::new(r * theta.cos(), r * theta.sin())
}

/// Draws one channel realization.
///
/// Tap `l` gets an i.i.d. matrix with CN(0, p_l) entries; the response at
/// subcarrier `n` is the sum over taps rotated by `exp(-i 2 pi f_n tau_l)`
/// with `f_n = (n-1) * spacing` and `tau_l = normalized_delay_l * delay_spread`.
/// Bit-identical output for identical `(cfg.seed, sample_seed)`.
pub fn generate_channel(cfg: &SimConfig, profile: &TdlProfile, sample_seed: u64) -> Result<ChannelRealization> {
    cfg.validate()?;
    if profile.num_taps() == 0 {
        return Err(Error::invalid("profile must have at least one tap"));
    }
    let mut rng = sample_rng(cfg.seed, sample_seed, DOMAIN_CHANNEL);
    let entries = cfg.n_rx * cfg.n_tx;
    let taps: Vec<Vec<Complex64>> = profile
        .powers_linear()
        .iter()
        .map(|&p| (0..entries).map(|_| complex_gaussian(&mut rng, p)).collect())
        .collect();

    let data: Vec<Vec<Complex64>> = (0..cfg.n_subcarriers)
        .map(|n| {
            let f_n = n as f64 * cfg.subcarrier_spacing_hz;
            let mut h = vec![Complex64::new(0.0, 0.0); entries];
            for (tap, &delay) in taps.iter().zip(profile.delays_normalized()) {
                let tau = delay * cfg.delay_spread_s;
                let phase = Complex64::from_polar(1.0, -2.0 * PI * f_n * tau);
                for (acc, g) in h.iter_mut().zip(tap) {
                    *acc += g * phase;
                }
            }
            h
        })
        .collect();

    Ok(ChannelRealization {
        n_rx: cfg.n_rx,
        n_tx: cfg.n_tx,
        data,
    })
}

/// Picks one codebook vector per subband by maximizing the subband sum of
/// `||H_n w||^2`; ties break toward the lowest codebook index.
pub fn select_precoders(ch: &ChannelRealization, cb: &Codebook, cfg: &SimConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    if ch.n_subcarriers() != cfg.n_subcarriers || ch.n_rx() != cfg.n_rx || ch.n_tx() != cfg.n_tx {
        return Err(Error::invalid("channel dimensions do not match config"));
    }
    if cb.is_empty() {
        return Err(Error::invalid("codebook is empty"));
    }
    let sb = cfg.subband_size();
    let picks = (0..cfg.n_subbands)
        .map(|j| {
            let lo = j * sb;
            let hi = lo + sb;
            let mut best = 0usize;
            let mut best_power = f64::NEG_INFINITY;
            for m in 0..cb.len() {
                let w = cb.vector(m);
                let power: f64 = (lo..hi).map(|n| ch.precoded_power(n, w)).sum();
                if power > best_power {
                    best_power = power;
                    best = m;
                }
            }
            best
        })
        .collect();
    Ok(picks)
}

/// Per-subcarrier SNR: `||H_n w_{j(n)}||^2 / noise_var`.
pub fn compute_snr(
    ch: &ChannelRealization,
    cb: &Codebook,
    precoders: &[usize],
    noise_var: f64,
    cfg: &SimConfig,
) -> Result<SnrVector> {
    if !(noise_var > 0.0) {
        return Err(Error::invalid("noise_var must be positive"));
    }
    if precoders.len() != cfg.n_subbands {
        return Err(Error::invalid("one precoder per subband required"));
    }
    let sb = cfg.subband_size();
    let values = (0..ch.n_subcarriers())
        .map(|n| {
            let w = cb.vector(precoders[n / sb]);
            ch.precoded_power(n, w) / noise_var
        })
        .collect();
    SnrVector::new(values)
}

/// Calibrates the noise variance so the empirical mean of the per-subcarrier
/// SNR in dB over `n_realizations` draws equals `avg_snr_db`.
///
/// The average is taken in the dB domain; matching the linear mean instead
/// would land the dB mean below target by the spread-dependent Jensen gap.
/// Uses a dedicated seed domain, so calibration draws never collide with
/// dataset samples.
pub fn calibrate_noise_var(cfg: &SimConfig, profile: &TdlProfile, cb: &Codebook, n_realizations: usize) -> Result<f64> {
    cfg.validate()?;
    if n_realizations == 0 {
        return Err(Error::invalid("calibration needs at least one realization"));
    }
    let means: Vec<(f64, usize)> = par_map(n_realizations, |i| {
        let ch = generate_channel_domain(cfg, profile, i as u64, DOMAIN_CALIBRATION);
        let picks = select_precoders(&ch, cb, cfg).expect("valid inputs");
        let sb = cfg.subband_size();
        let mut db_sum = 0.0;
        let mut count = 0usize;
        for n in 0..ch.n_subcarriers() {
            let p = ch.precoded_power(n, cb.vector(picks[n / sb]));
            if p > 0.0 {
                db_sum += 10.0 * p.log10();
                count += 1;
            }
        }
        (db_sum, count)
    });
    let total_db: f64 = means.iter().map(|m| m.0).sum();
    let total_count: usize = means.iter().map(|m| m.1).sum();
    if total_count == 0 {
        return Err(Error::invalid("calibration saw no nonzero channel power"));
    }
    let mean_db = total_db / total_count as f64;
    Ok(10f64.powf((mean_db - cfg.avg_snr_db) / 10.0))
}

/// Resolves the configured noise variance, calibrating when absent.
pub fn resolve_noise_var(cfg: &SimConfig, profile: &TdlProfile, cb: &Codebook) -> Result<f64> {
    match cfg.noise_var {
        Some(nv) => Ok(nv),
        None => calibrate_noise_var(cfg, profile, cb, 1000),
    }
}

fn generate_channel_domain(cfg: &SimConfig, profile: &TdlProfile, sample_seed: u64, domain: u64) -> ChannelRealization {
    let mut rng = sample_rng(cfg.seed, sample_seed, domain);
    let entries = cfg.n_rx * cfg.n_tx;
    let taps: Vec<Vec<Complex64>> = profile
        .powers_linear()
        .iter()
        .map(|&p| (0..entries).map(|_| complex_gaussian(&mut rng, p)).collect())
        .collect();
    let data = (0..cfg.n_subcarriers)
        .map(|n| {
            let f_n = n as f64 * cfg.subcarrier_spacing_hz;
            let mut h = vec![Complex64::new(0.0, 0.0); entries];
            for (tap, &delay) in taps.iter().zip(profile.delays_normalized()) {
                let tau = delay * cfg.delay_spread_s;
                let phase = Complex64::from_polar(1.0, -2.0 * PI * f_n * tau);
                for (acc, g) in h.iter_mut().zip(tap) {
                    *acc += g * phase;
                }
            }
            h
        })
        .collect();
    ChannelRealization {
        n_rx: cfg.n_rx,
        n_tx: cfg.n_tx,
        data,
    }
}
