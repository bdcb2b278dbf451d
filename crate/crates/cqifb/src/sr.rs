//! Super-resolution CQI feedback from sparse pilot measurements: the UE
//! measures a subset of subcarriers, feeds coarse CQI or SNR through the
//! encoder, and the BS decoder jointly reconstructs and upscales to the full
//! per-subcarrier CQI vector.

use rand_chacha::ChaCha8Rng;

use crate::channel::SnrVector;
use crate::cqinet::{build_networks, normalize, train_autoencoder, CqinetArch, TrainOutcome};
use crate::error::{Error, Result};
use crate::link::{select_cqi_for_snr, BlerModel};
use crate::nn::{Matrix, NetworkModel, TrainConfig};

/// Pilot subcarrier layout: strictly increasing 1-based indices covering both
/// band edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsirsPattern {
    positions: Vec<usize>,
    n_subcarriers: usize,
}

impl CsirsPattern {
    pub fn new(positions: Vec<usize>, n_subcarriers: usize) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::invalid("pattern needs at least one pilot"));
        }
        if !positions.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("pilot positions must be strictly increasing"));
        }
        if positions[0] < 1 || *positions.last().unwrap() > n_subcarriers {
            return Err(Error::invalid("pilot positions must lie within the band"));
        }
        if positions.len() >= 2 && (positions[0] != 1 || *positions.last().unwrap() != n_subcarriers) {
            return Err(Error::invalid("patterns with two or more pilots must include both band edges"));
        }
        Ok(CsirsPattern {
            positions,
            n_subcarriers,
        })
    }

    /// Uniformly spaced pilots: `round(1 + (i-1)*(n_c-1)/(n_cg-1))`.
    pub fn uniform(n_subcarriers: usize, n_cg: usize) -> Result<Self> {
        if n_cg < 2 || n_cg > n_subcarriers {
            return Err(Error::invalid(format!(
                "pilot count {n_cg} must be in 2..={n_subcarriers}"
            )));
        }
        let step = (n_subcarriers - 1) as f64 / (n_cg - 1) as f64;
        let mut positions: Vec<usize> = (0..n_cg)
            .map(|i| (1.0 + i as f64 * step).round() as usize)
            .collect();
        positions.dedup();
        CsirsPattern::new(positions, n_subcarriers)
    }

    /// Parses the pattern file: one 1-based index per line, `#` comments.
    pub fn parse(text: &str, n_subcarriers: usize) -> Result<Self> {
        let mut positions = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let idx: usize = line
                .parse()
                .map_err(|_| Error::parse(format!("pattern line {}: bad index {line:?}", lineno + 1)))?;
            positions.push(idx);
        }
        CsirsPattern::new(positions, n_subcarriers).map_err(|e| Error::parse(e.to_string()))
    }

    pub fn load(path: &std::path::Path, n_subcarriers: usize) -> Result<Self> {
        CsirsPattern::parse(&std::fs::read_to_string(path)?, n_subcarriers)
    }

    pub fn n_cg(&self) -> usize {
        self.positions.len()
    }

    /// 1-based pilot indices.
    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn n_subcarriers(&self) -> usize {
        self.n_subcarriers
    }

    /// Gathers the pilot entries of a full-band slice.
    pub fn gather<T: Copy>(&self, full: &[T]) -> Vec<T> {
        assert_eq!(full.len(), self.n_subcarriers, "band length mismatch");
        self.positions.iter().map(|&p| full[p - 1]).collect()
    }
}

/// Which measurement the UE feeds into the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoarseKind {
    Cqi,
    Snr,
}

impl CoarseKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cqi" => Ok(CoarseKind::Cqi),
            "snr" => Ok(CoarseKind::Snr),
            other => Err(Error::invalid(format!("unknown input kind {other:?} (expected cqi or snr)"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            CoarseKind::Cqi => "cqi",
            CoarseKind::Snr => "snr",
        }
    }
}

/// Normalized coarse measurement vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseInput {
    pub kind: CoarseKind,
    pub values: Vec<f32>,
}

/// Normalizes pilot SNRs by their maximum (the paper's linear rule).
pub fn normalize_snr_linear(pilot_snrs: &[f64]) -> Result<Vec<f32>> {
    let max = pilot_snrs.iter().cloned().fold(f64::MIN, f64::max);
    if !(max > 0.0) {
        return Err(Error::invalid("all pilot SNRs are zero; normalization undefined"));
    }
    Ok(pilot_snrs.iter().map(|&v| (v / max) as f32).collect())
}

/// dB-domain alternative, off by default: min-max scaling of `10*log10(snr)`.
pub fn normalize_snr_db(pilot_snrs: &[f64]) -> Result<Vec<f32>> {
    let floor = 1e-12;
    let dbs: Vec<f64> = pilot_snrs.iter().map(|&v| 10.0 * v.max(floor).log10()).collect();
    let max = dbs.iter().cloned().fold(f64::MIN, f64::max);
    let min = dbs.iter().cloned().fold(f64::MAX, f64::min);
    if pilot_snrs.iter().all(|&v| !(v > 0.0)) {
        return Err(Error::invalid("all pilot SNRs are zero; normalization undefined"));
    }
    if max - min < 1e-12 {
        return Ok(vec![1.0; dbs.len()]);
    }
    Ok(dbs.iter().map(|&d| ((d - min) / (max - min)) as f32).collect())
}

/// Builds the encoder input from one full-band SNR vector.
pub fn make_coarse_input(
    snrs: &SnrVector,
    pattern: &CsirsPattern,
    kind: CoarseKind,
    model: &BlerModel,
    eps_th: f64,
    c1: u8,
) -> Result<CoarseInput> {
    let pilots = pattern.gather(snrs.values());
    let values = match kind {
        CoarseKind::Snr => normalize_snr_linear(&pilots)?,
        CoarseKind::Cqi => {
            let cqi: Vec<u8> = pilots
                .iter()
                .map(|&rho| select_cqi_for_snr(10.0 * rho.log10(), model, eps_th))
                .collect();
            normalize(&cqi, c1)
        }
    };
    Ok(CoarseInput { kind, values })
}

/// Builds the SR pair: the encoder takes `n_cg` coarse values, the decoder is
/// the CQInet decoder and therefore jointly decodes and super-resolves to the
/// full band. With `n_cg` equal to the subcarrier count the pair is exactly
/// the CQInet architecture.
pub fn build_sr(
    arch: &CqinetArch,
    n_cg: usize,
    dropout_rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(NetworkModel, NetworkModel)> {
    build_networks(arch, n_cg, dropout_rate, rng)
}

/// Trains the SR network on full-resolution targets derived from the dataset.
///
/// `snr_samples` and `cqi_samples` are the per-sample full-band SNR and
/// ground-truth subcarrier CQI. With `CoarseKind::Cqi` inputs are the stored
/// pilot CQIs (identical to re-deriving them from SNR under the dataset's
/// BLER model); with `CoarseKind::Snr` the network learns the SNR-to-CQI
/// mapping implicitly.
#[allow(clippy::too_many_arguments)]
pub fn train_sr(
    snr_samples: &[Vec<f64>],
    cqi_samples: &[Vec<u8>],
    arch: &CqinetArch,
    pattern: &CsirsPattern,
    kind: CoarseKind,
    tcfg: &TrainConfig,
    train_idx: &[usize],
    val_idx: &[usize],
    snr_input_db: bool,
) -> Result<TrainOutcome> {
    if cqi_samples.is_empty() || snr_samples.len() != cqi_samples.len() {
        return Err(Error::invalid("dataset is empty or snr/cqi sample counts differ"));
    }
    arch.validate()?;
    if pattern.n_subcarriers() != arch.d7 {
        return Err(Error::invalid("pattern band width must equal d7"));
    }
    let mut rows = Vec::with_capacity(cqi_samples.len());
    for (snr, cqi) in snr_samples.iter().zip(cqi_samples) {
        if snr.len() != arch.d7 || cqi.len() != arch.d7 {
            return Err(Error::invalid("sample length must equal the subcarrier count"));
        }
        let row = match kind {
            CoarseKind::Cqi => normalize(&pattern.gather(cqi), arch.c1),
            CoarseKind::Snr => {
                let pilots = pattern.gather(snr.as_slice());
                if snr_input_db {
                    normalize_snr_db(&pilots)?
                } else {
                    normalize_snr_linear(&pilots)?
                }
            }
        };
        rows.push(row);
    }
    let inputs = Matrix::from_rows(&rows);
    let trows: Vec<Vec<f32>> = cqi_samples
        .iter()
        .map(|s| s.iter().map(|&k| k as f32).collect())
        .collect();
    let targets = Matrix::from_rows(&trows);
    train_autoencoder(&inputs, &targets, train_idx, val_idx, arch, tcfg)
}

/// Trains the interpolation baseline's coarse autoencoder: a CQInet-shaped
/// network whose input and output are both the `n_cg` pilot CQIs.
pub fn train_interp_ae(
    cqi_samples: &[Vec<u8>],
    arch: &CqinetArch,
    pattern: &CsirsPattern,
    tcfg: &TrainConfig,
    train_idx: &[usize],
    val_idx: &[usize],
) -> Result<TrainOutcome> {
    if cqi_samples.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    let coarse_arch = CqinetArch {
        d6: pattern.n_cg(),
        d7: pattern.n_cg(),
        ..arch.clone()
    };
    coarse_arch.validate()?;
    let rows: Vec<Vec<f32>> = cqi_samples
        .iter()
        .map(|s| normalize(&pattern.gather(s), arch.c1))
        .collect();
    let inputs = Matrix::from_rows(&rows);
    let trows: Vec<Vec<f32>> = cqi_samples
        .iter()
        .map(|s| pattern.gather(s).iter().map(|&k| k as f32).collect())
        .collect();
    let targets = Matrix::from_rows(&trows);
    train_autoencoder(&inputs, &targets, train_idx, val_idx, &coarse_arch, tcfg)
}

/// Upsamples reconstructed coarse CQI to the full band by linear
/// interpolation over the subcarrier index, rounding halves down.
pub fn interp_baseline(coarse_cqi: &[f64], pattern: &CsirsPattern, max_cqi: u8) -> Vec<u8> {
    assert_eq!(coarse_cqi.len(), pattern.n_cg(), "one value per pilot required");
    let pos = pattern.positions();
    let n_c = pattern.n_subcarriers();
    let mut out = Vec::with_capacity(n_c);
    let mut seg = 0usize;
    for n in 1..=n_c {
        let v = if n <= pos[0] {
            coarse_cqi[0]
        } else if n >= *pos.last().unwrap() {
            *coarse_cqi.last().unwrap()
        } else {
            while pos[seg + 1] < n {
                seg += 1;
            }
            let (x0, x1) = (pos[seg] as f64, pos[seg + 1] as f64);
            let t = (n as f64 - x0) / (x1 - x0);
            coarse_cqi[seg] * (1.0 - t) + coarse_cqi[seg + 1] * t
        };
        // Round half down, then clamp to the CQI range.
        let k = (v - 0.5).ceil().clamp(0.0, max_cqi as f64);
        out.push(k as u8);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cqinet;
    use crate::link::CqiTable;
    use rand::SeedableRng;

    #[test]
    fn uniform_pattern_examples() {
        let two = CsirsPattern::uniform(624, 2).unwrap();
        assert_eq!(two.positions(), &[1, 624]);
        let thirteen = CsirsPattern::uniform(624, 13).unwrap();
        assert_eq!(thirteen.n_cg(), 13);
        assert_eq!(thirteen.positions()[0], 1);
        assert_eq!(*thirteen.positions().last().unwrap(), 624);
        // Spacing close to (624-1)/12.
        for w in thirteen.positions().windows(2) {
            let gap = w[1] - w[0];
            assert!((51..=53).contains(&gap), "gap {gap}");
        }
        let all = CsirsPattern::uniform(624, 624).unwrap();
        assert_eq!(all.positions().len(), 624);
        assert!(all.positions().iter().enumerate().all(|(i, &p)| p == i + 1));
        assert!(CsirsPattern::uniform(624, 1).is_err());
        assert!(CsirsPattern::uniform(624, 625).is_err());
    }

    #[test]
    fn pattern_parsing_and_validation() {
        let p = CsirsPattern::parse("# pilots\n1\n100\n624\n", 624).unwrap();
        assert_eq!(p.positions(), &[1, 100, 624]);
        assert!(CsirsPattern::parse("1\n624\n100\n", 624).is_err()); // not increasing
        assert!(CsirsPattern::parse("2\n624\n", 624).is_err()); // missing left edge
        assert!(CsirsPattern::parse("1\n625\n", 624).is_err()); // out of band
        assert!(CsirsPattern::parse("x\n", 624).is_err());
        assert!(CsirsPattern::parse("", 624).is_err());
    }

    #[test]
    fn coarse_input_examples() {
        let table = CqiTable::default();
        let model = BlerModel::from_table(&table);
        let pattern = CsirsPattern::new(vec![1, 2, 3], 3).unwrap();

        let flat = SnrVector::new(vec![4.0, 4.0, 4.0]).unwrap();
        let c = make_coarse_input(&flat, &pattern, CoarseKind::Snr, &model, 0.1, 4).unwrap();
        assert_eq!(c.values, vec![1.0, 1.0, 1.0]);

        let snrs = SnrVector::new(vec![2.0, 8.0, 4.0]).unwrap();
        let c = make_coarse_input(&snrs, &pattern, CoarseKind::Snr, &model, 0.1, 4).unwrap();
        assert_eq!(c.values, vec![0.25, 1.0, 0.5]);

        let zeros = SnrVector::new(vec![0.0, 0.0, 0.0]).unwrap();
        assert!(make_coarse_input(&zeros, &pattern, CoarseKind::Snr, &model, 0.1, 4).is_err());

        let high = SnrVector::new(vec![1e6, 1e6, 1e6]).unwrap();
        let c = make_coarse_input(&high, &pattern, CoarseKind::Cqi, &model, 0.1, 4).unwrap();
        assert!(c.values.iter().all(|&v| v == c.values[0]));
        assert_eq!(c.values[0], (15.0 + 0.5) / 16.0);
    }

    #[test]
    fn snr_normalization_is_scale_invariant() {
        let a = normalize_snr_linear(&[1.0, 3.0, 0.5]).unwrap();
        let b = normalize_snr_linear(&[7.0, 21.0, 3.5]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().cloned().fold(f32::MIN, f32::max), 1.0);
    }

    #[test]
    fn full_band_cqi_input_reduces_to_cqinet_architecture() {
        let arch = CqinetArch {
            d1: 20,
            d2: 10,
            d3: 4,
            d4: 10,
            d5: 20,
            d6: 32,
            d7: 32,
            ..CqinetArch::default()
        };
        let mut r1 = ChaCha8Rng::seed_from_u64(42);
        let mut r2 = ChaCha8Rng::seed_from_u64(42);
        let (enc_sr, dec_sr) = build_sr(&arch, 32, 0.03, &mut r1).unwrap();
        let (enc, dec) = cqinet::build(&arch, 0.03, &mut r2).unwrap();
        assert_eq!(enc_sr, enc);
        assert_eq!(dec_sr, dec);
    }

    #[test]
    fn encoder_input_scales_with_pilot_count() {
        let arch = CqinetArch {
            d1: 20,
            d2: 10,
            d3: 4,
            d4: 10,
            d5: 20,
            d6: 64,
            d7: 64,
            ..CqinetArch::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (enc8, _) = build_sr(&arch, 8, 0.0, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (enc16, _) = build_sr(&arch, 16, 0.0, &mut rng).unwrap();
        let diff = enc16.param_count() - enc8.param_count();
        assert_eq!(diff, 8 * arch.d1);
        assert_eq!(arch.codeword_bits(), 8);
    }

    #[test]
    fn interp_baseline_examples() {
        let pattern = CsirsPattern::new(vec![1, 624], 624).unwrap();
        let flat = interp_baseline(&[7.0, 7.0], &pattern, 15);
        assert!(flat.iter().all(|&k| k == 7));

        let ramp = interp_baseline(&[8.0, 12.0], &pattern, 15);
        assert_eq!(ramp[0], 8);
        assert_eq!(ramp[623], 12);
        // Midpoint of the band sits near 10.
        assert_eq!(ramp[311], 10);
        assert_eq!(ramp[312], 10);
        // Monotone input gives monotone output.
        assert!(ramp.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn interp_rounds_halves_down() {
        let pattern = CsirsPattern::new(vec![1, 3], 3).unwrap();
        // Middle point interpolates to exactly 8.5.
        let v = interp_baseline(&[8.0, 9.0], &pattern, 15);
        assert_eq!(v, vec![8, 8, 9]);
    }

    fn synthetic(n: usize, n_c: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<u8>>) {
        let mut snrs = Vec::with_capacity(n);
        let mut cqis = Vec::with_capacity(n);
        let mut s = seed;
        for _ in 0..n {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let phase = ((s >> 13) % 628) as f64 / 100.0;
            let level = 1.0 + ((s >> 33) % 64) as f64 / 16.0;
            let snr: Vec<f64> = (0..n_c)
                .map(|i| level * (2.0 + 1.8 * (i as f64 * 0.25 + phase).sin()))
                .collect();
            let cqi: Vec<u8> = snr.iter().map(|&v| (v * 2.0).round().clamp(0.0, 15.0) as u8).collect();
            snrs.push(snr);
            cqis.push(cqi);
        }
        (snrs, cqis)
    }

    #[test]
    fn sr_training_runs_and_is_deterministic() {
        let n_c = 24;
        let arch = CqinetArch {
            d1: 24,
            d2: 12,
            d3: 6,
            d4: 12,
            d5: 24,
            d6: n_c,
            d7: n_c,
            b1: 2,
            b2: 4,
            c1: 4,
        };
        let (snrs, cqis) = synthetic(40, n_c, 3);
        let pattern = CsirsPattern::uniform(n_c, 6).unwrap();
        let tcfg = TrainConfig {
            epochs: 12,
            batch_size: 8,
            seed: 5,
            ..TrainConfig::default()
        };
        let train_idx: Vec<usize> = (0..24).collect();
        let val_idx: Vec<usize> = (24..32).collect();
        let a = train_sr(&snrs, &cqis, &arch, &pattern, CoarseKind::Snr, &tcfg, &train_idx, &val_idx, false).unwrap();
        let b = train_sr(&snrs, &cqis, &arch, &pattern, CoarseKind::Snr, &tcfg, &train_idx, &val_idx, false).unwrap();
        assert_eq!(a.log, b.log);
        // Output range is the CQI range.
        let input = Matrix::from_rows(&[normalize_snr_linear(&pattern.gather(&snrs[35])).unwrap()]);
        let rec = cqinet::reconstruct_batch(&input, &a.encoder, &a.decoder, &arch, 8);
        assert_eq!(rec[0].len(), n_c);
        assert!(rec[0].iter().all(|&k| k <= 15));
    }

    #[test]
    fn sr_with_full_cqi_input_matches_cqinet_training_exactly() {
        let n_c = 16;
        let arch = CqinetArch {
            d1: 16,
            d2: 8,
            d3: 4,
            d4: 8,
            d5: 16,
            d6: n_c,
            d7: n_c,
            b1: 2,
            b2: 4,
            c1: 4,
        };
        let (snrs, cqis) = synthetic(30, n_c, 9);
        let pattern = CsirsPattern::uniform(n_c, n_c).unwrap();
        let tcfg = TrainConfig {
            epochs: 8,
            batch_size: 6,
            seed: 11,
            ..TrainConfig::default()
        };
        let train_idx: Vec<usize> = (0..18).collect();
        let val_idx: Vec<usize> = (18..24).collect();
        let sr = train_sr(&snrs, &cqis, &arch, &pattern, CoarseKind::Cqi, &tcfg, &train_idx, &val_idx, false).unwrap();
        let base = cqinet::train(&cqis, &arch, &tcfg, &train_idx, &val_idx).unwrap();
        assert_eq!(sr.log, base.log);
        assert_eq!(sr.encoder, base.encoder);
        assert_eq!(sr.decoder, base.decoder);
    }
}
