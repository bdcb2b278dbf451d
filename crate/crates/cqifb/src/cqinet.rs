//! Quantized autoencoder for per-subcarrier CQI feedback: the encoder runs at
//! the UE and emits a packed low-rate codeword, the decoder reconstructs the
//! full CQI vector at the BS.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    adam_step, loss_cqinet, quantize_value, AdamState, Layer, Matrix, NetworkModel, TrainConfig, LEAKY_SLOPE,
};

/// Layer widths and bit allocations of the autoencoder.
///
/// `d6 = d7` equal the subcarrier count; `d3 * b1` is the codeword size in
/// bits; `b2` quantizes the decoder output before denormalization; `c1` is
/// the CQI index width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CqinetArch {
    pub d1: usize,
    pub d2: usize,
    pub d3: usize,
    pub d4: usize,
    pub d5: usize,
    pub d6: usize,
    pub d7: usize,
    pub b1: u32,
    pub b2: u32,
    pub c1: u8,
}

impl Default for CqinetArch {
    fn default() -> Self {
        CqinetArch {
            d1: 300,
            d2: 100,
            d3: 15,
            d4: 100,
            d5: 300,
            d6: 624,
            d7: 624,
            b1: 2,
            b2: 4,
            c1: 4,
        }
    }
}

impl CqinetArch {
    pub fn validate(&self) -> Result<()> {
        if self.d6 != self.d7 {
            return Err(Error::invalid("d6 and d7 must both equal the subcarrier count"));
        }
        for (name, v) in [
            ("d1", self.d1),
            ("d2", self.d2),
            ("d3", self.d3),
            ("d4", self.d4),
            ("d5", self.d5),
            ("d6", self.d6),
            ("d7", self.d7),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.b1 == 0 || self.b1 > 16 || self.b2 == 0 || self.b2 > 16 {
            return Err(Error::invalid("quantizer widths must be in 1..=16"));
        }
        if self.c1 == 0 || self.c1 > 7 {
            return Err(Error::invalid("c1 must be in 1..=7"));
        }
        Ok(())
    }

    /// Feedback overhead in bits: the codeword is `d3` fields of `b1` bits.
    pub fn codeword_bits(&self) -> usize {
        self.d3 * self.b1 as usize
    }

    pub fn max_cqi(&self) -> u8 {
        (1u16 << self.c1) as u8 - 1
    }
}

/// Maps integer CQI into (0, 1): `(k + 0.5) / 2^c1`.
pub fn normalize(k: &[u8], c1: u8) -> Vec<f32> {
    let scale = (1u32 << c1) as f32;
    k.iter()
        .map(|&v| {
            debug_assert!((v as u32) < (1u32 << c1), "CQI {v} out of range");
            (v as f32 + 0.5) / scale
        })
        .collect()
}

/// Inverse of [`normalize`]: quantize to `b2` bits, scale back, and round to
/// the integer grid. With `b2 = c1` every CQI index is reproduced exactly.
pub fn denormalize(v: &[f32], c1: u8, b2: u32) -> Vec<u8> {
    let scale = (1u32 << c1) as f32;
    let max = scale - 1.0;
    v.iter()
        .map(|&x| {
            let q = quantize_value(x, b2);
            (q * scale - 0.5).round().clamp(0.0, max) as u8
        })
        .collect()
}

/// Continuous denormalization used by the training loss: scale to CQI units
/// without the output quantizer.
fn denormalize_continuous(out: &Matrix, c1: u8) -> Matrix {
    let scale = (1u32 << c1) as f32;
    out.map(|v| v * scale - 0.5)
}

/// Builds the encoder and decoder stacks.
///
/// The encoder takes `encoder_in` values through three dense blocks into a
/// `d3`-wide sigmoid bottleneck quantized at `b1` bits. The decoder mirrors
/// it through `d4`/`d5`/`d6` and a final `d6 -> d7` dense under a sigmoid,
/// with a shortcut carrying the `d5 -> d6` dense output (pre-activation)
/// into the final dense input.
pub fn build_networks(
    arch: &CqinetArch,
    encoder_in: usize,
    dropout_rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(NetworkModel, NetworkModel)> {
    build_networks_with_shortcut(arch, encoder_in, dropout_rate, rng, DECODER_SHORTCUT)
}

/// Decoder shortcut wiring: saves the `d5 -> d6` dense output and adds it to
/// the final dense layer's input.
const DECODER_SHORTCUT: (usize, usize) = (8, 12);

fn build_networks_with_shortcut(
    arch: &CqinetArch,
    encoder_in: usize,
    dropout_rate: f64,
    rng: &mut ChaCha8Rng,
    shortcut: (usize, usize),
) -> Result<(NetworkModel, NetworkModel)> {
    arch.validate()?;
    if encoder_in == 0 {
        return Err(Error::invalid("encoder input width must be positive"));
    }
    let rate = dropout_rate as f32;
    let encoder = NetworkModel::new(
        vec![
            Layer::dense_init(encoder_in, arch.d1, rng),
            Layer::batch_norm(arch.d1),
            Layer::LeakyRelu { slope: LEAKY_SLOPE },
            Layer::Dropout { rate },
            Layer::dense_init(arch.d1, arch.d2, rng),
            Layer::batch_norm(arch.d2),
            Layer::LeakyRelu { slope: LEAKY_SLOPE },
            Layer::Dropout { rate },
            Layer::dense_init(arch.d2, arch.d3, rng),
            Layer::batch_norm(arch.d3),
            Layer::Sigmoid,
            Layer::Quantize { bits: arch.b1 },
        ],
        None,
        encoder_in,
    )?;
    let decoder = NetworkModel::new(
        vec![
            Layer::dense_init(arch.d3, arch.d4, rng),
            Layer::batch_norm(arch.d4),
            Layer::LeakyRelu { slope: LEAKY_SLOPE },
            Layer::Dropout { rate },
            Layer::dense_init(arch.d4, arch.d5, rng),
            Layer::batch_norm(arch.d5),
            Layer::LeakyRelu { slope: LEAKY_SLOPE },
            Layer::Dropout { rate },
            Layer::dense_init(arch.d5, arch.d6, rng),
            Layer::batch_norm(arch.d6),
            Layer::LeakyRelu { slope: LEAKY_SLOPE },
            Layer::Dropout { rate },
            Layer::dense_init(arch.d6, arch.d7, rng),
            Layer::Sigmoid,
        ],
        Some(shortcut),
        arch.d3,
    )?;
    Ok((encoder, decoder))
}

/// Builds the CQInet pair: full-band CQI in, full-band CQI out.
pub fn build(arch: &CqinetArch, dropout_rate: f64, rng: &mut ChaCha8Rng) -> Result<(NetworkModel, NetworkModel)> {
    build_networks(arch, arch.d6, dropout_rate, rng)
}

/// Experiment hook: trains with an explicit decoder shortcut wiring.
#[doc(hidden)]
pub fn train_autoencoder_with_shortcut_probe(
    inputs: &Matrix,
    targets: &Matrix,
    train_idx: &[usize],
    val_idx: &[usize],
    arch: &CqinetArch,
    tcfg: &TrainConfig,
    shortcut: (usize, usize),
) -> Result<TrainOutcome> {
    train_autoencoder_inner(inputs, targets, train_idx, val_idx, arch, tcfg, shortcut)
}

/// Per-epoch training log entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Trained models plus the validation trace that selected them.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub encoder: NetworkModel,
    pub decoder: NetworkModel,
    pub log: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

fn gather_rows(m: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(idx.len(), m.cols());
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(m.row(i));
    }
    out
}

/// Core training loop shared by CQInet and its super-resolution variant.
///
/// `inputs` are normalized encoder inputs, `targets` the integer CQI ground
/// truth in CQI units. Minimizes the asymmetric loss on the training split
/// and returns the weights from the best-validation epoch. The run is fully
/// deterministic for a fixed `tcfg.seed`.
pub(crate) fn train_autoencoder(
    inputs: &Matrix,
    targets: &Matrix,
    train_idx: &[usize],
    val_idx: &[usize],
    arch: &CqinetArch,
    tcfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_autoencoder_inner(inputs, targets, train_idx, val_idx, arch, tcfg, DECODER_SHORTCUT)
}

fn train_autoencoder_inner(
    inputs: &Matrix,
    targets: &Matrix,
    train_idx: &[usize],
    val_idx: &[usize],
    arch: &CqinetArch,
    tcfg: &TrainConfig,
    shortcut: (usize, usize),
) -> Result<TrainOutcome> {
    tcfg.validate()?;
    arch.validate()?;
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::invalid("training and validation splits must be non-empty"));
    }
    if targets.cols() != arch.d7 {
        return Err(Error::invalid("target width must equal d7"));
    }
    let scale = (1u32 << arch.c1) as f32;
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let (mut encoder, mut decoder) =
        build_networks_with_shortcut(arch, inputs.cols(), tcfg.dropout_rate, &mut rng, shortcut)?;
    let mut enc_state = AdamState::new(&encoder);
    let mut dec_state = AdamState::new(&decoder);

    let mut best: Option<(NetworkModel, NetworkModel)> = None;
    let mut best_epoch = 0usize;
    let mut best_val = f64::INFINITY;
    let mut log = Vec::with_capacity(tcfg.epochs);
    let mut order: Vec<usize> = train_idx.to_vec();
    let mut step = 0u64;

    // Fixed calibration subset: batch-norm running averages lag the weights
    // they were tracked under, so every epoch replaces them with population
    // moments measured under the post-epoch weights before validating.
    let calib_count = train_idx.len().min(10 * tcfg.batch_size);
    let calib_batches: Vec<Matrix> = train_idx[..calib_count]
        .chunks(tcfg.batch_size)
        .map(|chunk| gather_rows(inputs, chunk))
        .collect();

    for epoch in 1..=tcfg.epochs {
        order.shuffle(&mut rng);
        let mut train_loss_sum = 0.0;
        let mut train_count = 0usize;
        for chunk in order.chunks(tcfg.batch_size) {
            let x = gather_rows(inputs, chunk);
            let t = gather_rows(targets, chunk);
            let enc_cache = encoder.forward_train(&x, &mut rng);
            let dec_cache = decoder.forward_train(enc_cache.output(), &mut rng);
            let pred = denormalize_continuous(dec_cache.output(), arch.c1);
            let (loss, dpred) = loss_cqinet(&pred, &t, tcfg.alpha);
            let dout = dpred.map(|g| g * scale);
            let (dec_grads, dcode) = decoder.backward(&dec_cache, &dout);
            let (enc_grads, _) = encoder.backward(&enc_cache, &dcode);
            step += 1;
            adam_step(&mut decoder, &dec_grads, &mut dec_state, tcfg, step);
            adam_step(&mut encoder, &enc_grads, &mut enc_state, tcfg, step);
            train_loss_sum += loss * chunk.len() as f64;
            train_count += chunk.len();
        }
        encoder.recalibrate_batchnorm(&calib_batches);
        let code_batches: Vec<Matrix> = calib_batches.iter().map(|b| encoder.forward_eval(b)).collect();
        decoder.recalibrate_batchnorm(&code_batches);
        let val_loss = validation_loss(&encoder, &decoder, inputs, targets, val_idx, arch, tcfg);
        log.push(EpochStats {
            epoch,
            train_loss: train_loss_sum / train_count as f64,
            val_loss,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best = Some((encoder.clone(), decoder.clone()));
        }
        if let Some(patience) = tcfg.plateau_patience {
            if epoch - best_epoch >= patience {
                break;
            }
        }
    }
    let (mut enc_best, mut dec_best) = best.expect("at least one epoch ran");
    // The returned model gets its population statistics from the full
    // training split; the per-epoch subset is only a selection proxy.
    let full_batches: Vec<Matrix> = train_idx
        .chunks(tcfg.batch_size)
        .map(|chunk| gather_rows(inputs, chunk))
        .collect();
    enc_best.recalibrate_batchnorm(&full_batches);
    let code_batches: Vec<Matrix> = full_batches.iter().map(|b| enc_best.forward_eval(b)).collect();
    dec_best.recalibrate_batchnorm(&code_batches);
    let best_val = validation_loss(&enc_best, &dec_best, inputs, targets, val_idx, arch, tcfg);
    Ok(TrainOutcome {
        encoder: enc_best,
        decoder: dec_best,
        log,
        best_epoch,
        best_val_loss: best_val,
    })
}

fn validation_loss(
    encoder: &NetworkModel,
    decoder: &NetworkModel,
    inputs: &Matrix,
    targets: &Matrix,
    val_idx: &[usize],
    arch: &CqinetArch,
    tcfg: &TrainConfig,
) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for chunk in val_idx.chunks(tcfg.batch_size) {
        let x = gather_rows(inputs, chunk);
        let t = gather_rows(targets, chunk);
        let out = decoder.forward_eval(&encoder.forward_eval(&x));
        let pred = denormalize_continuous(&out, arch.c1);
        let (loss, _) = loss_cqinet(&pred, &t, tcfg.alpha);
        sum += loss * chunk.len() as f64;
        count += chunk.len();
    }
    sum / count as f64
}

/// Trains CQInet on per-subcarrier CQI samples using the given index splits.
pub fn train(
    samples: &[Vec<u8>],
    arch: &CqinetArch,
    tcfg: &TrainConfig,
    train_idx: &[usize],
    val_idx: &[usize],
) -> Result<TrainOutcome> {
    if samples.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    arch.validate()?;
    for s in samples {
        if s.len() != arch.d6 {
            return Err(Error::invalid("sample length must equal the subcarrier count"));
        }
    }
    let rows: Vec<Vec<f32>> = samples.iter().map(|s| normalize(s, arch.c1)).collect();
    let inputs = Matrix::from_rows(&rows);
    let trows: Vec<Vec<f32>> = samples.iter().map(|s| s.iter().map(|&k| k as f32).collect()).collect();
    let targets = Matrix::from_rows(&trows);
    train_autoencoder(&inputs, &targets, train_idx, val_idx, arch, tcfg)
}

/// Quantized codeword: `d3` values on the `2^b1`-level grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Codeword {
    values: Vec<f32>,
    bits: u32,
}

impl Codeword {
    pub fn from_values(values: Vec<f32>, bits: u32) -> Self {
        Codeword { values, bits }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn bit_len(&self) -> usize {
        self.values.len() * self.bits as usize
    }

    /// Packs the quantizer levels MSB-first into bytes.
    pub fn pack(&self) -> Vec<u8> {
        let levels = (1u32 << self.bits) as f32;
        let mut out = Vec::with_capacity(self.bit_len().div_ceil(8));
        let mut acc = 0u8;
        let mut used = 0u32;
        for &v in &self.values {
            let m = ((v * levels - 0.5).round().clamp(0.0, levels - 1.0)) as u32;
            for bit in (0..self.bits).rev() {
                acc = (acc << 1) | ((m >> bit) & 1) as u8;
                used += 1;
                if used == 8 {
                    out.push(acc);
                    acc = 0;
                    used = 0;
                }
            }
        }
        if used > 0 {
            out.push(acc << (8 - used));
        }
        out
    }

    /// Reverses [`Codeword::pack`] given the field count and width.
    pub fn unpack(bytes: &[u8], d3: usize, bits: u32) -> Result<Self> {
        if bits == 0 || bits > 16 {
            return Err(Error::invalid("codeword bits must be in 1..=16"));
        }
        let total_bits = d3 * bits as usize;
        if bytes.len() != total_bits.div_ceil(8) {
            return Err(Error::format(format!(
                "codeword length mismatch: expected {} bytes for {d3} fields of {bits} bits",
                total_bits.div_ceil(8)
            )));
        }
        // Trailing pad bits must be zero.
        let pad = bytes.len() * 8 - total_bits;
        if pad > 0 && bytes[bytes.len() - 1] & ((1u8 << pad) - 1) != 0 {
            return Err(Error::format("nonzero padding in codeword"));
        }
        let levels = (1u32 << bits) as f32;
        let mut values = Vec::with_capacity(d3);
        let mut bitpos = 0usize;
        for _ in 0..d3 {
            let mut m = 0u32;
            for _ in 0..bits {
                let byte = bytes[bitpos / 8];
                let bit = (byte >> (7 - bitpos % 8)) & 1;
                m = (m << 1) | bit as u32;
                bitpos += 1;
            }
            values.push((m as f32 + 0.5) / levels);
        }
        Ok(Codeword { values, bits })
    }
}

/// Eval-mode compression and reconstruction of one CQI vector.
pub fn infer(k: &[u8], encoder: &NetworkModel, decoder: &NetworkModel, arch: &CqinetArch) -> (Codeword, Vec<u8>) {
    let input = Matrix::from_rows(&[normalize(k, arch.c1)]);
    let code = encoder.forward_eval(&input);
    let out = decoder.forward_eval(&code);
    let reconstructed = denormalize(out.row(0), arch.c1, arch.b2);
    (Codeword::from_values(code.row(0).to_vec(), arch.b1), reconstructed)
}

/// Batched eval-mode reconstruction: one row of integer CQI per input row.
pub fn reconstruct_batch(
    inputs: &Matrix,
    encoder: &NetworkModel,
    decoder: &NetworkModel,
    arch: &CqinetArch,
    batch_size: usize,
) -> Vec<Vec<u8>> {
    let mut out = Vec::with_capacity(inputs.rows());
    let idx: Vec<usize> = (0..inputs.rows()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let x = gather_rows(inputs, chunk);
        let y = decoder.forward_eval(&encoder.forward_eval(&x));
        for r in 0..y.rows() {
            out.push(denormalize(y.row(r), arch.c1, arch.b2));
        }
    }
    out
}
