//! BPSK modulation, AWGN channel, LLR computation, and Monte Carlo BER runs.
//!
//! SNR is interpreted as Eb/N0: the per-dimension noise variance for a rate
//! k/n code is `1 / (2 (k/n) 10^(EbN0_dB/10))`. Every stochastic path derives
//! from an explicit seed; Monte Carlo frames use one counter-indexed RNG
//! stream per frame, so results do not depend on the worker count.

use crate::code::{puncture, CodeError, CodeFamily};
use crate::decoder::{decode_on_graph, DecoderParams, TannerGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("non-binary symbol {value} at position {index}")]
    NonBinarySymbol { index: usize, value: u8 },
    #[error("noise variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("codeword length {n_c} is not in the family ladder")]
    RateNotInLadder { n_c: usize },
    #[error("decoder grid is {got_checks}x{got_vars}, family needs {want_checks}x{want_vars}")]
    DecoderMismatch { got_checks: usize, got_vars: usize, want_checks: usize, want_vars: usize },
    #[error("stop rule must allow at least one frame")]
    EmptyStopRule,
    #[error(transparent)]
    Code(#[from] CodeError),
}

/// Channel operating point for one (rate, SNR) pair.
#[derive(Debug, Clone, Copy)]
pub struct ChannelConfig {
    pub ebn0_db: f64,
    pub k: usize,
    pub n_c: usize,
}

impl ChannelConfig {
    /// Per-dimension noise variance implied by Eb/N0 and the code rate.
    pub fn noise_variance(&self) -> f64 {
        noise_variance(self.k, self.n_c, self.ebn0_db)
    }
}

pub fn noise_variance(k: usize, n_c: usize, ebn0_db: f64) -> f64 {
    let rate = k as f64 / n_c as f64;
    1.0 / (2.0 * rate * 10f64.powf(ebn0_db / 10.0))
}

/// Eb/N0 (dB) that produces the given noise variance; handy for noiseless
/// sanity rows driven by a tiny sigma^2.
pub fn ebn0_db_for_noise_variance(k: usize, n_c: usize, sigma2: f64) -> f64 {
    let rate = k as f64 / n_c as f64;
    10.0 * (1.0 / (2.0 * rate * sigma2)).log10()
}

/// Maps bit 0 to +1.0 and bit 1 to -1.0.
pub fn bpsk_modulate(bits: &[u8]) -> Result<Vec<f64>, ChannelError> {
    bits.iter()
        .enumerate()
        .map(|(index, &b)| match b {
            0 => Ok(1.0),
            1 => Ok(-1.0),
            value => Err(ChannelError::NonBinarySymbol { index, value }),
        })
        .collect()
}

/// Adds i.i.d. Gaussian noise of the given variance.
pub fn awgn(
    symbols: &[f64],
    variance: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, ChannelError> {
    if variance <= 0.0 {
        return Err(ChannelError::NonPositiveVariance(variance));
    }
    let sigma = variance.sqrt();
    Ok(symbols.iter().map(|&s| s + sigma * rng.sample::<f64, _>(StandardNormal)).collect())
}

/// Channel LLRs for BPSK over AWGN: `L_i = 2 y_i / sigma^2`.
pub fn llr_awgn(received: &[f64], variance: f64) -> Result<Vec<f64>, ChannelError> {
    if variance <= 0.0 {
        return Err(ChannelError::NonPositiveVariance(variance));
    }
    // One multiply by a precomputed factor; the training path applies the
    // same single scale so forward values agree bit for bit.
    let factor = 2.0 / variance;
    Ok(received.iter().map(|&y| y * factor).collect())
}

/// Which decoder a BER run uses.
pub enum DecoderSpec<'a> {
    PlainBp { iterations: usize },
    Neural(&'a DecoderParams),
}

/// Early-stopping rule: run until `max_frames` or until `min_bit_errors`
/// have accumulated, whichever comes first (checked per round).
#[derive(Debug, Clone, Copy)]
pub struct StopRule {
    pub max_frames: u64,
    pub min_bit_errors: u64,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule { max_frames: 1_000_000, min_bit_errors: 100 }
    }
}

/// Counts for one (code, rate, SNR) Monte Carlo point.
#[derive(Debug, Clone, PartialEq)]
pub struct BerReport {
    pub code_id: String,
    pub k: usize,
    pub n_c: usize,
    pub ebn0_db: f64,
    pub frames: u64,
    pub bit_errors: u64,
    pub frame_errors: u64,
    pub wall_secs: f64,
}

impl BerReport {
    pub fn ber(&self) -> f64 {
        self.bit_errors as f64 / (self.frames as f64 * self.k as f64)
    }

    /// 95% binomial confidence half-width (normal approximation).
    pub fn ci95_half_width(&self) -> f64 {
        let n = self.frames as f64 * self.k as f64;
        let p = self.ber();
        1.96 * (p * (1.0 - p) / n).sqrt()
    }

    pub fn fer(&self) -> f64 {
        self.frame_errors as f64 / self.frames as f64
    }
}

/// Frames per synchronization round; stop rules are evaluated on round
/// boundaries so results are independent of the thread count.
const ROUND_FRAMES: u64 = 4096;

/// Monte Carlo BER of one family member at one Eb/N0 point.
///
/// Draws random messages (no all-zero shortcut), encodes with the family
/// generator, punctures, runs the channel, decodes with 5 (or the decoder's)
/// iterations and counts information-bit errors. Reproducible from `seed`.
pub fn ber_monte_carlo(
    code_id: &str,
    family: &CodeFamily,
    n_c: usize,
    decoder: &DecoderSpec<'_>,
    ebn0_db: f64,
    stop: StopRule,
    seed: u64,
) -> Result<BerReport, ChannelError> {
    if stop.max_frames == 0 {
        return Err(ChannelError::EmptyStopRule);
    }
    if !family.ladder().contains(&n_c) {
        return Err(ChannelError::RateNotInLadder { n_c });
    }
    let k = family.k();
    let m0 = family.n0() - k;
    let h_sub = family.subcode_h(n_c)?;
    let graph = TannerGraph::from_parity_check(&h_sub);
    let plain;
    let (params, cells): (&DecoderParams, usize) = match decoder {
        DecoderSpec::PlainBp { iterations } => {
            plain = DecoderParams::plain(*iterations, h_sub.rows(), h_sub.cols());
            (&plain, *iterations)
        }
        DecoderSpec::Neural(p) => {
            if p.checks() != m0 || p.vars() != family.n0() {
                return Err(ChannelError::DecoderMismatch {
                    got_checks: p.checks(),
                    got_vars: p.vars(),
                    want_checks: m0,
                    want_vars: family.n0(),
                });
            }
            (*p, p.cells())
        }
    };
    let sigma2 = ChannelConfig { ebn0_db, k, n_c }.noise_variance();
    if sigma2 <= 0.0 {
        return Err(ChannelError::NonPositiveVariance(sigma2));
    }
    let info_positions = family.info_positions();

    let start = std::time::Instant::now();
    let mut frames = 0u64;
    let mut bit_errors = 0u64;
    let mut frame_errors = 0u64;
    loop {
        let this_round = ROUND_FRAMES.min(stop.max_frames - frames);
        let (be, fe) = (frames..frames + this_round)
            .into_par_iter()
            .map(|frame| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(frame);
                let x: Vec<u8> = (0..k).map(|_| rng.random::<bool>() as u8).collect();
                let c = family.encode(&x).expect("message length fixed by family");
                let sub = puncture(&c, k, n_c).expect("rate validated");
                let s = bpsk_modulate(sub).expect("encoder output is binary");
                let y = awgn(&s, sigma2, &mut rng).expect("variance validated");
                let llr = llr_awgn(&y, sigma2).expect("variance validated");
                let (_, hard) = decode_on_graph(&llr, &graph, params, cells);
                let errs = info_positions
                    .iter()
                    .zip(&x)
                    .filter(|(&pos, &xi)| hard[pos] != xi)
                    .count() as u64;
                (errs, (errs > 0) as u64)
            })
            .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
        frames += this_round;
        bit_errors += be;
        frame_errors += fe;
        if frames >= stop.max_frames || bit_errors >= stop.min_bit_errors {
            break;
        }
    }

    Ok(BerReport {
        code_id: code_id.to_string(),
        k,
        n_c,
        ebn0_db,
        frames,
        bit_errors,
        frame_errors,
        wall_secs: start.elapsed().as_secs_f64(),
    })
}

/// Uncoded BPSK reference: returns the bit-error count over `total_bits`.
pub fn ber_uncoded(ebn0_db: f64, total_bits: u64, seed: u64) -> u64 {
    let sigma2 = 1.0 / (2.0 * 10f64.powf(ebn0_db / 10.0));
    let sigma = sigma2.sqrt();
    let chunk = 65_536u64;
    let chunks = total_bits.div_ceil(chunk);
    (0..chunks)
        .into_par_iter()
        .map(|ci| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(ci);
            let count = chunk.min(total_bits - ci * chunk);
            let mut errors = 0u64;
            for _ in 0..count {
                let bit = rng.random::<bool>();
                let s = if bit { -1.0 } else { 1.0 };
                let y = s + sigma * rng.sample::<f64, _>(StandardNormal);
                if (y < 0.0) != bit {
                    errors += 1;
                }
            }
            errors
        })
        .sum()
}
