//! Differentiable end-to-end code design.
//!
//! A real parameter matrix W is binarized by a hard step (sigmoid-derivative
//! surrogate backward) into the learnable entries of H. Encoding is computed
//! in bipolar form so each parity bit is an exact GF(2) value that is still
//! differentiable in the H entries; the channel noise enters the tape as
//! constants; the decoder runs the same generic cells as inference; the loss
//! is binary cross-entropy on the first k output LLRs. Two stages: a plain-BP
//! precode stage training W only, then a mixed-rate stage training W and the
//! decoder weights jointly with per-rate losses summed per optimizer step.

use crate::autodiff::{Gradients, Real, Tape, Var};
use crate::channel::noise_variance;
use crate::code::{CodeError, CodeFamily, MatrixStructure};
use crate::decoder::{run_cells, DecoderParams, TannerGraph, LLR_CLIP};
use crate::gf2::BitMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

/// Decoded bit probabilities are clamped to `[eps, 1 - eps]` inside the loss.
pub const BCE_CLAMP_EPS: f64 = 1e-7;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged: non-finite loss at epoch {epoch}, step {step}, rate index {rate}")]
    Diverged { epoch: usize, step: usize, rate: usize },
    #[error(transparent)]
    Code(#[from] CodeError),
}

/// Hard binarization applied to each coding parameter (w >= 0 maps to 1).
pub fn dsf_step(w: f64) -> bool {
    w >= 0.0
}

/// Real-valued parameters behind the learnable entries of H.
///
/// Lower-triangular structure: all of H1 plus the strictly lower part of H2.
/// Systematic structure: all of P. Parameters are stored row-major within
/// each H row (H1 block first, then the strictly lower block).
#[derive(Debug, Clone, PartialEq)]
pub struct CodingParams {
    structure: MatrixStructure,
    k: usize,
    checks: usize,
    w: Vec<f64>,
}

impl CodingParams {
    pub fn param_count(structure: MatrixStructure, k: usize, checks: usize) -> usize {
        match structure {
            MatrixStructure::Systematic => checks * k,
            MatrixStructure::LowerTriangular => checks * k + checks * (checks - 1) / 2,
            MatrixStructure::General => 0,
        }
    }

    /// Fresh parameters drawn uniformly from [-0.01, 0.01].
    pub fn init(
        structure: MatrixStructure,
        k: usize,
        checks: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, TrainError> {
        let count = Self::validated_count(structure, k, checks)?;
        let w = (0..count).map(|_| rng.random::<f64>() * 0.02 - 0.01).collect();
        Ok(CodingParams { structure, k, checks, w })
    }

    pub fn from_parts(
        structure: MatrixStructure,
        k: usize,
        checks: usize,
        w: Vec<f64>,
    ) -> Result<Self, TrainError> {
        let count = Self::validated_count(structure, k, checks)?;
        if w.len() != count {
            return Err(TrainError::InvalidConfig(format!(
                "expected {count} coding parameters, got {}",
                w.len()
            )));
        }
        Ok(CodingParams { structure, k, checks, w })
    }

    fn validated_count(
        structure: MatrixStructure,
        k: usize,
        checks: usize,
    ) -> Result<usize, TrainError> {
        if structure == MatrixStructure::General {
            return Err(TrainError::InvalidConfig(
                "learnable codes require a lower-triangular or systematic structure".into(),
            ));
        }
        if k == 0 || checks == 0 {
            return Err(TrainError::InvalidConfig("k and n0-k must be positive".into()));
        }
        Ok(Self::param_count(structure, k, checks))
    }

    pub fn structure(&self) -> MatrixStructure {
        self.structure
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn checks(&self) -> usize {
        self.checks
    }

    pub fn n0(&self) -> usize {
        self.k + self.checks
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn w_mut(&mut self) -> &mut [f64] {
        &mut self.w
    }

    /// The H position (row, col) of each parameter, in storage order.
    pub fn positions(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.w.len());
        for j in 0..self.checks {
            for i in 0..self.k {
                out.push((j, i));
            }
            if self.structure == MatrixStructure::LowerTriangular {
                for i in 0..j {
                    out.push((j, self.k + i));
                }
            }
        }
        out
    }

    /// Binarizes W and installs the fixed entries (unit diagonal, zero upper
    /// triangle, or the identity block).
    pub fn assemble_h(&self) -> BitMatrix {
        let n0 = self.n0();
        let mut h = BitMatrix::zeros(self.checks, n0);
        let mut wi = 0;
        for j in 0..self.checks {
            for i in 0..self.k {
                h.set(j, i, dsf_step(self.w[wi]));
                wi += 1;
            }
            match self.structure {
                MatrixStructure::LowerTriangular => {
                    for i in 0..j {
                        h.set(j, self.k + i, dsf_step(self.w[wi]));
                        wi += 1;
                    }
                    h.set(j, self.k + j, true);
                }
                MatrixStructure::Systematic => h.set(j, self.k + j, true),
                MatrixStructure::General => unreachable!(),
            }
        }
        h
    }

    /// Builds the family served by the current H.
    pub fn family(&self, ladder: Vec<usize>) -> Result<CodeFamily, CodeError> {
        CodeFamily::new(self.assemble_h(), ladder, self.structure)
    }
}

/// Tape-side mirror of [`CodingParams::assemble_h`]: leaves pass through the
/// step surrogate, fixed entries become constants.
fn assemble_h_vars<'t>(
    tape: &'t Tape,
    w_leaves: &[Var<'t>],
    structure: MatrixStructure,
    k: usize,
    checks: usize,
) -> Vec<Var<'t>> {
    let n0 = k + checks;
    let mut h = Vec::with_capacity(checks * n0);
    let mut wi = 0;
    for j in 0..checks {
        for _ in 0..k {
            h.push(w_leaves[wi].dsf());
            wi += 1;
        }
        match structure {
            MatrixStructure::LowerTriangular => {
                for _ in 0..j {
                    h.push(w_leaves[wi].dsf());
                    wi += 1;
                }
                h.push(tape.constant(1.0));
                for _ in j + 1..checks {
                    h.push(tape.constant(0.0));
                }
            }
            MatrixStructure::Systematic => {
                for i in 0..checks {
                    h.push(tape.constant(if i == j { 1.0 } else { 0.0 }));
                }
            }
            MatrixStructure::General => unreachable!(),
        }
    }
    debug_assert_eq!(wi, w_leaves.len());
    h
}

/// Differentiable parity bits via the bipolar product chain.
///
/// Each parity is `(1 - prod of (1 - 2 h b)) / 2` over its row's contributing
/// bits, which equals the exact GF(2) forward-substitution value while staying
/// smooth in the H entries. Only the first `count` parities are computed.
fn soft_encode<T: Real>(
    h: &[T],
    x: &[u8],
    k: usize,
    n0: usize,
    structure: MatrixStructure,
    count: usize,
) -> Vec<T> {
    let mut parities: Vec<T> = Vec::with_capacity(count);
    for j in 0..count {
        let row = j * n0;
        let mut s: Option<T> = None;
        for (i, &xi) in x.iter().enumerate() {
            // Message bits are constants; zero bits contribute a factor of 1
            // and no gradient.
            if xi == 1 {
                let term = h[row + i].scale(-2.0).add_const(1.0);
                s = Some(match s {
                    None => term,
                    Some(p) => p * term,
                });
            }
        }
        if structure == MatrixStructure::LowerTriangular {
            for (i, &p_prev) in parities.iter().enumerate() {
                let term = (h[row + k + i] * p_prev).scale(-2.0).add_const(1.0);
                s = Some(match s {
                    None => term,
                    Some(p) => p * term,
                });
            }
        }
        let p_j = match s {
            Some(s) => s.scale(-0.5).add_const(0.5),
            None => h[0].constant_like(0.0),
        };
        parities.push(p_j);
    }
    parities
}

/// Forward-only parity computation for explicitly given H entries.
pub fn soft_parities(
    h_entries: &[f64],
    x: &[u8],
    k: usize,
    n0: usize,
    structure: MatrixStructure,
    count: usize,
) -> Vec<f64> {
    soft_encode(h_entries, x, k, n0, structure, count)
}

/// Binary cross-entropy between decoded bit probabilities and the message.
///
/// Probability of bit 1 is `sigmoid(-O_i)`, clamped before the log.
fn bce<T: Real>(outputs: &[T], x: &[u8]) -> T {
    debug_assert_eq!(outputs.len(), x.len());
    let mut sum: Option<T> = None;
    for (&o, &bit) in outputs.iter().zip(x) {
        let p1 = (-o).sigmoid().clamp_prob(BCE_CLAMP_EPS);
        let ll = if bit == 1 { p1.ln() } else { (-p1).add_const(1.0).ln() };
        sum = Some(match sum {
            None => ll,
            Some(s) => s + ll,
        });
    }
    sum.expect("loss over empty message").scale(-1.0 / x.len() as f64)
}

/// Mean BCE over the first k decoder outputs.
pub fn bce_loss(output_first_k: &[f64], x: &[u8]) -> Result<f64, TrainError> {
    if output_first_k.len() != x.len() {
        return Err(TrainError::InvalidConfig(format!(
            "loss expects {} outputs, got {}",
            x.len(),
            output_first_k.len()
        )));
    }
    Ok(bce(output_first_k, x))
}

/// One rate's training batch: messages and pre-drawn channel noise.
#[derive(Debug, Clone)]
pub struct RateBatch {
    pub n_c: usize,
    pub sigma2: f64,
    pub messages: Vec<Vec<u8>>,
    pub noises: Vec<Vec<f64>>,
}

/// Mean batch loss for one rate: encode, puncture, channel, decode, BCE.
///
/// Shared by the recording and plain paths, so taped forward values equal the
/// plain forward pass bit for bit.
fn forward_batch<T: Real>(
    h: &[T],
    k: usize,
    n0: usize,
    structure: MatrixStructure,
    graph: &TannerGraph,
    alphas: &[Vec<T>],
    betas: Option<&[Vec<T>]>,
    batch: &RateBatch,
) -> T {
    let n_c = graph.n_vars();
    let m_c = graph.n_checks();
    debug_assert_eq!(n_c - k, m_c);
    let llr_factor = 2.0 / batch.sigma2;
    let mut sum: Option<T> = None;
    for (x, noise) in batch.messages.iter().zip(&batch.noises) {
        let parities = soft_encode(h, x, k, n0, structure, m_c);
        let mut llrs = Vec::with_capacity(n_c);
        for i in 0..n_c {
            let bit = if i < k { h[0].constant_like(x[i] as f64) } else { parities[i - k] };
            let llr = bit
                .scale(-2.0)
                .add_const(1.0) // BPSK: 0 -> +1, 1 -> -1
                .add_const(noise[i])
                .scale(llr_factor)
                .clamp_sym(LLR_CLIP);
            llrs.push(llr);
        }
        let outputs = run_cells(&llrs, graph, alphas, betas);
        let loss = bce(&outputs[..k], x);
        sum = Some(match sum {
            None => loss,
            Some(s) => s + loss,
        });
    }
    sum.expect("empty batch").scale(1.0 / batch.messages.len() as f64)
}

/// Loss and adjoints of one batch under the current parameters.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub loss: f64,
    pub w: Vec<f64>,
    /// Adjoints over the full decoder weight grid; `None` when the decoder
    /// weights were held constant.
    pub alpha: Option<Vec<f64>>,
}

fn validate_batch(
    coding: &CodingParams,
    decoder: &DecoderParams,
    batch: &RateBatch,
) -> Result<(), TrainError> {
    if decoder.checks() != coding.checks() || decoder.vars() != coding.n0() {
        return Err(TrainError::InvalidConfig(format!(
            "decoder grid {}x{} does not match code {}x{}",
            decoder.checks(),
            decoder.vars(),
            coding.checks(),
            coding.n0()
        )));
    }
    if batch.n_c <= coding.k() || batch.n_c > coding.n0() {
        return Err(TrainError::InvalidConfig(format!("batch length {} out of range", batch.n_c)));
    }
    if batch.messages.is_empty() || batch.messages.len() != batch.noises.len() {
        return Err(TrainError::InvalidConfig("batch message/noise counts differ".into()));
    }
    if batch.messages.iter().any(|m| m.len() != coding.k())
        || batch.noises.iter().any(|z| z.len() != batch.n_c)
    {
        return Err(TrainError::InvalidConfig("batch vector lengths are inconsistent".into()));
    }
    if batch.sigma2 <= 0.0 {
        return Err(TrainError::InvalidConfig("noise variance must be positive".into()));
    }
    Ok(())
}

/// Records one batch forward pass and returns exact adjoints of the relaxed
/// forward for W (and the decoder weights when `train_alpha` is set).
pub fn batch_gradients(
    coding: &CodingParams,
    decoder: &DecoderParams,
    train_alpha: bool,
    batch: &RateBatch,
) -> Result<BatchGradients, TrainError> {
    validate_batch(coding, decoder, batch)?;
    let (k, n0, m0) = (coding.k(), coding.n0(), coding.checks());
    let m_c = batch.n_c - k;

    let tape = Tape::with_capacity(1 << 16);
    let w_leaves: Vec<Var> = coding.w().iter().map(|&w| tape.leaf(w)).collect();
    let h_vars = assemble_h_vars(&tape, &w_leaves, coding.structure(), k, m0);

    // The batch shares one H; the graph is rebuilt from its bits.
    let h_bits = BitMatrix::from_fn(m0, n0, |j, i| h_vars[j * n0 + i].value() >= 0.5);
    let graph = TannerGraph::masked(&h_bits, m_c, batch.n_c);

    let alpha_leaves: Option<Vec<Var>> =
        train_alpha.then(|| decoder.alpha_values().iter().map(|&a| tape.leaf(a)).collect());
    let alphas: Vec<Vec<Var>> = (0..decoder.cells())
        .map(|l| {
            (0..graph.n_edges())
                .map(|e| {
                    let (i, j) = graph.edge_endpoints(e);
                    match &alpha_leaves {
                        Some(leaves) => leaves[decoder.grid_index(l, j, i)],
                        None => tape.constant(decoder.alpha(l, j, i)),
                    }
                })
                .collect()
        })
        .collect();
    let betas: Option<Vec<Vec<Var>>> = decoder.bias_enabled().then(|| {
        (0..decoder.cells())
            .map(|l| {
                (0..graph.n_edges())
                    .map(|e| {
                        let (i, j) = graph.edge_endpoints(e);
                        tape.constant(decoder.beta(l, j, i))
                    })
                    .collect()
            })
            .collect()
    });

    let loss = forward_batch(&h_vars, k, n0, coding.structure(), &graph, &alphas, betas.as_deref(), batch);
    let grads: Gradients = tape.backward(loss);

    Ok(BatchGradients {
        loss: loss.value(),
        w: w_leaves.iter().map(|&v| grads.wrt(v)).collect(),
        alpha: alpha_leaves.map(|leaves| leaves.iter().map(|&v| grads.wrt(v)).collect()),
    })
}

/// Mean batch loss for explicitly given (possibly perturbed) H entries,
/// decoding on a fixed graph. This is the relaxed forward that the tape
/// adjoints differentiate; finite-difference oracles probe it directly.
pub fn batch_loss_relaxed(
    h_entries: &[f64],
    k: usize,
    structure: MatrixStructure,
    graph: &TannerGraph,
    decoder: &DecoderParams,
    batch: &RateBatch,
) -> f64 {
    let n0 = decoder.vars();
    assert_eq!(h_entries.len(), decoder.checks() * n0);
    let alphas = decoder.edge_alphas(graph);
    let betas = decoder.edge_betas(graph);
    forward_batch(h_entries, k, n0, structure, graph, &alphas, betas.as_deref(), batch)
}

/// First and second moment estimates for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }
}

/// One bias-corrected Adam update (beta1 = 0.9, beta2 = 0.999, eps = 1e-8).
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainStage {
    Precode,
    RateCompatible,
}

impl TrainStage {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainStage::Precode => "precode",
            TrainStage::RateCompatible => "rc",
        }
    }

    /// RNG stream index; each stage owns an independent substream of the seed.
    fn rng_stream(&self) -> u64 {
        match self {
            TrainStage::Precode => 0,
            TrainStage::RateCompatible => 1,
        }
    }
}

impl std::str::FromStr for TrainStage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "precode" => Ok(TrainStage::Precode),
            "rc" => Ok(TrainStage::RateCompatible),
            other => Err(format!("unknown training stage '{other}'")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub stage: TrainStage,
    pub epochs: usize,
    pub batch_size: usize,
    pub vectors_per_epoch: usize,
    pub learning_rate: f64,
    /// `(n_c, ebn0_db)` pairs in ladder order (descending n_c); the i-th
    /// lowest rate trains at the i-th listed SNR.
    pub rate_snrs: Vec<(usize, f64)>,
    pub cells: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::InvalidConfig(msg));
        if self.batch_size == 0 || self.vectors_per_epoch == 0 {
            return fail("batch size and vectors per epoch must be positive".into());
        }
        if self.vectors_per_epoch % self.batch_size != 0 {
            return fail(format!(
                "batch size {} must divide vectors per epoch {}",
                self.batch_size, self.vectors_per_epoch
            ));
        }
        if self.learning_rate <= 0.0 {
            return fail("learning rate must be positive".into());
        }
        if self.cells == 0 {
            return fail("decoder must run at least one cell".into());
        }
        if self.rate_snrs.is_empty() {
            return fail("at least one (rate, SNR) pair is required".into());
        }
        if self.rate_snrs.windows(2).any(|w| w[0].0 <= w[1].0) {
            return fail("rate_snrs must be sorted by strictly decreasing length".into());
        }
        match self.stage {
            TrainStage::Precode if self.rate_snrs.len() != 1 => {
                fail("precode stage trains exactly one rate".into())
            }
            TrainStage::RateCompatible if self.rate_snrs.len() < 2 => {
                fail("rate-compatible stage needs at least two rates".into())
            }
            _ => Ok(()),
        }
    }
}

/// Everything needed to checkpoint and exactly resume a training run.
#[derive(Debug, Clone)]
pub struct TrainerState {
    pub stage: TrainStage,
    pub epochs_done: usize,
    pub coding: CodingParams,
    pub decoder: DecoderParams,
    pub adam_w: AdamState,
    pub adam_alpha: AdamState,
    pub rng_word_pos: u128,
}

/// Epoch-stepped training driver for one stage.
pub struct Trainer {
    cfg: TrainConfig,
    coding: CodingParams,
    decoder: DecoderParams,
    adam_w: AdamState,
    adam_alpha: AdamState,
    rng: ChaCha8Rng,
    epochs_done: usize,
}

impl Trainer {
    /// Stage 1: random W, decoder weights pinned at 1 (plain BP).
    pub fn new_precode(
        cfg: TrainConfig,
        k: usize,
        n0: usize,
        structure: MatrixStructure,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        if cfg.stage != TrainStage::Precode {
            return Err(TrainError::InvalidConfig("config stage must be 'precode'".into()));
        }
        if cfg.rate_snrs[0].0 != n0 {
            return Err(TrainError::InvalidConfig(format!(
                "precode trains at full length {n0}, config says {}",
                cfg.rate_snrs[0].0
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(cfg.stage.rng_stream());
        let coding = CodingParams::init(structure, k, n0 - k, &mut rng)?;
        let decoder = DecoderParams::plain(cfg.cells, n0 - k, n0);
        let (nw, na) = (coding.w().len(), decoder.alpha_values().len());
        Ok(Trainer {
            cfg,
            coding,
            decoder,
            adam_w: AdamState::new(nw),
            adam_alpha: AdamState::new(na),
            rng,
            epochs_done: 0,
        })
    }

    /// Stage 2: warm-started W, decoder weights trained jointly from 1.
    pub fn new_rc(cfg: TrainConfig, warm: CodingParams) -> Result<Self, TrainError> {
        cfg.validate()?;
        if cfg.stage != TrainStage::RateCompatible {
            return Err(TrainError::InvalidConfig("config stage must be 'rc'".into()));
        }
        if cfg.rate_snrs[0].0 != warm.n0() {
            return Err(TrainError::InvalidConfig(format!(
                "lowest rate must use the full length {}, config says {}",
                warm.n0(),
                cfg.rate_snrs[0].0
            )));
        }
        if cfg.rate_snrs.iter().any(|&(n_c, _)| n_c <= warm.k() || n_c > warm.n0()) {
            return Err(TrainError::InvalidConfig("trained lengths must lie in (k, n0]".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(cfg.stage.rng_stream());
        let decoder = DecoderParams::plain(cfg.cells, warm.checks(), warm.n0());
        let (nw, na) = (warm.w().len(), decoder.alpha_values().len());
        Ok(Trainer {
            cfg,
            coding: warm,
            decoder,
            adam_w: AdamState::new(nw),
            adam_alpha: AdamState::new(na),
            rng,
            epochs_done: 0,
        })
    }

    /// Restores a checkpointed trainer (bit-exact resume).
    pub fn from_state(cfg: TrainConfig, state: TrainerState) -> Result<Self, TrainError> {
        cfg.validate()?;
        if cfg.stage != state.stage {
            return Err(TrainError::InvalidConfig("checkpoint stage does not match config".into()));
        }
        if state.adam_w.m.len() != state.coding.w().len()
            || state.adam_alpha.m.len() != state.decoder.alpha_values().len()
        {
            return Err(TrainError::InvalidConfig("checkpoint state sizes are inconsistent".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(cfg.stage.rng_stream());
        rng.set_word_pos(state.rng_word_pos);
        Ok(Trainer {
            cfg,
            coding: state.coding,
            decoder: state.decoder,
            adam_w: state.adam_w,
            adam_alpha: state.adam_alpha,
            rng,
            epochs_done: state.epochs_done,
        })
    }

    pub fn state(&self) -> TrainerState {
        TrainerState {
            stage: self.cfg.stage,
            epochs_done: self.epochs_done,
            coding: self.coding.clone(),
            decoder: self.decoder.clone(),
            adam_w: self.adam_w.clone(),
            adam_alpha: self.adam_alpha.clone(),
            rng_word_pos: self.rng.get_word_pos(),
        }
    }

    pub fn cfg(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn coding(&self) -> &CodingParams {
        &self.coding
    }

    pub fn decoder(&self) -> &DecoderParams {
        &self.decoder
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn is_complete(&self) -> bool {
        self.epochs_done >= self.cfg.epochs
    }

    /// Runs one epoch; returns the mean loss per rate.
    ///
    /// Every optimizer step draws one fresh batch per rate (sequentially, for
    /// determinism), evaluates the rates in parallel, sums their gradients in
    /// rate order, and applies a single Adam update.
    pub fn run_epoch(&mut self) -> Result<Vec<f64>, TrainError> {
        let steps = self.cfg.vectors_per_epoch / self.cfg.batch_size;
        let n_rates = self.cfg.rate_snrs.len();
        let train_alpha = self.cfg.stage == TrainStage::RateCompatible;
        let k = self.coding.k();
        let mut loss_sums = vec![0.0; n_rates];

        for step in 0..steps {
            let mut batches = Vec::with_capacity(n_rates);
            for &(n_c, ebn0_db) in &self.cfg.rate_snrs {
                let sigma2 = noise_variance(k, n_c, ebn0_db);
                let sigma = sigma2.sqrt();
                let messages: Vec<Vec<u8>> = (0..self.cfg.batch_size)
                    .map(|_| (0..k).map(|_| self.rng.random::<bool>() as u8).collect())
                    .collect();
                let noises: Vec<Vec<f64>> = (0..self.cfg.batch_size)
                    .map(|_| {
                        (0..n_c)
                            .map(|_| sigma * self.rng.sample::<f64, _>(StandardNormal))
                            .collect()
                    })
                    .collect();
                batches.push(RateBatch { n_c, sigma2, messages, noises });
            }

            let results: Vec<BatchGradients> = batches
                .par_iter()
                .map(|b| batch_gradients(&self.coding, &self.decoder, train_alpha, b))
                .collect::<Result<_, _>>()?;

            let mut w_grads = vec![0.0; self.coding.w().len()];
            let mut a_grads = vec![0.0; self.decoder.alpha_values().len()];
            for (rate, res) in results.iter().enumerate() {
                if !res.loss.is_finite() {
                    return Err(TrainError::Diverged { epoch: self.epochs_done, step, rate });
                }
                loss_sums[rate] += res.loss;
                for (acc, g) in w_grads.iter_mut().zip(&res.w) {
                    *acc += g;
                }
                if let Some(a) = &res.alpha {
                    for (acc, g) in a_grads.iter_mut().zip(a) {
                        *acc += g;
                    }
                }
            }

            adam_step(self.coding.w_mut(), &w_grads, &mut self.adam_w, self.cfg.learning_rate);
            if train_alpha {
                adam_step(
                    self.decoder.alpha_values_mut(),
                    &a_grads,
                    &mut self.adam_alpha,
                    self.cfg.learning_rate,
                );
            }
        }

        self.epochs_done += 1;
        Ok(loss_sums.into_iter().map(|s| s / steps as f64).collect())
    }
}

/// Result of a completed training stage.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub coding: CodingParams,
    pub decoder: DecoderParams,
    /// Mean loss per rate for each epoch.
    pub epoch_losses: Vec<Vec<f64>>,
}

/// Runs the precode stage to completion (W only, plain BP decoder).
pub fn train_precode(
    cfg: &TrainConfig,
    k: usize,
    n0: usize,
    structure: MatrixStructure,
) -> Result<TrainOutcome, TrainError> {
    let mut trainer = Trainer::new_precode(cfg.clone(), k, n0, structure)?;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    while !trainer.is_complete() {
        epoch_losses.push(trainer.run_epoch()?);
    }
    Ok(TrainOutcome {
        coding: trainer.coding.clone(),
        decoder: trainer.decoder.clone(),
        epoch_losses,
    })
}

/// Runs the mixed-rate stage to completion (W and decoder weights jointly).
pub fn train_rc(cfg: &TrainConfig, warm: CodingParams) -> Result<TrainOutcome, TrainError> {
    let mut trainer = Trainer::new_rc(cfg.clone(), warm)?;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    while !trainer.is_complete() {
        epoch_losses.push(trainer.run_epoch()?);
    }
    Ok(TrainOutcome {
        coding: trainer.coding.clone(),
        decoder: trainer.decoder.clone(),
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gf2::solve_parity_lower_triangular;

    fn seeded(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn make_batch(
        rng: &mut ChaCha8Rng,
        k: usize,
        n_c: usize,
        sigma2: f64,
        frames: usize,
    ) -> RateBatch {
        let sigma = sigma2.sqrt();
        RateBatch {
            n_c,
            sigma2,
            messages: (0..frames)
                .map(|_| (0..k).map(|_| rng.random::<bool>() as u8).collect())
                .collect(),
            noises: (0..frames)
                .map(|_| (0..n_c).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect())
                .collect(),
        }
    }

    #[test]
    fn assemble_h_thresholds_and_fixed_entries() {
        // k = 2, m = 2, lower-triangular: 4 H1 entries + 1 strictly-lower entry.
        let w = vec![-0.005, 0.003, 0.0, -0.9, 0.7];
        let cp =
            CodingParams::from_parts(MatrixStructure::LowerTriangular, 2, 2, w).unwrap();
        let h = cp.assemble_h();
        let expect = BitMatrix::from_rows(&[vec![0, 1, 1, 0], vec![1, 0, 1, 1]]).unwrap();
        assert_eq!(h, expect);

        let wsys = vec![0.5, -0.5, -0.1, 0.1];
        let cp = CodingParams::from_parts(MatrixStructure::Systematic, 2, 2, wsys).unwrap();
        let h = cp.assemble_h();
        let expect = BitMatrix::from_rows(&[vec![1, 0, 1, 0], vec![0, 1, 0, 1]]).unwrap();
        assert_eq!(h, expect);
    }

    #[test]
    fn learned_h_always_has_full_row_rank() {
        let mut rng = seeded(50);
        for _ in 0..50 {
            let cp = CodingParams::init(MatrixStructure::LowerTriangular, 7, 8, &mut rng).unwrap();
            assert_eq!(cp.assemble_h().rank(), 8);
            let cp = CodingParams::init(MatrixStructure::Systematic, 7, 8, &mut rng).unwrap();
            assert_eq!(cp.assemble_h().rank(), 8);
        }
    }

    #[test]
    fn soft_parities_match_exact_encoding() {
        let mut rng = seeded(51);
        for _ in 0..200 {
            let (k, m) = (7usize, 8usize);
            let n0 = k + m;
            for structure in [MatrixStructure::LowerTriangular, MatrixStructure::Systematic] {
                let cp = CodingParams::init(structure, k, m, &mut rng).unwrap();
                let h = cp.assemble_h();
                let h_entries: Vec<f64> = (0..m)
                    .flat_map(|j| (0..n0).map(move |i| (j, i)))
                    .map(|(j, i)| h.get(j, i) as u8 as f64)
                    .collect();
                for _ in 0..50 {
                    let x: Vec<u8> = (0..k).map(|_| rng.random::<bool>() as u8).collect();
                    let soft = soft_parities(&h_entries, &x, k, n0, structure, m);
                    let h1 = h.top_left(m, k);
                    let h2 = BitMatrix::from_fn(m, m, |r, c| h.get(r, k + c));
                    let exact = solve_parity_lower_triangular(&h1, &h2, &x).unwrap();
                    for (s, e) in soft.iter().zip(&exact) {
                        assert_eq!(*s, *e as f64, "soft parity differs from GF(2)");
                    }
                }
            }
        }
    }

    #[test]
    fn single_parity_check_truth_table() {
        // One check over two message bits with all weights 1: p = x1 xor x2.
        let h_entries = vec![1.0, 1.0, 1.0];
        for (x1, x2) in [(0u8, 0u8), (0, 1), (1, 0), (1, 1)] {
            let p = soft_parities(&h_entries, &[x1, x2], 2, 3, MatrixStructure::Systematic, 1);
            assert_eq!(p[0], (x1 ^ x2) as f64);
        }
    }

    #[test]
    fn bce_reference_points() {
        let k = 5;
        let confident = bce_loss(&vec![20.0; k], &vec![0u8; k]).unwrap();
        assert!(confident < 1e-6, "{confident}");
        let uniform = bce_loss(&vec![0.0; k], &vec![1u8; k]).unwrap();
        assert!((uniform - std::f64::consts::LN_2).abs() < 1e-12);
        // Confidently wrong: clamp bounds the per-bit loss at -ln(1e-7).
        let wrong = bce_loss(&vec![-20.0; k], &vec![0u8; k]).unwrap();
        assert!((wrong - -(BCE_CLAMP_EPS.ln())).abs() < 1e-9, "{wrong}");
    }

    #[test]
    fn taped_forward_equals_plain_forward_bitwise() {
        let mut rng = seeded(52);
        for structure in [MatrixStructure::LowerTriangular, MatrixStructure::Systematic] {
            let cp = CodingParams::init(structure, 7, 8, &mut rng).unwrap();
            let decoder = DecoderParams::plain(5, 8, 15);
            let batch = make_batch(&mut rng, 7, 11, 0.4, 8);
            let taped = batch_gradients(&cp, &decoder, true, &batch).unwrap();

            let h = cp.assemble_h();
            let h_entries: Vec<f64> = (0..8)
                .flat_map(|j| (0..15).map(move |i| (j, i)))
                .map(|(j, i)| h.get(j, i) as u8 as f64)
                .collect();
            let graph = TannerGraph::masked(&h, 4, 11);
            let plain = batch_loss_relaxed(&h_entries, 7, structure, &graph, &decoder, &batch);
            assert_eq!(taped.loss.to_bits(), plain.to_bits());
        }
    }

    /// Central finite differences of the relaxed forward, chained through the
    /// step surrogate for W coordinates.
    fn fd_check(structure: MatrixStructure, seed: u64) {
        let mut rng = seeded(seed);
        let (k, m) = (7usize, 8usize);
        let n0 = k + m;
        let cp = CodingParams::init(structure, k, m, &mut rng).unwrap();
        let mut decoder = DecoderParams::plain(5, m, n0);
        for a in decoder.alpha_values_mut() {
            *a = 0.8 + 0.4 * rng.random::<f64>();
        }
        let batch = make_batch(&mut rng, k, 11, 0.5, 6);
        let grads = batch_gradients(&cp, &decoder, true, &batch).unwrap();

        let h_bits = cp.assemble_h();
        let graph = TannerGraph::masked(&h_bits, 11 - k, 11);
        let h_entries: Vec<f64> = (0..m)
            .flat_map(|j| (0..n0).map(move |i| (j, i)))
            .map(|(j, i)| h_bits.get(j, i) as u8 as f64)
            .collect();
        let eps = 1e-4;
        let positions = cp.positions();

        let mut checked = 0;
        // W coordinates: adjoint = (dLoss/dh at the binarized point) * sigma'(w).
        for (wi, &(row, col)) in positions.iter().enumerate().step_by(2) {
            let idx = row * n0 + col;
            let mut hp = h_entries.clone();
            hp[idx] += eps;
            let up = batch_loss_relaxed(&hp, k, structure, &graph, &decoder, &batch);
            hp[idx] -= 2.0 * eps;
            let down = batch_loss_relaxed(&hp, k, structure, &graph, &decoder, &batch);
            let dh = (up - down) / (2.0 * eps);
            let s = 1.0 / (1.0 + (-cp.w()[wi]).exp());
            let expected = dh * s * (1.0 - s);
            let got = grads.w[wi];
            let denom = expected.abs().max(got.abs());
            if denom > 1e-10 {
                assert!(
                    (expected - got).abs() / denom < 1e-3,
                    "W[{wi}] adjoint {got} vs fd {expected}"
                );
            }
            checked += 1;
        }
        // Alpha coordinates: plain central differences.
        let a_grads = grads.alpha.as_ref().unwrap();
        let total = decoder.alpha_values().len();
        for ai in (0..total).step_by(total / 60) {
            let orig = decoder.alpha_values()[ai];
            decoder.alpha_values_mut()[ai] = orig + eps;
            let up = batch_loss_relaxed(&h_entries, k, structure, &graph, &decoder, &batch);
            decoder.alpha_values_mut()[ai] = orig - eps;
            let down = batch_loss_relaxed(&h_entries, k, structure, &graph, &decoder, &batch);
            decoder.alpha_values_mut()[ai] = orig;
            let expected = (up - down) / (2.0 * eps);
            let got = a_grads[ai];
            let denom = expected.abs().max(got.abs());
            if denom > 1e-10 {
                assert!(
                    (expected - got).abs() / denom < 1e-3,
                    "alpha[{ai}] adjoint {got} vs fd {expected}"
                );
            }
            checked += 1;
        }
        assert!(checked >= 85, "only {checked} coordinates checked");
    }

    #[test]
    fn adjoints_match_finite_differences_lower_triangular() {
        fd_check(MatrixStructure::LowerTriangular, 53);
    }

    #[test]
    fn adjoints_match_finite_differences_systematic() {
        fd_check(MatrixStructure::Systematic, 54);
    }

    #[test]
    fn punctured_coordinates_receive_zero_gradient() {
        let mut rng = seeded(55);
        let cp = CodingParams::init(MatrixStructure::LowerTriangular, 7, 8, &mut rng).unwrap();
        let decoder = DecoderParams::plain(5, 8, 15);
        // Train only at n_c = 11: parity rows >= 4 are disconnected from the loss.
        let batch = make_batch(&mut rng, 7, 11, 0.5, 8);
        let grads = batch_gradients(&cp, &decoder, false, &batch).unwrap();
        let m_c = 11 - 7;
        for (wi, &(row, _)) in cp.positions().iter().enumerate() {
            if row >= m_c {
                assert_eq!(grads.w[wi], 0.0, "W[{wi}] in punctured row {row}");
            }
        }
        assert!(grads.w.iter().any(|&g| g != 0.0), "retained rows must see gradient");
    }

    #[test]
    fn mtl_gradient_sharing_is_local() {
        // Summed gradients over rates [15, 11] equal the low-rate-only
        // gradient on coordinates punctured at the higher rate.
        let mut rng = seeded(56);
        let cp = CodingParams::init(MatrixStructure::LowerTriangular, 7, 8, &mut rng).unwrap();
        let decoder = DecoderParams::plain(5, 8, 15);
        let full = make_batch(&mut rng, 7, 15, 0.5, 8);
        let hi = make_batch(&mut rng, 7, 11, 0.4, 8);
        let g_full = batch_gradients(&cp, &decoder, false, &full).unwrap();
        let g_hi = batch_gradients(&cp, &decoder, false, &hi).unwrap();
        let m_c_hi = 11 - 7;
        for (wi, &(row, _)) in cp.positions().iter().enumerate() {
            let summed = g_full.w[wi] + g_hi.w[wi];
            if row >= m_c_hi {
                assert_eq!(
                    summed, g_full.w[wi],
                    "coordinate {wi} must only receive the low-rate gradient"
                );
            }
        }
    }

    #[test]
    fn noiseless_correct_decoding_gives_vanishing_alpha_gradient() {
        let mut rng = seeded(57);
        let cp = CodingParams::init(MatrixStructure::LowerTriangular, 7, 8, &mut rng).unwrap();
        let decoder = DecoderParams::plain(5, 8, 15);
        let batch = RateBatch {
            n_c: 15,
            sigma2: 1e-4,
            messages: (0..8).map(|_| (0..7).map(|_| rng.random::<bool>() as u8).collect()).collect(),
            noises: vec![vec![0.0; 15]; 8],
        };
        let grads = batch_gradients(&cp, &decoder, true, &batch).unwrap();
        for (i, g) in grads.alpha.unwrap().iter().enumerate() {
            assert!(g.abs() < 1e-4, "alpha[{i}] gradient {g}");
        }
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut p = vec![0.3, -0.7];
        let mut st = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut st, 0.001);
        assert_eq!(p, vec![0.3, -0.7]);
    }

    #[test]
    fn adam_first_step_magnitude() {
        // Bias-corrected first step moves by ~lr regardless of gradient scale.
        for g in [1e-3, 1.0, 250.0] {
            let mut p = vec![0.0];
            let mut st = AdamState::new(1);
            adam_step(&mut p, &[g], &mut st, 0.001);
            assert!((p[0] + 0.001).abs() < 1e-8, "step for g={g} was {}", p[0]);
        }
    }

    #[test]
    fn adam_hand_computed_second_step() {
        // Constant gradient 2.0, lr = 0.1. By hand, both bias-corrected steps
        // give m_hat = 2 and v_hat = 4, so each update is lr * 2/(2 + eps).
        let (lr, g) = (0.1, 2.0);
        let mut p = vec![0.0];
        let mut st = AdamState::new(1);
        adam_step(&mut p, &[g], &mut st, lr);
        adam_step(&mut p, &[g], &mut st, lr);
        let expected = -2.0 * lr * 2.0 / (2.0 + ADAM_EPS);
        assert!((p[0] - expected).abs() < 1e-12, "{} vs {expected}", p[0]);
    }

    fn smoke_cfg(stage: TrainStage, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            stage,
            epochs,
            batch_size: 32,
            vectors_per_epoch: 128,
            learning_rate: 0.001,
            rate_snrs: match stage {
                TrainStage::Precode => vec![(15, 2.0)],
                TrainStage::RateCompatible => vec![(15, 2.0), (11, 3.0)],
            },
            cells: 5,
            seed,
        }
    }

    #[test]
    fn precode_training_reduces_loss() {
        let cfg = smoke_cfg(TrainStage::Precode, 50, 60);
        let out = train_precode(&cfg, 7, 15, MatrixStructure::LowerTriangular).unwrap();
        let first = out.epoch_losses.first().unwrap()[0];
        let last = out.epoch_losses.last().unwrap()[0];
        assert!(last < first, "loss did not improve: {first} -> {last}");
        assert_eq!(out.coding.assemble_h().rank(), 8);
    }

    #[test]
    fn rc_training_reduces_loss_at_both_rates() {
        let pre = smoke_cfg(TrainStage::Precode, 30, 61);
        let warm = train_precode(&pre, 7, 15, MatrixStructure::LowerTriangular).unwrap();
        let cfg = smoke_cfg(TrainStage::RateCompatible, 60, 61);
        let out = train_rc(&cfg, warm.coding).unwrap();
        for rate in 0..2 {
            let first = out.epoch_losses.first().unwrap()[rate];
            let last = out.epoch_losses.last().unwrap()[rate];
            assert!(last < first, "rate {rate}: {first} -> {last}");
        }
    }

    #[test]
    fn structure_is_preserved_under_training() {
        let cfg = smoke_cfg(TrainStage::Precode, 5, 62);
        let out = train_precode(&cfg, 7, 15, MatrixStructure::LowerTriangular).unwrap();
        let h = out.coding.assemble_h();
        for j in 0..8 {
            assert!(h.get(j, 7 + j), "unit diagonal lost at row {j}");
            for i in j + 1..8 {
                assert!(!h.get(j, 7 + i), "upper triangle set at ({j},{i})");
            }
        }
    }

    #[test]
    fn training_is_seed_deterministic() {
        let cfg = smoke_cfg(TrainStage::Precode, 8, 63);
        let a = train_precode(&cfg, 7, 15, MatrixStructure::LowerTriangular).unwrap();
        let b = train_precode(&cfg, 7, 15, MatrixStructure::LowerTriangular).unwrap();
        assert_eq!(a.coding, b.coding);
        assert_eq!(a.epoch_losses, b.epoch_losses);
    }

    #[test]
    fn checkpoint_resume_is_bit_exact() {
        let cfg = smoke_cfg(TrainStage::RateCompatible, 8, 64);
        let mut rng = seeded(64);
        let warm = CodingParams::init(MatrixStructure::LowerTriangular, 7, 8, &mut rng).unwrap();

        let mut uninterrupted = Trainer::new_rc(cfg.clone(), warm.clone()).unwrap();
        for _ in 0..8 {
            uninterrupted.run_epoch().unwrap();
        }

        let mut first_half = Trainer::new_rc(cfg.clone(), warm).unwrap();
        for _ in 0..3 {
            first_half.run_epoch().unwrap();
        }
        let snapshot = first_half.state();
        drop(first_half);
        let mut resumed = Trainer::from_state(cfg, snapshot).unwrap();
        for _ in 0..5 {
            resumed.run_epoch().unwrap();
        }

        assert_eq!(resumed.coding(), uninterrupted.coding());
        assert_eq!(resumed.decoder(), uninterrupted.decoder());
    }

    #[test]
    fn config_validation() {
        let mut cfg = smoke_cfg(TrainStage::Precode, 1, 0);
        cfg.vectors_per_epoch = 100; // not divisible by 32
        assert!(matches!(cfg.validate(), Err(TrainError::InvalidConfig(_))));

        let mut cfg = smoke_cfg(TrainStage::Precode, 1, 0);
        cfg.rate_snrs = vec![(15, 2.0), (11, 3.0)];
        assert!(cfg.validate().is_err(), "precode must reject multiple rates");

        let mut cfg = smoke_cfg(TrainStage::RateCompatible, 1, 0);
        cfg.rate_snrs = vec![(15, 2.0)];
        assert!(cfg.validate().is_err(), "rc stage needs at least two rates");
    }
}
