//! Experiment configuration: one versioned TOML file drives every subcommand.

use crate::error::CliError;
use rclbc::code::MatrixStructure;
use serde::Deserialize;
use std::path::{Path, PathBuf};

pub const CONFIG_VERSION: u64 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u64,
    pub seed: u64,
    pub code: CodeSection,
    pub train: Option<TrainSection>,
    pub eval: Option<EvalSection>,
    pub compare: Option<CompareSection>,
    #[serde(skip)]
    pub sha256: String,
    #[serde(skip)]
    pub stem: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeSection {
    /// "learnable" or "baseline".
    pub kind: String,
    pub structure: Option<String>,
    pub k: Option<usize>,
    pub ladder: Option<Vec<usize>>,
    /// Baseline spec: "bch:n,k" or "alist:path".
    pub baseline: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub precode_epochs: usize,
    #[serde(default)]
    pub rc_epochs: usize,
    pub batch_size: usize,
    pub vectors_per_epoch: usize,
    pub learning_rate: f64,
    /// One training SNR per ladder entry, lowest rate (longest word) first.
    pub snrs_db: Vec<f64>,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    #[serde(default = "default_cells")]
    pub cells: usize,
}

fn default_checkpoint_every() -> usize {
    250
}

fn default_cells() -> usize {
    5
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub snr_db_start: f64,
    pub snr_db_stop: f64,
    pub snr_db_step: f64,
    #[serde(default = "default_max_frames")]
    pub max_frames: u64,
    #[serde(default = "default_min_bit_errors")]
    pub min_bit_errors: u64,
    /// "plain-bp" or "neural".
    pub decoder: String,
    #[serde(default = "default_cells")]
    pub iterations: usize,
    /// Trained model to evaluate (learnable codes only; --model overrides).
    pub model: Option<PathBuf>,
}

fn default_max_frames() -> u64 {
    1_000_000
}

fn default_min_bit_errors() -> u64 {
    100
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    /// Model paths and baseline specs; the first entry is the reference.
    pub codes: Vec<String>,
}

/// Code description resolved from the `[code]` section.
#[derive(Debug, Clone)]
pub enum CodeSpec {
    Learnable { structure: MatrixStructure, k: usize, ladder: Vec<usize> },
    Baseline(BaselineSpec),
}

#[derive(Debug, Clone)]
pub enum BaselineSpec {
    Bch { n: usize, k: usize },
    Alist { path: PathBuf },
}

impl BaselineSpec {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        if let Some(rest) = text.strip_prefix("bch:") {
            let parts: Vec<_> = rest.split(',').collect();
            let bad = || CliError::config(format!("baseline '{text}' must look like bch:n,k"));
            if parts.len() != 2 {
                return Err(bad());
            }
            let n = parts[0].trim().parse().map_err(|_| bad())?;
            let k = parts[1].trim().parse().map_err(|_| bad())?;
            Ok(BaselineSpec::Bch { n, k })
        } else if let Some(rest) = text.strip_prefix("alist:") {
            Ok(BaselineSpec::Alist { path: PathBuf::from(rest) })
        } else {
            Err(CliError::config(format!(
                "unknown baseline '{text}' (expected bch:n,k or alist:path)"
            )))
        }
    }

    pub fn id(&self) -> String {
        match self {
            BaselineSpec::Bch { n, k } => format!("bch_{n}_{k}"),
            BaselineSpec::Alist { path } => {
                let stem = path.file_stem().map(|s| s.to_string_lossy()).unwrap_or_default();
                format!("alist_{stem}")
            }
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|_| CliError::config(format!("{} is not UTF-8", path.display())))?;
        let mut cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        if cfg.version != CONFIG_VERSION {
            return Err(CliError::config(format!(
                "config version {} unsupported (this build reads version {CONFIG_VERSION})",
                cfg.version
            )));
        }
        cfg.sha256 = sha256_hex(&bytes);
        cfg.stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "experiment".into());
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.code_spec()?;
        if let Some(train) = &self.train {
            let CodeSpec::Learnable { ladder, .. } = self.code_spec()? else {
                return Err(CliError::config("only learnable codes can be trained"));
            };
            if train.snrs_db.len() != ladder.len() {
                return Err(CliError::config(format!(
                    "train.snrs_db has {} entries for a ladder of {}",
                    train.snrs_db.len(),
                    ladder.len()
                )));
            }
            if ladder.len() >= 2 && train.rc_epochs == 0 {
                return Err(CliError::config(
                    "multi-rate ladders need rc_epochs >= 1 (single-rate codes may omit it)",
                ));
            }
            if ladder.len() == 1 && train.rc_epochs != 0 {
                return Err(CliError::config(
                    "rc_epochs requires at least two ladder entries",
                ));
            }
            if train.checkpoint_every == 0 {
                return Err(CliError::config("checkpoint_every must be positive"));
            }
        }
        if let Some(eval) = &self.eval {
            if eval.snr_db_step <= 0.0 {
                return Err(CliError::config("eval.snr_db_step must be positive"));
            }
            if eval.snr_db_stop < eval.snr_db_start {
                return Err(CliError::config("eval sweep is empty"));
            }
            if eval.max_frames == 0 {
                return Err(CliError::config("eval.max_frames must be positive"));
            }
            match eval.decoder.as_str() {
                "plain-bp" | "neural" => {}
                other => {
                    return Err(CliError::config(format!(
                        "eval.decoder must be plain-bp or neural, got '{other}'"
                    )))
                }
            }
        }
        if let Some(compare) = &self.compare {
            if compare.codes.is_empty() {
                return Err(CliError::config("compare.codes is empty"));
            }
        }
        Ok(())
    }

    /// Resolves the `[code]` section, enforcing exactly one of the two kinds.
    pub fn code_spec(&self) -> Result<CodeSpec, CliError> {
        let c = &self.code;
        match c.kind.as_str() {
            "learnable" => {
                if c.baseline.is_some() {
                    return Err(CliError::config(
                        "a learnable code section cannot also name a baseline",
                    ));
                }
                let structure: MatrixStructure = c
                    .structure
                    .as_deref()
                    .ok_or_else(|| CliError::config("learnable code needs 'structure'"))?
                    .parse()
                    .map_err(CliError::config)?;
                if structure == MatrixStructure::General {
                    return Err(CliError::config(
                        "learnable codes use lower-triangular or systematic structure",
                    ));
                }
                let k = c.k.ok_or_else(|| CliError::config("learnable code needs 'k'"))?;
                let ladder = c
                    .ladder
                    .clone()
                    .ok_or_else(|| CliError::config("learnable code needs 'ladder'"))?;
                let pairs: Vec<(usize, usize)> = ladder.iter().map(|&n| (k, n)).collect();
                let (k, ladder) = rclbc::code::rate_ladder_from_pairs(&pairs)
                    .map_err(|e| CliError::config(e.to_string()))?;
                Ok(CodeSpec::Learnable { structure, k, ladder })
            }
            "baseline" => {
                if c.structure.is_some() || c.k.is_some() || c.ladder.is_some() {
                    return Err(CliError::config(
                        "a baseline code section only carries 'baseline'",
                    ));
                }
                let spec = c
                    .baseline
                    .as_deref()
                    .ok_or_else(|| CliError::config("baseline code needs 'baseline'"))?;
                Ok(CodeSpec::Baseline(BaselineSpec::parse(spec)?))
            }
            other => Err(CliError::config(format!(
                "code.kind must be 'learnable' or 'baseline', got '{other}'"
            ))),
        }
    }

    pub fn eval_section(&self) -> Result<&EvalSection, CliError> {
        self.eval.as_ref().ok_or_else(|| CliError::config("config has no [eval] section"))
    }

    pub fn train_section(&self) -> Result<&TrainSection, CliError> {
        self.train.as_ref().ok_or_else(|| CliError::config("config has no [train] section"))
    }
}

impl EvalSection {
    /// The dB sweep points, inclusive of the endpoint within a half step.
    pub fn sweep(&self) -> Vec<f64> {
        let mut points = Vec::new();
        let mut snr = self.snr_db_start;
        while snr <= self.snr_db_stop + self.snr_db_step * 1e-9 {
            points.push(snr);
            snr += self.snr_db_step;
        }
        points
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Stable per-run substream: mixes the global seed with the code identity and
/// operating point so the same code always sees the same noise, regardless of
/// listing order.
pub fn mix_seed(global: u64, code_id: &str, n_c: usize, snr_db: f64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ global.rotate_left(17);
    let mut eat = |byte: u8| {
        h ^= byte as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    };
    for b in code_id.bytes() {
        eat(b);
    }
    for b in (n_c as u64).to_le_bytes() {
        eat(b);
    }
    for b in snr_db.to_bits().to_le_bytes() {
        eat(b);
    }
    h
}
