//! The four subcommands: train, eval, compare, export.

use crate::config::{mix_seed, BaselineSpec, CodeSpec, EvalSection, ExperimentConfig};
use crate::error::CliError;
use crate::model::{ModelFile, ModelStage};
use crate::write_atomic;
use rclbc::bch::bch_parity_check;
use rclbc::channel::{ber_monte_carlo, BerReport, DecoderSpec, StopRule};
use rclbc::code::{CodeFamily, MatrixStructure};
use rclbc::decoder::DecoderParams;
use rclbc::train::{
    CodingParams, TrainConfig, TrainError, TrainStage, Trainer, TrainerState,
};
use std::path::{Path, PathBuf};

pub const CSV_HEADER: &str = "code_id,k,n_c,snr_db,frames,bit_errors,frame_errors,ber,ci95";

pub fn csv_line(r: &BerReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        r.code_id,
        r.k,
        r.n_c,
        r.ebn0_db,
        r.frames,
        r.bit_errors,
        r.frame_errors,
        r.ber(),
        r.ci95_half_width()
    )
}

fn write_csv(path: &Path, reports: &[BerReport]) -> Result<(), CliError> {
    let mut text = String::from(CSV_HEADER);
    text.push('\n');
    for r in reports {
        text.push_str(&csv_line(r));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
        .map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))
}

fn ensure_out_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::config(format!("cannot create {}: {e}", out.display())))
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainRun<'a> {
    id: String,
    ladder: Vec<usize>,
    config_sha256: String,
    seed: u64,
    out: &'a Path,
    checkpoint_every: usize,
    precode_epochs_total: usize,
}

impl TrainRun<'_> {
    fn model_from_state(&self, state: &TrainerState, stage: ModelStage) -> ModelFile {
        let (pre_done, rc_done) = match state.stage {
            TrainStage::Precode => (state.epochs_done, 0),
            TrainStage::RateCompatible => (self.precode_epochs_total, state.epochs_done),
        };
        let checkpoint = matches!(stage, ModelStage::Checkpoint(_));
        ModelFile {
            id: self.id.clone(),
            ladder: self.ladder.clone(),
            coding: state.coding.clone(),
            decoder: state.decoder.clone(),
            h: state.coding.assemble_h(),
            config_sha256: self.config_sha256.clone(),
            seed: self.seed,
            stage,
            precode_epochs_done: pre_done,
            rc_epochs_done: rc_done,
            adam_w: checkpoint.then(|| state.adam_w.clone()),
            adam_alpha: checkpoint.then(|| state.adam_alpha.clone()),
            rng_word_pos: checkpoint.then_some(state.rng_word_pos),
        }
    }

    fn checkpoint_path(&self, stage: TrainStage, epoch: usize) -> PathBuf {
        self.out.join(format!("checkpoint_{}_{epoch:05}.rcm", stage.as_str()))
    }

    /// Runs a trainer to completion, checkpointing on schedule; on divergence
    /// the state at the start of the failing epoch is saved.
    fn run_stage(&self, trainer: &mut Trainer) -> Result<(), CliError> {
        let stage = trainer.cfg().stage;
        let total = trainer.cfg().epochs;
        let labels: Vec<String> =
            trainer.cfg().rate_snrs.iter().map(|&(n_c, _)| format!("n{n_c}")).collect();
        while !trainer.is_complete() {
            let epoch_start = trainer.state();
            match trainer.run_epoch() {
                Ok(losses) => {
                    let loss_text: Vec<String> = labels
                        .iter()
                        .zip(&losses)
                        .map(|(l, v)| format!("{l}={v:.6}"))
                        .collect();
                    println!(
                        "[{}] epoch {}/{} loss {}",
                        stage.as_str(),
                        trainer.epochs_done(),
                        total,
                        loss_text.join(" ")
                    );
                    let done = trainer.epochs_done();
                    if done % self.checkpoint_every == 0 && !trainer.is_complete() {
                        let path = self.checkpoint_path(stage, done);
                        self.model_from_state(
                            &trainer.state(),
                            ModelStage::Checkpoint(stage),
                        )
                        .save(&path)?;
                        println!("checkpoint written: {}", path.display());
                    }
                }
                Err(TrainError::Diverged { epoch, step, rate }) => {
                    let path = self.checkpoint_path(stage, epoch_start.epochs_done);
                    self.model_from_state(&epoch_start, ModelStage::Checkpoint(stage))
                        .save(&path)?;
                    return Err(CliError::Diverged {
                        msg: format!(
                            "non-finite loss at {} epoch {epoch}, step {step}, rate index {rate}",
                            stage.as_str()
                        ),
                        checkpoint: path.display().to_string(),
                    });
                }
                Err(e) => return Err(CliError::config(e.to_string())),
            }
        }
        Ok(())
    }
}

pub fn cmd_train(
    cfg: &ExperimentConfig,
    seed_override: Option<u64>,
    out: &Path,
    resume: Option<&Path>,
) -> Result<PathBuf, CliError> {
    let CodeSpec::Learnable { structure, k, ladder } = cfg.code_spec()? else {
        return Err(CliError::config("the train command needs a learnable [code] section"));
    };
    let train = cfg.train_section()?.clone();
    let seed = seed_override.unwrap_or(cfg.seed);
    ensure_out_dir(out)?;

    let n0 = ladder[0];
    let precode_cfg = TrainConfig {
        stage: TrainStage::Precode,
        epochs: train.precode_epochs,
        batch_size: train.batch_size,
        vectors_per_epoch: train.vectors_per_epoch,
        learning_rate: train.learning_rate,
        rate_snrs: vec![(n0, train.snrs_db[0])],
        cells: train.cells,
        seed,
    };
    let rc_cfg = (ladder.len() >= 2).then(|| TrainConfig {
        stage: TrainStage::RateCompatible,
        epochs: train.rc_epochs,
        batch_size: train.batch_size,
        vectors_per_epoch: train.vectors_per_epoch,
        learning_rate: train.learning_rate,
        rate_snrs: ladder.iter().copied().zip(train.snrs_db.iter().copied()).collect(),
        cells: train.cells,
        seed,
    });

    let run = TrainRun {
        id: cfg.stem.clone(),
        ladder: ladder.clone(),
        config_sha256: cfg.sha256.clone(),
        seed,
        out,
        checkpoint_every: train.checkpoint_every,
        precode_epochs_total: train.precode_epochs,
    };

    // Resume lands in whichever stage the checkpoint captured.
    let mut warm: Option<CodingParams> = None;
    let mut rc_trainer: Option<Trainer> = None;
    match resume {
        Some(path) => {
            let ckpt = ModelFile::load(path)?;
            if ckpt.config_sha256 != cfg.sha256 {
                return Err(CliError::config(format!(
                    "checkpoint {} was produced by a different config",
                    path.display()
                )));
            }
            let ModelStage::Checkpoint(stage) = ckpt.stage else {
                return Err(CliError::config("model is complete; nothing to resume"));
            };
            let state = TrainerState {
                stage,
                epochs_done: match stage {
                    TrainStage::Precode => ckpt.precode_epochs_done,
                    TrainStage::RateCompatible => ckpt.rc_epochs_done,
                },
                coding: ckpt.coding,
                decoder: ckpt.decoder,
                adam_w: ckpt.adam_w.expect("validated on load"),
                adam_alpha: ckpt.adam_alpha.expect("validated on load"),
                rng_word_pos: ckpt.rng_word_pos.expect("validated on load"),
            };
            match stage {
                TrainStage::Precode => {
                    let mut trainer = Trainer::from_state(precode_cfg, state)
                        .map_err(|e| CliError::config(e.to_string()))?;
                    run.run_stage(&mut trainer)?;
                    warm = Some(trainer.coding().clone());
                }
                TrainStage::RateCompatible => {
                    let rc = rc_cfg
                        .clone()
                        .ok_or_else(|| CliError::config("config has no rc stage to resume"))?;
                    rc_trainer = Some(
                        Trainer::from_state(rc, state)
                            .map_err(|e| CliError::config(e.to_string()))?,
                    );
                }
            }
        }
        None => {
            let mut trainer = Trainer::new_precode(precode_cfg, k, n0, structure)
                .map_err(|e| CliError::config(e.to_string()))?;
            run.run_stage(&mut trainer)?;
            warm = Some(trainer.coding().clone());
        }
    }

    let final_state = match (rc_cfg, rc_trainer) {
        (Some(rc), pre_built) => {
            let mut trainer = match pre_built {
                Some(t) => t,
                None => Trainer::new_rc(rc, warm.expect("precode stage ran"))
                    .map_err(|e| CliError::config(e.to_string()))?,
            };
            run.run_stage(&mut trainer)?;
            trainer.state()
        }
        (None, _) => {
            // Single-rate code: the precode stage is the whole run.
            let coding = warm.expect("precode stage ran");
            let decoder = DecoderParams::plain(train.cells, coding.checks(), coding.n0());
            TrainerState {
                stage: TrainStage::Precode,
                epochs_done: train.precode_epochs,
                adam_w: rclbc::train::AdamState::new(coding.w().len()),
                adam_alpha: rclbc::train::AdamState::new(decoder.alpha_values().len()),
                rng_word_pos: 0,
                coding,
                decoder,
            }
        }
    };

    let model_path = out.join("model.rcm");
    run.model_from_state(&final_state, ModelStage::Complete).save(&model_path)?;
    println!("model written: {}", model_path.display());
    Ok(model_path)
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

/// A code resolved to something the simulator can run.
pub struct ResolvedCode {
    pub id: String,
    pub family: CodeFamily,
    pub decoder: Option<DecoderParams>,
}

pub fn resolve_baseline(spec: &BaselineSpec) -> Result<ResolvedCode, CliError> {
    let (id, family) = match spec {
        BaselineSpec::Bch { n, k } => {
            let h = bch_parity_check(*n, *k).map_err(|e| CliError::config(e.to_string()))?;
            let family = CodeFamily::single_rate(h, MatrixStructure::Systematic)
                .map_err(|e| CliError::config(e.to_string()))?;
            (spec.id(), family)
        }
        BaselineSpec::Alist { path } => {
            let h = rclbc::alist::load_alist(path)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            let family = CodeFamily::single_rate(h, MatrixStructure::General)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            (spec.id(), family)
        }
    };
    Ok(ResolvedCode { id, family, decoder: None })
}

fn resolve_model(path: &Path) -> Result<ResolvedCode, CliError> {
    let model = ModelFile::load(path)?;
    let family = model.family()?;
    Ok(ResolvedCode { id: model.id, family, decoder: Some(model.decoder) })
}

/// Model path or baseline spec string.
pub fn resolve_entry(text: &str) -> Result<ResolvedCode, CliError> {
    if text.starts_with("bch:") || text.starts_with("alist:") {
        resolve_baseline(&BaselineSpec::parse(text)?)
    } else {
        resolve_model(Path::new(text))
    }
}

fn sweep_code(
    code: &ResolvedCode,
    eval: &EvalSection,
    seed: u64,
) -> Result<Vec<BerReport>, CliError> {
    let stop = StopRule { max_frames: eval.max_frames, min_bit_errors: eval.min_bit_errors };
    let decoder = match eval.decoder.as_str() {
        "plain-bp" => DecoderSpec::PlainBp { iterations: eval.iterations },
        "neural" => match &code.decoder {
            Some(params) => DecoderSpec::Neural(params),
            None => {
                return Err(CliError::config(format!(
                    "code {} has no trained decoder weights; use decoder = \"plain-bp\"",
                    code.id
                )))
            }
        },
        other => return Err(CliError::config(format!("unknown decoder '{other}'"))),
    };
    let mut reports = Vec::new();
    for &n_c in code.family.ladder() {
        for snr_db in eval.sweep() {
            let report = ber_monte_carlo(
                &code.id,
                &code.family,
                n_c,
                &decoder,
                snr_db,
                stop,
                mix_seed(seed, &code.id, n_c, snr_db),
            )
            .map_err(|e| CliError::config(e.to_string()))?;
            println!("{}", csv_line(&report));
            reports.push(report);
        }
    }
    Ok(reports)
}

pub fn cmd_eval(
    cfg: &ExperimentConfig,
    seed_override: Option<u64>,
    out: &Path,
    model_override: Option<&Path>,
) -> Result<PathBuf, CliError> {
    let eval = cfg.eval_section()?;
    let seed = seed_override.unwrap_or(cfg.seed);
    ensure_out_dir(out)?;

    let code = match cfg.code_spec()? {
        CodeSpec::Baseline(spec) => {
            if model_override.is_some() {
                return Err(CliError::config("--model conflicts with a baseline code"));
            }
            resolve_baseline(&spec)?
        }
        CodeSpec::Learnable { .. } => {
            let path = model_override
                .map(Path::to_path_buf)
                .or_else(|| eval.model.clone())
                .ok_or_else(|| {
                    CliError::config(
                        "evaluating a learnable code needs eval.model or --model",
                    )
                })?;
            resolve_model(&path)?
        }
    };

    println!("{CSV_HEADER}");
    let reports = sweep_code(&code, eval, seed)?;
    let csv_path = out.join(format!("ber_{}.csv", code.id));
    write_csv(&csv_path, &reports)?;
    println!("csv written: {}", csv_path.display());
    Ok(csv_path)
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

/// SNR at which a (snr, ber) curve crosses `target`, interpolating linearly
/// in log10(BER) between adjacent sweep points.
pub fn snr_at_target(points: &[(f64, f64)], target: f64) -> Option<f64> {
    for w in points.windows(2) {
        let (s0, b0) = w[0];
        let (s1, b1) = w[1];
        if b0 >= target && b1 <= target {
            if b0 == b1 {
                return Some(s0);
            }
            let lb0 = b0.max(1e-300).log10();
            let lb1 = b1.max(1e-300).log10();
            let f = (lb0 - target.log10()) / (lb0 - lb1);
            return Some(s0 + f * (s1 - s0));
        }
    }
    None
}

pub const GAIN_TARGETS: [f64; 2] = [1e-3, 1e-4];

pub fn cmd_compare(
    cfg: &ExperimentConfig,
    seed_override: Option<u64>,
    out: &Path,
) -> Result<PathBuf, CliError> {
    let eval = cfg.eval_section()?;
    let compare = cfg
        .compare
        .as_ref()
        .ok_or_else(|| CliError::config("config has no [compare] section"))?;
    let seed = seed_override.unwrap_or(cfg.seed);
    ensure_out_dir(out)?;

    let codes: Vec<ResolvedCode> =
        compare.codes.iter().map(|c| resolve_entry(c)).collect::<Result<_, _>>()?;
    let k = codes[0].family.k();
    if let Some(other) = codes.iter().find(|c| c.family.k() != k) {
        return Err(CliError::config(format!(
            "all compared codes must share k: {} has k={}, {} has k={}",
            codes[0].id,
            k,
            other.id,
            other.family.k()
        )));
    }

    println!("{CSV_HEADER}");
    let mut all_reports: Vec<Vec<BerReport>> = Vec::new();
    for code in &codes {
        all_reports.push(sweep_code(code, eval, seed)?);
    }
    let merged: Vec<BerReport> = all_reports.iter().flatten().cloned().collect();
    let csv_path = out.join("compare.csv");
    write_csv(&csv_path, &merged)?;

    // Gains of the first (reference) code over each other, per shared length.
    let curve = |reports: &[BerReport], n_c: usize| -> Vec<(f64, f64)> {
        reports.iter().filter(|r| r.n_c == n_c).map(|r| (r.ebn0_db, r.ber())).collect()
    };
    let reference = &codes[0];
    println!();
    println!("gain of {} (positive dB = reference reaches the target BER at lower SNR)", reference.id);
    println!("{:<20} {:>5} {:>10} {:>10} {:>10} {:>9}", "code", "n_c", "target", "ref_snr", "code_snr", "gain_db");
    for (code, reports) in codes.iter().zip(&all_reports).skip(1) {
        for &n_c in code.family.ladder() {
            if !reference.family.ladder().contains(&n_c) {
                continue;
            }
            for target in GAIN_TARGETS {
                let ref_snr = snr_at_target(&curve(&all_reports[0], n_c), target);
                let code_snr = snr_at_target(&curve(reports, n_c), target);
                match (ref_snr, code_snr) {
                    (Some(r), Some(c)) => println!(
                        "{:<20} {:>5} {:>10.0e} {:>10.3} {:>10.3} {:>9.2}",
                        code.id,
                        n_c,
                        target,
                        r,
                        c,
                        c - r
                    ),
                    _ => println!(
                        "{:<20} {:>5} {:>10.0e} {:>10} {:>10} {:>9}",
                        code.id, n_c, target, "n/a", "n/a", "n/a"
                    ),
                }
            }
        }
    }
    println!("csv written: {}", csv_path.display());
    Ok(csv_path)
}

// ---------------------------------------------------------------------------
// export
// ---------------------------------------------------------------------------

pub fn cmd_export(
    model_path: &Path,
    what: &[String],
    out: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    let model = ModelFile::load(model_path)?;
    let h = &model.h;
    if h.rank() != h.rows() {
        return Err(CliError::InvalidExport(format!(
            "H is rank deficient ({} of {} rows)",
            h.rank(),
            h.rows()
        )));
    }
    let family = model.family()?;
    ensure_out_dir(out)?;

    let mut written = Vec::new();
    for item in what {
        match item.as_str() {
            "alist" => {
                for &n_c in family.ladder() {
                    let sub = family
                        .subcode_h(n_c)
                        .map_err(|e| CliError::InvalidExport(e.to_string()))?;
                    let path = out.join(format!("{}_h_n{n_c}.alist", model.id));
                    write_atomic(&path, rclbc::alist::format_alist(&sub).as_bytes())
                        .map_err(|e| CliError::config(e.to_string()))?;
                    written.push(path);
                }
            }
            "gmatrix" => {
                let g = family.g();
                let mut text = String::new();
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        text.push(if g.get(r, c) { '1' } else { '0' });
                    }
                    text.push('\n');
                }
                let path = out.join(format!("{}_g.txt", model.id));
                write_atomic(&path, text.as_bytes()).map_err(|e| CliError::config(e.to_string()))?;
                written.push(path);
            }
            "weights" => {
                let d = &model.decoder;
                let mut text =
                    format!("alpha {} {} {}\n", d.cells(), d.checks(), d.vars());
                for a in d.alpha_values() {
                    text.push_str(&format!("{a}\n"));
                }
                if d.bias_enabled() {
                    text.push_str(&format!("beta {} {} {}\n", d.cells(), d.checks(), d.vars()));
                    for b in d.beta_values() {
                        text.push_str(&format!("{b}\n"));
                    }
                }
                let path = out.join(format!("{}_weights.txt", model.id));
                write_atomic(&path, text.as_bytes()).map_err(|e| CliError::config(e.to_string()))?;
                written.push(path);
            }
            other => {
                return Err(CliError::config(format!(
                    "unknown export item '{other}' (expected alist, gmatrix, weights)"
                )))
            }
        }
    }
    for p in &written {
        println!("exported: {}", p.display());
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_reads_curves_in_log_space() {
        let points = vec![(1.0, 1e-2), (2.0, 1e-3), (3.0, 1e-4)];
        assert!((snr_at_target(&points, 1e-3).unwrap() - 2.0).abs() < 1e-12);
        // Halfway in log10 between 1e-2 and 1e-3.
        let s = snr_at_target(&points, 10f64.powf(-2.5)).unwrap();
        assert!((s - 1.5).abs() < 1e-12);
        assert!(snr_at_target(&points, 1e-6).is_none());
        assert!(snr_at_target(&points, 1.0).is_none());
    }

    #[test]
    fn identical_curves_give_zero_gain() {
        let points = vec![(1.0, 3e-3), (2.0, 4e-4), (3.0, 2e-5)];
        let a = snr_at_target(&points, 1e-4).unwrap();
        let b = snr_at_target(&points.clone(), 1e-4).unwrap();
        assert_eq!(a - b, 0.0);
    }
}
