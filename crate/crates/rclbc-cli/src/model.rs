//! Versioned text container for trained models and training checkpoints.
//!
//! One file carries the code manifest, the coding parameters W, the decoder
//! weight grid, the assembled H as an embedded alist block, and training
//! provenance. Checkpoints additionally carry optimizer moments and the RNG
//! position so a run can resume bit-exactly. On load the stored H must equal
//! the reassembly of W through the step function, or the file is rejected.

use crate::error::CliError;
use rclbc::alist;
use rclbc::code::{CodeFamily, MatrixStructure};
use rclbc::decoder::DecoderParams;
use rclbc::gf2::BitMatrix;
use rclbc::train::{AdamState, CodingParams, TrainStage};
use std::fmt::Write as _;
use std::path::Path;

pub const MODEL_MAGIC: &str = "rclbc-model v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelStage {
    Complete,
    Checkpoint(TrainStage),
}

impl ModelStage {
    fn as_str(&self) -> &'static str {
        match self {
            ModelStage::Complete => "complete",
            ModelStage::Checkpoint(TrainStage::Precode) => "precode",
            ModelStage::Checkpoint(TrainStage::RateCompatible) => "rc",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "complete" => Some(ModelStage::Complete),
            "precode" => Some(ModelStage::Checkpoint(TrainStage::Precode)),
            "rc" => Some(ModelStage::Checkpoint(TrainStage::RateCompatible)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelFile {
    pub id: String,
    pub ladder: Vec<usize>,
    pub coding: CodingParams,
    pub decoder: DecoderParams,
    pub h: BitMatrix,
    pub config_sha256: String,
    pub seed: u64,
    pub stage: ModelStage,
    pub precode_epochs_done: usize,
    pub rc_epochs_done: usize,
    pub adam_w: Option<AdamState>,
    pub adam_alpha: Option<AdamState>,
    pub rng_word_pos: Option<u128>,
}

impl ModelFile {
    pub fn family(&self) -> Result<CodeFamily, CliError> {
        CodeFamily::new(self.h.clone(), self.ladder.clone(), self.coding.structure())
            .map_err(|e| CliError::corrupt(&self.id, e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MODEL_MAGIC}");
        let _ = writeln!(out, "[manifest]");
        let _ = writeln!(out, "id {}", self.id);
        let _ = writeln!(out, "k {}", self.coding.k());
        let _ = writeln!(out, "n0 {}", self.coding.n0());
        let _ = writeln!(out, "structure {}", self.coding.structure().as_str());
        let ladder: Vec<String> = self.ladder.iter().map(|n| n.to_string()).collect();
        let _ = writeln!(out, "ladder {}", ladder.join(" "));
        let _ = writeln!(out, "cells {}", self.decoder.cells());
        let _ = writeln!(out, "bias_enabled {}", self.decoder.bias_enabled());
        let _ = writeln!(out, "[provenance]");
        let _ = writeln!(out, "config_sha256 {}", self.config_sha256);
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "stage {}", self.stage.as_str());
        let _ = writeln!(out, "precode_epochs_done {}", self.precode_epochs_done);
        let _ = writeln!(out, "rc_epochs_done {}", self.rc_epochs_done);
        let _ = writeln!(out, "[w]");
        let _ = writeln!(out, "count {}", self.coding.w().len());
        for w in self.coding.w() {
            let _ = writeln!(out, "{w}");
        }
        let _ = writeln!(out, "[alpha]");
        let _ = writeln!(
            out,
            "shape {} {} {}",
            self.decoder.cells(),
            self.decoder.checks(),
            self.decoder.vars()
        );
        for a in self.decoder.alpha_values() {
            let _ = writeln!(out, "{a}");
        }
        if self.decoder.bias_enabled() {
            let _ = writeln!(out, "[beta]");
            let _ = writeln!(
                out,
                "shape {} {} {}",
                self.decoder.cells(),
                self.decoder.checks(),
                self.decoder.vars()
            );
            for b in self.decoder.beta_values() {
                let _ = writeln!(out, "{b}");
            }
        }
        let alist_text = alist::format_alist(&self.h);
        let _ = writeln!(out, "[h]");
        let _ = writeln!(out, "lines {}", alist_text.lines().count());
        out.push_str(&alist_text);
        if let (Some(aw), Some(aa)) = (&self.adam_w, &self.adam_alpha) {
            for (name, st) in [("adam-w", aw), ("adam-alpha", aa)] {
                let _ = writeln!(out, "[{name}]");
                let _ = writeln!(out, "t {}", st.t);
                let _ = writeln!(out, "count {}", st.m.len());
                for (m, v) in st.m.iter().zip(&st.v) {
                    let _ = writeln!(out, "{m} {v}");
                }
            }
        }
        if let Some(pos) = self.rng_word_pos {
            let _ = writeln!(out, "[rng]");
            let _ = writeln!(out, "word_pos {pos}");
        }
        let _ = writeln!(out, "[end]");
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        crate::write_atomic(path, self.to_text().as_bytes())
            .map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::corrupt(path.display().to_string(), e.to_string()))?;
        Self::from_text(&text).map_err(|msg| CliError::corrupt(path.display().to_string(), msg))
    }

    pub fn from_text(text: &str) -> Result<Self, String> {
        let mut p = Parser { lines: text.lines().enumerate(), peeked: None };
        if p.next_line()?.1 != MODEL_MAGIC {
            return Err(format!("missing '{MODEL_MAGIC}' header"));
        }

        p.expect_section("manifest")?;
        let id = p.kv("id")?;
        let k: usize = p.kv_parsed("k")?;
        let n0: usize = p.kv_parsed("n0")?;
        let structure: MatrixStructure = p.kv("structure")?.parse()?;
        let ladder: Vec<usize> = p
            .kv("ladder")?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| format!("bad ladder entry '{t}'")))
            .collect::<Result<_, _>>()?;
        let cells: usize = p.kv_parsed("cells")?;
        let bias_enabled: bool = p.kv_parsed("bias_enabled")?;

        p.expect_section("provenance")?;
        let config_sha256 = p.kv("config_sha256")?;
        let seed: u64 = p.kv_parsed("seed")?;
        let stage = ModelStage::parse(&p.kv("stage")?).ok_or("unknown stage")?;
        let precode_epochs_done: usize = p.kv_parsed("precode_epochs_done")?;
        let rc_epochs_done: usize = p.kv_parsed("rc_epochs_done")?;

        p.expect_section("w")?;
        let count: usize = p.kv_parsed("count")?;
        let w = p.floats(count)?;
        let coding = CodingParams::from_parts(structure, k, n0 - k, w)
            .map_err(|e| format!("coding parameters: {e}"))?;

        p.expect_section("alpha")?;
        let shape = p.kv("shape")?;
        let dims: Vec<usize> = shape
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| format!("bad shape entry '{t}'")))
            .collect::<Result<_, _>>()?;
        if dims != [cells, n0 - k, n0] {
            return Err(format!("alpha shape {dims:?} does not match manifest"));
        }
        let alpha = p.floats(cells * (n0 - k) * n0)?;

        let mut section = p.next_section()?;
        let beta = if section == "beta" {
            let shape = p.kv("shape")?;
            let dims: Vec<usize> = shape
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| format!("bad shape entry '{t}'")))
                .collect::<Result<_, _>>()?;
            if dims != [cells, n0 - k, n0] {
                return Err(format!("beta shape {dims:?} does not match manifest"));
            }
            let b = p.floats(cells * (n0 - k) * n0)?;
            section = p.next_section()?;
            b
        } else {
            if bias_enabled {
                return Err("bias_enabled model is missing its [beta] section".into());
            }
            vec![0.0; cells * (n0 - k) * n0]
        };
        let decoder = DecoderParams::from_parts(cells, n0 - k, n0, alpha, beta, bias_enabled)
            .map_err(|e| format!("decoder grid: {e}"))?;

        if section != "h" {
            return Err(format!("expected [h], found [{section}]"));
        }
        let line_count: usize = p.kv_parsed("lines")?;
        let mut alist_text = String::new();
        for _ in 0..line_count {
            alist_text.push_str(p.next_line()?.1);
            alist_text.push('\n');
        }
        let h = alist::parse_alist(&alist_text).map_err(|e| format!("embedded alist: {e}"))?;
        if h.rows() != n0 - k || h.cols() != n0 {
            return Err("embedded H dimensions do not match manifest".into());
        }
        if h != coding.assemble_h() {
            return Err("stored H does not match reassembly from W".into());
        }

        let mut adam_w = None;
        let mut adam_alpha = None;
        let mut rng_word_pos = None;
        let mut section = p.next_section()?;
        while section != "end" {
            match section.as_str() {
                "adam-w" | "adam-alpha" => {
                    let name = section.clone();
                    let t: u64 = p.kv_parsed("t")?;
                    let count: usize = p.kv_parsed("count")?;
                    let mut m = Vec::with_capacity(count);
                    let mut v = Vec::with_capacity(count);
                    for _ in 0..count {
                        let (no, line) = p.next_line()?;
                        let mut it = line.split_whitespace();
                        let (ms, vs) = (it.next(), it.next());
                        match (ms, vs) {
                            (Some(ms), Some(vs)) => {
                                m.push(ms.parse().map_err(|_| format!("line {no}: bad moment"))?);
                                v.push(vs.parse().map_err(|_| format!("line {no}: bad moment"))?);
                            }
                            _ => return Err(format!("line {no}: expected two moments")),
                        }
                    }
                    let state = AdamState { m, v, t };
                    if name == "adam-w" {
                        adam_w = Some(state);
                    } else {
                        adam_alpha = Some(state);
                    }
                }
                "rng" => {
                    rng_word_pos = Some(p.kv_parsed("word_pos")?);
                }
                other => return Err(format!("unknown section [{other}]")),
            }
            section = p.next_section()?;
        }

        if matches!(stage, ModelStage::Checkpoint(_))
            && (adam_w.is_none() || adam_alpha.is_none() || rng_word_pos.is_none())
        {
            return Err("checkpoint is missing optimizer or RNG state".into());
        }
        if let Some(aw) = &adam_w {
            if aw.m.len() != coding.w().len() {
                return Err("optimizer state size does not match W".into());
            }
        }
        if let Some(aa) = &adam_alpha {
            if aa.m.len() != decoder.alpha_values().len() {
                return Err("optimizer state size does not match the weight grid".into());
            }
        }

        Ok(ModelFile {
            id,
            ladder,
            coding,
            decoder,
            h,
            config_sha256,
            seed,
            stage,
            precode_epochs_done,
            rc_epochs_done,
            adam_w,
            adam_alpha,
            rng_word_pos,
        })
    }
}

struct Parser<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    peeked: Option<(usize, &'a str)>,
}

impl<'a> Parser<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str), String> {
        if let Some(p) = self.peeked.take() {
            return Ok(p);
        }
        self.lines.next().map(|(i, l)| (i + 1, l)).ok_or_else(|| "unexpected end of file".into())
    }

    fn expect_section(&mut self, name: &str) -> Result<(), String> {
        let found = self.next_section()?;
        if found != name {
            return Err(format!("expected [{name}], found [{found}]"));
        }
        Ok(())
    }

    fn next_section(&mut self) -> Result<String, String> {
        let (no, line) = self.next_line()?;
        let line = line.trim();
        if line.starts_with('[') && line.ends_with(']') {
            Ok(line[1..line.len() - 1].to_string())
        } else {
            Err(format!("line {no}: expected a section header, found '{line}'"))
        }
    }

    fn kv(&mut self, key: &str) -> Result<String, String> {
        let (no, line) = self.next_line()?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v.trim().to_string()),
            _ => Err(format!("line {no}: expected '{key} <value>', found '{line}'")),
        }
    }

    fn kv_parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, String> {
        let v = self.kv(key)?;
        v.parse().map_err(|_| format!("cannot parse '{v}' for {key}"))
    }

    fn floats(&mut self, count: usize) -> Result<Vec<f64>, String> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let (no, line) = self.next_line()?;
            out.push(line.trim().parse().map_err(|_| format!("line {no}: bad float '{line}'"))?);
        }
        Ok(out)
    }
}
