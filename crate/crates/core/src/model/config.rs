use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositionMode {
    AbsoluteSinusoidal,
    RelativeClipped,
}

impl fmt::Display for PositionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PositionMode::AbsoluteSinusoidal => "absolute",
            PositionMode::RelativeClipped => "relative",
        })
    }
}

impl FromStr for PositionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "absolute" => Ok(PositionMode::AbsoluteSinusoidal),
            "relative" => Ok(PositionMode::RelativeClipped),
            _ => Err(Error::Config(format!("unknown position mode {s:?} (absolute|relative)"))),
        }
    }
}

/// Encoder-decoder hyperparameters. Source and target share `vocab_size`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub rel_radius: usize,
    pub position_mode: PositionMode,
    pub copy_decoder: bool,
    /// Cap on generated tokens per decode.
    pub max_decode_len: usize,
    /// Longest accepted source or target sequence.
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 6,
            d_model: 64,
            d_ff: 256,
            heads: 4,
            rel_radius: 8,
            position_mode: PositionMode::RelativeClipped,
            copy_decoder: false,
            max_decode_len: 512,
            max_len: 1024,
            vocab_size: 0,
            dropout: 0.1,
            label_smoothing: 0.1,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn relative(&self) -> bool {
        self.position_mode == PositionMode::RelativeClipped
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.layers == 0 || self.d_model == 0 || self.d_ff == 0 || self.heads == 0 {
            return fail("layers, d_model, d_ff and heads must be positive".into());
        }
        if self.d_model % self.heads != 0 {
            return fail(format!("d_model {} is not divisible by heads {}", self.d_model, self.heads));
        }
        if self.relative() && self.rel_radius == 0 {
            return fail("relative position mode needs rel_radius >= 1".into());
        }
        if self.max_decode_len == 0 || self.max_len == 0 {
            return fail("max_decode_len and max_len must be >= 1".into());
        }
        if self.vocab_size <= crate::vocab::SPECIALS.len() {
            return fail(format!("vocab_size {} leaves no room for content tokens", self.vocab_size));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.label_smoothing) {
            return fail("dropout and label_smoothing must lie in [0, 1)".into());
        }
        Ok(())
    }

    /// `key = value` lines, stable key order.
    pub fn to_text(&self) -> String {
        format!(
            "layers = {}\nd_model = {}\nd_ff = {}\nheads = {}\nrel_radius = {}\nposition_mode = {}\n\
             copy_decoder = {}\nmax_decode_len = {}\nmax_len = {}\nvocab_size = {}\ndropout = {}\n\
             label_smoothing = {}\ninit_seed = {}\n",
            self.layers,
            self.d_model,
            self.d_ff,
            self.heads,
            self.rel_radius,
            self.position_mode,
            self.copy_decoder,
            self.max_decode_len,
            self.max_len,
            self.vocab_size,
            self.dropout,
            self.label_smoothing,
            self.init_seed,
        )
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are skipped; unknown keys are rejected.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = ModelConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
        }
        match key {
            "layers" => self.layers = num(key, value)?,
            "d_model" => self.d_model = num(key, value)?,
            "d_ff" => self.d_ff = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "rel_radius" => self.rel_radius = num(key, value)?,
            "position_mode" => self.position_mode = value.parse()?,
            "copy_decoder" => self.copy_decoder = num(key, value)?,
            "max_decode_len" => self.max_decode_len = num(key, value)?,
            "max_len" => self.max_len = num(key, value)?,
            "vocab_size" => self.vocab_size = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "label_smoothing" => self.label_smoothing = num(key, value)?,
            "init_seed" => self.init_seed = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown model key {key:?}"))),
        }
        Ok(())
    }
}
