//! Benchmark tasks and their iterative-decoding expansions.

pub mod cartesian;
pub mod cfq;
pub mod pcfg;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::TokenSequence;

/// A seq2seq training or test pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pair {
    pub input: TokenSequence,
    pub output: TokenSequence,
}

impl Pair {
    pub fn new(input: impl Into<TokenSequence>, output: impl Into<TokenSequence>) -> Self {
        Pair {
            input: input.into(),
            output: output.into(),
        }
    }
}

/// One example broken into (intermediate input, intermediate output) steps.
/// The final output carries the EOI token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IterExample {
    pub steps: Vec<Pair>,
}

impl IterExample {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn inputs(&self) -> impl Iterator<Item = &TokenSequence> {
        self.steps.iter().map(|p| &p.input)
    }

    pub fn outputs(&self) -> Vec<TokenSequence> {
        self.steps.iter().map(|p| p.output.clone()).collect()
    }
}

/// Which benchmark a dataset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Pcfg,
    Cartesian,
    Cfq,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Pcfg => "pcfg",
            TaskKind::Cartesian => "cartesian",
            TaskKind::Cfq => "cfq",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pcfg" => Ok(TaskKind::Pcfg),
            "cartesian" => Ok(TaskKind::Cartesian),
            "cfq" => Ok(TaskKind::Cfq),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

/// Reads `input<TAB>output` lines, whitespace-tokenizing both sides.
pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<Pair>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_pairs(&text, path)
}

pub(crate) fn parse_pairs(text: &str, path: &Path) -> Result<Vec<Pair>> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.is_empty())
        .map(|(i, line)| {
            let (input, output) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, i + 1, "missing tab separator"))?;
            Ok(Pair::new(input, output))
        })
        .collect()
}

pub fn write_pairs<'a>(path: impl AsRef<Path>, pairs: impl IntoIterator<Item = &'a Pair>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for p in pairs {
        writeln!(w, "{}\t{}", p.input, p.output)?;
    }
    w.flush()?;
    Ok(())
}
