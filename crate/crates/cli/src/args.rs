use std::ops::RangeInclusive;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use itdec::tasks::cartesian::{ExpansionMode, Memory, Unit};
use itdec::tasks::TaskKind;

use crate::usage;

#[derive(Parser, Debug)]
#[command(name = "itdec", version, about = "Iterative decoding experiments on PCFG, Cartesian and CFQ tasks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write train/test TSV files for a task.
    Gen(GenArgs),
    /// Turn a seq2seq TSV into intermediate-step pairs.
    Expand(ExpandArgs),
    /// Train a model into a run directory.
    Train(TrainArgs),
    /// Decode a TSV with a trained run (or a stub) and write predictions.
    Predict(PredictArgs),
    /// Score predictions and write metrics.csv and errors.txt.
    Eval(EvalArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskArg {
    Pcfg,
    Cartesian,
    Cfq,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Pcfg => TaskKind::Pcfg,
            TaskArg::Cartesian => TaskKind::Cartesian,
            TaskArg::Cfq => TaskKind::Cfq,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeArg {
    Seq2seq,
    Iterative,
}

impl ModeArg {
    pub fn name(self) -> &'static str {
        match self {
            ModeArg::Seq2seq => "seq2seq",
            ModeArg::Iterative => "iterative",
        }
    }

    pub fn parse(s: &str) -> anyhow::Result<Self> {
        ModeArg::from_str(s, false).map_err(|_| usage(format!("unknown mode {s:?}")))
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnitArg {
    Row,
    Token,
}

impl From<UnitArg> for Unit {
    fn from(u: UnitArg) -> Unit {
        match u {
            UnitArg::Row => Unit::Row,
            UnitArg::Token => Unit::Token,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum MemoryArg {
    Short,
    Long,
}

/// `--expansion` / `--memory`, only meaningful for Cartesian.
#[derive(Args, Debug, Clone, Copy, Default)]
pub struct ExpansionArgs {
    /// Cartesian step unit.
    #[arg(long, value_enum)]
    pub expansion: Option<UnitArg>,
    /// Cartesian intermediate-input memory.
    #[arg(long, value_enum)]
    pub memory: Option<MemoryArg>,
}

impl ExpansionArgs {
    pub fn given(&self) -> bool {
        self.expansion.is_some() || self.memory.is_some()
    }

    /// Token / long unless overridden. Refused for non-Cartesian tasks.
    pub fn resolve(&self, task: TaskKind) -> anyhow::Result<ExpansionMode> {
        if task != TaskKind::Cartesian && self.given() {
            return Err(usage("--expansion and --memory only apply to --task cartesian"));
        }
        let unit = self.expansion.map_or(Unit::Token, Unit::from);
        let memory = match self.memory {
            Some(MemoryArg::Short) => Memory::Short,
            _ => Memory::Long,
        };
        Ok(ExpansionMode::new(unit, memory))
    }
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(value_enum)]
    pub task: TaskArg,
    /// Output directory.
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Training examples (default: 1000 PCFG, 10000 Cartesian, 800 CFQ).
    #[arg(long)]
    pub n: Option<usize>,
    /// Examples per test file (default: 0 PCFG, 1024 Cartesian, 200 CFQ).
    #[arg(long)]
    pub n_test: Option<usize>,
    /// PCFG operation count range, e.g. `1..8`.
    #[arg(long, default_value = "1..8", value_parser = parse_range)]
    pub ops: RangeInclusive<usize>,
    /// PCFG literal length range.
    #[arg(long, default_value = "1..5", value_parser = parse_range)]
    pub literal_len: RangeInclusive<usize>,
    /// Largest Cartesian training size on both axes.
    #[arg(long, default_value_t = 5)]
    pub train_max: usize,
    /// Cartesian test sizes, e.g. `6x5,5x6,6x6` (numbers x letters).
    #[arg(long, value_delimiter = ',', value_parser = parse_size)]
    pub tests: Vec<(usize, usize)>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct ExpandArgs {
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub expansion: ExpansionArgs,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Defaults to the preset's task, then to `task` in --config.
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// Defaults to `mode` in --config, then iterative.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Seq2seq TSV; expanded on the fly for iterative runs.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub run_dir: PathBuf,
    /// `key = value` file of model, training and run keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named step budget (pcfg-iid, pcfg-prod, pcfg-syst, cartesian-row, cartesian-token, cfq).
    #[arg(long, conflicts_with = "steps")]
    pub preset: Option<String>,
    #[arg(long)]
    pub steps: Option<u64>,
    /// Data-order, dropout and initialization seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(flatten)]
    pub expansion: ExpansionArgs,
    /// Train this many seeds (seed, seed+1, ...) into `seed-N` subdirectories.
    #[arg(long, default_value_t = 1)]
    pub replicas: usize,
    /// Continue from the latest checkpoint in an existing run directory.
    #[arg(long, conflicts_with = "force")]
    pub resume: bool,
    #[arg(long)]
    pub force: bool,
    /// Print the loss every N steps (0 disables).
    #[arg(long, default_value_t = 100)]
    pub log_every: u64,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum StubArg {
    /// Ground-truth step executor (PCFG and Cartesian).
    Oracle,
    /// Echoes its input and never emits `[END]`.
    NeverHalt,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Trained run; task, mode and expansion come from its metadata.
    #[arg(long, required_unless_present = "stub")]
    pub run_dir: Option<PathBuf>,
    /// Use a built-in predictor instead of a trained model.
    #[arg(long, value_enum, conflicts_with = "run_dir")]
    pub stub: Option<StubArg>,
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[command(flatten)]
    pub expansion: ExpansionArgs,
    /// TSV to decode; the output column is kept as the gold answer.
    #[arg(long)]
    pub input: PathBuf,
    /// Defaults to `predictions.tsv` in the run directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// JSONL step traces for iterative runs (default `traces.jsonl` next to the output).
    #[arg(long)]
    pub traces: Option<PathBuf>,
    /// Checkpoint step to load (default: latest).
    #[arg(long)]
    pub checkpoint: Option<u64>,
    #[arg(long, default_value_t = itdec::engine::DEFAULT_MAX_STEPS)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Run directory holding `predictions.tsv`; metrics are written there.
    #[arg(long, required_unless_present = "predictions")]
    pub run_dir: Option<PathBuf>,
    /// `input<TAB>prediction[<TAB>gold[<TAB>halt]]` lines.
    #[arg(long, conflicts_with = "run_dir")]
    pub predictions: Option<PathBuf>,
    /// Gold `input<TAB>output` TSV aligned line by line with the predictions.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    #[command(flatten)]
    pub expansion: ExpansionArgs,
    /// Split label in metrics.csv (default: the predicted file's stem).
    #[arg(long)]
    pub split: Option<String>,
    /// Output directory (default: the run directory, else the predictions' directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Wrong examples written to errors.txt.
    #[arg(long, default_value_t = 100)]
    pub max_errors: usize,
}

/// `a..b`, `a..=b` (both inclusive) or a single number.
pub fn parse_range(s: &str) -> Result<RangeInclusive<usize>, String> {
    let num = |x: &str| x.trim().parse::<usize>().map_err(|_| format!("bad number {x:?}"));
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (num(a)?, num(b.trim_start_matches('='))?),
        None => {
            let v = num(s)?;
            (v, v)
        }
    };
    if lo > hi {
        return Err(format!("empty range {s:?}"));
    }
    Ok(lo..=hi)
}

/// `NxM`: N numbers, M letters.
pub fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected NxM, got {s:?}"))?;
    let n = a.parse().map_err(|_| format!("bad size {s:?}"))?;
    let m = b.parse().map_err(|_| format!("bad size {s:?}"))?;
    if n == 0 || m == 0 {
        return Err(format!("sizes must be positive: {s:?}"));
    }
    Ok((n, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("1..8").unwrap(), 1..=8);
        assert_eq!(parse_range("2..=3").unwrap(), 2..=3);
        assert_eq!(parse_range("4").unwrap(), 4..=4);
        assert!(parse_range("5..2").is_err());
        assert_eq!(parse_size("6x5").unwrap(), (6, 5));
        assert!(parse_size("6").is_err());
    }

    #[test]
    fn cli_is_well_formed() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
