use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use itdec::tasks::cartesian::{self, CartesianInstance, ExpansionMode};
use itdec::tasks::{cfq, pcfg, IterExample, Pair, TaskKind};

use crate::usage;

/// Pairs with their 1-based line numbers; blank lines are skipped.
pub fn load_numbered(path: &Path) -> anyhow::Result<Vec<(usize, Pair)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let (a, b) = line
                .split_once('\t')
                .ok_or_else(|| itdec::Error::parse(path, i + 1, "missing tab separator"))?;
            Ok((i + 1, Pair::new(a, b)))
        })
        .collect()
}

pub fn expand_one(task: TaskKind, mode: ExpansionMode, pair: &Pair) -> itdec::Result<IterExample> {
    match task {
        TaskKind::Pcfg => {
            let ex = pcfg::expand_iterative(&pair.input)?;
            let last = ex.steps.last().map(|p| p.output.without_eoi());
            if last.as_ref() != Some(&pair.output) {
                return Err(itdec::Error::MalformedQuery(format!(
                    "output {} does not match the program's value",
                    pair.output
                )));
            }
            Ok(ex)
        }
        TaskKind::Cartesian => Ok(cartesian::expand(&CartesianInstance::from_input(&pair.input)?, mode)),
        TaskKind::Cfq => cfq::expand_iterative(&cfq::CfqExample::new(pair.input.clone(), pair.output.clone())?),
    }
}

/// Expands every line of `path`; failures name the offending line.
pub fn expand_file(task: TaskKind, mode: ExpansionMode, path: &Path) -> anyhow::Result<(usize, Vec<Pair>)> {
    let pairs = load_numbered(path)?;
    let mut out = Vec::new();
    for (line, p) in &pairs {
        let ex = expand_one(task, mode, p).map_err(|e| itdec::Error::parse(path, *line, e.to_string()))?;
        out.extend(ex.steps);
    }
    Ok((pairs.len(), out))
}

/// Number of iterative steps the example takes; the unit of the per-op
/// breakdown. Zero if the example cannot be expanded.
pub fn op_count(task: TaskKind, mode: ExpansionMode, pair: &Pair) -> usize {
    match task {
        TaskKind::Pcfg => pcfg::op_count(&pair.input),
        TaskKind::Cartesian => CartesianInstance::from_input(&pair.input).map_or(0, |i| i.step_count(mode.unit)),
        TaskKind::Cfq => expand_one(task, mode, pair).map_or(0, |e| e.len()),
    }
}

/// Refuses to overwrite any existing path unless `force`.
pub fn check_writable(paths: &[PathBuf], force: bool) -> anyhow::Result<()> {
    if force {
        return Ok(());
    }
    match paths.iter().find(|p| p.exists()) {
        Some(p) => Err(usage(format!("{} already exists (use --force to overwrite)", p.display()))),
        None => Ok(()),
    }
}

/// Line-level diff of two `key = value` texts, for mismatch reports.
pub fn diff_lines(expected: &str, found: &str) -> String {
    let mut out = String::new();
    for l in expected.lines().filter(|l| !found.lines().any(|f| f == *l)) {
        out.push_str(&format!("- {l}\n"));
    }
    for l in found.lines().filter(|l| !expected.lines().any(|e| e == *l)) {
        out.push_str(&format!("+ {l}\n"));
    }
    out
}
