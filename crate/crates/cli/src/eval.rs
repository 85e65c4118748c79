use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use itdec::metrics::{dump_errors, metrics_csv, EvalRecord, EvalReport};
use itdec::tasks::cartesian::ExpansionMode;
use itdec::tasks::{Pair, TaskKind};
use itdec::train::RunDir;
use itdec::vocab::TokenSequence;

use crate::args::EvalArgs;
use crate::data::{load_numbered, op_count};
use crate::predict::PREDICTIONS_FILE;
use crate::train::{read_task_settings, replicas};
use crate::usage;

pub const METRICS_FILE: &str = "metrics.csv";
pub const ERRORS_FILE: &str = "errors.txt";

/// Builds records from a predictions file, taking gold answers from `gold`
/// when given and from the third column otherwise.
pub fn load_records(task: TaskKind, mode: ExpansionMode, predictions: &Path, gold: Option<&Path>) -> anyhow::Result<Vec<EvalRecord>> {
    let text = fs::read_to_string(predictions).with_context(|| format!("reading {}", predictions.display()))?;
    let rows: Vec<(usize, Vec<&str>)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.split('\t').collect()))
        .collect();
    let golds: Option<Vec<(usize, Pair)>> = gold.map(load_numbered).transpose()?;
    if let Some(g) = &golds {
        if g.len() != rows.len() {
            return Err(itdec::Error::LengthMismatch { predictions: rows.len(), golds: g.len() }.into());
        }
    }
    let mut out = Vec::with_capacity(rows.len());
    for (k, (line, cols)) in rows.iter().enumerate() {
        if cols.len() < 2 {
            return Err(itdec::Error::parse(predictions, *line, "expected input<TAB>prediction").into());
        }
        let input = TokenSequence::from_text(cols[0]);
        let gold_seq = match &golds {
            Some(g) => {
                let (gline, pair) = &g[k];
                if pair.input != input {
                    return Err(itdec::Error::parse(
                        gold.unwrap_or(predictions),
                        *gline,
                        format!("input does not match line {line} of {}", predictions.display()),
                    )
                    .into());
                }
                pair.output.clone()
            }
            None => match cols.get(2) {
                Some(g) => TokenSequence::from_text(g),
                None => return Err(usage(format!("{} has no gold column; pass --gold", predictions.display()))),
            },
        };
        let prediction = (!cols[1].trim().is_empty()).then(|| TokenSequence::from_text(cols[1]));
        let pair = Pair { input, output: gold_seq };
        out.push(EvalRecord {
            op_count: op_count(task, mode, &pair),
            input: pair.input,
            gold: pair.output,
            prediction,
        });
    }
    if out.is_empty() {
        return Err(itdec::Error::EmptyBatch.into());
    }
    Ok(out)
}

fn write_report(out: &Path, report: &EvalReport, max_errors: usize) -> anyhow::Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(METRICS_FILE), metrics_csv(std::slice::from_ref(report)))?;
    fs::write(out.join(ERRORS_FILE), dump_errors(report, max_errors))?;
    println!(
        "{}: accuracy {:.4} ({}/{}) -> {}",
        report.split,
        report.sentence_accuracy(),
        report.correct,
        report.total,
        out.join(METRICS_FILE).display()
    );
    Ok(())
}

fn eval_run(a: &EvalArgs, root: &Path) -> anyhow::Result<EvalReport> {
    let dir = RunDir::open(root)?;
    let meta = dir.read_metadata()?;
    let (task, _, expansion) = read_task_settings(&meta)?;
    let predictions = meta.get("predict_output").map_or_else(|| root.join(PREDICTIONS_FILE), PathBuf::from);
    let split = a.split.clone().or_else(|| meta.get("predict_split").map(str::to_string)).unwrap_or_else(|| "test".into());
    let records = load_records(task, expansion, &predictions, a.gold.as_deref())?;
    let report = EvalReport::build(split, &records);
    write_report(a.out.as_deref().unwrap_or(root), &report, a.max_errors)?;
    Ok(report)
}

pub fn run(a: EvalArgs) -> anyhow::Result<()> {
    if let Some(root) = &a.run_dir {
        return match replicas(root)? {
            None => eval_run(&a, root).map(|_| ()),
            Some(dirs) => {
                if a.out.is_some() {
                    return Err(usage("--out cannot be used with a replicated run"));
                }
                let mut reports = Vec::new();
                for d in &dirs {
                    let mut r = eval_run(&a, d)?;
                    let name = d.file_name().and_then(|n| n.to_str()).unwrap_or("replica");
                    r.split = format!("{name}/{}", r.split);
                    reports.push(r);
                }
                let mean = reports.iter().map(EvalReport::sentence_accuracy).sum::<f64>() / reports.len() as f64;
                fs::write(root.join(METRICS_FILE), metrics_csv(&reports))?;
                println!("mean accuracy over {} replicas: {mean:.4}", reports.len());
                Ok(())
            }
        };
    }
    let predictions = a.predictions.clone().ok_or_else(|| usage("pass --run-dir or --predictions"))?;
    let task: TaskKind = a.task.ok_or_else(|| usage("--predictions needs --task"))?.into();
    let expansion = a.expansion.resolve(task)?;
    let records = load_records(task, expansion, &predictions, a.gold.as_deref())?;
    let split = a.split.clone().unwrap_or_else(|| {
        a.gold
            .as_deref()
            .unwrap_or(&predictions)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("test")
            .to_string()
    });
    let out = a.out.clone().unwrap_or_else(|| {
        predictions.parent().filter(|p| !p.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    });
    write_report(&out, &EvalReport::build(split, &records), a.max_errors)
}
