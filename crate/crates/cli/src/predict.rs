use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use itdec::engine::stubs::{CartesianOracle, Identity, PcfgOracle};
use itdec::engine::{adapter_for, parallel_map, predict_iterative, predict_seq2seq, write_trace, IterationTrace, ModelPredictor, Predictor};
use itdec::model::Transformer;
use itdec::nn::checkpoint::Checkpoint;
use itdec::tasks::cartesian::ExpansionMode;
use itdec::tasks::{Pair, TaskKind};
use itdec::train::{RunDir, RunMetadata};
use itdec::vocab::TokenSequence;

use crate::args::{ModeArg, PredictArgs, StubArg};
use crate::data::{check_writable, diff_lines, load_numbered};
use crate::train::{read_task_settings, replicas};
use crate::usage;

pub const PREDICTIONS_FILE: &str = "predictions.tsv";
pub const TRACES_FILE: &str = "traces.jsonl";

/// Status column for seq2seq predictions.
pub const SEQ2SEQ_STATUS: &str = "eos";

struct Job<'a> {
    task: TaskKind,
    mode: ModeArg,
    expansion: ExpansionMode,
    max_steps: usize,
    jobs: usize,
    predictor: &'a dyn Predictor,
}

struct Outcome {
    prediction: Option<TokenSequence>,
    status: String,
    trace: Option<IterationTrace>,
}

/// Decodes every pair and writes `input, prediction, gold, status` lines.
/// Returns (examples, valid predictions).
fn decode_all(job: &Job, pairs: &[Pair], output: &Path, traces: Option<&Path>) -> anyhow::Result<(usize, usize)> {
    let adapter = adapter_for(job.task, job.expansion.memory);
    let outcomes = parallel_map(pairs, job.jobs, |p| match job.mode {
        ModeArg::Seq2seq => Ok(Outcome {
            prediction: Some(predict_seq2seq(job.predictor, &p.input)?),
            status: SEQ2SEQ_STATUS.to_string(),
            trace: None,
        }),
        ModeArg::Iterative => {
            let r = predict_iterative(job.predictor, adapter.as_ref(), &p.input, job.max_steps)?;
            Ok(Outcome {
                prediction: r.prediction,
                status: r.trace.halt.to_string(),
                trace: Some(r.trace),
            })
        }
    })?;
    let mut w = BufWriter::new(File::create(output)?);
    let mut valid = 0;
    for (p, o) in pairs.iter().zip(&outcomes) {
        let pred = o.prediction.as_ref().map(ToString::to_string).unwrap_or_default();
        valid += o.prediction.is_some() as usize;
        writeln!(w, "{}\t{}\t{}\t{}", p.input, pred, p.output, o.status)?;
    }
    w.flush()?;
    if let Some(path) = traces {
        let mut t = BufWriter::new(File::create(path)?);
        for (i, o) in outcomes.iter().enumerate() {
            if let Some(trace) = &o.trace {
                write_trace(&mut t, i, trace)?;
            }
        }
        t.flush()?;
    }
    Ok((pairs.len(), valid))
}

fn traces_path(a: &PredictArgs, mode: ModeArg, output: &Path) -> Option<PathBuf> {
    match mode {
        ModeArg::Seq2seq => None,
        ModeArg::Iterative => Some(a.traces.clone().unwrap_or_else(|| output.with_file_name(TRACES_FILE))),
    }
}

fn report(output: &Path, (n, valid): (usize, usize)) {
    println!("wrote {} ({n} examples, {} without a valid prediction)", output.display(), n - valid);
}

fn load_model(dir: &RunDir, step: Option<u64>) -> anyhow::Result<(Transformer<f32>, u64)> {
    let (cfg, _) = dir.read_config()?;
    let (step, path) = match step {
        Some(s) => (s, dir.checkpoint_path(s)),
        None => dir
            .latest_checkpoint()?
            .ok_or_else(|| itdec::Error::Checkpoint(format!("no checkpoints in {}", dir.root().display())))?,
    };
    let ckpt = Checkpoint::load(&path)?;
    if ckpt.config != cfg.to_text() {
        return Err(itdec::Error::Config(format!(
            "{} was written by a different model config:\n{}",
            path.display(),
            diff_lines(&cfg.to_text(), &ckpt.config)
        ))
        .into());
    }
    let mut model = Transformer::new(cfg)?;
    ckpt.restore_params(&mut model.params)?;
    Ok((model, step))
}

fn predict_run(a: &PredictArgs, root: &Path, pairs: &[Pair]) -> anyhow::Result<()> {
    let dir = RunDir::open(root)?;
    let mut meta = dir.read_metadata()?;
    let (task, mode, expansion) = read_task_settings(&meta)?;
    let mut asked = RunMetadata::default();
    if let Some(t) = a.task {
        asked.set("task", TaskKind::from(t).name());
    }
    if let Some(m) = a.mode {
        asked.set("mode", m.name());
    }
    if a.expansion.given() {
        let e = a.expansion.resolve(task)?;
        asked.set("expansion", e.unit);
        asked.set("memory", e.memory);
    }
    let clashes: Vec<String> = asked
        .0
        .iter()
        .filter(|(k, v)| meta.get(k) != Some(v.as_str()))
        .map(|(k, v)| format!("- {k} = {}\n+ {k} = {v}\n", meta.get(k).unwrap_or("")))
        .collect();
    if !clashes.is_empty() {
        return Err(itdec::Error::Config(format!("flags disagree with the run's metadata:\n{}", clashes.concat())).into());
    }

    let vocab = dir.read_vocab()?;
    let (model, step) = load_model(&dir, a.checkpoint)?;
    if model.config.vocab_size != vocab.len() {
        return Err(itdec::Error::Config(format!(
            "vocab.txt has {} tokens but the model expects {}",
            vocab.len(),
            model.config.vocab_size
        ))
        .into());
    }
    let predictor = ModelPredictor { model: &model, vocab: &vocab };
    let output = a.output.clone().unwrap_or_else(|| root.join(PREDICTIONS_FILE));
    let traces = traces_path(a, mode, &output);
    check_writable(&[output.clone()], a.force || a.output.is_none())?;
    let job = Job { task, mode, expansion, max_steps: a.max_steps, jobs: a.jobs, predictor: &predictor };
    let counts = decode_all(&job, pairs, &output, traces.as_deref())?;
    report(&output, counts);

    let split = a.input.file_stem().and_then(|s| s.to_str()).unwrap_or("test");
    meta.set("predict_input", a.input.display());
    meta.set("predict_split", split);
    meta.set("predict_checkpoint", step);
    meta.set("predict_max_steps", a.max_steps);
    meta.set("predict_output", output.display());
    dir.write_metadata(&meta)?;
    Ok(())
}

fn predict_stub(a: &PredictArgs, stub: StubArg, pairs: &[Pair]) -> anyhow::Result<()> {
    let task: TaskKind = a.task.ok_or_else(|| usage("--stub needs --task"))?.into();
    let mode = a.mode.unwrap_or(ModeArg::Iterative);
    let expansion = a.expansion.resolve(task)?;
    let output = a.output.clone().ok_or_else(|| usage("--stub needs --output"))?;
    let pcfg = PcfgOracle;
    let cart = CartesianOracle { mode: expansion };
    let predictor: &dyn Predictor = match (stub, task) {
        (StubArg::NeverHalt, _) => &Identity,
        (StubArg::Oracle, TaskKind::Pcfg) => &pcfg,
        (StubArg::Oracle, TaskKind::Cartesian) => &cart,
        (StubArg::Oracle, TaskKind::Cfq) => return Err(usage("no oracle stub for cfq")),
    };
    let traces = traces_path(a, mode, &output);
    let mut targets = vec![output.clone()];
    targets.extend(traces.clone());
    check_writable(&targets, a.force)?;
    let job = Job { task, mode, expansion, max_steps: a.max_steps, jobs: a.jobs, predictor };
    let counts = decode_all(&job, pairs, &output, traces.as_deref())?;
    report(&output, counts);
    Ok(())
}

pub fn run(a: PredictArgs) -> anyhow::Result<()> {
    if a.max_steps == 0 {
        return Err(usage("--max-steps must be at least 1"));
    }
    let pairs: Vec<Pair> = load_numbered(&a.input)?.into_iter().map(|(_, p)| p).collect();
    if let Some(stub) = a.stub {
        return predict_stub(&a, stub, &pairs);
    }
    let root = a.run_dir.clone().ok_or_else(|| usage("pass --run-dir or --stub"))?;
    match replicas(&root)? {
        None => predict_run(&a, &root, &pairs),
        Some(dirs) => {
            if a.output.is_some() || a.traces.is_some() {
                return Err(usage("--output and --traces cannot be used with a replicated run"));
            }
            for d in dirs {
                predict_run(&a, &d, &pairs)?;
            }
            Ok(())
        }
    }
}
