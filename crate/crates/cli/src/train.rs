use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use itdec::model::{ModelConfig, Transformer};
use itdec::nn::checkpoint::Checkpoint;
use itdec::tasks::cartesian::{ExpansionMode, Memory, Unit};
use itdec::tasks::{Pair, TaskKind};
use itdec::train::{
    parse_run_config, preset_steps, EncodedPair, RunDir, RunLogger, RunMetadata, TrainObserver, TrainPlan, Trainer,
};
use itdec::vocab::Vocabulary;

use crate::args::{ExpansionArgs, MemoryArg, ModeArg, TrainArgs, UnitArg};
use crate::data::{diff_lines, expand_file, load_numbered};
use crate::usage;

/// Keys a config file may carry besides model and training keys.
const RUN_KEYS: [&str; 5] = ["task", "mode", "expansion", "memory", "preset"];

/// Fully resolved settings for one training run.
#[derive(Debug, Clone)]
pub struct Settings {
    pub task: TaskKind,
    pub mode: ModeArg,
    pub expansion: ExpansionMode,
    pub preset: Option<String>,
    pub model: ModelConfig,
    pub plan: TrainPlan,
}

impl Settings {
    /// Defaults, then the config file, then the preset, then flags.
    pub fn resolve(a: &TrainArgs) -> anyhow::Result<Self> {
        let mut run_keys: Vec<(String, String)> = Vec::new();
        let (mut model, mut plan) = match &a.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let mut rest = String::new();
                for line in text.lines() {
                    let body = line.split('#').next().unwrap_or("");
                    match body.split_once('=') {
                        Some((k, v)) if RUN_KEYS.contains(&k.trim()) => {
                            run_keys.push((k.trim().to_string(), v.trim().to_string()))
                        }
                        _ => {
                            rest.push_str(line);
                            rest.push('\n');
                        }
                    }
                }
                parse_run_config(&rest).with_context(|| format!("in {}", path.display()))?
            }
            None => (ModelConfig::default(), TrainPlan::default()),
        };
        let file_key = |k: &str| run_keys.iter().rev().find(|(key, _)| key == k).map(|(_, v)| v.as_str());

        let preset = a.preset.clone().or_else(|| file_key("preset").map(str::to_string));
        let mut preset_unit = None;
        let mut preset_task = None;
        if let Some(p) = &preset {
            plan.total_steps = preset_steps(p)?;
            preset_task = p.split('-').next().and_then(|t| t.parse::<TaskKind>().ok());
            preset_unit = p.strip_prefix("cartesian-").map(|u| u.parse::<Unit>()).transpose()?;
        }

        if let (Some(p), Some(pt), Some(t)) = (&preset, preset_task, a.task) {
            if TaskKind::from(t) != pt {
                return Err(usage(format!("--task {} contradicts --preset {p}", TaskKind::from(t).name())));
            }
        }
        if let (Some(p), Some(pu), Some(u)) = (&preset, preset_unit, a.expansion.expansion) {
            if Unit::from(u) != pu {
                return Err(usage(format!("--expansion {} contradicts --preset {p}", Unit::from(u))));
            }
        }
        let task = match (a.task, file_key("task"), preset_task) {
            (Some(t), _, _) => t.into(),
            (None, Some(t), _) => t.parse()?,
            (None, None, Some(t)) => t,
            _ => return Err(usage("no task: pass --task, a --preset, or `task` in --config")),
        };
        let mode = match (a.mode, file_key("mode")) {
            (Some(m), _) => m,
            (None, Some(m)) => ModeArg::parse(m)?,
            (None, None) => ModeArg::Iterative,
        };
        let mut exp = a.expansion;
        if exp.expansion.is_none() {
            exp.expansion = match file_key("expansion").map(str::parse::<Unit>).transpose()?.or(preset_unit) {
                Some(Unit::Row) => Some(UnitArg::Row),
                Some(Unit::Token) => Some(UnitArg::Token),
                None => None,
            };
        }
        if exp.memory.is_none() {
            exp.memory = match file_key("memory").map(str::parse::<Memory>).transpose()? {
                Some(Memory::Short) => Some(MemoryArg::Short),
                Some(Memory::Long) => Some(MemoryArg::Long),
                None => None,
            };
        }
        let expansion = if task == TaskKind::Cartesian {
            exp.resolve(task)?
        } else {
            ExpansionArgs::default().resolve(task)?
        };
        if task != TaskKind::Cartesian && a.expansion.given() {
            return Err(usage("--expansion and --memory only apply to --task cartesian"));
        }

        if let Some(s) = a.steps {
            plan.total_steps = s;
        }
        if let Some(s) = a.seed {
            plan.seed = s;
            model.init_seed = s;
        }
        if let Some(b) = a.batch_size {
            plan.batch_size = b;
        }
        for kv in &a.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            if !plan.set(k.trim(), v.trim())? {
                model.set(k.trim(), v.trim())?;
            }
        }
        plan.validate()?;
        Ok(Settings {
            task,
            mode,
            expansion,
            preset,
            model,
            plan,
        })
    }

    fn with_seed(&self, seed: u64) -> Settings {
        let mut s = self.clone();
        s.plan.seed = seed;
        s.model.init_seed = seed;
        s
    }

    /// Task-level facts shared by a run and its replica parent.
    pub fn describe(&self, meta: &mut RunMetadata) {
        meta.set("task", self.task.name());
        meta.set("mode", self.mode.name());
        if self.task == TaskKind::Cartesian {
            meta.set("expansion", self.expansion.unit);
            meta.set("memory", self.expansion.memory);
        }
        if let Some(p) = &self.preset {
            meta.set("preset", p);
        }
    }
}

/// Task, mode and expansion as recorded in a run's metadata.
pub fn read_task_settings(meta: &RunMetadata) -> anyhow::Result<(TaskKind, ModeArg, ExpansionMode)> {
    let get = |k: &str| meta.get(k).ok_or_else(|| itdec::Error::Config(format!("metadata.txt lacks `{k}`")));
    let task: TaskKind = get("task")?.parse()?;
    let mode = ModeArg::parse(get("mode")?)?;
    let unit = meta.get("expansion").map_or(Ok(Unit::Token), str::parse)?;
    let memory = meta.get("memory").map_or(Ok(Memory::Long), str::parse)?;
    Ok((task, mode, ExpansionMode::new(unit, memory)))
}

/// Replica subdirectories listed by a parent run, or `None` for a single run.
pub fn replicas(dir: &Path) -> anyhow::Result<Option<Vec<PathBuf>>> {
    if dir.join("config.txt").is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(dir.join("metadata.txt"))
        .with_context(|| format!("{} is not a run directory", dir.display()))?;
    let meta = RunMetadata::parse(&text);
    match meta.get("replicas") {
        Some(list) => Ok(Some(list.split(',').map(|s| dir.join(s.trim())).collect())),
        None => Err(itdec::Error::Config(format!("{} is not a run directory", dir.display())).into()),
    }
}

struct Progress {
    log: RunLogger,
    every: u64,
    total: u64,
    start: Instant,
}

impl TrainObserver for Progress {
    fn on_step(&mut self, step: u64, loss: f64) -> itdec::Result<()> {
        self.log.on_step(step, loss)?;
        if self.every > 0 && (step % self.every == 0 || step == self.total) {
            eprintln!("step {step}/{} loss {loss:.4} ({:.0}s)", self.total, self.start.elapsed().as_secs_f64());
        }
        Ok(())
    }

    fn on_checkpoint(&mut self, step: u64, ckpt: &Checkpoint) -> itdec::Result<()> {
        self.log.on_checkpoint(step, ckpt)
    }
}

fn training_pairs(s: &Settings, path: &Path) -> anyhow::Result<(usize, Vec<Pair>)> {
    match s.mode {
        ModeArg::Iterative => expand_file(s.task, s.expansion, path),
        ModeArg::Seq2seq => {
            let pairs: Vec<Pair> = load_numbered(path)?.into_iter().map(|(_, p)| p).collect();
            Ok((pairs.len(), pairs))
        }
    }
}

fn vocab_text(v: &Vocabulary) -> String {
    v.tokens().iter().map(|t| format!("{t}\n")).collect()
}

fn train_one(a: &TrainArgs, s: &Settings, dir_path: &Path, examples: usize, pairs: &[Pair]) -> anyhow::Result<()> {
    let vocab = Vocabulary::build(pairs.iter().flat_map(|p| [&p.input, &p.output]));
    let mut model_cfg = s.model.clone();
    if model_cfg.vocab_size != 0 && model_cfg.vocab_size != vocab.len() {
        return Err(itdec::Error::Config(format!(
            "configured vocab_size {} but the training data has {} tokens",
            model_cfg.vocab_size,
            vocab.len()
        ))
        .into());
    }
    model_cfg.vocab_size = vocab.len();
    model_cfg.validate()?;

    let (dir, resume) = if a.resume {
        let dir = RunDir::open(dir_path)?;
        let (old_model, old_plan) = dir.read_config()?;
        let new_plan = TrainPlan { total_steps: old_plan.total_steps, ..s.plan.clone() };
        if old_model != model_cfg || old_plan != new_plan {
            let diff = diff_lines(
                &format!("{}{}", old_model.to_text(), old_plan.to_text()),
                &format!("{}{}", model_cfg.to_text(), new_plan.to_text()),
            );
            return Err(itdec::Error::Config(format!("config differs from {}:\n{diff}", dir.config_path().display())).into());
        }
        let old_vocab = dir.read_vocab()?;
        if old_vocab != vocab {
            let diff = diff_lines(&vocab_text(&old_vocab), &vocab_text(&vocab));
            return Err(itdec::Error::Config(format!("vocabulary differs from {}:\n{diff}", dir.vocab_path().display())).into());
        }
        let ckpt = dir.latest_checkpoint()?;
        (dir, ckpt)
    } else {
        (RunDir::create(dir_path, a.force)?, None)
    };
    dir.write_config(&model_cfg, &s.plan)?;
    dir.write_vocab(&vocab)?;

    let data = EncodedPair::encode_all(&vocab, pairs);
    let model = Transformer::new(model_cfg.clone())?;
    let weights = model.num_weights();
    let mut trainer = Trainer::new(model, s.plan.clone(), data)?;
    let resumed_from = match &resume {
        Some((step, path)) => {
            trainer.resume(&Checkpoint::load(path)?)?;
            Some(*step)
        }
        None => None,
    };

    let mut meta = RunMetadata::default();
    s.describe(&mut meta);
    meta.set("train_file", a.train.display());
    meta.set("train_examples", examples);
    meta.set("train_pairs", pairs.len());
    meta.set("weights", weights);
    for line in model_cfg.to_text().lines().chain(s.plan.to_text().lines()) {
        if let Some((k, v)) = line.split_once('=') {
            meta.set(k.trim(), v.trim());
        }
    }
    if let Some(step) = resumed_from {
        meta.set("resumed_from", step);
    }
    dir.write_metadata(&meta)?;

    eprintln!(
        "training {} ({} {}) on {} pairs, {} weights, {} steps",
        dir.root().display(),
        s.task.name(),
        s.mode.name(),
        pairs.len(),
        weights,
        s.plan.total_steps
    );
    let start = Instant::now();
    let mut obs = Progress {
        log: dir.logger(resumed_from)?,
        every: a.log_every,
        total: s.plan.total_steps,
        start,
    };
    let history = trainer.run(&mut obs)?;
    drop(obs);

    meta.set("final_step", trainer.step_count());
    if let Some(l) = history.last() {
        meta.set("final_loss", format!("{l:.6}"));
    }
    meta.set("train_seconds", format!("{:.1}", start.elapsed().as_secs_f64()));
    dir.write_metadata(&meta)?;
    Ok(())
}

pub fn run(a: TrainArgs) -> anyhow::Result<()> {
    if a.replicas == 0 {
        return Err(usage("--replicas must be at least 1"));
    }
    let settings = Settings::resolve(&a)?;
    let (examples, pairs) = training_pairs(&settings, &a.train)?;
    if a.replicas == 1 {
        return train_one(&a, &settings, &a.run_dir, examples, &pairs);
    }

    let base = settings.plan.seed;
    let names: Vec<String> = (0..a.replicas as u64).map(|k| format!("seed-{}", base + k)).collect();
    if !a.resume {
        if a.run_dir.exists() && fs::read_dir(&a.run_dir)?.next().is_some() {
            if !a.force {
                return Err(usage(format!("{} already exists (use --force to overwrite)", a.run_dir.display())));
            }
            fs::remove_dir_all(&a.run_dir)?;
        }
        fs::create_dir_all(&a.run_dir)?;
    }
    let mut meta = RunMetadata::default();
    settings.describe(&mut meta);
    meta.set("seed", base);
    meta.set("replicas", names.join(","));
    fs::write(a.run_dir.join("metadata.txt"), meta.to_text())?;
    for (k, name) in names.iter().enumerate() {
        let s = settings.with_seed(base + k as u64);
        train_one(&a, &s, &a.run_dir.join(name), examples, &pairs)?;
    }
    Ok(())
}
