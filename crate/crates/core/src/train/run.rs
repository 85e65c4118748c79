use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::checkpoint::Checkpoint;
use crate::train::{TrainObserver, TrainPlan};
use crate::vocab::Vocabulary;

/// Ordered `key = value` facts about a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetadata(pub Vec<(String, String)>);

impl RunMetadata {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.0.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.0.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn parse(text: &str) -> Self {
        RunMetadata(
            text.lines()
                .filter_map(|l| l.split_once('='))
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .collect(),
        )
    }
}

/// Layout: `config.txt`, `vocab.txt`, `loss.csv`, `metadata.txt`,
/// `checkpoints/step-N.ckpt`.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates the directory. An existing non-empty directory is refused
    /// unless `force` is set, in which case it is cleared.
    pub fn create(root: impl Into<PathBuf>, force: bool) -> Result<Self> {
        let root = root.into();
        if root.exists() && fs::read_dir(&root)?.next().is_some() {
            if !force {
                return Err(Error::Config(format!(
                    "{} already exists (use --force to overwrite)",
                    root.display()
                )));
            }
            fs::remove_dir_all(&root)?;
        }
        fs::create_dir_all(root.join("checkpoints"))?;
        Ok(RunDir { root })
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        if !root.join("config.txt").is_file() {
            return Err(Error::Config(format!("{} is not a run directory", root.display())));
        }
        Ok(RunDir { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.txt")
    }

    pub fn vocab_path(&self) -> PathBuf {
        self.root.join("vocab.txt")
    }

    pub fn loss_path(&self) -> PathBuf {
        self.root.join("loss.csv")
    }

    pub fn metadata_path(&self) -> PathBuf {
        self.root.join("metadata.txt")
    }

    pub fn checkpoint_path(&self, step: u64) -> PathBuf {
        self.root.join("checkpoints").join(format!("step-{step}.ckpt"))
    }

    pub fn write_config(&self, model: &ModelConfig, plan: &TrainPlan) -> Result<()> {
        fs::write(self.config_path(), format!("{}{}", model.to_text(), plan.to_text()))?;
        Ok(())
    }

    pub fn read_config(&self) -> Result<(ModelConfig, TrainPlan)> {
        let text = fs::read_to_string(self.config_path())?;
        parse_run_config(&text)
    }

    pub fn write_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        vocab.save(self.vocab_path())
    }

    pub fn read_vocab(&self) -> Result<Vocabulary> {
        Vocabulary::load(self.vocab_path())
    }

    pub fn write_metadata(&self, meta: &RunMetadata) -> Result<()> {
        fs::write(self.metadata_path(), meta.to_text())?;
        Ok(())
    }

    pub fn read_metadata(&self) -> Result<RunMetadata> {
        Ok(RunMetadata::parse(&fs::read_to_string(self.metadata_path())?))
    }

    /// Highest-numbered checkpoint, if any.
    pub fn latest_checkpoint(&self) -> Result<Option<(u64, PathBuf)>> {
        let dir = self.root.join("checkpoints");
        if !dir.is_dir() {
            return Ok(None);
        }
        let mut best: Option<(u64, PathBuf)> = None;
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            let step = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_prefix("step-"))
                .and_then(|n| n.strip_suffix(".ckpt"))
                .and_then(|n| n.parse::<u64>().ok());
            if let Some(s) = step {
                if best.as_ref().map_or(true, |(b, _)| s > *b) {
                    best = Some((s, path));
                }
            }
        }
        Ok(best)
    }

    /// An observer appending to `loss.csv` and saving checkpoints. With
    /// `resume_from`, lines after that step are dropped first.
    pub fn logger(&self, resume_from: Option<u64>) -> Result<RunLogger> {
        let path = self.loss_path();
        let kept = match (resume_from, path.exists()) {
            (Some(step), true) => {
                let text = fs::read_to_string(&path)?;
                let mut out = String::new();
                for line in text.lines() {
                    let keep = match line.split(',').next().and_then(|s| s.parse::<u64>().ok()) {
                        Some(s) => s <= step,
                        None => true,
                    };
                    if keep {
                        out.push_str(line);
                        out.push('\n');
                    }
                }
                out
            }
            _ => "step,loss\n".to_string(),
        };
        fs::write(&path, kept)?;
        let file = OpenOptions::new().append(true).open(&path)?;
        Ok(RunLogger {
            dir: self.clone(),
            loss: BufWriter::new(file),
        })
    }
}

/// Splits a `config.txt` into its model and training halves.
pub fn parse_run_config(text: &str) -> Result<(ModelConfig, TrainPlan)> {
    let mut model = ModelConfig::default();
    let mut plan = TrainPlan::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !plan.set(k, v)? {
            model.set(k, v).map_err(|e| Error::Config(format!("config line {}: {e}", i + 1)))?;
        }
    }
    Ok((model, plan))
}

pub struct RunLogger {
    dir: RunDir,
    loss: BufWriter<File>,
}

impl TrainObserver for RunLogger {
    fn on_step(&mut self, step: u64, loss: f64) -> Result<()> {
        writeln!(self.loss, "{step},{loss}")?;
        Ok(())
    }

    fn on_checkpoint(&mut self, step: u64, ckpt: &Checkpoint) -> Result<()> {
        self.loss.flush()?;
        ckpt.save(self.dir.checkpoint_path(step))
    }
}

impl Drop for RunLogger {
    fn drop(&mut self) {
        let _ = self.loss.flush();
    }
}
