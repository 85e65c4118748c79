//! The inference loop: decode, feed the output back as the next input, and
//! stop once an output ends with `[END]`.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{decode_greedy, Transformer};
use crate::tasks::cartesian::{self, CartesianInstance, ExpansionMode, Memory};
use crate::tasks::{cfq, pcfg, Pair, TaskKind};
use crate::vocab::{TokenSequence, Vocabulary, EOI_STR};

/// Default cap on iterations per example.
pub const DEFAULT_MAX_STEPS: usize = 64;

/// Maps one input sequence to one output sequence.
pub trait Predictor: Sync {
    fn predict(&self, input: &TokenSequence) -> Result<TokenSequence>;
}

/// A trained model plus the vocabulary it was trained with.
pub struct ModelPredictor<'a> {
    pub model: &'a Transformer<f32>,
    pub vocab: &'a Vocabulary,
}

impl Predictor for ModelPredictor<'_> {
    fn predict(&self, input: &TokenSequence) -> Result<TokenSequence> {
        let ids = self.vocab.encode(input);
        let out = decode_greedy(self.model, &ids, self.model.config.max_decode_len)?;
        self.vocab.decode(&out)
    }
}

/// How a task turns outputs into the next input and rebuilds the answer.
pub trait TaskAdapter: Sync {
    fn initial_input(&self, input: &TokenSequence) -> TokenSequence {
        input.clone()
    }

    /// Never called on an output that ends with `[END]`.
    fn adapt(&self, original: &TokenSequence, prev_input: &TokenSequence, last_output: &TokenSequence) -> TokenSequence;

    fn reassemble(&self, outputs: &[TokenSequence]) -> Result<TokenSequence>;
}

/// Each output is the next input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct PcfgAdapter;

impl TaskAdapter for PcfgAdapter {
    fn adapt(&self, _: &TokenSequence, _: &TokenSequence, last_output: &TokenSequence) -> TokenSequence {
        last_output.clone()
    }

    fn reassemble(&self, outputs: &[TokenSequence]) -> Result<TokenSequence> {
        match outputs.last() {
            Some(last) if last.ends_with_eoi() => Ok(last.without_eoi()),
            _ => Err(Error::UnterminatedIteration),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CartesianAdapter {
    pub memory: Memory,
}

impl TaskAdapter for CartesianAdapter {
    fn adapt(&self, original: &TokenSequence, prev_input: &TokenSequence, last_output: &TokenSequence) -> TokenSequence {
        cartesian::adapt_next_input(self.memory, original, prev_input, last_output)
    }

    fn reassemble(&self, outputs: &[TokenSequence]) -> Result<TokenSequence> {
        cartesian::reassemble(outputs)
    }
}

/// The question followed by `[SEP2]` and every clause emitted so far.
#[derive(Debug, Clone, Copy, Default)]
pub struct CfqAdapter;

impl TaskAdapter for CfqAdapter {
    fn adapt(&self, original: &TokenSequence, prev_input: &TokenSequence, last_output: &TokenSequence) -> TokenSequence {
        cartesian::adapt_next_input(Memory::Long, original, prev_input, last_output)
    }

    fn reassemble(&self, outputs: &[TokenSequence]) -> Result<TokenSequence> {
        cfq::reassemble(outputs)
    }
}

/// The adapter for `task`; `memory` only matters for Cartesian.
pub fn adapter_for(task: TaskKind, memory: Memory) -> Box<dyn TaskAdapter> {
    match task {
        TaskKind::Pcfg => Box::new(PcfgAdapter),
        TaskKind::Cartesian => Box::new(CartesianAdapter { memory }),
        TaskKind::Cfq => Box::new(CfqAdapter),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HaltReason {
    Eoi,
    MaxSteps,
    /// `[END]` appeared before the end of an output.
    EoiMidSequence,
}

impl fmt::Display for HaltReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HaltReason::Eoi => "eoi",
            HaltReason::MaxSteps => "max_steps",
            HaltReason::EoiMidSequence => "eoi_mid_sequence",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub steps: Vec<Pair>,
    pub halt: HaltReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterativePrediction {
    /// `None` when the loop never terminated or reassembly failed; such
    /// predictions count as wrong.
    pub prediction: Option<TokenSequence>,
    pub trace: IterationTrace,
}

pub fn predict_iterative(
    predictor: &dyn Predictor,
    adapter: &dyn TaskAdapter,
    input: &TokenSequence,
    max_steps: usize,
) -> Result<IterativePrediction> {
    if max_steps == 0 {
        return Err(Error::Config("max_steps must be at least 1".into()));
    }
    let mut current = adapter.initial_input(input);
    let mut steps = Vec::new();
    let mut outputs = Vec::new();
    for _ in 0..max_steps {
        let output = predictor.predict(&current)?;
        let (halt, finished) = if output.ends_with_eoi() {
            (Some(HaltReason::Eoi), output.clone())
        } else if output.position_of(EOI_STR).is_some() {
            (Some(HaltReason::EoiMidSequence), output.clone().with_eoi())
        } else {
            (None, output.clone())
        };
        if let Some(halt) = halt {
            steps.push(Pair { input: current, output });
            outputs.push(finished);
            return Ok(IterativePrediction {
                prediction: adapter.reassemble(&outputs).ok(),
                trace: IterationTrace { steps, halt },
            });
        }
        let next = adapter.adapt(input, &current, &output);
        steps.push(Pair { input: current, output: output.clone() });
        outputs.push(output);
        current = next;
    }
    Ok(IterativePrediction {
        prediction: None,
        trace: IterationTrace {
            steps,
            halt: HaltReason::MaxSteps,
        },
    })
}

/// A single decode of the whole input.
pub fn predict_seq2seq(predictor: &dyn Predictor, input: &TokenSequence) -> Result<TokenSequence> {
    predictor.predict(input)
}

/// Runs `f` over `inputs` on `jobs` threads, keeping input order.
pub fn parallel_map<T, U, F>(inputs: &[T], jobs: usize, f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    if jobs <= 1 {
        return inputs.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| inputs.par_iter().map(f).collect())
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    example: usize,
    step: usize,
    input: String,
    output: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    halt: Option<&'a str>,
}

/// One JSON object per step; the last step of each example carries `halt`.
pub fn write_trace(w: &mut dyn Write, example: usize, trace: &IterationTrace) -> Result<()> {
    let halt = trace.halt.to_string();
    for (i, p) in trace.steps.iter().enumerate() {
        let rec = TraceRecord {
            example,
            step: i + 1,
            input: p.input.to_string(),
            output: p.output.to_string(),
            halt: (i + 1 == trace.steps.len()).then_some(halt.as_str()),
        };
        serde_json::to_writer(&mut *w, &rec).map_err(|e| Error::Io(e.into()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Ground-truth step executors and fixed-behavior predictors used to test
/// the loop independently of learning.
pub mod stubs {
    use super::*;

    /// Solves the rightmost PCFG operation; marks the final value with `[END]`.
    pub struct PcfgOracle;

    impl Predictor for PcfgOracle {
        fn predict(&self, input: &TokenSequence) -> Result<TokenSequence> {
            let next = pcfg::reduce_rightmost(input)?;
            Ok(if pcfg::op_count(&next) == 0 { next.with_eoi() } else { next })
        }
    }

    /// Emits the true next row or pair of a Cartesian product, reading the
    /// progress so far from the intermediate input.
    pub struct CartesianOracle {
        pub mode: ExpansionMode,
    }

    impl Predictor for CartesianOracle {
        fn predict(&self, input: &TokenSequence) -> Result<TokenSequence> {
            let original: TokenSequence = input.iter().take_while(|t| t.as_str() != crate::vocab::SEP2_STR).cloned().collect();
            let inst = CartesianInstance::from_input(&original)?;
            let ex = cartesian::expand(&inst, self.mode);
            ex.steps
                .iter()
                .find(|s| &s.input == input)
                .map(|s| s.output.clone())
                .ok_or_else(|| Error::MalformedQuery(format!("no step of {original} has input {input}")))
        }
    }

    /// Always returns the same sequence.
    pub struct FixedOutput(pub TokenSequence);

    impl Predictor for FixedOutput {
        fn predict(&self, _: &TokenSequence) -> Result<TokenSequence> {
            Ok(self.0.clone())
        }
    }

    /// Echoes its input, so it never emits `[END]` on `[END]`-free inputs.
    pub struct Identity;

    impl Predictor for Identity {
        fn predict(&self, input: &TokenSequence) -> Result<TokenSequence> {
            Ok(input.clone())
        }
    }
}
