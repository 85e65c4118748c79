//! Cartesian products of a digit vector and a letter vector.
//!
//! Seq2seq form: `2 7 [SEP] a c` maps to `2 a 2 c 7 a 7 c` (row-major, each
//! element its own token). Iterative forms emit one row or one pair per step
//! and rebuild the next input from the original input, `[SEP2]`, and either
//! the last output (short memory) or every output so far (long memory).

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tasks::{IterExample, Pair};
use crate::vocab::{Token, TokenSequence, SEP2_STR, SEP_STR};

pub const DIGITS: [&str; 10] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"];
pub const LETTERS: [&str; 10] = ["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CartesianInstance {
    numbers: Vec<Token>,
    letters: Vec<Token>,
}

impl CartesianInstance {
    pub fn new(numbers: &[&str], letters: &[&str]) -> Result<Self> {
        let check = |xs: &[&str], pool: &[&str], what: &str| -> Result<Vec<Token>> {
            if xs.is_empty() || xs.len() > pool.len() {
                return Err(Error::Config(format!("{what} must have 1..={} elements", pool.len())));
            }
            for (i, x) in xs.iter().enumerate() {
                if !pool.contains(x) {
                    return Err(Error::Config(format!("{x:?} is not a valid {what} element")));
                }
                if xs[..i].contains(x) {
                    return Err(Error::Config(format!("repeated {what} element {x:?}")));
                }
            }
            Ok(xs.iter().map(|x| Token::from_valid(x)).collect())
        };
        Ok(CartesianInstance {
            numbers: check(numbers, &DIGITS, "number")?,
            letters: check(letters, &LETTERS, "letter")?,
        })
    }

    pub fn numbers(&self) -> &[Token] {
        &self.numbers
    }

    pub fn letters(&self) -> &[Token] {
        &self.letters
    }

    /// Recovers the instance from its serialized seq2seq input.
    pub fn from_input(input: &TokenSequence) -> Result<Self> {
        let toks = input.tokens();
        let sep = input
            .position_of(SEP_STR)
            .ok_or_else(|| Error::Config(format!("cartesian input lacks [SEP]: {input}")))?;
        let end = input.position_of(SEP2_STR).unwrap_or(toks.len());
        let strs = |ts: &[Token]| ts.iter().map(|t| t.as_str().to_owned()).collect::<Vec<_>>();
        let numbers = strs(&toks[..sep]);
        let letters = strs(&toks[sep + 1..end]);
        let n: Vec<&str> = numbers.iter().map(String::as_str).collect();
        let l: Vec<&str> = letters.iter().map(String::as_str).collect();
        Self::new(&n, &l)
    }

    /// Number of iterative steps in `unit` granularity.
    pub fn step_count(&self, unit: Unit) -> usize {
        match unit {
            Unit::Row => self.numbers.len(),
            Unit::Token => self.numbers.len() * self.letters.len(),
        }
    }
}

/// Draws an instance with sizes uniform in the given ranges; deterministic in `seed`.
pub fn generate(seed: u64, n_range: RangeInclusive<usize>, l_range: RangeInclusive<usize>) -> CartesianInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_with(&mut rng, n_range, l_range)
}

pub fn generate_with<R: Rng + ?Sized>(
    rng: &mut R,
    n_range: RangeInclusive<usize>,
    l_range: RangeInclusive<usize>,
) -> CartesianInstance {
    assert!(*n_range.start() >= 1 && *n_range.end() <= 10, "number count must lie in 1..=10");
    assert!(*l_range.start() >= 1 && *l_range.end() <= 10, "letter count must lie in 1..=10");
    let n = rng.gen_range(n_range);
    let l = rng.gen_range(l_range);
    let pick = |rng: &mut R, pool: &[&str], k: usize| -> Vec<Token> {
        pool.choose_multiple(rng, k).map(|s| Token::from_valid(s)).collect()
    };
    let numbers = pick(rng, &DIGITS, n);
    let letters = pick(rng, &LETTERS, l);
    CartesianInstance { numbers, letters }
}

/// `numbers [SEP] letters` → row-major `n_i l_j` pairs.
pub fn serialize_seq2seq(inst: &CartesianInstance) -> Pair {
    let mut input: Vec<Token> = inst.numbers.clone();
    input.push(Token::sep());
    input.extend(inst.letters.iter().cloned());
    let output = (0..inst.numbers.len())
        .flat_map(|i| row(inst, i).into_tokens())
        .collect();
    Pair {
        input: TokenSequence::new(input),
        output,
    }
}

fn row(inst: &CartesianInstance, i: usize) -> TokenSequence {
    inst.letters
        .iter()
        .flat_map(|l| [inst.numbers[i].clone(), l.clone()])
        .collect()
}

fn pair(inst: &CartesianInstance, i: usize, j: usize) -> TokenSequence {
    TokenSequence::new(vec![inst.numbers[i].clone(), inst.letters[j].clone()])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Unit {
    Row,
    Token,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Memory {
    Short,
    Long,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExpansionMode {
    pub unit: Unit,
    pub memory: Memory,
}

impl ExpansionMode {
    pub const ALL: [ExpansionMode; 4] = [
        ExpansionMode::new(Unit::Row, Memory::Short),
        ExpansionMode::new(Unit::Token, Memory::Short),
        ExpansionMode::new(Unit::Row, Memory::Long),
        ExpansionMode::new(Unit::Token, Memory::Long),
    ];

    pub const fn new(unit: Unit, memory: Memory) -> Self {
        ExpansionMode { unit, memory }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Unit::Row => "row",
            Unit::Token => "token",
        })
    }
}

impl fmt::Display for Memory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Memory::Short => "short",
            Memory::Long => "long",
        })
    }
}

impl fmt::Display for ExpansionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.unit, self.memory)
    }
}

impl FromStr for Unit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "row" => Ok(Unit::Row),
            "token" => Ok(Unit::Token),
            _ => Err(Error::Config(format!("unknown expansion unit {s:?} (row|token)"))),
        }
    }
}

impl FromStr for Memory {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "short" => Ok(Memory::Short),
            "long" => Ok(Memory::Long),
            _ => Err(Error::Config(format!("unknown memory mode {s:?} (short|long)"))),
        }
    }
}

/// Builds the intermediate steps for `inst` under `mode`.
pub fn expand(inst: &CartesianInstance, mode: ExpansionMode) -> IterExample {
    let original = serialize_seq2seq(inst).input;
    let units: Vec<TokenSequence> = match mode.unit {
        Unit::Row => (0..inst.numbers.len()).map(|i| row(inst, i)).collect(),
        Unit::Token => (0..inst.numbers.len())
            .flat_map(|i| (0..inst.letters.len()).map(move |j| (i, j)))
            .map(|(i, j)| pair(inst, i, j))
            .collect(),
    };
    let mut steps = Vec::with_capacity(units.len());
    let mut input = original.clone();
    let last = units.len() - 1;
    for (k, unit) in units.into_iter().enumerate() {
        let next = adapt_next_input(mode.memory, &original, &input, &unit);
        let output = if k == last { unit.with_eoi() } else { unit };
        steps.push(Pair {
            input: std::mem::replace(&mut input, next),
            output,
        });
    }
    IterExample { steps }
}

/// Turns the last predicted output into the next intermediate input.
pub fn adapt_next_input(
    memory: Memory,
    original_input: &TokenSequence,
    prev_input: &TokenSequence,
    last_output: &TokenSequence,
) -> TokenSequence {
    debug_assert!(!last_output.ends_with_eoi(), "adapt called after EOI");
    match memory {
        Memory::Short => {
            let mut out = original_input.clone();
            out.push(Token::sep2());
            out.extend_from(last_output);
            out
        }
        Memory::Long => {
            let mut out = prev_input.clone();
            if prev_input.position_of(SEP2_STR).is_none() {
                out.push(Token::sep2());
            }
            out.extend_from(last_output);
            out
        }
    }
}

/// Concatenates the step outputs and strips the trailing EOI.
pub fn reassemble(outputs: &[TokenSequence]) -> Result<TokenSequence> {
    match outputs.last() {
        Some(last) if last.ends_with_eoi() => {}
        _ => return Err(Error::UnterminatedIteration),
    }
    let mut out = TokenSequence::default();
    for o in outputs {
        out.extend_from(&o.without_eoi());
    }
    Ok(out)
}

/// Seq2seq pairs for instances with sizes drawn from the given ranges.
pub fn generate_pairs(
    seed: u64,
    n: usize,
    n_range: RangeInclusive<usize>,
    l_range: RangeInclusive<usize>,
) -> Vec<Pair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| serialize_seq2seq(&generate_with(&mut rng, n_range.clone(), l_range.clone())))
        .collect()
}
