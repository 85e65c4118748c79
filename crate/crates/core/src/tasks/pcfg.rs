//! PCFG string-editing programs.
//!
//! Programs are written in prefix form: a unary operation is followed by its
//! argument, a binary operation by two arguments separated by `,`. Leaves are
//! runs of string elements such as `B10`.
//!
//! [`evaluate`] is the recursive interpreter. [`reduce_rightmost`] executes
//! only the rightmost operation token; in prefix form that operation's
//! arguments are always plain literals, so repeated reduction walks the
//! program to its value one operation at a time.

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tasks::{IterExample, Pair};
use crate::vocab::{Token, TokenSequence};

pub const ARG_SEPARATOR: &str = ",";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Copy,
    Reverse,
    Shift,
    Echo,
    SwapFirstLast,
    Repeat,
    Append,
    Prepend,
    RemoveFirst,
    RemoveSecond,
}

impl OpKind {
    pub const ALL: [OpKind; 10] = [
        OpKind::Copy,
        OpKind::Reverse,
        OpKind::Shift,
        OpKind::Echo,
        OpKind::SwapFirstLast,
        OpKind::Repeat,
        OpKind::Append,
        OpKind::Prepend,
        OpKind::RemoveFirst,
        OpKind::RemoveSecond,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Copy => "copy",
            OpKind::Reverse => "reverse",
            OpKind::Shift => "shift",
            OpKind::Echo => "echo",
            OpKind::SwapFirstLast => "swap_first_last",
            OpKind::Repeat => "repeat",
            OpKind::Append => "append",
            OpKind::Prepend => "prepend",
            OpKind::RemoveFirst => "remove_first",
            OpKind::RemoveSecond => "remove_second",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            OpKind::Append | OpKind::Prepend | OpKind::RemoveFirst | OpKind::RemoveSecond => 2,
            _ => 1,
        }
    }

    pub fn lookup(symbol: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|op| op.name() == symbol)
    }

    fn apply_unary(self, x: &[Token]) -> Result<Vec<Token>> {
        if x.is_empty() {
            return Err(Error::EmptyArgument(self.name()));
        }
        let n = x.len();
        Ok(match self {
            OpKind::Copy => x.to_vec(),
            OpKind::Reverse => x.iter().rev().cloned().collect(),
            OpKind::Shift => x[1..].iter().chain(&x[..1]).cloned().collect(),
            OpKind::Echo => x.iter().chain(&x[n - 1..]).cloned().collect(),
            OpKind::SwapFirstLast => {
                let mut v = x.to_vec();
                v.swap(0, n - 1);
                v
            }
            OpKind::Repeat => x.iter().chain(x).cloned().collect(),
            _ => unreachable!("binary op applied as unary"),
        })
    }

    fn apply_binary(self, x: &[Token], y: &[Token]) -> Vec<Token> {
        match self {
            OpKind::Append => x.iter().chain(y).cloned().collect(),
            OpKind::Prepend => y.iter().chain(x).cloned().collect(),
            OpKind::RemoveFirst => y.to_vec(),
            OpKind::RemoveSecond => x.to_vec(),
            _ => unreachable!("unary op applied as binary"),
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::lookup(s).ok_or_else(|| Error::Config(format!("unknown operation {s:?}")))
    }
}

pub fn is_op_token(t: &Token) -> bool {
    OpKind::lookup(t.as_str()).is_some()
}

fn is_element(t: &Token) -> bool {
    t.as_str() != ARG_SEPARATOR && !is_op_token(t)
}

/// Number of operation tokens in a program.
pub fn op_count(tokens: &TokenSequence) -> usize {
    tokens.iter().filter(|t| is_op_token(t)).count()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expression {
    Literal(Vec<Token>),
    Apply(OpKind, Box<Expression>),
    Apply2(OpKind, Box<Expression>, Box<Expression>),
}

impl Expression {
    pub fn op_count(&self) -> usize {
        match self {
            Expression::Literal(_) => 0,
            Expression::Apply(_, a) => 1 + a.op_count(),
            Expression::Apply2(_, a, b) => 1 + a.op_count() + b.op_count(),
        }
    }

    /// Prefix token form, with `,` between the two arguments of a binary op.
    pub fn to_tokens(&self) -> TokenSequence {
        let mut out = Vec::new();
        self.flatten_into(&mut out);
        TokenSequence::new(out)
    }

    fn flatten_into(&self, out: &mut Vec<Token>) {
        match self {
            Expression::Literal(tokens) => out.extend_from_slice(tokens),
            Expression::Apply(op, a) => {
                out.push(Token::from_valid(op.name()));
                a.flatten_into(out);
            }
            Expression::Apply2(op, a, b) => {
                out.push(Token::from_valid(op.name()));
                a.flatten_into(out);
                out.push(Token::from_valid(ARG_SEPARATOR));
                b.flatten_into(out);
            }
        }
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.to_tokens().fmt(f)
    }
}

fn malformed(position: usize, reason: impl Into<String>) -> Error {
    Error::MalformedExpression {
        position,
        reason: reason.into(),
    }
}

/// Parses a prefix-form program.
///
/// Grammar: `Expr := UnaryOp Expr | BinaryOp Expr "," Expr | Literal`.
pub fn parse(tokens: &TokenSequence) -> Result<Expression> {
    let toks = tokens.tokens();
    let (expr, end) = parse_at(toks, 0)?;
    if end != toks.len() {
        return Err(malformed(end, format!("unexpected token {:?}", toks[end].as_str())));
    }
    Ok(expr)
}

fn parse_at(toks: &[Token], pos: usize) -> Result<(Expression, usize)> {
    let Some(tok) = toks.get(pos) else {
        return Err(malformed(pos, "dangling operator: expected an argument"));
    };
    if let Some(op) = OpKind::lookup(tok.as_str()) {
        let (first, next) = parse_at(toks, pos + 1)?;
        if op.arity() == 1 {
            return Ok((Expression::Apply(op, Box::new(first)), next));
        }
        match toks.get(next) {
            Some(t) if t.as_str() == ARG_SEPARATOR => {}
            _ => return Err(malformed(next, format!("expected ',' after first argument of {op}"))),
        }
        let (second, end) = parse_at(toks, next + 1)?;
        return Ok((Expression::Apply2(op, Box::new(first), Box::new(second)), end));
    }
    let end = pos + toks[pos..].iter().take_while(|t| is_element(t)).count();
    if end == pos {
        return Err(malformed(pos, "misplaced ','"));
    }
    Ok((Expression::Literal(toks[pos..end].to_vec()), end))
}

/// Recursive interpreter.
pub fn evaluate(expr: &Expression) -> Result<TokenSequence> {
    eval_tokens(expr).map(TokenSequence::new)
}

fn eval_tokens(expr: &Expression) -> Result<Vec<Token>> {
    match expr {
        Expression::Literal(tokens) => Ok(tokens.clone()),
        Expression::Apply(op, a) => op.apply_unary(&eval_tokens(a)?),
        Expression::Apply2(op, a, b) => Ok(op.apply_binary(&eval_tokens(a)?, &eval_tokens(b)?)),
    }
}

/// Executes the rightmost operation in place, leaving the rest untouched.
pub fn reduce_rightmost(tokens: &TokenSequence) -> Result<TokenSequence> {
    let toks = tokens.tokens();
    let k = toks
        .iter()
        .rposition(is_op_token)
        .ok_or(Error::AlreadyReduced)?;
    let op = OpKind::lookup(toks[k].as_str()).expect("op token");
    let run_end = |start: usize| {
        start
            + toks[start..]
                .iter()
                .take_while(|t| t.as_str() != ARG_SEPARATOR)
                .count()
    };

    let first_end = run_end(k + 1);
    if first_end == k + 1 {
        return Err(malformed(k + 1, format!("{op} has an empty argument")));
    }
    let (value, end) = if op.arity() == 1 {
        (op.apply_unary(&toks[k + 1..first_end])?, first_end)
    } else {
        if first_end >= toks.len() {
            return Err(malformed(first_end, format!("{op} is missing its second argument")));
        }
        let second_end = run_end(first_end + 1);
        if second_end == first_end + 1 {
            return Err(malformed(first_end + 1, format!("{op} has an empty argument")));
        }
        (
            op.apply_binary(&toks[k + 1..first_end], &toks[first_end + 1..second_end]),
            second_end,
        )
    };

    let mut out = Vec::with_capacity(toks.len());
    out.extend_from_slice(&toks[..k]);
    out.extend(value);
    out.extend_from_slice(&toks[end..]);
    Ok(TokenSequence::new(out))
}

/// Breaks a program into one step per operation, each solving the rightmost
/// instruction. The last output is the program's value followed by `[END]`.
pub fn expand_iterative(input: &TokenSequence) -> Result<IterExample> {
    let n = op_count(input);
    if n == 0 {
        return Err(Error::AlreadyReduced);
    }
    let mut steps = Vec::with_capacity(n);
    let mut current = input.clone();
    for _ in 0..n {
        let next = reduce_rightmost(&current)?;
        steps.push(Pair {
            input: current,
            output: next.clone(),
        });
        current = next;
    }
    let last = steps.last_mut().expect("n >= 1");
    last.output = std::mem::take(&mut last.output).with_eoi();
    Ok(IterExample { steps })
}

/// The string elements `A1` through `Z20` used by the default sampler.
pub fn default_alphabet() -> Vec<Token> {
    ('A'..='Z')
        .flat_map(|c| (1..=20).map(move |i| Token::from_valid(&format!("{c}{i}"))))
        .collect()
}

/// Shape parameters for [`sample_expression`].
#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub op_count: RangeInclusive<usize>,
    pub literal_len: RangeInclusive<usize>,
    pub alphabet: Vec<Token>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            op_count: 1..=8,
            literal_len: 1..=5,
            alphabet: default_alphabet(),
        }
    }
}

/// Draws a random program; deterministic in `seed`.
pub fn sample_expression(seed: u64, config: &SamplerConfig) -> Expression {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_expression_with(&mut rng, config)
}

pub fn sample_expression_with<R: Rng + ?Sized>(rng: &mut R, config: &SamplerConfig) -> Expression {
    assert!(!config.alphabet.is_empty(), "alphabet must be non-empty");
    assert!(!config.op_count.is_empty() && !config.literal_len.is_empty());
    let budget = rng.gen_range(config.op_count.clone());
    sample_node(rng, budget, config)
}

fn sample_node<R: Rng + ?Sized>(rng: &mut R, budget: usize, config: &SamplerConfig) -> Expression {
    if budget == 0 {
        let len = rng.gen_range(config.literal_len.clone()).max(1);
        let lit = (0..len)
            .map(|_| config.alphabet.choose(rng).expect("non-empty").clone())
            .collect();
        return Expression::Literal(lit);
    }
    let op = *OpKind::ALL.choose(rng).expect("ten ops");
    if op.arity() == 1 {
        Expression::Apply(op, Box::new(sample_node(rng, budget - 1, config)))
    } else {
        let left = rng.gen_range(0..budget);
        Expression::Apply2(
            op,
            Box::new(sample_node(rng, left, config)),
            Box::new(sample_node(rng, budget - 1 - left, config)),
        )
    }
}

/// Generates `n` seq2seq pairs from the sampler.
pub fn generate_pairs(seed: u64, n: usize, config: &SamplerConfig) -> Vec<Pair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let e = sample_expression_with(&mut rng, config);
            let out = evaluate(&e).expect("sampled programs have non-empty literals");
            Pair {
                input: e.to_tokens(),
                output: out,
            }
        })
        .collect()
}
