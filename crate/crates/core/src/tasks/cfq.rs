//! CFQ-style semantic parsing: questions paired with SPARQL queries.
//!
//! A query is split into its header (`SELECT ... WHERE {`), the clauses of
//! the WHERE body in sorted order, and the closing brace. Each becomes one
//! intermediate output; intermediate inputs are the question followed by
//! `[SEP2]` and every output produced so far.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tasks::{IterExample, Pair};
use crate::vocab::{Token, TokenSequence};

pub const CLAUSE_SEPARATOR: &str = ".";
pub const OPEN_BRACE: &str = "{";
pub const CLOSE_BRACE: &str = "}";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CfqExample {
    pub question: TokenSequence,
    pub query: TokenSequence,
}

impl CfqExample {
    pub fn new(question: impl Into<TokenSequence>, query: impl Into<TokenSequence>) -> Result<Self> {
        let ex = CfqExample {
            question: question.into(),
            query: query.into(),
        };
        if ex.query.count_of(OPEN_BRACE) != 1 || ex.query.count_of(CLOSE_BRACE) != 1 {
            return Err(Error::MalformedQuery(format!(
                "expected exactly one '{{' and one '}}' in {}",
                ex.query
            )));
        }
        Ok(ex)
    }

    pub fn to_pair(&self) -> Pair {
        Pair {
            input: self.question.clone(),
            output: self.query.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClauseDecomposition {
    pub header: TokenSequence,
    pub clauses: Vec<TokenSequence>,
    pub footer: TokenSequence,
}

impl ClauseDecomposition {
    /// `header clause . clause . ... }`
    pub fn to_query(&self) -> TokenSequence {
        join(&self.header, &self.clauses, &self.footer)
    }
}

fn join(header: &TokenSequence, clauses: &[TokenSequence], footer: &TokenSequence) -> TokenSequence {
    let mut out = header.clone();
    for (i, c) in clauses.iter().enumerate() {
        if i > 0 {
            out.push(Token::from_valid(CLAUSE_SEPARATOR));
        }
        out.extend_from(c);
    }
    out.extend_from(footer);
    out
}

fn paren_delta(t: &Token) -> i64 {
    t.as_str()
        .chars()
        .map(|c| match c {
            '(' => 1,
            ')' => -1,
            _ => 0,
        })
        .sum()
}

/// Splits the WHERE body on top-level `.` tokens and sorts the clauses.
pub fn decompose(query: &TokenSequence) -> Result<ClauseDecomposition> {
    let toks = query.tokens();
    let bad = |why: &str| Error::MalformedQuery(format!("{why}: {query}"));
    if query.count_of(OPEN_BRACE) != 1 || query.count_of(CLOSE_BRACE) != 1 {
        return Err(bad("unbalanced braces"));
    }
    let open = query.position_of(OPEN_BRACE).expect("counted");
    let close = query.position_of(CLOSE_BRACE).expect("counted");
    if close < open || close != toks.len() - 1 {
        return Err(bad("unbalanced braces"));
    }

    let mut clauses = Vec::new();
    let mut current = Vec::new();
    let mut depth = 0i64;
    for t in &toks[open + 1..close] {
        if depth == 0 && t.as_str() == CLAUSE_SEPARATOR {
            if current.is_empty() {
                return Err(bad("empty clause"));
            }
            clauses.push(TokenSequence::new(std::mem::take(&mut current)));
            continue;
        }
        depth += paren_delta(t);
        if depth < 0 {
            return Err(bad("unbalanced parentheses"));
        }
        current.push(t.clone());
    }
    if depth != 0 {
        return Err(bad("unbalanced parentheses"));
    }
    if !current.is_empty() {
        clauses.push(TokenSequence::new(current));
    } else if !clauses.is_empty() {
        return Err(bad("empty clause"));
    }
    clauses.sort_by_cached_key(|c| c.to_string());

    Ok(ClauseDecomposition {
        header: TokenSequence::new(toks[..=open].to_vec()),
        clauses,
        footer: TokenSequence::new(vec![toks[close].clone()]),
    })
}

/// The query with its clauses sorted and single-space separated.
pub fn normalize_query(query: &TokenSequence) -> Result<TokenSequence> {
    decompose(query).map(|d| d.to_query())
}

/// Header, one step per clause, then the closing brace with `[END]`.
pub fn expand_iterative(ex: &CfqExample) -> Result<IterExample> {
    let d = decompose(&ex.query)?;
    let mut outputs = Vec::with_capacity(d.clauses.len() + 2);
    outputs.push(d.header);
    outputs.extend(d.clauses);
    outputs.push(d.footer.with_eoi());

    let mut input = ex.question.clone();
    let mut steps = Vec::with_capacity(outputs.len());
    for (i, out) in outputs.into_iter().enumerate() {
        let next = if i == 0 {
            let mut x = input.clone();
            x.push(Token::sep2());
            x.extend_from(&out);
            x
        } else {
            input.concat(&out)
        };
        steps.push(Pair {
            input: std::mem::replace(&mut input, next),
            output: out,
        });
    }
    Ok(IterExample { steps })
}

/// Rebuilds a query from step outputs; the last one must end with `[END]`.
pub fn reassemble(outputs: &[TokenSequence]) -> Result<TokenSequence> {
    let Some(last) = outputs.last() else {
        return Err(Error::UnterminatedIteration);
    };
    if !last.ends_with_eoi() {
        return Err(Error::UnterminatedIteration);
    }
    if outputs.len() == 1 {
        return Ok(last.without_eoi());
    }
    let clauses = &outputs[1..outputs.len() - 1];
    Ok(join(&outputs[0], clauses, &last.without_eoi()))
}

/// Which half of a split to load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPart {
    Train,
    Test,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn part(&self, part: SplitPart) -> &[usize] {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Test => &self.test,
        }
    }
}

/// Reads `train` / `test` sections, one integer index per line.
pub fn load_split_indices(path: impl AsRef<Path>) -> Result<SplitIndices> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut split = SplitIndices::default();
    let mut section: Option<SplitPart> = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        match line {
            "" => continue,
            "train" => section = Some(SplitPart::Train),
            "test" => section = Some(SplitPart::Test),
            _ => {
                let idx: usize = line
                    .parse()
                    .map_err(|_| Error::parse(path, i + 1, format!("bad index {line:?}")))?;
                match section {
                    Some(SplitPart::Train) => split.train.push(idx),
                    Some(SplitPart::Test) => split.test.push(idx),
                    None => return Err(Error::parse(path, i + 1, "index before a train/test header")),
                }
            }
        }
    }
    Ok(split)
}

/// Reads a `question<TAB>query` dataset file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<CfqExample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let (q, s) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, i + 1, "missing tab separator"))?;
            CfqExample::new(q, s).map_err(|e| Error::parse(path, i + 1, e.to_string()))
        })
        .collect()
}

/// Selects the examples of one split part by index.
pub fn load_cfq(
    dataset: impl AsRef<Path>,
    split: impl AsRef<Path>,
    part: SplitPart,
) -> Result<Vec<CfqExample>> {
    let all = load_dataset(dataset)?;
    let split = load_split_indices(split)?;
    select(&all, split.part(part))
}

pub fn select(all: &[CfqExample], indices: &[usize]) -> Result<Vec<CfqExample>> {
    indices
        .iter()
        .map(|&index| {
            all.get(index).cloned().ok_or(Error::IndexOutOfRange {
                index,
                len: all.len(),
            })
        })
        .collect()
}

/// (base verb, past tense, predicate) triples for the fixture grammar.
const RELATIONS: [(&str, &str, &str); 10] = [
    ("direct", "directed", "ns:film.director.film"),
    ("edit", "edited", "ns:film.editor.film"),
    ("produce", "produced", "ns:film.producer.film"),
    ("write", "wrote", "ns:film.writer.film"),
    ("influence", "influenced", "ns:influence.influence_node.influenced"),
    ("marry", "married", "ns:people.person.spouse_s"),
    ("employ", "employed", "ns:business.employer.employees"),
    ("found", "founded", "ns:organization.organization.founders"),
    ("acquire", "acquired", "ns:business.acquisition.acquired"),
    ("distribute", "distributed", "ns:film.film_distributor.films"),
];

/// Number of distinct question templates in the fixture grammar.
pub const FIXTURE_TEMPLATES: usize = RELATIONS.len() * 5;

/// One example from template `index` (0..[`FIXTURE_TEMPLATES`]); raw clause
/// order follows the question, not the sorted convention.
pub fn fixture_example(index: usize) -> CfqExample {
    let (base, past, pred) = RELATIONS[index % RELATIONS.len()];
    let (q, s) = match index / RELATIONS.len() {
        0 => (
            format!("Did M0 {base} M1"),
            format!("SELECT count(*) WHERE {{ M0 {pred} M1 }}"),
        ),
        1 => (
            format!("Who {past} M0"),
            format!("SELECT DISTINCT ?x0 WHERE {{ ?x0 {pred} M0 . ?x0 a ns:people.person }}"),
        ),
        2 => (
            format!("Did M0 {base} M1 and M2"),
            format!("SELECT count(*) WHERE {{ M0 {pred} M2 . M0 {pred} M1 }}"),
        ),
        3 => (
            format!("Who {past} M0 and M1"),
            format!(
                "SELECT DISTINCT ?x0 WHERE {{ ?x0 {pred} M1 . ?x0 {pred} M0 . ?x0 a ns:people.person }}"
            ),
        ),
        _ => (
            format!("Which person other than M1 {past} M0"),
            format!(
                "SELECT DISTINCT ?x0 WHERE {{ ?x0 {pred} M0 . FILTER ( ?x0 != M1 ) . ?x0 a ns:people.person }}"
            ),
        ),
    };
    CfqExample::new(q.as_str(), s.as_str()).expect("fixture queries are well formed")
}

/// Every fixture template once, in order.
pub fn fixture_corpus() -> Vec<CfqExample> {
    (0..FIXTURE_TEMPLATES).map(fixture_example).collect()
}

/// `n` fixture examples drawn with replacement; deterministic in `seed`.
pub fn sample_fixtures(seed: u64, n: usize) -> Vec<CfqExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<usize> = (0..FIXTURE_TEMPLATES).collect();
    (0..n)
        .map(|_| fixture_example(*ids.choose(&mut rng).expect("non-empty")))
        .collect()
}
