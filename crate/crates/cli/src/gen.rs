use std::path::PathBuf;

use anyhow::Context;
use itdec::tasks::{cartesian, cfq, pcfg, write_pairs, Pair, TaskKind};

use crate::args::{ExpandArgs, GenArgs, TaskArg};
use crate::data::{check_writable, expand_file};
use crate::usage;

/// Seeds for test files are offset so they never reuse the training stream.
const TEST_SEED_OFFSET: u64 = 1_000_003;

pub fn run(a: GenArgs) -> anyhow::Result<()> {
    let mut files: Vec<(PathBuf, Vec<Pair>)> = Vec::new();
    let out = |name: &str| a.out.join(name);
    match a.task {
        TaskArg::Pcfg => {
            if *a.literal_len.start() == 0 {
                return Err(usage("--literal-len must start at 1 or more"));
            }
            let cfg = pcfg::SamplerConfig {
                op_count: a.ops.clone(),
                literal_len: a.literal_len.clone(),
                ..pcfg::SamplerConfig::default()
            };
            files.push((out("train.tsv"), pcfg::generate_pairs(a.seed, a.n.unwrap_or(1000), &cfg)));
            let n_test = a.n_test.unwrap_or(0);
            if n_test > 0 {
                files.push((out("test.tsv"), pcfg::generate_pairs(a.seed + TEST_SEED_OFFSET, n_test, &cfg)));
            }
        }
        TaskArg::Cartesian => {
            let sizes = std::iter::once(a.train_max).chain(a.tests.iter().flat_map(|&(n, m)| [n, m]));
            if sizes.clone().any(|s| s == 0 || s > cartesian::DIGITS.len()) {
                return Err(usage(format!("Cartesian sizes must lie in 1..={}", cartesian::DIGITS.len())));
            }
            let max = a.train_max;
            files.push((out("train.tsv"), cartesian::generate_pairs(a.seed, a.n.unwrap_or(10_000), 1..=max, 1..=max)));
            for (k, &(n, m)) in a.tests.iter().enumerate() {
                let seed = a.seed + TEST_SEED_OFFSET * (k as u64 + 1);
                let pairs = cartesian::generate_pairs(seed, a.n_test.unwrap_or(1024), n..=n, m..=m);
                files.push((out(&format!("test-{n}x{m}.tsv")), pairs));
            }
        }
        TaskArg::Cfq => {
            let to_pairs = |v: Vec<cfq::CfqExample>| v.iter().map(cfq::CfqExample::to_pair).collect();
            files.push((out("train.tsv"), to_pairs(cfq::sample_fixtures(a.seed, a.n.unwrap_or(800)))));
            files.push((
                out("test.tsv"),
                to_pairs(cfq::sample_fixtures(a.seed + TEST_SEED_OFFSET, a.n_test.unwrap_or(200))),
            ));
        }
    }
    let paths: Vec<PathBuf> = files.iter().map(|(p, _)| p.clone()).collect();
    check_writable(&paths, a.force)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (path, pairs) in &files {
        write_pairs(path, pairs)?;
        println!("wrote {} ({} examples)", path.display(), pairs.len());
    }
    Ok(())
}

pub fn expand(a: ExpandArgs) -> anyhow::Result<()> {
    let task = TaskKind::from(a.task);
    let mode = a.expansion.resolve(task)?;
    check_writable(&[a.output.clone()], a.force)?;
    let (n, steps) = expand_file(task, mode, &a.input)?;
    write_pairs(&a.output, &steps)?;
    println!("expanded {n} examples into {} steps -> {}", steps.len(), a.output.display());
    Ok(())
}
