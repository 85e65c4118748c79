use crate::error::Result;
use crate::model::transformer::Transformer;
use crate::nn::{Graph, Scalar, Tensor};
use crate::vocab::{TokenId, BOS, EOI, EOS};

/// Anything that can score the next target token given a source and a
/// BOS-prefixed partial target.
pub trait IncrementalScorer {
    type Memory;

    fn encode_source(&self, src: &[TokenId]) -> Result<Self::Memory>;

    /// Scores over the vocabulary for the token following `prefix`.
    fn next_logits(&self, memory: &Self::Memory, prefix: &[TokenId]) -> Result<Vec<f32>>;
}

/// Index of the largest finite score; ties go to the lowest id.
pub fn argmax(scores: &[f32]) -> Option<TokenId> {
    let mut best: Option<(TokenId, f32)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Greedy decoding. Stops after EOS (dropped from the output), after EOI
/// (kept), or after `max_len` tokens.
pub fn decode_greedy<S: IncrementalScorer>(scorer: &S, src: &[TokenId], max_len: usize) -> Result<Vec<TokenId>> {
    let memory = scorer.encode_source(src)?;
    let mut prefix = vec![BOS];
    for _ in 0..max_len {
        let scores = scorer.next_logits(&memory, &prefix)?;
        let Some(next) = argmax(&scores) else {
            return Err(crate::error::Error::NonFinite("decoder scores"));
        };
        if next == EOS {
            break;
        }
        prefix.push(next);
        if next == EOI {
            break;
        }
    }
    prefix.remove(0);
    Ok(prefix)
}

impl<F: Scalar> IncrementalScorer for Transformer<F> {
    type Memory = (Tensor<F>, Vec<TokenId>);

    fn encode_source(&self, src: &[TokenId]) -> Result<Self::Memory> {
        let mut g = Graph::new();
        let m = self.encode(&mut g, src, None)?;
        Ok((g.value(m).clone(), src.to_vec()))
    }

    fn next_logits(&self, (memory, src): &Self::Memory, prefix: &[TokenId]) -> Result<Vec<f32>> {
        let mut g = Graph::new();
        let m = g.constant(memory.clone());
        let out = self.decode(&mut g, m, src, prefix, None)?;
        let t = g.value(out);
        Ok(t.row(t.rows() - 1).iter().map(|x| x.to_f64_lossy() as f32).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Emits a fixed script, one token per call.
    struct Script(Vec<TokenId>, usize);

    impl IncrementalScorer for Script {
        type Memory = ();
        fn encode_source(&self, _: &[TokenId]) -> Result<()> {
            Ok(())
        }
        fn next_logits(&self, _: &(), prefix: &[TokenId]) -> Result<Vec<f32>> {
            let mut s = vec![0.0; self.1];
            let t = self.0.get(prefix.len() - 1).copied().unwrap_or(self.1 - 1);
            s[t] = 1.0;
            Ok(s)
        }
    }

    #[test]
    fn stops_at_eos_without_emitting_it() {
        let out = decode_greedy(&Script(vec![9, 8, EOS, 7], 10), &[9], 50).unwrap();
        assert_eq!(out, vec![9, 8]);
    }

    #[test]
    fn keeps_eoi() {
        let out = decode_greedy(&Script(vec![9, EOI, 7], 10), &[9], 50).unwrap();
        assert_eq!(out, vec![9, EOI]);
    }

    #[test]
    fn respects_max_len() {
        let out = decode_greedy(&Script(vec![], 10), &[9], 4).unwrap();
        assert_eq!(out, vec![9; 4]);
    }

    #[test]
    fn ties_pick_lowest_id() {
        assert_eq!(argmax(&[0.0, 2.0, 2.0, 1.0]), Some(1));
        assert_eq!(argmax(&[f32::NAN, -1.0]), Some(1));
        assert_eq!(argmax(&[]), None);
    }
}
