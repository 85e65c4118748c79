//! Pre-norm encoder-decoder transformer with optional relative attention
//! and an optional copy decoder.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::attention::{attention, causal_mask, AttentionParams, Positions};
use crate::model::config::{ModelConfig, PositionMode};
use crate::nn::init::{normal, xavier_uniform};
use crate::nn::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::vocab::{TokenId, BOS};

const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

impl Norm {
    fn new<F: Scalar>(store: &mut ParamStore<F>, prefix: &str, d: usize) -> Self {
        Norm {
            gain: store.add(format!("{prefix}.gain"), Tensor::full(&[d], F::one())),
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(&[d])),
        }
    }

    fn apply<F: Scalar>(&self, g: &mut Graph<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias, F::from_f64_lossy(LN_EPS))
    }
}

#[derive(Debug, Clone)]
struct FeedForward {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl FeedForward {
    fn new<F: Scalar>(store: &mut ParamStore<F>, rng: &mut ChaCha8Rng, prefix: &str, d: usize, f: usize) -> Self {
        FeedForward {
            w1: store.add(format!("{prefix}.w1"), xavier_uniform(rng, d, f)),
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(&[f])),
            w2: store.add(format!("{prefix}.w2"), xavier_uniform(rng, f, d)),
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros(&[d])),
        }
    }

    fn apply<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: Var,
        dropout: f64,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let (w1, b1, w2, b2) = (
            g.param(store, self.w1),
            g.param(store, self.b1),
            g.param(store, self.w2),
            g.param(store, self.b2),
        );
        let h = g.matmul(x, w1)?;
        let h = g.add_row(h, b1)?;
        let h = g.relu(h)?;
        let h = g.dropout(h, dropout, rng)?;
        let y = g.matmul(h, w2)?;
        g.add_row(y, b2)
    }
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    norm_attn: Norm,
    attn: AttentionParams,
    norm_ff: Norm,
    ff: FeedForward,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    norm_self: Norm,
    self_attn: AttentionParams,
    norm_cross: Norm,
    cross_attn: AttentionParams,
    norm_ff: Norm,
    ff: FeedForward,
}

#[derive(Debug, Clone)]
struct Layout {
    embedding: ParamId,
    encoder: Vec<EncoderLayer>,
    encoder_norm: Norm,
    decoder: Vec<DecoderLayer>,
    decoder_norm: Norm,
    out_w: ParamId,
    out_b: ParamId,
    copy_gate: Option<(ParamId, ParamId)>,
}

/// Encoder-decoder model. Source and target share one embedding table; the
/// output projection is separate.
#[derive(Debug, Clone)]
pub struct Transformer<F: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<F>,
    layout: Layout,
}

/// Sinusoidal position table rows for positions `0..n`.
pub fn sinusoidal_positions<F: Scalar>(n: usize, d: usize) -> Tensor<F> {
    let mut data = Vec::with_capacity(n * d);
    for pos in 0..n {
        for i in 0..d {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 / rate;
            data.push(F::from_f64_lossy(if i % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::new(vec![n, d], data).expect("non-empty")
}

fn reborrow<'a>(rng: &'a mut Option<&mut dyn RngCore>) -> Option<&'a mut dyn RngCore> {
    match rng {
        Some(r) => Some(&mut **r),
        None => None,
    }
}

impl<F: Scalar> Transformer<F> {
    /// Fresh parameters drawn from `config.init_seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let (d, f, v, h) = (config.d_model, config.d_ff, config.vocab_size, config.heads);
        let rel = config.relative().then_some(config.rel_radius);

        let embedding = store.add("embedding", normal(&mut rng, &[v, d], (d as f64).powf(-0.5)));
        let encoder = (0..config.layers)
            .map(|l| {
                let p = format!("encoder.{l}");
                EncoderLayer {
                    norm_attn: Norm::new(&mut store, &format!("{p}.norm_attn"), d),
                    attn: AttentionParams::new(&mut store, &mut rng, &format!("{p}.self_attn"), d, h, rel),
                    norm_ff: Norm::new(&mut store, &format!("{p}.norm_ff"), d),
                    ff: FeedForward::new(&mut store, &mut rng, &format!("{p}.ff"), d, f),
                }
            })
            .collect();
        let encoder_norm = Norm::new(&mut store, "encoder.norm", d);
        let decoder = (0..config.layers)
            .map(|l| {
                let p = format!("decoder.{l}");
                DecoderLayer {
                    norm_self: Norm::new(&mut store, &format!("{p}.norm_self"), d),
                    self_attn: AttentionParams::new(&mut store, &mut rng, &format!("{p}.self_attn"), d, h, rel),
                    norm_cross: Norm::new(&mut store, &format!("{p}.norm_cross"), d),
                    cross_attn: AttentionParams::new(&mut store, &mut rng, &format!("{p}.cross_attn"), d, h, None),
                    norm_ff: Norm::new(&mut store, &format!("{p}.norm_ff"), d),
                    ff: FeedForward::new(&mut store, &mut rng, &format!("{p}.ff"), d, f),
                }
            })
            .collect();
        let decoder_norm = Norm::new(&mut store, "decoder.norm", d);
        let out_w = store.add("output.weight", xavier_uniform(&mut rng, d, v));
        let out_b = store.add("output.bias", Tensor::zeros(&[v]));
        let copy_gate = config.copy_decoder.then(|| {
            (
                store.add("copy_gate.weight", xavier_uniform(&mut rng, d, 1)),
                store.add("copy_gate.bias", Tensor::zeros(&[1])),
            )
        });
        Ok(Transformer {
            config,
            params: store,
            layout: Layout {
                embedding,
                encoder,
                encoder_norm,
                decoder,
                decoder_norm,
                out_w,
                out_b,
                copy_gate,
            },
        })
    }

    /// The same model with parameters converted to another float type.
    pub fn cast<G: Scalar>(&self) -> Transformer<G> {
        Transformer {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    pub fn num_weights(&self) -> usize {
        self.params.num_weights()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len > self.config.max_len {
            return Err(Error::Overlength { len, max: self.config.max_len });
        }
        Ok(())
    }

    fn embed(&self, g: &mut Graph<F>, ids: &[TokenId], rng: Option<&mut dyn RngCore>) -> Result<Var> {
        let table = g.param(&self.params, self.layout.embedding);
        let x = g.embedding(table, ids)?;
        let mut x = g.scale(x, F::from_f64_lossy((self.config.d_model as f64).sqrt()))?;
        if self.config.position_mode == PositionMode::AbsoluteSinusoidal {
            let pe = g.constant(sinusoidal_positions(ids.len(), self.config.d_model));
            x = g.add(x, pe)?;
        }
        g.dropout(x, self.config.dropout, rng)
    }

    /// Encoder states `[len(src), d_model]`.
    pub fn encode(&self, g: &mut Graph<F>, src: &[TokenId], mut rng: Option<&mut dyn RngCore>) -> Result<Var> {
        self.check_len(src.len())?;
        let store = &self.params;
        let p = self.config.dropout;
        let pos: Vec<i64> = (0..src.len() as i64).collect();
        let mut x = self.embed(g, src, reborrow(&mut rng))?;
        for layer in &self.layout.encoder {
            let h = layer.norm_attn.apply(g, store, x)?;
            let positions = Positions { query: &pos, key: &pos };
            let a = attention(g, store, &layer.attn, h, h, None, Some(positions))?;
            let a = g.dropout(a.output, p, reborrow(&mut rng))?;
            x = g.add(x, a)?;
            let h = layer.norm_ff.apply(g, store, x)?;
            let f = layer.ff.apply(g, store, h, p, reborrow(&mut rng))?;
            let f = g.dropout(f, p, reborrow(&mut rng))?;
            x = g.add(x, f)?;
        }
        self.layout.encoder_norm.apply(g, store, x)
    }

    /// Scores for the token after each prefix of `dec_in`, shape
    /// `[len(dec_in), vocab]`. Without the copy decoder these are logits;
    /// with it they are log-probabilities of the gated mixture.
    pub fn decode(
        &self,
        g: &mut Graph<F>,
        memory: Var,
        src: &[TokenId],
        dec_in: &[TokenId],
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        self.check_len(dec_in.len())?;
        let store = &self.params;
        let p = self.config.dropout;
        let pos: Vec<i64> = (0..dec_in.len() as i64).collect();
        let mask = causal_mask(dec_in.len());
        let mut x = self.embed(g, dec_in, reborrow(&mut rng))?;
        let mut last_cross = Vec::new();
        for layer in &self.layout.decoder {
            let h = layer.norm_self.apply(g, store, x)?;
            let positions = Positions { query: &pos, key: &pos };
            let a = attention(g, store, &layer.self_attn, h, h, Some(&mask), Some(positions))?;
            let a = g.dropout(a.output, p, reborrow(&mut rng))?;
            x = g.add(x, a)?;
            let h = layer.norm_cross.apply(g, store, x)?;
            let c = attention(g, store, &layer.cross_attn, h, memory, None, None)?;
            last_cross = c.weights;
            let c = g.dropout(c.output, p, reborrow(&mut rng))?;
            x = g.add(x, c)?;
            let h = layer.norm_ff.apply(g, store, x)?;
            let f = layer.ff.apply(g, store, h, p, reborrow(&mut rng))?;
            let f = g.dropout(f, p, reborrow(&mut rng))?;
            x = g.add(x, f)?;
        }
        let x = self.layout.decoder_norm.apply(g, store, x)?;
        let w = g.param(store, self.layout.out_w);
        let b = g.param(store, self.layout.out_b);
        let logits = g.matmul(x, w)?;
        let logits = g.add_row(logits, b)?;
        let Some((gw, gb)) = self.layout.copy_gate else {
            return Ok(logits);
        };
        let gw = g.param(store, gw);
        let gb = g.param(store, gb);
        let gate = g.matmul(x, gw)?;
        let gate = g.add_row(gate, gb)?;
        let gate = g.sigmoid(gate)?;
        let mut alpha = last_cross[0];
        for &w in &last_cross[1..] {
            alpha = g.add(alpha, w)?;
        }
        let alpha = g.scale(alpha, F::from_f64_lossy(1.0 / last_cross.len() as f64))?;
        let p_vocab = g.softmax(logits, None)?;
        let mix = copy_mix(g, p_vocab, alpha, src, gate)?;
        g.log(mix)
    }

    /// Scores `[len(tgt), vocab]` where row `t` predicts `tgt[t]` from the
    /// BOS-prefixed shifted target.
    pub fn forward_teacher_forced(
        &self,
        g: &mut Graph<F>,
        src: &[TokenId],
        tgt: &[TokenId],
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        if tgt.is_empty() {
            return Err(Error::EmptyBatch);
        }
        self.check_len(src.len())?;
        self.check_len(tgt.len())?;
        let mut dec_in = Vec::with_capacity(tgt.len());
        dec_in.push(BOS);
        dec_in.extend_from_slice(&tgt[..tgt.len() - 1]);
        let memory = self.encode(g, src, reborrow(&mut rng))?;
        self.decode(g, memory, src, &dec_in, rng)
    }

    /// Mean label-smoothed cross-entropy over all target tokens of `pairs`.
    pub fn loss(
        &self,
        g: &mut Graph<F>,
        pairs: &[(&[TokenId], &[TokenId])],
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        if pairs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut scores = Vec::with_capacity(pairs.len());
        let mut targets = Vec::new();
        for &(src, tgt) in pairs {
            scores.push(self.forward_teacher_forced(g, src, tgt, reborrow(&mut rng))?);
            targets.extend_from_slice(tgt);
        }
        let all = if scores.len() == 1 { scores[0] } else { g.concat_rows(&scores)? };
        g.cross_entropy(all, &targets, F::from_f64_lossy(self.config.label_smoothing))
    }
}

/// `gate · p_vocab + (1 - gate) · alpha · onehot(src)`.
///
/// `p_vocab: [T, V]`, `alpha: [T, S]` attention over source positions,
/// `gate: [T, 1]`. Every row of the result is a distribution when the
/// inputs are.
pub fn copy_mix<F: Scalar>(g: &mut Graph<F>, p_vocab: Var, alpha: Var, src: &[TokenId], gate: Var) -> Result<Var> {
    let v = g.value(p_vocab).cols();
    let s = g.value(alpha).cols();
    if s != src.len() {
        return Err(Error::shape("copy_mix", g.shape(alpha), &[src.len()]));
    }
    let mut onehot = Tensor::zeros(&[s, v]);
    for (i, &id) in src.iter().enumerate() {
        if id >= v {
            return Err(Error::BadTokenId { id, size: v });
        }
        onehot.data_mut()[i * v + id] = F::one();
    }
    let onehot = g.constant(onehot);
    let copy = g.matmul(alpha, onehot)?;
    let keep = g.mul_col(p_vocab, gate)?;
    let rest = g.affine(gate, -F::one(), F::one())?;
    let copied = g.mul_col(copy, rest)?;
    g.add(keep, copied)
}
