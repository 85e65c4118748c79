use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::init::xavier_uniform;
use crate::nn::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

/// Clipped relative distance from query `i` to key `j`, in `[-radius, radius]`.
pub fn relative_label(i: i64, j: i64, radius: usize) -> i64 {
    let r = radius as i64;
    (j - i).clamp(-r, r)
}

/// Bucket indices (`label + radius`) for every query/key pair, row-major.
pub fn relative_buckets(query_pos: &[i64], key_pos: &[i64], radius: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(query_pos.len() * key_pos.len());
    for &i in query_pos {
        for &j in key_pos {
            out.push((relative_label(i, j, radius) + radius as i64) as usize);
        }
    }
    out
}

/// Lower-triangular mask: query `i` may see keys `0..=i`.
pub fn causal_mask(n: usize) -> Vec<bool> {
    (0..n).flat_map(|i| (0..n).map(move |j| j <= i)).collect()
}

/// Projections of one multi-head attention block. `relative` holds the
/// per-distance key and value embeddings `[2r+1, d_head]`, shared by heads.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub q: (ParamId, ParamId),
    pub k: (ParamId, ParamId),
    pub v: (ParamId, ParamId),
    pub o: (ParamId, ParamId),
    pub relative: Option<(ParamId, ParamId)>,
    pub heads: usize,
    pub radius: usize,
}

impl AttentionParams {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        rng: &mut R,
        prefix: &str,
        d_model: usize,
        heads: usize,
        relative_radius: Option<usize>,
    ) -> Self {
        let mut proj = |name: &str, rng: &mut R| {
            let w = store.add(format!("{prefix}.{name}.weight"), xavier_uniform(rng, d_model, d_model));
            let b = store.add(format!("{prefix}.{name}.bias"), Tensor::zeros(&[d_model]));
            (w, b)
        };
        let q = proj("q", rng);
        let k = proj("k", rng);
        let v = proj("v", rng);
        let o = proj("o", rng);
        let d_head = d_model / heads;
        let relative = relative_radius.map(|r| {
            let buckets = 2 * r + 1;
            let ak = store.add(format!("{prefix}.rel_key"), xavier_uniform(rng, buckets, d_head));
            let av = store.add(format!("{prefix}.rel_value"), xavier_uniform(rng, buckets, d_head));
            (ak, av)
        });
        AttentionParams {
            q,
            k,
            v,
            o,
            relative,
            heads,
            radius: relative_radius.unwrap_or(0),
        }
    }
}

/// Positions of queries and keys, used only by relative attention. Passing
/// shifted positions is how translation invariance is observed.
#[derive(Debug, Clone, Copy)]
pub struct Positions<'a> {
    pub query: &'a [i64],
    pub key: &'a [i64],
}

pub struct AttentionOutput {
    pub output: Var,
    /// Per head, the pre-softmax scores `[nq, nk]` (already scaled).
    pub logits: Vec<Var>,
    /// Per head, the attention distribution `[nq, nk]`.
    pub weights: Vec<Var>,
}

fn linear<F: Scalar>(g: &mut Graph<F>, store: &ParamStore<F>, x: Var, (w, b): (ParamId, ParamId)) -> Result<Var> {
    let wv = g.param(store, w);
    let bv = g.param(store, b);
    let y = g.matmul(x, wv)?;
    g.add_row(y, bv)
}

/// Multi-head scaled dot-product attention of `queries: [nq, d]` over
/// `keys: [nk, d]`. `mask[i*nk + j]` false hides key `j` from query `i`.
/// With relative parameters, `positions` supplies the index of every
/// query and key.
pub fn attention<F: Scalar>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    p: &AttentionParams,
    queries: Var,
    keys: Var,
    mask: Option<&[bool]>,
    positions: Option<Positions<'_>>,
) -> Result<AttentionOutput> {
    let nq = g.value(queries).rows();
    let nk = g.value(keys).rows();
    let d = g.value(queries).cols();
    let d_head = d / p.heads;
    let q = linear(g, store, queries, p.q)?;
    let k = linear(g, store, keys, p.k)?;
    let v = linear(g, store, keys, p.v)?;

    let rel = match (p.relative, positions) {
        (Some((ak, av)), Some(pos)) => {
            if pos.query.len() != nq || pos.key.len() != nk {
                return Err(Error::shape("attention positions", &[nq, nk], &[pos.query.len(), pos.key.len()]));
            }
            let buckets = relative_buckets(pos.query, pos.key, p.radius);
            Some((g.param(store, ak), g.param(store, av), buckets))
        }
        (Some(_), None) => return Err(Error::Config("relative attention needs positions".into())),
        (None, _) => None,
    };

    let inv_sqrt = F::from_f64_lossy(1.0 / (d_head as f64).sqrt());
    let mut heads_out = Vec::with_capacity(p.heads);
    let mut logits = Vec::with_capacity(p.heads);
    let mut weights = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let qh = g.slice_cols(q, h * d_head, d_head)?;
        let kh = g.slice_cols(k, h * d_head, d_head)?;
        let vh = g.slice_cols(v, h * d_head, d_head)?;
        let mut s = g.matmul_t(qh, kh)?;
        if let Some((ak, _, buckets)) = &rel {
            let srel = g.matmul_t(qh, *ak)?;
            let gathered = g.rel_gather(srel, buckets, nk)?;
            s = g.add(s, gathered)?;
        }
        let s = g.scale(s, inv_sqrt)?;
        let w = g.softmax(s, mask)?;
        let mut out = g.matmul(w, vh)?;
        if let Some((_, av, buckets)) = &rel {
            let mass = g.rel_scatter(w, buckets, 2 * p.radius + 1)?;
            let extra = g.matmul(mass, *av)?;
            out = g.add(out, extra)?;
        }
        heads_out.push(out);
        logits.push(s);
        weights.push(w);
    }
    let joined = if heads_out.len() == 1 { heads_out[0] } else { g.concat_cols(&heads_out)? };
    let output = linear(g, store, joined, p.o)?;
    Ok(AttentionOutput { output, logits, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn labels_clip() {
        assert_eq!(relative_label(0, 20, 8), 8);
        assert_eq!(relative_label(20, 0, 8), -8);
        assert_eq!(relative_label(5, 7, 8), 2);
        assert_eq!(relative_buckets(&[0, 1], &[0, 1, 2], 1), vec![1, 2, 2, 0, 1, 2]);
    }

    #[test]
    fn causal_mask_is_lower_triangular() {
        assert_eq!(causal_mask(2), vec![true, false, true, true]);
    }

    #[test]
    fn masked_keys_get_no_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let p = AttentionParams::new(&mut store, &mut rng, "a", 8, 2, None);
        let mut g = Graph::new();
        let x = g.constant(crate::nn::init::normal(&mut rng, &[3, 8], 1.0));
        let mask = causal_mask(3);
        let out = attention(&mut g, &store, &p, x, x, Some(&mask), None).unwrap();
        for w in &out.weights {
            let w = g.value(*w);
            assert_eq!(w.row(0)[1], 0.0);
            assert_eq!(w.row(1)[2], 0.0);
            assert!((w.row(2).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
