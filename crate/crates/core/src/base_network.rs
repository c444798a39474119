//! Per-domain base network: news encoder, candidate-conditioned attention
//! user encoder, and the neural CF scorer.
//!
//! Parameter names (`{d}` is `source` or `target`):
//!
//! ```text
//! embedding                     |V| x D, shared by both domains
//! {d}.attention.hidden.{w,b}    D x 2D, D      (ReLU)
//! {d}.attention.out.w           1 x D
//! {d}.cf.{i}.{w,b}              MLP 2D -> 80 -> 40 -> 1, ReLU hidden, sigmoid out
//! ```

use std::collections::HashMap;

use rand::Rng;

use crate::corpus::{Domain, NewsArticle, TrainingExample, PAD_ID};
use crate::error::{Error, Result};
use crate::numeric::ops::{self, affine, affine_backward, relu, relu_backward, sigmoid};
use crate::numeric::{uniform, xavier, Gradients, ParameterSet, Tensor};

type CfTrace = (Vec<Vec<f64>>, Vec<Vec<f64>>, f64);

pub const EMBEDDING: &str = "embedding";
pub const EMBEDDING_INIT: f64 = 0.05;
/// Predictions are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]` inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

fn name(domain: Domain, rest: &str) -> String {
    format!("{}.{rest}", domain.prefix())
}

/// Embedding rows ~ U(-0.05, 0.05); the padding row is zero.
pub fn init_embedding<R: Rng + ?Sized>(
    params: &mut ParameterSet,
    vocab_len: usize,
    dim: usize,
    rng: &mut R,
) -> Result<()> {
    let mut e = uniform(&[vocab_len, dim], EMBEDDING_INIT, rng);
    if (PAD_ID as usize) < vocab_len {
        e.row_mut(PAD_ID as usize).fill(0.0);
    }
    params.insert(EMBEDDING, e)
}

/// Attention unit and CF layers of one domain: Xavier weights, zero biases.
pub fn init_network<R: Rng + ?Sized>(
    params: &mut ParameterSet,
    domain: Domain,
    dim: usize,
    cf_hidden: &[usize],
    rng: &mut R,
) -> Result<()> {
    params.insert(name(domain, "attention.hidden.w"), xavier(dim, 2 * dim, rng))?;
    params.insert(name(domain, "attention.hidden.b"), Tensor::zeros(&[dim]))?;
    params.insert(name(domain, "attention.out.w"), xavier(1, dim, rng))?;
    let mut widths = vec![2 * dim];
    widths.extend_from_slice(cf_hidden);
    widths.push(1);
    for (i, w) in widths.windows(2).enumerate() {
        params.insert(name(domain, &format!("cf.{i}.w")), xavier(w[1], w[0], rng))?;
        params.insert(name(domain, &format!("cf.{i}.b")), Tensor::zeros(&[w[1]]))?;
    }
    Ok(())
}

/// Binary cross-entropy with the prediction clamped away from 0 and 1.
pub fn bce(prob: f64, label: f64) -> f64 {
    let p = prob.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

/// d bce / d logit; zero where the clamp is active.
fn bce_logit_grad(prob: f64, label: f64) -> f64 {
    if !(PROB_FLOOR..=1.0 - PROB_FLOOR).contains(&prob) {
        0.0
    } else {
        prob - label
    }
}

fn check_label(label: u8) -> Result<f64> {
    match label {
        0 => Ok(0.0),
        1 => Ok(1.0),
        other => Err(Error::Precondition(format!("label {other} is not 0 or 1"))),
    }
}

struct Layer<'a> {
    w: &'a Tensor,
    b: &'a Tensor,
}

/// Read-only view of one domain's network inside a [`ParameterSet`].
pub struct BaseNetwork<'a> {
    domain: Domain,
    dim: usize,
    embedding: &'a Tensor,
    attn_hidden: Layer<'a>,
    /// No bias: softmax over the history cancels any constant logit shift.
    attn_out: &'a Tensor,
    cf: Vec<Layer<'a>>,
}

/// Forward values kept for the backward pass of one example.
struct Trace {
    attn_pre: Vec<Vec<f64>>,
    attn_hid: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    cf_inputs: Vec<Vec<f64>>,
    cf_pre: Vec<Vec<f64>>,
    prob: f64,
}

/// Gradient buffers for the non-embedding parameters of one network.
struct LocalGrads {
    attn_hidden: (Tensor, Tensor),
    attn_out: Tensor,
    cf: Vec<(Tensor, Tensor)>,
}

impl<'a> BaseNetwork<'a> {
    pub fn new(params: &'a ParameterSet, domain: Domain) -> Result<Self> {
        let layer = |rest: &str| -> Result<Layer<'a>> {
            Ok(Layer {
                w: params.require(&name(domain, &format!("{rest}.w")))?,
                b: params.require(&name(domain, &format!("{rest}.b")))?,
            })
        };
        let embedding = params.require(EMBEDDING)?;
        let dim = embedding.cols();
        let mut cf = Vec::new();
        while params.contains(&name(domain, &format!("cf.{}.w", cf.len()))) {
            cf.push(layer(&format!("cf.{}", cf.len()))?);
        }
        if cf.is_empty() {
            return Err(Error::Unknown {
                kind: "parameter",
                id: name(domain, "cf.0.w"),
            });
        }
        let net = BaseNetwork {
            domain,
            dim,
            embedding,
            attn_hidden: layer("attention.hidden")?,
            attn_out: params.require(&name(domain, "attention.out.w"))?,
            cf,
        };
        if net.attn_hidden.w.cols() != 2 * dim || net.cf[0].w.cols() != 2 * dim {
            return Err(Error::ShapeMismatch {
                op: "base network",
                left: net.attn_hidden.w.dims().to_vec(),
                right: vec![dim],
            });
        }
        Ok(net)
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Mean of the token embeddings.
    pub fn news_encode(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(Error::Empty("article has no tokens".into()));
        }
        let mut out = vec![0.0; self.dim];
        for &t in tokens {
            if t as usize >= self.embedding.rows() {
                return Err(Error::Unknown {
                    kind: "word id",
                    id: t.to_string(),
                });
            }
            for (o, e) in out.iter_mut().zip(self.embedding.row(t as usize)) {
                *o += e;
            }
        }
        let n = tokens.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        Ok(out)
    }

    fn attention_logit(&self, item: &[f64], cand: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let pre = affine(self.attn_hidden.w, Some(self.attn_hidden.b), &ops::concat(item, cand))?;
        let hid = relu(&pre);
        let logit = affine(self.attn_out, None, &hid)?[0];
        Ok((pre, hid, logit))
    }

    /// Softmax over attention-unit logits of `[item, candidate]`.
    pub fn attention_weights(&self, history: &[Vec<f64>], candidate: &[f64]) -> Result<Vec<f64>> {
        if history.is_empty() {
            return Err(Error::Empty("attention over an empty history".into()));
        }
        let logits = history
            .iter()
            .map(|h| self.attention_logit(h, candidate).map(|r| r.2))
            .collect::<Result<Vec<_>>>()?;
        Ok(ops::softmax(&logits))
    }

    /// Attention-weighted sum of the history representations.
    pub fn user_encode(&self, history: &[Vec<f64>], candidate: &[f64]) -> Result<Vec<f64>> {
        let alpha = self.attention_weights(history, candidate)?;
        let rows: Vec<&[f64]> = history.iter().map(Vec::as_slice).collect();
        ops::weighted_sum(&alpha, &rows)
    }

    /// Plain mean of the history representations; used where no candidate exists.
    pub fn user_encode_unconditioned(&self, history: &[Vec<f64>]) -> Result<Vec<f64>> {
        let rows: Vec<&[f64]> = history.iter().map(Vec::as_slice).collect();
        ops::mean_rows(&rows)
    }

    /// Forward trace kept for the backward pass.
    fn cf_forward(&self, input: Vec<f64>) -> Result<CfTrace> {
        let mut inputs = Vec::with_capacity(self.cf.len());
        let mut pres = Vec::with_capacity(self.cf.len());
        let mut x = input;
        for (i, l) in self.cf.iter().enumerate() {
            let pre = affine(l.w, Some(l.b), &x)?;
            let next = if i + 1 < self.cf.len() { relu(&pre) } else { pre.clone() };
            inputs.push(std::mem::replace(&mut x, next));
            pres.push(pre);
        }
        let logit = x[0];
        Ok((inputs, pres, logit))
    }

    /// Preference score `sigmoid(MLP([user, news]))`.
    pub fn predict(&self, user: &[f64], news: &[f64]) -> Result<f64> {
        if user.len() != self.dim || news.len() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "predict",
                left: vec![user.len()],
                right: vec![news.len()],
            });
        }
        let (_, _, logit) = self.cf_forward(ops::concat(user, news))?;
        Ok(sigmoid(logit))
    }

    /// Score of `candidate` for a user who read `history` (article indices).
    pub fn score(&self, articles: &[NewsArticle], history: &[usize], candidate: usize) -> Result<f64> {
        let hist = history
            .iter()
            .map(|&a| self.news_encode(&articles[a].tokens))
            .collect::<Result<Vec<_>>>()?;
        let cand = self.news_encode(&articles[candidate].tokens)?;
        let user = self.user_encode(&hist, &cand)?;
        self.predict(&user, &cand)
    }

    fn forward_trace(&self, hist: &[&[f64]], cand: &[f64]) -> Result<(Trace, Vec<f64>)> {
        let mut attn_pre = Vec::with_capacity(hist.len());
        let mut attn_hid = Vec::with_capacity(hist.len());
        let mut logits = Vec::with_capacity(hist.len());
        for h in hist {
            let (pre, hid, l) = self.attention_logit(h, cand)?;
            attn_pre.push(pre);
            attn_hid.push(hid);
            logits.push(l);
        }
        let alpha = ops::softmax(&logits);
        let user = ops::weighted_sum(&alpha, hist)?;
        let (cf_inputs, cf_pre, logit) = self.cf_forward(ops::concat(&user, cand))?;
        let prob = sigmoid(logit);
        Ok((
            Trace {
                attn_pre,
                attn_hid,
                alpha,
                cf_inputs,
                cf_pre,
                prob,
            },
            user,
        ))
    }

    fn new_local_grads(&self) -> LocalGrads {
        let z = |l: &Layer| (Tensor::zeros(l.w.dims()), Tensor::zeros(l.b.dims()));
        LocalGrads {
            attn_hidden: z(&self.attn_hidden),
            attn_out: Tensor::zeros(self.attn_out.dims()),
            cf: self.cf.iter().map(z).collect(),
        }
    }

    /// Backward of one example given `d loss / d logit`. Returns the
    /// gradients w.r.t. each history representation and the candidate's.
    fn backward(
        &self,
        tr: &Trace,
        hist: &[&[f64]],
        cand: &[f64],
        dlogit: f64,
        g: &mut LocalGrads,
    ) -> (Vec<Vec<f64>>, Vec<f64>) {
        let d = self.dim;
        let mut dy = vec![dlogit];
        for i in (0..self.cf.len()).rev() {
            let l = &self.cf[i];
            let (gw, gb) = &mut g.cf[i];
            let dx = affine_backward(l.w, &tr.cf_inputs[i], &dy, gw, Some(gb));
            dy = if i > 0 { relu_backward(&tr.cf_pre[i - 1], &dx) } else { dx };
        }
        let (du, dc_direct) = dy.split_at(d);
        let mut dcand = dc_direct.to_vec();

        let mut dhist: Vec<Vec<f64>> = tr.alpha.iter().map(|&a| du.iter().map(|x| a * x).collect()).collect();
        let dalpha: Vec<f64> = hist.iter().map(|h| ops::dot(du, h)).collect();
        let dlogits = ops::softmax_backward(&tr.alpha, &dalpha);

        let (hw, hb) = &mut g.attn_hidden;
        let ow = &mut g.attn_out;
        for (i, h) in hist.iter().enumerate() {
            let ds = dlogits[i];
            if ds == 0.0 {
                continue;
            }
            let dhid = affine_backward(self.attn_out, &tr.attn_hid[i], &[ds], ow, None);
            let dpre = relu_backward(&tr.attn_pre[i], &dhid);
            let input = ops::concat(h, cand);
            let din = affine_backward(self.attn_hidden.w, &input, &dpre, hw, Some(hb));
            for (a, b) in dhist[i].iter_mut().zip(&din[..d]) {
                *a += b;
            }
            for (a, b) in dcand.iter_mut().zip(&din[d..]) {
                *a += b;
            }
        }
        (dhist, dcand)
    }

    fn store_local(&self, g: LocalGrads, grads: &mut Gradients) -> Result<()> {
        let (hw, hb) = g.attn_hidden;
        let ow = g.attn_out;
        let mut put = |rest: String, t: Tensor| grads.slot(&name(self.domain, &rest), t.dims()).add_scaled(&t, 1.0);
        put("attention.hidden.w".into(), hw)?;
        put("attention.hidden.b".into(), hb)?;
        put("attention.out.w".into(), ow)?;
        for (i, (w, b)) in g.cf.into_iter().enumerate() {
            put(format!("cf.{i}.w"), w)?;
            put(format!("cf.{i}.b"), b)?;
        }
        Ok(())
    }

    /// Smallest `|pre-activation|` of any ReLU unit over `batch`. Finite
    /// differences are only meaningful when this exceeds the step size.
    pub fn relu_margin(&self, articles: &[NewsArticle], batch: &[TrainingExample]) -> Result<f64> {
        let mut margin = f64::INFINITY;
        for ex in batch {
            let hist = ex
                .history
                .iter()
                .map(|&a| self.news_encode(&articles[a].tokens))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&[f64]> = hist.iter().map(Vec::as_slice).collect();
            let cand = self.news_encode(&articles[ex.candidate].tokens)?;
            let (tr, _) = self.forward_trace(&refs, &cand)?;
            let hidden_cf = &tr.cf_pre[..tr.cf_pre.len() - 1];
            for v in tr.attn_pre.iter().chain(hidden_cf).flatten() {
                margin = margin.min(v.abs());
            }
        }
        Ok(margin)
    }

    /// Summed cross-entropy of `batch`, times `weight`. When `grads` is
    /// given, accumulates the gradient of that quantity into it, including
    /// the embedding rows touched by the batch.
    pub fn batch_loss(
        &self,
        articles: &[NewsArticle],
        batch: &[TrainingExample],
        weight: f64,
        grads: Option<&mut Gradients>,
    ) -> Result<f64> {
        let mut slot_of: HashMap<usize, usize> = HashMap::new();
        let mut slots: Vec<usize> = Vec::new();
        for ex in batch {
            for &a in ex.history.iter().chain(std::iter::once(&ex.candidate)) {
                slot_of.entry(a).or_insert_with(|| {
                    slots.push(a);
                    slots.len() - 1
                });
            }
        }
        let reprs = slots
            .iter()
            .map(|&a| {
                let art = articles.get(a).ok_or_else(|| Error::Unknown {
                    kind: "article index",
                    id: a.to_string(),
                })?;
                if art.domain != self.domain {
                    return Err(Error::Precondition(format!(
                        "article `{}` is not in domain {}",
                        art.id, self.domain
                    )));
                }
                self.news_encode(&art.tokens)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut local = grads.is_some().then(|| self.new_local_grads());
        let mut drepr = vec![vec![0.0; self.dim]; if local.is_some() { slots.len() } else { 0 }];
        let mut loss = 0.0;
        for ex in batch {
            let label = check_label(ex.label)?;
            if ex.history.is_empty() {
                return Err(Error::Empty("training example with empty history".into()));
            }
            let hist: Vec<&[f64]> = ex.history.iter().map(|a| reprs[slot_of[a]].as_slice()).collect();
            let cand = reprs[slot_of[&ex.candidate]].as_slice();
            let (tr, _) = self.forward_trace(&hist, cand)?;
            loss += weight * bce(tr.prob, label);
            if let Some(g) = local.as_mut() {
                let dlogit = weight * bce_logit_grad(tr.prob, label);
                if dlogit == 0.0 {
                    continue;
                }
                let (dh, dc) = self.backward(&tr, &hist, cand, dlogit, g);
                for (a, d) in ex.history.iter().zip(dh) {
                    for (x, y) in drepr[slot_of[a]].iter_mut().zip(d) {
                        *x += y;
                    }
                }
                for (x, y) in drepr[slot_of[&ex.candidate]].iter_mut().zip(dc) {
                    *x += y;
                }
            }
        }

        if let (Some(g), Some(grads)) = (local, grads) {
            self.store_local(g, grads)?;
            let emb = grads.slot(EMBEDDING, self.embedding.dims());
            for (s, &a) in slots.iter().enumerate() {
                scatter_mean_grad(emb, &articles[a].tokens, &drepr[s]);
            }
        }
        Ok(loss)
    }
}

/// Backward of the token mean: every occurrence of a token receives `d / n`.
pub(crate) fn scatter_mean_grad(emb_grad: &mut Tensor, tokens: &[u32], d: &[f64]) {
    let n = tokens.len() as f64;
    for &t in tokens {
        for (e, v) in emb_grad.row_mut(t as usize).iter_mut().zip(d) {
            *e += v / n;
        }
    }
}

/// Joint cross-entropy over a target and a source batch.
pub fn joint_loss(
    params: &ParameterSet,
    articles: &[NewsArticle],
    target_batch: &[TrainingExample],
    source_batch: &[TrainingExample],
) -> Result<f64> {
    let t = BaseNetwork::new(params, Domain::Target)?.batch_loss(articles, target_batch, 1.0, None)?;
    let s = BaseNetwork::new(params, Domain::Source)?.batch_loss(articles, source_batch, 1.0, None)?;
    Ok(t + s)
}

/// [`joint_loss`] and its gradient.
pub fn joint_loss_grad(
    params: &ParameterSet,
    articles: &[NewsArticle],
    target_batch: &[TrainingExample],
    source_batch: &[TrainingExample],
) -> Result<(f64, Gradients)> {
    let mut g = Gradients::new();
    let t = BaseNetwork::new(params, Domain::Target)?.batch_loss(articles, target_batch, 1.0, Some(&mut g))?;
    let s = BaseNetwork::new(params, Domain::Source)?.batch_loss(articles, source_batch, 1.0, Some(&mut g))?;
    Ok((t + s, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::gradcheck::{finite_difference_gradient, DEFAULT_EPS};
    use crate::rng::stream;

    const D: usize = 4;
    const VOCAB: usize = 10;

    fn article(id: &str, domain: Domain, tokens: &[u32]) -> NewsArticle {
        NewsArticle {
            id: id.into(),
            domain,
            text: String::new(),
            tokens: tokens.to_vec(),
        }
    }

    fn params(seed: u64) -> ParameterSet {
        let mut rng = stream(seed, "test");
        let mut p = ParameterSet::new();
        init_embedding(&mut p, VOCAB, D, &mut rng).unwrap();
        for d in Domain::BOTH {
            init_network(&mut p, d, D, &[6, 3], &mut rng).unwrap();
        }
        p
    }

    fn articles() -> Vec<NewsArticle> {
        vec![
            article("s0", Domain::Source, &[2, 3]),
            article("s1", Domain::Source, &[3, 4, 4]),
            article("s2", Domain::Source, &[5]),
            article("t0", Domain::Target, &[2, 6]),
            article("t1", Domain::Target, &[7]),
            article("t2", Domain::Target, &[6, 7, 8]),
        ]
    }

    fn example(history: &[usize], candidate: usize, label: u8) -> TrainingExample {
        TrainingExample {
            user: 0,
            history: history.to_vec(),
            candidate,
            label,
        }
    }

    #[test]
    fn news_encoding_is_the_token_mean() {
        let p = params(1);
        let net = BaseNetwork::new(&p, Domain::Source).unwrap();
        let e = p.require(EMBEDDING).unwrap();
        let got = net.news_encode(&[3, 4, 4]).unwrap();
        for (k, g) in got.iter().enumerate() {
            let want = (e.row(3)[k] + 2.0 * e.row(4)[k]) / 3.0;
            assert!((g - want).abs() < 1e-15);
        }
        assert!(net.news_encode(&[]).is_err());
        assert!(net.news_encode(&[VOCAB as u32]).is_err());
    }

    #[test]
    fn padding_row_starts_at_zero() {
        let p = params(2);
        assert!(p.require(EMBEDDING).unwrap().row(PAD_ID as usize).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn attention_is_uniform_over_identical_items_and_one_for_a_singleton() {
        let p = params(3);
        let net = BaseNetwork::new(&p, Domain::Target).unwrap();
        let h = vec![0.3, -0.1, 0.2, 0.05];
        let c = vec![0.1, 0.1, -0.4, 0.0];
        let a = net.attention_weights(&vec![h.clone(); 4], &c).unwrap();
        assert!(a.iter().all(|w| (w - 0.25).abs() < 1e-15));
        assert_eq!(net.attention_weights(std::slice::from_ref(&h), &c).unwrap(), vec![1.0]);
        let u = net.user_encode(std::slice::from_ref(&h), &c).unwrap();
        assert_eq!(u, h);
        assert!(net.attention_weights(&[], &c).is_err());
    }

    #[test]
    fn forward_matches_a_hand_computation() {
        // D = 1, one CF hidden unit, every weight written out.
        let mut p = ParameterSet::new();
        p.insert(EMBEDDING, Tensor::from_vec(&[3, 1], vec![0.0, 0.0, 1.0]).unwrap()).unwrap();
        let set = |p: &mut ParameterSet, n: &str, dims: &[usize], v: Vec<f64>| {
            p.insert(name(Domain::Source, n), Tensor::from_vec(dims, v).unwrap()).unwrap();
        };
        set(&mut p, "attention.hidden.w", &[1, 2], vec![1.0, 0.5]);
        set(&mut p, "attention.hidden.b", &[1], vec![0.0]);
        set(&mut p, "attention.out.w", &[1, 1], vec![2.0]);
        set(&mut p, "cf.0.w", &[1, 2], vec![1.0, -1.0]);
        set(&mut p, "cf.0.b", &[1], vec![0.5]);
        set(&mut p, "cf.1.w", &[1, 1], vec![3.0]);
        set(&mut p, "cf.1.b", &[1], vec![-1.0]);
        let net = BaseNetwork::new(&p, Domain::Source).unwrap();

        let (h1, h2, c) = (vec![1.0], vec![-1.0], vec![0.5]);
        // logits: 2 relu(1 + .25) = 2.5 and 2 relu(-1 + .25) = 0
        let e = 2.5f64.exp();
        let a1 = e / (e + 1.0);
        let user = a1 - (1.0 - a1);
        let hidden = (user - 0.5 + 0.5f64).max(0.0);
        let want = 1.0 / (1.0 + (-(3.0 * hidden - 1.0)).exp());

        let alpha = net.attention_weights(&[h1.clone(), h2.clone()], &c).unwrap();
        assert!((alpha[0] - a1).abs() < 1e-15);
        let u = net.user_encode(&[h1, h2], &c).unwrap();
        assert!((u[0] - user).abs() < 1e-15);
        assert!((net.predict(&u, &c).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn zero_output_layer_gives_ln2_per_example() {
        let mut p = params(4);
        for d in Domain::BOTH {
            p.get_mut(&name(d, "cf.2.w")).unwrap().fill(0.0);
            p.get_mut(&name(d, "cf.2.b")).unwrap().fill(0.0);
        }
        let arts = articles();
        let batch = [example(&[3], 4, 1), example(&[3, 4], 5, 0)];
        let loss = BaseNetwork::new(&p, Domain::Target)
            .unwrap()
            .batch_loss(&arts, &batch, 1.0, None)
            .unwrap();
        assert!((loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_is_clamped() {
        assert!(bce(0.0, 1.0).is_finite());
        assert!((bce(0.0, 1.0) + PROB_FLOOR.ln()).abs() < 1e-9);
        assert!(bce(1.0, 1.0) < 1e-11);
        assert!((bce(0.5, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn gradients_stay_inside_the_batch_and_domain() {
        let p = params(5);
        let arts = articles();
        let mut g = Gradients::new();
        BaseNetwork::new(&p, Domain::Source)
            .unwrap()
            .batch_loss(&arts, &[example(&[0], 1, 1), example(&[0], 2, 0)], 1.0, Some(&mut g))
            .unwrap();
        assert!(g.names().all(|n| !n.starts_with("target.")));
        let e = g.require(EMBEDDING).unwrap();
        for row in [0, 1, 6, 7, 8, 9] {
            assert!(e.row(row).iter().all(|&v| v == 0.0), "row {row} touched");
        }
        assert!(e.row(4).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn wrong_domain_and_bad_labels_are_rejected() {
        let p = params(6);
        let arts = articles();
        let net = BaseNetwork::new(&p, Domain::Source).unwrap();
        assert!(net.batch_loss(&arts, &[example(&[3], 4, 1)], 1.0, None).is_err());
        assert!(net.batch_loss(&arts, &[example(&[0], 1, 2)], 1.0, None).is_err());
        assert!(net.batch_loss(&arts, &[example(&[], 1, 1)], 1.0, None).is_err());
    }

    #[test]
    fn joint_gradient_matches_finite_differences() {
        let mut p = params(7);
        p.get_mut(EMBEDDING).unwrap().values_mut().iter_mut().for_each(|v| *v *= 20.0);
        let arts = articles();
        let tb = [example(&[3, 4], 5, 1), example(&[5], 3, 0)];
        let sb = [example(&[0, 1], 2, 1), example(&[2], 1, 0)];
        let (_, analytic) = joint_loss_grad(&p, &arts, &tb, &sb).unwrap();
        let numeric =
            finite_difference_gradient(|q| joint_loss(q, &arts, &tb, &sb), &p, DEFAULT_EPS, |_| true).unwrap();
        // Absolute error: structural zeros make the relative form noisy here.
        let mut worst = 0.0f64;
        for (n, t) in numeric.iter() {
            let a = analytic.get(n).map(|x| x.values().to_vec()).unwrap_or(vec![0.0; t.len()]);
            for (x, y) in a.iter().zip(t.values()) {
                worst = worst.max((x - y).abs());
            }
        }
        assert!(worst < 1e-8, "max abs error {worst}");
    }
}
