//! Differentiable network primitives: learnable time embedding,
//! feed-forward stacks, a bidirectional LSTM sequence encoder and a
//! multi-head self-attention stack. All forward passes run on the
//! [`autodiff`](crate::autodiff) tape, so reverse-mode gradients come for
//! free and inference is the same code path with gradients ignored.

pub mod gradcheck;

use crate::autodiff::{Tape, Var};
use crate::params::{init_uniform, init_zeros, Binding, ParameterStore};
use crate::scalar::Real;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub embed_dim: usize,
    pub ffn_layers: usize,
    pub ffn_width: usize,
    /// LSTM hidden size per direction.
    pub seq_hidden: usize,
    pub attn_layers: usize,
    pub attn_heads: usize,
    pub dropout: f64,
}

impl NetConfig {
    /// Desk-scale defaults; large enough to learn the synthetic families,
    /// small enough to train on a laptop CPU.
    pub fn desk() -> Self {
        Self {
            embed_dim: 32,
            ffn_layers: 2,
            ffn_width: 64,
            seq_hidden: 32,
            attn_layers: 2,
            attn_heads: 2,
            dropout: 0.1,
        }
    }

    /// The published configuration (20M-parameter scale).
    pub fn paper() -> Self {
        Self {
            embed_dim: 512,
            ffn_layers: 4,
            ffn_width: 1024,
            seq_hidden: 256,
            attn_layers: 4,
            attn_heads: 8,
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.embed_dim == 0 || self.ffn_width == 0 || self.seq_hidden == 0 {
            return Err(crate::Error::Config("network dimensions must be positive".into()));
        }
        if self.attn_heads == 0 || self.embed_dim % self.attn_heads != 0 {
            return Err(crate::Error::Config(format!(
                "attention dim {} not divisible by heads {}",
                self.embed_dim, self.attn_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(crate::Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Optional training-mode context: dropout RNG plus drop probability.
pub struct DropoutCtx<'a> {
    pub rng: &'a mut ChaCha8Rng,
    pub p: f64,
}

fn apply_dropout<F: Real>(tape: &mut Tape<F>, x: Var, ctx: &mut Option<DropoutCtx<'_>>) -> Var {
    match ctx {
        None => x,
        Some(c) if c.p == 0.0 => x,
        Some(c) => {
            let shape = tape.value(x).shape.clone();
            let n: usize = shape.iter().product();
            let keep = 1.0 - c.p;
            let scale = F::of(1.0 / keep);
            let mask: Vec<F> = (0..n)
                .map(|_| if c.rng.gen::<f64>() < keep { scale } else { F::zero() })
                .collect();
            let m = tape.constant(crate::tensor::Tensor::new(mask, shape));
            tape.mul(x, m)
        }
    }
}

/// Learnable time embedding: dimension 0 is linear in `t`, the rest are
/// `sin(w_i t + b_i)`.
#[derive(Debug, Clone)]
pub struct TimeEmbed {
    pub w: usize,
    pub b: usize,
    pub dim: usize,
}

impl TimeEmbed {
    pub fn init<F: Real>(
        store: &mut ParameterStore<F>,
        name: &str,
        dim: usize,
        seed: u64,
    ) -> Self {
        let w = init_uniform(store, &format!("{name}.w"), &[1, dim], 1, seed);
        let b = init_zeros(store, &format!("{name}.b"), &[dim]);
        Self { w, b, dim }
    }

    /// `times: [m, 1]` -> `[m, dim]`.
    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, bind: &Binding, times: Var) -> Var {
        let w = bind.var(self.w);
        let b = bind.var(self.b);
        let lin = tape.matmul(times, w);
        let aff = tape.add_broadcast_row(lin, b);
        if self.dim == 1 {
            return aff;
        }
        let first = tape.slice_cols(aff, 0, 1);
        let rest = tape.slice_cols(aff, 1, self.dim);
        let sines = tape.sin(rest);
        tape.concat_cols(first, sines)
    }
}

/// Affine-SeLU stack with a linear output layer. `hidden` may be empty, in
/// which case this is a plain linear map.
#[derive(Debug, Clone)]
pub struct Ffn {
    layers: Vec<(usize, usize)>,
    pub in_dim: usize,
    pub out_dim: usize,
    n_hidden: usize,
}

impl Ffn {
    pub fn init<F: Real>(
        store: &mut ParameterStore<F>,
        name: &str,
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        seed: u64,
    ) -> Self {
        let mut layers = Vec::new();
        let mut d = in_dim;
        for (i, &h) in hidden.iter().enumerate() {
            let w = init_uniform(store, &format!("{name}.w{i}"), &[d, h], d, seed);
            let b = init_zeros(store, &format!("{name}.b{i}"), &[h]);
            layers.push((w, b));
            d = h;
        }
        let w = init_uniform(store, &format!("{name}.out.w"), &[d, out_dim], d, seed);
        let b = init_zeros(store, &format!("{name}.out.b"), &[out_dim]);
        layers.push((w, b));
        Self { layers, in_dim, out_dim, n_hidden: hidden.len() }
    }

    pub fn linear<F: Real>(
        store: &mut ParameterStore<F>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        seed: u64,
    ) -> Self {
        Self::init(store, name, in_dim, &[], out_dim, seed)
    }

    /// `x: [m, in_dim]` -> `[m, out_dim]`. Dropout (inverted scaling) is
    /// applied after each hidden activation only when a training context is
    /// supplied, so inference is deterministic.
    pub fn forward<F: Real>(
        &self,
        tape: &mut Tape<F>,
        bind: &Binding,
        x: Var,
        mut dropout: Option<DropoutCtx<'_>>,
    ) -> Var {
        assert_eq!(
            tape.value(x).cols(),
            self.in_dim,
            "ffn input width mismatch"
        );
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wv = bind.var(w);
            let bv = bind.var(b);
            let z = tape.matmul(h, wv);
            h = tape.add_broadcast_row(z, bv);
            if i < self.n_hidden {
                h = tape.selu(h);
                h = apply_dropout(tape, h, &mut dropout);
            }
        }
        h
    }
}

#[derive(Debug, Clone)]
struct LstmDir {
    wx: usize,
    wh: usize,
    b: usize,
}

impl LstmDir {
    fn init<F: Real>(
        store: &mut ParameterStore<F>,
        name: &str,
        in_dim: usize,
        hidden: usize,
        seed: u64,
    ) -> Self {
        let wx = init_uniform(store, &format!("{name}.wx"), &[in_dim, 4 * hidden], in_dim, seed);
        let wh = init_uniform(store, &format!("{name}.wh"), &[hidden, 4 * hidden], hidden, seed);
        let b = init_zeros(store, &format!("{name}.b"), &[4 * hidden]);
        Self { wx, wh, b }
    }

    /// Returns the final hidden state `[1, hidden]` after scanning rows of
    /// `xs` in the order given by `order`.
    fn scan<F: Real>(
        &self,
        tape: &mut Tape<F>,
        bind: &Binding,
        xs: Var,
        order: impl Iterator<Item = usize>,
        hidden: usize,
    ) -> Var {
        let wx = bind.var(self.wx);
        let wh = bind.var(self.wh);
        let b = bind.var(self.b);
        let pre = tape.matmul(xs, wx);
        let pre = tape.add_broadcast_row(pre, b);
        let mut h = tape.constant(crate::tensor::Tensor::matrix(1, hidden, vec![F::zero(); hidden]));
        let mut c = h;
        for t in order {
            let xw = tape.row(pre, t);
            let hw = tape.matmul(h, wh);
            let z = tape.add(xw, hw);
            let zi = tape.slice_cols(z, 0, hidden);
            let zf = tape.slice_cols(z, hidden, 2 * hidden);
            let zg = tape.slice_cols(z, 2 * hidden, 3 * hidden);
            let zo = tape.slice_cols(z, 3 * hidden, 4 * hidden);
            let i = tape.sigmoid(zi);
            let f = tape.sigmoid(zf);
            let g = tape.tanh(zg);
            let o = tape.sigmoid(zo);
            let fc = tape.mul(f, c);
            let ig = tape.mul(i, g);
            c = tape.add(fc, ig);
            let tc = tape.tanh(c);
            h = tape.mul(o, tc);
        }
        h
    }
}

/// Bidirectional LSTM summarizing a sequence of row vectors into the
/// concatenation of the final hidden states of both directions.
#[derive(Debug, Clone)]
pub struct BiLstm {
    fwd: LstmDir,
    bwd: LstmDir,
    pub in_dim: usize,
    pub hidden: usize,
}

impl BiLstm {
    pub fn init<F: Real>(
        store: &mut ParameterStore<F>,
        name: &str,
        in_dim: usize,
        hidden: usize,
        seed: u64,
    ) -> Self {
        let fwd = LstmDir::init(store, &format!("{name}.fwd"), in_dim, hidden, seed);
        let bwd = LstmDir::init(store, &format!("{name}.bwd"), in_dim, hidden, seed);
        Self { fwd, bwd, in_dim, hidden }
    }

    /// `xs: [l, in_dim]` with `l >= 1` -> `[1, 2*hidden]`.
    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, bind: &Binding, xs: Var) -> Var {
        let l = tape.value(xs).rows();
        assert!(l >= 1, "empty sequence");
        let hf = self.fwd.scan(tape, bind, xs, 0..l, self.hidden);
        let hb = self.bwd.scan(tape, bind, xs, (0..l).rev(), self.hidden);
        tape.concat_cols(hf, hb)
    }

    pub fn out_dim(&self) -> usize {
        2 * self.hidden
    }
}

#[derive(Debug, Clone)]
struct AttnLayer {
    wq: (usize, usize),
    wk: (usize, usize),
    wv: (usize, usize),
    wo: (usize, usize),
    ffn: Ffn,
}

/// Multi-head self-attention stack with residual connections, feed-forward
/// sublayers and learned positional encodings over a fixed token count.
#[derive(Debug, Clone)]
pub struct Attention {
    layers: Vec<AttnLayer>,
    pos: usize,
    pub dim: usize,
    pub heads: usize,
    pub max_tokens: usize,
}

impl Attention {
    pub fn init<F: Real>(
        store: &mut ParameterStore<F>,
        name: &str,
        dim: usize,
        heads: usize,
        n_layers: usize,
        ffn_width: usize,
        max_tokens: usize,
        seed: u64,
    ) -> Self {
        assert!(dim % heads == 0, "attention dim not divisible by heads");
        let mut layers = Vec::new();
        for li in 0..n_layers {
            let proj = |store: &mut ParameterStore<F>, tag: &str| {
                let w = init_uniform(store, &format!("{name}.l{li}.{tag}.w"), &[dim, dim], dim, seed);
                let b = init_zeros(store, &format!("{name}.l{li}.{tag}.b"), &[dim]);
                (w, b)
            };
            let wq = proj(store, "q");
            let wk = proj(store, "k");
            let wv = proj(store, "v");
            let wo = proj(store, "o");
            let ffn = Ffn::init(store, &format!("{name}.l{li}.ffn"), dim, &[ffn_width], dim, seed);
            layers.push(AttnLayer { wq, wk, wv, wo, ffn });
        }
        let pos = init_uniform(store, &format!("{name}.pos"), &[max_tokens, dim], dim, seed);
        Self { layers, pos, dim, heads, max_tokens }
    }

    /// `tokens: [k, dim]` with `1 <= k <= max_tokens` -> `[k, dim]`.
    /// Token `i` receives the learned positional encoding for slot
    /// `first_pos + i`.
    pub fn forward<F: Real>(
        &self,
        tape: &mut Tape<F>,
        bind: &Binding,
        tokens: Var,
        first_pos: usize,
        mut dropout: Option<DropoutCtx<'_>>,
    ) -> Var {
        let k = tape.value(tokens).rows();
        assert!(k >= 1 && first_pos + k <= self.max_tokens, "token count out of range");
        let pos_all = bind.var(self.pos);
        let pos = tape.slice_rows(pos_all, first_pos, first_pos + k);
        let mut x = tape.add(tokens, pos);
        let dh = self.dim / self.heads;
        let scale = F::of(1.0 / (dh as f64).sqrt());
        for layer in &self.layers {
            let affine = |tape: &mut Tape<F>, x: Var, (w, b): (usize, usize)| {
                let wv = bind.var(w);
                let bv = bind.var(b);
                let z = tape.matmul(x, wv);
                tape.add_broadcast_row(z, bv)
            };
            let q = affine(tape, x, layer.wq);
            let kk = affine(tape, x, layer.wk);
            let v = affine(tape, x, layer.wv);
            let mut heads = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let (lo, hi) = (h * dh, (h + 1) * dh);
                let qh = tape.slice_cols(q, lo, hi);
                let kh = tape.slice_cols(kk, lo, hi);
                let vh = tape.slice_cols(v, lo, hi);
                let scores = tape.matmul_nt(qh, kh);
                let scaled = tape.scale(scores, scale);
                let attn = tape.softmax_rows(scaled);
                heads.push(tape.matmul(attn, vh));
            }
            let mut concat = heads[0];
            for &hvar in &heads[1..] {
                concat = tape.concat_cols(concat, hvar);
            }
            let proj = affine(tape, concat, layer.wo);
            x = tape.add(x, proj);
            let ff = layer.ffn.forward(tape, bind, x, dropout.take());
            x = tape.add(x, ff);
        }
        x
    }
}

/// Exact reverse-mode gradients of a scalar loss with respect to every
/// parameter in `store`. The loss closure receives a fresh tape with the
/// store bound as trainable leaves.
pub fn grad<F: Real>(
    store: &ParameterStore<F>,
    loss_fn: impl Fn(&mut Tape<F>, &Binding) -> Var,
) -> (F, ParameterStore<F>) {
    let mut tape = Tape::new();
    let bind = store.bind(&mut tape, true);
    let loss = loss_fn(&mut tape, &bind);
    let value = tape.value(loss).item();
    tape.backward(loss);
    let mut grads = store.zeros_like();
    store.accumulate_grads(&tape, &bind, &mut grads);
    (value, grads)
}
