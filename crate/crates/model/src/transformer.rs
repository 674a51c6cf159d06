//! Pre-norm causal transformer whose feed-forward sublayers are MoE layers.
//!
//! Activations for a batch of `B` sequences of length `T` are stored as
//! row-major `N × d` buffers with `N = B·T`. The forward pass keeps every
//! intermediate needed by [`MoeTransformer::backward`].

use moegeom_core::matrix::{gemm, Matrix, View, ViewMut};
use moegeom_core::Scalar;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::activation::{gelu, gelu_prime};
use crate::capture::CaptureBuffer;
use crate::config::ModelConfig;
use crate::expert::{normal_matrix, ExpertMlp, MoeLayer};
use crate::routing::{route_backward, route_into};
use crate::ModelError;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gain: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LayerNorm<T> {
    fn new(d: usize, gain: T) -> Self {
        Self {
            gain: vec![gain; d],
            bias: vec![T::zero(); d],
        }
    }
}

/// Multi-head self-attention projections, stored `out × in`, without biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention<T> {
    pub wq: Matrix<T>,
    pub wk: Matrix<T>,
    pub wv: Matrix<T>,
    pub wo: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub ln1: LayerNorm<T>,
    pub attn: Attention<T>,
    pub ln2: LayerNorm<T>,
    pub moe: MoeLayer<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoeTransformer<T> {
    pub config: ModelConfig,
    /// `vocab × d_model`, shared with the output projection.
    pub tok_emb: Matrix<T>,
    /// `block_size × d_model`
    pub pos_emb: Matrix<T>,
    pub blocks: Vec<Block<T>>,
    pub ln_f: LayerNorm<T>,
}

/// A named view of one parameter tensor.
#[derive(Debug)]
pub struct Param<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

// Visits every parameter in a fixed order. `$s` is `as_slice` or `as_mut_slice`.
macro_rules! walk_params {
    ($m:expr, $iter:ident, $s:ident, $push:expr) => {{
        let m = $m;
        let mut push = $push;
        macro_rules! mat {
            ($name:expr, $x:expr) => {
                push($name, vec![$x.rows(), $x.cols()], $x.$s())
            };
        }
        macro_rules! vector {
            ($name:expr, $x:expr) => {
                push($name, vec![$x.len()], $x.$s())
            };
        }
        mat!("tok_emb".to_string(), m.tok_emb);
        mat!("pos_emb".to_string(), m.pos_emb);
        for (l, b) in m.blocks.$iter().enumerate() {
            let p = format!("blocks.{l}");
            vector!(format!("{p}.ln1.gain"), b.ln1.gain);
            vector!(format!("{p}.ln1.bias"), b.ln1.bias);
            mat!(format!("{p}.attn.wq"), b.attn.wq);
            mat!(format!("{p}.attn.wk"), b.attn.wk);
            mat!(format!("{p}.attn.wv"), b.attn.wv);
            mat!(format!("{p}.attn.wo"), b.attn.wo);
            vector!(format!("{p}.ln2.gain"), b.ln2.gain);
            vector!(format!("{p}.ln2.bias"), b.ln2.bias);
            mat!(format!("{p}.moe.router"), b.moe.router);
            for (e, x) in b.moe.experts.$iter().enumerate() {
                mat!(format!("{p}.moe.experts.{e}.w1"), x.w1);
                vector!(format!("{p}.moe.experts.{e}.b1"), x.b1);
                mat!(format!("{p}.moe.experts.{e}.w2"), x.w2);
                vector!(format!("{p}.moe.experts.{e}.b2"), x.b2);
            }
        }
        vector!("ln_f.gain".to_string(), m.ln_f.gain);
        vector!("ln_f.bias".to_string(), m.ln_f.bias);
    }};
}

struct LnCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

struct ExpertCache<T> {
    rows: Vec<usize>,
    /// `Ne × d_hidden` first-layer pre-activations.
    pre: Vec<T>,
    act: Vec<T>,
    /// `Ne × d_model` expert outputs before gating.
    out: Vec<T>,
}

struct BlockCache<T> {
    ln1: LnCache<T>,
    a: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// Attention probabilities, `B·H` blocks of `T × T`.
    p: Vec<T>,
    o: Vec<T>,
    ln2: LnCache<T>,
    m: Vec<T>,
    gates: Vec<T>,
    experts: Vec<ExpertCache<T>>,
}

/// Intermediates of one batched forward pass.
pub struct Forward<T> {
    pub batch: usize,
    pub seq: usize,
    tokens: Vec<usize>,
    blocks: Vec<BlockCache<T>>,
    lnf: LnCache<T>,
    z: Vec<T>,
    /// `N × vocab`
    pub logits: Vec<T>,
}

impl<T> Forward<T> {
    pub fn n_rows(&self) -> usize {
        self.batch * self.seq
    }

    /// MoE-layer inputs of layer `l`, `N × d_model`.
    pub fn moe_inputs(&self, l: usize) -> &[T] {
        &self.blocks[l].m
    }

    /// Routing weights of layer `l`, `N × E`.
    pub fn gates(&self, l: usize) -> &[T] {
        &self.blocks[l].gates
    }

    /// Token rows routed to expert `e` of layer `l` and their first-layer pre-activations.
    pub fn expert_pre(&self, l: usize, e: usize) -> (&[usize], &[T]) {
        let c = &self.blocks[l].experts[e];
        (&c.rows, &c.pre)
    }
}

/// The `seq × hd` slice of one head inside an `N × d` buffer.
fn head<T>(buf: &[T], start: usize, seq: usize, hd: usize, d: usize) -> View<'_, T> {
    View::new(&buf[start..], seq, hd, d, 1)
}

fn rm<T>(data: &[T], rows: usize, cols: usize) -> View<'_, T> {
    View::new(data, rows, cols, cols, 1)
}

/// `c ← a·b + beta·c` with `c` row-major.
fn mm<T: Scalar>(a: View<'_, T>, b: View<'_, T>, beta: T, c: &mut [T]) {
    let (m, n) = (a.rows(), b.cols());
    gemm(T::one(), a, b, beta, ViewMut::new(c, m, n, n, 1));
}

fn layer_norm<T: Scalar>(x: &[T], ln: &LayerNorm<T>, d: usize, eps: T) -> (Vec<T>, LnCache<T>) {
    let n = x.len() / d;
    let inv_d = T::one() / T::of_usize(d);
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); n];
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let s = T::one() / (var + eps).sqrt();
        rstd[r] = s;
        for c in 0..d {
            let h = (row[c] - mean) * s;
            xhat[r * d + c] = h;
            out[r * d + c] = h * ln.gain[c] + ln.bias[c];
        }
    }
    (out, LnCache { xhat, rstd })
}

/// Accumulates parameter gradients into `g` and adds the input gradient to `dx`.
fn layer_norm_backward<T: Scalar>(
    dout: &[T],
    cache: &LnCache<T>,
    ln: &LayerNorm<T>,
    g: &mut LayerNorm<T>,
    dx: &mut [T],
) {
    let d = ln.gain.len();
    let inv_d = T::one() / T::of_usize(d);
    let mut dxhat = vec![T::zero(); d];
    for (r, &s) in cache.rstd.iter().enumerate() {
        let base = r * d;
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for c in 0..d {
            let go = dout[base + c];
            let h = cache.xhat[base + c];
            g.gain[c] += go * h;
            g.bias[c] += go;
            dxhat[c] = go * ln.gain[c];
            mean_dxhat += dxhat[c];
            mean_dxhat_xhat += dxhat[c] * h;
        }
        mean_dxhat *= inv_d;
        mean_dxhat_xhat *= inv_d;
        for c in 0..d {
            dx[base + c] += s * (dxhat[c] - mean_dxhat - cache.xhat[base + c] * mean_dxhat_xhat);
        }
    }
}

fn add_bias<T: Scalar>(x: &mut [T], bias: &[T]) {
    for row in x.chunks_exact_mut(bias.len()) {
        row.iter_mut().zip(bias).for_each(|(v, &b)| *v += b);
    }
}

fn sum_rows_into<T: Scalar>(x: &[T], acc: &mut [T]) {
    for row in x.chunks_exact(acc.len()) {
        acc.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
    }
}

impl<T: Scalar> MoeTransformer<T> {
    /// Seeded initialisation: normal weights with `init_std`, residual-output
    /// projections (attention output, expert second layer) with
    /// [`ModelConfig::residual_std`], unit norm gains and zero biases.
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (d, std, rstd) = (config.d_model, config.init_std, config.residual_std());
        let tok_emb = normal_matrix(config.vocab_size, d, std, &mut rng);
        let pos_emb = normal_matrix(config.block_size, d, std, &mut rng);
        let blocks = (0..config.n_layers)
            .map(|_| Block {
                ln1: LayerNorm::new(d, T::one()),
                attn: Attention {
                    wq: normal_matrix(d, d, std, &mut rng),
                    wk: normal_matrix(d, d, std, &mut rng),
                    wv: normal_matrix(d, d, std, &mut rng),
                    wo: normal_matrix(d, d, rstd, &mut rng),
                },
                ln2: LayerNorm::new(d, T::one()),
                moe: MoeLayer {
                    router: normal_matrix(config.n_experts, d, std, &mut rng),
                    experts: (0..config.n_experts)
                        .map(|_| ExpertMlp::random(d, config.d_hidden, std, rstd, &mut rng))
                        .collect(),
                    kind: config.router,
                },
            })
            .collect();
        Ok(Self {
            tok_emb,
            pos_emb,
            blocks,
            ln_f: LayerNorm::new(d, T::one()),
            config,
        })
    }

    /// Same architecture with every parameter zero; used as a gradient buffer.
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        let block = Block {
            ln1: LayerNorm::new(d, T::zero()),
            attn: Attention {
                wq: Matrix::zeros(d, d),
                wk: Matrix::zeros(d, d),
                wv: Matrix::zeros(d, d),
                wo: Matrix::zeros(d, d),
            },
            ln2: LayerNorm::new(d, T::zero()),
            moe: MoeLayer {
                router: Matrix::zeros(config.n_experts, d),
                experts: vec![ExpertMlp::zeros(d, config.d_hidden); config.n_experts],
                kind: config.router,
            },
        };
        Self {
            config: config.clone(),
            tok_emb: Matrix::zeros(config.vocab_size, d),
            pos_emb: Matrix::zeros(config.block_size, d),
            blocks: vec![block; config.n_layers],
            ln_f: LayerNorm::new(d, T::zero()),
        }
    }

    pub fn params(&self) -> Vec<Param<'_, T>> {
        let mut out = Vec::new();
        walk_params!(self, iter, as_slice, |name, shape, data| out.push(Param {
            name,
            shape,
            data
        }));
        out
    }

    /// Mutable parameter slices in the order of [`Self::params`].
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        walk_params!(self, iter_mut, as_mut_slice, |_: String, _: Vec<usize>, data| out
            .push(data));
        out
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.data.len()).sum()
    }

    /// Sets every parameter to zero.
    pub fn clear(&mut self) {
        for p in self.params_mut() {
            p.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    fn check_tokens(&self, tokens: &[usize], seq: usize) -> Result<(), ModelError> {
        if seq > self.config.block_size {
            return Err(ModelError::SequenceTooLong {
                len: seq,
                block_size: self.config.block_size,
            });
        }
        let vocab = self.config.vocab_size;
        if let Some(position) = tokens.iter().position(|&t| t >= vocab) {
            return Err(ModelError::InvalidToken {
                token: tokens[position],
                position,
                vocab,
            });
        }
        Ok(())
    }

    /// Logits for one sequence (`len × vocab`); optionally records MoE inputs,
    /// routing weights and Jacobian statistics of every layer.
    pub fn model_forward(
        &self,
        tokens: &[usize],
        capture: Option<&mut CaptureBuffer>,
    ) -> Result<Matrix<T>, ModelError> {
        let fwd = self.forward(tokens, 1)?;
        if let Some(c) = capture {
            c.record(self, &fwd)?;
        }
        Ok(Matrix::new(tokens.len(), self.config.vocab_size, fwd.logits)?)
    }

    /// Batched forward over `batch` equal-length sequences laid end to end in `tokens`.
    pub fn forward(&self, tokens: &[usize], batch: usize) -> Result<Forward<T>, ModelError> {
        assert!(
            batch > 0 && tokens.len().is_multiple_of(batch),
            "tokens must split into {batch} equal sequences"
        );
        let seq = tokens.len() / batch;
        self.check_tokens(tokens, seq)?;
        let cfg = &self.config;
        let (d, n) = (cfg.d_model, tokens.len());
        let eps = T::lit(cfg.ln_eps);

        let mut x = vec![T::zero(); n * d];
        for (r, &tok) in tokens.iter().enumerate() {
            let (te, pe) = (self.tok_emb.row(tok), self.pos_emb.row(r % seq));
            for c in 0..d {
                x[r * d + c] = te[c] + pe[c];
            }
        }

        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (a, ln1) = layer_norm(&x, &b.ln1, d, eps);
            let mut q = vec![T::zero(); n * d];
            let mut k = vec![T::zero(); n * d];
            let mut v = vec![T::zero(); n * d];
            mm(rm(&a, n, d), b.attn.wq.view().t(), T::zero(), &mut q);
            mm(rm(&a, n, d), b.attn.wk.view().t(), T::zero(), &mut k);
            mm(rm(&a, n, d), b.attn.wv.view().t(), T::zero(), &mut v);
            let (p, o) = self.attention(&q, &k, &v, batch, seq);
            mm(rm(&o, n, d), b.attn.wo.view().t(), T::one(), &mut x);

            let (m, ln2) = layer_norm(&x, &b.ln2, d, eps);
            let (gates, experts) = moe_forward_batch(&b.moe, &m, d, &mut x);
            caches.push(BlockCache {
                ln1,
                a,
                q,
                k,
                v,
                p,
                o,
                ln2,
                m,
                gates,
                experts,
            });
        }

        let (z, lnf) = layer_norm(&x, &self.ln_f, d, eps);
        let mut logits = vec![T::zero(); n * cfg.vocab_size];
        mm(rm(&z, n, d), self.tok_emb.view().t(), T::zero(), &mut logits);
        Ok(Forward {
            batch,
            seq,
            tokens: tokens.to_vec(),
            blocks: caches,
            lnf,
            z,
            logits,
        })
    }

    /// Causal attention over every (sequence, head) pair. Returns the
    /// probabilities and the concatenated head outputs.
    fn attention(&self, q: &[T], k: &[T], v: &[T], batch: usize, seq: usize) -> (Vec<T>, Vec<T>) {
        let (d, h) = (self.config.d_model, self.config.n_heads);
        let hd = d / h;
        let scale = T::one() / T::of_usize(hd).sqrt();
        let mut p = vec![T::zero(); batch * h * seq * seq];
        let mut o = vec![T::zero(); batch * seq * d];
        for bi in 0..batch {
            for hi in 0..h {
                let start = bi * seq * d + hi * hd;
                let pb = &mut p[(bi * h + hi) * seq * seq..][..seq * seq];
                gemm(
                    scale,
                    View::new(&q[start..], seq, hd, d, 1),
                    View::new(&k[start..], seq, hd, d, 1).t(),
                    T::zero(),
                    ViewMut::new(pb, seq, seq, seq, 1),
                );
                for i in 0..seq {
                    let row = &mut pb[i * seq..(i + 1) * seq];
                    let max = row[..=i].iter().copied().fold(T::neg_infinity(), T::max);
                    let mut total = T::zero();
                    for s in row[..=i].iter_mut() {
                        *s = (*s - max).exp();
                        total += *s;
                    }
                    let inv = T::one() / total;
                    row[..=i].iter_mut().for_each(|s| *s *= inv);
                    row[i + 1..].iter_mut().for_each(|s| *s = T::zero());
                }
                gemm(
                    T::one(),
                    rm(pb, seq, seq),
                    View::new(&v[start..], seq, hd, d, 1),
                    T::zero(),
                    ViewMut::new(&mut o[start..], seq, hd, d, 1),
                );
            }
        }
        (p, o)
    }

    /// Mean next-token cross-entropy of `fwd` against `targets`, and its
    /// gradient with respect to the logits.
    pub fn loss(&self, fwd: &Forward<T>, targets: &[usize]) -> (T, Vec<T>) {
        let vocab = self.config.vocab_size;
        let n = fwd.n_rows();
        assert_eq!(targets.len(), n, "one target per position");
        let inv_n = T::one() / T::of_usize(n);
        let mut dlogits = fwd.logits.clone();
        let mut loss = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            let row = &mut dlogits[r * vocab..(r + 1) * vocab];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            loss += total.ln() - (fwd.logits[r * vocab + t] - max);
            let inv = inv_n / total;
            row.iter_mut().for_each(|v| *v *= inv);
            row[t] -= inv_n;
        }
        (loss * inv_n, dlogits)
    }

    /// Reverse pass: accumulates parameter gradients of the loss into `grads`.
    pub fn backward(&self, fwd: &Forward<T>, dlogits: &[T], grads: &mut MoeTransformer<T>) {
        let cfg = &self.config;
        let (d, n, vocab) = (cfg.d_model, fwd.n_rows(), cfg.vocab_size);

        // tied output projection
        let mut dz = vec![T::zero(); n * d];
        mm(rm(dlogits, n, vocab), self.tok_emb.view(), T::zero(), &mut dz);
        mm(
            rm(dlogits, n, vocab).t(),
            rm(&fwd.z, n, d),
            T::one(),
            grads.tok_emb.as_mut_slice(),
        );

        let mut dx = vec![T::zero(); n * d];
        layer_norm_backward(&dz, &fwd.lnf, &self.ln_f, &mut grads.ln_f, &mut dx);

        for (l, b) in self.blocks.iter().enumerate().rev() {
            let c = &fwd.blocks[l];
            let gb = &mut grads.blocks[l];

            let dm = moe_backward_batch(&b.moe, c, &dx, d, &mut gb.moe);
            layer_norm_backward(&dm, &c.ln2, &b.ln2, &mut gb.ln2, &mut dx);

            // attention output projection
            mm(rm(&dx, n, d).t(), rm(&c.o, n, d), T::one(), gb.attn.wo.as_mut_slice());
            let mut d_o = vec![T::zero(); n * d];
            mm(rm(&dx, n, d), b.attn.wo.view(), T::zero(), &mut d_o);
            let (dq, dk, dv) = self.attention_backward(c, &d_o, fwd.batch, fwd.seq);
            mm(rm(&dq, n, d).t(), rm(&c.a, n, d), T::one(), gb.attn.wq.as_mut_slice());
            mm(rm(&dk, n, d).t(), rm(&c.a, n, d), T::one(), gb.attn.wk.as_mut_slice());
            mm(rm(&dv, n, d).t(), rm(&c.a, n, d), T::one(), gb.attn.wv.as_mut_slice());
            let mut da = vec![T::zero(); n * d];
            mm(rm(&dq, n, d), b.attn.wq.view(), T::zero(), &mut da);
            mm(rm(&dk, n, d), b.attn.wk.view(), T::one(), &mut da);
            mm(rm(&dv, n, d), b.attn.wv.view(), T::one(), &mut da);
            layer_norm_backward(&da, &c.ln1, &b.ln1, &mut gb.ln1, &mut dx);
        }

        for (r, &tok) in fwd.tokens.iter().enumerate() {
            let row = &dx[r * d..(r + 1) * d];
            grads
                .tok_emb
                .row_mut(tok)
                .iter_mut()
                .zip(row)
                .for_each(|(g, &v)| *g += v);
            grads
                .pos_emb
                .row_mut(r % fwd.seq)
                .iter_mut()
                .zip(row)
                .for_each(|(g, &v)| *g += v);
        }
    }

    fn attention_backward(&self, c: &BlockCache<T>, d_o: &[T], batch: usize, seq: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
        let (d, h) = (self.config.d_model, self.config.n_heads);
        let hd = d / h;
        let scale = T::one() / T::of_usize(hd).sqrt();
        let n = batch * seq;
        let (mut dq, mut dk, mut dv) = (vec![T::zero(); n * d], vec![T::zero(); n * d], vec![T::zero(); n * d]);
        let mut dp = vec![T::zero(); seq * seq];
        for bi in 0..batch {
            for hi in 0..h {
                let start = bi * seq * d + hi * hd;
                let pb = &c.p[(bi * h + hi) * seq * seq..][..seq * seq];
                // dP = dO·Vᵀ, dV = Pᵀ·dO
                gemm(
                    T::one(),
                    head(d_o, start, seq, hd, d),
                    head(&c.v, start, seq, hd, d).t(),
                    T::zero(),
                    ViewMut::new(&mut dp, seq, seq, seq, 1),
                );
                gemm(
                    T::one(),
                    rm(pb, seq, seq).t(),
                    head(d_o, start, seq, hd, d),
                    T::zero(),
                    ViewMut::new(&mut dv[start..], seq, hd, d, 1),
                );
                // softmax backward, then the score scale
                for i in 0..seq {
                    let (prow, drow) = (&pb[i * seq..(i + 1) * seq], &mut dp[i * seq..(i + 1) * seq]);
                    let inner: T = prow[..=i].iter().zip(&drow[..=i]).map(|(&p, &g)| p * g).sum();
                    for j in 0..seq {
                        drow[j] = if j <= i {
                            prow[j] * (drow[j] - inner) * scale
                        } else {
                            T::zero()
                        };
                    }
                }
                gemm(
                    T::one(),
                    rm(&dp, seq, seq),
                    head(&c.k, start, seq, hd, d),
                    T::zero(),
                    ViewMut::new(&mut dq[start..], seq, hd, d, 1),
                );
                gemm(
                    T::one(),
                    rm(&dp, seq, seq).t(),
                    head(&c.q, start, seq, hd, d),
                    T::zero(),
                    ViewMut::new(&mut dk[start..], seq, hd, d, 1),
                );
            }
        }
        (dq, dk, dv)
    }
}

/// Routes every row of `m`, runs each expert on the rows it received and adds
/// the gated outputs to `x`.
fn moe_forward_batch<T: Scalar>(moe: &MoeLayer<T>, m: &[T], d: usize, x: &mut [T]) -> (Vec<T>, Vec<ExpertCache<T>>) {
    let n = m.len() / d;
    let e_count = moe.n_experts();
    let mut logits = vec![T::zero(); n * e_count];
    mm(rm(m, n, d), moe.router.view().t(), T::zero(), &mut logits);
    let mut gates = vec![T::zero(); n * e_count];
    for r in 0..n {
        route_into(
            &logits[r * e_count..(r + 1) * e_count],
            &moe.kind,
            &mut gates[r * e_count..(r + 1) * e_count],
        );
    }

    let experts = moe
        .experts
        .iter()
        .enumerate()
        .map(|(e, ex)| {
            let rows: Vec<usize> = (0..n).filter(|&r| gates[r * e_count + e] > T::zero()).collect();
            let ne = rows.len();
            let h = ex.d_hidden();
            let mut xe = Vec::with_capacity(ne * d);
            for &r in &rows {
                xe.extend_from_slice(&m[r * d..(r + 1) * d]);
            }
            let mut pre = vec![T::zero(); ne * h];
            mm(rm(&xe, ne, d), ex.w1.view().t(), T::zero(), &mut pre);
            add_bias(&mut pre, &ex.b1);
            let act: Vec<T> = pre.iter().map(|&z| gelu(z)).collect();
            let mut out = vec![T::zero(); ne * d];
            mm(rm(&act, ne, h), ex.w2.view().t(), T::zero(), &mut out);
            add_bias(&mut out, &ex.b2);
            for (i, &r) in rows.iter().enumerate() {
                let g = gates[r * e_count + e];
                x[r * d..(r + 1) * d]
                    .iter_mut()
                    .zip(&out[i * d..(i + 1) * d])
                    .for_each(|(v, &o)| *v += g * o);
            }
            ExpertCache { rows, pre, act, out }
        })
        .collect();
    (gates, experts)
}

/// Gradient of the MoE sublayer given the residual-stream gradient `dy`;
/// returns the gradient with respect to the layer input.
fn moe_backward_batch<T: Scalar>(
    moe: &MoeLayer<T>,
    c: &BlockCache<T>,
    dy: &[T],
    d: usize,
    g: &mut MoeLayer<T>,
) -> Vec<T> {
    let n = dy.len() / d;
    let e_count = moe.n_experts();
    let mut dm = vec![T::zero(); n * d];
    let mut dgates = vec![T::zero(); n * e_count];

    for (e, (ex, ec)) in moe.experts.iter().zip(&c.experts).enumerate() {
        let ne = ec.rows.len();
        if ne == 0 {
            continue;
        }
        let h = ex.d_hidden();
        let mut dout = vec![T::zero(); ne * d];
        let mut xe = Vec::with_capacity(ne * d);
        for (i, &r) in ec.rows.iter().enumerate() {
            let dyr = &dy[r * d..(r + 1) * d];
            let gate = c.gates[r * e_count + e];
            dgates[r * e_count + e] = dyr.iter().zip(&ec.out[i * d..(i + 1) * d]).map(|(&a, &b)| a * b).sum();
            dout[i * d..(i + 1) * d]
                .iter_mut()
                .zip(dyr)
                .for_each(|(o, &v)| *o = gate * v);
            xe.extend_from_slice(&c.m[r * d..(r + 1) * d]);
        }
        let ge = &mut g.experts[e];
        sum_rows_into(&dout, &mut ge.b2);
        mm(rm(&dout, ne, d).t(), rm(&ec.act, ne, h), T::one(), ge.w2.as_mut_slice());
        let mut dpre = vec![T::zero(); ne * h];
        mm(rm(&dout, ne, d), ex.w2.view(), T::zero(), &mut dpre);
        dpre.iter_mut().zip(&ec.pre).for_each(|(v, &z)| *v *= gelu_prime(z));
        sum_rows_into(&dpre, &mut ge.b1);
        mm(rm(&dpre, ne, h).t(), rm(&xe, ne, d), T::one(), ge.w1.as_mut_slice());
        let mut dxe = vec![T::zero(); ne * d];
        mm(rm(&dpre, ne, h), ex.w1.view(), T::zero(), &mut dxe);
        for (i, &r) in ec.rows.iter().enumerate() {
            dm[r * d..(r + 1) * d]
                .iter_mut()
                .zip(&dxe[i * d..(i + 1) * d])
                .for_each(|(a, &v)| *a += v);
        }
    }

    let mut dlogits = vec![T::zero(); n * e_count];
    let t = moe.kind.temperature();
    for r in 0..n {
        let s = r * e_count..(r + 1) * e_count;
        route_backward(&c.gates[s.clone()], &dgates[s.clone()], t, &mut dlogits[s]);
    }
    mm(
        rm(&dlogits, n, e_count).t(),
        rm(&c.m, n, d),
        T::one(),
        g.router.as_mut_slice(),
    );
    mm(rm(&dlogits, n, e_count), moe.router.view(), T::one(), &mut dm);
    dm
}
