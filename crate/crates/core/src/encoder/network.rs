//! Transformer encoder with a softmax head on the CLS position.
//!
//! Post-norm blocks as in BERT: `x = LN(x + MHA(x)); x = LN(x + FFN(x))`
//! with exact GELU. All parameters live in one flat vector; [`Layout`]
//! records where each tensor starts. Matrices are stored `in x out`
//! row-major so a linear layer computes `x W + b`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::normal;

const LN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub layers: usize,
    pub max_positions: usize,
}

impl NetworkConfig {
    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn is_valid(&self) -> bool {
        self.vocab_size > 0 && self.hidden > 0 && self.heads > 0 && self.hidden.is_multiple_of(self.heads) && self.ffn > 0 && self.max_positions >= 2
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln1_g: usize,
    ln1_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    ln2_g: usize,
    ln2_b: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    tok: usize,
    pos: usize,
    emb_g: usize,
    emb_b: usize,
    layers: Vec<LayerOffsets>,
    head_w: usize,
    head_b: usize,
    encoder_len: usize,
    total: usize,
}

impl Layout {
    pub(crate) fn new(cfg: &NetworkConfig, classes: usize) -> Self {
        let (h, f) = (cfg.hidden, cfg.ffn);
        let mut at = 0;
        let mut take = |n: usize| {
            let start = at;
            at += n;
            start
        };
        let tok = take(cfg.vocab_size * h);
        let pos = take(cfg.max_positions * h);
        let emb_g = take(h);
        let emb_b = take(h);
        let layers = (0..cfg.layers)
            .map(|_| LayerOffsets {
                wq: take(h * h),
                bq: take(h),
                wk: take(h * h),
                bk: take(h),
                wv: take(h * h),
                bv: take(h),
                wo: take(h * h),
                bo: take(h),
                ln1_g: take(h),
                ln1_b: take(h),
                w1: take(h * f),
                b1: take(f),
                w2: take(f * h),
                b2: take(h),
                ln2_g: take(h),
                ln2_b: take(h),
            })
            .collect();
        let head_w = take(h * classes);
        let head_b = take(classes);
        let total = take(0);
        let encoder_len = head_w;
        Self { tok, pos, emb_g, emb_b, layers, head_w, head_b, encoder_len, total }
    }

    pub(crate) fn encoder_len(&self) -> usize {
        self.encoder_len
    }

    pub(crate) fn total(&self) -> usize {
        self.total
    }
}

/// Random encoder weights: normal(0, std) matrices and embeddings, zero
/// biases, unit layer-norm gains.
pub(crate) fn init_encoder<R: Rng>(cfg: &NetworkConfig, std_dev: f64, rng: &mut R) -> Vec<f64> {
    let layout = Layout::new(cfg, 0);
    let mut p = vec![0.0; layout.encoder_len];
    let h = cfg.hidden;
    let mut fill = |p: &mut [f64], start: usize, n: usize| {
        for v in &mut p[start..start + n] {
            *v = normal(rng, std_dev);
        }
    };
    fill(&mut p, layout.tok, cfg.vocab_size * h);
    fill(&mut p, layout.pos, cfg.max_positions * h);
    p[layout.emb_g..layout.emb_g + h].fill(1.0);
    for l in &layout.layers {
        for w in [l.wq, l.wk, l.wv, l.wo] {
            fill(&mut p, w, h * h);
        }
        fill(&mut p, l.w1, h * cfg.ffn);
        fill(&mut p, l.w2, cfg.ffn * h);
        p[l.ln1_g..l.ln1_g + h].fill(1.0);
        p[l.ln2_g..l.ln2_g + h].fill(1.0);
    }
    p
}

pub(crate) fn init_head<R: Rng>(hidden: usize, classes: usize, std_dev: f64, rng: &mut R) -> Vec<f64> {
    let mut head: Vec<f64> = (0..hidden * classes).map(|_| normal(rng, std_dev)).collect();
    head.extend(core::iter::repeat_n(0.0, classes));
    head
}

fn linear(x: &[f64], rows: usize, n_in: usize, w: &[f64], b: &[f64], n_out: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * n_out];
    for r in 0..rows {
        let out = &mut y[r * n_out..(r + 1) * n_out];
        out.copy_from_slice(&b[..n_out]);
        for (i, &xi) in x[r * n_in..(r + 1) * n_in].iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let wrow = &w[i * n_out..(i + 1) * n_out];
            for (o, &wv) in out.iter_mut().zip(wrow) {
                *o += xi * wv;
            }
        }
    }
    y
}

/// Accumulates `dW += x^T dy`, `db += sum dy` and returns `dx = dy W^T`.
#[allow(clippy::too_many_arguments)]
fn linear_backward(x: &[f64], rows: usize, n_in: usize, w: &[f64], n_out: usize, dy: &[f64], dw: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let mut dx = vec![0.0; rows * n_in];
    for r in 0..rows {
        let dyr = &dy[r * n_out..(r + 1) * n_out];
        for (o, &g) in dyr.iter().enumerate() {
            db[o] += g;
        }
        let xr = &x[r * n_in..(r + 1) * n_in];
        let dxr = &mut dx[r * n_in..(r + 1) * n_in];
        for i in 0..n_in {
            let wrow = &w[i * n_out..(i + 1) * n_out];
            let dwrow = &mut dw[i * n_out..(i + 1) * n_out];
            let xi = xr[i];
            let mut acc = 0.0;
            for ((dwv, &wv), &g) in dwrow.iter_mut().zip(wrow).zip(dyr) {
                *dwv += xi * g;
                acc += wv * g;
            }
            dxr[i] = acc;
        }
    }
    dx
}

struct NormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &[f64], rows: usize, h: usize, g: &[f64], b: &[f64]) -> (Vec<f64>, NormCache) {
    let mut y = vec![0.0; rows * h];
    let mut xhat = vec![0.0; rows * h];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * h..(r + 1) * h];
        let mean = xr.iter().sum::<f64>() / h as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
        let inv = 1.0 / libm::sqrt(var + LN_EPS);
        inv_std[r] = inv;
        for i in 0..h {
            let xh = (xr[i] - mean) * inv;
            xhat[r * h + i] = xh;
            y[r * h + i] = xh * g[i] + b[i];
        }
    }
    (y, NormCache { xhat, inv_std })
}

fn layer_norm_backward(cache: &NormCache, rows: usize, h: usize, g: &[f64], dy: &[f64], dg: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let mut dx = vec![0.0; rows * h];
    let mut dxhat = vec![0.0; h];
    for r in 0..rows {
        let xh = &cache.xhat[r * h..(r + 1) * h];
        let dyr = &dy[r * h..(r + 1) * h];
        for i in 0..h {
            dg[i] += dyr[i] * xh[i];
            db[i] += dyr[i];
            dxhat[i] = dyr[i] * g[i];
        }
        let mean_d = dxhat.iter().sum::<f64>() / h as f64;
        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / h as f64;
        for i in 0..h {
            dx[r * h + i] = cache.inv_std[r] * (dxhat[i] - mean_d - xh[i] * mean_dx);
        }
    }
    dx
}

const FRAC_1_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2)) + x * FRAC_1_SQRT_2PI * libm::exp(-0.5 * x * x)
}

struct BlockCache {
    input: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// heads x T x T attention weights.
    attn: Vec<f64>,
    ctx: Vec<f64>,
    ln1: NormCache,
    mid: Vec<f64>,
    pre_act: Vec<f64>,
    act: Vec<f64>,
    ln2: NormCache,
}

pub(crate) struct Forward {
    ids: Vec<u32>,
    emb_ln: NormCache,
    blocks: Vec<BlockCache>,
    cls: Vec<f64>,
    pub(crate) probs: Vec<f64>,
}

pub(crate) struct Network<'a> {
    pub cfg: &'a NetworkConfig,
    pub classes: usize,
    layout: Layout,
}

impl<'a> Network<'a> {
    pub(crate) fn new(cfg: &'a NetworkConfig, classes: usize) -> Self {
        Self { cfg, classes, layout: Layout::new(cfg, classes) }
    }

    /// Runs the network over one token sequence (at most `max_positions` long).
    pub(crate) fn forward(&self, p: &[f64], ids: &[u32]) -> Forward {
        let (h, t) = (self.cfg.hidden, ids.len());
        let lay = &self.layout;
        let mut x = vec![0.0; t * h];
        for (pos, &id) in ids.iter().enumerate() {
            let tok = &p[lay.tok + id as usize * h..lay.tok + (id as usize + 1) * h];
            let pe = &p[lay.pos + pos * h..lay.pos + (pos + 1) * h];
            for i in 0..h {
                x[pos * h + i] = tok[i] + pe[i];
            }
        }
        let (mut x, emb_ln) = layer_norm(&x, t, h, &p[lay.emb_g..], &p[lay.emb_b..]);
        let mut blocks = Vec::with_capacity(lay.layers.len());
        for l in &lay.layers {
            let (next, cache) = self.block_forward(p, l, x, t);
            blocks.push(cache);
            x = next;
        }
        let cls = x[..h].to_vec();
        let logits = linear(&cls, 1, h, &p[lay.head_w..], &p[lay.head_b..], self.classes);
        let lse = crate::baselines::logreg::log_sum_exp(&logits);
        let probs = logits.iter().map(|z| libm::exp(z - lse)).collect();
        Forward { ids: ids.to_vec(), emb_ln, blocks, cls, probs }
    }

    fn block_forward(&self, p: &[f64], l: &LayerOffsets, input: Vec<f64>, t: usize) -> (Vec<f64>, BlockCache) {
        let (h, f, heads, dh) = (self.cfg.hidden, self.cfg.ffn, self.cfg.heads, self.cfg.head_dim());
        let scale = 1.0 / libm::sqrt(dh as f64);
        let q = linear(&input, t, h, &p[l.wq..], &p[l.bq..], h);
        let k = linear(&input, t, h, &p[l.wk..], &p[l.bk..], h);
        let v = linear(&input, t, h, &p[l.wv..], &p[l.bv..], h);
        let mut attn = vec![0.0; heads * t * t];
        let mut ctx = vec![0.0; t * h];
        for hd in 0..heads {
            let off = hd * dh;
            for i in 0..t {
                let row = &mut attn[(hd * t + i) * t..(hd * t + i + 1) * t];
                let qi = &q[i * h + off..i * h + off + dh];
                for (j, s) in row.iter_mut().enumerate() {
                    let kj = &k[j * h + off..j * h + off + dh];
                    *s = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                }
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for s in row.iter_mut() {
                    *s = libm::exp(*s - max);
                    sum += *s;
                }
                for s in row.iter_mut() {
                    *s /= sum;
                }
                let out = &mut ctx[i * h + off..i * h + off + dh];
                for (j, &a) in row.iter().enumerate() {
                    for (o, &vv) in out.iter_mut().zip(&v[j * h + off..j * h + off + dh]) {
                        *o += a * vv;
                    }
                }
            }
        }
        let mut res = linear(&ctx, t, h, &p[l.wo..], &p[l.bo..], h);
        res.iter_mut().zip(&input).for_each(|(r, x)| *r += x);
        let (mid, ln1) = layer_norm(&res, t, h, &p[l.ln1_g..], &p[l.ln1_b..]);
        let pre_act = linear(&mid, t, h, &p[l.w1..], &p[l.b1..], f);
        let act: Vec<f64> = pre_act.iter().map(|&z| gelu(z)).collect();
        let mut res2 = linear(&act, t, f, &p[l.w2..], &p[l.b2..], h);
        res2.iter_mut().zip(&mid).for_each(|(r, x)| *r += x);
        let (out, ln2) = layer_norm(&res2, t, h, &p[l.ln2_g..], &p[l.ln2_b..]);
        (out, BlockCache { input, q, k, v, attn, ctx, ln1, mid, pre_act, act, ln2 })
    }

    /// Cross-entropy of `label` under `fwd`, accumulating parameter
    /// gradients (scaled by `weight`) into `grad`.
    pub(crate) fn backward(&self, p: &[f64], fwd: &Forward, label: usize, weight: f64, grad: &mut [f64]) -> f64 {
        let (h, t) = (self.cfg.hidden, fwd.ids.len());
        let lay = &self.layout;
        let loss = -libm::log(fwd.probs[label].max(f64::MIN_POSITIVE));
        let dlogits: Vec<f64> = fwd.probs.iter().enumerate().map(|(c, &pc)| weight * (pc - if c == label { 1.0 } else { 0.0 })).collect();
        let (gw, rest) = grad[lay.head_w..].split_at_mut(h * self.classes);
        let dcls = linear_backward(&fwd.cls, 1, h, &p[lay.head_w..], self.classes, &dlogits, gw, &mut rest[..self.classes]);
        let mut dx = vec![0.0; t * h];
        dx[..h].copy_from_slice(&dcls);
        for (l, cache) in lay.layers.iter().zip(&fwd.blocks).rev() {
            dx = self.block_backward(p, l, cache, &dx, t, grad);
        }
        let (g_emb, b_emb) = grad[lay.emb_g..lay.emb_b + h].split_at_mut(h);
        let dx = layer_norm_backward(&fwd.emb_ln, t, h, &p[lay.emb_g..], &dx, g_emb, b_emb);
        for (pos, &id) in fwd.ids.iter().enumerate() {
            let row = &dx[pos * h..(pos + 1) * h];
            let tok = lay.tok + id as usize * h;
            let pe = lay.pos + pos * h;
            for i in 0..h {
                grad[tok + i] += row[i];
                grad[pe + i] += row[i];
            }
        }
        loss
    }

    fn block_backward(&self, p: &[f64], l: &LayerOffsets, c: &BlockCache, dout: &[f64], t: usize, grad: &mut [f64]) -> Vec<f64> {
        let (h, f, heads, dh) = (self.cfg.hidden, self.cfg.ffn, self.cfg.heads, self.cfg.head_dim());
        let scale = 1.0 / libm::sqrt(dh as f64);

        let (g2, b2) = split_pair(grad, l.ln2_g, l.ln2_b, h);
        let dres2 = layer_norm_backward(&c.ln2, t, h, &p[l.ln2_g..], dout, g2, b2);
        let (w2, bb2) = split_pair(grad, l.w2, l.b2, f * h);
        let dact = linear_backward(&c.act, t, f, &p[l.w2..], h, &dres2, w2, &mut bb2[..h]);
        let dpre: Vec<f64> = dact.iter().zip(&c.pre_act).map(|(d, &z)| d * gelu_grad(z)).collect();
        let (w1, bb1) = split_pair(grad, l.w1, l.b1, h * f);
        let mut dmid = linear_backward(&c.mid, t, h, &p[l.w1..], f, &dpre, w1, &mut bb1[..f]);
        dmid.iter_mut().zip(&dres2).for_each(|(a, b)| *a += b);

        let (g1, b1) = split_pair(grad, l.ln1_g, l.ln1_b, h);
        let dres = layer_norm_backward(&c.ln1, t, h, &p[l.ln1_g..], &dmid, g1, b1);
        let (wo, bo) = split_pair(grad, l.wo, l.bo, h * h);
        let dctx = linear_backward(&c.ctx, t, h, &p[l.wo..], h, &dres, wo, &mut bo[..h]);

        let mut dq = vec![0.0; t * h];
        let mut dk = vec![0.0; t * h];
        let mut dv = vec![0.0; t * h];
        let mut dscore = vec![0.0; t];
        for hd in 0..heads {
            let off = hd * dh;
            for i in 0..t {
                let a = &c.attn[(hd * t + i) * t..(hd * t + i + 1) * t];
                let dci = &dctx[i * h + off..i * h + off + dh];
                let mut weighted = 0.0;
                for j in 0..t {
                    let vj = &c.v[j * h + off..j * h + off + dh];
                    let dp: f64 = dci.iter().zip(vj).map(|(x, y)| x * y).sum();
                    dscore[j] = dp;
                    weighted += a[j] * dp;
                    for (dvv, &g) in dv[j * h + off..j * h + off + dh].iter_mut().zip(dci) {
                        *dvv += a[j] * g;
                    }
                }
                for j in 0..t {
                    let ds = scale * a[j] * (dscore[j] - weighted);
                    if ds == 0.0 {
                        continue;
                    }
                    for d in 0..dh {
                        dq[i * h + off + d] += ds * c.k[j * h + off + d];
                        dk[j * h + off + d] += ds * c.q[i * h + off + d];
                    }
                }
            }
        }
        let mut dinput = dres;
        for (w, b, dy) in [(l.wq, l.bq, &dq), (l.wk, l.bk, &dk), (l.wv, l.bv, &dv)] {
            let (gw, gb) = split_pair(grad, w, b, h * h);
            let dx = linear_backward(&c.input, t, h, &p[w..], h, dy, gw, &mut gb[..h]);
            dinput.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
        }
        dinput
    }
}

/// Two adjacent gradient slices: `[a, a + len)` and the one starting at `b`.
fn split_pair(grad: &mut [f64], a: usize, b: usize, len: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert_eq!(a + len, b);
    let (first, second) = grad[a..].split_at_mut(len);
    (first, &mut second[..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn tiny() -> NetworkConfig {
        NetworkConfig { vocab_size: 7, hidden: 8, heads: 2, ffn: 12, layers: 2, max_positions: 6 }
    }

    fn params(cfg: &NetworkConfig, classes: usize) -> Vec<f64> {
        let mut rng = seeded(11, "gradcheck");
        let mut p = init_encoder(cfg, 0.3, &mut rng);
        p.extend(init_head(cfg.hidden, classes, 0.3, &mut rng));
        // Perturb norms and biases away from their trivial initial values.
        for v in p.iter_mut() {
            *v += 0.05 * normal(&mut rng, 1.0);
        }
        p
    }

    #[test]
    fn layout_sizes() {
        let cfg = tiny();
        let lay = Layout::new(&cfg, 3);
        let per_layer = 4 * (8 * 8 + 8) + 2 * 2 * 8 + 8 * 12 + 12 + 12 * 8 + 8;
        assert_eq!(lay.encoder_len(), 7 * 8 + 6 * 8 + 2 * 8 + 2 * per_layer);
        assert_eq!(lay.total(), lay.encoder_len() + 8 * 3 + 3);
    }

    #[test]
    fn probabilities_are_a_distribution() {
        let cfg = tiny();
        let p = params(&cfg, 3);
        let net = Network::new(&cfg, 3);
        let fwd = net.forward(&p, &[2, 4, 5, 3]);
        assert!((fwd.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(fwd.probs.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let cfg = tiny();
        let classes = 3;
        let p = params(&cfg, classes);
        let net = Network::new(&cfg, classes);
        let ids = [2u32, 4, 1, 5, 3];
        let label = 1;
        let mut grad = vec![0.0; p.len()];
        let fwd = net.forward(&p, &ids);
        net.backward(&p, &fwd, label, 1.0, &mut grad);

        let loss = |q: &[f64]| -libm::log(net.forward(q, &ids).probs[label]);
        let h = 1e-5;
        let mut checked = 0;
        for i in 0..p.len() {
            let mut plus = p.clone();
            plus[i] += h;
            let mut minus = p.clone();
            minus[i] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let tol = 1e-6 + 1e-4 * fd.abs().max(grad[i].abs());
            assert!((fd - grad[i]).abs() < tol, "param {i}: numeric {fd} vs analytic {}", grad[i]);
            checked += 1;
        }
        assert_eq!(checked, net.layout.total());
    }
}
