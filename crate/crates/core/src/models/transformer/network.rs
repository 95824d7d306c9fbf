//! Pre-norm transformer encoder with hand-written backward pass.
//!
//! Block: `x += Attn(LN1(x)); x += W2 gelu(W1 LN2(x))`, then a final layer
//! norm. Attention is bidirectional with no padding: every sequence is
//! processed at its own length.

use super::layout::Layout;
use crate::error::{Error, Result};
use crate::math::{logistic_loss, sigmoid};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Output head for one sequence.
#[derive(Clone, Copy, Debug)]
pub enum Head<'a> {
    /// Cross-entropy summed over `(position, target id)` pairs.
    Mlm(&'a [(usize, u32)]),
    /// Logistic loss of the `[CLS]`-position logit against a 0/1 label.
    Cls(f64),
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + 0.044715 * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let th = (GELU_C * (u + 0.044715 * u * u * u)).tanh();
    0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044715 * u * u)
}

/// `x (t x n) * w (n x m) + b`.
fn linear(x: &[f64], t: usize, n: usize, w: &[f64], b: &[f64], m: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(t * m);
    for _ in 0..t {
        y.extend_from_slice(b);
    }
    for r in 0..t {
        let out = &mut y[r * m..(r + 1) * m];
        for k in 0..n {
            let a = x[r * n + k];
            if a == 0.0 {
                continue;
            }
            for (o, &wv) in out.iter_mut().zip(&w[k * m..(k + 1) * m]) {
                *o += a * wv;
            }
        }
    }
    y
}

/// Backward of [`linear`]: accumulates `dw`, `db` and returns `dx`.
#[allow(clippy::too_many_arguments)]
fn linear_back(dy: &[f64], x: &[f64], t: usize, n: usize, w: &[f64], m: usize, dw: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let mut dx = vec![0.0; t * n];
    for r in 0..t {
        let g = &dy[r * m..(r + 1) * m];
        for (d, &v) in db.iter_mut().zip(g) {
            *d += v;
        }
        for k in 0..n {
            let a = x[r * n + k];
            let wrow = &w[k * m..(k + 1) * m];
            let dwrow = &mut dw[k * m..(k + 1) * m];
            let mut acc = 0.0;
            for j in 0..m {
                acc += g[j] * wrow[j];
                dwrow[j] += a * g[j];
            }
            dx[r * n + k] = acc;
        }
    }
    dx
}

struct LnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &[f64], t: usize, d: usize, g: &[f64], b: &[f64]) -> (Vec<f64>, LnCache) {
    let mut y = vec![0.0; t * d];
    let mut xhat = vec![0.0; t * d];
    let mut inv_std = vec![0.0; t];
    for r in 0..t {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[r] = is;
        for j in 0..d {
            let h = (row[j] - mean) * is;
            xhat[r * d + j] = h;
            y[r * d + j] = g[j] * h + b[j];
        }
    }
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_back(dy: &[f64], c: &LnCache, t: usize, d: usize, g: &[f64], dg: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let mut dx = vec![0.0; t * d];
    let mut dh = vec![0.0; d];
    for r in 0..t {
        let xh = &c.xhat[r * d..(r + 1) * d];
        let gy = &dy[r * d..(r + 1) * d];
        for j in 0..d {
            dg[j] += gy[j] * xh[j];
            db[j] += gy[j];
            dh[j] = gy[j] * g[j];
        }
        let mean_dh = dh.iter().sum::<f64>() / d as f64;
        let mean_dhx = dh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for j in 0..d {
            dx[r * d + j] = c.inv_std[r] * (dh[j] - mean_dh - xh[j] * mean_dhx);
        }
    }
    dx
}

struct BlockCache {
    ln1: LnCache,
    h1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `heads x t x t` attention weights.
    attn: Vec<f64>,
    ctx: Vec<f64>,
    ln2: LnCache,
    h2: Vec<f64>,
    u: Vec<f64>,
    gu: Vec<f64>,
}

/// Forward state kept for the backward pass.
pub struct Forward {
    t: usize,
    blocks: Vec<BlockCache>,
    lnf: LnCache,
    /// Final hidden states, `t x dim`.
    pub hidden: Vec<f64>,
}

impl Forward {
    pub fn pooled(&self, dim: usize) -> &[f64] {
        &self.hidden[..dim]
    }
}

pub fn check_ids(layout: &Layout, ids: &[u32]) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::Empty("token sequence"));
    }
    if ids.len() > layout.arch.max_len {
        return Err(Error::SequenceTooLong {
            len: ids.len(),
            max_len: layout.arch.max_len,
        });
    }
    if let Some(&bad) = ids.iter().find(|&&i| i as usize >= layout.arch.vocab_size) {
        return Err(Error::Invalid(format!("token id {bad} outside the vocabulary")));
    }
    Ok(())
}

pub fn forward(layout: &Layout, p: &[f64], ids: &[u32]) -> Forward {
    let a = &layout.arch;
    let (d, f, t, nh, dh) = (a.dim, a.ffn_dim, ids.len(), a.heads, a.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();
    let mut x = vec![0.0; t * d];
    for (r, &id) in ids.iter().enumerate() {
        let tok = &p[layout.tok + id as usize * d..][..d];
        let pos = &p[layout.pos + r * d..][..d];
        for j in 0..d {
            x[r * d + j] = tok[j] + pos[j];
        }
    }
    let mut blocks = Vec::with_capacity(layout.blocks.len());
    for bl in &layout.blocks {
        let (h1, ln1) = layer_norm(&x, t, d, &p[bl.ln1_g..][..d], &p[bl.ln1_b..][..d]);
        let q = linear(&h1, t, d, &p[bl.wq..][..d * d], &p[bl.bq..][..d], d);
        let k = linear(&h1, t, d, &p[bl.wk..][..d * d], &p[bl.bk..][..d], d);
        let v = linear(&h1, t, d, &p[bl.wv..][..d * d], &p[bl.bv..][..d], d);
        let mut attn = vec![0.0; nh * t * t];
        let mut ctx = vec![0.0; t * d];
        for h in 0..nh {
            let off = h * dh;
            for i in 0..t {
                let row = &mut attn[(h * t + i) * t..(h * t + i + 1) * t];
                let qi = &q[i * d + off..i * d + off + dh];
                let mut mx = f64::NEG_INFINITY;
                for j in 0..t {
                    let kj = &k[j * d + off..j * d + off + dh];
                    let s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                    row[j] = s;
                    mx = mx.max(s);
                }
                let mut z = 0.0;
                for s in row.iter_mut() {
                    *s = (*s - mx).exp();
                    z += *s;
                }
                for s in row.iter_mut() {
                    *s /= z;
                }
                let out = &mut ctx[i * d + off..i * d + off + dh];
                for j in 0..t {
                    let w = row[j];
                    for (o, &vv) in out.iter_mut().zip(&v[j * d + off..j * d + off + dh]) {
                        *o += w * vv;
                    }
                }
            }
        }
        let o = linear(&ctx, t, d, &p[bl.wo..][..d * d], &p[bl.bo..][..d], d);
        for (xv, ov) in x.iter_mut().zip(&o) {
            *xv += ov;
        }
        let (h2, ln2) = layer_norm(&x, t, d, &p[bl.ln2_g..][..d], &p[bl.ln2_b..][..d]);
        let u = linear(&h2, t, d, &p[bl.w1..][..d * f], &p[bl.b1..][..f], f);
        let gu: Vec<f64> = u.iter().map(|&z| gelu(z)).collect();
        let m = linear(&gu, t, f, &p[bl.w2..][..f * d], &p[bl.b2..][..d], d);
        for (xv, mv) in x.iter_mut().zip(&m) {
            *xv += mv;
        }
        blocks.push(BlockCache {
            ln1,
            h1,
            q,
            k,
            v,
            attn,
            ctx,
            ln2,
            h2,
            u,
            gu,
        });
    }
    let (hidden, lnf) = layer_norm(&x, t, d, &p[layout.lnf_g..][..d], &p[layout.lnf_b..][..d]);
    Forward {
        t,
        blocks,
        lnf,
        hidden,
    }
}

/// Classification logit at the `[CLS]` position.
pub fn cls_logit(layout: &Layout, p: &[f64], pooled: &[f64]) -> f64 {
    let d = layout.arch.dim;
    p[layout.cls_b] + pooled.iter().zip(&p[layout.cls_w..][..d]).map(|(a, b)| a * b).sum::<f64>()
}

/// Head loss and gradient with respect to the final hidden states.
fn head_loss(layout: &Layout, p: &[f64], fwd: &Forward, head: Head, mut grad: Option<&mut [f64]>) -> (f64, Vec<f64>) {
    let a = &layout.arch;
    let (d, vsz) = (a.dim, a.vocab_size);
    let mut dz = vec![0.0; fwd.t * d];
    let mut loss = 0.0;
    match head {
        Head::Mlm(targets) => {
            let mut logits = vec![0.0; vsz];
            for &(pos, target) in targets {
                let z = &fwd.hidden[pos * d..(pos + 1) * d];
                let mut mx = f64::NEG_INFINITY;
                for (j, l) in logits.iter_mut().enumerate() {
                    let e = &p[layout.tok + j * d..][..d];
                    *l = p[layout.mlm_bias + j] + z.iter().zip(e).map(|(a, b)| a * b).sum::<f64>();
                    mx = mx.max(*l);
                }
                let mut sum = 0.0;
                for l in logits.iter_mut() {
                    *l = (*l - mx).exp();
                    sum += *l;
                }
                loss += -(logits[target as usize] / sum).ln();
                if let Some(g) = grad.as_deref_mut() {
                    let dzp = &mut dz[pos * d..(pos + 1) * d];
                    for j in 0..vsz {
                        let mut dl = logits[j] / sum;
                        if j == target as usize {
                            dl -= 1.0;
                        }
                        g[layout.mlm_bias + j] += dl;
                        let e = &p[layout.tok + j * d..][..d];
                        for c in 0..d {
                            dzp[c] += dl * e[c];
                        }
                        let ge = &mut g[layout.tok + j * d..][..d];
                        for c in 0..d {
                            ge[c] += dl * z[c];
                        }
                    }
                }
            }
        }
        Head::Cls(y) => {
            let pooled = fwd.pooled(d);
            let logit = cls_logit(layout, p, pooled);
            loss = logistic_loss(logit, y);
            if let Some(g) = grad.as_mut() {
                let dl = sigmoid(logit) - y;
                g[layout.cls_b] += dl;
                for c in 0..d {
                    g[layout.cls_w + c] += dl * pooled[c];
                    dz[c] = dl * p[layout.cls_w + c];
                }
            }
        }
    }
    (loss, dz)
}

/// Loss of one sequence under `head`; with `grad`, adds the gradient of that
/// loss into it. Ids must pass [`check_ids`].
pub fn loss_and_grad(layout: &Layout, p: &[f64], ids: &[u32], head: Head, grad: Option<&mut [f64]>) -> f64 {
    let fwd = forward(layout, p, ids);
    let Some(g) = grad else {
        return head_loss(layout, p, &fwd, head, None).0;
    };
    let (loss, dz) = head_loss(layout, p, &fwd, head, Some(&mut *g));
    backward_encoder(layout, p, ids, &fwd, &dz, g);
    loss
}

/// Backpropagates `dz` (gradient at the final hidden states) through the
/// encoder.
pub fn backward_encoder(layout: &Layout, p: &[f64], ids: &[u32], fwd: &Forward, dz: &[f64], g: &mut [f64]) {
    let a = &layout.arch;
    let (d, f, t, nh, dh) = (a.dim, a.ffn_dim, fwd.t, a.heads, a.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();
    let (gg, gb) = split2(g, layout.lnf_g, layout.lnf_b, d);
    let mut dx = layer_norm_back(dz, &fwd.lnf, t, d, &p[layout.lnf_g..][..d], gg, gb);
    for (bl, c) in layout.blocks.iter().zip(&fwd.blocks).rev() {
        // Feed-forward branch.
        let dgu = {
            let (dw, db) = split2(g, bl.w2, bl.b2, f * d);
            linear_back(&dx, &c.gu, t, f, &p[bl.w2..][..f * d], d, dw, &mut db[..d])
        };
        let du: Vec<f64> = dgu.iter().zip(&c.u).map(|(g, &u)| g * gelu_grad(u)).collect();
        let dh2 = {
            let (dw, db) = split2(g, bl.w1, bl.b1, d * f);
            linear_back(&du, &c.h2, t, d, &p[bl.w1..][..d * f], f, dw, &mut db[..f])
        };
        let dmid = {
            let (dg2, db2) = split2(g, bl.ln2_g, bl.ln2_b, d);
            layer_norm_back(&dh2, &c.ln2, t, d, &p[bl.ln2_g..][..d], dg2, db2)
        };
        for (x, v) in dx.iter_mut().zip(&dmid) {
            *x += v;
        }
        // Attention branch.
        let dctx = {
            let (dw, db) = split2(g, bl.wo, bl.bo, d * d);
            linear_back(&dx, &c.ctx, t, d, &p[bl.wo..][..d * d], d, dw, &mut db[..d])
        };
        let mut dq = vec![0.0; t * d];
        let mut dk = vec![0.0; t * d];
        let mut dv = vec![0.0; t * d];
        let mut da = vec![0.0; t];
        for h in 0..nh {
            let off = h * dh;
            for i in 0..t {
                let arow = &c.attn[(h * t + i) * t..(h * t + i + 1) * t];
                let gi = &dctx[i * d + off..i * d + off + dh];
                for j in 0..t {
                    let vj = &c.v[j * d + off..j * d + off + dh];
                    da[j] = gi.iter().zip(vj).map(|(a, b)| a * b).sum();
                    let dvj = &mut dv[j * d + off..j * d + off + dh];
                    for (dvv, &gv) in dvj.iter_mut().zip(gi) {
                        *dvv += arow[j] * gv;
                    }
                }
                let dot: f64 = arow.iter().zip(&da).map(|(a, b)| a * b).sum();
                for j in 0..t {
                    let ds = arow[j] * (da[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for e in 0..dh {
                        dq[i * d + off + e] += ds * c.k[j * d + off + e];
                        dk[j * d + off + e] += ds * c.q[i * d + off + e];
                    }
                }
            }
        }
        let mut dh1 = {
            let (dw, db) = split2(g, bl.wq, bl.bq, d * d);
            linear_back(&dq, &c.h1, t, d, &p[bl.wq..][..d * d], d, dw, &mut db[..d])
        };
        for (w, b, dproj) in [(bl.wk, bl.bk, &dk), (bl.wv, bl.bv, &dv)] {
            let (dw, db) = split2(g, w, b, d * d);
            let part = linear_back(dproj, &c.h1, t, d, &p[w..][..d * d], d, dw, &mut db[..d]);
            for (x, v) in dh1.iter_mut().zip(&part) {
                *x += v;
            }
        }
        let din = {
            let (dg1, db1) = split2(g, bl.ln1_g, bl.ln1_b, d);
            layer_norm_back(&dh1, &c.ln1, t, d, &p[bl.ln1_g..][..d], dg1, db1)
        };
        for (x, v) in dx.iter_mut().zip(&din) {
            *x += v;
        }
    }
    for (r, &id) in ids.iter().enumerate() {
        for j in 0..d {
            g[layout.tok + id as usize * d + j] += dx[r * d + j];
            g[layout.pos + r * d + j] += dx[r * d + j];
        }
    }
}

/// Two disjoint mutable windows of `g`: `[a, a + len)` and `[b, ..)`, with
/// `a < b` and `a + len <= b`.
fn split2(g: &mut [f64], a: usize, b: usize, len: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a + len <= b);
    let (lo, hi) = g.split_at_mut(b);
    (&mut lo[a..a + len], hi)
}
