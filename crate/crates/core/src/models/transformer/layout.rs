use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network shape. Training settings live in
/// [`TransformerConfig`](super::TransformerConfig).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub vocab_size: usize,
    pub dim: usize,
    pub ffn_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_len: usize,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.ffn_dim == 0 || self.layers == 0 || self.max_len < 3 || self.vocab_size < 5 {
            return Err(Error::Config("transformer ffn_dim, layers, max_len or vocabulary too small".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Offsets of every tensor in the flat parameter vector. Matrices are
/// row-major `in x out`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub arch: Architecture,
    pub tok: usize,
    pub pos: usize,
    pub blocks: Vec<BlockLayout>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    /// Output bias of the masked-token head; its weights are tied to `tok`.
    pub mlm_bias: usize,
    pub cls_w: usize,
    pub cls_b: usize,
    /// Start of the classification head; everything before is encoder.
    pub head_start: usize,
    pub total: usize,
}

/// Named tensor inside the flat vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Section {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Section {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Layout {
    pub fn new(arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        let (v, d, f) = (arch.vocab_size, arch.dim, arch.ffn_dim);
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let tok = take(v * d);
        let pos = take(arch.max_len * d);
        let blocks = (0..arch.layers)
            .map(|_| BlockLayout {
                ln1_g: take(d),
                ln1_b: take(d),
                wq: take(d * d),
                bq: take(d),
                wk: take(d * d),
                bk: take(d),
                wv: take(d * d),
                bv: take(d),
                wo: take(d * d),
                bo: take(d),
                ln2_g: take(d),
                ln2_b: take(d),
                w1: take(d * f),
                b1: take(f),
                w2: take(f * d),
                b2: take(d),
            })
            .collect();
        let lnf_g = take(d);
        let lnf_b = take(d);
        let mlm_bias = take(v);
        let cls_w = take(d);
        let cls_b = take(1);
        Ok(Layout {
            arch: arch.clone(),
            tok,
            pos,
            blocks,
            lnf_g,
            lnf_b,
            mlm_bias,
            cls_w,
            cls_b,
            head_start: cls_w,
            total: at,
        })
    }

    pub fn sections(&self) -> Vec<Section> {
        let (v, d, f) = (self.arch.vocab_size, self.arch.dim, self.arch.ffn_dim);
        let s = |name: String, offset: usize, shape: Vec<usize>| Section { name, offset, shape };
        let mut out = vec![
            s("tok_emb".into(), self.tok, vec![v, d]),
            s("pos_emb".into(), self.pos, vec![self.arch.max_len, d]),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            let p = |n: &str| format!("block{i}.{n}");
            out.extend([
                s(p("ln1_g"), b.ln1_g, vec![d]),
                s(p("ln1_b"), b.ln1_b, vec![d]),
                s(p("wq"), b.wq, vec![d, d]),
                s(p("bq"), b.bq, vec![d]),
                s(p("wk"), b.wk, vec![d, d]),
                s(p("bk"), b.bk, vec![d]),
                s(p("wv"), b.wv, vec![d, d]),
                s(p("bv"), b.bv, vec![d]),
                s(p("wo"), b.wo, vec![d, d]),
                s(p("bo"), b.bo, vec![d]),
                s(p("ln2_g"), b.ln2_g, vec![d]),
                s(p("ln2_b"), b.ln2_b, vec![d]),
                s(p("w1"), b.w1, vec![d, f]),
                s(p("b1"), b.b1, vec![f]),
                s(p("w2"), b.w2, vec![f, d]),
                s(p("b2"), b.b2, vec![d]),
            ]);
        }
        out.extend([
            s("lnf_g".into(), self.lnf_g, vec![d]),
            s("lnf_b".into(), self.lnf_b, vec![d]),
            s("mlm_bias".into(), self.mlm_bias, vec![v]),
            s("cls_w".into(), self.cls_w, vec![d]),
            s("cls_b".into(), self.cls_b, vec![1]),
        ]);
        out
    }

    /// Layer-norm gains are one, biases zero, embeddings `N(0, 0.05^2)` and
    /// linear weights `N(0, 1/fan_in)`.
    pub fn init(&self, rng: &mut crate::rng::Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.total];
        for sec in self.sections() {
            let name = sec.name.rsplit('.').next().unwrap_or(&sec.name).to_string();
            let range = sec.offset..sec.offset + sec.len();
            match name.as_str() {
                "tok_emb" | "pos_emb" => p[range].iter_mut().for_each(|x| *x = 0.05 * rng.normal()),
                "wq" | "wk" | "wv" | "wo" | "w1" | "w2" | "cls_w" => {
                    let fan_in = sec.shape[0];
                    let sd = 1.0 / (fan_in as f64).sqrt();
                    p[range].iter_mut().for_each(|x| *x = sd * rng.normal());
                }
                n if n.ends_with("_g") => p[range].iter_mut().for_each(|x| *x = 1.0),
                _ => {}
            }
        }
        p
    }
}
