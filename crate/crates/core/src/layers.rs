//! Parameterized building blocks shared by the encoder, policy network and
//! language model.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{normal, AttnMask, ParamId, ParamStore, Real, Tape, Tensor, Var};

pub const LN_EPS: f64 = 1e-5;

/// Low-rank delta on a projection: `x·W + s·(x·A)·B`.
///
/// Stored input-major like the base matrix: `A` is `d_in×r`, `B` is `r×d_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub a: ParamId,
    pub b: ParamId,
    pub rank: usize,
    pub scale: f64,
}

impl LoraAdapter {
    pub fn init<R: Real>(
        store: &mut ParamStore<R>,
        rng: &mut impl Rng,
        name: &str,
        d_in: usize,
        d_out: usize,
        rank: usize,
        alpha: f64,
    ) -> Result<Self> {
        if rank == 0 || rank > d_in.min(d_out) {
            return Err(Error::Rank {
                rank,
                limit: d_in.min(d_out),
            });
        }
        let a = store.insert(&format!("{name}.lora_a"), normal(rng, &[d_in, rank], inv_sqrt(d_in)));
        let b = store.insert(&format!("{name}.lora_b"), Tensor::zeros(&[rank, d_out]));
        Ok(LoraAdapter {
            a,
            b,
            rank,
            scale: alpha / rank as f64,
        })
    }
}

/// Effective matrix `W + s·A·B` of an adapted projection.
pub fn lora_apply<R: Real>(w: &Tensor<R>, a: &Tensor<R>, b: &Tensor<R>, scale: f64) -> Result<Tensor<R>> {
    let (d_in, d_out) = w.dims2();
    let (ar, rank) = a.dims2();
    if ar != d_in || b.dims2() != (rank, d_out) {
        return Err(Error::Shape {
            op: "lora_apply",
            detail: format!("W {:?}, A {:?}, B {:?}", w.shape(), a.shape(), b.shape()),
        });
    }
    if rank > d_in.min(d_out) {
        return Err(Error::Rank {
            rank,
            limit: d_in.min(d_out),
        });
    }
    let mut delta = a.matmul(b)?;
    let s = R::of(scale);
    delta.data_mut().iter_mut().for_each(|v| *v = *v * s);
    let mut out = w.clone();
    out.add_assign(&delta);
    Ok(out)
}

/// Affine map `x·W + b`, optionally with a low-rank adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub lora: Option<LoraAdapter>,
}

impl Linear {
    pub fn init<R: Real>(store: &mut ParamStore<R>, rng: &mut impl Rng, name: &str, d_in: usize, d_out: usize, bias: bool) -> Self {
        let w = store.insert(&format!("{name}.w"), normal(rng, &[d_in, d_out], inv_sqrt(d_in)));
        let b = bias.then(|| store.insert(&format!("{name}.b"), Tensor::zeros(&[d_out])));
        Linear { w, b, lora: None }
    }

    pub fn forward<R: Real>(&self, tape: &mut Tape<'_, R>, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let mut y = tape.matmul(x, w)?;
        if let Some(l) = &self.lora {
            let a = tape.param(l.a);
            let b = tape.param(l.b);
            let xa = tape.matmul(x, a)?;
            let d = tape.matmul(xa, b)?;
            let d = tape.scale(d, R::of(l.scale));
            y = tape.add(y, d)?;
        }
        if let Some(b) = self.b {
            let b = tape.param(b);
            y = tape.add_row(y, b)?;
        }
        Ok(y)
    }

    /// Every tensor this projection owns.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = vec![self.w];
        v.extend(self.b);
        if let Some(l) = &self.lora {
            v.push(l.a);
            v.push(l.b);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn init<R: Real>(store: &mut ParamStore<R>, name: &str, d: usize) -> Self {
        LayerNorm {
            gain: store.insert(&format!("{name}.gain"), Tensor::full(&[d], R::one())),
            bias: store.insert(&format!("{name}.bias"), Tensor::zeros(&[d])),
        }
    }

    pub fn forward<R: Real>(&self, tape: &mut Tape<'_, R>, x: Var) -> Result<Var> {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        tape.layer_norm(x, g, b, R::of(LN_EPS))
    }
}

/// Cached keys and values of one attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCache<R> {
    keys: Vec<R>,
    values: Vec<R>,
    width: usize,
}

impl<R: Real> LayerCache<R> {
    pub fn new(width: usize) -> Self {
        LayerCache {
            keys: Vec::new(),
            values: Vec::new(),
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// Pre-norm transformer block: self-attention then a GELU feed-forward net,
/// each wrapped in a residual connection.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub heads: usize,
}

impl Block {
    pub fn init<R: Real>(store: &mut ParamStore<R>, rng: &mut impl Rng, name: &str, d: usize, heads: usize, ffn: usize) -> Self {
        Block {
            ln1: LayerNorm::init(store, &format!("{name}.ln1"), d),
            q: Linear::init(store, rng, &format!("{name}.attn.q"), d, d, true),
            // A key bias shifts every score of a query equally, so it is left out.
            k: Linear::init(store, rng, &format!("{name}.attn.k"), d, d, false),
            v: Linear::init(store, rng, &format!("{name}.attn.v"), d, d, true),
            o: Linear::init(store, rng, &format!("{name}.attn.o"), d, d, true),
            ln2: LayerNorm::init(store, &format!("{name}.ln2"), d),
            ff1: Linear::init(store, rng, &format!("{name}.ffn.up"), d, ffn, true),
            ff2: Linear::init(store, rng, &format!("{name}.ffn.down"), ffn, d, true),
            heads,
        }
    }

    /// Attaches adapters to the four attention projections.
    pub fn add_lora<R: Real>(&mut self, store: &mut ParamStore<R>, rng: &mut impl Rng, name: &str, rank: usize, alpha: f64) -> Result<()> {
        for (tag, lin) in [("q", &mut self.q), ("k", &mut self.k), ("v", &mut self.v), ("o", &mut self.o)] {
            let (d_in, d_out) = store.tensor(lin.w).dims2();
            lin.lora = Some(LoraAdapter::init(store, rng, &format!("{name}.attn.{tag}"), d_in, d_out, rank, alpha)?);
        }
        Ok(())
    }

    fn feed_forward<R: Real>(&self, tape: &mut Tape<'_, R>, x: Var) -> Result<Var> {
        let h = self.ln2.forward(tape, x)?;
        let h = self.ff1.forward(tape, h)?;
        let h = tape.gelu(h);
        let h = self.ff2.forward(tape, h)?;
        tape.add(x, h)
    }

    /// Whole-sequence forward pass.
    pub fn forward<R: Real>(&self, tape: &mut Tape<'_, R>, x: Var, mask: AttnMask) -> Result<Var> {
        let h = self.ln1.forward(tape, x)?;
        let q = self.q.forward(tape, h)?;
        let k = self.k.forward(tape, h)?;
        let v = self.v.forward(tape, h)?;
        let a = tape.attention(q, k, v, self.heads, mask)?;
        let a = self.o.forward(tape, a)?;
        let x = tape.add(x, a)?;
        self.feed_forward(tape, x)
    }

    /// One new position (`x` is `1×d`) attending over the cache plus itself.
    pub fn step<R: Real>(&self, tape: &mut Tape<'_, R>, x: Var, cache: &mut LayerCache<R>) -> Result<Var> {
        let h = self.ln1.forward(tape, x)?;
        let q = self.q.forward(tape, h)?;
        let k = self.k.forward(tape, h)?;
        let v = self.v.forward(tape, h)?;
        let d = cache.width;
        if tape.value(k).len() != d {
            return Err(Error::Cache(format!("cache width {d}, key width {}", tape.value(k).len())));
        }
        cache.keys.extend_from_slice(tape.value(k).data());
        cache.values.extend_from_slice(tape.value(v).data());
        let n = cache.len();
        let kc = tape.constant(Tensor::matrix(n, d, cache.keys.clone())?);
        let vc = tape.constant(Tensor::matrix(n, d, cache.values.clone())?);
        let a = tape.attention(q, kc, vc, self.heads, AttnMask::Full)?;
        let a = self.o.forward(tape, a)?;
        let x = tape.add(x, a)?;
        self.feed_forward(tape, x)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = vec![self.ln1.gain, self.ln1.bias, self.ln2.gain, self.ln2.bias];
        for l in [&self.q, &self.k, &self.v, &self.o, &self.ff1, &self.ff2] {
            v.extend(l.param_ids());
        }
        v
    }
}

/// Gated recurrent cell: `z`, `r` gates and candidate `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub wz: Linear,
    pub wr: Linear,
    pub wn: Linear,
    pub uz: ParamId,
    pub ur: ParamId,
    pub un: ParamId,
}

impl Gru {
    pub fn init<R: Real>(store: &mut ParamStore<R>, rng: &mut impl Rng, name: &str, d_in: usize, d_state: usize) -> Self {
        let std = inv_sqrt(d_state);
        Gru {
            wz: Linear::init(store, rng, &format!("{name}.wz"), d_in, d_state, true),
            wr: Linear::init(store, rng, &format!("{name}.wr"), d_in, d_state, true),
            wn: Linear::init(store, rng, &format!("{name}.wn"), d_in, d_state, true),
            uz: store.insert(&format!("{name}.uz"), normal(rng, &[d_state, d_state], std)),
            ur: store.insert(&format!("{name}.ur"), normal(rng, &[d_state, d_state], std)),
            un: store.insert(&format!("{name}.un"), normal(rng, &[d_state, d_state], std)),
        }
    }

    /// `h' = (1 − z)⊙n + z⊙h`.
    pub fn forward<R: Real>(&self, tape: &mut Tape<'_, R>, h: Var, x: Var) -> Result<Var> {
        let (uz, ur, un) = (tape.param(self.uz), tape.param(self.ur), tape.param(self.un));
        let xz = self.wz.forward(tape, x)?;
        let hz = tape.matmul(h, uz)?;
        let z = tape.add(xz, hz)?;
        let z = tape.sigmoid(z);
        let xr = self.wr.forward(tape, x)?;
        let hr = tape.matmul(h, ur)?;
        let r = tape.add(xr, hr)?;
        let r = tape.sigmoid(r);
        let xn = self.wn.forward(tape, x)?;
        let hn = tape.matmul(h, un)?;
        let hn = tape.mul(r, hn)?;
        let n = tape.add(xn, hn)?;
        let n = tape.tanh(n);
        // h' = n + z⊙(h − n)
        let diff = tape.sub(h, n)?;
        let zd = tape.mul(z, diff)?;
        tape.add(n, zd)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = vec![self.uz, self.ur, self.un];
        for l in [&self.wz, &self.wr, &self.wn] {
            v.extend(l.param_ids());
        }
        v
    }
}

/// Sinusoidal encodings of absolute positions `offset..offset+n`.
pub fn sinusoid_table<R: Real>(offset: usize, n: usize, d: usize) -> Tensor<R> {
    let mut data = Vec::with_capacity(n * d);
    for pos in offset..offset + n {
        for c in 0..d {
            let pair = (c / 2) as f64;
            let freq = Float::powf(10000.0f64, -2.0 * pair / d as f64);
            let angle = pos as f64 * freq;
            data.push(R::of(if c % 2 == 0 { Float::sin(angle) } else { Float::cos(angle) }));
        }
    }
    Tensor::matrix(n, d, data).expect("table shape")
}

/// `1/√n`, the default initialization scale for fan-in `n`.
pub fn inv_sqrt(n: usize) -> f64 {
    1.0 / Float::sqrt(n as f64)
}
