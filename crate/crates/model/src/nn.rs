//! Layers over a flat parameter vector, each with an explicit forward cache
//! and a hand-written backward pass that accumulates into a flat gradient.
//!
//! Sequences are row-major `n × d` slices.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(-1/√fan_in, 1/√fan_in)`.
    FanIn(usize),
    Zeros,
    Ones,
    Gaussian(f64),
}

/// One named block of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Default)]
pub struct LayoutBuilder {
    blocks: Vec<(ParamBlock, Init)>,
    total: usize,
}

impl LayoutBuilder {
    pub fn add(&mut self, name: impl Into<String>, len: usize, init: Init) -> usize {
        let offset = self.total;
        self.blocks.push((ParamBlock { name: name.into(), offset, len }, init));
        self.total += len;
        offset
    }

    pub fn finish(self) -> ParamLayout {
        ParamLayout {
            total: self.total,
            inits: self.blocks.iter().map(|(_, i)| *i).collect(),
            blocks: self.blocks.into_iter().map(|(b, _)| b).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub blocks: Vec<ParamBlock>,
    inits: Vec<Init>,
    pub total: usize,
}

impl ParamLayout {
    pub fn initialize(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.total];
        for (b, init) in self.blocks.iter().zip(&self.inits) {
            let dst = &mut p[b.offset..b.offset + b.len];
            match *init {
                Init::FanIn(fan_in) => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    dst.iter_mut().for_each(|v| *v = rng.random_range(-bound..=bound));
                }
                Init::Zeros => {}
                Init::Ones => dst.fill(1.0),
                Init::Gaussian(sigma) => {
                    let n = Normal::new(0.0, sigma).expect("positive sigma");
                    dst.iter_mut().for_each(|v| *v = n.sample(rng));
                }
            }
        }
        p
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Blocks whose name starts with `prefix`.
    pub fn blocks_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a ParamBlock> + 'a {
        self.blocks.iter().filter(move |b| b.name.starts_with(prefix))
    }

    /// Name of the block holding flat index `i`.
    pub fn name_of(&self, i: usize) -> Option<&str> {
        self.blocks
            .iter()
            .find(|b| i >= b.offset && i < b.offset + b.len)
            .map(|b| b.name.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    pub fn new(lb: &mut LayoutBuilder, name: &str, din: usize, dout: usize) -> Self {
        let w = lb.add(format!("{name}.weight"), din * dout, Init::FanIn(din));
        let b = lb.add(format!("{name}.bias"), dout, Init::Zeros);
        Self { w, b, din, dout }
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let n = x.len() / self.din;
        let w = &p[self.w..self.w + self.din * self.dout];
        let b = &p[self.b..self.b + self.dout];
        let mut y = vec![0.0; n * self.dout];
        for r in 0..n {
            let xr = &x[r * self.din..(r + 1) * self.din];
            for o in 0..self.dout {
                let wr = &w[o * self.din..(o + 1) * self.din];
                y[r * self.dout + o] = b[o] + dot(wr, xr);
            }
        }
        y
    }

    /// Accumulates weight gradients and returns `dx`.
    pub fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], g: &mut [f64]) -> Vec<f64> {
        let n = x.len() / self.din;
        let mut dx = vec![0.0; x.len()];
        for r in 0..n {
            let xr = &x[r * self.din..(r + 1) * self.din];
            let dxr = &mut dx[r * self.din..(r + 1) * self.din];
            for o in 0..self.dout {
                let d = dy[r * self.dout + o];
                if d == 0.0 {
                    continue;
                }
                g[self.b + o] += d;
                let wo = self.w + o * self.din;
                for i in 0..self.din {
                    g[wo + i] += d * xr[i];
                    dxr[i] += d * p[wo + i];
                }
            }
        }
        dx
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: usize,
    pub beta: usize,
    pub d: usize,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(lb: &mut LayoutBuilder, name: &str, d: usize) -> Self {
        let gamma = lb.add(format!("{name}.gamma"), d, Init::Ones);
        let beta = lb.add(format!("{name}.beta"), d, Init::Zeros);
        Self { gamma, beta, d }
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> (Vec<f64>, LayerNormCache) {
        let d = self.d;
        let n = x.len() / d;
        let mut y = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; n];
        for r in 0..n {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = inv;
            for i in 0..d {
                let h = (row[i] - mean) * inv;
                xhat[r * d + i] = h;
                y[r * d + i] = h * p[self.gamma + i] + p[self.beta + i];
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, p: &[f64], c: &LayerNormCache, dy: &[f64], g: &mut [f64]) -> Vec<f64> {
        let d = self.d;
        let n = dy.len() / d;
        let mut dx = vec![0.0; dy.len()];
        for r in 0..n {
            let mut dxhat = vec![0.0; d];
            let (mut s1, mut s2) = (0.0, 0.0);
            for i in 0..d {
                let k = r * d + i;
                g[self.gamma + i] += dy[k] * c.xhat[k];
                g[self.beta + i] += dy[k];
                dxhat[i] = dy[k] * p[self.gamma + i];
                s1 += dxhat[i];
                s2 += dxhat[i] * c.xhat[k];
            }
            let inv = c.inv_std[r];
            for i in 0..d {
                let k = r * d + i;
                dx[k] = inv / d as f64 * (d as f64 * dxhat[i] - s1 - c.xhat[k] * s2);
            }
        }
        dx
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)

/// Tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Two-layer perceptron with a GELU in between.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    x: Vec<f64>,
    u: Vec<f64>,
    a: Vec<f64>,
}

impl Mlp {
    pub fn new(lb: &mut LayoutBuilder, name: &str, din: usize, hidden: usize, dout: usize) -> Self {
        Self {
            l1: Linear::new(lb, &format!("{name}.fc1"), din, hidden),
            l2: Linear::new(lb, &format!("{name}.fc2"), hidden, dout),
        }
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> (Vec<f64>, MlpCache) {
        let u = self.l1.forward(p, x);
        let a: Vec<f64> = u.iter().map(|&v| gelu(v)).collect();
        let y = self.l2.forward(p, &a);
        (y, MlpCache { x: x.to_vec(), u, a })
    }

    pub fn backward(&self, p: &[f64], c: &MlpCache, dy: &[f64], g: &mut [f64]) -> Vec<f64> {
        let da = self.l2.backward(p, &c.a, dy, g);
        let du: Vec<f64> = da.iter().zip(&c.u).map(|(d, &u)| d * gelu_grad(u)).collect();
        self.l1.backward(p, &c.x, &du, g)
    }
}

/// Multi-head self-attention without masking.
#[derive(Debug, Clone)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub d: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `heads × n × n` attention weights.
    a: Vec<f64>,
    ctx: Vec<f64>,
}

impl Attention {
    pub fn new(lb: &mut LayoutBuilder, name: &str, d: usize, heads: usize) -> Self {
        assert!(heads > 0 && d % heads == 0, "width {d} not divisible by {heads} heads");
        Self {
            q: Linear::new(lb, &format!("{name}.q"), d, d),
            k: Linear::new(lb, &format!("{name}.k"), d, d),
            v: Linear::new(lb, &format!("{name}.v"), d, d),
            o: Linear::new(lb, &format!("{name}.o"), d, d),
            heads,
            d,
        }
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> (Vec<f64>, AttentionCache) {
        let d = self.d;
        let n = x.len() / d;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.q.forward(p, x);
        let k = self.k.forward(p, x);
        let v = self.v.forward(p, x);
        let mut a = vec![0.0; self.heads * n * n];
        let mut ctx = vec![0.0; n * d];
        for h in 0..self.heads {
            let off = h * dh;
            for i in 0..n {
                let row = &mut a[(h * n + i) * n..(h * n + i + 1) * n];
                let qi = &q[i * d + off..i * d + off + dh];
                for j in 0..n {
                    row[j] = scale * dot(qi, &k[j * d + off..j * d + off + dh]);
                }
                softmax_in_place(row);
                for j in 0..n {
                    let w = row[j];
                    for c in 0..dh {
                        ctx[i * d + off + c] += w * v[j * d + off + c];
                    }
                }
            }
        }
        let y = self.o.forward(p, &ctx);
        (y, AttentionCache { x: x.to_vec(), q, k, v, a, ctx })
    }

    pub fn backward(&self, p: &[f64], c: &AttentionCache, dy: &[f64], g: &mut [f64]) -> Vec<f64> {
        let d = self.d;
        let n = c.x.len() / d;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let dctx = self.o.backward(p, &c.ctx, dy, g);
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        for h in 0..self.heads {
            let off = h * dh;
            for i in 0..n {
                let arow = &c.a[(h * n + i) * n..(h * n + i + 1) * n];
                let dci = &dctx[i * d + off..i * d + off + dh];
                let mut da = vec![0.0; n];
                for j in 0..n {
                    da[j] = dot(dci, &c.v[j * d + off..j * d + off + dh]);
                    for cc in 0..dh {
                        dv[j * d + off + cc] += arow[j] * dci[cc];
                    }
                }
                let s: f64 = (0..n).map(|j| da[j] * arow[j]).sum();
                for j in 0..n {
                    let ds = arow[j] * (da[j] - s) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for cc in 0..dh {
                        dq[i * d + off + cc] += ds * c.k[j * d + off + cc];
                        dk[j * d + off + cc] += ds * c.q[i * d + off + cc];
                    }
                }
            }
        }
        let mut dx = self.q.backward(p, &c.x, &dq, g);
        add_into(&mut dx, &self.k.backward(p, &c.x, &dk, g));
        add_into(&mut dx, &self.v.backward(p, &c.x, &dv, g));
        dx
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

pub fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

/// Pre-norm encoder layer: `x + Attn(LN(x))`, then `x + FFN(LN(x))`.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub ffn: Mlp,
}

#[derive(Debug, Clone)]
pub struct TransformerLayerCache {
    ln1: LayerNormCache,
    attn: AttentionCache,
    ln2: LayerNormCache,
    ffn: MlpCache,
}

impl TransformerLayer {
    pub fn new(lb: &mut LayoutBuilder, name: &str, d: usize, heads: usize) -> Self {
        Self {
            ln1: LayerNorm::new(lb, &format!("{name}.ln1"), d),
            attn: Attention::new(lb, &format!("{name}.attn"), d, heads),
            ln2: LayerNorm::new(lb, &format!("{name}.ln2"), d),
            ffn: Mlp::new(lb, &format!("{name}.ffn"), d, 2 * d, d),
        }
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> (Vec<f64>, TransformerLayerCache) {
        let (h1, ln1) = self.ln1.forward(p, x);
        let (a, attn) = self.attn.forward(p, &h1);
        let x1: Vec<f64> = x.iter().zip(&a).map(|(u, v)| u + v).collect();
        let (h2, ln2) = self.ln2.forward(p, &x1);
        let (f, ffn) = self.ffn.forward(p, &h2);
        let y = x1.iter().zip(&f).map(|(u, v)| u + v).collect();
        (y, TransformerLayerCache { ln1, attn, ln2, ffn })
    }

    pub fn backward(&self, p: &[f64], c: &TransformerLayerCache, dy: &[f64], g: &mut [f64]) -> Vec<f64> {
        let dh2 = self.ffn.backward(p, &c.ffn, dy, g);
        let mut dx1 = self.ln2.backward(p, &c.ln2, &dh2, g);
        add_into(&mut dx1, dy);
        let dh1 = self.attn.backward(p, &c.attn, &dx1, g);
        let mut dx = self.ln1.backward(p, &c.ln1, &dh1, g);
        add_into(&mut dx, &dx1);
        dx
    }
}

#[derive(Debug, Clone)]
pub struct Transformer {
    pub layers: Vec<TransformerLayer>,
}

impl Transformer {
    pub fn new(lb: &mut LayoutBuilder, name: &str, d: usize, heads: usize, depth: usize) -> Self {
        Self {
            layers: (0..depth)
                .map(|i| TransformerLayer::new(lb, &format!("{name}.layer{i}"), d, heads))
                .collect(),
        }
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> (Vec<f64>, Vec<TransformerLayerCache>) {
        let mut h = x.to_vec();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, c) = layer.forward(p, &h);
            caches.push(c);
            h = y;
        }
        (h, caches)
    }

    pub fn backward(&self, p: &[f64], caches: &[TransformerLayerCache], dy: &[f64], g: &mut [f64]) -> Vec<f64> {
        let mut d = dy.to_vec();
        for (layer, c) in self.layers.iter().zip(caches).rev() {
            d = layer.backward(p, c, &d, g);
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Checks `backward` against central differences of `Σ wᵢ yᵢ` in both
    /// the parameters and the input.
    fn check_layer(
        total: usize,
        x_len: usize,
        seed: u64,
        fwd: &dyn Fn(&[f64], &[f64]) -> Vec<f64>,
        bwd: &dyn Fn(&[f64], &[f64], &[f64], &mut [f64]) -> Vec<f64>,
        randomize_params: bool,
        layout: &ParamLayout,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = layout.initialize(&mut rng);
        if randomize_params {
            p.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
        assert_eq!(p.len(), total);
        let x = rand_vec(&mut rng, x_len);
        let y = fwd(&p, &x);
        let w = rand_vec(&mut rng, y.len());
        let loss = |p: &[f64], x: &[f64]| dot(&fwd(p, x), &w);
        let mut g = vec![0.0; total];
        let dx = bwd(&p, &x, &w, &mut g);
        let h = 1e-6;
        for i in 0..total {
            let (mut a, mut b) = (p.clone(), p.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (loss(&a, &x) - loss(&b, &x)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", g[i]);
        }
        for i in 0..x_len {
            let (mut a, mut b) = (x.clone(), x.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (loss(&p, &a) - loss(&p, &b)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-6 * (1.0 + fd.abs()), "input {i}: {fd} vs {}", dx[i]);
        }
    }

    #[test]
    fn linear_gradient() {
        let mut lb = LayoutBuilder::default();
        let l = Linear::new(&mut lb, "l", 4, 3);
        let layout = lb.finish();
        check_layer(layout.total, 8, 1, &|p, x| l.forward(p, x), &|p, x, dy, g| l.backward(p, x, dy, g), false, &layout);
    }

    #[test]
    fn linear_regression_gradient_closed_form() {
        // L = ½‖Wx + b − y‖² has ∂L/∂W = r xᵀ and ∂L/∂b = r with r = Wx + b − y.
        let mut lb = LayoutBuilder::default();
        let l = Linear::new(&mut lb, "l", 3, 2);
        let layout = lb.finish();
        let mut p = layout.initialize(&mut ChaCha8Rng::seed_from_u64(2));
        p[l.b] = 0.3;
        let x = [0.5, -1.0, 2.0];
        let target = [0.0, 0.0];
        let pred = l.forward(&p, &x);
        let r: Vec<f64> = pred.iter().zip(&target).map(|(a, b)| a - b).collect();
        let mut g = vec![0.0; layout.total];
        l.backward(&p, &x, &r, &mut g);
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(g[l.w + o * 3 + i], r[o] * x[i]);
            }
            assert_eq!(g[l.b + o], r[o]);
        }
    }

    #[test]
    fn layernorm_gradient() {
        let mut lb = LayoutBuilder::default();
        let ln = LayerNorm::new(&mut lb, "ln", 5);
        let layout = lb.finish();
        check_layer(
            layout.total,
            15,
            3,
            &|p, x| ln.forward(p, x).0,
            &|p, x, dy, g| {
                let (_, c) = ln.forward(p, x);
                ln.backward(p, &c, dy, g)
            },
            true,
            &layout,
        );
    }

    #[test]
    fn gelu_derivative() {
        for x in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            let fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn attention_gradient() {
        let mut lb = LayoutBuilder::default();
        let at = Attention::new(&mut lb, "a", 4, 2);
        let layout = lb.finish();
        check_layer(
            layout.total,
            12,
            4,
            &|p, x| at.forward(p, x).0,
            &|p, x, dy, g| {
                let (_, c) = at.forward(p, x);
                at.backward(p, &c, dy, g)
            },
            true,
            &layout,
        );
    }

    #[test]
    fn transformer_gradient() {
        let mut lb = LayoutBuilder::default();
        let tf = Transformer::new(&mut lb, "t", 4, 2, 2);
        let layout = lb.finish();
        check_layer(
            layout.total,
            16,
            5,
            &|p, x| tf.forward(p, x).0,
            &|p, x, dy, g| {
                let (_, c) = tf.forward(p, x);
                tf.backward(p, &c, dy, g)
            },
            true,
            &layout,
        );
    }

    #[test]
    fn layout_covers_every_index_once() {
        let mut lb = LayoutBuilder::default();
        Transformer::new(&mut lb, "t", 4, 2, 2);
        Mlp::new(&mut lb, "m", 4, 3, 2);
        let layout = lb.finish();
        let mut seen = vec![0; layout.total];
        for b in &layout.blocks {
            for i in b.offset..b.offset + b.len {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }
}
