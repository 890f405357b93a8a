use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layout::{Block, Layout, Linear, Norm};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::math;
use crate::types::NUM_LEVELS;

/// One 64-logit vector per task, in [`crate::Task::ALL`] order.
pub type Logits = [Vec<f64>; 3];

/// Gradient with the same layout as the parameters.
pub type Gradients = Vec<f64>;

const LN_EPS: f64 = 1e-5;
const GELU_K: f64 = 0.7978845608028654; // sqrt(2 / pi)
const GELU_C: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + math::tanh(GELU_K * (x + GELU_C * x * x * x)))
}

fn gelu_grad(x: f64) -> f64 {
    let t = math::tanh(GELU_K * (x + GELU_C * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

/// `out = a (n x k) * b (k x m)`.
fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    out[..n * m].iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a^T (k x n) * b (n x m)` for `a` stored `n x k`.
fn matmul_at_b_acc(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    for i in 0..n {
        let brow = &b[i * m..(i + 1) * m];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out[p * m..(p + 1) * m].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out = a (n x m) * b^T` for `b` stored `k x m`.
fn matmul_a_bt(a: &[f64], b: &[f64], n: usize, m: usize, k: usize, out: &mut [f64]) {
    for i in 0..n {
        let arow = &a[i * m..(i + 1) * m];
        for j in 0..k {
            out[i * k + j] = arow.iter().zip(&b[j * m..(j + 1) * m]).map(|(x, y)| x * y).sum();
        }
    }
}

fn check(layer: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric { layer: layer.into() })
    }
}

struct Params<'a>(&'a [f64]);

impl Params<'_> {
    fn linear(&self, x: &[f64], n: usize, l: &Linear) -> Vec<f64> {
        let mut out = alloc::vec![0.0; n * l.fan_out];
        matmul(x, &self.0[l.w.clone()], n, l.fan_in, l.fan_out, &mut out);
        let b = &self.0[l.b.clone()];
        for row in out.chunks_mut(l.fan_out) {
            row.iter_mut().zip(b).for_each(|(o, b)| *o += b);
        }
        out
    }

    /// Returns `(output, xhat, rstd)`.
    fn norm(&self, x: &[f64], n: usize, c: usize, l: &Norm) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (g, b) = (&self.0[l.gamma.clone()], &self.0[l.beta.clone()]);
        let mut y = alloc::vec![0.0; n * c];
        let mut xhat = alloc::vec![0.0; n * c];
        let mut rstd = alloc::vec![0.0; n];
        for i in 0..n {
            let row = &x[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let r = 1.0 / math::sqrt(var + LN_EPS);
            rstd[i] = r;
            for j in 0..c {
                let h = (row[j] - mean) * r;
                xhat[i * c + j] = h;
                y[i * c + j] = g[j] * h + b[j];
            }
        }
        (y, xhat, rstd)
    }
}

struct Grads<'a>(&'a mut [f64]);

impl Grads<'_> {
    /// Accumulates weight and bias gradients; returns the input gradient.
    fn linear(&mut self, p: &[f64], x: &[f64], dy: &[f64], n: usize, l: &Linear) -> Vec<f64> {
        matmul_at_b_acc(x, dy, n, l.fan_in, l.fan_out, &mut self.0[l.w.clone()]);
        let db = &mut self.0[l.b.clone()];
        for row in dy.chunks(l.fan_out) {
            db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
        }
        let mut dx = alloc::vec![0.0; n * l.fan_in];
        matmul_a_bt(dy, &p[l.w.clone()], n, l.fan_out, l.fan_in, &mut dx);
        dx
    }

    #[allow(clippy::too_many_arguments)]
    fn norm(&mut self, p: &[f64], dy: &[f64], xhat: &[f64], rstd: &[f64], n: usize, c: usize, l: &Norm) -> Vec<f64> {
        let g = &p[l.gamma.clone()];
        {
            let dg = &mut self.0[l.gamma.clone()];
            for i in 0..n {
                for j in 0..c {
                    dg[j] += dy[i * c + j] * xhat[i * c + j];
                }
            }
        }
        {
            let db = &mut self.0[l.beta.clone()];
            for i in 0..n {
                for j in 0..c {
                    db[j] += dy[i * c + j];
                }
            }
        }
        let mut dx = alloc::vec![0.0; n * c];
        for i in 0..n {
            let mut m1 = 0.0;
            let mut m2 = 0.0;
            for j in 0..c {
                let dh = dy[i * c + j] * g[j];
                m1 += dh;
                m2 += dh * xhat[i * c + j];
            }
            m1 /= c as f64;
            m2 /= c as f64;
            for j in 0..c {
                let dh = dy[i * c + j] * g[j];
                dx[i * c + j] = rstd[i] * (dh - m1 - xhat[i * c + j] * m2);
            }
        }
        dx
    }
}

struct BlockCache {
    xhat1: Vec<f64>,
    rstd1: Vec<f64>,
    a1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    p: Vec<f64>,
    o: Vec<f64>,
    xhat2: Vec<f64>,
    rstd2: Vec<f64>,
    a2: Vec<f64>,
    hpre: Vec<f64>,
    h: Vec<f64>,
}

/// Activations kept for the backward pass.
pub(crate) struct Cache {
    patches: Vec<f64>,
    trunk: Vec<BlockCache>,
    branches: [Vec<BlockCache>; 3],
    xhat: [Vec<f64>; 3],
    rstd: [Vec<f64>; 3],
    pooled: [Vec<f64>; 3],
    attrs: [f64; 3],
    attr_u: Vec<f64>,
    attr_g: Vec<f64>,
    attr_a: Vec<f64>,
}

/// Parameters together with their configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl Model {
    /// Seeded random initialization.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = alloc::vec![0.0; layout.len()];
        for g in layout.groups() {
            for v in &mut params[g.range.clone()] {
                *v = if g.init_scale > 0.0 {
                    rng.random_range(-g.init_scale..g.init_scale)
                } else {
                    g.fill
                };
            }
        }
        let mut model = Model { config, layout, params };
        if config.shared_init {
            model.tie_branches();
        }
        Ok(model)
    }

    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.len() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                layout.len(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("parameters must be finite"));
        }
        Ok(Model { config, layout, params })
    }

    /// Copies the detection branch, norm and head into the other tasks.
    pub fn tie_branches(&mut self) {
        let src = self.layout.task_ranges(crate::Task::Od);
        for t in [crate::Task::Is, crate::Task::Kpd] {
            for (s, d) in src.iter().zip(self.layout.task_ranges(t)) {
                self.params.copy_within(s.clone(), d.start);
            }
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<f64> {
        self.params
    }

    fn check_input(&self, input: &[f64], attrs: &[f64; 3]) -> Result<()> {
        if input.len() != self.config.input_len() {
            return Err(Error::invalid(format!(
                "input has {} values, expected {}",
                input.len(),
                self.config.input_len()
            )));
        }
        if input.iter().chain(attrs).any(|v| !v.is_finite()) {
            return Err(Error::invalid("input must be finite"));
        }
        Ok(())
    }

    fn patchify(&self, input: &[f64]) -> Vec<f64> {
        let (s, ps) = (self.config.input_size, self.config.patch_size);
        let g = s / ps;
        let mut out = Vec::with_capacity(self.config.tokens() * self.config.patch_dim());
        for gy in 0..g {
            for gx in 0..g {
                for py in 0..ps {
                    let row = (gy * ps + py) * s + gx * ps;
                    out.extend_from_slice(&input[row * 3..(row + ps) * 3]);
                }
            }
        }
        out
    }

    fn block_forward(&self, x: Vec<f64>, b: &Block, name: &str) -> Result<(Vec<f64>, BlockCache)> {
        let p = Params(&self.params);
        let (n, c) = (self.config.tokens(), self.config.embed_dim);
        let (a1, xhat1, rstd1) = p.norm(&x, n, c, &b.ln1);
        let q = p.linear(&a1, n, &b.q);
        let k = p.linear(&a1, n, &b.k);
        let v = p.linear(&a1, n, &b.v);
        let scale = 1.0 / math::sqrt(c as f64);
        let mut att = alloc::vec![0.0; n * n];
        matmul_a_bt(&q, &k, n, c, n, &mut att);
        for row in att.chunks_mut(n) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max) * scale;
            let mut s = 0.0;
            for z in row.iter_mut() {
                *z = math::exp(*z * scale - m);
                s += *z;
            }
            row.iter_mut().for_each(|z| *z /= s);
        }
        let mut o = alloc::vec![0.0; n * c];
        matmul(&att, &v, n, n, c, &mut o);
        let proj = p.linear(&o, n, &b.o);
        let mid: Vec<f64> = x.iter().zip(&proj).map(|(a, b)| a + b).collect();
        check(&format!("{name}.attn"), &mid)?;
        let (a2, xhat2, rstd2) = p.norm(&mid, n, c, &b.ln2);
        let hpre = p.linear(&a2, n, &b.fc1);
        let h: Vec<f64> = hpre.iter().map(|&v| gelu(v)).collect();
        let f = p.linear(&h, n, &b.fc2);
        let out: Vec<f64> = mid.iter().zip(&f).map(|(a, b)| a + b).collect();
        check(&format!("{name}.ffn"), &out)?;
        let cache = BlockCache {
            xhat1,
            rstd1,
            a1,
            q,
            k,
            v,
            p: att,
            o,
            xhat2,
            rstd2,
            a2,
            hpre,
            h,
        };
        Ok((out, cache))
    }

    fn block_backward(&self, dout: Vec<f64>, b: &Block, c: &BlockCache, grad: &mut [f64]) -> Vec<f64> {
        let p = &self.params[..];
        let mut g = Grads(grad);
        let (n, d) = (self.config.tokens(), self.config.embed_dim);
        let dh = g.linear(p, &c.h, &dout, n, &b.fc2);
        let dhpre: Vec<f64> = dh.iter().zip(&c.hpre).map(|(g, &x)| g * gelu_grad(x)).collect();
        let da2 = g.linear(p, &c.a2, &dhpre, n, &b.fc1);
        let dn2 = g.norm(p, &da2, &c.xhat2, &c.rstd2, n, d, &b.ln2);
        let dmid: Vec<f64> = dout.iter().zip(&dn2).map(|(a, b)| a + b).collect();
        let d_o = g.linear(p, &c.o, &dmid, n, &b.o);
        // o = P v
        let mut dp = alloc::vec![0.0; n * n];
        matmul_a_bt(&d_o, &c.v, n, d, n, &mut dp);
        let mut dv = alloc::vec![0.0; n * d];
        matmul_at_b_acc(&c.p, &d_o, n, n, d, &mut dv);
        let scale = 1.0 / math::sqrt(d as f64);
        let mut ds = alloc::vec![0.0; n * n];
        for i in 0..n {
            let pr = &c.p[i * n..(i + 1) * n];
            let dpr = &dp[i * n..(i + 1) * n];
            let dot: f64 = pr.iter().zip(dpr).map(|(a, b)| a * b).sum();
            for j in 0..n {
                ds[i * n + j] = pr[j] * (dpr[j] - dot) * scale;
            }
        }
        let mut dq = alloc::vec![0.0; n * d];
        matmul(&ds, &c.k, n, n, d, &mut dq);
        let mut dk = alloc::vec![0.0; n * d];
        matmul_at_b_acc(&ds, &c.q, n, n, d, &mut dk);
        let mut da1 = g.linear(p, &c.a1, &dq, n, &b.q);
        let from_k = g.linear(p, &c.a1, &dk, n, &b.k);
        let from_v = g.linear(p, &c.a1, &dv, n, &b.v);
        for ((x, y), z) in da1.iter_mut().zip(&from_k).zip(&from_v) {
            *x += y + z;
        }
        let dn1 = g.norm(p, &da1, &c.xhat1, &c.rstd1, n, d, &b.ln1);
        dmid.iter().zip(&dn1).map(|(a, b)| a + b).collect()
    }

    pub(crate) fn forward_cached(&self, input: &[f64], attrs: [f64; 3]) -> Result<(Logits, Cache)> {
        self.check_input(input, &attrs)?;
        let l = &self.layout;
        let p = Params(&self.params);
        let (n, c) = (self.config.tokens(), self.config.embed_dim);
        let patches = self.patchify(input);
        let mut x = p.linear(&patches, n, &l.embed);
        x.iter_mut().zip(&self.params[l.pos.clone()]).for_each(|(a, b)| *a += b);
        check("patch_embed", &x)?;
        let mut trunk = Vec::with_capacity(l.trunk.len());
        for (i, b) in l.trunk.iter().enumerate() {
            let (y, bc) = self.block_forward(x, b, &format!("trunk.{i}"))?;
            trunk.push(bc);
            x = y;
        }

        let attr_u = p.linear(&attrs, 1, &l.attr1);
        let attr_g: Vec<f64> = attr_u.iter().map(|&v| gelu(v)).collect();
        let attr_a = p.linear(&attr_g, 1, &l.attr2);
        check("attr", &attr_a)?;

        let mut branches: [Vec<BlockCache>; 3] = Default::default();
        let mut xhat: [Vec<f64>; 3] = Default::default();
        let mut rstd: [Vec<f64>; 3] = Default::default();
        let mut pooled: [Vec<f64>; 3] = Default::default();
        let mut logits: Logits = Default::default();
        for t in 0..3 {
            let name = crate::Task::ALL[t].as_str();
            let mut y = x.clone();
            for (i, b) in l.branches[t].iter().enumerate() {
                let (z, bc) = self.block_forward(y, b, &format!("branch.{name}.{i}"))?;
                branches[t].push(bc);
                y = z;
            }
            let (yn, xh, rs) = p.norm(&y, n, c, &l.norms[t]);
            let mut pool = alloc::vec![0.0; c];
            for row in yn.chunks(c) {
                pool.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
            pool.iter_mut().for_each(|v| *v /= n as f64);
            let mut z = pool.clone();
            z.extend_from_slice(&attr_a);
            let out = p.linear(&z, 1, &l.heads[t]);
            check(&format!("head.{name}"), &out)?;
            xhat[t] = xh;
            rstd[t] = rs;
            pooled[t] = pool;
            logits[t] = out;
        }
        let cache = Cache {
            patches,
            trunk,
            branches,
            xhat,
            rstd,
            pooled,
            attrs,
            attr_u,
            attr_g,
            attr_a,
        };
        Ok((logits, cache))
    }

    pub fn forward(&self, input: &[f64], attrs: [f64; 3]) -> Result<Logits> {
        Ok(self.forward_cached(input, attrs)?.0)
    }

    /// Accumulates into `grad` the gradient for logit gradients `dlogits`
    /// (`None` for tasks that carry no loss).
    pub(crate) fn backward(&self, cache: &Cache, dlogits: &[Option<Vec<f64>>; 3], grad: &mut [f64]) {
        let l = &self.layout;
        let p = &self.params[..];
        let (n, c) = (self.config.tokens(), self.config.embed_dim);
        let mut dtrunk = alloc::vec![0.0; n * c];
        let mut dattr = alloc::vec![0.0; self.config.attr_dim];
        for (t, dl) in dlogits.iter().enumerate() {
            let Some(dl) = dl else { continue };
            debug_assert_eq!(dl.len(), NUM_LEVELS);
            let mut z = cache.pooled[t].clone();
            z.extend_from_slice(&cache.attr_a);
            let dz = Grads(grad).linear(p, &z, dl, 1, &l.heads[t]);
            dattr.iter_mut().zip(&dz[c..]).for_each(|(a, b)| *a += b);
            let mut dyn_ = Vec::with_capacity(n * c);
            for _ in 0..n {
                dyn_.extend(dz[..c].iter().map(|v| v / n as f64));
            }
            let mut dy = Grads(grad).norm(p, &dyn_, &cache.xhat[t], &cache.rstd[t], n, c, &l.norms[t]);
            for (b, bc) in l.branches[t].iter().zip(&cache.branches[t]).rev() {
                dy = self.block_backward(dy, b, bc, grad);
            }
            dtrunk.iter_mut().zip(&dy).for_each(|(a, b)| *a += b);
        }
        let dg = Grads(grad).linear(p, &cache.attr_g, &dattr, 1, &l.attr2);
        let du: Vec<f64> = dg.iter().zip(&cache.attr_u).map(|(g, &u)| g * gelu_grad(u)).collect();
        Grads(grad).linear(p, &cache.attrs, &du, 1, &l.attr1);

        let mut dx = dtrunk;
        for (b, bc) in l.trunk.iter().zip(&cache.trunk).rev() {
            dx = self.block_backward(dx, b, bc, grad);
        }
        grad[l.pos.clone()].iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
        Grads(grad).linear(p, &cache.patches, &dx, n, &l.embed);
    }

    /// Loss against GDSL targets and its gradient, added into `grad`.
    pub fn loss_and_grad(
        &self,
        input: &[f64],
        attrs: [f64; 3],
        targets: &[Option<[f64; NUM_LEVELS]>; 3],
        grad: &mut [f64],
    ) -> Result<f64> {
        let (logits, cache) = self.forward_cached(input, attrs)?;
        let loss = super::loss(&logits, targets);
        let dl: [Option<Vec<f64>>; 3] = core::array::from_fn(|t| {
            targets[t].as_ref().map(|q| {
                let s = super::softmax(&logits[t]);
                s.iter().zip(q).map(|(a, b)| a - b).collect()
            })
        });
        self.backward(&cache, &dl, grad);
        Ok(loss)
    }
}
