//! Minimal layer toolkit on top of candle with deterministic, seeded
//! parameter initialization.

pub mod checkpoint;

use std::collections::BTreeMap;
use std::sync::Mutex;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    /// Uniform in `[-bound, bound]`.
    Uniform(f64),
    Const(f64),
}

/// Named trainable parameters, created in a fixed order from a seeded RNG.
pub struct ParamStore {
    vars: Mutex<BTreeMap<String, Var>>,
    rng: Mutex<ChaCha8Rng>,
    device: Device,
    dtype: DType,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            vars: Mutex::new(BTreeMap::new()),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            device: Device::Cpu,
            dtype,
        }
    }

    pub fn root(&self) -> Scope<'_> {
        Scope {
            store: self,
            prefix: String::new(),
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    fn create(&self, path: String, shape: &[usize], init: Init) -> Result<Tensor> {
        let mut vars = self.vars.lock().expect("param lock");
        if let Some(v) = vars.get(&path) {
            return Ok(v.as_tensor().clone());
        }
        let count: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; count],
            Init::Const(c) => vec![c; count],
            Init::Uniform(bound) => {
                let mut rng = self.rng.lock().expect("rng lock");
                (0..count).map(|_| rng.random_range(-bound..=bound)).collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        vars.insert(path, var);
        Ok(out)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.lock().expect("param lock").values().cloned().collect()
    }

    pub fn named_vars(&self) -> Vec<(String, Var)> {
        self.vars
            .lock()
            .expect("param lock")
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn get(&self, path: &str) -> Option<Var> {
        self.vars.lock().expect("param lock").get(path).cloned()
    }

    pub fn parameter_count(&self) -> usize {
        self.vars
            .lock()
            .expect("param lock")
            .values()
            .map(|v| v.elem_count())
            .sum()
    }
}

#[derive(Clone)]
pub struct Scope<'a> {
    store: &'a ParamStore,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn pp(&self, name: impl AsRef<str>) -> Scope<'a> {
        let prefix = if self.prefix.is_empty() {
            name.as_ref().to_string()
        } else {
            format!("{}.{}", self.prefix, name.as_ref())
        };
        Scope {
            store: self.store,
            prefix,
        }
    }

    pub fn get(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        self.store.create(self.pp(name).prefix, shape, init)
    }

    pub fn path(&self, name: &str) -> String {
        self.pp(name).prefix
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }
}

/// Per-call state: training flag plus the RNG that drives dropout masks.
pub struct ForwardCtx {
    pub train: bool,
    pub dropout: f64,
    rng: ChaCha8Rng,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        Self {
            train: false,
            dropout: 0.0,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn train(dropout: f64, seed: u64) -> Self {
        Self {
            train: true,
            dropout,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Inverted dropout; identity outside training.
    pub fn dropout(&mut self, x: &Tensor) -> Result<Tensor> {
        if !self.train || self.dropout <= 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - self.dropout;
        let scale = 1.0 / keep;
        let mask: Vec<f32> = (0..x.elem_count())
            .map(|_| if self.rng.random::<f64>() < keep { scale as f32 } else { 0.0 })
            .collect();
        let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
        Ok((x * mask)?)
    }
}

pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
    out_dim: usize,
}

impl Linear {
    pub fn new(scope: &Scope<'_>, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Ok(Self {
            weight: scope.get("weight", &[out_dim, in_dim], Init::Uniform(bound))?,
            bias: Some(scope.get("bias", &[out_dim], Init::Uniform(bound))?),
            out_dim,
        })
    }

    pub fn no_bias(scope: &Scope<'_>, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Ok(Self {
            weight: scope.get("weight", &[out_dim, in_dim], Init::Uniform(bound))?,
            bias: None,
            out_dim,
        })
    }

    pub fn zeros(scope: &Scope<'_>, in_dim: usize, out_dim: usize) -> Result<Self> {
        Ok(Self {
            weight: scope.get("weight", &[out_dim, in_dim], Init::Zeros)?,
            bias: Some(scope.get("bias", &[out_dim], Init::Zeros)?),
            out_dim,
        })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.bias.as_ref()
    }

    /// Applies the layer over the last dimension of an arbitrary-rank input.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let in_dim = *dims.last().expect("rank ≥ 1");
        let rows = x.elem_count() / in_dim;
        let flat = x.reshape((rows, in_dim))?;
        let mut y = flat.matmul(&self.weight.t()?)?;
        if let Some(b) = &self.bias {
            y = y.broadcast_add(b)?;
        }
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.out_dim;
        Ok(y.reshape(out_dims)?)
    }
}

/// Stack of linear layers with ReLU between them.
pub struct Mlp {
    layers: Vec<Linear>,
    relu_last: bool,
}

impl Mlp {
    pub fn new(scope: &Scope<'_>, dims: &[usize], relu_last: bool) -> Result<Self> {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&scope.pp(i.to_string()), w[0], w[1]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers, relu_last })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i < last || self.relu_last {
                h = h.relu()?;
            }
        }
        Ok(h)
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }
}

pub struct LayerNorm {
    gain: Tensor,
    shift: Tensor,
}

impl LayerNorm {
    pub fn new(scope: &Scope<'_>, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: scope.get("gain", &[dim], Init::Const(1.0))?,
            shift: scope.get("shift", &[dim], Init::Zeros)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gain)?.broadcast_add(&self.shift)?)
    }
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}

/// Softmax over the last dimension.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

/// One direction of a gated recurrent unit.
pub struct GruCell {
    input: Linear,
    hidden: Linear,
    hidden_dim: usize,
}

impl GruCell {
    pub fn new(scope: &Scope<'_>, in_dim: usize, hidden_dim: usize) -> Result<Self> {
        Ok(Self {
            input: Linear::new(&scope.pp("input"), in_dim, 3 * hidden_dim)?,
            hidden: Linear::new(&scope.pp("hidden"), hidden_dim, 3 * hidden_dim)?,
            hidden_dim,
        })
    }

    pub fn step(&self, x: &Tensor, h: &Tensor) -> Result<Tensor> {
        let gi = self.input.forward(x)?;
        let gh = self.hidden.forward(h)?;
        let chunk = |t: &Tensor, i: usize| t.narrow(D::Minus1, i * self.hidden_dim, self.hidden_dim);
        let r = sigmoid(&(chunk(&gi, 0)? + chunk(&gh, 0)?)?)?;
        let z = sigmoid(&(chunk(&gi, 1)? + chunk(&gh, 1)?)?)?;
        let n = (chunk(&gi, 2)? + (&r * chunk(&gh, 2)?)?)?.tanh()?;
        let one_minus_z = (z.ones_like()? - &z)?;
        Ok(((one_minus_z * n)? + (z * h)?)?)
    }
}

/// Bidirectional GRU over `[B, T, C_in]`, returning `[B, T, 2·hidden]`.
pub struct BiGru {
    forward: GruCell,
    backward: GruCell,
    hidden_dim: usize,
}

impl BiGru {
    pub fn new(scope: &Scope<'_>, in_dim: usize, hidden_dim: usize) -> Result<Self> {
        Ok(Self {
            forward: GruCell::new(&scope.pp("fwd"), in_dim, hidden_dim)?,
            backward: GruCell::new(&scope.pp("bwd"), in_dim, hidden_dim)?,
            hidden_dim,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        let h0 = Tensor::zeros((b, self.hidden_dim), x.dtype(), x.device())?;
        let frame = |i: usize| x.narrow(1, i, 1).and_then(|f| f.squeeze(1));

        let mut fwd = Vec::with_capacity(t);
        let mut h = h0.clone();
        for i in 0..t {
            h = self.forward.step(&frame(i)?, &h)?;
            fwd.push(h.clone());
        }
        let mut bwd = vec![h0.clone(); t];
        let mut h = h0;
        for i in (0..t).rev() {
            h = self.backward.step(&frame(i)?, &h)?;
            bwd[i] = h.clone();
        }
        let steps = fwd
            .into_iter()
            .zip(bwd)
            .map(|(f, b)| Tensor::cat(&[f, b], D::Minus1))
            .collect::<candle_core::Result<Vec<_>>>()?;
        Ok(Tensor::stack(&steps, 1)?)
    }
}

/// Pre-norm multi-head self-attention block with a feedforward sublayer.
pub struct AttentionBlock {
    norm1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    norm2: LayerNorm,
    ff: Mlp,
    heads: usize,
    dim: usize,
}

impl AttentionBlock {
    pub fn new(scope: &Scope<'_>, dim: usize, heads: usize, ff_dim: usize) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(&scope.pp("norm1"), dim)?,
            qkv: Linear::new(&scope.pp("qkv"), dim, 3 * dim)?,
            proj: Linear::new(&scope.pp("proj"), dim, dim)?,
            norm2: LayerNorm::new(&scope.pp("norm2"), dim)?,
            ff: Mlp::new(&scope.pp("ff"), &[dim, ff_dim, dim], false)?,
            heads,
            dim,
        })
    }

    /// `x: [B, S, dim]`; returns the updated tokens and attention weights `[B, heads, S, S]`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, s, _) = x.dims3()?;
        let hd = self.dim / self.heads;
        let qkv = self.qkv.forward(&self.norm1.forward(x)?)?;
        let split = |i: usize| -> candle_core::Result<Tensor> {
            qkv.narrow(D::Minus1, i * self.dim, self.dim)?
                .reshape((b, s, self.heads, hd))?
                .transpose(1, 2)?
                .contiguous()
        };
        let (q, k, v) = (split(0)?, split(1)?, split(2)?);
        let scores = (q.matmul(&k.t()?)? / (hd as f64).sqrt())?;
        let weights = softmax_last(&scores)?;
        let attended = weights
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, s, self.dim))?;
        let x = (x + self.proj.forward(&attended)?)?;
        let x = (&x + self.ff.forward(&self.norm2.forward(&x)?)?)?;
        Ok((x, weights))
    }
}

/// Sum of squared gradient entries over all variables.
pub fn grad_norm(grads: &candle_core::backprop::GradStore, vars: &[Var]) -> Result<f64> {
    let mut total = 0.0f64;
    for v in vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            total += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        }
    }
    Ok(total.sqrt())
}

/// Rescales gradients in place so their global norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut candle_core::backprop::GradStore, vars: &[Var], max_norm: f64) -> Result<f64> {
    let norm = grad_norm(grads, vars)?;
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / (norm + 1e-12);
        for v in vars {
            if let Some(g) = grads.remove(v.as_tensor()) {
                grads.insert(v.as_tensor(), (g * scale)?);
            }
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded() {
        let a = ParamStore::new(5, DType::F32);
        let b = ParamStore::new(5, DType::F32);
        let la = Linear::new(&a.root().pp("l"), 4, 3).unwrap();
        let lb = Linear::new(&b.root().pp("l"), 4, 3).unwrap();
        let va: Vec<f32> = la.weight().flatten_all().unwrap().to_vec1().unwrap();
        let vb: Vec<f32> = lb.weight().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(va, vb);
        assert_eq!(a.parameter_count(), 15);
    }

    #[test]
    fn linear_handles_rank_four() {
        let store = ParamStore::new(1, DType::F32);
        let l = Linear::new(&store.root().pp("l"), 5, 7).unwrap();
        let x = Tensor::ones((2, 3, 4, 5), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(l.forward(&x).unwrap().dims(), &[2, 3, 4, 7]);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let store = ParamStore::new(2, DType::F32);
        let block = AttentionBlock::new(&store.root().pp("a"), 8, 4, 16).unwrap();
        let x = Tensor::randn(0f32, 1.0, (3, 3, 8), &Device::Cpu).unwrap();
        let (y, w) = block.forward(&x).unwrap();
        assert_eq!(y.dims(), &[3, 3, 8]);
        let sums: Vec<f32> = w.sum(D::Minus1).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert!(sums.iter().all(|s| (s - 1.0).abs() < 1e-5));
    }

    #[test]
    fn dropout_is_identity_in_eval() {
        let x = Tensor::ones((4, 4), DType::F32, &Device::Cpu).unwrap();
        let y = ForwardCtx::eval().dropout(&x).unwrap();
        assert_eq!(y.to_vec2::<f32>().unwrap(), x.to_vec2::<f32>().unwrap());
        let mut ctx = ForwardCtx::train(0.5, 3);
        let y: Vec<f32> = ctx.dropout(&x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert!(y.iter().all(|&v| v == 0.0 || v == 2.0));
    }
}
