//! Fully connected ReLU network with a hand-written backward pass.
//!
//! The model maps a batch `x: [B × d]` to logits `[B × C]`. Softmax is never
//! applied inside the model; losses and [`Mlp::predict_proba`] do that.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{ensure, Error, Result};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::tensor::{argmax, matmul_acc, softmax_rows, Matrix};

/// Hidden width used throughout the experiments.
pub const DEFAULT_HIDDEN: usize = 128;

/// One affine layer: `z = a · Wᵀ + b`, with `W` stored `[out × in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    fn zeros_like(&self) -> Self {
        Dense {
            weight: Matrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: vec![T::zero(); self.bias.len()],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// ReLU network: ReLU after every layer except the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    layers: Vec<Dense<T>>,
}

/// Gradients with the same layout as the model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Dense<T>>,
}

/// Intermediates of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    /// Input to each layer: `inputs[0] = x`, `inputs[l] = relu(pre[l-1])`.
    pub inputs: Vec<Matrix<T>>,
    /// Pre-activation of each layer; the last one is the logits.
    pub pre: Vec<Matrix<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn logits(&self) -> &Matrix<T> {
        self.pre.last().expect("at least one layer")
    }

    pub fn batch_size(&self) -> usize {
        self.inputs[0].rows()
    }
}

impl<T: Scalar> Mlp<T> {
    /// Two hidden layers of width `hidden_dim` plus the output layer.
    pub fn init(rng: &mut RngState, input_dim: usize, hidden_dim: usize, num_classes: usize) -> Result<Self> {
        Self::init_with_hidden(rng, input_dim, &[hidden_dim, hidden_dim], num_classes)
    }

    /// He-uniform weights (`U(-√(6/fan_in), √(6/fan_in))`, drawn layer by
    /// layer in row-major order) and zero biases.
    pub fn init_with_hidden(
        rng: &mut RngState,
        input_dim: usize,
        hidden: &[usize],
        num_classes: usize,
    ) -> Result<Self> {
        ensure!(input_dim >= 1, "input_dim must be >= 1");
        ensure!(num_classes >= 1, "num_classes must be >= 1");
        ensure!(hidden.iter().all(|&h| h >= 1), "hidden widths must be >= 1");
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(num_classes);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| T::of((2.0 * rng.uniform() - 1.0) * bound))
                    .collect();
                Dense {
                    weight: Matrix::new(fan_out, fan_in, data).expect("sized"),
                    bias: vec![T::zero(); fan_out],
                }
            })
            .collect();
        Ok(Self { layers })
    }

    /// Builds a model from explicit layers, checking that shapes chain.
    pub fn from_layers(layers: Vec<Dense<T>>) -> Result<Self> {
        ensure!(!layers.is_empty(), "model needs at least one layer");
        for (i, l) in layers.iter().enumerate() {
            ensure!(
                l.bias.len() == l.out_dim(),
                "layer {i}: bias length {} != out dim {}",
                l.bias.len(),
                l.out_dim()
            );
            if i > 0 {
                ensure!(
                    l.in_dim() == layers[i - 1].out_dim(),
                    "layer {i} input {} does not match previous output {}",
                    l.in_dim(),
                    layers[i - 1].out_dim()
                );
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().expect("nonempty").out_dim()
    }

    /// Layer widths, input first: e.g. `[30, 128, 128, 3]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(Dense::out_dim));
        d
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.data().len() + l.bias.len()).sum()
    }

    /// All parameters flattened: per layer, weights row-major then bias.
    pub fn flat_params(&self) -> Vec<T> {
        flatten(&self.layers)
    }

    pub fn param(&self, i: usize) -> T {
        *locate(&self.layers, i)
    }

    pub fn set_param(&mut self, i: usize, v: T) {
        *locate_mut(&mut self.layers, i) = v;
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<(Matrix<T>, ForwardCache<T>)> {
        ensure!(
            x.cols() == self.input_dim(),
            "input has {} columns, model expects {}",
            x.cols(),
            self.input_dim()
        );
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = affine(layer, &a);
            let next = (l < last).then(|| relu(&z));
            inputs.push(a);
            pre.push(z);
            match next {
                Some(n) => a = n,
                None => break,
            }
        }
        let logits = pre[last].clone();
        Ok((logits, ForwardCache { inputs, pre }))
    }

    /// Logits only, without keeping intermediates.
    pub fn logits(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        ensure!(
            x.cols() == self.input_dim(),
            "input has {} columns, model expects {}",
            x.cols(),
            self.input_dim()
        );
        let last = self.layers.len() - 1;
        let mut a = affine(&self.layers[0], x);
        for layer in &self.layers[1..=last] {
            a = affine(layer, &relu(&a));
        }
        Ok(a)
    }

    /// Reverse-mode gradients of the forward map contracted with `dlogits`.
    /// The ReLU derivative at exactly zero is taken as zero.
    pub fn backward(&self, cache: &ForwardCache<T>, dlogits: &Matrix<T>) -> Result<Gradients<T>> {
        ensure!(
            dlogits.shape() == cache.logits().shape(),
            "dlogits shape {:?} != logits shape {:?}",
            dlogits.shape(),
            cache.logits().shape()
        );
        ensure!(cache.pre.len() == self.layers.len(), "cache does not belong to this model");
        let mut grads: Vec<Dense<T>> = self.layers.iter().map(Dense::zeros_like).collect();
        let mut dz = dlogits.clone();
        for l in (0..self.layers.len()).rev() {
            let a = &cache.inputs[l];
            let g = &mut grads[l];
            // dW = dZᵀ · A, db = column sums of dZ.
            matmul_acc(&dz.transpose(), a, &mut g.weight, true);
            for r in 0..dz.rows() {
                T::axpy(T::one(), dz.row(r), &mut g.bias);
            }
            if l > 0 {
                let mut da = Matrix::zeros(dz.rows(), self.layers[l].in_dim());
                matmul_acc(&dz, &self.layers[l].weight, &mut da, true);
                let z_prev = &cache.pre[l - 1];
                for (d, &z) in da.data_mut().iter_mut().zip(z_prev.data()) {
                    if !(z > T::zero()) {
                        *d = T::zero();
                    }
                }
                dz = da;
            }
        }
        Ok(Gradients { layers: grads })
    }

    /// `θ ← θ − lr · g`.
    pub fn sgd_step(&mut self, grads: &Gradients<T>, lr: T) {
        for (p, g) in self.layers.iter_mut().zip(&grads.layers) {
            T::axpy(-lr, g.weight.data(), p.weight.data_mut());
            T::axpy(-lr, &g.bias, &mut p.bias);
        }
    }

    /// Row-wise softmax of the logits.
    pub fn predict_proba(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        Ok(softmax_rows(&self.logits(x)?))
    }

    /// Row-wise argmax of the logits, lowest index on ties.
    pub fn predict_label(&self, x: &Matrix<T>) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok(logits.iter_rows().map(argmax).collect())
    }
}

fn affine<T: Scalar>(layer: &Dense<T>, a: &Matrix<T>) -> Matrix<T> {
    let mut z = Matrix::zeros(a.rows(), layer.out_dim());
    for r in 0..a.rows() {
        z.row_mut(r).copy_from_slice(&layer.bias);
    }
    matmul_acc(a, &layer.weight.transpose(), &mut z, true);
    z
}

fn relu<T: Scalar>(z: &Matrix<T>) -> Matrix<T> {
    z.map(|v| if v > T::zero() { v } else { T::zero() })
}

fn flatten<T: Scalar>(layers: &[Dense<T>]) -> Vec<T> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(l.weight.data());
        out.extend_from_slice(&l.bias);
    }
    out
}

fn locate<T: Scalar>(layers: &[Dense<T>], mut i: usize) -> &T {
    for l in layers {
        let nw = l.weight.data().len();
        if i < nw {
            return &l.weight.data()[i];
        }
        i -= nw;
        if i < l.bias.len() {
            return &l.bias[i];
        }
        i -= l.bias.len();
    }
    panic!("parameter index out of range");
}

fn locate_mut<T: Scalar>(layers: &mut [Dense<T>], mut i: usize) -> &mut T {
    for l in layers {
        let nw = l.weight.data().len();
        if i < nw {
            return &mut l.weight.data_mut()[i];
        }
        i -= nw;
        if i < l.bias.len() {
            return &mut l.bias[i];
        }
        i -= l.bias.len();
    }
    panic!("parameter index out of range");
}

impl<T: Scalar> Gradients<T> {
    pub fn flat(&self) -> Vec<T> {
        flatten(&self.layers)
    }

    pub fn get(&self, i: usize) -> T {
        *locate(&self.layers, i)
    }

    pub fn norm(&self) -> T {
        self.flat().iter().fold(T::zero(), |s, &g| s + g * g).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.flat().iter().all(|g| g.is_finite())
    }
}

/// Most coordinates checked by [`grad_check`]; larger models are subsampled.
pub const GRAD_CHECK_MAX_COORDS: usize = 1000;
pub const GRAD_CHECK_FLOOR: f64 = 1e-5;

/// Compares analytic gradients against central differences.
///
/// `loss` maps logits to `(loss, dloss/dlogits)`. Every coordinate is checked
/// when the model has at most [`GRAD_CHECK_MAX_COORDS`] parameters; otherwise
/// an evenly strided subset of that many coordinates. Returns the largest
/// `|g − g_fd| / max(GRAD_CHECK_FLOOR, |g| + |g_fd|)`.
///
/// Central differences of an O(1) loss resolve a derivative only to about
/// 1e-10, so coordinates with smaller gradients are compared against the
/// floor rather than their own magnitude.
pub fn grad_check<T, F>(model: &Mlp<T>, loss: F, x: &Matrix<T>, epsilon: T) -> Result<T>
where
    T: Scalar,
    F: Fn(&Matrix<T>) -> (T, Matrix<T>),
{
    ensure!(
        epsilon >= T::of(1e-7) && epsilon <= T::of(1e-3),
        "epsilon {epsilon} outside [1e-7, 1e-3]"
    );
    let (logits, cache) = model.forward(x)?;
    let (_, dlogits) = loss(&logits);
    let grads = model.backward(&cache, &dlogits)?;

    let n = model.param_count();
    let coords: Vec<usize> = if n <= GRAD_CHECK_MAX_COORDS {
        (0..n).collect()
    } else {
        (0..GRAD_CHECK_MAX_COORDS).map(|k| k * n / GRAD_CHECK_MAX_COORDS).collect()
    };

    let mut probe = model.clone();
    let eval = |m: &Mlp<T>| -> Result<T> { Ok(loss(&m.logits(x)?).0) };
    let two = T::of(2.0);
    let mut worst = T::zero();
    for i in coords {
        let orig = probe.param(i);
        probe.set_param(i, orig + epsilon);
        let up = eval(&probe)?;
        probe.set_param(i, orig - epsilon);
        let down = eval(&probe)?;
        probe.set_param(i, orig);
        let fd = (up - down) / (two * epsilon);
        let ga = grads.get(i);
        let rel = (ga - fd).abs() / (ga.abs() + fd.abs()).max(T::of(GRAD_CHECK_FLOOR));
        worst = worst.max(rel);
    }
    Ok(worst)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"KDMLP\0v1";

impl<T: Scalar> Mlp<T> {
    /// Binary checkpoint: magic `KDMLP\0v1`, `u32` layer count, then per
    /// layer `u64` in/out dims, then per layer the weights (row-major) and
    /// bias as little-endian `f64`.
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            w.write_all(&(l.in_dim() as u64).to_le_bytes())?;
            w.write_all(&(l.out_dim() as u64).to_le_bytes())?;
        }
        for l in &self.layers {
            for v in l.weight.data().iter().chain(&l.bias) {
                w.write_all(&v.to_f64_lossy().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let bad = |e: std::io::Error| Error::Checkpoint(e.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(bad)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(bad)?;
        let count = u32::from_le_bytes(b4) as usize;
        if count == 0 || count > 64 {
            return Err(Error::Checkpoint(format!("implausible layer count {count}")));
        }
        let mut b8 = [0u8; 8];
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut b8).map_err(bad)?;
            let fan_in = u64::from_le_bytes(b8) as usize;
            r.read_exact(&mut b8).map_err(bad)?;
            let fan_out = u64::from_le_bytes(b8) as usize;
            if fan_in == 0 || fan_out == 0 || fan_in.saturating_mul(fan_out) > 1 << 28 {
                return Err(Error::Checkpoint(format!("implausible layer shape {fan_out}x{fan_in}")));
            }
            shapes.push((fan_in, fan_out));
        }
        let mut read_vals = |n: usize| -> Result<Vec<T>> {
            (0..n)
                .map(|_| {
                    r.read_exact(&mut b8).map_err(bad)?;
                    Ok(T::of(f64::from_le_bytes(b8)))
                })
                .collect()
        };
        let mut layers = Vec::with_capacity(count);
        for (fan_in, fan_out) in shapes {
            let weight = Matrix::new(fan_out, fan_in, read_vals(fan_in * fan_out)?)?;
            let bias = read_vals(fan_out)?;
            layers.push(Dense { weight, bias });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(bad)? != 0 {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Mlp::from_layers(layers).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut std::io::BufReader::new(f))
    }
}
