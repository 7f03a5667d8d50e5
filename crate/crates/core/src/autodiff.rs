//! Tape-based reverse-mode differentiation over the handful of operations the
//! encoder/decoder stacks need.
//!
//! Every operation appends a node holding its output value. [`Tape::backward`]
//! walks the nodes in reverse, computing vector-Jacobian products, and returns
//! a gradient for every model parameter (zero for parameters that did not take
//! part in the forward pass) plus one for every [`Tape::leaf`].

use crate::error::{shape_err, Error, Result};
use crate::kernels::{self, ConvGeometry, Padding};
use crate::params::{LayerKind, ModelParameters};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Reference to a parameter tensor inside [`ModelParameters`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamSlot {
    Kernel(usize),
    Bias(usize),
}

impl ParamSlot {
    fn layer(self) -> usize {
        match self {
            ParamSlot::Kernel(i) | ParamSlot::Bias(i) => i,
        }
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Leaf,
    Param(ParamSlot),
    Conv1d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Relu(Var),
    Reshape(Var),
    Concat(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Exp(Var),
    ResizeTime(Var),
    Sum(Var),
    Mse(Var, Var),
    GaussianKld { mu: Var, logvar: Var },
}

#[derive(Debug)]
enum Value {
    Owned(Tensor),
    Param(ParamSlot),
}

#[derive(Debug)]
struct Node {
    value: Value,
    op: Op,
}

/// Ordered record of executed operations.
#[derive(Debug)]
pub struct Tape<'p> {
    params: Option<&'p ModelParameters>,
    nodes: Vec<Node>,
    consumed: bool,
}

/// Output of [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    params: Option<ModelParameters>,
    leaves: Vec<(Var, Tensor)>,
}

impl Gradients {
    /// Parameter gradients laid out like the parameters themselves.
    pub fn params(&self) -> Option<&ModelParameters> {
        self.params.as_ref()
    }

    pub fn into_params(self) -> Option<ModelParameters> {
        self.params
    }

    /// Gradient of a leaf created with [`Tape::leaf`].
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.iter().find(|(l, _)| *l == v).map(|(_, t)| t)
    }
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self {
            params: None,
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn with_params(params: &'p ModelParameters) -> Self {
        Self {
            params: Some(params),
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(slot) => {
                let layer = self
                    .params
                    .expect("param node without parameters")
                    .layer(slot.layer());
                match slot {
                    ParamSlot::Kernel(_) => &layer.kernel,
                    ParamSlot::Bias(_) => &layer.bias,
                }
            }
        }
    }

    fn push(&mut self, value: Tensor, op: Op, what: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(what.to_string()));
        }
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Constant, "constant")
    }

    /// A value whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, "leaf")
    }

    pub fn param(&mut self, slot: ParamSlot) -> Result<Var> {
        let params = self
            .params
            .ok_or_else(|| Error::Shape("tape has no parameters attached".into()))?;
        if slot.layer() >= params.layers().len() {
            return shape_err(format!("no layer {}", slot.layer()));
        }
        self.nodes.push(Node {
            value: Value::Param(slot),
            op: Op::Param(slot),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Kernel and bias handles for one layer, checking its kind.
    pub fn layer(&mut self, index: usize, kind: LayerKind) -> Result<(Var, Var)> {
        let params = self
            .params
            .ok_or_else(|| Error::Shape("tape has no parameters attached".into()))?;
        let layer = params
            .layers()
            .get(index)
            .ok_or_else(|| Error::Shape(format!("no layer {index}")))?;
        if layer.kind != kind {
            return shape_err(format!("layer {} is {:?}, not {kind:?}", layer.name, layer.kind));
        }
        Ok((
            self.param(ParamSlot::Kernel(index))?,
            self.param(ParamSlot::Bias(index))?,
        ))
    }

    /// `[batch][time][in] -> [batch][time'][out]` with a `[out][in][width]` kernel.
    pub fn conv1d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, padding: Padding) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(kernel), self.value(bias));
        if stride == 0 {
            return shape_err("conv1d stride must be positive");
        }
        if x.rank() != 3 || w.rank() != 3 {
            return shape_err(format!("conv1d input {:?}, kernel {:?}", x.dims(), w.dims()));
        }
        let (batch, time_in, c_in) = (x.dims()[0], x.dims()[1], x.dims()[2]);
        let (c_out, k_in, width) = (w.dims()[0], w.dims()[1], w.dims()[2]);
        if k_in != c_in {
            return shape_err(format!("conv1d channel mismatch: input {c_in}, kernel {k_in}"));
        }
        if b.dims() != [c_out] {
            return shape_err(format!("conv1d bias {:?} for {c_out} filters", b.dims()));
        }
        let geom = ConvGeometry {
            batch,
            time_in,
            channels_in: c_in,
            channels_out: c_out,
            width,
            stride,
            padding,
        };
        let t_out = kernels::conv_out_len(time_in, width, stride, padding)
            .ok_or_else(|| Error::Shape(format!("conv1d: {time_in} steps too short for width {width}")))?;
        let out = kernels::conv1d_forward(x.data(), w.data(), b.data(), &geom);
        let out = Tensor::new(vec![batch, t_out, c_out], out)?;
        self.push(out, Op::Conv1d { input, kernel, bias, geom }, "conv1d")
    }

    /// `[batch][in] -> [batch][out]`, computing `x W^T + b`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        if x.rank() != 2 || w.rank() != 2 {
            return shape_err(format!("dense input {:?}, weight {:?}", x.dims(), w.dims()));
        }
        let (batch, n_in) = (x.dims()[0], x.dims()[1]);
        if w.dims()[1] != n_in || b.dims() != [w.dims()[0]] {
            return shape_err(format!(
                "dense: input {:?}, weight {:?}, bias {:?}",
                x.dims(),
                w.dims(),
                b.dims()
            ));
        }
        let y = kernels::dense_forward(x.data(), w.data(), b.data(), batch, n_in);
        let y = Tensor::new(vec![batch, w.dims()[0]], y)?;
        self.push(y, Op::Dense { input, weight, bias }, "dense")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).map(|v| v.max(0.0));
        self.push(y, Op::Relu(x), "relu")
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(dims)?;
        self.push(y, Op::Reshape(x), "reshape")
    }

    /// Concatenates two `[batch][n]` tensors along the feature axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.dims()[0] != tb.dims()[0] {
            return shape_err(format!("concat {:?} with {:?}", ta.dims(), tb.dims()));
        }
        let (batch, na, nb) = (ta.dims()[0], ta.dims()[1], tb.dims()[1]);
        let mut data = Vec::with_capacity(batch * (na + nb));
        for r in 0..batch {
            data.extend_from_slice(&ta.data()[r * na..(r + 1) * na]);
            data.extend_from_slice(&tb.data()[r * nb..(r + 1) * nb]);
        }
        let y = Tensor::new(vec![batch, na + nb], data)?;
        self.push(y, Op::Concat(a, b), "concat")
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f32, f32) -> f32, op: Op, what: &str) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_dims(tb) {
            return shape_err(format!("{what}: {:?} vs {:?}", ta.dims(), tb.dims()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let y = Tensor::new(ta.dims().to_vec(), data)?;
        self.push(y, op, what)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Result<Var> {
        let y = self.value(x).map(|v| v * c);
        self.push(y, Op::Scale(x, c), "scale")
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).map(f32::exp);
        self.push(y, Op::Exp(x), "exp")
    }

    /// Nearest-neighbour resampling of axis 1 of a rank-3 tensor.
    pub fn resize_time(&mut self, x: Var, len_out: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 3 || len_out == 0 {
            return shape_err(format!("resize_time on {:?} to {len_out}", t.dims()));
        }
        let (batch, len_in, ch) = (t.dims()[0], t.dims()[1], t.dims()[2]);
        let mut data = Vec::with_capacity(batch * len_out * ch);
        for b in 0..batch {
            for s in 0..len_out {
                let src = kernels::resize_time_index(s, len_in, len_out);
                let at = (b * len_in + src) * ch;
                data.extend_from_slice(&t.data()[at..at + ch]);
            }
        }
        let y = Tensor::new(vec![batch, len_out, ch], data)?;
        self.push(y, Op::ResizeTime(x), "resize_time")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().map(|&v| f64::from(v)).sum();
        self.push(Tensor::scalar(s as f32), Op::Sum(x), "sum")
    }

    /// Mean squared error over every element.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_dims(tb) {
            return shape_err(format!("mse: {:?} vs {:?}", ta.dims(), tb.dims()));
        }
        let s: f64 = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| {
                let d = f64::from(x) - f64::from(y);
                d * d
            })
            .sum();
        let v = s / ta.len() as f64;
        self.push(Tensor::scalar(v as f32), Op::Mse(a, b), "mse")
    }

    /// Batch mean of the closed-form `KL(N(mu, exp(logvar)) || N(0, 1))`.
    pub fn gaussian_kld(&mut self, mu: Var, logvar: Var) -> Result<Var> {
        let (tm, tl) = (self.value(mu), self.value(logvar));
        if !tm.same_dims(tl) || tm.rank() != 2 {
            return shape_err(format!("kld: mu {:?}, logvar {:?}", tm.dims(), tl.dims()));
        }
        let v = kld_value(tm, tl);
        self.push(Tensor::scalar(v as f32), Op::GaussianKld { mu, logvar }, "gaussian_kld")
    }

    /// Replays the tape backward from a scalar node.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if !self.value(loss).is_scalar() {
            return shape_err(format!("loss must be scalar, got {:?}", self.value(loss).dims()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(self.value(loss).dims().to_vec(), vec![1.0])?);

        let mut param_grads = self.params.map(ModelParameters::zeros_like);
        let mut leaves = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !g.is_finite() {
                return Err(Error::NonFinite("backward".into()));
            }
            match &self.nodes[i].op {
                Op::Constant => {}
                Op::Leaf => leaves.push((Var(i), g)),
                Op::Param(slot) => {
                    let pg = param_grads.as_mut().expect("param node without parameters");
                    let layer = &mut pg.layers_mut()[slot.layer()];
                    let target = match slot {
                        ParamSlot::Kernel(_) => &mut layer.kernel,
                        ParamSlot::Bias(_) => &mut layer.bias,
                    };
                    for (t, v) in target.data_mut().iter_mut().zip(g.data()) {
                        *t += v;
                    }
                }
                Op::Conv1d { input, kernel, bias, geom } => {
                    let (input, kernel, bias, geom) = (*input, *kernel, *bias, *geom);
                    let x = self.value(input);
                    let w = self.value(kernel);
                    let dx = kernels::conv1d_backward_input(g.data(), w.data(), &geom);
                    let (dw, db) = kernels::conv1d_backward_params(g.data(), x.data(), &geom);
                    let dx = Tensor::new(x.dims().to_vec(), dx)?;
                    let dw = Tensor::new(w.dims().to_vec(), dw)?;
                    let db = Tensor::new(vec![geom.channels_out], db)?;
                    accumulate(&mut grads, input, dx);
                    accumulate(&mut grads, kernel, dw);
                    accumulate(&mut grads, bias, db);
                }
                Op::Dense { input, weight, bias } => {
                    let (input, weight, bias) = (*input, *weight, *bias);
                    let x = self.value(input);
                    let w = self.value(weight);
                    let (batch, n_in) = (x.dims()[0], x.dims()[1]);
                    let n_out = w.dims()[0];
                    let dx = kernels::dense_backward_input(g.data(), w.data(), batch, n_in);
                    let (dw, db) = kernels::dense_backward_params(g.data(), x.data(), batch, n_in, n_out);
                    let dx = Tensor::new(x.dims().to_vec(), dx)?;
                    let dw = Tensor::new(w.dims().to_vec(), dw)?;
                    let db = Tensor::new(vec![n_out], db)?;
                    accumulate(&mut grads, input, dx);
                    accumulate(&mut grads, weight, dw);
                    accumulate(&mut grads, bias, db);
                }
                Op::Relu(x) => {
                    let x = *x;
                    let out = self.value(Var(i));
                    let data = g
                        .data()
                        .iter()
                        .zip(out.data())
                        .map(|(&gv, &y)| if y > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, x, Tensor::new(g.dims().to_vec(), data)?);
                }
                Op::Reshape(x) => {
                    let x = *x;
                    let dims = self.value(x).dims().to_vec();
                    accumulate(&mut grads, x, g.reshape(&dims)?);
                }
                Op::Concat(a, b) => {
                    let (a, b) = (*a, *b);
                    let na = self.value(a).dims()[1];
                    let nb = self.value(b).dims()[1];
                    let batch = g.dims()[0];
                    let mut ga = Vec::with_capacity(batch * na);
                    let mut gb = Vec::with_capacity(batch * nb);
                    for r in g.data().chunks(na + nb) {
                        ga.extend_from_slice(&r[..na]);
                        gb.extend_from_slice(&r[na..]);
                    }
                    accumulate(&mut grads, a, Tensor::new(vec![batch, na], ga)?);
                    accumulate(&mut grads, b, Tensor::new(vec![batch, nb], gb)?);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, g);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let (ta, tb) = (self.value(a), self.value(b));
                    let ga: Vec<f32> = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                    let gb: Vec<f32> = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads, a, Tensor::new(g.dims().to_vec(), ga)?);
                    accumulate(&mut grads, b, Tensor::new(g.dims().to_vec(), gb)?);
                }
                Op::Scale(x, c) => {
                    let (x, c) = (*x, *c);
                    accumulate(&mut grads, x, g.map(|v| v * c));
                }
                Op::Exp(x) => {
                    let x = *x;
                    let out = self.value(Var(i));
                    let data = g.data().iter().zip(out.data()).map(|(a, b)| a * b).collect();
                    accumulate(&mut grads, x, Tensor::new(g.dims().to_vec(), data)?);
                }
                Op::ResizeTime(x) => {
                    let x = *x;
                    let xd = self.value(x).dims().to_vec();
                    let (batch, len_in, ch) = (xd[0], xd[1], xd[2]);
                    let len_out = g.dims()[1];
                    let mut dx = vec![0.0f32; batch * len_in * ch];
                    for b in 0..batch {
                        for s in 0..len_out {
                            let src = kernels::resize_time_index(s, len_in, len_out);
                            let from = (b * len_out + s) * ch;
                            let to = (b * len_in + src) * ch;
                            for c in 0..ch {
                                dx[to + c] += g.data()[from + c];
                            }
                        }
                    }
                    accumulate(&mut grads, x, Tensor::new(xd, dx)?);
                }
                Op::Sum(x) => {
                    let x = *x;
                    let gv = g.data()[0];
                    let dims = self.value(x).dims().to_vec();
                    accumulate(&mut grads, x, Tensor::filled(&dims, gv));
                }
                Op::Mse(a, b) => {
                    let (a, b) = (*a, *b);
                    let (ta, tb) = (self.value(a), self.value(b));
                    let k = 2.0 * f64::from(g.data()[0]) / ta.len() as f64;
                    let ga: Vec<f32> = ta
                        .data()
                        .iter()
                        .zip(tb.data())
                        .map(|(&x, &y)| (k * (f64::from(x) - f64::from(y))) as f32)
                        .collect();
                    let gb: Vec<f32> = ga.iter().map(|v| -v).collect();
                    let dims = ta.dims().to_vec();
                    accumulate(&mut grads, a, Tensor::new(dims.clone(), ga)?);
                    accumulate(&mut grads, b, Tensor::new(dims, gb)?);
                }
                Op::GaussianKld { mu, logvar } => {
                    let (mu, logvar) = (*mu, *logvar);
                    let (tm, tl) = (self.value(mu), self.value(logvar));
                    let k = f64::from(g.data()[0]) / tm.dims()[0] as f64;
                    let gm: Vec<f32> = tm.data().iter().map(|&m| (k * f64::from(m)) as f32).collect();
                    let gl: Vec<f32> = tl
                        .data()
                        .iter()
                        .map(|&l| (-0.5 * k * (1.0 - f64::from(l).exp())) as f32)
                        .collect();
                    let dims = tm.dims().to_vec();
                    accumulate(&mut grads, mu, Tensor::new(dims.clone(), gm)?);
                    accumulate(&mut grads, logvar, Tensor::new(dims, gl)?);
                }
            }
        }

        if let Some(pg) = &param_grads {
            if !pg.is_finite() {
                return Err(Error::NonFinite("backward".into()));
            }
        }
        leaves.sort_by_key(|(v, _)| v.0);
        Ok(Gradients {
            params: param_grads,
            leaves,
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Batch mean of `-1/2 * sum(1 + logvar - mu^2 - exp(logvar))`, in `f64`.
pub(crate) fn kld_value(mu: &Tensor, logvar: &Tensor) -> f64 {
    let batch = mu.dims()[0] as f64;
    let s: f64 = mu
        .data()
        .iter()
        .zip(logvar.data())
        .map(|(&m, &l)| {
            let (m, l) = (f64::from(m), f64::from(l));
            -0.5 * (1.0 + l - m * m - l.exp())
        })
        .sum();
    s / batch
}
