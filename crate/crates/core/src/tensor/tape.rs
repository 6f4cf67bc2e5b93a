use super::data::{Scalar, TensorData};
use crate::error::{Error, Result};
use crate::par;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum OpKind<S> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Conv1d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    Conv1dTranspose {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    LayerNorm {
        input: Var,
        gain: Var,
        shift: Var,
        eps: f64,
    },
    Dropout {
        input: Var,
        mask: Vec<S>,
    },
    MaskedMse {
        pred: Var,
        target: Var,
        mask: Vec<bool>,
    },
    CrossEntropyLogits {
        logits: Var,
        labels: Vec<usize>,
    },
    Reshape(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols {
        input: Var,
        start: usize,
        len: usize,
    },
    SliceRows {
        input: Var,
        start: usize,
        len: usize,
    },
    MaxPool1d {
        input: Var,
        argmax: Vec<u32>,
    },
    AvgPoolFull(Var),
    Sum(Var),
    Mean(Var),
    AddN(Vec<Var>),
}

/// Reverse-mode tape. Nodes are stored in creation order, which is a
/// topological order, so [`Tape::backward`] is a single reverse sweep that
/// visits each node exactly once. Gradients accumulate across backward
/// calls until [`Tape::zero_grads`].
pub struct Tape<S: Scalar> {
    ops: Vec<OpKind<S>>,
    values: Vec<TensorData<S>>,
    grads: Vec<Option<Vec<S>>>,
    requires: Vec<bool>,
    min_kink_gap: f64,
}

fn dims2(t: &TensorData<impl Scalar>) -> Result<(usize, usize)> {
    match t.shape() {
        [n, m] => Ok((*n, *m)),
        s => Err(Error::Shape(format!("expected 2D tensor, got {s:?}"))),
    }
}

/// Interpret a conv input as `[batch, channels, length]`; 2D inputs are a
/// single unbatched example.
fn conv_dims(shape: &[usize]) -> Result<(usize, usize, usize, bool)> {
    match shape {
        [c, l] => Ok((1, *c, *l, false)),
        [b, c, l] => Ok((*b, *c, *l, true)),
        s => Err(Error::Shape(format!("conv input must be 2D or 3D, got {s:?}"))),
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            ops: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            requires: Vec::new(),
            min_kink_gap: f64::INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Smallest distance to a non-differentiable point (ReLU zero, max-pool
    /// tie) observed while building this tape. Used by the finite-difference
    /// harness to skip kink-adjacent coordinates.
    pub fn min_kink_gap(&self) -> f64 {
        self.min_kink_gap
    }

    pub fn value(&self, v: Var) -> &TensorData<S> {
        &self.values[v.0]
    }

    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.grads[v.0].as_deref()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    fn push(&mut self, op: OpKind<S>, value: TensorData<S>, requires: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::Numeric("non-finite value produced".into()));
        }
        self.ops.push(op);
        self.values.push(value);
        self.grads.push(None);
        self.requires.push(requires);
        Ok(Var(self.ops.len() - 1))
    }

    fn req(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    pub fn leaf(&mut self, value: TensorData<S>, requires_grad: bool) -> Result<Var> {
        self.push(OpKind::Leaf, value, requires_grad)
    }

    pub fn constant(&mut self, value: TensorData<S>) -> Result<Var> {
        self.leaf(value, false)
    }

    // ---- elementwise ----

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        if self.values[a.0].shape() != self.values[b.0].shape() {
            return Err(Error::Shape(format!(
                "shape mismatch: {:?} vs {:?}",
                self.values[a.0].shape(),
                self.values[b.0].shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let av = self.values[a.0].data();
        let bv = self.values[b.0].data();
        let data = av.iter().zip(bv).map(|(&x, &y)| x + y).collect();
        let out = TensorData::new(self.values[a.0].shape().to_vec(), data)?;
        self.push(OpKind::Add(a, b), out, self.req(a) || self.req(b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let av = self.values[a.0].data();
        let bv = self.values[b.0].data();
        let data = av.iter().zip(bv).map(|(&x, &y)| x - y).collect();
        let out = TensorData::new(self.values[a.0].shape().to_vec(), data)?;
        self.push(OpKind::Sub(a, b), out, self.req(a) || self.req(b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let av = self.values[a.0].data();
        let bv = self.values[b.0].data();
        let data = av.iter().zip(bv).map(|(&x, &y)| x * y).collect();
        let out = TensorData::new(self.values[a.0].shape().to_vec(), data)?;
        self.push(OpKind::Mul(a, b), out, self.req(a) || self.req(b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let cs = S::c(c);
        let data = self.values[a.0].data().iter().map(|&x| x * cs).collect();
        let out = TensorData::new(self.values[a.0].shape().to_vec(), data)?;
        self.push(OpKind::Scale(a, c), out, self.req(a))
    }

    /// `[N, M] + [M]` row broadcast.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (n, m) = dims2(&self.values[x.0])?;
        if self.values[bias.0].shape() != [m] {
            return Err(Error::Shape(format!(
                "bias shape {:?} does not match {m} columns",
                self.values[bias.0].shape()
            )));
        }
        let xv = self.values[x.0].data();
        let bv = self.values[bias.0].data();
        let mut data = vec![S::ZERO; n * m];
        for i in 0..n {
            for j in 0..m {
                data[i * m + j] = xv[i * m + j] + bv[j];
            }
        }
        let out = TensorData::new(vec![n, m], data)?;
        self.push(OpKind::AddBias(x, bias), out, self.req(x) || self.req(bias))
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ka) = dims2(&self.values[a.0])?;
        let (kb, m) = dims2(&self.values[b.0])?;
        if ka != kb {
            return Err(Error::Shape(format!(
                "matmul inner dims differ: {ka} vs {kb}"
            )));
        }
        let av = self.values[a.0].data();
        let bv = self.values[b.0].data();
        let mut data = vec![S::ZERO; n * m];
        par::for_each_chunk_mut(&mut data, m, ka * m, |i, row| {
            for k in 0..ka {
                let aik = av[i * ka + k];
                let brow = &bv[k * m..(k + 1) * m];
                for (o, &bkj) in row.iter_mut().zip(brow) {
                    *o += aik * bkj;
                }
            }
        });
        let out = TensorData::new(vec![n, m], data)?;
        self.push(OpKind::MatMul(a, b), out, self.req(a) || self.req(b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (n, m) = dims2(&self.values[a.0])?;
        let av = self.values[a.0].data();
        let mut data = vec![S::ZERO; n * m];
        for i in 0..n {
            for j in 0..m {
                data[j * n + i] = av[i * m + j];
            }
        }
        let out = TensorData::new(vec![m, n], data)?;
        self.push(OpKind::Transpose(a), out, self.req(a))
    }

    /// `x @ w + b`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    // ---- convolution ----

    /// Cross-correlation. `input` is `[C_in, L]` or `[B, C_in, L]`, `kernel`
    /// is `[C_out, C_in, K]`. `L_out = (L + 2*padding - K) / stride + 1`.
    pub fn conv1d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        if stride == 0 {
            return Err(Error::InvalidConfig("conv stride must be >= 1".into()));
        }
        let (bsz, cin, l, batched) = conv_dims(self.values[input.0].shape())?;
        let kshape = self.values[kernel.0].shape().to_vec();
        let (cout, kcin, k) = match kshape[..] {
            [a, b, c] => (a, b, c),
            _ => return Err(Error::Shape("conv kernel must be [C_out, C_in, K]".into())),
        };
        if kcin != cin {
            return Err(Error::Shape(format!(
                "kernel expects {kcin} input channels, input has {cin}"
            )));
        }
        if k > l + 2 * padding {
            return Err(Error::Shape(format!(
                "kernel width {k} exceeds padded length {}",
                l + 2 * padding
            )));
        }
        if let Some(bv) = bias {
            if self.values[bv.0].shape() != [cout] {
                return Err(Error::Shape("conv bias must be [C_out]".into()));
            }
        }
        let lout = (l + 2 * padding - k) / stride + 1;
        let xv = self.values[input.0].data();
        let wv = self.values[kernel.0].data();
        let bv: Option<&[S]> = bias.map(|b| self.values[b.0].data());
        let mut data = vec![S::ZERO; bsz * cout * lout];
        par::for_each_chunk_mut(&mut data, lout, cin * k * lout, |bc, row| {
            let b = bc / cout;
            let co = bc % cout;
            let x = &xv[b * cin * l..(b + 1) * cin * l];
            let w = &wv[co * cin * k..(co + 1) * cin * k];
            let b0 = bv.map_or(S::ZERO, |bb| bb[co]);
            for (t, o) in row.iter_mut().enumerate() {
                let base = (t * stride) as isize - padding as isize;
                let mut acc = b0;
                for ci in 0..cin {
                    for kk in 0..k {
                        let pos = base + kk as isize;
                        if pos >= 0 && (pos as usize) < l {
                            acc += x[ci * l + pos as usize] * w[ci * k + kk];
                        }
                    }
                }
                *o = acc;
            }
        });
        let shape = if batched {
            vec![bsz, cout, lout]
        } else {
            vec![cout, lout]
        };
        let out = TensorData::new(shape, data)?;
        let requires =
            self.req(input) || self.req(kernel) || bias.map_or(false, |b| self.req(b));
        self.push(
            OpKind::Conv1d {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
            out,
            requires,
        )
    }

    /// Adjoint of [`Tape::conv1d`]. `input` is `[C_in, L]` or `[B, C_in, L]`,
    /// `kernel` is `[C_in, C_out, K]`.
    /// `L_out = (L - 1)*stride - 2*padding + K + output_padding`.
    pub fn conv1d_transpose(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var> {
        if stride == 0 {
            return Err(Error::InvalidConfig("conv stride must be >= 1".into()));
        }
        if output_padding >= stride && !(output_padding == 0 && stride == 1) {
            return Err(Error::InvalidConfig(
                "output_padding must be smaller than stride".into(),
            ));
        }
        let (bsz, cin, l, batched) = conv_dims(self.values[input.0].shape())?;
        let (kcin, cout, k) = match self.values[kernel.0].shape()[..] {
            [a, b, c] => (a, b, c),
            _ => {
                return Err(Error::Shape(
                    "transposed conv kernel must be [C_in, C_out, K]".into(),
                ))
            }
        };
        if kcin != cin {
            return Err(Error::Shape(format!(
                "kernel expects {kcin} input channels, input has {cin}"
            )));
        }
        let full = (l - 1) * stride + k + output_padding;
        if full < 2 * padding + 1 {
            return Err(Error::Shape("transposed conv output would be empty".into()));
        }
        let lout = full - 2 * padding;
        if let Some(bv) = bias {
            if self.values[bv.0].shape() != [cout] {
                return Err(Error::Shape("conv bias must be [C_out]".into()));
            }
        }
        let xv = self.values[input.0].data();
        let wv = self.values[kernel.0].data();
        let bv: Option<&[S]> = bias.map(|b| self.values[b.0].data());
        let mut data = vec![S::ZERO; bsz * cout * lout];
        par::for_each_chunk_mut(&mut data, lout, cin * k * lout, |bc, row| {
            let b = bc / cout;
            let co = bc % cout;
            let x = &xv[b * cin * l..(b + 1) * cin * l];
            let b0 = bv.map_or(S::ZERO, |bb| bb[co]);
            for (pos, o) in row.iter_mut().enumerate() {
                let mut acc = b0;
                for ci in 0..cin {
                    let w = &wv[(ci * cout + co) * k..(ci * cout + co + 1) * k];
                    for (kk, &wk) in w.iter().enumerate() {
                        let num = pos as isize + padding as isize - kk as isize;
                        if num >= 0 && num as usize % stride == 0 {
                            let t = num as usize / stride;
                            if t < l {
                                acc += x[ci * l + t] * wk;
                            }
                        }
                    }
                }
                *o = acc;
            }
        });
        let shape = if batched {
            vec![bsz, cout, lout]
        } else {
            vec![cout, lout]
        };
        let out = TensorData::new(shape, data)?;
        let requires =
            self.req(input) || self.req(kernel) || bias.map_or(false, |b| self.req(b));
        self.push(
            OpKind::Conv1dTranspose {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
            out,
            requires,
        )
    }

    // ---- pooling ----

    /// Max pooling over the last axis of `[B, C, L]` (or `[C, L]`), no padding.
    pub fn maxpool1d(&mut self, input: Var, width: usize, stride: usize) -> Result<Var> {
        if width == 0 || stride == 0 {
            return Err(Error::InvalidConfig("pool width/stride must be >= 1".into()));
        }
        let (bsz, c, l, batched) = conv_dims(self.values[input.0].shape())?;
        if width > l {
            return Err(Error::Shape(format!(
                "pool width {width} exceeds length {l}"
            )));
        }
        let lout = (l - width) / stride + 1;
        let xv = self.values[input.0].data();
        let mut data = vec![S::ZERO; bsz * c * lout];
        let mut argmax = vec![0u32; bsz * c * lout];
        let mut kink = f64::INFINITY;
        for bc in 0..bsz * c {
            let x = &xv[bc * l..(bc + 1) * l];
            for t in 0..lout {
                let s0 = t * stride;
                let mut best = x[s0];
                let mut besti = s0;
                let mut second = f64::NEG_INFINITY;
                for (off, &v) in x[s0..s0 + width].iter().enumerate() {
                    if off > 0 {
                        if v > best {
                            second = best.to_f64();
                            best = v;
                            besti = s0 + off;
                        } else if v.to_f64() > second {
                            second = v.to_f64();
                        }
                    }
                }
                if second.is_finite() {
                    kink = kink.min(best.to_f64() - second);
                }
                data[bc * lout + t] = best;
                argmax[bc * lout + t] = besti as u32;
            }
        }
        self.min_kink_gap = self.min_kink_gap.min(kink);
        let shape = if batched {
            vec![bsz, c, lout]
        } else {
            vec![c, lout]
        };
        let out = TensorData::new(shape, data)?;
        let requires = self.req(input);
        self.push(
            OpKind::MaxPool1d { input, argmax },
            out,
            requires,
        )
    }

    /// Mean over the last axis: `[B, C, L] -> [B, C]` (adaptive average pool
    /// to a single vector).
    pub fn avgpool_full(&mut self, input: Var) -> Result<Var> {
        let (bsz, c, l, _) = conv_dims(self.values[input.0].shape())?;
        let xv = self.values[input.0].data();
        let inv = S::c(1.0 / l as f64);
        let mut data = vec![S::ZERO; bsz * c];
        for bc in 0..bsz * c {
            let mut acc = S::ZERO;
            for &v in &xv[bc * l..(bc + 1) * l] {
                acc += v;
            }
            data[bc] = acc * inv;
        }
        let out = TensorData::new(vec![bsz, c], data)?;
        self.push(OpKind::AvgPoolFull(input), out, self.req(input))
    }

    // ---- activations ----

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let mut kink = f64::INFINITY;
        let data = self.values[a.0]
            .data()
            .iter()
            .map(|&x| {
                kink = kink.min(x.to_f64().abs());
                if x > S::ZERO {
                    x
                } else {
                    S::ZERO
                }
            })
            .collect();
        self.min_kink_gap = self.min_kink_gap.min(kink);
        let out = TensorData::new(self.values[a.0].shape().to_vec(), data)?;
        self.push(OpKind::Relu(a), out, self.req(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let data = self.values[a.0]
            .data()
            .iter()
            .map(|&x| {
                if x >= S::ZERO {
                    S::ONE / (S::ONE + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (S::ONE + e)
                }
            })
            .collect();
        let out = TensorData::new(self.values[a.0].shape().to_vec(), data)?;
        self.push(OpKind::Sigmoid(a), out, self.req(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let data = self.values[a.0].data().iter().map(|&x| x.tanh()).collect();
        let out = TensorData::new(self.values[a.0].shape().to_vec(), data)?;
        self.push(OpKind::Tanh(a), out, self.req(a))
    }

    /// Row-wise softmax over the last axis of a 2D tensor.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (n, m) = dims2(&self.values[a.0])?;
        let xv = self.values[a.0].data();
        let mut data = vec![S::ZERO; n * m];
        for i in 0..n {
            let row = &xv[i * m..(i + 1) * m];
            let mut mx = row[0];
            for &v in row {
                mx = mx.max(v);
            }
            let mut sum = S::ZERO;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - mx).exp();
                data[i * m + j] = e;
                sum += e;
            }
            for j in 0..m {
                data[i * m + j] = data[i * m + j] / sum;
            }
        }
        let out = TensorData::new(vec![n, m], data)?;
        self.push(OpKind::Softmax(a), out, self.req(a))
    }

    /// Layer norm over the last axis of `[N, M]` with learned `gain`/`shift`
    /// of shape `[M]`.
    pub fn layer_norm(&mut self, input: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        let (n, m) = dims2(&self.values[input.0])?;
        if self.values[gain.0].shape() != [m] || self.values[shift.0].shape() != [m] {
            return Err(Error::Shape("layer_norm gain/shift must be [M]".into()));
        }
        let xv = self.values[input.0].data();
        let gv = self.values[gain.0].data();
        let sv = self.values[shift.0].data();
        let invm = S::c(1.0 / m as f64);
        let epss = S::c(eps);
        let mut data = vec![S::ZERO; n * m];
        for i in 0..n {
            let row = &xv[i * m..(i + 1) * m];
            let mut mean = S::ZERO;
            for &v in row {
                mean += v;
            }
            mean = mean * invm;
            let mut var = S::ZERO;
            for &v in row {
                let d = v - mean;
                var += d * d;
            }
            var = var * invm;
            let inv_std = S::ONE / (var + epss).sqrt();
            for j in 0..m {
                let xhat = (row[j] - mean) * inv_std;
                data[i * m + j] = xhat * gv[j] + sv[j];
            }
        }
        let out = TensorData::new(vec![n, m], data)?;
        let requires = self.req(input) || self.req(gain) || self.req(shift);
        self.push(
            OpKind::LayerNorm {
                input,
                gain,
                shift,
                eps,
            },
            out,
            requires,
        )
    }

    /// Train-time dropout with a caller-supplied keep mask whose entries are
    /// `0` or `1/keep_prob`. Eval mode simply omits this op.
    pub fn dropout(&mut self, input: Var, mask: Vec<S>) -> Result<Var> {
        if mask.len() != self.values[input.0].numel() {
            return Err(Error::Shape("dropout mask length mismatch".into()));
        }
        let data = self.values[input.0]
            .data()
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        let out = TensorData::new(self.values[input.0].shape().to_vec(), data)?;
        let requires = self.req(input);
        self.push(OpKind::Dropout { input, mask }, out, requires)
    }

    // ---- losses ----

    /// Mean over masked rows of the per-row mean squared error. Rows with
    /// `mask = false` contribute nothing and receive exactly zero gradient.
    pub fn masked_mse(&mut self, pred: Var, target: Var, mask: &[bool]) -> Result<Var> {
        let (n, m) = dims2(&self.values[pred.0])?;
        self.same_shape(pred, target)?;
        if mask.len() != n {
            return Err(Error::Shape(format!(
                "mask length {} does not match {n} rows",
                mask.len()
            )));
        }
        let active = mask.iter().filter(|&&b| b).count();
        if active == 0 {
            return Err(Error::InvalidConfig("masked_mse mask is all false".into()));
        }
        let pv = self.values[pred.0].data();
        let tv = self.values[target.0].data();
        let mut acc = S::ZERO;
        for i in 0..n {
            if !mask[i] {
                continue;
            }
            let mut row = S::ZERO;
            for j in 0..m {
                let d = pv[i * m + j] - tv[i * m + j];
                row += d * d;
            }
            acc += row;
        }
        let loss = acc * S::c(1.0 / (active * m) as f64);
        let requires = self.req(pred) || self.req(target);
        self.push(
            OpKind::MaskedMse {
                pred,
                target,
                mask: mask.to_vec(),
            },
            TensorData::scalar(loss),
            requires,
        )
    }

    /// Mean cross-entropy of `[N, C]` logits against integer labels, fused
    /// with the softmax for numerical stability.
    pub fn cross_entropy_logits(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = dims2(&self.values[logits.0])?;
        if labels.len() != n {
            return Err(Error::Shape(format!(
                "label count {} does not match {n} rows",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Data(format!("label {bad} out of range for {c} classes")));
        }
        let zv = self.values[logits.0].data();
        let mut acc = S::ZERO;
        for (i, &y) in labels.iter().enumerate() {
            let row = &zv[i * c..(i + 1) * c];
            let mut mx = row[0];
            for &v in row {
                mx = mx.max(v);
            }
            let mut sum = S::ZERO;
            for &v in row {
                sum += (v - mx).exp();
            }
            acc += mx + sum.ln() - row[y];
        }
        let loss = acc * S::c(1.0 / n as f64);
        let requires = self.req(logits);
        self.push(
            OpKind::CrossEntropyLogits {
                logits,
                labels: labels.to_vec(),
            },
            TensorData::scalar(loss),
            requires,
        )
    }

    // ---- shape ops ----

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.values[a.0].reshaped(shape)?;
        self.push(OpKind::Reshape(a), out, self.req(a))
    }

    /// Concatenate 2D tensors with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape("concat of zero tensors".into()));
        }
        let (n, _) = dims2(&self.values[parts[0].0])?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pn, pm) = dims2(&self.values[p.0])?;
            if pn != n {
                return Err(Error::Shape("concat_cols row count mismatch".into()));
            }
            widths.push(pm);
        }
        let m: usize = widths.iter().sum();
        let mut data = vec![S::ZERO; n * m];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pv = self.values[p.0].data();
            for i in 0..n {
                data[i * m + off..i * m + off + w].copy_from_slice(&pv[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let out = TensorData::new(vec![n, m], data)?;
        let requires = parts.iter().any(|&p| self.req(p));
        self.push(OpKind::ConcatCols(parts.to_vec()), out, requires)
    }

    /// Stack 2D tensors with equal column counts along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape("concat of zero tensors".into()));
        }
        let (_, m) = dims2(&self.values[parts[0].0])?;
        let mut total = 0;
        for &p in parts {
            let (pn, pm) = dims2(&self.values[p.0])?;
            if pm != m {
                return Err(Error::Shape("concat_rows column count mismatch".into()));
            }
            total += pn;
        }
        let mut data = Vec::with_capacity(total * m);
        for &p in parts {
            data.extend_from_slice(self.values[p.0].data());
        }
        let out = TensorData::new(vec![total, m], data)?;
        let requires = parts.iter().any(|&p| self.req(p));
        self.push(OpKind::ConcatRows(parts.to_vec()), out, requires)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (n, m) = dims2(&self.values[a.0])?;
        if start + len > m {
            return Err(Error::Shape(format!(
                "column slice {start}..{} out of range for {m}",
                start + len
            )));
        }
        let av = self.values[a.0].data();
        let mut data = vec![S::ZERO; n * len];
        for i in 0..n {
            data[i * len..(i + 1) * len].copy_from_slice(&av[i * m + start..i * m + start + len]);
        }
        let out = TensorData::new(vec![n, len], data)?;
        self.push(
            OpKind::SliceCols {
                input: a,
                start,
                len,
            },
            out,
            self.req(a),
        )
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (n, m) = dims2(&self.values[a.0])?;
        if start + len > n {
            return Err(Error::Shape(format!(
                "row slice {start}..{} out of range for {n}",
                start + len
            )));
        }
        let av = self.values[a.0].data();
        let data = av[start * m..(start + len) * m].to_vec();
        let out = TensorData::new(vec![len, m], data)?;
        self.push(
            OpKind::SliceRows {
                input: a,
                start,
                len,
            },
            out,
            self.req(a),
        )
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let mut acc = S::ZERO;
        for &v in self.values[a.0].data() {
            acc += v;
        }
        self.push(OpKind::Sum(a), TensorData::scalar(acc), self.req(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.values[a.0].numel();
        let mut acc = S::ZERO;
        for &v in self.values[a.0].data() {
            acc += v;
        }
        let out = TensorData::scalar(acc * S::c(1.0 / n as f64));
        self.push(OpKind::Mean(a), out, self.req(a))
    }

    /// Elementwise sum of same-shape tensors, in list order.
    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape("add_n of zero tensors".into()));
        }
        for &p in &parts[1..] {
            self.same_shape(parts[0], p)?;
        }
        let numel = self.values[parts[0].0].numel();
        let mut data = vec![S::ZERO; numel];
        for &p in parts {
            for (o, &v) in data.iter_mut().zip(self.values[p.0].data()) {
                *o += v;
            }
        }
        let out = TensorData::new(self.values[parts[0].0].shape().to_vec(), data)?;
        let requires = parts.iter().any(|&p| self.req(p));
        self.push(OpKind::AddN(parts.to_vec()), out, requires)
    }

    // ---- backward ----

    /// Reverse sweep from a scalar `loss`. Gradients accumulate: a second
    /// call without [`Tape::zero_grads`] doubles them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.values[loss.0].numel() != 1 {
            return Err(Error::Shape(format!(
                "backward requires a scalar, got shape {:?}",
                self.values[loss.0].shape()
            )));
        }
        if !self.requires[loss.0] {
            return Ok(());
        }
        let Tape {
            ops,
            values,
            grads,
            requires,
            ..
        } = self;
        // Propagate through a per-call scratch buffer so repeated backward
        // calls each contribute one clean pass into the persistent grads.
        let mut prop: Vec<Option<Vec<S>>> = vec![None; loss.0 + 1];
        prop[loss.0] = Some(vec![S::ONE]);
        for idx in (0..=loss.0).rev() {
            if !requires[idx] || prop[idx].is_none() {
                continue;
            }
            let gout = prop[idx].take().unwrap();
            dispatch_backward(&ops[idx], idx, &gout, values, &mut prop, requires);
            match &mut grads[idx] {
                Some(acc) => {
                    for (o, &g) in acc.iter_mut().zip(&gout) {
                        *o += g;
                    }
                }
                None => grads[idx] = Some(gout),
            }
        }
        Ok(())
    }
}

fn acc_grad<'a, S: Scalar>(
    grads: &'a mut [Option<Vec<S>>],
    requires: &[bool],
    v: Var,
    numel: usize,
) -> Option<&'a mut [S]> {
    if !requires[v.0] {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![S::ZERO; numel]).as_mut_slice())
}

#[allow(clippy::too_many_lines)]
fn dispatch_backward<S: Scalar>(
    op: &OpKind<S>,
    out_idx: usize,
    gout: &[S],
    values: &[TensorData<S>],
    grads: &mut [Option<Vec<S>>],
    requires: &[bool],
) {
    match op {
        OpKind::Leaf => {}
        OpKind::Add(a, b) => {
            for &v in [a, b] {
                if let Some(g) = acc_grad(grads, requires, v, gout.len()) {
                    for (o, &x) in g.iter_mut().zip(gout) {
                        *o += x;
                    }
                }
            }
        }
        OpKind::Sub(a, b) => {
            if let Some(g) = acc_grad(grads, requires, *a, gout.len()) {
                for (o, &x) in g.iter_mut().zip(gout) {
                    *o += x;
                }
            }
            if let Some(g) = acc_grad(grads, requires, *b, gout.len()) {
                for (o, &x) in g.iter_mut().zip(gout) {
                    *o += -x;
                }
            }
        }
        OpKind::Mul(a, b) => {
            // handle a == b by accumulating one input at a time
            let bv: Vec<S> = values[b.0].data().to_vec();
            if let Some(g) = acc_grad(grads, requires, *a, gout.len()) {
                for ((o, &x), &y) in g.iter_mut().zip(gout).zip(&bv) {
                    *o += x * y;
                }
            }
            let av: Vec<S> = values[a.0].data().to_vec();
            if let Some(g) = acc_grad(grads, requires, *b, gout.len()) {
                for ((o, &x), &y) in g.iter_mut().zip(gout).zip(&av) {
                    *o += x * y;
                }
            }
        }
        OpKind::Scale(a, c) => {
            let cs = S::c(*c);
            if let Some(g) = acc_grad(grads, requires, *a, gout.len()) {
                for (o, &x) in g.iter_mut().zip(gout) {
                    *o += x * cs;
                }
            }
        }
        OpKind::AddBias(x, bias) => {
            let (n, m) = dims2(&values[out_idx]).expect("checked at forward");
            if let Some(g) = acc_grad(grads, requires, *x, n * m) {
                for (o, &v) in g.iter_mut().zip(gout) {
                    *o += v;
                }
            }
            if let Some(g) = acc_grad(grads, requires, *bias, m) {
                for i in 0..n {
                    for j in 0..m {
                        g[j] += gout[i * m + j];
                    }
                }
            }
        }
        OpKind::MatMul(a, b) => {
            let (n, k) = dims2(&values[a.0]).expect("checked");
            let (_, m) = dims2(&values[b.0]).expect("checked");
            let av = values[a.0].data();
            let bv = values[b.0].data();
            if let Some(g) = acc_grad(grads, requires, *a, n * k) {
                // dA = dOut @ B^T
                par::for_each_chunk_mut(g, k, k * m, |i, row| {
                    for (kk, o) in row.iter_mut().enumerate() {
                        let mut acc = S::ZERO;
                        for j in 0..m {
                            acc += gout[i * m + j] * bv[kk * m + j];
                        }
                        *o += acc;
                    }
                });
            }
            if let Some(g) = acc_grad(grads, requires, *b, k * m) {
                // dB = A^T @ dOut
                par::for_each_chunk_mut(g, m, n * m, |kk, row| {
                    for i in 0..n {
                        let aik = av[i * k + kk];
                        for (o, &go) in row.iter_mut().zip(&gout[i * m..(i + 1) * m]) {
                            *o += aik * go;
                        }
                    }
                });
            }
        }
        OpKind::Transpose(a) => {
            let (n, m) = dims2(&values[a.0]).expect("checked");
            if let Some(g) = acc_grad(grads, requires, *a, n * m) {
                for i in 0..n {
                    for j in 0..m {
                        g[i * m + j] += gout[j * n + i];
                    }
                }
            }
        }
        OpKind::Conv1d {
            input,
            kernel,
            bias,
            stride,
            padding,
        } => {
            let (bsz, cin, l, _) = conv_dims(values[input.0].shape()).expect("checked");
            let ks = values[kernel.0].shape();
            let (cout, k) = (ks[0], ks[2]);
            let lout = (l + 2 * padding - k) / stride + 1;
            let xv = values[input.0].data();
            let wv = values[kernel.0].data();
            let (s, p) = (*stride, *padding);
            if let Some(g) = acc_grad(grads, requires, *input, bsz * cin * l) {
                par::for_each_chunk_mut(g, l, cout * k * l / s.max(1), |bci, row| {
                    let b = bci / cin;
                    let ci = bci % cin;
                    for (pos, o) in row.iter_mut().enumerate() {
                        let mut acc = S::ZERO;
                        for co in 0..cout {
                            let w = &wv[(co * cin + ci) * k..(co * cin + ci + 1) * k];
                            let go = &gout[(b * cout + co) * lout..(b * cout + co + 1) * lout];
                            for (kk, &wk) in w.iter().enumerate() {
                                let num = pos as isize + p as isize - kk as isize;
                                if num >= 0 && num as usize % s == 0 {
                                    let t = num as usize / s;
                                    if t < lout {
                                        acc += go[t] * wk;
                                    }
                                }
                            }
                        }
                        *o += acc;
                    }
                });
            }
            if let Some(g) = acc_grad(grads, requires, *kernel, cout * cin * k) {
                par::for_each_chunk_mut(g, cin * k, bsz * cin * k * lout, |co, chunk| {
                    for ci in 0..cin {
                        for kk in 0..k {
                            let mut acc = S::ZERO;
                            for b in 0..bsz {
                                let go = &gout[(b * cout + co) * lout..(b * cout + co + 1) * lout];
                                let x = &xv[(b * cin + ci) * l..(b * cin + ci + 1) * l];
                                for (t, &gt) in go.iter().enumerate() {
                                    let pos = (t * s) as isize + kk as isize - p as isize;
                                    if pos >= 0 && (pos as usize) < l {
                                        acc += gt * x[pos as usize];
                                    }
                                }
                            }
                            chunk[ci * k + kk] += acc;
                        }
                    }
                });
            }
            if let Some(bvar) = bias {
                if let Some(g) = acc_grad(grads, requires, *bvar, cout) {
                    for b in 0..bsz {
                        for co in 0..cout {
                            let go = &gout[(b * cout + co) * lout..(b * cout + co + 1) * lout];
                            let mut acc = S::ZERO;
                            for &v in go {
                                acc += v;
                            }
                            g[co] += acc;
                        }
                    }
                }
            }
        }
        OpKind::Conv1dTranspose {
            input,
            kernel,
            bias,
            stride,
            padding,
        } => {
            let (bsz, cin, l, _) = conv_dims(values[input.0].shape()).expect("checked");
            let ks = values[kernel.0].shape();
            let (cout, k) = (ks[1], ks[2]);
            let lout = *values[out_idx].shape().last().unwrap();
            let xv = values[input.0].data();
            let wv = values[kernel.0].data();
            let (s, p) = (*stride, *padding);
            if let Some(g) = acc_grad(grads, requires, *input, bsz * cin * l) {
                par::for_each_chunk_mut(g, l, cout * k * l, |bci, row| {
                    let b = bci / cin;
                    let ci = bci % cin;
                    for (t, o) in row.iter_mut().enumerate() {
                        let mut acc = S::ZERO;
                        for co in 0..cout {
                            let w = &wv[(ci * cout + co) * k..(ci * cout + co + 1) * k];
                            let go = &gout[(b * cout + co) * lout..(b * cout + co + 1) * lout];
                            for (kk, &wk) in w.iter().enumerate() {
                                let pos = (t * s + kk) as isize - p as isize;
                                if pos >= 0 && (pos as usize) < lout {
                                    acc += go[pos as usize] * wk;
                                }
                            }
                        }
                        *o += acc;
                    }
                });
            }
            if let Some(g) = acc_grad(grads, requires, *kernel, cin * cout * k) {
                par::for_each_chunk_mut(g, cout * k, bsz * cout * k * l, |ci, chunk| {
                    for co in 0..cout {
                        for kk in 0..k {
                            let mut acc = S::ZERO;
                            for b in 0..bsz {
                                let x = &xv[(b * cin + ci) * l..(b * cin + ci + 1) * l];
                                let go = &gout[(b * cout + co) * lout..(b * cout + co + 1) * lout];
                                for (t, &xt) in x.iter().enumerate() {
                                    let pos = (t * s + kk) as isize - p as isize;
                                    if pos >= 0 && (pos as usize) < lout {
                                        acc += xt * go[pos as usize];
                                    }
                                }
                            }
                            chunk[co * k + kk] += acc;
                        }
                    }
                });
            }
            if let Some(bvar) = bias {
                if let Some(g) = acc_grad(grads, requires, *bvar, cout) {
                    for b in 0..bsz {
                        for co in 0..cout {
                            let go = &gout[(b * cout + co) * lout..(b * cout + co + 1) * lout];
                            let mut acc = S::ZERO;
                            for &v in go {
                                acc += v;
                            }
                            g[co] += acc;
                        }
                    }
                }
            }
        }
        OpKind::Relu(a) => {
            let xv = values[a.0].data();
            if let Some(g) = acc_grad(grads, requires, *a, gout.len()) {
                for ((o, &go), &x) in g.iter_mut().zip(gout).zip(xv) {
                    if x > S::ZERO {
                        *o += go;
                    }
                }
            }
        }
        OpKind::Sigmoid(a) => {
            let yv = values[out_idx].data();
            if let Some(g) = acc_grad(grads, requires, *a, gout.len()) {
                for ((o, &go), &y) in g.iter_mut().zip(gout).zip(yv) {
                    *o += go * y * (S::ONE - y);
                }
            }
        }
        OpKind::Tanh(a) => {
            let yv = values[out_idx].data();
            if let Some(g) = acc_grad(grads, requires, *a, gout.len()) {
                for ((o, &go), &y) in g.iter_mut().zip(gout).zip(yv) {
                    *o += go * (S::ONE - y * y);
                }
            }
        }
        OpKind::Softmax(a) => {
            let (n, m) = dims2(&values[out_idx]).expect("checked");
            let yv = values[out_idx].data();
            if let Some(g) = acc_grad(grads, requires, *a, n * m) {
                for i in 0..n {
                    let y = &yv[i * m..(i + 1) * m];
                    let go = &gout[i * m..(i + 1) * m];
                    let mut dot = S::ZERO;
                    for j in 0..m {
                        dot += go[j] * y[j];
                    }
                    for j in 0..m {
                        g[i * m + j] += y[j] * (go[j] - dot);
                    }
                }
            }
        }
        OpKind::LayerNorm {
            input,
            gain,
            shift,
            eps,
        } => {
            let (n, m) = dims2(&values[input.0]).expect("checked");
            let xv = values[input.0].data();
            let gv = values[gain.0].data();
            let invm = S::c(1.0 / m as f64);
            let epss = S::c(*eps);
            // per-row stats are cheap to recompute
            let mut xhat = vec![S::ZERO; n * m];
            let mut inv_std = vec![S::ZERO; n];
            for i in 0..n {
                let row = &xv[i * m..(i + 1) * m];
                let mut mean = S::ZERO;
                for &v in row {
                    mean += v;
                }
                mean = mean * invm;
                let mut var = S::ZERO;
                for &v in row {
                    let d = v - mean;
                    var += d * d;
                }
                var = var * invm;
                inv_std[i] = S::ONE / (var + epss).sqrt();
                for j in 0..m {
                    xhat[i * m + j] = (row[j] - mean) * inv_std[i];
                }
            }
            if let Some(g) = acc_grad(grads, requires, *input, n * m) {
                for i in 0..n {
                    let mut mean_d = S::ZERO;
                    let mut mean_dx = S::ZERO;
                    for j in 0..m {
                        let d = gout[i * m + j] * gv[j];
                        mean_d += d;
                        mean_dx += d * xhat[i * m + j];
                    }
                    mean_d = mean_d * invm;
                    mean_dx = mean_dx * invm;
                    for j in 0..m {
                        let d = gout[i * m + j] * gv[j];
                        g[i * m + j] += (d - mean_d - xhat[i * m + j] * mean_dx) * inv_std[i];
                    }
                }
            }
            if let Some(g) = acc_grad(grads, requires, *gain, m) {
                for i in 0..n {
                    for j in 0..m {
                        g[j] += gout[i * m + j] * xhat[i * m + j];
                    }
                }
            }
            if let Some(g) = acc_grad(grads, requires, *shift, m) {
                for i in 0..n {
                    for j in 0..m {
                        g[j] += gout[i * m + j];
                    }
                }
            }
        }
        OpKind::Dropout { input, mask } => {
            if let Some(g) = acc_grad(grads, requires, *input, gout.len()) {
                for ((o, &go), &mk) in g.iter_mut().zip(gout).zip(mask) {
                    *o += go * mk;
                }
            }
        }
        OpKind::MaskedMse { pred, target, mask } => {
            let (n, m) = dims2(&values[pred.0]).expect("checked");
            let active = mask.iter().filter(|&&b| b).count();
            let scale = S::c(2.0 / (active * m) as f64) * gout[0];
            let pv = values[pred.0].data();
            let tv = values[target.0].data();
            if let Some(g) = acc_grad(grads, requires, *pred, n * m) {
                for i in 0..n {
                    if !mask[i] {
                        continue;
                    }
                    for j in 0..m {
                        g[i * m + j] += scale * (pv[i * m + j] - tv[i * m + j]);
                    }
                }
            }
            if let Some(g) = acc_grad(grads, requires, *target, n * m) {
                for i in 0..n {
                    if !mask[i] {
                        continue;
                    }
                    for j in 0..m {
                        g[i * m + j] += -scale * (pv[i * m + j] - tv[i * m + j]);
                    }
                }
            }
        }
        OpKind::CrossEntropyLogits { logits, labels } => {
            let (n, c) = dims2(&values[logits.0]).expect("checked");
            let zv = values[logits.0].data();
            let scale = S::c(1.0 / n as f64) * gout[0];
            if let Some(g) = acc_grad(grads, requires, *logits, n * c) {
                for (i, &y) in labels.iter().enumerate() {
                    let row = &zv[i * c..(i + 1) * c];
                    let mut mx = row[0];
                    for &v in row {
                        mx = mx.max(v);
                    }
                    let mut sum = S::ZERO;
                    for &v in row {
                        sum += (v - mx).exp();
                    }
                    for j in 0..c {
                        let p = (row[j] - mx).exp() / sum;
                        let ind = if j == y { S::ONE } else { S::ZERO };
                        g[i * c + j] += scale * (p - ind);
                    }
                }
            }
        }
        OpKind::Reshape(a) => {
            if let Some(g) = acc_grad(grads, requires, *a, gout.len()) {
                for (o, &x) in g.iter_mut().zip(gout) {
                    *o += x;
                }
            }
        }
        OpKind::ConcatCols(parts) => {
            let (n, m) = dims2(&values[out_idx]).expect("checked");
            let mut off = 0;
            for &p in parts {
                let (_, w) = dims2(&values[p.0]).expect("checked");
                if let Some(g) = acc_grad(grads, requires, p, n * w) {
                    for i in 0..n {
                        for j in 0..w {
                            g[i * w + j] += gout[i * m + off + j];
                        }
                    }
                }
                off += w;
            }
        }
        OpKind::ConcatRows(parts) => {
            let mut off = 0;
            for &p in parts {
                let numel = values[p.0].numel();
                if let Some(g) = acc_grad(grads, requires, p, numel) {
                    for (o, &x) in g.iter_mut().zip(&gout[off..off + numel]) {
                        *o += x;
                    }
                }
                off += numel;
            }
        }
        OpKind::SliceCols { input, start, len } => {
            let (n, m) = dims2(&values[input.0]).expect("checked");
            if let Some(g) = acc_grad(grads, requires, *input, n * m) {
                for i in 0..n {
                    for j in 0..*len {
                        g[i * m + start + j] += gout[i * len + j];
                    }
                }
            }
        }
        OpKind::SliceRows { input, start, len } => {
            let (n, m) = dims2(&values[input.0]).expect("checked");
            if let Some(g) = acc_grad(grads, requires, *input, n * m) {
                g[start * m..(start + len) * m]
                    .iter_mut()
                    .zip(gout)
                    .for_each(|(o, &x)| *o += x);
            }
        }
        OpKind::MaxPool1d { input, argmax, .. } => {
            let numel = values[input.0].numel();
            let (_, _, l, _) = conv_dims(values[input.0].shape()).expect("checked");
            let lout = *values[out_idx].shape().last().unwrap();
            if let Some(g) = acc_grad(grads, requires, *input, numel) {
                for (i, &am) in argmax.iter().enumerate() {
                    let bc = i / lout;
                    g[bc * l + am as usize] += gout[i];
                }
            }
        }
        OpKind::AvgPoolFull(input) => {
            let (bsz, c, l, _) = conv_dims(values[input.0].shape()).expect("checked");
            let inv = S::c(1.0 / l as f64);
            if let Some(g) = acc_grad(grads, requires, *input, bsz * c * l) {
                for bc in 0..bsz * c {
                    let go = gout[bc] * inv;
                    for o in &mut g[bc * l..(bc + 1) * l] {
                        *o += go;
                    }
                }
            }
        }
        OpKind::Sum(a) => {
            if let Some(g) = acc_grad(grads, requires, *a, values[a.0].numel()) {
                for o in g.iter_mut() {
                    *o += gout[0];
                }
            }
        }
        OpKind::Mean(a) => {
            let n = values[a.0].numel();
            let go = gout[0] * S::c(1.0 / n as f64);
            if let Some(g) = acc_grad(grads, requires, *a, n) {
                for o in g.iter_mut() {
                    *o += go;
                }
            }
        }
        OpKind::AddN(parts) => {
            for &p in parts {
                if let Some(g) = acc_grad(grads, requires, p, gout.len()) {
                    for (o, &x) in g.iter_mut().zip(gout) {
                        *o += x;
                    }
                }
            }
        }
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}
