//! Layer kernels. Every layer caches what its backward pass needs during a
//! training forward pass; `backward` consumes that cache.

use rand::Rng;

use super::{AutonetError, Tensor};
use crate::matrix::Mat;
use crate::rls::RmdnState;

/// Row-major GEMM `c = a·b + beta·c` where `a` is m×k and `b` is k×n, both
/// addressed through explicit (row, col) strides so transposes are free.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    let reach = |rows: usize, cols: usize, (rs, cs): (isize, isize)| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows as isize - 1) * rs + (cols as isize - 1) * cs + 1
        }
    };
    assert!(reach(m, k, a_strides) as usize <= a.len());
    assert!(reach(k, n, b_strides) as usize <= b.len());
    assert!(m * n <= c.len());
    // SAFETY: the asserts above bound every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn uniform_fill(rng: &mut impl Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

fn missing_cache(layer: &str) -> AutonetError {
    AutonetError::State(format!("{layer}: backward called without a training forward pass"))
}

/// Valid-mode, stride-1 2D convolution over `[B, C, H, W]` input.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    in_hw: (usize, usize),
    /// Input gradient is skipped for the first layer.
    pub need_input_grad: bool,
    cols: Option<Vec<f64>>,
    batch: usize,
}

impl Conv2d {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        in_hw: (usize, usize),
        rng: &mut impl Rng,
    ) -> Result<Self, AutonetError> {
        if kernel == 0 || kernel > in_hw.0 || kernel > in_hw.1 {
            return Err(AutonetError::Shape(format!(
                "conv kernel {kernel} does not fit input {in_hw:?}"
            )));
        }
        let fan_in = in_ch * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = Tensor::param(
            vec![out_ch, in_ch, kernel, kernel],
            uniform_fill(rng, out_ch * fan_in, bound),
        )?;
        let bias = Tensor::param(vec![out_ch], uniform_fill(rng, out_ch, bound))?;
        Ok(Conv2d {
            weight,
            bias,
            in_ch,
            out_ch,
            kernel,
            in_hw,
            need_input_grad: true,
            cols: None,
            batch: 0,
        })
    }

    pub fn out_hw(&self) -> (usize, usize) {
        (self.in_hw.0 - self.kernel + 1, self.in_hw.1 - self.kernel + 1)
    }

    pub fn out_shape(&self) -> Vec<usize> {
        let (oh, ow) = self.out_hw();
        vec![self.out_ch, oh, ow]
    }

    fn col_rows(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        let (h, w) = self.in_hw;
        let (oh, ow) = self.out_hw();
        let k = self.kernel;
        for c in 0..self.in_ch {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                    for y in 0..oh {
                        let src = &x[c * h * w + (y + ki) * w + kj..][..ow];
                        dst[y * ow..(y + 1) * ow].copy_from_slice(src);
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], dx: &mut [f64]) {
        let (h, w) = self.in_hw;
        let (oh, ow) = self.out_hw();
        let k = self.kernel;
        for c in 0..self.in_ch {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &col[row * oh * ow..(row + 1) * oh * ow];
                    for y in 0..oh {
                        let dst = &mut dx[c * h * w + (y + ki) * w + kj..][..ow];
                        for (d, s) in dst.iter_mut().zip(&src[y * ow..(y + 1) * ow]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor, AutonetError> {
        let (h, w) = self.in_hw;
        if x.shape().len() != 4 || x.shape()[1..] != [self.in_ch, h, w] {
            return Err(AutonetError::Shape(format!(
                "conv expects [B, {}, {h}, {w}], got {:?}",
                self.in_ch,
                x.shape()
            )));
        }
        let b = x.batch();
        let (oh, ow) = self.out_hw();
        let (kk, ohw) = (self.col_rows(), oh * ow);
        let in_len = self.in_ch * h * w;
        let out_len = self.out_ch * ohw;
        let mut cols = vec![0.0; b * kk * ohw];
        let mut out = vec![0.0; b * out_len];
        for i in 0..b {
            let col = &mut cols[i * kk * ohw..(i + 1) * kk * ohw];
            self.im2col(&x.data()[i * in_len..(i + 1) * in_len], col);
            let o = &mut out[i * out_len..(i + 1) * out_len];
            for (ch, bias) in self.bias.data().iter().enumerate() {
                o[ch * ohw..(ch + 1) * ohw].iter_mut().for_each(|v| *v = *bias);
            }
            gemm(
                self.out_ch,
                kk,
                ohw,
                self.weight.data(),
                (kk as isize, 1),
                col,
                (ohw as isize, 1),
                1.0,
                o,
            );
        }
        if train {
            self.cols = Some(cols);
            self.batch = b;
        }
        Tensor::new(vec![b, self.out_ch, oh, ow], out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor, AutonetError> {
        let cols = self.cols.take().ok_or_else(|| missing_cache("conv2d"))?;
        let b = self.batch;
        let (oh, ow) = self.out_hw();
        let (kk, ohw) = (self.col_rows(), oh * ow);
        let (h, w) = self.in_hw;
        let in_len = self.in_ch * h * w;
        let out_len = self.out_ch * ohw;
        if grad_out.len() != b * out_len {
            return Err(AutonetError::Shape("conv2d grad size".into()));
        }
        let mut dx = vec![0.0; if self.need_input_grad { b * in_len } else { 0 }];
        let mut dcol = vec![0.0; if self.need_input_grad { kk * ohw } else { 0 }];
        let g = grad_out.data();
        for i in 0..b {
            let go = &g[i * out_len..(i + 1) * out_len];
            let col = &cols[i * kk * ohw..(i + 1) * kk * ohw];
            {
                let (_, wg) = self.weight.data_and_grad_mut();
                let wg = wg.expect("conv weight has grad");
                gemm(
                    self.out_ch,
                    ohw,
                    kk,
                    go,
                    (ohw as isize, 1),
                    col,
                    (1, ohw as isize),
                    1.0,
                    wg,
                );
            }
            let bg = self.bias.grad_mut().expect("conv bias has grad");
            for (ch, gb) in bg.iter_mut().enumerate() {
                *gb += go[ch * ohw..(ch + 1) * ohw].iter().sum::<f64>();
            }
            if self.need_input_grad {
                gemm(
                    kk,
                    self.out_ch,
                    ohw,
                    self.weight.data(),
                    (1, kk as isize),
                    go,
                    (ohw as isize, 1),
                    0.0,
                    &mut dcol,
                );
                self.col2im(&dcol, &mut dx[i * in_len..(i + 1) * in_len]);
            }
        }
        if self.need_input_grad {
            Tensor::new(vec![b, self.in_ch, h, w], dx)
        } else {
            Ok(Tensor::zeros(vec![0]))
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor, AutonetError> {
        let out: Vec<f64> = x
            .data()
            .iter()
            .map(|&v| if v < 0.0 { 0.0 } else { v })
            .collect();
        if train {
            self.mask = Some(x.data().iter().map(|&v| v > 0.0).collect());
        }
        Tensor::new(x.shape().to_vec(), out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor, AutonetError> {
        let mask = self.mask.take().ok_or_else(|| missing_cache("relu"))?;
        let g = grad_out
            .data()
            .iter()
            .zip(&mask)
            .map(|(&g, &m)| if m { g } else { 0.0 })
            .collect();
        Tensor::new(grad_out.shape().to_vec(), g)
    }
}

/// Max pooling over each channel plane of `[B, C, H, W]`.
#[derive(Debug, Clone)]
pub struct MaxPool {
    kernel: usize,
    stride: usize,
    in_shape: [usize; 3],
    argmax: Option<Vec<usize>>,
    batch: usize,
}

impl MaxPool {
    pub fn new(kernel: usize, stride: usize, in_shape: &[usize]) -> Result<Self, AutonetError> {
        if in_shape.len() != 3 || kernel == 0 || stride == 0 {
            return Err(AutonetError::Shape(format!(
                "maxpool({kernel}, {stride}) needs [C, H, W] input, got {in_shape:?}"
            )));
        }
        if kernel > in_shape[1] || kernel > in_shape[2] {
            return Err(AutonetError::Shape(format!(
                "pool kernel {kernel} larger than input {in_shape:?}"
            )));
        }
        Ok(MaxPool {
            kernel,
            stride,
            in_shape: [in_shape[0], in_shape[1], in_shape[2]],
            argmax: None,
            batch: 0,
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        let [c, h, w] = self.in_shape;
        vec![
            c,
            (h - self.kernel) / self.stride + 1,
            (w - self.kernel) / self.stride + 1,
        ]
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor, AutonetError> {
        let [c, h, w] = self.in_shape;
        if x.shape().len() != 4 || x.shape()[1..] != self.in_shape {
            return Err(AutonetError::Shape(format!(
                "maxpool expects [B, {c}, {h}, {w}], got {:?}",
                x.shape()
            )));
        }
        let b = x.batch();
        let os = self.out_shape();
        let (oh, ow) = (os[1], os[2]);
        let mut out = Vec::with_capacity(b * c * oh * ow);
        let mut arg = Vec::with_capacity(if train { b * c * oh * ow } else { 0 });
        let xd = x.data();
        for plane in 0..b * c {
            let base = plane * h * w;
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = base;
                    for ki in 0..self.kernel {
                        for kj in 0..self.kernel {
                            let idx = base + (y * self.stride + ki) * w + xo * self.stride + kj;
                            if xd[idx] > best || (xd[idx].is_nan() && !best.is_nan()) {
                                best = xd[idx];
                                best_i = idx;
                            }
                        }
                    }
                    out.push(best);
                    if train {
                        arg.push(best_i);
                    }
                }
            }
        }
        if train {
            self.argmax = Some(arg);
            self.batch = b;
        }
        Tensor::new(vec![b, c, oh, ow], out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor, AutonetError> {
        let arg = self.argmax.take().ok_or_else(|| missing_cache("maxpool"))?;
        let [c, h, w] = self.in_shape;
        let mut dx = vec![0.0; self.batch * c * h * w];
        for (&i, &g) in arg.iter().zip(grad_out.data()) {
            dx[i] += g;
        }
        Tensor::new(vec![self.batch, c, h, w], dx)
    }
}

/// Dense layer `y = x·Wᵀ + b` over `[B, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
    in_dim: usize,
    out_dim: usize,
    input: Option<Vec<f64>>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Result<Self, AutonetError> {
        if in_dim == 0 || out_dim == 0 {
            return Err(AutonetError::Shape("linear layer with zero width".into()));
        }
        let bound = 1.0 / (in_dim as f64).sqrt();
        Ok(Linear {
            weight: Tensor::param(
                vec![out_dim, in_dim],
                uniform_fill(rng, out_dim * in_dim, bound),
            )?,
            bias: Tensor::param(vec![out_dim], uniform_fill(rng, out_dim, bound))?,
            in_dim,
            out_dim,
            input: None,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor, AutonetError> {
        if x.shape().len() != 2 || x.shape()[1] != self.in_dim {
            return Err(AutonetError::Shape(format!(
                "linear expects [B, {}], got {:?}",
                self.in_dim,
                x.shape()
            )));
        }
        let b = x.batch();
        let mut out = Vec::with_capacity(b * self.out_dim);
        for _ in 0..b {
            out.extend_from_slice(self.bias.data());
        }
        gemm(
            b,
            self.in_dim,
            self.out_dim,
            x.data(),
            (self.in_dim as isize, 1),
            self.weight.data(),
            (1, self.in_dim as isize),
            1.0,
            &mut out,
        );
        if train {
            self.input = Some(x.data().to_vec());
        }
        Tensor::new(vec![b, self.out_dim], out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor, AutonetError> {
        let input = self.input.take().ok_or_else(|| missing_cache("linear"))?;
        let b = input.len() / self.in_dim;
        let g = grad_out.data();
        if g.len() != b * self.out_dim {
            return Err(AutonetError::Shape("linear grad size".into()));
        }
        {
            let wg = self.weight.grad_mut().expect("linear weight has grad");
            gemm(
                self.out_dim,
                b,
                self.in_dim,
                g,
                (1, self.out_dim as isize),
                &input,
                (self.in_dim as isize, 1),
                1.0,
                wg,
            );
        }
        let bg = self.bias.grad_mut().expect("linear bias has grad");
        for row in g.chunks_exact(self.out_dim) {
            for (a, v) in bg.iter_mut().zip(row) {
                *a += v;
            }
        }
        let mut dx = vec![0.0; b * self.in_dim];
        gemm(
            b,
            self.out_dim,
            self.in_dim,
            g,
            (self.out_dim as isize, 1),
            self.weight.data(),
            (self.in_dim as isize, 1),
            0.0,
            &mut dx,
        );
        Tensor::new(vec![b, self.in_dim], dx)
    }
}

/// Residualization layer. Flattens each sample to `h` units, absorbs the
/// batch into the regression state (training only), then subtracts the
/// confounder-explained component. `β` is treated as a constant by the
/// backward pass, so the Jacobian is the identity.
#[derive(Debug, Clone)]
pub struct RmdnLayer {
    pub state: RmdnState,
    in_shape: Vec<usize>,
    ran_forward: bool,
}

impl RmdnLayer {
    pub fn new(
        in_shape: &[usize],
        num_confounders: usize,
        epsilon: f64,
        lambda: f64,
    ) -> Result<Self, AutonetError> {
        let h = in_shape.iter().product();
        Ok(RmdnLayer {
            state: RmdnState::new(num_confounders + 2, h, epsilon, lambda)?,
            in_shape: in_shape.to_vec(),
            ran_forward: false,
        })
    }

    pub fn forward(
        &mut self,
        x: &Tensor,
        design: &Mat,
        train: bool,
    ) -> Result<Tensor, AutonetError> {
        let b = x.batch();
        let h = self.state.features();
        if x.sample_len() != h || x.shape()[1..] != self.in_shape[..] {
            return Err(AutonetError::Shape(format!(
                "rmdn expects [B, {:?}], got {:?}",
                self.in_shape,
                x.shape()
            )));
        }
        let k = self.state.num_confounders();
        if design.rows() != b || design.cols() != k + 2 {
            return Err(AutonetError::Shape(format!(
                "design {:?} for batch {b} with {k} confounders",
                design.shape()
            )));
        }
        if train {
            let z = Mat::new(b, h, x.data().to_vec())?;
            self.state.update_batch(design, &z)?;
            self.ran_forward = true;
        }
        let conf = design.col_range(0, k);
        let mut out = x.clone();
        self.state
            .residualize_in_place(&conf, out.data_mut(), b)?;
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor, AutonetError> {
        if !std::mem::take(&mut self.ran_forward) {
            return Err(missing_cache("rmdn"));
        }
        Ok(grad_out.clone())
    }
}

/// Mean softmax cross-entropy. Returns the loss and caches `dL/dlogits`.
#[derive(Debug, Clone, Default)]
pub struct SoftmaxXent {
    grad: Option<Tensor>,
}

impl SoftmaxXent {
    pub fn forward(
        &mut self,
        logits: &Tensor,
        labels: &[usize],
        train: bool,
    ) -> Result<f64, AutonetError> {
        if logits.shape().len() != 2 || logits.batch() != labels.len() {
            return Err(AutonetError::Shape(format!(
                "logits {:?} vs {} labels",
                logits.shape(),
                labels.len()
            )));
        }
        let (b, c) = (logits.batch(), logits.shape()[1]);
        let mut loss = 0.0;
        let mut grad = vec![0.0; b * c];
        for (i, (row, &y)) in logits.data().chunks_exact(c).zip(labels).enumerate() {
            if y >= c {
                return Err(AutonetError::Shape(format!("label {y} with {c} classes")));
            }
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - m).exp()).sum();
            let lse = m + sum.ln();
            loss += lse - row[y];
            for (j, v) in row.iter().enumerate() {
                grad[i * c + j] = ((v - lse).exp() - if j == y { 1.0 } else { 0.0 }) / b as f64;
            }
        }
        if train {
            self.grad = Some(Tensor::new(vec![b, c], grad)?);
        }
        Ok(loss / b as f64)
    }

    pub fn backward(&mut self) -> Result<Tensor, AutonetError> {
        self.grad.take().ok_or_else(|| missing_cache("softmax_xent"))
    }
}
